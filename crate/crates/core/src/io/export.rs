//! Columnar CSV exports of snapshots and diagnostic time series.

use std::fmt::Write as _;

use thiserror::Error;

use crate::diagnostics::SnapshotRecord;
use crate::fields::flux_weights;
use crate::grid::{build_annulus_grid, build_velocity_grid};
use crate::io::snapshot::Snapshot;
use crate::params::ModelParams;

#[derive(Debug, Error, PartialEq)]
pub enum ExportError {
    #[error("unknown selector `{0}`")]
    UnknownSelector(String),
    #[error("selector `{0}` needs data missing from the input: {1}")]
    MissingData(String, String),
}

/// What to export.
#[derive(Clone, Debug, PartialEq)]
pub enum Selector {
    Rho,
    C,
    J,
    /// p(x_{i,j}, ·).
    Slice { i: usize, j: usize },
    /// A [`SnapshotRecord`] field, dotted for nested fields.
    Diag(String),
}

impl std::str::FromStr for Selector {
    type Err = ExportError;
    fn from_str(s: &str) -> Result<Self, ExportError> {
        match s {
            "rho" => Ok(Selector::Rho),
            "c" => Ok(Selector::C),
            "j" => Ok(Selector::J),
            _ => {
                if let Some(rest) = s.strip_prefix("slice:") {
                    let mut it = rest.split(',').map(|x| x.trim().parse::<usize>());
                    if let (Some(Ok(i)), Some(Ok(j)), None) = (it.next(), it.next(), it.next()) {
                        return Ok(Selector::Slice { i, j });
                    }
                } else if let Some(name) = s.strip_prefix("diag:") {
                    if !name.is_empty() {
                        return Ok(Selector::Diag(name.to_string()));
                    }
                }
                Err(ExportError::UnknownSelector(s.to_string()))
            }
        }
    }
}

/// 17 significant digits, so parsing the text gives back the same bits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn spatial_columns(s: &Snapshot, name: &str, values: &[f64]) -> Result<String, ExportError> {
    let space = build_annulus_grid(s.r0, s.r1, s.nr as usize, s.nth as usize)
        .map_err(|e| ExportError::MissingData(name.into(), e.to_string()))?;
    let mut out = format!("r,theta,{name}\n");
    for i in 0..space.nr {
        for j in 0..space.nth {
            let _ = writeln!(out, "{},{},{}", fmt_f64(space.r(i)), fmt_f64(space.theta(j)), fmt_f64(values[space.idx(i, j)]));
        }
    }
    Ok(out)
}

fn per_cell(s: &Snapshot, w: &[f64]) -> Vec<f64> {
    let nv2 = (s.nv * s.nv) as usize;
    let dv = 2.0 * s.vmax / s.nv as f64;
    s.p.chunks(nv2).map(|slab| slab.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() * dv * dv).collect()
}

/// Exports one selector of a snapshot. `params` is needed for `j`.
pub fn export_snapshot_csv(s: &Snapshot, sel: &Selector, params: Option<&ModelParams>) -> Result<String, ExportError> {
    let ns = (s.nr * s.nth) as usize;
    let need_p = |name: &str| {
        if s.p.is_empty() {
            Err(ExportError::MissingData(name.into(), "snapshot has no tip density".into()))
        } else {
            Ok(())
        }
    };
    match sel {
        Selector::Rho => {
            need_p("rho")?;
            let w = vec![1.0; (s.nv * s.nv) as usize];
            spatial_columns(s, "rho", &per_cell(s, &w))
        }
        Selector::C => {
            if s.c.len() != ns {
                return Err(ExportError::MissingData("c".into(), "snapshot has no concentration".into()));
            }
            spatial_columns(s, "c", &s.c)
        }
        Selector::J => {
            need_p("j")?;
            let params = params.ok_or_else(|| ExportError::MissingData("j".into(), "model parameters".into()))?;
            let vel = build_velocity_grid(s.vmax, s.nv as usize).map_err(|e| ExportError::MissingData("j".into(), e.to_string()))?;
            spatial_columns(s, "j", &per_cell(s, &flux_weights(params, &vel)))
        }
        Selector::Slice { i, j } => {
            need_p("slice")?;
            if *i >= s.nr as usize || *j >= s.nth as usize {
                return Err(ExportError::UnknownSelector(format!("slice:{i},{j}")));
            }
            let vel = build_velocity_grid(s.vmax, s.nv as usize).map_err(|e| ExportError::MissingData("slice".into(), e.to_string()))?;
            let nv2 = vel.len();
            let c = i * s.nth as usize + j;
            let mut out = String::from("vx,vy,p\n");
            for kv in 0..nv2 {
                let v = vel.v(kv);
                let _ = writeln!(out, "{},{},{}", fmt_f64(v[0]), fmt_f64(v[1]), fmt_f64(s.p[c * nv2 + kv]));
            }
            Ok(out)
        }
        Selector::Diag(name) => Err(ExportError::MissingData(format!("diag:{name}"), "use a diagnostics report".into())),
    }
}

fn lookup(v: &serde_json::Value, path: &str) -> Option<f64> {
    let mut cur = v;
    for part in path.split('.') {
        cur = match cur {
            serde_json::Value::Array(a) => a.get(part.parse::<usize>().ok()?)?,
            _ => cur.get(part)?,
        };
    }
    cur.as_f64()
}

/// Time series `time,<name>` of one diagnostic, one row per record.
pub fn export_report_csv(records: &[SnapshotRecord], sel: &Selector) -> Result<String, ExportError> {
    let Selector::Diag(name) = sel else {
        return Err(ExportError::MissingData(format!("{sel:?}"), "needs a snapshot".into()));
    };
    let mut out = format!("time,{name}\n");
    for r in records {
        let v = serde_json::to_value(r).expect("records serialize");
        let x = lookup(&v, name).ok_or_else(|| ExportError::UnknownSelector(format!("diag:{name}")))?;
        let _ = writeln!(out, "{},{}", fmt_f64(r.time), fmt_f64(x));
    }
    Ok(out)
}

//! Little-endian binary snapshots and checkpoints.
//!
//! Layout: "VKIN", version u32, kind u32, nr u32, nth u32, nv u32, step u64,
//! time f64, r0 f64, r1 f64, vmax f64, then seven arrays (p, c, b,
//! inflow inner, inflow outer, trace inner, trace outer), each a u64 count
//! followed by raw f64 values in row-major (i, j, k, l) order, and finally
//! a u64 holding the byte length of everything before it.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::coupling::MarchState;
use crate::fields::BoundaryValues;

pub const MAGIC: &[u8; 4] = b"VKIN";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("not a snapshot file (bad magic)")]
    BadMagic,
    #[error("snapshot format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("snapshot is truncated or corrupted")]
    Truncated,
    #[error("unknown snapshot kind {0}")]
    Kind(u32),
    #[error("array sizes do not match the header dimensions")]
    Shape,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SnapshotKind {
    State = 0,
    Checkpoint = 1,
}

/// In checkpoints `inflow` holds the inflow of the last completed step and
/// the traces are empty.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub kind: SnapshotKind,
    pub nr: u32,
    pub nth: u32,
    pub nv: u32,
    pub step: u64,
    pub time: f64,
    pub r0: f64,
    pub r1: f64,
    pub vmax: f64,
    pub p: Vec<f64>,
    pub c: Vec<f64>,
    pub b: Vec<f64>,
    pub inflow: BoundaryValues,
    pub trace: BoundaryValues,
}

impl Snapshot {
    /// Bitwise equality (distinguishes NaN payloads and signed zeros).
    pub fn bitwise_eq(&self, o: &Snapshot) -> bool {
        to_bytes(self) == to_bytes(o)
    }

    pub fn from_march_state(st: &MarchState, time: f64, dims: [u32; 3], geometry: [f64; 3]) -> Snapshot {
        Snapshot {
            kind: SnapshotKind::Checkpoint,
            nr: dims[0],
            nth: dims[1],
            nv: dims[2],
            step: st.step as u64,
            time,
            r0: geometry[0],
            r1: geometry[1],
            vmax: geometry[2],
            p: st.p.clone(),
            c: st.c.clone(),
            b: st.b.clone(),
            inflow: st.prev_inflow.clone(),
            trace: BoundaryValues::default(),
        }
    }

    pub fn to_march_state(&self) -> MarchState {
        MarchState {
            step: self.step as usize,
            p: self.p.clone(),
            c: self.c.clone(),
            b: self.b.clone(),
            prev_inflow: self.inflow.clone(),
        }
    }

    fn check_shape(&self) -> Result<(), SnapshotError> {
        let ns = self.nr as usize * self.nth as usize;
        let nv2 = self.nv as usize * self.nv as usize;
        let ok_p = self.p.is_empty() || self.p.len() == ns * nv2;
        let ok_c = self.c.is_empty() || self.c.len() == ns;
        let ok_b = self.b.is_empty() || self.b.len() == ns;
        let nb = self.nth as usize * nv2;
        let ok_bv = |v: &BoundaryValues| {
            (v.inner.is_empty() || v.inner.len() == nb) && (v.outer.is_empty() || v.outer.len() == nb)
        };
        if ok_p && ok_c && ok_b && ok_bv(&self.inflow) && ok_bv(&self.trace) {
            Ok(())
        } else {
            Err(SnapshotError::Shape)
        }
    }
}

fn put_array(out: &mut Vec<u8>, a: &[f64]) {
    out.extend_from_slice(&(a.len() as u64).to_le_bytes());
    for x in a {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn to_bytes(s: &Snapshot) -> Vec<u8> {
    let mut out = Vec::with_capacity(96 + 8 * (s.p.len() + 2 * s.c.len() + 4 * s.inflow.inner.len()));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(s.kind as u32).to_le_bytes());
    for d in [s.nr, s.nth, s.nv] {
        out.extend_from_slice(&d.to_le_bytes());
    }
    out.extend_from_slice(&s.step.to_le_bytes());
    for x in [s.time, s.r0, s.r1, s.vmax] {
        out.extend_from_slice(&x.to_le_bytes());
    }
    for a in [&s.p, &s.c, &s.b, &s.inflow.inner, &s.inflow.outer, &s.trace.inner, &s.trace.outer] {
        put_array(&mut out, a);
    }
    let len = out.len() as u64;
    out.extend_from_slice(&len.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], SnapshotError> {
        let end = self.pos.checked_add(n).ok_or(SnapshotError::Truncated)?;
        if end > self.buf.len() {
            return Err(SnapshotError::Truncated);
        }
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, SnapshotError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, SnapshotError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, SnapshotError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn array(&mut self) -> Result<Vec<f64>, SnapshotError> {
        let n = self.u64()? as usize;
        if n > (self.buf.len() - self.pos) / 8 {
            return Err(SnapshotError::Truncated);
        }
        let raw = self.take(8 * n)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<Snapshot, SnapshotError> {
    if buf.len() < 4 || &buf[..4] != MAGIC {
        return Err(SnapshotError::BadMagic);
    }
    let mut r = Reader { buf, pos: 4 };
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(SnapshotError::VersionMismatch { found: version, expected: FORMAT_VERSION });
    }
    if buf.len() < 12 {
        return Err(SnapshotError::Truncated);
    }
    let trailer = u64::from_le_bytes(buf[buf.len() - 8..].try_into().unwrap());
    if trailer != (buf.len() - 8) as u64 {
        return Err(SnapshotError::Truncated);
    }
    r.buf = &buf[..buf.len() - 8];
    let kind = match r.u32()? {
        0 => SnapshotKind::State,
        1 => SnapshotKind::Checkpoint,
        k => return Err(SnapshotError::Kind(k)),
    };
    let (nr, nth, nv) = (r.u32()?, r.u32()?, r.u32()?);
    let step = r.u64()?;
    let (time, r0, r1, vmax) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?);
    let p = r.array()?;
    let c = r.array()?;
    let b = r.array()?;
    let inflow = BoundaryValues { inner: r.array()?, outer: r.array()? };
    let trace = BoundaryValues { inner: r.array()?, outer: r.array()? };
    if r.pos != r.buf.len() {
        return Err(SnapshotError::Truncated);
    }
    let s = Snapshot { kind, nr, nth, nv, step, time, r0, r1, vmax, p, c, b, inflow, trace };
    s.check_shape()?;
    Ok(s)
}

pub fn write_snapshot(path: &Path, s: &Snapshot) -> Result<(), SnapshotError> {
    s.check_shape()?;
    fs::write(path, to_bytes(s))?;
    Ok(())
}

pub fn read_snapshot(path: &Path) -> Result<Snapshot, SnapshotError> {
    from_bytes(&fs::read(path)?)
}

pub fn checkpoint_write(path: &Path, s: &Snapshot) -> Result<(), SnapshotError> {
    let mut s = s.clone();
    s.kind = SnapshotKind::Checkpoint;
    write_snapshot(path, &s)
}

pub fn checkpoint_read(path: &Path) -> Result<Snapshot, SnapshotError> {
    let s = read_snapshot(path)?;
    if s.kind != SnapshotKind::Checkpoint {
        return Err(SnapshotError::Kind(s.kind as u32));
    }
    Ok(s)
}

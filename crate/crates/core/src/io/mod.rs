//! Configuration, snapshots, exports and the run driver.

pub mod config;
pub mod export;
pub mod profiles;
pub mod run;
pub mod snapshot;

pub use config::{parse_config, validate, ConfigError, Mode, RunConfig};
pub use export::{export_report_csv, export_snapshot_csv, ExportError, Selector};
pub use profiles::Profile;
pub use run::{check, init_thread_pool, run, RunOptions, RunOutcome, Summary};
pub use snapshot::{read_snapshot, write_snapshot, Snapshot, SnapshotError, SnapshotKind};

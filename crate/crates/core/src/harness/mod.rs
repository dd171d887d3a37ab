pub mod checkpoint;
pub mod data;
pub mod report;
pub mod sweep;

pub use checkpoint::ModelFile;
pub use data::{generate_timeseries, Dataset, ScenarioConfig, SchemaChoice};
pub use report::{emit_report, series, table_one, SeriesPoint};
pub use sweep::{recon_error, run_sweep, ExperimentSettings, RowTiming, SweepKind, SweepRow, SweepSpec, SweepTable};

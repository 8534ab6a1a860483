//! Multi-zone RC building emulator, ambient disturbance and datasets.

pub mod dataset;
pub mod disturbance;
pub mod io;
pub mod rc;

pub use dataset::{
    comfort_schedule, generate_ctrl_dataset, generate_sysid_dataset, window_count, ComfortConfig,
    CtrlDataset, ExcitationConfig, ScenarioBatch, Split, Splits, SysIdBatch, SysIdDataset,
};
pub use disturbance::{ambient_profile, synth_disturbance, AmbientConfig};
pub use rc::{
    ActuatorRange, Capacitances, PlantState, RcBuildingModel, RcParams, Resistances, StepOutcome,
};

//! Soft actor-critic with twin critics, Polyak targets and optional automatic
//! temperature tuning.

mod agent;
pub mod policy;
mod train;

pub use agent::{deterministic_action, polyak_update, ActionMode, SacAgent, SacConfig, UpdateStats};
pub use policy::{LogStdBounds, SquashedSample, TargetNets};
pub use train::{
    read_checkpoint, train_sac, write_checkpoint, EvalRecord, SacLogRow, SacObserver, SacRun,
    SacTrainingLog,
};

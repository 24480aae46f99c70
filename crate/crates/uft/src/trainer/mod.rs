//! Training orchestration: optimizer, curriculum stages, balanced batch
//! construction, per-sample mode assignment, checkpointing, and the scripted
//! convergence-comparison experiment.

pub mod adam;
pub mod batch;
pub mod checkpoint;
pub mod convergence;
pub mod train;
pub mod verify;

pub use adam::{adam_update, AdamParams, AdamState};
pub use batch::{build_batch, group_histogram, BatchItem, CurriculumStage, StageId};
pub use checkpoint::{config_hash, load_checkpoint, save_checkpoint, LoadedCheckpoint};
pub use convergence::{run_convergence_suite, Arm, ConvergenceConfig, ConvergenceReport};
pub use train::{run_curriculum, CurriculumOutcome, LossRecord, TrainConfig, Trainer, LOSS_CSV_HEADER};
pub use verify::{gradcheck_model_config, loss_grad_check};

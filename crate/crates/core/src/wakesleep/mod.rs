//! Wake-sleep training: ancestral sleep samples, sleep-phase refits, wake
//! gradients assembled from DDC expectations, and the Adam loop.

mod adam;
mod checkpoint;
mod sleep;
mod train;
mod wake;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT_VERSION};
pub use sleep::{sleep_phase, sleep_sample, SleepBatch, SleepOutcome};
pub use train::{train, DiagnosticsTrace, EpochRecord, TrainConfig, Trainer};
pub use wake::{wake_gradients, wake_gradients_from_expectations};

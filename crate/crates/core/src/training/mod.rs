//! Joint optimization of the encoders and the denoiser.

pub mod config;
pub mod engine;
pub mod graph;
pub mod model;

pub use config::{Optimizer, TrainConfig};
pub use engine::{
    apply_batch, draw_batch, train, train_step, Moments, TrainOutcome, TrainState, CHECKPOINT_DIR,
    LOSS_LOG_FILE, MODEL_FILE,
};
pub use graph::{batch_loss_graph, BatchItem, BatchLoss};
pub use model::{Architecture, Model};

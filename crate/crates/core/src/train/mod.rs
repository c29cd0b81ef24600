//! Training, evaluation, ablation sweeps and gradient checking.

pub mod ablation;
pub mod config;
pub mod data;
pub mod frames;
pub mod gradcheck;
pub mod optim;
mod step;
pub mod trainer;

pub use ablation::{ablate, ablation_csv, AblationAxis, AblationGrid, AblationRow, Override};
pub use config::{Modalities, Optimizer, TrainConfig};
pub use data::{prepare_samples, PreparedSample};
pub use frames::{frame_indices, sample_frames};
pub use gradcheck::{gradient_check, GradCheckReport};
pub use trainer::{
    build_model, evaluate, evaluate_model, evaluate_samples, metrics_csv, prepare_data, train,
    train_prepared, MetricsRecord, PreparedData, TrainRun, METRICS_HEADER,
};

//! Over-parameterized deep ReLU networks for binary classification.
//!
//! The crate covers the full loop of a lazy-training experiment:
//!
//! * [`data`] builds separated training sets on the unit sphere,
//! * [`network`] holds the ReLU network, its forward pass, loss and gradient,
//! * [`losses`] provides margin losses with their declared constants,
//! * [`optim`] runs gradient descent and minibatch SGD with per-iteration
//!   telemetry,
//! * [`verify`] measures the random-initialization and perturbation
//!   properties that make training stay close to initialization,
//! * [`experiment`] wires everything behind a single JSON configuration.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod losses;
pub mod network;
pub mod optim;
pub mod rng;
pub mod verify;

pub use data::{generate_separated, validate_dataset, Dataset, MarginReport};
pub use error::{Error, Result};
pub use linalg::{frobenius_norm, gaussian_matrix, pattern_diff_count, spectral_norm, Matrix, Pattern};
pub use losses::{builtin_loss, check_loss_assumptions, AssumptionReport, LossSpec};
pub use network::{
    batch_loss, forward, init_network, loss_gradient, output_telescope, ForwardTrace, LayerGradients,
    NetworkParams,
};
pub use rng::Rng;
pub use optim::{
    perturbation_radius, run_gd, run_sgd, theoretical_step_size, zero_error_check, StopReason, TrainConfig,
    TrajectoryRecord,
};
pub use verify::PropertyReport;
pub use experiment::{run_train, ExperimentConfig, SweepAxis};

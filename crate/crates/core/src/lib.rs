//! Reservoir-computing toolkit for denoising and reconstructing nonlinear
//! dynamics from noisy, incomplete measurements.
//!
//! The crate provides ground-truth generators (Lorenz, AdEx neuron), noise
//! synthesis at prescribed SNR, echo-state-network construction and ridge
//! training, hyperparameter search, reservoir pruning/growth, an extended
//! Kalman filter baseline, signal metrics, and config-driven experiment
//! pipelines used by the CLI.

pub mod dynamics;
pub mod ekf;
pub mod error;
pub mod experiment;
pub mod graph;
pub mod hyperopt;
pub mod metrics;
pub mod model_io;
pub mod noise;
pub mod pruning;
pub mod reservoir;
pub mod seeding;
pub mod training;
pub mod trajectory;

pub use error::{CoreError, CoreResult};
pub use reservoir::{EchoStateNetwork, HyperParams};
pub use trajectory::Trajectory;

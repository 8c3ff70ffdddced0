//! Scoring reasoning trajectories from their token-level confidence over
//! time, and aggregating answers by score-weighted voting.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix it to `f64`, which the command-line tool uses.

pub mod cli;
pub mod eval;
pub mod net;
pub mod scalar;
pub mod signal;
pub mod store;
pub mod synth;
pub mod train;
pub mod vote;

pub use net::{count_flops, init_params, ChronosConfig, NetError};
pub use scalar::{sigmoid, Scalar};
pub use signal::{compute_signal, tail_window, Standardizer};
pub use store::{load_jsonl, save_jsonl, Dataset, StoreError, TokenStep, Trajectory};
pub use train::{auc, TrainConfig, TrainError};
pub use vote::{canonicalize_answer, top_eta_filter, vote, weighted_majority, NO_ANSWER};

pub type Model = net::ModelParams<f64>;
pub type Weights = net::Weights<f64>;
pub type Signal = signal::TemporalSignal<f64>;
pub type Scored = vote::ScoredTrajectory<f64>;
pub type Pool = eval::QuestionPool<f64>;

pub type Model32 = net::ModelParams<f32>;
pub type Signal32 = signal::TemporalSignal<f32>;

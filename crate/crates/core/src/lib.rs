//! Sparse transition-matrix estimation for linear-Gaussian state-space models.
//!
//! The transition matrix `A` of `x_k = A x_{k-1} + q_k` is read as the weighted
//! adjacency matrix of a directed graph between state components and estimated
//! by maximum a posteriori EM: exact Kalman/RTS E-steps followed by a
//! primal-dual proximal M-step that handles sparsity and stability priors.

pub mod em;
pub mod bench;
pub mod datasets;
pub mod error;
pub mod estep;
pub mod granger;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod mimo;
pub mod mstep;
pub mod prox;
pub mod ssm;

pub use bench::{channel_study, run_benchmark, BenchConfig, BenchMethod, BenchReport, ChannelStudy, KappaChoice};
pub use datasets::{make_dataset, Dataset, DatasetSpec};
pub use em::{fit, fit_with_truth, init_matrix, FitConfig, FitResult, InitSpec, Method, Sparsity};
pub use error::{Error, Result};
pub use estep::{estep_stats, map_loss, q_value, EStepStats};
pub use granger::{granger_graph, GrangerConfig, GrangerMode};
pub use linalg::{Mat, Vector};
pub use metrics::{detection, rmse, DetectionScores};
pub use mimo::{track_and_ber, MimoConfig};
pub use mstep::{closed_form_mstep, ms_solve, MsConfig, MsOutput, Scaling};
pub use prox::{BlockMap, PenaltyTerm, Regularizer};
pub use ssm::{kalman_filter, neg_log_likelihood, rts_smoother, simulate, ModelParams, Trajectory};

//! Robust smooth-threshold estimating equations for longitudinal data.

pub mod correlation;
pub mod cv;
pub mod data;
pub mod error;
pub mod io;
pub mod leverage;
pub mod method;
pub mod residuals;
pub mod score;
pub mod simulation;
pub mod solver;
pub mod tuning;

pub use correlation::{CorrelationKind, CorrelationModel};
pub use data::{ClusterLayout, LongitudinalDataset, SubjectData};
pub use error::{Error, Result};
pub use leverage::LeverageConfig;
pub use method::{tune, Method, TuningOptions};
pub use score::ScoreFunction;
pub use solver::{FitConfig, FitResult, InitialEstimator, Problem};
pub use tuning::TuningResult;

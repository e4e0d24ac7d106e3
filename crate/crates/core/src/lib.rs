//! Sparse linear branch prediction.
//!
//! The crate models an offline pipeline that fits L1-regularized logistic
//! regression models over branch histories, compresses them into fixed-point
//! COO "sparsity hints", selects the hints that fit a storage budget, and
//! replays traces through a functional model of a small CAM-based inference
//! unit (SLBIU) coupled with a conventional baseline predictor (gshare or a
//! TAGE-like predictor). Results are reported as MPKI.
//!
//! Numeric code (model fitting, quantization, online learning) is generic over
//! the [`Real`] scalar trait; the crate root re-exports `f64` aliases that the
//! rest of the pipeline uses.

pub mod bits;
pub mod cli;
pub mod hints;
pub mod history;
pub mod online_sgd;
pub mod predictors;
pub mod simulator;
pub mod sparse_modeling;
pub mod trace_io;

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point scalar used by the modeling code: `f32` or `f64`.
pub trait Real: Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static {
    /// Lossy conversion from `f64`; values are always finite here.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts to any Real")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("Real converts to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}

pub type SparseModel = sparse_modeling::SparseModel<f64>;
pub type SparseModelF32 = sparse_modeling::SparseModel<f32>;
pub type SolverConfig = sparse_modeling::SolverConfig<f64>;
pub type OnlineModel = online_sgd::OnlineModel<f64>;
pub type OnlineModelF32 = online_sgd::OnlineModel<f32>;
pub type OnlineConfig = online_sgd::OnlineConfig<f64>;

pub use bits::ShiftRegister;
pub use hints::{HintSet, QuantSpec, SlbiuConfig, SparsityHint};
pub use history::{FeatureVector, HistoryConfig, HistoryState, TrainingDataset};
pub use predictors::{BaselineKind, Prediction, SlbiuState};
pub use simulator::{SimConfig, SimReport};
pub use trace_io::{Trace, TraceRecord};

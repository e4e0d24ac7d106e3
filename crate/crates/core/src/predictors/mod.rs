//! Functional predictor models: the sparse linear inference unit and the
//! baseline predictors it is coupled with.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::bits::ShiftRegister;

pub mod gshare;
pub mod slbiu;
pub mod tage_lite;

pub use gshare::{Gshare, GshareConfig};
pub use slbiu::{SlbiuError, SlbiuState};
pub use tage_lite::{TageLite, TageLiteConfig};

/// Pipeline depth of an inference-unit hit.
pub const SLBIU_LATENCY: u32 = 3;
/// Latency tag of an inference-unit miss (the lookup itself).
pub const SLBIU_MISS_LATENCY: u32 = 1;
pub const GSHARE_LATENCY: u32 = 1;
pub const TAGE_LATENCY: u32 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub taken: bool,
    pub hit: bool,
    pub latency_cycles: u32,
}

/// Per-pc statistics a baseline keeps about its own storage.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BaselineStats {
    /// New-entry allocations per pc.
    pub allocations: BTreeMap<u64, u64>,
    /// Mean live entries owned by each pc over all snapshots.
    pub unique_entries_avg: BTreeMap<u64, f64>,
    pub snapshots: u64,
}

/// A conventional predictor driven by the shared global history.
///
/// `update` receives the same (pre-outcome) history that `predict` saw.
/// With `suppress` set the call must leave every piece of internal state
/// untouched, including replacement and aging clocks.
pub trait BaselinePredictor {
    fn name(&self) -> &'static str;
    /// Global history bits the predictor reads.
    fn history_len(&self) -> usize;
    fn predict(&mut self, pc: u64, ghr: &ShiftRegister) -> Prediction;
    fn update(&mut self, pc: u64, ghr: &ShiftRegister, taken: bool, suppress: bool);
    /// Records per-pc occupancy for the entry averages.
    fn snapshot(&mut self);
    fn stats(&self) -> BaselineStats;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BaselineKind {
    Gshare(GshareConfig),
    TageLite(TageLiteConfig),
}

impl BaselineKind {
    pub fn build(&self) -> Box<dyn BaselinePredictor + Send> {
        match self {
            Self::Gshare(c) => Box::new(Gshare::new(c.clone())),
            Self::TageLite(c) => Box::new(TageLite::new(c.clone())),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match self {
            Self::Gshare(c) => c.validate(),
            Self::TageLite(c) => c.validate(),
        }
    }
}

impl Default for BaselineKind {
    fn default() -> Self {
        Self::TageLite(TageLiteConfig::default())
    }
}

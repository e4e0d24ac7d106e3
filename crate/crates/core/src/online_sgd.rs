//! Online sparse logistic regression: SGD with the cumulative L1 penalty of
//! Tsuruoka, Tsujii and Ananiadou (2009), trained at branch resolution, with
//! λ adapted to hold the non-zero count under a cap.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::history::{HistoryConfig, HistoryState};
use crate::sparse_modeling::BranchScreen;
use crate::trace_io::Trace;
use crate::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OnlineConfig<T> {
    pub lambda_init: T,
    pub lambda_min: T,
    pub lambda_max: T,
    pub nnz_cap: usize,
    /// Fixed step size η.
    pub step_size: T,
    /// Updates between λ adaptations (and nnz samples).
    pub adaptation_interval: u64,
}

impl<T: Real> Default for OnlineConfig<T> {
    fn default() -> Self {
        Self {
            lambda_init: T::of(0.01),
            lambda_min: T::of(1e-5),
            lambda_max: T::of(0.1),
            nnz_cap: 50,
            step_size: T::of(0.05),
            adaptation_interval: 1000,
        }
    }
}

impl<T: Real> OnlineConfig<T> {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.lambda_min > T::zero() && self.lambda_min <= self.lambda_max) {
            return Err("need 0 < lambda_min <= lambda_max".into());
        }
        if self.lambda_init < self.lambda_min || self.lambda_init > self.lambda_max {
            return Err("lambda_init must lie within [lambda_min, lambda_max]".into());
        }
        if self.step_size.is_nan() || self.step_size <= T::zero() {
            return Err("step size must be positive".into());
        }
        if self.adaptation_interval == 0 {
            return Err("adaptation interval must be positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OnlineModel<T> {
    pub pc: u64,
    weights: Vec<T>,
    pub bias: T,
    /// Total penalty each weight could have received so far.
    u: T,
    /// Penalty actually applied to each weight.
    q: Vec<T>,
    pub lambda: T,
    pub step_size: T,
    pub update_count: u64,
    nnz: usize,
}

impl<T: Real> OnlineModel<T> {
    pub fn new(pc: u64, dim: usize, config: &OnlineConfig<T>) -> Self {
        Self {
            pc,
            weights: vec![T::zero(); dim],
            bias: T::zero(),
            u: T::zero(),
            q: vec![T::zero(); dim],
            lambda: config.lambda_init,
            step_size: config.step_size,
            update_count: 0,
            nnz: 0,
        }
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn nnz(&self) -> usize {
        self.nnz
    }

    pub fn decision(&self, x: &[i8]) -> T {
        debug_assert_eq!(x.len(), self.weights.len());
        self.weights.iter().zip(x).fold(self.bias, |acc, (&w, &xi)| if xi > 0 { acc + w } else { acc - w })
    }

    /// Taken iff `bias + w·x ≥ 0`.
    pub fn predict(&self, x: &[i8]) -> bool {
        self.decision(x) >= T::zero()
    }

    /// One logistic-gradient step followed by cumulative-penalty clipping.
    pub fn update(&mut self, x: &[i8], taken: bool) {
        assert_eq!(x.len(), self.weights.len(), "feature length mismatch");
        let y = if taken { T::one() } else { T::zero() };
        let z = self.decision(x);
        let p = if z >= T::zero() {
            T::one() / (T::one() + (-z).exp())
        } else {
            let e = z.exp();
            e / (T::one() + e)
        };
        let g = self.step_size * (p - y);
        self.bias = self.bias - g;
        self.u = self.u + self.step_size * self.lambda;
        for (j, &xi) in x.iter().enumerate() {
            let before = self.weights[j];
            let stepped = if xi > 0 { before - g } else { before + g };
            let clipped = if stepped > T::zero() {
                (stepped - (self.u + self.q[j])).max(T::zero())
            } else if stepped < T::zero() {
                (stepped + (self.u - self.q[j])).min(T::zero())
            } else {
                stepped
            };
            self.q[j] = self.q[j] + (clipped - stepped);
            self.weights[j] = clipped;
            match (before == T::zero(), clipped == T::zero()) {
                (true, false) => self.nnz += 1,
                (false, true) => self.nnz -= 1,
                _ => {}
            }
        }
        self.update_count += 1;
    }

    /// Doubles λ above the cap, halves it at or below half the cap.
    pub fn adapt_lambda(&mut self, config: &OnlineConfig<T>) {
        let two = T::of(2.0);
        if self.nnz > config.nnz_cap {
            self.lambda = (self.lambda * two).min(config.lambda_max);
        } else if self.nnz <= config.nnz_cap / 2 {
            self.lambda = (self.lambda / two).max(config.lambda_min);
        }
    }
}

pub fn online_predict<T: Real>(model: &OnlineModel<T>, x: &[i8]) -> bool {
    model.predict(x)
}

pub fn online_update<T: Real>(model: &mut OnlineModel<T>, x: &[i8], taken: bool) {
    model.update(x, taken)
}

pub fn adapt_lambda<T: Real>(model: &mut OnlineModel<T>, config: &OnlineConfig<T>) {
    model.adapt_lambda(config)
}

/// Which branches get an online model.
#[derive(Clone, Debug, PartialEq)]
pub enum OnlineTargets {
    All,
    /// Branches passing the screen over the whole trace.
    Screened(BranchScreen),
    List(BTreeSet<u64>),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OnlineBranch {
    /// Post-warmup occurrences.
    pub occurrences: u64,
    pub mispredictions: u64,
    /// Mean of the nnz samples taken at every adaptation point.
    pub nnz_avg: f64,
    pub nnz_max: usize,
    pub final_lambda: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OnlineReport {
    pub phase_id: String,
    pub mispredictions: u64,
    pub per_branch: BTreeMap<u64, OnlineBranch>,
}

/// Replays `trace`, predicting every post-warmup target occurrence before
/// training on it.
pub fn run_online<T: Real>(
    trace: &Trace,
    history: HistoryConfig,
    targets: &OnlineTargets,
    config: &OnlineConfig<T>,
) -> OnlineReport {
    let warmup = history.warmup();
    let selected: Option<BTreeSet<u64>> = match targets {
        OnlineTargets::All => None,
        OnlineTargets::List(set) => Some(set.clone()),
        OnlineTargets::Screened(screen) => {
            let mut counts: BTreeMap<u64, (usize, usize)> = BTreeMap::new();
            for r in trace.records().iter().skip(warmup) {
                let c = counts.entry(r.pc).or_default();
                c.0 += 1;
                c.1 += r.taken as usize;
            }
            Some(counts.into_iter().filter(|(_, (m, t))| screen.passes(*m, *t)).map(|(pc, _)| pc).collect())
        }
    };

    struct Slot<T> {
        model: OnlineModel<T>,
        stats: OnlineBranch,
        nnz_sum: u64,
        samples: u64,
    }
    let mut slots: HashMap<u64, Slot<T>> = HashMap::new();
    let mut state = HistoryState::new(history);
    let mut x = Vec::with_capacity(history.len());
    for (i, r) in trace.records().iter().enumerate() {
        let wanted = selected.as_ref().is_none_or(|s| s.contains(&r.pc));
        if i >= warmup && wanted {
            x.clear();
            state.write_features(r.pc, &mut x);
            let slot = slots.entry(r.pc).or_insert_with(|| Slot {
                model: OnlineModel::new(r.pc, history.len(), config),
                stats: OnlineBranch::default(),
                nnz_sum: 0,
                samples: 0,
            });
            slot.stats.occurrences += 1;
            if slot.model.predict(&x) != r.taken {
                slot.stats.mispredictions += 1;
            }
            slot.model.update(&x, r.taken);
            if slot.model.update_count.is_multiple_of(config.adaptation_interval) {
                let nnz = slot.model.nnz();
                slot.nnz_sum += nnz as u64;
                slot.samples += 1;
                slot.stats.nnz_max = slot.stats.nnz_max.max(nnz);
                slot.model.adapt_lambda(config);
            }
        }
        state.update(r.pc, r.taken);
    }

    let per_branch: BTreeMap<u64, OnlineBranch> = slots
        .into_iter()
        .map(|(pc, s)| {
            let mut stats = s.stats;
            stats.nnz_avg = if s.samples == 0 { s.model.nnz() as f64 } else { s.nnz_sum as f64 / s.samples as f64 };
            if s.samples == 0 {
                stats.nnz_max = s.model.nnz();
            }
            stats.final_lambda = s.model.lambda.as_f64();
            (pc, stats)
        })
        .collect();
    OnlineReport {
        phase_id: trace.phase_id.clone(),
        mispredictions: per_branch.values().map(|b| b.mispredictions).sum(),
        per_branch,
    }
}

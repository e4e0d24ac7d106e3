//! Sparse linear branch inference unit: a fully associative, pc-indexed CAM
//! of sparsity hints, each with a private local history register.

use std::collections::HashMap;

use thiserror::Error;

use super::{Prediction, SLBIU_LATENCY, SLBIU_MISS_LATENCY};
use crate::bits::{ceil_log2, ShiftRegister};
use crate::hints::{HintError, HintSet, SlbiuConfig, SparsityHint, WeightCoding};

#[derive(Debug, Error)]
pub enum SlbiuError {
    #[error("{count} hints exceed the unit's capacity of {capacity}")]
    Capacity { count: usize, capacity: usize },
    #[error(transparent)]
    Hint(#[from] HintError),
}

#[derive(Clone, Debug, PartialEq)]
struct Entry {
    hint: SparsityHint,
    /// `(index, weight)` in integer units of 2^−F (fixed point only).
    codes: Vec<(usize, i64)>,
    intercept_code: i64,
    lhr: ShiftRegister,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SlbiuState {
    config: SlbiuConfig,
    coding: WeightCoding,
    entries: Vec<Entry>,
    by_pc: HashMap<u64, usize>,
}

impl SlbiuState {
    /// An empty unit of the given dimensions.
    pub fn new(config: SlbiuConfig) -> Result<Self, SlbiuError> {
        Ok(Self { coding: WeightCoding::from_width(config.q)?, config, entries: Vec::new(), by_pc: HashMap::new() })
    }

    /// Loads a hint set, discarding previous contents; all LHRs start at zero.
    pub fn load(hs: &HintSet) -> Result<Self, SlbiuError> {
        if hs.hints.len() > hs.config.n {
            return Err(SlbiuError::Capacity { count: hs.hints.len(), capacity: hs.config.n });
        }
        hs.validate()?;
        let mut state = Self::new(hs.config)?;
        for hint in &hs.hints {
            let (codes, intercept_code) = match state.coding {
                WeightCoding::Fixed(spec) => (
                    hint.entries.iter().map(|e| (e.index, spec.to_code(e.weight))).collect(),
                    spec.to_code(hint.intercept),
                ),
                WeightCoding::Float32 => (Vec::new(), 0),
            };
            state.by_pc.insert(hint.pc, state.entries.len());
            state.entries.push(Entry {
                hint: hint.clone(),
                codes,
                intercept_code,
                lhr: ShiftRegister::new(hs.config.lh),
            });
        }
        Ok(state)
    }

    pub fn config(&self) -> &SlbiuConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, pc: u64) -> bool {
        self.by_pc.contains_key(&pc)
    }

    pub fn lhr(&self, pc: u64) -> Option<&ShiftRegister> {
        self.by_pc.get(&pc).map(|&i| &self.entries[i].lhr)
    }

    /// Probes the CAM. On a miss the direction carries no meaning.
    pub fn predict(&self, pc: u64, ghr: &ShiftRegister) -> Prediction {
        let Some(&slot) = self.by_pc.get(&pc) else {
            return Prediction { taken: false, hit: false, latency_cycles: SLBIU_MISS_LATENCY };
        };
        let gh = self.config.gh;
        assert!(ghr.len() >= gh, "global history shorter than the unit's gh");
        let e = &self.entries[slot];
        let bit = |i: usize| if i < gh { ghr.get(i) } else { e.lhr.get(i - gh) };
        let taken = match self.coding {
            WeightCoding::Fixed(spec) => {
                let sum = e.codes.iter().fold(e.intercept_code, |acc, &(i, w)| if bit(i) { acc + w } else { acc - w });
                let width = ceil_log2(self.config.nnz + 1) + spec.width();
                debug_assert!(width >= 64 || sum.unsigned_abs() < 1u64 << (width - 1), "adder tree overflow");
                sum >= 0
            }
            WeightCoding::Float32 => {
                let sum = e.hint.entries.iter().fold(e.hint.intercept, |acc, en| {
                    if bit(en.index) {
                        acc + en.weight
                    } else {
                        acc - en.weight
                    }
                });
                sum >= 0.0
            }
        };
        Prediction { taken, hit: true, latency_cycles: SLBIU_LATENCY }
    }

    /// Shifts the outcome into the entry's LHR; a miss is a no-op.
    pub fn update(&mut self, pc: u64, taken: bool) {
        if let Some(&slot) = self.by_pc.get(&pc) {
            self.entries[slot].lhr.push(taken);
        }
    }
}

pub fn slbiu_load(hs: &HintSet) -> Result<SlbiuState, SlbiuError> {
    SlbiuState::load(hs)
}

pub fn slbiu_predict(state: &SlbiuState, pc: u64, ghr: &ShiftRegister) -> Prediction {
    state.predict(pc, ghr)
}

pub fn slbiu_update(state: &mut SlbiuState, pc: u64, taken: bool) {
    state.update(pc, taken)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hints::HintEntry;

    fn cfg(n: usize, q: u32) -> SlbiuConfig {
        SlbiuConfig { lh: 4, gh: 4, n, nnz: 3, q, p: 64 }
    }

    fn hint(pc: u64, intercept: f64, entries: &[(usize, f64)]) -> SparsityHint {
        SparsityHint {
            pc,
            intercept,
            entries: entries.iter().map(|&(index, weight)| HintEntry { index, weight }).collect(),
        }
    }

    fn set(config: SlbiuConfig, hints: Vec<SparsityHint>) -> HintSet {
        HintSet { phase_id: "t".into(), config, hints }
    }

    #[test]
    fn empty_set_always_misses() {
        let s = slbiu_load(&set(cfg(0, 8), vec![])).unwrap();
        assert!(s.is_empty());
        assert!(!s.predict(5, &ShiftRegister::new(4)).hit);
    }

    #[test]
    fn capacity_is_enforced() {
        let hs = set(cfg(1, 8), vec![hint(4, 0.0, &[]), hint(8, 0.0, &[])]);
        assert!(matches!(slbiu_load(&hs), Err(SlbiuError::Capacity { .. })));
    }

    #[test]
    fn loading_twice_is_idempotent() {
        let hs = set(cfg(2, 8), vec![hint(4, 0.5, &[(1, 1.0)])]);
        assert_eq!(slbiu_load(&hs).unwrap(), slbiu_load(&hs).unwrap());
    }

    #[test]
    fn dot_product_examples() {
        for q in [8, 16, 32] {
            let hs = set(cfg(2, q), vec![hint(4, 0.0, &[(0, 2.0)]), hint(8, -0.5, &[(0, 1.0), (2, 1.0), (5, 1.0)])]);
            let s = slbiu_load(&hs).unwrap();
            let p = s.predict(4, &ShiftRegister::from_bits(&[true, false, false, false]));
            assert_eq!(p, Prediction { taken: true, hit: true, latency_cycles: 3 });
            // all selected bits not taken: -0.5 - 3
            assert!(!s.predict(8, &ShiftRegister::new(4)).taken);
        }
    }

    #[test]
    fn zero_sum_is_taken() {
        let hs = set(cfg(1, 16), vec![hint(4, 1.0, &[(0, 1.0)])]);
        let s = slbiu_load(&hs).unwrap();
        assert!(s.predict(4, &ShiftRegister::new(4)).taken);
    }

    #[test]
    fn lhr_updates_are_private() {
        let hs = set(cfg(2, 8), vec![hint(4, 0.0, &[(4, 1.0)]), hint(8, 0.0, &[])]);
        let mut s = slbiu_load(&hs).unwrap();
        let ghr = ShiftRegister::new(4);
        assert!(!s.predict(4, &ghr).taken);
        slbiu_update(&mut s, 4, true);
        assert_eq!(*s.lhr(4).unwrap(), ShiftRegister::from_bits(&[true, false, false, false]));
        assert_eq!(*s.lhr(8).unwrap(), ShiftRegister::new(4));
        assert!(s.predict(4, &ghr).taken);
        let before = s.clone();
        slbiu_update(&mut s, 99, true);
        assert_eq!(s, before);
    }
}

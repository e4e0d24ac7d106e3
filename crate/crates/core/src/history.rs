//! Global and local branch histories, ±1 feature vectors and per-branch
//! training datasets.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::bits::ShiftRegister;
use crate::trace_io::Trace;

/// History lengths in bits: `gh` global, `lh` local.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryConfig {
    pub gh: usize,
    pub lh: usize,
}

impl HistoryConfig {
    pub fn new(gh: usize, lh: usize) -> Self {
        assert!(gh + lh >= 1, "history must hold at least one bit");
        Self { gh, lh }
    }

    /// Feature-vector length `gh + lh`.
    pub fn len(&self) -> usize {
        self.gh + self.lh
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Branches retired before samples are collected.
    pub fn warmup(&self) -> usize {
        self.len()
    }
}

/// Model input: GHR bits followed by LHR bits, each mapped to ±1.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct FeatureVector(pub Vec<i8>);

impl FeatureVector {
    pub fn values(&self) -> &[i8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[inline]
pub fn bit_to_feature(bit: bool) -> i8 {
    if bit {
        1
    } else {
        -1
    }
}

/// Profiling-side history: one GHR and an unbounded map of per-pc LHRs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HistoryState {
    config: HistoryConfig,
    ghr: ShiftRegister,
    lhr_map: HashMap<u64, ShiftRegister>,
}

impl HistoryState {
    pub fn new(config: HistoryConfig) -> Self {
        Self { config, ghr: ShiftRegister::new(config.gh), lhr_map: HashMap::new() }
    }

    pub fn config(&self) -> HistoryConfig {
        self.config
    }

    pub fn ghr(&self) -> &ShiftRegister {
        &self.ghr
    }

    /// The local history of `pc`, if it has been seen.
    pub fn lhr(&self, pc: u64) -> Option<&ShiftRegister> {
        self.lhr_map.get(&pc)
    }

    pub fn update(&mut self, pc: u64, taken: bool) {
        self.ghr.push(taken);
        let lh = self.config.lh;
        self.lhr_map.entry(pc).or_insert_with(|| ShiftRegister::new(lh)).push(taken);
    }

    pub fn features(&self, pc: u64) -> FeatureVector {
        let mut out = Vec::with_capacity(self.config.len());
        self.write_features(pc, &mut out);
        FeatureVector(out)
    }

    /// Appends the feature vector of `pc` to `out`.
    pub fn write_features(&self, pc: u64, out: &mut Vec<i8>) {
        out.extend(self.ghr.iter().map(bit_to_feature));
        match self.lhr_map.get(&pc) {
            Some(lhr) => out.extend(lhr.iter().map(bit_to_feature)),
            None => out.extend(std::iter::repeat_n(-1, self.config.lh)),
        }
    }
}

/// Samples `(x_i, y_i)` for one static branch, stored row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainingDataset {
    pub target_pc: u64,
    dim: usize,
    features: Vec<i8>,
    labels: Vec<bool>,
}

impl TrainingDataset {
    pub fn new(target_pc: u64, dim: usize) -> Self {
        Self { target_pc, dim, features: Vec::new(), labels: Vec::new() }
    }

    pub fn from_samples(target_pc: u64, dim: usize, samples: &[(Vec<i8>, bool)]) -> Self {
        let mut d = Self::new(target_pc, dim);
        for (x, y) in samples {
            d.push(x, *y);
        }
        d
    }

    pub fn push(&mut self, x: &[i8], y: bool) {
        assert_eq!(x.len(), self.dim, "feature length mismatch");
        debug_assert!(x.iter().all(|&v| v == 1 || v == -1));
        self.features.extend_from_slice(x);
        self.labels.push(y);
    }

    /// Sample count `m`.
    pub fn m(&self) -> usize {
        self.labels.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn taken_count(&self) -> usize {
        self.labels.iter().filter(|&&y| y).count()
    }

    /// Fraction of taken samples; 0 when empty.
    pub fn taken_rate(&self) -> f64 {
        if self.labels.is_empty() {
            0.0
        } else {
            self.taken_count() as f64 / self.m() as f64
        }
    }

    pub fn sample(&self, i: usize) -> (&[i8], bool) {
        (&self.features[i * self.dim..(i + 1) * self.dim], self.labels[i])
    }

    pub fn samples(&self) -> impl Iterator<Item = (&[i8], bool)> + '_ {
        (0..self.m()).map(move |i| self.sample(i))
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    /// Column `j` across all samples.
    pub fn column(&self, j: usize) -> impl Iterator<Item = i8> + '_ {
        (0..self.m()).map(move |i| self.features[i * self.dim + j])
    }

    /// Column-major copy of the feature matrix.
    pub fn columns(&self) -> Vec<Vec<i8>> {
        let m = self.m();
        let mut cols = vec![Vec::with_capacity(m); self.dim];
        for row in self.features.chunks_exact(self.dim.max(1)).take(m) {
            for (col, &v) in cols.iter_mut().zip(row) {
                col.push(v);
            }
        }
        cols
    }
}

/// Replays `trace` and collects the dataset of one branch.
pub fn collect_dataset(trace: &Trace, config: HistoryConfig, target_pc: u64) -> TrainingDataset {
    let targets = BTreeSet::from([target_pc]);
    collect_datasets(trace, config, &targets)
        .remove(&target_pc)
        .unwrap_or_else(|| TrainingDataset::new(target_pc, config.len()))
}

/// Replays `trace` once and collects datasets for every pc in `targets`.
///
/// A sample is the feature vector before the branch updates the history,
/// paired with its outcome; records before the warmup point are skipped.
pub fn collect_datasets(
    trace: &Trace,
    config: HistoryConfig,
    targets: &BTreeSet<u64>,
) -> BTreeMap<u64, TrainingDataset> {
    let mut out: BTreeMap<u64, TrainingDataset> =
        targets.iter().map(|&pc| (pc, TrainingDataset::new(pc, config.len()))).collect();
    let mut state = HistoryState::new(config);
    let mut row = Vec::with_capacity(config.len());
    let warmup = config.warmup();
    for (i, r) in trace.records().iter().enumerate() {
        if i >= warmup {
            if let Some(ds) = out.get_mut(&r.pc) {
                row.clear();
                state.write_features(r.pc, &mut row);
                ds.push(&row, r.taken);
            }
        }
        state.update(r.pc, r.taken);
    }
    out
}

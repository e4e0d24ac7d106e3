//! Sparsity hints: quantization, history deduplication, score-based selection
//! under a storage budget, and the `.sbph` hint file.
//!
//! A hint is a COO-encoded sparse model for one static branch. Its storage
//! cost in the inference unit is fixed by the unit's dimensions:
//!
//! ```text
//! storage = N · (p + q + nnz·q + nnz·⌈log₂(lh + gh)⌉ + lh)   bits
//! ```

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::{ceil_log2, BitReader, BitWriter};
use crate::history::TrainingDataset;
use crate::sparse_modeling::{eval_accuracy, refit_scaled, ModelError, SolverConfig, SparseModel};
use crate::Real;

pub const HINT_MAGIC: &[u8; 4] = b"SBPH";
pub const HINT_VERSION: u16 = 1;

/// Minimum offline accuracy for the independent selection policy.
pub const INDEPENDENT_MIN_ACCURACY: f64 = 0.99;
/// Largest accuracy loss accepted from deduplication.
pub const DEDUP_ACCURACY_SLACK: f64 = 0.001;
/// L1 share used by the deduplication refit.
pub const DEDUP_ALPHA: f64 = 0.5;

#[derive(Debug, Error)]
pub enum HintError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a hint file: {0}")]
    Format(String),
    #[error("invalid hint set: {0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Signed fixed-point format `Q[I].[F]`: one sign bit, `I` integer bits,
/// `F` fraction bits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QuantSpec {
    pub integer_bits: u32,
    pub fraction_bits: u32,
}

impl QuantSpec {
    pub const Q3_4: QuantSpec = QuantSpec { integer_bits: 3, fraction_bits: 4 };
    pub const Q3_12: QuantSpec = QuantSpec { integer_bits: 3, fraction_bits: 12 };

    pub fn new(integer_bits: u32, fraction_bits: u32) -> Self {
        assert!(1 + integer_bits + fraction_bits <= 32, "fixed-point width above 32 bits");
        Self { integer_bits, fraction_bits }
    }

    /// Total width `q = 1 + I + F`.
    pub fn width(&self) -> u32 {
        1 + self.integer_bits + self.fraction_bits
    }

    /// `2^F`, the number of codes per unit.
    pub fn scale(&self) -> f64 {
        (1u64 << self.fraction_bits) as f64
    }

    pub fn min_code(&self) -> i64 {
        -(1i64 << (self.integer_bits + self.fraction_bits))
    }

    pub fn max_code(&self) -> i64 {
        (1i64 << (self.integer_bits + self.fraction_bits)) - 1
    }

    /// Largest representable value `2^I − 2^−F`.
    pub fn max_value(&self) -> f64 {
        self.max_code() as f64 / self.scale()
    }

    /// Smallest representable value `−2^I`.
    pub fn min_value(&self) -> f64 {
        self.min_code() as f64 / self.scale()
    }

    /// Nearest code, ties away from zero, saturated to the format's range.
    pub fn to_code(&self, v: f64) -> i64 {
        let code = (v * self.scale()).round();
        code.clamp(self.min_code() as f64, self.max_code() as f64) as i64
    }

    pub fn from_code(&self, code: i64) -> f64 {
        code as f64 / self.scale()
    }

    pub fn quantize_value<T: Real>(&self, v: T) -> T {
        T::of(self.from_code(self.to_code(v.as_f64())))
    }

    /// Parses `"3.4"`-style labels or the bare widths `8` and `16`.
    pub fn parse(text: &str) -> Option<Self> {
        let text = text.trim().trim_start_matches(['Q', 'q']);
        match text {
            "8" => return Some(Self::Q3_4),
            "16" => return Some(Self::Q3_12),
            _ => {}
        }
        let (i, f) = text.split_once('.')?;
        let (i, f) = (i.parse().ok()?, f.parse().ok()?);
        (1 + i + f <= 32).then(|| Self::new(i, f))
    }
}

/// How weights are stored in a hint: `q`-bit fixed point, or IEEE binary32
/// for unquantized (full-precision) hints.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightCoding {
    Fixed(QuantSpec),
    Float32,
}

impl WeightCoding {
    /// Coding implied by a hint-file weight width.
    pub fn from_width(q: u32) -> Result<Self, HintError> {
        match q {
            8 => Ok(Self::Fixed(QuantSpec::Q3_4)),
            16 => Ok(Self::Fixed(QuantSpec::Q3_12)),
            32 => Ok(Self::Float32),
            _ => {
                Err(HintError::Invalid(format!("weight width {q} unsupported; use 8 (Q3.4), 16 (Q3.12) or 32 (float)")))
            }
        }
    }

    pub fn from_quant(spec: Option<QuantSpec>) -> Result<Self, HintError> {
        match spec {
            None => Ok(Self::Float32),
            Some(s) if s == QuantSpec::Q3_4 || s == QuantSpec::Q3_12 => Ok(Self::Fixed(s)),
            Some(s) => {
                Err(HintError::Invalid(format!("Q{}.{} has no hint-file encoding", s.integer_bits, s.fraction_bits)))
            }
        }
    }

    pub fn width(&self) -> u32 {
        match self {
            Self::Fixed(s) => s.width(),
            Self::Float32 => 32,
        }
    }

    /// Nearest value representable in this coding.
    pub fn round(&self, v: f64) -> f64 {
        match self {
            Self::Fixed(s) => s.from_code(s.to_code(v)),
            Self::Float32 => v as f32 as f64,
        }
    }

    fn encode(&self, v: f64) -> u64 {
        match self {
            Self::Fixed(s) => {
                let mask = (1u64 << s.width()) - 1;
                (s.to_code(v) as u64) & mask
            }
            Self::Float32 => (v as f32).to_bits() as u64,
        }
    }

    fn decode(&self, raw: u64) -> f64 {
        match self {
            Self::Fixed(s) => {
                let shift = 64 - s.width();
                s.from_code(((raw << shift) as i64) >> shift)
            }
            Self::Float32 => f32::from_bits(raw as u32) as f64,
        }
    }
}

/// Rounds the bias and every weight to `spec`; weights that round to zero are dropped.
pub fn quantize<T: Real>(model: &SparseModel<T>, spec: QuantSpec) -> SparseModel<T> {
    let mut out = model.clone();
    out.bias = spec.quantize_value(model.bias);
    for w in out.weights.values_mut() {
        *w = spec.quantize_value(*w);
    }
    out.prune();
    out
}

/// Dimensions of the inference unit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlbiuConfig {
    pub lh: usize,
    pub gh: usize,
    /// Hint capacity.
    pub n: usize,
    /// Weights per hint.
    pub nnz: usize,
    /// Weight width in bits.
    pub q: u32,
    /// PC width in bits.
    pub p: u32,
}

impl SlbiuConfig {
    pub fn empty(lh: usize, gh: usize, q: u32, p: u32) -> Self {
        Self { lh, gh, n: 0, nnz: 0, q, p }
    }

    pub fn index_bits(&self) -> u32 {
        ceil_log2(self.lh + self.gh)
    }

    /// Bits of one CAM entry.
    pub fn hint_bits(&self) -> u64 {
        hint_bits(self.nnz, self.q, self.p, self.lh, self.gh)
    }

    pub fn storage_bits(&self) -> u64 {
        storage_bits(self)
    }

    pub fn validate(&self) -> Result<(), HintError> {
        let invalid = |m: String| Err(HintError::Invalid(m));
        if self.lh + self.gh == 0 {
            return invalid("history length lh + gh must be positive".into());
        }
        if self.p == 0 || self.p > 64 {
            return invalid(format!("pc width {} outside 1..=64", self.p));
        }
        WeightCoding::from_width(self.q)?;
        for (name, v) in [("lh", self.lh), ("gh", self.gh), ("N", self.n), ("nnz", self.nnz)] {
            if v > u16::MAX as usize {
                return invalid(format!("{name} = {v} does not fit the hint file"));
            }
        }
        Ok(())
    }
}

fn hint_bits(nnz: usize, q: u32, p: u32, lh: usize, gh: usize) -> u64 {
    let nnz = nnz as u64;
    p as u64 + q as u64 + nnz * q as u64 + nnz * ceil_log2(lh + gh) as u64 + lh as u64
}

/// Storage of the CAM in bits.
pub fn storage_bits(config: &SlbiuConfig) -> u64 {
    config.n as u64 * config.hint_bits()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HintEntry {
    pub index: usize,
    pub weight: f64,
}

/// One branch's sparse model in deployable form. Only real (non-zero)
/// entries are held in memory; padding exists only in the file image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparsityHint {
    pub pc: u64,
    pub intercept: f64,
    /// Strictly increasing indices, non-zero weights.
    pub entries: Vec<HintEntry>,
}

impl SparsityHint {
    /// Converts a model, rounding parameters to `coding`.
    pub fn from_model<T: Real>(model: &SparseModel<T>, coding: WeightCoding) -> Self {
        let entries = model
            .weights
            .iter()
            .map(|(&index, w)| HintEntry { index, weight: coding.round(w.as_f64()) })
            .filter(|e| e.weight != 0.0)
            .collect();
        Self { pc: model.pc, intercept: coding.round(model.bias.as_f64()), entries }
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    /// The hint as a model over `dim` features.
    pub fn to_model(&self, dim: usize) -> SparseModel<f64> {
        let mut m = SparseModel::zero(self.pc, dim);
        m.bias = self.intercept;
        m.weights = self.entries.iter().map(|e| (e.index, e.weight)).collect();
        m
    }

    fn validate(&self, config: &SlbiuConfig, coding: WeightCoding) -> Result<(), HintError> {
        let invalid = |m: String| Err(HintError::Invalid(m));
        if self.pc == 0 {
            return invalid("pc 0 marks an empty CAM slot".into());
        }
        if config.p < 64 && self.pc >> config.p != 0 {
            return invalid(format!("pc {:#x} wider than {} bits", self.pc, config.p));
        }
        if self.entries.len() > config.nnz {
            return invalid(format!(
                "hint {:#x} has {} weights, capacity is {}",
                self.pc,
                self.entries.len(),
                config.nnz
            ));
        }
        let dim = config.lh + config.gh;
        let mut prev = None;
        for e in &self.entries {
            if e.index >= dim || prev.is_some_and(|p| p >= e.index) {
                return invalid(format!("hint {:#x}: indices must increase below {dim}", self.pc));
            }
            if e.weight == 0.0 || coding.round(e.weight) != e.weight {
                return invalid(format!("hint {:#x}: weight {} not representable", self.pc, e.weight));
            }
            prev = Some(e.index);
        }
        if coding.round(self.intercept) != self.intercept {
            return invalid(format!("hint {:#x}: intercept not representable", self.pc));
        }
        Ok(())
    }
}

/// The hints loaded into the unit for one program phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HintSet {
    pub phase_id: String,
    pub config: SlbiuConfig,
    pub hints: Vec<SparsityHint>,
}

impl HintSet {
    pub fn empty(phase_id: impl Into<String>, config: SlbiuConfig) -> Self {
        Self { phase_id: phase_id.into(), config, hints: Vec::new() }
    }

    pub fn coding(&self) -> Result<WeightCoding, HintError> {
        WeightCoding::from_width(self.config.q)
    }

    pub fn validate(&self) -> Result<(), HintError> {
        self.config.validate()?;
        let coding = self.coding()?;
        if self.hints.len() > self.config.n {
            return Err(HintError::Invalid(format!(
                "{} hints exceed capacity N = {}",
                self.hints.len(),
                self.config.n
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for h in &self.hints {
            h.validate(&self.config, coding)?;
            if !seen.insert(h.pc) {
                return Err(HintError::Invalid(format!("duplicate pc {:#x}", h.pc)));
            }
        }
        if self.phase_id.len() > u16::MAX as usize {
            return Err(HintError::Invalid("phase id too long".into()));
        }
        Ok(())
    }

    /// Encodes the `.sbph` image.
    ///
    /// Header: magic, version u16, phase id (u16 length + UTF-8), then
    /// `lh gh N nnz q p` as u16. The payload holds `N` slots of
    /// `pc | intercept | nnz × (index | weight) | lh reserved zero bits`,
    /// packed LSB-first. Unused slots and padding entries are all zero.
    pub fn to_bytes(&self) -> Result<Vec<u8>, HintError> {
        self.validate()?;
        let c = &self.config;
        let coding = self.coding()?;
        let mut out = Vec::new();
        out.extend_from_slice(HINT_MAGIC);
        out.extend_from_slice(&HINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.phase_id.len() as u16).to_le_bytes());
        out.extend_from_slice(self.phase_id.as_bytes());
        for v in [c.lh, c.gh, c.n, c.nnz, c.q as usize, c.p as usize] {
            out.extend_from_slice(&(v as u16).to_le_bytes());
        }
        let payload = self.payload(coding);
        debug_assert_eq!(payload.bit_len(), storage_bits(c));
        out.extend_from_slice(&payload.into_bytes());
        Ok(out)
    }

    fn payload(&self, coding: WeightCoding) -> BitWriter {
        let c = &self.config;
        let ib = c.index_bits();
        let mut w = BitWriter::new();
        for slot in 0..c.n {
            match self.hints.get(slot) {
                Some(h) => {
                    w.write(h.pc, c.p);
                    w.write(coding.encode(h.intercept), c.q);
                    for k in 0..c.nnz {
                        let (idx, val) = h.entries.get(k).map_or((0, 0), |e| (e.index as u64, coding.encode(e.weight)));
                        w.write(idx, ib);
                        w.write(val, c.q);
                    }
                }
                None => {
                    w.write(0, c.p);
                    w.write(0, c.q);
                    for _ in 0..c.nnz {
                        w.write(0, ib);
                        w.write(0, c.q);
                    }
                }
            }
            for _ in 0..c.lh {
                w.write(0, 1);
            }
        }
        w
    }

    /// Payload size in bits (header excluded).
    pub fn payload_bits(&self) -> Result<u64, HintError> {
        Ok(self.payload(self.coding()?).bit_len())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, HintError> {
        let fmt = |m: &str| HintError::Format(m.to_string());
        if bytes.len() < 8 || &bytes[..4] != HINT_MAGIC {
            return Err(fmt("bad magic"));
        }
        let u16_at = |i: usize| -> Result<u16, HintError> {
            bytes.get(i..i + 2).map(|b| u16::from_le_bytes([b[0], b[1]])).ok_or_else(|| fmt("truncated header"))
        };
        let version = u16_at(4)?;
        if version != HINT_VERSION {
            return Err(HintError::Format(format!("unsupported version {version}")));
        }
        let name_len = u16_at(6)? as usize;
        let name = bytes.get(8..8 + name_len).ok_or_else(|| fmt("truncated phase id"))?;
        let phase_id = String::from_utf8(name.to_vec()).map_err(|_| fmt("phase id is not UTF-8"))?;
        let base = 8 + name_len;
        let mut fields = [0usize; 6];
        for (k, f) in fields.iter_mut().enumerate() {
            *f = u16_at(base + 2 * k)? as usize;
        }
        let [lh, gh, n, nnz, q, p] = fields;
        let config = SlbiuConfig { lh, gh, n, nnz, q: q as u32, p: p as u32 };
        config.validate().map_err(|e| HintError::Format(e.to_string()))?;
        let coding = WeightCoding::from_width(config.q)?;

        let payload = &bytes[base + 12..];
        let bits = storage_bits(&config);
        if payload.len() as u64 != bits.div_ceil(8) {
            return Err(HintError::Format(format!(
                "payload is {} bytes, configuration needs {}",
                payload.len(),
                bits.div_ceil(8)
            )));
        }
        let ib = config.index_bits();
        let mut r = BitReader::new(payload);
        let mut read = |w: u32| r.read(w).ok_or_else(|| fmt("payload ended early"));
        let mut hints = Vec::new();
        let mut saw_empty = false;
        for _ in 0..n {
            let pc = read(config.p)?;
            let intercept_raw = read(config.q)?;
            let mut entries = Vec::new();
            let mut slot_bits = pc | intercept_raw;
            for _ in 0..nnz {
                let idx = read(ib)?;
                let raw = read(config.q)?;
                slot_bits |= idx | raw;
                let weight = coding.decode(raw);
                if weight != 0.0 {
                    entries.push(HintEntry { index: idx as usize, weight });
                } else if idx != 0 {
                    return Err(fmt("padding entry with non-zero index"));
                }
            }
            for _ in 0..lh {
                if read(1)? != 0 {
                    return Err(fmt("reserved local-history bits are not zero"));
                }
            }
            if pc == 0 {
                if slot_bits != 0 {
                    return Err(fmt("empty slot with non-zero contents"));
                }
                saw_empty = true;
                continue;
            }
            if saw_empty {
                return Err(fmt("occupied slot after an empty one"));
            }
            hints.push(SparsityHint { pc, intercept: coding.decode(intercept_raw), entries });
        }
        if payload.len() as u64 * 8 > bits {
            let tail = r.read((payload.len() as u64 * 8 - bits) as u32).unwrap_or(1);
            if tail != 0 {
                return Err(fmt("non-zero padding after payload"));
            }
        }
        let set = HintSet { phase_id, config, hints };
        set.validate().map_err(|e| HintError::Format(e.to_string()))?;
        Ok(set)
    }
}

pub fn encode_hintset(hs: &HintSet, path: impl AsRef<Path>) -> Result<(), HintError> {
    fs::write(path, hs.to_bytes()?)?;
    Ok(())
}

pub fn decode_hintset(path: impl AsRef<Path>) -> Result<HintSet, HintError> {
    HintSet::from_bytes(&fs::read(path)?)
}

/// Result of [`dedup_detailed`].
#[derive(Clone, Debug)]
pub struct DedupOutcome {
    /// Final model: the collapsed ElasticNet model, or the input on rejection.
    pub model: SparseModel<f64>,
    /// The ElasticNet refit before collapsing.
    pub elastic: SparseModel<f64>,
    pub accepted: bool,
}

/// Merges non-zero weights whose feature columns are identical over the
/// dataset: the smallest index of each group keeps the group's summed weight.
pub fn collapse_duplicates(model: &SparseModel<f64>, dataset: &TrainingDataset) -> SparseModel<f64> {
    let mut groups: HashMap<Vec<i8>, usize> = HashMap::new();
    let mut out = model.clone();
    out.weights.clear();
    for (&j, &w) in &model.weights {
        let col: Vec<i8> = dataset.column(j).collect();
        let keep = *groups.entry(col).or_insert(j);
        *out.weights.entry(keep).or_insert(0.0) += w;
    }
    out.prune();
    out.accuracy = eval_accuracy(&out, dataset);
    out
}

/// Groups of identical feature columns, each sorted, ordered by first index.
pub fn column_groups(dataset: &TrainingDataset) -> Vec<Vec<usize>> {
    let mut first: HashMap<Vec<i8>, usize> = HashMap::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (j, col) in dataset.columns().into_iter().enumerate() {
        match first.get(&col) {
            Some(&g) => groups[g].push(j),
            None => {
                first.insert(col, groups.len());
                groups.push(vec![j]);
            }
        }
    }
    groups
}

/// ElasticNet refit plus duplicate collapsing; see [`collapse_duplicates`].
///
/// Identical columns receive equal weights at the ElasticNet optimum, so the
/// refit is solved on one column per group with the group's L2 term scaled by
/// `1/k` and the weight then split evenly; plain coordinate descent crawls on
/// exactly collinear columns.
pub fn dedup_detailed(
    dataset: &TrainingDataset,
    lasso: &SparseModel<f64>,
    config: &SolverConfig<f64>,
) -> Result<DedupOutcome, HintError> {
    let alpha = if config.elasticnet_alpha < 1.0 { config.elasticnet_alpha } else { DEDUP_ALPHA };
    let groups = column_groups(dataset);
    let reps: Vec<usize> = groups.iter().map(|g| g[0]).collect();
    let mut reduced = TrainingDataset::new(dataset.target_pc, reps.len());
    let mut row = Vec::with_capacity(reps.len());
    for (x, y) in dataset.samples() {
        row.clear();
        row.extend(reps.iter().map(|&j| x[j]));
        reduced.push(&row, y);
    }
    let mut start = SparseModel::zero(lasso.pc, reps.len());
    start.bias = lasso.bias;
    for (g, members) in groups.iter().enumerate() {
        let w: f64 = members.iter().filter_map(|j| lasso.weights.get(j)).sum();
        if w != 0.0 {
            start.weights.insert(g, w);
        }
    }
    let scale: Vec<f64> = groups.iter().map(|g| 1.0 / g.len() as f64).collect();
    let fitted = refit_scaled(&reduced, lasso.lambda, alpha, config, &start, &scale)?;

    let mut elastic = SparseModel::zero(lasso.pc, dataset.dim());
    elastic.bias = fitted.bias;
    for (&g, &w) in &fitted.weights {
        let share = w / groups[g].len() as f64;
        elastic.weights.extend(groups[g].iter().map(|&j| (j, share)));
    }
    elastic.lambda = lasso.lambda;
    elastic.alpha = alpha;
    elastic.m = dataset.m();
    elastic.converged = fitted.converged;
    elastic.accuracy = eval_accuracy(&elastic, dataset);
    elastic.sufficient = elastic.accuracy >= config.accuracy_stop;

    let mut collapsed = collapse_duplicates(&elastic, dataset);
    collapsed.sufficient = collapsed.accuracy >= config.accuracy_stop;
    if collapsed.accuracy < lasso.accuracy - DEDUP_ACCURACY_SLACK {
        return Ok(DedupOutcome { model: lasso.clone(), elastic, accepted: false });
    }
    Ok(DedupOutcome { model: collapsed, elastic, accepted: true })
}

pub fn dedup(
    dataset: &TrainingDataset,
    lasso: &SparseModel<f64>,
    config: &SolverConfig<f64>,
) -> Result<SparseModel<f64>, HintError> {
    dedup_detailed(dataset, lasso, config).map(|o| o.model)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionPolicy {
    /// Score = correct offline predictions; models under 99% accuracy are dropped.
    Independent,
    /// Score = correct offline predictions minus the primary predictor's.
    Relative,
}

impl std::str::FromStr for SelectionPolicy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "independent" => Ok(Self::Independent),
            "relative" => Ok(Self::Relative),
            _ => Err(format!("unknown policy {s:?}; expected independent or relative")),
        }
    }
}

/// A model with its correct-prediction counts over the profiled occurrences.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredCandidate {
    pub model: SparseModel<f64>,
    pub offline_correct: u64,
    pub primary_correct: u64,
}

/// `None` means the candidate is dropped before ranking.
pub fn score(candidate: &ScoredCandidate, policy: SelectionPolicy) -> Option<i64> {
    match policy {
        SelectionPolicy::Independent => {
            (candidate.model.accuracy >= INDEPENDENT_MIN_ACCURACY).then_some(candidate.offline_correct as i64)
        }
        SelectionPolicy::Relative => Some(candidate.offline_correct as i64 - candidate.primary_correct as i64),
    }
}

/// Fixed unit dimensions for a selection run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SelectionParams {
    pub p: u32,
    pub q: u32,
    pub lh: usize,
    pub gh: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    pub hints: HintSet,
    pub n: usize,
    pub nnz: usize,
    pub score_sum: i64,
}

/// Grid search over `(N, nnz)` within `budget_bits`.
///
/// For every cap `nnz`, candidates with a non-positive score or more than
/// `nnz` weights are dropped, the rest ranked by score (ties: fewer weights,
/// then lower pc) and the top `N` taken, where `N` is the largest count the
/// budget allows. The pair with the largest score sum wins; ties prefer the
/// larger `N`, then the smaller `nnz`.
pub fn select(
    candidates: &[ScoredCandidate],
    policy: SelectionPolicy,
    budget_bits: u64,
    params: SelectionParams,
    phase_id: &str,
) -> Result<Selection, HintError> {
    if budget_bits == 0 {
        return Err(HintError::Invalid("budget must be positive".into()));
    }
    let coding = WeightCoding::from_width(params.q)?;
    let mut scored: Vec<(i64, &ScoredCandidate)> =
        candidates.iter().filter_map(|c| score(c, policy).map(|s| (s, c))).filter(|(s, _)| *s > 0).collect();
    scored.sort_by(|(sa, a), (sb, b)| {
        sb.cmp(sa).then(a.model.nnz().cmp(&b.model.nnz())).then(a.model.pc.cmp(&b.model.pc))
    });
    let max_nnz = candidates.iter().map(|c| c.model.nnz()).max().unwrap_or(0).max(1);

    let mut best: Option<(i64, usize, usize)> = None;
    for cap in 1..=max_nnz {
        let per_hint = hint_bits(cap, params.q, params.p, params.lh, params.gh);
        let n = (budget_bits / per_hint) as usize;
        if n == 0 {
            continue;
        }
        let pool: Vec<i64> = scored.iter().filter(|(_, c)| c.model.nnz() <= cap).map(|(s, _)| *s).take(n).collect();
        if pool.is_empty() {
            continue;
        }
        let sum: i64 = pool.iter().sum();
        let better = match best {
            None => true,
            Some((bs, bn, _)) => sum > bs || (sum == bs && n > bn),
        };
        if better {
            best = Some((sum, n, cap));
        }
    }

    let config_for =
        |n: usize, nnz: usize| SlbiuConfig { lh: params.lh, gh: params.gh, n, nnz, q: params.q, p: params.p };
    let Some((score_sum, n, nnz)) = best else {
        return Ok(Selection { hints: HintSet::empty(phase_id, config_for(0, 0)), n: 0, nnz: 0, score_sum: 0 });
    };
    let hints = scored
        .iter()
        .filter(|(_, c)| c.model.nnz() <= nnz)
        .take(n)
        .map(|(_, c)| SparsityHint::from_model(&c.model, coding))
        .collect();
    let set = HintSet { phase_id: phase_id.to_string(), config: config_for(n, nnz), hints };
    set.validate()?;
    Ok(Selection { hints: set, n, nnz, score_sum })
}

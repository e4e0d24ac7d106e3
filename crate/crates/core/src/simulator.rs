//! Trace-driven simulation: baseline-only and coupled runs, the offline
//! pipeline (profile, train, compress, select, simulate) and S-curve reports.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::{debug, info};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::ShiftRegister;
use crate::hints::{
    decode_hintset, dedup, encode_hintset, quantize, select, HintError, HintSet, QuantSpec, ScoredCandidate,
    SelectionParams, SelectionPolicy, SlbiuConfig, SparsityHint, WeightCoding,
};
use crate::history::{collect_datasets, HistoryConfig};
use crate::predictors::{BaselineKind, SlbiuError, SlbiuState};
use crate::sparse_modeling::{correct_count, lambda_search, BranchScreen, ModelError, SolverConfig, SparseModel};
use crate::trace_io::{Trace, TraceError};

pub const DEFAULT_SNAPSHOT_INTERVAL: u64 = 100_000;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Hint(#[from] HintError),
    #[error(transparent)]
    Slbiu(#[from] SlbiuError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl SimError {
    /// True for errors caused by inconsistent inputs rather than the run itself.
    pub fn is_config(&self) -> bool {
        matches!(self, Self::Config(_) | Self::Slbiu(SlbiuError::Capacity { .. }))
            || matches!(self, Self::Hint(HintError::Invalid(_)) | Self::Slbiu(SlbiuError::Hint(HintError::Invalid(_))))
            || matches!(self, Self::Model(ModelError::Config(_)))
            || matches!(self, Self::Trace(TraceError::InvalidScenario(_)))
    }
}

/// Where the inference unit's hints come from.
#[derive(Clone, Debug, Default, PartialEq)]
pub enum HintSource {
    #[default]
    None,
    Inline(HintSet),
    /// One hint file for every phase.
    File(PathBuf),
    /// `<dir>/<phase_id>.sbph`, reloaded per phase.
    Directory(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub baseline: BaselineKind,
    /// Shared global history length and profiling local history length.
    pub history: HistoryConfig,
    /// Expected unit dimensions; hints must agree on `lh`, `gh` and `q`.
    pub slbiu: Option<SlbiuConfig>,
    pub hints: HintSource,
    /// Branches between occupancy snapshots.
    pub snapshot_interval: u64,
}

impl SimConfig {
    pub fn baseline_only(baseline: BaselineKind, history: HistoryConfig) -> Self {
        Self { baseline, history, slbiu: None, hints: HintSource::None, snapshot_interval: DEFAULT_SNAPSHOT_INTERVAL }
    }

    pub fn with_hints(mut self, hints: HintSet) -> Self {
        self.slbiu = Some(hints.config);
        self.hints = HintSource::Inline(hints);
        self
    }

    fn hints_for(&self, phase_id: &str) -> Result<Option<HintSet>, SimError> {
        Ok(match &self.hints {
            HintSource::None => None,
            HintSource::Inline(hs) => Some(hs.clone()),
            HintSource::File(p) => Some(decode_hintset(p)?),
            HintSource::Directory(d) => Some(decode_hintset(d.join(format!("{phase_id}.sbph")))?),
        })
    }

    fn check(&self, hints: Option<&HintSet>) -> Result<(), SimError> {
        self.baseline.validate().map_err(SimError::Config)?;
        if self.snapshot_interval == 0 {
            return Err(SimError::Config("snapshot interval must be positive".into()));
        }
        let config = match (hints, &self.slbiu) {
            (Some(hs), Some(expected)) => {
                let c = hs.config;
                if (c.lh, c.gh, c.q) != (expected.lh, expected.gh, expected.q) {
                    return Err(SimError::Config(format!(
                        "hint set (lh {}, gh {}, q {}) does not match the unit (lh {}, gh {}, q {})",
                        c.lh, c.gh, c.q, expected.lh, expected.gh, expected.q
                    )));
                }
                c
            }
            (Some(hs), None) => hs.config,
            (None, _) => return Ok(()),
        };
        if config.gh > self.history.gh {
            return Err(SimError::Config(format!(
                "unit reads {} global history bits, the shared GHR holds {}",
                config.gh, self.history.gh
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BranchStats {
    pub occurrences: u64,
    pub mispredictions: u64,
    pub slbiu_hits: u64,
    pub allocations: u64,
    pub unique_entries_avg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub phase_id: String,
    pub baseline: String,
    pub total_instructions: u64,
    pub branches: u64,
    pub mispredictions: u64,
    pub mpki: f64,
    /// Keyed by pc.
    pub per_branch: BTreeMap<u64, BranchStats>,
    pub offloaded_count: usize,
    /// FNV-1a over the outcome sequence shifted into the shared GHR.
    pub ghr_digest: String,
}

impl SimReport {
    pub fn to_json(&self) -> Result<String, SimError> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// One line per branch, sorted by pc, after a summary line.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "phase {} baseline {} instructions {} branches {} mispredictions {} mpki {:.4} offloaded {}\n",
            self.phase_id,
            self.baseline,
            self.total_instructions,
            self.branches,
            self.mispredictions,
            self.mpki,
            self.offloaded_count
        );
        for (pc, b) in &self.per_branch {
            let _ = writeln!(
                out,
                "{pc:#x} occurrences {} mispredictions {} hits {} allocations {} entries {:.2}",
                b.occurrences, b.mispredictions, b.slbiu_hits, b.allocations, b.unique_entries_avg
            );
        }
        out
    }

    /// Checks the MPKI identity against the per-branch map.
    pub fn accounting_holds(&self) -> bool {
        let sum: u64 = self.per_branch.values().map(|b| b.mispredictions).sum();
        let occ: u64 = self.per_branch.values().map(|b| b.occurrences).sum();
        sum == self.mispredictions
            && occ == self.branches
            && self.mpki == mpki(self.mispredictions, self.total_instructions)
    }
}

pub fn mpki(mispredictions: u64, instructions: u64) -> f64 {
    if instructions == 0 {
        0.0
    } else {
        1000.0 * mispredictions as f64 / instructions as f64
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0100_0000_01b3;

/// Replays `trace`, loading the phase's hints (if any) before the first record.
pub fn run(trace: &Trace, config: &SimConfig) -> Result<SimReport, SimError> {
    let hints = config.hints_for(&trace.phase_id)?;
    config.check(hints.as_ref())?;
    let mut slbiu = hints.as_ref().map(SlbiuState::load).transpose()?;
    let mut baseline = config.baseline.build();

    let ghr_len = config.history.gh.max(baseline.history_len()).max(1);
    let mut ghr = ShiftRegister::new(ghr_len);
    let mut digest = FNV_OFFSET;
    let mut per_branch: BTreeMap<u64, BranchStats> = BTreeMap::new();
    let mut mispredictions = 0u64;

    for (i, r) in trace.records().iter().enumerate() {
        let hit = slbiu.as_ref().map(|s| s.predict(r.pc, &ghr)).filter(|p| p.hit);
        let base = baseline.predict(r.pc, &ghr);
        let predicted = hit.map_or(base.taken, |p| p.taken);

        let stats = per_branch.entry(r.pc).or_default();
        stats.occurrences += 1;
        if hit.is_some() {
            stats.slbiu_hits += 1;
        }
        if predicted != r.taken {
            stats.mispredictions += 1;
            mispredictions += 1;
        }

        baseline.update(r.pc, &ghr, r.taken, hit.is_some());
        if let Some(s) = slbiu.as_mut() {
            s.update(r.pc, r.taken);
        }
        ghr.push(r.taken);
        digest = (digest ^ r.taken as u64).wrapping_mul(FNV_PRIME);

        if (i as u64 + 1).is_multiple_of(config.snapshot_interval) {
            baseline.snapshot();
        }
    }
    if (trace.len() as u64) < config.snapshot_interval {
        baseline.snapshot();
    }

    let stats = baseline.stats();
    for (pc, b) in per_branch.iter_mut() {
        b.allocations = stats.allocations.get(pc).copied().unwrap_or(0);
        b.unique_entries_avg = stats.unique_entries_avg.get(pc).copied().unwrap_or(0.0);
    }
    Ok(SimReport {
        phase_id: trace.phase_id.clone(),
        baseline: baseline.name().to_string(),
        total_instructions: trace.total_instructions(),
        branches: trace.len() as u64,
        mispredictions,
        mpki: mpki(mispredictions, trace.total_instructions()),
        per_branch,
        offloaded_count: hints.map_or(0, |h| h.hints.len()),
        ghr_digest: format!("{digest:016x}"),
    })
}

/// Offline pipeline settings.
#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub budget_bits: u64,
    pub policy: SelectionPolicy,
    /// `None` keeps full precision (binary32 weights).
    pub quant: Option<QuantSpec>,
    pub history: HistoryConfig,
    pub baseline: BaselineKind,
    pub solver: SolverConfig<f64>,
    pub screen: BranchScreen,
    /// PC width stored per hint.
    pub pc_bits: u32,
    pub snapshot_interval: u64,
    /// Where `<phase_id>.sbph` files are written, if anywhere.
    pub hint_dir: Option<PathBuf>,
}

impl PipelineConfig {
    pub fn new(budget_bits: u64, policy: SelectionPolicy, quant: Option<QuantSpec>) -> Self {
        Self {
            budget_bits,
            policy,
            quant,
            history: HistoryConfig::new(64, 16),
            baseline: BaselineKind::default(),
            solver: SolverConfig::default(),
            screen: BranchScreen::default(),
            pc_bits: 64,
            snapshot_interval: DEFAULT_SNAPSHOT_INTERVAL,
            hint_dir: None,
        }
    }

    fn coding(&self) -> Result<WeightCoding, HintError> {
        WeightCoding::from_quant(self.quant)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateSummary {
    pub pc: u64,
    pub nnz: usize,
    pub lambda: f64,
    pub accuracy: f64,
    pub offline_correct: u64,
    pub primary_correct: u64,
}

/// Outcome of the pipeline for one phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseResult {
    pub phase_id: String,
    pub baseline: SimReport,
    pub coupled: SimReport,
    pub hints: HintSet,
    pub score_sum: i64,
    pub candidates: Vec<CandidateSummary>,
}

/// Branches of `trace` that pass the screen over their post-warmup occurrences.
pub fn screened_branches(trace: &Trace, history: HistoryConfig, screen: &BranchScreen) -> BTreeSet<u64> {
    let mut counts: BTreeMap<u64, (usize, usize)> = BTreeMap::new();
    for r in trace.records().iter().skip(history.warmup()) {
        let c = counts.entry(r.pc).or_default();
        c.0 += 1;
        c.1 += r.taken as usize;
    }
    counts.into_iter().filter(|(_, (m, t))| screen.passes(*m, *t)).map(|(pc, _)| pc).collect()
}

/// λ search plus deduplication for every target, in pc order.
pub fn train_models(
    trace: &Trace,
    cfg: &PipelineConfig,
    targets: &BTreeSet<u64>,
) -> Result<Vec<SparseModel<f64>>, SimError> {
    let datasets = collect_datasets(trace, cfg.history, targets);
    let trained: Vec<Result<SparseModel<f64>, SimError>> = datasets
        .par_iter()
        .filter(|(_, ds)| ds.m() > 0)
        .map(|(&pc, ds)| {
            let lasso = lambda_search(ds, &cfg.solver)?;
            let model = dedup(ds, &lasso, &cfg.solver)?;
            debug!("{pc:#x}: lambda {:.3e} nnz {} accuracy {:.4}", model.lambda, model.nnz(), model.accuracy);
            Ok(model)
        })
        .collect();
    trained.into_iter().collect()
}

/// Compresses `models` to the configured weight format and counts correct
/// predictions of each and of the baseline over the same occurrences.
pub fn score_models(
    trace: &Trace,
    cfg: &PipelineConfig,
    models: &[SparseModel<f64>],
) -> Result<Vec<ScoredCandidate>, SimError> {
    let coding = cfg.coding()?;
    let dim = cfg.history.len();
    if let Some(m) = models.iter().find(|m| m.dim != dim) {
        return Err(SimError::Config(format!("model {:#x} has {} features, history gives {dim}", m.pc, m.dim)));
    }
    let targets: BTreeSet<u64> = models.iter().map(|m| m.pc).collect();
    let datasets = collect_datasets(trace, cfg.history, &targets);
    let primary = primary_correct(trace, cfg, &targets)?;
    Ok(models
        .iter()
        .filter(|m| datasets[&m.pc].m() > 0)
        .map(|trained| {
            let ds = &datasets[&trained.pc];
            let compact = match cfg.quant {
                Some(spec) => quantize(trained, spec),
                None => trained.clone(),
            };
            let mut model = SparsityHint::from_model(&compact, coding).to_model(dim);
            model.lambda = trained.lambda;
            model.alpha = trained.alpha;
            model.m = ds.m();
            model.converged = trained.converged;
            let offline = correct_count(&model, ds) as u64;
            model.accuracy = offline as f64 / ds.m() as f64;
            model.sufficient = model.accuracy >= cfg.solver.accuracy_stop;
            ScoredCandidate { model, offline_correct: offline, primary_correct: primary[&trained.pc] }
        })
        .collect())
}

/// Builds the scored candidate pool of one phase.
pub fn train_candidates(trace: &Trace, cfg: &PipelineConfig) -> Result<Vec<ScoredCandidate>, SimError> {
    let targets = screened_branches(trace, cfg.history, &cfg.screen);
    info!("{}: {} static branches pass screening", trace.phase_id, targets.len());
    if targets.is_empty() {
        return Ok(Vec::new());
    }
    let models = train_models(trace, cfg, &targets)?;
    score_models(trace, cfg, &models)
}

/// Correct baseline predictions per target over its post-warmup occurrences.
fn primary_correct(
    trace: &Trace,
    cfg: &PipelineConfig,
    targets: &BTreeSet<u64>,
) -> Result<BTreeMap<u64, u64>, SimError> {
    cfg.baseline.validate().map_err(SimError::Config)?;
    let mut baseline = cfg.baseline.build();
    let mut ghr = ShiftRegister::new(cfg.history.gh.max(baseline.history_len()).max(1));
    let mut out: BTreeMap<u64, u64> = targets.iter().map(|&pc| (pc, 0)).collect();
    let warmup = cfg.history.warmup();
    for (i, r) in trace.records().iter().enumerate() {
        let p = baseline.predict(r.pc, &ghr);
        if i >= warmup && p.taken == r.taken {
            if let Some(c) = out.get_mut(&r.pc) {
                *c += 1;
            }
        }
        baseline.update(r.pc, &ghr, r.taken, false);
        ghr.push(r.taken);
    }
    Ok(out)
}

/// Profiles, trains, compresses and selects hints for one phase, then
/// simulates it with and without them.
pub fn run_phase(trace: &Trace, cfg: &PipelineConfig) -> Result<PhaseResult, SimError> {
    if cfg.budget_bits == 0 {
        return Err(SimError::Config("budget must be positive".into()));
    }
    let coding = cfg.coding()?;
    let candidates = train_candidates(trace, cfg)?;
    let params = SelectionParams { p: cfg.pc_bits, q: coding.width(), lh: cfg.history.lh, gh: cfg.history.gh };
    let selection = select(&candidates, cfg.policy, cfg.budget_bits, params, &trace.phase_id)?;
    info!(
        "{}: selected {} hints, N = {}, nnz = {}, score {}",
        trace.phase_id,
        selection.hints.hints.len(),
        selection.n,
        selection.nnz,
        selection.score_sum
    );
    if let Some(dir) = &cfg.hint_dir {
        fs::create_dir_all(dir)?;
        encode_hintset(&selection.hints, dir.join(format!("{}.sbph", trace.phase_id)))?;
    }
    let base_cfg = SimConfig {
        snapshot_interval: cfg.snapshot_interval,
        ..SimConfig::baseline_only(cfg.baseline.clone(), cfg.history)
    };
    let baseline = run(trace, &base_cfg)?;
    let coupled = run(trace, &base_cfg.clone().with_hints(selection.hints.clone()))?;
    Ok(PhaseResult {
        phase_id: trace.phase_id.clone(),
        baseline,
        coupled,
        hints: selection.hints,
        score_sum: selection.score_sum,
        candidates: candidates
            .iter()
            .map(|c| CandidateSummary {
                pc: c.model.pc,
                nnz: c.model.nnz(),
                lambda: c.model.lambda,
                accuracy: c.model.accuracy,
                offline_correct: c.offline_correct,
                primary_correct: c.primary_correct,
            })
            .collect(),
    })
}

/// Runs every phase in order; each phase gets its own hint set.
pub fn run_pipeline(traces: &[Trace], cfg: &PipelineConfig) -> Result<Vec<PhaseResult>, SimError> {
    if traces.is_empty() {
        return Err(SimError::Config("pipeline needs at least one trace".into()));
    }
    let ids: BTreeSet<&str> = traces.iter().map(|t| t.phase_id.as_str()).collect();
    if ids.len() != traces.len() {
        return Err(SimError::Config("phase ids must be distinct".into()));
    }
    traces.iter().map(|t| run_phase(t, cfg)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScurveRow {
    pub name: String,
    pub baseline_mpki: f64,
    pub coupled_mpki: f64,
    /// `baseline − coupled`.
    pub abs_improvement: f64,
    /// `abs_improvement / baseline`; 0 when the baseline is 0.
    pub rel_improvement: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScurveBucket {
    pub low: f64,
    /// `None` is unbounded.
    pub high: Option<f64>,
    pub count: usize,
    pub mean_abs_improvement: f64,
    pub mean_rel_improvement: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scurve {
    pub rows: Vec<ScurveRow>,
    pub buckets: Vec<ScurveBucket>,
}

pub const SCURVE_BUCKETS: [(f64, Option<f64>); 3] = [(0.01, Some(1.0)), (1.0, Some(5.0)), (5.0, None)];

/// Rows sorted by baseline MPKI (ties by name) plus bucketed mean improvements.
pub fn report_scurve(entries: &[(String, f64, f64)]) -> Scurve {
    let mut rows: Vec<ScurveRow> = entries
        .iter()
        .map(|(name, b, c)| {
            let abs = b - c;
            ScurveRow {
                name: name.clone(),
                baseline_mpki: *b,
                coupled_mpki: *c,
                abs_improvement: abs,
                rel_improvement: if *b == 0.0 { 0.0 } else { abs / b },
            }
        })
        .collect();
    rows.sort_by(|a, b| a.baseline_mpki.total_cmp(&b.baseline_mpki).then(a.name.cmp(&b.name)));
    let buckets = SCURVE_BUCKETS
        .iter()
        .map(|&(low, high)| {
            let inside: Vec<&ScurveRow> =
                rows.iter().filter(|r| r.baseline_mpki >= low && high.is_none_or(|h| r.baseline_mpki < h)).collect();
            let n = inside.len();
            let mean = |f: fn(&ScurveRow) -> f64| {
                if n == 0 {
                    0.0
                } else {
                    inside.iter().map(|r| f(r)).sum::<f64>() / n as f64
                }
            };
            ScurveBucket {
                low,
                high,
                count: n,
                mean_abs_improvement: mean(|r| r.abs_improvement),
                mean_rel_improvement: mean(|r| r.rel_improvement),
            }
        })
        .collect();
    Scurve { rows, buckets }
}

impl Scurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("name,baseline_mpki,coupled_mpki,abs_improvement,rel_improvement\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.name, r.baseline_mpki, r.coupled_mpki, r.abs_improvement, r.rel_improvement
            );
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for b in &self.buckets {
            let high = b.high.map_or("inf".to_string(), |h| h.to_string());
            let _ = writeln!(
                out,
                "bucket [{}, {}) count {} mean_abs {:.4} mean_rel {:.4}",
                b.low, high, b.count, b.mean_abs_improvement, b.mean_rel_improvement
            );
        }
        out
    }
}

/// Reads a report written by [`SimReport::to_json`].
pub fn read_report(path: impl AsRef<Path>) -> Result<SimReport, SimError> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

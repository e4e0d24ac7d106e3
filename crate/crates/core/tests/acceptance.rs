//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero when any fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use sbp_core::hints::{
    dedup_detailed, select, HintEntry, HintSet, QuantSpec, ScoredCandidate, SelectionParams, SelectionPolicy,
    SlbiuConfig, SparsityHint, WeightCoding,
};
use sbp_core::history::{collect_dataset, HistoryConfig};
use sbp_core::online_sgd::{run_online, OnlineTargets};
use sbp_core::predictors::{BaselineKind, TageLiteConfig};
use sbp_core::simulator::{run, run_pipeline, PipelineConfig, SimConfig};
use sbp_core::sparse_modeling::{correct_count, fit, lambda_search, SparseModel};
use sbp_core::trace_io::{
    correlated_ghr_index, correlated_pcs, gen_correlated, gen_loop, synthetic_corpus, SyntheticScenario,
};
use sbp_core::{OnlineConfig, SolverConfig};

const SEED: u64 = 1;

// Criterion 1
const RECOVERY_RECORDS: usize = 1_000_000;
const RECOVERY_MIN_ACCURACY: f64 = 0.999;
const RECOVERY_MAX_NNZ: usize = 3;
const RECOVERY_TIME_LIMIT: Duration = Duration::from_secs(60);

// Criterion 2
const BLOWUP_NOISE: [u32; 3] = [2, 4, 8];
const BLOWUP_BLOCKS: usize = 40_000;
const BLOWUP_MAX_COUPLED_SHARE: f64 = 0.01;

// Criterion 4
const QUANT_SAMPLES: usize = 1_000_000;
const QUANT_MPKI_SLACK: f64 = 0.05;
const CORPUS_RECORDS: usize = 40_000;
const CORPUS_MIN_OCCURRENCES: usize = 2_000;
const CORPUS_BUDGET_BITS: u64 = 2 * 8192;

// Criterion 6
const SELECTION_POOLS: u64 = 1_000;

// Criterion 8
const SIGN_CASES: usize = 100_000;

// Criterion 9
const ONLINE_RECORDS: usize = 200_000;
const ONLINE_MAX_RATIO: f64 = 4.0;
const ONLINE_MAX_NNZ_AVG: f64 = 50.0;

// Criterion 10
const SOLVER_INSTANCES: u64 = 20;
const SOLVER_MAX_GAP: f64 = 1e-6;
const SOLVER_KKT_FACTOR: f64 = 10.0;
const FISTA_ITERATIONS: usize = 20_000;

// Criterion 11
const CLI_RUNS: usize = 3;

type Outcome = (bool, String);
type Criterion = (&'static str, fn() -> Outcome);

fn tage_small() -> BaselineKind {
    BaselineKind::TageLite(TageLiteConfig { tables: 4, log_entries: 10, max_history: 64, ..Default::default() })
}

fn sparse_recovery() -> Outcome {
    let t = gen_correlated(&SyntheticScenario::correlated(8, 1, RECOVERY_RECORDS, SEED)).unwrap();
    let (_, b) = correlated_pcs(8);
    let start = Instant::now();
    let d = collect_dataset(&t, HistoryConfig::new(64, 64), b);
    let model = lambda_search(&d, &SolverConfig::default()).unwrap();
    let elapsed = start.elapsed();
    let dominant = model.weights.iter().max_by(|a, b| a.1.abs().total_cmp(&b.1.abs())).map(|(&j, _)| j);
    let want = correlated_ghr_index(8, 1);
    let ok = model.accuracy >= RECOVERY_MIN_ACCURACY
        && model.nnz() <= RECOVERY_MAX_NNZ
        && dominant == Some(want)
        && elapsed < RECOVERY_TIME_LIMIT;
    (
        ok,
        format!(
            "accuracy {:.5}, nnz {}, dominant index {dominant:?} (expected {want}), {:.1}s",
            model.accuracy,
            model.nnz(),
            elapsed.as_secs_f64()
        ),
    )
}

fn noise_blowup() -> Outcome {
    let history = HistoryConfig::new(64, 8);
    let mut entries = Vec::new();
    let mut detail = Vec::new();
    let mut coupled_ok = true;
    for m in BLOWUP_NOISE {
        let len = BLOWUP_BLOCKS * (m as usize + 2);
        let t = gen_correlated(&SyntheticScenario::correlated(m, 1, len, SEED)).unwrap();
        let (_, b) = correlated_pcs(m);
        let mut cfg = SimConfig::baseline_only(tage_small(), history);
        cfg.snapshot_interval = 10_000;
        let base = run(&t, &cfg).unwrap();
        let bs = &base.per_branch[&b];

        let model = lambda_search(&collect_dataset(&t, history, b), &SolverConfig::default()).unwrap();
        let coding = WeightCoding::Fixed(QuantSpec::Q3_4);
        let hint = SparsityHint::from_model(&model, coding);
        let hs = HintSet {
            phase_id: t.phase_id.clone(),
            config: SlbiuConfig { lh: history.lh, gh: history.gh, n: 1, nnz: hint.nnz().max(1), q: 8, p: 64 },
            hints: vec![hint.clone()],
        };
        let coupled = run(&t, &cfg.clone().with_hints(hs)).unwrap();
        let cb = coupled.per_branch[&b].mispredictions;
        let share = cb as f64 / bs.mispredictions.max(1) as f64;
        coupled_ok &= hint.nnz() == 1 && share <= BLOWUP_MAX_COUPLED_SHARE;
        entries.push(bs.unique_entries_avg);
        detail.push(format!(
            "M={m}: entries {:.1}, baseline misses {}, coupled misses {cb} (hint nnz {})",
            bs.unique_entries_avg,
            bs.mispredictions,
            hint.nnz()
        ));
    }
    let monotone = entries.windows(2).all(|w| w[1] > w[0]);
    (
        monotone && coupled_ok,
        format!("monotone entries {monotone}, coupled within 1% {coupled_ok}; {}", detail.join("; ")),
    )
}

fn full_hint_set(n: usize, nnz: usize, q: u32) -> HintSet {
    let hints = (0..n)
        .map(|i| SparsityHint {
            pc: 0x1000 + 4 * i as u64,
            intercept: 0.5,
            entries: (0..nnz).map(|j| HintEntry { index: j * 7, weight: 1.0 }).collect(),
        })
        .collect();
    HintSet { phase_id: "storage".into(), config: SlbiuConfig { lh: 512, gh: 512, n, nnz, q, p: 64 }, hints }
}

fn storage_exactness() -> Outcome {
    let mut ok = true;
    let mut detail = Vec::new();
    for (n, nnz, q, want) in [(13, 36, 8, 16_016u64), (2, 34, 32, 4_072)] {
        let hs = full_hint_set(n, nnz, q);
        let bits = hs.payload_bits().unwrap();
        let header = 4 + 2 + 2 + hs.phase_id.len() + 12;
        let bytes = hs.to_bytes().unwrap().len();
        ok &= bits == want && hs.config.storage_bits() == want && bytes == header + want.div_ceil(8) as usize;
        detail.push(format!("N={n} nnz={nnz} q={q}: {bits} bits (expected {want}), file {bytes} bytes"));
    }
    (ok, detail.join("; "))
}

fn quantization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut violations = 0;
    for spec in [QuantSpec::Q3_4, QuantSpec::Q3_12] {
        let bound = 0.5f64.powi(spec.fraction_bits as i32 + 1);
        for _ in 0..QUANT_SAMPLES {
            let v = rng.gen_range(spec.min_value()..=spec.max_value());
            if (spec.quantize_value(v) - v).abs() > bound {
                violations += 1;
            }
        }
    }
    let corpus = synthetic_corpus(CORPUS_RECORDS, SEED);
    let mean_coupled = |quant: Option<QuantSpec>| {
        let mut cfg = PipelineConfig::new(CORPUS_BUDGET_BITS, SelectionPolicy::Relative, quant);
        cfg.screen.min_occurrences = CORPUS_MIN_OCCURRENCES;
        let results = run_pipeline(&corpus, &cfg).unwrap();
        results.iter().map(|r| r.coupled.mpki).sum::<f64>() / results.len() as f64
    };
    let q34 = mean_coupled(Some(QuantSpec::Q3_4));
    let fp = mean_coupled(None);
    (
        violations == 0 && q34 <= fp + QUANT_MPKI_SLACK,
        format!("{violations} bound violations; mean coupled MPKI Q3.4 {q34:.4} vs fp32 {fp:.4}"),
    )
}

fn deduplication() -> Outcome {
    let t = gen_loop(&SyntheticScenario::looping(5, 20_000, SEED)).unwrap();
    let pc = t.records()[0].pc;
    let d = collect_dataset(&t, HistoryConfig::new(16, 16), pc);
    let cfg = SolverConfig::default();
    let lasso = lambda_search(&d, &cfg).unwrap();
    let out = dedup_detailed(&d, &lasso, &cfg).unwrap();
    let groups = sbp_core::hints::column_groups(&d);
    let largest = groups.iter().map(Vec::len).max().unwrap_or(0);
    let per_group_ok = groups.iter().all(|g| g.iter().filter(|j| out.model.weights.contains_key(j)).count() <= 1);
    let same = d.samples().all(|(x, _)| out.model.predict(x) == out.elastic.predict(x));
    (
        out.accepted && largest > 1 && per_group_ok && same,
        format!(
            "{} groups (largest {largest}), lasso nnz {}, elastic nnz {}, deduped nnz {}, accepted {}, identical predictions {same}",
            groups.len(),
            lasso.nnz(),
            out.elastic.nnz(),
            out.model.nnz(),
            out.accepted
        ),
    )
}

fn random_pool(rng: &mut impl Rng) -> Vec<ScoredCandidate> {
    let size = rng.gen_range(0..=20);
    (0..size)
        .map(|i| {
            let nnz = rng.gen_range(1..=40);
            let mut model = SparseModel::zero(0x4000 + 4 * i as u64, 1024);
            model.weights = (0..nnz).map(|j| (j, 0.25)).collect();
            model.accuracy = rng.gen_range(0.9..=1.0);
            let primary = rng.gen_range(0..1000);
            let offline = if rng.gen_bool(0.2) { primary } else { rng.gen_range(0..1000) };
            ScoredCandidate { model, offline_correct: offline, primary_correct: primary }
        })
        .collect()
}

fn selection_soundness() -> Outcome {
    let mut failures = Vec::new();
    for seed in 0..SELECTION_POOLS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pool = random_pool(&mut rng);
        let q = [8u32, 16, 32][rng.gen_range(0..3)];
        let gh = [64usize, 512][rng.gen_range(0..2)];
        let budget = rng.gen_range(1_000..=70_000);
        let params = SelectionParams { p: 64, q, lh: gh, gh };
        let sel = select(&pool, SelectionPolicy::Relative, budget, params, "pool").unwrap();
        let by_pc: BTreeMap<u64, &ScoredCandidate> = pool.iter().map(|c| (c.model.pc, c)).collect();
        let unsound = sel.hints.hints.iter().any(|h| {
            let c = by_pc[&h.pc];
            c.offline_correct <= c.primary_correct
        });
        let per_hint = |nnz| SlbiuConfig { lh: gh, gh, n: 1, nnz, q, p: 64 }.hint_bits();
        let oracle = common::select_oracle(&pool, SelectionPolicy::Relative, budget, per_hint);
        if unsound || sel.hints.config.storage_bits() > budget || (sel.n, sel.nnz, sel.score_sum) != oracle {
            failures.push(seed);
        }
    }
    let empty =
        select(&[], SelectionPolicy::Relative, 4096, SelectionParams { p: 64, q: 8, lh: 64, gh: 64 }, "e").unwrap();
    let empty_ok = (empty.n, empty.nnz) == (0, 0) && empty.hints.hints.is_empty();
    (
        failures.is_empty() && empty_ok,
        format!(
            "{} pools, {} mismatches {:?}, empty pool gives (0,0): {empty_ok}",
            SELECTION_POOLS,
            failures.len(),
            failures
        ),
    )
}

fn coupling_identity() -> Outcome {
    let history = HistoryConfig::new(64, 16);
    let mut mismatched = Vec::new();
    let corpus = synthetic_corpus(CORPUS_RECORDS, SEED);
    for t in &corpus {
        for baseline in [BaselineKind::default(), BaselineKind::Gshare(Default::default())] {
            let cfg = SimConfig::baseline_only(baseline, history);
            let base = run(t, &cfg).unwrap().to_json().unwrap();
            let empty = HintSet::empty(t.phase_id.clone(), SlbiuConfig::empty(16, 64, 8, 64));
            let coupled = run(t, &cfg.with_hints(empty)).unwrap().to_json().unwrap();
            if base != coupled {
                mismatched.push(t.phase_id.clone());
            }
        }
    }
    (mismatched.is_empty(), format!("{} traces x 2 baselines, mismatches {mismatched:?}", corpus.len()))
}

fn sign_rule() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut mismatches = 0;
    for i in 0..SIGN_CASES {
        if !common::sign_rule_agrees(&mut rng, [8, 16, 32][i % 3]) {
            mismatches += 1;
        }
    }
    (mismatches == 0, format!("{SIGN_CASES} cases, {mismatches} mismatches"))
}

fn online_learning() -> Outcome {
    let history = HistoryConfig::new(64, 64);
    let t = gen_correlated(&SyntheticScenario::correlated(8, 1, ONLINE_RECORDS, SEED)).unwrap();
    let pcs: Vec<u64> = t.static_branches().into_keys().collect();
    let offline: BTreeMap<u64, u64> = pcs
        .par_iter()
        .map(|&pc| {
            let d = collect_dataset(&t, history, pc);
            let model = lambda_search(&d, &SolverConfig::default()).unwrap();
            (pc, (d.m() - correct_count(&model, &d)) as u64)
        })
        .collect();
    let report = run_online(&t, history, &OnlineTargets::All, &OnlineConfig::default());
    let offline_total: u64 = offline.values().sum();
    let ratio = report.mispredictions as f64 / offline_total.max(1) as f64;
    let nnz_avg = report.per_branch.values().map(|b| b.nnz_avg).fold(0.0, f64::max);
    let nnz_max = report.per_branch.values().map(|b| b.nnz_max).max().unwrap_or(0);
    let (_, b) = correlated_pcs(8);
    (
        ratio <= ONLINE_MAX_RATIO && nnz_avg <= ONLINE_MAX_NNZ_AVG,
        format!(
            "online {} vs offline {offline_total} mispredictions (ratio {ratio:.3}); max nnz_avg {nnz_avg:.1}, nnz_max {nnz_max}; branch B online {} offline {}",
            report.mispredictions, report.per_branch[&b].mispredictions, offline[&b]
        ),
    )
}

fn solver_correctness() -> Outcome {
    let cfg = SolverConfig::default();
    let mut worst_gap = 0.0f64;
    let mut worst_kkt = 0.0f64;
    for seed in 0..SOLVER_INSTANCES {
        let inst = common::random_instance(seed);
        let model = fit(&inst.dataset, inst.lambda, inst.alpha, &cfg).unwrap();
        let mut theta = vec![0.0; inst.dataset.dim() + 1];
        theta[0] = model.bias;
        for (&j, &w) in &model.weights {
            theta[j + 1] = w;
        }
        let reference = common::fista(&inst, FISTA_ITERATIONS);
        let gap = (common::objective(&inst, &theta) - common::objective(&inst, &reference)).abs();
        worst_gap = worst_gap.max(gap);
        worst_kkt = worst_kkt.max(common::kkt_violation(&inst, model.bias, &model.weights));
    }
    let kkt_limit = SOLVER_KKT_FACTOR * cfg.tolerance;
    (
        worst_gap <= SOLVER_MAX_GAP && worst_kkt <= kkt_limit,
        format!("{SOLVER_INSTANCES} instances, worst objective gap {worst_gap:.2e}, worst KKT residual {worst_kkt:.2e} (limit {kkt_limit:.0e})"),
    )
}

const CLI_SCRIPT: &[&[&str]] = &[
    &["gen", "--kind", "correlated", "--m", "2", "--len", "24000", "-o", "corr.sbpt"],
    &["gen", "--kind", "loop", "--s", "5", "--len", "8000", "-o", "loop.sbpt"],
    &[
        "gen",
        "--kind",
        "utilization",
        "--bf",
        "0.25",
        "--or",
        "0.25",
        "--len",
        "20000",
        "-o",
        "util.sbpt",
        "--offload-list",
        "offload.txt",
    ],
    &["gen", "--kind", "corpus", "--len", "12000", "-o", "corpus"],
    &["train", "--trace", "corr.sbpt", "--min-occurrences", "1000", "-o", "models.txt"],
    &["select", "--trace", "corr.sbpt", "--models", "models.txt", "--budget-kb", "0.5", "-o", "hints.sbph"],
    &["simulate", "--trace", "corr.sbpt", "-o", "base.json"],
    &["simulate", "--trace", "corr.sbpt", "--hints", "hints.sbph", "-o", "coupled.json"],
    &["pipeline", "--traces", "corpus", "--budget-kb", "1", "--min-occurrences", "1000", "-o", "out"],
    &["online", "--trace", "corr.sbpt", "-o", "online.json"],
    &[
        "report",
        "--scurve",
        "out/summary.json",
        "base.json",
        "coupled.json",
        "--csv",
        "scurve.csv",
        "-o",
        "scurve.json",
    ],
];

fn hash_tree(root: &Path, dir: &Path, hasher: &mut Sha256) {
    let mut entries: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            hash_tree(root, &p, hasher);
        } else {
            hasher.update(p.strip_prefix(root).unwrap().to_string_lossy().as_bytes());
            hasher.update(std::fs::read(&p).unwrap());
        }
    }
}

fn cli_determinism() -> Outcome {
    let exe = env!("CARGO_BIN_EXE_sbp");
    let mut digests = BTreeSet::new();
    let mut failures = Vec::new();
    for _ in 0..CLI_RUNS {
        let dir = tempfile::tempdir().unwrap();
        let mut hasher = Sha256::new();
        for args in CLI_SCRIPT {
            let out = Command::new(exe).args(*args).current_dir(dir.path()).output().unwrap();
            if !out.status.success() {
                failures.push(format!("{} exited {:?}", args[0], out.status.code()));
            }
            hasher.update(&out.stdout);
        }
        hash_tree(dir.path(), dir.path(), &mut hasher);
        digests.insert(format!("{:x}", hasher.finalize()));
    }
    failures.dedup();
    (
        failures.is_empty() && digests.len() == 1,
        format!(
            "{} commands x {CLI_RUNS} runs, {} distinct digests, failures {failures:?}",
            CLI_SCRIPT.len(),
            digests.len()
        ),
    )
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("sparse recovery", sparse_recovery),
        ("noise blowup", noise_blowup),
        ("storage exactness", storage_exactness),
        ("quantization", quantization),
        ("deduplication", deduplication),
        ("selection soundness", selection_soundness),
        ("coupling identity", coupling_identity),
        ("sign rule", sign_rule),
        ("online learning", online_learning),
        ("solver correctness", solver_correctness),
        ("cli determinism", cli_determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (ok, detail) = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            (false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        failed += !ok as usize;
        let verdict = if ok { "PASS" } else { "FAIL" };
        println!("criterion {}: {verdict} {name} ({:.1}s): {detail}", i + 1, start.elapsed().as_secs_f64());
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

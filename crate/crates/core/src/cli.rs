//! The `sbp` command-line tool.
//!
//! Exit codes: 0 success, 1 runtime error, 2 usage or configuration error.
//! Diagnostics go to standard error; reports go to files or standard output.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::{Deserialize, Serialize};

use crate::hints::{encode_hintset, select, QuantSpec, SelectionParams, SelectionPolicy, WeightCoding};
use crate::history::HistoryConfig;
use crate::online_sgd::{run_online, OnlineConfig, OnlineTargets};
use crate::predictors::{BaselineKind, GshareConfig, TageLiteConfig};
use crate::simulator::{
    read_report, report_scurve, run, run_pipeline, score_models, screened_branches, train_models, HintSource,
    PipelineConfig, SimConfig, SimError, SimReport,
};
use crate::sparse_modeling::{dump_models, parse_models, BranchScreen, SolverConfig};
use crate::trace_io::{
    gen_utilization, generate, read_trace, synthetic_corpus, write_trace, ScenarioKind, SyntheticScenario, Trace,
};

const FILE_FORMATS: &str = "\
File formats:
  .sbpt  trace: \"SBPT\", u16 version, u16 reserved, u64 instruction count, then per
         record u64 pc, u8 flags (bit 0 = taken), u8 gap (255 = u32 gap follows).
  .sbph  hints: \"SBPH\", u16 version, u16-prefixed phase id, u16 lh gh N nnz q p,
         then N bit-packed hints (pc, intercept, nnz x (index, weight), lh zero bits).
  models text: \"0x<pc> bias lambda accuracy samples\" headers, then \"index weight\" lines.
  reports: JSON (see README) plus a text summary on standard output.";

#[derive(Debug, Parser)]
#[command(name = "sbp", version, about = "Sparse linear branch prediction toolkit", after_help = FILE_FORMATS)]
pub struct Cli {
    /// Seed for synthetic generation.
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,
    /// Worker threads for training (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// More log output on standard error (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic trace (or a corpus directory).
    #[command(after_help = FILE_FORMATS)]
    Gen(GenArgs),
    /// Fit sparse models for the branches of a trace.
    #[command(after_help = FILE_FORMATS)]
    Train(TrainArgs),
    /// Select hints for a storage budget and write a hint file.
    #[command(after_help = FILE_FORMATS)]
    Select(SelectArgs),
    /// Simulate a trace with a baseline predictor and optional hints.
    #[command(after_help = FILE_FORMATS)]
    Simulate(SimulateArgs),
    /// Train, select and simulate every trace in a directory.
    #[command(after_help = FILE_FORMATS)]
    Pipeline(PipelineArgs),
    /// Replay a trace with online SGD-L1 models.
    #[command(after_help = FILE_FORMATS)]
    Online(OnlineArgs),
    /// Summarize reports as an S-curve.
    #[command(after_help = FILE_FORMATS)]
    Report(ReportArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum GenKind {
    Correlated,
    Loop,
    Utilization,
    /// The mixed synthetic corpus; `-o` names a directory.
    Corpus,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, value_enum)]
    pub kind: GenKind,
    /// Noise branches between A and B (correlated).
    #[arg(long, default_value_t = 8)]
    pub m: u32,
    /// Correlation distance in blocks (correlated).
    #[arg(long, default_value_t = 1)]
    pub k: u32,
    /// Loop period (loop).
    #[arg(long, default_value_t = 5)]
    pub s: u32,
    /// Loop phase offset (loop).
    #[arg(long, default_value_t = 0)]
    pub offset: u32,
    /// Branches per instruction.
    #[arg(long, default_value_t = 0.2)]
    pub bf: f64,
    /// Offloaded share of static branches (utilization).
    #[arg(long = "or", default_value_t = 0.0)]
    pub offload_ratio: f64,
    /// Static branch count (utilization).
    #[arg(long, default_value_t = 16)]
    pub statics: u32,
    /// Records (correlated, loop, corpus) or instructions (utilization).
    #[arg(long)]
    pub len: usize,
    /// Output trace file, or directory for a corpus.
    #[arg(short, long)]
    pub output: PathBuf,
    /// Also write the offload list (utilization), one hex pc per line.
    #[arg(long)]
    pub offload_list: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BaselineName {
    Gshare,
    TageLite,
}

#[derive(Debug, Args, Clone)]
pub struct BaselineArgs {
    #[arg(long, value_enum, default_value = "tage-lite")]
    pub baseline: BaselineName,
    /// log2 of gshare counters.
    #[arg(long, default_value_t = 14)]
    pub gshare_log: u32,
    /// Tagged tables in TAGE-lite.
    #[arg(long, default_value_t = 4)]
    pub tage_tables: usize,
    /// log2 of entries per TAGE-lite table.
    #[arg(long, default_value_t = 10)]
    pub tage_log_entries: u32,
    /// Longest TAGE-lite history.
    #[arg(long, default_value_t = 64)]
    pub tage_max_history: usize,
}

impl BaselineArgs {
    fn kind(&self) -> BaselineKind {
        match self.baseline {
            BaselineName::Gshare => {
                BaselineKind::Gshare(GshareConfig { log_size: self.gshare_log, history_bits: self.gshare_log as usize })
            }
            BaselineName::TageLite => BaselineKind::TageLite(TageLiteConfig {
                tables: self.tage_tables,
                log_entries: self.tage_log_entries,
                max_history: self.tage_max_history,
                ..Default::default()
            }),
        }
    }
}

#[derive(Debug, Args, Clone, Copy)]
pub struct HistoryArgs {
    /// Global history bits.
    #[arg(long, default_value_t = 64)]
    pub gh: usize,
    /// Local history bits.
    #[arg(long, default_value_t = 16)]
    pub lh: usize,
}

impl HistoryArgs {
    fn config(&self) -> Result<HistoryConfig, CliError> {
        if self.gh + self.lh == 0 {
            return Err(CliError::Usage("gh + lh must be positive".into()));
        }
        Ok(HistoryConfig::new(self.gh, self.lh))
    }
}

#[derive(Debug, Args, Clone, Copy)]
pub struct ScreenArgs {
    /// Minimum post-warmup occurrences for a branch to be modeled.
    #[arg(long, default_value_t = 10_000)]
    pub min_occurrences: usize,
    /// Accuracy at which the λ search stops shrinking.
    #[arg(long, default_value_t = 0.99)]
    pub accuracy_stop: f64,
}

impl ScreenArgs {
    fn screen(&self) -> BranchScreen {
        BranchScreen { min_occurrences: self.min_occurrences, ..Default::default() }
    }

    fn solver(&self) -> Result<SolverConfig<f64>, CliError> {
        let cfg = SolverConfig { accuracy_stop: self.accuracy_stop, ..Default::default() };
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub trace: PathBuf,
    #[command(flatten)]
    pub history: HistoryArgs,
    #[command(flatten)]
    pub screen: ScreenArgs,
    /// `screened`, `all`, or comma-separated hex pcs.
    #[arg(long, default_value = "screened")]
    pub targets: String,
    /// Output models text file.
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[arg(long)]
    pub trace: PathBuf,
    /// Models text file written by `train`.
    #[arg(long)]
    pub models: PathBuf,
    #[arg(long, default_value = "relative")]
    pub policy: SelectionPolicy,
    /// Storage budget in KiB.
    #[arg(long)]
    pub budget_kb: f64,
    /// Weight format: 3.4, 3.12, 8, 16, or 32/fp32 for full precision.
    #[arg(long, default_value = "3.4")]
    pub q: String,
    /// Stored PC width in bits.
    #[arg(long, default_value_t = 64)]
    pub p: u32,
    #[command(flatten)]
    pub history: HistoryArgs,
    #[command(flatten)]
    pub baseline: BaselineArgs,
    /// Output hint file.
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub trace: PathBuf,
    /// Hint file to load before the first record.
    #[arg(long)]
    pub hints: Option<PathBuf>,
    #[command(flatten)]
    pub history: HistoryArgs,
    #[command(flatten)]
    pub baseline: BaselineArgs,
    /// Branches between occupancy snapshots.
    #[arg(long, default_value_t = 100_000)]
    pub snapshot_interval: u64,
    /// JSON report output.
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    /// Directory of `.sbpt` traces; each trace is one phase.
    #[arg(long)]
    pub traces: PathBuf,
    #[arg(long)]
    pub budget_kb: f64,
    #[arg(long, default_value = "relative")]
    pub policy: SelectionPolicy,
    /// Weight format: 3.4, 3.12, 8, 16, or 32/fp32 for full precision.
    #[arg(long, default_value = "3.4")]
    pub q: String,
    #[arg(long, default_value_t = 64)]
    pub p: u32,
    #[command(flatten)]
    pub history: HistoryArgs,
    #[command(flatten)]
    pub screen: ScreenArgs,
    #[command(flatten)]
    pub baseline: BaselineArgs,
    #[arg(long, default_value_t = 100_000)]
    pub snapshot_interval: u64,
    /// Output directory for hint files and reports.
    #[arg(short, long, default_value = "sbp-out")]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct OnlineArgs {
    #[arg(long)]
    pub trace: PathBuf,
    #[command(flatten)]
    pub history: HistoryArgs,
    /// `all`, `screened`, or comma-separated hex pcs.
    #[arg(long, default_value = "all")]
    pub targets: String,
    #[arg(long, default_value_t = 10_000)]
    pub min_occurrences: usize,
    /// SGD step size.
    #[arg(long, default_value_t = 0.05)]
    pub eta: f64,
    /// Non-zero weight cap per model.
    #[arg(long, default_value_t = 50)]
    pub nnz_cap: usize,
    /// JSON report output.
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Simulation reports or pipeline summaries (JSON).
    #[arg(long, num_args = 1.., required = true)]
    pub scurve: Vec<PathBuf>,
    /// CSV output; standard output when absent.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// JSON output with rows and buckets.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 2,
            Self::Runtime(_) => 1,
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        if e.is_config() {
            Self::Usage(e.to_string())
        } else {
            Self::Runtime(e.to_string())
        }
    }
}

macro_rules! runtime_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                SimError::from(e).into()
            }
        }
    )*};
}
runtime_from!(
    crate::trace_io::TraceError,
    crate::hints::HintError,
    crate::sparse_modeling::ModelError,
    std::io::Error,
    serde_json::Error
);

/// One row of a pipeline summary, also accepted by `report`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub name: String,
    pub baseline_mpki: f64,
    pub coupled_mpki: f64,
    pub hints: usize,
    pub n: usize,
    pub nnz: usize,
    pub score_sum: i64,
}

/// Parses `--q`: `None` is full precision.
pub fn parse_q(text: &str) -> Result<Option<QuantSpec>, CliError> {
    match text.trim().to_ascii_lowercase().as_str() {
        "32" | "fp32" | "f32" | "full" => Ok(None),
        other => match QuantSpec::parse(other) {
            Some(spec) => {
                WeightCoding::from_quant(Some(spec)).map_err(|e| CliError::Usage(e.to_string()))?;
                Ok(Some(spec))
            }
            None => Err(CliError::Usage(format!("unknown weight format {text:?}"))),
        },
    }
}

fn budget_bits(kb: f64) -> Result<u64, CliError> {
    if !(kb.is_finite() && kb > 0.0) {
        return Err(CliError::Usage("budget must be a positive number of KiB".into()));
    }
    Ok((kb * 1024.0 * 8.0).round() as u64)
}

fn parse_pc_list(text: &str) -> Result<BTreeSet<u64>, CliError> {
    text.split(',')
        .map(|s| {
            let s = s.trim().trim_start_matches("0x");
            u64::from_str_radix(s, 16).map_err(|_| CliError::Usage(format!("bad pc {s:?}")))
        })
        .collect()
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, contents)?;
    Ok(())
}

fn read_traces(dir: &Path) -> Result<Vec<Trace>, CliError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "sbpt"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Usage(format!("no .sbpt traces in {}", dir.display())));
    }
    paths.iter().map(|p| read_trace(p).map_err(CliError::from)).collect()
}

fn cmd_gen(a: &GenArgs, seed: u64) -> Result<(), CliError> {
    if a.kind == GenKind::Corpus {
        fs::create_dir_all(&a.output)?;
        for t in synthetic_corpus(a.len, seed) {
            write_trace(&t, a.output.join(format!("{}.sbpt", t.phase_id)))?;
        }
        return Ok(());
    }
    let scenario = SyntheticScenario {
        kind: match a.kind {
            GenKind::Correlated => ScenarioKind::Correlated,
            GenKind::Loop => ScenarioKind::Loop,
            _ => ScenarioKind::Utilization,
        },
        correlation_distance: a.k,
        noise_branches: a.m,
        loop_period: a.s,
        loop_offset: a.offset,
        branch_frequency: a.bf,
        offload_ratio: a.offload_ratio,
        static_branches: a.statics,
        length: a.len,
        seed,
    };
    let trace = if scenario.kind == ScenarioKind::Utilization {
        let (trace, list) = gen_utilization(&scenario)?;
        if let Some(p) = &a.offload_list {
            let text: String = list.iter().map(|pc| format!("{pc:#x}\n")).collect();
            write_file(p, text)?;
        }
        trace
    } else {
        generate(&scenario)?
    };
    write_file(&a.output, trace.to_bytes())
}

fn cmd_train(a: &TrainArgs) -> Result<(), CliError> {
    let trace = read_trace(&a.trace)?;
    let mut cfg = PipelineConfig::new(1, SelectionPolicy::Relative, None);
    cfg.history = a.history.config()?;
    cfg.solver = a.screen.solver()?;
    let targets = match a.targets.as_str() {
        "screened" => screened_branches(&trace, cfg.history, &a.screen.screen()),
        "all" => trace.static_branches().into_keys().collect(),
        list => parse_pc_list(list)?,
    };
    let models = train_models(&trace, &cfg, &targets)?;
    info!("trained {} models", models.len());
    write_file(&a.output, dump_models(&models))
}

fn cmd_select(a: &SelectArgs) -> Result<(), CliError> {
    let trace = read_trace(&a.trace)?;
    let quant = parse_q(&a.q)?;
    let mut cfg = PipelineConfig::new(budget_bits(a.budget_kb)?, a.policy, quant);
    cfg.history = a.history.config()?;
    cfg.baseline = a.baseline.kind();
    cfg.pc_bits = a.p;
    let models = parse_models(&fs::read_to_string(&a.models)?, cfg.history.len())?;
    let candidates = score_models(&trace, &cfg, &models)?;
    let coding = WeightCoding::from_quant(quant)?;
    let params = SelectionParams { p: a.p, q: coding.width(), lh: cfg.history.lh, gh: cfg.history.gh };
    let sel = select(&candidates, a.policy, cfg.budget_bits, params, &trace.phase_id)?;
    println!(
        "selected {} hints N {} nnz {} score {} storage_bits {}",
        sel.hints.hints.len(),
        sel.n,
        sel.nnz,
        sel.score_sum,
        sel.hints.config.storage_bits()
    );
    if let Some(dir) = a.output.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    encode_hintset(&sel.hints, &a.output)?;
    Ok(())
}

fn cmd_simulate(a: &SimulateArgs) -> Result<(), CliError> {
    let trace = read_trace(&a.trace)?;
    let mut cfg = SimConfig::baseline_only(a.baseline.kind(), a.history.config()?);
    cfg.snapshot_interval = a.snapshot_interval;
    if let Some(h) = &a.hints {
        cfg.hints = HintSource::File(h.clone());
    }
    let report = run(&trace, &cfg)?;
    print!("{}", report.to_text());
    write_file(&a.output, report.to_json()?)
}

fn cmd_pipeline(a: &PipelineArgs) -> Result<(), CliError> {
    let traces = read_traces(&a.traces)?;
    let mut cfg = PipelineConfig::new(budget_bits(a.budget_kb)?, a.policy, parse_q(&a.q)?);
    cfg.history = a.history.config()?;
    cfg.baseline = a.baseline.kind();
    cfg.solver = a.screen.solver()?;
    cfg.screen = a.screen.screen();
    cfg.pc_bits = a.p;
    cfg.snapshot_interval = a.snapshot_interval;
    cfg.hint_dir = Some(a.output.clone());
    let results = run_pipeline(&traces, &cfg)?;
    let mut rows = Vec::new();
    for r in &results {
        write_file(&a.output.join(format!("{}.baseline.json", r.phase_id)), r.baseline.to_json()?)?;
        write_file(&a.output.join(format!("{}.coupled.json", r.phase_id)), r.coupled.to_json()?)?;
        println!(
            "{} baseline_mpki {:.4} coupled_mpki {:.4} hints {} N {} nnz {}",
            r.phase_id,
            r.baseline.mpki,
            r.coupled.mpki,
            r.hints.hints.len(),
            r.hints.config.n,
            r.hints.config.nnz
        );
        rows.push(SummaryRow {
            name: r.phase_id.clone(),
            baseline_mpki: r.baseline.mpki,
            coupled_mpki: r.coupled.mpki,
            hints: r.hints.hints.len(),
            n: r.hints.config.n,
            nnz: r.hints.config.nnz,
            score_sum: r.score_sum,
        });
    }
    write_file(&a.output.join("summary.json"), serde_json::to_string_pretty(&rows)? + "\n")?;
    let entries: Vec<(String, f64, f64)> =
        rows.iter().map(|r| (r.name.clone(), r.baseline_mpki, r.coupled_mpki)).collect();
    write_file(&a.output.join("scurve.csv"), report_scurve(&entries).to_csv())
}

fn cmd_online(a: &OnlineArgs) -> Result<(), CliError> {
    let trace = read_trace(&a.trace)?;
    let history = a.history.config()?;
    let targets = match a.targets.as_str() {
        "all" => OnlineTargets::All,
        "screened" => {
            OnlineTargets::Screened(BranchScreen { min_occurrences: a.min_occurrences, ..Default::default() })
        }
        list => OnlineTargets::List(parse_pc_list(list)?),
    };
    let cfg = OnlineConfig::<f64> { step_size: a.eta, nnz_cap: a.nnz_cap, ..Default::default() };
    cfg.validate().map_err(CliError::Usage)?;
    let report = run_online(&trace, history, &targets, &cfg);
    println!("{} online mispredictions {}", report.phase_id, report.mispredictions);
    for (pc, b) in &report.per_branch {
        println!(
            "{pc:#x} occurrences {} mispredictions {} nnz_avg {:.2} lambda {:e}",
            b.occurrences, b.mispredictions, b.nnz_avg, b.final_lambda
        );
    }
    write_file(&a.output, serde_json::to_string_pretty(&report)? + "\n")
}

fn cmd_report(a: &ReportArgs) -> Result<(), CliError> {
    let mut rows: BTreeMap<String, (f64, f64)> = BTreeMap::new();
    let mut sims: BTreeMap<String, Vec<SimReport>> = BTreeMap::new();
    for path in &a.scurve {
        let text = fs::read_to_string(path)?;
        if let Ok(summary) = serde_json::from_str::<Vec<SummaryRow>>(&text) {
            for r in summary {
                rows.insert(r.name, (r.baseline_mpki, r.coupled_mpki));
            }
        } else {
            let r = read_report(path)?;
            sims.entry(r.phase_id.clone()).or_default().push(r);
        }
    }
    for (name, mut reports) in sims {
        reports.sort_by_key(|r| r.offloaded_count);
        let base = reports.first().expect("non-empty group").mpki;
        let coupled = reports.last().expect("non-empty group").mpki;
        rows.insert(name, (base, coupled));
    }
    let entries: Vec<(String, f64, f64)> = rows.into_iter().map(|(n, (b, c))| (n, b, c)).collect();
    let curve = report_scurve(&entries);
    match &a.csv {
        Some(p) => write_file(p, curve.to_csv())?,
        None => print!("{}", curve.to_csv()),
    }
    eprint!("{}", curve.to_text());
    if let Some(p) = &a.output {
        write_file(p, serde_json::to_string_pretty(&curve)? + "\n")?;
    }
    Ok(())
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        // A second call in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
    match &cli.command {
        Command::Gen(a) => cmd_gen(a, cli.seed),
        Command::Train(a) => cmd_train(a),
        Command::Select(a) => cmd_select(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Pipeline(a) => cmd_pipeline(a),
        Command::Online(a) => cmd_online(a),
        Command::Report(a) => cmd_report(a),
    }
}

/// Parses `args` (program name first) and runs the command; returns the exit code.
pub fn dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).format_timestamp(None).try_init();
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("sbp: {e}");
            e.exit_code()
        }
    }
}

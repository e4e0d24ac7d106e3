//! Portable branch traces: the binary `.sbpt` format and synthetic generators.
//!
//! File layout (little-endian):
//!
//! ```text
//! header  "SBPT" | version: u16 = 1 | reserved: u16 = 0 | total_instructions: u64
//! record  pc: u64 | flags: u8 (bit0 = taken) | gap: u8   [| gap: u32 when the u8 is 255]
//! ```
//!
//! `total_instructions` is the sum of all instruction gaps plus the record
//! count, and is re-derived and checked on read.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub const TRACE_MAGIC: &[u8; 4] = b"SBPT";
pub const TRACE_VERSION: u16 = 1;
pub const TRACE_HEADER_LEN: usize = 16;
const GAP_ESCAPE: u8 = 255;

/// First static branch address used by the generators.
pub const SYNTH_BASE_PC: u64 = 0x40_0000;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a trace file: {0}")]
    Format(String),
    #[error("trace truncated at byte offset {offset}")]
    Truncated { offset: usize },
    #[error("header declares {header} instructions but records sum to {computed}")]
    TotalMismatch { header: u64, computed: u64 },
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
}

/// One dynamic conditional branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TraceRecord {
    pub pc: u64,
    pub taken: bool,
    /// Non-branch instructions retired since the previous record.
    pub inst_gap: u32,
}

impl TraceRecord {
    pub fn new(pc: u64, taken: bool, inst_gap: u32) -> Self {
        Self { pc, taken, inst_gap }
    }
}

/// An ordered branch trace for one program phase.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Trace {
    pub phase_id: String,
    records: Vec<TraceRecord>,
    total_instructions: u64,
}

impl Trace {
    pub fn new(phase_id: impl Into<String>, records: Vec<TraceRecord>) -> Self {
        let total_instructions = count_instructions(&records);
        Self { phase_id: phase_id.into(), records, total_instructions }
    }

    pub fn push(&mut self, record: TraceRecord) {
        self.total_instructions += record.inst_gap as u64 + 1;
        self.records.push(record);
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn total_instructions(&self) -> u64 {
        self.total_instructions
    }

    /// Dynamic occurrence count of every static branch, ordered by pc.
    pub fn static_branches(&self) -> BTreeMap<u64, u64> {
        let mut counts = BTreeMap::new();
        for r in &self.records {
            *counts.entry(r.pc).or_insert(0) += 1;
        }
        counts
    }

    /// Encodes the trace in the `.sbpt` format.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(TRACE_HEADER_LEN + self.records.len() * 10);
        out.extend_from_slice(TRACE_MAGIC);
        out.extend_from_slice(&TRACE_VERSION.to_le_bytes());
        out.extend_from_slice(&0u16.to_le_bytes());
        out.extend_from_slice(&self.total_instructions.to_le_bytes());
        for r in &self.records {
            out.extend_from_slice(&r.pc.to_le_bytes());
            out.push(r.taken as u8);
            if r.inst_gap < GAP_ESCAPE as u32 {
                out.push(r.inst_gap as u8);
            } else {
                out.push(GAP_ESCAPE);
                out.extend_from_slice(&r.inst_gap.to_le_bytes());
            }
        }
        out
    }

    /// Decodes a `.sbpt` byte image.
    pub fn from_bytes(bytes: &[u8], phase_id: impl Into<String>) -> Result<Self, TraceError> {
        if bytes.len() < TRACE_HEADER_LEN {
            if bytes.len() >= 4 && &bytes[..4] != TRACE_MAGIC {
                return Err(TraceError::Format("bad magic".into()));
            }
            return Err(TraceError::Format(format!("header needs {TRACE_HEADER_LEN} bytes, file has {}", bytes.len())));
        }
        if &bytes[..4] != TRACE_MAGIC {
            return Err(TraceError::Format("bad magic".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != TRACE_VERSION {
            return Err(TraceError::Format(format!("unsupported version {version}")));
        }
        let header_total = u64::from_le_bytes(bytes[8..16].try_into().unwrap());

        let mut records = Vec::new();
        let mut pos = TRACE_HEADER_LEN;
        while pos < bytes.len() {
            if pos + 10 > bytes.len() {
                return Err(TraceError::Truncated { offset: bytes.len() });
            }
            let pc = u64::from_le_bytes(bytes[pos..pos + 8].try_into().unwrap());
            let flags = bytes[pos + 8];
            if flags & !1 != 0 {
                return Err(TraceError::Format(format!("unknown flag bits {flags:#04x} at byte offset {}", pos + 8)));
            }
            let mut gap = bytes[pos + 9] as u32;
            pos += 10;
            if gap == GAP_ESCAPE as u32 {
                if pos + 4 > bytes.len() {
                    return Err(TraceError::Truncated { offset: bytes.len() });
                }
                gap = u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap());
                pos += 4;
            }
            records.push(TraceRecord::new(pc, flags & 1 == 1, gap));
        }

        let trace = Trace::new(phase_id, records);
        if trace.total_instructions != header_total {
            return Err(TraceError::TotalMismatch { header: header_total, computed: trace.total_instructions });
        }
        Ok(trace)
    }
}

fn count_instructions(records: &[TraceRecord]) -> u64 {
    records.iter().map(|r| r.inst_gap as u64 + 1).sum()
}

/// Reads a trace file. The phase id is the file stem.
pub fn read_trace(path: impl AsRef<Path>) -> Result<Trace, TraceError> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let phase = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Trace::from_bytes(&bytes, phase)
}

pub fn write_trace(trace: &Trace, path: impl AsRef<Path>) -> Result<(), TraceError> {
    fs::write(path, trace.to_bytes())?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScenarioKind {
    /// A → M noise branches → B, with B repeating A from `k` blocks earlier.
    Correlated,
    /// One loop-closing branch with period `s`.
    Loop,
    /// Random branches spread over a fixed instruction window.
    Utilization,
}

/// Parameters for the synthetic trace generators.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticScenario {
    pub kind: ScenarioKind,
    pub correlation_distance: u32,
    pub noise_branches: u32,
    pub loop_period: u32,
    pub loop_offset: u32,
    /// Branch records per instruction.
    pub branch_frequency: f64,
    pub offload_ratio: f64,
    /// Static branch count for the utilization kind.
    pub static_branches: u32,
    /// Record count (correlated, loop) or instruction count (utilization).
    pub length: usize,
    pub seed: u64,
}

impl SyntheticScenario {
    pub fn correlated(noise_branches: u32, distance: u32, length: usize, seed: u64) -> Self {
        Self {
            kind: ScenarioKind::Correlated,
            correlation_distance: distance,
            noise_branches,
            ..Self::base(length, seed)
        }
    }

    pub fn looping(period: u32, length: usize, seed: u64) -> Self {
        Self { kind: ScenarioKind::Loop, loop_period: period, ..Self::base(length, seed) }
    }

    pub fn utilization(branch_frequency: f64, offload_ratio: f64, length: usize, seed: u64) -> Self {
        Self { kind: ScenarioKind::Utilization, branch_frequency, offload_ratio, ..Self::base(length, seed) }
    }

    fn base(length: usize, seed: u64) -> Self {
        Self {
            kind: ScenarioKind::Correlated,
            correlation_distance: 1,
            noise_branches: 0,
            loop_period: 2,
            loop_offset: 0,
            branch_frequency: 0.2,
            offload_ratio: 0.0,
            static_branches: 16,
            length,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), TraceError> {
        let bad = |m: &str| Err(TraceError::InvalidScenario(m.to_string()));
        if !(0.0..=1.0).contains(&self.branch_frequency) {
            return bad("branch_frequency must be in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.offload_ratio) {
            return bad("offload_ratio must be in [0, 1]");
        }
        if self.length == 0 {
            return bad("length must be at least 1");
        }
        match self.kind {
            ScenarioKind::Correlated if self.correlation_distance == 0 => {
                bad("correlation distance must be at least 1")
            }
            ScenarioKind::Loop if self.loop_period < 2 => bad("loop period must be at least 2"),
            ScenarioKind::Correlated | ScenarioKind::Loop if self.branch_frequency == 0.0 => {
                bad("branch_frequency must be positive for this kind")
            }
            ScenarioKind::Utilization if self.static_branches == 0 => bad("static_branches must be at least 1"),
            _ => Ok(()),
        }
    }

    fn phase_name(&self) -> String {
        match self.kind {
            ScenarioKind::Correlated => {
                format!("correlated-m{}-k{}-s{}", self.noise_branches, self.correlation_distance, self.seed)
            }
            ScenarioKind::Loop => format!("loop-s{}-s{}", self.loop_period, self.seed),
            ScenarioKind::Utilization => {
                format!("utilization-bf{}-or{}-s{}", self.branch_frequency, self.offload_ratio, self.seed)
            }
        }
    }
}

/// Gaps that spread `records` branches uniformly over `instructions`
/// instructions; the gaps plus the records sum to `instructions`.
fn uniform_gaps(records: usize, instructions: u64) -> Vec<u32> {
    let mut gaps = Vec::with_capacity(records);
    let mut prev: i128 = -1;
    for k in 0..records as u128 {
        let pos = ((k + 1) * instructions as u128 / records as u128) as i128 - 1;
        gaps.push((pos - prev - 1) as u32);
        prev = pos;
    }
    gaps
}

fn gaps_for_frequency(records: usize, branch_frequency: f64) -> Vec<u32> {
    let instructions = ((records as f64 / branch_frequency).round() as u64).max(records as u64);
    uniform_gaps(records, instructions)
}

/// A, M noise branches, then B; B repeats A's outcome from `k` blocks earlier.
///
/// Only whole blocks are emitted, so the trace holds
/// `(length / (M + 2)) * (M + 2)` records.
pub fn gen_correlated(scenario: &SyntheticScenario) -> Result<Trace, TraceError> {
    if scenario.kind != ScenarioKind::Correlated {
        return Err(TraceError::InvalidScenario("expected correlated kind".into()));
    }
    scenario.validate()?;
    let m = scenario.noise_branches as usize;
    let k = scenario.correlation_distance as usize;
    let block = m + 2;
    let blocks = scenario.length / block;
    if blocks == 0 {
        return Err(TraceError::InvalidScenario(format!(
            "length {} cannot hold one block of {block} branches",
            scenario.length
        )));
    }
    let (pc_a, pc_b) = correlated_pcs(scenario.noise_branches);
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let gaps = gaps_for_frequency(blocks * block, scenario.branch_frequency);
    let mut gap = gaps.into_iter();
    let mut a_hist: Vec<bool> = Vec::with_capacity(blocks);
    let mut records = Vec::with_capacity(blocks * block);
    for j in 0..blocks {
        let a = rng.gen::<bool>();
        a_hist.push(a);
        records.push(TraceRecord::new(pc_a, a, gap.next().unwrap()));
        for n in 0..m {
            let pc = pc_a + 4 * (n as u64 + 1);
            records.push(TraceRecord::new(pc, rng.gen(), gap.next().unwrap()));
        }
        let b = if j >= k { a_hist[j - k] } else { rng.gen() };
        records.push(TraceRecord::new(pc_b, b, gap.next().unwrap()));
    }
    Ok(Trace::new(scenario.phase_name(), records))
}

/// PCs of the source branch A and the target branch B in [`gen_correlated`].
pub fn correlated_pcs(noise_branches: u32) -> (u64, u64) {
    (SYNTH_BASE_PC, SYNTH_BASE_PC + 4 * (noise_branches as u64 + 1))
}

/// GHR index (0 = most recent) holding A's outcome from `k` blocks before B.
pub fn correlated_ghr_index(noise_branches: u32, distance: u32) -> usize {
    let m = noise_branches as usize;
    distance as usize * (m + 2) + m
}

/// A loop-closing branch: taken `s − 1` times, then not-taken, repeated.
/// `loop_offset` shifts the starting position inside the iteration.
pub fn gen_loop(scenario: &SyntheticScenario) -> Result<Trace, TraceError> {
    if scenario.kind != ScenarioKind::Loop {
        return Err(TraceError::InvalidScenario("expected loop kind".into()));
    }
    scenario.validate()?;
    let s = scenario.loop_period as usize;
    let o = scenario.loop_offset as usize;
    let gaps = gaps_for_frequency(scenario.length, scenario.branch_frequency);
    let records = gaps
        .into_iter()
        .enumerate()
        .map(|(i, gap)| TraceRecord::new(SYNTH_BASE_PC, (i + o) % s != s - 1, gap))
        .collect();
    Ok(Trace::new(scenario.phase_name(), records))
}

/// Random branches over `length` instructions plus the list of static
/// branches flagged as offloaded.
pub fn gen_utilization(scenario: &SyntheticScenario) -> Result<(Trace, Vec<u64>), TraceError> {
    if scenario.kind != ScenarioKind::Utilization {
        return Err(TraceError::InvalidScenario("expected utilization kind".into()));
    }
    scenario.validate()?;
    let instructions = scenario.length as u64;
    let branches = (scenario.branch_frequency * scenario.length as f64).round() as usize;
    let statics = scenario.static_branches as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let records = uniform_gaps(branches, instructions)
        .into_iter()
        .map(|gap| {
            let pc = SYNTH_BASE_PC + 4 * rng.gen_range(0..statics);
            TraceRecord::new(pc, rng.gen(), gap)
        })
        .collect();
    let offloaded = (scenario.offload_ratio * statics as f64).round() as u64;
    let list = (0..offloaded).map(|i| SYNTH_BASE_PC + 4 * i).collect();
    Ok((Trace::new(scenario.phase_name(), records), list))
}

/// Dispatches on the scenario kind; the offload list is dropped.
pub fn generate(scenario: &SyntheticScenario) -> Result<Trace, TraceError> {
    match scenario.kind {
        ScenarioKind::Correlated => gen_correlated(scenario),
        ScenarioKind::Loop => gen_loop(scenario),
        ScenarioKind::Utilization => gen_utilization(scenario).map(|(t, _)| t),
    }
}

/// A small mixed corpus used by the end-to-end tests and examples:
/// correlated traces with different noise levels and distances, two loop
/// traces and a random utilization trace.
pub fn synthetic_corpus(records: usize, seed: u64) -> Vec<Trace> {
    let mut util = SyntheticScenario::utilization(0.25, 0.25, records * 4, seed + 5);
    util.static_branches = 8;
    let scenarios = [
        SyntheticScenario::correlated(2, 1, records, seed),
        SyntheticScenario::correlated(4, 2, records, seed + 1),
        SyntheticScenario::correlated(8, 1, records, seed + 2),
        SyntheticScenario::looping(5, records, seed + 3),
        SyntheticScenario::looping(7, records, seed + 4),
        util,
    ];
    scenarios.iter().map(|s| generate(s).expect("corpus scenarios are valid")).collect()
}

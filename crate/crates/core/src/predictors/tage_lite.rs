//! A reduced TAGE: a bimodal base table plus tagged tables indexed by
//! geometric global-history lengths. No statistical corrector, no loop
//! predictor. Entries remember the pc that allocated them so per-branch
//! occupancy can be measured.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{BaselinePredictor, BaselineStats, Prediction, TAGE_LATENCY};
use crate::bits::ShiftRegister;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TageLiteConfig {
    /// Tagged table count.
    pub tables: usize,
    /// log2 of the entries per tagged table.
    pub log_entries: u32,
    /// Shortest history; table `t` uses `min_history · 2^t`, capped.
    pub min_history: usize,
    /// Cap on history lengths.
    pub max_history: usize,
    pub tag_bits: u32,
    /// log2 of the bimodal table size.
    pub bimodal_log: u32,
    /// Non-suppressed updates between usefulness decays.
    pub u_reset_period: u64,
    /// Entries allocated per misprediction, in successive longer tables.
    #[serde(default = "default_max_alloc")]
    pub max_alloc: usize,
}

fn default_max_alloc() -> usize {
    1
}

impl Default for TageLiteConfig {
    fn default() -> Self {
        Self {
            tables: 4,
            log_entries: 10,
            min_history: 4,
            max_history: 64,
            tag_bits: 9,
            bimodal_log: 12,
            u_reset_period: 1 << 18,
            max_alloc: default_max_alloc(),
        }
    }
}

impl TageLiteConfig {
    pub fn history_lengths(&self) -> Vec<usize> {
        (0..self.tables).map(|t| (self.min_history << t).min(self.max_history)).collect()
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.tables == 0 {
            return Err("TAGE-lite needs at least one tagged table".into());
        }
        if self.min_history == 0 {
            return Err("TAGE-lite minimum history must be positive".into());
        }
        let lens = self.history_lengths();
        if lens.windows(2).any(|w| w[0] >= w[1]) {
            return Err(format!("history lengths {lens:?} are not strictly increasing"));
        }
        if !(1..=24).contains(&self.log_entries) || !(1..=24).contains(&self.bimodal_log) {
            return Err("table sizes must be between 2^1 and 2^24".into());
        }
        if !(2..=16).contains(&self.tag_bits) {
            return Err(format!("tag width {} outside 2..=16", self.tag_bits));
        }
        if self.max_alloc == 0 {
            return Err("TAGE-lite must allocate at least one entry per misprediction".into());
        }
        if self.u_reset_period == 0 {
            return Err("usefulness reset period must be positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
struct Entry {
    valid: bool,
    tag: u16,
    /// 3-bit signed counter in −4..=3; taken iff ≥ 0.
    ctr: i8,
    /// 2-bit usefulness.
    u: u8,
    owner: u64,
}

#[derive(Clone, Copy, Debug)]
struct Lookup {
    idx: [usize; MAX_TABLES],
    tag: [u16; MAX_TABLES],
    provider: Option<usize>,
    alt: Option<usize>,
}

const MAX_TABLES: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct TageLite {
    config: TageLiteConfig,
    lengths: Vec<usize>,
    bimodal: Vec<u8>,
    tables: Vec<Vec<Entry>>,
    clock: u64,
    allocations: BTreeMap<u64, u64>,
    occupancy_sum: BTreeMap<u64, u64>,
    snapshots: u64,
}

impl TageLite {
    pub fn new(config: TageLiteConfig) -> Self {
        if let Err(e) = config.validate() {
            panic!("invalid TAGE-lite configuration: {e}");
        }
        assert!(config.tables <= MAX_TABLES, "at most {MAX_TABLES} tagged tables");
        Self {
            lengths: config.history_lengths(),
            bimodal: vec![1; 1 << config.bimodal_log],
            tables: vec![vec![Entry::default(); 1 << config.log_entries]; config.tables],
            clock: 0,
            allocations: BTreeMap::new(),
            occupancy_sum: BTreeMap::new(),
            snapshots: 0,
            config,
        }
    }

    pub fn config(&self) -> &TageLiteConfig {
        &self.config
    }

    /// Live tagged entries owned by `pc`.
    pub fn live_entries(&self, pc: u64) -> usize {
        self.tables.iter().flatten().filter(|e| e.valid && e.owner == pc).count()
    }

    /// Prediction state only; statistics are excluded.
    pub fn same_state(&self, other: &Self) -> bool {
        self.bimodal == other.bimodal && self.tables == other.tables && self.clock == other.clock
    }

    fn bimodal_index(&self, pc: u64) -> usize {
        (pc ^ (pc >> self.config.bimodal_log)) as usize & (self.bimodal.len() - 1)
    }

    fn lookup(&self, pc: u64, ghr: &ShiftRegister) -> Lookup {
        let log = self.config.log_entries as usize;
        let tb = self.config.tag_bits as usize;
        let mut l = Lookup { idx: [0; MAX_TABLES], tag: [0; MAX_TABLES], provider: None, alt: None };
        for (t, &len) in self.lengths.iter().enumerate() {
            let h = ghr.fold(len, log);
            let idx = (pc ^ (pc >> log) ^ (pc >> (2 * log)).rotate_left(t as u32) ^ h) & ((1 << log) - 1);
            let tag = (pc ^ (pc >> tb) ^ ghr.fold(len, tb) ^ (ghr.fold(len, tb - 1) << 1)) & ((1 << tb) - 1);
            l.idx[t] = idx as usize;
            l.tag[t] = tag as u16;
        }
        for t in (0..self.lengths.len()).rev() {
            let e = &self.tables[t][l.idx[t]];
            if e.valid && e.tag == l.tag[t] {
                if l.provider.is_none() {
                    l.provider = Some(t);
                } else {
                    l.alt = Some(t);
                    break;
                }
            }
        }
        l
    }

    fn predictions(&self, pc: u64, l: &Lookup) -> (bool, bool) {
        let base = self.bimodal[self.bimodal_index(pc)] >= 2;
        let alt = l.alt.map_or(base, |t| self.tables[t][l.idx[t]].ctr >= 0);
        let main = l.provider.map_or(base, |t| self.tables[t][l.idx[t]].ctr >= 0);
        (main, alt)
    }
}

impl BaselinePredictor for TageLite {
    fn name(&self) -> &'static str {
        "tage-lite"
    }

    fn history_len(&self) -> usize {
        *self.lengths.last().expect("at least one table")
    }

    fn predict(&mut self, pc: u64, ghr: &ShiftRegister) -> Prediction {
        let l = self.lookup(pc, ghr);
        let (taken, _) = self.predictions(pc, &l);
        Prediction { taken, hit: false, latency_cycles: TAGE_LATENCY }
    }

    fn update(&mut self, pc: u64, ghr: &ShiftRegister, taken: bool, suppress: bool) {
        if suppress {
            return;
        }
        let l = self.lookup(pc, ghr);
        let (pred, alt_pred) = self.predictions(pc, &l);

        match l.provider {
            Some(t) => {
                let e = &mut self.tables[t][l.idx[t]];
                e.ctr = if taken { (e.ctr + 1).min(3) } else { (e.ctr - 1).max(-4) };
                if pred != alt_pred {
                    e.u = if pred == taken { (e.u + 1).min(3) } else { e.u.saturating_sub(1) };
                }
            }
            None => {
                let i = self.bimodal_index(pc);
                let c = &mut self.bimodal[i];
                *c = if taken { (*c + 1).min(3) } else { c.saturating_sub(1) };
            }
        }

        if pred != taken {
            let start = l.provider.map_or(0, |t| t + 1);
            let victims: Vec<usize> = (start..self.lengths.len())
                .filter(|&t| self.tables[t][l.idx[t]].u == 0)
                .take(self.config.max_alloc)
                .collect();
            if victims.is_empty() {
                for t in start..self.lengths.len() {
                    let e = &mut self.tables[t][l.idx[t]];
                    e.u = e.u.saturating_sub(1);
                }
            }
            for &t in &victims {
                self.tables[t][l.idx[t]] =
                    Entry { valid: true, tag: l.tag[t], ctr: if taken { 0 } else { -1 }, u: 0, owner: pc };
                *self.allocations.entry(pc).or_insert(0) += 1;
            }
        }

        self.clock += 1;
        if self.clock.is_multiple_of(self.config.u_reset_period) {
            for e in self.tables.iter_mut().flatten() {
                e.u >>= 1;
            }
        }
    }

    fn snapshot(&mut self) {
        self.snapshots += 1;
        for e in self.tables.iter().flatten().filter(|e| e.valid) {
            *self.occupancy_sum.entry(e.owner).or_insert(0) += 1;
        }
    }

    fn stats(&self) -> BaselineStats {
        let n = self.snapshots.max(1) as f64;
        BaselineStats {
            allocations: self.allocations.clone(),
            unique_entries_avg: self.occupancy_sum.iter().map(|(&pc, &s)| (pc, s as f64 / n)).collect(),
            snapshots: self.snapshots,
        }
    }
}

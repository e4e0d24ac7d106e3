//! gshare: 2-bit counters indexed by the pc XOR the folded global history.

use serde::{Deserialize, Serialize};

use super::{BaselinePredictor, BaselineStats, Prediction, GSHARE_LATENCY};
use crate::bits::ShiftRegister;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GshareConfig {
    /// log2 of the counter count.
    pub log_size: u32,
    /// Global history bits folded into the index.
    pub history_bits: usize,
}

impl Default for GshareConfig {
    fn default() -> Self {
        Self { log_size: 14, history_bits: 14 }
    }
}

impl GshareConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.log_size == 0 || self.log_size > 28 {
            return Err(format!("gshare log_size {} outside 1..=28", self.log_size));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Gshare {
    config: GshareConfig,
    counters: Vec<u8>,
}

impl Gshare {
    pub fn new(config: GshareConfig) -> Self {
        // weakly not-taken
        let counters = vec![1; 1 << config.log_size];
        Self { config, counters }
    }

    pub fn counters(&self) -> &[u8] {
        &self.counters
    }

    fn index(&self, pc: u64, ghr: &ShiftRegister) -> usize {
        let width = self.config.log_size as usize;
        let mask = (1u64 << width) - 1;
        let h = ghr.fold(self.config.history_bits, width);
        ((pc ^ (pc >> width) ^ h) & mask) as usize
    }
}

impl BaselinePredictor for Gshare {
    fn name(&self) -> &'static str {
        "gshare"
    }

    fn history_len(&self) -> usize {
        self.config.history_bits
    }

    fn predict(&mut self, pc: u64, ghr: &ShiftRegister) -> Prediction {
        let c = self.counters[self.index(pc, ghr)];
        Prediction { taken: c >= 2, hit: false, latency_cycles: GSHARE_LATENCY }
    }

    fn update(&mut self, pc: u64, ghr: &ShiftRegister, taken: bool, suppress: bool) {
        if suppress {
            return;
        }
        let i = self.index(pc, ghr);
        let c = &mut self.counters[i];
        *c = if taken { (*c + 1).min(3) } else { c.saturating_sub(1) };
    }

    fn snapshot(&mut self) {}

    fn stats(&self) -> BaselineStats {
        BaselineStats::default()
    }
}

//! Two-stage pipeline schedule and event-based energy accounting.
//!
//! Stage A is CIM scoring of a query (q-bit cycles, K-BWS cycles, compare).
//! Stage B is the key fetch plus digital rescoring, softmax and value
//! accumulation. The array supports a CIM cycle and a standard read at the
//! same time, so stage A of query `i + 1` runs while stage B of query `i`
//! is still busy.
//!
//! Energies are abstract units; every unit cost is a configuration value.

use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quant::{DIM, NIBBLE_BITS};

/// Rows read per fetched key.
pub const ROWS_PER_TOKEN: u64 = NIBBLE_BITS as u64;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostConfig {
    pub cim_bit_cycle: u64,
    pub kbws_cycle: u64,
    pub compare_cycle: u64,
    pub sram_read_row: u64,
    pub mac_lane_count: u64,
    pub softmax_cycles_per_token: u64,
    pub e_cim_cycle: f64,
    pub e_compare: f64,
    pub e_sram_row_read: f64,
    pub e_mac: f64,
    pub e_softmax_token: f64,
    pub e_buffer_access: f64,
}

impl Default for CostConfig {
    fn default() -> Self {
        Self {
            cim_bit_cycle: 1,
            kbws_cycle: 1,
            compare_cycle: 1,
            sram_read_row: 1,
            mac_lane_count: 64,
            softmax_cycles_per_token: 1,
            e_cim_cycle: 1.0,
            e_compare: 0.05,
            e_sram_row_read: 4.0,
            e_mac: 0.0625,
            e_softmax_token: 2.0,
            e_buffer_access: 1.0,
        }
    }
}

impl CostConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mac_lane_count == 0 {
            return Err(Error::Config("mac_lane_count must be at least 1".into()));
        }
        let energies = [
            ("e_cim_cycle", self.e_cim_cycle),
            ("e_compare", self.e_compare),
            ("e_sram_row_read", self.e_sram_row_read),
            ("e_mac", self.e_mac),
            ("e_softmax_token", self.e_softmax_token),
            ("e_buffer_access", self.e_buffer_access),
        ];
        for (name, e) in energies {
            if !(e >= 0.0 && e.is_finite()) {
                return Err(Error::Config(format!(
                    "{name} must be a finite non-negative number, got {e}"
                )));
            }
        }
        Ok(())
    }

    /// Stage-A latency: four q-bit CIM cycles, four K-BWS cycles, one compare.
    pub fn stage_a_cycles(&self) -> u64 {
        NIBBLE_BITS as u64 * self.cim_bit_cycle + NIBBLE_BITS as u64 * self.kbws_cycle + self.compare_cycle
    }

    /// Stage-B latency for a query that fetches `fetched` keys and keeps `unpruned`.
    pub fn stage_b_cycles(&self, fetched: u64, unpruned: u64) -> u64 {
        let fetch = fetched * ROWS_PER_TOKEN * self.sram_read_row;
        let lanes = self.mac_lane_count.max(1);
        // one pass for q.k, one for the weighted sum over v
        let mac = 2 * (unpruned * DIM as u64).div_ceil(lanes);
        fetch + mac + unpruned * self.softmax_cycles_per_token
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct StageCosts {
    pub a: u64,
    pub b: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StageSpan {
    pub a_start: u64,
    pub a_end: u64,
    pub b_start: u64,
    pub b_end: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Schedule {
    pub total_cycles: u64,
    pub timeline: Vec<StageSpan>,
}

impl Schedule {
    pub fn serial_cycles(costs: &[StageCosts]) -> u64 {
        costs.iter().map(|c| c.a + c.b).sum()
    }
}

/// Two-stage pipeline: stage A runs back to back; stage B of a query starts
/// once its own stage A and the previous stage B have both finished.
pub fn schedule(costs: &[StageCosts]) -> Schedule {
    let mut timeline = Vec::with_capacity(costs.len());
    let (mut a_free, mut b_free) = (0u64, 0u64);
    for c in costs {
        let a_start = a_free;
        let a_end = a_start + c.a;
        let b_start = a_end.max(b_free);
        let b_end = b_start + c.b;
        a_free = a_end;
        b_free = b_end;
        timeline.push(StageSpan {
            a_start,
            a_end,
            b_start,
            b_end,
        });
    }
    Schedule {
        total_cycles: b_free,
        timeline,
    }
}

/// Counts of energy-bearing events over a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EventCounts {
    pub cim_cycles: u64,
    pub comparisons: u64,
    pub sram_row_reads: u64,
    pub macs: u64,
    pub softmax_tokens: u64,
    pub buffer_accesses: u64,
}

impl Add for EventCounts {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self {
            cim_cycles: self.cim_cycles + o.cim_cycles,
            comparisons: self.comparisons + o.comparisons,
            sram_row_reads: self.sram_row_reads + o.sram_row_reads,
            macs: self.macs + o.macs,
            softmax_tokens: self.softmax_tokens + o.softmax_tokens,
            buffer_accesses: self.buffer_accesses + o.buffer_accesses,
        }
    }
}

impl AddAssign for EventCounts {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl EventCounts {
    pub fn scaled(self, k: u64) -> Self {
        Self {
            cim_cycles: self.cim_cycles * k,
            comparisons: self.comparisons * k,
            sram_row_reads: self.sram_row_reads * k,
            macs: self.macs * k,
            softmax_tokens: self.softmax_tokens * k,
            buffer_accesses: self.buffer_accesses * k,
        }
    }

    /// Events of one hybrid query over a tile of `tokens` keys.
    ///
    /// `cim_ran` is false when the query had no nonzero MSB element and the
    /// array was never exercised.
    pub fn hybrid_query(tokens: u64, unpruned: u64, fetched: u64, cim_ran: bool) -> Self {
        let cim = u64::from(cim_ran);
        Self {
            cim_cycles: cim * NIBBLE_BITS as u64,
            comparisons: cim * tokens,
            sram_row_reads: fetched * ROWS_PER_TOKEN,
            macs: 2 * DIM as u64 * unpruned,
            softmax_tokens: unpruned,
            // q load plus one value read per survivor
            buffer_accesses: 1 + unpruned,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub cim: f64,
    pub fetch: f64,
    pub digital_mac: f64,
    pub softmax: f64,
    pub buffers: f64,
}

impl EnergyBreakdown {
    pub fn total(&self) -> f64 {
        self.cim + self.fetch + self.digital_mac + self.softmax + self.buffers
    }

    /// Share of the total spent in the analog core; 0 for an empty run.
    pub fn cim_fraction(&self) -> f64 {
        let t = self.total();
        if t > 0.0 {
            self.cim / t
        } else {
            0.0
        }
    }
}

pub fn account_energy(events: &EventCounts, cfg: &CostConfig) -> EnergyBreakdown {
    EnergyBreakdown {
        cim: events.cim_cycles as f64 * cfg.e_cim_cycle + events.comparisons as f64 * cfg.e_compare,
        fetch: events.sram_row_reads as f64 * cfg.e_sram_row_read,
        digital_mac: events.macs as f64 * cfg.e_mac,
        softmax: events.softmax_tokens as f64 * cfg.e_softmax_token,
        buffers: events.buffer_accesses as f64 * cfg.e_buffer_access,
    }
}

/// Aggregate pruning outcome of a run, enough to price the baselines.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct WorkloadStats {
    pub queries: u64,
    /// Sum over queries of keys in the query's tile.
    pub decisions: u64,
    /// Sum over queries of surviving tokens.
    pub unpruned: u64,
    /// Sum over queries of keys fetched from the array.
    pub fetched: u64,
    /// Queries for which the array actually ran.
    pub cim_queries: u64,
    /// Keys compared by the array, summed over those queries.
    pub compared: u64,
}

impl WorkloadStats {
    pub fn pruning_rate(&self) -> f64 {
        match self.decisions {
            0 => 0.0,
            d => 1.0 - self.unpruned as f64 / d as f64,
        }
    }

    /// Fraction of survivors served from the register file, pooled over queries.
    pub fn pooled_reuse_rate(&self) -> f64 {
        match self.unpruned {
            0 => 1.0,
            u => 1.0 - self.fetched as f64 / u as f64,
        }
    }

    pub fn hybrid_events(&self) -> EventCounts {
        EventCounts {
            cim_cycles: NIBBLE_BITS as u64 * self.cim_queries,
            comparisons: self.compared,
            sram_row_reads: ROWS_PER_TOKEN * self.fetched,
            macs: 2 * DIM as u64 * self.unpruned,
            softmax_tokens: self.unpruned,
            buffer_accesses: self.queries + self.unpruned,
        }
    }

    /// Fully digital, no pruning: every key fetched and every token processed.
    pub fn digital_nopruning_events(&self) -> EventCounts {
        let all = self.decisions;
        EventCounts {
            cim_cycles: 0,
            comparisons: 0,
            sram_row_reads: ROWS_PER_TOKEN * all,
            macs: 2 * DIM as u64 * all,
            softmax_tokens: all,
            buffer_accesses: self.queries + all,
        }
    }

    /// Fully digital with pruning: every key fetched and scored at 8 bits,
    /// softmax and value accumulation only for survivors.
    pub fn digital_pruning_events(&self) -> EventCounts {
        let all = self.decisions;
        EventCounts {
            cim_cycles: 0,
            comparisons: 0,
            sram_row_reads: ROWS_PER_TOKEN * all,
            macs: DIM as u64 * (all + self.unpruned),
            softmax_tokens: self.unpruned,
            buffer_accesses: self.queries + self.unpruned,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Savings {
    pub baseline_nopruning_energy: f64,
    pub baseline_pruning_energy: f64,
    pub vs_digital_nopruning: f64,
    pub vs_digital_pruning: f64,
}

pub fn compare_baselines(hybrid: &EnergyBreakdown, cfg: &CostConfig, stats: &WorkloadStats) -> Result<Savings> {
    let h = hybrid.total();
    if !(h > 0.0) {
        return Err(Error::ZeroHybridEnergy);
    }
    let a = account_energy(&stats.digital_nopruning_events(), cfg).total();
    let b = account_energy(&stats.digital_pruning_events(), cfg).total();
    Ok(Savings {
        baseline_nopruning_energy: a,
        baseline_pruning_energy: b,
        vs_digital_nopruning: a / h,
        vs_digital_pruning: b / h,
    })
}

//! End-to-end simulation of a workload through the hybrid datapath.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::blp::{compare, score_grid, threshold_voltage, DroopGrid};
use crate::cim_array::{CimArray, NoiseModel};
use crate::digital_core::{compute_attention, AttentionResult, OverlapCache, PruneMask};
use crate::error::{Error, Result};
use crate::oracle::{deadzone_classifier, score4_bruteforce, DeadZoneClass};
use crate::pipeline_energy::{
    account_energy, compare_baselines, schedule, EnergyBreakdown, EventCounts, Schedule, StageCosts, WorkloadStats,
};
use crate::quant::{split_nibbles, to_bitplane, NibblePlanes, TokenVector, NIBBLE_BITS};
use crate::real::Real;
use crate::rng::{substream, STREAM_COMPARATOR};
use crate::workload_io::{SimConfig, Workload};

/// Threshold that keeps every token.
pub const NO_PRUNING: i64 = i64::MIN;

/// Everything measured over one run. Field names are the JSON schema.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub tiles: u64,
    pub queries: u64,
    pub decisions: u64,
    pub total_cycles: u64,
    pub serial_cycles: u64,
    pub energy: EnergyBreakdown,
    pub energy_total: f64,
    pub cim_energy_fraction: f64,
    pub pruning_rate: f64,
    pub reuse_rate: f64,
    pub decisions_outside_deadzone: u64,
    pub decisions_inside_deadzone: u64,
    pub decision_errors_outside_deadzone: u64,
    pub decision_flips_inside_deadzone: u64,
    pub error_rate_outside_deadzone: f64,
    pub flip_rate_inside_deadzone: f64,
    pub fully_pruned_query_count: u64,
    pub savings_vs_digital_nopruning: Option<f64>,
    pub savings_vs_digital_pruning: Option<f64>,
    pub events: EventCounts,
    pub stats: WorkloadStats,
}

/// Per-query trace.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryOutcome<R> {
    pub mask: PruneMask,
    pub fetched: PruneMask,
    pub reuse_rate: f64,
    /// False when the query's MSB nibbles were all zero and the array was skipped.
    pub cim_ran: bool,
    pub differentials: Vec<R>,
    pub score4: Vec<i32>,
    pub attention: AttentionResult<R>,
    pub stage: StageCosts,
}

#[derive(Clone, Debug)]
pub struct SimRun<R> {
    pub report: SimReport,
    /// Outcomes grouped by tile, in query order.
    pub outcomes: Vec<Vec<QueryOutcome<R>>>,
    pub schedule: Schedule,
}

#[derive(Default)]
struct Tally {
    decisions: u64,
    pruned: u64,
    outside: u64,
    inside: u64,
    errors_outside: u64,
    flips_inside: u64,
    fully_pruned: u64,
    reuse_sum: f64,
    queries: u64,
}

pub struct Simulator<R> {
    cfg: SimConfig,
    array: CimArray<R>,
    noise: NoiseModel<R>,
    cmp_rng: ChaCha8Rng,
}

impl<R: Real> Simulator<R> {
    pub fn new(cfg: SimConfig) -> Result<Self> {
        cfg.validate()?;
        let noise = NoiseModel::new(R::of(cfg.sigma_rbl), R::of(cfg.sigma_cmp))?;
        let array = CimArray::new(R::of(cfg.v_pre), cfg.sscs, noise, cfg.seed);
        let cmp_rng = substream(cfg.seed, STREAM_COMPARATOR);
        Ok(Self {
            cfg,
            array,
            noise,
            cmp_rng,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    /// Runs the tiles in order and assembles the report.
    pub fn run(&mut self, tiles: &[Workload]) -> Result<SimRun<R>> {
        let mut tally = Tally::default();
        let mut events = EventCounts::default();
        let mut stats = WorkloadStats::default();
        let mut stages = Vec::new();
        let mut outcomes = Vec::with_capacity(tiles.len());

        for tile in tiles {
            let tile_out = self.run_tile(tile, &mut tally)?;
            for o in &tile_out {
                let t = tile.tokens() as u64;
                let u = o.mask.count() as u64;
                let f = o.fetched.count() as u64;
                events += EventCounts::hybrid_query(t, u, f, o.cim_ran);
                stats.queries += 1;
                stats.unpruned += u;
                stats.fetched += f;
                stats.decisions += t;
                stats.cim_queries += u64::from(o.cim_ran);
                stats.compared += if o.cim_ran { t } else { 0 };
                stages.push(o.stage);
            }
            outcomes.push(tile_out);
        }
        let energy = account_energy(&events, &self.cfg.cost);
        let savings = compare_baselines(&energy, &self.cfg.cost, &stats).ok();
        let sched = schedule(&stages);
        let ratio = |n: u64, d: u64| if d == 0 { 0.0 } else { n as f64 / d as f64 };

        let report = SimReport {
            tiles: tiles.len() as u64,
            queries: tally.queries,
            decisions: tally.decisions,
            total_cycles: sched.total_cycles,
            serial_cycles: Schedule::serial_cycles(&stages),
            energy_total: energy.total(),
            cim_energy_fraction: energy.cim_fraction(),
            energy,
            pruning_rate: ratio(tally.pruned, tally.decisions),
            reuse_rate: if tally.queries == 0 {
                1.0
            } else {
                tally.reuse_sum / tally.queries as f64
            },
            decisions_outside_deadzone: tally.outside,
            decisions_inside_deadzone: tally.inside,
            decision_errors_outside_deadzone: tally.errors_outside,
            decision_flips_inside_deadzone: tally.flips_inside,
            error_rate_outside_deadzone: ratio(tally.errors_outside, tally.outside),
            flip_rate_inside_deadzone: ratio(tally.flips_inside, tally.inside),
            fully_pruned_query_count: tally.fully_pruned,
            savings_vs_digital_nopruning: savings.map(|s| s.vs_digital_nopruning),
            savings_vs_digital_pruning: savings.map(|s| s.vs_digital_pruning),
            events,
            stats,
        };
        Ok(SimRun {
            report,
            outcomes,
            schedule: sched,
        })
    }

    fn run_tile(&mut self, tile: &Workload, tally: &mut Tally) -> Result<Vec<QueryOutcome<R>>> {
        let theta = self.cfg.threshold;
        let key_planes: Vec<NibblePlanes> = tile.keys.iter().map(split_nibbles).collect();
        self.array.clear();
        for (j, k) in key_planes.iter().enumerate() {
            self.array.write_key(j, k)?;
        }
        let tokens = tile.tokens();
        let mut cache = OverlapCache::new();
        let mut register: Vec<Option<NibblePlanes>> = vec![None; tokens];
        let mut out = Vec::with_capacity(tile.queries.len());

        for q in &tile.queries {
            let q_planes = split_nibbles(q);
            let score4: Vec<i32> = key_planes.iter().map(|k| score4_bruteforce(&q_planes, k)).collect();
            let (cim_ran, differentials, mask) = self.score_query(&q_planes, tokens, theta)?;

            for (j, &s) in score4.iter().enumerate() {
                let keep = mask.contains(j);
                tally.decisions += 1;
                tally.pruned += u64::from(!keep);
                match deadzone_classifier(s as i64, theta) {
                    DeadZoneClass::MustKeep | DeadZoneClass::MustPrune => {
                        tally.outside += 1;
                        tally.errors_outside += u64::from(keep != (s as i64 > theta));
                    }
                    DeadZoneClass::DontCare => {
                        tally.inside += 1;
                        tally.flips_inside += u64::from(keep != (s as i64 > theta));
                    }
                }
            }

            let plan = cache.plan_fetch(mask);
            for j in plan.fetch.iter() {
                register[j] = Some(self.array.standard_read(j)?);
            }
            let resident: Vec<NibblePlanes> = register
                .iter()
                .map(|r| r.unwrap_or(NibblePlanes::from_msb([0; crate::quant::DIM]).expect("zero planes")))
                .collect();
            debug_assert!(mask.iter().all(|j| register[j].is_some()));
            let attention = compute_attention(q, mask, &resident, &tile.values, R::of(self.cfg.softmax_scale))?;

            tally.queries += 1;
            tally.reuse_sum += plan.reuse_rate;
            tally.fully_pruned += u64::from(attention.is_fully_pruned());

            let stage = StageCosts {
                a: self.cfg.cost.stage_a_cycles(),
                b: self
                    .cfg
                    .cost
                    .stage_b_cycles(plan.fetch.count() as u64, mask.count() as u64),
            };
            out.push(QueryOutcome {
                mask,
                fetched: plan.fetch,
                reuse_rate: plan.reuse_rate,
                cim_ran,
                differentials,
                score4,
                attention,
                stage,
            });
        }
        Ok(out)
    }

    /// Analog scoring of one query against every stored key.
    fn score_query(&mut self, q: &NibblePlanes, tokens: usize, theta: i64) -> Result<(bool, Vec<R>, PruneMask)> {
        let nonzero = q.nonzero_mask();
        if nonzero == 0 {
            // every 4-bit score is exactly zero: resolve without touching the array
            let keep = 0 > theta;
            let mask = if keep {
                PruneMask::full(tokens)
            } else {
                PruneMask::EMPTY
            };
            return Ok((false, vec![R::zero(); tokens], mask));
        }
        let bits = to_bitplane(q);
        let mut grids: Vec<DroopGrid<R>> = vec![[[R::zero(); NIBBLE_BITS]; NIBBLE_BITS]; tokens];
        for b in 0..NIBBLE_BITS {
            for s in self.array.cim_cycle(bits.row(b), nonzero, b)? {
                grids[s.token][b][s.k_bit] = s.droop;
            }
        }
        let n_active = self.array.n_active(nonzero)?;
        let v_th = threshold_voltage(theta, self.array.v_pre(), n_active);
        let mut mask = PruneMask::EMPTY;
        let mut diffs = Vec::with_capacity(tokens);
        for (j, grid) in grids.iter().enumerate() {
            let d = score_grid(grid);
            let decision = compare(j, d, v_th, &self.noise, &mut self.cmp_rng);
            mask.set(j, decision.keep);
            diffs.push(d);
        }
        Ok((true, diffs, mask))
    }
}

/// Convenience wrapper: builds a simulator from `cfg` and runs `tiles`.
pub fn simulate<R: Real>(tiles: &[Workload], cfg: &SimConfig) -> Result<SimRun<R>> {
    if tiles.is_empty() {
        return Err(Error::InvalidSpec("workload has no tiles".into()));
    }
    Simulator::<R>::new(cfg.clone())?.run(tiles)
}

/// Runs one query without pruning through the digital core only; used to
/// check the pruned pipeline against the unpruned reference.
pub fn dense_attention<R: Real>(q: &TokenVector, tile: &Workload, scale: R) -> Result<AttentionResult<R>> {
    let planes: Vec<NibblePlanes> = tile.keys.iter().map(split_nibbles).collect();
    compute_attention(q, PruneMask::full(tile.tokens()), &planes, &tile.values, scale)
}

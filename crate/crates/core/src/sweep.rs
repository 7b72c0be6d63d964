//! Parameter sweeps over threshold, RBL noise or query sparsity.
//!
//! Each point runs `trials` independent simulations (fresh workload and noise
//! seeds derived from the base seed) and pools their counts. Points run in
//! parallel; rows come back sorted by axis value regardless of completion
//! order.

use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::sim::simulate;
use crate::workload_io::{generate_workload, SimConfig, Workload, WorkloadSpec};

/// Fixed CSV header of sweep output.
pub const CSV_HEADER: &str = "axis,value,sscs,trials,decisions,pruning_rate,error_rate_outside_deadzone,flip_rate_inside_deadzone,energy_total,total_cycles";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Threshold,
    SigmaRbl,
    QSparsity,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            Self::Threshold => "threshold",
            Self::SigmaRbl => "sigma_rbl",
            Self::QSparsity => "q-sparsity",
        }
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "threshold" => Ok(Self::Threshold),
            "sigma_rbl" | "sigma-rbl" => Ok(Self::SigmaRbl),
            "q-sparsity" | "q_sparsity" | "sparsity" => Ok(Self::QSparsity),
            other => Err(Error::InvalidSpec(format!(
                "unknown sweep axis {other:?} (expected threshold, sigma_rbl or q-sparsity)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub start: f64,
    pub stop: f64,
    pub points: usize,
    pub trials: usize,
    pub seed: u64,
    pub base: SimConfig,
    /// Template for generated workloads; its seed and sparsity are overridden per trial/point.
    pub workload: WorkloadSpec,
    /// Fixed workload tiles. Ignored on the q-sparsity axis, which must regenerate.
    pub fixed: Option<Vec<Workload>>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub axis: &'static str,
    pub value: f64,
    pub sscs: bool,
    pub trials: usize,
    pub decisions: u64,
    pub pruning_rate: f64,
    pub error_rate_outside_deadzone: f64,
    pub flip_rate_inside_deadzone: f64,
    pub energy_total: f64,
    pub total_cycles: f64,
}

pub fn linspace(start: f64, stop: f64, points: usize) -> Vec<f64> {
    match points {
        0 => vec![],
        1 => vec![start],
        n => (0..n)
            .map(|i| start + (stop - start) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// SplitMix64 finalizer; decorrelates per-trial seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn trial_seed(base: u64, trial: usize) -> u64 {
    mix(base ^ mix(trial as u64))
}

fn run_point(spec: &SweepSpec, value: f64) -> Result<SweepRow> {
    let mut cfg = spec.base.clone();
    match spec.axis {
        SweepAxis::Threshold => cfg.threshold = value.round() as i64,
        SweepAxis::SigmaRbl => cfg.sigma_rbl = value,
        SweepAxis::QSparsity => {}
    }
    let (mut decisions, mut pruned, mut outside, mut errors, mut inside, mut flips) =
        (0u64, 0f64, 0u64, 0u64, 0u64, 0u64);
    let (mut energy, mut cycles) = (0.0, 0.0);
    for t in 0..spec.trials {
        let seed = trial_seed(spec.seed, t);
        cfg.seed = seed;
        let tiles = match (&spec.fixed, spec.axis) {
            (Some(tiles), axis) if axis != SweepAxis::QSparsity => tiles.clone(),
            _ => {
                let mut w = spec.workload.clone();
                w.seed = seed;
                if spec.axis == SweepAxis::QSparsity {
                    w.q_sparsity = value;
                }
                vec![generate_workload(&w)?]
            }
        };
        let r = simulate::<f64>(&tiles, &cfg)?.report;
        decisions += r.decisions;
        pruned += r.pruning_rate * r.decisions as f64;
        outside += r.decisions_outside_deadzone;
        errors += r.decision_errors_outside_deadzone;
        inside += r.decisions_inside_deadzone;
        flips += r.decision_flips_inside_deadzone;
        energy += r.energy_total;
        cycles += r.total_cycles as f64;
    }
    let ratio = |n: f64, d: u64| if d == 0 { 0.0 } else { n / d as f64 };
    let per_trial = |x: f64| if spec.trials == 0 { 0.0 } else { x / spec.trials as f64 };
    Ok(SweepRow {
        axis: spec.axis.name(),
        value,
        sscs: cfg.sscs,
        trials: spec.trials,
        decisions,
        pruning_rate: ratio(pruned, decisions),
        error_rate_outside_deadzone: ratio(errors as f64, outside),
        flip_rate_inside_deadzone: ratio(flips as f64, inside),
        energy_total: per_trial(energy),
        total_cycles: per_trial(cycles),
    })
}

pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<SweepRow>> {
    if !spec.start.is_finite() || !spec.stop.is_finite() {
        return Err(Error::InvalidSpec("sweep range must be finite".into()));
    }
    let mut values = linspace(spec.start, spec.stop, spec.points);
    values.sort_by(f64::total_cmp);
    values.par_iter().map(|&v| run_point(spec, v)).collect()
}

pub fn rows_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.axis,
            r.value,
            r.sscs,
            r.trials,
            r.decisions,
            r.pruning_rate,
            r.error_rate_outside_deadzone,
            r.flip_rate_inside_deadzone,
            r.energy_total,
            r.total_cycles
        );
    }
    out
}

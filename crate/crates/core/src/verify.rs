//! Oracle-equivalence suites behind `cimprune verify`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::blp::score_token;
use crate::cim_array::CimArray;
use crate::digital_core::exact_score;
use crate::oracle::{reference_attention, score4_bruteforce};
use crate::quant::{split_nibbles, to_bitplane, NibblePlanes, TokenVector, DIM, NIBBLE_BITS};
use crate::rng::{substream, STREAM_VERIFY};
use crate::sim::{simulate, NO_PRUNING};
use crate::workload_io::{generate_workload, ScoreDistribution, SimConfig, WorkloadSpec};

/// Elementwise tolerance of the unpruned pipeline against the reference.
pub const ATTENTION_TOL: f64 = 1e-9;
/// Tolerance of the recovered 4-bit score from the analog differential.
pub const IDENTITY_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteResult {
    pub name: &'static str,
    pub checked: u64,
    pub failures: u64,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerifyReport {
    pub trials: u64,
    pub suites: Vec<SuiteResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(SuiteResult::passed)
    }
}

fn random_msb(rng: &mut ChaCha8Rng) -> NibblePlanes {
    let msb = std::array::from_fn(|_| rng.random_range(-8..=7));
    NibblePlanes::from_msb(msb).expect("in range")
}

fn random_token(rng: &mut ChaCha8Rng) -> TokenVector {
    TokenVector::new(std::array::from_fn(|_| rng.random()))
}

/// Runs one query against one key through the array and the BWS cascade and
/// returns `256 * N_active * differential / v_pre`.
pub fn analog_score4(q: &NibblePlanes, k: &NibblePlanes, sscs: bool) -> Option<f64> {
    let mut array = CimArray::<f64>::ideal(sscs);
    array.write_key(0, k).ok()?;
    let nonzero = q.nonzero_mask();
    let n_active = array.n_active(nonzero).ok()?;
    let bits = to_bitplane(q);
    let mut samples = Vec::with_capacity(NIBBLE_BITS * NIBBLE_BITS);
    for b in 0..NIBBLE_BITS {
        samples.extend(array.cim_cycle(bits.row(b), nonzero, b).ok()?);
    }
    let d = score_token(&samples).ok()?;
    Some(256.0 * n_active as f64 * d / array.v_pre())
}

/// Weighting identity: analog differential against the direct 4-bit dot product.
pub fn suite_weighting_identity(trials: u64, rng: &mut ChaCha8Rng, fault: bool) -> SuiteResult {
    let mut failures = 0;
    for t in 0..trials {
        let q = random_msb(rng);
        let k = random_msb(rng);
        let sscs = t % 2 == 1;
        let expected = score4_bruteforce(&q, &k) as f64 + if fault { 1.0 } else { 0.0 };
        match analog_score4(&q, &k, sscs) {
            Some(got) if (got - expected).abs() <= IDENTITY_TOL => {}
            // an all-zero query has no active columns under SSCS; its score is 0 by construction
            None if q.nonzero_mask() == 0 && expected == 0.0 => {}
            _ => failures += 1,
        }
    }
    SuiteResult {
        name: "blp_weighting_identity",
        checked: trials,
        failures,
    }
}

/// Nibble reconstruction: split-key exact score against the INT8 dot product.
pub fn suite_nibble_reconstruction(trials: u64, rng: &mut ChaCha8Rng) -> SuiteResult {
    let mut failures = 0;
    for _ in 0..trials {
        let q = random_token(rng);
        let k = random_token(rng);
        let direct: i32 = (0..DIM).map(|n| q.elems()[n] as i32 * k.elems()[n] as i32).sum();
        if exact_score(&q, &split_nibbles(&k)) != direct {
            failures += 1;
        }
    }
    SuiteResult {
        name: "nibble_reconstruction",
        checked: trials,
        failures,
    }
}

/// Unpruned pipeline against reference attention, one small workload per trial.
pub fn suite_no_pruning(trials: u64, rng: &mut ChaCha8Rng) -> SuiteResult {
    let cfg = SimConfig {
        threshold: NO_PRUNING,
        ..SimConfig::default()
    };
    let mut failures = 0;
    for _ in 0..trials {
        let spec = WorkloadSpec {
            tokens: rng.random_range(1..=64),
            queries: 4,
            q_sparsity: rng.random_range(0.0..1.0),
            distribution: ScoreDistribution::Uniform,
            seed: rng.random(),
            ..WorkloadSpec::default()
        };
        let w = generate_workload(&spec).expect("valid spec");
        let ok = match simulate::<f64>(std::slice::from_ref(&w), &cfg) {
            Ok(run) => w.queries.iter().zip(&run.outcomes[0]).all(|(q, o)| {
                let r = reference_attention(q, &w.keys, &w.values, cfg.softmax_scale);
                o.attention
                    .output
                    .iter()
                    .zip(&r)
                    .all(|(a, b)| (a - b).abs() <= ATTENTION_TOL)
            }),
            Err(_) => false,
        };
        failures += u64::from(!ok);
    }
    SuiteResult {
        name: "no_pruning_vs_reference",
        checked: trials,
        failures,
    }
}

/// Runs all suites. `inject_fault` perturbs the weighting-identity oracle so
/// the harness can be checked to fail.
pub fn run_verification(trials: u64, seed: u64, inject_fault: bool) -> VerifyReport {
    let mut rng = substream(seed, STREAM_VERIFY);
    let suites = vec![
        suite_weighting_identity(trials, &mut rng, inject_fault),
        suite_nibble_reconstruction(trials, &mut rng),
        suite_no_pruning(trials.div_ceil(100), &mut rng),
    ];
    VerifyReport { trials, suites }
}

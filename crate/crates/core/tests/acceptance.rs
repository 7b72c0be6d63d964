//! End-to-end acceptance checks. Each check prints one PASS/FAIL line; the
//! target exits nonzero if any check fails.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use cimprune::oracle::DEAD_ZONE;
use cimprune::pipeline_energy::StageCosts;
use cimprune::quant::{DIM, TILE_TOKENS};
use cimprune::verify::{suite_nibble_reconstruction, suite_weighting_identity};
use cimprune::workload_io::{ScoreDistribution, WorkloadMeta};
use cimprune::{
    bws_step, deadzone_classifier, generate_workload, reference_attention, save_workload, schedule, simulate, BwsState,
    DeadZoneClass, OracleScore, OverlapCache, PruneMask, SimConfig, TokenVector, Workload, WorkloadSpec, NO_PRUNING,
};

type Check = std::result::Result<String, String>;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn tile(queries: Vec<TokenVector>, keys: Vec<TokenVector>, values: Vec<TokenVector>) -> Workload {
    Workload::new(WorkloadMeta::default(), queries, keys, values).expect("valid tile")
}

fn random_values(n: usize, r: &mut ChaCha8Rng) -> Vec<TokenVector> {
    (0..n)
        .map(|_| TokenVector::new(std::array::from_fn(|_| r.random())))
        .collect()
}

/// A query with exactly `active` elements whose upper nibble is nonzero.
fn sparse_query(active: usize, r: &mut ChaCha8Rng) -> TokenVector {
    let mut slots: Vec<usize> = (0..DIM).collect();
    for i in 0..active {
        let j = r.random_range(i..DIM);
        slots.swap(i, j);
    }
    let mut e = [0i8; DIM];
    for &n in &slots[..active] {
        let msb: i8 = loop {
            let m = r.random_range(-8..=7);
            if m != 0 {
                break m;
            }
        };
        e[n] = msb * 16 + r.random_range(0..16);
    }
    TokenVector::new(e)
}

/// A key whose 4-bit score against `q` is at least `DEAD_ZONE` away from 0.
fn decisive_key(q: &TokenVector, r: &mut ChaCha8Rng) -> TokenVector {
    let keep = r.random_bool(0.5);
    loop {
        let e: [i8; DIM] = std::array::from_fn(|n| {
            let qm = q.elems()[n] >> 4;
            if qm == 0 {
                return r.random();
            }
            let mag: i8 = r.random_range(3..=7);
            let aligned = (qm > 0) == keep;
            let m = if aligned { mag } else { -mag };
            m * 16 + r.random_range(0..16)
        });
        let k = TokenVector::new(e);
        if i64::from(OracleScore::of(q, &k).score4.abs()) >= DEAD_ZONE {
            return k;
        }
    }
}

/// Tiles of one query and a full set of keys that all sit outside the dead zone at `theta = 0`.
fn decisive_tiles(tiles: usize, active: usize, seed: u64) -> Vec<Workload> {
    let mut r = rng(seed);
    (0..tiles)
        .map(|_| {
            let q = sparse_query(active, &mut r);
            let keys = (0..TILE_TOKENS).map(|_| decisive_key(&q, &mut r)).collect();
            let values = random_values(TILE_TOKENS, &mut r);
            tile(vec![q], keys, values)
        })
        .collect()
}

/// One-hot keys and sliding 16-token query windows. The window advances by
/// 3, 3, 3, 3, 4 tokens, so consecutive survivor sets overlap by 13/16 four
/// times out of five and by 12/16 once: 80% on average. Every query has 48
/// zero elements, so 75% of keys are pruned.
fn windowed_tile(queries: usize, seed: u64) -> Workload {
    const WINDOW: usize = 16;
    const MAG: i8 = 7 * 16;
    let keys: Vec<TokenVector> = (0..TILE_TOKENS)
        .map(|n| {
            let mut e = [0i8; DIM];
            e[n] = MAG;
            TokenVector::new(e)
        })
        .collect();
    let mut start = 0usize;
    let mut qs = Vec::with_capacity(queries);
    for i in 0..queries {
        let mut e = [0i8; DIM];
        for w in 0..WINDOW {
            e[(start + w) % DIM] = MAG;
        }
        qs.push(TokenVector::new(e));
        start += if i % 5 == 4 { 4 } else { 3 };
    }
    tile(qs, keys, random_values(TILE_TOKENS, &mut rng(seed)))
}

fn noiseless(threshold: i64, sscs: bool) -> SimConfig {
    SimConfig {
        threshold,
        sscs,
        sigma_rbl: 0.0,
        sigma_cmp: 0.0,
        ..SimConfig::default()
    }
}

fn bws_closed_form() -> Check {
    let mut r = rng(1);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let v: [f64; 4] = std::array::from_fn(|_| r.random_range(0.0..1.0));
        let got = v.iter().fold(BwsState::zero(), |s, &x| bws_step(s, x)).stored;
        let want = 0.0625 * v[0] + 0.125 * v[1] + 0.25 * v[2] + 0.5 * v[3];
        worst = worst.max((got - want).abs() / want.abs().max(f64::MIN_POSITIVE));
    }
    ensure(
        worst <= 1e-12,
        format!("10000 sequences, max relative error {worst:.3e}"),
    )
}

fn weighting_identity() -> Check {
    let s = suite_weighting_identity(100_000, &mut rng(2), false);
    ensure(
        s.failures == 0,
        format!("{} pairs, {} outside 1e-9", s.checked, s.failures),
    )
}

fn zero_error_outside_deadzone() -> Check {
    let cfg = noiseless(0, true);
    let mut tiles = decisive_tiles(80, 24, 3);
    for seed in 0..2 {
        tiles.push(
            generate_workload(&WorkloadSpec {
                tokens: 64,
                queries: 40,
                q_sparsity: 0.25,
                distribution: ScoreDistribution::Clustered { clusters: 4 },
                seed,
                ..WorkloadSpec::default()
            })
            .map_err(|e| e.to_string())?,
        );
    }
    let run = simulate::<f64>(&tiles, &cfg).map_err(|e| e.to_string())?;
    let (mut checked, mut mismatches) = (0u64, 0u64);
    for (t, outs) in tiles.iter().zip(&run.outcomes) {
        for (q, o) in t.queries.iter().zip(outs) {
            for (j, k) in t.keys.iter().enumerate() {
                let keep = o.mask.contains(j);
                match deadzone_classifier(OracleScore::of(q, k).score4.into(), 0) {
                    DeadZoneClass::MustKeep => {
                        checked += 1;
                        mismatches += u64::from(!keep);
                    }
                    DeadZoneClass::MustPrune => {
                        checked += 1;
                        mismatches += u64::from(keep);
                    }
                    DeadZoneClass::DontCare => {}
                }
            }
        }
    }
    let decisions = run.report.decisions;
    ensure(
        decisions >= 10_000 && checked > 0 && mismatches == 0 && run.report.decision_errors_outside_deadzone == 0,
        format!("{decisions} decisions, {checked} outside the dead zone, {mismatches} mismatches"),
    )
}

fn sscs_error_rate(tiles: &[Workload], sigma: f64, sscs: bool) -> (u64, u64) {
    let cfg = SimConfig {
        sigma_rbl: sigma,
        seed: 11,
        ..noiseless(0, sscs)
    };
    let r = simulate::<f64>(tiles, &cfg).expect("simulation").report;
    (r.decision_errors_outside_deadzone, r.decisions_outside_deadzone)
}

fn sscs_benefit() -> Check {
    // 16 of 64 query elements active: sparsity 0.75
    let pilot = decisive_tiles(20, 16, 40);
    let sigma = (0..40)
        .map(|i| 0.005 * 1.2f64.powi(i))
        .find(|&s| {
            let (e, n) = sscs_error_rate(&pilot, s, false);
            (0.08..=0.20).contains(&(e as f64 / n as f64))
        })
        .ok_or("no noise level gives a 5-25% error rate without SSCS")?;
    let tiles = decisive_tiles(200, 16, 41);
    let (e_off, n_off) = sscs_error_rate(&tiles, sigma, false);
    let (e_on, n_on) = sscs_error_rate(&tiles, sigma, true);
    let p_off = e_off as f64 / n_off as f64;
    let p_on = e_on as f64 / n_on as f64;
    // one-sided two-proportion z-test at 95%
    let pooled = (e_off + e_on) as f64 / (n_off + n_on) as f64;
    let se = (pooled * (1.0 - pooled) * (1.0 / n_off as f64 + 1.0 / n_on as f64)).sqrt();
    let z = if se > 0.0 { (p_off - p_on) / se } else { 0.0 };
    ensure(
        n_off >= 10_000 && (0.05..=0.25).contains(&p_off) && p_on < p_off && z > 1.645,
        format!(
            "sigma_rbl {sigma:.4}, {n_off} decisions each, error {:.2}% without SSCS vs {:.2}% with, z = {z:.1}",
            100.0 * p_off,
            100.0 * p_on
        ),
    )
}

fn no_pruning_equivalence() -> Check {
    let cfg = noiseless(NO_PRUNING, true);
    let mut r = rng(5);
    let mut worst = 0.0f64;
    let mut kept_all = true;
    for _ in 0..100 {
        let w = generate_workload(&WorkloadSpec {
            tokens: r.random_range(1..=64),
            queries: 8,
            q_sparsity: r.random_range(0.0..1.0),
            distribution: ScoreDistribution::Uniform,
            seed: r.random(),
            ..WorkloadSpec::default()
        })
        .map_err(|e| e.to_string())?;
        let run = simulate::<f64>(std::slice::from_ref(&w), &cfg).map_err(|e| e.to_string())?;
        for (q, o) in w.queries.iter().zip(&run.outcomes[0]) {
            kept_all &= o.mask.count() as usize == w.tokens();
            let want = reference_attention(q, &w.keys, &w.values, cfg.softmax_scale);
            for (a, b) in o.attention.output.iter().zip(&want) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    ensure(
        kept_all && worst <= 1e-9,
        format!("100 workloads, max elementwise difference {worst:.3e}"),
    )
}

fn nibble_reconstruction() -> Check {
    let s = suite_nibble_reconstruction(100_000, &mut rng(6));
    ensure(
        s.failures == 0,
        format!("{} pairs, {} mismatches", s.checked, s.failures),
    )
}

fn pipeline_overlap() -> Check {
    let mut r = rng(7);
    let mut bad = 0;
    for _ in 0..1000 {
        let n = r.random_range(2..=64);
        let costs: Vec<StageCosts> = (0..n)
            .map(|_| StageCosts {
                a: r.random_range(1..=50),
                b: r.random_range(1..=200),
            })
            .collect();
        let total = schedule(&costs).total_cycles;
        let serial: u64 = costs.iter().map(|c| c.a + c.b).sum();
        let sum_a: u64 = costs.iter().map(|c| c.a).sum();
        let sum_b: u64 = costs.iter().map(|c| c.b).sum();
        if !(total < serial && total >= sum_a.max(sum_b)) {
            bad += 1;
        }
    }
    ensure(bad == 0, format!("1000 cost vectors, {bad} violations"))
}

fn reuse_accounting() -> Check {
    let mut r = rng(8);
    let mut bad = 0;
    for _ in 0..10_000 {
        let mut cache = OverlapCache::new();
        let mut resident: BTreeSet<usize> = BTreeSet::new();
        for _ in 0..r.random_range(1..=16) {
            // and-ing or or-ing extra words skews the density either way
            let mut bits: u64 = r.random();
            for _ in 0..r.random_range(0..3) {
                bits = if r.random_bool(0.5) {
                    bits & r.random::<u64>()
                } else {
                    bits | r.random::<u64>()
                };
            }
            let u: BTreeSet<usize> = (0..TILE_TOKENS).filter(|&j| bits >> j & 1 == 1).collect();
            let plan = cache.plan_fetch(PruneMask::from_tokens(u.iter().copied()));
            let fetch: BTreeSet<usize> = u.difference(&resident).copied().collect();
            let reused: BTreeSet<usize> = u.intersection(&resident).copied().collect();
            let rate = if u.is_empty() {
                1.0
            } else {
                reused.len() as f64 / u.len() as f64
            };
            if plan.fetch.iter().collect::<BTreeSet<_>>() != fetch
                || plan.reused.iter().collect::<BTreeSet<_>>() != reused
                || plan.reuse_rate != rate
            {
                bad += 1;
            }
            resident = u;
        }
    }
    let run = simulate::<f64>(&[windowed_tile(201, 9)], &noiseless(0, true)).map_err(|e| e.to_string())?;
    let reuse = run.report.reuse_rate;
    ensure(
        bad == 0 && (reuse - 0.80).abs() <= 0.02,
        format!("10000 mask sequences, {bad} mismatches; designed-overlap reuse {reuse:.4}"),
    )
}

fn calibration_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/calibration.toml")
}

fn calibration_savings() -> Check {
    let cfg = SimConfig::load(&calibration_path()).map_err(|e| e.to_string())?;
    let r = simulate::<f64>(&[windowed_tile(201, 10)], &cfg)
        .map_err(|e| e.to_string())?
        .report;
    let a = r.savings_vs_digital_nopruning.unwrap_or(0.0);
    let b = r.savings_vs_digital_pruning.unwrap_or(0.0);
    ensure(
        (r.pruning_rate - 0.75).abs() < 1e-12 && (r.reuse_rate - 0.80).abs() <= 0.02 && a >= 10.0 && b >= 2.5,
        format!(
            "pruning {:.3}, reuse {:.3}, savings {a:.2}x / {b:.2}x, analog share {:.1}%",
            r.pruning_rate,
            r.reuse_rate,
            100.0 * r.cim_energy_fraction
        ),
    )
}

fn run_cli(workload: &Path, config: &Path) -> std::result::Result<Value, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_cimprune"))
        .args(["run", "--format", "json", "--seed", "1234", "--workload"])
        .arg(workload)
        .arg("--config")
        .arg(config)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(String::from_utf8_lossy(&out.stderr).into_owned());
    }
    let mut v: Value = serde_json::from_slice(&out.stdout).map_err(|e| e.to_string())?;
    v.as_object_mut()
        .ok_or("report is not an object")?
        .remove("timestamp")
        .ok_or("report has no timestamp")?;
    Ok(v)
}

fn determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let w = generate_workload(&WorkloadSpec {
        tokens: 64,
        queries: 32,
        q_sparsity: 0.5,
        seed: 3,
        ..WorkloadSpec::default()
    })
    .map_err(|e| e.to_string())?;
    let wdir = dir.path().join("w");
    save_workload(&wdir, &w).map_err(|e| e.to_string())?;
    // noisy config so the seed actually matters
    let cfg = SimConfig {
        sigma_rbl: 0.02,
        sigma_cmp: 0.001,
        ..SimConfig::default()
    };
    let cpath = dir.path().join("noisy.toml");
    std::fs::write(&cpath, cfg.to_toml_string()).map_err(|e| e.to_string())?;
    let first = run_cli(&wdir, &cpath)?;
    let second = run_cli(&wdir, &cpath)?;
    ensure(first == second, "two runs with seed 1234 compared".into())
}

fn main() -> ExitCode {
    let checks: [(&str, Duration, fn() -> Check); 10] = [
        ("bws_closed_form", Duration::from_secs(1), bws_closed_form),
        ("weighting_identity", Duration::from_secs(30), weighting_identity),
        (
            "zero_error_outside_deadzone",
            Duration::from_secs(10),
            zero_error_outside_deadzone,
        ),
        ("sscs_benefit", Duration::from_secs(60), sscs_benefit),
        (
            "no_pruning_equivalence",
            Duration::from_secs(10),
            no_pruning_equivalence,
        ),
        ("nibble_reconstruction", Duration::from_secs(10), nibble_reconstruction),
        ("pipeline_overlap", Duration::from_secs(5), pipeline_overlap),
        ("reuse_accounting", Duration::from_secs(5), reuse_accounting),
        ("calibration_savings", Duration::from_secs(1), calibration_savings),
        ("determinism", Duration::from_secs(5), determinism),
    ];
    let mut failed = Vec::new();
    for (i, (name, budget, check)) in checks.iter().enumerate() {
        let start = Instant::now();
        let result = check();
        let elapsed = start.elapsed();
        let (ok, detail) = match result {
            Ok(d) if elapsed <= *budget => (true, d),
            Ok(d) => (false, format!("{d}; over the {budget:?} budget")),
            Err(d) => (false, d),
        };
        println!(
            "{} {:>2} {name}: {detail} ({:.2}s)",
            if ok { "PASS" } else { "FAIL" },
            i + 1,
            elapsed.as_secs_f64()
        );
        if !ok {
            failed.push(*name);
        }
    }
    if failed.is_empty() {
        println!("all {} checks passed", checks.len());
        ExitCode::SUCCESS
    } else {
        println!("failed: {failed:?}");
        ExitCode::FAILURE
    }
}

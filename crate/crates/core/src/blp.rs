//! Bitline processor: binary-weighted sampling of RBL outputs and the
//! pruning comparator.
//!
//! A binary-weighted sampler (BWS) has a sampling and a storage capacitor of
//! equal size. Each step refreshes the sampler, samples the input and shares
//! it with the storage capacitor, so the stored voltage becomes
//! `0.5 * (stored + v_in)`. Four steps yield
//! `v0/16 + v1/8 + v2/4 + v3/2`.
//!
//! The Q-BWS stage applies this over the four query bit cycles on each of the
//! four RBLs of a token; the K-BWS stage applies it again over the four
//! Q-BWS outputs (LSB row first). Because the MSB of a signed nibble carries
//! weight -8, each (q bit, k bit) term is routed to a positive or a negative
//! rail, and the comparator sees `pos - neg`.

use rand::Rng;

use crate::cim_array::{gaussian, NoiseModel, RblSample};
use crate::error::{Error, Result};
use crate::quant::NIBBLE_BITS;
use crate::real::Real;

/// Storage-capacitor voltage of one binary-weighted sampler.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct BwsState<R> {
    pub stored: R,
}

impl<R: Real> BwsState<R> {
    pub fn zero() -> Self {
        Self { stored: R::zero() }
    }

    pub fn step(self, v_in: R) -> Self {
        bws_step(self, v_in)
    }
}

/// Refresh, sample `v_in`, share with the storage capacitor.
pub fn bws_step<R: Real>(state: BwsState<R>, v_in: R) -> BwsState<R> {
    BwsState {
        stored: R::half() * state.stored + R::half() * v_in,
    }
}

/// The two storage capacitors of a signed Q-BWS.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct SignedAccumulator<R> {
    pub pos: R,
    pub neg: R,
}

impl<R: Real> SignedAccumulator<R> {
    /// One store event: both rails halve, the new sample lands on the rail
    /// selected by `sign`.
    pub fn store(&mut self, sample: R, sign: i8) {
        let h = R::half();
        self.pos = h * self.pos;
        self.neg = h * self.neg;
        if sign > 0 {
            self.pos += h * sample;
        } else {
            self.neg += h * sample;
        }
    }

    pub fn differential(&self) -> R {
        self.pos - self.neg
    }
}

/// Sign of the product of the two's-complement weights of q bit `b` and k bit `c`.
pub fn term_sign(b: usize, c: usize) -> i8 {
    let msb = NIBBLE_BITS - 1;
    if (b == msb) != (c == msb) {
        -1
    } else {
        1
    }
}

/// Droops of one token indexed `[q_bit][k_bit]`.
pub type DroopGrid<R> = [[R; NIBBLE_BITS]; NIBBLE_BITS];

/// Runs the signed Q-BWS / K-BWS cascade over a full droop grid and returns
/// the comparator differential `pos - neg`.
pub fn score_grid<R: Real>(grid: &DroopGrid<R>) -> R {
    let mut q_bws = [SignedAccumulator::<R>::default(); NIBBLE_BITS];
    // q bits arrive LSB first; every cycle updates all four RBL samplers
    for (b, row) in grid.iter().enumerate() {
        for (c, acc) in q_bws.iter_mut().enumerate() {
            acc.store(row[c], term_sign(b, c));
        }
    }
    // K-BWS reuses the Q-BWS storage caps as its samplers, LSB RBL first
    let (mut pos, mut neg) = (BwsState::zero(), BwsState::zero());
    for acc in &q_bws {
        pos = bws_step(pos, acc.pos);
        neg = bws_step(neg, acc.neg);
    }
    pos.stored - neg.stored
}

/// Differential for one token from its 16 RBL samples (any order, one per
/// `(q_bit, k_bit)` pair).
pub fn score_token<R: Real>(samples: &[RblSample<R>]) -> Result<R> {
    let token = samples.first().map(|s| s.token).unwrap_or(0);
    let missing = || Error::MissingSamples {
        token,
        actual: samples.len(),
    };
    if samples.len() != NIBBLE_BITS * NIBBLE_BITS {
        return Err(missing());
    }
    let mut grid = [[None; NIBBLE_BITS]; NIBBLE_BITS];
    for s in samples {
        if s.token != token || s.q_bit >= NIBBLE_BITS || s.k_bit >= NIBBLE_BITS {
            return Err(missing());
        }
        let slot = &mut grid[s.q_bit][s.k_bit];
        if slot.is_some() {
            return Err(missing());
        }
        *slot = Some(s.droop);
    }
    let grid = grid.map(|row| row.map(|d| d.expect("all 16 slots filled")));
    Ok(score_grid(&grid))
}

/// Comparator threshold voltage for a score threshold `theta`.
///
/// The differential of a noiseless token equals
/// `v_pre * score4 / (256 * n_active)`, so this keeps the decision boundary
/// at `score4 = theta` whatever the number of active columns.
pub fn threshold_voltage<R: Real>(theta: i64, v_pre: R, n_active: u32) -> R {
    R::of(theta as f64) * v_pre / R::of(256.0 * n_active as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PruneDecision<R> {
    pub token: usize,
    pub keep: bool,
    pub differential: R,
}

/// Keeps the token when the (offset-perturbed) differential strictly
/// exceeds the threshold. Ties prune.
pub fn compare<R: Real, G: Rng + ?Sized>(
    token: usize,
    differential: R,
    v_threshold: R,
    noise: &NoiseModel<R>,
    rng: &mut G,
) -> PruneDecision<R> {
    let offset = gaussian(rng, noise.sigma_cmp);
    PruneDecision {
        token,
        keep: differential + offset > v_threshold,
        differential,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cim_array::CimArray;
    use crate::quant::{split_nibbles, to_bitplane, NibblePlanes, TokenVector, DIM};
    use crate::rng::substream;
    use proptest::prelude::*;

    fn run<R: Real>(inputs: &[R]) -> R {
        inputs.iter().fold(BwsState::zero(), |s, &v| bws_step(s, v)).stored
    }

    #[test]
    fn bws_closed_form_examples() {
        assert_eq!(run(&[1.0f64, 1.0, 1.0, 1.0]), 0.9375);
        assert_eq!(run(&[0.0f64; 4]), 0.0);
        assert!((run(&[0.8f64, 0.0, 0.0, 0.0]) - 0.05).abs() < 1e-15);
        assert_eq!(run(&[1.0f32, 1.0, 1.0, 1.0]), 0.9375f32);
    }

    #[test]
    fn term_signs() {
        assert_eq!(term_sign(3, 1), -1);
        assert_eq!(term_sign(1, 3), -1);
        assert_eq!(term_sign(3, 3), 1);
        assert_eq!(term_sign(0, 0), 1);
        // agrees with the sign of the weight product
        let w = crate::quant::BIT_WEIGHTS;
        for b in 0..4 {
            for c in 0..4 {
                assert_eq!(term_sign(b, c) as i32, (w[b] * w[c]).signum());
            }
        }
    }

    /// Brute-force droop grid straight from bit planes, bypassing the array.
    fn ideal_grid(q: &[i8; DIM], k: &[i8; DIM], n_active: f64) -> DroopGrid<f64> {
        let qb = to_bitplane(&NibblePlanes::from_msb(*q).unwrap());
        let kb = to_bitplane(&NibblePlanes::from_msb(*k).unwrap());
        std::array::from_fn(|b| std::array::from_fn(|c| (qb.row(b) & kb.row(c)).count_ones() as f64 / n_active))
    }

    #[test]
    fn unit_vectors_differential() {
        let d = score_grid(&ideal_grid(&[1; DIM], &[1; DIM], 64.0));
        assert!((d - 64.0 / (256.0 * 64.0)).abs() < 1e-15);
        assert!((d - 3.906e-3).abs() < 1e-6);
    }

    #[test]
    fn zero_droops_give_zero() {
        assert_eq!(score_grid(&[[0.0f64; 4]; 4]), 0.0);
    }

    #[test]
    fn single_element_negative() {
        let mut q = [0i8; DIM];
        let mut k = [0i8; DIM];
        q[0] = -8;
        k[0] = 7;
        let d = score_grid(&ideal_grid(&q, &k, 1.0));
        assert_eq!(d, -0.21875);
    }

    #[test]
    fn score_token_through_array() {
        let mut q = [0i8; DIM];
        let mut k = [0i8; DIM];
        q[0] = -8;
        k[0] = 7;
        let qp = NibblePlanes::from_msb(q).unwrap();
        let qb = to_bitplane(&qp);
        let mut a = CimArray::<f64>::ideal(true);
        a.write_key(4, &NibblePlanes::from_msb(k).unwrap()).unwrap();
        let mut samples = Vec::new();
        for b in 0..4 {
            samples.extend(a.cim_cycle(qb.row(b), qp.nonzero_mask(), b).unwrap());
        }
        assert_eq!(samples.len(), 16);
        assert_eq!(score_token(&samples).unwrap(), -0.21875);
        samples.reverse();
        assert_eq!(score_token(&samples).unwrap(), -0.21875);
    }

    #[test]
    fn score_token_rejects_incomplete() {
        let s = RblSample {
            token: 0,
            k_bit: 0,
            q_bit: 0,
            droop: 0.1f64,
        };
        assert!(matches!(
            score_token(&[s; 15]),
            Err(Error::MissingSamples { actual: 15, .. })
        ));
        // 16 samples but duplicated slot
        assert!(score_token(&[s; 16]).is_err());
        assert!(score_token::<f64>(&[]).is_err());
    }

    #[test]
    fn compare_examples() {
        let mut rng = substream(0, 0);
        let quiet = NoiseModel::noiseless();
        assert!(compare(0, 0.01, 0.0, &quiet, &mut rng).keep);
        assert!(!compare(0, -0.01, 0.0, &quiet, &mut rng).keep);
        assert!(!compare(0, 0.125, 0.125, &quiet, &mut rng).keep);
    }

    #[test]
    fn comparator_offset_flips_near_threshold() {
        let mut rng = substream(1, 0);
        let noisy = NoiseModel::new(0.0, 0.01).unwrap();
        let kept = (0..2000)
            .filter(|_| compare(0, 0.0f64, 0.0, &noisy, &mut rng).keep)
            .count();
        assert!((800..1200).contains(&kept), "kept {kept}");
    }

    #[test]
    fn threshold_mapping() {
        assert_eq!(threshold_voltage(256, 1.0f64, 64), 256.0 / (256.0 * 64.0));
        assert_eq!(threshold_voltage(0, 1.0f64, 3), 0.0);
    }

    proptest! {
        #[test]
        fn bws_exactness(v in prop::collection::vec(-1.0f64..1.0, 1..12)) {
            let k = v.len();
            let expect: f64 = v.iter().enumerate().map(|(i, x)| 0.5f64.powi((k - i) as i32) * x).sum();
            let scale: f64 = v.iter().map(|x| x.abs()).sum::<f64>().max(1e-300);
            prop_assert!((run(&v) - expect).abs() <= 1e-12 * scale);
        }

        #[test]
        fn sign_symmetry(seed in any::<u64>()) {
            use rand::Rng;
            let mut rng = substream(seed, 9);
            let q: [i8; DIM] = std::array::from_fn(|_| rng.random_range(-8..=7));
            // -8 is not negatable in 4 bits
            let k: [i8; DIM] = std::array::from_fn(|_| rng.random_range(-7..=7));
            let nk = k.map(|x| -x);
            let d = score_grid(&ideal_grid(&q, &k, 64.0));
            let nd = score_grid(&ideal_grid(&q, &nk, 64.0));
            prop_assert!((d + nd).abs() < 1e-12);
        }

        #[test]
        fn differential_tracks_int8_msb_score(seed in any::<u64>()) {
            use rand::Rng;
            let mut rng = substream(seed, 10);
            let qv = TokenVector::new(std::array::from_fn(|_| rng.random()));
            let kv = TokenVector::new(std::array::from_fn(|_| rng.random()));
            let (qp, kp) = (split_nibbles(&qv), split_nibbles(&kv));
            let score4: i32 = qp.msb().iter().zip(kp.msb()).map(|(&a, &b)| a as i32 * b as i32).sum();
            let d = score_grid(&ideal_grid(qp.msb(), kp.msb(), 64.0));
            prop_assert!((d * 256.0 * 64.0 - score4 as f64).abs() < 1e-9);
        }
    }
}

//! Behavioral model of the transposable memory array.
//!
//! Each stored key occupies four rows (one per MSB bit position `c`) by 64
//! columns (one per element `n`). A CIM cycle broadcasts one bit plane of
//! the query along the read wordlines; a cell capacitor discharges when both
//! the stored key bit and the query bit are high, and the capacitors of a
//! row then share charge. The resulting droop on the read bitline is
//! `v_pre * P / N_active`, where `P` is the popcount of the binary product
//! over the participating columns.
//!
//! The LSB nibbles of each key live in a separate, ordinary SRAM bank that
//! is only reachable through [`CimArray::standard_read`].

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::quant::{to_bitplane, BitPlane, NibblePlanes, DIM, NIBBLE_BITS, TILE_TOKENS};
use crate::real::Real;
use crate::rng::{substream, STREAM_RBL_NOISE};

/// Standard deviations of the two analog noise sources, in volts.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct NoiseModel<R> {
    /// Additive Gaussian noise on every RBL droop sample.
    pub sigma_rbl: R,
    /// Comparator input-referred offset.
    pub sigma_cmp: R,
}

impl<R: Real> NoiseModel<R> {
    pub fn new(sigma_rbl: R, sigma_cmp: R) -> Result<Self> {
        if !(sigma_rbl >= R::zero()) || !(sigma_cmp >= R::zero()) {
            return Err(Error::Config(format!(
                "noise sigmas must be non-negative (sigma_rbl={sigma_rbl}, sigma_cmp={sigma_cmp})"
            )));
        }
        Ok(Self { sigma_rbl, sigma_cmp })
    }

    pub fn noiseless() -> Self {
        Self {
            sigma_rbl: R::zero(),
            sigma_cmp: R::zero(),
        }
    }
}

/// Draws `N(0, sigma^2)`; returns exactly zero without consuming randomness
/// when `sigma` is zero.
pub(crate) fn gaussian<R: Real, G: Rng + ?Sized>(rng: &mut G, sigma: R) -> R {
    if sigma == R::zero() {
        return R::zero();
    }
    let z: f64 = rng.sample(StandardNormal);
    sigma * R::of(z)
}

/// One analog output of the array: the droop of the RBL carrying key bit
/// `k_bit` of `token`, during the cycle that broadcast query bit `q_bit`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RblSample<R> {
    pub token: usize,
    pub k_bit: usize,
    pub q_bit: usize,
    pub droop: R,
}

/// Physical row of bit `c` of token `j`.
pub fn row_address(j: usize, c: usize) -> usize {
    NIBBLE_BITS * j + c
}

/// Inverse of [`row_address`].
pub fn row_owner(row: usize) -> (usize, usize) {
    (row / NIBBLE_BITS, row % NIBBLE_BITS)
}

#[derive(Clone, Debug)]
pub struct CimArray<R> {
    keys: [Option<BitPlane>; TILE_TOKENS],
    lsb_bank: [[u8; DIM]; TILE_TOKENS],
    v_pre: R,
    sscs_enabled: bool,
    noise: NoiseModel<R>,
    rng: ChaCha8Rng,
}

impl<R: Real> CimArray<R> {
    pub const DEFAULT_V_PRE: f64 = 1.0;

    pub fn new(v_pre: R, sscs_enabled: bool, noise: NoiseModel<R>, seed: u64) -> Self {
        Self {
            keys: [None; TILE_TOKENS],
            lsb_bank: [[0; DIM]; TILE_TOKENS],
            v_pre,
            sscs_enabled,
            noise,
            rng: substream(seed, STREAM_RBL_NOISE),
        }
    }

    /// Noiseless array with `v_pre = 1.0` and SSCS as given.
    pub fn ideal(sscs_enabled: bool) -> Self {
        Self::new(R::of(Self::DEFAULT_V_PRE), sscs_enabled, NoiseModel::noiseless(), 0)
    }

    pub fn v_pre(&self) -> R {
        self.v_pre
    }

    pub fn sscs_enabled(&self) -> bool {
        self.sscs_enabled
    }

    pub fn set_sscs(&mut self, on: bool) {
        self.sscs_enabled = on;
    }

    pub fn noise(&self) -> &NoiseModel<R> {
        &self.noise
    }

    /// Forgets every stored key.
    pub fn clear(&mut self) {
        self.keys = [None; TILE_TOKENS];
        self.lsb_bank = [[0; DIM]; TILE_TOKENS];
    }

    pub fn write_key(&mut self, j: usize, k: &NibblePlanes) -> Result<()> {
        if j >= TILE_TOKENS {
            return Err(Error::TokenOutOfRange(j));
        }
        self.keys[j] = Some(to_bitplane(k));
        self.lsb_bank[j] = *k.lsb();
        Ok(())
    }

    /// Digital (noiseless) read of a stored key through the vertical
    /// bitlines. Independent of any CIM activity.
    pub fn standard_read(&self, j: usize) -> Result<NibblePlanes> {
        let plane = self
            .keys
            .get(j)
            .ok_or(Error::TokenOutOfRange(j))?
            .ok_or(Error::Unwritten(j))?;
        NibblePlanes::new(plane.msb_all(), self.lsb_bank[j])
    }

    /// Content of one bit cell, addressed physically.
    pub fn cell(&self, row: usize, col: usize) -> Option<bool> {
        let (j, c) = row_owner(row);
        let plane = self.keys.get(j).copied().flatten()?;
        (col < DIM).then(|| plane.bit(col, c))
    }

    /// Ids of all written tokens, ascending.
    pub fn stored_tokens(&self) -> impl Iterator<Item = usize> + '_ {
        self.keys.iter().enumerate().filter_map(|(j, k)| k.map(|_| j))
    }

    pub fn stored_count(&self) -> usize {
        self.keys.iter().filter(|k| k.is_some()).count()
    }

    /// Number of columns that take part in charge sharing for a query with
    /// the given nonzero-element mask.
    pub fn n_active(&self, q_nonzero: u64) -> Result<u32> {
        let n = if self.sscs_enabled {
            q_nonzero.count_ones()
        } else {
            DIM as u32
        };
        if n == 0 {
            return Err(Error::DegenerateQuery);
        }
        Ok(n)
    }

    /// One precharge/multiply/accumulate cycle for query bit `b`.
    ///
    /// `q_bits` carries bit `b` of every query element (bit `n` of the mask is
    /// element `n`); `q_nonzero` flags the elements whose 4-bit value is
    /// nonzero. Returns one sample per stored token per key bit row, ordered
    /// by token id then `k_bit`.
    pub fn cim_cycle(&mut self, q_bits: u64, q_nonzero: u64, b: usize) -> Result<Vec<RblSample<R>>> {
        if b >= NIBBLE_BITS {
            return Err(Error::BitIndex(b));
        }
        let n_active = self.n_active(q_nonzero)?;
        let included = if self.sscs_enabled { q_nonzero } else { u64::MAX };
        let driven = q_bits & included;
        let denom = R::of(n_active as f64);

        let mut out = Vec::with_capacity(self.stored_count() * NIBBLE_BITS);
        for j in 0..TILE_TOKENS {
            let Some(plane) = self.keys[j] else { continue };
            for c in 0..NIBBLE_BITS {
                let discharged = (driven & plane.row(c)).count_ones();
                let ideal = self.v_pre * R::of(discharged as f64) / denom;
                let droop = ideal + gaussian(&mut self.rng, self.noise.sigma_rbl);
                out.push(RblSample {
                    token: j,
                    k_bit: c,
                    q_bit: b,
                    droop,
                });
            }
        }
        Ok(out)
    }
}

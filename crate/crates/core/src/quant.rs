//! INT8 token vectors and the 4-bit MSB/LSB split shared by the CIM array
//! and the digital core.
//!
//! An element `x` is split as `x = 16 * msb + lsb` with `msb = x >> 4`
//! (arithmetic shift, so floor division) and `lsb = x & 0xF`. The MSB nibble
//! is a signed 4-bit value in `[-8, 7]`, the LSB nibble is unsigned in
//! `[0, 15]`.

use crate::error::{Error, Result};

/// Embedding dimension of every token vector.
pub const DIM: usize = 64;

/// Number of tokens held by one CIM tile.
pub const TILE_TOKENS: usize = 64;

/// Bits per MSB nibble (and rows per token in the array).
pub const NIBBLE_BITS: usize = 4;

/// Two's-complement bit weights of a signed 4-bit value, LSB first.
pub const BIT_WEIGHTS: [i32; NIBBLE_BITS] = [1, 2, 4, -8];

/// A 64-element signed 8-bit embedding vector (a q, k or v token).
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct TokenVector([i8; DIM]);

impl TokenVector {
    pub const ZERO: TokenVector = TokenVector([0; DIM]);

    pub fn new(elems: [i8; DIM]) -> Self {
        Self(elems)
    }

    pub fn splat(x: i8) -> Self {
        Self([x; DIM])
    }

    /// Builds a vector from wider integers, rejecting anything outside INT8.
    pub fn from_ints(values: &[i64]) -> Result<Self> {
        if values.len() != DIM {
            return Err(Error::LengthMismatch {
                expected: DIM,
                actual: values.len(),
            });
        }
        let mut elems = [0i8; DIM];
        for (dst, &v) in elems.iter_mut().zip(values) {
            *dst = i8::try_from(v).map_err(|_| Error::OutOfRange { value: v })?;
        }
        Ok(Self(elems))
    }

    pub fn from_slice(values: &[i8]) -> Result<Self> {
        let elems: [i8; DIM] = values.try_into().map_err(|_| Error::LengthMismatch {
            expected: DIM,
            actual: values.len(),
        })?;
        Ok(Self(elems))
    }

    pub fn elems(&self) -> &[i8; DIM] {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&x| x == 0)
    }

    /// Exact INT8 dot product.
    pub fn dot(&self, other: &TokenVector) -> i32 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(&a, &b)| a as i32 * b as i32)
            .sum()
    }
}

impl std::fmt::Debug for TokenVector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_tuple("TokenVector").field(&&self.0[..]).finish()
    }
}

impl From<[i8; DIM]> for TokenVector {
    fn from(elems: [i8; DIM]) -> Self {
        Self(elems)
    }
}

/// MSB and LSB nibbles of a token vector.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct NibblePlanes {
    msb: [i8; DIM],
    lsb: [u8; DIM],
}

impl NibblePlanes {
    /// Validates nibble ranges: msb in `[-8, 7]`, lsb in `[0, 15]`.
    pub fn new(msb: [i8; DIM], lsb: [u8; DIM]) -> Result<Self> {
        if let Some(&m) = msb.iter().find(|&&m| !(-8..=7).contains(&m)) {
            return Err(Error::OutOfRange { value: m as i64 });
        }
        if let Some(&l) = lsb.iter().find(|&&l| l > 15) {
            return Err(Error::OutOfRange { value: l as i64 });
        }
        Ok(Self { msb, lsb })
    }

    /// Planes with the given MSB nibbles and zero LSBs.
    pub fn from_msb(msb: [i8; DIM]) -> Result<Self> {
        Self::new(msb, [0; DIM])
    }

    pub fn msb(&self) -> &[i8; DIM] {
        &self.msb
    }

    pub fn lsb(&self) -> &[u8; DIM] {
        &self.lsb
    }

    /// Recombines `16 * msb + lsb`.
    pub fn reconstruct(&self) -> TokenVector {
        let mut elems = [0i8; DIM];
        for (n, e) in elems.iter_mut().enumerate() {
            *e = (16 * self.msb[n] as i16 + self.lsb[n] as i16) as i8;
        }
        TokenVector(elems)
    }

    /// 64-bit mask with bit `n` set where the MSB nibble is nonzero.
    pub fn nonzero_mask(&self) -> u64 {
        self.msb
            .iter()
            .enumerate()
            .filter(|(_, &m)| m != 0)
            .fold(0u64, |acc, (n, _)| acc | (1u64 << n))
    }
}

impl std::fmt::Debug for NibblePlanes {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NibblePlanes")
            .field("msb", &&self.msb[..])
            .field("lsb", &&self.lsb[..])
            .finish()
    }
}

/// Two's-complement bit decomposition of the 64 MSB nibbles of one token.
///
/// `rows[b]` has bit `n` set when bit `b` of `msb[n]` is one. This is the
/// physical layout of one token in the array: four rows (one per bit
/// position) by 64 columns (one per element).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct BitPlane {
    rows: [u64; NIBBLE_BITS],
}

impl BitPlane {
    pub fn from_rows(rows: [u64; NIBBLE_BITS]) -> Self {
        Self { rows }
    }

    pub fn rows(&self) -> &[u64; NIBBLE_BITS] {
        &self.rows
    }

    pub fn row(&self, b: usize) -> u64 {
        self.rows[b]
    }

    pub fn bit(&self, n: usize, b: usize) -> bool {
        (self.rows[b] >> n) & 1 == 1
    }

    /// Weighted recombination of element `n`.
    pub fn msb(&self, n: usize) -> i8 {
        (0..NIBBLE_BITS)
            .filter(|&b| self.bit(n, b))
            .map(|b| BIT_WEIGHTS[b])
            .sum::<i32>() as i8
    }

    pub fn msb_all(&self) -> [i8; DIM] {
        std::array::from_fn(|n| self.msb(n))
    }
}

pub fn split_nibbles(v: &TokenVector) -> NibblePlanes {
    let mut msb = [0i8; DIM];
    let mut lsb = [0u8; DIM];
    for (n, &x) in v.elems().iter().enumerate() {
        msb[n] = x >> 4;
        lsb[n] = (x as u8) & 0x0F;
    }
    NibblePlanes { msb, lsb }
}

pub fn to_bitplane(p: &NibblePlanes) -> BitPlane {
    let mut rows = [0u64; NIBBLE_BITS];
    for (n, &m) in p.msb().iter().enumerate() {
        let bits = (m as u8) & 0x0F;
        for (b, row) in rows.iter_mut().enumerate() {
            if (bits >> b) & 1 == 1 {
                *row |= 1u64 << n;
            }
        }
    }
    BitPlane { rows }
}

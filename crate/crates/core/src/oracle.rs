//! Brute-force references used to check the analog and digital paths.
//!
//! Nothing here goes through bit planes, the CIM array or the digital core;
//! each function is a direct loop over integer elements.

use crate::quant::{NibblePlanes, TokenVector, DIM};
use crate::real::Real;

/// Half-width of the band around the threshold where a wrong decision does
/// not matter (9-bit resolution out of a 14-bit score range).
pub const DEAD_ZONE: i64 = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OracleScore {
    /// Dot product of the signed 4-bit MSB nibbles.
    pub score4: i32,
    /// Full INT8 dot product.
    pub score8: i32,
}

impl OracleScore {
    pub fn of(q: &TokenVector, k: &TokenVector) -> Self {
        let msb = |v: &TokenVector| -> [i32; DIM] { std::array::from_fn(|n| (v.elems()[n] as i32).div_euclid(16)) };
        let (qm, km) = (msb(q), msb(k));
        Self {
            score4: (0..DIM).map(|n| qm[n] * km[n]).sum(),
            score8: (0..DIM).map(|n| q.elems()[n] as i32 * k.elems()[n] as i32).sum(),
        }
    }
}

pub fn score4_bruteforce(q: &NibblePlanes, k: &NibblePlanes) -> i32 {
    let mut acc = 0i32;
    for n in 0..DIM {
        acc += q.msb()[n] as i32 * k.msb()[n] as i32;
    }
    acc
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DeadZoneClass {
    MustKeep,
    MustPrune,
    DontCare,
}

pub fn deadzone_classifier(score4: i64, theta: i64) -> DeadZoneClass {
    let gap = score4 as i128 - theta as i128;
    if gap.abs() < DEAD_ZONE as i128 {
        DeadZoneClass::DontCare
    } else if gap > 0 {
        DeadZoneClass::MustKeep
    } else {
        DeadZoneClass::MustPrune
    }
}

/// Unpruned attention `softmax(scale * q K^T) V` over every token.
pub fn reference_attention<R: Real>(q: &TokenVector, keys: &[TokenVector], values: &[TokenVector], scale: R) -> Vec<R> {
    assert_eq!(keys.len(), values.len(), "one value per key");
    if keys.is_empty() {
        return vec![R::zero(); DIM];
    }
    let logits: Vec<R> = keys
        .iter()
        .map(|k| {
            let mut s = 0i64;
            for n in 0..DIM {
                s += q.elems()[n] as i64 * k.elems()[n] as i64;
            }
            scale * R::of(s as f64)
        })
        .collect();
    let mut max = logits[0];
    for &l in &logits[1..] {
        if l > max {
            max = l;
        }
    }
    let mut denom = R::zero();
    let mut out = vec![R::zero(); DIM];
    for (l, v) in logits.iter().zip(values) {
        let e = (*l - max).exp();
        denom += e;
        for n in 0..DIM {
            out[n] += e * R::of(v.elems()[n] as f64);
        }
    }
    for o in &mut out {
        *o /= denom;
    }
    out
}

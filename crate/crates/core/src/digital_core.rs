//! High-precision path: overlap detection, exact INT8 rescoring of the
//! surviving tokens, softmax and the value-weighted sum.

use crate::error::{Error, Result};
use crate::quant::{NibblePlanes, TokenVector, DIM};
use crate::real::Real;

/// Per-query pruning vector `U`: bit `j` set means token `j` survives.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct PruneMask(pub u64);

impl PruneMask {
    pub const EMPTY: PruneMask = PruneMask(0);

    /// All of the first `tokens` tokens kept.
    pub fn full(tokens: usize) -> Self {
        if tokens >= 64 {
            Self(u64::MAX)
        } else {
            Self((1u64 << tokens) - 1)
        }
    }

    pub fn from_tokens(ids: impl IntoIterator<Item = usize>) -> Self {
        Self(ids.into_iter().fold(0, |m, j| m | (1u64 << j)))
    }

    pub fn set(&mut self, j: usize, keep: bool) {
        if keep {
            self.0 |= 1 << j;
        } else {
            self.0 &= !(1 << j);
        }
    }

    pub fn contains(&self, j: usize) -> bool {
        j < 64 && (self.0 >> j) & 1 == 1
    }

    pub fn count(&self) -> u32 {
        self.0.count_ones()
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    /// Token ids, ascending.
    pub fn iter(&self) -> impl Iterator<Item = usize> {
        let bits = self.0;
        (0..64).filter(move |&j| (bits >> j) & 1 == 1)
    }
}

impl std::fmt::Debug for PruneMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "PruneMask({:#018x})", self.0)
    }
}

/// Tokens currently held in the digital core's local register file.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OverlapCache {
    resident: PruneMask,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FetchPlan {
    /// Unpruned tokens that must be read from the array.
    pub fetch: PruneMask,
    /// Unpruned tokens already resident.
    pub reused: PruneMask,
    /// `|reused| / |unpruned|`, 1 when nothing survived.
    pub reuse_rate: f64,
}

impl OverlapCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn resident(&self) -> PruneMask {
        self.resident
    }

    /// Works out which surviving tokens must be fetched and makes the
    /// survivors the new resident set.
    pub fn plan_fetch(&mut self, u: PruneMask) -> FetchPlan {
        let reused = PruneMask(u.0 & self.resident.0);
        let fetch = PruneMask(u.0 & !self.resident.0);
        let reuse_rate = if u.is_empty() {
            1.0
        } else {
            reused.count() as f64 / u.count() as f64
        };
        self.resident = u;
        FetchPlan {
            fetch,
            reused,
            reuse_rate,
        }
    }
}

/// Full-precision score from the query and the key's two nibble planes.
pub fn exact_score(q: &TokenVector, k: &NibblePlanes) -> i32 {
    let (msb, lsb) = (k.msb(), k.lsb());
    q.elems()
        .iter()
        .enumerate()
        .map(|(n, &x)| x as i32 * (16 * msb[n] as i32 + lsb[n] as i32))
        .sum()
}

/// Numerically stable softmax of `scale * scores`.
pub fn softmax_weights<R: Real>(scores: &[i64], scale: R) -> Result<Vec<R>> {
    if scores.is_empty() {
        return Err(Error::EmptyScores);
    }
    let logits: Vec<R> = scores.iter().map(|&s| scale * R::of(s as f64)).collect();
    let max = logits.iter().copied().fold(R::neg_infinity(), R::max);
    let exps: Vec<R> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total = exps.iter().copied().fold(R::zero(), |a, b| a + b);
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// `sum_j w_j * v_j`.
pub fn attend<R: Real>(weights: &[R], values: &[&TokenVector]) -> Result<[R; DIM]> {
    if weights.len() != values.len() {
        return Err(Error::LengthMismatch {
            expected: weights.len(),
            actual: values.len(),
        });
    }
    let mut out = [R::zero(); DIM];
    for (&w, v) in weights.iter().zip(values) {
        for (o, &x) in out.iter_mut().zip(v.elems()) {
            *o += w * R::of(x as f64);
        }
    }
    Ok(out)
}

/// Digital-core output for one query.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionResult<R> {
    /// Surviving token ids, ascending.
    pub tokens: Vec<usize>,
    pub exact_scores: Vec<i64>,
    pub weights: Vec<R>,
    pub output: [R; DIM],
}

impl<R: Real> AttentionResult<R> {
    /// Result of a query whose every token was pruned.
    pub fn fully_pruned() -> Self {
        Self {
            tokens: Vec::new(),
            exact_scores: Vec::new(),
            weights: Vec::new(),
            output: [R::zero(); DIM],
        }
    }

    pub fn is_fully_pruned(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Rescores the surviving tokens exactly and forms the attention output.
/// `keys` and `values` are indexed by token id.
pub fn compute_attention<R: Real>(
    q: &TokenVector,
    survivors: PruneMask,
    keys: &[NibblePlanes],
    values: &[TokenVector],
    scale: R,
) -> Result<AttentionResult<R>> {
    if survivors.is_empty() {
        return Ok(AttentionResult::fully_pruned());
    }
    let tokens: Vec<usize> = survivors.iter().collect();
    if let Some(&j) = tokens.iter().find(|&&j| j >= keys.len() || j >= values.len()) {
        return Err(Error::TokenOutOfRange(j));
    }
    let exact_scores: Vec<i64> = tokens.iter().map(|&j| exact_score(q, &keys[j]) as i64).collect();
    let weights = softmax_weights(&exact_scores, scale)?;
    let vs: Vec<&TokenVector> = tokens.iter().map(|&j| &values[j]).collect();
    let output = attend(&weights, &vs)?;
    Ok(AttentionResult {
        tokens,
        exact_scores,
        weights,
        output,
    })
}

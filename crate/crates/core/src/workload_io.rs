//! Workloads, the `CIMT` tensor file format and simulator configuration.
//!
//! # Tensor files
//!
//! Little-endian, a 16-byte header followed by a row-major INT8 payload:
//!
//! | offset | size | field                       |
//! |--------|------|-----------------------------|
//! | 0      | 4    | magic `b"CIMT"`             |
//! | 4      | 2    | version (`1`)               |
//! | 6      | 2    | rows                        |
//! | 8      | 2    | cols                        |
//! | 10     | 1    | dtype (`0` = int8)          |
//! | 11     | 5    | reserved, must be zero      |
//! | 16     | r*c  | payload                     |
//!
//! # Workload directories
//!
//! A workload is a directory holding `q.cimt`, `k.cimt`, `v.cimt` (one token
//! per row, 64 columns) and an optional `workload.toml` with metadata.
//! Key/value sequences longer than one tile are split into 64-token tiles on
//! load; every tile sees the full query list.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline_energy::CostConfig;
use crate::quant::{TokenVector, DIM, TILE_TOKENS};
use crate::rng::{substream, STREAM_WORKLOAD};

pub const MAGIC: [u8; 4] = *b"CIMT";
pub const FORMAT_VERSION: u16 = 1;
pub const DTYPE_INT8: u8 = 0;
pub const HEADER_LEN: usize = 16;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tensor {
    rows: u16,
    cols: u16,
    data: Vec<i8>,
}

impl Tensor {
    pub fn new(rows: u16, cols: u16, data: Vec<i8>) -> Result<Self> {
        let expected = rows as usize * cols as usize;
        if data.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                actual: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a tensor from wider integers, rejecting values outside INT8.
    pub fn from_ints(rows: u16, cols: u16, values: &[i64]) -> Result<Self> {
        let data = values
            .iter()
            .map(|&v| i8::try_from(v).map_err(|_| Error::OutOfRange { value: v }))
            .collect::<Result<Vec<_>>>()?;
        Self::new(rows, cols, data)
    }

    pub fn from_tokens(tokens: &[TokenVector]) -> Result<Self> {
        let rows =
            u16::try_from(tokens.len()).map_err(|_| Error::Format(format!("{} rows exceed u16", tokens.len())))?;
        let data = tokens.iter().flat_map(|t| t.elems().iter().copied()).collect();
        Self::new(rows, DIM as u16, data)
    }

    pub fn rows(&self) -> usize {
        self.rows as usize
    }

    pub fn cols(&self) -> usize {
        self.cols as usize
    }

    pub fn data(&self) -> &[i8] {
        &self.data
    }

    pub fn to_tokens(&self) -> Result<Vec<TokenVector>> {
        if self.cols as usize != DIM {
            return Err(Error::Format(format!(
                "expected {DIM} columns per token, got {}",
                self.cols
            )));
        }
        self.data.chunks_exact(DIM).map(TokenVector::from_slice).collect()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.data.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.rows.to_le_bytes());
        out.extend_from_slice(&self.cols.to_le_bytes());
        out.push(DTYPE_INT8);
        out.extend_from_slice(&[0u8; 5]);
        out.extend(self.data.iter().map(|&x| x as u8));
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() || bytes[..4] != MAGIC {
            return Err(Error::Format("bad magic, expected CIMT".into()));
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::LengthMismatch {
                expected: HEADER_LEN,
                actual: bytes.len(),
            });
        }
        let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
        let version = u16_at(4);
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let (rows, cols) = (u16_at(6), u16_at(8));
        if bytes[10] != DTYPE_INT8 {
            return Err(Error::Format(format!("unsupported dtype {}", bytes[10])));
        }
        if bytes[11..HEADER_LEN].iter().any(|&b| b != 0) {
            return Err(Error::Format("reserved header bytes must be zero".into()));
        }
        let payload = &bytes[HEADER_LEN..];
        let expected = rows as usize * cols as usize;
        if payload.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                actual: payload.len(),
            });
        }
        Ok(Self {
            rows,
            cols,
            data: payload.iter().map(|&b| b as i8).collect(),
        })
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn save_tensor(path: &Path, tensor: &Tensor) -> Result<()> {
    fs::write(path, tensor.encode()).map_err(io_err(path))
}

pub fn load_tensor(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Tensor::decode(&bytes)
}

/// Element distribution of generated keys and queries.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScoreDistribution {
    /// Independent uniform INT8 elements; scores spread symmetrically around zero.
    Uniform,
    /// Keys and queries are jittered copies of a few shared centroids, so a
    /// query scores high against keys of its own cluster.
    Clustered { clusters: u32 },
}

impl std::str::FromStr for ScoreDistribution {
    type Err = Error;

    /// `uniform` or `clustered:<n>`.
    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            None if s == "uniform" => Ok(Self::Uniform),
            Some(("clustered", n)) => n
                .parse()
                .map(|clusters| Self::Clustered { clusters })
                .map_err(|_| Error::InvalidSpec(format!("bad cluster count {n:?}"))),
            _ => Err(Error::InvalidSpec(format!("unknown distribution {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub name: String,
    pub tokens: usize,
    pub queries: usize,
    /// Fraction of query elements that are zero.
    pub q_sparsity: f64,
    pub distribution: ScoreDistribution,
    pub seed: u64,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        Self {
            name: "synthetic".into(),
            tokens: TILE_TOKENS,
            queries: TILE_TOKENS,
            q_sparsity: 0.5,
            distribution: ScoreDistribution::Uniform,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkloadMeta {
    pub name: String,
    pub seed: u64,
    pub q_sparsity: f64,
}

impl Default for WorkloadMeta {
    fn default() -> Self {
        Self {
            name: "unnamed".into(),
            seed: 0,
            q_sparsity: 0.0,
        }
    }
}

/// Queries plus one tile of keys and values.
#[derive(Clone, Debug, PartialEq)]
pub struct Workload {
    pub meta: WorkloadMeta,
    pub queries: Vec<TokenVector>,
    pub keys: Vec<TokenVector>,
    pub values: Vec<TokenVector>,
}

impl Workload {
    pub fn new(
        meta: WorkloadMeta,
        queries: Vec<TokenVector>,
        keys: Vec<TokenVector>,
        values: Vec<TokenVector>,
    ) -> Result<Self> {
        if keys.len() != values.len() {
            return Err(Error::LengthMismatch {
                expected: keys.len(),
                actual: values.len(),
            });
        }
        if keys.len() > TILE_TOKENS {
            return Err(Error::InvalidSpec(format!(
                "{} keys exceed one {TILE_TOKENS}-token tile",
                keys.len()
            )));
        }
        Ok(Self {
            meta,
            queries,
            keys,
            values,
        })
    }

    pub fn tokens(&self) -> usize {
        self.keys.len()
    }

    /// Realized fraction of zero query elements.
    pub fn q_sparsity(&self) -> f64 {
        if self.queries.is_empty() {
            return 0.0;
        }
        let zeros: usize = self
            .queries
            .iter()
            .map(|q| q.elems().iter().filter(|&&x| x == 0).count())
            .sum();
        zeros as f64 / (self.queries.len() * DIM) as f64
    }
}

/// Splits an arbitrary-length key/value sequence into tiles.
pub fn tile_sequence(
    meta: &WorkloadMeta,
    queries: &[TokenVector],
    keys: &[TokenVector],
    values: &[TokenVector],
) -> Result<Vec<Workload>> {
    if keys.len() != values.len() {
        return Err(Error::LengthMismatch {
            expected: keys.len(),
            actual: values.len(),
        });
    }
    if keys.is_empty() {
        return Ok(vec![Workload::new(meta.clone(), queries.to_vec(), vec![], vec![])?]);
    }
    keys.chunks(TILE_TOKENS)
        .zip(values.chunks(TILE_TOKENS))
        .map(|(k, v)| Workload::new(meta.clone(), queries.to_vec(), k.to_vec(), v.to_vec()))
        .collect()
}

fn workload_paths(dir: &Path) -> [PathBuf; 4] {
    ["q.cimt", "k.cimt", "v.cimt", "workload.toml"].map(|f| dir.join(f))
}

pub fn save_workload(dir: &Path, w: &Workload) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let [q, k, v, meta] = workload_paths(dir);
    save_tensor(&q, &Tensor::from_tokens(&w.queries)?)?;
    save_tensor(&k, &Tensor::from_tokens(&w.keys)?)?;
    save_tensor(&v, &Tensor::from_tokens(&w.values)?)?;
    let text = toml::to_string(&w.meta).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(&meta, text).map_err(io_err(&meta))
}

/// Loads a workload directory, one [`Workload`] per 64-token tile.
pub fn load_workload(dir: &Path) -> Result<Vec<Workload>> {
    let [q, k, v, meta_path] = workload_paths(dir);
    let queries = load_tensor(&q)?.to_tokens()?;
    let keys = load_tensor(&k)?.to_tokens()?;
    let values = load_tensor(&v)?.to_tokens()?;
    let meta = if meta_path.exists() {
        let text = fs::read_to_string(&meta_path).map_err(io_err(&meta_path))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", meta_path.display())))?
    } else {
        WorkloadMeta::default()
    };
    tile_sequence(&meta, &queries, &keys, &values)
}

fn random_token<G: Rng>(rng: &mut G) -> TokenVector {
    TokenVector::new(std::array::from_fn(|_| rng.random()))
}

fn jittered<G: Rng>(rng: &mut G, centre: i8) -> i8 {
    (centre as i16 + rng.random_range(-12i16..=12)).clamp(-128, 127) as i8
}

/// Draws until the element's 4-bit MSB is nonzero, i.e. outside `0..=15`,
/// so that element sparsity and MSB sparsity coincide.
fn nonzero_msb<G: Rng>(rng: &mut G, mut draw: impl FnMut(&mut G) -> i8) -> i8 {
    for _ in 0..64 {
        let x = draw(rng);
        if !(0..=15).contains(&x) {
            return x;
        }
    }
    16
}

pub fn generate_workload(spec: &WorkloadSpec) -> Result<Workload> {
    if spec.tokens == 0 || spec.tokens > TILE_TOKENS {
        return Err(Error::InvalidSpec(format!(
            "tokens must be in 1..={TILE_TOKENS}, got {}",
            spec.tokens
        )));
    }
    if spec.queries == 0 {
        return Err(Error::InvalidSpec("at least one query is required".into()));
    }
    if !(0.0..=1.0).contains(&spec.q_sparsity) {
        return Err(Error::InvalidSpec(format!(
            "q_sparsity must be in [0, 1], got {}",
            spec.q_sparsity
        )));
    }
    if let ScoreDistribution::Clustered { clusters: 0 } = spec.distribution {
        return Err(Error::InvalidSpec(
            "clustered distribution needs at least one cluster".into(),
        ));
    }

    let mut rng = substream(spec.seed, STREAM_WORKLOAD);
    let centroids: Vec<TokenVector> = match spec.distribution {
        ScoreDistribution::Uniform => vec![],
        ScoreDistribution::Clustered { clusters } => (0..clusters).map(|_| random_token(&mut rng)).collect(),
    };
    let member = |rng: &mut rand_chacha::ChaCha8Rng| -> Option<TokenVector> {
        if centroids.is_empty() {
            return None;
        }
        Some(centroids[rng_index(rng, centroids.len())])
    };

    let keys: Vec<TokenVector> = (0..spec.tokens)
        .map(|_| match member(&mut rng) {
            None => random_token(&mut rng),
            Some(c) => TokenVector::new(c.elems().map(|x| jittered(&mut rng, x))),
        })
        .collect();
    let values: Vec<TokenVector> = (0..spec.tokens).map(|_| random_token(&mut rng)).collect();

    let zeros_per_query = (spec.q_sparsity * DIM as f64).round() as usize;
    let mut positions: Vec<usize> = (0..DIM).collect();
    let queries = (0..spec.queries)
        .map(|_| {
            positions.shuffle(&mut rng);
            let zero: BTreeSet<usize> = positions[..zeros_per_query].iter().copied().collect();
            let centre = member(&mut rng);
            let mut elems = [0i8; DIM];
            for (n, e) in elems.iter_mut().enumerate() {
                if zero.contains(&n) {
                    continue;
                }
                *e = match centre {
                    None => nonzero_msb(&mut rng, |r| r.random()),
                    Some(c) => nonzero_msb(&mut rng, |r| jittered(r, c.elems()[n])),
                };
            }
            TokenVector::new(elems)
        })
        .collect();

    Workload::new(
        WorkloadMeta {
            name: spec.name.clone(),
            seed: spec.seed,
            q_sparsity: spec.q_sparsity,
        },
        queries,
        keys,
        values,
    )
}

fn rng_index<G: Rng>(rng: &mut G, len: usize) -> usize {
    rng.random_range(0..len)
}

/// Simulator configuration. Serialized as a flat TOML document; every field
/// has a default and unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Pruning threshold on the 4-bit score.
    pub threshold: i64,
    pub sscs: bool,
    /// Per-sample RBL noise, volts.
    pub sigma_rbl: f64,
    /// Comparator offset noise, volts.
    pub sigma_cmp: f64,
    pub v_pre: f64,
    pub softmax_scale: f64,
    pub seed: u64,
    #[serde(flatten)]
    pub cost: CostConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            threshold: 0,
            sscs: true,
            sigma_rbl: 0.0,
            sigma_cmp: 0.0,
            v_pre: 1.0,
            softmax_scale: 1.0 / (DIM as f64).sqrt(),
            seed: 0,
            cost: CostConfig::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_rbl >= 0.0) || !(self.sigma_cmp >= 0.0) {
            return Err(Error::Config("noise sigmas must be non-negative".into()));
        }
        if !(self.v_pre > 0.0 && self.v_pre.is_finite()) {
            return Err(Error::Config("v_pre must be positive".into()));
        }
        if !(self.softmax_scale > 0.0 && self.softmax_scale.is_finite()) {
            return Err(Error::Config("softmax_scale must be positive".into()));
        }
        self.cost.validate()
    }

    pub fn known_keys() -> BTreeSet<String> {
        match toml::Table::try_from(SimConfig::default()) {
            Ok(t) => t.keys().cloned().collect(),
            Err(_) => BTreeSet::new(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let known = Self::known_keys();
        if let Some(bad) = table.keys().find(|k| !known.contains(*k)) {
            return Err(Error::Config(format!("unknown key {bad:?}")));
        }
        let cfg: SimConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("flat config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

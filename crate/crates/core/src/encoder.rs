//! Hashed bag-of-words encoder with a linear projection, tanh and L2
//! normalization, plus an affine scoring head for joint claim/evidence input.
//!
//! Everything here is differentiable by hand: [`Encoded`] keeps the
//! intermediates of a forward pass and [`EncoderModel::backprop_embedding`]
//! pushes an upstream gradient back into a [`Gradient`].

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::sparse::tokenize;

/// Delimiter placed between claim and evidence for the joint input.
pub const SEP: &str = "[SEP]";

const HASH_SEED: u64 = 0x00da_c15e_ed00_0001;
const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Seeded FNV-1a: the seed's little-endian bytes are hashed before the data.
pub fn feature_hash(feature: &str) -> u64 {
    let mut h = FNV_OFFSET;
    for b in HASH_SEED.to_le_bytes().iter().chain(feature.as_bytes()) {
        h ^= u64::from(*b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Sparse feature vector: `(bucket, value)` sorted by bucket, no duplicates.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Features(pub Vec<(u32, f64)>);

impl Features {
    fn from_buckets(buckets: impl Iterator<Item = u32>) -> Self {
        let mut counts: BTreeMap<u32, f64> = BTreeMap::new();
        for b in buckets {
            *counts.entry(b).or_default() += 1.0;
        }
        Self(counts.into_iter().collect())
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Dense copy, for tests and small dimensions.
    pub fn to_dense(&self, hash_dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; hash_dim];
        for &(b, v) in &self.0 {
            out[b as usize] += v;
        }
        out
    }
}

/// Unigram and adjacent-bigram counts hashed into `hash_dim` buckets.
pub fn featurize(text: &str, hash_dim: usize) -> Features {
    assert!(hash_dim >= 1, "hash_dim must be positive");
    let tokens = tokenize(text);
    let h = hash_dim as u64;
    let unigrams = tokens.iter().map(|t| (feature_hash(t) % h) as u32);
    let bigrams = tokens
        .windows(2)
        .map(|w| (feature_hash(&format!("{}_{}", w[0], w[1])) % h) as u32);
    Features::from_buckets(unigrams.chain(bigrams))
}

/// Marks a term shared by claim and evidence; tokens never contain it.
const MATCH_PREFIX: char = '&';
/// Term-independent match counters, one per n-gram order.
const MATCH_UNIGRAM: &str = "&1";
const MATCH_BIGRAM: &str = "&2";

fn unigrams_and_bigrams(text: &str) -> Vec<String> {
    let tokens = tokenize(text);
    let bigrams: Vec<String> = tokens.windows(2).map(|w| format!("{}_{}", w[0], w[1])).collect();
    tokens.into_iter().chain(bigrams).collect()
}

/// Features of the joint string. With `interactions`, every distinct
/// unigram or bigram present on both sides also adds one `&term` feature
/// and one count to the match counter of its order.
pub fn cross_featurize(claim_text: &str, evidence_text: &str, hash_dim: usize, interactions: bool) -> Features {
    let joint = featurize(&joint_text(claim_text, evidence_text), hash_dim);
    if !interactions {
        return joint;
    }
    let claim: BTreeSet<String> = unigrams_and_bigrams(claim_text).into_iter().collect();
    let shared: BTreeSet<String> = unigrams_and_bigrams(evidence_text)
        .into_iter()
        .filter(|t| claim.contains(t))
        .collect();
    let h = hash_dim as u64;
    let bucket = |key: &str| (feature_hash(key) % h) as u32;
    let mut counts: BTreeMap<u32, f64> = joint.0.into_iter().collect();
    for t in &shared {
        *counts.entry(bucket(&format!("{MATCH_PREFIX}{t}"))).or_default() += 1.0;
        let order = if t.contains('_') { MATCH_BIGRAM } else { MATCH_UNIGRAM };
        *counts.entry(bucket(order)).or_default() += 1.0;
    }
    Features(counts.into_iter().collect())
}

/// The joint claim/evidence string fed to the cross scorer.
pub fn joint_text(claim_text: &str, evidence_text: &str) -> String {
    format!("{claim_text} {SEP} {evidence_text}")
}

/// Unit-norm embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Dot product of two unit vectors.
pub fn cosine(u: &Embedding, v: &Embedding) -> f64 {
    dot(&u.0, &v.0)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Forward-pass intermediates of one encoding.
#[derive(Debug, Clone)]
pub struct Encoded {
    /// L1-normalized input features.
    input: Vec<(u32, f64)>,
    /// tanh activations.
    act: Vec<f64>,
    act_norm: f64,
    pub embedding: Embedding,
}

impl Encoded {
    /// True when the embedding is the fixed fallback vector (no gradient).
    pub fn is_constant(&self) -> bool {
        self.input.is_empty()
    }
}

/// Sparse gradient of a scalar with respect to the model parameters.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Gradient {
    pub projection_rows: BTreeMap<u32, Vec<f64>>,
    pub head_weights: Vec<f64>,
    pub head_bias: f64,
}

impl Gradient {
    pub fn zeros(embed_dim: usize) -> Self {
        Self {
            projection_rows: BTreeMap::new(),
            head_weights: vec![0.0; embed_dim],
            head_bias: 0.0,
        }
    }

    fn row(&mut self, bucket: u32, d: usize) -> &mut Vec<f64> {
        self.projection_rows.entry(bucket).or_insert_with(|| vec![0.0; d])
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &Gradient, scale: f64) {
        let d = self.head_weights.len();
        for (&b, row) in &other.projection_rows {
            let dst = self.row(b, d);
            for (x, y) in dst.iter_mut().zip(row) {
                *x += scale * y;
            }
        }
        for (x, y) in self.head_weights.iter_mut().zip(&other.head_weights) {
            *x += scale * y;
        }
        self.head_bias += scale * other.head_bias;
    }

    pub fn scale(&mut self, s: f64) {
        self.projection_rows
            .values_mut()
            .flat_map(|r| r.iter_mut())
            .chain(self.head_weights.iter_mut())
            .for_each(|x| *x *= s);
        self.head_bias *= s;
    }

    pub fn max_abs(&self) -> f64 {
        self.projection_rows
            .values()
            .flatten()
            .chain(&self.head_weights)
            .chain(std::iter::once(&self.head_bias))
            .fold(0.0f64, |m, x| m.max(x.abs()))
    }

    /// Gradient entry for projection cell `(bucket, k)`.
    pub fn projection(&self, bucket: u32, k: usize) -> f64 {
        self.projection_rows.get(&bucket).map_or(0.0, |r| r[k])
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.projection_rows.values().flatten().any(|x| !x.is_finite()) {
            return Err(Error::Numerical("projection gradient".into()));
        }
        if self.head_weights.iter().any(|x| !x.is_finite()) || !self.head_bias.is_finite() {
            return Err(Error::Numerical("score head gradient".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    hash_dim: usize,
    embed_dim: usize,
    seed: u64,
    /// Row-major `hash_dim x embed_dim`.
    projection: Vec<f64>,
    head_weights: Vec<f64>,
    head_bias: f64,
    /// Adds claim/evidence term-match features to the joint input.
    cross_interactions: bool,
}

impl EncoderModel {
    /// Random initialization: projection entries uniform in `[-1, 1]`,
    /// head weights uniform in `[-1/sqrt(d), 1/sqrt(d)]`, zero bias.
    pub fn new(hash_dim: usize, embed_dim: usize, seed: u64) -> Result<Self> {
        Self::check_dims(hash_dim, embed_dim)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let projection = (0..hash_dim * embed_dim).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let a = 1.0 / (embed_dim as f64).sqrt();
        let head_weights = (0..embed_dim).map(|_| rng.random_range(-a..=a)).collect();
        Ok(Self {
            hash_dim,
            embed_dim,
            seed,
            projection,
            head_weights,
            head_bias: 0.0,
            cross_interactions: true,
        })
    }

    pub fn with_cross_interactions(mut self, on: bool) -> Self {
        self.cross_interactions = on;
        self
    }

    pub fn cross_interactions(&self) -> bool {
        self.cross_interactions
    }

    pub fn from_parts(
        hash_dim: usize,
        embed_dim: usize,
        seed: u64,
        projection: Vec<f64>,
        head_weights: Vec<f64>,
        head_bias: f64,
    ) -> Result<Self> {
        Self::check_dims(hash_dim, embed_dim)?;
        if projection.len() != hash_dim * embed_dim || head_weights.len() != embed_dim {
            return Err(Error::Config("parameter block sizes do not match dimensions".into()));
        }
        let m = Self {
            hash_dim,
            embed_dim,
            seed,
            projection,
            head_weights,
            head_bias,
            cross_interactions: true,
        };
        m.check_finite()?;
        Ok(m)
    }

    fn check_dims(hash_dim: usize, embed_dim: usize) -> Result<()> {
        if embed_dim < 2 || hash_dim < embed_dim {
            return Err(Error::Config(format!(
                "encoder dims need d >= 2 and H >= d (H={hash_dim}, d={embed_dim})"
            )));
        }
        Ok(())
    }

    pub fn hash_dim(&self) -> usize {
        self.hash_dim
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn projection(&self) -> &[f64] {
        &self.projection
    }

    pub fn projection_mut(&mut self) -> &mut [f64] {
        &mut self.projection
    }

    pub fn head_weights(&self) -> &[f64] {
        &self.head_weights
    }

    pub fn head_weights_mut(&mut self) -> &mut [f64] {
        &mut self.head_weights
    }

    pub fn head_bias(&self) -> f64 {
        self.head_bias
    }

    pub fn set_head_bias(&mut self, b: f64) {
        self.head_bias = b;
    }

    pub fn featurize(&self, text: &str) -> Features {
        featurize(text, self.hash_dim)
    }

    pub fn encode(&self, text: &str) -> Embedding {
        self.encode_features(&self.featurize(text)).embedding
    }

    /// Forward pass from precomputed features.
    pub fn encode_features(&self, features: &Features) -> Encoded {
        let d = self.embed_dim;
        let total: f64 = features.0.iter().map(|&(_, c)| c).sum();
        if total <= 0.0 {
            return self.constant_encoding();
        }
        let input: Vec<(u32, f64)> = features.0.iter().map(|&(b, c)| (b, c / total)).collect();
        let mut pre = vec![0.0; d];
        for &(b, v) in &input {
            let row = &self.projection[b as usize * d..(b as usize + 1) * d];
            for (p, w) in pre.iter_mut().zip(row) {
                *p += v * w;
            }
        }
        let act: Vec<f64> = pre.iter().map(|x| x.tanh()).collect();
        let act_norm = act.iter().map(|x| x * x).sum::<f64>().sqrt();
        if act_norm == 0.0 {
            return self.constant_encoding();
        }
        let z = act.iter().map(|x| x / act_norm).collect();
        Encoded {
            input,
            act,
            act_norm,
            embedding: Embedding(z),
        }
    }

    /// The basis vector `e_1`, used for inputs without features.
    fn constant_encoding(&self) -> Encoded {
        let mut z = vec![0.0; self.embed_dim];
        z[0] = 1.0;
        Encoded {
            input: Vec::new(),
            act: Vec::new(),
            act_norm: 1.0,
            embedding: Embedding(z),
        }
    }

    /// Accumulates `dL/dprojection` into `grad` given `upstream = dL/dz`.
    pub fn backprop_embedding(&self, enc: &Encoded, upstream: &[f64], grad: &mut Gradient) {
        if enc.is_constant() {
            return;
        }
        let d = self.embed_dim;
        let z = &enc.embedding.0;
        let zg = dot(z, upstream);
        // dz/dact = (I - z z^T) / |act|, dact/dpre = 1 - act^2
        let dpre: Vec<f64> = (0..d)
            .map(|k| (upstream[k] - z[k] * zg) / enc.act_norm * (1.0 - enc.act[k] * enc.act[k]))
            .collect();
        for &(b, v) in &enc.input {
            let row = grad.row(b, d);
            for (g, dp) in row.iter_mut().zip(&dpre) {
                *g += v * dp;
            }
        }
    }

    /// Joint encoding and affine score of a claim/evidence pair.
    pub fn cross_forward(&self, claim_text: &str, evidence_text: &str) -> (Encoded, f64) {
        let enc = self.encode_features(&self.cross_features(claim_text, evidence_text));
        let s = dot(&self.head_weights, &enc.embedding.0) + self.head_bias;
        (enc, s)
    }

    pub fn cross_features(&self, claim_text: &str, evidence_text: &str) -> Features {
        cross_featurize(claim_text, evidence_text, self.hash_dim, self.cross_interactions)
    }

    pub fn cross_score(&self, claim_text: &str, evidence_text: &str) -> f64 {
        self.cross_forward(claim_text, evidence_text).1
    }

    /// Accumulates the gradient of `upstream * score` for one cross pass.
    pub fn backprop_cross(&self, enc: &Encoded, upstream: f64, grad: &mut Gradient) {
        for (g, z) in grad.head_weights.iter_mut().zip(&enc.embedding.0) {
            *g += upstream * z;
        }
        grad.head_bias += upstream;
        let dz: Vec<f64> = self.head_weights.iter().map(|w| upstream * w).collect();
        self.backprop_embedding(enc, &dz, grad);
    }

    /// Plain SGD step: `theta -= lr * grad`.
    pub fn apply_gradient(&mut self, grad: &Gradient, lr: f64) -> Result<()> {
        grad.check_finite()?;
        let d = self.embed_dim;
        for (&b, row) in &grad.projection_rows {
            let dst = &mut self.projection[b as usize * d..(b as usize + 1) * d];
            for (w, g) in dst.iter_mut().zip(row) {
                *w -= lr * g;
            }
        }
        for (w, g) in self.head_weights.iter_mut().zip(&grad.head_weights) {
            *w -= lr * g;
        }
        self.head_bias -= lr * grad.head_bias;
        self.check_finite()
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.projection.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numerical("projection".into()));
        }
        if self.head_weights.iter().any(|x| !x.is_finite()) || !self.head_bias.is_finite() {
            return Err(Error::Numerical("score head".into()));
        }
        Ok(())
    }

    // Checkpoint layout, all little-endian:
    //   magic "DACLRCKP" | u32 version | u64 H | u64 d | u64 seed | u8 interactions
    //   | f64 x H*d projection | f64 x d head weights | f64 head bias
    const MAGIC: &'static [u8; 8] = b"DACLRCKP";
    const VERSION: u32 = 1;

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(37 + 8 * (self.projection.len() + self.embed_dim + 1));
        out.extend_from_slice(Self::MAGIC);
        out.extend_from_slice(&Self::VERSION.to_le_bytes());
        out.extend_from_slice(&(self.hash_dim as u64).to_le_bytes());
        out.extend_from_slice(&(self.embed_dim as u64).to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.push(u8::from(self.cross_interactions));
        for x in self.projection.iter().chain(&self.head_weights) {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out.extend_from_slice(&self.head_bias.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Artifact(format!("checkpoint: {m}"));
        let mut r = bytes;
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != Self::MAGIC {
            return Err(bad("bad magic"));
        }
        let mut u32b = [0u8; 4];
        r.read_exact(&mut u32b).map_err(|_| bad("truncated header"))?;
        if u32::from_le_bytes(u32b) != Self::VERSION {
            return Err(bad("unsupported version"));
        }
        let read_u64 = |r: &mut &[u8]| -> Result<u64> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b).map_err(|_| bad("truncated"))?;
            Ok(u64::from_le_bytes(b))
        };
        let hash_dim = read_u64(&mut r)? as usize;
        let embed_dim = read_u64(&mut r)? as usize;
        let seed = read_u64(&mut r)?;
        let interactions = match r.split_first() {
            Some((0, rest)) => {
                r = rest;
                false
            }
            Some((1, rest)) => {
                r = rest;
                true
            }
            _ => return Err(bad("bad interaction flag")),
        };
        let n = hash_dim
            .checked_mul(embed_dim)
            .and_then(|n| n.checked_add(embed_dim + 1))
            .ok_or_else(|| bad("dimensions overflow"))?;
        if r.len() != n * 8 {
            return Err(bad(&format!("expected {} parameter bytes, found {}", n * 8, r.len())));
        }
        let mut params: Vec<f64> = r
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        let head_bias = params.pop().expect("n >= 1");
        let head_weights = params.split_off(hash_dim * embed_dim);
        Ok(Self::from_parts(hash_dim, embed_dim, seed, params, head_weights, head_bias)?.with_cross_interactions(interactions))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Stable hex digest of the checkpoint bytes.
    pub fn fingerprint(&self) -> String {
        let mut h = FNV_OFFSET;
        for b in self.to_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(FNV_PRIME);
        }
        format!("{h:016x}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_has_no_features() {
        assert!(featurize("", 8).is_empty());
        assert!(featurize("!!", 8).is_empty());
    }

    #[test]
    fn featurize_is_deterministic() {
        assert_eq!(featurize("Alice met Bob", 64), featurize("Alice met Bob", 64));
    }

    #[test]
    fn fnv_reference_values() {
        // FNV-1a 64 of the 8 seed bytes followed by the feature bytes,
        // traced independently in Python.
        assert_eq!(feature_hash("a"), 0x5421_bad5_ca70_2a3b);
        assert_eq!(feature_hash("b"), 0x5421_bbd5_ca70_2bee);
        assert_eq!(feature_hash("a_b"), 0x07cd_8d9f_3654_d64a);
    }

    #[test]
    fn featurize_a_b_trace() {
        // buckets mod 8 of the reference hashes: a -> 3, b -> 6, a_b -> 2
        let f = featurize("a b", 8);
        assert_eq!(f.0, [(2, 1.0), (3, 1.0), (6, 1.0)]);
    }

    #[test]
    fn encode_is_unit_norm_and_deterministic() {
        let m = EncoderModel::new(256, 8, 7).unwrap();
        for text in ["", "a", "Alice met Bob in Paris", "[Mask] met [Mask]"] {
            let e = m.encode(text);
            let n: f64 = e.0.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-9, "{text}: {n}");
            assert_eq!(e, m.encode(text));
        }
        assert_eq!(m.encode("").0[0], 1.0);
    }

    #[test]
    fn encode_hand_value() {
        // H=2, d=2, identity projection. "a" hashes to the odd bucket 1,
        // so pre = (0, 1), act = (0, tanh 1), z = (0, 1).
        // "a a b b": a, a, a_a, b_b -> bucket 1; b, b, a_b -> bucket 0.
        let m = EncoderModel::from_parts(2, 2, 0, vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0], 0.0).unwrap();
        assert_eq!(m.encode("a").0, [0.0, 1.0]);
        assert_eq!(featurize("a a b b", 2).0, [(0, 3.0), (1, 4.0)]);
        let (p0, p1) = ((3.0f64 / 7.0).tanh(), (4.0f64 / 7.0).tanh());
        let n = (p0 * p0 + p1 * p1).sqrt();
        let e = m.encode("a a b b");
        assert!((e.0[0] - p0 / n).abs() < 1e-15 && (e.0[1] - p1 / n).abs() < 1e-15);
    }

    #[test]
    fn cosine_examples() {
        let e1 = Embedding(vec![1.0, 0.0]);
        let e2 = Embedding(vec![0.0, 1.0]);
        assert_eq!(cosine(&e1, &e1), 1.0);
        assert_eq!(cosine(&e1, &e2), 0.0);
        let a = Embedding(vec![0.6, 0.8]);
        let b = Embedding(vec![0.8, 0.6]);
        assert!((cosine(&a, &b) - 0.96).abs() < 1e-15);
    }

    #[test]
    fn zero_head_scores_bias() {
        let mut m = EncoderModel::new(64, 4, 1).unwrap();
        m.head_weights_mut().iter_mut().for_each(|w| *w = 0.0);
        m.set_head_bias(0.25);
        assert_eq!(m.cross_score("a b", "c"), 0.25);
        assert_eq!(m.cross_score("x", "y z"), 0.25);
    }

    #[test]
    fn cross_score_hand_value() {
        let m = EncoderModel::from_parts(2, 2, 0, vec![1.0, 0.0, 0.0, 1.0], vec![0.5, -2.0], 0.1).unwrap();
        let z = m.encode(&joint_text("a", "b"));
        let expect = 0.5 * z.0[0] - 2.0 * z.0[1] + 0.1;
        assert!((m.cross_score("a", "b") - expect).abs() < 1e-15);
        assert_eq!(m.cross_score("a", "b"), m.cross_score("a", "b"));
    }

    #[test]
    fn checkpoint_round_trip_is_byte_stable() {
        let m = EncoderModel::new(32, 4, 99).unwrap();
        let bytes = m.to_bytes();
        let back = EncoderModel::from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_bytes(), bytes);
        assert!(EncoderModel::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn rejects_bad_dims() {
        assert!(EncoderModel::new(8, 1, 0).is_err());
        assert!(EncoderModel::new(4, 8, 0).is_err());
    }

    #[test]
    fn non_finite_update_is_reported() {
        let mut m = EncoderModel::new(16, 2, 0).unwrap();
        let mut g = Gradient::zeros(2);
        g.head_bias = f64::NAN;
        assert!(matches!(m.apply_gradient(&g, 0.1), Err(Error::Numerical(_))));
    }
}

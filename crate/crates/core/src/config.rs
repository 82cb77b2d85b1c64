//! Run configuration: one TOML file holding every tunable constant.
//!
//! Missing sections and keys fall back to their defaults; unknown keys are
//! rejected so typos surface at load time.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::encoder::EncoderModel;
use crate::error::{Error, Result};
use crate::sparse::{Bm25Params, PreselectParams};
use crate::summarizer::client::MllmClientConfig;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub hash_dim: usize,
    pub embed_dim: usize,
    /// Adds term-match features to the cross scorer input.
    pub cross_interactions: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            hash_dim: 1 << 15,
            embed_dim: 64,
            cross_interactions: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    /// Recall depth.
    pub p: usize,
    /// Rerank depth.
    pub q: usize,
    /// Cutoffs reported by `eval`.
    pub ks: Vec<usize>,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            p: 100,
            q: 10,
            ks: crate::eval::DEFAULT_KS.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Dataset directory (see [`crate::dataset`]).
    pub data_dir: PathBuf,
    /// Where indexes, checkpoints, runs, curves and reports go.
    pub out_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            data_dir: "data".into(),
            out_dir: "out".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_claims: usize,
    pub n_evidence: usize,
    pub n_clusters: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_claims: 200,
            n_evidence: 1000,
            n_clusters: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; overrides `train.rng_seed` and seeds model init and synth.
    pub seed: u64,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub bm25: Bm25Params,
    pub preselect: PreselectParams,
    pub retrieval: RetrievalConfig,
    pub paths: PathsConfig,
    pub mllm: MllmClientConfig,
    pub synth: SynthConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.encoder;
        if e.embed_dim < 2 || e.hash_dim < e.embed_dim {
            return Err(Error::Config("encoder needs embed_dim >= 2 and hash_dim >= embed_dim".into()));
        }
        self.train_config().validate()?;
        if !(self.bm25.k1 >= 0.0 && (0.0..=1.0).contains(&self.bm25.b)) {
            return Err(Error::Config("bm25 needs k1 >= 0 and b in [0, 1]".into()));
        }
        if self.preselect.pages == 0 || self.preselect.per_doc == 0 {
            return Err(Error::Config("preselect pages and per_doc must be >= 1".into()));
        }
        let r = &self.retrieval;
        if r.q == 0 || r.q >= r.p {
            return Err(Error::Config(format!("retrieval needs 1 <= q < p (q={}, p={})", r.q, r.p)));
        }
        if r.ks.is_empty() || r.ks.contains(&0) {
            return Err(Error::Config("retrieval.ks must be non-empty and positive".into()));
        }
        self.mllm.validate()?;
        let s = &self.synth;
        if s.n_clusters < 2 || s.n_evidence < s.n_claims {
            return Err(Error::Config("synth needs n_clusters >= 2 and n_evidence >= n_claims".into()));
        }
        Ok(())
    }

    /// Training settings with the master seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            rng_seed: self.seed,
            ..self.train.clone()
        }
    }

    /// Freshly initialized encoder for this configuration.
    pub fn new_model(&self) -> Result<EncoderModel> {
        Ok(EncoderModel::new(self.encoder.hash_dim, self.encoder.embed_dim, self.seed)?
            .with_cross_interactions(self.encoder.cross_interactions))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_defaults() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn round_trip() {
        let mut cfg = RunConfig::default();
        cfg.seed = 9;
        cfg.retrieval.q = 20;
        cfg.train.k = 8;
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn partial_sections() {
        let cfg = RunConfig::from_toml("seed = 3\n[retrieval]\np = 50\n").unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.retrieval.p, 50);
        assert_eq!(cfg.retrieval.q, 10);
        assert_eq!(cfg.train_config().rng_seed, 3);
    }

    #[test]
    fn rejects_bad_values() {
        for text in [
            "[retrieval]\np = 10\nq = 10\n",
            "[encoder]\nembed_dim = 1\n",
            "[train]\ndelta_min = 1.0\ndelta_max = 0.0\n",
            "[bm25]\nk1 = 1.2\nb = 2.0\n",
            "unknown = 1\n",
            "[synth]\nn_clusters = 1\n",
        ] {
            assert!(matches!(RunConfig::from_toml(text), Err(Error::Config(_))), "{text}");
        }
    }
}

//! Contrastive training with a margin-driven curriculum.
//!
//! Each step samples a batch, measures the positive/negative similarity gap
//! on negatives drawn with the current schedule, smooths it, maps it to a
//! hard-negative ratio `p_dyn` and loss mixture `beta = 1 - p_dyn`, draws the
//! training negatives with the new ratio and takes one SGD step on
//! `L_full + beta * L_sent + (1 - beta) * L_struct` plus the rerank loss.

mod loss;
mod negatives;
mod schedule;

pub use loss::{
    batch_margin, info_nce, info_nce_grad, loss_and_grad, loss_unit, loss_value, sample_loss, total_loss, LossParts,
    LossSpec, LossWeights, Sample, Temperatures, ViewFeatures,
};
pub use negatives::{mine_hard_negatives, split_counts, Allocation, NegativePools};
pub use schedule::{compute_mid, schedule, sigmoid, update_ema, SchedulerState, EMA_DECAY};

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tracing::{debug, info};

use crate::encoder::{EncoderModel, Gradient};
use crate::error::{Error, Result};
use crate::eval::Qrels;
use crate::event::{Claim, EvidenceDoc};
use crate::parallel;
use crate::pipeline::DenseIndex;

/// Switches for the ablation variants.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    /// Freeze `beta` at 1, which removes the structure loss.
    pub beta_one: bool,
    /// Draw every negative from the random pool.
    pub random_negatives_only: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// InfoNCE temperature.
    pub temperature: f64,
    /// Negatives per claim.
    pub k: usize,
    /// Sigmoid steepness of the schedule.
    pub tau_s: f64,
    pub delta_min: f64,
    pub delta_max: f64,
    /// Steps between validation evaluations (and checkpoints).
    pub u_eval: usize,
    /// Steps between hard-negative refreshes.
    pub u_hard: usize,
    /// Mined negatives kept per claim.
    pub mined_per_claim: usize,
    /// Depth of the fused sparse rankings that seed the sparse pool.
    pub sparse_depth: usize,
    /// Weight of the cross-scorer InfoNCE term added to the total loss.
    pub rerank_weight: f64,
    pub rerank_temperature: f64,
    pub rng_seed: u64,
    pub ablation: Ablation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 32,
            // Hashed, L1-normalized inputs give small per-row gradients.
            learning_rate: 10.0,
            temperature: 0.05,
            k: 16,
            tau_s: 0.1,
            delta_min: 0.0,
            // Cosine margins against hard negatives stay well below 1.
            delta_max: 0.6,
            u_eval: 50,
            u_hard: 20,
            mined_per_claim: 32,
            sparse_depth: 32,
            rerank_weight: 10.0,
            rerank_temperature: 3.0,
            rng_seed: 0,
            ablation: Ablation::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("train.epochs and train.batch_size must be >= 1");
        }
        if !(self.learning_rate > 0.0 && self.temperature > 0.0 && self.tau_s > 0.0 && self.rerank_temperature > 0.0) {
            return bad("train learning_rate, temperature, tau_s and rerank_temperature must be > 0");
        }
        if self.k < 2 {
            return bad("train.k must be >= 2");
        }
        if !(self.delta_min < self.delta_max) {
            return bad("train.delta_min must be < train.delta_max");
        }
        if self.u_eval == 0 || self.u_hard == 0 || self.mined_per_claim == 0 || self.sparse_depth == 0 {
            return bad("train.u_eval, u_hard, mined_per_claim and sparse_depth must be >= 1");
        }
        if !(self.rerank_weight >= 0.0) {
            return bad("train.rerank_weight must be >= 0");
        }
        Ok(())
    }

    pub fn temperatures(&self) -> Temperatures {
        Temperatures {
            contrastive: self.temperature,
            rerank: self.rerank_temperature,
        }
    }
}

/// One row of the training curve. Counts are batch means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: u64,
    pub delta_t: f64,
    pub ema_margin: f64,
    pub acc_val: f64,
    pub delta_mid: f64,
    pub p_dyn: f64,
    pub beta: f64,
    pub n_rand: f64,
    pub n_tb: f64,
    pub n_model: f64,
    pub l_full: f64,
    pub l_sent: f64,
    pub l_struct: f64,
    pub l_unit: f64,
    pub l_total: f64,
}

pub const CURVE_HEADER: &str =
    "step,delta_t,ema_margin,acc_val,delta_mid,p_dyn,beta,n_rand,n_tb,n_model,l_full,l_sent,l_struct,l_unit,l_total";

impl CurvePoint {
    fn values(&self) -> [f64; 14] {
        [
            self.delta_t,
            self.ema_margin,
            self.acc_val,
            self.delta_mid,
            self.p_dyn,
            self.beta,
            self.n_rand,
            self.n_tb,
            self.n_model,
            self.l_full,
            self.l_sent,
            self.l_struct,
            self.l_unit,
            self.l_total,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.values().iter().all(|v| v.is_finite())
    }
}

pub fn curve_to_csv(points: &[CurvePoint]) -> String {
    let mut out = String::from(CURVE_HEADER);
    out.push('\n');
    for p in points {
        let _ = write!(out, "{}", p.step);
        for v in p.values() {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

pub fn curve_from_csv(text: &str) -> Result<Vec<CurvePoint>> {
    let mut lines = text.lines();
    if lines.next() != Some(CURVE_HEADER) {
        return Err(Error::Artifact("curve file has an unexpected header".into()));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let bad = || Error::Artifact(format!("curve line {}: {line:?}", i + 2));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 15 {
                return Err(bad());
            }
            let step = f[0].parse().map_err(|_| bad())?;
            let v = f[1..]
                .iter()
                .map(|s| s.parse::<f64>().map_err(|_| bad()))
                .collect::<Result<Vec<_>>>()?;
            Ok(CurvePoint {
                step,
                delta_t: v[0],
                ema_margin: v[1],
                acc_val: v[2],
                delta_mid: v[3],
                p_dyn: v[4],
                beta: v[5],
                n_rand: v[6],
                n_tb: v[7],
                n_model: v[8],
                l_full: v[9],
                l_sent: v[10],
                l_struct: v[11],
                l_unit: v[12],
                l_total: v[13],
            })
        })
        .collect()
}

/// Claims, corpus, judgments and the training/validation split.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub claims: &'a [Claim],
    pub corpus: &'a [EvidenceDoc],
    pub qrels: &'a Qrels,
    pub train: &'a [String],
    pub validation: &'a [String],
}

/// Everything needed to continue a run besides the model itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Number of completed steps.
    pub steps_done: u64,
    pub scheduler: SchedulerState,
    pub pools: NegativePools,
    pub curve: Vec<CurvePoint>,
}

pub struct TrainOutput {
    pub model: EncoderModel,
    pub curve: Vec<CurvePoint>,
    pub state: TrainState,
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Directory for periodic `model.ckpt` / `state.json` snapshots.
    pub checkpoint_dir: Option<PathBuf>,
}

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const STATE_FILE: &str = "state.json";

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent stream for `(purpose, index)` under `seed`.
fn derived_rng(seed: u64, purpose: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(mix(seed ^ mix(purpose)) ^ index))
}

const RNG_SHUFFLE: u64 = 1;
const RNG_PROBE: u64 = 2;
const RNG_NEGATIVES: u64 = 3;
const RNG_POSITIVE: u64 = 4;

/// Feature cache for every claim and evidence item.
struct Prepared<'a> {
    claims: HashMap<&'a str, ViewFeatures>,
    evidence: HashMap<&'a str, ViewFeatures>,
    evidence_ids: Vec<String>,
}

impl<'a> Prepared<'a> {
    fn new(model: &EncoderModel, data: &TrainData<'a>) -> Result<Self> {
        let claim_feats = parallel::map(data.claims, |c| {
            let s = c.summary.as_ref().ok_or_else(|| Error::MissingSummary(c.id.clone()))?;
            ViewFeatures::new(model, s)
        });
        let ev_feats = parallel::map(data.corpus, |d| {
            let s = d.summary.as_ref().ok_or_else(|| Error::MissingSummary(d.id.clone()))?;
            ViewFeatures::new(model, s)
        });
        let claims = data
            .claims
            .iter()
            .zip(claim_feats)
            .map(|(c, f)| Ok((c.id.as_str(), f?)))
            .collect::<Result<HashMap<_, _>>>()?;
        let evidence = data
            .corpus
            .iter()
            .zip(ev_feats)
            .map(|(d, f)| Ok((d.id.as_str(), f?)))
            .collect::<Result<HashMap<_, _>>>()?;
        let evidence_ids: Vec<String> = data.corpus.iter().map(|d| d.id.clone()).collect();
        Ok(Self {
            claims,
            evidence,
            evidence_ids,
        })
    }

    fn claim(&self, id: &str) -> Result<&ViewFeatures> {
        self.claims.get(id).ok_or_else(|| Error::UnknownDoc(id.to_string()))
    }

    fn evidence(&self, id: &str) -> Result<&ViewFeatures> {
        self.evidence.get(id).ok_or_else(|| Error::UnknownDoc(id.to_string()))
    }

    fn corpus_index(&self, model: &EncoderModel, data: &TrainData<'_>) -> DenseIndex {
        let feats: Vec<_> = data.corpus.iter().map(|d| self.evidence[d.id.as_str()].full.clone()).collect();
        DenseIndex::from_features(model, self.evidence_ids.clone(), &feats)
    }
}

fn gold_of<'q>(qrels: &'q Qrels, claim: &str) -> Result<&'q BTreeSet<String>> {
    qrels
        .relevant(claim)
        .ok_or_else(|| Error::Config(format!("claim {claim} has no relevance judgments")))
}

/// Fraction of validation claims whose best-cosine evidence is relevant.
fn validation_accuracy(model: &EncoderModel, prep: &Prepared<'_>, data: &TrainData<'_>) -> Result<f64> {
    if data.validation.is_empty() {
        return Ok(0.0);
    }
    let index = prep.corpus_index(model, data);
    let hits = parallel::map(data.validation, |c| -> Result<bool> {
        let q = model.encode_features(&prep.claim(c)?.full).embedding;
        let top = index.top(c, &q.0, 1);
        let hit = top.ids().next().is_some_and(|id| data.qrels.is_relevant(c, id));
        Ok(hit)
    });
    let mut n = 0usize;
    for h in hits {
        n += usize::from(h?);
    }
    Ok(n as f64 / data.validation.len() as f64)
}

fn mine(model: &EncoderModel, prep: &Prepared<'_>, data: &TrainData<'_>, m: usize) -> Result<BTreeMap<String, Vec<String>>> {
    let index = prep.corpus_index(model, data);
    let rows: Vec<_> = (0..index.len()).map(|i| crate::encoder::Embedding(index.row(i).to_vec())).collect();
    let queries = data
        .train
        .iter()
        .map(|c| Ok((c.as_str(), model.encode_features(&prep.claim(c)?.full).embedding)))
        .collect::<Result<Vec<_>>>()?;
    Ok(mine_hard_negatives(&queries, index.ids(), &rows, data.qrels, m))
}

/// The batches of every epoch, in order.
fn batches(cfg: &TrainConfig, train: &[String]) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    for epoch in 0..cfg.epochs {
        let mut order = train.to_vec();
        order.shuffle(&mut derived_rng(cfg.rng_seed, RNG_SHUFFLE, epoch as u64));
        out.extend(order.chunks(cfg.batch_size).map(<[String]>::to_vec));
    }
    out
}

pub fn total_steps(cfg: &TrainConfig, n_train: usize) -> u64 {
    (cfg.epochs * n_train.div_ceil(cfg.batch_size)) as u64
}

fn pick_positive(seed: u64, step: u64, gold: &BTreeSet<String>) -> &String {
    use rand::Rng;
    let mut rng = derived_rng(seed, RNG_POSITIVE, step);
    let i = if gold.len() == 1 { 0 } else { rng.random_range(0..gold.len()) };
    gold.iter().nth(i).expect("non-empty gold set")
}

fn allocate(
    cfg: &TrainConfig,
    pools: &NegativePools,
    claim: &str,
    gold: &BTreeSet<String>,
    p_dyn: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Allocation> {
    if cfg.ablation.random_negatives_only {
        pools.allocate_random(claim, gold, rng)
    } else {
        pools.allocate(claim, gold, p_dyn, rng)
    }
}

fn save_checkpoint(dir: &Path, model: &EncoderModel, state: &TrainState) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    model.save(&dir.join(CHECKPOINT_FILE))?;
    let tmp = dir.join(format!("{STATE_FILE}.tmp"));
    std::fs::write(&tmp, serde_json::to_vec(state)?)?;
    std::fs::rename(tmp, dir.join(STATE_FILE))?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<(EncoderModel, TrainState)> {
    let model = EncoderModel::load(&dir.join(CHECKPOINT_FILE))?;
    let state = serde_json::from_slice(&std::fs::read(dir.join(STATE_FILE))?)?;
    Ok((model, state))
}

/// Fresh state with `d_rand`/`d_tb` built and `d_model` empty.
pub fn initial_state(cfg: &TrainConfig, data: &TrainData<'_>) -> Result<TrainState> {
    let pools = NegativePools::build(data.claims, data.corpus, data.qrels, cfg.k, cfg.sparse_depth)?;
    Ok(TrainState {
        steps_done: 0,
        scheduler: SchedulerState::new(cfg.tau_s, cfg.delta_min, cfg.delta_max),
        pools,
        curve: Vec::new(),
    })
}

/// Runs (or continues) training from `model` and `state`.
pub fn train(
    cfg: &TrainConfig,
    mut model: EncoderModel,
    mut state: TrainState,
    data: &TrainData<'_>,
    opts: &TrainOptions,
) -> Result<TrainOutput> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let prep = Prepared::new(&model, data)?;
    let temps = cfg.temperatures();
    let all_batches = batches(cfg, data.train);
    let n_steps = all_batches.len() as u64;

    for (t, batch) in all_batches.iter().enumerate() {
        let t = t as u64;
        if t < state.steps_done {
            continue;
        }
        let point = train_step(cfg, &mut model, &mut state, &prep, data, batch, t, &temps)?;
        debug!(step = t, p_dyn = point.p_dyn, l_total = point.l_total, "step");
        state.curve.push(point);
        state.steps_done = t + 1;

        if !cfg.ablation.random_negatives_only && state.steps_done % cfg.u_hard as u64 == 0 {
            let mined = mine(&model, &prep, data, cfg.mined_per_claim)?;
            state.pools.d_model.extend(mined);
            info!(step = t, "refreshed mined negatives");
        }
        if let Some(dir) = &opts.checkpoint_dir {
            if state.steps_done % cfg.u_eval as u64 == 0 || state.steps_done == n_steps {
                save_checkpoint(dir, &model, &state)?;
            }
        }
    }
    Ok(TrainOutput {
        curve: state.curve.clone(),
        model,
        state,
    })
}

#[allow(clippy::too_many_arguments)]
fn train_step(
    cfg: &TrainConfig,
    model: &mut EncoderModel,
    state: &mut TrainState,
    prep: &Prepared<'_>,
    data: &TrainData<'_>,
    batch: &[String],
    t: u64,
    temps: &Temperatures,
) -> Result<CurvePoint> {
    let seed = cfg.rng_seed;
    let golds = batch
        .iter()
        .map(|c| gold_of(data.qrels, c))
        .collect::<Result<Vec<_>>>()?;
    let positives: Vec<&ViewFeatures> = golds
        .iter()
        .map(|g| prep.evidence(pick_positive(seed, t, g)))
        .collect::<Result<_>>()?;

    // margin on negatives drawn with the schedule from the previous step
    let mut probe_rng = derived_rng(seed, RNG_PROBE, t);
    let probes = batch
        .iter()
        .zip(&golds)
        .map(|(c, g)| allocate(cfg, &state.pools, c, g, state.scheduler.p_dyn, &mut probe_rng))
        .collect::<Result<Vec<_>>>()?;
    let margins = (0..batch.len())
        .map(|i| -> Result<(f64, Vec<f64>)> {
            let zc = model.encode_features(&prep.claim(&batch[i])?.full).embedding;
            let sim = |f: &ViewFeatures| crate::encoder::cosine(&zc, &model.encode_features(&f.full).embedding);
            let negs = probes[i]
                .ids
                .iter()
                .map(|id| Ok(sim(prep.evidence(id)?)))
                .collect::<Result<Vec<_>>>()?;
            Ok((sim(positives[i]), negs))
        })
        .collect::<Result<Vec<_>>>()?;
    let delta_t = batch_margin(&margins);

    let sched = &mut state.scheduler;
    sched.observe_margin(delta_t);
    if t % cfg.u_eval as u64 == 0 {
        let acc = validation_accuracy(model, prep, data)?;
        sched.set_acc_val(acc);
        info!(step = t, acc_val = acc, "validation accuracy");
    }
    sched.refresh();
    sched.step = t;
    let p_dyn = sched.p_dyn;
    let beta = if cfg.ablation.beta_one { 1.0 } else { sched.beta };

    let mut neg_rng = derived_rng(seed, RNG_NEGATIVES, t);
    let allocs = batch
        .iter()
        .zip(&golds)
        .map(|(c, g)| allocate(cfg, &state.pools, c, g, p_dyn, &mut neg_rng))
        .collect::<Result<Vec<_>>>()?;
    let neg_feats = allocs
        .iter()
        .map(|a| a.ids.iter().map(|id| prep.evidence(id)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;

    let weights = LossWeights {
        rerank: cfg.rerank_weight,
        ..LossWeights::from(LossSpec::Total { beta })
    };
    let idx: Vec<usize> = (0..batch.len()).collect();
    let frozen: &EncoderModel = model;
    let per_claim = parallel::map(&idx, |&i| -> Result<(LossParts, Gradient)> {
        let sample = Sample {
            claim: prep.claim(&batch[i])?,
            positive: positives[i],
            negatives: &neg_feats[i],
        };
        let mut g = Gradient::zeros(frozen.embed_dim());
        let parts = sample_loss(frozen, &sample, &weights, temps, Some(&mut g));
        Ok((parts, g))
    });

    let b = batch.len() as f64;
    let mut grad = Gradient::zeros(model.embed_dim());
    let mut sums = LossParts::default();
    let mut skipped = 0usize;
    for r in per_claim {
        let (parts, g) = r?;
        grad.add_scaled(&g, 1.0 / b);
        sums.full += parts.full;
        sums.sent += parts.sent;
        sums.structure += parts.structure;
        sums.rerank += parts.rerank;
        skipped += usize::from(parts.sent_skipped);
    }
    if skipped > 0 {
        debug!(step = t, skipped, "sentence loss skipped for empty views");
    }
    model.apply_gradient(&grad, cfg.learning_rate)?;

    let (l_full, l_sent, l_struct) = (sums.full / b, sums.sent / b, sums.structure / b);
    let l_unit = loss_unit(l_sent, l_struct, beta);
    debug!(step = t, l_rerank = sums.rerank / b, "rerank loss");
    let mean = |f: fn(&Allocation) -> usize| allocs.iter().map(|a| f(a) as f64).sum::<f64>() / b;
    let point = CurvePoint {
        step: t,
        delta_t,
        ema_margin: state.scheduler.ema_margin,
        acc_val: state.scheduler.acc_val,
        delta_mid: state.scheduler.delta_mid,
        p_dyn,
        beta,
        n_rand: mean(|a| a.n_rand),
        n_tb: mean(|a| a.n_tb),
        n_model: mean(|a| a.n_model),
        l_full,
        l_sent,
        l_struct,
        l_unit,
        l_total: total_loss(l_full, l_unit),
    };
    if !point.is_finite() {
        return Err(Error::Numerical(format!("training curve at step {t}")));
    }
    Ok(point)
}

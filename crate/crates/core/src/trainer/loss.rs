//! Contrastive losses over the three summary views and the rerank head,
//! with exact gradients.

use tracing::debug;

use crate::encoder::{dot, EncoderModel, Features, Gradient};
use crate::event::{EventSummary, ViewKind};
use crate::error::{Error, Result};

/// InfoNCE with the positive at index 0, stabilized by max-subtraction.
///
/// Computed as `ln sum exp(l_i - m) + (m - l_0)`, so equal logits give
/// exactly `ln(1 + n)`. When the positive is the largest logit and the
/// negatives' mass is small, `ln_1p` keeps the tiny loss relatively exact.
pub fn info_nce(sim_pos: f64, sims_neg: &[f64], tau: f64) -> f64 {
    info_nce_grad(sim_pos, sims_neg, tau).0
}

/// Loss, `dL/dsim_pos`, and `dL/dsim_neg` for each negative.
pub fn info_nce_grad(sim_pos: f64, sims_neg: &[f64], tau: f64) -> (f64, f64, Vec<f64>) {
    if sims_neg.is_empty() {
        debug!("info_nce called without negatives; loss is 0");
        return (0.0, 0.0, Vec::new());
    }
    let l0 = sim_pos / tau;
    let m = sims_neg.iter().map(|s| s / tau).fold(l0, f64::max);
    let e0 = (l0 - m).exp();
    let es: Vec<f64> = sims_neg.iter().map(|s| (s / tau - m).exp()).collect();
    let rest: f64 = es.iter().sum();
    let z = e0 + rest;
    let loss = if m == l0 && rest < 0.5 {
        rest.ln_1p()
    } else {
        z.ln() + (m - l0)
    };
    let d_pos = (e0 / z - 1.0) / tau;
    let d_neg = es.iter().map(|e| e / z / tau).collect();
    (loss, d_pos, d_neg)
}

pub fn loss_unit(l_sent: f64, l_struct: f64, beta: f64) -> f64 {
    beta * l_sent + (1.0 - beta) * l_struct
}

pub fn total_loss(l_full: f64, l_unit: f64) -> f64 {
    l_full + l_unit
}

/// Mean over claims of `sim(pos) - mean(sim(neg))`.
pub fn batch_margin(items: &[(f64, Vec<f64>)]) -> f64 {
    if items.is_empty() {
        return 0.0;
    }
    let sum: f64 = items
        .iter()
        .map(|(pos, negs)| {
            let mean = if negs.is_empty() {
                0.0
            } else {
                negs.iter().sum::<f64>() / negs.len() as f64
            };
            pos - mean
        })
        .sum();
    sum / items.len() as f64
}

/// Precomputed encoder inputs for one claim or evidence item.
#[derive(Debug, Clone)]
pub struct ViewFeatures {
    pub full: Features,
    /// `None` when the sentence view is empty.
    pub sent: Option<Features>,
    pub structure: Features,
    pub full_text: String,
}

impl ViewFeatures {
    pub fn new(model: &EncoderModel, summary: &EventSummary) -> Result<Self> {
        let full_text = summary.view(ViewKind::Full)?;
        let sent = match summary.view(ViewKind::Sent) {
            Ok(t) => Some(model.featurize(&t)),
            Err(Error::EmptyView) => None,
            Err(e) => return Err(e),
        };
        Ok(Self {
            full: model.featurize(&full_text),
            sent,
            structure: model.featurize(&summary.view(ViewKind::Struct)?),
            full_text,
        })
    }

    pub fn view(&self, kind: ViewKind) -> Option<&Features> {
        match kind {
            ViewKind::Full => Some(&self.full),
            ViewKind::Sent => self.sent.as_ref(),
            ViewKind::Struct => Some(&self.structure),
        }
    }
}

/// One claim with its positive and sampled negatives.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub claim: &'a ViewFeatures,
    pub positive: &'a ViewFeatures,
    pub negatives: &'a [&'a ViewFeatures],
}

/// Which scalar to differentiate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossSpec {
    Full,
    Sent,
    Struct,
    Unit { beta: f64 },
    Total { beta: f64 },
    Rerank,
}

/// Coefficients of each component in the differentiated objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub full: f64,
    pub sent: f64,
    pub structure: f64,
    pub rerank: f64,
}

impl From<LossSpec> for LossWeights {
    fn from(spec: LossSpec) -> Self {
        let w = |full, sent, structure, rerank| LossWeights {
            full,
            sent,
            structure,
            rerank,
        };
        match spec {
            LossSpec::Full => w(1.0, 0.0, 0.0, 0.0),
            LossSpec::Sent => w(0.0, 1.0, 0.0, 0.0),
            LossSpec::Struct => w(0.0, 0.0, 1.0, 0.0),
            LossSpec::Unit { beta } => w(0.0, beta, 1.0 - beta, 0.0),
            LossSpec::Total { beta } => w(1.0, beta, 1.0 - beta, 0.0),
            LossSpec::Rerank => w(0.0, 0.0, 0.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub full: f64,
    pub sent: f64,
    pub structure: f64,
    pub rerank: f64,
    /// Set when the sentence loss was skipped for an empty view.
    pub sent_skipped: bool,
}

impl LossParts {
    pub fn weighted(&self, w: &LossWeights) -> f64 {
        w.full * self.full + w.sent * self.sent + w.structure * self.structure + w.rerank * self.rerank
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Temperatures {
    pub contrastive: f64,
    pub rerank: f64,
}

/// Bi-encoder InfoNCE for one view; accumulates `weight * dL` into `grad`.
fn view_loss(
    model: &EncoderModel,
    sample: &Sample<'_>,
    kind: ViewKind,
    tau: f64,
    weight: f64,
    grad: Option<&mut Gradient>,
) -> Option<f64> {
    let c = sample.claim.view(kind)?;
    let p = sample.positive.view(kind)?;
    let negs: Vec<&Features> = sample.negatives.iter().filter_map(|n| n.view(kind)).collect();

    let ec = model.encode_features(c);
    let ep = model.encode_features(p);
    let en: Vec<_> = negs.iter().map(|f| model.encode_features(f)).collect();
    let zc = &ec.embedding.0;
    let s_pos = dot(zc, &ep.embedding.0);
    let s_neg: Vec<f64> = en.iter().map(|e| dot(zc, &e.embedding.0)).collect();
    let (loss, d_pos, d_neg) = info_nce_grad(s_pos, &s_neg, tau);

    if let Some(grad) = grad {
        if weight != 0.0 && !d_neg.is_empty() {
            let d = zc.len();
            let mut up_c: Vec<f64> = ep.embedding.0.iter().map(|x| weight * d_pos * x).collect();
            for (e, g) in en.iter().zip(&d_neg) {
                for k in 0..d {
                    up_c[k] += weight * g * e.embedding.0[k];
                }
            }
            model.backprop_embedding(&ec, &up_c, grad);
            let up_p: Vec<f64> = zc.iter().map(|x| weight * d_pos * x).collect();
            model.backprop_embedding(&ep, &up_p, grad);
            for (e, g) in en.iter().zip(&d_neg) {
                let up: Vec<f64> = zc.iter().map(|x| weight * g * x).collect();
                model.backprop_embedding(e, &up, grad);
            }
        }
    }
    Some(loss)
}

fn rerank_loss(model: &EncoderModel, sample: &Sample<'_>, tau: f64, weight: f64, grad: Option<&mut Gradient>) -> f64 {
    let claim = &sample.claim.full_text;
    let pass = |ev: &ViewFeatures| model.cross_forward(claim, &ev.full_text);
    let (ep, s_pos) = pass(sample.positive);
    let neg: Vec<_> = sample.negatives.iter().map(|n| pass(n)).collect();
    let s_neg: Vec<f64> = neg.iter().map(|(_, s)| *s).collect();
    let (loss, d_pos, d_neg) = info_nce_grad(s_pos, &s_neg, tau);
    if let Some(grad) = grad {
        if weight != 0.0 && !d_neg.is_empty() {
            model.backprop_cross(&ep, weight * d_pos, grad);
            for ((enc, _), g) in neg.iter().zip(&d_neg) {
                model.backprop_cross(enc, weight * g, grad);
            }
        }
    }
    loss
}

/// Loss components for one sample and, if requested, the gradient of
/// their weighted sum.
pub fn sample_loss(
    model: &EncoderModel,
    sample: &Sample<'_>,
    weights: &LossWeights,
    temps: &Temperatures,
    mut grad: Option<&mut Gradient>,
) -> LossParts {
    let tau = temps.contrastive;
    let mut parts = LossParts {
        full: view_loss(model, sample, ViewKind::Full, tau, weights.full, grad.as_deref_mut()).unwrap_or(0.0),
        structure: view_loss(model, sample, ViewKind::Struct, tau, weights.structure, grad.as_deref_mut())
            .unwrap_or(0.0),
        ..Default::default()
    };
    match view_loss(model, sample, ViewKind::Sent, tau, weights.sent, grad.as_deref_mut()) {
        Some(l) => parts.sent = l,
        None => parts.sent_skipped = true,
    }
    if weights.rerank != 0.0 {
        parts.rerank = rerank_loss(model, sample, temps.rerank, weights.rerank, grad);
    }
    parts
}

/// Value and gradient of one [`LossSpec`] on a sample.
pub fn loss_and_grad(model: &EncoderModel, sample: &Sample<'_>, spec: LossSpec, temps: &Temperatures) -> (f64, Gradient) {
    let w = LossWeights::from(spec);
    let mut grad = Gradient::zeros(model.embed_dim());
    let parts = sample_loss(model, sample, &w, temps, Some(&mut grad));
    (parts.weighted(&w), grad)
}

/// Value only, for finite-difference checks.
pub fn loss_value(model: &EncoderModel, sample: &Sample<'_>, spec: LossSpec, temps: &Temperatures) -> f64 {
    let w = LossWeights::from(spec);
    sample_loss(model, sample, &w, temps, None).weighted(&w)
}

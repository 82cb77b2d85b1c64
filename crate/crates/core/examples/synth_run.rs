//! Trains on a synthetic dataset and reports test metrics before and after.
//!
//! cargo run --release --example synth_run -- [seed] [full|beta|random]

use std::time::Instant;

use daclr_core::config::RunConfig;
use daclr_core::dataset::{synth_dataset, Dataset};
use daclr_core::encoder::EncoderModel;
use daclr_core::eval::{evaluate, Metric};
use daclr_core::pipeline::{DenseIndex, Retriever};
use daclr_core::trainer::{initial_state, train, CurvePoint, TrainData, TrainOptions};

fn report(tag: &str, model: &EncoderModel, ds: &Dataset) -> daclr_core::Result<()> {
    let index = DenseIndex::build(model, &ds.corpus)?;
    let r = Retriever::new(model, &index, &ds.corpus)?;
    let claims = ds.claims_in(&ds.splits.test);
    let qrels = ds.qrels_for(&ds.splits.test);
    let recall = claims.iter().map(|c| r.recall(c, 100)).collect::<Result<Vec<_>, _>>()?;
    let two = claims.iter().map(|c| r.retrieve(c, 100, 20)).collect::<Result<Vec<_>, _>>()?;
    for (name, run) in [("recall", &recall), ("two-stage", &two)] {
        let rep = evaluate(run, &qrels, &[10, 20])?;
        println!(
            "{tag:>9} {name:>9}: R@20 {:.3} MRR@10 {:.3} MRR@20 {:.3}",
            rep.get(Metric::Recall, 20).unwrap_or(0.0),
            rep.get(Metric::Mrr, 10).unwrap_or(0.0),
            rep.get(Metric::Mrr, 20).unwrap_or(0.0)
        );
    }
    Ok(())
}

fn mean(points: &[CurvePoint], f: impl Fn(&CurvePoint) -> f64) -> f64 {
    points.iter().map(f).sum::<f64>() / points.len() as f64
}

fn main() -> daclr_core::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map_or(1, |s| s.parse().expect("seed must be an integer"));
    let variant = args.next().unwrap_or_else(|| "full".into());

    let rc = RunConfig {
        seed,
        ..RunConfig::default()
    };
    let mut cfg = rc.train_config();
    cfg.ablation.beta_one = variant == "beta";
    cfg.ablation.random_negatives_only = variant == "random";

    let ds = synth_dataset(seed, rc.synth.n_claims, rc.synth.n_evidence, rc.synth.n_clusters)?;
    let model = rc.new_model()?;
    report("untrained", &model, &ds)?;

    let data = TrainData {
        claims: &ds.claims,
        corpus: &ds.corpus,
        qrels: &ds.qrels,
        train: &ds.splits.train,
        validation: &ds.splits.validation,
    };
    let t0 = Instant::now();
    let state = initial_state(&cfg, &data)?;
    let out = train(&cfg, model, state, &data, &TrainOptions::default())?;
    let n = out.curve.len();
    println!("{variant}: {n} steps in {:.1?}", t0.elapsed());

    let w = (n / 10).max(1);
    for (name, pts) in [("first", &out.curve[..w]), ("last", &out.curve[n - w..])] {
        println!(
            "{name:>5} 10%: p_dyn {:.3} n_model {:.2} ema {:.3} mid {:.3} l_total {:.3}",
            mean(pts, |p| p.p_dyn),
            mean(pts, |p| p.n_model),
            mean(pts, |p| p.ema_margin),
            mean(pts, |p| p.delta_mid),
            mean(pts, |p| p.l_total)
        );
    }
    report("trained", &out.model, &ds)
}

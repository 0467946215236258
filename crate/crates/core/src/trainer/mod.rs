//! Optimization loop, learning curves and the multi-run experiment drivers.

mod adamax;
mod experiments;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use adamax::{learning_rate, AdamaxState, BETA1, BETA2, EPS};
pub use experiments::{
    mean_std, run_ablation, seed_robustness, step_sweep, test_step_transfer, AblationReport, AblationRow, Corpus,
    SeedReport, SeedRow, StepRow,
};

use crate::data::{make_batches, AnnotatedExample};
use crate::engine::{Gradients, Mode};
use crate::error::{Error, Result};
use crate::eval::{evaluate, MetricsReport};
use crate::model::{CoveStore, Prediction, San};
use crate::seeds::SeedStreams;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub lr_halving_epochs: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Global-norm gradient clipping threshold; 0 disables clipping.
    pub clip_norm: f64,
    /// Threads used for dev evaluation.
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.002,
            lr_halving_epochs: 10,
            batch_size: 32,
            epochs: 50,
            seed: 1,
            clip_norm: 5.0,
            workers: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("train.lr must be positive, got {}", self.lr)));
        }
        if self.lr_halving_epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("train.lr_halving_epochs and train.batch_size must be positive".into()));
        }
        if self.clip_norm < 0.0 {
            return Err(Error::Config("train.clip_norm must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub epoch: usize,
    pub split: String,
    pub em: f64,
    pub f1: f64,
    /// Mean training loss over the epoch.
    pub loss: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub rows: Vec<CurveRow>,
}

impl LearningCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,split,em,f1,loss,lr\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{:.6},{:.6},{:.9},{}", r.epoch, r.split, r.em, r.f1, r.loss, r.lr);
        }
        out
    }

    pub fn dev_em(&self) -> Vec<f64> {
        self.rows.iter().filter(|r| r.split == "dev").map(|r| r.em).collect()
    }
}

pub struct TrainOutcome {
    /// Parameters of the best dev epoch (the initialization when no epoch ran).
    pub model: San,
    pub curve: LearningCurve,
    pub best_epoch: usize,
    pub best: Option<MetricsReport>,
}

/// Where training writes its artifacts.
pub struct OutputPaths {
    pub dir: PathBuf,
}

impl OutputPaths {
    pub fn best_stem(&self) -> PathBuf {
        self.dir.join("best")
    }

    pub fn curve(&self) -> PathBuf {
        self.dir.join("learning_curve.csv")
    }
}

/// Evaluation-mode predictions for every example, split over `workers`
/// threads. Output order follows `examples`.
pub fn predict_all(
    model: &San,
    examples: &[AnnotatedExample],
    steps: Option<usize>,
    cove: Option<&CoveStore>,
    workers: usize,
) -> Result<Vec<Prediction>> {
    let run = |chunk: &[AnnotatedExample]| -> Result<Vec<Prediction>> {
        chunk
            .iter()
            .map(|ex| model.predict(&ex.id, &model.input(ex, cove)?, steps))
            .collect()
    };
    if workers <= 1 || examples.len() < 2 {
        return run(examples);
    }
    let chunk = examples.len().div_ceil(workers);
    std::thread::scope(|s| {
        let handles: Vec<_> = examples.chunks(chunk).map(|c| s.spawn(move || run(c))).collect();
        let mut out = Vec::with_capacity(examples.len());
        for h in handles {
            out.extend(h.join().expect("prediction worker panicked")?);
        }
        Ok(out)
    })
}

/// Decoded answer strings keyed by example id.
pub fn answer_strings(preds: &[Prediction], examples: &[AnnotatedExample]) -> HashMap<String, String> {
    preds
        .iter()
        .zip(examples)
        .filter_map(|(p, ex)| p.span.map(|s| (ex.id.clone(), ex.span_text(s.start, s.end))))
        .collect()
}

pub fn evaluate_model(
    model: &San,
    examples: &[AnnotatedExample],
    steps: Option<usize>,
    cove: Option<&CoveStore>,
    workers: usize,
) -> Result<MetricsReport> {
    let preds = predict_all(model, examples, steps, cove, workers)?;
    evaluate(&answer_strings(&preds, examples), examples)
}

fn better(a: &MetricsReport, b: &MetricsReport) -> bool {
    a.em > b.em || (a.em == b.em && a.f1 > b.f1)
}

/// Trains `model` in place and returns the best-dev-EM snapshot.
///
/// Each epoch shuffles with its own derived seed, runs every example of a
/// batch through its own graph (seeded by epoch and example index, so
/// batch composition never changes dropout draws), averages gradients over
/// the batch, optionally clips, and takes one Adamax step.
pub fn train(
    mut model: San,
    config: &TrainConfig,
    train_set: &[AnnotatedExample],
    dev_set: &[AnnotatedExample],
    cove: Option<&CoveStore>,
    out: Option<&OutputPaths>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let streams = SeedStreams::new(config.seed);
    let mut opt = AdamaxState::new(&model.params);
    let mut curve = LearningCurve::default();
    let mut best: Option<(usize, MetricsReport, crate::engine::ParamSet)> = None;
    if let Some(o) = out {
        fs::create_dir_all(&o.dir).map_err(|e| Error::io(&o.dir, e))?;
    }
    for epoch in 1..=config.epochs {
        let lr = learning_rate(config.lr, config.lr_halving_epochs, epoch);
        let batches = make_batches(train_set, &model.vocab, config.batch_size, streams.shuffle_for_epoch(epoch));
        let mut loss_sum = 0.0;
        for batch in &batches {
            let mut grads = Gradients::new(model.params.len());
            for row in 0..batch.len() {
                let idx = batch.indices[row];
                let input = model.batch_input(batch, row, train_set, cove)?;
                let mut g = model.graph(Mode::Train, streams.dropout_for(epoch, idx));
                let loss = model.loss(&mut g, &input, batch.spans[row])?;
                let value = g.scalar(loss);
                if !value.is_finite() {
                    return Err(Error::Numeric(format!(
                        "loss diverged at epoch {epoch} on example {}",
                        train_set[idx].id
                    )));
                }
                loss_sum += value;
                grads.accumulate(&g.backward(loss)?);
            }
            grads.scale(1.0 / batch.len() as f64);
            if config.clip_norm > 0.0 {
                let norm = grads.global_norm();
                if norm > config.clip_norm {
                    grads.scale(config.clip_norm / norm);
                }
            }
            opt.step(&mut model.params, &grads, lr)?;
        }
        let mean_loss = loss_sum / train_set.len() as f64;
        let report = evaluate_model(&model, dev_set, None, cove, config.workers)?;
        log::info!(
            "epoch {epoch}: loss {mean_loss:.4} dev EM {:.2} F1 {:.2} lr {lr}",
            report.em,
            report.f1
        );
        curve.rows.push(CurveRow {
            epoch,
            split: "dev".into(),
            em: report.em,
            f1: report.f1,
            loss: mean_loss,
            lr,
        });
        if best.as_ref().is_none_or(|(_, b, _)| better(&report, b)) {
            if let Some(o) = out {
                model.save(&o.best_stem(), serde_json::json!({ "epoch": epoch, "em": report.em, "f1": report.f1 }))?;
            }
            best = Some((epoch, report, model.params.clone()));
        }
        if let Some(o) = out {
            write_text(&o.curve(), &curve.to_csv())?;
        }
    }
    if let Some(o) = out {
        write_text(&o.curve(), &curve.to_csv())?;
        if best.is_none() {
            model.save(&o.best_stem(), serde_json::json!({ "epoch": 0 }))?;
        }
    }
    let (best_epoch, best_report) = match best {
        Some((e, r, p)) => {
            model.params = p;
            (e, Some(r))
        }
        None => (0, None),
    };
    Ok(TrainOutcome {
        model,
        curve,
        best_epoch,
        best: best_report,
    })
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

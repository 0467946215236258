//! Multi-run protocols: answer-module ablation, step-count sweep, seed
//! robustness and test-time step transfer.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{evaluate_model, train, TrainConfig, TrainOutcome};
use crate::answer::AnswerVariant;
use crate::data::{AnnotatedExample, Vocab};
use crate::error::{Error, Result};
use crate::eval::MetricsReport;
use crate::model::{ModelConfig, San};
use crate::seeds::SeedStreams;

pub struct Corpus {
    pub train: Vec<AnnotatedExample>,
    pub dev: Vec<AnnotatedExample>,
    pub vocab: Vocab,
}

impl Corpus {
    /// Vocabulary built from the training split only.
    pub fn new(train: Vec<AnnotatedExample>, dev: Vec<AnnotatedExample>) -> Self {
        let vocab = Vocab::build(&train);
        Corpus { train, dev, vocab }
    }

    /// One full training run; initialization comes from the seed's `init`
    /// stream, everything else from `train_cfg` with `seed` substituted.
    pub fn train_run(&self, model_cfg: &ModelConfig, train_cfg: &TrainConfig, seed: u64) -> Result<TrainOutcome> {
        let model = San::new(model_cfg.clone(), self.vocab.clone(), SeedStreams::new(seed).init)?;
        let cfg = TrainConfig {
            seed,
            ..train_cfg.clone()
        };
        train(model, &cfg, &self.train, &self.dev, None, None)
    }
}

/// Mean and sample standard deviation (`n - 1` denominator; 0 for one value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedRow {
    pub seed: u64,
    pub em: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub rows: Vec<SeedRow>,
    pub em_mean: f64,
    pub em_std: f64,
    pub f1_mean: f64,
    pub f1_std: f64,
}

impl SeedReport {
    pub fn from_rows(rows: Vec<SeedRow>) -> Self {
        let (em_mean, em_std) = mean_std(&rows.iter().map(|r| r.em).collect::<Vec<_>>());
        let (f1_mean, f1_std) = mean_std(&rows.iter().map(|r| r.f1).collect::<Vec<_>>());
        SeedReport {
            rows,
            em_mean,
            em_std,
            f1_mean,
            f1_std,
        }
    }

    pub fn to_table(&self) -> String {
        let mut out = format!("{:>8} {:>8} {:>8}\n", "seed", "EM", "F1");
        for r in &self.rows {
            let _ = writeln!(out, "{:>8} {:>8.3} {:>8.3}", r.seed, r.em, r.f1);
        }
        let _ = writeln!(out, "{:>8} {:>8.3} {:>8.3}", "mean", self.em_mean, self.f1_mean);
        let _ = writeln!(out, "{:>8} {:>8.3} {:>8.3}", "std", self.em_std, self.f1_std);
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("seed,em,f1\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{:.6},{:.6}", r.seed, r.em, r.f1);
        }
        out
    }
}

fn best_scores(outcome: &TrainOutcome) -> (f64, f64) {
    outcome.best.as_ref().map_or((0.0, 0.0), |r| (r.em, r.f1))
}

/// Same configuration, one run per seed.
pub fn seed_robustness(model_cfg: &ModelConfig, train_cfg: &TrainConfig, corpus: &Corpus, seeds: &[u64]) -> Result<SeedReport> {
    if seeds.len() < 2 {
        return Err(Error::Config("seed robustness needs at least two seeds".into()));
    }
    let mut rows = Vec::new();
    for &seed in seeds {
        let (em, f1) = best_scores(&corpus.train_run(model_cfg, train_cfg, seed)?);
        log::info!("seed {seed}: EM {em:.3} F1 {f1:.3}");
        rows.push(SeedRow { seed, em, f1 });
    }
    Ok(SeedReport::from_rows(rows))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: AnswerVariant,
    pub parameters: usize,
    pub seeds: SeedReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, v: AnswerVariant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == v)
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<14} {:>10} {:>8} {:>7} {:>8} {:>7}\n",
            "variant", "params", "EM", "+/-", "F1", "+/-"
        );
        for r in &self.rows {
            let s = &r.seeds;
            let _ = writeln!(
                out,
                "{:<14} {:>10} {:>8.3} {:>7.3} {:>8.3} {:>7.3}",
                r.variant.as_str(),
                r.parameters,
                s.em_mean,
                s.em_std,
                s.f1_mean,
                s.f1_std
            );
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,parameters,em_mean,em_std,f1_mean,f1_std\n");
        for r in &self.rows {
            let s = &r.seeds;
            let _ = writeln!(
                out,
                "{},{},{:.6},{:.6},{:.6},{:.6}",
                r.variant, r.parameters, s.em_mean, s.em_std, s.f1_mean, s.f1_std
            );
        }
        out
    }
}

/// Trains every variant on every seed. Variants differ only in the answer
/// module: the same seed gives the same data order, dropout stream and
/// lower-layer initialization.
pub fn run_ablation(
    base: &ModelConfig,
    train_cfg: &TrainConfig,
    corpus: &Corpus,
    variants: &[AnswerVariant],
    seeds: &[u64],
) -> Result<AblationReport> {
    if seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    let mut rows = Vec::new();
    for &variant in variants {
        let cfg = ModelConfig {
            variant,
            ..base.clone()
        };
        let parameters = San::new(cfg.clone(), corpus.vocab.clone(), 0)?.parameter_count();
        let mut seed_rows = Vec::new();
        for &seed in seeds {
            let (em, f1) = best_scores(&corpus.train_run(&cfg, train_cfg, seed)?);
            log::info!("{variant} seed {seed}: EM {em:.3} F1 {f1:.3}");
            seed_rows.push(SeedRow { seed, em, f1 });
        }
        rows.push(AblationRow {
            variant,
            parameters,
            seeds: SeedReport::from_rows(seed_rows),
        });
    }
    Ok(AblationReport { rows })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRow {
    pub steps: usize,
    pub seeds: SeedReport,
}

/// Full-mechanism models trained with each step count.
pub fn step_sweep(
    base: &ModelConfig,
    train_cfg: &TrainConfig,
    corpus: &Corpus,
    steps: &[usize],
    seeds: &[u64],
) -> Result<Vec<StepRow>> {
    let mut out = Vec::new();
    for &t in steps {
        let cfg = ModelConfig {
            steps: t,
            variant: AnswerVariant::San,
            ..base.clone()
        };
        let mut rows = Vec::new();
        for &seed in seeds {
            let (em, f1) = best_scores(&corpus.train_run(&cfg, train_cfg, seed)?);
            rows.push(SeedRow { seed, em, f1 });
        }
        out.push(StepRow {
            steps: t,
            seeds: SeedReport::from_rows(rows),
        });
    }
    Ok(out)
}

/// Dev metrics of one trained model run with each test-time step count.
pub fn test_step_transfer(
    model: &San,
    dev: &[AnnotatedExample],
    steps: &[usize],
    workers: usize,
) -> Result<Vec<(usize, MetricsReport)>> {
    steps
        .iter()
        .map(|&t| Ok((t, evaluate_model(model, dev, Some(t), None, workers)?)))
        .collect()
}

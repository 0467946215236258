use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use san::answer::AnswerVariant;
use san::config::{load_examples, DataFormat, RunConfig};
use san::data::{write_annotated_jsonl, SyntheticConfig, SyntheticCorpus};
use san::eval::{evaluate, kbest_oracle, oracle_csv, read_dump, write_dump, MetricsReport};
use san::model::{CoveStore, San};
use san::seeds::SeedStreams;
use san::trainer::{answer_strings, predict_all, run_ablation, seed_robustness, train, write_text, OutputPaths};
use san::{Error, Result};

#[derive(Parser)]
#[command(name = "san", version, about = "Multi-step span extraction: train, predict, evaluate")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON file of dotted keys; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `key=value` overrides applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Shortcut for `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Shortcut for `train.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Threads for evaluation.
    #[arg(long)]
    workers: Option<usize>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let base = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let mut pairs = Vec::new();
        for s in &self.set {
            pairs.push(RunConfig::parse_override(s)?);
        }
        if let Some(o) = &self.out {
            pairs.push(("output_dir".into(), serde_json::json!(o)));
        }
        if let Some(s) = self.seed {
            pairs.push(("train.seed".into(), serde_json::json!(s)));
        }
        if let Some(w) = self.workers {
            pairs.push(("train.workers".into(), serde_json::json!(w)));
        }
        base.apply(pairs.iter().map(|(k, v)| (k.as_str(), v.clone())))
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model and write checkpoint, learning curve and resolved config.
    Train(ConfigArgs),
    /// Decode a data file with a checkpoint.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "jsonl")]
        format: FormatArg,
        #[arg(long)]
        out: PathBuf,
        /// Reasoning steps at test time (the trained value when omitted).
        #[arg(long = "test-T")]
        test_t: Option<usize>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// CoVe archive stem, for models built with a CoVe stream.
        #[arg(long)]
        cove: Option<PathBuf>,
    },
    /// Score an `{id: answer}` JSON file.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "jsonl")]
        format: FormatArg,
        #[arg(long)]
        predictions: PathBuf,
        /// Directory for metrics.json and metrics.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// K-best oracle from a distribution dump.
    Oracle {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "jsonl")]
        format: FormatArg,
        #[arg(long)]
        dump: PathBuf,
        #[arg(long = "k-max", default_value_t = 4)]
        k_max: usize,
        #[arg(long = "max-span-len", default_value_t = 15)]
        max_span_len: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train each answer-module variant over several seeds.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_delimiter = ',', default_value = "san,onestep,memnet_final,memnet_avg")]
        variants: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
        seeds: Vec<u64>,
    },
    /// Seed-robustness run: same configuration, different seeds.
    Seeds {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5,6,7,8,9,10")]
        seeds: Vec<u64>,
    },
    /// Write a synthetic corpus as annotated JSONL.
    Gen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        train: usize,
        #[arg(long, default_value_t = 500)]
        dev: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum FormatArg {
    Squad,
    Jsonl,
}

impl From<FormatArg> for DataFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Squad => DataFormat::Squad,
            FormatArg::Jsonl => DataFormat::Jsonl,
        }
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn print_report(r: &MetricsReport) -> Result<()> {
    println!("{}", r.to_json()?);
    println!("EM {:.3}  F1 {:.3}  ({} examples, {} skipped)", r.em, r.f1, r.count, r.skipped);
    for (q, s) in &r.by_qtype {
        println!("  {:<6} EM {:>7.3}  F1 {:>7.3}  n={}", q, s.em, s.f1, s.count);
    }
    Ok(())
}

fn cmd_train(args: &ConfigArgs) -> Result<()> {
    let cfg = args.resolve()?;
    let corpus = cfg.load_corpus()?;
    ensure_dir(&cfg.output_dir)?;
    write_text(&cfg.output_dir.join("resolved_config.json"), &cfg.to_flat_json())?;
    let mut model = San::new(cfg.model.clone(), corpus.vocab.clone(), SeedStreams::new(cfg.train.seed).init)?;
    if let Some(p) = &cfg.data.embeddings {
        let n = model.emb.load_pretrained(&mut model.params, &model.vocab, p)?;
        log::info!("loaded {n} pretrained word vectors");
    }
    let cove = cfg.data.cove.as_deref().map(CoveStore::load).transpose()?;
    let out = OutputPaths {
        dir: cfg.output_dir.clone(),
    };
    let outcome = train(model, &cfg.train, &corpus.train, &corpus.dev, cove.as_ref(), Some(&out))?;
    let summary = serde_json::json!({
        "best_epoch": outcome.best_epoch,
        "best": outcome.best,
        "parameters": outcome.model.parameter_count(),
    });
    write_text(&cfg.output_dir.join("summary.json"), &serde_json::to_string_pretty(&summary)?)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    print!("{}", outcome.curve.to_csv());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_predict(
    checkpoint: &Path,
    data: &Path,
    format: DataFormat,
    out: &Path,
    test_t: Option<usize>,
    workers: usize,
    cove: Option<&Path>,
) -> Result<()> {
    if test_t == Some(0) {
        return Err(Error::Config("--test-T must be at least 1".into()));
    }
    let (json, _) = san::engine::checkpoint::archive_paths(checkpoint);
    if !json.exists() {
        return Err(Error::Config(format!("checkpoint {} does not exist", json.display())));
    }
    let examples = load_examples(data, format)?;
    let (model, _) = San::load(checkpoint)?;
    let cove = cove.map(CoveStore::load).transpose()?;
    let preds = predict_all(&model, &examples, test_t, cove.as_ref(), workers)?;
    ensure_dir(out)?;
    let answers: std::collections::BTreeMap<_, _> = answer_strings(&preds, &examples).into_iter().collect();
    write_text(&out.join("answers.json"), &serde_json::to_string_pretty(&answers)?)?;
    write_dump(&out.join("dump.jsonl"), &preds)?;
    let report = evaluate(&answers.into_iter().collect(), &examples)?;
    write_text(&out.join("metrics.json"), &report.to_json()?)?;
    print_report(&report)
}

fn cmd_eval(data: &Path, format: DataFormat, predictions: &Path, out: Option<&Path>) -> Result<()> {
    let examples = load_examples(data, format)?;
    if !predictions.exists() {
        return Err(Error::Config(format!("predictions file {} does not exist", predictions.display())));
    }
    let text = fs::read_to_string(predictions).map_err(|e| Error::io(predictions, e))?;
    let preds: HashMap<String, String> = serde_json::from_str(&text)?;
    let report = evaluate(&preds, &examples)?;
    if let Some(dir) = out {
        ensure_dir(dir)?;
        write_text(&dir.join("metrics.json"), &report.to_json()?)?;
        write_text(&dir.join("metrics.csv"), &report.to_csv())?;
    }
    print_report(&report)
}

fn cmd_oracle(data: &Path, format: DataFormat, dump: &Path, k_max: usize, max_span_len: usize, out: Option<&Path>) -> Result<()> {
    let examples = load_examples(data, format)?;
    if !dump.exists() {
        return Err(Error::Config(format!("dump {} does not exist", dump.display())));
    }
    let curve = kbest_oracle(&read_dump(dump)?, &examples, k_max, max_span_len)?;
    let csv = oracle_csv(&curve);
    if let Some(dir) = out {
        ensure_dir(dir)?;
        write_text(&dir.join("oracle.csv"), &csv)?;
    }
    println!("{}", serde_json::to_string(&curve)?);
    print!("{csv}");
    Ok(())
}

fn cmd_ablate(args: &ConfigArgs, variants: &[String], seeds: &[u64]) -> Result<()> {
    let cfg = args.resolve()?;
    let variants: Vec<AnswerVariant> = variants.iter().map(|v| v.parse()).collect::<Result<_>>()?;
    let corpus = cfg.load_corpus()?;
    let report = run_ablation(&cfg.model, &cfg.train, &corpus, &variants, seeds)?;
    ensure_dir(&cfg.output_dir)?;
    write_text(&cfg.output_dir.join("resolved_config.json"), &cfg.to_flat_json())?;
    write_text(&cfg.output_dir.join("ablation.csv"), &report.to_csv())?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    print!("{}", report.to_table());
    Ok(())
}

fn cmd_seeds(args: &ConfigArgs, seeds: &[u64]) -> Result<()> {
    let cfg = args.resolve()?;
    let corpus = cfg.load_corpus()?;
    let report = seed_robustness(&cfg.model, &cfg.train, &corpus, seeds)?;
    ensure_dir(&cfg.output_dir)?;
    write_text(&cfg.output_dir.join("resolved_config.json"), &cfg.to_flat_json())?;
    write_text(&cfg.output_dir.join("seeds.csv"), &report.to_csv())?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    print!("{}", report.to_table());
    Ok(())
}

fn cmd_gen(out: &Path, train_n: usize, dev_n: usize, seed: u64) -> Result<()> {
    let cfg = SyntheticConfig {
        seed,
        ..SyntheticConfig::default()
    };
    let corpus = SyntheticCorpus::generate(&cfg, train_n, dev_n)?;
    ensure_dir(out)?;
    write_annotated_jsonl(&out.join("train.jsonl"), &corpus.train)?;
    write_annotated_jsonl(&out.join("dev.jsonl"), &corpus.dev)?;
    println!("wrote {} train and {} dev examples to {}", corpus.train.len(), corpus.dev.len(), out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Train(a) => cmd_train(&a),
        Cmd::Predict {
            checkpoint,
            data,
            format,
            out,
            test_t,
            workers,
            cove,
        } => cmd_predict(&checkpoint, &data, format.into(), &out, test_t, workers, cove.as_deref()),
        Cmd::Eval {
            data,
            format,
            predictions,
            out,
        } => cmd_eval(&data, format.into(), &predictions, out.as_deref()),
        Cmd::Oracle {
            data,
            format,
            dump,
            k_max,
            max_span_len,
            out,
        } => cmd_oracle(&data, format.into(), &dump, k_max, max_span_len, out.as_deref()),
        Cmd::Ablate { cfg, variants, seeds } => cmd_ablate(&cfg, &variants, &seeds),
        Cmd::Seeds { cfg, seeds } => cmd_seeds(&cfg, &seeds),
        Cmd::Gen { out, train, dev, seed } => cmd_gen(&out, train, dev, seed),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SAN_LOG_LEVEL", "info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::Unsupported(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use mom_ner::corpus::{compute_stats, parse_conll, to_conll, validate_bio, LabelScheme, Split, Vocabulary};
use mom_ner::experiments::{
    default_grid, emit_report, load_data, render_markdown, train_model, ExperimentConfig, Framework, SearchParam,
    TrainedModel,
};
use mom_ner::metrics::{report_to_markdown, report_to_tsv};
use mom_ner::model::{read_checkpoint, write_checkpoint};
use mom_ner::synthgen::{generate_splits, SynthConfig};

#[derive(Parser)]
#[command(
    name = "momner",
    version,
    about = "MoM loss experiments for imbalanced sequence labeling"
)]
struct Cli {
    /// Base seed. Overrides config seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory. Overrides the config.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Concurrent trials.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-class token counts and majority share of a CoNLL file.
    Stats { corpus: PathBuf },
    /// Writes a generated corpus as CoNLL train/val/test files.
    Synth { config: PathBuf },
    /// Trains one arm and writes a checkpoint.
    Train {
        config: PathBuf,
        /// Arm to train; defaults to the first.
        #[arg(long)]
        arm: Option<String>,
    },
    /// Scores a checkpoint on a CoNLL file.
    Evaluate { checkpoint: PathBuf, corpus: PathBuf },
    /// Runs every arm, seed and fraction and writes the reports.
    Experiment { config: PathBuf },
    /// Grid-searches one hyperparameter on validation.
    Search {
        config: PathBuf,
        #[arg(long)]
        param: SearchParam,
        /// Arm to tune; defaults to every arm the parameter applies to.
        #[arg(long)]
        arm: Option<String>,
        /// Comma-separated grid; defaults to the built-in grid.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
    },
}

#[derive(Deserialize)]
struct SynthSpec {
    #[serde(flatten)]
    config: SynthConfig,
    #[serde(default)]
    n_val: usize,
    #[serde(default)]
    n_test: usize,
}

#[derive(Serialize, Deserialize)]
struct CheckpointExtra {
    framework: Framework,
    scheme: LabelScheme,
    vocab: Vocabulary,
    threshold: f64,
    max_len: usize,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_config(cli: &Cli, path: &Path) -> Result<ExperimentConfig> {
    let mut cfg: ExperimentConfig =
        serde_json::from_str(&read_text(path)?).with_context(|| format!("parsing {}", path.display()))?;
    if let Some(seed) = cli.seed {
        let n = cfg.seeds.len() as u64;
        cfg.seeds = (seed..seed + n).collect();
        cfg.search.seed = seed;
    }
    if let Some(dir) = &cli.out_dir {
        cfg.out_dir = dir.clone();
    }
    if let Some(jobs) = cli.jobs {
        cfg.jobs = jobs;
    }
    cfg.validate()
        .with_context(|| format!("invalid config {}", path.display()))?;
    Ok(cfg)
}

fn out_dir(cli: &Cli) -> PathBuf {
    cli.out_dir.clone().unwrap_or_else(|| PathBuf::from("."))
}

fn stats(path: &Path) -> Result<()> {
    let corpus =
        parse_conll(&read_text(path)?, None, Split::Train).with_context(|| format!("parsing {}", path.display()))?;
    let stats = compute_stats(&corpus)?;
    let violations = validate_bio(&corpus);
    if !violations.is_empty() {
        log::warn!(
            "{} BIO violations, first at sentence {} token {}",
            violations.len(),
            violations[0].sentence,
            violations[0].token
        );
    }
    print!("{}", stats.to_tsv());
    println!("sentences\t{}", stats.n_sentences);
    println!("tokens\t{}", stats.total_tokens);
    println!("rho_o\t{:.6}", stats.rho_o);
    Ok(())
}

fn synth(cli: &Cli, path: &Path) -> Result<()> {
    let mut spec: SynthSpec =
        serde_json::from_str(&read_text(path)?).with_context(|| format!("parsing {}", path.display()))?;
    if let Some(seed) = cli.seed {
        spec.config.seed = seed;
    }
    let (train, val, test) = generate_splits(&spec.config, spec.n_val, spec.n_test)?;
    let dir = out_dir(cli);
    fs::create_dir_all(&dir)?;
    for (name, c) in [("train.conll", &train), ("val.conll", &val), ("test.conll", &test)] {
        if !c.is_empty() {
            fs::write(dir.join(name), to_conll(c))?;
        }
    }
    let stats = compute_stats(&train)?;
    eprintln!("train: {} sentences, rho_o {:.4}", stats.n_sentences, stats.rho_o);
    Ok(())
}

fn train(cli: &Cli, path: &Path, arm: Option<&str>) -> Result<()> {
    let cfg = load_config(cli, path)?;
    let arm = match arm {
        Some(name) => cfg.arm(name).with_context(|| format!("no arm named `{name}`"))?,
        None => &cfg.arms[0],
    };
    let seed = cfg.seeds[0];
    let data = load_data(&cfg)?;
    let model = train_model(&cfg, &data.train, arm, seed)?;
    fs::create_dir_all(&cfg.out_dir)?;
    let extra = CheckpointExtra {
        framework: model.framework,
        scheme: data.scheme().clone(),
        vocab: model.vocab.clone(),
        threshold: model.threshold,
        max_len: cfg.model.max_len,
    };
    let ckpt = cfg.out_dir.join("model.ckpt");
    write_checkpoint(
        BufWriter::new(File::create(&ckpt)?),
        &model.params,
        &serde_json::to_value(&extra)?,
    )?;
    for (name, corpus) in [("val", &data.val), ("test", &data.test)] {
        fs::write(
            cfg.out_dir.join(format!("{name}_metrics.tsv")),
            report_to_tsv(&model.evaluate(corpus)?),
        )?;
    }
    eprintln!(
        "trained `{}` (seed {seed}), final loss {:.6}; wrote {}",
        arm.name,
        model.loss_trace.last().copied().unwrap_or(f64::NAN),
        ckpt.display()
    );
    Ok(())
}

fn evaluate(cli: &Cli, ckpt: &Path, corpus: &Path) -> Result<()> {
    let file = File::open(ckpt).with_context(|| format!("opening {}", ckpt.display()))?;
    let (params, extra) = read_checkpoint(BufReader::new(file))?;
    let extra: CheckpointExtra = serde_json::from_value(extra).context("checkpoint metadata")?;
    let corpus = parse_conll(&read_text(corpus)?, Some(&extra.scheme), Split::Test)
        .with_context(|| format!("parsing {}", corpus.display()))?;
    let (corpus, _) = corpus.truncate(extra.max_len)?;
    let model = TrainedModel {
        framework: extra.framework,
        params,
        vocab: extra.vocab,
        threshold: extra.threshold,
        loss_trace: Vec::new(),
    };
    let report = model.evaluate(&corpus)?;
    print!("{}", report_to_tsv(&report));
    if let Some(dir) = &cli.out_dir {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("evaluation.md"), report_to_markdown(&report))?;
    }
    Ok(())
}

fn experiment(cli: &Cli, path: &Path) -> Result<()> {
    let cfg = load_config(cli, path)?;
    let report = mom_ner::experiments::run_experiment(&cfg)?;
    let files = emit_report(&report, &cfg.out_dir)?;
    print!("{}", render_markdown(&report));
    for f in files {
        eprintln!("wrote {}", f.display());
    }
    Ok(())
}

fn search(cli: &Cli, path: &Path, param: SearchParam, arm: Option<&str>, grid: Option<Vec<f64>>) -> Result<()> {
    let cfg = load_config(cli, path)?;
    let grid = grid
        .or_else(|| cfg.search.grids.get(&param).cloned())
        .unwrap_or_else(|| default_grid(param));
    let arms: Vec<_> = match arm {
        Some(name) => vec![cfg.arm(name).with_context(|| format!("no arm named `{name}`"))?],
        None => cfg
            .arms
            .iter()
            .filter(|a| param != SearchParam::Lambda || a.mom)
            .collect(),
    };
    if arms.is_empty() {
        bail!("no arm to tune for {param}");
    }
    let mut out = String::from("arm\tparameter\tvalue\tscore\tselected\n");
    for a in arms {
        let res = mom_ner::experiments::grid_search(&cfg, a, param, &grid)?;
        for (v, s) in &res.trace {
            out.push_str(&format!("{}\t{}\t{}\t{}\t{}\n", res.arm, param, v, s, *v == res.best));
        }
        eprintln!(
            "arm `{}`: best {param} = {} (validation {:.4})",
            res.arm, res.best, res.best_score
        );
    }
    fs::create_dir_all(&cfg.out_dir)?;
    fs::write(cfg.out_dir.join(format!("search_{param}.tsv")), &out)?;
    print!("{out}");
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Stats { corpus } => stats(corpus),
        Command::Synth { config } => synth(cli, config),
        Command::Train { config, arm } => train(cli, config, arm.as_deref()),
        Command::Evaluate { checkpoint, corpus } => evaluate(cli, checkpoint, corpus),
        Command::Experiment { config } => experiment(cli, config),
        Command::Search {
            config,
            param,
            arm,
            grid,
        } => search(cli, config, *param, arm.as_deref(), grid.clone()),
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

//! Multi-seed experiment harness: trials, grid search, aggregation, reports.

mod report;
mod search;
mod trial;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{parse_conll, random_split, LabelScheme, LabeledCorpus, Split};
use crate::error::{Error, Result};
use crate::losses::{BaseLoss, DiceDenominator, LossConfig, Normalization};
use crate::metrics::MetricsReport;
use crate::stats::{aggregate, paired_t_test, SeedAggregate, TTestResult};
use crate::synthgen::{generate_splits, SynthConfig};

pub use report::{
    emit_report, format_delta, parse_results_tsv, render_markdown, render_results_tsv, render_search_tsv,
    render_ttests_tsv, ResultRow,
};
pub use search::{default_grid, grid_search, SearchParam, SearchResult};
pub use trial::{run_trial, sample_seed, train_model, TrainedModel, TrialResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// Generated train split of `config.n_sentences` plus validation and test.
    Synthetic {
        config: SynthConfig,
        n_val: usize,
        n_test: usize,
    },
    Files {
        train: PathBuf,
        val: PathBuf,
        test: PathBuf,
    },
    /// One file shuffled and split by ratio.
    Single {
        path: PathBuf,
        #[serde(default = "default_ratio")]
        ratio: [u32; 3],
        #[serde(default)]
        seed: u64,
    },
}

fn default_ratio() -> [u32; 3] {
    [8, 1, 1]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Framework {
    #[default]
    Sequence,
    Mrc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSettings {
    pub embed_dim: usize,
    pub context_radius: usize,
    pub hidden_dim: usize,
    pub init_scale: f64,
    /// Longer sentences are truncated when loaded.
    pub max_len: usize,
}

impl Default for ModelSettings {
    fn default() -> Self {
        Self {
            embed_dim: 32,
            context_radius: 2,
            hidden_dim: 64,
            init_scale: 0.1,
            max_len: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub min_frequency: usize,
    /// Start/end probability threshold for span decoding.
    pub threshold: f64,
}

impl Default for TrainingSettings {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            learning_rate: 1e-3,
            min_frequency: 1,
            threshold: 0.5,
        }
    }
}

fn one() -> f64 {
    1.0
}
fn two() -> f64 {
    2.0
}
fn half() -> f64 {
    0.5
}
fn default_delta() -> f64 {
    0.01
}

/// One loss variant under comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSpec {
    pub name: String,
    pub loss: BaseLoss,
    #[serde(default)]
    pub mom: bool,
    #[serde(default = "half")]
    pub lambda: f64,
    #[serde(default = "one")]
    pub beta: f64,
    #[serde(default = "two")]
    pub gamma: f64,
    #[serde(default = "one")]
    pub epsilon: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub normalization: Normalization,
    #[serde(default)]
    pub dice: DiceDenominator,
    /// Hyperparameters picked by grid search before the seeded runs, in order.
    #[serde(default)]
    pub tune: Vec<SearchParam>,
}

impl ArmSpec {
    pub fn new(name: &str, loss: BaseLoss) -> Self {
        Self {
            name: name.to_string(),
            loss,
            mom: false,
            lambda: 0.5,
            beta: 1.0,
            gamma: 2.0,
            epsilon: 1.0,
            delta: 0.01,
            normalization: Normalization::ByLength,
            dice: DiceDenominator::SelfAdjusting,
            tune: Vec::new(),
        }
    }

    pub fn with_mom(mut self, lambda: f64) -> Self {
        self.mom = true;
        self.lambda = lambda;
        self
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            base: self.loss,
            lambda: self.mom.then_some(self.lambda),
            beta: self.beta,
            gamma: self.gamma,
            epsilon: self.epsilon,
            delta: self.delta,
            normalization: self.normalization,
            dice: self.dice,
        }
    }

    pub fn get(&self, param: SearchParam) -> f64 {
        match param {
            SearchParam::Lambda => self.lambda,
            SearchParam::Beta => self.beta,
            SearchParam::Gamma => self.gamma,
        }
    }

    pub fn set(&mut self, param: SearchParam, value: f64) {
        match param {
            SearchParam::Lambda => self.lambda = value,
            SearchParam::Beta => self.beta = value,
            SearchParam::Gamma => self.gamma = value,
        }
    }
}

/// Validation/test metric used for tuning, t-tests and the headline table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Macro average over all classes present.
    #[default]
    MacroF1,
    EntityMacroF1,
    /// Micro-averaged exact span match.
    SpanF1,
}

impl Objective {
    /// Metric names of the precision, recall and F1 triple.
    pub fn family(self) -> [&'static str; 3] {
        match self {
            Objective::MacroF1 => ["macro_precision", "macro_recall", "macro_f1"],
            Objective::EntityMacroF1 => ["entity_precision", "entity_recall", "entity_f1"],
            Objective::SpanF1 => ["span_precision", "span_recall", "span_f1"],
        }
    }

    pub fn metric(self) -> &'static str {
        self.family()[2]
    }

    pub fn score(self, report: &MetricsReport) -> f64 {
        match self {
            Objective::MacroF1 => report.macro_all.f1,
            Objective::EntityMacroF1 => report.macro_entity.f1,
            Objective::SpanF1 => report.spans.micro.f1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SearchSettings {
    /// Overrides the default grid of every tuned parameter.
    #[serde(default)]
    pub grids: BTreeMap<SearchParam, Vec<f64>>,
    #[serde(default)]
    pub seed: u64,
}

fn default_seeds() -> Vec<u64> {
    (0..10).collect()
}
fn default_fractions() -> Vec<f64> {
    vec![1.0]
}
fn default_alpha() -> f64 {
    0.05
}
fn default_true() -> bool {
    true
}
fn default_jobs() -> usize {
    1
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: DataSource,
    #[serde(default)]
    pub framework: Framework,
    #[serde(default)]
    pub model: ModelSettings,
    #[serde(default)]
    pub training: TrainingSettings,
    pub arms: Vec<ArmSpec>,
    /// Arm name; defaults to the first arm.
    #[serde(default)]
    pub baseline: Option<String>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_fractions")]
    pub fractions: Vec<f64>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_true")]
    pub t_tests: bool,
    #[serde(default)]
    pub objective: Objective,
    #[serde(default)]
    pub search: SearchSettings,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default = "default_jobs")]
    pub jobs: usize,
}

impl ExperimentConfig {
    pub fn new(data: DataSource, arms: Vec<ArmSpec>) -> Self {
        Self {
            data,
            framework: Framework::Sequence,
            model: ModelSettings::default(),
            training: TrainingSettings::default(),
            arms,
            baseline: None,
            seeds: default_seeds(),
            fractions: default_fractions(),
            alpha: default_alpha(),
            t_tests: true,
            objective: Objective::MacroF1,
            search: SearchSettings::default(),
            out_dir: default_out_dir(),
            jobs: 1,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn baseline_name(&self) -> &str {
        self.baseline
            .as_deref()
            .unwrap_or_else(|| self.arms.first().map(|a| a.name.as_str()).unwrap_or(""))
    }

    pub fn arm(&self, name: &str) -> Option<&ArmSpec> {
        self.arms.iter().find(|a| a.name == name)
    }

    pub fn validate(&self) -> Result<()> {
        if self.arms.is_empty() {
            return Err(Error::invalid("arms", "at least one arm is required"));
        }
        let mut names = std::collections::BTreeSet::new();
        for arm in &self.arms {
            if !names.insert(arm.name.as_str()) {
                return Err(Error::invalid("arms", format!("duplicate arm name `{}`", arm.name)));
            }
            arm.loss_config().validate()?;
            if self.framework == Framework::Mrc && arm.loss.is_weighted() {
                return Err(Error::invalid(
                    "arms",
                    format!(
                        "arm `{}`: {} is not available for span heads",
                        arm.name,
                        arm.loss.name()
                    ),
                ));
            }
            for p in &arm.tune {
                if *p == SearchParam::Lambda && !arm.mom {
                    return Err(Error::invalid(
                        "tune",
                        format!("arm `{}` tunes lambda without the MoM term", arm.name),
                    ));
                }
            }
        }
        if self.arm(self.baseline_name()).is_none() {
            return Err(Error::invalid(
                "baseline",
                format!("no arm named `{}`", self.baseline_name()),
            ));
        }
        if self.seeds.is_empty() {
            return Err(Error::invalid("seeds", "at least one seed is required"));
        }
        if self.t_tests && self.seeds.len() < 2 {
            return Err(Error::invalid("seeds", "t-tests need at least two seeds"));
        }
        if self.fractions.is_empty() {
            return Err(Error::invalid("fractions", "at least one fraction is required"));
        }
        for &f in &self.fractions {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::invalid("fractions", format!("{f} is outside (0, 1]")));
            }
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid("alpha", format!("{} is outside (0, 1)", self.alpha)));
        }
        if self.training.epochs == 0 || self.training.batch_size == 0 {
            return Err(Error::invalid("training", "epochs and batch_size must be positive"));
        }
        if !(self.training.learning_rate > 0.0 && self.training.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate", "must be positive"));
        }
        if !(self.training.threshold > 0.0 && self.training.threshold < 1.0) {
            return Err(Error::invalid("threshold", "must lie in (0, 1)"));
        }
        if self.jobs == 0 {
            return Err(Error::invalid("jobs", "must be at least 1"));
        }
        for (p, grid) in &self.search.grids {
            search::check_grid(*p, grid)?;
        }
        Ok(())
    }
}

/// Train, validation and test splits sharing one label scheme.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: LabeledCorpus,
    pub val: LabeledCorpus,
    pub test: LabeledCorpus,
}

impl PreparedData {
    pub fn scheme(&self) -> &LabelScheme {
        self.train.scheme()
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

/// Parses several CoNLL texts under one scheme inferred from all of them.
pub fn parse_with_shared_scheme(texts: &[&str]) -> Result<Vec<LabeledCorpus>> {
    let mut labels = std::collections::BTreeSet::new();
    for text in texts {
        let c = parse_conll(text, None, Split::Train)?;
        labels.extend(c.scheme().classes().iter().cloned());
    }
    let scheme = LabelScheme::infer(labels.iter().map(String::as_str))?;
    texts
        .iter()
        .map(|t| parse_conll(t, Some(&scheme), Split::Train))
        .collect()
}

pub fn load_data(cfg: &ExperimentConfig) -> Result<PreparedData> {
    let (train, val, test) = match &cfg.data {
        DataSource::Synthetic { config, n_val, n_test } => generate_splits(config, *n_val, *n_test)?,
        DataSource::Files { train, val, test } => {
            let texts = [read(train)?, read(val)?, read(test)?];
            let mut parsed = parse_with_shared_scheme(&[&texts[0], &texts[1], &texts[2]])?.into_iter();
            let mut next = || parsed.next().expect("three corpora parsed");
            (next(), next(), next())
        }
        DataSource::Single { path, ratio, seed } => {
            let corpus = parse_conll(&read(path)?, None, Split::Train)?;
            random_split(&corpus, *ratio, *seed)?
        }
    };
    let max_len = cfg.model.max_len;
    let fix = |c: LabeledCorpus, split| -> Result<LabeledCorpus> { Ok(c.truncate(max_len)?.0.with_split(split)) };
    let data = PreparedData {
        train: fix(train, Split::Train)?,
        val: fix(val, Split::Val)?,
        test: fix(test, Split::Test)?,
    };
    for (name, c) in [
        ("train split", &data.train),
        ("validation split", &data.val),
        ("test split", &data.test),
    ] {
        if c.is_empty() {
            return Err(Error::Empty(name));
        }
    }
    Ok(data)
}

/// Per-seed scores of one arm at one fraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmFractionResult {
    pub arm: String,
    pub fraction: f64,
    pub n_train: usize,
    /// Test-split metrics in a fixed order.
    pub metrics: Vec<(String, SeedAggregate)>,
    pub trials: Vec<TrialResult>,
}

impl ArmFractionResult {
    pub fn metric(&self, name: &str) -> Option<&SeedAggregate> {
        self.metrics.iter().find(|(n, _)| n == name).map(|(_, a)| a)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub fraction: f64,
    pub arm: String,
    pub against: String,
    /// `baseline` or `best_other`.
    pub kind: String,
    pub metric: String,
    pub result: TTestResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub framework: Framework,
    pub objective: Objective,
    pub alpha: f64,
    pub baseline: String,
    /// Arms after tuning.
    pub arms: Vec<ArmSpec>,
    pub categories: Vec<String>,
    pub fractions: Vec<f64>,
    pub searches: Vec<SearchResult>,
    /// Fraction-major, then arm order.
    pub results: Vec<ArmFractionResult>,
    pub comparisons: Vec<Comparison>,
}

impl RunReport {
    pub fn result(&self, arm: &str, fraction: f64) -> Option<&ArmFractionResult> {
        self.results.iter().find(|r| r.arm == arm && r.fraction == fraction)
    }
}

/// Named test-split values extracted from one trial.
pub fn metric_values(report: &MetricsReport, scheme: &LabelScheme) -> Vec<(String, f64)> {
    let mut out = vec![
        ("macro_precision".to_string(), report.macro_all.precision),
        ("macro_recall".to_string(), report.macro_all.recall),
        ("macro_f1".to_string(), report.macro_all.f1),
        ("entity_precision".to_string(), report.macro_entity.precision),
        ("entity_recall".to_string(), report.macro_entity.recall),
        ("entity_f1".to_string(), report.macro_entity.f1),
        (
            "majority_f1".to_string(),
            report.class_f1(scheme.majority_name()).unwrap_or(0.0),
        ),
        ("span_precision".to_string(), report.spans.micro.precision),
        ("span_recall".to_string(), report.spans.micro.recall),
        ("span_f1".to_string(), report.spans.micro.f1),
        ("sentence_accuracy".to_string(), report.sentence_accuracy),
        ("word_accuracy".to_string(), report.word_accuracy),
    ];
    for cat in scheme.categories() {
        let f1 = report
            .merged
            .iter()
            .find(|m| &m.name == cat)
            .map(|m| m.scores.f1)
            .unwrap_or(0.0);
        out.push((format!("category:{cat}"), f1));
    }
    for bin in crate::corpus::LengthBin::all() {
        if let Some(b) = report.per_bin.iter().find(|b| b.bin == bin.to_string()) {
            out.push((format!("bin:{bin}"), b.sentence_accuracy));
        }
    }
    out
}

pub(crate) fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::invalid("jobs", e.to_string()))
}

/// Runs every (arm, seed, fraction) trial, aggregates and compares.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let data = load_data(cfg)?;
    run_experiment_on(cfg, &data)
}

pub fn run_experiment_on(cfg: &ExperimentConfig, data: &PreparedData) -> Result<RunReport> {
    cfg.validate()?;
    let pool = thread_pool(cfg.jobs)?;

    let mut arms = cfg.arms.clone();
    let mut searches = Vec::new();
    for arm in arms.iter_mut() {
        for &param in &arm.tune.clone() {
            let grid = cfg
                .search
                .grids
                .get(&param)
                .cloned()
                .unwrap_or_else(|| default_grid(param));
            let res = search::grid_search_in(&pool, cfg, data, arm, param, &grid)?;
            log::info!("arm `{}`: {} = {}", arm.name, param, res.best);
            arm.set(param, res.best);
            searches.push(res);
        }
    }

    let mut tasks = Vec::new();
    for &fraction in &cfg.fractions {
        for arm in &arms {
            for &seed in &cfg.seeds {
                tasks.push((arm, seed, fraction));
            }
        }
    }
    log::info!("running {} trials on {} threads", tasks.len(), cfg.jobs);
    let trials: Vec<TrialResult> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(arm, seed, fraction)| run_trial(cfg, data, arm, seed, fraction))
            .collect::<Result<Vec<_>>>()
    })?;

    let scheme = data.scheme();
    let mut results = Vec::new();
    let mut it = trials.into_iter();
    for &fraction in &cfg.fractions {
        for arm in &arms {
            let trials: Vec<TrialResult> = it.by_ref().take(cfg.seeds.len()).collect();
            let per_trial: Vec<Vec<(String, f64)>> = trials.iter().map(|t| metric_values(&t.test, scheme)).collect();
            let mut metrics = Vec::new();
            for (i, (name, _)) in per_trial[0].iter().enumerate() {
                let scores: Vec<f64> = per_trial.iter().map(|v| v[i].1).collect();
                metrics.push((name.clone(), aggregate(&scores)?));
            }
            results.push(ArmFractionResult {
                arm: arm.name.clone(),
                fraction,
                n_train: trials[0].n_train,
                metrics,
                trials,
            });
        }
    }

    let comparisons = if cfg.t_tests {
        compare(cfg, &arms, &results)?
    } else {
        Vec::new()
    };

    Ok(RunReport {
        framework: cfg.framework,
        objective: cfg.objective,
        alpha: cfg.alpha,
        baseline: cfg.baseline_name().to_string(),
        arms,
        categories: scheme.categories().to_vec(),
        fractions: cfg.fractions.clone(),
        searches,
        results,
        comparisons,
    })
}

fn compare(cfg: &ExperimentConfig, arms: &[ArmSpec], results: &[ArmFractionResult]) -> Result<Vec<Comparison>> {
    let metric = cfg.objective.metric();
    let baseline = cfg.baseline_name();
    let mut out = Vec::new();
    for &fraction in &cfg.fractions {
        let at = |name: &str| {
            results
                .iter()
                .find(|r| r.arm == name && r.fraction == fraction)
                .and_then(|r| r.metric(metric))
                .expect("every arm has every metric")
        };
        for arm in arms {
            if arm.name != baseline {
                out.push(Comparison {
                    fraction,
                    arm: arm.name.clone(),
                    against: baseline.to_string(),
                    kind: "baseline".into(),
                    metric: metric.into(),
                    result: paired_t_test(&at(&arm.name).scores, &at(baseline).scores, cfg.alpha)?,
                });
            }
            let best_other = arms
                .iter()
                .filter(|o| !o.mom && o.name != arm.name)
                .max_by(|a, b| at(&a.name).mean.total_cmp(&at(&b.name).mean).then(b.name.cmp(&a.name)));
            if let Some(other) = best_other {
                out.push(Comparison {
                    fraction,
                    arm: arm.name.clone(),
                    against: other.name.clone(),
                    kind: "best_other".into(),
                    metric: metric.into(),
                    result: paired_t_test(&at(&arm.name).scores, &at(&other.name).scores, cfg.alpha)?,
                });
            }
        }
    }
    Ok(out)
}

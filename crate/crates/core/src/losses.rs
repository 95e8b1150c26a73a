//! Per-token losses and the majority-or-minority (MoM) sentence loss.
//!
//! Every base loss is a non-negative per-token term `ℓ(y_i, p_i)`. A sentence
//! loss averages `ℓ` over the sentence; the MoM term sums `ℓ` only over tokens
//! whose gold label is the majority class, divided by the same denominator.
//! With MoM enabled the two are mixed as `λ·base + (1-λ)·mom`.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::corpus::CorpusStats;
use crate::error::{Error, Result};
use crate::model::PredictionMatrix;

/// Floor applied to probabilities before taking a logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BaseLoss {
    CE,
    WCE1,
    WCE2,
    FL,
    DL,
}

impl BaseLoss {
    pub fn is_weighted(self) -> bool {
        matches!(self, BaseLoss::WCE1 | BaseLoss::WCE2)
    }

    pub fn name(self) -> &'static str {
        match self {
            BaseLoss::CE => "CE",
            BaseLoss::WCE1 => "WCE1",
            BaseLoss::WCE2 => "WCE2",
            BaseLoss::FL => "FL",
            BaseLoss::DL => "DL",
        }
    }
}

/// Divisor used for both the base and the MoM sentence terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Number of real tokens in the sentence.
    #[default]
    ByLength,
    /// A fixed padded length `M`.
    ByMaxLen(usize),
}

/// Dice denominator form. `SelfAdjusting` uses `(1-p)^ε·p + y + δ`;
/// `Literal` uses `(1-p)^ε + y + δ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DiceDenominator {
    #[default]
    SelfAdjusting,
    Literal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub base: BaseLoss,
    /// MoM mixing weight; `None` disables the MoM term.
    pub lambda: Option<f64>,
    pub beta: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub normalization: Normalization,
    pub dice: DiceDenominator,
}

impl LossConfig {
    pub fn new(base: BaseLoss) -> Self {
        Self {
            base,
            lambda: None,
            beta: 1.0,
            gamma: 2.0,
            epsilon: 1.0,
            delta: 0.01,
            normalization: Normalization::ByLength,
            dice: DiceDenominator::SelfAdjusting,
        }
    }

    pub fn with_mom(mut self, lambda: f64) -> Self {
        self.lambda = Some(lambda);
        self
    }

    pub fn mom_enabled(&self) -> bool {
        self.lambda.is_some()
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(l) = self.lambda {
            if !(0.0..=1.0).contains(&l) {
                return Err(Error::invalid("lambda", format!("{l} is outside [0, 1]")));
            }
        }
        if !(self.beta >= 1.0 && self.beta.is_finite()) {
            return Err(Error::invalid("beta", format!("{} is below 1", self.beta)));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::invalid("gamma", format!("{} is negative", self.gamma)));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invalid("epsilon", format!("{} is negative", self.epsilon)));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::invalid("delta", format!("{} is not positive", self.delta)));
        }
        if self.normalization == Normalization::ByMaxLen(0) {
            return Err(Error::invalid("normalization", "max length must be positive"));
        }
        Ok(())
    }

    fn denominator(&self, n_tokens: usize) -> Result<f64> {
        match self.normalization {
            Normalization::ByLength => {
                if n_tokens == 0 {
                    Err(Error::Empty("sentence has no tokens"))
                } else {
                    Ok(n_tokens as f64)
                }
            }
            Normalization::ByMaxLen(m) => {
                if n_tokens > m {
                    Err(Error::Shape(format!(
                        "sentence of {n_tokens} tokens exceeds max length {m}"
                    )))
                } else {
                    Ok(m as f64)
                }
            }
        }
    }
}

/// Per-class weights for weighted cross-entropy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub weights: Vec<f64>,
    /// Classes with no training tokens; their weight is 0.
    pub absent: Vec<usize>,
}

impl ClassWeights {
    pub fn uniform(n_classes: usize) -> Self {
        Self {
            weights: vec![1.0; n_classes],
            absent: Vec::new(),
        }
    }
}

/// WCE1: `s / (|Y| · s_k)`; WCE2: `log10((s - s_k) / s_k + β)`.
pub fn compute_class_weights(stats: &CorpusStats, variant: BaseLoss, beta: f64) -> Result<ClassWeights> {
    let s = stats.total_tokens as f64;
    if stats.total_tokens == 0 {
        return Err(Error::Empty("no training tokens for class weights"));
    }
    let n_classes = stats.per_class_counts.len() as f64;
    let mut absent = Vec::new();
    let weights = stats
        .per_class_counts
        .iter()
        .enumerate()
        .map(|(k, (name, count))| {
            if *count == 0 {
                warn!("class `{name}` has no training tokens; weight set to 0");
                absent.push(k);
                return Ok(0.0);
            }
            let sk = *count as f64;
            match variant {
                BaseLoss::WCE1 => Ok(s / (n_classes * sk)),
                BaseLoss::WCE2 => Ok(((s - sk) / sk + beta).log10()),
                other => Err(Error::invalid(
                    "variant",
                    format!("{} has no class weights", other.name()),
                )),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ClassWeights { weights, absent })
}

fn ln_floor(p: f64) -> f64 {
    p.max(PROB_FLOOR).ln()
}

fn d_ln_floor(p: f64) -> f64 {
    if p > PROB_FLOOR {
        1.0 / p
    } else {
        0.0
    }
}

/// Binary focal term `-(1-q)^γ · ln q` and its derivative in `q`.
pub(crate) fn focal_term(q: f64, gamma: f64) -> (f64, f64) {
    let a = 1.0 - q;
    let ln_q = ln_floor(q);
    if gamma == 0.0 {
        return (-ln_q, -d_ln_floor(q));
    }
    let a_pow = a.max(0.0).powf(gamma);
    let value = -a_pow * ln_q;
    let d_first = if a > 0.0 {
        gamma * a.powf(gamma - 1.0) * ln_q
    } else {
        0.0
    };
    (value, d_first - a_pow * d_ln_floor(q))
}

/// `1 - DSC` for one prediction `p` against a binary target, and its
/// derivative in `p`.
pub(crate) fn dice_term(p: f64, target: bool, eps: f64, delta: f64, form: DiceDenominator) -> (f64, f64) {
    let y = if target { 1.0 } else { 0.0 };
    let one_minus = (1.0 - p).max(0.0);
    let (a, da) = if eps == 0.0 {
        (1.0, 0.0)
    } else {
        let a = one_minus.powf(eps);
        let da = if one_minus > 0.0 {
            -eps * one_minus.powf(eps - 1.0)
        } else {
            0.0
        };
        (a, da)
    };
    let f = a * p;
    let df = a + da * p;
    let num = 2.0 * f * y + delta;
    let dnum = 2.0 * df * y;
    let (den, dden) = match form {
        DiceDenominator::SelfAdjusting => (f + y + delta, df),
        DiceDenominator::Literal => (a + y + delta, da),
    };
    let dsc = num / den;
    let d_dsc = (dnum * den - num * dden) / (den * den);
    (1.0 - dsc, -d_dsc)
}

/// Per-token loss for multiclass sequence labeling, bundled with the label
/// index of the majority class and optional WCE weights.
#[derive(Debug, Clone)]
pub struct SequenceLoss {
    cfg: LossConfig,
    majority: usize,
    weights: Option<ClassWeights>,
}

impl SequenceLoss {
    pub fn new(cfg: LossConfig, majority: usize, weights: Option<ClassWeights>) -> Result<Self> {
        cfg.validate()?;
        if cfg.base.is_weighted() && weights.is_none() {
            return Err(Error::invalid(
                "weights",
                format!("{} needs class weights", cfg.base.name()),
            ));
        }
        if let Some(w) = &weights {
            if let Some(bad) = w.weights.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
                return Err(Error::invalid(
                    "weights",
                    format!("weight {bad} is not a finite non-negative number"),
                ));
            }
        }
        Ok(Self { cfg, majority, weights })
    }

    pub fn config(&self) -> &LossConfig {
        &self.cfg
    }

    pub fn majority(&self) -> usize {
        self.majority
    }

    fn check_classes(&self, n_classes: usize) -> Result<()> {
        if self.majority >= n_classes {
            return Err(Error::Shape(format!(
                "majority index {} but only {n_classes} classes",
                self.majority
            )));
        }
        if let Some(w) = &self.weights {
            if w.weights.len() != n_classes {
                return Err(Error::Shape(format!(
                    "{} class weights for {n_classes} classes",
                    w.weights.len()
                )));
            }
        }
        Ok(())
    }

    fn weight(&self, class: usize) -> f64 {
        match (&self.weights, self.cfg.base.is_weighted()) {
            (Some(w), true) => w.weights[class],
            _ => 1.0,
        }
    }

    /// Loss of a single token given a one-hot target row.
    pub fn token_loss(&self, target: &[f64], probs: &[f64]) -> Result<f64> {
        if target.len() != probs.len() {
            return Err(Error::Shape(format!(
                "target has {} entries, probabilities {}",
                target.len(),
                probs.len()
            )));
        }
        let ones = target.iter().filter(|&&v| v == 1.0).count();
        let zeros = target.iter().filter(|&&v| v == 0.0).count();
        if ones != 1 || ones + zeros != target.len() {
            return Err(Error::invalid("target", "not a one-hot vector"));
        }
        self.check_classes(probs.len())?;
        let t = target.iter().position(|&v| v == 1.0).expect("one entry is 1");
        Ok(self.token_loss_at(t, probs))
    }

    /// Loss of a single token whose gold class index is `t`.
    pub fn token_loss_at(&self, t: usize, probs: &[f64]) -> f64 {
        self.token_term(t, probs, None)
    }

    /// Computes `ℓ` and, when `grad` is given, writes `∂ℓ/∂p` into it.
    fn token_term(&self, t: usize, probs: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let cfg = &self.cfg;
        match cfg.base {
            BaseLoss::CE | BaseLoss::WCE1 | BaseLoss::WCE2 => {
                let w = self.weight(t);
                if let Some(g) = grad {
                    g.fill(0.0);
                    g[t] = -w * d_ln_floor(probs[t]);
                }
                -w * ln_floor(probs[t])
            }
            BaseLoss::FL => {
                let mut total = 0.0;
                let mut grad = grad;
                for (k, &p) in probs.iter().enumerate() {
                    let (q, sign) = if k == t { (p, 1.0) } else { (1.0 - p, -1.0) };
                    let (v, dq) = focal_term(q, cfg.gamma);
                    total += v;
                    if let Some(g) = grad.as_deref_mut() {
                        g[k] = sign * dq;
                    }
                }
                total
            }
            BaseLoss::DL => {
                let (v, dp) = dice_term(probs[t], true, cfg.epsilon, cfg.delta, cfg.dice);
                if let Some(g) = grad {
                    g.fill(0.0);
                    g[t] = dp;
                }
                v
            }
        }
    }

    fn check_sentence(&self, labels: &[usize], probs: &PredictionMatrix) -> Result<f64> {
        if labels.len() != probs.len() {
            return Err(Error::Shape(format!(
                "{} labels but {} probability rows",
                labels.len(),
                probs.len()
            )));
        }
        self.check_classes(probs.n_classes())?;
        if let Some(&bad) = labels.iter().find(|&&l| l >= probs.n_classes()) {
            return Err(Error::Shape(format!("label {bad} out of range")));
        }
        self.cfg.denominator(labels.len())
    }

    /// Conventional sentence loss over all tokens.
    pub fn sentence_base_loss(&self, labels: &[usize], probs: &PredictionMatrix) -> Result<f64> {
        let denom = self.check_sentence(labels, probs)?;
        let sum: f64 = labels
            .iter()
            .enumerate()
            .map(|(i, &t)| self.token_loss_at(t, probs.row(i)))
            .sum();
        Ok(sum / denom)
    }

    /// Loss restricted to tokens whose gold label is the majority class.
    pub fn mom_loss(&self, labels: &[usize], probs: &PredictionMatrix) -> Result<f64> {
        let denom = self.check_sentence(labels, probs)?;
        let sum: f64 = labels
            .iter()
            .enumerate()
            .filter(|(_, &t)| t == self.majority)
            .map(|(i, &t)| self.token_loss_at(t, probs.row(i)))
            .sum();
        Ok(sum / denom)
    }

    /// `λ·base + (1-λ)·mom` with MoM enabled, the base loss otherwise.
    pub fn sentence_loss(&self, labels: &[usize], probs: &PredictionMatrix) -> Result<f64> {
        let base = self.sentence_base_loss(labels, probs)?;
        match self.cfg.lambda {
            None => Ok(base),
            Some(lambda) => {
                let mom = self.mom_loss(labels, probs)?;
                Ok(lambda * base + (1.0 - lambda) * mom)
            }
        }
    }

    /// Mean sentence loss over a collection.
    pub fn model_loss<L: AsRef<[usize]>>(&self, labels: &[L], probs: &[PredictionMatrix]) -> Result<f64> {
        if labels.is_empty() {
            return Err(Error::Empty("no sentences"));
        }
        if labels.len() != probs.len() {
            return Err(Error::Shape(format!(
                "{} label sequences but {} prediction matrices",
                labels.len(),
                probs.len()
            )));
        }
        let mut total = 0.0;
        for (y, p) in labels.iter().zip(probs) {
            total += self.sentence_loss(y.as_ref(), p)?;
        }
        Ok(total / labels.len() as f64)
    }

    /// Per-token multiplier applied to `ℓ` in the sentence loss.
    fn token_coefficient(&self, label: usize, denom: f64) -> f64 {
        match self.cfg.lambda {
            None => 1.0 / denom,
            Some(lambda) => {
                let in_mom = if label == self.majority { 1.0 } else { 0.0 };
                (lambda + (1.0 - lambda) * in_mom) / denom
            }
        }
    }

    /// Sentence loss and `∂L_sentence/∂p`, row-major `n_tokens × n_classes`.
    pub fn prob_gradient(&self, labels: &[usize], probs: &PredictionMatrix) -> Result<(f64, Vec<f64>)> {
        let denom = self.check_sentence(labels, probs)?;
        let c = probs.n_classes();
        let mut grad = vec![0.0; labels.len() * c];
        let mut loss = 0.0;
        for (i, &t) in labels.iter().enumerate() {
            let coef = self.token_coefficient(t, denom);
            let row = &mut grad[i * c..(i + 1) * c];
            loss += coef * self.token_term(t, probs.row(i), Some(row));
            row.iter_mut().for_each(|g| *g *= coef);
        }
        Ok((loss, grad))
    }

    /// Sentence loss and its gradient with respect to the softmax logits,
    /// row-major `n_tokens × n_classes`.
    pub fn logit_gradient(&self, labels: &[usize], probs: &PredictionMatrix) -> Result<(f64, Vec<f64>)> {
        let (loss, mut grad) = self.prob_gradient(labels, probs)?;
        let c = probs.n_classes();
        for i in 0..labels.len() {
            let p = probs.row(i);
            let g = &mut grad[i * c..(i + 1) * c];
            let dot: f64 = p.iter().zip(g.iter()).map(|(a, b)| a * b).sum();
            for (gj, pj) in g.iter_mut().zip(p) {
                *gj = pj * (*gj - dot);
            }
        }
        Ok((loss, grad))
    }
}

/// Loss and `∂ℓ/∂p` for a single binary prediction (used by the MRC heads).
pub fn binary_token_loss(cfg: &LossConfig, target: bool, p: f64) -> Result<(f64, f64)> {
    match cfg.base {
        BaseLoss::CE => {
            let (q, sign) = if target { (p, 1.0) } else { (1.0 - p, -1.0) };
            Ok((-ln_floor(q), -sign * d_ln_floor(q)))
        }
        BaseLoss::FL => {
            let (q, sign) = if target { (p, 1.0) } else { (1.0 - p, -1.0) };
            let (v, dq) = focal_term(q, cfg.gamma);
            Ok((v, sign * dq))
        }
        BaseLoss::DL => Ok(dice_term(p, target, cfg.epsilon, cfg.delta, cfg.dice)),
        other => Err(Error::invalid(
            "base",
            format!("{} is not available for binary heads", other.name()),
        )),
    }
}

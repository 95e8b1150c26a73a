//! Span extraction as per-category binary start/end detection.
//!
//! Every (sentence, category) pair becomes one example with two 0/1 vectors
//! marking where that category's spans start and end. The classifier gets the
//! queried category through a learned query embedding and predicts a start
//! and an end probability per token. Positions whose gold mark is 0 form the
//! majority group for the MoM term.

use serde::{Deserialize, Serialize};

use crate::corpus::{bio_violations, LabelScheme, LabeledCorpus};
use crate::error::{Error, Result};
use crate::losses::{binary_token_loss, BaseLoss, LossConfig, Normalization};
use crate::metrics::{bio_to_spans, Span};
use crate::model::{forward_cached, ForwardCache, ModelParameters, OutputKind};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MrcExample {
    /// Index of the source sentence.
    pub sentence: usize,
    pub tokens: Vec<String>,
    pub category: usize,
    pub starts: Vec<u8>,
    pub ends: Vec<u8>,
}

impl MrcExample {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn gold_spans(&self) -> Vec<Span> {
        decode_indicator(&self.starts, &self.ends, self.category)
    }
}

fn decode_indicator(starts: &[u8], ends: &[u8], category: usize) -> Vec<Span> {
    let s: Vec<f64> = starts.iter().map(|&v| v as f64).collect();
    let e: Vec<f64> = ends.iter().map(|&v| v as f64).collect();
    decode_spans(&s, &e, 0.5, category)
        .expect("0.5 is a valid threshold")
        .into_iter()
        .map(|p| p.span())
        .collect()
}

/// One example per (sentence, category), in sentence-major order.
pub fn convert_bio_to_mrc(corpus: &LabeledCorpus) -> Result<Vec<MrcExample>> {
    let scheme = corpus.scheme();
    let n_cat = scheme.categories().len();
    let mut out = Vec::with_capacity(corpus.len() * n_cat);
    for (si, s) in corpus.sentences().iter().enumerate() {
        if let Some((token, reason)) = bio_violations(s.labels(), scheme).into_iter().next() {
            return Err(Error::InvalidBio {
                sentence: si,
                token,
                reason,
            });
        }
        let spans = bio_to_spans(s.labels(), scheme);
        for category in 0..n_cat {
            let mut starts = vec![0u8; s.len()];
            let mut ends = vec![0u8; s.len()];
            for sp in spans.iter().filter(|sp| sp.category == category) {
                starts[sp.start] = 1;
                ends[sp.end] = 1;
            }
            out.push(MrcExample {
                sentence: si,
                tokens: s.tokens().to_vec(),
                category,
                starts,
                ends,
            });
        }
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct MrcRecord {
    tokens: Vec<String>,
    category: String,
    starts: Vec<u8>,
    ends: Vec<u8>,
}

/// One JSON object per line: `{tokens, category, starts, ends}`.
pub fn to_jsonl(examples: &[MrcExample], scheme: &LabelScheme) -> Result<String> {
    let mut out = String::new();
    for ex in examples {
        let rec = MrcRecord {
            tokens: ex.tokens.clone(),
            category: scheme.categories()[ex.category].clone(),
            starts: ex.starts.clone(),
            ends: ex.ends.clone(),
        };
        out.push_str(&serde_json::to_string(&rec)?);
        out.push('\n');
    }
    Ok(out)
}

/// Reads examples written by [`to_jsonl`]. The sentence index is the
/// zero-based line number among non-empty lines divided by the category count.
pub fn from_jsonl(text: &str, scheme: &LabelScheme) -> Result<Vec<MrcExample>> {
    let n_cat = scheme.categories().len().max(1);
    let mut out = Vec::new();
    for (i, line) in text.lines().filter(|l| !l.trim().is_empty()).enumerate() {
        let rec: MrcRecord = serde_json::from_str(line)?;
        let category = scheme
            .categories()
            .iter()
            .position(|c| *c == rec.category)
            .ok_or_else(|| Error::UnknownLabel {
                line: i + 1,
                label: rec.category.clone(),
            })?;
        if rec.starts.len() != rec.tokens.len() || rec.ends.len() != rec.tokens.len() {
            return Err(Error::Shape(format!(
                "record {}: vector lengths differ from token count",
                i + 1
            )));
        }
        out.push(MrcExample {
            sentence: i / n_cat,
            tokens: rec.tokens,
            category,
            starts: rec.starts,
            ends: rec.ends,
        });
    }
    Ok(out)
}

/// Start and end probabilities of one query.
#[derive(Debug, Clone, PartialEq)]
pub struct MrcOutput {
    pub start: Vec<f64>,
    pub end: Vec<f64>,
}

fn check_mrc_model(params: &ModelParameters) -> Result<()> {
    let cfg = params.config();
    if cfg.output != OutputKind::Sigmoid || cfg.n_classes != 2 || cfg.n_queries == 0 {
        return Err(Error::invalid(
            "params",
            "span heads need two sigmoid outputs and a query embedding",
        ));
    }
    Ok(())
}

pub fn mrc_forward_cached(params: &ModelParameters, ids: &[usize], category: usize) -> Result<ForwardCache> {
    check_mrc_model(params)?;
    forward_cached(params, ids, Some(category))
}

pub fn mrc_forward(params: &ModelParameters, ids: &[usize], category: usize) -> Result<MrcOutput> {
    let cache = mrc_forward_cached(params, ids, category)?;
    Ok(split_outputs(&cache.outputs))
}

pub(crate) fn split_outputs(interleaved: &[f64]) -> MrcOutput {
    MrcOutput {
        start: interleaved.iter().step_by(2).copied().collect(),
        end: interleaved.iter().skip(1).step_by(2).copied().collect(),
    }
}

/// Binary loss over both vectors, optionally mixed with the MoM term over
/// positions whose gold mark is 0.
#[derive(Debug, Clone)]
pub struct MrcLoss {
    cfg: LossConfig,
}

impl MrcLoss {
    pub fn new(cfg: LossConfig) -> Result<Self> {
        cfg.validate()?;
        if cfg.base.is_weighted() {
            return Err(Error::invalid(
                "base",
                format!("{} is not available for span heads", cfg.base.name()),
            ));
        }
        Ok(Self { cfg })
    }

    pub fn config(&self) -> &LossConfig {
        &self.cfg
    }

    fn denominator(&self, n: usize) -> Result<f64> {
        match self.cfg.normalization {
            Normalization::ByLength if n > 0 => Ok(2.0 * n as f64),
            Normalization::ByLength => Err(Error::Empty("example has no tokens")),
            Normalization::ByMaxLen(m) if n <= m => Ok(2.0 * m as f64),
            Normalization::ByMaxLen(m) => Err(Error::Shape(format!("example of {n} tokens exceeds max length {m}"))),
        }
    }

    fn targets<'a>(example: &'a MrcExample, probs: &'a MrcOutput) -> Result<impl Iterator<Item = (bool, f64)> + 'a> {
        let n = example.len();
        if probs.start.len() != n || probs.end.len() != n {
            return Err(Error::Shape(format!(
                "{n} tokens but {}/{} start/end probabilities",
                probs.start.len(),
                probs.end.len()
            )));
        }
        Ok(example
            .starts
            .iter()
            .zip(&probs.start)
            .chain(example.ends.iter().zip(&probs.end))
            .map(|(&y, &p)| (y == 1, p)))
    }

    pub fn base_loss(&self, example: &MrcExample, probs: &MrcOutput) -> Result<f64> {
        let denom = self.denominator(example.len())?;
        let mut sum = 0.0;
        for (y, p) in Self::targets(example, probs)? {
            sum += binary_token_loss(&self.cfg, y, p)?.0;
        }
        Ok(sum / denom)
    }

    pub fn mom_loss(&self, example: &MrcExample, probs: &MrcOutput) -> Result<f64> {
        let denom = self.denominator(example.len())?;
        let mut sum = 0.0;
        for (y, p) in Self::targets(example, probs)? {
            if !y {
                sum += binary_token_loss(&self.cfg, y, p)?.0;
            }
        }
        Ok(sum / denom)
    }

    pub fn loss(&self, example: &MrcExample, probs: &MrcOutput) -> Result<f64> {
        let base = self.base_loss(example, probs)?;
        match self.cfg.lambda {
            None => Ok(base),
            Some(l) => Ok(l * base + (1.0 - l) * self.mom_loss(example, probs)?),
        }
    }

    /// Loss and gradient with respect to the sigmoid logits, interleaved
    /// `[start_0, end_0, start_1, end_1, ...]` like the model outputs.
    pub fn logit_gradient(&self, example: &MrcExample, outputs: &[f64]) -> Result<(f64, Vec<f64>)> {
        let n = example.len();
        if outputs.len() != 2 * n {
            return Err(Error::Shape(format!("{} outputs for {n} tokens", outputs.len())));
        }
        let denom = self.denominator(n)?;
        let mut grad = vec![0.0; 2 * n];
        let mut loss = 0.0;
        for i in 0..n {
            for (head, marks) in [(0, &example.starts), (1, &example.ends)] {
                let y = marks[i] == 1;
                let p = outputs[2 * i + head];
                let coef = match self.cfg.lambda {
                    None => 1.0 / denom,
                    Some(l) => (l + (1.0 - l) * if y { 0.0 } else { 1.0 }) / denom,
                };
                let (v, dp) = binary_token_loss(&self.cfg, y, p)?;
                loss += coef * v;
                grad[2 * i + head] = coef * dp * p * (1.0 - p);
            }
        }
        Ok((loss, grad))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpanPrediction {
    pub category: usize,
    pub start: usize,
    pub end: usize,
    /// Product of the start and end probabilities.
    pub score: f64,
}

impl SpanPrediction {
    pub fn span(&self) -> Span {
        Span::new(self.category, self.start, self.end)
    }
}

/// Pairs each start at or above `threshold` (left to right) with the nearest
/// unused end at or after it. Unpaired marks are dropped.
pub fn decode_spans(start: &[f64], end: &[f64], threshold: f64, category: usize) -> Result<Vec<SpanPrediction>> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::invalid("threshold", format!("{threshold} is outside (0, 1)")));
    }
    if start.len() != end.len() {
        return Err(Error::Shape("start and end vectors differ in length".into()));
    }
    let ends: Vec<usize> = (0..end.len()).filter(|&i| end[i] >= threshold).collect();
    let mut used = vec![false; ends.len()];
    let mut out = Vec::new();
    for s in (0..start.len()).filter(|&i| start[i] >= threshold) {
        if let Some(j) = (0..ends.len()).find(|&j| !used[j] && ends[j] >= s) {
            used[j] = true;
            out.push(SpanPrediction {
                category,
                start: s,
                end: ends[j],
                score: start[s] * end[ends[j]],
            });
        }
    }
    Ok(out)
}

/// Guard for configs that name a weighted base loss for the span framework.
pub fn supports(base: BaseLoss) -> bool {
    !base.is_weighted()
}

//! Token-level and span-level evaluation.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{LabelKind, LabelScheme, LabeledCorpus, LengthBin};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    /// Zero whenever a denominator is zero.
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self { precision, recall, f1 }
    }

    /// Unweighted mean of each field; zero for an empty input.
    pub fn mean<'a, I: IntoIterator<Item = &'a Prf>>(items: I) -> Self {
        let mut n = 0usize;
        let mut acc = Prf::default();
        for p in items {
            acc.precision += p.precision;
            acc.recall += p.recall;
            acc.f1 += p.f1;
            n += 1;
        }
        if n == 0 {
            return acc;
        }
        let n = n as f64;
        Prf {
            precision: acc.precision / n,
            recall: acc.recall / n,
            f1: acc.f1 / n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl ClassCounts {
    pub fn support(&self) -> usize {
        self.tp + self.fn_
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub per_class: Vec<ClassCounts>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenScores {
    pub counts: ConfusionCounts,
    pub per_class: Vec<Prf>,
    /// Classes that occur in the gold or the predicted labels.
    pub included: Vec<bool>,
    pub macro_all: Prf,
    /// Macro mean over included entity classes only.
    pub macro_entity: Prf,
}

pub fn token_scores(gold: &[usize], pred: &[usize], scheme: &LabelScheme) -> Result<TokenScores> {
    if gold.len() != pred.len() {
        return Err(Error::Shape(format!(
            "{} gold labels but {} predictions",
            gold.len(),
            pred.len()
        )));
    }
    let k = scheme.len();
    if let Some(&bad) = gold.iter().chain(pred).find(|&&l| l >= k) {
        return Err(Error::Shape(format!("label {bad} out of range")));
    }
    let mut counts = vec![ClassCounts::default(); k];
    for (&g, &p) in gold.iter().zip(pred) {
        if g == p {
            counts[g].tp += 1;
        } else {
            counts[g].fn_ += 1;
            counts[p].fp += 1;
        }
    }
    Ok(scores_from_counts(counts, scheme))
}

fn scores_from_counts(counts: Vec<ClassCounts>, scheme: &LabelScheme) -> TokenScores {
    let per_class: Vec<Prf> = counts.iter().map(|c| Prf::from_counts(c.tp, c.fp, c.fn_)).collect();
    let included: Vec<bool> = counts.iter().map(|c| c.tp + c.fp + c.fn_ > 0).collect();
    let macro_all = Prf::mean(per_class.iter().zip(&included).filter(|(_, &inc)| inc).map(|(p, _)| p));
    let macro_entity = Prf::mean(
        per_class
            .iter()
            .enumerate()
            .filter(|&(i, _)| included[i] && i != scheme.majority())
            .map(|(_, p)| p),
    );
    TokenScores {
        counts: ConfusionCounts { per_class: counts },
        per_class,
        included,
        macro_all,
        macro_entity,
    }
}

/// Token scores over whole corpora of aligned label sequences.
pub fn corpus_token_scores<G, P>(gold: &[G], pred: &[P], scheme: &LabelScheme) -> Result<TokenScores>
where
    G: AsRef<[usize]>,
    P: AsRef<[usize]>,
{
    check_aligned(gold, pred)?;
    let g: Vec<usize> = gold.iter().flat_map(|s| s.as_ref().iter().copied()).collect();
    let p: Vec<usize> = pred.iter().flat_map(|s| s.as_ref().iter().copied()).collect();
    token_scores(&g, &p, scheme)
}

fn check_aligned<G: AsRef<[usize]>, P: AsRef<[usize]>>(gold: &[G], pred: &[P]) -> Result<()> {
    if gold.len() != pred.len() {
        return Err(Error::Shape(format!(
            "{} gold sentences but {} predicted",
            gold.len(),
            pred.len()
        )));
    }
    for (i, (g, p)) in gold.iter().zip(pred).enumerate() {
        if g.as_ref().len() != p.as_ref().len() {
            return Err(Error::Shape(format!(
                "sentence {i}: {} gold labels but {} predicted",
                g.as_ref().len(),
                p.as_ref().len()
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergedScore {
    pub name: String,
    pub scores: Prf,
}

/// Averages the `B-` and `I-` scores of each category; the majority class is
/// kept as its own row at the end. Classes absent from the evaluation are left
/// out of the average.
pub fn merge_bi(scores: &TokenScores, scheme: &LabelScheme) -> Vec<MergedScore> {
    let mut rows = Vec::new();
    for (ci, cat) in scheme.categories().iter().enumerate() {
        let members: Vec<&Prf> = [scheme.begin(ci), scheme.inside(ci)]
            .into_iter()
            .flatten()
            .filter(|&k| scores.included[k])
            .map(|k| &scores.per_class[k])
            .collect();
        if members.is_empty() {
            continue;
        }
        rows.push(MergedScore {
            name: cat.clone(),
            scores: Prf::mean(members),
        });
    }
    let o = scheme.majority();
    if scores.included[o] {
        rows.push(MergedScore {
            name: scheme.majority_name().to_string(),
            scores: scores.per_class[o],
        });
    }
    rows
}

/// Fraction of sentences whose labels all match.
pub fn sentence_accuracy<G, P>(gold: &[G], pred: &[P]) -> Result<f64>
where
    G: AsRef<[usize]>,
    P: AsRef<[usize]>,
{
    check_aligned(gold, pred)?;
    if gold.is_empty() {
        return Err(Error::Empty("no sentences to evaluate"));
    }
    let correct = gold.iter().zip(pred).filter(|(g, p)| g.as_ref() == p.as_ref()).count();
    Ok(correct as f64 / gold.len() as f64)
}

/// Fraction of tokens labeled correctly.
pub fn word_accuracy<G, P>(gold: &[G], pred: &[P]) -> Result<f64>
where
    G: AsRef<[usize]>,
    P: AsRef<[usize]>,
{
    check_aligned(gold, pred)?;
    let mut total = 0usize;
    let mut correct = 0usize;
    for (g, p) in gold.iter().zip(pred) {
        total += g.as_ref().len();
        correct += g.as_ref().iter().zip(p.as_ref()).filter(|(a, b)| a == b).count();
    }
    if total == 0 {
        return Err(Error::Empty("no tokens to evaluate"));
    }
    Ok(correct as f64 / total as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Span {
    pub category: usize,
    pub start: usize,
    /// Inclusive.
    pub end: usize,
}

impl Span {
    pub fn new(category: usize, start: usize, end: usize) -> Self {
        debug_assert!(start <= end);
        Self { category, start, end }
    }
}

/// Extracts spans from a possibly invalid label sequence. An `I-X` that does
/// not continue an open `X` span opens a new one.
pub fn bio_to_spans(labels: &[usize], scheme: &LabelScheme) -> Vec<Span> {
    let mut spans = Vec::new();
    let mut open: Option<Span> = None;
    for (i, &l) in labels.iter().enumerate() {
        match scheme.kind(l) {
            LabelKind::Majority => {
                spans.extend(open.take());
            }
            LabelKind::Begin(c) => {
                spans.extend(open.take());
                open = Some(Span::new(c, i, i));
            }
            LabelKind::Inside(c) => match open.as_mut() {
                Some(s) if s.category == c => s.end = i,
                _ => {
                    spans.extend(open.take());
                    open = Some(Span::new(c, i, i));
                }
            },
        }
    }
    spans.extend(open);
    spans
}

/// Renders spans as BIO labels over `len` tokens. Spans are placed in
/// `(start, end)` order; a span overlapping an already placed one is skipped.
pub fn spans_to_bio(spans: &[Span], len: usize, scheme: &LabelScheme) -> Vec<usize> {
    let mut labels = vec![scheme.majority(); len];
    let mut taken = vec![false; len];
    let mut sorted = spans.to_vec();
    sorted.sort_by_key(|s| (s.start, s.end, s.category));
    for s in sorted {
        if s.end >= len || taken[s.start..=s.end].iter().any(|&t| t) {
            continue;
        }
        let (Some(b), Some(inside)) = (scheme.begin(s.category), scheme.inside(s.category)) else {
            continue;
        };
        for (k, pos) in (s.start..=s.end).enumerate() {
            labels[pos] = if k == 0 { b } else { inside };
            taken[pos] = true;
        }
    }
    labels
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategorySpanScore {
    pub category: usize,
    pub counts: ClassCounts,
    pub scores: Prf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanScores {
    /// Categories occurring in gold or predictions, ascending.
    pub per_category: Vec<CategorySpanScore>,
    pub macro_avg: Prf,
    pub micro: Prf,
}

/// Exact-match span scoring; sentences are matched index by index.
pub fn span_f1<G, P>(gold: &[G], pred: &[P]) -> Result<SpanScores>
where
    G: AsRef<[Span]>,
    P: AsRef<[Span]>,
{
    if gold.len() != pred.len() {
        return Err(Error::Shape(format!(
            "{} gold sentences but {} predicted",
            gold.len(),
            pred.len()
        )));
    }
    let mut counts: BTreeMap<usize, ClassCounts> = BTreeMap::new();
    for (g, p) in gold.iter().zip(pred) {
        let mut remaining: BTreeMap<Span, usize> = BTreeMap::new();
        for s in g.as_ref() {
            *remaining.entry(*s).or_default() += 1;
            counts.entry(s.category).or_default();
        }
        for s in p.as_ref() {
            let c = counts.entry(s.category).or_default();
            match remaining.get_mut(s) {
                Some(n) if *n > 0 => {
                    *n -= 1;
                    c.tp += 1;
                }
                _ => c.fp += 1,
            }
        }
        for (s, n) in remaining {
            counts.get_mut(&s.category).expect("inserted above").fn_ += n;
        }
    }
    let per_category: Vec<CategorySpanScore> = counts
        .into_iter()
        .map(|(category, c)| CategorySpanScore {
            category,
            counts: c,
            scores: Prf::from_counts(c.tp, c.fp, c.fn_),
        })
        .collect();
    let macro_avg = Prf::mean(per_category.iter().map(|c| &c.scores));
    let (tp, fp, fn_) = per_category.iter().fold((0, 0, 0), |acc, c| {
        (acc.0 + c.counts.tp, acc.1 + c.counts.fp, acc.2 + c.counts.fn_)
    });
    Ok(SpanScores {
        per_category,
        macro_avg,
        micro: Prf::from_counts(tp, fp, fn_),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRow {
    pub name: String,
    pub scores: Prf,
    pub support: usize,
    pub included: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinAccuracy {
    pub bin: String,
    pub n_sentences: usize,
    pub sentence_accuracy: f64,
}

/// Everything reported for one evaluation split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_class: Vec<ClassRow>,
    pub macro_all: Prf,
    pub macro_entity: Prf,
    pub merged: Vec<MergedScore>,
    pub spans: SpanScores,
    pub sentence_accuracy: f64,
    pub word_accuracy: f64,
    pub per_bin: Vec<BinAccuracy>,
}

impl MetricsReport {
    pub fn class_f1(&self, name: &str) -> Option<f64> {
        self.per_class.iter().find(|r| r.name == name).map(|r| r.scores.f1)
    }
}

/// Full report for predicted label sequences aligned with `gold`.
pub fn evaluate(gold: &LabeledCorpus, predictions: &[Vec<usize>]) -> Result<MetricsReport> {
    let scheme = gold.scheme();
    let gold_labels = gold.label_sequences();
    let scores = corpus_token_scores(&gold_labels, predictions, scheme)?;
    let per_class = scheme
        .classes()
        .iter()
        .enumerate()
        .map(|(k, name)| ClassRow {
            name: name.clone(),
            scores: scores.per_class[k],
            support: scores.counts.per_class[k].support(),
            included: scores.included[k],
        })
        .collect();
    let gold_spans: Vec<Vec<Span>> = gold_labels.iter().map(|l| bio_to_spans(l, scheme)).collect();
    let pred_spans: Vec<Vec<Span>> = predictions.iter().map(|l| bio_to_spans(l, scheme)).collect();

    let mut per_bin = Vec::new();
    for (bin, idx) in crate::corpus::bin_by_length(gold) {
        let g: Vec<&[usize]> = idx.iter().map(|&i| gold_labels[i].as_slice()).collect();
        let p: Vec<&[usize]> = idx.iter().map(|&i| predictions[i].as_slice()).collect();
        per_bin.push(BinAccuracy {
            bin: bin.to_string(),
            n_sentences: idx.len(),
            sentence_accuracy: sentence_accuracy(&g, &p)?,
        });
    }
    debug_assert!(per_bin.len() <= LengthBin::COUNT);

    Ok(MetricsReport {
        merged: merge_bi(&scores, scheme),
        macro_all: scores.macro_all,
        macro_entity: scores.macro_entity,
        per_class,
        spans: span_f1(&gold_spans, &pred_spans)?,
        sentence_accuracy: sentence_accuracy(&gold_labels, predictions)?,
        word_accuracy: word_accuracy(&gold_labels, predictions)?,
        per_bin,
    })
}

/// One row per class and merged category, then aggregate rows.
pub fn report_to_tsv(report: &MetricsReport) -> String {
    let mut out = String::from("kind\tname\tprecision\trecall\tf1\tsupport\n");
    let mut row = |kind: &str, name: &str, p: &Prf, support: &str| {
        let _ = writeln!(
            out,
            "{kind}\t{name}\t{}\t{}\t{}\t{support}",
            p.precision, p.recall, p.f1
        );
    };
    for c in &report.per_class {
        row("class", &c.name, &c.scores, &c.support.to_string());
    }
    for m in &report.merged {
        row("category", &m.name, &m.scores, "");
    }
    row("macro", "all", &report.macro_all, "");
    row("macro", "entity", &report.macro_entity, "");
    row("span", "macro", &report.spans.macro_avg, "");
    row("span", "micro", &report.spans.micro, "");
    let _ = writeln!(out, "accuracy\tsentence\t\t\t{}\t", report.sentence_accuracy);
    let _ = writeln!(out, "accuracy\tword\t\t\t{}\t", report.word_accuracy);
    for b in &report.per_bin {
        let _ = writeln!(out, "bin\t{}\t\t\t{}\t{}", b.bin, b.sentence_accuracy, b.n_sentences);
    }
    out
}

/// Per-category table in percent, with merged B/I rows.
pub fn report_to_markdown(report: &MetricsReport) -> String {
    let mut out = String::from("| Class | Prec. | Rec. | F1 |\n|---|---:|---:|---:|\n");
    let pct = |v: f64| format!("{:.2}", 100.0 * v);
    for m in &report.merged {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} |",
            m.name,
            pct(m.scores.precision),
            pct(m.scores.recall),
            pct(m.scores.f1)
        );
    }
    let _ = writeln!(
        out,
        "| macro (all) | {} | {} | {} |",
        pct(report.macro_all.precision),
        pct(report.macro_all.recall),
        pct(report.macro_all.f1)
    );
    let _ = writeln!(
        out,
        "| macro (entity) | {} | {} | {} |",
        pct(report.macro_entity.precision),
        pct(report.macro_entity.recall),
        pct(report.macro_entity.f1)
    );
    let _ = writeln!(
        out,
        "\nspan F1 {} · sentence accuracy {} · word accuracy {}",
        pct(report.spans.macro_avg.f1),
        pct(report.sentence_accuracy),
        pct(report.word_accuracy)
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scheme() -> LabelScheme {
        LabelScheme::from_categories(["X", "Y"], "O").unwrap()
    }

    fn ids(s: &LabelScheme, names: &[&str]) -> Vec<usize> {
        names.iter().map(|n| s.index(n).unwrap()).collect()
    }

    fn close(a: f64, b: f64) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }

    #[test]
    fn token_score_example() {
        let s = LabelScheme::from_categories(["X"], "O").unwrap();
        let g = ids(&s, &["O", "B-X", "I-X", "O"]);
        let p = ids(&s, &["O", "B-X", "O", "O"]);
        let r = token_scores(&g, &p, &s).unwrap();
        close(r.per_class[0].f1, 0.8);
        close(r.per_class[1].f1, 1.0);
        close(r.per_class[2].f1, 0.0);
        close(r.macro_all.f1, 0.6);
        close(r.macro_entity.f1, 0.5);
    }

    #[test]
    fn perfect_prediction_and_exclusion() {
        let s = scheme();
        let g = ids(&s, &["O", "B-X", "I-X"]);
        let r = token_scores(&g, &g, &s).unwrap();
        assert!(!r.included[s.index("B-Y").unwrap()]);
        close(r.macro_all.f1, 1.0);
        assert!(token_scores(&g, &g[..2], &s).is_err());
    }

    #[test]
    fn merged_rows() {
        let s = scheme();
        let mut sc = token_scores(&[0, 1, 2], &[0, 1, 2], &s).unwrap();
        sc.per_class[1].f1 = 0.9;
        sc.per_class[2].f1 = 0.7;
        let m = merge_bi(&sc, &s);
        assert_eq!(m.len(), 2);
        assert_eq!(m[0].name, "X");
        close(m[0].scores.f1, 0.8);
        assert_eq!(m[1].name, "O");

        let only_b = token_scores(&[0, 1], &[0, 1], &s).unwrap();
        let m = merge_bi(&only_b, &s);
        close(m[0].scores.f1, only_b.per_class[1].f1);
    }

    #[test]
    fn accuracies() {
        let g = vec![vec![0, 1], vec![0, 0]];
        let p = vec![vec![0, 1], vec![0, 1]];
        close(sentence_accuracy(&g, &p).unwrap(), 0.5);
        close(word_accuracy(&g, &p).unwrap(), 0.75);
        let g1 = vec![vec![0]; 10];
        let mut p1 = g1.clone();
        p1[3] = vec![1];
        close(word_accuracy(&g1, &p1).unwrap(), 0.9);
        close(sentence_accuracy(&g1, &p1).unwrap(), 0.9);
        let empty: Vec<Vec<usize>> = vec![];
        assert!(word_accuracy(&empty, &empty).is_err());
    }

    #[test]
    fn span_extraction() {
        let s = scheme();
        let spans = bio_to_spans(&ids(&s, &["B-X", "I-X", "O", "B-Y"]), &s);
        assert_eq!(spans, vec![Span::new(0, 0, 1), Span::new(1, 3, 3)]);
        assert_eq!(bio_to_spans(&ids(&s, &["I-X"]), &s), vec![Span::new(0, 0, 0)]);
        assert_eq!(
            bio_to_spans(&ids(&s, &["B-X", "I-Y"]), &s),
            vec![Span::new(0, 0, 0), Span::new(1, 1, 1)]
        );
        let labels = ids(&s, &["B-X", "I-X", "B-X", "O", "B-Y"]);
        assert_eq!(spans_to_bio(&bio_to_spans(&labels, &s), 5, &s), labels);
    }

    #[test]
    fn span_scores() {
        let g = vec![vec![Span::new(0, 0, 1)]];
        let p = vec![vec![Span::new(0, 0, 1), Span::new(0, 3, 4)]];
        let r = span_f1(&g, &p).unwrap();
        close(r.macro_avg.precision, 0.5);
        close(r.macro_avg.recall, 1.0);
        close(r.macro_avg.f1, 2.0 / 3.0);
        let off = vec![vec![Span::new(0, 0, 2)]];
        let r = span_f1(&g, &off).unwrap();
        assert_eq!(r.per_category[0].counts, ClassCounts { tp: 0, fp: 1, fn_: 1 });
        close(span_f1(&g, &g).unwrap().macro_avg.f1, 1.0);
    }
}

//! CoNLL-style BIO corpora: parsing, validation, statistics, vocabularies and
//! sentence-level resampling.
//!
//! A corpus is a list of sentences whose labels index into a [`LabelScheme`].
//! The scheme holds one majority label (normally `O`) and a `B-`/`I-` pair for
//! every entity category.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use log::warn;
use rand::seq::index;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Role of a single label within a BIO scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LabelKind {
    Majority,
    Begin(usize),
    Inside(usize),
}

impl LabelKind {
    pub fn category(self) -> Option<usize> {
        match self {
            LabelKind::Majority => None,
            LabelKind::Begin(c) | LabelKind::Inside(c) => Some(c),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SchemeRepr {
    classes: Vec<String>,
    majority_class: String,
}

/// The ordered label inventory of a corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SchemeRepr", into = "SchemeRepr")]
pub struct LabelScheme {
    classes: Vec<String>,
    majority: usize,
    categories: Vec<String>,
    kinds: Vec<LabelKind>,
}

impl TryFrom<SchemeRepr> for LabelScheme {
    type Error = Error;
    fn try_from(r: SchemeRepr) -> Result<Self> {
        LabelScheme::new(r.classes, &r.majority_class)
    }
}

impl From<LabelScheme> for SchemeRepr {
    fn from(s: LabelScheme) -> Self {
        SchemeRepr {
            majority_class: s.classes[s.majority].clone(),
            classes: s.classes,
        }
    }
}

fn split_prefix(label: &str) -> Option<(char, &str)> {
    let (prefix, cat) = label.split_once('-')?;
    if cat.is_empty() {
        return None;
    }
    match prefix {
        "B" => Some(('B', cat)),
        "I" => Some(('I', cat)),
        _ => None,
    }
}

impl LabelScheme {
    /// Builds a scheme from an explicit class list.
    pub fn new(classes: Vec<String>, majority_class: &str) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for c in &classes {
            if !seen.insert(c.as_str()) {
                return Err(Error::Scheme(format!("duplicate label `{c}`")));
            }
        }
        let majority = classes
            .iter()
            .position(|c| c == majority_class)
            .ok_or_else(|| Error::Scheme(format!("majority class `{majority_class}` not in classes")))?;

        let mut categories: Vec<String> = Vec::new();
        for (i, c) in classes.iter().enumerate() {
            if i == majority {
                continue;
            }
            match split_prefix(c) {
                Some(('B', cat)) => {
                    if !categories.iter().any(|x| x == cat) {
                        categories.push(cat.to_string());
                    }
                }
                Some(('I', cat)) => {
                    if !classes.iter().any(|x| x == &format!("B-{cat}")) {
                        return Err(Error::Scheme(format!("`{c}` has no matching `B-{cat}`")));
                    }
                }
                _ => {
                    return Err(Error::Scheme(format!(
                        "label `{c}` is neither the majority class nor B-/I- prefixed"
                    )))
                }
            }
        }

        let kinds = classes
            .iter()
            .enumerate()
            .map(|(i, c)| {
                if i == majority {
                    return LabelKind::Majority;
                }
                let (p, cat) = split_prefix(c).expect("validated above");
                let ci = categories.iter().position(|x| x == cat).expect("validated");
                if p == 'B' {
                    LabelKind::Begin(ci)
                } else {
                    LabelKind::Inside(ci)
                }
            })
            .collect();

        Ok(Self {
            classes,
            majority,
            categories,
            kinds,
        })
    }

    /// Infers a scheme from observed labels: `O` first, then `B-`/`I-` pairs
    /// sorted by category name.
    pub fn infer<'a, I>(labels: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        Self::infer_with_majority(labels, "O")
    }

    pub fn infer_with_majority<'a, I>(labels: I, majority_class: &str) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut cats = BTreeSet::new();
        for l in labels {
            if l == majority_class {
                continue;
            }
            match split_prefix(l) {
                Some((_, cat)) => {
                    cats.insert(cat.to_string());
                }
                None => {
                    return Err(Error::Scheme(format!(
                        "label `{l}` is neither `{majority_class}` nor B-/I- prefixed"
                    )))
                }
            }
        }
        Self::from_categories(cats.iter().map(String::as_str), majority_class)
    }

    /// Scheme with the given categories, in the given order.
    pub fn from_categories<'a, I>(categories: I, majority_class: &str) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut classes = vec![majority_class.to_string()];
        for cat in categories {
            classes.push(format!("B-{cat}"));
            classes.push(format!("I-{cat}"));
        }
        Self::new(classes, majority_class)
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn class(&self, idx: usize) -> &str {
        &self.classes[idx]
    }

    pub fn index(&self, label: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == label)
    }

    pub fn majority(&self) -> usize {
        self.majority
    }

    pub fn majority_name(&self) -> &str {
        &self.classes[self.majority]
    }

    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    pub fn kind(&self, idx: usize) -> LabelKind {
        self.kinds[idx]
    }

    pub fn begin(&self, category: usize) -> Option<usize> {
        self.kinds.iter().position(|k| *k == LabelKind::Begin(category))
    }

    pub fn inside(&self, category: usize) -> Option<usize> {
        self.kinds.iter().position(|k| *k == LabelKind::Inside(category))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    tokens: Vec<String>,
    labels: Vec<usize>,
}

impl Sentence {
    pub fn new(tokens: Vec<String>, labels: Vec<usize>) -> Result<Self> {
        if tokens.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} tokens but {} labels",
                tokens.len(),
                labels.len()
            )));
        }
        if tokens.is_empty() {
            return Err(Error::Empty("sentence has no tokens"));
        }
        Ok(Self { tokens, labels })
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    fn truncated(&self, max_len: usize) -> Sentence {
        Sentence {
            tokens: self.tokens[..max_len].to_vec(),
            labels: self.labels[..max_len].to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledCorpus {
    scheme: LabelScheme,
    sentences: Vec<Sentence>,
    split: Split,
}

impl LabeledCorpus {
    pub fn new(scheme: LabelScheme, sentences: Vec<Sentence>, split: Split) -> Result<Self> {
        for (si, s) in sentences.iter().enumerate() {
            if let Some(&bad) = s.labels.iter().find(|&&l| l >= scheme.len()) {
                return Err(Error::Shape(format!(
                    "sentence {si}: label index {bad} out of range for {} classes",
                    scheme.len()
                )));
            }
        }
        Ok(Self {
            scheme,
            sentences,
            split,
        })
    }

    pub fn scheme(&self) -> &LabelScheme {
        &self.scheme
    }

    pub fn sentences(&self) -> &[Sentence] {
        &self.sentences
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    /// A corpus over the same scheme holding the sentences at `indices`.
    pub fn select(&self, indices: &[usize]) -> LabeledCorpus {
        LabeledCorpus {
            scheme: self.scheme.clone(),
            sentences: indices.iter().map(|&i| self.sentences[i].clone()).collect(),
            split: self.split,
        }
    }

    /// Cuts every sentence to at most `max_len` tokens. Returns the new corpus
    /// and the number of sentences that were shortened.
    pub fn truncate(&self, max_len: usize) -> Result<(LabeledCorpus, usize)> {
        if max_len == 0 {
            return Err(Error::invalid("max_len", "must be at least 1"));
        }
        let mut count = 0;
        let sentences = self
            .sentences
            .iter()
            .map(|s| {
                if s.len() > max_len {
                    count += 1;
                    s.truncated(max_len)
                } else {
                    s.clone()
                }
            })
            .collect();
        if count > 0 {
            warn!("{count} {} sentence(s) truncated to {max_len} tokens", self.split);
        }
        Ok((
            LabeledCorpus {
                scheme: self.scheme.clone(),
                sentences,
                split: self.split,
            },
            count,
        ))
    }

    pub fn max_sentence_len(&self) -> usize {
        self.sentences.iter().map(Sentence::len).max().unwrap_or(0)
    }

    pub fn total_tokens(&self) -> usize {
        self.sentences.iter().map(Sentence::len).sum()
    }

    /// Label sequences as plain vectors.
    pub fn label_sequences(&self) -> Vec<Vec<usize>> {
        self.sentences.iter().map(|s| s.labels.clone()).collect()
    }
}

const DOCSTART: &str = "-DOCSTART-";

/// Parses whitespace-column CoNLL text. The first column is the token and the
/// last column the label; blank lines end sentences and `-DOCSTART-` lines are
/// skipped. Without a scheme, one is inferred from the labels.
pub fn parse_conll(text: &str, scheme: Option<&LabelScheme>, split: Split) -> Result<LabeledCorpus> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    // (token, label, line number)
    let mut blocks: Vec<Vec<(String, String, usize)>> = Vec::new();
    let mut current = Vec::new();
    let mut n_columns: Option<usize> = None;

    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = line.trim();
        if line.is_empty() {
            if !current.is_empty() {
                blocks.push(std::mem::take(&mut current));
            }
            continue;
        }
        if line.starts_with(DOCSTART) {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() < 2 {
            return Err(Error::Parse {
                line: lineno,
                reason: format!("expected at least 2 columns, found {}", cols.len()),
            });
        }
        match n_columns {
            None => n_columns = Some(cols.len()),
            Some(n) if n != cols.len() => {
                return Err(Error::Parse {
                    line: lineno,
                    reason: format!("expected {n} columns, found {}", cols.len()),
                })
            }
            _ => {}
        }
        current.push((cols[0].to_string(), cols[cols.len() - 1].to_string(), lineno));
    }
    if !current.is_empty() {
        blocks.push(current);
    }

    let scheme = match scheme {
        Some(s) => s.clone(),
        None => LabelScheme::infer(blocks.iter().flatten().map(|(_, l, _)| l.as_str()))?,
    };

    let mut sentences = Vec::with_capacity(blocks.len());
    for block in blocks {
        let mut tokens = Vec::with_capacity(block.len());
        let mut labels = Vec::with_capacity(block.len());
        for (tok, label, line) in block {
            let idx = scheme.index(&label).ok_or(Error::UnknownLabel { line, label })?;
            tokens.push(tok);
            labels.push(idx);
        }
        sentences.push(Sentence { tokens, labels });
    }
    LabeledCorpus::new(scheme, sentences, split)
}

/// Two-column CoNLL rendering that [`parse_conll`] reads back.
pub fn to_conll(corpus: &LabeledCorpus) -> String {
    let mut out = String::new();
    for (i, s) in corpus.sentences.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        for (tok, &l) in s.tokens.iter().zip(&s.labels) {
            out.push_str(tok);
            out.push(' ');
            out.push_str(corpus.scheme.class(l));
            out.push('\n');
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BioViolation {
    pub sentence: usize,
    pub token: usize,
    pub reason: String,
}

/// Positions in one label sequence where an `I-` label does not continue a
/// span of the same category.
pub fn bio_violations(labels: &[usize], scheme: &LabelScheme) -> Vec<(usize, String)> {
    let mut out = Vec::new();
    let mut prev: Option<usize> = None;
    for (i, &l) in labels.iter().enumerate() {
        let kind = scheme.kind(l);
        if let LabelKind::Inside(cat) = kind {
            let ok = prev.is_some_and(|p| scheme.kind(p).category() == Some(cat));
            if !ok {
                let reason = match prev.map(|p| scheme.kind(p)) {
                    None => format!("`{}` opens the sentence", scheme.class(l)),
                    Some(LabelKind::Majority) => {
                        format!("`{}` follows `{}`", scheme.class(l), scheme.majority_name())
                    }
                    Some(_) => format!(
                        "`{}` follows `{}` (category mismatch)",
                        scheme.class(l),
                        scheme.class(prev.unwrap())
                    ),
                };
                out.push((i, reason));
            }
        }
        prev = Some(l);
    }
    out
}

pub fn validate_bio(corpus: &LabeledCorpus) -> Vec<BioViolation> {
    corpus
        .sentences
        .iter()
        .enumerate()
        .flat_map(|(si, s)| {
            bio_violations(&s.labels, &corpus.scheme)
                .into_iter()
                .map(move |(token, reason)| BioViolation {
                    sentence: si,
                    token,
                    reason,
                })
        })
        .collect()
}

/// Token-count statistics of a labeled corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_sentences: usize,
    pub per_class_counts: Vec<(String, usize)>,
    pub total_tokens: usize,
    pub n_majority: usize,
    pub n_entity: usize,
    pub rho_o: f64,
}

impl CorpusStats {
    /// Stats from raw per-class token counts. `majority_class` must be one of
    /// the listed classes.
    pub fn from_counts(
        n_sentences: usize,
        per_class_counts: Vec<(String, usize)>,
        majority_class: &str,
    ) -> Result<Self> {
        let total_tokens: usize = per_class_counts.iter().map(|(_, c)| c).sum();
        if total_tokens == 0 {
            return Err(Error::Empty("corpus has no tokens"));
        }
        let n_majority = per_class_counts
            .iter()
            .find(|(name, _)| name == majority_class)
            .map(|(_, c)| *c)
            .ok_or_else(|| Error::Scheme(format!("no counts for `{majority_class}`")))?;
        Ok(Self {
            n_sentences,
            n_entity: total_tokens - n_majority,
            rho_o: n_majority as f64 / total_tokens as f64,
            per_class_counts,
            total_tokens,
            n_majority,
        })
    }

    pub fn count(&self, class: &str) -> Option<usize> {
        self.per_class_counts.iter().find(|(n, _)| n == class).map(|(_, c)| *c)
    }

    /// `class\tcount\tshare` rows, one per class.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("class\tcount\tshare\n");
        for (name, c) in &self.per_class_counts {
            let share = *c as f64 / self.total_tokens as f64;
            out.push_str(&format!("{name}\t{c}\t{share:.6}\n"));
        }
        out
    }
}

pub fn compute_stats(corpus: &LabeledCorpus) -> Result<CorpusStats> {
    if corpus.is_empty() {
        return Err(Error::Empty("cannot compute statistics of an empty corpus"));
    }
    let mut counts = vec![0usize; corpus.scheme.len()];
    for s in &corpus.sentences {
        for &l in &s.labels {
            counts[l] += 1;
        }
    }
    let per_class = corpus.scheme.classes().iter().cloned().zip(counts).collect();
    CorpusStats::from_counts(corpus.len(), per_class, corpus.scheme.majority_name())
}

pub const PAD: usize = 0;
pub const UNK: usize = 1;
const PAD_TOKEN: &str = "<pad>";
const UNK_TOKEN: &str = "<unk>";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabRepr", into = "VocabRepr")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    min_frequency: usize,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    tokens: Vec<String>,
    min_frequency: usize,
}

impl From<VocabRepr> for Vocabulary {
    fn from(r: VocabRepr) -> Self {
        let index = r.tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary {
            tokens: r.tokens,
            index,
            min_frequency: r.min_frequency,
        }
    }
}

impl From<Vocabulary> for VocabRepr {
    fn from(v: Vocabulary) -> Self {
        VocabRepr {
            tokens: v.tokens,
            min_frequency: v.min_frequency,
        }
    }
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn min_frequency(&self) -> usize {
        self.min_frequency
    }

    /// Id of `token`, or [`UNK`] for tokens outside the vocabulary.
    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn encode(&self, sentence: &Sentence) -> Vec<usize> {
        sentence.tokens.iter().map(|t| self.id(t)).collect()
    }
}

/// Ids are assigned by descending frequency, ties broken lexicographically.
/// Ids 0 and 1 are reserved for padding and unknown tokens.
pub fn build_vocab(corpus: &LabeledCorpus, min_frequency: usize) -> Vocabulary {
    let mut freq: HashMap<&str, usize> = HashMap::new();
    for s in &corpus.sentences {
        for t in &s.tokens {
            *freq.entry(t.as_str()).or_default() += 1;
        }
    }
    let mut kept: Vec<(&str, usize)> = freq
        .into_iter()
        .filter(|&(t, c)| c >= min_frequency && t != PAD_TOKEN && t != UNK_TOKEN)
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

    let mut tokens = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
    tokens.extend(kept.into_iter().map(|(t, _)| t.to_string()));
    VocabRepr { tokens, min_frequency }.into()
}

/// Indices (ascending) of a uniform sample of `round(fraction * n)` sentences
/// drawn without replacement.
pub fn undersample_indices(n: usize, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid("fraction", format!("{fraction} is outside (0, 1]")));
    }
    let k = (fraction * n as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = index::sample(&mut rng, n, k.min(n)).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

pub fn undersample(corpus: &LabeledCorpus, fraction: f64, seed: u64) -> Result<LabeledCorpus> {
    let idx = undersample_indices(corpus.len(), fraction, seed)?;
    Ok(corpus.select(&idx))
}

/// Random oversampling: appends copies of randomly chosen entity-bearing
/// sentences until the corpus holds `round(factor * N)` sentences.
pub fn oversample(corpus: &LabeledCorpus, factor: f64, seed: u64) -> Result<LabeledCorpus> {
    if !(factor >= 1.0 && factor.is_finite()) {
        return Err(Error::invalid("factor", format!("{factor} is below 1")));
    }
    let majority = corpus.scheme.majority();
    let pool: Vec<usize> = corpus
        .sentences
        .iter()
        .enumerate()
        .filter(|(_, s)| s.labels.iter().any(|&l| l != majority))
        .map(|(i, _)| i)
        .collect();
    if pool.is_empty() {
        return Err(Error::Empty("no sentence contains an entity token"));
    }
    let target = (factor * corpus.len() as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sentences = corpus.sentences.clone();
    while sentences.len() < target {
        let pick = pool[rng.gen_range(0..pool.len())];
        sentences.push(corpus.sentences[pick].clone());
    }
    Ok(LabeledCorpus {
        scheme: corpus.scheme.clone(),
        sentences,
        split: corpus.split,
    })
}

/// Five-token sentence-length bins; the last bin is open-ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LengthBin(u8);

impl LengthBin {
    pub const WIDTH: usize = 5;
    pub const COUNT: usize = 8;

    pub fn of_length(len: usize) -> Self {
        let b = len.saturating_sub(1) / Self::WIDTH;
        LengthBin(b.min(Self::COUNT - 1) as u8)
    }

    pub fn all() -> impl Iterator<Item = LengthBin> {
        (0..Self::COUNT as u8).map(LengthBin)
    }

    pub fn lo(self) -> usize {
        self.0 as usize * Self::WIDTH + 1
    }

    pub fn hi(self) -> Option<usize> {
        if self.0 as usize == Self::COUNT - 1 {
            None
        } else {
            Some(self.lo() + Self::WIDTH - 1)
        }
    }
}

impl fmt::Display for LengthBin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.hi() {
            Some(hi) => write!(f, "{}-{}", self.lo(), hi),
            None => write!(f, "{}-", self.lo()),
        }
    }
}

pub fn bin_by_length(corpus: &LabeledCorpus) -> BTreeMap<LengthBin, Vec<usize>> {
    let mut bins: BTreeMap<LengthBin, Vec<usize>> = BTreeMap::new();
    for (i, s) in corpus.sentences.iter().enumerate() {
        bins.entry(LengthBin::of_length(s.len())).or_default().push(i);
    }
    bins
}

/// Shuffles and splits a single corpus by integer ratio (e.g. 8:1:1) into
/// train, validation and test parts.
pub fn random_split(
    corpus: &LabeledCorpus,
    ratio: [u32; 3],
    seed: u64,
) -> Result<(LabeledCorpus, LabeledCorpus, LabeledCorpus)> {
    let total: u32 = ratio.iter().sum();
    if total == 0 {
        return Err(Error::invalid("ratio", "all parts are zero"));
    }
    let n = corpus.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (n as f64 * ratio[0] as f64 / total as f64).round() as usize;
    let n_val = ((n as f64 * ratio[1] as f64 / total as f64).round() as usize).min(n - n_train);
    let (train, rest) = order.split_at(n_train);
    let (val, test) = rest.split_at(n_val);
    let part = |idx: &[usize], split| {
        let mut idx = idx.to_vec();
        idx.sort_unstable();
        corpus.select(&idx).with_split(split)
    };
    Ok((
        part(train, Split::Train),
        part(val, Split::Val),
        part(test, Split::Test),
    ))
}

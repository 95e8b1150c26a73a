//! Synthetic long-tail BIO corpora.
//!
//! Entity tokens are drawn from a category-specific sub-vocabulary with
//! probability `trigger_strength` and from the shared vocabulary otherwise, so
//! the tagging task stays learnable without being trivial. Category mention
//! counts decay geometrically with the category index.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{LabelScheme, LabeledCorpus, Sentence, Split};
use crate::error::{Error, Result};

fn default_trigger_strength() -> f64 {
    0.9
}

fn default_decay() -> f64 {
    0.6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_sentences: usize,
    pub sentence_length_range: [usize; 2],
    pub n_entity_categories: usize,
    pub target_rho_o: f64,
    pub entity_length_range: [usize; 2],
    pub vocab_size: usize,
    #[serde(default = "default_trigger_strength")]
    pub trigger_strength: f64,
    /// Ratio between the mention frequencies of successive categories.
    #[serde(default = "default_decay")]
    pub decay: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_sentences: 2000,
            sentence_length_range: [5, 25],
            n_entity_categories: 6,
            target_rho_o: 0.9,
            entity_length_range: [1, 3],
            vocab_size: 600,
            trigger_strength: default_trigger_strength(),
            decay: default_decay(),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let [smin, smax] = self.sentence_length_range;
        let [emin, emax] = self.entity_length_range;
        if smin == 0 || smin > smax {
            return Err(Error::invalid(
                "sentence_length_range",
                format!("[{smin}, {smax}] is empty or starts at 0"),
            ));
        }
        if emin == 0 || emin > emax {
            return Err(Error::invalid(
                "entity_length_range",
                format!("[{emin}, {emax}] is empty or starts at 0"),
            ));
        }
        if self.n_entity_categories == 0 {
            return Err(Error::invalid("n_entity_categories", "must be at least 1"));
        }
        if !(self.target_rho_o > 0.0 && self.target_rho_o < 1.0) {
            return Err(Error::invalid(
                "target_rho_o",
                format!("{} is outside (0, 1)", self.target_rho_o),
            ));
        }
        if self.vocab_size < 2 * self.n_entity_categories {
            return Err(Error::invalid(
                "vocab_size",
                format!(
                    "{} is below twice the category count ({})",
                    self.vocab_size, self.n_entity_categories
                ),
            ));
        }
        if !(0.0..=1.0).contains(&self.trigger_strength) {
            return Err(Error::invalid("trigger_strength", "must lie in [0, 1]"));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::invalid("decay", "must lie in (0, 1]"));
        }

        // Placement fills a sentence greedily and stops once fewer than `emin`
        // free positions remain, so at least L - emin + 1 tokens can be entities.
        if emin > smax {
            return Err(Error::Infeasible(format!(
                "entities need at least {emin} tokens but sentences hold at most {smax}"
            )));
        }
        let lengths = smin..=smax;
        let n_len = (smax - smin + 1) as f64;
        let mean_len = lengths.clone().sum::<usize>() as f64 / n_len;
        let mean_capacity = lengths.map(|l| if l >= emin { l - emin + 1 } else { 0 }).sum::<usize>() as f64 / n_len;
        let needed = (1.0 - self.target_rho_o) * mean_len;
        if needed > mean_capacity {
            return Err(Error::Infeasible(format!(
                "target rho_O {} needs {needed:.2} entity tokens per sentence, \
                 placement can fit {mean_capacity:.2}",
                self.target_rho_o
            )));
        }
        Ok(())
    }

    pub fn category_names(&self) -> Vec<String> {
        (0..self.n_entity_categories).map(|c| format!("CAT{c}")).collect()
    }

    fn sub_vocab_size(&self) -> usize {
        self.vocab_size / (2 * self.n_entity_categories)
    }

    /// Token ids reserved for category `c`.
    pub fn category_vocab(&self, c: usize) -> std::ops::Range<usize> {
        let sub = self.sub_vocab_size();
        c * sub..(c + 1) * sub
    }

    pub fn shared_vocab(&self) -> std::ops::Range<usize> {
        self.n_entity_categories * self.sub_vocab_size()..self.vocab_size
    }
}

pub fn token_name(id: usize) -> String {
    format!("w{id}")
}

/// Picks the category whose mention count lags its target share the most.
/// Ties go to the lower index, which keeps counts non-increasing in the index.
fn next_category(shares: &[f64], counts: &[usize]) -> usize {
    let total = counts.iter().sum::<usize>() as f64 + 1.0;
    let mut best = 0;
    let mut best_deficit = f64::NEG_INFINITY;
    for (c, (&w, &n)) in shares.iter().zip(counts).enumerate() {
        let deficit = w * total - n as f64;
        if deficit > best_deficit {
            best = c;
            best_deficit = deficit;
        }
    }
    best
}

pub fn generate_corpus(cfg: &SynthConfig) -> Result<LabeledCorpus> {
    cfg.validate()?;
    let names = cfg.category_names();
    let scheme = LabelScheme::from_categories(names.iter().map(String::as_str), "O")?;
    let o = scheme.majority();

    let raw: Vec<f64> = (0..cfg.n_entity_categories).map(|c| cfg.decay.powi(c as i32)).collect();
    let z: f64 = raw.iter().sum();
    let shares: Vec<f64> = raw.iter().map(|w| w / z).collect();

    let [smin, smax] = cfg.sentence_length_range;
    let [emin, emax] = cfg.entity_length_range;
    let shared = cfg.shared_vocab();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut counts = vec![0usize; cfg.n_entity_categories];
    let mut carry = 0.0f64;
    let mut sentences = Vec::with_capacity(cfg.n_sentences);

    for _ in 0..cfg.n_sentences {
        let len = rng.gen_range(smin..=smax);
        carry += (1.0 - cfg.target_rho_o) * len as f64;

        // (category, length)
        let mut entities: Vec<(usize, usize)> = Vec::new();
        let mut used = 0;
        while len - used >= emin {
            let ent_len = rng.gen_range(emin..=emax).min(len - used);
            if ent_len as f64 > carry {
                break;
            }
            let cat = next_category(&shares, &counts);
            counts[cat] += 1;
            entities.push((cat, ent_len));
            carry -= ent_len as f64;
            used += ent_len;
        }

        let n_o = len - used;
        let slots = n_o + entities.len();
        let mut entity_slots = index::sample(&mut rng, slots, entities.len()).into_vec();
        entity_slots.sort_unstable();

        let mut tokens = Vec::with_capacity(len);
        let mut labels = Vec::with_capacity(len);
        let mut next_entity = 0;
        for slot in 0..slots {
            if entity_slots.get(next_entity) == Some(&slot) {
                let (cat, ent_len) = entities[next_entity];
                next_entity += 1;
                let begin = scheme.begin(cat).expect("scheme built from categories");
                let inside = scheme.inside(cat).expect("scheme built from categories");
                for k in 0..ent_len {
                    let id = if rng.gen_bool(cfg.trigger_strength) {
                        rng.gen_range(cfg.category_vocab(cat))
                    } else {
                        rng.gen_range(shared.clone())
                    };
                    tokens.push(token_name(id));
                    labels.push(if k == 0 { begin } else { inside });
                }
            } else {
                tokens.push(token_name(rng.gen_range(shared.clone())));
                labels.push(o);
            }
        }
        sentences.push(Sentence::new(tokens, labels)?);
    }
    LabeledCorpus::new(scheme, sentences, Split::Train)
}

/// Generates `n_train + n_val + n_test` sentences with one config and slices
/// them in order into the three splits.
pub fn generate_splits(
    cfg: &SynthConfig,
    n_val: usize,
    n_test: usize,
) -> Result<(LabeledCorpus, LabeledCorpus, LabeledCorpus)> {
    let n_train = cfg.n_sentences;
    let full = generate_corpus(&SynthConfig {
        n_sentences: n_train + n_val + n_test,
        ..cfg.clone()
    })?;
    let range = |a: usize, b: usize| (a..b).collect::<Vec<_>>();
    Ok((
        full.select(&range(0, n_train)).with_split(Split::Train),
        full.select(&range(n_train, n_train + n_val)).with_split(Split::Val),
        full.select(&range(n_train + n_val, n_train + n_val + n_test))
            .with_split(Split::Test),
    ))
}

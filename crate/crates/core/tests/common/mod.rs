//! Independent oracles shared by the focused suites and the acceptance run.
#![allow(dead_code)]

use std::collections::BTreeSet;

use mom_ner::corpus::{LabelKind, LabelScheme};
use mom_ner::losses::{BaseLoss, ClassWeights, DiceDenominator, LossConfig, Normalization, SequenceLoss};
use mom_ner::metrics::{bio_to_spans, corpus_token_scores, span_f1, Prf, Span};
use mom_ner::model::{
    backward, forward, forward_cached, init_params, ModelConfig, ModelParameters, OutputKind, PredictionMatrix,
};
use mom_ner::mrc::{mrc_forward, mrc_forward_cached, MrcExample, MrcLoss};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
pub const TOL: f64 = 1e-4;

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale < 1e-10 {
        diff
    } else {
        diff / scale
    }
}

fn softmax_rows(z: &[f64], c: usize) -> PredictionMatrix {
    let mut p = Vec::with_capacity(z.len());
    for row in z.chunks(c) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        p.extend(e.iter().map(|v| v / s));
    }
    PredictionMatrix::new(c, p).unwrap()
}

fn random_loss_config(rng: &mut ChaCha8Rng, base: BaseLoss, mom: bool, n: usize) -> LossConfig {
    let mut cfg = LossConfig::new(base);
    cfg.gamma = rng.gen_range(0.5..3.0);
    cfg.epsilon = rng.gen_range(1.0..2.0);
    cfg.delta = rng.gen_range(0.01..1.0);
    cfg.beta = rng.gen_range(1.0..5.0);
    if rng.gen_bool(0.3) {
        cfg.normalization = Normalization::ByMaxLen(n + rng.gen_range(0..4));
    }
    if rng.gen_bool(0.3) {
        cfg.dice = DiceDenominator::Literal;
    }
    if mom {
        cfg.lambda = Some(rng.gen_range(0.0..=1.0));
    }
    cfg
}

fn random_weights(rng: &mut ChaCha8Rng, c: usize) -> ClassWeights {
    ClassWeights {
        weights: (0..c).map(|_| rng.gen_range(0.1..3.0)).collect(),
        absent: Vec::new(),
    }
}

fn sequence_loss(rng: &mut ChaCha8Rng, base: BaseLoss, mom: bool, n: usize, c: usize) -> SequenceLoss {
    let cfg = random_loss_config(rng, base, mom, n);
    let weights = base.is_weighted().then(|| random_weights(rng, c));
    SequenceLoss::new(cfg, 0, weights).unwrap()
}

pub const BASES: [BaseLoss; 5] = [BaseLoss::CE, BaseLoss::WCE1, BaseLoss::WCE2, BaseLoss::FL, BaseLoss::DL];

/// Worst relative error over `cases` random sentences, logits as inputs.
pub fn worst_logit_grad_error(base: BaseLoss, mom: bool, cases: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let n = rng.gen_range(1..6);
        let c = rng.gen_range(2..6);
        let loss = sequence_loss(&mut rng, base, mom, n, c);
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..c)).collect();
        let z: Vec<f64> = (0..n * c).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let f = |z: &[f64]| loss.sentence_loss(&labels, &softmax_rows(z, c)).unwrap();
        let (l, analytic) = loss.logit_gradient(&labels, &softmax_rows(&z, c)).unwrap();
        assert!((l - f(&z)).abs() < 1e-12);
        let numeric: Vec<f64> = (0..z.len())
            .map(|i| {
                let mut zp = z.clone();
                let mut zm = z.clone();
                zp[i] += H;
                zm[i] -= H;
                (f(&zp) - f(&zm)) / (2.0 * H)
            })
            .collect();
        worst = worst.max(rel_err(&analytic, &numeric));
    }
    worst
}

fn small_model(rng: &mut ChaCha8Rng, c: usize, output: OutputKind, n_queries: usize) -> ModelParameters {
    let cfg = ModelConfig {
        vocab_size: rng.gen_range(3..8),
        embed_dim: rng.gen_range(1..4),
        context_radius: rng.gen_range(0..3),
        hidden_dim: rng.gen_range(1..5),
        n_classes: c,
        max_len: 16,
        init_scale: 0.8,
        seed: rng.gen(),
        n_queries,
        output,
    };
    init_params(&cfg).unwrap()
}

fn numeric_param_grad(params: &ModelParameters, f: impl Fn(&ModelParameters) -> f64) -> Vec<f64> {
    let flat = params.to_flat();
    (0..flat.len())
        .map(|i| {
            let mut p = flat.clone();
            p[i] += H;
            let up = f(&ModelParameters::from_flat(params.config(), &p).unwrap());
            p[i] = flat[i] - H;
            let down = f(&ModelParameters::from_flat(params.config(), &p).unwrap());
            (up - down) / (2.0 * H)
        })
        .collect()
}

/// Worst relative error of the full parameter gradient of a random tagger.
pub fn worst_model_grad_error(base: BaseLoss, mom: bool, cases: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let c = rng.gen_range(2..5);
        let params = small_model(&mut rng, c, OutputKind::Softmax, 0);
        let n = rng.gen_range(1..6);
        let loss = sequence_loss(&mut rng, base, mom, n, c);
        let v = params.config().vocab_size;
        let ids: Vec<usize> = (0..n).map(|_| rng.gen_range(0..v)).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..c)).collect();

        let cache = forward_cached(&params, &ids, None).unwrap();
        let probs = PredictionMatrix::new(c, cache.outputs.clone()).unwrap();
        let (_, dz) = loss.logit_gradient(&labels, &probs).unwrap();
        let analytic = backward(&params, &cache, &dz).unwrap().to_flat();
        let numeric = numeric_param_grad(&params, |p| {
            loss.sentence_loss(&labels, &forward(p, &ids).unwrap()).unwrap()
        });
        worst = worst.max(rel_err(&analytic, &numeric));
    }
    worst
}

/// Same for the start/end heads with a query embedding.
pub fn worst_span_grad_error(base: BaseLoss, mom: bool, cases: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let n_cat = rng.gen_range(1..4);
        let params = small_model(&mut rng, 2, OutputKind::Sigmoid, n_cat);
        let n = rng.gen_range(1..6);
        let loss = MrcLoss::new(random_loss_config(&mut rng, base, mom, n)).unwrap();
        let v = params.config().vocab_size;
        let ids: Vec<usize> = (0..n).map(|_| rng.gen_range(0..v)).collect();
        let ex = MrcExample {
            sentence: 0,
            tokens: (0..n).map(|i| format!("t{i}")).collect(),
            category: rng.gen_range(0..n_cat),
            starts: (0..n).map(|_| rng.gen_bool(0.3) as u8).collect(),
            ends: (0..n).map(|_| rng.gen_bool(0.3) as u8).collect(),
        };
        let cache = mrc_forward_cached(&params, &ids, ex.category).unwrap();
        let (l, dz) = loss.logit_gradient(&ex, &cache.outputs).unwrap();
        let f = |p: &ModelParameters| loss.loss(&ex, &mrc_forward(p, &ids, ex.category).unwrap()).unwrap();
        assert!((l - f(&params)).abs() < 1e-12);
        let analytic = backward(&params, &cache, &dz).unwrap().to_flat();
        let numeric = numeric_param_grad(&params, f);
        worst = worst.max(rel_err(&analytic, &numeric));
    }
    worst
}

fn prf(tp: usize, fp: usize, fn_: usize) -> (f64, f64, f64) {
    let p = if tp + fp == 0 {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let r = if tp + fn_ == 0 {
        0.0
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f)
}

fn mean(xs: &[(f64, f64, f64)]) -> (f64, f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mut s = (0.0, 0.0, 0.0);
    for x in xs {
        s.0 += x.0;
        s.1 += x.1;
        s.2 += x.2;
    }
    (s.0 / n, s.1 / n, s.2 / n)
}

fn as_tuple(p: &Prf) -> (f64, f64, f64) {
    (p.precision, p.recall, p.f1)
}

/// Every `(category, start, end)` that forms a maximal run starting at a `B-`
/// or at an `I-` that does not continue the same category.
#[allow(clippy::needless_range_loop)]
fn brute_spans(labels: &[usize], scheme: &LabelScheme) -> BTreeSet<(usize, usize, usize)> {
    let n = labels.len();
    let cat = |i: usize| scheme.kind(labels[i]).category();
    let is_inside = |i: usize, c: usize| scheme.kind(labels[i]) == LabelKind::Inside(c);
    let mut out = BTreeSet::new();
    for c in 0..scheme.categories().len() {
        for i in 0..n {
            let opens = match scheme.kind(labels[i]) {
                LabelKind::Begin(k) => k == c,
                LabelKind::Inside(k) => k == c && (i == 0 || cat(i - 1) != Some(c)),
                LabelKind::Majority => false,
            };
            if !opens {
                continue;
            }
            for j in i..n {
                let body = (i + 1..=j).all(|t| is_inside(t, c));
                let closed = j + 1 == n || !is_inside(j + 1, c);
                if body && closed {
                    out.insert((c, i, j));
                }
            }
        }
    }
    out
}

pub fn random_case(rng: &mut ChaCha8Rng) -> (LabelScheme, Vec<Vec<usize>>, Vec<Vec<usize>>) {
    let n_cat = rng.gen_range(1..4);
    let names: Vec<String> = (0..n_cat).map(|c| format!("C{c}")).collect();
    let scheme = LabelScheme::from_categories(names.iter().map(String::as_str), "O").unwrap();
    let k = scheme.len();
    let n_sent = rng.gen_range(1..=5);
    let mut gold = Vec::new();
    let mut pred = Vec::new();
    for _ in 0..n_sent {
        let len = rng.gen_range(1..9);
        let g: Vec<usize> = (0..len)
            .map(|_| {
                if rng.gen_bool(0.5) {
                    scheme.majority()
                } else {
                    rng.gen_range(0..k)
                }
            })
            .collect();
        let p: Vec<usize> = g
            .iter()
            .map(|&l| if rng.gen_bool(0.6) { l } else { rng.gen_range(0..k) })
            .collect();
        gold.push(g);
        pred.push(p);
    }
    (scheme, gold, pred)
}

/// Compares token scores with a recount on `cases` random corpora; returns
/// the first disagreement.
pub fn token_oracle(cases: usize, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..cases {
        let (scheme, gold, pred) = random_case(&mut rng);
        let got = corpus_token_scores(&gold, &pred, &scheme).unwrap();
        let pairs: Vec<(usize, usize)> = gold
            .iter()
            .flatten()
            .copied()
            .zip(pred.iter().flatten().copied())
            .collect();
        let mut included = Vec::new();
        let mut entity = Vec::new();
        for k in 0..scheme.len() {
            let tp = pairs.iter().filter(|&&(g, p)| g == k && p == k).count();
            let fp = pairs.iter().filter(|&&(g, p)| g != k && p == k).count();
            let fn_ = pairs.iter().filter(|&&(g, p)| g == k && p != k).count();
            let c = got.counts.per_class[k];
            if (c.tp, c.fp, c.fn_) != (tp, fp, fn_) {
                return Err(format!("case {case} class {k}: counts differ"));
            }
            let expect = prf(tp, fp, fn_);
            if as_tuple(&got.per_class[k]) != expect {
                return Err(format!("case {case} class {k}: scores differ"));
            }
            let present = pairs.iter().any(|&(g, p)| g == k || p == k);
            if got.included[k] != present {
                return Err(format!("case {case} class {k}: inclusion differs"));
            }
            if present {
                included.push(expect);
                if k != scheme.majority() {
                    entity.push(expect);
                }
            }
        }
        if as_tuple(&got.macro_all) != mean(&included) || as_tuple(&got.macro_entity) != mean(&entity) {
            return Err(format!("case {case}: macro averages differ"));
        }
    }
    Ok(())
}

pub fn span_oracle(cases: usize, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..cases {
        let (scheme, gold, pred) = random_case(&mut rng);
        let to_spans =
            |seqs: &[Vec<usize>]| -> Vec<Vec<Span>> { seqs.iter().map(|l| bio_to_spans(l, &scheme)).collect() };
        let got = span_f1(&to_spans(&gold), &to_spans(&pred)).unwrap();

        let n_cat = scheme.categories().len();
        let mut counts = vec![(0usize, 0usize, 0usize); n_cat];
        for (g, p) in gold.iter().zip(&pred) {
            let gs = brute_spans(g, &scheme);
            let ps = brute_spans(p, &scheme);
            for s in &ps {
                if gs.contains(s) {
                    counts[s.0].0 += 1;
                } else {
                    counts[s.0].1 += 1;
                }
            }
            for s in gs.difference(&ps) {
                counts[s.0].2 += 1;
            }
        }
        let present: Vec<usize> = (0..n_cat).filter(|&c| counts[c] != (0, 0, 0)).collect();
        let got_cats: Vec<usize> = got.per_category.iter().map(|c| c.category).collect();
        if got_cats != present {
            return Err(format!("case {case}: categories {got_cats:?} vs {present:?}"));
        }
        let mut per = Vec::new();
        for c in &got.per_category {
            let (tp, fp, fn_) = counts[c.category];
            let expect = prf(tp, fp, fn_);
            if (c.counts.tp, c.counts.fp, c.counts.fn_) != (tp, fp, fn_) || as_tuple(&c.scores) != expect {
                return Err(format!("case {case} category {}: differs", c.category));
            }
            per.push(expect);
        }
        let tot = counts.iter().fold((0, 0, 0), |a, c| (a.0 + c.0, a.1 + c.1, a.2 + c.2));
        if as_tuple(&got.macro_avg) != mean(&per) || as_tuple(&got.micro) != prf(tot.0, tot.1, tot.2) {
            return Err(format!("case {case}: averages differ"));
        }
    }
    Ok(())
}

/// Gamma at a positive multiple of one half, by the recurrence.
fn gamma_half_int(x: f64) -> f64 {
    if (x - 1.0).abs() < 1e-12 {
        1.0
    } else if (x - 0.5).abs() < 1e-12 {
        std::f64::consts::PI.sqrt()
    } else {
        (x - 1.0) * gamma_half_int(x - 1.0)
    }
}

fn t_density(x: f64, df: f64) -> f64 {
    let c = gamma_half_int((df + 1.0) / 2.0) / ((df * std::f64::consts::PI).sqrt() * gamma_half_int(df / 2.0));
    c * (1.0 + x * x / df).powf(-(df + 1.0) / 2.0)
}

/// `P(|T| >= t)` by Simpson's rule on `[0, |t|]`.
pub fn quadrature_two_tailed(t: f64, df: f64) -> f64 {
    let n = 200_000;
    let h = t.abs() / n as f64;
    let mut s = t_density(0.0, df) + t_density(t.abs(), df);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * t_density(i as f64 * h, df);
    }
    1.0 - 2.0 * s * h / 3.0
}

//! Runs every acceptance criterion at its stated tolerance and prints one
//! PASS/FAIL line per criterion. Exits non-zero if any criterion fails.
//!
//! Set `MOMNER_CONLL2003_TRAIN` to a CoNLL-2003 train file to also check the
//! corpus statistics on real data.

mod common;

use std::process::Command;
use std::time::Instant;

use mom_ner::corpus::{compute_stats, parse_conll, undersample_indices, CorpusStats, LabelScheme, Split};
use mom_ner::experiments::{
    load_data, run_experiment_on, ArmSpec, DataSource, ExperimentConfig, Framework, Objective, RunReport, SearchParam,
};
use mom_ner::losses::{binary_token_loss, BaseLoss, ClassWeights, LossConfig, SequenceLoss};
use mom_ner::metrics::bio_to_spans;
use mom_ner::model::PredictionMatrix;
use mom_ner::mrc::{convert_bio_to_mrc, decode_spans};
use mom_ner::stats::{paired_t_test, student_t_two_tailed};
use mom_ner::synthgen::SynthConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, what: String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(what)
    }
}

fn close(name: &str, got: f64, want: f64, tol: f64) -> Result<(), String> {
    check(
        (got - want).abs() <= tol,
        format!("{name}: {got} vs {want} (tol {tol:e})"),
    )
}

fn c1_loss_oracles() -> Outcome {
    let ce = SequenceLoss::new(LossConfig::new(BaseLoss::CE), 0, None).unwrap();
    close(
        "CE token",
        ce.token_loss(&[1.0, 0.0], &[0.8, 0.2]).unwrap(),
        0.22314,
        1e-5,
    )?;
    let p = PredictionMatrix::from_rows(vec![vec![0.8, 0.2], vec![0.4, 0.6]]).unwrap();
    let y = [0usize, 1];
    close(
        "sentence CE",
        ce.sentence_base_loss(&y, &p).unwrap(),
        (0.8f64.ln() + 0.6f64.ln()) / -2.0,
        1e-12,
    )?;
    close("sentence CE", ce.sentence_base_loss(&y, &p).unwrap(), 0.36699, 1e-5)?;
    close("MoM term", ce.mom_loss(&y, &p).unwrap(), 0.11157, 1e-5)?;
    let mixed = SequenceLoss::new(LossConfig::new(BaseLoss::CE).with_mom(0.5), 0, None).unwrap();
    let v = mixed.sentence_loss(&y, &p).unwrap();
    close(
        "lambda 0.5",
        v,
        0.5 * ce.sentence_base_loss(&y, &p).unwrap() + 0.5 * ce.mom_loss(&y, &p).unwrap(),
        1e-12,
    )?;
    close("lambda 0.5", v, 0.23928, 1e-5)?;

    let fl = LossConfig::new(BaseLoss::FL);
    close(
        "FL true class",
        binary_token_loss(&fl, true, 0.9).unwrap().0,
        0.0010536,
        1e-6,
    )?;
    let fl_seq = SequenceLoss::new(fl, 0, None).unwrap();
    close(
        "FL binary row",
        fl_seq.token_loss(&[1.0, 0.0], &[0.9, 0.1]).unwrap(),
        2.0 * 0.01 * -(0.9f64.ln()),
        1e-12,
    )?;
    let dl = SequenceLoss::new(LossConfig::new(BaseLoss::DL), 0, None).unwrap();
    let d = dl.token_loss(&[1.0, 0.0], &[0.5, 0.5]).unwrap();
    close("DL", d, 0.59524, 1e-5)?;
    close("DL", d, 1.0 - 0.51 / 1.26, 1e-12)?;
    Ok(format!("CE 0.36699, MoM 0.11157, mixed {v:.5}, DL {d:.5}"))
}

fn c2_gradients() -> Outcome {
    let mut worst: f64 = 0.0;
    for base in common::BASES {
        for mom in [false, true] {
            let e = common::worst_logit_grad_error(base, mom, 100, 101)
                .max(common::worst_model_grad_error(base, mom, 100, 202));
            check(
                e < common::TOL,
                format!("{} mom={mom}: relative error {e:e}", base.name()),
            )?;
            worst = worst.max(e);
        }
    }
    Ok(format!("10 combinations x 100 cases, worst relative error {worst:.2e}"))
}

fn synth_source(n_train: usize, seed: u64) -> DataSource {
    DataSource::Synthetic {
        config: SynthConfig {
            n_sentences: n_train,
            seed,
            ..SynthConfig::default()
        },
        n_val: 250,
        n_test: 250,
    }
}

fn base_config(data: DataSource, arms: Vec<ArmSpec>) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(data, arms);
    cfg.training.learning_rate = 5e-3;
    cfg
}

fn c3_endpoints() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let bases = common::BASES;
    for case in 0..1000 {
        let n = rng.gen_range(1..8);
        let c = rng.gen_range(2..6);
        let base = bases[case % bases.len()];
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let r: Vec<f64> = (0..c).map(|_| rng.gen_range(0.01..1.0)).collect();
                let s: f64 = r.iter().sum();
                r.iter().map(|v| v / s).collect()
            })
            .collect();
        let p = PredictionMatrix::from_rows(rows).unwrap();
        let w = base.is_weighted().then(|| ClassWeights {
            weights: (0..c).map(|_| rng.gen_range(0.1..3.0)).collect(),
            absent: vec![],
        });
        let mk = |lambda: Option<f64>| {
            let mut cfg = LossConfig::new(base);
            cfg.lambda = lambda;
            SequenceLoss::new(cfg, 0, w.clone()).unwrap()
        };
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..c)).collect();
        let plain = mk(None).sentence_loss(&labels, &p).unwrap();
        close(
            "lambda 1",
            mk(Some(1.0)).sentence_loss(&labels, &p).unwrap(),
            plain,
            1e-12,
        )?;
        let lambda = rng.gen_range(0.0..1.0);
        let all_o = vec![0; n];
        close(
            "all-O",
            mk(Some(lambda)).sentence_loss(&all_o, &p).unwrap(),
            mk(None).sentence_loss(&all_o, &p).unwrap(),
            1e-12,
        )?;
        let no_o: Vec<usize> = (0..n).map(|_| rng.gen_range(1..c)).collect();
        close(
            "no-O",
            mk(Some(lambda)).sentence_loss(&no_o, &p).unwrap(),
            lambda * mk(None).sentence_loss(&no_o, &p).unwrap(),
            1e-12,
        )?;
    }

    let mut cfg = base_config(
        synth_source(400, 11),
        vec![
            ArmSpec::new("CE", BaseLoss::CE),
            ArmSpec::new("MoM-1", BaseLoss::CE).with_mom(1.0),
        ],
    );
    cfg.seeds = vec![0, 1, 2];
    cfg.training.epochs = 3;
    let data = load_data(&cfg).unwrap();
    let report = run_experiment_on(&cfg, &data).map_err(|e| e.to_string())?;
    let a = report.result("CE", 1.0).unwrap();
    let b = report.result("MoM-1", 1.0).unwrap();
    for (x, y) in a.trials.iter().zip(&b.trials) {
        check(
            x.test == y.test && x.val == y.val,
            format!("seed {} metrics differ", x.seed),
        )?;
        check(
            x.loss_trace == y.loss_trace,
            format!("seed {} loss traces differ", x.seed),
        )?;
    }
    let t = &report.comparisons[0].result;
    check(t.degenerate, "t-test on identical arms is not degenerate".into())?;
    Ok("1000 random loss cases; 3 seeds identical end to end, t-test degenerate".into())
}

fn c4_dataset_stats() -> Outcome {
    let rows = [
        ("CoNLL2003", 248_818usize, 53_993usize, 82.17),
        ("OntoNotes5.0", 1_441_685, 190_310, 88.34),
        ("KWDLC", 236_290, 16_694, 93.40),
        ("NER Wiki", 80_944, 17_552, 82.18),
    ];
    let mut detail = Vec::new();
    for (name, o, e, want) in rows {
        let s = CorpusStats::from_counts(0, vec![("O".into(), o), ("ENT".into(), e)], "O").unwrap();
        close(name, 100.0 * s.rho_o, want, 0.005)?;
        detail.push(format!("{name} {:.4}", 100.0 * s.rho_o));
    }
    match std::env::var_os("MOMNER_CONLL2003_TRAIN") {
        Some(path) => {
            let text = std::fs::read_to_string(&path).map_err(|e| e.to_string())?;
            let c = parse_conll(&text, None, Split::Train).map_err(|e| e.to_string())?;
            let s = compute_stats(&c).map_err(|e| e.to_string())?;
            check(s.n_sentences == 14_041, format!("N = {}", s.n_sentences))?;
            check(
                s.n_majority == 248_818 && s.n_entity == 53_993,
                format!("O {} / entity {}", s.n_majority, s.n_entity),
            )?;
            detail.push("CoNLL2003 file matches".into());
        }
        None => detail.push("real-data part skipped (MOMNER_CONLL2003_TRAIN unset)".into()),
    }
    Ok(detail.join(", "))
}

fn c5_metric_oracles() -> Outcome {
    common::token_oracle(1000, 55)?;
    common::span_oracle(1000, 56)?;
    Ok("1000 token-score and 1000 span-score corpora match exactly".into())
}

fn c6_t_test() -> Outcome {
    let r = paired_t_test(&[0.3, 0.3, 0.4], &[0.0; 3], 0.05).unwrap();
    close("t", r.t, 10.0, 1e-12)?;
    let exact = paired_t_test(&[3.0, 3.0, 4.0], &[0.0; 3], 0.05).unwrap();
    check(exact.t == 10.0, format!("integer-scaled t = {}", exact.t))?;
    close("p", r.p, 0.00985, 1e-4)?;
    let mut worst: f64 = 0.0;
    for df in [2.0, 9.0, 30.0] {
        for t in [0.25, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 4.0, 6.0] {
            let d = (student_t_two_tailed(t, df) - common::quadrature_two_tailed(t, df)).abs();
            check(d < 1e-6, format!("df {df} t {t}: off by {d:e}"))?;
            worst = worst.max(d);
        }
    }
    let (mut lo, mut hi) = (1.0, 4.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if student_t_two_tailed(mid, 9.0) > 0.05 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    close("df 9 critical value", lo, 2.2622, 0.0005)?;
    Ok(format!(
        "t {:.12}, p {:.5}, quadrature gap {worst:.1e}, t* {lo:.4}",
        r.t, r.p
    ))
}

fn mean_metric(report: &RunReport, arm: &str, metric: &str) -> f64 {
    report.result(arm, 1.0).unwrap().metric(metric).unwrap().mean
}

fn c7_directional() -> Result<(String, f64), String> {
    let mut mom = ArmSpec::new("MoM-CE", BaseLoss::CE).with_mom(0.5);
    mom.tune = vec![SearchParam::Lambda];
    let cfg = base_config(synth_source(2000, 7), vec![ArmSpec::new("CE", BaseLoss::CE), mom]);
    let data = load_data(&cfg).unwrap();
    let rho = compute_stats(&data.train).unwrap().rho_o;
    check((rho - 0.9).abs() <= 0.02, format!("train rho_o {rho}"))?;
    let report = run_experiment_on(&cfg, &data).map_err(|e| e.to_string())?;
    let lambda = report.searches[0].best;
    let (ce_e, mom_e) = (
        mean_metric(&report, "CE", "entity_f1"),
        mean_metric(&report, "MoM-CE", "entity_f1"),
    );
    let (ce_o, mom_o) = (
        mean_metric(&report, "CE", "majority_f1"),
        mean_metric(&report, "MoM-CE", "majority_f1"),
    );
    let t = report
        .comparisons
        .iter()
        .find(|c| c.arm == "MoM-CE" && c.kind == "baseline")
        .ok_or("no paired t-test reported")?;
    let detail = format!(
        "lambda {lambda}; entity macro-F1 CE {:.2} MoM {:.2}; O F1 CE {:.2} MoM {:.2}; t {:.3} p {:.4}",
        100.0 * ce_e,
        100.0 * mom_e,
        100.0 * ce_o,
        100.0 * mom_o,
        t.result.t,
        t.result.p
    );
    check(
        mom_e >= ce_e - 0.002,
        format!("entity macro-F1 below CE - 0.2: {detail}"),
    )?;
    check(mom_o >= ce_o - 0.005, format!("O F1 below CE - 0.5: {detail}"))?;
    Ok((detail, lambda))
}

fn c8_undersampling(lambda: f64) -> Outcome {
    let fractions = [
        3.0 / 4.0,
        2.0 / 3.0,
        1.0 / 2.0,
        1.0 / 3.0,
        1.0 / 10.0,
        6.0 / 100.0,
        3.0 / 100.0,
    ];
    check(
        undersample_indices(14_041, 0.03, 0).unwrap().len() == 421,
        "N 14041 at 3/100 is not 421".into(),
    )?;
    let mut cfg = base_config(
        synth_source(2000, 7),
        vec![
            ArmSpec::new("CE", BaseLoss::CE),
            ArmSpec::new("MoM-CE", BaseLoss::CE).with_mom(lambda),
        ],
    );
    cfg.fractions = fractions.to_vec();
    cfg.seeds = vec![0, 1, 2];
    let data = load_data(&cfg).unwrap();
    let n = data.train.len();
    let report = run_experiment_on(&cfg, &data).map_err(|e| e.to_string())?;
    for arm in ["CE", "MoM-CE"] {
        let mut points = 0;
        for &f in &fractions {
            let r = report.result(arm, f).ok_or(format!("{arm} missing fraction {f}"))?;
            let want = (f * n as f64).round() as usize;
            for t in &r.trials {
                check(
                    t.n_train == want,
                    format!("{arm} f={f}: {} sentences, expected {want}", t.n_train),
                )?;
            }
            for m in ["macro_f1", "sentence_accuracy", "word_accuracy"] {
                let v = r.metric(m).ok_or(format!("{arm} f={f}: no {m}"))?.mean;
                check(v.is_finite(), format!("{arm} f={f}: {m} is {v}"))?;
            }
            points += 1;
        }
        check(points == 7, format!("{arm}: {points} points"))?;
    }
    let curve: Vec<String> = fractions
        .iter()
        .map(|&f| {
            format!(
                "{:.1}",
                100.0 * report.result("MoM-CE", f).unwrap().metric("macro_f1").unwrap().mean
            )
        })
        .collect();
    Ok(format!(
        "7 points per arm, sizes exact; MoM-CE macro-F1 {}",
        curve.join(" ")
    ))
}

fn c9_span_extraction() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for case in 0..1000 {
        let n_cat = rng.gen_range(1..5);
        let names: Vec<String> = (0..n_cat).map(|c| format!("C{c}")).collect();
        let scheme = LabelScheme::from_categories(names.iter().map(String::as_str), "O").unwrap();
        let len = rng.gen_range(1..20);
        let mut text = String::new();
        let mut open: Option<usize> = None;
        for i in 0..len {
            let label = match (rng.gen_range(0..3), open) {
                (1, _) => {
                    let c = rng.gen_range(0..n_cat);
                    open = Some(c);
                    format!("B-C{c}")
                }
                (2, Some(c)) => format!("I-C{c}"),
                _ => {
                    open = None;
                    "O".to_string()
                }
            };
            text.push_str(&format!("t{i} {label}\n"));
        }
        let corpus = parse_conll(&text, Some(&scheme), Split::Train).unwrap();
        let gold = bio_to_spans(corpus.sentences()[0].labels(), &scheme);
        let mut decoded = Vec::new();
        for ex in convert_bio_to_mrc(&corpus).map_err(|e| e.to_string())? {
            let s: Vec<f64> = ex.starts.iter().map(|&v| v as f64).collect();
            let e: Vec<f64> = ex.ends.iter().map(|&v| v as f64).collect();
            decoded.extend(decode_spans(&s, &e, 0.5, ex.category).unwrap().iter().map(|p| p.span()));
        }
        decoded.sort_by_key(|s| (s.start, s.category));
        check(decoded == gold, format!("case {case}: {decoded:?} vs {gold:?}"))?;
    }

    let mut cfg = base_config(synth_source(2000, 7), vec![ArmSpec::new("CE", BaseLoss::CE)]);
    cfg.framework = Framework::Mrc;
    cfg.objective = Objective::SpanF1;
    cfg.t_tests = false;
    let data = load_data(&cfg).unwrap();
    let report = run_experiment_on(&cfg, &data).map_err(|e| e.to_string())?;
    let f1 = mean_metric(&report, "CE", "span_f1");
    check(f1 >= 0.5, format!("mean span F1 {f1:.4} over 10 seeds"))?;
    Ok(format!(
        "1000 round trips exact; mean span F1 {:.2} over 10 seeds",
        100.0 * f1
    ))
}

fn c10_determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    let mut mom = ArmSpec::new("MoM-CE", BaseLoss::CE).with_mom(0.5);
    mom.tune = vec![SearchParam::Lambda];
    let mut cfg = base_config(synth_source(500, 21), vec![ArmSpec::new("CE", BaseLoss::CE), mom]);
    cfg.seeds = vec![0, 1, 2];
    cfg.fractions = vec![1.0, 0.5];
    cfg.search.grids.insert(SearchParam::Lambda, vec![0.2, 0.5, 0.8]);
    std::fs::write(dir.join("exp.json"), serde_json::to_string_pretty(&cfg).unwrap()).map_err(|e| e.to_string())?;
    let run = |out: &str, jobs: &str| -> Result<(), String> {
        let o = Command::new(env!("CARGO_BIN_EXE_momner"))
            .args(["experiment", "exp.json", "--out-dir", out, "--jobs", jobs])
            .current_dir(dir)
            .output()
            .map_err(|e| e.to_string())?;
        check(o.status.success(), String::from_utf8_lossy(&o.stderr).into_owned())
    };
    run("a", "1")?;
    run("b", "3")?;
    let mut bytes = 0;
    for f in ["results.tsv", "ttests.tsv", "trials.tsv", "search.tsv", "report.md"] {
        let read = |d: &str| std::fs::read(dir.join(d).join(f)).map_err(|e| format!("{f}: {e}"));
        let (a, b) = (read("a")?, read("b")?);
        check(a == b, format!("{f} differs between runs"))?;
        bytes += a.len();
    }
    Ok(format!(
        "two runs (1 and 3 threads) byte-identical, {bytes} bytes compared"
    ))
}

fn report(n: usize, name: &str, start: Instant, outcome: &Outcome) -> bool {
    let secs = start.elapsed().as_secs_f64();
    match outcome {
        Ok(detail) => println!("criterion {n:>2} PASS  {name} [{secs:.1}s] {detail}"),
        Err(why) => println!("criterion {n:>2} FAIL  {name} [{secs:.1}s] {why}"),
    }
    outcome.is_ok()
}

fn main() {
    let mut all = true;
    let t = Instant::now();
    all &= report(1, "loss oracle values", t, &c1_loss_oracles());
    let t = Instant::now();
    all &= report(2, "gradient correctness", t, &c2_gradients());
    let t = Instant::now();
    all &= report(3, "endpoint identities", t, &c3_endpoints());
    let t = Instant::now();
    all &= report(4, "dataset statistics", t, &c4_dataset_stats());
    let t = Instant::now();
    all &= report(5, "metric oracle equivalence", t, &c5_metric_oracles());
    let t = Instant::now();
    all &= report(6, "t-test correctness", t, &c6_t_test());
    let t = Instant::now();
    let c7 = c7_directional();
    let lambda = c7.as_ref().map(|(_, l)| *l).unwrap_or(0.5);
    all &= report(7, "synthetic directional check", t, &c7.map(|(d, _)| d));
    let t = Instant::now();
    all &= report(8, "undersampling sweep", t, &c8_undersampling(lambda));
    let t = Instant::now();
    all &= report(9, "span extraction", t, &c9_span_extraction());
    let t = Instant::now();
    all &= report(10, "determinism", t, &c10_determinism());
    if !all {
        std::process::exit(1);
    }
}

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{Framework, RunReport};
use crate::error::{Error, Result};

/// Points difference rounded to two decimals, e.g. `(+0.33)`. A rounded zero
/// is always printed as `(+0.00)`.
pub fn format_delta(value: f64, baseline: f64) -> String {
    let d = ((value - baseline) * 100.0).round() / 100.0;
    let d = if d == 0.0 { 0.0 } else { d };
    format!("({d:+.2})")
}

fn pct(x: f64) -> f64 {
    x * 100.0
}

fn join(xs: &[f64]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

/// One aggregated metric of one arm at one fraction.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub fraction: f64,
    pub arm: String,
    pub n_train: usize,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub scores: Vec<f64>,
}

const RESULTS_HEADER: &str = "fraction\tarm\tn_train\tmetric\tmean\tstd\tscores";

/// Full-precision aggregates; every float re-parses to the same value.
pub fn render_results_tsv(report: &RunReport) -> String {
    let mut out = String::from(RESULTS_HEADER);
    out.push('\n');
    for r in &report.results {
        for (name, agg) in &r.metrics {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.fraction,
                r.arm,
                r.n_train,
                name,
                agg.mean,
                agg.std,
                join(&agg.scores)
            );
        }
    }
    out
}

pub fn parse_results_tsv(text: &str) -> Result<Vec<ResultRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == RESULTS_HEADER => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                reason: "missing results header".into(),
            })
        }
    }
    let bad = |line: usize, what: &str| Error::Parse {
        line: line + 1,
        reason: format!("bad {what}"),
    };
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 7 {
            return Err(Error::Parse {
                line: i + 1,
                reason: format!("expected 7 columns, found {}", f.len()),
            });
        }
        let num = |s: &str, what: &str| s.parse::<f64>().map_err(|_| bad(i, what));
        let scores = if f[6].is_empty() {
            Vec::new()
        } else {
            f[6].split(',').map(|s| num(s, "score")).collect::<Result<Vec<_>>>()?
        };
        rows.push(ResultRow {
            fraction: num(f[0], "fraction")?,
            arm: f[1].to_string(),
            n_train: f[2].parse().map_err(|_| bad(i, "n_train"))?,
            metric: f[3].to_string(),
            mean: num(f[4], "mean")?,
            std: num(f[5], "std")?,
            scores,
        });
    }
    Ok(rows)
}

pub fn render_ttests_tsv(report: &RunReport) -> String {
    let mut out =
        String::from("fraction\tarm\tagainst\tkind\tmetric\tmean_difference\tt\tdf\tp\tsignificant\tdegenerate\n");
    for c in &report.comparisons {
        let r = &c.result;
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            c.fraction,
            c.arm,
            c.against,
            c.kind,
            c.metric,
            r.mean_difference,
            r.t,
            r.df,
            r.p,
            r.significant,
            r.degenerate
        );
    }
    out
}

pub fn render_search_tsv(report: &RunReport) -> String {
    let mut out = String::from("arm\tparameter\tvalue\tscore\tselected\n");
    for s in &report.searches {
        for &(v, score) in &s.trace {
            let _ = writeln!(out, "{}\t{}\t{}\t{}\t{}", s.arm, s.parameter, v, score, v == s.best);
        }
    }
    out
}

fn render_trials_tsv(report: &RunReport) -> String {
    let metric = report.objective.metric();
    let mut out = format!("fraction\tarm\tseed\tn_train\tval_{metric}\ttest_{metric}\tloss_trace\n");
    for r in &report.results {
        for t in &r.trials {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                t.fraction,
                t.arm,
                t.seed,
                t.n_train,
                report.objective.score(&t.val),
                report.objective.score(&t.test),
                join(&t.loss_trace)
            );
        }
    }
    out
}

fn mean_of(report: &RunReport, arm: &str, fraction: f64, metric: &str) -> f64 {
    report
        .result(arm, fraction)
        .and_then(|r| r.metric(metric))
        .map(|a| a.mean)
        .unwrap_or(f64::NAN)
}

fn significance_marks(report: &RunReport, arm: &str, fraction: f64) -> String {
    let mut marks = String::new();
    for (kind, mark) in [("baseline", "†"), ("best_other", "‡")] {
        if report
            .comparisons
            .iter()
            .any(|c| c.arm == arm && c.fraction == fraction && c.kind == kind && c.result.significant)
        {
            marks.push_str(mark);
        }
    }
    marks
}

/// Tables scaled to percentages with deltas against the baseline arm.
pub fn render_markdown(report: &RunReport) -> String {
    let mut out = String::new();
    let framework = match report.framework {
        Framework::Sequence => "sequence labeling",
        Framework::Mrc => "span extraction",
    };
    let [pm, rm, fm] = report.objective.family();
    let _ = writeln!(out, "# Results ({framework})\n");
    let _ = writeln!(out, "Baseline arm: `{}`. Metric family: `{fm}`.\n", report.baseline);

    for &fraction in &report.fractions {
        let n_train = report
            .results
            .iter()
            .find(|r| r.fraction == fraction)
            .map(|r| r.n_train)
            .unwrap_or(0);
        let _ = writeln!(out, "## Train fraction {fraction} ({n_train} sentences)\n");
        let _ = writeln!(out, "| Arm | Prec. | Rec. | F1 |");
        let _ = writeln!(out, "|---|---|---|---|");
        let best = report
            .arms
            .iter()
            .map(|a| mean_of(report, &a.name, fraction, fm))
            .fold(f64::NEG_INFINITY, f64::max);
        for arm in &report.arms {
            let mut cells = Vec::new();
            for m in [pm, rm, fm] {
                let v = pct(mean_of(report, &arm.name, fraction, m));
                let mut cell = format!("{v:.2}");
                if arm.name != report.baseline {
                    let b = pct(mean_of(report, &report.baseline, fraction, m));
                    cell = format!("{cell} {}", format_delta(v, b));
                }
                if m == fm && mean_of(report, &arm.name, fraction, m) == best {
                    cell = format!("**{cell}**");
                }
                cells.push(cell);
            }
            let _ = writeln!(
                out,
                "| {}{} | {} |",
                arm.name,
                significance_marks(report, &arm.name, fraction),
                cells.join(" | ")
            );
        }
        if !report.comparisons.is_empty() {
            let alpha = report.alpha;
            let _ = writeln!(
                out,
                "\n† paired t-test against `{}` on `{fm}`, p < {alpha}. ‡ paired t-test against the best arm without the MoM term, p < {alpha}.",
                report.baseline
            );
        }

        if !report.categories.is_empty() {
            let _ = writeln!(out, "\n### Per-category F1\n");
            let _ = writeln!(out, "| Arm | {} |", report.categories.join(" | "));
            let _ = writeln!(out, "|---|{}", "---|".repeat(report.categories.len()));
            for arm in &report.arms {
                let cells: Vec<String> = report
                    .categories
                    .iter()
                    .map(|c| {
                        format!(
                            "{:.2}",
                            pct(mean_of(report, &arm.name, fraction, &format!("category:{c}")))
                        )
                    })
                    .collect();
                let _ = writeln!(out, "| {} | {} |", arm.name, cells.join(" | "));
            }
        }

        let bins: Vec<String> = report
            .result(&report.baseline, fraction)
            .map(|r| {
                r.metrics
                    .iter()
                    .filter_map(|(n, _)| n.strip_prefix("bin:").map(str::to_string))
                    .collect()
            })
            .unwrap_or_default();
        if !bins.is_empty() {
            let _ = writeln!(out, "\n### Sentence accuracy by length\n");
            let _ = writeln!(out, "| Arm | {} |", bins.join(" | "));
            let _ = writeln!(out, "|---|{}", "---|".repeat(bins.len()));
            for arm in &report.arms {
                let cells: Vec<String> = bins
                    .iter()
                    .map(|b| format!("{:.2}", pct(mean_of(report, &arm.name, fraction, &format!("bin:{b}")))))
                    .collect();
                let _ = writeln!(out, "| {} | {} |", arm.name, cells.join(" | "));
            }
        }
        out.push('\n');
    }

    if report.fractions.len() > 1 {
        let _ = writeln!(out, "## Undersampling curve\n");
        for (title, metric) in [
            ("Macro-F1", "macro_f1"),
            ("Sentence accuracy", "sentence_accuracy"),
            ("Word accuracy", "word_accuracy"),
        ] {
            let heads: Vec<String> = report.fractions.iter().map(|f| f.to_string()).collect();
            let _ = writeln!(out, "### {title}\n");
            let _ = writeln!(out, "| Arm | {} |", heads.join(" | "));
            let _ = writeln!(out, "|---|{}", "---|".repeat(heads.len()));
            for arm in &report.arms {
                let cells: Vec<String> = report
                    .fractions
                    .iter()
                    .map(|&f| format!("{:.2}", pct(mean_of(report, &arm.name, f, metric))))
                    .collect();
                let _ = writeln!(out, "| {} | {} |", arm.name, cells.join(" | "));
            }
            out.push('\n');
        }
    }

    if !report.searches.is_empty() {
        let _ = writeln!(out, "## Grid search\n");
        let _ = writeln!(out, "| Arm | Parameter | Selected | Validation score |");
        let _ = writeln!(out, "|---|---|---|---|");
        for s in &report.searches {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {:.2} |",
                s.arm,
                s.parameter,
                s.best,
                pct(s.best_score)
            );
        }
        out.push('\n');
    }
    out
}

/// Writes `results.tsv`, `ttests.tsv`, `trials.tsv`, `search.tsv` and
/// `report.md` into `dir` and returns their paths.
pub fn emit_report(report: &RunReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let files = [
        ("results.tsv", render_results_tsv(report)),
        ("ttests.tsv", render_ttests_tsv(report)),
        ("trials.tsv", render_trials_tsv(report)),
        ("search.tsv", render_search_tsv(report)),
        ("report.md", render_markdown(report)),
    ];
    let mut paths = Vec::new();
    for (name, body) in files {
        let path = dir.join(name);
        std::fs::write(&path, body)?;
        paths.push(path);
    }
    Ok(paths)
}

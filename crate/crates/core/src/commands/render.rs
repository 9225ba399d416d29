//! Plain-text and CSV renderings of command outputs.

use std::fmt::Write as _;

use super::cost::{profile_cost, CostEstimate};
use super::evaluate::{EvaluationOutput, McNemarReport, SimilarityOutput};
use crate::config::RunConfig;
use crate::domain::AssessmentLabel;
use crate::runlog::PipelineKind;
use crate::stats::{ConfusionMatrix, EvaluationReport};

fn row(out: &mut String, label: &str, cells: &[String]) {
    let _ = write!(out, "{label:<26}");
    for c in cells {
        let _ = write!(out, "{c:>22}");
    }
    out.push('\n');
}

fn header(columns: &[String]) -> String {
    let mut out = String::new();
    row(&mut out, "Metrics", columns);
    out
}

/// Accuracy, micro/macro F1, then precision, recall and F1 per class; one
/// column per report.
pub fn metrics_table(columns: &[(String, &EvaluationReport)]) -> String {
    let names: Vec<String> = columns.iter().map(|(n, _)| n.clone()).collect();
    let mut out = header(&names);
    let f = |x: f64| format!("{x:.3}");
    row(&mut out, "Accuracy", &columns.iter().map(|(_, r)| f(r.accuracy)).collect::<Vec<_>>());
    row(&mut out, "Micro-Average F1 Score", &columns.iter().map(|(_, r)| f(r.micro_f1)).collect::<Vec<_>>());
    row(&mut out, "Macro-Average F1 Score", &columns.iter().map(|(_, r)| f(r.macro_f1)).collect::<Vec<_>>());
    for label in AssessmentLabel::ALL {
        row(&mut out, label.display_name(), &[]);
        let m = |pick: fn(&crate::stats::ClassMetrics) -> f64| {
            columns.iter().map(|(_, r)| f(pick(&r.per_class[&label]))).collect::<Vec<_>>()
        };
        row(&mut out, "  Precision", &m(|c| c.precision));
        row(&mut out, "  Recall", &m(|c| c.recall));
        row(&mut out, "  F1 Score", &m(|c| c.f1));
    }
    out
}

/// Share of each category classified correctly, e.g. `97.4% (151/155)`.
pub fn correct_table(columns: &[(String, &EvaluationReport)]) -> String {
    let names: Vec<String> = columns.iter().map(|(n, _)| n.clone()).collect();
    let mut out = String::new();
    row(&mut out, "", &names);
    for label in AssessmentLabel::ALL {
        let cells: Vec<String> = columns
            .iter()
            .map(|(_, r)| {
                let c = r.pct_correct[&label];
                format!("{:.1}% ({}/{})", c.percent(), c.correct, c.total)
            })
            .collect();
        row(&mut out, label.display_name(), &cells);
    }
    out
}

/// Rows are ground truth, columns predictions.
pub fn confusion_csv(cm: &ConfusionMatrix) -> String {
    let mut out = String::from("truth\\pred");
    for l in AssessmentLabel::ALL {
        let _ = write!(out, ",{}", l.as_str());
    }
    out.push('\n');
    for t in AssessmentLabel::ALL {
        out.push_str(t.as_str());
        for p in AssessmentLabel::ALL {
            let _ = write!(out, ",{}", cm.get(t, p));
        }
        out.push('\n');
    }
    out
}

pub fn evaluation_text(name: &str, eval: &EvaluationOutput) -> String {
    let mut out = String::new();
    let pipeline = eval.pipeline.map(|p| p.to_string()).unwrap_or_else(|| "?".into());
    let mode = eval.mode.map(|m| m.as_str()).unwrap_or("?");
    let _ = writeln!(out, "pipeline: {pipeline}  mode: {mode}");
    let _ = writeln!(out, "evaluated: {}  excluded: {}", eval.evaluated, eval.excluded);
    if eval.pipeline == Some(PipelineKind::B) {
        let _ = writeln!(out, "llm/rule disagreements: {}", eval.rule_disagreements);
    }
    let _ = writeln!(out, "tokens: {} in / {} out\n", eval.usage.input_tokens, eval.usage.output_tokens);
    out.push_str(&correct_table(&[(name.to_string(), &eval.report)]));
    out.push('\n');
    out.push_str(&metrics_table(&[(name.to_string(), &eval.report)]));
    out
}

fn stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

fn format_p(p: f64) -> String {
    if p >= 1e-3 {
        format!("{p:.4}")
    } else {
        format!("{p:.3e}")
    }
}

pub fn mcnemar_table(report: &McNemarReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "paired: {}  excluded: {}", report.paired, report.excluded);
    let names: Vec<String> = report.rows.iter().map(|r| r.category.display_name().to_string()).collect();
    row(&mut out, "", &names);
    let cell = |f: &dyn Fn(&super::McNemarRow) -> String| report.rows.iter().map(f).collect::<Vec<_>>();
    row(&mut out, "b (first only)", &cell(&|r| r.result.cells.only_first_correct.to_string()));
    row(&mut out, "c (second only)", &cell(&|r| r.result.cells.only_second_correct.to_string()));
    row(
        &mut out,
        "statistic",
        &cell(&|r| match r.result.statistic {
            Some(s) => format!("{s:.2}{}", stars(r.result.p_value)),
            None => "n/a".into(),
        }),
    );
    row(&mut out, "p-value", &cell(&|r| format_p(r.result.p_value)));
    row(&mut out, "multi-image households", &cell(&|r| r.multi_image_households.to_string()));
    out
}

pub fn cost_table(est: &CostEstimate) -> String {
    let mut out = String::new();
    let cols = ["images", "households", "in/10", "out/10", "per sample", "total"];
    let _ = writeln!(out, "{:<10}{}", "pipeline", cols.iter().map(|c| format!("{c:>14}")).collect::<String>());
    for l in &est.lines {
        let _ = writeln!(
            out,
            "{:<10}{:>14}{:>14}{:>14}{:>14}{:>14}{:>14}",
            l.pipeline,
            l.images,
            l.households,
            l.usage_per_10.input_tokens,
            l.usage_per_10.output_tokens,
            l.per_sample.normalize(),
            l.total.normalize()
        );
    }
    let _ = writeln!(out, "total: {}", est.total.normalize());
    out
}

/// Every configured token profile with its ten-sample and per-sample price.
pub fn token_profile_table(config: &RunConfig) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<10}{:>8}{:>12}{:>12}{:>12}{:>12}{:>14}{:>14}",
        "pipeline", "images", "vlm in", "vlm out", "llm in", "llm out", "per 10", "per sample"
    );
    for p in &config.token_profiles {
        let (per_10, per_sample) = profile_cost(p, &config.cost);
        let _ = writeln!(
            out,
            "{:<10}{:>8}{:>12}{:>12}{:>12}{:>12}{:>14}{:>14}",
            p.pipeline,
            p.images,
            p.vlm_input,
            p.vlm_output,
            p.llm_input,
            p.llm_output,
            per_10.normalize(),
            per_sample.normalize()
        );
    }
    out
}

pub fn similarity_table(sim: &SimilarityOutput) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<28}{:>14}{:>10}", "Category", "Cosine Score", "pairs");
    for r in &sim.report.rows {
        let name = format!("{} vs {}", r.category_a.as_str(), r.category_b.as_str());
        let _ = writeln!(out, "{name:<28}{:>14.3}{:>10}", r.mean_cosine, r.n_pairs);
    }
    if sim.merges.is_empty() {
        let _ = writeln!(out, "recommendation: keep categories separate (threshold {})", sim.threshold);
    } else {
        for m in &sim.merges {
            let _ = writeln!(out, "recommendation: merge {} into {} (threshold {})", m.from.as_str(), m.into.as_str(), sim.threshold);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::summarize;

    #[test]
    fn table_shapes() {
        let cm = ConfusionMatrix::from_counts([[151, 4, 0], [130, 53, 7], [0, 0, 155]]);
        let r = summarize(&cm).unwrap();
        let t = metrics_table(&[("Eaton A".into(), &r)]);
        assert!(t.lines().nth(1).unwrap().ends_with("0.718"));
        assert_eq!(t.lines().count(), 4 + 3 * 4);
        let c = correct_table(&[("Eaton A".into(), &r)]);
        assert!(c.contains("97.4% (151/155)"));
        assert!(c.contains("27.9% (53/190)"));
        let csv = confusion_csv(&cm);
        assert_eq!(csv.lines().nth(2).unwrap(), "affected,130,53,7");
    }

    #[test]
    fn cost_profiles_listed() {
        let t = token_profile_table(&RunConfig::default());
        assert!(t.contains("0.05127"));
        assert!(t.contains("0.0025245"));
    }
}

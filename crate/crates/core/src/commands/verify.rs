//! Re-derives a saved report from logs and lists every value that differs.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::evaluate::{cmd_evaluate, cmd_mcnemar, EvaluationOutput, McNemarReport};
use super::CommandError;
use crate::ingestion::DatasetManifest;
use crate::runlog::RunLog;
use crate::stats::McNemarMethod;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diff {
    pub path: String,
    pub reported: Value,
    pub derived: Value,
}

fn same_number(a: &Value, b: &Value) -> bool {
    match (a.as_f64(), b.as_f64()) {
        (Some(x), Some(y)) => x == y || (x - y).abs() <= 1e-12 * x.abs().max(y.abs()),
        _ => false,
    }
}

/// Leaf-by-leaf comparison; numbers agree to 1e-12 relative.
pub fn diff_json(reported: &Value, derived: &Value) -> Vec<Diff> {
    let mut out = Vec::new();
    walk("$", reported, derived, &mut out);
    out
}

fn walk(path: &str, a: &Value, b: &Value, out: &mut Vec<Diff>) {
    match (a, b) {
        (Value::Object(x), Value::Object(y)) => {
            let keys: std::collections::BTreeSet<&String> = x.keys().chain(y.keys()).collect();
            for k in keys {
                let (va, vb) = (x.get(k).unwrap_or(&Value::Null), y.get(k).unwrap_or(&Value::Null));
                walk(&format!("{path}.{k}"), va, vb, out);
            }
        }
        (Value::Array(x), Value::Array(y)) if x.len() == y.len() => {
            for (i, (va, vb)) in x.iter().zip(y).enumerate() {
                walk(&format!("{path}[{i}]"), va, vb, out);
            }
        }
        (Value::Number(_), Value::Number(_)) if same_number(a, b) => {}
        _ if a == b => {}
        _ => out.push(Diff { path: path.to_string(), reported: a.clone(), derived: b.clone() }),
    }
}

/// Accepts a saved evaluation report (one log) or McNemar report (two
/// logs) and compares it with a fresh derivation.
pub fn cmd_verify(
    report: &Value,
    log: &RunLog,
    second: Option<&RunLog>,
    manifest: &DatasetManifest,
) -> Result<Vec<Diff>, CommandError> {
    let derived = if serde_json::from_value::<EvaluationOutput>(report.clone()).is_ok() {
        serde_json::to_value(cmd_evaluate(log, manifest)?)
    } else if let Ok(saved) = serde_json::from_value::<McNemarReport>(report.clone()) {
        let second = second.ok_or_else(|| CommandError::InvalidReport("McNemar report needs two logs".into()))?;
        let method = saved.rows.first().map(|r| r.result.method).unwrap_or(McNemarMethod::default());
        serde_json::to_value(cmd_mcnemar(log, second, manifest, method)?)
    } else {
        return Err(CommandError::InvalidReport("neither an evaluation nor a McNemar report".into()));
    };
    Ok(diff_json(report, &derived.expect("report serializes")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn diffs_leaves() {
        let a = json!({"x": 1, "y": [0.5, 2], "z": {"w": "a"}});
        assert!(diff_json(&a, &a.clone()).is_empty());
        let b = json!({"x": 1.0, "y": [0.5, 3], "z": {"w": "b"}, "extra": true});
        let d = diff_json(&a, &b);
        let paths: Vec<&str> = d.iter().map(|d| d.path.as_str()).collect();
        assert_eq!(paths, vec!["$.extra", "$.y[1]", "$.z.w"]);
    }

    #[test]
    fn rejects_unknown_report() {
        let m = DatasetManifest::new("m", vec![]);
        assert!(matches!(
            cmd_verify(&json!({"hello": 1}), &RunLog::default(), None, &m),
            Err(CommandError::InvalidReport(_))
        ));
    }
}

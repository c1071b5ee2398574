//! Shared test support: a deterministic scripted "LLM" that answers the
//! real prompt templates well enough to drive full builds through the
//! text path, plus small fixture helpers.

use ztree::error::GatewayError;
use ztree::gateway::{ChatPrompt, CompletionBackend};
use ztree::schema::{FeatureSpec, NumericDtype, TaskSpec};

/// Deterministic completion backend that parses the prompt text it is
/// given and produces well-formed `Output:` replies. Numeric splits get
/// the midpoint of the constraint interval, categorical splits a
/// first-versus-rest grouping, probability estimates a fixed pair of
/// values. Purely a function of the prompt, so recordings replay exactly.
pub struct FakeLlm;

fn between<'a>(text: &'a str, start: &str, end: &str) -> Option<&'a str> {
    let s = text.find(start)? + start.len();
    let e = text[s..].find(end)? + s;
    Some(&text[s..e])
}

/// Effective interval of `feature` from rendered constraint text like
/// `age <= 35 AND age > 25`, over a working range of [0, 100].
fn interval_from_constraints(constraints: &str, feature: &str) -> (f64, f64) {
    let (mut lo, mut hi) = (0.0f64, 100.0f64);
    if constraints.trim() == "no constraints" {
        return (lo, hi);
    }
    for clause in constraints.split(" AND ") {
        let clause = clause.trim();
        let mut apply = |op: &str, upper: bool| {
            if let Some(rest) = clause.strip_prefix(&format!("{feature} {op} ")) {
                if let Ok(v) = rest.trim().parse::<f64>() {
                    if upper {
                        hi = hi.min(v);
                    } else {
                        lo = lo.max(v);
                    }
                }
            }
        };
        apply("<=", true);
        apply("<", true);
        apply(">=", false);
        apply(">", false);
    }
    (lo, hi)
}

impl CompletionBackend for FakeLlm {
    fn complete_raw(&self, prompt: &ChatPrompt) -> Result<String, GatewayError> {
        let user = prompt.user();
        if user.starts_with("What value of the attribute ") {
            let feature = between(user, "What value of the attribute ", " (").unwrap_or("x");
            let constraints =
                between(user, "meets the constraints: ", ")").unwrap_or("no constraints");
            let (lo, hi) = interval_from_constraints(constraints, feature);
            return Ok(format!("Output: {}", lo + (hi - lo) / 2.0));
        }
        if user.starts_with("For the categorical attribute ") {
            let values = between(user, "with possible values: ", ", what two groups").unwrap_or("");
            let cats: Vec<&str> = values.split(", ").filter(|c| !c.is_empty()).collect();
            if cats.len() >= 2 {
                return Ok(format!("Output: {};;{}", cats[0], cats[1..].join(", ")));
            }
            return Ok("Output: Nothing".to_string());
        }
        if user.starts_with("Considering a classification problem") {
            // One number that every per-label extraction will pick up;
            // renormalization turns it into a uniform distribution.
            return Ok("Output: 0.5".to_string());
        }
        // Parser prompts only arrive when the replies above were not
        // directly extractable, which does not happen with this script.
        Ok("Output: Nothing".to_string())
    }

    fn name(&self) -> &'static str {
        "fake-llm"
    }

    fn is_deterministic(&self) -> bool {
        true
    }
}

/// Small two-numeric one-categorical task used across the integration
/// tests.
pub fn demo_task() -> TaskSpec {
    TaskSpec::new(
        "diabetes risk",
        "patient",
        "diabetes",
        &["yes", "no"],
        vec![
            FeatureSpec::numeric("glucose", NumericDtype::Real, Some(0.0), Some(100.0)).unwrap(),
            FeatureSpec::numeric("age", NumericDtype::Real, Some(0.0), Some(100.0)).unwrap(),
            FeatureSpec::categorical("smoker", &["never", "former", "current"]).unwrap(),
        ],
    )
    .unwrap()
}

//! The six chat prompt templates and their placeholder substitution.
//!
//! Template text is data, not code: the defaults are embedded from
//! `templates/` and a directory override lets prompt experiments swap
//! them without a rebuild. Substitution is strict — every `{name}` token
//! in a template must resolve, and values are never re-scanned, so
//! braces inside substituted text (e.g. `color in {red, blue}`) pass
//! through untouched.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use crate::error::PromptError;
use crate::gateway::{ChatPrompt, PromptParams};
use crate::schema::{
    render_context, BranchContext, FeatureSpec, ProbabilityDistribution, TaskSpec,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TemplateId {
    NumericSplit,
    ParseNumeric,
    CategoricalSplit,
    ParseCategorical,
    ProbabilityEstimate,
    ParseProbability,
}

impl TemplateId {
    pub const ALL: [TemplateId; 6] = [
        TemplateId::NumericSplit,
        TemplateId::ParseNumeric,
        TemplateId::CategoricalSplit,
        TemplateId::ParseCategorical,
        TemplateId::ProbabilityEstimate,
        TemplateId::ParseProbability,
    ];

    pub fn file_stem(self) -> &'static str {
        match self {
            TemplateId::NumericSplit => "numeric_split",
            TemplateId::ParseNumeric => "parse_numeric",
            TemplateId::CategoricalSplit => "categorical_split",
            TemplateId::ParseCategorical => "parse_categorical",
            TemplateId::ProbabilityEstimate => "probability_estimate",
            TemplateId::ParseProbability => "parse_probability",
        }
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.file_stem())
    }
}

#[derive(Debug, Clone)]
pub struct PromptTemplate {
    pub id: TemplateId,
    pub system: String,
    pub assistant: String,
    pub user: String,
}

impl PromptTemplate {
    /// Parses the on-disk format: three sections introduced by lines
    /// reading exactly `[system]`, `[assistant]` and `[user]`.
    pub fn parse(id: TemplateId, text: &str) -> Result<Self, PromptError> {
        let mut sections: Vec<(&str, Vec<&str>)> = Vec::new();
        for line in text.lines() {
            match line {
                "[system]" | "[assistant]" | "[user]" => sections.push((line, Vec::new())),
                _ => match sections.last_mut() {
                    Some((_, body)) => body.push(line),
                    None => {
                        return Err(PromptError::BadTemplate {
                            id: id.to_string(),
                            reason: "text before the [system] marker".to_string(),
                        })
                    }
                },
            }
        }
        let markers: Vec<&str> = sections.iter().map(|(m, _)| *m).collect();
        if markers != ["[system]", "[assistant]", "[user]"] {
            return Err(PromptError::BadTemplate {
                id: id.to_string(),
                reason: format!("expected [system]/[assistant]/[user] sections, found {markers:?}"),
            });
        }
        let mut bodies = sections.into_iter().map(|(_, body)| body.join("\n"));
        Ok(PromptTemplate {
            id,
            system: bodies.next().unwrap(),
            assistant: bodies.next().unwrap(),
            user: bodies.next().unwrap(),
        })
    }
}

/// Substitutes `{name}` tokens in a single pass. Unknown tokens are an
/// error rather than being passed through: a prompt leaving the process
/// with a raw placeholder is always a bug.
fn substitute(
    id: TemplateId,
    template: &str,
    values: &HashMap<&str, String>,
) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(start) = rest.find('{') {
        out.push_str(&rest[..start]);
        let after = &rest[start + 1..];
        let end = after.find('}').ok_or_else(|| PromptError::BadTemplate {
            id: id.to_string(),
            reason: "unterminated {placeholder".to_string(),
        })?;
        let name = &after[..end];
        match values.get(name) {
            Some(value) => out.push_str(value),
            None => {
                return Err(PromptError::MissingPlaceholderValue {
                    template: id.to_string(),
                    placeholder: name.to_string(),
                })
            }
        }
        rest = &after[end + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

/// Inputs for the three parser prompts.
#[derive(Debug, Clone)]
pub enum ParserInputs<'a> {
    Numeric {
        feature: &'a str,
        response_text: &'a str,
    },
    Categorical {
        feature: &'a str,
        possible_values: &'a [String],
        response_text: &'a str,
    },
    Probability {
        label: &'a str,
        new_information: &'a str,
        instance_type: &'a str,
        class_1: &'a str,
        class_2: &'a str,
        response_text: &'a str,
    },
}

/// Renders a distribution as `label: p` pairs, two decimals, in label
/// order — the `{previous_probabilities}` prompt input.
pub fn render_probabilities(dist: &ProbabilityDistribution) -> String {
    dist.iter()
        .map(|(label, p)| format!("{label}: {p:.2}"))
        .collect::<Vec<_>>()
        .join(", ")
}

pub struct TemplateSet {
    templates: HashMap<TemplateId, PromptTemplate>,
}

impl TemplateSet {
    /// The templates compiled into the binary.
    pub fn embedded() -> Self {
        let sources = [
            (
                TemplateId::NumericSplit,
                include_str!("../templates/numeric_split.txt"),
            ),
            (
                TemplateId::ParseNumeric,
                include_str!("../templates/parse_numeric.txt"),
            ),
            (
                TemplateId::CategoricalSplit,
                include_str!("../templates/categorical_split.txt"),
            ),
            (
                TemplateId::ParseCategorical,
                include_str!("../templates/parse_categorical.txt"),
            ),
            (
                TemplateId::ProbabilityEstimate,
                include_str!("../templates/probability_estimate.txt"),
            ),
            (
                TemplateId::ParseProbability,
                include_str!("../templates/parse_probability.txt"),
            ),
        ];
        let templates = sources
            .into_iter()
            .map(|(id, text)| {
                (
                    id,
                    PromptTemplate::parse(id, text).expect("embedded template is valid"),
                )
            })
            .collect();
        TemplateSet { templates }
    }

    /// Loads all six templates from a directory of `<id>.txt` files.
    pub fn from_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut templates = HashMap::new();
        for id in TemplateId::ALL {
            let path = dir.join(format!("{}.txt", id.file_stem()));
            let text = std::fs::read_to_string(&path)?;
            templates.insert(id, PromptTemplate::parse(id, &text)?);
        }
        Ok(TemplateSet { templates })
    }

    pub fn template(&self, id: TemplateId) -> &PromptTemplate {
        &self.templates[&id]
    }

    fn build(
        &self,
        id: TemplateId,
        values: &HashMap<&str, String>,
        params: &PromptParams,
    ) -> Result<ChatPrompt, PromptError> {
        let t = self.template(id);
        Ok(ChatPrompt::new(
            substitute(id, &t.system, values)?,
            substitute(id, &t.assistant, values)?,
            substitute(id, &t.user, values)?,
            params.clone(),
        ))
    }

    /// Prompt asking for a threshold on a numeric feature.
    pub fn build_numeric_split(
        &self,
        task: &TaskSpec,
        feature: &FeatureSpec,
        ctx: &BranchContext,
        params: &PromptParams,
    ) -> Result<ChatPrompt, PromptError> {
        let values = HashMap::from([
            ("problem", task.problem.clone()),
            ("feature", feature.name.clone()),
            ("branch_context", render_context(ctx)),
        ]);
        self.build(TemplateId::NumericSplit, &values, params)
    }

    /// Prompt asking for two disjoint category groups.
    pub fn build_categorical_split(
        &self,
        task: &TaskSpec,
        feature: &FeatureSpec,
        ctx: &BranchContext,
        allowed: &[String],
        params: &PromptParams,
    ) -> Result<ChatPrompt, PromptError> {
        if allowed.len() < 2 {
            return Err(PromptError::TooFewCategories {
                count: allowed.len(),
            });
        }
        let values = HashMap::from([
            ("problem", task.problem.clone()),
            ("feature", feature.name.clone()),
            ("branch_context", render_context(ctx)),
            ("possible_values", allowed.join(", ")),
            ("target_labels", task.target_labels.join(", ")),
        ]);
        self.build(TemplateId::CategoricalSplit, &values, params)
    }

    /// Prompt asking for label probabilities in each of the two divisions.
    pub fn build_probability_estimate(
        &self,
        task: &TaskSpec,
        ctx: &BranchContext,
        prev_probs: &ProbabilityDistribution,
        division_left: &str,
        division_right: &str,
        params: &PromptParams,
    ) -> Result<ChatPrompt, PromptError> {
        let values = HashMap::from([
            ("problem", task.problem.clone()),
            ("instance_type", task.instance_type.clone()),
            ("target_feature", task.target_feature.clone()),
            ("classes", task.target_labels.join(", ")),
            ("previous_context", render_context(ctx)),
            ("previous_probabilities", render_probabilities(prev_probs)),
            ("division_1", division_left.to_string()),
            ("division_2", division_right.to_string()),
        ]);
        self.build(TemplateId::ProbabilityEstimate, &values, params)
    }

    /// One of the three extraction prompts, fed a task response that the
    /// deterministic extractor could not handle.
    pub fn build_parser_prompt(
        &self,
        inputs: &ParserInputs<'_>,
        params: &PromptParams,
    ) -> Result<ChatPrompt, PromptError> {
        match inputs {
            ParserInputs::Numeric {
                feature,
                response_text,
            } => {
                let values = HashMap::from([
                    ("feature", feature.to_string()),
                    ("response_text", response_text.to_string()),
                ]);
                self.build(TemplateId::ParseNumeric, &values, params)
            }
            ParserInputs::Categorical {
                feature,
                possible_values,
                response_text,
            } => {
                let values = HashMap::from([
                    ("feature", feature.to_string()),
                    ("possible_values", possible_values.join(", ")),
                    ("response_text", response_text.to_string()),
                ]);
                self.build(TemplateId::ParseCategorical, &values, params)
            }
            ParserInputs::Probability {
                label,
                new_information,
                instance_type,
                class_1,
                class_2,
                response_text,
            } => {
                let values = HashMap::from([
                    ("label", label.to_string()),
                    ("new_information", new_information.to_string()),
                    ("instance_type", instance_type.to_string()),
                    ("class_1", class_1.to_string()),
                    ("class_2", class_2.to_string()),
                    ("response_text", response_text.to_string()),
                ]);
                self.build(TemplateId::ParseProbability, &values, params)
            }
        }
    }
}

impl Default for TemplateSet {
    fn default() -> Self {
        TemplateSet::embedded()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::Role;
    use crate::schema::{FeatureSpec, NumericDtype, SplitSide};

    fn task() -> TaskSpec {
        TaskSpec::new(
            "diabetes",
            "patient",
            "diabetes",
            &["yes", "no"],
            vec![
                FeatureSpec::numeric("glucose", NumericDtype::Real, Some(0.0), Some(400.0))
                    .unwrap(),
                FeatureSpec::numeric("age", NumericDtype::Integer, Some(0.0), Some(120.0)).unwrap(),
                FeatureSpec::categorical("color", &["red", "blue", "green", "yellow"]).unwrap(),
            ],
        )
        .unwrap()
    }

    fn root(t: &TaskSpec) -> BranchContext {
        BranchContext::root(ProbabilityDistribution::uniform(&t.target_labels))
    }

    #[test]
    fn numeric_split_prompt_shape() {
        let t = task();
        let forge = TemplateSet::embedded();
        let prompt = forge
            .build_numeric_split(
                &t,
                t.feature("glucose").unwrap(),
                &root(&t),
                &PromptParams::default(),
            )
            .unwrap();
        assert_eq!(prompt.messages.len(), 3);
        assert_eq!(
            prompt.messages.iter().map(|m| m.role).collect::<Vec<_>>(),
            [Role::System, Role::Assistant, Role::User]
        );
        assert!(prompt
            .user()
            .contains("What value of the attribute glucose"));
        assert!(prompt.user().contains("no constraints"));
        assert!(!prompt.user().contains("{feature}"));
    }

    #[test]
    fn branch_context_reaches_both_slots() {
        let t = task();
        let ctx = root(&t)
            .narrow_numeric(&t, "age", 35.0, SplitSide::Left)
            .unwrap();
        let forge = TemplateSet::embedded();
        let prompt = forge
            .build_numeric_split(
                &t,
                t.feature("glucose").unwrap(),
                &ctx,
                &PromptParams::default(),
            )
            .unwrap();
        assert!(prompt.assistant().contains("age <= 35"));
        assert!(prompt.user().contains("age <= 35"));
    }

    #[test]
    fn categorical_split_prompt() {
        let t = task();
        let forge = TemplateSet::embedded();
        let allowed: Vec<String> = ["red", "blue", "green", "yellow"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let prompt = forge
            .build_categorical_split(
                &t,
                t.feature("color").unwrap(),
                &root(&t),
                &allowed,
                &PromptParams::default(),
            )
            .unwrap();
        assert!(prompt
            .system()
            .contains("possible categories: red, blue, green, yellow"));
        assert!(prompt.user().contains("Choose two disjoint groupings."));

        let one = vec!["red".to_string()];
        let err = forge
            .build_categorical_split(
                &t,
                t.feature("color").unwrap(),
                &root(&t),
                &one,
                &PromptParams::default(),
            )
            .unwrap_err();
        assert!(matches!(err, PromptError::TooFewCategories { count: 1 }));
    }

    #[test]
    fn probability_estimate_prompt() {
        let t = task();
        let forge = TemplateSet::embedded();
        let prev = ProbabilityDistribution::uniform(&t.target_labels);
        let prompt = forge
            .build_probability_estimate(
                &t,
                &root(&t),
                &prev,
                "glucose <= 140",
                "glucose > 140",
                &PromptParams::default(),
            )
            .unwrap();
        assert!(prompt.system().contains("equal or higher than 0.9"));
        assert!(prompt.user().contains("yes: 0.50, no: 0.50"));
        assert!(prompt.user().contains("no constraints"));
        assert!(prompt.user().contains("glucose <= 140 or glucose > 140"));
    }

    #[test]
    fn parser_prompts_teach_output_convention() {
        let forge = TemplateSet::embedded();
        let params = PromptParams::default();
        let numeric = forge
            .build_parser_prompt(
                &ParserInputs::Numeric {
                    feature: "glucose",
                    response_text: "140 looks right",
                },
                &params,
            )
            .unwrap();
        assert!(numeric.assistant().contains("Output: 15.5"));

        let possible: Vec<String> = ["red", "blue"].iter().map(|s| s.to_string()).collect();
        let categorical = forge
            .build_parser_prompt(
                &ParserInputs::Categorical {
                    feature: "color",
                    possible_values: &possible,
                    response_text: "split red from blue",
                },
                &params,
            )
            .unwrap();
        assert!(categorical.assistant().contains("Output: red, green;;blue"));

        let probability = forge
            .build_parser_prompt(
                &ParserInputs::Probability {
                    label: "yes",
                    new_information: "glucose <= 140",
                    instance_type: "patient",
                    class_1: "yes",
                    class_2: "no",
                    response_text: "probably 0.8",
                },
                &params,
            )
            .unwrap();
        assert!(probability.assistant().contains("Output: 0.8"));
    }

    #[test]
    fn substitution_is_deterministic() {
        let t = task();
        let forge = TemplateSet::embedded();
        let a = forge
            .build_numeric_split(
                &t,
                t.feature("glucose").unwrap(),
                &root(&t),
                &PromptParams::default(),
            )
            .unwrap();
        let b = forge
            .build_numeric_split(
                &t,
                t.feature("glucose").unwrap(),
                &root(&t),
                &PromptParams::default(),
            )
            .unwrap();
        assert_eq!(a, b);
    }
}

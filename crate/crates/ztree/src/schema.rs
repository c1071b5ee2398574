//! Task descriptions, feature schemas, branch constraints and label
//! distributions.
//!
//! Everything that flows between the tree builder, the prompts and the
//! datasets is expressed in terms of normalized identifiers so that CSV
//! headers, prompt text and parsed model output round-trip exactly.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{ContextError, DistributionError, SchemaError};

/// Lowercases, replaces whitespace runs with `_`, strips everything outside
/// `[a-z0-9_]` and collapses/trims underscores. Idempotent.
pub fn normalize_identifier(raw: &str) -> Result<String, SchemaError> {
    let mut out = String::with_capacity(raw.len());
    for ch in raw.chars() {
        if ch.is_whitespace() {
            out.push('_');
            continue;
        }
        for lc in ch.to_lowercase() {
            if lc.is_ascii_lowercase() || lc.is_ascii_digit() || lc == '_' {
                out.push(lc);
            }
        }
    }
    let mut collapsed = String::with_capacity(out.len());
    let mut prev_underscore = false;
    for ch in out.chars() {
        if ch == '_' {
            if !prev_underscore {
                collapsed.push('_');
            }
            prev_underscore = true;
        } else {
            collapsed.push(ch);
            prev_underscore = false;
        }
    }
    let trimmed = collapsed.trim_matches('_');
    if trimmed.is_empty() {
        return Err(SchemaError::EmptyIdentifier {
            raw: raw.to_string(),
        });
    }
    Ok(trimmed.to_string())
}

/// Numeric storage type of a feature. Integer features only admit splits
/// that leave at least one integer on each side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NumericDtype {
    Integer,
    Real,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FeatureKind {
    Numeric {
        dtype: NumericDtype,
        lower: Option<f64>,
        upper: Option<f64>,
    },
    Categorical {
        /// Declared categories in presentation order, each normalized.
        categories: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
}

impl FeatureSpec {
    pub fn numeric(
        name: &str,
        dtype: NumericDtype,
        lower: Option<f64>,
        upper: Option<f64>,
    ) -> Result<Self, SchemaError> {
        let name = normalize_identifier(name)?;
        if let (Some(lo), Some(hi)) = (lower, upper) {
            if !lo.is_finite() || !hi.is_finite() || lo >= hi {
                return Err(SchemaError::BadBounds {
                    feature: name,
                    lower: lo,
                    upper: hi,
                });
            }
        }
        Ok(FeatureSpec {
            name,
            kind: FeatureKind::Numeric {
                dtype,
                lower,
                upper,
            },
        })
    }

    pub fn categorical(name: &str, categories: &[&str]) -> Result<Self, SchemaError> {
        let name = normalize_identifier(name)?;
        let mut seen = HashSet::new();
        let mut normalized = Vec::with_capacity(categories.len());
        for cat in categories {
            let cat = normalize_identifier(cat)?;
            if !seen.insert(cat.clone()) {
                return Err(SchemaError::DuplicateCategory {
                    feature: name,
                    category: cat,
                });
            }
            normalized.push(cat);
        }
        if normalized.len() < 2 {
            return Err(SchemaError::TooFewCategories { feature: name });
        }
        Ok(FeatureSpec {
            name,
            kind: FeatureKind::Categorical {
                categories: normalized,
            },
        })
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self.kind, FeatureKind::Numeric { .. })
    }

    pub fn categories(&self) -> Option<&[String]> {
        match &self.kind {
            FeatureKind::Categorical { categories } => Some(categories),
            FeatureKind::Numeric { .. } => None,
        }
    }
}

/// The classification problem handed to the builder: free-text context for
/// the prompts plus the feature schema the algorithm operates on.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub problem: String,
    pub instance_type: String,
    pub target_feature: String,
    pub target_labels: Vec<String>,
    pub features: Vec<FeatureSpec>,
}

impl TaskSpec {
    pub fn new(
        problem: &str,
        instance_type: &str,
        target_feature: &str,
        target_labels: &[&str],
        features: Vec<FeatureSpec>,
    ) -> Result<Self, SchemaError> {
        let target_feature = normalize_identifier(target_feature)?;
        let mut labels = Vec::with_capacity(target_labels.len());
        let mut seen = HashSet::new();
        for label in target_labels {
            let label = normalize_identifier(label)?;
            if !seen.insert(label.clone()) {
                return Err(SchemaError::DuplicateLabel { label });
            }
            labels.push(label);
        }
        if labels.len() < 2 {
            return Err(SchemaError::TooFewLabels {
                count: labels.len(),
            });
        }
        let mut names = HashSet::new();
        for f in &features {
            if !names.insert(f.name.clone()) {
                return Err(SchemaError::DuplicateFeature {
                    name: f.name.clone(),
                });
            }
        }
        Ok(TaskSpec {
            problem: problem.to_string(),
            instance_type: instance_type.to_string(),
            target_feature,
            target_labels: labels,
            features,
        })
    }

    pub fn feature(&self, name: &str) -> Option<&FeatureSpec> {
        self.features.iter().find(|f| f.name == name)
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.target_labels.iter().position(|l| l == label)
    }

    /// Loads the schema file format:
    /// `{problem, instance_type, target_feature, target_labels, features:
    /// [{name, type: "numeric"|"categorical", dtype?, lower?, upper?,
    /// categories?}]}`. Names, labels and categories are normalized.
    pub fn from_json(text: &str) -> Result<Self, SchemaError> {
        let doc: TaskDoc =
            serde_json::from_str(text).map_err(|e| SchemaError::Format(e.to_string()))?;
        let mut features = Vec::with_capacity(doc.features.len());
        for f in &doc.features {
            let spec = match f.kind.as_str() {
                "numeric" => {
                    let dtype = match f.dtype.as_deref() {
                        Some("integer") => NumericDtype::Integer,
                        Some("real") | None => NumericDtype::Real,
                        Some(other) => {
                            return Err(SchemaError::Format(format!(
                                "feature {:?}: unknown dtype {other:?}",
                                f.name
                            )))
                        }
                    };
                    FeatureSpec::numeric(&f.name, dtype, f.lower, f.upper)?
                }
                "categorical" => {
                    let cats = f.categories.as_ref().ok_or_else(|| {
                        SchemaError::Format(format!(
                            "categorical feature {:?} needs categories",
                            f.name
                        ))
                    })?;
                    let refs: Vec<&str> = cats.iter().map(String::as_str).collect();
                    FeatureSpec::categorical(&f.name, &refs)?
                }
                other => {
                    return Err(SchemaError::Format(format!(
                        "feature {:?}: unknown type {other:?} (expected numeric or categorical)",
                        f.name
                    )))
                }
            };
            features.push(spec);
        }
        let label_refs: Vec<&str> = doc.target_labels.iter().map(String::as_str).collect();
        TaskSpec::new(
            &doc.problem,
            &doc.instance_type,
            &doc.target_feature,
            &label_refs,
            features,
        )
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self, SchemaError> {
        TaskSpec::from_json(&std::fs::read_to_string(path)?)
    }

    /// Writes the same schema file format `from_json` reads.
    pub fn to_json(&self) -> String {
        let features = self
            .features
            .iter()
            .map(|f| match &f.kind {
                FeatureKind::Numeric {
                    dtype,
                    lower,
                    upper,
                } => FeatureDoc {
                    name: f.name.clone(),
                    kind: "numeric".to_string(),
                    dtype: Some(
                        match dtype {
                            NumericDtype::Integer => "integer",
                            NumericDtype::Real => "real",
                        }
                        .to_string(),
                    ),
                    lower: *lower,
                    upper: *upper,
                    categories: None,
                },
                FeatureKind::Categorical { categories } => FeatureDoc {
                    name: f.name.clone(),
                    kind: "categorical".to_string(),
                    dtype: None,
                    lower: None,
                    upper: None,
                    categories: Some(categories.clone()),
                },
            })
            .collect();
        let doc = TaskDoc {
            problem: self.problem.clone(),
            instance_type: self.instance_type.clone(),
            target_feature: self.target_feature.clone(),
            target_labels: self.target_labels.clone(),
            features,
        };
        serde_json::to_string_pretty(&doc).expect("schema serializes")
    }
}

#[derive(Serialize, Deserialize)]
struct TaskDoc {
    problem: String,
    instance_type: String,
    target_feature: String,
    target_labels: Vec<String>,
    features: Vec<FeatureDoc>,
}

#[derive(Serialize, Deserialize)]
struct FeatureDoc {
    name: String,
    #[serde(rename = "type")]
    kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    dtype: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lower: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    upper: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    categories: Option<Vec<String>>,
}

/// Per-label probabilities at a node. Keys are exactly the task's target
/// labels, in declared order; values sum to 1 after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityDistribution {
    labels: Vec<String>,
    probs: Vec<f64>,
}

impl ProbabilityDistribution {
    /// Normalizes non-negative weights into a distribution. All-zero weight
    /// vectors are rejected: they signal an upstream estimation failure.
    pub fn from_weights(labels: &[String], weights: &[f64]) -> Result<Self, DistributionError> {
        if labels.len() != weights.len() {
            return Err(DistributionError::LabelMismatch {
                expected: labels.len(),
                got: weights.len(),
            });
        }
        let mut sum = 0.0;
        for (label, &w) in labels.iter().zip(weights) {
            if !w.is_finite() || w < 0.0 {
                return Err(DistributionError::InvalidWeight {
                    label: label.clone(),
                    weight: w,
                });
            }
            sum += w;
        }
        if sum <= 0.0 {
            return Err(DistributionError::AllZero);
        }
        Ok(ProbabilityDistribution {
            labels: labels.to_vec(),
            probs: weights.iter().map(|w| w / sum).collect(),
        })
    }

    /// Accepts probabilities that already sum to 1 (within 1e-9) without
    /// renormalizing, so serialized values survive a round trip bit-exact.
    pub fn from_normalized(labels: &[String], probs: &[f64]) -> Result<Self, DistributionError> {
        if labels.len() != probs.len() {
            return Err(DistributionError::LabelMismatch {
                expected: labels.len(),
                got: probs.len(),
            });
        }
        let mut sum = 0.0;
        for (label, &p) in labels.iter().zip(probs) {
            if !p.is_finite() || !(0.0..=1.0).contains(&p) {
                return Err(DistributionError::InvalidWeight {
                    label: label.clone(),
                    weight: p,
                });
            }
            sum += p;
        }
        if (sum - 1.0).abs() > 1e-9 {
            return Err(DistributionError::NotNormalized { sum });
        }
        Ok(ProbabilityDistribution {
            labels: labels.to_vec(),
            probs: probs.to_vec(),
        })
    }

    pub fn uniform(labels: &[String]) -> Self {
        let p = 1.0 / labels.len() as f64;
        ProbabilityDistribution {
            labels: labels.to_vec(),
            probs: vec![p; labels.len()],
        }
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn get(&self, label: &str) -> Option<f64> {
        self.labels
            .iter()
            .position(|l| l == label)
            .map(|i| self.probs[i])
    }

    /// Highest-probability entry; ties go to the earlier label.
    pub fn max_entry(&self) -> (&str, f64) {
        let mut best = 0;
        for i in 1..self.probs.len() {
            if self.probs[i] > self.probs[best] {
                best = i;
            }
        }
        (&self.labels[best], self.probs[best])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.labels
            .iter()
            .map(String::as_str)
            .zip(self.probs.iter().copied())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// One path condition accumulated while descending the tree.
#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub feature: String,
    pub body: ConstraintBody,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConstraintBody {
    NumericUpper { threshold: f64, inclusive: bool },
    NumericLower { threshold: f64, inclusive: bool },
    CategoricalSubset { allowed: Vec<String> },
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.body {
            ConstraintBody::NumericUpper {
                threshold,
                inclusive,
            } => {
                write!(
                    f,
                    "{} {} {}",
                    self.feature,
                    if *inclusive { "<=" } else { "<" },
                    threshold
                )
            }
            ConstraintBody::NumericLower {
                threshold,
                inclusive,
            } => {
                write!(
                    f,
                    "{} {} {}",
                    self.feature,
                    if *inclusive { ">=" } else { ">" },
                    threshold
                )
            }
            ConstraintBody::CategoricalSubset { allowed } => {
                write!(f, "{} in {{{}}}", self.feature, allowed.join(", "))
            }
        }
    }
}

/// Which side of a numeric split a branch narrows to. Left is inclusive
/// (`<= threshold`), right is exclusive (`> threshold`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitSide {
    Left,
    Right,
}

/// Effective numeric range of a feature under a context: bounds plus
/// whether each end is attainable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectiveInterval {
    pub lower: f64,
    pub lower_inclusive: bool,
    pub upper: f64,
    pub upper_inclusive: bool,
}

impl EffectiveInterval {
    /// Non-empty as a set of reals.
    pub fn is_satisfiable(&self) -> bool {
        self.lower < self.upper
            || (self.lower == self.upper && self.lower_inclusive && self.upper_inclusive)
    }

    /// Whether the open interior (lower, upper) contains an integer.
    pub fn interior_contains_integer(&self) -> bool {
        if self.lower == f64::NEG_INFINITY || self.upper == f64::INFINITY {
            return self.lower < self.upper;
        }
        let mut k = self.lower.floor() + 1.0;
        if k <= self.lower {
            k += 1.0;
        }
        k < self.upper
    }
}

/// The path conditions leading to a node, the parent's label distribution
/// and the node's depth — everything a prompt needs to situate a query.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchContext {
    constraints: Vec<Constraint>,
    pub previous_probabilities: ProbabilityDistribution,
    pub depth: u32,
}

impl BranchContext {
    pub fn root(prior: ProbabilityDistribution) -> Self {
        BranchContext {
            constraints: Vec::new(),
            previous_probabilities: prior,
            depth: 0,
        }
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    /// Effective numeric interval for `feature` under this context,
    /// starting from its declared bounds (closed at each declared end).
    pub fn effective_interval(&self, task: &TaskSpec, feature: &str) -> Option<EffectiveInterval> {
        let spec = task.feature(feature)?;
        let (lower, upper) = match spec.kind {
            FeatureKind::Numeric { lower, upper, .. } => (lower, upper),
            FeatureKind::Categorical { .. } => return None,
        };
        let mut iv = EffectiveInterval {
            lower: lower.unwrap_or(f64::NEG_INFINITY),
            lower_inclusive: true,
            upper: upper.unwrap_or(f64::INFINITY),
            upper_inclusive: true,
        };
        for c in &self.constraints {
            if c.feature != feature {
                continue;
            }
            match &c.body {
                ConstraintBody::NumericUpper {
                    threshold,
                    inclusive,
                } => {
                    if *threshold < iv.upper || (*threshold == iv.upper && !inclusive) {
                        iv.upper = *threshold;
                        iv.upper_inclusive = *inclusive;
                    }
                }
                ConstraintBody::NumericLower {
                    threshold,
                    inclusive,
                } => {
                    if *threshold > iv.lower || (*threshold == iv.lower && !inclusive) {
                        iv.lower = *threshold;
                        iv.lower_inclusive = *inclusive;
                    }
                }
                ConstraintBody::CategoricalSubset { .. } => {}
            }
        }
        Some(iv)
    }

    /// Categories of `feature` still allowed under this context, in
    /// declared order.
    pub fn allowed_categories(&self, task: &TaskSpec, feature: &str) -> Option<Vec<String>> {
        let spec = task.feature(feature)?;
        let declared = spec.categories()?;
        let mut allowed: Vec<String> = declared.to_vec();
        for c in &self.constraints {
            if c.feature != feature {
                continue;
            }
            if let ConstraintBody::CategoricalSubset { allowed: subset } = &c.body {
                allowed.retain(|cat| subset.contains(cat));
            }
        }
        Some(allowed)
    }

    /// Appends a numeric bound for one side of a split. The threshold must
    /// be strictly inside the feature's effective interval.
    pub fn narrow_numeric(
        &self,
        task: &TaskSpec,
        feature: &str,
        threshold: f64,
        side: SplitSide,
    ) -> Result<BranchContext, ContextError> {
        let spec = task
            .feature(feature)
            .ok_or_else(|| ContextError::UnknownFeature {
                feature: feature.to_string(),
            })?;
        if !spec.is_numeric() {
            return Err(ContextError::NotNumeric {
                feature: feature.to_string(),
            });
        }
        let iv = self
            .effective_interval(task, feature)
            .expect("numeric feature has an interval");
        if !threshold.is_finite() || threshold <= iv.lower || threshold >= iv.upper {
            return Err(ContextError::ThresholdOutOfRange {
                feature: feature.to_string(),
                threshold,
                lower: iv.lower,
                upper: iv.upper,
            });
        }
        let body = match side {
            SplitSide::Left => ConstraintBody::NumericUpper {
                threshold,
                inclusive: true,
            },
            SplitSide::Right => ConstraintBody::NumericLower {
                threshold,
                inclusive: false,
            },
        };
        let mut next = self.clone();
        next.constraints.push(Constraint {
            feature: feature.to_string(),
            body,
        });
        Ok(next)
    }

    /// Replaces the allowed category set of `feature` with `subset`, which
    /// must be a non-empty subset of the currently allowed categories.
    /// Order of other constraints is preserved.
    pub fn narrow_categorical(
        &self,
        task: &TaskSpec,
        feature: &str,
        subset: &[String],
    ) -> Result<BranchContext, ContextError> {
        let allowed =
            self.allowed_categories(task, feature)
                .ok_or_else(|| ContextError::NotCategorical {
                    feature: feature.to_string(),
                })?;
        if subset.is_empty() {
            return Err(ContextError::EmptySubset {
                feature: feature.to_string(),
            });
        }
        for cat in subset {
            if !allowed.contains(cat) {
                return Err(ContextError::NotASubset {
                    feature: feature.to_string(),
                    category: cat.clone(),
                });
            }
        }
        // Keep declared order regardless of how the caller ordered the subset.
        let ordered: Vec<String> = allowed
            .iter()
            .filter(|c| subset.contains(c))
            .cloned()
            .collect();
        let body = ConstraintBody::CategoricalSubset { allowed: ordered };
        let mut next = self.clone();
        let existing = next.constraints.iter().position(|c| {
            c.feature == feature && matches!(c.body, ConstraintBody::CategoricalSubset { .. })
        });
        match existing {
            Some(i) => next.constraints[i].body = body,
            None => next.constraints.push(Constraint {
                feature: feature.to_string(),
                body,
            }),
        }
        Ok(next)
    }

    /// Context for a child node: same constraints, new distribution, one
    /// level deeper.
    pub fn descend(mut self, probabilities: ProbabilityDistribution) -> BranchContext {
        self.previous_probabilities = probabilities;
        self.depth += 1;
        self
    }

    /// Features still worth splitting: categorical features with at least
    /// two allowed categories, numeric features whose effective interior
    /// still admits a threshold (and, for integers, contains an integer).
    pub fn active_features<'t>(&self, task: &'t TaskSpec) -> Vec<&'t FeatureSpec> {
        task.features
            .iter()
            .filter(|f| match &f.kind {
                FeatureKind::Categorical { .. } => self
                    .allowed_categories(task, &f.name)
                    .is_some_and(|a| a.len() >= 2),
                FeatureKind::Numeric { dtype, .. } => {
                    let iv = self
                        .effective_interval(task, &f.name)
                        .expect("numeric feature has an interval");
                    if iv.lower >= iv.upper {
                        return false;
                    }
                    match dtype {
                        NumericDtype::Integer => iv.interior_contains_integer(),
                        NumericDtype::Real => true,
                    }
                }
            })
            .collect()
    }
}

/// Human-readable conjunction of a context's constraints, used verbatim as
/// the `{branch_context}` prompt input.
pub fn render_context(ctx: &BranchContext) -> String {
    if ctx.constraints().is_empty() {
        return "no constraints".to_string();
    }
    ctx.constraints()
        .iter()
        .map(Constraint::to_string)
        .collect::<Vec<_>>()
        .join(" AND ")
}

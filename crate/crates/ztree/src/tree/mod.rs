//! The built decision tree as a value: routing rows to leaves, canonical
//! JSON serialization and text/DOT rendering.

mod json;
mod render;

pub use json::{deserialize, serialize, FORMAT_VERSION};
pub use render::{render, RenderStyle};

use std::collections::BTreeMap;

use crate::builder::BuildConfig;
use crate::error::PredictError;
use crate::schema::{FeatureKind, ProbabilityDistribution, TaskSpec};

#[derive(Debug, Clone, PartialEq)]
pub enum Split {
    /// Left branch takes `value <= threshold`.
    Threshold { value: f64 },
    /// Left branch takes `value in group1`; the two groups partition the
    /// categories allowed at this node.
    Bipartition {
        group1: Vec<String>,
        group2: Vec<String>,
    },
}

impl Split {
    /// Condition text of the left branch, e.g. `glucose <= 140`.
    pub fn left_condition(&self, feature: &str) -> String {
        match self {
            Split::Threshold { value } => format!("{feature} <= {value}"),
            Split::Bipartition { group1, .. } => format!("{feature} in {{{}}}", group1.join(", ")),
        }
    }

    pub fn right_condition(&self, feature: &str) -> String {
        match self {
            Split::Threshold { value } => format!("{feature} > {value}"),
            Split::Bipartition { group2, .. } => format!("{feature} in {{{}}}", group2.join(", ")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Internal {
        feature: String,
        split: Split,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
        /// Label distribution estimated for the region this node covers.
        node_probs: ProbabilityDistribution,
        /// Harmonic-mean Gini of the chosen split (weighted Gini for the
        /// CART baseline).
        score: f64,
    },
    Leaf {
        label: String,
        probs: ProbabilityDistribution,
    },
}

impl TreeNode {
    pub fn depth(&self) -> u32 {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Internal { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Internal { left, right, .. } => left.leaf_count() + right.leaf_count(),
        }
    }

    pub fn internal_count(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Internal { left, right, .. } => {
                1 + left.internal_count() + right.internal_count()
            }
        }
    }

    fn probs(&self) -> &ProbabilityDistribution {
        match self {
            TreeNode::Leaf { probs, .. } => probs,
            TreeNode::Internal { node_probs, .. } => node_probs,
        }
    }
}

/// Build provenance stored alongside the tree. `built_at_unix` is only
/// recorded for non-deterministic backends so that oracle and replay
/// builds stay byte-identical across runs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BuildMeta {
    pub advisor_kind: String,
    pub model_name: Option<String>,
    pub total_completions: u64,
    pub cache_hits: u64,
    pub built_at_unix: Option<u64>,
    pub seed: Option<u64>,
    /// Leaves formed by depth or feature exhaustion while still below the
    /// confidence threshold.
    pub low_confidence_leaves: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    pub task: TaskSpec,
    pub root: TreeNode,
    pub config: BuildConfig,
    pub meta: BuildMeta,
}

impl DecisionTree {
    pub fn depth(&self) -> u32 {
        self.root.depth()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RowValue {
    Number(f64),
    Category(String),
}

/// One data row: normalized feature name to value. Missing features are
/// simply absent.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Row {
    values: BTreeMap<String, RowValue>,
}

impl Row {
    pub fn new() -> Self {
        Row::default()
    }

    pub fn set(&mut self, feature: &str, value: RowValue) {
        self.values.insert(feature.to_string(), value);
    }

    pub fn get(&self, feature: &str) -> Option<&RowValue> {
        self.values.get(feature)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &RowValue)> {
        self.values.iter()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MissingPolicy {
    /// A missing value makes the row unroutable.
    #[default]
    Error,
    /// Follow the child whose distribution is more confident.
    MajorityBranch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathStep {
    pub feature: String,
    pub condition: String,
    pub took_left: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: String,
    pub probs: ProbabilityDistribution,
    pub path: Vec<PathStep>,
}

/// Routes a row from the root to a leaf. Numeric comparisons send
/// `value <= threshold` left; category membership in `group1` sends left.
/// A value outside the feature's declared categories is always an error.
pub fn predict(
    tree: &DecisionTree,
    row: &Row,
    policy: MissingPolicy,
) -> Result<Prediction, PredictError> {
    let mut node = &tree.root;
    let mut path = Vec::new();
    loop {
        match node {
            TreeNode::Leaf { label, probs } => {
                return Ok(Prediction {
                    label: label.clone(),
                    probs: probs.clone(),
                    path,
                });
            }
            TreeNode::Internal {
                feature,
                split,
                left,
                right,
                ..
            } => {
                let go_left = match row.get(feature) {
                    None => match policy {
                        MissingPolicy::Error => {
                            return Err(PredictError::MissingValue {
                                feature: feature.clone(),
                            })
                        }
                        MissingPolicy::MajorityBranch => {
                            left.probs().max_entry().1 >= right.probs().max_entry().1
                        }
                    },
                    Some(RowValue::Number(v)) => match split {
                        Split::Threshold { value } => v <= value,
                        Split::Bipartition { .. } => {
                            return Err(PredictError::TypeMismatch {
                                feature: feature.clone(),
                            })
                        }
                    },
                    Some(RowValue::Category(c)) => match split {
                        Split::Bipartition { group1, group2 } => {
                            let declared = tree.task.feature(feature).and_then(|f| match &f.kind {
                                FeatureKind::Categorical { categories } => Some(categories),
                                FeatureKind::Numeric { .. } => None,
                            });
                            let known = declared.is_some_and(|cats| cats.contains(c));
                            if !known || !(group1.contains(c) || group2.contains(c)) {
                                return Err(PredictError::UnknownCategory {
                                    feature: feature.clone(),
                                    value: c.clone(),
                                });
                            }
                            group1.contains(c)
                        }
                        Split::Threshold { .. } => {
                            return Err(PredictError::TypeMismatch {
                                feature: feature.clone(),
                            })
                        }
                    },
                };
                let condition = if go_left {
                    split.left_condition(feature)
                } else {
                    split.right_condition(feature)
                };
                path.push(PathStep {
                    feature: feature.clone(),
                    condition,
                    took_left: go_left,
                });
                node = if go_left { left } else { right };
            }
        }
    }
}

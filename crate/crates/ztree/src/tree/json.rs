//! Canonical tree JSON: object keys in sorted order, floats printed with
//! 17 significant digits so values survive a round trip bit-exactly, and
//! the whole document a pure function of the tree. Deserialization
//! validates the structural invariants before handing a tree back.

use std::collections::BTreeMap;

use serde::Deserialize;

use crate::builder::BuildConfig;
use crate::error::TreeFormatError;
use crate::schema::{FeatureKind, FeatureSpec, NumericDtype, ProbabilityDistribution, TaskSpec};
use crate::tree::{BuildMeta, DecisionTree, Split, TreeNode};

pub const FORMAT_VERSION: i64 = 1;

// ---------------------------------------------------------------------------
// Writing

struct Writer {
    out: String,
}

impl Writer {
    fn string(&mut self, s: &str) {
        self.out.push('"');
        for c in s.chars() {
            match c {
                '"' => self.out.push_str("\\\""),
                '\\' => self.out.push_str("\\\\"),
                '\n' => self.out.push_str("\\n"),
                '\r' => self.out.push_str("\\r"),
                '\t' => self.out.push_str("\\t"),
                c if (c as u32) < 0x20 => {
                    self.out.push_str(&format!("\\u{:04x}", c as u32));
                }
                c => self.out.push(c),
            }
        }
        self.out.push('"');
    }

    fn float(&mut self, v: f64) {
        // 17 significant digits round-trip any finite f64.
        self.out.push_str(&format!("{v:.16e}"));
    }

    fn uint(&mut self, v: u64) {
        self.out.push_str(&v.to_string());
    }

    fn opt_uint(&mut self, v: Option<u64>) {
        match v {
            Some(v) => self.uint(v),
            None => self.out.push_str("null"),
        }
    }

    fn opt_float(&mut self, v: Option<f64>) {
        match v {
            Some(v) => self.float(v),
            None => self.out.push_str("null"),
        }
    }

    fn string_list(&mut self, items: &[String]) {
        self.out.push('[');
        for (i, item) in items.iter().enumerate() {
            if i > 0 {
                self.out.push(',');
            }
            self.string(item);
        }
        self.out.push(']');
    }

    /// Probabilities as an object keyed by label, keys sorted.
    fn probs(&mut self, dist: &ProbabilityDistribution) {
        let sorted: BTreeMap<&str, f64> = dist.iter().collect();
        self.out.push('{');
        for (i, (label, p)) in sorted.iter().enumerate() {
            if i > 0 {
                self.out.push(',');
            }
            self.string(label);
            self.out.push(':');
            self.float(*p);
        }
        self.out.push('}');
    }

    fn feature(&mut self, f: &FeatureSpec) {
        self.out.push('{');
        match &f.kind {
            FeatureKind::Categorical { categories } => {
                self.out.push_str("\"categories\":");
                self.string_list(categories);
                self.out.push_str(",\"name\":");
                self.string(&f.name);
                self.out.push_str(",\"type\":\"categorical\"");
            }
            FeatureKind::Numeric {
                dtype,
                lower,
                upper,
            } => {
                self.out.push_str("\"dtype\":");
                self.string(match dtype {
                    NumericDtype::Integer => "integer",
                    NumericDtype::Real => "real",
                });
                self.out.push_str(",\"lower\":");
                self.opt_float(*lower);
                self.out.push_str(",\"name\":");
                self.string(&f.name);
                self.out.push_str(",\"type\":\"numeric\",\"upper\":");
                self.opt_float(*upper);
            }
        }
        self.out.push('}');
    }

    fn node(&mut self, node: &TreeNode) {
        self.out.push('{');
        match node {
            TreeNode::Leaf { label, probs } => {
                self.out.push_str("\"kind\":\"leaf\",\"label\":");
                self.string(label);
                self.out.push_str(",\"probs\":");
                self.probs(probs);
            }
            TreeNode::Internal {
                feature,
                split,
                left,
                right,
                node_probs,
                score,
            } => {
                self.out.push_str("\"feature\":");
                self.string(feature);
                self.out.push_str(",\"kind\":\"internal\",\"left\":");
                self.node(left);
                self.out.push_str(",\"node_probs\":");
                self.probs(node_probs);
                self.out.push_str(",\"right\":");
                self.node(right);
                self.out.push_str(",\"score\":");
                self.float(*score);
                self.out.push_str(",\"split\":{");
                match split {
                    Split::Threshold { value } => {
                        self.out.push_str("\"type\":\"threshold\",\"value\":");
                        self.float(*value);
                    }
                    Split::Bipartition { group1, group2 } => {
                        self.out.push_str("\"group1\":");
                        self.string_list(group1);
                        self.out.push_str(",\"group2\":");
                        self.string_list(group2);
                        self.out.push_str(",\"type\":\"bipartition\"");
                    }
                }
                self.out.push('}');
            }
        }
        self.out.push('}');
    }
}

/// Canonical JSON for a tree. Byte-identical for equal trees.
pub fn serialize(tree: &DecisionTree) -> String {
    let mut w = Writer {
        out: String::with_capacity(4096),
    };
    w.out.push_str("{\"config\":{");
    w.out.push_str("\"concurrency\":");
    w.uint(tree.config.concurrency as u64);
    w.out.push_str(",\"leaf_prob_threshold\":");
    w.float(tree.config.leaf_prob_threshold);
    w.out.push_str(",\"max_depth\":");
    w.uint(tree.config.max_depth as u64);
    w.out.push_str(",\"retry_limit\":");
    w.uint(tree.config.retry_limit as u64);
    w.out.push_str("},\"format_version\":");
    w.out.push_str(&FORMAT_VERSION.to_string());
    w.out.push_str(",\"meta\":{");
    w.out.push_str("\"advisor_kind\":");
    w.string(&tree.meta.advisor_kind);
    w.out.push_str(",\"built_at_unix\":");
    w.opt_uint(tree.meta.built_at_unix);
    w.out.push_str(",\"cache_hits\":");
    w.uint(tree.meta.cache_hits);
    w.out.push_str(",\"low_confidence_leaves\":");
    w.uint(tree.meta.low_confidence_leaves);
    w.out.push_str(",\"model_name\":");
    match &tree.meta.model_name {
        Some(name) => w.string(name),
        None => w.out.push_str("null"),
    }
    w.out.push_str(",\"seed\":");
    w.opt_uint(tree.meta.seed);
    w.out.push_str(",\"total_completions\":");
    w.uint(tree.meta.total_completions);
    w.out.push_str("},\"root\":");
    w.node(&tree.root);
    w.out.push_str(",\"task\":{\"features\":[");
    for (i, f) in tree.task.features.iter().enumerate() {
        if i > 0 {
            w.out.push(',');
        }
        w.feature(f);
    }
    w.out.push_str("],\"instance_type\":");
    w.string(&tree.task.instance_type);
    w.out.push_str(",\"problem\":");
    w.string(&tree.task.problem);
    w.out.push_str(",\"target_feature\":");
    w.string(&tree.task.target_feature);
    w.out.push_str(",\"target_labels\":");
    w.string_list(&tree.task.target_labels);
    w.out.push_str("}}\n");
    w.out
}

// ---------------------------------------------------------------------------
// Reading

#[derive(Deserialize)]
struct VersionProbe {
    format_version: Option<i64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Doc {
    config: ConfigDoc,
    #[allow(dead_code)]
    format_version: i64,
    meta: MetaDoc,
    root: NodeDoc,
    task: TaskDoc,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigDoc {
    concurrency: usize,
    leaf_prob_threshold: f64,
    max_depth: u32,
    retry_limit: u32,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MetaDoc {
    advisor_kind: String,
    built_at_unix: Option<u64>,
    cache_hits: u64,
    low_confidence_leaves: u64,
    model_name: Option<String>,
    seed: Option<u64>,
    total_completions: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TaskDoc {
    features: Vec<FeatureDoc>,
    instance_type: String,
    problem: String,
    target_feature: String,
    target_labels: Vec<String>,
}

#[derive(Deserialize)]
struct FeatureDoc {
    name: String,
    #[serde(rename = "type")]
    kind: String,
    dtype: Option<String>,
    lower: Option<f64>,
    upper: Option<f64>,
    categories: Option<Vec<String>>,
}

#[derive(Deserialize)]
struct NodeDoc {
    kind: String,
    label: Option<String>,
    probs: Option<BTreeMap<String, f64>>,
    feature: Option<String>,
    split: Option<SplitDoc>,
    left: Option<Box<NodeDoc>>,
    right: Option<Box<NodeDoc>>,
    node_probs: Option<BTreeMap<String, f64>>,
    score: Option<f64>,
}

#[derive(Deserialize)]
struct SplitDoc {
    #[serde(rename = "type")]
    kind: String,
    value: Option<f64>,
    group1: Option<Vec<String>>,
    group2: Option<Vec<String>>,
}

fn fail(location: &str, reason: impl Into<String>) -> TreeFormatError {
    TreeFormatError::Format {
        location: location.to_string(),
        reason: reason.into(),
    }
}

fn dist_from_map(
    map: &BTreeMap<String, f64>,
    task: &TaskSpec,
    location: &str,
) -> Result<ProbabilityDistribution, TreeFormatError> {
    let mut probs = Vec::with_capacity(task.target_labels.len());
    for label in &task.target_labels {
        match map.get(label) {
            Some(&p) if (0.0..=1.0).contains(&p) => probs.push(p),
            Some(&p) => return Err(fail(location, format!("probability {p} out of [0,1]"))),
            None => {
                return Err(fail(
                    location,
                    format!("missing probability for label {label:?}"),
                ))
            }
        }
    }
    if map.len() != task.target_labels.len() {
        return Err(fail(
            location,
            "probabilities carry labels outside the task",
        ));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(fail(
            location,
            format!("probabilities sum to {sum}, expected 1"),
        ));
    }
    ProbabilityDistribution::from_normalized(&task.target_labels, &probs)
        .map_err(|e| fail(location, e.to_string()))
}

fn node_from_doc(
    doc: &NodeDoc,
    task: &TaskSpec,
    location: &str,
) -> Result<TreeNode, TreeFormatError> {
    match doc.kind.as_str() {
        "leaf" => {
            let label = doc
                .label
                .as_ref()
                .ok_or_else(|| fail(location, "leaf without label"))?;
            let probs_map = doc
                .probs
                .as_ref()
                .ok_or_else(|| fail(location, "leaf without probs"))?;
            let probs = dist_from_map(probs_map, task, location)?;
            if task.label_index(label).is_none() {
                return Err(fail(
                    location,
                    format!("label {label:?} is not a target label"),
                ));
            }
            if probs.max_entry().0 != label {
                return Err(fail(
                    location,
                    "leaf label is not the argmax of its distribution",
                ));
            }
            Ok(TreeNode::Leaf {
                label: label.clone(),
                probs,
            })
        }
        "internal" => {
            let feature_name = doc
                .feature
                .as_ref()
                .ok_or_else(|| fail(location, "internal node without feature"))?;
            let feature = task
                .feature(feature_name)
                .ok_or_else(|| fail(location, format!("unknown feature {feature_name:?}")))?;
            let split_doc = doc
                .split
                .as_ref()
                .ok_or_else(|| fail(location, "internal node without split"))?;
            let split = match split_doc.kind.as_str() {
                "threshold" => {
                    if !feature.is_numeric() {
                        return Err(fail(location, "threshold split on a categorical feature"));
                    }
                    let value = split_doc
                        .value
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| fail(location, "threshold split without finite value"))?;
                    Split::Threshold { value }
                }
                "bipartition" => {
                    let categories = feature
                        .categories()
                        .ok_or_else(|| fail(location, "bipartition split on a numeric feature"))?;
                    let group1 = split_doc
                        .group1
                        .clone()
                        .ok_or_else(|| fail(location, "bipartition without group1"))?;
                    let group2 = split_doc
                        .group2
                        .clone()
                        .ok_or_else(|| fail(location, "bipartition without group2"))?;
                    for cat in group1.iter().chain(&group2) {
                        if !categories.contains(cat) {
                            return Err(fail(
                                location,
                                format!("category {cat:?} is not declared"),
                            ));
                        }
                    }
                    if group1.is_empty() || group2.is_empty() {
                        return Err(fail(location, "bipartition group is empty"));
                    }
                    if group1.iter().any(|c| group2.contains(c)) {
                        return Err(fail(location, "bipartition groups overlap"));
                    }
                    Split::Bipartition { group1, group2 }
                }
                other => return Err(fail(location, format!("unknown split type {other:?}"))),
            };
            let node_probs_map = doc
                .node_probs
                .as_ref()
                .ok_or_else(|| fail(location, "internal node without node_probs"))?;
            let node_probs = dist_from_map(node_probs_map, task, location)?;
            let score = doc
                .score
                .filter(|s| s.is_finite() && *s >= 0.0)
                .ok_or_else(|| {
                    fail(
                        location,
                        "internal node without a finite non-negative score",
                    )
                })?;
            let left_doc = doc
                .left
                .as_ref()
                .ok_or_else(|| fail(location, "internal node without left"))?;
            let right_doc = doc
                .right
                .as_ref()
                .ok_or_else(|| fail(location, "internal node without right"))?;
            let left = node_from_doc(left_doc, task, &format!("{location}.left"))?;
            let right = node_from_doc(right_doc, task, &format!("{location}.right"))?;
            Ok(TreeNode::Internal {
                feature: feature_name.clone(),
                split,
                left: Box::new(left),
                right: Box::new(right),
                node_probs,
                score,
            })
        }
        other => Err(fail(location, format!("unknown node kind {other:?}"))),
    }
}

fn task_from_doc(doc: &TaskDoc) -> Result<TaskSpec, TreeFormatError> {
    let mut features = Vec::with_capacity(doc.features.len());
    for f in &doc.features {
        let location = format!("task.features[{}]", f.name);
        let spec = match f.kind.as_str() {
            "numeric" => {
                let dtype = match f.dtype.as_deref() {
                    Some("integer") => NumericDtype::Integer,
                    Some("real") | None => NumericDtype::Real,
                    Some(other) => return Err(fail(&location, format!("unknown dtype {other:?}"))),
                };
                FeatureSpec::numeric(&f.name, dtype, f.lower, f.upper)
            }
            "categorical" => {
                let cats = f
                    .categories
                    .as_ref()
                    .ok_or_else(|| fail(&location, "categorical feature without categories"))?;
                let refs: Vec<&str> = cats.iter().map(String::as_str).collect();
                FeatureSpec::categorical(&f.name, &refs)
            }
            other => return Err(fail(&location, format!("unknown feature type {other:?}"))),
        }
        .map_err(|e| fail(&location, e.to_string()))?;
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
    .map_err(|e| fail("task", e.to_string()))
}

/// Parses and validates a canonical tree document.
pub fn deserialize(text: &str) -> Result<DecisionTree, TreeFormatError> {
    let probe: VersionProbe =
        serde_json::from_str(text).map_err(|e| fail("document", e.to_string()))?;
    match probe.format_version {
        Some(v) if v == FORMAT_VERSION => {}
        Some(v) => {
            return Err(TreeFormatError::VersionMismatch {
                found: v,
                expected: FORMAT_VERSION,
            })
        }
        None => return Err(fail("document", "missing format_version")),
    }
    let doc: Doc = serde_json::from_str(text).map_err(|e| fail("document", e.to_string()))?;
    let task = task_from_doc(&doc.task)?;
    let root = node_from_doc(&doc.root, &task, "root")?;
    let config = BuildConfig {
        max_depth: doc.config.max_depth,
        leaf_prob_threshold: doc.config.leaf_prob_threshold,
        retry_limit: doc.config.retry_limit,
        concurrency: doc.config.concurrency,
    };
    if root.depth() > config.max_depth {
        return Err(fail(
            "root",
            format!(
                "tree depth {} exceeds config.max_depth {}",
                root.depth(),
                config.max_depth
            ),
        ));
    }
    Ok(DecisionTree {
        task,
        root,
        config,
        meta: BuildMeta {
            advisor_kind: doc.meta.advisor_kind,
            model_name: doc.meta.model_name,
            total_completions: doc.meta.total_completions,
            cache_hits: doc.meta.cache_hits,
            built_at_unix: doc.meta.built_at_unix,
            seed: doc.meta.seed,
            low_confidence_leaves: doc.meta.low_confidence_leaves,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::tests::sample_tree;

    #[test]
    fn round_trip_is_identity() {
        let tree = sample_tree();
        let text = serialize(&tree);
        let back = deserialize(&text).unwrap();
        assert_eq!(back, tree);
    }

    #[test]
    fn serialization_is_canonical() {
        let tree = sample_tree();
        assert_eq!(serialize(&tree), serialize(&tree));
        let round = deserialize(&serialize(&tree)).unwrap();
        assert_eq!(serialize(&round), serialize(&tree));
    }

    #[test]
    fn truncated_document_is_a_format_error() {
        let tree = sample_tree();
        let text = serialize(&tree);
        let cut = &text[..text.len() / 2];
        assert!(matches!(
            deserialize(cut),
            Err(TreeFormatError::Format { .. })
        ));
    }

    #[test]
    fn unknown_version_rejected() {
        let tree = sample_tree();
        let text = serialize(&tree).replace("\"format_version\":1", "\"format_version\":9");
        assert!(matches!(
            deserialize(&text),
            Err(TreeFormatError::VersionMismatch {
                found: 9,
                expected: 1
            })
        ));
    }

    #[test]
    fn corrupt_leaf_label_rejected() {
        let tree = sample_tree();
        // Swap a leaf label away from its argmax.
        let text = serialize(&tree).replacen("\"label\":\"no\"", "\"label\":\"yes\"", 1);
        assert!(matches!(
            deserialize(&text),
            Err(TreeFormatError::Format { .. })
        ));
    }

    mod generated {
        use super::*;
        use crate::schema::SplitSide;
        use crate::schema::{BranchContext, FeatureSpec, NumericDtype};
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;

        fn gen_task() -> TaskSpec {
            TaskSpec::new(
                "generated",
                "item",
                "y",
                &["a", "b", "c"],
                vec![
                    FeatureSpec::numeric("x1", NumericDtype::Real, Some(-50.0), Some(50.0))
                        .unwrap(),
                    FeatureSpec::numeric("x2", NumericDtype::Integer, Some(0.0), Some(1000.0))
                        .unwrap(),
                    FeatureSpec::categorical("c1", &["p", "q", "r", "s"]).unwrap(),
                ],
            )
            .unwrap()
        }

        fn gen_dist(rng: &mut ChaCha8Rng, task: &TaskSpec) -> ProbabilityDistribution {
            let ws: Vec<f64> = (0..task.target_labels.len())
                .map(|_| rng.random_range(0.01..1.0))
                .collect();
            ProbabilityDistribution::from_weights(&task.target_labels, &ws).unwrap()
        }

        /// Grows a random valid tree by narrowing a real context, so all
        /// structural invariants hold by construction.
        fn gen_node(
            rng: &mut ChaCha8Rng,
            task: &TaskSpec,
            ctx: &BranchContext,
            depth: u32,
            max_depth: u32,
        ) -> TreeNode {
            let probs = gen_dist(rng, task);
            let active = ctx.active_features(task);
            if depth >= max_depth || active.is_empty() || rng.random::<f64>() < 0.3 {
                let (label, _) = probs.max_entry();
                let label = label.to_string();
                return TreeNode::Leaf { label, probs };
            }
            let feature = active[rng.random_range(0..active.len())].clone();
            let (split, lc, rc) = if feature.is_numeric() {
                let iv = ctx.effective_interval(task, &feature.name).unwrap();
                let t = iv.lower + (iv.upper - iv.lower) * rng.random_range(0.2..0.8);
                (
                    Split::Threshold { value: t },
                    ctx.narrow_numeric(task, &feature.name, t, SplitSide::Left)
                        .unwrap(),
                    ctx.narrow_numeric(task, &feature.name, t, SplitSide::Right)
                        .unwrap(),
                )
            } else {
                let allowed = ctx.allowed_categories(task, &feature.name).unwrap();
                let cut = rng.random_range(1..allowed.len());
                let group1: Vec<String> = allowed[..cut].to_vec();
                let group2: Vec<String> = allowed[cut..].to_vec();
                (
                    Split::Bipartition {
                        group1: group1.clone(),
                        group2: group2.clone(),
                    },
                    ctx.narrow_categorical(task, &feature.name, &group1)
                        .unwrap(),
                    ctx.narrow_categorical(task, &feature.name, &group2)
                        .unwrap(),
                )
            };
            let left = gen_node(rng, task, &lc, depth + 1, max_depth);
            let right = gen_node(rng, task, &rc, depth + 1, max_depth);
            TreeNode::Internal {
                feature: feature.name.clone(),
                split,
                left: Box::new(left),
                right: Box::new(right),
                node_probs: probs,
                score: rng.random_range(0.0..0.5),
            }
        }

        #[test]
        fn random_trees_round_trip() {
            let task = gen_task();
            for seed in 0..100u64 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let ctx =
                    BranchContext::root(ProbabilityDistribution::uniform(&task.target_labels));
                let root = gen_node(&mut rng, &task, &ctx, 0, 5);
                let tree = DecisionTree {
                    task: task.clone(),
                    root,
                    config: BuildConfig {
                        max_depth: 5,
                        ..BuildConfig::default()
                    },
                    meta: crate::tree::BuildMeta {
                        advisor_kind: "generated".to_string(),
                        seed: Some(seed),
                        ..Default::default()
                    },
                };
                let text = serialize(&tree);
                let back = deserialize(&text).unwrap_or_else(|e| panic!("seed {seed}: {e}"));
                assert_eq!(back, tree, "seed {seed}: round trip changed the tree");
                assert_eq!(
                    serialize(&back),
                    text,
                    "seed {seed}: serialization not canonical"
                );
            }
        }
    }
}

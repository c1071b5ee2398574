//! Classical greedy CART: empirical class counts, instance-weighted Gini
//! aggregation, midpoint thresholds for numeric features and bipartition
//! search for categorical ones. Emits the same `DecisionTree` type as the
//! zero-shot builder so prediction, rendering and evaluation are shared.
//!
//! Matching the usual library behavior, a zero-gain split is still taken
//! when the node is impure and a valid split exists; recursion stops on
//! purity, the depth cap, node size < 2, or when no feature admits a
//! split that separates the rows.

use crate::builder::BuildConfig;
use crate::error::EvalError;
use crate::eval::Dataset;
use crate::impurity::weighted_combine;
use crate::schema::{BranchContext, FeatureKind, ProbabilityDistribution, SplitSide, TaskSpec};
use crate::tree::{BuildMeta, DecisionTree, RowValue, Split, TreeNode};

/// Exhaustive bipartition search is bounded to this many categories;
/// beyond it, candidates come from one-vs-rest plus contiguous cuts of
/// the categories sorted by first-label rate.
const EXHAUSTIVE_CATEGORY_LIMIT: usize = 12;

struct FitContext<'a> {
    task: &'a TaskSpec,
    rows: &'a [crate::tree::Row],
    label_idx: Vec<usize>,
    n_labels: usize,
    max_depth: u32,
}

fn class_counts(ctx: &FitContext<'_>, members: &[usize]) -> Vec<usize> {
    let mut counts = vec![0usize; ctx.n_labels];
    for &i in members {
        counts[ctx.label_idx[i]] += 1;
    }
    counts
}

fn gini_of_counts(counts: &[usize]) -> f64 {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    1.0 - counts
        .iter()
        .map(|&c| (c as f64 / n as f64).powi(2))
        .sum::<f64>()
}

fn majority_label<'t>(task: &'t TaskSpec, counts: &[usize]) -> &'t str {
    let mut best = 0;
    for i in 1..counts.len() {
        if counts[i] > counts[best] {
            best = i;
        }
    }
    &task.target_labels[best]
}

fn distribution(task: &TaskSpec, counts: &[usize]) -> ProbabilityDistribution {
    let weights: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    ProbabilityDistribution::from_weights(&task.target_labels, &weights)
        .expect("non-empty node has counts")
}

struct BestSplit {
    feature: String,
    split: Split,
    score: f64,
    left: Vec<usize>,
    right: Vec<usize>,
}

/// All candidate splits for one feature at one node, scored by weighted
/// child Gini. Returns the feature's best or None when the feature cannot
/// separate the rows here.
fn best_split_for_feature(
    ctx: &FitContext<'_>,
    branch: &BranchContext,
    feature_name: &str,
    members: &[usize],
) -> Option<BestSplit> {
    let feature = ctx.task.feature(feature_name).expect("feature exists");
    match &feature.kind {
        FeatureKind::Numeric { .. } => {
            let mut values: Vec<(f64, usize)> = members
                .iter()
                .filter_map(|&i| match ctx.rows[i].get(feature_name) {
                    Some(RowValue::Number(v)) => Some((*v, i)),
                    _ => None,
                })
                .collect();
            if values.len() != members.len() {
                // Complete-case fitting: a feature missing anywhere at this
                // node is not offered as a split.
                return None;
            }
            values.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut best: Option<BestSplit> = None;
            for w in values.windows(2) {
                let (lo, hi) = (w[0].0, w[1].0);
                if lo == hi {
                    continue;
                }
                let mid = lo + (hi - lo) / 2.0;
                if !(lo < mid && mid < hi) {
                    continue; // adjacent floats
                }
                let (mut left, mut right) = (Vec::new(), Vec::new());
                for &(v, i) in &values {
                    if v <= mid {
                        left.push(i);
                    } else {
                        right.push(i);
                    }
                }
                let score = weighted_combine(
                    gini_of_counts(&class_counts(ctx, &left)),
                    left.len(),
                    gini_of_counts(&class_counts(ctx, &right)),
                    right.len(),
                )
                .expect("both sides non-empty");
                let candidate = BestSplit {
                    feature: feature_name.to_string(),
                    split: Split::Threshold { value: mid },
                    score,
                    left,
                    right,
                };
                if better(&best, &candidate) {
                    best = Some(candidate);
                }
            }
            best
        }
        FeatureKind::Categorical { .. } => {
            let allowed = branch
                .allowed_categories(ctx.task, feature_name)
                .expect("categorical");
            let mut observed: Vec<String> = Vec::new();
            for &i in members {
                match ctx.rows[i].get(feature_name) {
                    Some(RowValue::Category(c)) => {
                        if !observed.contains(c) {
                            observed.push(c.clone());
                        }
                    }
                    _ => return None, // complete-case, as above
                }
            }
            if observed.len() < 2 {
                return None;
            }
            // Keep declared order for determinism.
            let declared = feature.categories().expect("categorical");
            let observed: Vec<String> = declared
                .iter()
                .filter(|c| observed.contains(c))
                .cloned()
                .collect();
            let unobserved: Vec<String> = allowed
                .iter()
                .filter(|c| !observed.contains(c))
                .cloned()
                .collect();

            let candidates: Vec<Vec<String>> = if observed.len() <= EXHAUSTIVE_CATEGORY_LIMIT {
                // group1 always contains the first observed category, so
                // each unordered bipartition appears once.
                let rest = &observed[1..];
                (0..(1u32 << rest.len()).saturating_sub(1))
                    .map(|mask| {
                        let mut group = vec![observed[0].clone()];
                        for (j, cat) in rest.iter().enumerate() {
                            if mask & (1 << j) != 0 {
                                group.push(cat.clone());
                            }
                        }
                        group
                    })
                    .collect()
            } else {
                let mut rate: Vec<(String, f64)> = observed
                    .iter()
                    .map(|cat| {
                        let mut hit = 0usize;
                        let mut total = 0usize;
                        for &i in members {
                            if let Some(RowValue::Category(c)) = ctx.rows[i].get(feature_name) {
                                if c == cat {
                                    total += 1;
                                    if ctx.label_idx[i] == 0 {
                                        hit += 1;
                                    }
                                }
                            }
                        }
                        (cat.clone(), hit as f64 / total.max(1) as f64)
                    })
                    .collect();
                rate.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
                let ordered: Vec<String> = rate.into_iter().map(|(c, _)| c).collect();
                let mut out: Vec<Vec<String>> = (1..ordered.len())
                    .map(|cut| ordered[..cut].to_vec())
                    .collect();
                out.extend(observed.iter().map(|c| vec![c.clone()]));
                out
            };

            let mut best: Option<BestSplit> = None;
            for group in candidates {
                let (mut left, mut right) = (Vec::new(), Vec::new());
                for &i in members {
                    if let Some(RowValue::Category(c)) = ctx.rows[i].get(feature_name) {
                        if group.contains(c) {
                            left.push(i);
                        } else {
                            right.push(i);
                        }
                    }
                }
                if left.is_empty() || right.is_empty() {
                    continue;
                }
                let score = weighted_combine(
                    gini_of_counts(&class_counts(ctx, &left)),
                    left.len(),
                    gini_of_counts(&class_counts(ctx, &right)),
                    right.len(),
                )
                .expect("both sides non-empty");
                // Unseen-but-allowed categories ride with the right group so
                // the split still partitions the allowed set.
                let group1: Vec<String> = declared
                    .iter()
                    .filter(|c| group.contains(c))
                    .cloned()
                    .collect();
                let group2: Vec<String> = declared
                    .iter()
                    .filter(|c| {
                        (observed.contains(c) && !group.contains(c)) || unobserved.contains(c)
                    })
                    .cloned()
                    .collect();
                let candidate = BestSplit {
                    feature: feature_name.to_string(),
                    split: Split::Bipartition { group1, group2 },
                    score,
                    left,
                    right,
                };
                if better(&best, &candidate) {
                    best = Some(candidate);
                }
            }
            best
        }
    }
}

/// Deterministic candidate ordering: score, then feature name, then the
/// split's own shape (smaller threshold / lexicographically smaller
/// group1).
fn better(current: &Option<BestSplit>, candidate: &BestSplit) -> bool {
    match current {
        None => true,
        Some(best) => {
            let by_score = candidate.score.total_cmp(&best.score);
            if by_score != std::cmp::Ordering::Equal {
                return by_score == std::cmp::Ordering::Less;
            }
            match (&candidate.split, &best.split) {
                (Split::Threshold { value: a }, Split::Threshold { value: b }) => a < b,
                (Split::Bipartition { group1: a, .. }, Split::Bipartition { group1: b, .. }) => {
                    a < b
                }
                _ => false,
            }
        }
    }
}

fn fit_node(
    ctx: &FitContext<'_>,
    branch: &BranchContext,
    members: &[usize],
    depth: u32,
) -> TreeNode {
    let counts = class_counts(ctx, members);
    let node_gini = gini_of_counts(&counts);
    let as_leaf = |counts: &[usize]| TreeNode::Leaf {
        label: majority_label(ctx.task, counts).to_string(),
        probs: distribution(ctx.task, counts),
    };
    if node_gini == 0.0 || depth >= ctx.max_depth || members.len() < 2 {
        return as_leaf(&counts);
    }

    let mut best: Option<BestSplit> = None;
    for feature in branch.active_features(ctx.task) {
        if let Some(candidate) = best_split_for_feature(ctx, branch, &feature.name, members) {
            let by_name_wins = match &best {
                None => true,
                Some(b) => {
                    candidate
                        .score
                        .total_cmp(&b.score)
                        .then_with(|| candidate.feature.cmp(&b.feature))
                        == std::cmp::Ordering::Less
                }
            };
            if by_name_wins {
                best = Some(candidate);
            }
        }
    }
    let Some(best) = best else {
        return as_leaf(&counts);
    };

    let (left_branch, right_branch) = match &best.split {
        Split::Threshold { value } => (
            branch.narrow_numeric(ctx.task, &best.feature, *value, SplitSide::Left),
            branch.narrow_numeric(ctx.task, &best.feature, *value, SplitSide::Right),
        ),
        Split::Bipartition { group1, group2 } => (
            branch.narrow_categorical(ctx.task, &best.feature, group1),
            branch.narrow_categorical(ctx.task, &best.feature, group2),
        ),
    };
    // Narrowing can only fail if data sits outside the declared bounds;
    // in that case stop splitting rather than emit an inconsistent path.
    let (Ok(left_branch), Ok(right_branch)) = (left_branch, right_branch) else {
        return as_leaf(&counts);
    };

    let left = fit_node(ctx, &left_branch, &best.left, depth + 1);
    let right = fit_node(ctx, &right_branch, &best.right, depth + 1);
    TreeNode::Internal {
        feature: best.feature,
        split: best.split,
        left: Box::new(left),
        right: Box::new(right),
        node_probs: distribution(ctx.task, &counts),
        score: best.score,
    }
}

/// Fits a classical CART tree on labeled rows. Rows with a missing value
/// in any feature are dropped up front (complete-case fitting).
pub fn cart_fit(dataset: &Dataset, max_depth: u32) -> Result<DecisionTree, EvalError> {
    if max_depth < 1 {
        return Err(EvalError::BadParameter(
            "max_depth must be at least 1".to_string(),
        ));
    }
    let complete: Vec<usize> = (0..dataset.len())
        .filter(|&i| {
            dataset
                .task
                .features
                .iter()
                .all(|f| dataset.rows[i].get(&f.name).is_some())
        })
        .collect();
    if complete.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let label_idx: Vec<usize> = dataset
        .labels
        .iter()
        .map(|l| {
            dataset
                .task
                .label_index(l)
                .expect("dataset labels validated")
        })
        .collect();
    let ctx = FitContext {
        task: &dataset.task,
        rows: &dataset.rows,
        label_idx,
        n_labels: dataset.task.target_labels.len(),
        max_depth,
    };
    let branch = BranchContext::root(ProbabilityDistribution::uniform(
        &dataset.task.target_labels,
    ));
    let root = fit_node(&ctx, &branch, &complete, 0);
    Ok(DecisionTree {
        task: dataset.task.clone(),
        root,
        config: BuildConfig {
            max_depth,
            ..BuildConfig::default()
        },
        meta: BuildMeta {
            advisor_kind: "cart".to_string(),
            ..BuildMeta::default()
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::evaluate;
    use crate::schema::{FeatureSpec, NumericDtype};
    use crate::tree::{predict, MissingPolicy, Row};

    fn task() -> TaskSpec {
        TaskSpec::new(
            "toy",
            "item",
            "y",
            &["a", "b"],
            vec![
                FeatureSpec::numeric("x1", NumericDtype::Real, None, None).unwrap(),
                FeatureSpec::categorical("c1", &["p", "q", "r"]).unwrap(),
            ],
        )
        .unwrap()
    }

    fn dataset(points: &[(f64, &str, &str)]) -> Dataset {
        let task = task();
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (x, c, y) in points {
            let mut row = Row::new();
            row.set("x1", RowValue::Number(*x));
            row.set("c1", RowValue::Category(c.to_string()));
            rows.push(row);
            labels.push(y.to_string());
        }
        Dataset { task, rows, labels }
    }

    #[test]
    fn perfect_numeric_separator_is_depth_one() {
        let data = dataset(&[
            (1.0, "p", "a"),
            (2.0, "q", "a"),
            (3.0, "p", "a"),
            (10.0, "q", "b"),
            (11.0, "r", "b"),
            (12.0, "p", "b"),
        ]);
        let tree = cart_fit(&data, 5).unwrap();
        assert_eq!(tree.depth(), 1);
        let report = evaluate(&tree, &data, MissingPolicy::Error).unwrap();
        assert_eq!(report.accuracy, 1.0);
    }

    #[test]
    fn constant_labels_give_single_leaf() {
        let data = dataset(&[(1.0, "p", "a"), (2.0, "q", "a"), (3.0, "r", "a")]);
        let tree = cart_fit(&data, 5).unwrap();
        assert!(matches!(tree.root, TreeNode::Leaf { .. }));
    }

    #[test]
    fn zero_gain_split_still_taken_when_impure() {
        // XOR in (x1, c1): no single split reduces weighted Gini at the
        // root, but depth 2 solves it exactly.
        let data = dataset(&[
            (0.0, "p", "a"),
            (0.0, "q", "b"),
            (1.0, "p", "b"),
            (1.0, "q", "a"),
        ]);
        let tree = cart_fit(&data, 2).unwrap();
        let report = evaluate(&tree, &data, MissingPolicy::Error).unwrap();
        assert_eq!(report.accuracy, 1.0);
    }

    #[test]
    fn unseen_categories_route_right() {
        let data = dataset(&[
            (1.0, "p", "a"),
            (2.0, "p", "a"),
            (1.5, "q", "b"),
            (2.5, "q", "b"),
        ]);
        // Force the categorical split by making x1 useless.
        let data = Dataset {
            task: data.task.clone(),
            rows: data
                .rows
                .iter()
                .map(|r| {
                    let mut r2 = Row::new();
                    r2.set("x1", RowValue::Number(1.0));
                    r2.set("c1", r.get("c1").cloned().expect("c1 set above"));
                    r2
                })
                .collect(),
            labels: data.labels.clone(),
        };
        let tree = cart_fit(&data, 3).unwrap();
        // Category "r" was never observed; it must still route somewhere.
        let mut row = Row::new();
        row.set("x1", RowValue::Number(1.0));
        row.set("c1", RowValue::Category("r".into()));
        assert!(predict(&tree, &row, MissingPolicy::Error).is_ok());
    }

    #[test]
    fn training_accuracy_monotone_in_depth() {
        let data = dataset(&[
            (1.0, "p", "a"),
            (2.0, "q", "b"),
            (3.0, "p", "a"),
            (4.0, "q", "b"),
            (5.0, "r", "a"),
            (6.0, "p", "b"),
            (7.0, "q", "a"),
            (8.0, "r", "b"),
        ]);
        let mut last = 0.0;
        for depth in 1..=6 {
            let tree = cart_fit(&data, depth).unwrap();
            let acc = evaluate(&tree, &data, MissingPolicy::Error)
                .unwrap()
                .accuracy;
            assert!(acc >= last - 1e-12, "depth {depth}: {acc} < {last}");
            last = acc;
        }
        // Consistent data: unlimited depth reaches perfect training
        // accuracy.
        let tree = cart_fit(&data, 64).unwrap();
        assert_eq!(
            evaluate(&tree, &data, MissingPolicy::Error)
                .unwrap()
                .accuracy,
            1.0
        );
    }

    #[test]
    fn empty_after_missing_rows_is_an_error() {
        let task = task();
        let mut row = Row::new();
        row.set("x1", RowValue::Number(1.0)); // c1 missing
        let data = Dataset {
            task,
            rows: vec![row],
            labels: vec!["a".to_string()],
        };
        assert!(matches!(cart_fit(&data, 3), Err(EvalError::EmptyDataset)));
    }
}

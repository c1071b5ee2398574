//! CSV ingestion, accuracy / macro-F1 metrics and few-shot subsampling.

mod cart;

pub use cart::cart_fit;

use std::collections::HashSet;
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::EvalError;
use crate::schema::{normalize_identifier, FeatureKind, NumericDtype, TaskSpec};
use crate::tree::{predict, DecisionTree, MissingPolicy, Row, RowValue};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub task: TaskSpec,
    pub rows: Vec<Row>,
    /// True label per row, parallel to `rows`.
    pub labels: Vec<String>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Rows dropped while loading, with the reason. A non-empty list is worth
/// surfacing loudly: it usually means a schema mismatch, not dirty data.
#[derive(Debug, Clone, Default)]
pub struct LoadReport {
    pub row_errors: Vec<(usize, String)>,
}

pub fn default_missing_tokens() -> HashSet<String> {
    ["", "na", "nan", "null"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

/// Loads a CSV against a task schema: headers are normalized and matched
/// to feature names and the target, categorical cells normalized, cells
/// in `missing_tokens` treated as absent. Rows with malformed numeric or
/// undeclared categorical cells are collected into the report; labels
/// outside the target vocabulary abort the load.
pub fn load_csv(
    path: &Path,
    task: &TaskSpec,
    missing_tokens: &HashSet<String>,
) -> Result<(Dataset, LoadReport), EvalError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)?;
    let headers = reader.headers()?.clone();

    let mut column_of_feature: Vec<Option<usize>> = vec![None; task.features.len()];
    let mut target_column: Option<usize> = None;
    let mut extra = Vec::new();
    let mut duplicated = Vec::new();
    for (col, raw) in headers.iter().enumerate() {
        let Ok(name) = normalize_identifier(raw) else {
            extra.push(raw.to_string());
            continue;
        };
        if name == task.target_feature {
            if target_column.replace(col).is_some() {
                duplicated.push(name.clone());
            }
            continue;
        }
        match task.features.iter().position(|f| f.name == name) {
            Some(fi) => {
                if column_of_feature[fi].replace(col).is_some() {
                    duplicated.push(name.clone());
                }
            }
            None => extra.push(name),
        }
    }
    let mut missing: Vec<String> = task
        .features
        .iter()
        .enumerate()
        .filter(|(fi, _)| column_of_feature[*fi].is_none())
        .map(|(_, f)| f.name.clone())
        .collect();
    if target_column.is_none() {
        missing.push(task.target_feature.clone());
    }
    if !missing.is_empty() || !duplicated.is_empty() {
        extra.extend(duplicated);
        return Err(EvalError::HeaderMismatch { missing, extra });
    }
    let target_column = target_column.expect("checked above");

    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut report = LoadReport::default();
    for (index, record) in reader.records().enumerate() {
        let record = record?;
        let raw_label = record.get(target_column).unwrap_or("").trim();
        let label = normalize_identifier(raw_label)
            .ok()
            .filter(|l| task.target_labels.contains(l))
            .ok_or_else(|| EvalError::LabelOutOfVocabulary {
                row: index,
                value: raw_label.to_string(),
            })?;

        let mut row = Row::new();
        let mut row_error = None;
        for (fi, feature) in task.features.iter().enumerate() {
            let cell = record
                .get(column_of_feature[fi].expect("mapped"))
                .unwrap_or("")
                .trim();
            if missing_tokens.contains(&cell.to_lowercase()) {
                continue;
            }
            match &feature.kind {
                FeatureKind::Numeric { dtype, .. } => match cell.parse::<f64>() {
                    Ok(v) if *dtype == NumericDtype::Integer && v.fract() != 0.0 => {
                        row_error = Some(format!(
                            "feature {}: {cell:?} is not an integer",
                            feature.name
                        ));
                        break;
                    }
                    Ok(v) if v.is_finite() => row.set(&feature.name, RowValue::Number(v)),
                    _ => {
                        row_error = Some(format!(
                            "feature {}: cannot parse {cell:?} as a number",
                            feature.name
                        ));
                        break;
                    }
                },
                FeatureKind::Categorical { categories } => {
                    match normalize_identifier(cell)
                        .ok()
                        .filter(|c| categories.contains(c))
                    {
                        Some(c) => row.set(&feature.name, RowValue::Category(c)),
                        None => {
                            row_error = Some(format!(
                                "feature {}: category {cell:?} is not in the schema",
                                feature.name
                            ));
                            break;
                        }
                    }
                }
            }
        }
        match row_error {
            Some(reason) => report.row_errors.push((index, reason)),
            None => {
                rows.push(row);
                labels.push(label);
            }
        }
    }
    Ok((
        Dataset {
            task: task.clone(),
            rows,
            labels,
        },
        report,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabelMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_label: Vec<(String, LabelMetrics)>,
    /// `confusion[truth][predicted]` in target label order, routed rows only.
    pub confusion: Vec<Vec<usize>>,
    pub n: usize,
    pub skipped: usize,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned text table of the per-label metrics.
    pub fn to_table(&self) -> String {
        let mut width = "label".len();
        for (label, _) in &self.per_label {
            width = width.max(label.len());
        }
        let mut out = String::new();
        out.push_str(&format!(
            "{:<width$}  {:>9}  {:>9}  {:>9}\n",
            "label", "precision", "recall", "f1"
        ));
        for (label, m) in &self.per_label {
            out.push_str(&format!(
                "{label:<width$}  {:>9.4}  {:>9.4}  {:>9.4}\n",
                m.precision, m.recall, m.f1
            ));
        }
        out.push_str(&format!(
            "\naccuracy {:.4}   macro F1 {:.4}   rows {}   skipped {}\n",
            self.accuracy, self.macro_f1, self.n, self.skipped
        ));
        out
    }
}

/// Runs the tree over every row and computes accuracy, per-label
/// precision/recall/F1 (0/0 counted as 0) and macro F1. Rows the tree
/// cannot route are skipped and counted.
pub fn evaluate(
    tree: &DecisionTree,
    dataset: &Dataset,
    policy: MissingPolicy,
) -> Result<EvalReport, EvalError> {
    if dataset.task.target_labels != tree.task.target_labels {
        return Err(EvalError::TaskMismatch(format!(
            "dataset labels {:?} != tree labels {:?}",
            dataset.task.target_labels, tree.task.target_labels
        )));
    }
    let labels = &tree.task.target_labels;
    let index_of = |l: &str| labels.iter().position(|x| x == l).expect("validated label");
    let mut confusion = vec![vec![0usize; labels.len()]; labels.len()];
    let mut skipped = 0usize;
    for (row, truth) in dataset.rows.iter().zip(&dataset.labels) {
        match predict(tree, row, policy) {
            Ok(p) => confusion[index_of(truth)][index_of(&p.label)] += 1,
            Err(_) => skipped += 1,
        }
    }
    let routed: usize = confusion.iter().map(|r| r.iter().sum::<usize>()).sum();
    let correct: usize = (0..labels.len()).map(|i| confusion[i][i]).sum();
    let accuracy = if routed > 0 {
        correct as f64 / routed as f64
    } else {
        0.0
    };

    let ratio = |num: usize, den: usize| {
        if den > 0 {
            num as f64 / den as f64
        } else {
            0.0
        }
    };
    let mut per_label = Vec::with_capacity(labels.len());
    let mut f1_sum = 0.0;
    for (i, label) in labels.iter().enumerate() {
        let tp = confusion[i][i];
        let predicted: usize = (0..labels.len()).map(|t| confusion[t][i]).sum();
        let actual: usize = confusion[i].iter().sum();
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, actual);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        f1_sum += f1;
        per_label.push((
            label.clone(),
            LabelMetrics {
                precision,
                recall,
                f1,
            },
        ));
    }
    Ok(EvalReport {
        accuracy,
        macro_f1: f1_sum / labels.len() as f64,
        per_label,
        confusion,
        n: dataset.len(),
        skipped,
    })
}

/// Deterministic seeded subsample of `k` rows without replacement,
/// stratified by label (round-robin in label order) for as long as each
/// label's pool lasts.
pub fn few_shot_sample(dataset: &Dataset, k: usize, seed: u64) -> Result<Dataset, EvalError> {
    if k > dataset.len() {
        return Err(EvalError::KTooLarge {
            k,
            n: dataset.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buckets: Vec<Vec<usize>> = dataset
        .task
        .target_labels
        .iter()
        .map(|_| Vec::new())
        .collect();
    for (i, label) in dataset.labels.iter().enumerate() {
        let li = dataset
            .task
            .label_index(label)
            .expect("dataset labels validated");
        buckets[li].push(i);
    }
    for bucket in &mut buckets {
        bucket.shuffle(&mut rng);
    }
    let mut chosen = Vec::with_capacity(k);
    while chosen.len() < k {
        let mut advanced = false;
        for bucket in &mut buckets {
            if chosen.len() == k {
                break;
            }
            if let Some(i) = bucket.pop() {
                chosen.push(i);
                advanced = true;
            }
        }
        debug_assert!(advanced, "k <= n guarantees progress");
        if !advanced {
            break;
        }
    }
    Ok(Dataset {
        task: dataset.task.clone(),
        rows: chosen.iter().map(|&i| dataset.rows[i].clone()).collect(),
        labels: chosen.iter().map(|&i| dataset.labels[i].clone()).collect(),
    })
}

/// Seeded split into (train, test) with `test_fraction` of rows in the
/// test half (at least one row each when possible).
pub fn train_test_split(
    dataset: &Dataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset), EvalError> {
    if dataset.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let n_test =
        ((dataset.len() as f64 * test_fraction).round() as usize).clamp(1, dataset.len() - 1);
    let pick = |indices: &[usize]| Dataset {
        task: dataset.task.clone(),
        rows: indices.iter().map(|&i| dataset.rows[i].clone()).collect(),
        labels: indices.iter().map(|&i| dataset.labels[i].clone()).collect(),
    };
    Ok((pick(&order[n_test..]), pick(&order[..n_test])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builder::BuildConfig;
    use crate::schema::{FeatureSpec, ProbabilityDistribution};
    use crate::tree::{BuildMeta, Split, TreeNode};
    use std::io::Write;

    fn task() -> TaskSpec {
        TaskSpec::new(
            "test",
            "item",
            "outcome",
            &["yes", "no"],
            vec![
                FeatureSpec::numeric("blood_pressure", NumericDtype::Real, None, None).unwrap(),
                FeatureSpec::categorical("color", &["red", "blue"]).unwrap(),
            ],
        )
        .unwrap()
    }

    fn write_csv(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn headers_normalize_and_match() {
        let t = task();
        let csv = write_csv("Blood Pressure,Color,Outcome\n120,Red,YES\n80,blue,no\n");
        let (data, report) = load_csv(csv.path(), &t, &default_missing_tokens()).unwrap();
        assert_eq!(data.len(), 2);
        assert!(report.row_errors.is_empty());
        assert_eq!(data.labels, vec!["yes".to_string(), "no".to_string()]);
        assert_eq!(
            data.rows[0].get("blood_pressure"),
            Some(&RowValue::Number(120.0))
        );
        assert_eq!(
            data.rows[0].get("color"),
            Some(&RowValue::Category("red".into()))
        );
    }

    #[test]
    fn missing_target_column_is_header_mismatch() {
        let t = task();
        let csv = write_csv("blood_pressure,color\n120,red\n");
        match load_csv(csv.path(), &t, &default_missing_tokens()) {
            Err(EvalError::HeaderMismatch { missing, .. }) => {
                assert_eq!(missing, vec!["outcome".to_string()]);
            }
            other => panic!("expected header mismatch, got {other:?}"),
        }
    }

    #[test]
    fn label_out_of_vocabulary_aborts() {
        let t = task();
        let csv = write_csv("blood_pressure,color,outcome\n120,red,maybe\n");
        assert!(matches!(
            load_csv(csv.path(), &t, &default_missing_tokens()),
            Err(EvalError::LabelOutOfVocabulary { row: 0, .. })
        ));
    }

    #[test]
    fn bad_cells_become_row_errors() {
        let t = task();
        let csv = write_csv(
            "blood_pressure,color,outcome\nabc,red,yes\n120,purple,no\n110,,yes\nna,red,no\n",
        );
        let (data, report) = load_csv(csv.path(), &t, &default_missing_tokens()).unwrap();
        // Row 0: bad number. Row 1: undeclared category. Rows 2 and 3 load
        // with missing cells.
        assert_eq!(report.row_errors.len(), 2);
        assert_eq!(data.len(), 2);
        assert_eq!(data.rows[0].get("color"), None);
        assert_eq!(data.rows[1].get("blood_pressure"), None);
    }

    fn constant_tree(label: &str) -> DecisionTree {
        let t = task();
        let ws = if label == "yes" {
            [0.9, 0.1]
        } else {
            [0.1, 0.9]
        };
        let probs = ProbabilityDistribution::from_weights(&t.target_labels, &ws).unwrap();
        DecisionTree {
            task: t,
            root: TreeNode::Leaf {
                label: label.to_string(),
                probs,
            },
            config: BuildConfig::default(),
            meta: BuildMeta::default(),
        }
    }

    fn dataset(labels: &[&str]) -> Dataset {
        let t = task();
        Dataset {
            task: t,
            rows: labels.iter().map(|_| Row::new()).collect(),
            labels: labels.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn perfect_predictions_score_one() {
        let t = task();
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (bp, label) in [(90.0, "yes"), (95.0, "yes"), (110.0, "no"), (120.0, "no")] {
            let mut r = Row::new();
            r.set("blood_pressure", RowValue::Number(bp));
            rows.push(r);
            labels.push(label.to_string());
        }
        let data = Dataset {
            task: t,
            rows,
            labels,
        };
        let report = evaluate(&threshold_tree(), &data, MissingPolicy::Error).unwrap();
        assert_eq!(report.accuracy, 1.0);
        assert_eq!(report.macro_f1, 1.0);
    }

    #[test]
    fn mismatched_tasks_are_rejected() {
        let tree = constant_tree("yes");
        let other = TaskSpec::new(
            "other",
            "item",
            "outcome",
            &["win", "lose"],
            vec![FeatureSpec::numeric("x", NumericDtype::Real, None, None).unwrap()],
        )
        .unwrap();
        let data = Dataset {
            task: other,
            rows: vec![Row::new()],
            labels: vec!["win".into()],
        };
        assert!(matches!(
            evaluate(&tree, &data, MissingPolicy::Error),
            Err(EvalError::TaskMismatch(_))
        ));
    }

    #[test]
    fn degenerate_predictor_on_balanced_data() {
        let tree = constant_tree("no");
        let data = dataset(&["yes", "yes", "no", "no"]);
        let report = evaluate(&tree, &data, MissingPolicy::Error).unwrap();
        assert_eq!(report.accuracy, 0.5);
        assert!((report.macro_f1 - 1.0 / 3.0).abs() < 1e-12);
    }

    /// Tree predicting "yes" when blood_pressure <= 100, else "no".
    fn threshold_tree() -> DecisionTree {
        let t = task();
        let d =
            |ws: [f64; 2]| ProbabilityDistribution::from_weights(&t.target_labels, &ws).unwrap();
        DecisionTree {
            task: t.clone(),
            root: TreeNode::Internal {
                feature: "blood_pressure".into(),
                split: Split::Threshold { value: 100.0 },
                left: Box::new(TreeNode::Leaf {
                    label: "yes".into(),
                    probs: d([0.9, 0.1]),
                }),
                right: Box::new(TreeNode::Leaf {
                    label: "no".into(),
                    probs: d([0.2, 0.8]),
                }),
                node_probs: d([0.5, 0.5]),
                score: 0.1,
            },
            config: BuildConfig {
                max_depth: 1,
                ..BuildConfig::default()
            },
            meta: BuildMeta::default(),
        }
    }

    #[test]
    fn hand_computed_confusion() {
        // TP=3 FP=1 FN=1 TN=5 for "yes": three true-yes rows route left,
        // one true-yes routes right, one true-no routes left, five
        // true-no route right.
        let t = task();
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        let mut push = |bp: f64, label: &str, times: usize| {
            for _ in 0..times {
                let mut r = Row::new();
                r.set("blood_pressure", RowValue::Number(bp));
                rows.push(r);
                labels.push(label.to_string());
            }
        };
        push(90.0, "yes", 3); // TP
        push(110.0, "yes", 1); // FN
        push(90.0, "no", 1); // FP
        push(110.0, "no", 5); // TN
        let data = Dataset {
            task: t,
            rows,
            labels,
        };
        let report = evaluate(&threshold_tree(), &data, MissingPolicy::Error).unwrap();
        assert!((report.per_label[0].1.f1 - 0.75).abs() < 1e-12);
        assert!((report.per_label[1].1.f1 - 10.0 / 12.0).abs() < 1e-12);
        assert!((report.macro_f1 - (0.75 + 10.0 / 12.0) / 2.0).abs() < 1e-12);
        assert!((report.macro_f1 - 0.7917).abs() < 1e-4);
        assert_eq!(report.accuracy, 0.8);
    }

    #[test]
    fn evaluate_is_row_order_invariant() {
        let tree = constant_tree("yes");
        let a = dataset(&["yes", "no", "no", "yes", "yes"]);
        let mut b = a.clone();
        b.rows.reverse();
        b.labels.reverse();
        let ra = evaluate(&tree, &a, MissingPolicy::Error).unwrap();
        let rb = evaluate(&tree, &b, MissingPolicy::Error).unwrap();
        assert_eq!(ra, rb);
    }

    #[test]
    fn few_shot_sampling_is_stratified_and_seeded() {
        let data = dataset(&["yes", "yes", "yes", "yes", "no", "no", "no", "no"]);
        let a = few_shot_sample(&data, 4, 9).unwrap();
        let b = few_shot_sample(&data, 4, 9).unwrap();
        assert_eq!(a, b);
        let yes = a.labels.iter().filter(|l| *l == "yes").count();
        assert_eq!(yes, 2);

        let all = few_shot_sample(&data, 8, 1).unwrap();
        assert_eq!(all.len(), 8);
        assert!(matches!(
            few_shot_sample(&data, 9, 1),
            Err(EvalError::KTooLarge { .. })
        ));
    }

    #[test]
    fn skipped_rows_counted() {
        // A tree that needs blood_pressure, rows without it.
        let t = task();
        let probs = ProbabilityDistribution::from_weights(&t.target_labels, &[0.8, 0.2]).unwrap();
        let leaf = |label: &str, hi: f64| TreeNode::Leaf {
            label: label.to_string(),
            probs: ProbabilityDistribution::from_weights(&t.target_labels, &[hi, 1.0 - hi])
                .unwrap(),
        };
        let tree = DecisionTree {
            task: t.clone(),
            root: TreeNode::Internal {
                feature: "blood_pressure".into(),
                split: Split::Threshold { value: 100.0 },
                left: Box::new(leaf("yes", 0.9)),
                right: Box::new(leaf("no", 0.2)),
                node_probs: probs,
                score: 0.1,
            },
            config: BuildConfig {
                max_depth: 1,
                ..BuildConfig::default()
            },
            meta: BuildMeta::default(),
        };
        let mut with_value = Row::new();
        with_value.set("blood_pressure", RowValue::Number(90.0));
        let data = Dataset {
            task: t,
            rows: vec![with_value, Row::new(), Row::new()],
            labels: vec!["yes".into(), "no".into(), "no".into()],
        };
        let report = evaluate(&tree, &data, MissingPolicy::Error).unwrap();
        assert_eq!(report.skipped, 2);
        assert_eq!(report.n, 3);
        assert_eq!(report.accuracy, 1.0);
        let total: usize = report.confusion.iter().flatten().sum();
        assert_eq!(total + report.skipped, report.n);
    }
}

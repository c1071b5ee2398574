//! Synthetic ground-truth knowledge models.
//!
//! A `KnowledgeModel` is a naive-Bayes generator: a label prior plus
//! per-feature class conditionals, numeric features discretized on a
//! fixed grid with uniform density inside each cell. Conditionals in this
//! form admit exact posteriors for any branch context, so the model can
//! answer every `Advisor` query with brute-force correctness — the
//! deterministic stand-in for an LLM's knowledge — while also sampling
//! datasets from the very distribution it describes.

use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AdvisorError, OracleError};
use crate::eval::Dataset;
use crate::gateway::{Advisor, AdvisorAnswer, AdvisorInfo, AdvisorQuery, Division};
use crate::impurity::split_score;
use crate::schema::{
    BranchContext, Constraint, ConstraintBody, FeatureKind, FeatureSpec, NumericDtype,
    ProbabilityDistribution, TaskSpec,
};

#[derive(Debug, Clone)]
enum FeatureTable {
    Numeric {
        lower: f64,
        upper: f64,
        /// `likelihood[label][cell]`, each row summing to 1.
        likelihood: Vec<Vec<f64>>,
        /// Per-label cumulative sums, `cum[label][i]` = mass of cells `< i`.
        cum: Vec<Vec<f64>>,
    },
    Categorical {
        /// `likelihood[label][category]`, aligned with the declared order.
        likelihood: Vec<Vec<f64>>,
    },
}

/// How a branch context restricts one feature, resolved against a task.
enum Restriction {
    Interval(f64, f64),
    Allowed(Vec<bool>),
}

#[derive(Debug, Clone)]
pub struct KnowledgeModel {
    labels: Vec<String>,
    prior: Vec<f64>,
    features: Vec<FeatureSpec>,
    tables: Vec<FeatureTable>,
    /// Minimal task view for standalone posterior queries.
    view: TaskSpec,
}

impl KnowledgeModel {
    fn assemble(
        labels: Vec<String>,
        prior: Vec<f64>,
        features: Vec<FeatureSpec>,
        tables: Vec<FeatureTable>,
    ) -> Result<Self, OracleError> {
        let label_refs: Vec<&str> = labels.iter().map(String::as_str).collect();
        let view = TaskSpec::new(
            "synthetic model",
            "instance",
            "target",
            &label_refs,
            features.clone(),
        )
        .map_err(|e| OracleError::Format(e.to_string()))?;
        Ok(KnowledgeModel {
            labels,
            prior,
            features,
            tables,
            view,
        })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn features(&self) -> &[FeatureSpec] {
        &self.features
    }

    pub fn prior(&self) -> ProbabilityDistribution {
        ProbabilityDistribution::from_weights(&self.labels, &self.prior).expect("valid prior")
    }

    /// Task whose schema mirrors this model, usable for demos and tests.
    pub fn task_view(&self) -> &TaskSpec {
        &self.view
    }

    /// Mass of one feature's restriction under one label.
    fn feature_mass(&self, fi: usize, label: usize, restriction: &Restriction) -> f64 {
        match (&self.tables[fi], restriction) {
            (
                FeatureTable::Numeric {
                    lower,
                    upper,
                    likelihood,
                    cum,
                },
                Restriction::Interval(lo, hi),
            ) => {
                let cells = likelihood[label].len();
                let width = (upper - lower) / cells as f64;
                let a = ((lo.max(*lower) - lower) / width).clamp(0.0, cells as f64);
                let b = ((hi.min(*upper) - lower) / width).clamp(0.0, cells as f64);
                if b <= a {
                    return 0.0;
                }
                let cdf = |x: f64| -> f64 {
                    let k = (x.floor() as usize).min(cells - 1);
                    cum[label][k] + likelihood[label][k] * (x - k as f64)
                };
                cdf(b) - cdf(a)
            }
            (FeatureTable::Categorical { likelihood }, Restriction::Allowed(mask)) => likelihood
                [label]
                .iter()
                .zip(mask)
                .filter_map(|(p, keep)| keep.then_some(*p))
                .sum(),
            _ => unreachable!("restriction kind matches table kind"),
        }
    }

    /// Resolves the context (plus one optional extra constraint) into a
    /// per-feature restriction, using the given task's declared bounds.
    fn restrictions(
        &self,
        task: &TaskSpec,
        ctx: &BranchContext,
        extra: Option<&Constraint>,
    ) -> Vec<Restriction> {
        self.features
            .iter()
            .map(|f| match &f.kind {
                FeatureKind::Numeric { .. } => {
                    let iv = ctx
                        .effective_interval(task, &f.name)
                        .expect("model feature exists in task");
                    let (mut lo, mut hi) = (iv.lower, iv.upper);
                    if let Some(c) = extra.filter(|c| c.feature == f.name) {
                        match &c.body {
                            ConstraintBody::NumericUpper { threshold, .. } => {
                                hi = hi.min(*threshold)
                            }
                            ConstraintBody::NumericLower { threshold, .. } => {
                                lo = lo.max(*threshold)
                            }
                            ConstraintBody::CategoricalSubset { .. } => {}
                        }
                    }
                    Restriction::Interval(lo, hi)
                }
                FeatureKind::Categorical { categories } => {
                    let allowed = ctx
                        .allowed_categories(task, &f.name)
                        .expect("model feature exists in task");
                    let extra_subset = extra.filter(|c| c.feature == f.name).and_then(|c| match &c
                        .body
                    {
                        ConstraintBody::CategoricalSubset { allowed } => Some(allowed),
                        _ => None,
                    });
                    let mask = categories
                        .iter()
                        .map(|cat| {
                            allowed.contains(cat)
                                && extra_subset.is_none_or(|subset| subset.contains(cat))
                        })
                        .collect();
                    Restriction::Allowed(mask)
                }
            })
            .collect()
    }

    fn posterior_restricted(
        &self,
        restrictions: &[Restriction],
    ) -> Result<ProbabilityDistribution, OracleError> {
        let weights: Vec<f64> = (0..self.labels.len())
            .map(|l| {
                let mass: f64 = restrictions
                    .iter()
                    .enumerate()
                    .map(|(fi, r)| self.feature_mass(fi, l, r))
                    .product();
                self.prior[l] * mass
            })
            .collect();
        ProbabilityDistribution::from_weights(&self.labels, &weights)
            .map_err(|_| OracleError::UnsatisfiableContext)
    }

    /// Exact `P(label | constraints)` under the naive-Bayes factorization.
    pub fn posterior(&self, ctx: &BranchContext) -> Result<ProbabilityDistribution, OracleError> {
        let restrictions = self.restrictions(&self.view, ctx, None);
        self.posterior_restricted(&restrictions)
    }

    fn posterior_for(
        &self,
        task: &TaskSpec,
        ctx: &BranchContext,
        extra: Option<&Constraint>,
    ) -> Result<ProbabilityDistribution, OracleError> {
        let restrictions = self.restrictions(task, ctx, extra);
        self.posterior_restricted(&restrictions)
    }

    /// Seeded i.i.d. draws from the generative model.
    pub fn sample(&self, task: &TaskSpec, n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let l = sample_index(&mut rng, &self.prior);
            let mut row = crate::tree::Row::new();
            for (fi, f) in self.features.iter().enumerate() {
                match &self.tables[fi] {
                    FeatureTable::Numeric {
                        lower,
                        upper,
                        likelihood,
                        ..
                    } => {
                        let cells = likelihood[l].len();
                        let width = (upper - lower) / cells as f64;
                        let cell = sample_index(&mut rng, &likelihood[l]);
                        let u: f64 = rng.random();
                        row.set(
                            &f.name,
                            crate::tree::RowValue::Number(lower + (cell as f64 + u) * width),
                        );
                    }
                    FeatureTable::Categorical { likelihood } => {
                        let cats = f.categories().expect("categorical feature");
                        let cat = sample_index(&mut rng, &likelihood[l]);
                        row.set(&f.name, crate::tree::RowValue::Category(cats[cat].clone()));
                    }
                }
            }
            rows.push(row);
            labels.push(self.labels[l].clone());
        }
        Dataset {
            task: task.clone(),
            rows,
            labels,
        }
    }

    /// Label weights for a fully specified row, used by the Bayes-optimal
    /// classifier.
    fn row_weights(&self, row: &crate::tree::Row) -> Vec<f64> {
        (0..self.labels.len())
            .map(|l| {
                let mut w = self.prior[l];
                for (fi, f) in self.features.iter().enumerate() {
                    match (&self.tables[fi], row.get(&f.name)) {
                        (
                            FeatureTable::Numeric {
                                lower,
                                upper,
                                likelihood,
                                ..
                            },
                            Some(crate::tree::RowValue::Number(v)),
                        ) => {
                            let cells = likelihood[l].len();
                            let width = (upper - lower) / cells as f64;
                            let cell = (((v - lower) / width).floor() as isize)
                                .clamp(0, cells as isize - 1);
                            w *= likelihood[l][cell as usize];
                        }
                        (
                            FeatureTable::Categorical { likelihood },
                            Some(crate::tree::RowValue::Category(c)),
                        ) => {
                            let cats = f.categories().expect("categorical feature");
                            match cats.iter().position(|cat| cat == c) {
                                Some(i) => w *= likelihood[l][i],
                                None => w = 0.0,
                            }
                        }
                        _ => w = 0.0,
                    }
                }
                w
            })
            .collect()
    }

    /// Accuracy of the exact posterior-argmax classifier on a fresh
    /// sample: the ceiling any tree built from this model can approach.
    pub fn bayes_accuracy(&self, n: usize, seed: u64) -> f64 {
        let data = self.sample(&self.view, n, seed);
        let mut correct = 0usize;
        for (row, truth) in data.rows.iter().zip(&data.labels) {
            let weights = self.row_weights(row);
            let mut best = 0;
            for i in 1..weights.len() {
                if weights[i] > weights[best] {
                    best = i;
                }
            }
            if &self.labels[best] == truth {
                correct += 1;
            }
        }
        correct as f64 / n as f64
    }
}

fn sample_index(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u: f64 = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        u -= w;
        if u <= 0.0 {
            return i;
        }
    }
    weights.len() - 1
}

// ---------------------------------------------------------------------------
// Advisor implementation

/// Answers builder queries exactly from a `KnowledgeModel`.
pub struct OracleAdvisor {
    model: KnowledgeModel,
}

impl OracleAdvisor {
    /// The model must agree with the task schema: same labels, same
    /// features with the same kinds and categories.
    pub fn new(model: KnowledgeModel, task: &TaskSpec) -> Result<Self, OracleError> {
        if model.labels != task.target_labels {
            return Err(OracleError::TaskMismatch(format!(
                "model labels {:?} != task labels {:?}",
                model.labels, task.target_labels
            )));
        }
        if model.features.len() != task.features.len() {
            return Err(OracleError::TaskMismatch(format!(
                "model has {} features, task has {}",
                model.features.len(),
                task.features.len()
            )));
        }
        for mf in &model.features {
            let tf = task.feature(&mf.name).ok_or_else(|| {
                OracleError::TaskMismatch(format!("task lacks model feature {:?}", mf.name))
            })?;
            let compatible = match (&mf.kind, &tf.kind) {
                (FeatureKind::Numeric { dtype: a, .. }, FeatureKind::Numeric { dtype: b, .. }) => {
                    a == b
                }
                (
                    FeatureKind::Categorical { categories: a },
                    FeatureKind::Categorical { categories: b },
                ) => a == b,
                _ => false,
            };
            if !compatible {
                return Err(OracleError::TaskMismatch(format!(
                    "feature {:?} differs between model and task",
                    mf.name
                )));
            }
        }
        Ok(OracleAdvisor { model })
    }

    pub fn model(&self) -> &KnowledgeModel {
        &self.model
    }

    fn propose_numeric(
        &self,
        task: &TaskSpec,
        feature: &FeatureSpec,
        ctx: &BranchContext,
    ) -> Result<AdvisorAnswer, AdvisorError> {
        let fi = self
            .model
            .features
            .iter()
            .position(|f| f.name == feature.name)
            .expect("validated feature");
        let (lower, upper, cells) = match &self.model.tables[fi] {
            FeatureTable::Numeric {
                lower,
                upper,
                likelihood,
                ..
            } => (*lower, *upper, likelihood[0].len()),
            FeatureTable::Categorical { .. } => {
                unreachable!("numeric query on categorical feature")
            }
        };
        let iv = ctx
            .effective_interval(task, &feature.name)
            .expect("numeric feature");
        let width = (upper - lower) / cells as f64;

        let base = self.model.restrictions(task, ctx, None);
        let &Restriction::Interval(base_lo, base_hi) = &base[fi] else {
            unreachable!("numeric feature has an interval restriction");
        };
        let mut best: Option<(f64, f64)> = None; // (score, threshold)
        for i in 1..cells {
            let boundary = lower + width * i as f64;
            if !(iv.lower < boundary && boundary < iv.upper) {
                continue;
            }
            let left_r = Restriction::Interval(base_lo, base_hi.min(boundary));
            let right_r = Restriction::Interval(base_lo.max(boundary), base_hi);
            let dist_with = |restriction: &Restriction| -> Option<ProbabilityDistribution> {
                let weights: Vec<f64> = (0..self.model.labels.len())
                    .map(|l| {
                        let mut w = self.model.prior[l];
                        for (gi, r) in base.iter().enumerate() {
                            let r = if gi == fi { restriction } else { r };
                            w *= self.model.feature_mass(gi, l, r);
                        }
                        w
                    })
                    .collect();
                ProbabilityDistribution::from_weights(&self.model.labels, &weights).ok()
            };
            let (Some(left), Some(right)) = (dist_with(&left_r), dist_with(&right_r)) else {
                continue;
            };
            let score = split_score(&left, &right);
            let better = match best {
                None => true,
                Some((s, t)) => score < s || (score == s && boundary < t),
            };
            if better {
                best = Some((score, boundary));
            }
        }
        match best {
            Some((_, threshold)) => Ok(AdvisorAnswer::Threshold { value: threshold }),
            None => Err(AdvisorError::AdviceUnavailable {
                feature: feature.name.clone(),
            }),
        }
    }

    fn propose_categorical(
        &self,
        task: &TaskSpec,
        feature: &FeatureSpec,
        ctx: &BranchContext,
        allowed: &[String],
    ) -> Result<AdvisorAnswer, AdvisorError> {
        if allowed.len() < 2 {
            return Err(AdvisorError::AdviceUnavailable {
                feature: feature.name.clone(),
            });
        }
        let declared = feature.categories().expect("categorical feature");
        let score_of = |group: &[String]| -> Option<ProbabilityDistribution> {
            let sub = Constraint {
                feature: feature.name.clone(),
                body: ConstraintBody::CategoricalSubset {
                    allowed: group.to_vec(),
                },
            };
            self.model.posterior_for(task, ctx, Some(&sub)).ok()
        };

        // Candidate group pairs, each in declared category order.
        let candidates: Vec<(Vec<String>, Vec<String>)> = if allowed.len() <= 12 {
            let mut lex: Vec<String> = allowed.to_vec();
            lex.sort();
            let anchor = lex[0].clone();
            let rest: Vec<String> = lex[1..].to_vec();
            let mut out = Vec::new();
            for mask in 0..(1u32 << rest.len()).saturating_sub(1) {
                let mut group1 = vec![anchor.clone()];
                for (j, cat) in rest.iter().enumerate() {
                    if mask & (1 << j) != 0 {
                        group1.push(cat.clone());
                    }
                }
                let group2: Vec<String> = declared
                    .iter()
                    .filter(|c| allowed.contains(c) && !group1.contains(c))
                    .cloned()
                    .collect();
                let group1: Vec<String> = declared
                    .iter()
                    .filter(|c| group1.contains(c))
                    .cloned()
                    .collect();
                out.push((group1, group2));
            }
            out
        } else {
            // Too many categories for exhaustive search: order by the
            // posterior of the first label and cut the sorted list.
            let mut scored: Vec<(String, f64)> = allowed
                .iter()
                .map(|cat| {
                    let p = score_of(std::slice::from_ref(cat))
                        .map(|d| d.probs()[0])
                        .unwrap_or(0.0);
                    (cat.clone(), p)
                })
                .collect();
            scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            let ordered: Vec<String> = scored.into_iter().map(|(c, _)| c).collect();
            (1..ordered.len())
                .map(|cut| {
                    let g1: Vec<String> = declared
                        .iter()
                        .filter(|c| ordered[..cut].contains(c))
                        .cloned()
                        .collect();
                    let g2: Vec<String> = declared
                        .iter()
                        .filter(|c| ordered[cut..].contains(c))
                        .cloned()
                        .collect();
                    (g1, g2)
                })
                .collect()
        };

        let lex_key = |group: &[String]| -> Vec<String> {
            let mut sorted = group.to_vec();
            sorted.sort();
            sorted
        };
        let mut best: Option<(f64, Vec<String>, Vec<String>)> = None;
        for (group1, group2) in candidates {
            let (Some(left), Some(right)) = (score_of(&group1), score_of(&group2)) else {
                continue;
            };
            let score = split_score(&left, &right);
            let better = match &best {
                None => true,
                Some((s, g1, _)) => score < *s || (score == *s && lex_key(&group1) < lex_key(g1)),
            };
            if better {
                best = Some((score, group1, group2));
            }
        }
        match best {
            Some((_, group1, group2)) => Ok(AdvisorAnswer::Bipartition { group1, group2 }),
            None => Err(AdvisorError::AdviceUnavailable {
                feature: feature.name.clone(),
            }),
        }
    }
}

impl Advisor for OracleAdvisor {
    fn advise(&self, query: &AdvisorQuery<'_>) -> Result<AdvisorAnswer, AdvisorError> {
        match query {
            AdvisorQuery::ProposeNumericSplit { task, feature, ctx } => {
                self.propose_numeric(task, feature, ctx)
            }
            AdvisorQuery::ProposeCategoricalSplit {
                task,
                feature,
                ctx,
                allowed,
            } => self.propose_categorical(task, feature, ctx, allowed),
            AdvisorQuery::EstimateProbabilities {
                task,
                ctx,
                left,
                right,
                ..
            } => {
                let resolve = |division: &Division| match division {
                    Division::AllInstances => self.model.posterior_for(task, ctx, None),
                    Division::Narrowed(c) => self.model.posterior_for(task, ctx, Some(c)),
                };
                let left = resolve(left).map_err(|_| AdvisorError::ProbabilityUnavailable)?;
                let right = resolve(right).map_err(|_| AdvisorError::ProbabilityUnavailable)?;
                Ok(AdvisorAnswer::BranchDistributions { left, right })
            }
        }
    }

    fn info(&self) -> AdvisorInfo {
        AdvisorInfo {
            kind: "oracle".to_string(),
            model_name: None,
            deterministic: true,
        }
    }
}

// ---------------------------------------------------------------------------
// Model files

#[derive(Serialize, Deserialize)]
struct ModelDoc {
    labels: Vec<String>,
    prior: Vec<f64>,
    features: Vec<ModelFeatureDoc>,
}

#[derive(Serialize, Deserialize)]
struct ModelFeatureDoc {
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
    cells: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    categories: Option<Vec<String>>,
    likelihood: Vec<Vec<f64>>,
}

fn normalize_rows(rows: &[Vec<f64>], what: &str) -> Result<Vec<Vec<f64>>, OracleError> {
    rows.iter()
        .map(|row| {
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(OracleError::Format(format!(
                    "{what}: negative or non-finite entry"
                )));
            }
            let sum: f64 = row.iter().sum();
            if sum <= 0.0 {
                return Err(OracleError::Format(format!(
                    "{what}: a likelihood row sums to zero"
                )));
            }
            if (sum - 1.0).abs() > 1e-6 {
                return Err(OracleError::Format(format!(
                    "{what}: row sums to {sum}, expected 1"
                )));
            }
            // Rows already normalized stay bit-exact through a round trip.
            if (sum - 1.0).abs() < 1e-12 {
                return Ok(row.clone());
            }
            Ok(row.iter().map(|p| p / sum).collect())
        })
        .collect()
}

impl KnowledgeModel {
    pub fn from_json(text: &str) -> Result<Self, OracleError> {
        let doc: ModelDoc =
            serde_json::from_str(text).map_err(|e| OracleError::Format(e.to_string()))?;
        if doc.labels.len() < 2 {
            return Err(OracleError::Format("need at least 2 labels".to_string()));
        }
        if doc.prior.len() != doc.labels.len() {
            return Err(OracleError::Format(
                "prior length != label count".to_string(),
            ));
        }
        if doc.prior.iter().any(|p| !p.is_finite() || *p < 0.0)
            || doc.prior.iter().sum::<f64>() <= 0.0
        {
            return Err(OracleError::Format(
                "prior must be non-negative with positive sum".to_string(),
            ));
        }
        let prior_sum: f64 = doc.prior.iter().sum();
        let prior: Vec<f64> = if (prior_sum - 1.0).abs() < 1e-12 {
            doc.prior.clone()
        } else {
            doc.prior.iter().map(|p| p / prior_sum).collect()
        };

        let mut features = Vec::with_capacity(doc.features.len());
        let mut tables = Vec::with_capacity(doc.features.len());
        for f in &doc.features {
            match f.kind.as_str() {
                "numeric" => {
                    let (lower, upper) = match (f.lower, f.upper) {
                        (Some(lo), Some(hi)) if lo < hi => (lo, hi),
                        _ => {
                            return Err(OracleError::Format(format!(
                                "numeric feature {:?} needs lower < upper",
                                f.name
                            )))
                        }
                    };
                    let cells = f.cells.unwrap_or(64);
                    if cells < 2 {
                        return Err(OracleError::Format(format!(
                            "numeric feature {:?} needs at least 2 grid cells",
                            f.name
                        )));
                    }
                    if f.likelihood.len() != doc.labels.len()
                        || f.likelihood.iter().any(|row| row.len() != cells)
                    {
                        return Err(OracleError::Format(format!(
                            "feature {:?}: likelihood must be {} x {cells}",
                            f.name,
                            doc.labels.len()
                        )));
                    }
                    let dtype = match f.dtype.as_deref() {
                        Some("integer") => NumericDtype::Integer,
                        Some("real") | None => NumericDtype::Real,
                        Some(other) => {
                            return Err(OracleError::Format(format!("unknown dtype {other:?}")))
                        }
                    };
                    let likelihood = normalize_rows(&f.likelihood, &f.name)?;
                    let cum = cumulative(&likelihood);
                    features.push(
                        FeatureSpec::numeric(&f.name, dtype, Some(lower), Some(upper))
                            .map_err(|e| OracleError::Format(e.to_string()))?,
                    );
                    tables.push(FeatureTable::Numeric {
                        lower,
                        upper,
                        likelihood,
                        cum,
                    });
                }
                "categorical" => {
                    let cats = f.categories.as_ref().ok_or_else(|| {
                        OracleError::Format(format!(
                            "categorical feature {:?} needs categories",
                            f.name
                        ))
                    })?;
                    if f.likelihood.len() != doc.labels.len()
                        || f.likelihood.iter().any(|row| row.len() != cats.len())
                    {
                        return Err(OracleError::Format(format!(
                            "feature {:?}: likelihood must be {} x {}",
                            f.name,
                            doc.labels.len(),
                            cats.len()
                        )));
                    }
                    let refs: Vec<&str> = cats.iter().map(String::as_str).collect();
                    let likelihood = normalize_rows(&f.likelihood, &f.name)?;
                    features.push(
                        FeatureSpec::categorical(&f.name, &refs)
                            .map_err(|e| OracleError::Format(e.to_string()))?,
                    );
                    tables.push(FeatureTable::Categorical { likelihood });
                }
                other => {
                    return Err(OracleError::Format(format!(
                        "unknown feature type {other:?}"
                    )))
                }
            }
        }
        KnowledgeModel::assemble(doc.labels, prior, features, tables)
    }

    pub fn from_file(path: &Path) -> Result<Self, OracleError> {
        let text = std::fs::read_to_string(path)?;
        KnowledgeModel::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        let features = self
            .features
            .iter()
            .zip(&self.tables)
            .map(|(f, table)| match (&f.kind, table) {
                (
                    FeatureKind::Numeric { dtype, .. },
                    FeatureTable::Numeric {
                        lower,
                        upper,
                        likelihood,
                        ..
                    },
                ) => ModelFeatureDoc {
                    name: f.name.clone(),
                    kind: "numeric".to_string(),
                    dtype: Some(
                        match dtype {
                            NumericDtype::Integer => "integer",
                            NumericDtype::Real => "real",
                        }
                        .to_string(),
                    ),
                    lower: Some(*lower),
                    upper: Some(*upper),
                    cells: Some(likelihood[0].len()),
                    categories: None,
                    likelihood: likelihood.clone(),
                },
                (
                    FeatureKind::Categorical { categories },
                    FeatureTable::Categorical { likelihood },
                ) => ModelFeatureDoc {
                    name: f.name.clone(),
                    kind: "categorical".to_string(),
                    dtype: None,
                    lower: None,
                    upper: None,
                    cells: None,
                    categories: Some(categories.clone()),
                    likelihood: likelihood.clone(),
                },
                _ => unreachable!("feature and table kinds are aligned"),
            })
            .collect();
        let doc = ModelDoc {
            labels: self.labels.clone(),
            prior: self.prior.clone(),
            features,
        };
        serde_json::to_string_pretty(&doc).expect("model serializes")
    }
}

fn cumulative(likelihood: &[Vec<f64>]) -> Vec<Vec<f64>> {
    likelihood
        .iter()
        .map(|row| {
            let mut cum = Vec::with_capacity(row.len() + 1);
            let mut acc = 0.0;
            cum.push(0.0);
            for p in row {
                acc += p;
                cum.push(acc);
            }
            cum
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Random model generation

/// Shape of the generated class conditionals.
///
/// `Step` models have one dominant threshold-style risk factor plus
/// weaker secondary ones, the structure of the tabular problems the
/// method targets; greedy harmonic-mean splitting recovers the dominant
/// breakpoint and the label map, so built trees track the Bayes ceiling.
/// `Smooth` features are floor-lifted Gaussians whose tails reward
/// pathological sliver cuts, useful as a stress shape for structural
/// tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConditionalStyle {
    #[default]
    Step,
    Smooth,
}

#[derive(Debug, Clone)]
pub struct ModelGenConfig {
    pub features_min: usize,
    pub features_max: usize,
    pub grid_cells: usize,
    pub max_categories: usize,
    /// Fraction of features that are numeric, roughly.
    pub numeric_fraction: f64,
    pub style: ConditionalStyle,
}

impl Default for ModelGenConfig {
    fn default() -> Self {
        ModelGenConfig {
            features_min: 3,
            features_max: 6,
            grid_cells: 64,
            max_categories: 6,
            numeric_fraction: 0.6,
            style: ConditionalStyle::Step,
        }
    }
}

/// Draws a random binary-label naive-Bayes model with mixed feature
/// kinds. Deterministic per seed.
pub fn generate_model(seed: u64, cfg: &ModelGenConfig) -> KnowledgeModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<String> = vec!["class_a".to_string(), "class_b".to_string()];
    let w0: f64 = rng.random_range(0.5..1.0);
    let w1: f64 = rng.random_range(0.5..1.0);
    let prior = vec![w0 / (w0 + w1), w1 / (w0 + w1)];

    let n_features = rng.random_range(cfg.features_min..=cfg.features_max);
    let mut features = Vec::with_capacity(n_features);
    let mut tables = Vec::with_capacity(n_features);
    for fi in 0..n_features {
        let numeric = rng.random::<f64>() < cfg.numeric_fraction || fi == 0;
        if numeric {
            let (lower, upper) = (0.0, 100.0);
            let cells = cfg.grid_cells;
            let width = (upper - lower) / cells as f64;
            let likelihood: Vec<Vec<f64>> = match cfg.style {
                ConditionalStyle::Smooth => (0..labels.len())
                    .map(|_| {
                        let mean: f64 = rng.random_range(15.0..85.0);
                        let sigma: f64 = rng.random_range(8.0..28.0);
                        let raw: Vec<f64> = (0..cells)
                            .map(|c| {
                                let center = lower + (c as f64 + 0.5) * width;
                                let z = (center - mean) / sigma;
                                (-0.5 * z * z).exp() + 0.01
                            })
                            .collect();
                        let sum: f64 = raw.iter().sum();
                        raw.into_iter().map(|p| p / sum).collect()
                    })
                    .collect(),
                ConditionalStyle::Step => {
                    let step = rng.random_range(cells / 4..=3 * cells / 4);
                    // Feature 0 is the dominant risk factor; the rest are
                    // weak enough that no stack of them outweighs it.
                    let ratio: f64 = if fi == 0 {
                        rng.random_range(8.0..18.0)
                    } else {
                        rng.random_range(1.15..1.45)
                    };
                    let first_label_high_below = rng.random::<bool>();
                    (0..labels.len())
                        .map(|l| {
                            let high_below = (l == 0) == first_label_high_below;
                            let raw: Vec<f64> = (0..cells)
                                .map(|c| if (c < step) == high_below { ratio } else { 1.0 })
                                .collect();
                            let sum: f64 = raw.iter().sum();
                            raw.into_iter().map(|p| p / sum).collect()
                        })
                        .collect()
                }
            };
            let cum = cumulative(&likelihood);
            features.push(
                FeatureSpec::numeric(
                    &format!("num_{fi}"),
                    NumericDtype::Real,
                    Some(lower),
                    Some(upper),
                )
                .expect("valid feature"),
            );
            tables.push(FeatureTable::Numeric {
                lower,
                upper,
                likelihood,
                cum,
            });
        } else {
            let m = rng.random_range(3..=cfg.max_categories);
            let cats: Vec<String> = (0..m).map(|c| format!("cat_{fi}_{c}")).collect();
            let likelihood: Vec<Vec<f64>> = match cfg.style {
                ConditionalStyle::Smooth => (0..labels.len())
                    .map(|_| {
                        let raw: Vec<f64> = (0..m)
                            .map(|_| rng.random_range(-1.5f64..1.5).exp())
                            .collect();
                        let sum: f64 = raw.iter().sum();
                        raw.into_iter().map(|p| p / sum).collect()
                    })
                    .collect(),
                ConditionalStyle::Step => {
                    let ratio: f64 = rng.random_range(1.15..1.45);
                    // A non-trivial subset of categories is "high" for the
                    // first label and "low" for the second.
                    let mut high = vec![false; m];
                    while high.iter().all(|h| !h) || high.iter().all(|h| *h) {
                        for h in &mut high {
                            *h = rng.random::<bool>();
                        }
                    }
                    (0..labels.len())
                        .map(|l| {
                            let raw: Vec<f64> = high
                                .iter()
                                .map(|&h| if h == (l == 0) { ratio } else { 1.0 })
                                .collect();
                            let sum: f64 = raw.iter().sum();
                            raw.into_iter().map(|p| p / sum).collect()
                        })
                        .collect()
                }
            };
            let refs: Vec<&str> = cats.iter().map(String::as_str).collect();
            features.push(
                FeatureSpec::categorical(&format!("cat_{fi}"), &refs).expect("valid feature"),
            );
            tables.push(FeatureTable::Categorical { likelihood });
        }
    }
    KnowledgeModel::assemble(labels, prior, features, tables).expect("generated model is valid")
}

//! Recursive zero-shot tree construction.
//!
//! At each node: propose one split per active feature, estimate the label
//! distribution of both branches, score every candidate by the harmonic
//! mean of the branch Gini impurities, take the best, narrow the branch
//! context and recurse. A node becomes a leaf when the inherited
//! distribution is confident enough, the depth cap is reached, or no
//! feature yields usable advice.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{AdvisorError, BuildError, GatewayError};
use crate::gateway::{Advisor, AdvisorAnswer, AdvisorQuery, Division};
use crate::impurity::split_score;
use crate::schema::{
    render_context, BranchContext, Constraint, ConstraintBody, FeatureKind, FeatureSpec,
    ProbabilityDistribution, SplitSide, TaskSpec,
};
use crate::tree::{BuildMeta, DecisionTree, Split, TreeNode};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BuildConfig {
    pub max_depth: u32,
    /// A node whose inherited distribution reaches this probability for
    /// some label becomes a leaf (inclusive comparison).
    pub leaf_prob_threshold: f64,
    /// Attempts per advisor query on invalid model output.
    pub retry_limit: u32,
    /// Maximum concurrent advisor queries per node.
    pub concurrency: usize,
}

impl Default for BuildConfig {
    fn default() -> Self {
        BuildConfig {
            max_depth: 5,
            leaf_prob_threshold: 0.9,
            retry_limit: 3,
            concurrency: 4,
        }
    }
}

impl BuildConfig {
    pub fn validate(&self, task: &TaskSpec) -> Result<(), BuildError> {
        if self.max_depth < 1 {
            return Err(BuildError::BadConfig(
                "max_depth must be at least 1".to_string(),
            ));
        }
        let floor = 1.0 / task.target_labels.len() as f64;
        if !(self.leaf_prob_threshold > floor && self.leaf_prob_threshold <= 1.0) {
            return Err(BuildError::BadConfig(format!(
                "leaf_prob_threshold must be in ({floor}, 1], got {}",
                self.leaf_prob_threshold
            )));
        }
        if self.retry_limit < 1 {
            return Err(BuildError::BadConfig(
                "retry_limit must be at least 1".to_string(),
            ));
        }
        Ok(())
    }
}

/// A scored split proposal for one feature.
#[derive(Debug, Clone)]
pub struct SplitCandidate {
    pub feature: String,
    pub split: Split,
    pub left_dist: ProbabilityDistribution,
    pub right_dist: ProbabilityDistribution,
    pub score: f64,
}

/// Per-node trace kept while building, enough to audit the selection
/// afterwards. Not serialized with the tree.
#[derive(Debug, Clone, Default)]
pub struct BuildAudit {
    pub nodes: Vec<NodeAudit>,
}

#[derive(Debug, Clone)]
pub struct NodeAudit {
    pub depth: u32,
    pub context: String,
    /// (feature, score) for every surviving candidate, in selection order.
    pub candidates: Vec<(String, f64)>,
    pub chosen: Option<String>,
    pub max_prob: f64,
}

struct BuildState {
    audit: BuildAudit,
    low_confidence_leaves: u64,
}

/// Division pair for one side of a split.
fn split_divisions(feature: &str, split: &Split) -> (Division, Division) {
    match split {
        Split::Threshold { value } => (
            Division::Narrowed(Constraint {
                feature: feature.to_string(),
                body: ConstraintBody::NumericUpper {
                    threshold: *value,
                    inclusive: true,
                },
            }),
            Division::Narrowed(Constraint {
                feature: feature.to_string(),
                body: ConstraintBody::NumericLower {
                    threshold: *value,
                    inclusive: false,
                },
            }),
        ),
        Split::Bipartition { group1, group2 } => (
            Division::Narrowed(Constraint {
                feature: feature.to_string(),
                body: ConstraintBody::CategoricalSubset {
                    allowed: group1.clone(),
                },
            }),
            Division::Narrowed(Constraint {
                feature: feature.to_string(),
                body: ConstraintBody::CategoricalSubset {
                    allowed: group2.clone(),
                },
            }),
        ),
    }
}

/// Asks the advisor for the label distributions of the two divisions.
pub fn estimate_branches(
    task: &TaskSpec,
    ctx: &BranchContext,
    advisor: &dyn Advisor,
    left: &Division,
    right: &Division,
) -> Result<(ProbabilityDistribution, ProbabilityDistribution), AdvisorError> {
    let query = AdvisorQuery::EstimateProbabilities {
        task,
        ctx,
        prev_probs: &ctx.previous_probabilities,
        left,
        right,
    };
    match advisor.advise(&query)? {
        AdvisorAnswer::BranchDistributions { left, right } => Ok((left, right)),
        other => Err(AdvisorError::Gateway(GatewayError::BadResponse(format!(
            "estimation answered with {other:?}"
        )))),
    }
}

/// One feature's full proposal pipeline: split advice, then branch
/// estimation. `Ok(None)` means the feature is dropped at this node.
fn propose_for_feature(
    task: &TaskSpec,
    ctx: &BranchContext,
    feature: &FeatureSpec,
    advisor: &dyn Advisor,
) -> Result<Option<SplitCandidate>, BuildError> {
    let split = match &feature.kind {
        FeatureKind::Numeric { .. } => {
            let query = AdvisorQuery::ProposeNumericSplit { task, feature, ctx };
            match advisor.advise(&query) {
                Ok(AdvisorAnswer::Threshold { value }) => {
                    let iv = ctx
                        .effective_interval(task, &feature.name)
                        .expect("numeric feature has an interval");
                    if !(value.is_finite() && iv.lower < value && value < iv.upper) {
                        return Err(BuildError::AdvisorContract(format!(
                            "threshold {value} outside ({}, {}) for {}",
                            iv.lower, iv.upper, feature.name
                        )));
                    }
                    Split::Threshold { value }
                }
                Ok(other) => {
                    return Err(BuildError::AdvisorContract(format!(
                        "numeric split answered with {other:?}"
                    )))
                }
                Err(AdvisorError::AdviceUnavailable { .. })
                | Err(AdvisorError::ProbabilityUnavailable) => return Ok(None),
                Err(AdvisorError::Gateway(g)) => return Err(BuildError::Gateway(g)),
            }
        }
        FeatureKind::Categorical { .. } => {
            let allowed = ctx
                .allowed_categories(task, &feature.name)
                .expect("categorical feature has categories");
            let query = AdvisorQuery::ProposeCategoricalSplit {
                task,
                feature,
                ctx,
                allowed: &allowed,
            };
            match advisor.advise(&query) {
                Ok(AdvisorAnswer::Bipartition { group1, group2 }) => {
                    if !crate::gateway::is_exact_bipartition(&group1, &group2, &allowed) {
                        return Err(BuildError::AdvisorContract(format!(
                            "groups do not partition the allowed set for {}",
                            feature.name
                        )));
                    }
                    Split::Bipartition { group1, group2 }
                }
                Ok(other) => {
                    return Err(BuildError::AdvisorContract(format!(
                        "categorical split answered with {other:?}"
                    )))
                }
                Err(AdvisorError::AdviceUnavailable { .. })
                | Err(AdvisorError::ProbabilityUnavailable) => return Ok(None),
                Err(AdvisorError::Gateway(g)) => return Err(BuildError::Gateway(g)),
            }
        }
    };

    let (left, right) = split_divisions(&feature.name, &split);
    match estimate_branches(task, ctx, advisor, &left, &right) {
        Ok((left_dist, right_dist)) => {
            let score = split_score(&left_dist, &right_dist);
            Ok(Some(SplitCandidate {
                feature: feature.name.clone(),
                split,
                left_dist,
                right_dist,
                score,
            }))
        }
        Err(AdvisorError::ProbabilityUnavailable) | Err(AdvisorError::AdviceUnavailable { .. }) => {
            Ok(None)
        }
        Err(AdvisorError::Gateway(g)) => Err(BuildError::Gateway(g)),
    }
}

/// Proposes one candidate per active feature, querying the advisor with
/// up to `cfg.concurrency` features in flight. Features whose advice or
/// estimation fails are dropped at this node only. The result is sorted
/// by (score, feature name); an empty result is the `NoCandidates` error.
pub fn propose_candidates(
    task: &TaskSpec,
    ctx: &BranchContext,
    advisor: &dyn Advisor,
    cfg: &BuildConfig,
) -> Result<Vec<SplitCandidate>, BuildError> {
    let mut features = ctx.active_features(task);
    features.sort_by(|a, b| a.name.cmp(&b.name));
    if features.is_empty() {
        return Err(BuildError::NoCandidates);
    }

    type FeatureOutcome = Result<Option<SplitCandidate>, BuildError>;
    let results: Mutex<Vec<Option<FeatureOutcome>>> =
        Mutex::new((0..features.len()).map(|_| None).collect());
    let cursor = AtomicUsize::new(0);
    let workers = cfg.concurrency.clamp(1, features.len());

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = cursor.fetch_add(1, Ordering::SeqCst);
                if i >= features.len() {
                    break;
                }
                let outcome = propose_for_feature(task, ctx, features[i], advisor);
                results.lock().unwrap()[i] = Some(outcome);
            });
        }
    });

    let mut candidates = Vec::new();
    for slot in results.into_inner().unwrap() {
        match slot.expect("every feature was processed") {
            Ok(Some(candidate)) => candidates.push(candidate),
            Ok(None) => {}
            Err(e) => return Err(e),
        }
    }
    if candidates.is_empty() {
        return Err(BuildError::NoCandidates);
    }
    candidates.sort_by(|a, b| {
        a.score
            .total_cmp(&b.score)
            .then_with(|| a.feature.cmp(&b.feature))
    });
    Ok(candidates)
}

fn leaf_from(ctx: &BranchContext, cfg: &BuildConfig, state: &mut BuildState) -> TreeNode {
    let (label, max_prob) = ctx.previous_probabilities.max_entry();
    if max_prob < cfg.leaf_prob_threshold {
        state.low_confidence_leaves += 1;
    }
    TreeNode::Leaf {
        label: label.to_string(),
        probs: ctx.previous_probabilities.clone(),
    }
}

fn build_node(
    task: &TaskSpec,
    ctx: BranchContext,
    advisor: &dyn Advisor,
    cfg: &BuildConfig,
    state: &mut BuildState,
) -> Result<TreeNode, BuildError> {
    let (_, max_prob) = ctx.previous_probabilities.max_entry();
    let mut record = NodeAudit {
        depth: ctx.depth,
        context: render_context(&ctx),
        candidates: Vec::new(),
        chosen: None,
        max_prob,
    };

    if max_prob >= cfg.leaf_prob_threshold
        || ctx.depth >= cfg.max_depth
        || ctx.active_features(task).is_empty()
    {
        state.audit.nodes.push(record);
        return Ok(leaf_from(&ctx, cfg, state));
    }

    let candidates = match propose_candidates(task, &ctx, advisor, cfg) {
        Ok(candidates) => candidates,
        Err(BuildError::NoCandidates) => {
            state.audit.nodes.push(record);
            return Ok(leaf_from(&ctx, cfg, state));
        }
        Err(e) => return Err(e),
    };
    record.candidates = candidates
        .iter()
        .map(|c| (c.feature.clone(), c.score))
        .collect();

    let best = candidates.into_iter().next().expect("non-empty candidates");
    record.chosen = Some(best.feature.clone());
    state.audit.nodes.push(record);

    let contract = |e: crate::error::ContextError| {
        BuildError::AdvisorContract(format!("narrowing failed after validation: {e}"))
    };
    let (left_ctx, right_ctx) = match &best.split {
        Split::Threshold { value } => (
            ctx.narrow_numeric(task, &best.feature, *value, SplitSide::Left)
                .map_err(contract)?,
            ctx.narrow_numeric(task, &best.feature, *value, SplitSide::Right)
                .map_err(contract)?,
        ),
        Split::Bipartition { group1, group2 } => (
            ctx.narrow_categorical(task, &best.feature, group1)
                .map_err(contract)?,
            ctx.narrow_categorical(task, &best.feature, group2)
                .map_err(contract)?,
        ),
    };

    let left = build_node(
        task,
        left_ctx.descend(best.left_dist.clone()),
        advisor,
        cfg,
        state,
    )?;
    let right = build_node(
        task,
        right_ctx.descend(best.right_dist.clone()),
        advisor,
        cfg,
        state,
    )?;
    Ok(TreeNode::Internal {
        feature: best.feature,
        split: best.split,
        left: Box::new(left),
        right: Box::new(right),
        node_probs: ctx.previous_probabilities.clone(),
        score: best.score,
    })
}

/// Asks the advisor for the label base rates with no constraints, the
/// `{previous_probabilities}` of the root. Falls back to uniform when the
/// advisor cannot estimate; transport failures propagate.
fn root_prior(
    task: &TaskSpec,
    advisor: &dyn Advisor,
) -> Result<ProbabilityDistribution, BuildError> {
    let uniform = ProbabilityDistribution::uniform(&task.target_labels);
    let ctx = BranchContext::root(uniform.clone());
    let division = Division::AllInstances;
    match estimate_branches(task, &ctx, advisor, &division, &division) {
        Ok((left, _)) => Ok(left),
        Err(AdvisorError::AdviceUnavailable { .. }) | Err(AdvisorError::ProbabilityUnavailable) => {
            Ok(uniform)
        }
        Err(AdvisorError::Gateway(g)) => Err(BuildError::Gateway(g)),
    }
}

pub fn build_tree(
    task: &TaskSpec,
    advisor: &dyn Advisor,
    cfg: &BuildConfig,
) -> Result<DecisionTree, BuildError> {
    build_tree_with_audit(task, advisor, cfg).map(|(tree, _)| tree)
}

/// `build_tree` plus the per-node candidate trace, for tests and tooling
/// that verify the selection.
pub fn build_tree_with_audit(
    task: &TaskSpec,
    advisor: &dyn Advisor,
    cfg: &BuildConfig,
) -> Result<(DecisionTree, BuildAudit), BuildError> {
    cfg.validate(task)?;
    let prior = root_prior(task, advisor)?;
    let mut state = BuildState {
        audit: BuildAudit::default(),
        low_confidence_leaves: 0,
    };
    let root = build_node(task, BranchContext::root(prior), advisor, cfg, &mut state)?;

    let info = advisor.info();
    let stats = advisor.stats();
    let built_at_unix = if info.deterministic {
        None
    } else {
        Some(
            SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        )
    };
    let tree = DecisionTree {
        task: task.clone(),
        root,
        config: *cfg,
        meta: BuildMeta {
            advisor_kind: info.kind,
            model_name: info.model_name,
            total_completions: stats.completions,
            cache_hits: stats.cache_hits,
            built_at_unix,
            seed: None,
            low_confidence_leaves: state.low_confidence_leaves,
        },
    };
    Ok((tree, state.audit))
}

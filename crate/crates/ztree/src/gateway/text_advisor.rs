//! The prompt-and-parse implementation of `Advisor`.
//!
//! Every query builds its template prompt, runs the completion through
//! the gateway, and extracts a typed value deterministically with the
//! parser prompt as fallback. Output that parses but violates the query's
//! constraints is retried up to the configured limit, each retry
//! appending a corrective sentence that restates the violated constraint.

use std::sync::Arc;

use crate::error::{AdvisorError, GatewayError};
use crate::gateway::{
    Advisor, AdvisorAnswer, AdvisorInfo, AdvisorQuery, ChatPrompt, Division, Gateway, GatewayStats,
    PromptParams,
};
use crate::parse::{
    parse_bipartition_with_fallback, parse_numeric_with_fallback, parse_probability_with_fallback,
};
use crate::prompt::TemplateSet;
use crate::schema::{BranchContext, FeatureKind, FeatureSpec, ProbabilityDistribution, TaskSpec};

pub struct TextAdvisor {
    gateway: Arc<Gateway>,
    forge: TemplateSet,
    params: PromptParams,
    retry_limit: u32,
}

impl TextAdvisor {
    pub fn new(
        gateway: Arc<Gateway>,
        forge: TemplateSet,
        params: PromptParams,
        retry_limit: u32,
    ) -> Self {
        TextAdvisor {
            gateway,
            forge,
            params,
            retry_limit: retry_limit.max(1),
        }
    }

    fn with_corrective(prompt: &ChatPrompt, attempt: u32, correction: &str) -> ChatPrompt {
        if attempt == 0 {
            return prompt.clone();
        }
        let mut retry = prompt.clone();
        let user = &mut retry.messages[2].content;
        user.push_str(&format!(
            " Attempt {}: your previous answer was not usable. {}",
            attempt + 1,
            correction
        ));
        retry
    }

    fn propose_numeric(
        &self,
        task: &TaskSpec,
        feature: &FeatureSpec,
        ctx: &BranchContext,
    ) -> Result<AdvisorAnswer, AdvisorError> {
        let iv = ctx
            .effective_interval(task, &feature.name)
            .expect("numeric feature has an interval");
        let dtype = match feature.kind {
            FeatureKind::Numeric { dtype, .. } => dtype,
            FeatureKind::Categorical { .. } => unreachable!("numeric query on categorical feature"),
        };
        let base = self
            .forge
            .build_numeric_split(task, feature, ctx, &self.params)
            .map_err(|e| GatewayError::BadResponse(format!("prompt: {e}")))?;
        let mut correction = format!(
            "Answer with a single numeric value strictly greater than {} and strictly less than {}.",
            iv.lower, iv.upper
        );
        for attempt in 0..self.retry_limit {
            let prompt = Self::with_corrective(&base, attempt, &correction);
            let completion = self.gateway.complete(&prompt)?;
            let outcome = parse_numeric_with_fallback(
                &completion.text,
                &feature.name,
                dtype,
                &self.forge,
                &self.gateway,
                &self.params,
            )?;
            match outcome.value {
                Some(value) if iv.lower < value && value < iv.upper => {
                    return Ok(AdvisorAnswer::Threshold { value });
                }
                Some(value) => {
                    correction = format!(
                        "The value {value} violates the constraints: it must be strictly greater \
                         than {} and strictly less than {}.",
                        iv.lower, iv.upper
                    );
                }
                None => {
                    correction =
                        "Answer with exactly one numeric value and nothing else.".to_string();
                }
            }
        }
        Err(AdvisorError::AdviceUnavailable {
            feature: feature.name.clone(),
        })
    }

    fn propose_categorical(
        &self,
        task: &TaskSpec,
        feature: &FeatureSpec,
        ctx: &BranchContext,
        allowed: &[String],
    ) -> Result<AdvisorAnswer, AdvisorError> {
        let base = self
            .forge
            .build_categorical_split(task, feature, ctx, allowed, &self.params)
            .map_err(|e| GatewayError::BadResponse(format!("prompt: {e}")))?;
        let mut correction = format!(
            "Use every one of the possible categories ({}) exactly once across two disjoint, \
             non-empty groups.",
            allowed.join(", ")
        );
        for attempt in 0..self.retry_limit {
            let prompt = Self::with_corrective(&base, attempt, &correction);
            let completion = self.gateway.complete(&prompt)?;
            let outcome = parse_bipartition_with_fallback(
                &completion.text,
                &feature.name,
                allowed,
                &self.forge,
                &self.gateway,
                &self.params,
            )?;
            match outcome.value {
                Some((group1, group2)) => return Ok(AdvisorAnswer::Bipartition { group1, group2 }),
                None => {
                    correction = format!(
                        "The two groups must be disjoint, non-empty, and together use every \
                         possible category ({}) exactly once.",
                        allowed.join(", ")
                    );
                }
            }
        }
        Err(AdvisorError::AdviceUnavailable {
            feature: feature.name.clone(),
        })
    }

    fn estimate(
        &self,
        task: &TaskSpec,
        ctx: &BranchContext,
        prev_probs: &ProbabilityDistribution,
        left: &Division,
        right: &Division,
    ) -> Result<AdvisorAnswer, AdvisorError> {
        let left_text = left.render();
        let right_text = right.render();
        let base = self
            .forge
            .build_probability_estimate(
                task,
                ctx,
                prev_probs,
                &left_text,
                &right_text,
                &self.params,
            )
            .map_err(|e| GatewayError::BadResponse(format!("prompt: {e}")))?;
        let class_1 = task.target_labels[0].as_str();
        let class_2 = task.target_labels[1].as_str();
        let correction =
            "Give a probability between 0 and 1 for every label and every division.".to_string();
        'attempts: for attempt in 0..self.retry_limit {
            let prompt = Self::with_corrective(&base, attempt, &correction);
            let completion = self.gateway.complete(&prompt)?;
            let mut division_dists = Vec::with_capacity(2);
            for division_text in [&left_text, &right_text] {
                let mut weights = Vec::with_capacity(task.target_labels.len());
                for label in &task.target_labels {
                    let query = crate::parse::ProbabilityQuery {
                        label,
                        new_information: division_text,
                        instance_type: &task.instance_type,
                        class_examples: (class_1, class_2),
                    };
                    let outcome = parse_probability_with_fallback(
                        &completion.text,
                        &query,
                        &self.forge,
                        &self.gateway,
                        &self.params,
                    )?;
                    match outcome.value {
                        Some(p) => weights.push(p),
                        None => continue 'attempts,
                    }
                }
                match ProbabilityDistribution::from_weights(&task.target_labels, &weights) {
                    Ok(dist) => division_dists.push(dist),
                    Err(_) => continue 'attempts,
                }
            }
            let right_dist = division_dists.pop().expect("two divisions");
            let left_dist = division_dists.pop().expect("two divisions");
            return Ok(AdvisorAnswer::BranchDistributions {
                left: left_dist,
                right: right_dist,
            });
        }
        Err(AdvisorError::ProbabilityUnavailable)
    }
}

impl Advisor for TextAdvisor {
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
                prev_probs,
                left,
                right,
            } => self.estimate(task, ctx, prev_probs, left, right),
        }
    }

    fn info(&self) -> AdvisorInfo {
        AdvisorInfo {
            kind: format!("text:{}", self.gateway.backend_name()),
            model_name: Some(self.params.model_name.clone()),
            deterministic: self.gateway.is_deterministic(),
        }
    }

    fn stats(&self) -> GatewayStats {
        self.gateway.stats()
    }
}

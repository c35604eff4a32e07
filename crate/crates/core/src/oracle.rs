//! Ground-truth answers to the five question templates, computed directly
//! from plan trees.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{flatten, Plan, PlanId, StepId};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("step {0} does not occur in the plan")]
    UnknownStep(StepId),
    #[error("{} plans share the maximum count {count}: {}", plans.len(), plans.join(", "))]
    TieDetected { count: usize, plans: Vec<String> },
    #[error("comparison needs at least two contexts, got {0}")]
    TooFewContexts(usize),
    #[error("context {0:?} has no plans")]
    EmptyContext(String),
}

/// Whether counts include substeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CountMode {
    /// Top-level steps only.
    #[default]
    Main,
    /// Every step at every depth.
    Recursive,
}

impl std::str::FromStr for CountMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "main" => Ok(Self::Main),
            "recursive" => Ok(Self::Recursive),
            other => Err(format!("unknown count mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ListItem {
    pub depth: usize,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComparisonContext {
    pub name: String,
    pub plans: Vec<Plan>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComparisonAnswer {
    pub plan_id: PlanId,
    pub plan_label: String,
    pub count: usize,
    pub context: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NestedAnswer {
    Substeps(Vec<String>),
    NoSubsteps,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceAnswer {
    Next(String),
    EndOfPlan,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "answer")]
pub enum OracleAnswer {
    List(Vec<ListItem>),
    Count(usize),
    Comparison(ComparisonAnswer),
    Nested(NestedAnswer),
    Sequence(SequenceAnswer),
}

pub fn answer_list(plan: &Plan) -> Vec<ListItem> {
    flatten(plan)
        .into_iter()
        .map(|(depth, step)| ListItem {
            depth,
            label: step.label.clone(),
        })
        .collect()
}

pub fn answer_count(plan: &Plan, mode: CountMode) -> usize {
    match mode {
        CountMode::Main => plan.len(),
        CountMode::Recursive => flatten(plan).len(),
    }
}

/// The single plan with the most steps across every context.
pub fn answer_comparison(contexts: &[ComparisonContext], mode: CountMode) -> Result<ComparisonAnswer, OracleError> {
    if contexts.len() < 2 {
        return Err(OracleError::TooFewContexts(contexts.len()));
    }
    if let Some(empty) = contexts.iter().find(|c| c.plans.is_empty()) {
        return Err(OracleError::EmptyContext(empty.name.clone()));
    }
    let scored: Vec<(&ComparisonContext, &Plan, usize)> = contexts
        .iter()
        .flat_map(|c| c.plans.iter().map(move |p| (c, p, answer_count(p, mode))))
        .collect();
    let best = scored.iter().map(|(_, _, n)| *n).max().unwrap_or(0);
    let winners: Vec<_> = scored.iter().filter(|(_, _, n)| *n == best).collect();
    match winners.as_slice() {
        [(context, plan, count)] => Ok(ComparisonAnswer {
            plan_id: plan.id.clone(),
            plan_label: plan.label.clone(),
            count: *count,
            context: context.name.clone(),
        }),
        tied => Err(OracleError::TieDetected {
            count: best,
            plans: tied.iter().map(|(_, p, _)| p.label.clone()).collect(),
        }),
    }
}

pub fn answer_nested(plan: &Plan, step: &StepId) -> Result<NestedAnswer, OracleError> {
    let loc = plan
        .locate(step)
        .ok_or_else(|| OracleError::UnknownStep(step.clone()))?;
    Ok(match &loc.step().sub_plan {
        Some(sub) => NestedAnswer::Substeps(sub.steps.iter().map(|s| s.label.clone()).collect()),
        None => NestedAnswer::NoSubsteps,
    })
}

/// Next sibling within the same (sub-)plan; never descends or climbs.
pub fn answer_sequence(plan: &Plan, step: &StepId) -> Result<SequenceAnswer, OracleError> {
    let loc = plan
        .locate(step)
        .ok_or_else(|| OracleError::UnknownStep(step.clone()))?;
    Ok(match loc.next() {
        Some(next) => SequenceAnswer::Next(next.label.clone()),
        None => SequenceAnswer::EndOfPlan,
    })
}

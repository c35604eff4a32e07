//! Procedure trees: plans made of ordered steps, where a step may be
//! decomposed into a sub-plan.
//!
//! The successor relation between steps is the order of [`Plan::steps`], so a
//! plan is always a single linear chain; the first step has no predecessor and
//! the last step has no successor.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IdError {
    #[error("identifier is empty")]
    Empty,
    #[error("identifier {0:?} contains characters outside [A-Za-z0-9_]")]
    InvalidChar(String),
}

fn check_token(value: &str) -> Result<(), IdError> {
    if value.is_empty() {
        return Err(IdError::Empty);
    }
    if !value.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
        return Err(IdError::InvalidChar(value.to_string()));
    }
    Ok(())
}

fn join_path(path: &[u32]) -> String {
    path.iter().map(u32::to_string).collect::<Vec<_>>().join("_")
}

/// Parses the `11_3_4` tail of an identifier back into a number path.
fn parse_path(tail: &str) -> Option<Vec<u32>> {
    if tail.is_empty() {
        return None;
    }
    tail.split('_').map(|part| part.parse().ok()).collect()
}

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(try_from = "String", into = "String")]
        pub struct $name(String);

        impl $name {
            pub fn new(value: impl Into<String>) -> Result<Self, IdError> {
                let value = value.into();
                check_token(&value)?;
                Ok(Self(value))
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl TryFrom<String> for $name {
            type Error = IdError;
            fn try_from(value: String) -> Result<Self, IdError> {
                Self::new(value)
            }
        }

        impl From<$name> for String {
            fn from(id: $name) -> String {
                id.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl std::str::FromStr for $name {
            type Err = IdError;
            fn from_str(s: &str) -> Result<Self, IdError> {
                Self::new(s)
            }
        }
    };
}

id_type!(
    /// Identifier of a plan, e.g. `Plan11_3_4`.
    PlanId
);
id_type!(
    /// Identifier of a step, e.g. `Step11_3_3` or `SubStep11_3_4_1`.
    StepId
);

impl PlanId {
    /// Plan decomposing the step numbered `path`: `[11, 3, 4]` gives `Plan11_3_4`.
    pub fn for_path(path: &[u32]) -> Self {
        if path.is_empty() {
            return Self::root(&[]);
        }
        Self(format!("Plan{}", join_path(path)))
    }

    /// Top-level plan whose steps share the numbering prefix `prefix`.
    /// Lists numbered from 1 have no shared prefix and get `Plan0`.
    pub fn root(prefix: &[u32]) -> Self {
        if prefix.is_empty() {
            Self("Plan0".to_string())
        } else {
            Self(format!("Plan{}", join_path(prefix)))
        }
    }

    pub fn number_path(&self) -> Option<Vec<u32>> {
        self.0.strip_prefix("Plan").and_then(parse_path)
    }
}

impl StepId {
    /// `Step` prefix at depth 0, `SubStep` below.
    pub fn for_path(path: &[u32], depth: usize) -> Self {
        let prefix = if depth == 0 { "Step" } else { "SubStep" };
        Self(format!("{prefix}{}", join_path(path)))
    }

    /// Recovers the source numbering from `Step11_3_3`-style identifiers.
    pub fn number_path(&self) -> Option<Vec<u32>> {
        let tail = self.0.strip_prefix("SubStep").or_else(|| self.0.strip_prefix("Step"))?;
        parse_path(tail)
    }

    /// Dotted display form (`Step 11.3.4`), falling back to the raw id.
    pub fn display_reference(&self) -> String {
        match self.number_path() {
            Some(path) => format!("Step {}", path.iter().map(u32::to_string).collect::<Vec<_>>().join(".")),
            None => self.0.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantifierKind {
    Temporal,
    Spatial,
    Quantitative,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Quantifier {
    pub kind: QuantifierKind,
    pub value: String,
}

/// Descriptive attributes of a simple step. Nothing in this crate extracts
/// these from text; they are carried for callers that annotate by hand.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepAnnotation {
    pub actions: Vec<String>,
    pub component: Option<String>,
    pub tool: Option<String>,
    pub product_or_system: Option<String>,
    pub quantifiers: Vec<Quantifier>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub id: StepId,
    /// Short title.
    pub label: String,
    /// Instruction prose; may be empty.
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub body: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sub_plan: Option<Box<Plan>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotation: Option<StepAnnotation>,
}

impl Step {
    pub fn new(id: StepId, label: impl Into<String>) -> Self {
        Self {
            id,
            label: label.into(),
            body: String::new(),
            sub_plan: None,
            annotation: None,
        }
    }

    pub fn with_body(mut self, body: impl Into<String>) -> Self {
        self.body = body.into();
        self
    }

    pub fn with_sub_plan(mut self, plan: Plan) -> Self {
        self.sub_plan = Some(Box::new(plan));
        self
    }

    pub fn is_simple(&self) -> bool {
        self.sub_plan.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plan {
    pub id: PlanId,
    pub label: String,
    /// Steps in execution order.
    pub steps: Vec<Step>,
}

/// Where a step sits inside a plan tree.
#[derive(Debug, Clone, Copy)]
pub struct StepLocation<'a> {
    pub plan: &'a Plan,
    pub index: usize,
    pub depth: usize,
}

impl<'a> StepLocation<'a> {
    pub fn step(&self) -> &'a Step {
        &self.plan.steps[self.index]
    }

    pub fn next(&self) -> Option<&'a Step> {
        self.plan.steps.get(self.index + 1)
    }
}

impl Plan {
    pub fn new(id: PlanId, label: impl Into<String>, steps: Vec<Step>) -> Self {
        Self {
            id,
            label: label.into(),
            steps,
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn first_step(&self) -> Option<&Step> {
        self.steps.first()
    }

    pub fn last_step(&self) -> Option<&Step> {
        self.steps.last()
    }

    /// Depth-first search for a step anywhere in the tree.
    pub fn locate(&self, id: &StepId) -> Option<StepLocation<'_>> {
        fn go<'a>(plan: &'a Plan, id: &StepId, depth: usize) -> Option<StepLocation<'a>> {
            for (index, step) in plan.steps.iter().enumerate() {
                if &step.id == id {
                    return Some(StepLocation { plan, index, depth });
                }
                if let Some(sub) = &step.sub_plan {
                    if let Some(found) = go(sub, id, depth + 1) {
                        return Some(found);
                    }
                }
            }
            None
        }
        go(self, id, 0)
    }

    /// Every plan in the tree, this one first, in depth-first order.
    pub fn plans(&self) -> Vec<&Plan> {
        let mut out = vec![self];
        for step in &self.steps {
            if let Some(sub) = &step.sub_plan {
                out.extend(sub.plans());
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProcedureKind {
    /// Only simple steps.
    Atomic,
    /// At least one step refers to a sub-plan.
    Composed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ViolationKind {
    EmptyPlan,
    DuplicateId { id: String },
    DecompositionCycle { plan: PlanId },
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ViolationKind::EmptyPlan => f.write_str("plan has no steps"),
            ViolationKind::DuplicateId { id } => write!(f, "duplicate id {id}"),
            ViolationKind::DecompositionCycle { plan } => {
                write!(f, "decomposition cycle through {plan}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    /// Slash-separated ids from the root plan to the offending node.
    pub path: String,
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.kind)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let lines: Vec<String> = self.violations.iter().map(Violation::to_string).collect();
        f.write_str(&lines.join("; "))
    }
}

/// Collects every invariant violation in the tree. Plan and step ids share
/// one namespace, since both become IRIs in the same graph.
pub fn validate(plan: &Plan) -> ValidationReport {
    struct Walker {
        seen: BTreeMap<String, usize>,
        first_path: HashSet<String>,
        violations: Vec<Violation>,
    }

    impl Walker {
        fn note_id(&mut self, id: &str, path: &str) {
            let count = self.seen.entry(id.to_string()).or_insert(0);
            *count += 1;
            if *count == 2 {
                self.violations.push(Violation {
                    path: path.to_string(),
                    kind: ViolationKind::DuplicateId { id: id.to_string() },
                });
            }
        }

        fn walk(&mut self, plan: &Plan, ancestors: &mut Vec<PlanId>, prefix: &str) {
            let path = if prefix.is_empty() {
                plan.id.to_string()
            } else {
                format!("{prefix}/{}", plan.id)
            };
            if ancestors.contains(&plan.id) {
                self.violations.push(Violation {
                    path,
                    kind: ViolationKind::DecompositionCycle { plan: plan.id.clone() },
                });
                return;
            }
            self.first_path.insert(path.clone());
            self.note_id(plan.id.as_str(), &path);
            if plan.steps.is_empty() {
                self.violations.push(Violation {
                    path: path.clone(),
                    kind: ViolationKind::EmptyPlan,
                });
            }
            ancestors.push(plan.id.clone());
            for step in &plan.steps {
                let step_path = format!("{path}/{}", step.id);
                self.note_id(step.id.as_str(), &step_path);
                if let Some(sub) = &step.sub_plan {
                    self.walk(sub, ancestors, &step_path);
                }
            }
            ancestors.pop();
        }
    }

    let mut walker = Walker {
        seen: BTreeMap::new(),
        first_path: HashSet::new(),
        violations: Vec::new(),
    };
    walker.walk(plan, &mut Vec::new(), "");
    ValidationReport {
        violations: walker.violations,
    }
}

pub fn classify(plan: &Plan) -> ProcedureKind {
    if plan.steps.iter().any(|s| s.sub_plan.is_some()) {
        ProcedureKind::Composed
    } else {
        ProcedureKind::Atomic
    }
}

/// Pre-order traversal: each step, then its substeps one level deeper.
pub fn flatten(plan: &Plan) -> Vec<(usize, &Step)> {
    fn go<'a>(plan: &'a Plan, depth: usize, out: &mut Vec<(usize, &'a Step)>) {
        for step in &plan.steps {
            out.push((depth, step));
            if let Some(sub) = &step.sub_plan {
                go(sub, depth + 1, out);
            }
        }
    }
    let mut out = Vec::new();
    go(plan, 0, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sid(s: &str) -> StepId {
        StepId::new(s).unwrap()
    }

    fn pid(s: &str) -> PlanId {
        PlanId::new(s).unwrap()
    }

    fn leaf(id: &str) -> Step {
        Step::new(sid(id), id.to_lowercase())
    }

    #[test]
    fn ids_follow_source_numbering() {
        assert_eq!(PlanId::for_path(&[11, 3, 4]).as_str(), "Plan11_3_4");
        assert_eq!(StepId::for_path(&[11, 3, 3], 0).as_str(), "Step11_3_3");
        assert_eq!(StepId::for_path(&[11, 3, 4, 1], 1).as_str(), "SubStep11_3_4_1");
        assert_eq!(PlanId::root(&[]).as_str(), "Plan0");
        assert_eq!(PlanId::root(&[11, 3]).as_str(), "Plan11_3");
        assert_eq!(sid("SubStep11_3_4_1").number_path(), Some(vec![11, 3, 4, 1]));
        assert_eq!(sid("Step2").display_reference(), "Step 2");
        assert_eq!(sid("Prepare").number_path(), None);
    }

    #[test]
    fn ids_reject_bad_tokens() {
        assert_eq!(StepId::new(""), Err(IdError::Empty));
        assert!(matches!(StepId::new("Step 1"), Err(IdError::InvalidChar(_))));
        assert!(matches!(PlanId::new("Plan11.3"), Err(IdError::InvalidChar(_))));
    }

    #[test]
    fn single_step_plan_is_valid() {
        let plan = Plan::new(pid("Plan1"), "p", vec![leaf("Step1")]);
        assert!(validate(&plan).is_valid());
    }

    #[test]
    fn self_containing_decomposition_is_one_cycle() {
        let inner = Plan::new(pid("Plan1"), "again", vec![leaf("Step9")]);
        let plan = Plan::new(pid("Plan1"), "p", vec![leaf("Step1").with_sub_plan(inner)]);
        let report = validate(&plan);
        assert_eq!(report.violations.len(), 1, "{report}");
        assert!(matches!(
            report.violations[0].kind,
            ViolationKind::DecompositionCycle { .. }
        ));
        assert_eq!(report.violations[0].path, "Plan1/Step1/Plan1");
    }

    #[test]
    fn duplicate_step_id_matches_multiset_check() {
        let plan = Plan::new(
            pid("Plan0"),
            "p",
            vec![leaf("Step1"), leaf("Step2"), leaf("Step3"), leaf("Step2")],
        );
        // brute-force multiset of ids
        let ids: Vec<&str> = plan.steps.iter().map(|s| s.id.as_str()).collect();
        let dupes: Vec<&str> = ids
            .iter()
            .enumerate()
            .filter(|(i, id)| ids[..*i].contains(id) && ids[..*i].iter().filter(|x| x == id).count() == 1)
            .map(|(_, id)| *id)
            .collect();
        assert_eq!(dupes, vec!["Step2"]);

        let report = validate(&plan);
        assert_eq!(report.violations.len(), 1);
        assert_eq!(
            report.violations[0].kind,
            ViolationKind::DuplicateId { id: "Step2".into() }
        );
    }

    #[test]
    fn empty_plan_is_a_violation() {
        let plan = Plan::new(pid("Plan0"), "p", vec![]);
        assert_eq!(validate(&plan).violations[0].kind, ViolationKind::EmptyPlan);
    }

    #[test]
    fn classification() {
        let flat = Plan::new(pid("Plan0"), "p", vec![leaf("Step1"), leaf("Step2"), leaf("Step3")]);
        assert_eq!(classify(&flat), ProcedureKind::Atomic);

        let ten: Vec<Step> = (1..=10).map(|i| leaf(&format!("Step{i}"))).collect();
        assert_eq!(classify(&Plan::new(pid("Plan0"), "p", ten)), ProcedureKind::Atomic);

        let sub = Plan::new(
            pid("Plan11_3_4"),
            "Spindle Alignment Plan",
            vec![leaf("SubStep11_3_4_1")],
        );
        let composed = Plan::new(
            pid("Plan11_3"),
            "Motor Belts and Spindle Alignment",
            vec![leaf("Step11_3_3"), leaf("Step11_3_4").with_sub_plan(sub)],
        );
        assert_eq!(classify(&composed), ProcedureKind::Composed);
    }

    #[test]
    fn flatten_is_preorder() {
        let sub = Plan::new(pid("PlanA"), "a", vec![leaf("a1"), leaf("a2")]);
        let plan = Plan::new(pid("P"), "p", vec![leaf("A").with_sub_plan(sub), leaf("B")]);
        let got: Vec<(usize, &str)> = flatten(&plan).into_iter().map(|(d, s)| (d, s.id.as_str())).collect();
        assert_eq!(got, vec![(0, "A"), (1, "a1"), (1, "a2"), (0, "B")]);

        let two = Plan::new(pid("P"), "p", vec![leaf("A"), leaf("B")]);
        assert_eq!(flatten(&two).len(), 2);
        let one = Plan::new(pid("P"), "p", vec![leaf("S")]);
        assert_eq!(flatten(&one)[0].0, 0);
    }

    #[test]
    fn locate_and_next() {
        let sub = Plan::new(pid("PlanA"), "a", vec![leaf("a1"), leaf("a2")]);
        let plan = Plan::new(pid("P"), "p", vec![leaf("A").with_sub_plan(sub), leaf("B")]);
        let loc = plan.locate(&sid("a1")).unwrap();
        assert_eq!(loc.depth, 1);
        assert_eq!(loc.next().unwrap().id.as_str(), "a2");
        assert!(plan.locate(&sid("B")).unwrap().next().is_none());
        assert!(plan.locate(&sid("zz")).is_none());
        assert_eq!(plan.plans().len(), 2);
    }

    #[test]
    fn validate_is_repeatable() {
        let plan = Plan::new(pid("P"), "p", vec![leaf("A"), leaf("A")]);
        assert_eq!(validate(&plan), validate(&plan));
    }
}

use std::collections::{BTreeMap, BTreeSet, HashSet};

use super::{vocab, Graph, Iri, NamespaceTable, Object, RdfError, Triple, KHP_INSTANCE_NS};
use crate::model::{self, Plan, PlanId, Step, StepId};

fn instance(id: &str) -> Iri {
    Iri::prefixed("kh-p-instance", id)
}

fn term(abs: &str) -> Iri {
    NamespaceTable::standard()
        .contract(abs)
        .unwrap_or_else(|| Iri::full(abs))
}

/// Maps a plan tree onto the procedure vocabulary.
pub fn to_triples(plan: &Plan) -> Result<Graph, RdfError> {
    let report = model::validate(plan);
    if !report.is_valid() {
        return Err(RdfError::InvalidPlan(report.to_string()));
    }
    let mut graph = Graph::new(NamespaceTable::standard());
    emit_plan(plan, &mut graph);
    Ok(graph)
}

fn emit_plan(plan: &Plan, graph: &mut Graph) {
    let subject = instance(plan.id.as_str());
    let mut add = |p: &str, o: Object| {
        graph.insert(Triple::new(subject.clone(), term(p), o));
    };
    add(vocab::RDF_TYPE, Object::Iri(term(vocab::PLAN)));
    add(vocab::RDFS_LABEL, Object::Literal(plan.label.clone()));
    if let (Some(first), Some(last)) = (plan.first_step(), plan.last_step()) {
        add(vocab::STARTS_WITH, Object::Iri(instance(first.id.as_str())));
        add(vocab::ENDS_WITH, Object::Iri(instance(last.id.as_str())));
    }

    for (i, step) in plan.steps.iter().enumerate() {
        let s = instance(step.id.as_str());
        let mut add = |p: &str, o: Object| {
            graph.insert(Triple::new(s.clone(), term(p), o));
        };
        add(vocab::RDF_TYPE, Object::Iri(term(vocab::STEP)));
        add(vocab::RDFS_LABEL, Object::Literal(step.label.clone()));
        if !step.body.is_empty() {
            add(vocab::RDFS_COMMENT, Object::Literal(step.body.clone()));
        }
        add(vocab::IS_STEP_OF_PLAN, Object::Iri(instance(plan.id.as_str())));
        if let Some(next) = plan.steps.get(i + 1) {
            add(vocab::NEXT_STEP, Object::Iri(instance(next.id.as_str())));
        }
        if let Some(sub) = &step.sub_plan {
            add(vocab::IS_DECOMPOSED_AS_PLAN, Object::Iri(instance(sub.id.as_str())));
            emit_plan(sub, graph);
        }
    }
}

/// Resolved view of a graph used by the reader and the writers.
pub(super) struct Index {
    pub types: BTreeMap<String, BTreeSet<String>>,
    pub props: BTreeMap<(String, String), Vec<Object>>,
    pub iri_objects: BTreeMap<(String, String), Vec<String>>,
    pub namespaces: Vec<String>,
}

impl Index {
    pub fn new(graph: &Graph) -> Self {
        let mut types: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        let mut props: BTreeMap<(String, String), Vec<Object>> = BTreeMap::new();
        let mut iri_objects: BTreeMap<(String, String), Vec<String>> = BTreeMap::new();
        let resolve = |iri: &Iri| graph.resolve(iri).unwrap_or_else(|| iri.to_string());
        for t in &graph.triples {
            let s = resolve(&t.subject);
            let p = resolve(&t.predicate);
            match &t.object {
                Object::Iri(o) => {
                    let o = resolve(o);
                    if p == vocab::RDF_TYPE {
                        types.entry(s.clone()).or_default().insert(o.clone());
                    }
                    iri_objects.entry((s.clone(), p.clone())).or_default().push(o);
                }
                Object::Literal(_) => {}
            }
            props.entry((s, p)).or_default().push(t.object.clone());
        }
        for v in iri_objects.values_mut() {
            v.sort();
            v.dedup();
        }
        let mut namespaces: Vec<String> = graph.namespaces.iter().map(|(_, ns)| ns.to_string()).collect();
        namespaces.push(KHP_INSTANCE_NS.to_string());
        Self {
            types,
            props,
            iri_objects,
            namespaces,
        }
    }

    pub fn has_type(&self, s: &str, class: &str) -> bool {
        self.types.get(s).is_some_and(|t| t.contains(class))
    }

    pub fn objects(&self, s: &str, p: &str) -> &[String] {
        self.iri_objects
            .get(&(s.to_string(), p.to_string()))
            .map_or(&[], Vec::as_slice)
    }

    pub fn literal(&self, s: &str, p: &str) -> Option<&str> {
        self.props
            .get(&(s.to_string(), p.to_string()))?
            .iter()
            .find_map(|o| match o {
                Object::Literal(text) => Some(text.as_str()),
                Object::Iri(_) => None,
            })
    }

    pub fn plans(&self) -> Vec<&String> {
        self.types
            .iter()
            .filter(|(_, t)| t.contains(vocab::PLAN))
            .map(|(s, _)| s)
            .collect()
    }

    /// Plans that are not the decomposition of any step, ordered by id.
    pub fn top_plans(&self) -> Vec<String> {
        let decomposed: HashSet<&String> = self
            .iri_objects
            .iter()
            .filter(|((_, p), _)| p == vocab::IS_DECOMPOSED_AS_PLAN)
            .flat_map(|(_, o)| o)
            .collect();
        let mut tops: Vec<String> = self
            .plans()
            .into_iter()
            .filter(|p| !decomposed.contains(p))
            .cloned()
            .collect();
        tops.sort_by(|a, b| self.local(a).cmp(&self.local(b)).then(a.cmp(b)));
        tops
    }

    /// Identifier part of an absolute IRI.
    pub fn local(&self, iri: &str) -> String {
        if let Some(local) = self
            .namespaces
            .iter()
            .filter(|ns| iri.starts_with(ns.as_str()) && iri.len() > ns.len())
            .max_by_key(|ns| ns.len())
            .map(|ns| &iri[ns.len()..])
        {
            return local.to_string();
        }
        iri.rsplit(['#', '/', ':']).next().unwrap_or(iri).to_string()
    }
}

/// Subjects in writing order: each top-level plan, then its steps along the
/// chain with any sub-plan right after its step; leftovers sorted by id.
pub(super) fn ordered_subjects(graph: &Graph) -> Vec<&Iri> {
    let index = Index::new(graph);
    let mut by_abs: BTreeMap<String, BTreeSet<&Iri>> = BTreeMap::new();
    for t in &graph.triples {
        let abs = graph.resolve(&t.subject).unwrap_or_else(|| t.subject.to_string());
        by_abs.entry(abs).or_default().insert(&t.subject);
    }

    fn visit(index: &Index, plan: &str, seen: &mut Vec<String>, order: &mut Vec<String>) {
        if seen.iter().any(|s| s == plan) {
            return;
        }
        seen.push(plan.to_string());
        order.push(plan.to_string());
        let mut current = index.objects(plan, vocab::STARTS_WITH).first().cloned();
        while let Some(step) = current {
            if seen.contains(&step) {
                break;
            }
            seen.push(step.clone());
            order.push(step.clone());
            for sub in index.objects(&step, vocab::IS_DECOMPOSED_AS_PLAN) {
                visit(index, sub, seen, order);
            }
            current = index.objects(&step, vocab::NEXT_STEP).first().cloned();
        }
    }

    let mut seen = Vec::new();
    let mut order = Vec::new();
    for top in index.top_plans() {
        visit(&index, &top, &mut seen, &mut order);
    }
    let mut rest: Vec<&String> = by_abs.keys().filter(|k| !order.contains(k)).collect();
    rest.sort_by(|a, b| index.local(a).cmp(&index.local(b)).then(a.cmp(b)));

    order
        .iter()
        .chain(rest)
        .filter_map(|abs| by_abs.get(abs))
        .flat_map(|forms| forms.iter().copied())
        .collect()
}

/// Rebuilds every top-level plan from a graph. Step order follows
/// `nextStep` from the `startsWith` step and must end at `endsWith`.
pub fn from_triples(graph: &Graph) -> Result<Vec<Plan>, RdfError> {
    let index = Index::new(graph);

    const LINKS: [&str; 5] = [
        vocab::NEXT_STEP,
        vocab::IS_STEP_OF_PLAN,
        vocab::IS_DECOMPOSED_AS_PLAN,
        vocab::STARTS_WITH,
        vocab::ENDS_WITH,
    ];
    for ((s, p), objects) in &index.iri_objects {
        if !LINKS.contains(&p.as_str()) {
            continue;
        }
        if !index.types.contains_key(s) {
            return Err(RdfError::DanglingReference(s.clone()));
        }
        if let Some(o) = objects.iter().find(|o| !index.types.contains_key(*o)) {
            return Err(RdfError::DanglingReference(o.clone()));
        }
    }

    let mut plans = Vec::new();
    for top in index.top_plans() {
        let plan = build_plan(&index, &top, &mut Vec::new())?;
        let report = model::validate(&plan);
        if !report.is_valid() {
            return Err(RdfError::InvalidPlan(report.to_string()));
        }
        plans.push(plan);
    }
    Ok(plans)
}

fn single<'a>(index: &'a Index, s: &str, p: &str, plan: &str, what: &str) -> Result<Option<&'a String>, RdfError> {
    match index.objects(s, p) {
        [] => Ok(None),
        [one] => Ok(Some(one)),
        _ => Err(RdfError::BrokenChain {
            plan: plan.to_string(),
            reason: format!("{} has several {what} values", index.local(s)),
        }),
    }
}

fn build_plan(index: &Index, iri: &str, visiting: &mut Vec<String>) -> Result<Plan, RdfError> {
    let name = index.local(iri);
    if visiting.iter().any(|v| v == iri) {
        return Err(RdfError::BrokenChain {
            plan: name,
            reason: "plan is decomposed into itself".into(),
        });
    }
    let id = PlanId::new(name.clone()).map_err(|_| RdfError::InvalidId(iri.to_string()))?;
    let start =
        single(index, iri, vocab::STARTS_WITH, &name, "startsWith")?.ok_or_else(|| RdfError::MissingAnchor {
            plan: name.clone(),
            anchor: "startsWith",
        })?;
    let end = single(index, iri, vocab::ENDS_WITH, &name, "endsWith")?.ok_or_else(|| RdfError::MissingAnchor {
        plan: name.clone(),
        anchor: "endsWith",
    })?;

    visiting.push(iri.to_string());
    let mut chain: Vec<&String> = vec![start];
    let mut current = start;
    while current != end {
        let next =
            single(index, current, vocab::NEXT_STEP, &name, "nextStep")?.ok_or_else(|| RdfError::BrokenChain {
                plan: name.clone(),
                reason: format!(
                    "chain stops at {} before reaching {}",
                    index.local(current),
                    index.local(end)
                ),
            })?;
        if chain.contains(&next) {
            return Err(RdfError::BrokenChain {
                plan: name,
                reason: format!("nextStep cycle through {}", index.local(next)),
            });
        }
        chain.push(next);
        current = next;
    }
    if !index.objects(end, vocab::NEXT_STEP).is_empty() {
        return Err(RdfError::BrokenChain {
            plan: name,
            reason: format!("last step {} has a successor", index.local(end)),
        });
    }

    let mut steps = Vec::with_capacity(chain.len());
    for step_iri in chain {
        if !index.has_type(step_iri, vocab::STEP) {
            return Err(RdfError::BrokenChain {
                plan: name,
                reason: format!("{} is not a step", index.local(step_iri)),
            });
        }
        let owners = index.objects(step_iri, vocab::IS_STEP_OF_PLAN);
        if !owners.is_empty() && !owners.iter().any(|o| o == iri) {
            return Err(RdfError::BrokenChain {
                plan: name,
                reason: format!("{} belongs to another plan", index.local(step_iri)),
            });
        }
        let step_id = StepId::new(index.local(step_iri)).map_err(|_| RdfError::InvalidId(step_iri.clone()))?;
        let mut step = Step::new(step_id, index.literal(step_iri, vocab::RDFS_LABEL).unwrap_or_default())
            .with_body(index.literal(step_iri, vocab::RDFS_COMMENT).unwrap_or_default());
        if let Some(sub) = single(
            index,
            step_iri,
            vocab::IS_DECOMPOSED_AS_PLAN,
            &name,
            "isDecomposedAsPlan",
        )? {
            step = step.with_sub_plan(build_plan(index, sub, visiting)?);
        }
        steps.push(step);
    }
    visiting.pop();

    Ok(Plan::new(
        id,
        index.literal(iri, vocab::RDFS_LABEL).unwrap_or_default(),
        steps,
    ))
}

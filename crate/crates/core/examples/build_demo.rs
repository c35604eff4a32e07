//! Regenerates the shipped demo data under `demo/`:
//!
//! - `gold.txt` and `gold.ttl` for every corpus entry, from the procedure
//!   named in its `answers.toml`;
//! - `cassette.jsonl`, recorded from a scripted stand-in model that makes
//!   the kinds of mistakes chat models make on this task (chatter, full
//!   IRIs instead of prefixes, flattened substeps, invented steps);
//! - `golden/scores.json` and `golden/report.md`, from a replay run.
//!
//! The stand-in model is deterministic, so rerunning this reproduces the
//! committed files.
//!
//! ```text
//! cargo run -p proctm --example build_demo -- demo
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use sha2::{Digest, Sha256};

use proctm::harness::{
    lint_corpus, load_corpus, manual_context, oracle_answers, run_experiment, run_work_item, scores_json, work_items,
    write_run, Corpus, CorpusEntry, ExperimentSpec, GoldAnswers, WorkItem,
};
use proctm::llm::{ChatMessage, FakeBackend, RecordingBackend, ReplayBackend, Role};
use proctm::model::{Plan, Step};
use proctm::oracle::{answer_count, CountMode, NestedAnswer, OracleAnswer, SequenceAnswer};
use proctm::parser::{parse_document, render_text, ParseConfig};
use proctm::prompt::{OutputFormat, SettingKind, TemplateKind, Templates};
use proctm::rdf::{to_triples, write_turtle, Graph, Iri, NamespaceTable, Object, Triple};

fn main() {
    let root = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "demo".into()));
    write_gold_files(&root.join("corpus"));

    let corpus = load_corpus(&root.join("corpus")).expect("corpus loads");
    assert!(corpus.diagnostics.is_empty(), "{:?}", corpus.diagnostics);
    let issues = lint_corpus(&corpus);
    assert!(issues.is_empty(), "lint: {issues:#?}");

    let spec = ExperimentSpec::load(&root.join("experiment.toml")).expect("spec loads");
    let cassette = root.join("cassette.jsonl");
    record(&spec, &corpus, &cassette);

    let replay = ReplayBackend::open(&cassette).expect("cassette loads");
    let result = run_experiment(&spec, &corpus, &replay).expect("replay run");
    let golden = root.join("golden");
    fs::create_dir_all(&golden).unwrap();
    fs::write(golden.join("scores.json"), scores_json(&result)).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let run_dir = write_run(&result, tmp.path(), &spec.report).unwrap();
    fs::copy(run_dir.join("report.md"), golden.join("report.md")).unwrap();
    println!(
        "{} cells, {} conversations",
        result.cells.len(),
        result.transcripts.len()
    );
}

fn write_gold_files(corpus_root: &Path) {
    for domain in sorted_dirs(corpus_root) {
        for dir in sorted_dirs(&domain) {
            let manual = fs::read_to_string(dir.join("manual.txt")).unwrap();
            let answers: GoldAnswers = toml::from_str(&fs::read_to_string(dir.join("answers.toml")).unwrap()).unwrap();
            let plan = parse_document(&manual, &ParseConfig::default())
                .unwrap()
                .into_iter()
                .find(|p| p.label == answers.procedure)
                .unwrap_or_else(|| panic!("{}: no procedure {:?}", dir.display(), answers.procedure));
            fs::write(dir.join("gold.txt"), render_text(&plan)).unwrap();
            fs::write(dir.join("gold.ttl"), write_turtle(&to_triples(&plan).unwrap())).unwrap();
        }
    }
}

fn sorted_dirs(path: &Path) -> Vec<PathBuf> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(path)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    dirs
}

fn record(spec: &ExperimentSpec, corpus: &Corpus, cassette: &Path) {
    if cassette.exists() {
        fs::remove_file(cassette).unwrap();
    }
    let templates = Templates::builtin();
    for item in work_items(spec, corpus) {
        let sim = StandIn {
            item: item.clone(),
            corpus: corpus.clone(),
        };
        let backend = FakeBackend::from_fn(move |messages| Ok(sim.reply(messages)));
        let recorder = RecordingBackend::open(backend, cassette).unwrap();
        run_work_item(&item, corpus, spec, templates, &recorder);
    }
}

/// Scripted model for one conversation.
struct StandIn {
    item: WorkItem,
    corpus: Corpus,
}

fn kind_of(question: &str) -> TemplateKind {
    if question.contains("Context2:") {
        TemplateKind::Comparison
    } else if question.contains("list of the substeps") {
        TemplateKind::Nested
    } else if question.contains("list of the steps") {
        TemplateKind::List
    } else if question.contains("How many") {
        TemplateKind::Counting
    } else {
        TemplateKind::Sequence
    }
}

/// Chance of a mistake per setting: raw, definitions, two-shot.
fn error_rate(setting: SettingKind, rates: [f64; 3]) -> f64 {
    match setting {
        SettingKind::Raw => rates[0],
        SettingKind::OntologyDefinitions => rates[1],
        SettingKind::TwoShot => rates[2],
    }
}

fn strip_bodies(plan: &mut Plan) {
    for step in &mut plan.steps {
        step.body.clear();
        if let Some(sub) = &mut step.sub_plan {
            strip_bodies(sub);
        }
    }
}

/// Substeps become main steps, as in replies that lose the hierarchy.
fn flatten_levels(plan: &Plan) -> Plan {
    let mut steps: Vec<Step> = Vec::new();
    for step in &plan.steps {
        let mut top = step.clone();
        top.sub_plan = None;
        steps.push(top);
        if let Some(sub) = &step.sub_plan {
            steps.extend(sub.steps.iter().cloned());
        }
    }
    let steps = steps
        .into_iter()
        .enumerate()
        .map(|(i, mut s)| {
            s.id = proctm::model::StepId::for_path(&[i as u32 + 1], 0);
            s
        })
        .collect();
    Plan::new(proctm::model::PlanId::root(&[]), plan.label.clone(), steps)
}

fn reword(label: &str) -> String {
    label.replacen("the ", "", 1).replacen(" slowly", "", 1)
}

fn full_iris(graph: &Graph) -> Graph {
    let expand = |iri: &Iri| Iri::full(graph.resolve(iri).unwrap_or_else(|| iri.to_string()));
    let mut out = Graph::new(NamespaceTable::new());
    for t in &graph.triples {
        let object = match &t.object {
            Object::Iri(i) => Object::Iri(expand(i)),
            Object::Literal(s) => Object::Literal(s.clone()),
        };
        out.insert(Triple::new(expand(&t.subject), expand(&t.predicate), object));
    }
    out
}

/// Points each decomposed step's nextStep at its first substep.
fn link_into_substeps(graph: &mut Graph, plan: &Plan) {
    let inst = |id: &str| Iri::prefixed("kh-p-instance", id);
    let next = Iri::prefixed("kh-p", "nextStep");
    for (i, step) in plan.steps.iter().enumerate() {
        let Some(sub) = &step.sub_plan else { continue };
        if let Some(following) = plan.steps.get(i + 1) {
            graph.triples.remove(&Triple::new(
                inst(step.id.as_str()),
                next.clone(),
                Object::Iri(inst(following.id.as_str())),
            ));
        }
        graph.insert(Triple::new(
            inst(step.id.as_str()),
            next.clone(),
            Object::Iri(inst(sub.steps[0].id.as_str())),
        ));
    }
}

impl StandIn {
    fn entry(&self) -> &CorpusEntry {
        self.corpus.find(self.item.domain, &self.item.slug).unwrap()
    }

    fn rng(&self, kind: TemplateKind) -> StdRng {
        let digest = Sha256::digest(format!("{}:{kind}", self.item.file_stem()));
        StdRng::seed_from_u64(u64::from_le_bytes(digest[..8].try_into().unwrap()))
    }

    fn reply(&self, messages: &[ChatMessage]) -> String {
        let question = &messages.iter().rev().find(|m| m.role == Role::User).unwrap().content;
        let kind = kind_of(question);
        let mut rng = self.rng(kind);
        match kind {
            TemplateKind::List => self.list(&mut rng),
            TemplateKind::Counting => self.count(&mut rng),
            TemplateKind::Comparison => self.comparison(&mut rng),
            TemplateKind::Nested => self.nested(&mut rng),
            TemplateKind::Sequence => self.sequence(&mut rng),
        }
    }

    fn list(&self, rng: &mut StdRng) -> String {
        let entry = self.entry();
        let setting = self.item.setting;
        let mut plan = entry.gold_plan.clone();
        let exact = setting == SettingKind::TwoShot && rng.random_bool(0.5);
        if !exact {
            strip_bodies(&mut plan);
        }
        if setting == SettingKind::Raw && rng.random_bool(0.5) {
            plan = flatten_levels(&plan);
        }
        if setting != SettingKind::TwoShot {
            for step in &mut plan.steps {
                if rng.random_bool(0.3) {
                    step.label = reword(&step.label);
                }
            }
        }
        if setting == SettingKind::TwoShot && rng.random_bool(0.15) {
            let i = rng.random_range(0..plan.steps.len());
            plan.steps[i].label = "Inspect the unit for visible damage.".into();
        }
        let name = entry.procedure_name();
        match self.item.format {
            OutputFormat::PlainText => {
                let text = render_text(&plan);
                if setting == SettingKind::TwoShot {
                    text
                } else {
                    format!("Sure! Here are the steps of the \"{name}\" procedure:\n\n{text}\nLet me know if you need anything else.")
                }
            }
            OutputFormat::Ontologized => {
                let mut graph = to_triples(&plan).unwrap();
                let turtle = match setting {
                    SettingKind::Raw => write_turtle(&full_iris(&graph)),
                    SettingKind::OntologyDefinitions => {
                        if rng.random_bool(0.5) {
                            link_into_substeps(&mut graph, &plan);
                        }
                        write_turtle(&graph)
                    }
                    SettingKind::TwoShot => write_turtle(&graph),
                };
                let intro = if setting == SettingKind::TwoShot {
                    String::new()
                } else {
                    format!("Here is the \"{name}\" procedure in Turtle:\n\n")
                };
                format!("{intro}```turtle\n{turtle}```\n")
            }
        }
    }

    fn expected(&self, kind: TemplateKind) -> OracleAnswer {
        oracle_answers(self.entry(), &self.corpus)
            .remove(&kind)
            .unwrap()
            .unwrap()
    }

    fn count(&self, rng: &mut StdRng) -> String {
        let OracleAnswer::Count(right) = self.expected(TemplateKind::Counting) else {
            unreachable!()
        };
        let entry = self.entry();
        let wrong = rng.random_bool(error_rate(self.item.setting, [0.4, 0.25, 0.05]));
        let n = if !wrong {
            right
        } else {
            let other = match entry.answers.counting.mode {
                CountMode::Main => answer_count(&entry.gold_plan, CountMode::Recursive),
                CountMode::Recursive => answer_count(&entry.gold_plan, CountMode::Main),
            };
            if other != right {
                other
            } else {
                right + 1
            }
        };
        let name = entry.procedure_name();
        match rng.random_range(0..4) {
            0 => format!("There are {n} main steps in this procedure."),
            1 => format!("The \"{name}\" procedure consists of {n} steps."),
            2 => format!("{n}"),
            _ => format!("Counting the numbered items in the Context, the procedure has {n} steps."),
        }
    }

    fn comparison(&self, rng: &mut StdRng) -> String {
        let OracleAnswer::Comparison(right) = self.expected(TemplateKind::Comparison) else {
            unreachable!()
        };
        let entry = self.entry();
        let other = self
            .corpus
            .find(entry.domain, &entry.answers.comparison.against)
            .unwrap();
        let mut plans: Vec<(String, usize)> = [
            manual_context("Context1", &entry.manual),
            manual_context("Context2", &other.manual),
        ]
        .into_iter()
        .flat_map(|c| c.plans.into_iter().map(|p| (p.label.clone(), p.len())))
        .collect();
        plans.sort_by_key(|p| std::cmp::Reverse(p.1));
        let fig4 = plans.len() == 3
            && self.item.setting != SettingKind::TwoShot
            && self.item.domain.as_str() == "manufacturing";
        if fig4 {
            // the runner-up is named as the winner and the order is muddled
            let ranked: Vec<String> = [1, 0, 2]
                .iter()
                .map(|&i| format!("\"{}\" ({} main steps)", plans[i].0, plans[i].1))
                .collect();
            return format!(
                "Context1 has more steps in total than Context2.\n{} > {} > {}.",
                ranked[0], ranked[1], ranked[2]
            );
        }
        let wrong = rng.random_bool(error_rate(self.item.setting, [0.3, 0.2, 0.0])) && plans.len() > 1;
        let (label, count) = if wrong {
            plans[1].clone()
        } else {
            (right.plan_label.clone(), right.count)
        };
        format!("The procedure with the most main steps is \"{label}\" with {count} steps.")
    }

    fn nested(&self, rng: &mut StdRng) -> String {
        let expected = self.expected(TemplateKind::Nested);
        let entry = self.entry();
        let setting = self.item.setting;
        // the FM type case: an invented substep even with exemplars
        let invent = (entry.slug == "fm-sensor-install" && setting == SettingKind::TwoShot)
            || rng.random_bool(error_rate(setting, [0.25, 0.15, 0.0]));
        match expected {
            OracleAnswer::Nested(NestedAnswer::NoSubsteps) => {
                if setting == SettingKind::Raw && rng.random_bool(0.5) {
                    let step = entry.gold_plan.locate(&entry.answers.nested.step).unwrap().step();
                    format!(
                        "The substeps of this step are:\n1. {}\n2. Make sure the step is completed before continuing.",
                        step.label
                    )
                } else {
                    "no substeps".into()
                }
            }
            OracleAnswer::Nested(NestedAnswer::Substeps(labels)) => {
                let mut out: String = labels
                    .iter()
                    .enumerate()
                    .map(|(i, l)| format!("{}. {l}\n", i + 1))
                    .collect();
                if invent {
                    out.push_str(&format!(
                        "{}. Verify the installation with a test run.\n",
                        labels.len() + 1
                    ));
                }
                out
            }
            _ => unreachable!(),
        }
    }

    fn sequence(&self, rng: &mut StdRng) -> String {
        let expected = self.expected(TemplateKind::Sequence);
        let entry = self.entry();
        let setting = self.item.setting;
        let loc = entry.gold_plan.locate(&entry.answers.sequence.step).unwrap();
        let wrong = rng.random_bool(error_rate(setting, [0.3, 0.2, 0.05]));
        let note = if setting == SettingKind::TwoShot {
            ""
        } else {
            "\nNote: make sure the previous step has been completed before you continue."
        };
        match expected {
            OracleAnswer::Sequence(SequenceAnswer::Next(label)) => {
                let step = loc.step();
                let answer = match (&step.sub_plan, wrong) {
                    (Some(sub), true) => sub.steps[0].label.clone(),
                    (None, true) => loc
                        .plan
                        .steps
                        .get(loc.index + 2)
                        .map_or(label.clone(), |s| s.label.clone()),
                    _ => label,
                };
                format!("{answer}{note}")
            }
            OracleAnswer::Sequence(SequenceAnswer::EndOfPlan) => {
                if wrong || (loc.depth > 0 && setting == SettingKind::Raw) {
                    // climbs out of the sub-plan to the next main step
                    let parent_next = entry
                        .gold_plan
                        .steps
                        .iter()
                        .skip_while(|s| s.sub_plan.as_deref().is_none_or(|p| p.id != loc.plan.id))
                        .nth(1);
                    match parent_next {
                        Some(s) => format!("{}{note}", s.label),
                        None => "Store the equipment in a dry place.".into(),
                    }
                } else {
                    "There is no next step; this is the last step.".into()
                }
            }
            _ => unreachable!(),
        }
    }
}

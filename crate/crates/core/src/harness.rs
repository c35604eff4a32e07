//! Corpus loading, experiment runs, scoring and report tables.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{ChatBackend, ChatMessage, LlmError, ProviderConfig};
use crate::model::{Plan, StepId};
use crate::oracle::{
    answer_comparison, answer_count, answer_list, answer_nested, answer_sequence, ComparisonContext, CountMode,
    NestedAnswer, OracleAnswer, OracleError, SequenceAnswer,
};
use crate::parser::{parse_document, parse_procedure, ParseConfig};
use crate::prompt::{
    parse_response_with, render_answer, ungrounded_steps, Exemplar, LearningSetting, OutputFormat, ParsedAnswer,
    PromptError, PromptParams, PromptRequest, SettingKind, TemplateKind, Templates,
};
use crate::rdf::{from_triples, normalize, read_rdfxml, read_turtle, to_triples, write_turtle, Graph};
use crate::rouge::{render_percent, score_all, RougeReport, RougeScore, TokenizeConfig};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("no corpus entries under {}", .0.display())]
    EmptyCorpus(PathBuf),
    #[error("experiment spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Backend(#[from] LlmError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Photography,
    Medicine,
    Manufacturing,
    Agriculture,
}

impl Domain {
    /// Report order.
    pub const ALL: [Domain; 4] = [
        Domain::Photography,
        Domain::Medicine,
        Domain::Manufacturing,
        Domain::Agriculture,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Photography => "photography",
            Domain::Medicine => "medicine",
            Domain::Manufacturing => "manufacturing",
            Domain::Agriculture => "agriculture",
        }
    }

    fn title(self) -> &'static str {
        match self {
            Domain::Photography => "Photography",
            Domain::Medicine => "Medicine",
            Domain::Manufacturing => "Manufacturing",
            Domain::Agriculture => "Agriculture",
        }
    }
}

impl FromStr for Domain {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Domain::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| format!("unknown domain {s:?}"))
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountGold {
    #[serde(default)]
    pub mode: CountMode,
    pub answer: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComparisonGold {
    /// Slug of the entry whose manual is the second context, optionally
    /// qualified as `domain/slug`.
    pub against: String,
    pub winner: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NestedGold {
    pub step: StepId,
    /// Empty when the step has no substeps.
    #[serde(default)]
    pub substeps: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceGold {
    pub step: StepId,
    /// Absent when the step is the last one at its level.
    #[serde(default)]
    pub next: Option<String>,
}

/// Contents of `answers.toml`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldAnswers {
    pub procedure: String,
    pub counting: CountGold,
    pub comparison: ComparisonGold,
    pub nested: NestedGold,
    pub sequence: SequenceGold,
}

impl GoldAnswers {
    pub fn nested_answer(&self) -> NestedAnswer {
        if self.nested.substeps.is_empty() {
            NestedAnswer::NoSubsteps
        } else {
            NestedAnswer::Substeps(self.nested.substeps.clone())
        }
    }

    pub fn sequence_answer(&self) -> SequenceAnswer {
        match &self.sequence.next {
            Some(label) => SequenceAnswer::Next(label.clone()),
            None => SequenceAnswer::EndOfPlan,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusEntry {
    pub domain: Domain,
    pub slug: String,
    pub dir: PathBuf,
    pub manual: String,
    pub gold_text: String,
    /// Gold ontology file contents as written (Turtle or RDF/XML).
    pub gold_ontology: String,
    pub gold_graph: Graph,
    pub gold_plan: Plan,
    pub answers: GoldAnswers,
}

impl CorpusEntry {
    pub fn id(&self) -> String {
        format!("{}/{}", self.domain, self.slug)
    }

    pub fn procedure_name(&self) -> &str {
        &self.answers.procedure
    }

    /// Reference for ontologized ROUGE, always in Turtle.
    pub fn gold_turtle(&self) -> String {
        if self.gold_ontology.trim_start().starts_with('<') {
            write_turtle(&self.gold_graph)
        } else {
            self.gold_ontology.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub path: PathBuf,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path.display(), self.message)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub entries: Vec<CorpusEntry>,
    /// Entries that failed to load.
    pub diagnostics: Vec<Diagnostic>,
}

impl Corpus {
    pub fn find(&self, domain: Domain, reference: &str) -> Option<&CorpusEntry> {
        let (domain, slug) = match reference.split_once('/') {
            Some((d, s)) => (d.parse().ok()?, s),
            None => (domain, reference),
        };
        self.entries.iter().find(|e| e.domain == domain && e.slug == slug)
    }
}

fn sorted_dirs(path: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(path)
        .map_err(io_err(path))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    Ok(dirs)
}

/// Loads one `<domain>/<slug>/` directory.
pub fn load_entry(domain: Domain, dir: &Path) -> Result<CorpusEntry, String> {
    let read = |name: &str| fs::read_to_string(dir.join(name)).map_err(|e| format!("{name}: {e}"));
    let manual = read("manual.txt")?;
    let gold_text = read("gold.txt")?;
    let answers: GoldAnswers = toml::from_str(&read("answers.toml")?).map_err(|e| format!("answers.toml: {e}"))?;
    let (gold_ontology, gold_graph) = if dir.join("gold.ttl").exists() {
        let text = read("gold.ttl")?;
        let graph = read_turtle(&text).map_err(|e| format!("gold.ttl: {e}"))?;
        (text, graph)
    } else if dir.join("gold.rdf").exists() {
        let text = read("gold.rdf")?;
        let graph = read_rdfxml(&text).map_err(|e| format!("gold.rdf: {e}"))?;
        (text, graph)
    } else {
        return Err("missing gold.ttl or gold.rdf".into());
    };
    from_triples(&gold_graph).map_err(|e| format!("gold ontology: {e}"))?;
    let gold_plan = parse_procedure(&gold_text, &answers.procedure, &ParseConfig::default())
        .map_err(|e| format!("gold.txt: {e}"))?;
    parse_document(&manual, &ParseConfig::default()).map_err(|e| format!("manual.txt: {e}"))?;
    Ok(CorpusEntry {
        domain,
        slug: dir.file_name().unwrap_or_default().to_string_lossy().into_owned(),
        dir: dir.to_path_buf(),
        manual,
        gold_text,
        gold_ontology,
        gold_graph,
        gold_plan,
        answers,
    })
}

/// Reads `<root>/<domain>/<slug>/`. Broken entries are reported in
/// [`Corpus::diagnostics`] and skipped.
pub fn load_corpus(root: &Path) -> Result<Corpus, HarnessError> {
    let mut corpus = Corpus::default();
    let mut seen = 0;
    for domain_dir in sorted_dirs(root)? {
        let name = domain_dir
            .file_name()
            .unwrap_or_default()
            .to_string_lossy()
            .into_owned();
        let Ok(domain) = name.parse::<Domain>() else {
            corpus.diagnostics.push(Diagnostic {
                path: domain_dir,
                message: format!("unknown domain {name:?}"),
            });
            continue;
        };
        for dir in sorted_dirs(&domain_dir)? {
            seen += 1;
            match load_entry(domain, &dir) {
                Ok(entry) => corpus.entries.push(entry),
                Err(message) => corpus.diagnostics.push(Diagnostic { path: dir, message }),
            }
        }
    }
    if seen == 0 {
        return Err(HarnessError::EmptyCorpus(root.to_path_buf()));
    }
    Ok(corpus)
}

/// Every procedure found in a manual, as one comparison context.
pub fn manual_context(name: &str, manual: &str) -> ComparisonContext {
    ComparisonContext {
        name: name.into(),
        plans: parse_document(manual, &ParseConfig::default()).unwrap_or_default(),
    }
}

/// Ground truth for templates 2 to 5, from the gold plan and the manuals.
pub fn oracle_answers(entry: &CorpusEntry, corpus: &Corpus) -> BTreeMap<TemplateKind, Result<OracleAnswer, String>> {
    let plan = &entry.gold_plan;
    let a = &entry.answers;
    let mut out = BTreeMap::new();
    out.insert(TemplateKind::List, Ok(OracleAnswer::List(answer_list(plan))));
    out.insert(
        TemplateKind::Counting,
        Ok(OracleAnswer::Count(answer_count(plan, a.counting.mode))),
    );
    let comparison = match corpus.find(entry.domain, &a.comparison.against) {
        Some(other) => answer_comparison(
            &[
                manual_context("Context1", &entry.manual),
                manual_context("Context2", &other.manual),
            ],
            a.counting.mode,
        )
        .map(OracleAnswer::Comparison)
        .map_err(|e| e.to_string()),
        None => Err(format!("comparison partner {} not in corpus", a.comparison.against)),
    };
    out.insert(TemplateKind::Comparison, comparison);
    let err = |e: OracleError| e.to_string();
    out.insert(
        TemplateKind::Nested,
        answer_nested(plan, &a.nested.step)
            .map(OracleAnswer::Nested)
            .map_err(err),
    );
    out.insert(
        TemplateKind::Sequence,
        answer_sequence(plan, &a.sequence.step)
            .map(OracleAnswer::Sequence)
            .map_err(err),
    );
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LintIssue {
    pub entry: String,
    pub message: String,
}

/// Corpus consistency: gold text scores 100 against itself, the gold
/// ontology describes the gold text plan, and the stored answers agree with
/// the oracle.
pub fn lint_corpus(corpus: &Corpus) -> Vec<LintIssue> {
    let mut issues = Vec::new();
    for entry in &corpus.entries {
        let mut issue = |message: String| {
            issues.push(LintIssue {
                entry: entry.id(),
                message,
            })
        };
        for (text, config, what) in [
            (&entry.gold_text, TokenizeConfig::default(), "gold text"),
            (&entry.gold_turtle(), TokenizeConfig::ontology(), "gold ontology"),
        ] {
            let report: RougeReport<f64> = score_all(text, text, &config);
            if report.metrics().iter().any(|m| render_percent(m.f1) != "100.0") {
                issue(format!("{what} does not score 100.0 against itself"));
            }
        }
        match to_triples(&entry.gold_plan) {
            Ok(graph) if normalize(&graph) == normalize(&entry.gold_graph) => {}
            Ok(_) => issue("gold ontology differs from the plan in gold.txt".into()),
            Err(e) => issue(format!("gold plan: {e}")),
        }
        let oracle = oracle_answers(entry, corpus);
        let a = &entry.answers;
        let expected: [(TemplateKind, OracleAnswer); 3] = [
            (TemplateKind::Counting, OracleAnswer::Count(a.counting.answer)),
            (TemplateKind::Nested, OracleAnswer::Nested(a.nested_answer())),
            (TemplateKind::Sequence, OracleAnswer::Sequence(a.sequence_answer())),
        ];
        for (kind, want) in expected {
            match &oracle[&kind] {
                Ok(got) if *got == want => {}
                Ok(got) => issue(format!("{kind}: answers.toml has {want:?}, oracle gives {got:?}")),
                Err(e) => issue(format!("{kind}: {e}")),
            }
        }
        match &oracle[&TemplateKind::Comparison] {
            Ok(OracleAnswer::Comparison(c)) if c.plan_label == a.comparison.winner && c.count == a.comparison.count => {
            }
            Ok(got) => issue(format!(
                "comparison: answers.toml has {:?} ({}), oracle gives {got:?}",
                a.comparison.winner, a.comparison.count
            )),
            Err(e) => issue(format!("comparison: {e}")),
        }
    }
    issues
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExemplarPolicy {
    /// Two other entries of the evaluated entry's domain, falling back to
    /// other domains when the domain has fewer than three entries.
    #[default]
    SameDomain,
    /// Two other entries from any domain, in corpus order.
    CrossDomain,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    F1,
    Recall,
    Precision,
}

impl Metric {
    pub fn pick(self, score: &RougeScore<f64>) -> f64 {
        match self {
            Metric::F1 => score.f1,
            Metric::Recall => score.recall,
            Metric::Precision => score.precision,
        }
    }

    fn label(self) -> &'static str {
        match self {
            Metric::F1 => "F1",
            Metric::Recall => "recall",
            Metric::Precision => "precision",
        }
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "f1" => Ok(Self::F1),
            "recall" => Ok(Self::Recall),
            "precision" => Ok(Self::Precision),
            other => Err(format!("unknown metric {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportOptions {
    pub metric: Metric,
    /// Setting shown as zero-shot for each format.
    pub zero_shot_text: SettingKind,
    pub zero_shot_ontologized: SettingKind,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            metric: Metric::F1,
            zero_shot_text: SettingKind::Raw,
            zero_shot_ontologized: SettingKind::OntologyDefinitions,
        }
    }
}

impl ReportOptions {
    pub fn zero_shot(&self, format: OutputFormat) -> SettingKind {
        match format {
            OutputFormat::PlainText => self.zero_shot_text,
            OutputFormat::Ontologized => self.zero_shot_ontologized,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSpec {
    pub run_id: String,
    pub templates: Vec<TemplateKind>,
    pub settings: Vec<SettingKind>,
    pub formats: Vec<OutputFormat>,
    pub exemplar_policy: ExemplarPolicy,
    /// Concurrent conversations.
    pub parallelism: usize,
    /// Cut Sequence replies down to the step sentence before matching.
    pub strict_sequence: bool,
    pub provider: ProviderConfig,
    pub report: ReportOptions,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            run_id: "run".into(),
            templates: TemplateKind::ALL.to_vec(),
            settings: vec![SettingKind::Raw, SettingKind::OntologyDefinitions, SettingKind::TwoShot],
            formats: vec![OutputFormat::PlainText, OutputFormat::Ontologized],
            exemplar_policy: ExemplarPolicy::SameDomain,
            parallelism: 4,
            strict_sequence: false,
            provider: ProviderConfig::default(),
            report: ReportOptions::default(),
        }
    }
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let spec: ExperimentSpec = toml::from_str(text).map_err(|e| HarnessError::Spec(e.to_string()))?;
        spec.check()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        Self::from_toml(&fs::read_to_string(path).map_err(io_err(path))?)
    }

    fn check(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Spec(m.into()));
        if self.templates.is_empty() || self.settings.is_empty() || self.formats.is_empty() {
            return bad("templates, settings and formats must be non-empty");
        }
        if self.run_id.is_empty()
            || !self
                .run_id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
        {
            return bad("run_id must be non-empty and use only [A-Za-z0-9._-]");
        }
        if self.parallelism == 0 {
            return bad("parallelism must be at least 1");
        }
        self.provider.validate()?;
        Ok(())
    }

    /// Templates in conversation order.
    fn ordered_templates(&self) -> Vec<TemplateKind> {
        TemplateKind::ALL
            .into_iter()
            .filter(|k| self.templates.contains(k))
            .collect()
    }
}

/// The two exemplar entries for `entry`; never `entry` itself.
pub fn select_exemplars<'a>(
    entry: &CorpusEntry,
    corpus: &'a Corpus,
    policy: ExemplarPolicy,
) -> Option<[&'a CorpusEntry; 2]> {
    let others = corpus.entries.iter().filter(|e| e.id() != entry.id());
    let same: Vec<&CorpusEntry> = others.clone().filter(|e| e.domain == entry.domain).collect();
    let picked: Vec<&CorpusEntry> = match policy {
        ExemplarPolicy::SameDomain if same.len() >= 2 => same,
        ExemplarPolicy::SameDomain => same
            .into_iter()
            .chain(others.filter(|e| e.domain != entry.domain))
            .collect(),
        ExemplarPolicy::CrossDomain => others.collect(),
    };
    match picked.as_slice() {
        [a, b, ..] => Some([*a, *b]),
        _ => None,
    }
}

fn prompt_params(entry: &CorpusEntry, corpus: &Corpus, kind: TemplateKind, strict: bool) -> PromptParams {
    let a = &entry.answers;
    PromptParams {
        procedure_name: a.procedure.clone(),
        step: match kind {
            TemplateKind::Nested => Some(a.nested.step.clone()),
            TemplateKind::Sequence => Some(a.sequence.step.clone()),
            _ => None,
        },
        context2: (kind == TemplateKind::Comparison)
            .then(|| {
                corpus
                    .find(entry.domain, &a.comparison.against)
                    .map(|e| e.manual.clone())
            })
            .flatten(),
        count_mode: a.counting.mode,
        strict: strict && kind == TemplateKind::Sequence,
    }
}

fn gold_reply(entry: &CorpusEntry, corpus: &Corpus, kind: TemplateKind, format: OutputFormat) -> Option<String> {
    match kind {
        TemplateKind::List => Some(match format {
            OutputFormat::PlainText => entry.gold_text.clone(),
            OutputFormat::Ontologized => format!("```turtle\n{}```\n", entry.gold_turtle()),
        }),
        _ => oracle_answers(entry, corpus)
            .remove(&kind)
            .and_then(Result::ok)
            .map(|a| render_answer(&a, format)),
    }
}

/// Question and gold reply for one exemplar entry.
pub fn exemplar_for(
    exemplar: &CorpusEntry,
    corpus: &Corpus,
    kind: TemplateKind,
    format: OutputFormat,
    templates: &Templates,
) -> Result<Exemplar, HarnessError> {
    let req = PromptRequest {
        kind,
        setting: LearningSetting::Raw,
        format,
        context: exemplar.manual.clone(),
        params: prompt_params(exemplar, corpus, kind, false),
    };
    let question = templates.standalone_question(&req)?;
    let answer = gold_reply(exemplar, corpus, kind, format)
        .ok_or_else(|| HarnessError::Spec(format!("exemplar {} has no {kind} gold answer", exemplar.id())))?;
    Ok(Exemplar::new(question, answer)?)
}

/// One conversation: an entry asked every template under one setting and
/// format.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct WorkItem {
    pub domain: Domain,
    pub slug: String,
    pub setting: SettingKind,
    pub format: OutputFormat,
}

impl WorkItem {
    pub fn entry_id(&self) -> String {
        format!("{}/{}", self.domain, self.slug)
    }

    pub fn file_stem(&self) -> String {
        let format = match self.format {
            OutputFormat::PlainText => "text",
            OutputFormat::Ontologized => "ont",
        };
        format!("{}__{}__{}__{}", self.domain, self.slug, self.setting.as_str(), format)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Parsed,
    /// Reply had no recognizable answer; scored as a miss.
    Unparseable,
    /// Backend error; no reply.
    Failed,
    /// Earlier turn of the conversation failed.
    Skipped,
    /// Oracle could not answer (for example a tied comparison).
    IllPosed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub domain: Domain,
    pub slug: String,
    pub setting: SettingKind,
    pub format: OutputFormat,
    pub template: TemplateKind,
    pub status: CellStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Template 1 only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rouge: Option<RougeReport<f64>>,
    /// Template 1, ontologized only: both sides normalized first.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rouge_normalized: Option<RougeReport<f64>>,
    /// Templates 2 to 5.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exact_match: Option<bool>,
    /// Step texts not found in the manual.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub ungrounded: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub item: WorkItem,
    pub messages: Vec<ChatMessage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub run_id: String,
    pub cells: Vec<CellResult>,
    #[serde(skip)]
    pub transcripts: Vec<Transcript>,
}

/// Turtle text of a reply: the fenced block when present, else everything.
fn candidate_turtle(reply: &str) -> String {
    let start = reply.find("```");
    let block = start.and_then(|s| {
        let after = &reply[s + 3..];
        let body_start = after.find('\n')? + 1;
        let body = &after[body_start..];
        Some(body[..body.find("```").unwrap_or(body.len())].to_string())
    });
    block.unwrap_or_else(|| reply.to_string())
}

/// Enumerated lines of a plain-text reply, or the reply itself.
fn candidate_text(reply: &str) -> String {
    let lines: Vec<&str> = reply.lines().collect();
    let first = lines.iter().position(|l| crate::parser::list_item(l).is_some());
    let last = lines.iter().rposition(|l| crate::parser::list_item(l).is_some());
    match (first, last) {
        (Some(a), Some(b)) => lines[a..=b].join("\n"),
        _ => reply.to_string(),
    }
}

/// Canonical Turtle for a graph-bearing text, when it parses.
pub fn normalized_turtle(text: &str) -> Option<String> {
    read_turtle(text).ok().map(|g| write_turtle(&normalize(&g)))
}

/// ROUGE of a Template 1 reply: on the raw serialization, and for
/// ontologized replies also after normalizing both graphs.
pub fn score_list_reply(
    reply: &str,
    entry: &CorpusEntry,
    format: OutputFormat,
) -> (RougeReport<f64>, Option<RougeReport<f64>>) {
    match format {
        OutputFormat::PlainText => (
            score_all(&candidate_text(reply), &entry.gold_text, &TokenizeConfig::default()),
            None,
        ),
        OutputFormat::Ontologized => {
            let config = TokenizeConfig::ontology();
            let candidate = candidate_turtle(reply);
            let raw = score_all(&candidate, &entry.gold_turtle(), &config);
            let gold = write_turtle(&normalize(&entry.gold_graph));
            let normalized = match normalized_turtle(&candidate) {
                Some(c) => score_all(&c, &gold, &config),
                None => raw.clone(),
            };
            (raw, Some(normalized))
        }
    }
}

/// Builds the `LearningSetting` for one template of a work item.
fn learning_setting(
    item: &WorkItem,
    entry: &CorpusEntry,
    corpus: &Corpus,
    kind: TemplateKind,
    spec: &ExperimentSpec,
    templates: &Templates,
) -> Result<LearningSetting, HarnessError> {
    Ok(match item.setting {
        SettingKind::Raw => LearningSetting::Raw,
        SettingKind::OntologyDefinitions => LearningSetting::OntologyDefinitions,
        SettingKind::TwoShot => {
            let [a, b] = select_exemplars(entry, corpus, spec.exemplar_policy)
                .ok_or_else(|| HarnessError::Spec("corpus too small for two exemplars".into()))?;
            LearningSetting::two_shot(
                exemplar_for(a, corpus, kind, item.format, templates)?,
                exemplar_for(b, corpus, kind, item.format, templates)?,
            )
        }
    })
}

/// Runs one conversation against `backend`, asking the spec's templates in
/// order and scoring each reply.
pub fn run_work_item(
    item: &WorkItem,
    corpus: &Corpus,
    spec: &ExperimentSpec,
    templates: &Templates,
    backend: &dyn ChatBackend,
) -> (Vec<CellResult>, Transcript) {
    let entry = corpus
        .find(item.domain, &item.slug)
        .expect("work items come from the corpus");
    let oracle = oracle_answers(entry, corpus);
    let mut messages: Vec<ChatMessage> = Vec::new();
    let mut cells = Vec::new();
    let mut broken: Option<String> = None;

    for kind in spec.ordered_templates() {
        let cell = |status, error: Option<String>| CellResult {
            domain: item.domain,
            slug: item.slug.clone(),
            setting: item.setting,
            format: item.format,
            template: kind,
            status,
            error,
            rouge: None,
            rouge_normalized: None,
            exact_match: None,
            ungrounded: Vec::new(),
        };
        if let Some(reason) = &broken {
            cells.push(cell(CellStatus::Skipped, Some(reason.clone())));
            continue;
        }

        let turn = learning_setting(item, entry, corpus, kind, spec, templates).and_then(|setting| {
            let req = PromptRequest {
                kind,
                setting,
                format: item.format,
                context: entry.manual.clone(),
                params: prompt_params(entry, corpus, kind, spec.strict_sequence),
            };
            Ok(if messages.is_empty() {
                templates.build_prompt(&req)?
            } else {
                templates.follow_up(&req)?
            })
        });
        let turn = match turn {
            Ok(t) => t,
            Err(e) => {
                broken = Some(format!("{kind} prompt: {e}"));
                cells.push(cell(CellStatus::Failed, broken.clone()));
                continue;
            }
        };
        messages.extend(turn);
        let reply = match backend.complete(&messages, &spec.provider) {
            Ok(r) => r,
            Err(e) => {
                log::warn!("{} {kind}: {e}", item.file_stem());
                broken = Some(format!("{kind}: {e}"));
                cells.push(cell(CellStatus::Failed, Some(e.to_string())));
                continue;
            }
        };
        let text = reply.content.clone();
        messages.push(reply);

        let parsed = parse_response_with(kind, item.format, &text, spec.strict_sequence);
        let mut result = match &parsed {
            Ok(_) => cell(CellStatus::Parsed, None),
            Err(e) => cell(CellStatus::Unparseable, Some(e.to_string())),
        };
        if let Ok(answer) = &parsed {
            result.ungrounded = ungrounded_steps(&answer.step_texts(), &entry.manual);
        }
        if kind == TemplateKind::List {
            let (raw, normalized) = score_list_reply(&text, entry, item.format);
            result.rouge = Some(raw);
            result.rouge_normalized = normalized;
        } else {
            match &oracle[&kind] {
                Ok(expected) => {
                    result.exact_match = Some(parsed.as_ref().is_ok_and(|a: &ParsedAnswer| a.matches(expected)));
                }
                Err(reason) => {
                    result.status = CellStatus::IllPosed;
                    result.error = Some(reason.clone());
                }
            }
        }
        cells.push(result);
    }
    (
        cells,
        Transcript {
            item: item.clone(),
            messages,
        },
    )
}

/// Every (entry, setting, format) conversation the spec asks for.
pub fn work_items(spec: &ExperimentSpec, corpus: &Corpus) -> Vec<WorkItem> {
    let mut items = Vec::new();
    for entry in &corpus.entries {
        for &setting in &spec.settings {
            for &format in &spec.formats {
                items.push(WorkItem {
                    domain: entry.domain,
                    slug: entry.slug.clone(),
                    setting,
                    format,
                });
            }
        }
    }
    items.sort();
    items.dedup();
    items
}

pub fn run_experiment(
    spec: &ExperimentSpec,
    corpus: &Corpus,
    backend: &dyn ChatBackend,
) -> Result<RunResult, HarnessError> {
    spec.check()?;
    let templates = Templates::builtin();
    let items = work_items(spec, corpus);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.parallelism)
        .build()
        .map_err(|e| HarnessError::Spec(e.to_string()))?;
    let outputs: Vec<(Vec<CellResult>, Transcript)> = pool.install(|| {
        items
            .par_iter()
            .map(|item| run_work_item(item, corpus, spec, templates, backend))
            .collect()
    });
    let mut cells = Vec::new();
    let mut transcripts = Vec::new();
    for (c, t) in outputs {
        cells.extend(c);
        transcripts.push(t);
    }
    cells.sort_by(|a, b| {
        (a.domain, &a.slug, a.setting, a.format, a.template).cmp(&(b.domain, &b.slug, b.setting, b.format, b.template))
    });
    transcripts.sort_by(|a, b| a.item.cmp(&b.item));
    Ok(RunResult {
        run_id: spec.run_id.clone(),
        cells,
        transcripts,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Tally {
    pub hits: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingScores {
    /// Entries with a Template 1 score.
    pub n: usize,
    pub rouge: Option<RougeReport<f64>>,
    pub rouge_normalized: Option<RougeReport<f64>>,
    /// Templates 2 to 5.
    pub exact: BTreeMap<TemplateKind, Tally>,
    pub unparseable: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub domain: Domain,
    pub format: OutputFormat,
    pub settings: BTreeMap<SettingKind, SettingScores>,
}

fn mean_report(reports: &[&RougeReport<f64>]) -> Option<RougeReport<f64>> {
    if reports.is_empty() {
        return None;
    }
    let n = reports.len() as f64;
    let mean = |pick: fn(&RougeReport<f64>) -> &RougeScore<f64>| RougeScore {
        precision: reports.iter().map(|r| pick(r).precision).sum::<f64>() / n,
        recall: reports.iter().map(|r| pick(r).recall).sum::<f64>() / n,
        f1: reports.iter().map(|r| pick(r).f1).sum::<f64>() / n,
    };
    Some(RougeReport {
        rouge1: mean(|r| &r.rouge1),
        rouge2: mean(|r| &r.rouge2),
        rouge_l: mean(|r| &r.rouge_l),
        rouge_lsum: mean(|r| &r.rouge_lsum),
    })
}

/// Means per domain, format and setting; rows in report order.
pub fn aggregate(cells: &[CellResult]) -> Vec<ReportRow> {
    let mut groups: BTreeMap<(Domain, OutputFormat, SettingKind), Vec<&CellResult>> = BTreeMap::new();
    for cell in cells {
        groups
            .entry((cell.domain, cell.format, cell.setting))
            .or_default()
            .push(cell);
    }
    let mut rows: BTreeMap<(Domain, OutputFormat), ReportRow> = BTreeMap::new();
    for ((domain, format, setting), group) in groups {
        let raw: Vec<&RougeReport<f64>> = group.iter().filter_map(|c| c.rouge.as_ref()).collect();
        let normalized: Vec<&RougeReport<f64>> = group.iter().filter_map(|c| c.rouge_normalized.as_ref()).collect();
        let mut exact: BTreeMap<TemplateKind, Tally> = BTreeMap::new();
        for cell in &group {
            if cell.template == TemplateKind::List || cell.status == CellStatus::IllPosed {
                continue;
            }
            let tally = exact.entry(cell.template).or_default();
            tally.total += 1;
            tally.hits += usize::from(cell.exact_match == Some(true));
        }
        let scores = SettingScores {
            n: raw.len(),
            rouge: mean_report(&raw),
            rouge_normalized: mean_report(&normalized),
            exact,
            unparseable: group.iter().filter(|c| c.status == CellStatus::Unparseable).count(),
            failed: group
                .iter()
                .filter(|c| matches!(c.status, CellStatus::Failed | CellStatus::Skipped))
                .count(),
        };
        rows.entry((domain, format))
            .or_insert_with(|| ReportRow {
                domain,
                format,
                settings: BTreeMap::new(),
            })
            .settings
            .insert(setting, scores);
    }
    rows.into_values().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Markdown,
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "markdown" | "md" => Ok(Self::Markdown),
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            other => Err(format!("unknown report format {other:?}")),
        }
    }
}

const METRIC_HEADERS: [&str; 4] = ["Rouge1", "Rouge2", "RougeL", "Rouge-Lsum"];

fn metric_values(report: &RougeReport<f64>, metric: Metric) -> [String; 4] {
    report.metrics().map(|m| render_percent(metric.pick(m)))
}

fn row_values(row: &ReportRow, setting: SettingKind, metric: Metric, normalized: bool) -> Option<[String; 4]> {
    let scores = row.settings.get(&setting)?;
    let report = if normalized {
        scores.rouge_normalized.as_ref()
    } else {
        scores.rouge.as_ref()
    }?;
    Some(metric_values(report, metric))
}

fn dash4() -> [String; 4] {
    std::array::from_fn(|_| "-".to_string())
}

fn markdown_table(out: &mut String, header: &[String], rows: &[Vec<String>]) {
    out.push_str(&format!("| {} |\n", header.join(" | ")));
    out.push_str(&format!("|{}\n", header.iter().map(|_| "---|").collect::<String>()));
    for row in rows {
        out.push_str(&format!("| {} |\n", row.join(" | ")));
    }
}

/// Renders three tables: zero-shot ROUGE, zero-shot/2-shot ROUGE pairs,
/// and exact-match counts for templates 2 to 5.
pub fn emit_report(rows: &[ReportRow], format: ReportFormat, options: &ReportOptions) -> String {
    match format {
        ReportFormat::Markdown => emit_markdown(rows, options),
        ReportFormat::Csv => emit_csv(rows, options),
        ReportFormat::Json => serde_json::to_string_pretty(rows).expect("rows serialize") + "\n",
    }
}

fn emit_markdown(rows: &[ReportRow], options: &ReportOptions) -> String {
    let metric = options.metric;
    let mut out = String::new();
    let mut header: Vec<String> = vec!["Domain".into(), "Format".into(), "n".into()];
    header.extend(METRIC_HEADERS.iter().map(|h| h.to_string()));
    header.extend(METRIC_HEADERS.iter().map(|h| format!("{h} (norm.)")));

    let n_of = |row: &ReportRow, s: SettingKind| row.settings.get(&s).map_or(0, |x| x.n).to_string();

    out.push_str(&format!("## Zero-shot ROUGE ({}, ×100)\n\n", metric.label()));
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|row| {
            let zero = options.zero_shot(row.format);
            let mut cells = vec![
                row.domain.title().to_string(),
                row.format.as_str().to_string(),
                n_of(row, zero),
            ];
            cells.extend(row_values(row, zero, metric, false).unwrap_or_else(dash4));
            cells.extend(row_values(row, zero, metric, true).unwrap_or_else(dash4));
            cells
        })
        .collect();
    markdown_table(&mut out, &header, &table);

    out.push_str(&format!("\n## Zero-shot/2-shot ROUGE ({}, ×100)\n\n", metric.label()));
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|row| {
            let zero = options.zero_shot(row.format);
            let pair = |normalized: bool| -> [String; 4] {
                let a = row_values(row, zero, metric, normalized);
                let b = row_values(row, SettingKind::TwoShot, metric, normalized);
                match (a, b) {
                    (None, None) => dash4(),
                    (a, b) => {
                        let (a, b) = (a.unwrap_or_else(dash4), b.unwrap_or_else(dash4));
                        std::array::from_fn(|i| format!("{}/{}", a[i], b[i]))
                    }
                }
            };
            let mut cells = vec![
                row.domain.title().to_string(),
                row.format.as_str().to_string(),
                format!("{}/{}", n_of(row, zero), n_of(row, SettingKind::TwoShot)),
            ];
            cells.extend(pair(false));
            cells.extend(pair(true));
            cells
        })
        .collect();
    markdown_table(&mut out, &header, &table);

    out.push_str("\n## Exact match, templates 2-5 (hits/total)\n\n");
    let mut header: Vec<String> = vec!["Domain".into(), "Format".into(), "Setting".into()];
    header.extend(TemplateKind::ALL[1..].iter().map(|k| format!("T{} {}", k.number(), k)));
    header.extend(["Unparseable".to_string(), "Failed".to_string()]);
    let mut table = Vec::new();
    for row in rows {
        for (setting, scores) in &row.settings {
            let mut cells = vec![
                row.domain.title().to_string(),
                row.format.as_str().to_string(),
                setting.as_str().to_string(),
            ];
            cells.extend(TemplateKind::ALL[1..].iter().map(|k| {
                scores
                    .exact
                    .get(k)
                    .map_or("-".to_string(), |t| format!("{}/{}", t.hits, t.total))
            }));
            cells.push(scores.unparseable.to_string());
            cells.push(scores.failed.to_string());
            table.push(cells);
        }
    }
    markdown_table(&mut out, &header, &table);
    out
}

fn emit_csv(rows: &[ReportRow], options: &ReportOptions) -> String {
    let mut writer = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["domain", "format", "setting", "n"];
    header.extend(["rouge1", "rouge2", "rougeL", "rougeLsum"]);
    header.extend(["rouge1_norm", "rouge2_norm", "rougeL_norm", "rougeLsum_norm"]);
    writer.write_record(&header).expect("in-memory write");
    for row in rows {
        for (setting, scores) in &row.settings {
            let mut record = vec![
                row.domain.to_string(),
                row.format.as_str().to_string(),
                setting.as_str().to_string(),
                scores.n.to_string(),
            ];
            let blank = || std::array::from_fn::<String, 4, _>(|_| String::new());
            record.extend(
                scores
                    .rouge
                    .as_ref()
                    .map_or_else(blank, |r| metric_values(r, options.metric)),
            );
            record.extend(
                scores
                    .rouge_normalized
                    .as_ref()
                    .map_or_else(blank, |r| metric_values(r, options.metric)),
            );
            writer.write_record(&record).expect("in-memory write");
        }
    }
    String::from_utf8(writer.into_inner().expect("flush")).expect("utf-8")
}

/// Writes `transcripts/`, `scores.json` and `report.md` under
/// `<out>/<run-id>/` and returns that directory.
pub fn write_run(result: &RunResult, out: &Path, options: &ReportOptions) -> Result<PathBuf, HarnessError> {
    let dir = out.join(&result.run_id);
    let transcripts = dir.join("transcripts");
    fs::create_dir_all(&transcripts).map_err(io_err(&transcripts))?;
    for t in &result.transcripts {
        let path = transcripts.join(format!("{}.json", t.item.file_stem()));
        let text = serde_json::to_string_pretty(t).expect("transcript serializes") + "\n";
        fs::write(&path, text).map_err(io_err(&path))?;
    }
    let scores = dir.join("scores.json");
    fs::write(&scores, scores_json(result)).map_err(io_err(&scores))?;
    let report = dir.join("report.md");
    let text = format!(
        "# Evaluation report: {}\n\n{}",
        result.run_id,
        emit_report(&aggregate(&result.cells), ReportFormat::Markdown, options)
    );
    fs::write(&report, text).map_err(io_err(&report))?;
    Ok(dir)
}

pub fn scores_json(result: &RunResult) -> String {
    serde_json::to_string_pretty(result).expect("scores serialize") + "\n"
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rouge::RougeScore;

    fn report(v: f64) -> RougeReport<f64> {
        let s = RougeScore {
            precision: v,
            recall: v,
            f1: v,
        };
        RougeReport {
            rouge1: s.clone(),
            rouge2: s.clone(),
            rouge_l: s.clone(),
            rouge_lsum: s,
        }
    }

    fn list_cell(domain: Domain, slug: &str, setting: SettingKind, format: OutputFormat, v: f64) -> CellResult {
        CellResult {
            domain,
            slug: slug.into(),
            setting,
            format,
            template: TemplateKind::List,
            status: CellStatus::Parsed,
            error: None,
            rouge: Some(report(v)),
            rouge_normalized: (format == OutputFormat::Ontologized).then(|| report(v)),
            exact_match: None,
            ungrounded: Vec::new(),
        }
    }

    #[test]
    fn aggregate_means() {
        let cells = vec![
            list_cell(Domain::Medicine, "a", SettingKind::Raw, OutputFormat::PlainText, 0.8),
            list_cell(Domain::Medicine, "b", SettingKind::Raw, OutputFormat::PlainText, 0.9),
        ];
        let rows = aggregate(&cells);
        assert_eq!(rows.len(), 1);
        let scores = &rows[0].settings[&SettingKind::Raw];
        assert_eq!(scores.n, 2);
        assert_eq!(render_percent(scores.rouge.as_ref().unwrap().rouge1.f1), "85.0");

        let single = aggregate(&cells[..1]);
        assert_eq!(single[0].settings[&SettingKind::Raw].rouge, Some(report(0.8)));
    }

    #[test]
    fn zero_two_cells() {
        let cells = vec![
            list_cell(
                Domain::Medicine,
                "a",
                SettingKind::OntologyDefinitions,
                OutputFormat::Ontologized,
                0.448,
            ),
            list_cell(
                Domain::Medicine,
                "a",
                SettingKind::TwoShot,
                OutputFormat::Ontologized,
                0.869,
            ),
        ];
        let md = emit_report(&aggregate(&cells), ReportFormat::Markdown, &ReportOptions::default());
        assert!(md.contains("| Medicine | ont. | 1/1 | 44.8/86.9 |"), "{md}");
    }

    #[test]
    fn empty_report_is_header_only() {
        let md = emit_report(&[], ReportFormat::Markdown, &ReportOptions::default());
        assert!(md.contains("| Domain | Format | n | Rouge1"));
        assert!(!md.contains("| Medicine"));
        let csv = emit_report(&[], ReportFormat::Csv, &ReportOptions::default());
        assert_eq!(csv.lines().count(), 1);
    }

    #[test]
    fn csv_round_trip() {
        let cells = vec![
            list_cell(Domain::Photography, "a", SettingKind::Raw, OutputFormat::PlainText, 0.5),
            list_cell(
                Domain::Photography,
                "a",
                SettingKind::TwoShot,
                OutputFormat::Ontologized,
                0.25,
            ),
        ];
        let rows = aggregate(&cells);
        let csv = emit_report(&rows, ReportFormat::Csv, &ReportOptions::default());
        let mut reader = csv::Reader::from_reader(csv.as_bytes());
        let records: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
        assert_eq!(records.len(), 2);
        assert_eq!(&records[0][4], "50.0");
        assert_eq!(&records[1][8], "25.0");
        let reparsed: f64 = records[1][4].parse().unwrap();
        assert_eq!(render_percent(reparsed / 100.0), "25.0");
    }

    #[test]
    fn recall_switch() {
        let mut cell = list_cell(Domain::Agriculture, "a", SettingKind::Raw, OutputFormat::PlainText, 0.5);
        cell.rouge.as_mut().unwrap().rouge1.recall = 0.75;
        let options = ReportOptions {
            metric: Metric::Recall,
            ..ReportOptions::default()
        };
        let md = emit_report(&aggregate(&[cell]), ReportFormat::Markdown, &options);
        assert!(md.contains("| Agriculture | text | 1 | 75.0 | 50.0 |"), "{md}");
    }

    #[test]
    fn empty_corpus() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_corpus(dir.path()), Err(HarnessError::EmptyCorpus(_))));
    }

    #[test]
    fn spec_parsing() {
        let spec = ExperimentSpec::from_toml(
            "run_id = \"x\"\nsettings = [\"raw\", \"two_shot\"]\nformats = [\"ontologized\"]\n[provider]\nmodel = \"m\"\n",
        )
        .unwrap();
        assert_eq!(spec.settings, [SettingKind::Raw, SettingKind::TwoShot]);
        assert_eq!(spec.templates.len(), 5);
        assert!(ExperimentSpec::from_toml("run_id = \"../x\"").is_err());
        assert!(ExperimentSpec::from_toml("templates = []").is_err());
    }

    #[test]
    fn candidate_extraction() {
        assert_eq!(candidate_turtle("x\n```turtle\na b c .\n```\ny"), "a b c .\n");
        assert_eq!(candidate_turtle("a b c ."), "a b c .");
        assert_eq!(candidate_text("Sure:\n1. A\n2. B\nBye"), "1. A\n2. B");
    }
}

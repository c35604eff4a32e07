//! Conversations for the five question templates and parsing of the
//! replies back into answers comparable with the oracle.
//!
//! Wording lives in `templates/prompts.toml`; code only arranges messages.

use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::ChatMessage;
use crate::model::{validate, Plan, PlanId, Step, StepId};
use crate::oracle::{answer_list, CountMode, ListItem, NestedAnswer, OracleAnswer, SequenceAnswer};
use crate::parser::{list_item, parse_procedure, render_text, ParseConfig};
use crate::rdf::{from_triples, read_turtle, to_triples, write_turtle};

const DEFAULT_TEMPLATES: &str = include_str!("../templates/prompts.toml");

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("{kind} question needs parameter {param}")]
    MissingParam { kind: TemplateKind, param: &'static str },
    #[error("template file: {0}")]
    InvalidTemplate(String),
    #[error("exemplar {0} is empty")]
    InvalidExemplar(&'static str),
    #[error("unparseable {kind} reply: {reason}")]
    Unparseable { kind: TemplateKind, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TemplateKind {
    List,
    Counting,
    Comparison,
    Nested,
    Sequence,
}

impl TemplateKind {
    /// In the order they are asked within one conversation.
    pub const ALL: [TemplateKind; 5] = [
        TemplateKind::List,
        TemplateKind::Counting,
        TemplateKind::Comparison,
        TemplateKind::Nested,
        TemplateKind::Sequence,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateKind::List => "list",
            TemplateKind::Counting => "counting",
            TemplateKind::Comparison => "comparison",
            TemplateKind::Nested => "nested",
            TemplateKind::Sequence => "sequence",
        }
    }

    /// 1-based template number.
    pub fn number(self) -> usize {
        Self::ALL.iter().position(|k| *k == self).unwrap() + 1
    }
}

impl std::fmt::Display for TemplateKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TemplateKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "list" => Ok(Self::List),
            "count" | "counting" => Ok(Self::Counting),
            "comparison" => Ok(Self::Comparison),
            "nested" => Ok(Self::Nested),
            "sequence" => Ok(Self::Sequence),
            other => Err(format!("unknown template {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exemplar {
    pub question: String,
    pub gold_answer: String,
}

impl Exemplar {
    pub fn new(question: impl Into<String>, gold_answer: impl Into<String>) -> Result<Self, PromptError> {
        let (question, gold_answer) = (question.into(), gold_answer.into());
        if question.trim().is_empty() {
            return Err(PromptError::InvalidExemplar("question"));
        }
        if gold_answer.trim().is_empty() {
            return Err(PromptError::InvalidExemplar("answer"));
        }
        Ok(Self { question, gold_answer })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearningSetting {
    Raw,
    OntologyDefinitions,
    TwoShot(Box<[Exemplar; 2]>),
}

impl LearningSetting {
    pub fn two_shot(first: Exemplar, second: Exemplar) -> Self {
        Self::TwoShot(Box::new([first, second]))
    }
}

/// Setting without its payload, for configuration and reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SettingKind {
    Raw,
    #[serde(alias = "definitions")]
    OntologyDefinitions,
    #[serde(rename = "two_shot", alias = "2shot")]
    TwoShot,
}

impl SettingKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SettingKind::Raw => "raw",
            SettingKind::OntologyDefinitions => "definitions",
            SettingKind::TwoShot => "2shot",
        }
    }
}

impl FromStr for SettingKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "raw" => Ok(Self::Raw),
            "definitions" | "ontology_definitions" => Ok(Self::OntologyDefinitions),
            "2shot" | "two_shot" => Ok(Self::TwoShot),
            other => Err(format!("unknown setting {other:?}")),
        }
    }
}

impl From<&LearningSetting> for SettingKind {
    fn from(setting: &LearningSetting) -> Self {
        match setting {
            LearningSetting::Raw => SettingKind::Raw,
            LearningSetting::OntologyDefinitions => SettingKind::OntologyDefinitions,
            LearningSetting::TwoShot(_) => SettingKind::TwoShot,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[serde(alias = "text")]
    PlainText,
    #[serde(alias = "ontology")]
    Ontologized,
}

impl OutputFormat {
    /// Row label used in reports.
    pub fn as_str(self) -> &'static str {
        match self {
            OutputFormat::PlainText => "text",
            OutputFormat::Ontologized => "ont.",
        }
    }
}

impl FromStr for OutputFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" | "plain_text" => Ok(Self::PlainText),
            "ontology" | "ont" | "ont." | "ontologized" => Ok(Self::Ontologized),
            other => Err(format!("unknown format {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PromptParams {
    pub procedure_name: String,
    /// Step asked about by Nested and Sequence.
    pub step: Option<StepId>,
    /// Second manual chunk for Comparison.
    pub context2: Option<String>,
    pub count_mode: CountMode,
    /// Ask Sequence replies to be the bare step sentence.
    pub strict: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRequest {
    pub kind: TemplateKind,
    pub setting: LearningSetting,
    pub format: OutputFormat,
    pub context: String,
    pub params: PromptParams,
}

#[derive(Debug, Clone, Deserialize)]
struct Questions {
    list: String,
    counting: String,
    counting_recursive: String,
    comparison: String,
    nested: String,
    sequence: String,
}

#[derive(Debug, Clone, Deserialize)]
struct Formats {
    plain_text: String,
    ontologized: String,
}

#[derive(Debug, Clone, Deserialize)]
struct Strict {
    sequence: String,
}

#[derive(Debug, Clone, Deserialize)]
pub struct Definition {
    pub term: String,
    pub text: String,
    #[serde(default)]
    pub kinds: Vec<TemplateKind>,
}

#[derive(Debug, Clone, Deserialize)]
struct Definitions {
    heading: String,
    entries: Vec<Definition>,
}

/// A parsed template file.
#[derive(Debug, Clone, Deserialize)]
pub struct Templates {
    pub version: u32,
    system: String,
    context: String,
    questions: Questions,
    formats: Formats,
    strict: Strict,
    definitions: Definitions,
}

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([A-Za-z0-9_]+)\}").unwrap())
}

const PLACEHOLDERS: [&str; 4] = ["context", "procedure_name", "step", "context2"];

/// Substitutes placeholders in one pass, so braces inside inserted text are
/// left alone.
fn fill(template: &str, lookup: impl Fn(&str) -> Option<String>) -> String {
    placeholder_re()
        .replace_all(template, |caps: &regex::Captures| {
            lookup(&caps[1]).unwrap_or_else(|| caps[0].to_string())
        })
        .into_owned()
}

impl Templates {
    pub fn from_toml(text: &str) -> Result<Self, PromptError> {
        let templates: Templates = toml::from_str(text).map_err(|e| PromptError::InvalidTemplate(e.to_string()))?;
        let q = &templates.questions;
        let all = [
            ("system", &templates.system),
            ("context", &templates.context),
            ("questions.list", &q.list),
            ("questions.counting", &q.counting),
            ("questions.counting_recursive", &q.counting_recursive),
            ("questions.comparison", &q.comparison),
            ("questions.nested", &q.nested),
            ("questions.sequence", &q.sequence),
        ];
        for (name, text) in all {
            for caps in placeholder_re().captures_iter(text) {
                if !PLACEHOLDERS.contains(&&caps[1]) {
                    return Err(PromptError::InvalidTemplate(format!(
                        "{name} uses unknown placeholder {{{}}}",
                        &caps[1]
                    )));
                }
            }
        }
        if !templates.context.contains("{context}") {
            return Err(PromptError::InvalidTemplate("context must contain {context}".into()));
        }
        for (name, text) in [("nested", &q.nested), ("sequence", &q.sequence)] {
            if !text.contains("{step}") {
                return Err(PromptError::InvalidTemplate(format!(
                    "questions.{name} must contain {{step}}"
                )));
            }
        }
        if !q.comparison.contains("{context2}") {
            return Err(PromptError::InvalidTemplate(
                "questions.comparison must contain {context2}".into(),
            ));
        }
        Ok(templates)
    }

    /// The built-in template file.
    pub fn builtin() -> &'static Templates {
        static BUILTIN: OnceLock<Templates> = OnceLock::new();
        BUILTIN.get_or_init(|| Templates::from_toml(DEFAULT_TEMPLATES).expect("built-in templates are valid"))
    }

    pub fn definitions_block(&self, kind: TemplateKind) -> String {
        let mut out = self.definitions.heading.clone();
        for entry in &self.definitions.entries {
            if entry.kinds.is_empty() || entry.kinds.contains(&kind) {
                out.push_str(&format!("\n- {}: {}", entry.term, entry.text));
            }
        }
        out
    }

    /// The task question with format and strictness clauses, without context.
    pub fn question(&self, req: &PromptRequest) -> Result<String, PromptError> {
        let p = &req.params;
        let missing = |param| PromptError::MissingParam { kind: req.kind, param };
        if p.procedure_name.trim().is_empty() {
            return Err(missing("procedure_name"));
        }
        let q = &self.questions;
        let template = match req.kind {
            TemplateKind::List => &q.list,
            TemplateKind::Counting => match p.count_mode {
                CountMode::Main => &q.counting,
                CountMode::Recursive => &q.counting_recursive,
            },
            TemplateKind::Comparison => &q.comparison,
            TemplateKind::Nested => &q.nested,
            TemplateKind::Sequence => &q.sequence,
        };
        let step = match req.kind {
            TemplateKind::Nested | TemplateKind::Sequence => {
                Some(p.step.as_ref().ok_or_else(|| missing("step"))?.display_reference())
            }
            _ => None,
        };
        let context2 = match req.kind {
            TemplateKind::Comparison => Some(
                p.context2
                    .clone()
                    .filter(|c| !c.trim().is_empty())
                    .ok_or_else(|| missing("context2"))?,
            ),
            _ => None,
        };
        let mut text = fill(template, |name| match name {
            "procedure_name" => Some(p.procedure_name.clone()),
            "step" => step.clone(),
            "context2" => context2.clone(),
            "context" => Some(req.context.clone()),
            _ => None,
        });
        if req.kind == TemplateKind::List {
            text.push(' ');
            text.push_str(match req.format {
                OutputFormat::PlainText => &self.formats.plain_text,
                OutputFormat::Ontologized => &self.formats.ontologized,
            });
        }
        if req.kind == TemplateKind::Sequence && p.strict {
            text.push(' ');
            text.push_str(&self.strict.sequence);
        }
        Ok(text)
    }

    pub fn context_block(&self, context: &str) -> String {
        fill(&self.context, |name| (name == "context").then(|| context.to_string()))
    }

    /// Context followed by the question, as one self-contained message.
    pub fn standalone_question(&self, req: &PromptRequest) -> Result<String, PromptError> {
        Ok(format!(
            "{}\n\n{}",
            self.context_block(&req.context),
            self.question(req)?
        ))
    }

    /// A fresh conversation for `req`.
    ///
    /// Raw: system, context, question. Definitions: system, definitions,
    /// context, question. Two-shot: system, both exemplar pairs, then the
    /// context and question as a single message.
    pub fn build_prompt(&self, req: &PromptRequest) -> Result<Vec<ChatMessage>, PromptError> {
        let mut messages = vec![ChatMessage::system(self.system.clone())];
        match &req.setting {
            LearningSetting::Raw => {
                messages.push(ChatMessage::user(self.context_block(&req.context)));
                messages.push(ChatMessage::user(self.question(req)?));
            }
            LearningSetting::OntologyDefinitions => {
                messages.push(ChatMessage::user(self.definitions_block(req.kind)));
                messages.push(ChatMessage::user(self.context_block(&req.context)));
                messages.push(ChatMessage::user(self.question(req)?));
            }
            LearningSetting::TwoShot(exemplars) => {
                messages.extend(exemplar_messages(exemplars));
                messages.push(ChatMessage::user(self.standalone_question(req)?));
            }
        }
        Ok(messages)
    }

    /// Messages that continue an existing conversation with another
    /// question about the same context.
    pub fn follow_up(&self, req: &PromptRequest) -> Result<Vec<ChatMessage>, PromptError> {
        let mut messages = Vec::new();
        if let LearningSetting::TwoShot(exemplars) = &req.setting {
            messages.extend(exemplar_messages(exemplars));
        }
        messages.push(ChatMessage::user(self.question(req)?));
        Ok(messages)
    }
}

fn exemplar_messages(exemplars: &[Exemplar; 2]) -> Vec<ChatMessage> {
    exemplars
        .iter()
        .flat_map(|e| {
            [
                ChatMessage::user(e.question.clone()),
                ChatMessage::assistant(e.gold_answer.clone()),
            ]
        })
        .collect()
}

pub fn build_prompt(req: &PromptRequest) -> Result<Vec<ChatMessage>, PromptError> {
    Templates::builtin().build_prompt(req)
}

pub fn definitions_block(kind: TemplateKind) -> String {
    Templates::builtin().definitions_block(kind)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "answer")]
pub enum ParsedAnswer {
    List(Plan),
    Count(usize),
    Comparison { winner: String, count: Option<usize> },
    Nested(NestedAnswer),
    Sequence(SequenceAnswer),
}

/// Lowercase with whitespace collapsed and surrounding quotes and
/// punctuation removed.
pub fn fold_text(text: &str) -> String {
    text.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
        .trim_matches(|c: char| matches!(c, '.' | ',' | ';' | ':' | '"' | '\'' | '“' | '”' | '*' | ' '))
        .to_string()
}

impl ParsedAnswer {
    /// Exact match against the oracle after case and whitespace folding.
    /// Comparison and Sequence accept a reply that contains the expected
    /// label.
    pub fn matches(&self, expected: &OracleAnswer) -> bool {
        let same_labels = |a: &[String], b: &[String]| {
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| fold_text(x) == fold_text(y))
        };
        match (self, expected) {
            (ParsedAnswer::List(plan), OracleAnswer::List(items)) => {
                let got = answer_list(plan);
                got.len() == items.len()
                    && got
                        .iter()
                        .zip(items)
                        .all(|(g, e)| g.depth == e.depth && fold_text(&g.label) == fold_text(&e.label))
            }
            (ParsedAnswer::Count(n), OracleAnswer::Count(m)) => n == m,
            (ParsedAnswer::Comparison { winner, .. }, OracleAnswer::Comparison(c)) => {
                fold_text(winner).contains(&fold_text(&c.plan_label))
            }
            (ParsedAnswer::Nested(got), OracleAnswer::Nested(want)) => match (got, want) {
                (NestedAnswer::NoSubsteps, NestedAnswer::NoSubsteps) => true,
                (NestedAnswer::Substeps(a), NestedAnswer::Substeps(b)) => same_labels(a, b),
                _ => false,
            },
            (ParsedAnswer::Sequence(got), OracleAnswer::Sequence(want)) => match (got, want) {
                (SequenceAnswer::EndOfPlan, SequenceAnswer::EndOfPlan) => true,
                (SequenceAnswer::Next(a), SequenceAnswer::Next(b)) => fold_text(a).contains(&fold_text(b)),
                _ => false,
            },
            _ => false,
        }
    }

    /// Step texts the reply asserts, for grounding checks.
    pub fn step_texts(&self) -> Vec<String> {
        match self {
            ParsedAnswer::List(plan) => answer_list(plan).into_iter().map(|i| i.label).collect(),
            ParsedAnswer::Nested(NestedAnswer::Substeps(labels)) => labels.clone(),
            ParsedAnswer::Sequence(SequenceAnswer::Next(text)) => vec![text.clone()],
            _ => Vec::new(),
        }
    }
}

/// Step texts that do not occur in `context` after folding; these are
/// flagged as possible hallucinations.
pub fn ungrounded_steps(steps: &[String], context: &str) -> Vec<String> {
    let haystack = fold_text(context);
    steps
        .iter()
        .filter(|s| {
            let needle = fold_text(s);
            !needle.is_empty() && !haystack.contains(&needle)
        })
        .cloned()
        .collect()
}

fn number_word(word: &str) -> Option<usize> {
    const WORDS: [&str; 21] = [
        "zero",
        "one",
        "two",
        "three",
        "four",
        "five",
        "six",
        "seven",
        "eight",
        "nine",
        "ten",
        "eleven",
        "twelve",
        "thirteen",
        "fourteen",
        "fifteen",
        "sixteen",
        "seventeen",
        "eighteen",
        "nineteen",
        "twenty",
    ];
    WORDS.iter().position(|w| w.eq_ignore_ascii_case(word))
}

fn count_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?i)\b(\d+|zero|one|two|three|four|five|six|seven|eight|nine|ten|eleven|twelve|thirteen|fourteen|fifteen|sixteen|seventeen|eighteen|nineteen|twenty)\b(?:\s+(?:main|total|distinct|separate|individual|major|top-level|numbered|key|primary|sequential))*\s+(?:steps?|instructions?|stages?)\b",
        )
        .unwrap()
    })
}

fn first_integer_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\d+").unwrap())
}

/// Count stated in a reply: a number directly qualifying "steps" or
/// "instructions" wins, otherwise the first integer.
fn extract_count(text: &str) -> Option<usize> {
    if let Some(caps) = count_re().captures(text) {
        let token = &caps[1];
        return token.parse().ok().or_else(|| number_word(token));
    }
    first_integer_re().find(text).and_then(|m| m.as_str().parse().ok())
}

fn strip_answer_prefix(text: &str) -> &str {
    let trimmed = text.trim();
    for prefix in ["Answer:", "answer:", "ANSWER:"] {
        if let Some(rest) = trimmed.strip_prefix(prefix) {
            return rest.trim();
        }
    }
    trimmed
}

fn turtle_block(text: &str) -> Option<&str> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"(?s)```[A-Za-z]*[ \t]*\r?\n(.*?)```").unwrap());
    if let Some(caps) = re.captures(text) {
        return caps.get(1).map(|m| m.as_str());
    }
    let start = text.lines().position(|l| {
        let l = l.trim_start();
        l.starts_with("@prefix") || l.to_ascii_uppercase().starts_with("PREFIX ")
    })?;
    let offset: usize = text.lines().take(start).map(|l| l.len() + 1).sum();
    text.get(offset..)
}

fn unparseable(kind: TemplateKind, reason: impl Into<String>) -> PromptError {
    PromptError::Unparseable {
        kind,
        reason: reason.into(),
    }
}

fn enumerated_portion(text: &str) -> Option<String> {
    let lines: Vec<String> = text.lines().map(|l| l.replace("**", "")).collect();
    let first = lines.iter().position(|l| list_item(l).is_some())?;
    let last = lines.iter().rposition(|l| list_item(l).is_some())?;
    Some(lines[first..=last].join("\n"))
}

fn parse_list(format: OutputFormat, text: &str) -> Result<Plan, PromptError> {
    let kind = TemplateKind::List;
    match format {
        OutputFormat::PlainText => {
            let portion = enumerated_portion(text).ok_or_else(|| unparseable(kind, "no enumerated steps"))?;
            parse_procedure(&portion, "", &ParseConfig::default()).map_err(|e| unparseable(kind, e.to_string()))
        }
        OutputFormat::Ontologized => {
            let block = turtle_block(text).ok_or_else(|| unparseable(kind, "no Turtle block"))?;
            let graph = read_turtle(block).map_err(|e| unparseable(kind, e.to_string()))?;
            let plan = from_triples(&graph)
                .map_err(|e| unparseable(kind, e.to_string()))?
                .into_iter()
                .next()
                .ok_or_else(|| unparseable(kind, "graph holds no plan"))?;
            let report = validate(&plan);
            if !report.is_valid() {
                return Err(unparseable(kind, report.to_string()));
            }
            Ok(plan)
        }
    }
}

fn first_quoted(text: &str) -> Option<String> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r#""([^"\n]+)"|“([^”\n]+)”"#).unwrap());
    let caps = re.captures(text)?;
    caps.get(1)
        .or_else(|| caps.get(2))
        .map(|m| m.as_str().trim().to_string())
}

fn strict_sentence(text: &str) -> String {
    static STEP_PREFIX: OnceLock<Regex> = OnceLock::new();
    let step_prefix = STEP_PREFIX.get_or_init(|| Regex::new(r"(?i)^(?:sub)?step\s+[\d.]*\d\s*[:.)\-–]\s*").unwrap());
    let line = text
        .lines()
        .map(str::trim)
        .find(|l| {
            let lower = l.to_lowercase();
            !l.is_empty()
                && !["note", "warning", "caution", "important"]
                    .iter()
                    .any(|w| lower.starts_with(w))
        })
        .unwrap_or("");
    let line = list_item(line).map(|(_, t)| t).unwrap_or_else(|| line.to_string());
    let line = step_prefix.replace(&line, "").into_owned();
    let cut = ["(Note", "(note", " Note:", " Warning:", " Caution:"]
        .iter()
        .filter_map(|m| line.find(m))
        .min()
        .unwrap_or(line.len());
    line[..cut].trim().replace("**", "")
}

pub fn parse_response(kind: TemplateKind, format: OutputFormat, text: &str) -> Result<ParsedAnswer, PromptError> {
    parse_response_with(kind, format, text, false)
}

/// With `strict`, Sequence replies are cut down to the step sentence.
pub fn parse_response_with(
    kind: TemplateKind,
    format: OutputFormat,
    text: &str,
    strict: bool,
) -> Result<ParsedAnswer, PromptError> {
    let body = strip_answer_prefix(text);
    if body.is_empty() {
        return Err(unparseable(kind, "empty reply"));
    }
    let lower = body.to_lowercase();
    match kind {
        TemplateKind::List => parse_list(format, body).map(ParsedAnswer::List),
        TemplateKind::Counting => extract_count(body)
            .map(ParsedAnswer::Count)
            .ok_or_else(|| unparseable(kind, "no number in reply")),
        TemplateKind::Comparison => {
            let winner = first_quoted(body)
                .or_else(|| body.lines().map(str::trim).find(|l| !l.is_empty()).map(str::to_string))
                .ok_or_else(|| unparseable(kind, "no procedure named"))?;
            Ok(ParsedAnswer::Comparison {
                winner,
                count: extract_count(body),
            })
        }
        TemplateKind::Nested => {
            if lower.contains("no substeps") {
                return Ok(ParsedAnswer::Nested(NestedAnswer::NoSubsteps));
            }
            let items: Vec<(usize, String)> = body.lines().filter_map(|l| list_item(&l.replace("**", ""))).collect();
            let top = items
                .iter()
                .map(|(indent, _)| *indent)
                .min()
                .ok_or_else(|| unparseable(kind, "neither substeps nor \"no substeps\""))?;
            let labels = items.into_iter().filter(|(i, _)| *i == top).map(|(_, t)| t).collect();
            Ok(ParsedAnswer::Nested(NestedAnswer::Substeps(labels)))
        }
        TemplateKind::Sequence => {
            if lower.contains("no next step") {
                return Ok(ParsedAnswer::Sequence(SequenceAnswer::EndOfPlan));
            }
            let text = if strict {
                strict_sentence(body)
            } else {
                body.to_string()
            };
            if text.is_empty() {
                return Err(unparseable(kind, "no step sentence"));
            }
            Ok(ParsedAnswer::Sequence(SequenceAnswer::Next(text)))
        }
    }
}

/// Rebuilds a plan from a depth-annotated label listing, numbering steps by
/// position.
pub fn plan_from_items(label: &str, items: &[ListItem]) -> Plan {
    fn build(items: &[ListItem], depth: usize, prefix: &[u32], pos: &mut usize) -> Vec<Step> {
        let mut steps = Vec::new();
        while *pos < items.len() && items[*pos].depth == depth {
            let mut path = prefix.to_vec();
            path.push(steps.len() as u32 + 1);
            let mut step = Step::new(StepId::for_path(&path, depth), items[*pos].label.clone());
            *pos += 1;
            if *pos < items.len() && items[*pos].depth > depth {
                let children = build(items, depth + 1, &path, pos);
                let sub_label = format!("{} Plan", step.label);
                step = step.with_sub_plan(Plan::new(PlanId::for_path(&path), sub_label, children));
            }
            steps.push(step);
        }
        steps
    }
    let mut pos = 0;
    let steps = build(items, 0, &[], &mut pos);
    Plan::new(PlanId::root(&[]), label, steps)
}

/// Plan in the requested answer format.
pub fn render_plan(plan: &Plan, format: OutputFormat) -> String {
    match format {
        OutputFormat::PlainText => render_text(plan),
        OutputFormat::Ontologized => {
            let graph = to_triples(plan).expect("rendered plans are valid");
            format!("```turtle\n{}```\n", write_turtle(&graph))
        }
    }
}

/// Gold reply for an oracle answer, in the shape `parse_response` reads.
pub fn render_answer(answer: &OracleAnswer, format: OutputFormat) -> String {
    match answer {
        OracleAnswer::List(items) => render_plan(&plan_from_items("Procedure", items), format),
        OracleAnswer::Count(n) => format!("{n} steps"),
        OracleAnswer::Comparison(c) => format!(
            "\"{}\" in {} has the most main steps ({} steps).",
            c.plan_label, c.context, c.count
        ),
        OracleAnswer::Nested(NestedAnswer::NoSubsteps) => "no substeps".into(),
        OracleAnswer::Nested(NestedAnswer::Substeps(labels)) => labels
            .iter()
            .enumerate()
            .map(|(i, l)| format!("{}. {l}\n", i + 1))
            .collect(),
        OracleAnswer::Sequence(SequenceAnswer::Next(label)) => label.clone(),
        OracleAnswer::Sequence(SequenceAnswer::EndOfPlan) => "no next step".into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::Role;
    use crate::oracle::ComparisonAnswer;

    fn request(kind: TemplateKind, setting: LearningSetting) -> PromptRequest {
        PromptRequest {
            kind,
            setting,
            format: OutputFormat::PlainText,
            context: "1. Open the valve\n2. Flush the line".into(),
            params: PromptParams {
                procedure_name: "Flushing".into(),
                step: Some(StepId::new("Step3").unwrap()),
                context2: Some("1. Other".into()),
                ..PromptParams::default()
            },
        }
    }

    fn exemplars() -> LearningSetting {
        LearningSetting::two_shot(Exemplar::new("Q1", "A1").unwrap(), Exemplar::new("Q2", "A2").unwrap())
    }

    #[test]
    fn nested_question_wording() {
        let conv = build_prompt(&request(TemplateKind::Nested, LearningSetting::Raw)).unwrap();
        let question = &conv.last().unwrap().content;
        assert!(question.ends_with("please reply with \"no substeps\"."));
        assert!(question.contains(
            "Can you provide a detailed list of the substeps of Step 3 in the given Context which refers to \"Flushing\" procedure?"
        ));
        assert_eq!(conv.len(), 3);
        assert_eq!(conv[1].content, "Context:\n1. Open the valve\n2. Flush the line");
    }

    #[test]
    fn two_shot_layout() {
        let conv = build_prompt(&request(TemplateKind::List, exemplars())).unwrap();
        let roles: Vec<Role> = conv.iter().map(|m| m.role).collect();
        assert_eq!(
            roles,
            [
                Role::System,
                Role::User,
                Role::Assistant,
                Role::User,
                Role::Assistant,
                Role::User
            ]
        );
        let contents: Vec<&str> = conv[1..5].iter().map(|m| m.content.as_str()).collect();
        assert_eq!(contents, ["Q1", "A1", "Q2", "A2"]);
        assert!(conv[5].content.starts_with("Context:\n1. Open the valve"));
        assert!(conv[5].content.contains("detailed list of the steps"));

        let follow = Templates::builtin()
            .follow_up(&request(TemplateKind::Counting, exemplars()))
            .unwrap();
        assert_eq!(follow.len(), 5);
    }

    #[test]
    fn definitions_precede_context() {
        let conv = build_prompt(&request(TemplateKind::Counting, LearningSetting::OntologyDefinitions)).unwrap();
        assert_eq!(conv.len(), 4);
        assert!(conv[1].content.contains("p-plan:Step"));
        assert!(conv[1].content.contains("p-plan:Plan"));
        assert!(conv[2].content.starts_with("Context:"));
    }

    #[test]
    fn definitions_glosses() {
        assert!(definitions_block(TemplateKind::List).contains("indicates the sequence of steps within a plan"));
        assert!(definitions_block(TemplateKind::Sequence).contains("associates a plan with its initial step"));
        assert!(definitions_block(TemplateKind::Sequence).contains("associates a plan with its last step"));
        for kind in TemplateKind::ALL {
            let block = definitions_block(kind);
            assert!(block.contains("p-plan:Plan") && block.contains("p-plan:Step"));
        }
    }

    #[test]
    fn missing_params() {
        let mut req = request(TemplateKind::Sequence, LearningSetting::Raw);
        req.params.step = None;
        assert_eq!(
            build_prompt(&req),
            Err(PromptError::MissingParam {
                kind: TemplateKind::Sequence,
                param: "step"
            })
        );
        let mut req = request(TemplateKind::Comparison, LearningSetting::Raw);
        req.params.context2 = None;
        assert!(matches!(
            build_prompt(&req),
            Err(PromptError::MissingParam { param: "context2", .. })
        ));
        let mut req = request(TemplateKind::List, LearningSetting::Raw);
        req.params.procedure_name.clear();
        assert!(build_prompt(&req).is_err());
        assert!(Exemplar::new("", "a").is_err());
    }

    #[test]
    fn placeholders_are_not_expanded_twice() {
        let mut req = request(TemplateKind::Comparison, LearningSetting::Raw);
        req.params.context2 = Some("literal {step} and {context}".into());
        let q = Templates::builtin().question(&req).unwrap();
        assert!(q.contains("literal {step} and {context}"));
    }

    #[test]
    fn template_validation() {
        let bad = DEFAULT_TEMPLATES.replace(
            "{step} in the given Context which",
            "{stepp} in the given Context which",
        );
        assert!(matches!(
            Templates::from_toml(&bad),
            Err(PromptError::InvalidTemplate(_))
        ));
        assert!(Templates::from_toml("version = 1").is_err());
    }

    #[test]
    fn strict_sequence_clause() {
        let mut req = request(TemplateKind::Sequence, LearningSetting::Raw);
        assert!(!Templates::builtin()
            .question(&req)
            .unwrap()
            .contains("only the step sentence"));
        req.params.strict = true;
        assert!(Templates::builtin()
            .question(&req)
            .unwrap()
            .contains("only the step sentence"));
    }

    #[test]
    fn count_phrasings() {
        // expected counts read off each sentence by hand
        let fixtures: [(&str, usize); 20] = [
            ("There are 9 main steps in this procedure.", 9),
            ("9", 9),
            ("Answer: 7", 7),
            ("The procedure has nine steps.", 9),
            ("The \"Spindle Alignment\" procedure consists of 4 steps.", 4),
            ("It contains 12 steps (including 3 substeps).", 12),
            ("Total: 6", 6),
            ("Step 1 through Step 8 make up the procedure, so there are 8 steps.", 8),
            ("There are a total of 5 main steps.", 5),
            ("The procedure includes 3 distinct instructions.", 3),
            ("I count 10 steps in total.", 10),
            ("Eleven steps are listed.", 11),
            ("The number of steps is 4.", 4),
            ("This procedure comprises two stages.", 2),
            ("There are 6 steps, two of which have substeps.", 6),
            (
                "In the given context, the procedure has 3 main steps and 7 substeps.",
                3,
            ),
            ("**Answer:** 14 steps", 14),
            ("The list has 15 numbered steps.", 15),
            ("Based on the Context, 2 steps.", 2),
            ("The 'Checking the oil' procedure in section 4 has 5 steps.", 5),
        ];
        for (text, expected) in fixtures {
            assert_eq!(
                parse_response(TemplateKind::Counting, OutputFormat::PlainText, text),
                Ok(ParsedAnswer::Count(expected)),
                "{text}"
            );
        }
        assert!(parse_response(TemplateKind::Counting, OutputFormat::PlainText, "I cannot tell.").is_err());
    }

    #[test]
    fn nested_replies() {
        let no = parse_response(TemplateKind::Nested, OutputFormat::PlainText, "no substeps").unwrap();
        assert_eq!(no, ParsedAnswer::Nested(NestedAnswer::NoSubsteps));
        let yes = parse_response(
            TemplateKind::Nested,
            OutputFormat::PlainText,
            "The substeps are:\n1. Loosen Bearing Lock Nut\n   a) use a wrench\n2. Adjust Spindle",
        )
        .unwrap();
        assert_eq!(
            yes,
            ParsedAnswer::Nested(NestedAnswer::Substeps(vec![
                "Loosen Bearing Lock Nut".into(),
                "Adjust Spindle".into()
            ]))
        );
        assert!(matches!(
            parse_response(TemplateKind::Nested, OutputFormat::PlainText, "Hmm."),
            Err(PromptError::Unparseable { .. })
        ));
    }

    #[test]
    fn sequence_replies() {
        let reply = "Step 4: Install the seal.\nNote: wear gloves while doing this.";
        let loose = parse_response(TemplateKind::Sequence, OutputFormat::PlainText, reply).unwrap();
        assert_eq!(loose, ParsedAnswer::Sequence(SequenceAnswer::Next(reply.into())));
        let strict = parse_response_with(TemplateKind::Sequence, OutputFormat::PlainText, reply, true).unwrap();
        assert_eq!(
            strict,
            ParsedAnswer::Sequence(SequenceAnswer::Next("Install the seal.".into()))
        );
        let expected = OracleAnswer::Sequence(SequenceAnswer::Next("Install the seal".into()));
        assert!(loose.matches(&expected) && strict.matches(&expected));
        let end = parse_response(
            TemplateKind::Sequence,
            OutputFormat::PlainText,
            "There is no next step.",
        )
        .unwrap();
        assert_eq!(end, ParsedAnswer::Sequence(SequenceAnswer::EndOfPlan));
    }

    #[test]
    fn list_replies() {
        let text = "Here are the steps:\n\n1. **Open the valve**\n2. Flush the line\n   a) Use clean water\n\nLet me know if you need more.";
        let parsed = parse_response(TemplateKind::List, OutputFormat::PlainText, text).unwrap();
        let ParsedAnswer::List(plan) = parsed else { panic!() };
        let labels: Vec<_> = answer_list(&plan).into_iter().map(|i| (i.depth, i.label)).collect();
        assert_eq!(
            labels,
            [
                (0, "Open the valve".into()),
                (0, "Flush the line".into()),
                (1, "Use clean water".into())
            ]
        );

        let plan = parse_procedure("Demo\n1. A\n  a) a1\n2. B", "", &ParseConfig::default()).unwrap();
        let turtle = write_turtle(&to_triples(&plan).unwrap());
        let reply = format!("Sure!\n```turtle\n{turtle}```\nThat is all.");
        let parsed = parse_response(TemplateKind::List, OutputFormat::Ontologized, &reply).unwrap();
        let direct = from_triples(&read_turtle(&turtle).unwrap()).unwrap().remove(0);
        assert_eq!(parsed, ParsedAnswer::List(direct.clone()));
        assert_eq!(direct, plan);
        assert!(parse_response(TemplateKind::List, OutputFormat::Ontologized, "no code here").is_err());
        assert!(parse_response(TemplateKind::List, OutputFormat::Ontologized, "```\n@prefix x: .\n```").is_err());
    }

    #[test]
    fn comparison_replies() {
        let oracle = OracleAnswer::Comparison(ComparisonAnswer {
            plan_id: PlanId::new("Plan3").unwrap(),
            plan_label: "Removal and installation of Mechanical seal".into(),
            count: 9,
            context: "Context2".into(),
        });
        let right = parse_response(
            TemplateKind::Comparison,
            OutputFormat::PlainText,
            "\"Removal and installation of Mechanical seal\" has 9 main steps.",
        )
        .unwrap();
        assert!(right.matches(&oracle));
        let wrong = parse_response(
            TemplateKind::Comparison,
            OutputFormat::PlainText,
            "\"Install the support plate with a pit cover\" (8 main steps) has more steps than \"Removal and installation of Mechanical seal\" (9 main steps).",
        )
        .unwrap();
        assert!(!wrong.matches(&oracle));
    }

    #[test]
    fn grounding() {
        let context = "1. Open the valve\n2. Flush the line";
        let steps = vec!["Open the valve".to_string(), "Call the supervisor".to_string()];
        assert_eq!(ungrounded_steps(&steps, context), ["Call the supervisor"]);
    }

    #[test]
    fn render_round_trip_for_each_kind() {
        let items = vec![
            ListItem {
                depth: 0,
                label: "Open".into(),
            },
            ListItem {
                depth: 1,
                label: "Turn knob".into(),
            },
            ListItem {
                depth: 0,
                label: "Close".into(),
            },
        ];
        let answers = [
            (TemplateKind::List, OracleAnswer::List(items)),
            (TemplateKind::Counting, OracleAnswer::Count(9)),
            (
                TemplateKind::Comparison,
                OracleAnswer::Comparison(ComparisonAnswer {
                    plan_id: PlanId::new("Plan0").unwrap(),
                    plan_label: "Seal".into(),
                    count: 9,
                    context: "Context2".into(),
                }),
            ),
            (TemplateKind::Nested, OracleAnswer::Nested(NestedAnswer::NoSubsteps)),
            (
                TemplateKind::Nested,
                OracleAnswer::Nested(NestedAnswer::Substeps(vec!["a".into(), "b".into()])),
            ),
            (
                TemplateKind::Sequence,
                OracleAnswer::Sequence(SequenceAnswer::Next("Close".into())),
            ),
            (
                TemplateKind::Sequence,
                OracleAnswer::Sequence(SequenceAnswer::EndOfPlan),
            ),
        ];
        for format in [OutputFormat::PlainText, OutputFormat::Ontologized] {
            for (kind, answer) in &answers {
                let text = render_answer(answer, format);
                let parsed = parse_response(*kind, format, &text).unwrap_or_else(|e| panic!("{e}: {text}"));
                assert!(parsed.matches(answer), "{kind} {format:?}: {text}");
            }
        }
    }
}

//! Deterministic parser for enumerated procedure text.
//!
//! A procedure is a heading followed by numbered (`1.`, `11.3.4`), lettered
//! (`a)`) or bulleted (`-`, `•`) lines. Multi-part decimal numbers fix their
//! own depth; every other marker nests by indentation. Lines that are not
//! items are attached to the body of the most recent step.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{self, Plan, PlanId, Step, StepId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NumberingStyle {
    /// `1.`, `2)`, `11.3.4`
    Decimal,
    /// `a)`, `(b)`
    Alpha,
    /// `-`, `•`, `*`
    Bullet,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseConfig {
    pub numbering_styles: BTreeSet<NumberingStyle>,
    /// Spaces per nesting level; a tab counts as one unit.
    pub indent_unit: usize,
    /// Deepest nesting accepted, counting top-level steps as depth 1.
    pub max_depth: usize,
}

impl Default for ParseConfig {
    fn default() -> Self {
        Self {
            numbering_styles: [NumberingStyle::Decimal, NumberingStyle::Alpha, NumberingStyle::Bullet]
                .into_iter()
                .collect(),
            indent_unit: 2,
            max_depth: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("input contains no text")]
    EmptyInput,
    #[error("line {line}: {reason}")]
    AmbiguousStructure { line: usize, reason: String },
    #[error("line {line}: nesting depth {depth} exceeds maximum {max}")]
    DepthExceeded { line: usize, depth: usize, max: usize },
    #[error("invalid parse configuration: {0}")]
    InvalidConfig(String),
}

impl ParseConfig {
    fn check(&self) -> Result<(), ParseError> {
        if self.indent_unit == 0 {
            return Err(ParseError::InvalidConfig("indent_unit must be at least 1".into()));
        }
        if self.max_depth == 0 {
            return Err(ParseError::InvalidConfig("max_depth must be at least 1".into()));
        }
        Ok(())
    }
}

/// Location of one procedure inside a longer document; lines are 1-based
/// and inclusive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcedureSpan {
    pub name: String,
    pub start_line: usize,
    pub end_line: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Marker {
    Decimal(Vec<u32>),
    Alpha(u32),
    Bullet,
}

impl Marker {
    fn style(&self) -> NumberingStyle {
        match self {
            Marker::Decimal(_) => NumberingStyle::Decimal,
            Marker::Alpha(_) => NumberingStyle::Alpha,
            Marker::Bullet => NumberingStyle::Bullet,
        }
    }

    /// Whether this marker looks like the first item of a fresh list.
    fn starts_list(&self) -> bool {
        match self {
            Marker::Decimal(parts) => parts.last() == Some(&1),
            Marker::Alpha(n) => *n == 1,
            Marker::Bullet => false,
        }
    }
}

#[derive(Debug, Clone)]
enum Line {
    Blank,
    Text {
        indent: usize,
        text: String,
    },
    Item {
        indent: usize,
        marker: Marker,
        text: String,
    },
}

fn measure_indent(line: &str, unit: usize) -> (usize, &str) {
    let mut width = 0;
    for (i, c) in line.char_indices() {
        match c {
            ' ' => width += 1,
            '\t' => width += unit,
            _ => return (width, &line[i..]),
        }
    }
    (width, "")
}

/// Splits `rest` into (marker, item text) when it starts with a list marker.
fn split_marker(rest: &str, styles: &BTreeSet<NumberingStyle>) -> Option<(Marker, String)> {
    let after_ws = |s: &str| -> Option<String> {
        let mut chars = s.chars();
        match chars.next() {
            Some(c) if c.is_whitespace() => {
                let text = chars.as_str().trim();
                (!text.is_empty()).then(|| text.to_string())
            }
            _ => None,
        }
    };

    if styles.contains(&NumberingStyle::Bullet) {
        for bullet in ['-', '•', '*', '–', '◦', '▪'] {
            if let Some(tail) = rest.strip_prefix(bullet) {
                if let Some(text) = after_ws(tail) {
                    return Some((Marker::Bullet, text));
                }
            }
        }
    }

    if styles.contains(&NumberingStyle::Alpha) {
        let (inner, tail) = if let Some(stripped) = rest.strip_prefix('(') {
            let mut chars = stripped.chars();
            let letter = chars.next();
            let tail = chars.as_str();
            (letter, tail.strip_prefix(')'))
        } else {
            let mut chars = rest.chars();
            let letter = chars.next();
            let tail = chars.as_str();
            (letter, tail.strip_prefix(')'))
        };
        if let (Some(letter), Some(tail)) = (inner, tail) {
            if letter.is_ascii_lowercase() {
                if let Some(text) = after_ws(tail) {
                    return Some((Marker::Alpha(letter as u32 - 'a' as u32 + 1), text));
                }
            }
        }
    }

    if styles.contains(&NumberingStyle::Decimal) {
        let number_len = rest
            .char_indices()
            .find(|(_, c)| !(c.is_ascii_digit() || *c == '.'))
            .map(|(i, _)| i)
            .unwrap_or(rest.len());
        let number = rest[..number_len].trim_end_matches('.');
        if number.is_empty() || !number.starts_with(|c: char| c.is_ascii_digit()) {
            return None;
        }
        let parts: Option<Vec<u32>> = number.split('.').map(|p| p.parse().ok()).collect();
        let parts = parts?;
        let had_trailing_dot = rest[..number_len].ends_with('.');
        let mut tail = &rest[number_len..];
        let mut terminated = had_trailing_dot;
        if !terminated {
            if let Some(t) = tail.strip_prefix(')') {
                tail = t;
                terminated = true;
            }
        }
        if parts.len() == 1 && !terminated {
            return None;
        }
        if let Some(text) = after_ws(tail) {
            return Some((Marker::Decimal(parts), text));
        }
    }
    None
}

/// Indentation width and item text when `line` is a list item under any
/// numbering style.
pub fn list_item(line: &str) -> Option<(usize, String)> {
    let styles = ParseConfig::default().numbering_styles;
    let (indent, rest) = measure_indent(line, 1);
    split_marker(rest, &styles).map(|(_, text)| (indent, text))
}

fn classify_lines(text: &str, config: &ParseConfig) -> Vec<Line> {
    text.lines()
        .map(|raw| {
            let (indent, rest) = measure_indent(raw, config.indent_unit);
            let rest = rest.trim_end();
            if rest.is_empty() {
                return Line::Blank;
            }
            match split_marker(rest, &config.numbering_styles) {
                Some((marker, text)) => Line::Item { indent, marker, text },
                None => Line::Text {
                    indent,
                    text: rest.to_string(),
                },
            }
        })
        .collect()
}

#[derive(Debug)]
struct Node {
    path: Vec<u32>,
    indent: usize,
    label: String,
    body: Vec<String>,
    children: Vec<Node>,
    child_style: Option<NumberingStyle>,
}

impl Node {
    fn new(path: Vec<u32>, indent: usize, label: String) -> Self {
        Self {
            path,
            indent,
            label,
            body: Vec::new(),
            children: Vec::new(),
            child_style: None,
        }
    }

    fn into_step(self, depth: usize) -> Step {
        let id = StepId::for_path(&self.path, depth);
        let mut step = Step::new(id, self.label).with_body(self.body.join("\n"));
        if !self.children.is_empty() {
            let plan = Plan::new(
                PlanId::for_path(&self.path),
                format!("{} Plan", step.label),
                self.children.into_iter().map(|c| c.into_step(depth + 1)).collect(),
            );
            step = step.with_sub_plan(plan);
        }
        step
    }
}

/// Follows the chain of last children `depth` levels down from `root`.
fn open_node(root: &mut Node, depth: usize) -> &mut Node {
    let mut node = root;
    for _ in 0..depth {
        node = node.children.last_mut().expect("open path exists");
    }
    node
}

/// Parses one enumerated procedure into a validated [`Plan`].
///
/// `name` becomes the plan label; when it is blank the leading heading
/// lines are used instead.
pub fn parse_procedure(text: &str, name: &str, config: &ParseConfig) -> Result<Plan, ParseError> {
    config.check()?;
    if text.trim().is_empty() {
        return Err(ParseError::EmptyInput);
    }
    let lines = classify_lines(text, config);

    let first_item = lines.iter().position(|l| matches!(l, Line::Item { .. }));
    let Some(first_item) = first_item else {
        let line = lines
            .iter()
            .position(|l| !matches!(l, Line::Blank))
            .map_or(1, |i| i + 1);
        return Err(ParseError::AmbiguousStructure {
            line,
            reason: "no enumerated steps found".into(),
        });
    };

    let heading: Vec<&str> = lines[..first_item]
        .iter()
        .filter_map(|l| match l {
            Line::Text { text, .. } => Some(text.trim()),
            _ => None,
        })
        .collect();

    // The first item fixes how many number components a top-level step has.
    let (base, prefix): (usize, Vec<u32>) = match &lines[first_item] {
        Line::Item {
            marker: Marker::Decimal(parts),
            ..
        } => (parts.len(), parts[..parts.len() - 1].to_vec()),
        _ => (1, Vec::new()),
    };

    let mut root = Node::new(prefix.clone(), 0, String::new());
    // Depth of the currently open item chain; 0 means nothing open yet.
    let mut open = 0usize;

    for (idx, line) in lines.iter().enumerate().skip(first_item) {
        let line_no = idx + 1;
        match line {
            Line::Blank => {}
            Line::Text { text, .. } => {
                open_node(&mut root, open).body.push(text.trim().to_string());
            }
            Line::Item { indent, marker, text } => {
                let dotted = matches!(marker, Marker::Decimal(parts)
                    if parts.len() >= base.max(2) && parts[..base - 1] == prefix[..]);

                let (depth, path) = if let (true, Marker::Decimal(parts)) = (dotted, marker) {
                    let depth = parts.len() - base;
                    if depth > open {
                        return Err(ParseError::AmbiguousStructure {
                            line: line_no,
                            reason: format!("number {} skips a nesting level", dotted_number(parts)),
                        });
                    }
                    let parent = open_node(&mut root, depth);
                    if parent.path[..] != parts[..parts.len() - 1] {
                        return Err(ParseError::AmbiguousStructure {
                            line: line_no,
                            reason: format!(
                                "number {} does not continue {}",
                                dotted_number(parts),
                                dotted_number(&parent.path)
                            ),
                        });
                    }
                    (depth, parts.clone())
                } else {
                    let mut depth = open;
                    while depth > 0 {
                        let node = open_node(&mut root, depth);
                        if *indent >= node.indent + config.indent_unit {
                            break;
                        }
                        depth -= 1;
                    }
                    let parent = open_node(&mut root, depth);
                    let mut path = parent.path.clone();
                    match marker {
                        Marker::Decimal(parts) => path.extend_from_slice(parts),
                        Marker::Alpha(n) => path.push(*n),
                        Marker::Bullet => path.push(parent.children.len() as u32 + 1),
                    }
                    (depth, path)
                };

                if depth + 1 > config.max_depth {
                    return Err(ParseError::DepthExceeded {
                        line: line_no,
                        depth: depth + 1,
                        max: config.max_depth,
                    });
                }

                let parent = open_node(&mut root, depth);
                let style = marker.style();
                match parent.child_style {
                    Some(existing) if existing != style => {
                        return Err(ParseError::AmbiguousStructure {
                            line: line_no,
                            reason: format!("{style:?} item follows {existing:?} items at the same level"),
                        });
                    }
                    _ => parent.child_style = Some(style),
                }
                parent.children.push(Node::new(path, *indent, text.clone()));
                open = depth + 1;
            }
        }
    }

    let label = if name.trim().is_empty() {
        heading.join(" ")
    } else {
        name.trim().to_string()
    };
    let plan = Plan::new(
        PlanId::root(&prefix),
        label,
        root.children.into_iter().map(|c| c.into_step(0)).collect(),
    );

    let report = model::validate(&plan);
    if !report.is_valid() {
        return Err(ParseError::AmbiguousStructure {
            line: first_item + 1,
            reason: format!("inconsistent numbering: {report}"),
        });
    }
    Ok(plan)
}

fn dotted_number(parts: &[u32]) -> String {
    parts.iter().map(u32::to_string).collect::<Vec<_>>().join(".")
}

/// Finds procedure headings (a non-indented text line introducing a list)
/// and returns their extents in document order.
pub fn detect_procedures(text: &str, config: &ParseConfig) -> Vec<ProcedureSpan> {
    let lines = classify_lines(text, config);
    let next_item = |from: usize| -> Option<&Marker> {
        lines[from..].iter().find_map(|l| match l {
            Line::Blank => None,
            Line::Item { marker, .. } => Some(Some(marker)),
            Line::Text { .. } => Some(None),
        })?
    };

    struct Open {
        name: String,
        start: usize,
        last: usize,
        style: Option<NumberingStyle>,
    }

    let mut spans = Vec::new();
    let mut current: Option<Open> = None;
    let close = |open: Open, spans: &mut Vec<ProcedureSpan>| {
        spans.push(ProcedureSpan {
            name: open.name,
            start_line: open.start + 1,
            end_line: open.last + 1,
        });
    };

    for (idx, line) in lines.iter().enumerate() {
        match line {
            Line::Blank => {}
            Line::Text { indent, text } => {
                let title = *indent == 0
                    && next_item(idx + 1).is_some_and(|marker| match &current {
                        None => true,
                        Some(open) => marker.starts_list() || open.style != Some(marker.style()),
                    });
                if title {
                    if let Some(open) = current.take() {
                        close(open, &mut spans);
                    }
                    current = Some(Open {
                        name: text.trim().to_string(),
                        start: idx,
                        last: idx,
                        style: None,
                    });
                } else if let Some(open) = current.as_mut() {
                    open.last = idx;
                }
            }
            Line::Item { marker, .. } => {
                if let Some(open) = current.as_mut() {
                    open.last = idx;
                    if open.style.is_none() {
                        open.style = Some(marker.style());
                    }
                }
            }
        }
    }
    if let Some(open) = current {
        close(open, &mut spans);
    }
    spans
}

/// The lines covered by `span`.
pub fn span_text(text: &str, span: &ProcedureSpan) -> String {
    text.lines()
        .skip(span.start_line - 1)
        .take(span.end_line + 1 - span.start_line)
        .collect::<Vec<_>>()
        .join("\n")
}

/// Detects and parses every procedure in a document, naming each plan after
/// its heading.
pub fn parse_document(text: &str, config: &ParseConfig) -> Result<Vec<Plan>, ParseError> {
    detect_procedures(text, config)
        .iter()
        .map(|span| parse_procedure(&span_text(text, span), &span.name, config))
        .collect()
}

/// Number paths for every step, taken from the ids when they encode a
/// consistent numbering and positional otherwise.
fn numbering(plan: &Plan) -> Vec<Vec<u32>> {
    fn from_ids(plan: &Plan, parent: &[u32], depth: usize, base: usize, out: &mut Vec<Vec<u32>>) -> bool {
        let mut seen = BTreeSet::new();
        for step in &plan.steps {
            let Some(path) = step.id.number_path() else {
                return false;
            };
            let fits = if depth == 0 {
                path.len() == base && path[..base - 1] == parent[..]
            } else {
                path.len() == parent.len() + 1 && path[..parent.len()] == parent[..]
            };
            if !fits || StepId::for_path(&path, depth) != step.id || !seen.insert(path.clone()) {
                return false;
            }
            out.push(path.clone());
            if let Some(sub) = &step.sub_plan {
                if !from_ids(sub, &path, depth + 1, base, out) {
                    return false;
                }
            }
        }
        true
    }

    fn positional(plan: &Plan, parent: &[u32], out: &mut Vec<Vec<u32>>) {
        for (i, step) in plan.steps.iter().enumerate() {
            let mut path = parent.to_vec();
            path.push(i as u32 + 1);
            out.push(path.clone());
            if let Some(sub) = &step.sub_plan {
                positional(sub, &path, out);
            }
        }
    }

    let prefix = match plan.id.number_path() {
        Some(p) if p != [0] => p,
        _ => Vec::new(),
    };
    let mut out = Vec::new();
    if let Some(first) = plan.steps.first().and_then(|s| s.id.number_path()) {
        let base = first.len();
        if base >= 1 && first[..base - 1] == prefix[..] && from_ids(plan, &prefix, 0, base, &mut out) {
            return out;
        }
    }
    out.clear();
    positional(plan, &[], &mut out);
    out
}

/// Renders a plan as enumerated text that [`parse_procedure`] reads back
/// into the same structure.
pub fn render_text(plan: &Plan) -> String {
    let numbers = numbering(plan);
    let mut out = String::new();
    if !plan.label.trim().is_empty() {
        out.push_str(plan.label.trim());
        out.push('\n');
    }
    for ((depth, step), path) in model::flatten(plan).into_iter().zip(numbers) {
        let indent = "  ".repeat(depth);
        let number = if path.len() == 1 {
            format!("{}.", path[0])
        } else {
            dotted_number(&path)
        };
        out.push_str(&format!("{indent}{number} {}\n", step.label.trim()));
        for line in step.body.lines().filter(|l| !l.trim().is_empty()) {
            out.push_str(&format!("{indent}   {}\n", line.trim()));
        }
    }
    out
}

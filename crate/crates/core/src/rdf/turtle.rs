//! Turtle profile: `@prefix`/`PREFIX`, prefixed names, `<IRI>`s, `a`,
//! `;`/`,`/`.` grouping and quoted literals. No blank nodes or collections.

use std::collections::BTreeMap;

use super::mapping::ordered_subjects;
use super::{standard_namespace, vocab, Graph, Iri, NamespaceTable, Object, RdfError, Triple};

fn write_iri(iri: &Iri) -> String {
    iri.to_string()
}

pub(crate) fn escape_literal(text: &str) -> String {
    let mut out = String::with_capacity(text.len() + 2);
    out.push('"');
    for c in text.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

fn predicate_rank(graph: &Graph, predicate: &Iri) -> usize {
    graph
        .resolve(predicate)
        .and_then(|abs| vocab::PREDICATE_ORDER.iter().position(|p| *p == abs))
        .unwrap_or(vocab::PREDICATE_ORDER.len())
}

/// Serializes deterministically: prefixes in table order, subjects in plan
/// traversal order, predicates in vocabulary order.
pub fn write_turtle(graph: &Graph) -> String {
    let mut out = String::new();
    for (prefix, ns) in graph.namespaces.iter() {
        out.push_str(&format!("@prefix {prefix}: <{ns}> .\n"));
    }

    let mut by_subject: BTreeMap<&Iri, BTreeMap<&Iri, Vec<&Object>>> = BTreeMap::new();
    for t in &graph.triples {
        by_subject
            .entry(&t.subject)
            .or_default()
            .entry(&t.predicate)
            .or_default()
            .push(&t.object);
    }

    for subject in ordered_subjects(graph) {
        let Some(preds) = by_subject.get(subject) else {
            continue;
        };
        let mut preds: Vec<(&&Iri, &Vec<&Object>)> = preds.iter().collect();
        preds.sort_by_key(|(p, _)| (predicate_rank(graph, p), (**p).clone()));

        out.push('\n');
        out.push_str(&write_iri(subject));
        let last = preds.len() - 1;
        for (i, (predicate, objects)) in preds.into_iter().enumerate() {
            let verb = if graph.resolve(predicate).as_deref() == Some(vocab::RDF_TYPE) {
                "a".to_string()
            } else {
                write_iri(predicate)
            };
            let objects: Vec<String> = objects
                .iter()
                .map(|o| match o {
                    Object::Iri(iri) => write_iri(iri),
                    Object::Literal(text) => escape_literal(text),
                })
                .collect();
            let sep = if i == last { " ." } else { " ;" };
            if i == 0 {
                out.push(' ');
            } else {
                out.push_str("\n    ");
            }
            out.push_str(&format!("{verb} {}{sep}", objects.join(" , ")));
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    IriRef(String),
    Name { prefix: String, local: String },
    Literal(String),
    A,
    PrefixAt,
    PrefixSparql,
    Dot,
    Semicolon,
    Comma,
    Caret2,
    LangTag,
}

struct Lexer<'a> {
    chars: Vec<char>,
    pos: usize,
    line: usize,
    column: usize,
    _src: &'a str,
}

type Spanned = (Token, usize, usize);

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Self {
            chars: src.chars().collect(),
            pos: 0,
            line: 1,
            column: 1,
            _src: src,
        }
    }

    fn err(&self, line: usize, column: usize, message: impl Into<String>) -> RdfError {
        RdfError::Syntax {
            line,
            column,
            message: message.into(),
        }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn peek_at(&self, offset: usize) -> Option<char> {
        self.chars.get(self.pos + offset).copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.get(self.pos).copied()?;
        self.pos += 1;
        if c == '\n' {
            self.line += 1;
            self.column = 1;
        } else {
            self.column += 1;
        }
        Some(c)
    }

    fn skip_trivia(&mut self) {
        while let Some(c) = self.peek() {
            if c.is_whitespace() {
                self.bump();
            } else if c == '#' {
                while let Some(c) = self.peek() {
                    if c == '\n' {
                        break;
                    }
                    self.bump();
                }
            } else {
                break;
            }
        }
    }

    fn tokens(mut self) -> Result<Vec<Spanned>, RdfError> {
        let mut out = Vec::new();
        loop {
            self.skip_trivia();
            let (line, column) = (self.line, self.column);
            let Some(c) = self.peek() else {
                return Ok(out);
            };
            let token = match c {
                '<' => {
                    self.bump();
                    let mut iri = String::new();
                    loop {
                        match self.bump() {
                            Some('>') => break,
                            Some(c) if c.is_whitespace() => {
                                return Err(self.err(line, column, "whitespace inside IRI"))
                            }
                            Some(c) => iri.push(c),
                            None => return Err(self.err(line, column, "unterminated IRI")),
                        }
                    }
                    Token::IriRef(iri)
                }
                '"' | '\'' => Token::Literal(self.literal(c, line, column)?),
                '.' => {
                    self.bump();
                    Token::Dot
                }
                ';' => {
                    self.bump();
                    Token::Semicolon
                }
                ',' => {
                    self.bump();
                    Token::Comma
                }
                '^' if self.peek_at(1) == Some('^') => {
                    self.bump();
                    self.bump();
                    Token::Caret2
                }
                '@' => {
                    self.bump();
                    let word = self.word();
                    if word == "prefix" {
                        Token::PrefixAt
                    } else if !word.is_empty() {
                        Token::LangTag
                    } else {
                        return Err(self.err(line, column, "expected directive or language tag"));
                    }
                }
                c if c.is_alphabetic() || c == ':' || c == '_' => self.name(line, column)?,
                c => return Err(self.err(line, column, format!("unexpected character {c:?}"))),
            };
            out.push((token, line, column));
        }
    }

    fn word(&mut self) -> String {
        let mut word = String::new();
        while let Some(c) = self.peek() {
            if c.is_alphanumeric() || c == '-' {
                word.push(c);
                self.bump();
            } else {
                break;
            }
        }
        word
    }

    fn name(&mut self, line: usize, column: usize) -> Result<Token, RdfError> {
        let mut prefix = String::new();
        while let Some(c) = self.peek() {
            if c.is_alphanumeric() || matches!(c, '_' | '-' | '.') {
                prefix.push(c);
                self.bump();
            } else {
                break;
            }
        }
        if self.peek() != Some(':') {
            return match prefix.as_str() {
                "a" => Ok(Token::A),
                p if p.eq_ignore_ascii_case("prefix") => Ok(Token::PrefixSparql),
                _ => Err(self.err(line, column, format!("unexpected word {prefix:?}"))),
            };
        }
        self.bump();
        let mut local = String::new();
        while let Some(c) = self.peek() {
            let continues = c.is_alphanumeric()
                || matches!(c, '_' | '-' | ':' | '%')
                || (c == '.'
                    && self
                        .peek_at(1)
                        .is_some_and(|n| n.is_alphanumeric() || matches!(n, '_' | '-' | ':')));
            if !continues {
                break;
            }
            local.push(c);
            self.bump();
        }
        Ok(Token::Name { prefix, local })
    }

    fn literal(&mut self, quote: char, line: usize, column: usize) -> Result<String, RdfError> {
        let long = self.peek_at(1) == Some(quote) && self.peek_at(2) == Some(quote);
        let open = if long { 3 } else { 1 };
        for _ in 0..open {
            self.bump();
        }
        let mut text = String::new();
        loop {
            let Some(c) = self.bump() else {
                return Err(self.err(line, column, "unterminated literal"));
            };
            match c {
                c if c == quote => {
                    if !long {
                        return Ok(text);
                    }
                    if self.peek() == Some(quote) && self.peek_at(1) == Some(quote) {
                        self.bump();
                        self.bump();
                        return Ok(text);
                    }
                    text.push(c);
                }
                '\n' if !long => return Err(self.err(line, column, "unterminated literal")),
                '\\' => {
                    let (el, ec) = (self.line, self.column);
                    let escaped = match self.bump() {
                        Some('n') => '\n',
                        Some('t') => '\t',
                        Some('r') => '\r',
                        Some('b') => '\u{8}',
                        Some('f') => '\u{c}',
                        Some('"') => '"',
                        Some('\'') => '\'',
                        Some('\\') => '\\',
                        Some(u @ ('u' | 'U')) => {
                            let width = if u == 'u' { 4 } else { 8 };
                            let hex: String = (0..width).filter_map(|_| self.bump()).collect();
                            u32::from_str_radix(&hex, 16)
                                .ok()
                                .and_then(char::from_u32)
                                .ok_or_else(|| self.err(el, ec, "bad unicode escape"))?
                        }
                        _ => return Err(self.err(el, ec, "bad escape sequence")),
                    };
                    text.push(escaped);
                }
                c => text.push(c),
            }
        }
    }
}

struct Parser {
    tokens: Vec<Spanned>,
    pos: usize,
    graph: Graph,
    end: (usize, usize),
}

impl Parser {
    fn err_at(&self, index: usize, message: impl Into<String>) -> RdfError {
        let (line, column) = self.tokens.get(index).map(|(_, l, c)| (*l, *c)).unwrap_or(self.end);
        RdfError::Syntax {
            line,
            column,
            message: message.into(),
        }
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).map(|(t, _, _)| t.clone());
        self.pos += 1;
        t
    }

    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos).map(|(t, _, _)| t)
    }

    fn expect(&mut self, want: Token, what: &str) -> Result<(), RdfError> {
        let at = self.pos;
        match self.next() {
            Some(t) if t == want => Ok(()),
            _ => Err(self.err_at(at, format!("expected {what}"))),
        }
    }

    fn iri(&mut self) -> Result<Iri, RdfError> {
        let at = self.pos;
        match self.next() {
            Some(Token::IriRef(iri)) => Ok(Iri::Full(iri)),
            Some(Token::Name { prefix, local }) => {
                if self.graph.namespaces.namespace(&prefix).is_none() {
                    match standard_namespace(&prefix) {
                        Some(ns) => self.graph.namespaces.bind(prefix.clone(), ns),
                        None => return Err(self.err_at(at, format!("undeclared prefix {prefix:?}"))),
                    }
                }
                Ok(Iri::Prefixed { prefix, local })
            }
            _ => Err(self.err_at(at, "expected IRI")),
        }
    }

    fn prefix_decl(&mut self, sparql: bool) -> Result<(), RdfError> {
        let at = self.pos;
        let prefix = match self.next() {
            Some(Token::Name { prefix, local }) if local.is_empty() => prefix,
            _ => return Err(self.err_at(at, "expected prefix name ending in ':'")),
        };
        let at = self.pos;
        let ns = match self.next() {
            Some(Token::IriRef(iri)) => iri,
            _ => return Err(self.err_at(at, "expected namespace IRI")),
        };
        self.graph.namespaces.bind(prefix, ns);
        if !sparql {
            self.expect(Token::Dot, "'.' after @prefix")?;
        }
        Ok(())
    }

    fn object(&mut self) -> Result<Object, RdfError> {
        if let Some(Token::Literal(_)) = self.peek() {
            let Some(Token::Literal(text)) = self.next() else {
                unreachable!()
            };
            match self.peek() {
                Some(Token::LangTag) => {
                    self.pos += 1;
                }
                Some(Token::Caret2) => {
                    self.pos += 1;
                    self.iri()?;
                }
                _ => {}
            }
            return Ok(Object::Literal(text));
        }
        Ok(Object::Iri(self.iri()?))
    }

    fn statement(&mut self) -> Result<(), RdfError> {
        let subject = self.iri()?;
        loop {
            let predicate = if self.peek() == Some(&Token::A) {
                self.pos += 1;
                Iri::prefixed("rdf", "type")
            } else {
                self.iri()?
            };
            if predicate == Iri::prefixed("rdf", "type") && self.graph.namespaces.namespace("rdf").is_none() {
                self.graph.namespaces.bind("rdf", super::RDF_NS);
            }
            loop {
                let object = self.object()?;
                self.graph
                    .insert(Triple::new(subject.clone(), predicate.clone(), object));
                if self.peek() == Some(&Token::Comma) {
                    self.pos += 1;
                } else {
                    break;
                }
            }
            let at = self.pos;
            match self.next() {
                Some(Token::Dot) => return Ok(()),
                Some(Token::Semicolon) => {
                    while self.peek() == Some(&Token::Semicolon) {
                        self.pos += 1;
                    }
                    if self.peek() == Some(&Token::Dot) {
                        self.pos += 1;
                        return Ok(());
                    }
                }
                _ => return Err(self.err_at(at, "expected ';', ',' or '.'")),
            }
        }
    }
}

/// Reads the Turtle profile. Prefixes from the standard table may be used
/// without being declared.
pub fn read_turtle(text: &str) -> Result<Graph, RdfError> {
    let tokens = Lexer::new(text).tokens()?;
    let end_line = text.lines().count().max(1);
    let end_col = text.lines().last().map_or(1, |l| l.chars().count() + 1);
    let mut parser = Parser {
        tokens,
        pos: 0,
        graph: Graph::new(NamespaceTable::new()),
        end: (end_line, end_col),
    };
    while let Some(token) = parser.peek() {
        match token {
            Token::PrefixAt => {
                parser.pos += 1;
                parser.prefix_decl(false)?;
            }
            Token::PrefixSparql => {
                parser.pos += 1;
                parser.prefix_decl(true)?;
            }
            _ => parser.statement()?,
        }
    }
    Ok(parser.graph)
}

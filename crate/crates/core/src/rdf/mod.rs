//! Triple graphs over the K-Hub procedure vocabulary (aligned with P-Plan),
//! with Turtle and RDF/XML readers and writers.

mod mapping;
mod rdfxml;
mod turtle;

use std::collections::BTreeSet;
use std::fmt;

use serde::Serialize;
use thiserror::Error;

pub use mapping::{from_triples, to_triples};
pub use rdfxml::{read_rdfxml, write_rdfxml};
pub use turtle::{read_turtle, write_turtle};

pub const RDF_NS: &str = "http://www.w3.org/1999/02/22-rdf-syntax-ns#";
pub const RDFS_NS: &str = "http://www.w3.org/2000/01/rdf-schema#";
pub const PPLAN_NS: &str = "http://purl.org/net/p-plan#";
pub const KHP_NS: &str = "https://knowledge.c-innovationhub.com/k-hub/procedure#";
/// Namespace for plan and step instances. Only the prefix name is
/// conventional; this IRI is our own choice.
pub const KHP_INSTANCE_NS: &str = "https://knowledge.c-innovationhub.com/k-hub/procedure/instance#";

/// Absolute IRIs of the vocabulary terms.
pub mod vocab {
    pub const RDF_TYPE: &str = "http://www.w3.org/1999/02/22-rdf-syntax-ns#type";
    pub const RDFS_LABEL: &str = "http://www.w3.org/2000/01/rdf-schema#label";
    pub const RDFS_COMMENT: &str = "http://www.w3.org/2000/01/rdf-schema#comment";
    pub const PLAN: &str = "http://purl.org/net/p-plan#Plan";
    pub const STEP: &str = "http://purl.org/net/p-plan#Step";
    pub const NEXT_STEP: &str = "https://knowledge.c-innovationhub.com/k-hub/procedure#nextStep";
    pub const IS_STEP_OF_PLAN: &str = "https://knowledge.c-innovationhub.com/k-hub/procedure#isStepOfPlan";
    pub const IS_DECOMPOSED_AS_PLAN: &str = "https://knowledge.c-innovationhub.com/k-hub/procedure#isDecomposedAsPlan";
    pub const STARTS_WITH: &str = "https://knowledge.c-innovationhub.com/k-hub/procedure#startsWith";
    pub const ENDS_WITH: &str = "https://knowledge.c-innovationhub.com/k-hub/procedure#endsWith";

    /// Serialization order of predicates within a subject block.
    pub const PREDICATE_ORDER: [&str; 8] = [
        RDF_TYPE,
        RDFS_LABEL,
        RDFS_COMMENT,
        NEXT_STEP,
        IS_STEP_OF_PLAN,
        IS_DECOMPOSED_AS_PLAN,
        STARTS_WITH,
        ENDS_WITH,
    ];
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RdfError {
    #[error("plan fails validation: {0}")]
    InvalidPlan(String),
    #[error("plan {plan}: {reason}")]
    BrokenChain { plan: String, reason: String },
    #[error("plan {plan} has no {anchor}")]
    MissingAnchor { plan: String, anchor: &'static str },
    #[error("{0} is referenced but never typed")]
    DanglingReference(String),
    #[error("{0} cannot be used as a plan or step identifier")]
    InvalidId(String),
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
}

/// An IRI as written: either absolute or a prefixed name.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Iri {
    Full(String),
    Prefixed { prefix: String, local: String },
}

impl Iri {
    pub fn full(iri: impl Into<String>) -> Self {
        Iri::Full(iri.into())
    }

    pub fn prefixed(prefix: impl Into<String>, local: impl Into<String>) -> Self {
        Iri::Prefixed {
            prefix: prefix.into(),
            local: local.into(),
        }
    }
}

impl fmt::Display for Iri {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Iri::Full(iri) => write!(f, "<{iri}>"),
            Iri::Prefixed { prefix, local } => write!(f, "{prefix}:{local}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Object {
    Iri(Iri),
    Literal(String),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Triple {
    pub subject: Iri,
    pub predicate: Iri,
    pub object: Object,
}

impl Triple {
    pub fn new(subject: Iri, predicate: Iri, object: Object) -> Self {
        Self {
            subject,
            predicate,
            object,
        }
    }
}

/// Ordered prefix → namespace bindings.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct NamespaceTable {
    entries: Vec<(String, String)>,
}

impl NamespaceTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// `rdf`, `rdfs`, `kh-p`, `kh-p-instance`, `p-plan`.
    pub fn standard() -> Self {
        let mut table = Self::new();
        table.bind("rdf", RDF_NS);
        table.bind("rdfs", RDFS_NS);
        table.bind("kh-p", KHP_NS);
        table.bind("kh-p-instance", KHP_INSTANCE_NS);
        table.bind("p-plan", PPLAN_NS);
        table
    }

    /// Binds or rebinds `prefix`; a rebinding keeps the original position.
    pub fn bind(&mut self, prefix: impl Into<String>, namespace: impl Into<String>) {
        let prefix = prefix.into();
        let namespace = namespace.into();
        match self.entries.iter_mut().find(|(p, _)| *p == prefix) {
            Some(entry) => entry.1 = namespace,
            None => self.entries.push((prefix, namespace)),
        }
    }

    pub fn namespace(&self, prefix: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(p, _)| p == prefix)
            .map(|(_, ns)| ns.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(p, ns)| (p.as_str(), ns.as_str()))
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Longest namespace that prefixes `iri` and leaves a usable local name.
    pub fn contract(&self, iri: &str) -> Option<Iri> {
        self.entries
            .iter()
            .filter(|(_, ns)| iri.starts_with(ns.as_str()))
            .filter(|(_, ns)| is_local_name(&iri[ns.len()..]))
            .max_by_key(|(_, ns)| ns.len())
            .map(|(prefix, ns)| Iri::prefixed(prefix.clone(), &iri[ns.len()..]))
    }
}

pub(crate) fn is_local_name(local: &str) -> bool {
    !local.is_empty()
        && !local.ends_with('.')
        && local
            .chars()
            .all(|c| c.is_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

/// A set of triples plus the prefixes used to write them.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Graph {
    pub namespaces: NamespaceTable,
    pub triples: BTreeSet<Triple>,
}

impl Graph {
    pub fn new(namespaces: NamespaceTable) -> Self {
        Self {
            namespaces,
            triples: BTreeSet::new(),
        }
    }

    pub fn insert(&mut self, triple: Triple) -> bool {
        self.triples.insert(triple)
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    /// Absolute form of `iri`. Undeclared standard prefixes resolve through
    /// the standard table.
    pub fn resolve(&self, iri: &Iri) -> Option<String> {
        match iri {
            Iri::Full(full) => Some(full.clone()),
            Iri::Prefixed { prefix, local } => self
                .namespaces
                .namespace(prefix)
                .or_else(|| standard_namespace(prefix))
                .map(|ns| format!("{ns}{local}")),
        }
    }

    /// Literal objects outside `rdfs:label`/`rdfs:comment`, which this
    /// profile does not use.
    pub fn profile_violations(&self) -> Vec<&Triple> {
        self.triples
            .iter()
            .filter(|t| matches!(t.object, Object::Literal(_)))
            .filter(|t| {
                let p = self.resolve(&t.predicate);
                p.as_deref() != Some(vocab::RDFS_LABEL) && p.as_deref() != Some(vocab::RDFS_COMMENT)
            })
            .collect()
    }
}

pub(crate) fn standard_namespace(prefix: &str) -> Option<&'static str> {
    match prefix {
        "rdf" => Some(RDF_NS),
        "rdfs" => Some(RDFS_NS),
        "kh-p" => Some(KHP_NS),
        "kh-p-instance" => Some(KHP_INSTANCE_NS),
        "p-plan" => Some(PPLAN_NS),
        _ => None,
    }
}

/// Canonical form: every IRI resolved and re-contracted against the standard
/// prefix table, under the standard namespace bindings. Duplicates that only
/// differed in surface form collapse.
pub fn normalize(graph: &Graph) -> Graph {
    let table = NamespaceTable::standard();
    let canon = |iri: &Iri| -> Iri {
        match graph.resolve(iri) {
            Some(abs) => table.contract(&abs).unwrap_or(Iri::Full(abs)),
            None => iri.clone(),
        }
    };
    let mut out = Graph::new(table.clone());
    for t in &graph.triples {
        let object = match &t.object {
            Object::Iri(iri) => Object::Iri(canon(iri)),
            Object::Literal(text) => Object::Literal(text.clone()),
        };
        out.insert(Triple::new(canon(&t.subject), canon(&t.predicate), object));
    }
    out
}

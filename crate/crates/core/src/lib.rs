//! Procedure extraction and evaluation.
//!
//! Enumerated manual text is parsed into [`model::Plan`] trees, serialized
//! as P-Plan/K-Hub triples, asked about through five question templates,
//! and scored against gold annotations with ROUGE.
//!
//! ROUGE arithmetic is generic over the score type; the aliases below fix
//! the two types used in practice.

pub mod harness;
pub mod llm;
pub mod model;
pub mod oracle;
pub mod parser;
pub mod prompt;
pub mod rdf;
pub mod rouge;

use num_rational::Ratio;

/// Floating-point score, used for reporting.
pub type RougeScoreF64 = rouge::RougeScore<f64>;
pub type RougeReportF64 = rouge::RougeReport<f64>;

/// Exact rational score, used where results are compared for equality.
pub type ExactRougeScore = rouge::RougeScore<Ratio<u64>>;
pub type ExactRougeReport = rouge::RougeReport<Ratio<u64>>;

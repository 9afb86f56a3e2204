//! Formula mutation engine: parses LaTeX mathematical formulas (and texts
//! containing them) into operator trees, generates mathematically
//! equivalent variants by symbol substitution and randomized re-printing,
//! generates similar-looking but non-equivalent variants through rule-based
//! falsification strategies, and assembles labeled JSONL datasets from raw
//! corpora and a named-identity catalog.

pub mod catalog;
pub mod expr;
pub mod falsify;
pub mod generate;
pub mod groups;
pub mod lexer;
pub mod parser;
pub mod printer;
pub mod oracle;
pub mod par;
pub mod pipeline;
pub mod subst;

pub use expr::{
    free_symbols, structural_eq, Expr, MathText, ParsedFormula, Run, Symbol, SymbolKind,
};
pub use parser::{parse_formula, parse_math_text, ParseError, ParseOptions};

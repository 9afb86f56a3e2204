//! Dataset pipelines: corpus ingestion, version generation, dedup,
//! labeling, statistics, and JSONL emission for the four dataset families
//! (standalone formulas, math texts, name/formula pairs, formula pairs).

mod gen;
pub mod stats;

pub use gen::{gen_mf, gen_mfr, gen_mt, gen_nmf, NmfConfig};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::expr::{Expr, RelOp, Run, SymbolKind};
use crate::generate::{GenConfig, VersionMeta};
use crate::oracle::{check_general_validity, solve_univariate, SolveOutcome};
use crate::par::derive_seed;
use crate::parser::parse_math_text;
use crate::printer::print_canonical_expr;

pub const SCHEMA_VERSION: u32 = 1;

/// Formulas longer than this are skipped during extraction.
pub const MAX_FORMULA_LEN: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DocKind {
    Question,
    Answer,
    Exercise,
}

/// One corpus document (JSONL input, one object per line).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusDoc {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub score: Option<i64>,
    pub kind: DocKind,
}

/// Metadata on every generated record.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RecordMeta {
    pub source: String,
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identity: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_kind: Option<bool>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub original: bool,
    #[serde(default)]
    pub substituted_variable: bool,
    #[serde(default)]
    pub substituted_function: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub strategies: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub descriptions: Vec<String>,
}

impl RecordMeta {
    pub fn from_version(meta: &VersionMeta, source: &str, version: u32) -> RecordMeta {
        RecordMeta {
            source: source.to_string(),
            version,
            identity: None,
            text_kind: None,
            original: meta.original,
            substituted_variable: meta.substituted_variable,
            substituted_function: meta.substituted_function,
            strategies: meta.strategies.clone(),
            descriptions: meta.descriptions.clone(),
        }
    }

    pub fn substituted(&self) -> bool {
        self.substituted_variable || self.substituted_function
    }
}

/// One JSONL record of any dataset family.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetRecord {
    Mf { schema: u32, formula: String, meta: RecordMeta },
    Mt { schema: u32, text: String, meta: RecordMeta },
    Nmf { schema: u32, name: String, formula: String, label: bool, meta: RecordMeta },
    Mfr { schema: u32, formula1: String, formula2: String, label: bool, meta: RecordMeta },
}

impl DatasetRecord {
    pub fn meta(&self) -> &RecordMeta {
        match self {
            DatasetRecord::Mf { meta, .. }
            | DatasetRecord::Mt { meta, .. }
            | DatasetRecord::Nmf { meta, .. }
            | DatasetRecord::Mfr { meta, .. } => meta,
        }
    }

    pub fn label(&self) -> Option<bool> {
        match self {
            DatasetRecord::Nmf { label, .. } | DatasetRecord::Mfr { label, .. } => Some(*label),
            _ => None,
        }
    }

    pub fn to_jsonl(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }
}

pub fn write_jsonl(records: &[DatasetRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&r.to_jsonl());
        out.push('\n');
    }
    out
}

pub fn read_jsonl(content: &str) -> Result<Vec<DatasetRecord>, serde_json::Error> {
    content
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

/// Skip-and-count accounting for one pipeline run.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunReport {
    pub emitted: usize,
    pub inputs: usize,
    pub skipped: BTreeMap<String, usize>,
    pub dedup_collisions: usize,
}

impl RunReport {
    pub fn skip(&mut self, reason: &str) {
        *self.skipped.entry(reason.to_string()).or_insert(0) += 1;
    }

    pub fn total_skipped(&self) -> usize {
        self.skipped.values().sum()
    }
}

/// String-level dedup set. The hash-only variant stores 128-bit hashes
/// instead of full strings to bound memory on large runs.
pub enum DedupSet {
    Full(std::collections::HashSet<String>),
    HashOnly(std::collections::HashSet<u128>),
}

impl DedupSet {
    pub fn new(hash_only: bool) -> DedupSet {
        if hash_only {
            DedupSet::HashOnly(Default::default())
        } else {
            DedupSet::Full(Default::default())
        }
    }

    /// Returns true when the string is new.
    pub fn insert(&mut self, s: &str) -> bool {
        match self {
            DedupSet::Full(set) => set.insert(s.to_string()),
            DedupSet::HashOnly(set) => {
                let mut h1: u64 = 0xcbf2_9ce4_8422_2325;
                let mut h2: u64 = 0x9E37_79B9_7F4A_7C15;
                for b in s.as_bytes() {
                    h1 = (h1 ^ u64::from(*b)).wrapping_mul(0x0000_0100_0000_01B3);
                    h2 = (h2 ^ u64::from(*b)).wrapping_mul(0xFF51_AFD7_ED55_8CCD);
                }
                set.insert((u128::from(h1) << 64) | u128::from(h2))
            }
        }
    }
}

/// One formula extracted from a corpus, ready for version generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateFormula {
    pub source: String,
    pub latex: String,
}

/// Pulls dollar-delimited formulas from documents, keeping equalities and
/// implications; non-valid equalities with solvable content are rewritten
/// into implications; everything else is dropped with a counted reason.
pub fn extract_formulas(
    docs: &[CorpusDoc],
    cfg: &GenConfig,
    seed: u64,
) -> (Vec<CandidateFormula>, RunReport) {
    let mut out = Vec::new();
    let mut report = RunReport::default();
    for doc in docs {
        let Ok(text) = parse_math_text(&doc.text, &cfg.parse) else {
            report.skip("unbalanced_dollars");
            continue;
        };
        let mut index = 0usize;
        for run in &text.runs {
            let Run::Formula(formula) = run else { continue };
            report.inputs += 1;
            index += 1;
            let source = format!("{}#{}", doc.id, index);
            if formula.source.len() > MAX_FORMULA_LEN {
                report.skip("too_long");
                continue;
            }
            if !formula.fully_parsed() {
                report.skip("opaque");
                continue;
            }
            // Equality or implication shape.
            let relations: Vec<&Expr> = formula
                .segments
                .iter()
                .map(|(_, seg)| seg)
                .filter(|seg| !matches!(seg, Expr::Quantifier { body: None, .. }))
                .collect();
            let has_arrow = formula
                .segments
                .iter()
                .any(|(d, _)| d.as_deref().map(|d| d.contains("\\Rightarrow")).unwrap_or(false));
            let all_eq = !relations.is_empty()
                && relations.iter().all(|seg| {
                    matches!(seg, Expr::Relation { op: RelOp::Eq, .. })
                        || matches!(seg, Expr::Implication { .. })
                });
            if !all_eq {
                report.skip("not_equality_or_implication");
                continue;
            }
            let vseed = derive_seed(seed, &source);
            if check_general_validity(formula, 64, vseed) {
                out.push(CandidateFormula { source, latex: formula.source.clone() });
                continue;
            }
            if has_arrow {
                report.skip("implication_not_valid");
                continue;
            }
            // Rewrite a non-valid single equality into an implication.
            let free = formula.free_symbols();
            let vars: Vec<_> =
                free.iter().filter(|s| s.kind == SymbolKind::Variable).collect();
            if relations.len() != 1 || vars.len() != 1 {
                report.skip("not_generally_valid");
                continue;
            }
            let var = vars[0].clone();
            match solve_univariate(relations[0], &var) {
                SolveOutcome::Roots(roots) => {
                    let disjunction: Vec<String> = roots
                        .iter()
                        .map(|r| format!("{var} = {}", print_canonical_expr(r)))
                        .collect();
                    let rewritten = format!(
                        "{} \\Rightarrow {}",
                        formula.source.trim(),
                        disjunction.join(" \\text{ or } ")
                    );
                    out.push(CandidateFormula { source, latex: rewritten });
                }
                SolveOutcome::Unsupported(_) => {
                    report.skip("solver_unsupported");
                }
            }
        }
    }
    report.emitted = out.len();
    (out, report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: &str, text: &str) -> CorpusDoc {
        CorpusDoc { id: id.into(), text: text.into(), score: Some(10), kind: DocKind::Answer }
    }

    #[test]
    fn extraction_keeps_valid_equalities() {
        let docs = vec![doc("d1", r"We know $\tan(x)=\sin(x)/\cos(x)$ holds.")];
        let (out, report) = extract_formulas(&docs, &GenConfig::default(), 42);
        assert_eq!(out.len(), 1, "{report:?}");
        assert_eq!(out[0].latex, r"\tan(x)=\sin(x)/\cos(x)");
    }

    #[test]
    fn extraction_drops_inequalities() {
        let docs = vec![doc("d1", r"Since $\pi > 3$ we conclude.")];
        let (out, report) = extract_formulas(&docs, &GenConfig::default(), 42);
        assert!(out.is_empty());
        assert_eq!(report.skipped.get("not_equality_or_implication"), Some(&1));
    }

    #[test]
    fn extraction_rewrites_solvable_equalities() {
        let docs = vec![doc("d1", r"Solve $x^2=2$ for x.")];
        let (out, _) = extract_formulas(&docs, &GenConfig::default(), 42);
        assert_eq!(out.len(), 1);
        assert_eq!(
            out[0].latex,
            "x^2=2 \\Rightarrow x = -\\sqrt{2} \\text{ or } x = \\sqrt{2}"
        );
    }

    #[test]
    fn jsonl_roundtrip() {
        let records = vec![DatasetRecord::Mf {
            schema: SCHEMA_VERSION,
            formula: "x = x".into(),
            meta: RecordMeta { source: "s".into(), ..Default::default() },
        }];
        let text = write_jsonl(&records);
        assert!(text.contains("\"schema\":1"));
        let back = read_jsonl(&text).unwrap();
        assert_eq!(back.len(), 1);
    }
}

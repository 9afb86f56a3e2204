//! Version generation drivers: equivalent versions (substitute symbols,
//! re-print randomly) and falsified versions (strategy mutation followed
//! by the same substitution and printing steps).

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::expr::{Expr, MathText, ParsedFormula};
use crate::falsify::{
    falsify, AppliedStrategy, FalsifyError, FalsifyInput, FalsifyOptions, ManualHints, VersionPool,
};
use crate::parser::ParseOptions;
use crate::printer::{print_random, print_text_random, PrintSettings};
use crate::subst::{
    apply_substitution, apply_substitution_text, sample_substitution_avoiding, SubstitutionOptions,
};

/// Generation metadata carried on every produced record.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct VersionMeta {
    #[serde(default, skip_serializing_if = "is_false")]
    pub original: bool,
    pub substituted_variable: bool,
    pub substituted_function: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub strategies: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub descriptions: Vec<String>,
}

fn is_false(b: &bool) -> bool {
    !*b
}

impl VersionMeta {
    pub fn substituted(&self) -> bool {
        self.substituted_variable || self.substituted_function
    }
}

#[derive(Debug, Clone, Default)]
pub struct GenConfig {
    pub print: PrintSettings,
    pub subst: SubstitutionOptions,
    pub falsify: FalsifyOptions,
    pub parse: ParseOptions,
}

/// Every display name in a formula, including reserved symbols, so fresh
/// substitution targets never collide with anything visible.
fn display_names(formula: &ParsedFormula) -> BTreeSet<String> {
    fn walk(e: &Expr, out: &mut BTreeSet<String>) {
        match e {
            Expr::Symbol(s) => {
                out.insert(s.name.clone());
            }
            Expr::GenericApp { symbol, .. } => {
                out.insert(symbol.name.clone());
            }
            _ => {}
        }
        for c in e.children() {
            walk(c, out);
        }
    }
    let mut out = BTreeSet::new();
    for (_, seg) in &formula.segments {
        walk(seg, &mut out);
    }
    out
}

fn text_display_names(text: &MathText) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for run in &text.runs {
        if let crate::expr::Run::Formula(f) = run {
            out.extend(display_names(f));
        }
    }
    out
}

/// One equivalent version of a formula: sampled substitution plus
/// randomized printing.
pub fn evg_formula(
    formula: &ParsedFormula,
    cfg: &GenConfig,
    rng: &mut impl Rng,
) -> (String, VersionMeta) {
    let symbols = formula.free_symbols();
    let avoid = display_names(formula);
    let map = sample_substitution_avoiding(&symbols, &avoid, &cfg.subst, rng);
    let substituted = apply_substitution(formula, &map).unwrap_or_else(|_| formula.clone());
    let printed = print_random(&substituted, &cfg.print, rng);
    let meta = VersionMeta {
        substituted_variable: map.has_variable_entry(),
        substituted_function: map.has_function_entry(),
        ..Default::default()
    };
    (printed, meta)
}

/// One equivalent version of a math text: one substitution map applied
/// consistently across all formulas, then randomized printing per formula.
pub fn evg_text(text: &MathText, cfg: &GenConfig, rng: &mut impl Rng) -> (String, VersionMeta) {
    let symbols = text.free_symbols();
    let avoid = text_display_names(text);
    let map = sample_substitution_avoiding(&symbols, &avoid, &cfg.subst, rng);
    let substituted = apply_substitution_text(text, &map).unwrap_or_else(|_| text.clone());
    let printed = print_text_random(&substituted, &cfg.print, rng);
    let meta = VersionMeta {
        substituted_variable: map.has_variable_entry(),
        substituted_function: map.has_function_entry(),
        ..Default::default()
    };
    (printed, meta)
}

/// One falsified version: strategy mutation, then the same substitution
/// and randomized printing as equivalent versions.
pub fn fvg(
    input: &FalsifyInput,
    hints: Option<&ManualHints>,
    pool: &dyn VersionPool,
    identity_name: Option<&str>,
    cfg: &GenConfig,
    rng: &mut impl Rng,
) -> Result<(String, VersionMeta), FalsifyError> {
    let record = falsify(input, hints, pool, identity_name, &cfg.falsify, &cfg.parse, rng)?;
    let (printed, mut meta) = match &record.result {
        FalsifyInput::Formula(f) => evg_formula(f, cfg, rng),
        FalsifyInput::Text(t) => evg_text(t, cfg, rng),
    };
    apply_record_meta(&mut meta, &record.applied);
    Ok((printed, meta))
}

pub fn apply_record_meta(meta: &mut VersionMeta, applied: &[AppliedStrategy]) {
    for a in applied {
        meta.strategies.push(a.strategy.name().to_string());
        meta.descriptions.push(a.description.clone());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::check_equivalence;
    use crate::parser::parse_formula;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn evg_output_reparses_and_is_equivalent() {
        let cfg = GenConfig::default();
        let f = parse_formula(r"(a+b)^2=a^2+2ab+b^2", &cfg.parse).unwrap();
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (printed, _) = evg_formula(&f, &cfg, &mut rng);
            let reparsed = parse_formula(&printed, &cfg.parse)
                .unwrap_or_else(|e| panic!("reparse failed on {printed}: {e}"));
            assert!(reparsed.fully_parsed(), "opaque output {printed}");
            let v = check_equivalence(&f, &reparsed, 32, seed);
            assert!(!v.is_distinct(), "EVG produced distinct output {printed}: {v:?}");
        }
    }

    #[test]
    fn evg_meta_reflects_substitution() {
        let cfg = GenConfig {
            subst: crate::subst::SubstitutionOptions {
                select_probability: 1.0,
                ..Default::default()
            },
            ..Default::default()
        };
        let f = parse_formula(r"(a+b)^2=a^2+2ab+b^2", &cfg.parse).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (_, meta) = evg_formula(&f, &cfg, &mut rng);
        assert!(meta.substituted_variable);
    }

    #[test]
    fn fvg_output_differs() {
        let cfg = GenConfig::default();
        let f = parse_formula(r"a^2+b^2=c^2", &cfg.parse).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (printed, meta) = fvg(
            &FalsifyInput::Formula(f.clone()),
            None,
            &crate::falsify::NoPool,
            None,
            &cfg,
            &mut rng,
        )
        .unwrap();
        assert!(!meta.strategies.is_empty());
        let reparsed = parse_formula(&printed, &cfg.parse).unwrap();
        // output must not be structurally identical to the input
        assert_ne!(reparsed.segments, f.segments, "{printed}");
    }
}

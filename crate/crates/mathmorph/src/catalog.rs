//! Named mathematical formula templates: data model, loader, validator,
//! and the bundled seed catalog.
//!
//! A catalog is one JSON file holding an array of identities; each
//! identity carries one or more template versions (formulas or texts) with
//! explicitly declared variable and function symbols, references to
//! similar identities, hinted false versions, and falsifying string
//! replacements.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::expr::MathText;
use crate::expr::ParsedFormula;
use crate::falsify::ManualHints;
use crate::oracle;
use crate::parser::{parse_formula, parse_math_text, ParseOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VersionKind {
    Formula,
    Text,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReplacementScope {
    Formula,
    Text,
    Both,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Replacement {
    pub from: String,
    pub to: String,
    pub applies_to: ReplacementScope,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Version {
    pub content: String,
    pub kind: VersionKind,
    #[serde(default)]
    pub variables: Vec<String>,
    #[serde(default)]
    pub functions: Vec<String>,
    #[serde(default)]
    pub omits_name: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Identity {
    pub names: Vec<String>,
    pub versions: Vec<Version>,
    #[serde(default)]
    pub similar: Vec<String>,
    #[serde(default)]
    pub false_versions: Vec<String>,
    #[serde(default)]
    pub falsifying_replacements: Vec<Replacement>,
}

impl Identity {
    pub fn primary_name(&self) -> &str {
        &self.names[0]
    }

    /// Parse options honoring this version's symbol declarations.
    pub fn parse_options_for(&self, version: &Version) -> ParseOptions {
        ParseOptions::default()
            .with_declarations(version.variables.clone(), version.functions.clone())
    }

    /// Manual falsification hints (declarations unioned over versions).
    pub fn hints(&self) -> ManualHints {
        let mut variables: BTreeSet<String> = BTreeSet::new();
        let mut functions: BTreeSet<String> = BTreeSet::new();
        for v in &self.versions {
            variables.extend(v.variables.iter().cloned());
            functions.extend(v.functions.iter().cloned());
        }
        ManualHints {
            false_versions: self.false_versions.clone(),
            similar: self.similar.clone(),
            replacements: self
                .falsifying_replacements
                .iter()
                .map(|r| {
                    (
                        r.from.clone(),
                        r.to.clone(),
                        matches!(r.applies_to, ReplacementScope::Formula | ReplacementScope::Both),
                        matches!(r.applies_to, ReplacementScope::Text | ReplacementScope::Both),
                    )
                })
                .collect(),
            variables: variables.into_iter().collect(),
            functions: functions.into_iter().collect(),
        }
    }
}

/// A parsed catalog version ready for generation.
#[derive(Debug, Clone)]
pub enum ParsedVersion {
    Formula(ParsedFormula),
    Text(MathText),
}

impl ParsedVersion {
    pub fn fully_parsed_formula(&self) -> Option<&ParsedFormula> {
        match self {
            ParsedVersion::Formula(f) if f.fully_parsed() => Some(f),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum CatalogError {
    #[error("catalog schema error: {0}")]
    Schema(String),
    #[error("identity {identity:?} version {index} does not parse: {reason}")]
    UnparsableVersion { identity: String, index: usize, reason: String },
    #[error("identity {identity:?} refers to unknown identity {reference:?}")]
    DanglingSimilarReference { identity: String, reference: String },
    #[error("io error: {0}")]
    Io(String),
}

/// Parses one version's content, hybrid opaque segments allowed.
pub fn parse_version(identity: &Identity, version: &Version) -> Result<ParsedVersion, String> {
    let opts = identity.parse_options_for(version);
    match version.kind {
        VersionKind::Formula => parse_formula(&version.content, &opts)
            .map(ParsedVersion::Formula)
            .map_err(|e| e.to_string()),
        VersionKind::Text => parse_math_text(&version.content, &opts)
            .map(ParsedVersion::Text)
            .map_err(|e| e.to_string()),
    }
}

fn validate_invariants(identities: &[Identity]) -> Vec<CatalogError> {
    let mut errors = Vec::new();
    if identities.is_empty() {
        errors.push(CatalogError::Schema("empty identity list".into()));
        return errors;
    }
    let known: BTreeSet<&str> = identities
        .iter()
        .flat_map(|i| i.names.iter().map(|n| n.as_str()))
        .collect();
    for identity in identities {
        if identity.names.is_empty() {
            errors.push(CatalogError::Schema("identity without names".into()));
            continue;
        }
        let name = identity.primary_name().to_string();
        if identity.versions.is_empty() {
            errors.push(CatalogError::Schema(format!("identity {name:?} has no versions")));
        }
        for (index, version) in identity.versions.iter().enumerate() {
            match parse_version(identity, version) {
                Err(reason) => errors.push(CatalogError::UnparsableVersion {
                    identity: name.clone(),
                    index,
                    reason,
                }),
                Ok(parsed) => {
                    // Declared symbols must actually occur.
                    let mut present: BTreeSet<String> = BTreeSet::new();
                    match &parsed {
                        ParsedVersion::Formula(f) => {
                            present.extend(f.free_symbols().iter().map(|s| s.name.clone()));
                        }
                        ParsedVersion::Text(t) => {
                            present.extend(t.free_symbols().iter().map(|s| s.name.clone()));
                            if t.formula_count() == 0 && version.kind == VersionKind::Text {
                                // pure prose paraphrases are allowed
                            }
                        }
                    }
                    for declared in version.variables.iter().chain(&version.functions) {
                        if !present.contains(declared) && !version.content.contains(declared.as_str()) {
                            errors.push(CatalogError::Schema(format!(
                                "identity {name:?} version {index}: declared symbol {declared:?} does not occur"
                            )));
                        }
                    }
                }
            }
        }
        for reference in &identity.similar {
            if !known.contains(reference.as_str()) {
                errors.push(CatalogError::DanglingSimilarReference {
                    identity: name.clone(),
                    reference: reference.clone(),
                });
            }
        }
    }
    errors
}

/// Loads and validates a catalog from a JSON string.
pub fn load_catalog_str(json: &str) -> Result<Vec<Identity>, Vec<CatalogError>> {
    let identities: Vec<Identity> = serde_json::from_str(json)
        .map_err(|e| vec![CatalogError::Schema(e.to_string())])?;
    let errors = validate_invariants(&identities);
    if errors.is_empty() {
        Ok(identities)
    } else {
        Err(errors)
    }
}

/// Loads and validates a catalog from a JSON file.
pub fn load_catalog(path: &Path) -> Result<Vec<Identity>, Vec<CatalogError>> {
    let json = std::fs::read_to_string(path)
        .map_err(|e| vec![CatalogError::Io(format!("{}: {e}", path.display()))])?;
    load_catalog_str(&json)
}

/// The bundled seed catalog.
pub fn bundled_catalog() -> Vec<Identity> {
    load_catalog_str(include_str!("../assets/nmft_seed.json"))
        .expect("bundled catalog must validate")
}

/// Validation report: invariant errors plus advisory warnings.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CatalogReport {
    pub identity_count: usize,
    pub version_count: usize,
    pub fully_parsable_formulas: usize,
    pub errors: Vec<String>,
    pub warnings: Vec<String>,
}

/// Re-runs all invariants plus oracle general-validity on formula
/// versions (warnings only) and checks that every falsifying replacement
/// matches at least one version.
pub fn validate_catalog(identities: &[Identity]) -> CatalogReport {
    let mut report = CatalogReport {
        identity_count: identities.len(),
        ..Default::default()
    };
    report.errors = validate_invariants(identities).iter().map(|e| e.to_string()).collect();

    for identity in identities {
        let name = identity.primary_name();
        for (index, version) in identity.versions.iter().enumerate() {
            report.version_count += 1;
            let Ok(parsed) = parse_version(identity, version) else { continue };
            if let ParsedVersion::Formula(f) = &parsed {
                if f.fully_parsed() {
                    report.fully_parsable_formulas += 1;
                    if !oracle::check_general_validity(f, 64, 0xC0FFEE) {
                        report.warnings.push(format!(
                            "{name:?} version {index}: not generally valid (may be context-bound)"
                        ));
                    }
                }
            }
        }
        for replacement in &identity.falsifying_replacements {
            let matches_any = identity.versions.iter().any(|v| v.content.contains(&replacement.from))
                || identity.false_versions.iter().any(|v| v.contains(&replacement.from));
            if !matches_any {
                report.warnings.push(format!(
                    "{name:?}: replacement {:?} matches no version",
                    replacement.from
                ));
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_catalog_loads() {
        let catalog = bundled_catalog();
        assert!(catalog.len() >= 15, "need at least 15 identities, got {}", catalog.len());
        for required in [
            "Factorial",
            "Pythagorean Theorem",
            "First Binomial Formula",
            "Derivative of a Function",
        ] {
            assert!(
                catalog.iter().any(|i| i.names.iter().any(|n| n == required)),
                "missing {required}"
            );
        }
    }

    #[test]
    fn bundled_catalog_has_enough_parsable_formulas() {
        let catalog = bundled_catalog();
        let report = validate_catalog(&catalog);
        assert!(report.errors.is_empty(), "{:?}", report.errors);
        assert!(
            report.fully_parsable_formulas >= 25,
            "need >= 25 fully parsable formula versions, got {}",
            report.fully_parsable_formulas
        );
    }

    #[test]
    fn strategy_preconditions_covered() {
        let catalog = bundled_catalog();
        let mut has_inequality = false;
        let mut has_functions = false;
        let mut has_matrix = false;
        let mut has_quantifier = false;
        let mut has_probability = false;
        for identity in &catalog {
            for version in &identity.versions {
                let c = &version.content;
                has_inequality |= c.contains("\\le") || c.contains("\\ge") || c.contains("\\neq");
                has_functions |= !version.functions.is_empty();
                has_matrix |= c.contains("pmatrix") || c.contains("smallmatrix");
                has_quantifier |= c.contains("\\forall");
                has_probability |= c.contains("\\mathbb{P}") || c.contains("\\mathrm{Var}");
            }
        }
        assert!(has_inequality && has_functions && has_matrix && has_quantifier && has_probability);
    }

    #[test]
    fn empty_catalog_is_schema_error() {
        let err = load_catalog_str("[]").unwrap_err();
        assert!(matches!(err[0], CatalogError::Schema(_)));
    }

    #[test]
    fn dangling_similar_reference_detected() {
        let json = r#"[{
            "names": ["Thing"],
            "versions": [{"content": "x = x", "kind": "formula", "variables": ["x"]}],
            "similar": ["Nonexistent Thm"]
        }]"#;
        let err = load_catalog_str(json).unwrap_err();
        assert!(err.iter().any(|e| matches!(e, CatalogError::DanglingSimilarReference { .. })));
    }

    #[test]
    fn factorial_replacement_matches_prod_version() {
        let catalog = bundled_catalog();
        let factorial = catalog
            .iter()
            .find(|i| i.names.iter().any(|n| n == "Factorial"))
            .unwrap();
        let has_prod_replacement = factorial
            .falsifying_replacements
            .iter()
            .any(|r| r.from.contains("\\prod") && r.to.contains("\\sum"));
        assert!(has_prod_replacement);
        let report = validate_catalog(&catalog);
        assert!(
            !report.warnings.iter().any(|w| w.contains("\\\\prod")),
            "prod replacement must match a version"
        );
    }

    #[test]
    fn pythagorean_flagged_not_generally_valid() {
        let catalog = bundled_catalog();
        let report = validate_catalog(&catalog);
        assert!(report.errors.is_empty());
        assert!(
            report
                .warnings
                .iter()
                .any(|w| w.contains("Pythagorean Theorem") && w.contains("not generally valid")),
            "a^2+b^2=c^2 is context-bound and must warn, not error: {:?}",
            report.warnings
        );
    }

    #[test]
    fn serialization_roundtrip() {
        let catalog = bundled_catalog();
        let json = serde_json::to_string(&catalog).unwrap();
        let reloaded = load_catalog_str(&json).unwrap();
        assert_eq!(reloaded.len(), catalog.len());
        for (a, b) in catalog.iter().zip(&reloaded) {
            assert_eq!(a.names, b.names);
            assert_eq!(a.versions.len(), b.versions.len());
        }
    }
}

//! Symbol groups: sets of interchangeable symbols sharing a conventional
//! mathematical context, used to constrain substitution candidates.
//!
//! The default table is embedded; it can be overridden from a JSON file of
//! the shape `[{"members": ["i","j","k","l"], "context": "Indices"}, ...]`
//! with an optional `"functions": true` flag per group.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SymbolGroup {
    pub members: Vec<String>,
    pub context: String,
    #[serde(default)]
    pub functions: bool,
}

/// Symbols that refer to constants in certain contexts are never
/// substitution candidates. `i` stays a member of the Indices group (as a
/// substitution source when classified as a variable) but is never a
/// target.
pub const CONSTANT_NAMES: &[&str] = &["e", "i", "\\pi"];

fn g(members: &[&str], context: &str, functions: bool) -> SymbolGroup {
    SymbolGroup {
        members: members.iter().map(|s| s.to_string()).collect(),
        context: context.to_string(),
        functions,
    }
}

/// The embedded group table: ten variable groups and three function
/// groups. `e` is excluded from the parameter row because constants are
/// never substitution candidates.
pub fn default_groups() -> Vec<SymbolGroup> {
    vec![
        g(&["a", "b", "c", "d", "f", "g", "h"], "Parameters", false),
        g(&["i", "j", "k", "l"], "Indices", false),
        g(&["k", "l", "m", "n"], "Counts", false),
        g(&["p", "q", "r", "s", "t"], "Parameters, Points", false),
        g(&["u", "v", "w"], "Vectors", false),
        g(&["x", "y", "z"], "Unknowns", false),
        g(&["A", "B", "C", "D", "E", "F", "G", "H"], "Matrices, Sets", false),
        g(&["Q", "R", "S", "T", "U", "V", "W", "X", "Y", "Z"], "Random Variables", false),
        g(
            &[
                "\\alpha", "\\beta", "\\gamma", "\\delta", "\\theta", "\\vartheta", "\\psi",
                "\\phi", "\\varphi", "\\rho",
            ],
            "Angles",
            false,
        ),
        g(&["\\tau", "\\sigma", "\\lambda", "\\mu", "\\nu"], "Scalars", false),
        g(&["f", "g", "h", "u", "v"], "Generic Functions", true),
        g(&["F", "G", "H", "U", "V"], "Antiderivatives", true),
        g(&["\\tau", "\\sigma", "\\lambda", "\\mu", "\\nu"], "Permutations", true),
    ]
}

/// Loads a group table from JSON, stripping constant names from members.
pub fn groups_from_json(json: &str) -> Result<Vec<SymbolGroup>, serde_json::Error> {
    let mut groups: Vec<SymbolGroup> = serde_json::from_str(json)?;
    for gr in &mut groups {
        gr.members.retain(|m| !CONSTANT_NAMES.contains(&m.as_str()));
    }
    Ok(groups)
}

/// The wildcard candidate pool: common lowercase/uppercase Latin letters
/// and lowercase Greek letters, excluding constants and `o`/`O`.
pub fn wildcard_pool() -> Vec<String> {
    let mut pool = Vec::new();
    for c in b'a'..=b'z' {
        let c = c as char;
        if matches!(c, 'e' | 'i' | 'o') {
            continue;
        }
        pool.push(c.to_string());
    }
    for c in b'A'..=b'Z' {
        let c = c as char;
        if c == 'O' {
            continue;
        }
        pool.push(c.to_string());
    }
    for name in [
        "\\alpha", "\\beta", "\\gamma", "\\delta", "\\epsilon", "\\zeta", "\\eta", "\\theta",
        "\\kappa", "\\lambda", "\\mu", "\\nu", "\\xi", "\\rho", "\\sigma", "\\tau", "\\phi",
        "\\varphi", "\\chi", "\\psi", "\\omega",
    ] {
        pool.push(name.to_string());
    }
    pool
}

/// Case variant of a single-letter Latin symbol (`f` <-> `F`).
pub fn case_variant(name: &str) -> Option<String> {
    let mut chars = name.chars();
    let c = chars.next()?;
    if chars.next().is_some() || !c.is_ascii_alphabetic() {
        return None;
    }
    if c.is_ascii_lowercase() {
        Some(c.to_ascii_uppercase().to_string())
    } else {
        Some(c.to_ascii_lowercase().to_string())
    }
}

/// Latin -> Greek related-variant table (a <-> alpha and friends).
pub fn greek_variant(name: &str) -> Option<String> {
    let v = match name {
        "a" => "\\alpha",
        "b" => "\\beta",
        "g" => "\\gamma",
        "d" => "\\delta",
        "l" => "\\lambda",
        "m" => "\\mu",
        "s" => "\\sigma",
        "t" => "\\tau",
        "f" => "\\phi",
        _ => return None,
    };
    Some(v.to_string())
}

/// Inverse of [`greek_variant`].
pub fn latin_of_greek(name: &str) -> Option<String> {
    let v = match name {
        "\\alpha" => "a",
        "\\beta" => "b",
        "\\gamma" => "g",
        "\\delta" => "d",
        "\\lambda" => "l",
        "\\mu" => "m",
        "\\sigma" => "s",
        "\\tau" => "t",
        "\\phi" => "f",
        _ => return None,
    };
    Some(v.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thirteen_groups_without_pure_constants() {
        let groups = default_groups();
        assert_eq!(groups.len(), 13);
        assert_eq!(groups.iter().filter(|g| g.functions).count(), 3);
        for gr in &groups {
            assert!(!gr.members.contains(&"e".to_string()), "e in {}", gr.context);
            assert!(!gr.members.contains(&"\\pi".to_string()), "pi in {}", gr.context);
        }
        // i stays in the Indices row as a source.
        assert!(groups.iter().any(|g| g.context == "Indices" && g.members.contains(&"i".into())));
    }

    #[test]
    fn json_roundtrip_strips_constants() {
        let json = r#"[{"members": ["i", "j", "e"], "context": "Indices"}]"#;
        let groups = groups_from_json(json).unwrap();
        assert_eq!(groups[0].members, vec!["j"]);
    }

    #[test]
    fn wildcard_excludes_constants() {
        let pool = wildcard_pool();
        for banned in ["e", "i", "o", "O", "\\pi"] {
            assert!(!pool.contains(&banned.to_string()), "{banned} in wildcard pool");
        }
        assert!(pool.contains(&"q".to_string()));
    }

    #[test]
    fn variants() {
        assert_eq!(case_variant("f").as_deref(), Some("F"));
        assert_eq!(case_variant("F").as_deref(), Some("f"));
        assert_eq!(greek_variant("a").as_deref(), Some("\\alpha"));
        assert_eq!(latin_of_greek("\\tau").as_deref(), Some("t"));
        assert_eq!(case_variant("\\alpha"), None);
    }
}

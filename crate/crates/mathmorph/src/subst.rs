//! Symbol substitution: sampling injective renamings constrained by symbol
//! groups, and applying them tree-wise plus string-wise on opaque spans.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::expr::{
    Expr, FuncKind, MathText, OpaqueEntry, ParsedFormula, Run, SetOp, Symbol, SymbolKind,
};
use crate::groups::{
    case_variant, default_groups, greek_variant, latin_of_greek, wildcard_pool, SymbolGroup,
    CONSTANT_NAMES,
};

/// Injective, non-capturing mapping from substitutable symbols to
/// replacement symbols (targets may be indexed).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SubstitutionMap {
    /// Keyed by source (name, index); the value preserves the source kind.
    pub entries: BTreeMap<(String, Option<u32>), Symbol>,
}

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum SubstError {
    #[error("substitution map is not injective: duplicate target {0}")]
    NotInjective(String),
    #[error("target {0} captures an untouched formula symbol")]
    Capturing(String),
    #[error("source or target {0} is a constant/reserved symbol")]
    ConstantSymbol(String),
    #[error("unsafe opaque substitution: {0}")]
    UnsafeOpaqueSubstitution(String),
}

impl SubstitutionMap {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn insert(&mut self, source: Symbol, target: Symbol) {
        self.entries.insert(source.key(), Symbol { kind: source.kind, ..target });
    }

    pub fn target_for(&self, s: &Symbol) -> Option<&Symbol> {
        self.entries.get(&s.key())
    }

    /// Checks injectivity and non-capture against the formula symbol set.
    pub fn validate(&self, formula_symbols: &BTreeSet<Symbol>) -> Result<(), SubstError> {
        let mut targets = BTreeSet::new();
        for ((name, _), target) in &self.entries {
            if CONSTANT_NAMES.contains(&name.as_str()) || CONSTANT_NAMES.contains(&target.name.as_str()) {
                return Err(SubstError::ConstantSymbol(name.clone()));
            }
            if !targets.insert(target.key()) {
                return Err(SubstError::NotInjective(target.to_string()));
            }
        }
        let untouched: BTreeSet<(String, Option<u32>)> = formula_symbols
            .iter()
            .map(|s| s.key())
            .filter(|k| !self.entries.contains_key(k))
            .collect();
        for target in self.entries.values() {
            if untouched.contains(&target.key()) {
                return Err(SubstError::Capturing(target.to_string()));
            }
        }
        Ok(())
    }

    /// True when any entry renames a generic function.
    pub fn has_function_entry(&self) -> bool {
        self.entries.values().any(|t| t.kind == SymbolKind::GenericFunction)
    }

    pub fn has_variable_entry(&self) -> bool {
        self.entries.values().any(|t| t.kind == SymbolKind::Variable)
    }
}

/// Probabilities steering [`sample_substitution`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SubstitutionOptions {
    /// Chance that a symbol (cluster) is selected for substitution.
    pub select_probability: f64,
    /// Chance of adding one random out-of-group candidate to a pool.
    pub wildcard_probability: f64,
    /// Chance of mapping co-occurring same-group variables to an indexed
    /// family (a, b -> a_1, a_2).
    pub indexed_probability: f64,
    pub rng_seed: Option<u64>,
}

impl Default for SubstitutionOptions {
    fn default() -> Self {
        SubstitutionOptions {
            select_probability: 0.7,
            wildcard_probability: 0.15,
            indexed_probability: 0.2,
            rng_seed: None,
        }
    }
}

const RESAMPLE_ATTEMPTS: usize = 8;

/// Variant roles within a related cluster (f / F / phi).
#[derive(Debug, Clone, Copy, PartialEq)]
enum Role {
    Lower,
    Upper,
    Greek,
}

fn role_of(name: &str) -> Option<Role> {
    if latin_of_greek(name).is_some() {
        return Some(Role::Greek);
    }
    let c = name.chars().next()?;
    if name.len() == 1 && c.is_ascii_lowercase() {
        return Some(Role::Lower);
    }
    if name.len() == 1 && c.is_ascii_uppercase() {
        return Some(Role::Upper);
    }
    None
}

/// Base lowercase letter identifying a cluster of related variants.
fn cluster_base(name: &str) -> String {
    if let Some(l) = latin_of_greek(name) {
        return l;
    }
    if name.len() == 1 && name.chars().next().unwrap().is_ascii_uppercase() {
        return name.to_ascii_lowercase();
    }
    name.to_string()
}

fn target_for_role(base: &str, role: Role) -> Option<String> {
    match role {
        Role::Lower => Some(base.to_string()),
        Role::Upper => case_variant(base),
        Role::Greek => greek_variant(base),
    }
}

/// Samples a substitution map for the given substitutable symbols.
///
/// Candidate pools are the union of a symbol's groups plus `x` for
/// variables, optionally one wildcard letter. Related variants present
/// together (f and F, a and alpha) are substituted jointly to a target
/// pair preserving the relationship. When two or more variables share a
/// group, the whole set may map to an indexed family instead.
pub fn sample_substitution(
    symbols: &BTreeSet<Symbol>,
    opts: &SubstitutionOptions,
    rng: &mut impl Rng,
) -> SubstitutionMap {
    sample_substitution_avoiding(symbols, &BTreeSet::new(), opts, rng)
}

/// Like [`sample_substitution`] but additionally avoids colliding with
/// extra display names (reserved symbols of the formula).
pub fn sample_substitution_avoiding(
    symbols: &BTreeSet<Symbol>,
    avoid_names: &BTreeSet<String>,
    opts: &SubstitutionOptions,
    rng: &mut impl Rng,
) -> SubstitutionMap {
    let groups = default_groups();
    sample_with_groups(symbols, avoid_names, &groups, opts, rng)
}

pub fn sample_with_groups(
    symbols: &BTreeSet<Symbol>,
    avoid_names: &BTreeSet<String>,
    groups: &[SymbolGroup],
    opts: &SubstitutionOptions,
    rng: &mut impl Rng,
) -> SubstitutionMap {
    let mut map = SubstitutionMap::default();
    let mut used_targets: BTreeSet<(String, Option<u32>)> = BTreeSet::new();
    let mut handled: BTreeSet<(String, Option<u32>)> = BTreeSet::new();

    // Names that a target must never collide with: every formula symbol
    // (unsubstituted ones enforce non-capture; substituted ones keep the
    // sampling simple) plus caller-provided reserved names.
    let mut forbidden: BTreeSet<String> = symbols.iter().map(|s| s.name.clone()).collect();
    forbidden.extend(avoid_names.iter().cloned());

    let variables: Vec<&Symbol> =
        symbols.iter().filter(|s| s.kind == SymbolKind::Variable).collect();

    // Indexed substitution: same-group plain variables may jointly map to
    // an indexed family.
    if rng.gen_bool(opts.indexed_probability.clamp(0.0, 1.0)) {
        let mut eligible: Vec<(usize, Vec<&Symbol>)> = Vec::new();
        for (gi, group) in groups.iter().enumerate() {
            if group.functions {
                continue;
            }
            let members: Vec<&Symbol> = variables
                .iter()
                .filter(|s| s.index.is_none() && group.members.contains(&s.name))
                .copied()
                .collect();
            if members.len() >= 2 {
                eligible.push((gi, members));
            }
        }
        if !eligible.is_empty() {
            let (gi, members) = &eligible[rng.gen_range(0..eligible.len())];
            let group = &groups[*gi];
            // Base letter drawn from the group, avoiding reserved names.
            let mut bases: Vec<&String> =
                group.members.iter().filter(|m| !avoid_names.contains(*m)).collect();
            bases.shuffle(rng);
            if let Some(base) = bases.first() {
                for (i, m) in members.iter().enumerate() {
                    let target =
                        Symbol { name: (*base).clone(), index: Some(i as u32 + 1), kind: m.kind };
                    if used_targets.insert(target.key()) {
                        map.insert((*m).clone(), target);
                        handled.insert(m.key());
                    }
                }
            }
        }
    }

    // Cluster remaining symbols by related variants.
    let mut clusters: BTreeMap<String, Vec<&Symbol>> = BTreeMap::new();
    for s in symbols.iter() {
        if handled.contains(&s.key()) {
            continue;
        }
        let key = if s.index.is_none() && role_of(&s.name).is_some() {
            format!("{}#{:?}", cluster_base(&s.name), s.kind == SymbolKind::GenericFunction)
        } else {
            // Indexed or unpaired symbols stand alone.
            format!("{}@{:?}#{:?}", s.name, s.index, s.kind)
        };
        clusters.entry(key).or_default().push(s);
    }

    for (_, members) in clusters {
        if !rng.gen_bool(opts.select_probability.clamp(0.0, 1.0)) {
            continue;
        }
        if members.len() == 1 {
            let s = members[0];
            let pool = candidate_pool(s, groups, opts, rng);
            'attempt: for _ in 0..RESAMPLE_ATTEMPTS {
                if pool.is_empty() {
                    break;
                }
                let name = pool[rng.gen_range(0..pool.len())].clone();
                let target = Symbol { name, index: s.index, kind: s.kind };
                if forbidden.contains(&target.name) && target.key() != s.key() {
                    continue 'attempt;
                }
                if used_targets.contains(&target.key()) || target.key() == s.key() {
                    continue 'attempt;
                }
                used_targets.insert(target.key());
                map.insert(s.clone(), target);
                break;
            }
        } else {
            // Joint substitution preserving the variant relationship.
            let roles: Vec<Role> = members.iter().map(|s| role_of(&s.name).unwrap()).collect();
            let primary = members
                .iter()
                .zip(&roles)
                .min_by_key(|(_, r)| match r {
                    Role::Lower => 0,
                    Role::Upper => 1,
                    Role::Greek => 2,
                })
                .map(|(s, _)| *s)
                .unwrap();
            let primary_base = cluster_base(&primary.name);
            let pool = candidate_pool(primary, groups, opts, rng);
            'cluster: for _ in 0..RESAMPLE_ATTEMPTS {
                if pool.is_empty() {
                    break;
                }
                let cand = pool[rng.gen_range(0..pool.len())].clone();
                let base = cluster_base(&cand);
                if base == primary_base || base.len() != 1 {
                    continue 'cluster;
                }
                let mut targets = Vec::with_capacity(members.len());
                for (m, role) in members.iter().zip(&roles) {
                    let Some(tname) = target_for_role(&base, *role) else {
                        continue 'cluster;
                    };
                    let target = Symbol { name: tname, index: None, kind: m.kind };
                    if forbidden.contains(&target.name)
                        || used_targets.contains(&target.key())
                        || members.iter().any(|mm| mm.key() == target.key())
                    {
                        continue 'cluster;
                    }
                    targets.push(target);
                }
                for (m, t) in members.iter().zip(targets) {
                    used_targets.insert(t.key());
                    map.insert((*m).clone(), t);
                }
                break;
            }
        }
    }

    // Drop entries until the map validates (defensive; sampling above
    // already enforces the invariants).
    while map.validate(symbols).is_err() {
        let Some(key) = map.entries.keys().next().cloned() else { break };
        map.entries.remove(&key);
    }
    map
}

/// Union of the symbol's group members, plus `x` for variables, plus an
/// optional wildcard letter; never contains constants or the symbol itself.
fn candidate_pool(
    s: &Symbol,
    groups: &[SymbolGroup],
    opts: &SubstitutionOptions,
    rng: &mut impl Rng,
) -> Vec<String> {
    let want_functions = s.kind == SymbolKind::GenericFunction;
    let mut pool: BTreeSet<String> = BTreeSet::new();
    for group in groups {
        if group.functions != want_functions {
            continue;
        }
        if group.members.contains(&s.name) {
            pool.extend(group.members.iter().cloned());
        }
    }
    if !want_functions {
        pool.insert("x".to_string());
        if rng.gen_bool(opts.wildcard_probability.clamp(0.0, 1.0)) {
            let wp = wildcard_pool();
            pool.insert(wp[rng.gen_range(0..wp.len())].clone());
        }
    }
    pool.remove(&s.name);
    for c in CONSTANT_NAMES {
        pool.remove(*c);
    }
    pool.into_iter().collect()
}

// ---------------------------------------------------------------------------
// Application
// ---------------------------------------------------------------------------

fn substitute_symbol(s: &Symbol, map: &SubstitutionMap) -> Symbol {
    match map.target_for(s) {
        Some(t) if s.is_substitutable() => Symbol { kind: s.kind, ..t.clone() },
        _ => s.clone(),
    }
}

fn substitute_expr(e: &Expr, map: &SubstitutionMap) -> Result<Expr, SubstError> {
    Ok(match e {
        Expr::Symbol(s) => Expr::Symbol(substitute_symbol(s, map)),
        Expr::GenericApp { symbol, args, deriv_order } => Expr::GenericApp {
            symbol: substitute_symbol(symbol, map),
            args: args.iter().map(|a| substitute_expr(a, map)).collect::<Result<_, _>>()?,
            deriv_order: *deriv_order,
        },
        Expr::Func(kind, args) => {
            let kind = match kind {
                FuncKind::Log(b) => FuncKind::Log(Box::new(substitute_expr(b, map)?)),
                other => other.clone(),
            };
            Expr::Func(kind, args.iter().map(|a| substitute_expr(a, map)).collect::<Result<_, _>>()?)
        }
        Expr::Add(xs) => {
            Expr::Add(xs.iter().map(|x| substitute_expr(x, map)).collect::<Result<_, _>>()?)
        }
        Expr::Mul(xs) => {
            Expr::Mul(xs.iter().map(|x| substitute_expr(x, map)).collect::<Result<_, _>>()?)
        }
        Expr::Pow(b, x) => Expr::pow(substitute_expr(b, map)?, substitute_expr(x, map)?),
        Expr::Relation { op, lhs, rhs } => {
            Expr::relation(*op, substitute_expr(lhs, map)?, substitute_expr(rhs, map)?)
        }
        Expr::Implication { antecedent, consequent } => Expr::Implication {
            antecedent: Box::new(substitute_expr(antecedent, map)?),
            consequent: Box::new(substitute_expr(consequent, map)?),
        },
        Expr::Quantifier { bound, domain, body } => Expr::Quantifier {
            bound: bound.iter().map(|s| substitute_symbol(s, map)).collect(),
            domain: domain.as_ref().map(|d| substitute_expr(d, map).map(Box::new)).transpose()?,
            body: body.as_ref().map(|b| substitute_expr(b, map).map(Box::new)).transpose()?,
        },
        Expr::BigOp { kind, bound, lower, upper, body } => Expr::BigOp {
            kind: *kind,
            bound: substitute_symbol(bound, map),
            lower: lower.as_ref().map(|l| substitute_expr(l, map).map(Box::new)).transpose()?,
            upper: upper.as_ref().map(|u| substitute_expr(u, map).map(Box::new)).transpose()?,
            body: Box::new(substitute_expr(body, map)?),
        },
        Expr::Derivative { body, wrt, order } => Expr::Derivative {
            body: Box::new(substitute_expr(body, map)?),
            wrt: substitute_symbol(wrt, map),
            order: *order,
        },
        Expr::Matrix(rows) => Expr::Matrix(
            rows.iter()
                .map(|r| r.iter().map(|x| substitute_expr(x, map)).collect::<Result<_, _>>())
                .collect::<Result<_, _>>()?,
        ),
        Expr::SetExpr(op) => Expr::SetExpr(match op {
            SetOp::Union(xs) => {
                SetOp::Union(xs.iter().map(|x| substitute_expr(x, map)).collect::<Result<_, _>>()?)
            }
            SetOp::Intersection(xs) => SetOp::Intersection(
                xs.iter().map(|x| substitute_expr(x, map)).collect::<Result<_, _>>()?,
            ),
            SetOp::Membership { element, set } => SetOp::Membership {
                element: Box::new(substitute_expr(element, map)?),
                set: Box::new(substitute_expr(set, map)?),
            },
            SetOp::Named(n) => SetOp::Named(*n),
            SetOp::Empty => SetOp::Empty,
        }),
        Expr::Opaque { raw, occurrences } => substitute_opaque(raw, occurrences, map)?,
        other => other.clone(),
    })
}

/// Byte ranges of every `\command` token in a raw LaTeX string.
fn command_regions(raw: &str) -> Vec<(usize, usize)> {
    let mut regions = Vec::new();
    let mut i = 0;
    while i < raw.len() {
        let c = raw[i..].chars().next().unwrap();
        if c == '\\' {
            let start = i;
            i += 1;
            let name: String = raw[i..].chars().take_while(|c| c.is_ascii_alphabetic()).collect();
            if !name.is_empty() {
                i += name.len();
                regions.push((start, i));
                continue;
            }
        }
        i += c.len_utf8();
    }
    regions
}

/// Safe string substitution on an opaque segment: every occurrence span is
/// replaced; touching a reserved command region fails atomically.
fn substitute_opaque(
    raw: &str,
    occurrences: &BTreeMap<String, OpaqueEntry>,
    map: &SubstitutionMap,
) -> Result<Expr, SubstError> {
    // Collect replacements: (span, replacement text, new key, kind)
    let mut jobs: Vec<(usize, usize, String, Option<String>, SymbolKind)> = Vec::new();
    for (name, entry) in occurrences {
        let source = Symbol { name: name.clone(), index: None, kind: entry.kind };
        if let Some(target) = map.target_for(&source) {
            let rendered = target.to_string();
            // Greek commands need a separating space before a following
            // letter; handled below at splice time.
            let new_key = if target.index.is_none() { Some(target.name.clone()) } else { None };
            for &(a, b) in &entry.spans {
                jobs.push((a, b, rendered.clone(), new_key.clone(), entry.kind));
            }
        }
    }
    if jobs.is_empty() {
        return Ok(Expr::Opaque { raw: raw.to_string(), occurrences: occurrences.clone() });
    }

    let commands = command_regions(raw);
    for (a, b, ..) in &jobs {
        for (ca, cb) in &commands {
            // A span that is exactly a greek command is legitimate; any
            // partial overlap with a command is unsafe.
            if a < cb && ca < b && !(a == ca && b == cb) {
                return Err(SubstError::UnsafeOpaqueSubstitution(format!(
                    "occurrence {a}..{b} intersects command {ca}..{cb}"
                )));
            }
        }
        if &raw[*a..*b] != raw[*a..*b].to_string().as_str() {
            unreachable!();
        }
    }

    jobs.sort_by_key(|j| j.0);
    // Splice right to left, tracking where untouched spans move.
    let mut new_raw = raw.to_string();
    let mut shifted: BTreeMap<String, OpaqueEntry> = BTreeMap::new();
    // Start from untouched occurrence entries.
    let mut survivors: Vec<(String, SymbolKind, usize, usize)> = Vec::new();
    for (name, entry) in occurrences {
        let source = Symbol { name: name.clone(), index: None, kind: entry.kind };
        if map.target_for(&source).is_none() {
            for &(a, b) in &entry.spans {
                survivors.push((name.clone(), entry.kind, a, b));
            }
        }
    }
    let mut inserted: Vec<(String, SymbolKind, usize, usize)> = Vec::new();
    for (a, b, mut text, new_key, kind) in jobs.into_iter().rev() {
        // Greek replacement followed directly by a letter would fuse into
        // one command name; insert a space.
        if text.starts_with('\\') {
            if let Some(next) = new_raw[b..].chars().next() {
                if next.is_ascii_alphabetic() {
                    text.push(' ');
                }
            }
        }
        let delta = text.len() as i64 - (b - a) as i64;
        new_raw.replace_range(a..b, &text);
        for (_, _, sa, sb) in survivors.iter_mut().chain(inserted.iter_mut()) {
            if *sa >= b {
                *sa = (*sa as i64 + delta) as usize;
                *sb = (*sb as i64 + delta) as usize;
            }
        }
        if let Some(key) = new_key {
            inserted.push((key.clone(), kind, a, a + key.len()));
        }
    }
    for (name, kind, a, b) in survivors.into_iter().chain(inserted) {
        if new_raw.get(a..b) == Some(name.as_str()) {
            shifted.entry(name).or_insert_with(|| OpaqueEntry { kind, spans: vec![] }).spans.push((a, b));
        }
    }
    for entry in shifted.values_mut() {
        entry.spans.sort_unstable();
    }
    Ok(Expr::Opaque { raw: new_raw, occurrences: shifted })
}

/// Applies a substitution to every segment; all-or-nothing on error.
pub fn apply_substitution(
    formula: &ParsedFormula,
    map: &SubstitutionMap,
) -> Result<ParsedFormula, SubstError> {
    let mut segments = Vec::with_capacity(formula.segments.len());
    for (delim, seg) in &formula.segments {
        segments.push((delim.clone(), substitute_expr(seg, map)?));
    }
    Ok(ParsedFormula { segments, source: formula.source.clone() })
}

/// Applies the same substitution to every formula run of a math text.
pub fn apply_substitution_text(text: &MathText, map: &SubstitutionMap) -> Result<MathText, SubstError> {
    let mut runs = Vec::with_capacity(text.runs.len());
    for run in &text.runs {
        match run {
            Run::Prose(p) => runs.push(Run::Prose(p.clone())),
            Run::Formula(f) => runs.push(Run::Formula(apply_substitution(f, map)?)),
        }
    }
    Ok(MathText { runs, source: text.source.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::{parse_formula, ParseOptions};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn symbols_of(s: &str) -> (ParsedFormula, BTreeSet<Symbol>) {
        let f = parse_formula(s, &ParseOptions::default()).unwrap();
        let syms = f.free_symbols();
        (f, syms)
    }

    #[test]
    fn full_selection_yields_injective_map() {
        let (_, syms) = symbols_of(r"(a+b)^2=a^2+2ab+b^2");
        let opts = SubstitutionOptions {
            select_probability: 1.0,
            wildcard_probability: 0.0,
            indexed_probability: 0.0,
            rng_seed: None,
        };
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let map = sample_substitution(&syms, &opts, &mut rng);
            assert!(map.validate(&syms).is_ok());
            assert_eq!(map.len(), 2, "both symbols substituted under full selection");
            for target in map.entries.values() {
                assert_ne!(target.name, "e");
                assert_ne!(target.name, "i");
            }
        }
    }

    #[test]
    fn paired_functions_substituted_jointly() {
        let (_, syms) = symbols_of(r"\int_a^b f(x)\,dx = F(b)-F(a)");
        let opts = SubstitutionOptions {
            select_probability: 1.0,
            wildcard_probability: 0.0,
            indexed_probability: 0.0,
            rng_seed: None,
        };
        let mut joint_seen = false;
        for seed in 0..80 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let map = sample_substitution(&syms, &opts, &mut rng);
            let f_target = map.entries.get(&("f".to_string(), None));
            let cap_target = map.entries.get(&("F".to_string(), None));
            match (f_target, cap_target) {
                (Some(ft), Some(ct)) => {
                    assert_eq!(
                        ct.name,
                        ft.name.to_ascii_uppercase(),
                        "F must follow f: {ft:?} vs {ct:?}"
                    );
                    joint_seen = true;
                }
                (None, None) => {}
                other => panic!("f and F must be substituted jointly, got {other:?}"),
            }
        }
        assert!(joint_seen);
    }

    #[test]
    fn indexed_substitution_produces_family() {
        let (_, syms) = symbols_of(r"(a+b)^2=a^2+2ab+b^2");
        let opts = SubstitutionOptions {
            select_probability: 0.0,
            wildcard_probability: 0.0,
            indexed_probability: 1.0,
            rng_seed: None,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let map = sample_substitution(&syms, &opts, &mut rng);
        assert_eq!(map.len(), 2);
        let t_a = &map.entries[&("a".to_string(), None)];
        let t_b = &map.entries[&("b".to_string(), None)];
        assert_eq!(t_a.name, t_b.name, "same base letter");
        assert_eq!(t_a.index, Some(1));
        assert_eq!(t_b.index, Some(2));
    }

    #[test]
    fn apply_renames_tree() {
        let (f, syms) = symbols_of(r"\frac{d}{dx} f(x) = \lim_{h \to 0} \frac{f(x+h)-f(x)}{h}");
        let mut map = SubstitutionMap::default();
        map.insert(Symbol::var("x"), Symbol::var("y"));
        map.insert(Symbol::func("f"), Symbol::func("g"));
        map.validate(&syms).unwrap();
        let out = apply_substitution(&f, &map).unwrap();
        let notation = out.segments[0].1.func_notation();
        assert_eq!(
            notation,
            "EQU(DERIV(FUNC(g, VAR(y)), VAR(y)), LIM(DIV(SUB(FUNC(g, ADD(VAR(y), VAR(h))), \
             FUNC(g, VAR(y))), VAR(h)), VAR(h), INT(0)))"
        );
        // symbol count preserved
        assert_eq!(out.free_symbols().len(), syms.len());
    }

    #[test]
    fn empty_map_is_identity() {
        let (f, _) = symbols_of(r"(a+b)^2=a^2+2ab+b^2");
        let out = apply_substitution(&f, &SubstitutionMap::default()).unwrap();
        assert_eq!(out.segments, f.segments);
    }

    #[test]
    fn opaque_substitution_preserves_reserved_commands() {
        let f = parse_formula(r"x \approx \exp{x}", &ParseOptions::default()).unwrap();
        assert!(!f.fully_parsed());
        let mut map = SubstitutionMap::default();
        map.insert(Symbol::var("x"), Symbol::var("y"));
        let out = apply_substitution(&f, &map).unwrap();
        if let Expr::Opaque { raw, occurrences } = &out.segments[0].1 {
            assert_eq!(raw, r"y \approx \exp{y}");
            assert!(occurrences.contains_key("y"));
            assert!(!occurrences.contains_key("x"));
        } else {
            panic!("expected opaque segment");
        }
    }

    #[test]
    fn unsafe_opaque_span_rejected() {
        // Hand-built opaque with a span inside a command region.
        let raw = r"\exp{x}".to_string();
        let mut occ = BTreeMap::new();
        occ.insert(
            "x".to_string(),
            OpaqueEntry { kind: SymbolKind::Variable, spans: vec![(2, 3)] },
        );
        let f = ParsedFormula::single(Expr::Opaque { raw, occurrences: occ }, r"\exp{x}");
        let mut map = SubstitutionMap::default();
        map.insert(Symbol::var("x"), Symbol::var("y"));
        let err = apply_substitution(&f, &map).unwrap_err();
        assert!(matches!(err, SubstError::UnsafeOpaqueSubstitution(_)));
    }

    #[test]
    fn text_substitution_is_consistent() {
        // The prime in the first formula marks f as a function text-wide.
        let text = "Let $f'(x)$ exist, then $f(x+h)$ with $h$ small.";
        let mt = crate::parser::parse_math_text(text, &ParseOptions::default()).unwrap();
        let mut map = SubstitutionMap::default();
        map.insert(Symbol::func("f"), Symbol::func("g"));
        map.insert(Symbol::var("x"), Symbol::var("y"));
        let out = apply_substitution_text(&mt, &map).unwrap();
        let printed = crate::printer::print_text_random(
            &out,
            &crate::printer::PrintSettings::default(),
            &mut ChaCha8Rng::seed_from_u64(0),
        );
        assert!(printed.contains("g'(y)") || printed.contains("g'\\left(y\\right)"), "{printed}");
        assert!(!printed.contains("$f") && !printed.contains("f(") && !printed.contains("(x"), "{printed}");
    }

    #[test]
    fn capture_rejected() {
        let (_, syms) = symbols_of(r"a + b");
        let mut map = SubstitutionMap::default();
        map.insert(Symbol::var("a"), Symbol::var("b")); // b stays untouched
        assert!(matches!(map.validate(&syms), Err(SubstError::Capturing(_))));
    }
}

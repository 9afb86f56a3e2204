//! Falsified version generation: eight rule-based strategies that turn a
//! formula (or math text) into a similar-looking but non-equivalent one.
//!
//! A random subset of the applicable strategies is selected and applied in
//! a fixed order. The Random strategy replaces the base formula with an
//! equivalent version of a different formula before the remaining
//! strategies run, which is why identities without inequalities can still
//! record an Inequality application.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::expr::{
    structural_eq, ConstantKind, Expr, FuncKind, MathText, ParsedFormula, RelOp, Run, Symbol,
    SymbolKind,
};
use crate::groups::{default_groups, wildcard_pool};
use crate::printer::print_canonical_expr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Strategy {
    Equality,
    Inequality,
    Swap,
    Variable,
    Constant,
    Distribute,
    Manual,
    Random,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Equality => "equality",
            Strategy::Inequality => "inequality",
            Strategy::Swap => "swap",
            Strategy::Variable => "variable",
            Strategy::Constant => "constant",
            Strategy::Distribute => "distribute",
            Strategy::Manual => "manual",
            Strategy::Random => "random",
        }
    }
}

/// Fixed application order (Random runs first as the base swap; see
/// module docs).
const STRATEGY_ORDER: [Strategy; 7] = [
    Strategy::Equality,
    Strategy::Inequality,
    Strategy::Swap,
    Strategy::Variable,
    Strategy::Constant,
    Strategy::Distribute,
    Strategy::Manual,
];

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FalsifyOptions {
    pub equality: f64,
    pub inequality: f64,
    pub swap: f64,
    pub variable: f64,
    pub constant: f64,
    pub distribute: f64,
    pub manual: f64,
    pub random: f64,
    /// Attempts before giving up on a version.
    pub retry_cap: usize,
}

impl Default for FalsifyOptions {
    fn default() -> Self {
        FalsifyOptions {
            equality: 0.22,
            inequality: 0.30,
            swap: 0.26,
            variable: 0.26,
            constant: 0.22,
            distribute: 0.18,
            manual: 0.22,
            random: 0.20,
            retry_cap: 8,
        }
    }
}

impl FalsifyOptions {
    pub fn from_json(json: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(json)
    }

    fn probability(&self, s: Strategy) -> f64 {
        match s {
            Strategy::Equality => self.equality,
            Strategy::Inequality => self.inequality,
            Strategy::Swap => self.swap,
            Strategy::Variable => self.variable,
            Strategy::Constant => self.constant,
            Strategy::Distribute => self.distribute,
            Strategy::Manual => self.manual,
            Strategy::Random => self.random,
        }
    }
}

#[derive(Debug, Clone)]
pub enum FalsifyInput {
    Formula(ParsedFormula),
    Text(MathText),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AppliedStrategy {
    pub strategy: Strategy,
    pub description: String,
}

#[derive(Debug, Clone)]
pub struct FalsificationRecord {
    pub applied: Vec<AppliedStrategy>,
    pub result: FalsifyInput,
}

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum FalsifyError {
    #[error("no falsification strategy applicable")]
    NoStrategyApplicable,
}

/// Manual falsification hints from a catalog identity.
#[derive(Debug, Clone, Default)]
pub struct ManualHints {
    pub false_versions: Vec<String>,
    pub similar: Vec<String>,
    /// (from, to, applies to formulas, applies to texts)
    pub replacements: Vec<(String, String, bool, bool)>,
    /// Parse declarations for false versions.
    pub variables: Vec<String>,
    pub functions: Vec<String>,
}

impl ManualHints {
    pub fn is_empty(&self) -> bool {
        self.false_versions.is_empty() && self.similar.is_empty() && self.replacements.is_empty()
    }
}

/// Source of random replacement material: equivalent versions of other
/// formulas, plus identity lookup for similar-formula hints. Pools are
/// immutable snapshots taken before generation begins.
pub trait VersionPool {
    /// Random version of a formula other than `exclude`.
    fn draw_other(&self, exclude: Option<&str>, want_text: bool, rng: &mut dyn rand::RngCore)
        -> Option<FalsifyInput>;
    /// Random version of the named identity (for similar-formula hints).
    fn draw_named(&self, name: &str, rng: &mut dyn rand::RngCore) -> Option<FalsifyInput>;
    fn is_empty(&self) -> bool;
}

/// Pool over an in-memory snapshot of (identity name, parsed version).
pub struct SlicePool {
    pub items: Vec<(String, FalsifyInput)>,
}

impl VersionPool for SlicePool {
    fn draw_other(
        &self,
        exclude: Option<&str>,
        want_text: bool,
        rng: &mut dyn rand::RngCore,
    ) -> Option<FalsifyInput> {
        let candidates: Vec<&(String, FalsifyInput)> = self
            .items
            .iter()
            .filter(|(name, item)| {
                exclude.map(|e| name != e).unwrap_or(true)
                    && matches!(item, FalsifyInput::Text(_)) == want_text
            })
            .collect();
        if candidates.is_empty() {
            // fall back to any kind
            let any: Vec<&(String, FalsifyInput)> = self
                .items
                .iter()
                .filter(|(name, _)| exclude.map(|e| name != e).unwrap_or(true))
                .collect();
            if any.is_empty() {
                return None;
            }
            return Some(any[rng.gen_range(0..any.len())].1.clone());
        }
        Some(candidates[rng.gen_range(0..candidates.len())].1.clone())
    }

    fn draw_named(&self, name: &str, rng: &mut dyn rand::RngCore) -> Option<FalsifyInput> {
        let candidates: Vec<&(String, FalsifyInput)> =
            self.items.iter().filter(|(n, _)| n == name).collect();
        if candidates.is_empty() {
            return None;
        }
        Some(candidates[rng.gen_range(0..candidates.len())].1.clone())
    }

    fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Empty pool for standalone falsification.
pub struct NoPool;

impl VersionPool for NoPool {
    fn draw_other(&self, _: Option<&str>, _: bool, _: &mut dyn rand::RngCore) -> Option<FalsifyInput> {
        None
    }
    fn draw_named(&self, _: &str, _: &mut dyn rand::RngCore) -> Option<FalsifyInput> {
        None
    }
    fn is_empty(&self) -> bool {
        true
    }
}

// ---------------------------------------------------------------------------
// Site enumeration helpers
// ---------------------------------------------------------------------------

/// Pre-order node listing of a segment tree.
fn preorder<'a>(e: &'a Expr, out: &mut Vec<&'a Expr>) {
    out.push(e);
    for c in e.children() {
        preorder(c, out);
    }
}

/// Rebuilds a tree with `f` applied to the pre-order node `target`.
fn transform_nth(e: &Expr, counter: &mut usize, target: usize, f: &mut dyn FnMut(&Expr) -> Expr) -> Expr {
    let my_id = *counter;
    *counter += 1;
    if my_id == target {
        return f(e);
    }
    e.map_children(&mut |c| transform_nth(c, counter, target, f))
}

/// All (segment index, node id) pairs whose node satisfies `pred`.
fn sites(formula: &ParsedFormula, pred: &dyn Fn(&Expr) -> bool) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (si, (_, seg)) in formula.segments.iter().enumerate() {
        let mut nodes = Vec::new();
        preorder(seg, &mut nodes);
        for (ni, node) in nodes.iter().enumerate() {
            if pred(node) {
                out.push((si, ni));
            }
        }
    }
    out
}

fn rewrite_site(
    formula: &ParsedFormula,
    site: (usize, usize),
    f: &mut dyn FnMut(&Expr) -> Expr,
) -> ParsedFormula {
    let mut segments = formula.segments.clone();
    let mut counter = 0;
    segments[site.0].1 = transform_nth(&formula.segments[site.0].1, &mut counter, site.1, f);
    ParsedFormula { segments, source: formula.source.clone() }
}

fn node_at(formula: &ParsedFormula, site: (usize, usize)) -> &Expr {
    let mut nodes = Vec::new();
    preorder(&formula.segments[site.0].1, &mut nodes);
    nodes[site.1]
}

/// True when the node is an arithmetic expression a term can be added to.
fn is_arithmetic(e: &Expr) -> bool {
    !matches!(
        e,
        Expr::Relation { .. }
            | Expr::Implication { .. }
            | Expr::Quantifier { .. }
            | Expr::SetExpr(_)
            | Expr::Opaque { .. }
            | Expr::Matrix(_)
    )
}

fn parent_map(seg: &Expr) -> Vec<Option<usize>> {
    fn walk(e: &Expr, parent: Option<usize>, counter: &mut usize, out: &mut Vec<Option<usize>>) {
        let my_id = *counter;
        *counter += 1;
        out.push(parent);
        for c in e.children() {
            walk(c, Some(my_id), counter, out);
        }
    }
    let mut out = Vec::new();
    walk(seg, None, &mut 0, &mut out);
    out
}

// ---------------------------------------------------------------------------
// Per-strategy sub-operations
// ---------------------------------------------------------------------------

type StratResult = Option<(ParsedFormula, String)>;

fn fresh_variable(formula: &ParsedFormula, preferred_group_of: Option<&str>, rng: &mut impl Rng) -> Option<Symbol> {
    let taken: BTreeSet<String> = {
        let mut names: BTreeSet<String> = formula.free_symbols().iter().map(|s| s.name.clone()).collect();
        // also avoid reserved display names inside the tree
        fn reserved_names(e: &Expr, out: &mut BTreeSet<String>) {
            if let Expr::Symbol(s) = e {
                out.insert(s.name.clone());
            }
            for c in e.children() {
                reserved_names(c, out);
            }
        }
        for (_, seg) in &formula.segments {
            reserved_names(seg, &mut names);
        }
        names
    };
    let mut pool: Vec<String> = Vec::new();
    if let Some(base) = preferred_group_of {
        for group in default_groups() {
            if !group.functions && group.members.iter().any(|m| m == base) {
                pool.extend(group.members.iter().cloned());
            }
        }
    }
    pool.extend(wildcard_pool());
    pool.retain(|n| !taken.contains(n) && n != "e" && n != "i");
    if pool.is_empty() {
        return None;
    }
    Some(Symbol::var(pool[rng.gen_range(0..pool.len())].clone()))
}

/// Inserts or removes a term of an equality (outer level or inside a
/// sub-expression); never inserts an additive zero.
pub fn strat_equality(formula: &ParsedFormula, rng: &mut impl Rng) -> StratResult {
    let has_eq = !sites(formula, &|e| matches!(e, Expr::Relation { op: RelOp::Eq, .. })).is_empty();
    if !has_eq {
        return None;
    }
    let try_remove = rng.gen_bool(0.4);
    if try_remove {
        let add_sites = sites(formula, &|e| matches!(e, Expr::Add(ts) if ts.len() >= 2));
        if let Some(&site) = add_sites.get(rng.gen_range(0..add_sites.len().max(1)).min(add_sites.len().saturating_sub(1))) {
            if !add_sites.is_empty() {
                let victim_idx;
                let removed_desc;
                {
                    let Expr::Add(terms) = node_at(formula, site) else { return None };
                    victim_idx = rng.gen_range(0..terms.len());
                    removed_desc = print_canonical_expr(&terms[victim_idx]);
                }
                let out = rewrite_site(formula, site, &mut |e| {
                    let Expr::Add(terms) = e else { return e.clone() };
                    let mut terms = terms.clone();
                    terms.remove(victim_idx);
                    Expr::add(terms)
                });
                return Some((out, format!("Removed {removed_desc}")));
            }
        }
        // fall through to insertion
    }
    // insertion: pick a target site (arithmetic node)
    let insert_sites = sites(formula, &|e| is_arithmetic(e));
    if insert_sites.is_empty() {
        return None;
    }
    let site = insert_sites[rng.gen_range(0..insert_sites.len())];
    // term: existing subexpression, fresh variable, or small number
    let term = match rng.gen_range(0..3) {
        0 => {
            // existing sub-expression, small ones preferred
            let cand = sites(formula, &|e| is_arithmetic(e) && e.node_count() <= 7 && !e.is_integer_value(0));
            if cand.is_empty() {
                None
            } else {
                Some(node_at(formula, cand[rng.gen_range(0..cand.len())]).clone())
            }
        }
        1 => fresh_variable(formula, None, rng).map(Expr::Symbol),
        _ => Some(Expr::int(rng.gen_range(1..=9))),
    };
    let Some(term) = term else { return None };
    if term.is_integer_value(0) {
        return None;
    }
    let negate = rng.gen_bool(0.5);
    let desc_term = print_canonical_expr(&term);
    let inserted = if negate { Expr::neg(term) } else { term };
    let out = rewrite_site(formula, site, &mut |e| Expr::add(vec![e.clone(), inserted.clone()]));
    let sign = if negate { "-" } else { "+" };
    Some((out, format!("Inserted {sign}{desc_term}")))
}

/// Inverts an inequality symbol; `!=` becomes `=` but never the reverse.
pub fn strat_inequality(formula: &ParsedFormula, rng: &mut impl Rng) -> StratResult {
    let ineq_sites = sites(formula, &|e| {
        matches!(e, Expr::Relation { op, .. } if op.is_inequality())
    });
    if ineq_sites.is_empty() {
        return None;
    }
    let site = ineq_sites[rng.gen_range(0..ineq_sites.len())];
    let mut desc = String::new();
    let out = rewrite_site(formula, site, &mut |e| {
        let Expr::Relation { op, lhs, rhs } = e else { return e.clone() };
        let new_op = match op {
            RelOp::Le => RelOp::Gt,
            RelOp::Gt => RelOp::Le,
            RelOp::Ge => RelOp::Lt,
            RelOp::Lt => RelOp::Ge,
            RelOp::Ne => RelOp::Eq,
            RelOp::Eq => return e.clone(),
        };
        desc = format!("Inverted {} to {}", op.latex(), new_op.latex());
        Expr::Relation { op: new_op, lhs: lhs.clone(), rhs: rhs.clone() }
    });
    Some((out, desc))
}

const SWAP_FUNC_POOL: [FuncKind; 6] =
    [FuncKind::Sin, FuncKind::Cos, FuncKind::Tan, FuncKind::Ln, FuncKind::Sqrt, FuncKind::Exp];

/// Replaces a named unary function or swaps the operands of a
/// subtraction, division or exponentiation.
pub fn strat_swap(formula: &ParsedFormula, rng: &mut impl Rng) -> StratResult {
    #[derive(Clone, Copy)]
    enum Kind {
        Fn,
        Pow,
        Div,
        Sub,
    }
    let mut eligible: Vec<((usize, usize), Kind)> = Vec::new();
    for (si, (_, seg)) in formula.segments.iter().enumerate() {
        let parents = parent_map(seg);
        let mut nodes = Vec::new();
        preorder(seg, &mut nodes);
        for (ni, node) in nodes.iter().enumerate() {
            match node {
                Expr::Func(kind, args)
                    if args.len() == 1
                        && matches!(
                            kind,
                            FuncKind::Sin
                                | FuncKind::Cos
                                | FuncKind::Tan
                                | FuncKind::Ln
                                | FuncKind::Sqrt
                                | FuncKind::Exp
                                | FuncKind::ArcSin
                                | FuncKind::ArcCos
                                | FuncKind::ArcTan
                        ) =>
                {
                    eligible.push(((si, ni), Kind::Fn));
                }
                Expr::Pow(_, exp) if !exp.is_integer_value(-1) => {
                    eligible.push(((si, ni), Kind::Pow));
                }
                Expr::Mul(fs)
                    if fs.iter().any(|f| matches!(f, Expr::Pow(_, e) if e.is_integer_value(-1))) =>
                {
                    eligible.push(((si, ni), Kind::Div));
                }
                Expr::Add(ts) if ts.len() == 2 => {
                    let neg: Vec<bool> = ts.iter().map(|t| t.is_negated_term()).collect();
                    if neg.iter().filter(|b| **b).count() == 1 {
                        // Swapping under an even power is identity-preserving.
                        let under_even_pow = parents[ni]
                            .map(|pi| {
                                matches!(
                                    nodes[pi],
                                    Expr::Pow(_, e) if matches!(e.as_ref(), Expr::Integer(v)
                                        if (v.clone() % 2) == num_bigint::BigInt::from(0))
                                )
                            })
                            .unwrap_or(false);
                        if !under_even_pow {
                            eligible.push(((si, ni), Kind::Sub));
                        }
                    }
                }
                _ => {}
            }
        }
    }
    if eligible.is_empty() {
        return None;
    }
    let (site, kind) = eligible[rng.gen_range(0..eligible.len())];
    let mut desc = String::new();
    let out = match kind {
        Kind::Fn => rewrite_site(formula, site, &mut |e| {
            let Expr::Func(orig, args) = e else { return e.clone() };
            let pool: Vec<&FuncKind> =
                SWAP_FUNC_POOL.iter().filter(|k| k.name() != orig.name()).collect();
            let new = pool[rng.gen_range(0..pool.len())].clone();
            desc = format!("Replaced {} by {}", orig.name(), new.name());
            Expr::Func(new, args.clone())
        }),
        Kind::Pow => rewrite_site(formula, site, &mut |e| {
            let Expr::Pow(b, x) = e else { return e.clone() };
            desc = format!(
                "Swapped base and exponent in {}",
                print_canonical_expr(e)
            );
            Expr::Pow(x.clone(), b.clone())
        }),
        Kind::Div => rewrite_site(formula, site, &mut |e| {
            let Expr::Mul(fs) = e else { return e.clone() };
            let mut num: Vec<Expr> = Vec::new();
            let mut den: Vec<Expr> = Vec::new();
            for f in fs {
                match f {
                    Expr::Pow(base, x) if x.is_integer_value(-1) => den.push(base.as_ref().clone()),
                    other => num.push(other.clone()),
                }
            }
            desc = "Swapped numerator and denominator".to_string();
            let new_num = Expr::mul(den);
            let new_den = Expr::mul(num);
            Expr::div(new_num, new_den)
        }),
        Kind::Sub => rewrite_site(formula, site, &mut |e| {
            let Expr::Add(ts) = e else { return e.clone() };
            desc = "Swapped order of subtraction".to_string();
            let (pos, neg): (Vec<&Expr>, Vec<&Expr>) = (
                ts.iter().filter(|t| !t.is_negated_term()).collect(),
                ts.iter().filter(|t| t.is_negated_term()).collect(),
            );
            let a = pos[0].clone();
            let b = neg[0].strip_negation();
            Expr::add(vec![b, Expr::neg(a)])
        }),
    };
    if structural_eq(&out.segments[site.0].1, &formula.segments[site.0].1) {
        return None;
    }
    Some((out, desc))
}

/// Splits one variable: replaces a proper, non-empty subset of its
/// occurrences with a fresh variable.
pub fn strat_variable(formula: &ParsedFormula, rng: &mut impl Rng) -> StratResult {
    // occurrences: symbol nodes plus binder slots
    #[derive(Clone, Copy, PartialEq)]
    enum Occ {
        Node,
        Binder,
    }
    let mut occurrences: std::collections::BTreeMap<(String, Option<u32>), Vec<((usize, usize), Occ)>> =
        Default::default();
    for (si, (_, seg)) in formula.segments.iter().enumerate() {
        let mut nodes = Vec::new();
        preorder(seg, &mut nodes);
        for (ni, node) in nodes.iter().enumerate() {
            match node {
                Expr::Symbol(s) if s.kind == SymbolKind::Variable => {
                    occurrences.entry(s.key()).or_default().push(((si, ni), Occ::Node));
                }
                Expr::BigOp { bound, .. } if bound.kind == SymbolKind::Variable => {
                    occurrences.entry(bound.key()).or_default().push(((si, ni), Occ::Binder));
                }
                Expr::Derivative { wrt, .. } if wrt.kind == SymbolKind::Variable => {
                    occurrences.entry(wrt.key()).or_default().push(((si, ni), Occ::Binder));
                }
                _ => {}
            }
        }
    }
    let candidates: Vec<(&(String, Option<u32>), &Vec<((usize, usize), Occ)>)> =
        occurrences.iter().filter(|(_, occ)| occ.len() >= 2).collect();
    if candidates.is_empty() {
        return None;
    }
    let (key, occ) = candidates[rng.gen_range(0..candidates.len())];
    let fresh = fresh_variable(formula, Some(&key.0), rng)?;
    // proper, non-empty subset
    let k = rng.gen_range(1..occ.len());
    let mut chosen: Vec<usize> = (0..occ.len()).collect();
    chosen.shuffle(rng);
    chosen.truncate(k);
    chosen.sort_unstable();

    let mut out = formula.clone();
    for &ci in &chosen {
        let (site, occ_kind) = occ[ci];
        let key = key.clone();
        let fresh = fresh.clone();
        out = rewrite_site(&out, site, &mut |e| match (e, occ_kind) {
            (Expr::Symbol(s), Occ::Node) if s.key() == key => {
                Expr::Symbol(Symbol { kind: s.kind, ..fresh.clone() })
            }
            (Expr::BigOp { kind, bound, lower, upper, body }, Occ::Binder) if bound.key() == key => {
                Expr::BigOp {
                    kind: *kind,
                    bound: Symbol { kind: bound.kind, ..fresh.clone() },
                    lower: lower.clone(),
                    upper: upper.clone(),
                    body: body.clone(),
                }
            }
            (Expr::Derivative { body, wrt, order }, Occ::Binder) if wrt.key() == key => {
                Expr::Derivative {
                    body: body.clone(),
                    wrt: Symbol { kind: wrt.kind, ..fresh.clone() },
                    order: *order,
                }
            }
            (other, _) => other.clone(),
        });
    }
    let display = Symbol { name: key.0.clone(), index: key.1, kind: SymbolKind::Variable };
    Some((
        out,
        format!("Replaced {display} by {fresh} in {k} of {} occurrences", occ.len()),
    ))
}

/// Replaces a number or context constant with a different constant.
pub fn strat_constant(formula: &ParsedFormula, rng: &mut impl Rng) -> StratResult {
    #[derive(Clone, Copy)]
    enum CKind {
        Literal,
        Econst,
        Pi,
        Imag,
        Infinity,
        UpperBoundVar,
    }
    let mut eligible: Vec<((usize, usize), CKind)> = Vec::new();
    for (si, (_, seg)) in formula.segments.iter().enumerate() {
        let mut nodes = Vec::new();
        preorder(seg, &mut nodes);
        for (ni, node) in nodes.iter().enumerate() {
            match node {
                Expr::Integer(_) | Expr::Rational(..) => eligible.push(((si, ni), CKind::Literal)),
                Expr::Constant(ConstantKind::E) => eligible.push(((si, ni), CKind::Econst)),
                Expr::Constant(ConstantKind::Pi) => eligible.push(((si, ni), CKind::Pi)),
                Expr::Constant(ConstantKind::ImaginaryUnit) => eligible.push(((si, ni), CKind::Imag)),
                Expr::BigOp { upper: Some(u), .. } => match u.as_ref() {
                    Expr::Constant(ConstantKind::Infinity) => {
                        eligible.push(((si, ni), CKind::Infinity))
                    }
                    Expr::Symbol(s) if s.kind == SymbolKind::Variable => {
                        eligible.push(((si, ni), CKind::UpperBoundVar))
                    }
                    _ => {}
                },
                _ => {}
            }
        }
    }
    if eligible.is_empty() {
        return None;
    }
    let (site, ckind) = eligible[rng.gen_range(0..eligible.len())];
    let mut desc = String::new();
    let small = |rng: &mut dyn rand::RngCore| Expr::int((rng.next_u32() % 10) as i64);
    let out = match ckind {
        CKind::Literal => rewrite_site(formula, site, &mut |e| {
            let old = print_canonical_expr(e);
            let mut replacement = match rng.gen_range(0..6) {
                0 => Expr::int(42),
                1 => Expr::Constant(ConstantKind::E),
                2 => Expr::Constant(ConstantKind::Pi),
                _ => small(rng),
            };
            for _ in 0..8 {
                if !structural_eq(&replacement, e) {
                    break;
                }
                replacement = small(rng);
            }
            if structural_eq(&replacement, e) {
                return e.clone();
            }
            desc = format!("Replaced {old} by {}", print_canonical_expr(&replacement));
            replacement
        }),
        CKind::Econst | CKind::Pi | CKind::Imag => rewrite_site(formula, site, &mut |e| {
            let old = print_canonical_expr(e);
            let replacement = match (ckind, rng.gen_range(0..4)) {
                (CKind::Econst, 0) => Expr::int(3),
                (CKind::Econst, 1) => Expr::int(42),
                (CKind::Econst, _) => Expr::Constant(ConstantKind::Pi),
                (CKind::Pi, 0) => Expr::Constant(ConstantKind::E),
                (CKind::Pi, _) => small(rng),
                (CKind::Imag, _) => Expr::int(1),
                _ => small(rng),
            };
            desc = format!("Replaced {old} by {}", print_canonical_expr(&replacement));
            replacement
        }),
        CKind::Infinity => rewrite_site(formula, site, &mut |e| {
            let Expr::BigOp { kind, bound, lower, body, .. } = e else { return e.clone() };
            let fresh = Symbol::var(if bound.name == "n" { "m" } else { "n" });
            desc = format!("Replaced \\infty by {fresh}");
            Expr::BigOp {
                kind: *kind,
                bound: bound.clone(),
                lower: lower.clone(),
                upper: Some(Box::new(Expr::Symbol(fresh))),
                body: body.clone(),
            }
        }),
        CKind::UpperBoundVar => rewrite_site(formula, site, &mut |e| {
            let Expr::BigOp { kind, bound, lower, upper, body } = e else { return e.clone() };
            let old = upper.as_ref().map(|u| print_canonical_expr(u)).unwrap_or_default();
            let replacement = if rng.gen_bool(0.5) {
                Expr::Constant(ConstantKind::Infinity)
            } else {
                small(rng)
            };
            desc = format!("Replaced upper bound {old} by {}", print_canonical_expr(&replacement));
            Expr::BigOp {
                kind: *kind,
                bound: bound.clone(),
                lower: lower.clone(),
                upper: Some(Box::new(replacement)),
                body: body.clone(),
            }
        }),
    };
    if desc.is_empty() {
        return None;
    }
    Some((out, desc))
}

/// Applies the false distributive rule f(x op y) = f(x) op f(y) in either
/// direction, for op in {+, *} and f in {log, ln, factorial, fixed-base
/// power, sin, cos, tan}. The same operator is kept inside and outside,
/// which excludes the true cross-operator identities (log of a product,
/// power of a sum); those appear in [`DISTRIBUTE_RULES`] flagged invalid.
pub fn strat_distribute(formula: &ParsedFormula, rng: &mut impl Rng) -> StratResult {
    #[derive(Clone, Copy, PartialEq)]
    enum Op {
        Add,
        Mul,
    }
    #[derive(Clone, Copy)]
    enum Dir {
        Inward,  // f(x) op f(y) -> f(x op y)
        Outward, // f(x op y) -> f(x) op f(y)
    }
    fn func_matches(e: &Expr) -> Option<(&Expr, Op)> {
        // returns the op-node inside an eligible f(...) application
        match e {
            Expr::Func(
                FuncKind::Sin | FuncKind::Cos | FuncKind::Tan | FuncKind::Ln | FuncKind::Log(_) | FuncKind::Factorial,
                args,
            ) if args.len() == 1 => match &args[0] {
                inner @ Expr::Add(_) => Some((inner, Op::Add)),
                inner @ Expr::Mul(_) => Some((inner, Op::Mul)),
                _ => None,
            },
            Expr::Pow(base, exp) if !matches!(base.as_ref(), Expr::Symbol(_)) || true => {
                // fixed-base power: base free of the exponent's variables
                let base_fixed = matches!(
                    base.as_ref(),
                    Expr::Integer(_) | Expr::Rational(..) | Expr::Constant(_) | Expr::Symbol(_)
                );
                if !base_fixed {
                    return None;
                }
                match exp.as_ref() {
                    inner @ Expr::Add(_) => Some((inner, Op::Add)),
                    inner @ Expr::Mul(_) => Some((inner, Op::Mul)),
                    _ => None,
                }
            }
            _ => None,
        }
    }

    let mut eligible: Vec<((usize, usize), Dir)> = Vec::new();
    for (si, (_, seg)) in formula.segments.iter().enumerate() {
        let mut nodes = Vec::new();
        preorder(seg, &mut nodes);
        for (ni, node) in nodes.iter().enumerate() {
            // outward: f(x op y)
            if func_matches(node).is_some() {
                eligible.push(((si, ni), Dir::Outward));
            }
            // inward: op node with >= 2 same-f applications
            match node {
                Expr::Add(ts) | Expr::Mul(ts) => {
                    let mut heads: Vec<&str> = Vec::new();
                    for t in ts {
                        if let Expr::Func(k, args) = t {
                            if args.len() == 1
                                && matches!(
                                    k,
                                    FuncKind::Sin
                                        | FuncKind::Cos
                                        | FuncKind::Tan
                                        | FuncKind::Ln
                                        | FuncKind::Factorial
                                )
                            {
                                heads.push(k.name());
                            }
                        }
                        if let Expr::Pow(base, _) = t {
                            if matches!(
                                base.as_ref(),
                                Expr::Integer(_) | Expr::Constant(_)
                            ) {
                                heads.push("pow");
                            }
                        }
                    }
                    heads.sort_unstable();
                    let has_pair = heads.windows(2).any(|w| w[0] == w[1]);
                    if has_pair {
                        eligible.push(((si, ni), Dir::Inward));
                    }
                }
                _ => {}
            }
        }
    }
    if eligible.is_empty() {
        return None;
    }
    let (site, dir) = eligible[rng.gen_range(0..eligible.len())];
    let mut desc = String::new();
    let out = match dir {
        Dir::Outward => rewrite_site(formula, site, &mut |e| {
            match e {
                Expr::Func(kind, args) => {
                    let inner = &args[0];
                    let (operands, rebuild): (&Vec<Expr>, fn(Vec<Expr>) -> Expr) = match inner {
                        Expr::Add(ts) => (ts, Expr::add),
                        Expr::Mul(ts) => (ts, Expr::mul),
                        _ => return e.clone(),
                    };
                    desc = format!("Distributed {} over its argument", kind.name());
                    rebuild(
                        operands.iter().map(|t| Expr::Func(kind.clone(), vec![t.clone()])).collect(),
                    )
                }
                Expr::Pow(base, exp) => {
                    let (operands, rebuild): (&Vec<Expr>, fn(Vec<Expr>) -> Expr) = match exp.as_ref() {
                        Expr::Add(ts) => (ts, Expr::add),
                        Expr::Mul(ts) => (ts, Expr::mul),
                        _ => return e.clone(),
                    };
                    desc = "Distributed the power over its exponent".to_string();
                    rebuild(
                        operands.iter().map(|t| Expr::pow(base.as_ref().clone(), t.clone())).collect(),
                    )
                }
                other => other.clone(),
            }
        }),
        Dir::Inward => rewrite_site(formula, site, &mut |e| {
            let (operands, rebuild, is_add): (&Vec<Expr>, fn(Vec<Expr>) -> Expr, bool) = match e {
                Expr::Add(ts) => (ts, Expr::add, true),
                Expr::Mul(ts) => (ts, Expr::mul, false),
                _ => return e.clone(),
            };
            let _ = is_add;
            // find the first same-head pair
            for i in 0..operands.len() {
                for j in i + 1..operands.len() {
                    let merged: Option<(Expr, String)> = match (&operands[i], &operands[j]) {
                        (Expr::Func(ka, aa), Expr::Func(kb, ab))
                            if ka.name() == kb.name()
                                && aa.len() == 1
                                && ab.len() == 1
                                && matches!(
                                    ka,
                                    FuncKind::Sin
                                        | FuncKind::Cos
                                        | FuncKind::Tan
                                        | FuncKind::Ln
                                        | FuncKind::Factorial
                                ) =>
                        {
                            let combined = match e {
                                Expr::Add(_) => Expr::add(vec![aa[0].clone(), ab[0].clone()]),
                                _ => Expr::mul(vec![aa[0].clone(), ab[0].clone()]),
                            };
                            Some((
                                Expr::Func(ka.clone(), vec![combined]),
                                format!("Applied {} additivity", ka.name()),
                            ))
                        }
                        (Expr::Pow(ba, xa), Expr::Pow(bb, xb))
                            if structural_eq(ba, bb)
                                && matches!(ba.as_ref(), Expr::Integer(_) | Expr::Constant(_)) =>
                        {
                            let combined = match e {
                                Expr::Add(_) => Expr::add(vec![xa.as_ref().clone(), xb.as_ref().clone()]),
                                _ => Expr::mul(vec![xa.as_ref().clone(), xb.as_ref().clone()]),
                            };
                            Some((
                                Expr::pow(ba.as_ref().clone(), combined),
                                "Merged powers with a false product rule".to_string(),
                            ))
                        }
                        _ => None,
                    };
                    if let Some((merged, d)) = merged {
                        desc = d;
                        let mut rest: Vec<Expr> = Vec::new();
                        for (k, t) in operands.iter().enumerate() {
                            if k != i && k != j {
                                rest.push(t.clone());
                            }
                        }
                        rest.insert(0, merged);
                        return rebuild(rest);
                    }
                }
            }
            e.clone()
        }),
    };
    if desc.is_empty() || out.segments == formula.segments {
        return None;
    }
    Some((out, desc))
}

/// Every (function, operator, direction) combination with its validity:
/// invalid rows are real identities and are never generated.
pub const DISTRIBUTE_RULES: &[(&str, &str, &str, bool)] = &[
    // (function, operator kept inside and outside, direction, is_false)
    ("sin", "+", "both", true),
    ("sin", "*", "both", true),
    ("cos", "+", "both", true),
    ("cos", "*", "both", true),
    ("tan", "+", "both", true),
    ("tan", "*", "both", true),
    ("log", "+", "both", true),
    ("log", "*", "both", true),
    ("factorial", "+", "both", true),
    ("factorial", "*", "both", true),
    ("pow", "+", "both", true),
    ("pow", "*", "both", true),
    // true identities, excluded from generation:
    ("log", "* -> +", "cross", false),
    ("pow", "+ -> *", "cross", false),
];

/// Emits a hinted false version, a similar formula, or applies one
/// falsifying string replacement.
pub fn strat_manual(
    formula: &ParsedFormula,
    hints: &ManualHints,
    pool: &dyn VersionPool,
    opts: &crate::parser::ParseOptions,
    rng: &mut impl Rng,
) -> StratResult {
    if hints.is_empty() {
        return None;
    }
    let mut choices: Vec<u8> = Vec::new();
    if !hints.false_versions.is_empty() {
        choices.push(0);
    }
    if !hints.similar.is_empty() && !pool.is_empty() {
        choices.push(1);
    }
    if !hints.replacements.is_empty() {
        choices.push(2);
    }
    if choices.is_empty() {
        return None;
    }
    let parse_opts = crate::parser::ParseOptions {
        declared_variables: hints.variables.iter().cloned().collect(),
        declared_functions: hints.functions.iter().cloned().collect(),
        ..opts.clone()
    };
    match choices[rng.gen_range(0..choices.len())] {
        0 => {
            let v = &hints.false_versions[rng.gen_range(0..hints.false_versions.len())];
            let parsed = crate::parser::parse_formula(v, &parse_opts).ok()?;
            Some((parsed, "Hinted false version".to_string()))
        }
        1 => {
            let name = &hints.similar[rng.gen_range(0..hints.similar.len())];
            match pool.draw_named(name, rng)? {
                FalsifyInput::Formula(f) => Some((f, format!("Similar formula: {name}"))),
                FalsifyInput::Text(_) => None,
            }
        }
        _ => {
            // try replacements in random order against the source
            let mut order: Vec<usize> = (0..hints.replacements.len()).collect();
            order.shuffle(rng);
            for idx in order {
                let (from, to, on_formula, _) = &hints.replacements[idx];
                if !on_formula {
                    continue;
                }
                let source = if formula.source.is_empty() {
                    crate::printer::print_canonical(formula)
                } else {
                    formula.source.clone()
                };
                if !source.contains(from.as_str()) {
                    continue;
                }
                let replaced = source.replacen(from.as_str(), to.as_str(), 1);
                if let Ok(parsed) = crate::parser::parse_formula(&replaced, &parse_opts) {
                    return Some((parsed, format!("Replaced {from} by {to}")));
                }
            }
            None
        }
    }
}

// ---------------------------------------------------------------------------
// Driver
// ---------------------------------------------------------------------------

fn formula_applicable(formula: &ParsedFormula, s: Strategy) -> bool {
    match s {
        Strategy::Equality => {
            !sites(formula, &|e| matches!(e, Expr::Relation { op: RelOp::Eq, .. })).is_empty()
        }
        Strategy::Inequality => !sites(formula, &|e| {
            matches!(e, Expr::Relation { op, .. } if op.is_inequality())
        })
        .is_empty(),
        Strategy::Swap | Strategy::Variable | Strategy::Constant | Strategy::Distribute => true,
        _ => true,
    }
}

fn apply_tree_strategy(
    formula: &ParsedFormula,
    s: Strategy,
    hints: &ManualHints,
    pool: &dyn VersionPool,
    opts: &crate::parser::ParseOptions,
    rng: &mut impl Rng,
) -> StratResult {
    match s {
        Strategy::Equality => strat_equality(formula, rng),
        Strategy::Inequality => strat_inequality(formula, rng),
        Strategy::Swap => strat_swap(formula, rng),
        Strategy::Variable => strat_variable(formula, rng),
        Strategy::Constant => strat_constant(formula, rng),
        Strategy::Distribute => strat_distribute(formula, rng),
        Strategy::Manual => strat_manual(formula, hints, pool, opts, rng),
        Strategy::Random => None,
    }
}

/// Falsifies a parsed formula or math text. The result has not yet been
/// substituted or printed; the generation pipeline sends it through the
/// same substitution and randomized printing steps as equivalent versions.
pub fn falsify(
    input: &FalsifyInput,
    hints: Option<&ManualHints>,
    pool: &dyn VersionPool,
    identity_name: Option<&str>,
    opts: &FalsifyOptions,
    parse_opts: &crate::parser::ParseOptions,
    rng: &mut impl Rng,
) -> Result<FalsificationRecord, FalsifyError> {
    let empty_hints = ManualHints::default();
    let hints = hints.unwrap_or(&empty_hints);
    for _attempt in 0..opts.retry_cap.max(1) {
        if let Some(record) = falsify_once(input, hints, pool, identity_name, opts, parse_opts, rng) {
            return Ok(record);
        }
    }
    Err(FalsifyError::NoStrategyApplicable)
}

fn falsify_once(
    input: &FalsifyInput,
    hints: &ManualHints,
    pool: &dyn VersionPool,
    identity_name: Option<&str>,
    opts: &FalsifyOptions,
    parse_opts: &crate::parser::ParseOptions,
    rng: &mut impl Rng,
) -> Option<FalsificationRecord> {
    let mut applied: Vec<AppliedStrategy> = Vec::new();

    // Random base swap first.
    let mut base: FalsifyInput = input.clone();
    let want_text = matches!(input, FalsifyInput::Text(_));
    if !pool.is_empty() && rng.gen_bool(opts.random.clamp(0.0, 1.0)) {
        if let Some(drawn) = pool.draw_other(identity_name, want_text, rng) {
            applied.push(AppliedStrategy {
                strategy: Strategy::Random,
                description: if matches!(drawn, FalsifyInput::Text(_)) {
                    "Random text".to_string()
                } else {
                    "Random formula".to_string()
                },
            });
            base = drawn;
        }
    }

    match base {
        FalsifyInput::Formula(ref formula) => {
            let mut current = formula.clone();
            for s in STRATEGY_ORDER {
                if !formula_applicable(&current, s) {
                    continue;
                }
                if !rng.gen_bool(opts.probability(s).clamp(0.0, 1.0)) {
                    continue;
                }
                if let Some((next, desc)) =
                    apply_tree_strategy(&current, s, hints, pool, parse_opts, rng)
                {
                    if next.segments != current.segments {
                        applied.push(AppliedStrategy { strategy: s, description: desc });
                        current = next;
                    }
                }
            }
            if applied.is_empty() {
                // fallback: force one strategy, preferring Random
                if !pool.is_empty() && rng.gen_bool(0.5) {
                    if let Some(drawn) = pool.draw_other(identity_name, want_text, rng) {
                        if let FalsifyInput::Formula(f) = drawn {
                            return Some(FalsificationRecord {
                                applied: vec![AppliedStrategy {
                                    strategy: Strategy::Random,
                                    description: "Random formula".to_string(),
                                }],
                                result: FalsifyInput::Formula(f),
                            });
                        }
                    }
                }
                let mut order: Vec<Strategy> = STRATEGY_ORDER.to_vec();
                order.shuffle(rng);
                for s in order {
                    if let Some((next, desc)) =
                        apply_tree_strategy(&current, s, hints, pool, parse_opts, rng)
                    {
                        if next.segments != current.segments {
                            applied.push(AppliedStrategy { strategy: s, description: desc });
                            current = next;
                            break;
                        }
                    }
                }
            }
            if applied.is_empty() {
                return None;
            }
            // never emit something structurally identical to the input
            if let FalsifyInput::Formula(original) = input {
                if current.segments == original.segments {
                    return None;
                }
            }
            if current.validate(parse_opts.depth_cap).is_err() {
                return None;
            }
            Some(FalsificationRecord { applied, result: FalsifyInput::Formula(current) })
        }
        FalsifyInput::Text(ref text) => {
            let mut current = text.clone();
            // Prose replacements from the hints.
            let mut did_prose = false;
            if rng.gen_bool(opts.probability(Strategy::Manual).clamp(0.0, 1.0)) {
                let mut order: Vec<usize> = (0..hints.replacements.len()).collect();
                order.shuffle(rng);
                for idx in order {
                    let (from, to, _, on_text) = &hints.replacements[idx];
                    if !on_text {
                        continue;
                    }
                    let source = current.to_source();
                    if source.contains(from.as_str()) {
                        let new_source = source.replacen(from.as_str(), to.as_str(), 1);
                        if let Ok(new_text) =
                            crate::parser::parse_math_text(&new_source, parse_opts)
                        {
                            applied.push(AppliedStrategy {
                                strategy: Strategy::Manual,
                                description: format!("Replaced \u{201c}{from}\u{201d} by \u{201c}{to}\u{201d}"),
                            });
                            current = new_text;
                            did_prose = true;
                            break;
                        }
                    }
                }
            }
            // Tree strategies on the formulas of the text.
            let formula_runs: Vec<usize> = current
                .runs
                .iter()
                .enumerate()
                .filter(|(_, r)| matches!(r, Run::Formula(f) if f.fully_parsed()))
                .map(|(i, _)| i)
                .collect();
            if !formula_runs.is_empty() {
                let ri = formula_runs[rng.gen_range(0..formula_runs.len())];
                let Run::Formula(formula) = current.runs[ri].clone() else { unreachable!() };
                let mut f_current = formula.clone();
                for s in STRATEGY_ORDER {
                    if s == Strategy::Manual {
                        continue;
                    }
                    if !rng.gen_bool(opts.probability(s).clamp(0.0, 1.0)) {
                        continue;
                    }
                    if let Some((next, desc)) =
                        apply_tree_strategy(&f_current, s, hints, pool, parse_opts, rng)
                    {
                        if next.segments != f_current.segments {
                            applied.push(AppliedStrategy { strategy: s, description: desc });
                            f_current = next;
                        }
                    }
                }
                if f_current.segments != formula.segments {
                    current.runs[ri] = Run::Formula(f_current);
                }
            }
            if applied.is_empty() && !did_prose {
                return None;
            }
            Some(FalsificationRecord { applied, result: FalsifyInput::Text(current) })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::{parse_formula, ParseOptions};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn parse(s: &str) -> ParsedFormula {
        parse_formula(s, &ParseOptions::default()).unwrap()
    }

    #[test]
    fn inequality_flip_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let f = parse(r"x \neq 0");
        let (out, desc) = strat_inequality(&f, &mut rng).unwrap();
        assert!(matches!(out.segments[0].1, Expr::Relation { op: RelOp::Eq, .. }), "{desc}");

        let f = parse(r"ab\le \frac{a^2+b^2}{2}");
        let (out, _) = strat_inequality(&f, &mut rng).unwrap();
        assert!(matches!(out.segments[0].1, Expr::Relation { op: RelOp::Gt, .. }));

        let f = parse("a=b");
        assert!(strat_inequality(&f, &mut rng).is_none());
    }

    #[test]
    fn swap_pow_produces_two_pow_x() {
        let f = parse("x^2 + 1 = y");
        let mut found = false;
        for seed in 0..60 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            if let Some((out, _)) = strat_swap(&f, &mut rng) {
                let printed = crate::printer::print_canonical(&out);
                if printed.contains("2^{x}") {
                    found = true;
                    break;
                }
            }
        }
        assert!(found, "x^2 should swap into 2^x for some seed");
    }

    #[test]
    fn swap_subtraction_order() {
        let f = parse("F(a) - F(b)");
        // make F a function via evidence: use a prime elsewhere
        let f2 = parse("F'(a) - F(b) + F(a)");
        let _ = f2;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (out, desc) = strat_swap(&f, &mut rng).unwrap();
        assert_ne!(out.segments, f.segments, "{desc}");
    }

    #[test]
    fn swap_skips_subtraction_under_even_power() {
        let f = parse("(a - b)^2");
        for seed in 0..80 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            if let Some((out, desc)) = strat_swap(&f, &mut rng) {
                // The only eligible site is the Pow swap, never the
                // inner subtraction.
                assert!(
                    desc.contains("base and exponent"),
                    "unexpected swap {desc}: {}",
                    crate::printer::print_canonical(&out)
                );
            }
        }
    }

    #[test]
    fn variable_split_keeps_one_occurrence() {
        let f = parse(r"\sum_{i=1}^n i^2");
        let mut any = false;
        for seed in 0..40 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            if let Some((out, desc)) = strat_variable(&f, &mut rng) {
                any = true;
                let syms: Vec<String> =
                    out.free_symbols().iter().map(|s| s.name.clone()).collect();
                assert!(syms.len() >= 3, "split must add a variable: {syms:?} ({desc})");
            }
        }
        assert!(any);
    }

    #[test]
    fn variable_split_requires_repeat() {
        let f = parse("a + b");
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(strat_variable(&f, &mut rng).is_none());
    }

    #[test]
    fn constant_replacement_in_euler() {
        let f = parse(r"e^{\mathrm{i}\pi} = -1");
        let mut seen = BTreeSet::new();
        for seed in 0..60 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            if let Some((out, _)) = strat_constant(&f, &mut rng) {
                seen.insert(crate::printer::print_canonical(&out));
            }
        }
        assert!(seen.len() >= 3, "expected several constant variants, got {seen:?}");
    }

    #[test]
    fn distribute_sine_additivity() {
        let f = parse(r"\sin(x)+\sin(y)");
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (out, desc) = strat_distribute(&f, &mut rng).unwrap();
        assert_eq!(crate::printer::print_canonical(&out), "\\sin(x+y)", "{desc}");
    }

    #[test]
    fn distribute_power_rule() {
        let f = parse(r"2^x \cdot 2^y");
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (out, _) = strat_distribute(&f, &mut rng).unwrap();
        assert_eq!(crate::printer::print_canonical(&out), "2^{x \\cdot y}");
    }

    #[test]
    fn distribute_rules_exclude_true_identities() {
        for (f, op, dir, is_false) in DISTRIBUTE_RULES {
            if !is_false {
                assert_eq!(*dir, "cross", "only cross-operator rules are true: {f} {op}");
            }
        }
    }

    #[test]
    fn equality_never_inserts_zero() {
        let f = parse(r"a^2+b^2=c^2");
        for seed in 0..120 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            if let Some((out, desc)) = strat_equality(&f, &mut rng) {
                assert_ne!(out.segments, f.segments);
                assert!(!desc.contains("Inserted +0") && !desc.contains("Inserted -0"), "{desc}");
            }
        }
    }

    #[test]
    fn falsify_records_applied_strategies() {
        let f = parse(r"a^2+b^2=c^2");
        let opts = FalsifyOptions::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let record = falsify(
            &FalsifyInput::Formula(f.clone()),
            None,
            &NoPool,
            None,
            &opts,
            &ParseOptions::default(),
            &mut rng,
        )
        .unwrap();
        assert!(!record.applied.is_empty());
        if let FalsifyInput::Formula(out) = &record.result {
            assert_ne!(out.segments, f.segments);
        } else {
            panic!("expected formula result");
        }
    }

    #[test]
    fn no_strategy_applicable_errors() {
        // a bare symbol with no pool and no hints
        let f = parse("q");
        let opts = FalsifyOptions::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = falsify(
            &FalsifyInput::Formula(f),
            None,
            &NoPool,
            None,
            &opts,
            &ParseOptions::default(),
            &mut rng,
        );
        assert_eq!(r.unwrap_err(), FalsifyError::NoStrategyApplicable);
    }

    #[test]
    fn manual_replacement_applies() {
        let f = parse(r"n! = \prod_{i=1}^n i");
        let hints = ManualHints {
            replacements: vec![("\\prod".into(), "\\sum".into(), true, true)],
            variables: vec!["n".into(), "i".into()],
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (out, desc) =
            strat_manual(&f, &hints, &NoPool, &ParseOptions::default(), &mut rng).unwrap();
        assert!(crate::printer::print_canonical(&out).contains("\\sum"), "{desc}");
    }
}

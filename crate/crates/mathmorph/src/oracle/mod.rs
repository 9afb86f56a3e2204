//! Sampled numeric oracle: equivalence/distinctness checking, general
//! validity filtering, and a limited univariate solver.
//!
//! The oracle is probabilistic by design: `Equivalent` means "no
//! counterexample found over the sampled assignments". Two formulas are
//! compared under every kind-respecting renaming between their symbol
//! sets (capped), so substituted versions compare equal while structural
//! edits are caught. Relations compare side-by-side (up to the symmetric
//! swap for `=` and direction normalization for inequalities) rather than
//! as truth values, so two unrelated but universally valid identities
//! still count as distinct.

pub mod eval;
mod solve;

pub use eval::{EvalOptions, Evaluator, Value};
pub use solve::{solve_univariate, SolveOutcome};

use std::collections::{BTreeMap, BTreeSet};

use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::expr::{
    structural_eq, Expr, FuncKind, NamedSet, ParsedFormula, RelOp, SetOp, Symbol, SymbolKind,
};

type Key = (String, Option<u32>);

/// Randomly parameterized smooth function: a cubic over the weighted sum
/// of its arguments (first weight fixed to 1 so derivatives compose).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FuncParams {
    pub coeffs: [f64; 4],
    pub weights: Vec<f64>,
}

impl FuncParams {
    fn combine(&self, args: &[Complex64]) -> Complex64 {
        let mut t = Complex64::new(0.0, 0.0);
        for (i, a) in args.iter().enumerate() {
            let w = if i == 0 { 1.0 } else { *self.weights.get(i - 1).unwrap_or(&0.7) };
            t += a * w;
        }
        t
    }

    fn eval_order(&self, t: Complex64, order: u32) -> Complex64 {
        let [c0, c1, c2, c3] = self.coeffs;
        match order {
            0 => Complex64::new(c0, 0.0) + t * c1 + t * t * c2 + t * t * t * c3,
            1 => Complex64::new(c1, 0.0) + t * (2.0 * c2) + t * t * (3.0 * c3),
            2 => Complex64::new(2.0 * c2, 0.0) + t * (6.0 * c3),
            3 => Complex64::new(6.0 * c3, 0.0),
            _ => Complex64::new(0.0, 0.0),
        }
    }
}

/// One sampled interpretation: numeric values for symbols, cubic
/// parameters for generic functions and fingerprint operators.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Assignment {
    pub values: BTreeMap<Key, Complex64>,
    pub funcs: BTreeMap<Key, FuncParams>,
    pub ops: BTreeMap<String, FuncParams>,
    /// Lookup translation applied when evaluating the second formula of a
    /// pair: maps its symbol keys onto the first formula's slots.
    #[serde(skip)]
    pub translate: BTreeMap<Key, Key>,
}

impl Assignment {
    fn resolve(&self, key: &Key) -> Key {
        self.translate.get(key).cloned().unwrap_or_else(|| key.clone())
    }

    pub fn value_of(&self, s: &Symbol) -> Option<Complex64> {
        self.values.get(&self.resolve(&s.key())).copied()
    }

    pub fn generic_value(&self, s: &Symbol, args: &[Complex64], order: u32) -> Option<Complex64> {
        let params = self.funcs.get(&self.resolve(&s.key()))?;
        Some(params.eval_order(params.combine(args), order))
    }

    pub fn opaque_op_value(&self, name: &str, args: &[Complex64]) -> Option<Complex64> {
        let params = self.ops.get(name)?;
        Some(params.eval_order(params.combine(args), 0))
    }

    fn with_translation(&self, translate: BTreeMap<Key, Key>) -> Assignment {
        Assignment {
            values: self.values.clone(),
            funcs: self.funcs.clone(),
            ops: self.ops.clone(),
            translate,
        }
    }
}

/// Reproducible counterexample: seed plus the sampled assignment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Witness {
    pub seed: u64,
    pub trial: usize,
    /// Symbol values as (name, index, re, im) rows.
    pub assignment: Vec<(String, Option<u32>, f64, f64)>,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub enum Verdict {
    Equivalent { trials: usize },
    Distinct { witness: Witness },
    Inconclusive { reason: String },
}

impl Verdict {
    pub fn is_equivalent(&self) -> bool {
        matches!(self, Verdict::Equivalent { .. })
    }

    pub fn is_distinct(&self) -> bool {
        matches!(self, Verdict::Distinct { .. })
    }
}

// ---------------------------------------------------------------------------
// Symbol slots and sampling
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
struct SlotSpec {
    key: Key,
    is_function: bool,
    domain: Option<NamedSet>,
    positive_bias: bool,
}

/// Gathers every symbol key (including reserved ones) with sampling hints.
fn collect_slots(formula: &ParsedFormula) -> BTreeMap<Key, SlotSpec> {
    let mut slots: BTreeMap<Key, SlotSpec> = BTreeMap::new();
    let mut domains: BTreeMap<String, NamedSet> = BTreeMap::new();
    let mut positives: BTreeSet<Key> = BTreeSet::new();

    fn all_symbols(e: &Expr, out: &mut Vec<(Key, bool)>) {
        match e {
            Expr::Symbol(s) => out.push((s.key(), s.kind == SymbolKind::GenericFunction)),
            Expr::GenericApp { symbol, .. } => out.push((symbol.key(), true)),
            Expr::BigOp { bound, .. } => out.push((bound.key(), false)),
            Expr::Derivative { wrt, .. } => out.push((wrt.key(), false)),
            Expr::Quantifier { bound, .. } => {
                for b in bound {
                    out.push((b.key(), false));
                }
            }
            _ => {}
        }
        for c in e.children() {
            all_symbols(c, out);
        }
    }

    fn scan_positive(e: &Expr, inside: bool, out: &mut BTreeSet<Key>) {
        let mark_children_of: Option<&Expr> = match e {
            Expr::Func(FuncKind::Sqrt | FuncKind::Ln, args) => args.first(),
            Expr::Func(FuncKind::Log(_), args) => args.first(),
            Expr::Pow(base, exp) if !matches!(exp.as_ref(), Expr::Integer(_)) => Some(base),
            _ => None,
        };
        if inside {
            if let Expr::Symbol(s) = e {
                out.insert(s.key());
            }
        }
        for c in e.children() {
            let now_inside =
                inside || mark_children_of.map(|m| std::ptr::eq(m, c)).unwrap_or(false);
            scan_positive(c, now_inside, out);
        }
    }

    fn scan_domains(e: &Expr, out: &mut BTreeMap<String, NamedSet>) {
        match e {
            Expr::Quantifier { bound, domain: Some(d), .. } => {
                if let Expr::SetExpr(SetOp::Named(n)) = d.as_ref() {
                    for b in bound {
                        out.insert(b.name.clone(), *n);
                    }
                }
            }
            Expr::SetExpr(SetOp::Membership { element, set }) => {
                if let (Expr::Symbol(s), Expr::SetExpr(SetOp::Named(n))) =
                    (element.as_ref(), set.as_ref())
                {
                    out.insert(s.name.clone(), *n);
                }
            }
            _ => {}
        }
        for c in e.children() {
            scan_domains(c, out);
        }
    }

    let mut raw = Vec::new();
    for (_, seg) in &formula.segments {
        all_symbols(seg, &mut raw);
        scan_positive(seg, false, &mut positives);
        scan_domains(seg, &mut domains);
    }
    for (key, is_function) in raw {
        let entry = slots.entry(key.clone()).or_insert(SlotSpec {
            key: key.clone(),
            is_function: false,
            domain: None,
            positive_bias: false,
        });
        entry.is_function |= is_function;
    }
    for spec in slots.values_mut() {
        spec.domain = domains.get(&spec.key.0).copied();
        spec.positive_bias = positives.contains(&spec.key);
    }
    slots
}

fn collect_op_names(formula: &ParsedFormula, out: &mut BTreeSet<String>) {
    fn walk(e: &Expr, out: &mut BTreeSet<String>) {
        if let Expr::Func(kind, _) = e {
            if matches!(
                kind,
                FuncKind::Expectation | FuncKind::Variance | FuncKind::Covariance | FuncKind::Probability
            ) {
                out.insert(kind.name().to_string());
            }
        }
        for c in e.children() {
            walk(c, out);
        }
    }
    for (_, seg) in &formula.segments {
        walk(seg, out);
    }
}

fn draw_value(spec: &SlotSpec, rng: &mut impl Rng) -> Complex64 {
    let v = match spec.domain {
        Some(NamedSet::N) => Complex64::new(rng.gen_range(1..=6) as f64, 0.0),
        Some(NamedSet::Z) => Complex64::new(rng.gen_range(-5..=5i64) as f64, 0.0),
        _ => {
            let pick: f64 = rng.gen();
            if pick < 0.45 {
                Complex64::new(rng.gen_range(-3.0..3.0), 0.0)
            } else if pick < 0.70 {
                let mag = (rng.gen_range(0.05f64.ln()..20f64.ln())).exp();
                let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                Complex64::new(sign * mag, 0.0)
            } else if pick < 0.90 {
                let n = rng.gen_range(1..=5) as f64;
                Complex64::new(if rng.gen_bool(0.5) { n } else { -n }, 0.0)
            } else if matches!(spec.domain, Some(NamedSet::R)) {
                Complex64::new(rng.gen_range(-3.0..3.0), 0.0)
            } else {
                Complex64::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0))
            }
        }
    };
    if spec.positive_bias && rng.gen_bool(0.8) {
        Complex64::new(v.norm().max(0.05), 0.0)
    } else {
        v
    }
}

fn draw_params(rng: &mut impl Rng) -> FuncParams {
    let mut coeffs = [0.0f64; 4];
    for c in &mut coeffs {
        *c = rng.gen_range(-2.0..2.0);
    }
    // Keep the linear and quadratic terms away from zero so edits stay
    // visible through the fingerprint.
    if coeffs[1].abs() < 0.3 {
        coeffs[1] = 0.3f64.copysign(coeffs[1]);
    }
    if coeffs[2].abs() < 0.3 {
        coeffs[2] = 0.3f64.copysign(coeffs[2]);
    }
    let weights = (0..4).map(|_| rng.gen_range(0.6..1.4) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 }).collect();
    FuncParams { coeffs, weights }
}

fn sample_assignment(
    slots: &BTreeMap<Key, SlotSpec>,
    op_names: &BTreeSet<String>,
    rng: &mut impl Rng,
) -> Assignment {
    let mut a = Assignment::default();
    for (key, spec) in slots {
        a.values.insert(key.clone(), draw_value(spec, rng));
        if spec.is_function {
            a.funcs.insert(key.clone(), draw_params(rng));
        }
    }
    for name in op_names {
        a.ops.insert(name.clone(), draw_params(rng));
    }
    a
}

// ---------------------------------------------------------------------------
// Observables and comparison
// ---------------------------------------------------------------------------

/// Normalized relation operator for comparison purposes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum NormOp {
    Eq,
    Ne,
    Lt,
    Le,
}

enum Obs {
    Pair { op: NormOp, symmetric: bool, lhs: Value, rhs: Value },
    Implication(Box<Obs>, Box<Obs>),
    QuantHead { bound_count: usize, domain: Option<NamedSet>, has_other_domain: bool },
    Val(Value),
}

fn observe(e: &Expr, ev: &Evaluator) -> Obs {
    match e {
        Expr::Relation { op, lhs, rhs } => {
            let (op, l, r) = match op {
                RelOp::Gt => (NormOp::Lt, rhs.as_ref(), lhs.as_ref()),
                RelOp::Ge => (NormOp::Le, rhs.as_ref(), lhs.as_ref()),
                RelOp::Lt => (NormOp::Lt, lhs.as_ref(), rhs.as_ref()),
                RelOp::Le => (NormOp::Le, lhs.as_ref(), rhs.as_ref()),
                RelOp::Eq => (NormOp::Eq, lhs.as_ref(), rhs.as_ref()),
                RelOp::Ne => (NormOp::Ne, lhs.as_ref(), rhs.as_ref()),
            };
            Obs::Pair {
                op,
                symmetric: matches!(op, NormOp::Eq | NormOp::Ne),
                lhs: ev.eval(l),
                rhs: ev.eval(r),
            }
        }
        Expr::Implication { antecedent, consequent } => Obs::Implication(
            Box::new(observe(antecedent, ev)),
            Box::new(observe(consequent, ev)),
        ),
        Expr::Quantifier { bound, domain, body: None } => {
            let (named, other) = match domain.as_deref() {
                Some(Expr::SetExpr(SetOp::Named(n))) => (Some(*n), false),
                Some(_) => (None, true),
                None => (None, false),
            };
            Obs::QuantHead { bound_count: bound.len(), domain: named, has_other_domain: other }
        }
        other => Obs::Val(ev.eval(other)),
    }
}

/// Tri-state comparison result: Some(true) equal, Some(false) different,
/// None undecided (undefined values involved).
fn compare_obs(a: &Obs, b: &Obs, opts: &EvalOptions) -> Option<bool> {
    use eval::values_close as vc;
    match (a, b) {
        (Obs::Pair { op: oa, symmetric, lhs: la, rhs: ra }, Obs::Pair { op: ob, lhs: lb, rhs: rb, .. }) => {
            if oa != ob {
                return Some(false);
            }
            let direct = and3(vc(la, lb, opts), vc(ra, rb, opts));
            if direct == Some(true) {
                return Some(true);
            }
            if *symmetric {
                let swapped = and3(vc(la, rb, opts), vc(ra, lb, opts));
                if swapped == Some(true) {
                    return Some(true);
                }
                or3(direct, swapped)
            } else {
                direct
            }
        }
        (Obs::Implication(a1, a2), Obs::Implication(b1, b2)) => {
            and3(compare_obs(a1, b1, opts), compare_obs(a2, b2, opts))
        }
        (
            Obs::QuantHead { bound_count: ca, domain: da, has_other_domain: oa },
            Obs::QuantHead { bound_count: cb, domain: db, has_other_domain: ob },
        ) => Some(ca == cb && da == db && oa == ob),
        (Obs::Val(va), Obs::Val(vb)) => vc(va, vb, opts),
        _ => Some(false),
    }
}

fn and3(a: Option<bool>, b: Option<bool>) -> Option<bool> {
    match (a, b) {
        (Some(false), _) | (_, Some(false)) => Some(false),
        (Some(true), Some(true)) => Some(true),
        _ => None,
    }
}

fn or3(a: Option<bool>, b: Option<bool>) -> Option<bool> {
    match (a, b) {
        (Some(true), _) | (_, Some(true)) => Some(true),
        (Some(false), Some(false)) => Some(false),
        _ => None,
    }
}

// ---------------------------------------------------------------------------
// Bijection enumeration
// ---------------------------------------------------------------------------

const BIJECTION_CAP: usize = 20_000;

/// All injective mappings from the smaller list into the larger one,
/// returned as (key_b -> key_a) pairs.
fn injections(a: &[Key], b: &[Key]) -> Option<Vec<Vec<(Key, Key)>>> {
    let (small, large, small_is_a) =
        if a.len() <= b.len() { (a, b, true) } else { (b, a, false) };
    let mut count: usize = 1;
    for i in 0..small.len() {
        count = count.checked_mul(large.len() - i)?;
        if count > BIJECTION_CAP {
            return None;
        }
    }
    let mut out: Vec<Vec<(Key, Key)>> = vec![vec![]];
    for s in small {
        let mut next = Vec::new();
        for partial in &out {
            for l in large {
                if partial.iter().any(|(x, y)| x == l || y == l || x == s || y == s) {
                    // covered below by explicit used-check
                }
                let used = partial.iter().any(|(kb, ka)| {
                    if small_is_a {
                        kb == l
                    } else {
                        ka == l
                    }
                });
                if used {
                    continue;
                }
                let mut p = partial.clone();
                if small_is_a {
                    // small = side A, large = side B: map b -> a
                    p.push((l.clone(), s.clone()));
                } else {
                    p.push((s.clone(), l.clone()));
                }
                next.push(p);
            }
        }
        out = next;
        if out.len() > BIJECTION_CAP {
            return None;
        }
    }
    Some(out)
}

/// Orders candidate translations so the name-preserving one comes first.
fn order_translations(mut all: Vec<BTreeMap<Key, Key>>) -> Vec<BTreeMap<Key, Key>> {
    all.sort_by_key(|t| t.iter().filter(|(kb, ka)| kb != ka).count());
    all
}

// ---------------------------------------------------------------------------
// check_equivalence
// ---------------------------------------------------------------------------

fn hash_trial(seed: u64, trial: usize) -> u64 {
    // splitmix64 over (seed, trial)
    let mut z = seed ^ (trial as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn witness_from(assignment: &Assignment, seed: u64, trial: usize, reason: &str) -> Witness {
    Witness {
        seed,
        trial,
        assignment: assignment
            .values
            .iter()
            .map(|((n, i), v)| (n.clone(), *i, v.re, v.im))
            .collect(),
        reason: reason.to_string(),
    }
}

/// Checks two parsed formulas for sampled equivalence.
///
/// Opaque-bearing inputs are `Inconclusive`. Symbols are matched by name
/// first; all kind-respecting renamings are then tried, so substituted
/// versions never come out `Distinct`.
pub fn check_equivalence(a: &ParsedFormula, b: &ParsedFormula, trials: usize, seed: u64) -> Verdict {
    check_equivalence_opts(a, b, trials, seed, &EvalOptions::default())
}

pub fn check_equivalence_opts(
    a: &ParsedFormula,
    b: &ParsedFormula,
    trials: usize,
    seed: u64,
    opts: &EvalOptions,
) -> Verdict {
    if !a.fully_parsed() || !b.fully_parsed() {
        return Verdict::Inconclusive { reason: "opaque segments present".into() };
    }
    if a.segments.len() != b.segments.len() {
        return Verdict::Distinct {
            witness: Witness {
                seed,
                trial: 0,
                assignment: vec![],
                reason: "segment structure differs".into(),
            },
        };
    }
    if a.segments.iter().zip(&b.segments).all(|(x, y)| structural_eq(&x.1, &y.1)) {
        return Verdict::Equivalent { trials };
    }

    let slots_a = collect_slots(a);
    let slots_b = collect_slots(b);

    // Substitutable symbols participate in renamings, partitioned by kind.
    let part = |slots: &BTreeMap<Key, SlotSpec>, func: bool| -> Vec<Key> {
        slots.values().filter(|s| s.is_function == func).map(|s| s.key.clone()).collect()
    };
    let (va, fa) = (part(&slots_a, false), part(&slots_a, true));
    let (vb, fb) = (part(&slots_b, false), part(&slots_b, true));

    let translations: Vec<BTreeMap<Key, Key>> = match (injections(&va, &vb), injections(&fa, &fb)) {
        (Some(vi), Some(fi)) if vi.len().saturating_mul(fi.len()) <= BIJECTION_CAP => {
            let mut all = Vec::with_capacity(vi.len() * fi.len());
            for v in &vi {
                for f in &fi {
                    let mut t: BTreeMap<Key, Key> = BTreeMap::new();
                    t.extend(v.iter().cloned());
                    t.extend(f.iter().cloned());
                    all.push(t);
                }
            }
            order_translations(all)
        }
        _ => {
            // Too many candidates: fall back to name-identity matching.
            vec![BTreeMap::new()]
        }
    };

    // Slots for sampling: side A slots plus side-B-only slots.
    let mut slots = slots_a.clone();
    for (k, v) in &slots_b {
        slots.entry(k.clone()).or_insert_with(|| v.clone());
    }
    let mut op_names = BTreeSet::new();
    collect_op_names(a, &mut op_names);
    collect_op_names(b, &mut op_names);

    let mut alive: Vec<usize> = (0..translations.len()).collect();
    let mut defined_counts: Vec<usize> = vec![0; translations.len()];
    let mut last_kill: Option<Witness> = None;

    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(hash_trial(seed, trial));
        let assignment = sample_assignment(&slots, &op_names, &mut rng);
        let ev_a = Evaluator { assignment: &assignment, opts };
        let obs_a: Vec<Obs> = a.segments.iter().map(|(_, s)| observe(s, &ev_a)).collect();

        alive.retain(|&ti| {
            let translated = assignment.with_translation(translations[ti].clone());
            let ev_b = Evaluator { assignment: &translated, opts };
            let mut all_defined = true;
            for ((_, seg_b), oa) in b.segments.iter().zip(&obs_a) {
                let ob = observe(seg_b, &ev_b);
                match compare_obs(oa, &ob, opts) {
                    Some(true) => {}
                    Some(false) => {
                        last_kill = Some(witness_from(
                            &assignment,
                            seed,
                            trial,
                            "values differ beyond tolerance",
                        ));
                        return false;
                    }
                    None => all_defined = false,
                }
            }
            if all_defined {
                defined_counts[ti] += 1;
            }
            true
        });
        if alive.is_empty() {
            return Verdict::Distinct {
                witness: last_kill.unwrap_or_else(|| witness_from(&assignment, seed, trial, "no renaming survived")),
            };
        }
    }

    let best_defined = alive.iter().map(|&ti| defined_counts[ti]).max().unwrap_or(0);
    if trials > 0 && best_defined * 2 < trials {
        return Verdict::Inconclusive {
            reason: format!("defined on {best_defined}/{trials} trials"),
        };
    }
    Verdict::Equivalent { trials }
}

// ---------------------------------------------------------------------------
// check_general_validity
// ---------------------------------------------------------------------------

/// True iff every sampled assignment with both sides defined satisfies the
/// relation (or implication), and at least 25% of the trials were defined.
pub fn check_general_validity(f: &ParsedFormula, trials: usize, seed: u64) -> bool {
    check_general_validity_opts(f, trials, seed, &EvalOptions::default())
}

pub fn check_general_validity_opts(
    f: &ParsedFormula,
    trials: usize,
    seed: u64,
    opts: &EvalOptions,
) -> bool {
    if !f.fully_parsed() || trials == 0 {
        return false;
    }
    // Split segments at a `\Rightarrow` delimiter into antecedents and
    // consequents; quantifier heads only constrain the sampling.
    let mut antecedents: Vec<&Expr> = Vec::new();
    let mut consequents: Vec<&Expr> = Vec::new();
    let mut after_arrow = false;
    let mut has_relation = false;
    for (delim, seg) in &f.segments {
        if let Some(d) = delim {
            if d.contains("\\Rightarrow") {
                after_arrow = true;
            }
        }
        match seg {
            Expr::Quantifier { body: None, .. } => continue,
            Expr::Relation { .. } | Expr::Implication { .. } => {
                has_relation = true;
                if after_arrow {
                    consequents.push(seg);
                } else {
                    antecedents.push(seg);
                }
            }
            Expr::SetExpr(SetOp::Membership { .. }) => {
                if after_arrow {
                    consequents.push(seg);
                } else {
                    antecedents.push(seg);
                }
            }
            _ => return false, // bare expressions have no truth value
        }
    }
    if !has_relation {
        return false;
    }

    let slots = collect_slots(f);
    let mut op_names = BTreeSet::new();
    collect_op_names(f, &mut op_names);

    let mut defined = 0usize;
    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(hash_trial(seed, trial));
        let assignment = sample_assignment(&slots, &op_names, &mut rng);
        let ev = Evaluator { assignment: &assignment, opts };
        let eval_group = |group: &[&Expr]| -> Option<bool> {
            let mut all = true;
            for seg in group {
                match ev.eval(seg) {
                    Value::Bool(b) => all &= b,
                    _ => return None,
                }
            }
            Some(all)
        };
        let verdict = if consequents.is_empty() {
            eval_group(&antecedents)
        } else {
            match eval_group(&antecedents) {
                Some(false) => Some(true), // vacuous
                Some(true) => eval_group(&consequents),
                None => None,
            }
        };
        match verdict {
            Some(true) => defined += 1,
            Some(false) => return false,
            None => {}
        }
    }
    defined * 4 >= trials
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::{parse_formula, ParseOptions};
    use crate::subst::{apply_substitution, SubstitutionMap};

    fn parse(s: &str) -> ParsedFormula {
        parse_formula(s, &ParseOptions::default()).unwrap()
    }

    #[test]
    fn eval_sqrt_25() {
        let f = parse(r"\sqrt{25}");
        let assignment = Assignment::default();
        let opts = EvalOptions::default();
        let ev = Evaluator { assignment: &assignment, opts: &opts };
        match ev.eval(&f.segments[0].1) {
            Value::Num(z) => assert!((z.re - 5.0).abs() < 1e-12 && z.im.abs() < 1e-12),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn eval_rational_difference() {
        let f = parse(r"\frac{3}{13}-\frac{2}{13}");
        let assignment = Assignment::default();
        let opts = EvalOptions::default();
        let ev = Evaluator { assignment: &assignment, opts: &opts };
        match ev.eval(&f.segments[0].1) {
            Value::Num(z) => assert!((z.re - 1.0 / 13.0).abs() < 1e-12),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn equivalence_of_rewritten_binomial() {
        let a = parse(r"(a+b)^2=a^2+2\cdot a\cdot b+b^2");
        let b = parse(r"(b+a)^2=a^2+b^2+2\cdot b\cdot a");
        let v = check_equivalence(&a, &b, 64, 42);
        assert!(v.is_equivalent(), "{v:?}");
    }

    #[test]
    fn distinct_on_broken_binomial() {
        let a = parse(r"(a+b)^2=a^2+2\cdot a\cdot b+b^2");
        let b = parse(r"(a+b)^2=a^2+2\cdot a\cdot b+a^2");
        let v = check_equivalence(&a, &b, 64, 42);
        assert!(v.is_distinct(), "{v:?}");
    }

    #[test]
    fn reflexivity() {
        let a = parse(r"\tan(x)=\sin(x)/\cos(x)");
        let v = check_equivalence(&a, &a.clone(), 16, 1);
        assert!(v.is_equivalent());
    }

    #[test]
    fn renamed_formula_is_equivalent() {
        let a = parse(r"(a+b)^2=a^2+2\cdot a\cdot b+b^2");
        let mut map = SubstitutionMap::default();
        map.insert(Symbol::var("a"), Symbol::var("c"));
        map.insert(Symbol::var("b"), Symbol::var("d"));
        let b = apply_substitution(&a, &map).unwrap();
        let v = check_equivalence(&a, &b, 64, 7);
        assert!(v.is_equivalent(), "{v:?}");
    }

    #[test]
    fn swapped_rename_is_equivalent() {
        // a->b, b->a: name matching alone would falsely report distinct.
        let a = parse(r"a + 2\cdot b");
        let mut map = SubstitutionMap::default();
        map.insert(Symbol::var("a"), Symbol::var("b"));
        map.insert(Symbol::var("b"), Symbol::var("a"));
        let b = apply_substitution(&a, &map).unwrap();
        let v = check_equivalence(&a, &b, 32, 3);
        assert!(v.is_equivalent(), "{v:?}");
    }

    #[test]
    fn different_valid_identities_are_distinct() {
        let a = parse(r"\tan(x)=\sin(x)/\cos(x)");
        let b = parse(r"\sin(x)^2+\cos(x)^2=1");
        let v = check_equivalence(&a, &b, 64, 42);
        assert!(v.is_distinct(), "two unrelated identities must be distinct: {v:?}");
    }

    #[test]
    fn two_pow_x_vs_x_pow_2_distinct() {
        let a = parse("x^2");
        let b = parse("2^x");
        let v = check_equivalence(&a, &b, 64, 42);
        assert!(v.is_distinct(), "{v:?}");
    }

    #[test]
    fn validity_examples() {
        assert!(check_general_validity(&parse(r"\tan(x)=\sin(x)/\cos(x)"), 64, 42));
        assert!(!check_general_validity(&parse(r"x^2=2"), 64, 42));
        assert!(check_general_validity(&parse("1+2=3"), 16, 42));
        assert!(check_general_validity(&parse(r"\sin(x)^2+\cos(x)^2=1"), 64, 42));
        assert!(!check_general_validity(&parse(r"a^2+b^2=c^2"), 64, 42));
    }

    #[test]
    fn euler_identity_is_valid() {
        assert!(check_general_validity(&parse(r"e^{\mathrm{i}\pi}+1=0"), 16, 42));
    }

    #[test]
    fn monotonicity_distinct_stays_distinct() {
        let a = parse(r"(a+b)^2=a^2+2ab+b^2");
        let b = parse(r"(a+b)^2=a^2+2ab+a^2");
        let v64 = check_equivalence(&a, &b, 64, 11);
        let v128 = check_equivalence(&a, &b, 128, 11);
        assert!(v64.is_distinct() && v128.is_distinct());
    }

    #[test]
    fn witness_reproduces() {
        let a = parse(r"x+1");
        let b = parse(r"x+2");
        match check_equivalence(&a, &b, 16, 5) {
            Verdict::Distinct { witness } => {
                // Re-running with the same seed reproduces the verdict.
                let again = check_equivalence(&a, &b, witness.trial + 1, witness.seed);
                assert!(again.is_distinct());
            }
            other => panic!("expected distinct, got {other:?}"),
        }
    }

    #[test]
    fn derivative_matches_generic_prime() {
        // d/dx f(x) and f'(x) evaluate identically for the cubic model.
        let a = parse(r"\frac{d}{dx} f(x) = f'(x)");
        assert!(check_general_validity(&a, 32, 9));
    }

    #[test]
    fn limit_definition_equivalent_to_itself_renamed() {
        let a = parse(r"\frac{d}{dx} f(x) = \lim_{h \to 0} \frac{f(x+h)-f(x)}{h}");
        let mut map = SubstitutionMap::default();
        map.insert(Symbol::var("x"), Symbol::var("y"));
        map.insert(Symbol::func("f"), Symbol::func("g"));
        let b = apply_substitution(&a, &map).unwrap();
        let v = check_equivalence(&a, &b, 24, 13);
        assert!(v.is_equivalent(), "{v:?}");
    }

    #[test]
    fn opaque_input_inconclusive() {
        let a = parse(r"x \approx y");
        let b = parse(r"x \approx y");
        assert!(matches!(check_equivalence(&a, &b, 8, 0), Verdict::Inconclusive { .. }));
    }
}

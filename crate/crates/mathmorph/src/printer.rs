//! LaTeX printing with randomized, configurable notation decisions, plus a
//! deterministic canonical mode used for round-trip tests and dedup keys.
//!
//! Mathematical variations (commutative permutation, equality side swap,
//! integer-power expansion, division form) and LaTeX variations
//! (`\left`/`\right`, glyph choices, brace minimization) are drawn
//! independently per site from [`PrintSettings`].

use num_bigint::BigInt;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::expr::{
    BigOpKind, ConstantKind, Expr, FuncKind, MathText, ParsedFormula, RelOp, Run, SetOp,
};

fn default_half() -> f64 {
    0.5
}
fn default_third() -> f64 {
    1.0 / 3.0
}

/// Weighted alternatives for one printing decision.
///
/// Weights are non-negative and must not all be zero; they do not need to
/// sum to one.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Weights(pub Vec<f64>);

impl Weights {
    pub fn uniform(n: usize) -> Weights {
        Weights(vec![1.0; n])
    }
}

/// Probability table governing every randomized printing decision.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PrintSettings {
    /// Probability of swapping the sides of an equality.
    pub eq_swap: f64,
    /// Probability of flipping an inequality (`x > 0` vs `0 < x`).
    pub ineq_flip: f64,
    /// Multiplication symbol: `\cdot`, `*`, `\times`, juxtaposition.
    pub mul_symbol: Weights,
    /// Division rendering: slash, negative power, `\frac`, compact `\frac2n`.
    pub division: Weights,
    /// Integer powers 2-4: `a^3`, `a^2 \cdot a`, `a \cdot a \cdot a`.
    pub int_pow: Weights,
    /// Probability of expanding an eligible integer power at all.
    pub int_pow_expand: f64,
    /// Inverse trigonometric naming: `\asin`, `\arcsin`, `\sin^{-1}`.
    pub inv_trig: Weights,
    /// Derivatives: prime, `f^{(n)}`, `\frac{d^n}{dx^n}`.
    pub derivative: Weights,
    /// Expected values: `\mathbb{E}`, `\operatorname{E}`, `E`.
    pub expectation: Weights,
    /// Determinants: `\det(A)`, `|A|`.
    pub determinant: Weights,
    /// Binomial coefficients: `\binom{n}{k}`, `{n \choose k}`.
    pub binomial: Weights,
    /// Empty sets: `\emptyset`, `\varnothing`, `\{\}`.
    pub empty_set: Weights,
    /// Natural logarithms: `\ln`, `\log_e`.
    pub natural_log: Weights,
    /// Probability of wrapping parentheses in `\left`/`\right`.
    pub left_right: f64,
    /// Probability of permuting the operands of an Add/Mul site.
    pub commute: f64,
    /// Probability of dropping braces around single-token scripts.
    pub script_brace_min: f64,
    /// Seed recorded in settings files; the caller owns the generator.
    pub rng_seed: Option<u64>,
}

impl Default for PrintSettings {
    fn default() -> Self {
        PrintSettings {
            eq_swap: default_half(),
            ineq_flip: default_third(),
            mul_symbol: Weights::uniform(4),
            division: Weights::uniform(4),
            int_pow: Weights::uniform(3),
            int_pow_expand: 0.25,
            inv_trig: Weights::uniform(3),
            derivative: Weights::uniform(3),
            expectation: Weights::uniform(3),
            determinant: Weights::uniform(2),
            binomial: Weights::uniform(2),
            empty_set: Weights::uniform(3),
            natural_log: Weights::uniform(2),
            left_right: 0.3,
            commute: 0.5,
            script_brace_min: 0.4,
            rng_seed: None,
        }
    }
}

impl PrintSettings {
    pub fn from_json(json: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(json)
    }
}

/// Per-site decision source: canonical mode answers deterministically.
enum Decider<'a> {
    Canonical,
    Random(&'a mut dyn rand::RngCore),
}

impl Decider<'_> {
    fn coin(&mut self, p: f64) -> bool {
        match self {
            Decider::Canonical => false,
            Decider::Random(rng) => rng.gen_bool(p.clamp(0.0, 1.0)),
        }
    }

    /// Weighted pick; canonical mode always picks the first alternative.
    fn pick(&mut self, weights: &Weights) -> usize {
        match self {
            Decider::Canonical => 0,
            Decider::Random(rng) => {
                let total: f64 = weights.0.iter().map(|w| w.max(0.0)).sum();
                if total <= 0.0 {
                    return 0;
                }
                let mut x = rng.gen_range(0.0..total);
                for (i, w) in weights.0.iter().enumerate() {
                    let w = w.max(0.0);
                    if x < w {
                        return i;
                    }
                    x -= w;
                }
                weights.0.len() - 1
            }
        }
    }

    /// Weighted pick over a masked subset (disallowed entries get weight 0).
    fn pick_masked(&mut self, weights: &Weights, allowed: &[bool]) -> usize {
        match self {
            Decider::Canonical => allowed.iter().position(|a| *a).unwrap_or(0),
            Decider::Random(_) => {
                let masked: Vec<f64> = weights
                    .0
                    .iter()
                    .zip(allowed)
                    .map(|(w, a)| if *a { w.max(0.0) } else { 0.0 })
                    .collect();
                if masked.iter().sum::<f64>() <= 0.0 {
                    return allowed.iter().position(|a| *a).unwrap_or(0);
                }
                self.pick(&Weights(masked))
            }
        }
    }
}

// Operator precedence levels for parenthesization.
const PREC_RELATION: u8 = 5;
const PREC_SET: u8 = 7;
const PREC_ADD: u8 = 10;
const PREC_BIGOP: u8 = 15;
const PREC_MUL: u8 = 20;
const PREC_DERIV: u8 = 25;
const PREC_POW: u8 = 30;
const PREC_ATOM: u8 = 100;

fn prec(e: &Expr) -> u8 {
    match e {
        Expr::Relation { .. } | Expr::Implication { .. } | Expr::Quantifier { .. } => PREC_RELATION,
        Expr::SetExpr(SetOp::Union(_))
        | Expr::SetExpr(SetOp::Intersection(_))
        | Expr::SetExpr(SetOp::Membership { .. }) => PREC_SET,
        Expr::Add(_) => PREC_ADD,
        Expr::BigOp { .. } => PREC_BIGOP,
        Expr::Mul(_) => PREC_MUL,
        Expr::Derivative { .. } => PREC_DERIV,
        Expr::Pow(..) => PREC_POW,
        Expr::Integer(v) => {
            if v.sign() == num_bigint::Sign::Minus {
                PREC_ADD
            } else {
                PREC_ATOM
            }
        }
        Expr::Rational(n, _) => {
            if n.sign() == num_bigint::Sign::Minus {
                PREC_ADD
            } else {
                PREC_MUL
            }
        }
        _ => PREC_ATOM,
    }
}

struct Printer<'a> {
    settings: &'a PrintSettings,
    decider: Decider<'a>,
    /// Inside function-call arguments additive operators print tight.
    tight: bool,
}

impl<'a> Printer<'a> {
    fn plus(&self) -> &'static str {
        if self.tight {
            "+"
        } else {
            " + "
        }
    }

    fn minus(&self) -> &'static str {
        if self.tight {
            "-"
        } else {
            " - "
        }
    }

    fn parens(&mut self, inner: String) -> String {
        if self.decider.coin(self.settings.left_right) {
            format!("\\left({inner}\\right)")
        } else {
            format!("({inner})")
        }
    }

    /// Renders `e`, parenthesizing when its precedence is below `min_prec`.
    fn at(&mut self, e: &Expr, min_prec: u8) -> String {
        let rendered = self.render(e);
        if prec(e) < min_prec {
            self.parens(rendered)
        } else {
            rendered
        }
    }

    /// Script argument (`^{...}` / `_{...}`): braces may be dropped around
    /// single-token scripts.
    fn script(&mut self, e: &Expr) -> String {
        let was_tight = self.tight;
        self.tight = true;
        let inner = self.render(e);
        self.tight = was_tight;
        let single_token = inner.len() == 1 && inner.chars().all(|c| c.is_ascii_alphanumeric())
            || (inner.starts_with('\\') && inner[1..].chars().all(|c| c.is_ascii_alphabetic()));
        if single_token && self.decider.coin(self.settings.script_brace_min) {
            inner
        } else {
            format!("{{{inner}}}")
        }
    }

    fn render(&mut self, e: &Expr) -> String {
        match e {
            Expr::Integer(v) => v.to_string(),
            Expr::Rational(n, d) => self.render_division(&[Expr::Integer(n.clone())], &Expr::Integer(d.clone())),
            Expr::Constant(k) => self.render_constant(*k, false),
            Expr::Symbol(s) => s.to_string(),
            Expr::Func(kind, args) => self.render_func(kind, args),
            Expr::GenericApp { symbol, args, deriv_order } => {
                let mut s = symbol.to_string();
                if *deriv_order > 0 {
                    if *deriv_order <= 3 {
                        for _ in 0..*deriv_order {
                            s.push('\'');
                        }
                    } else {
                        s.push_str(&format!("^{{({deriv_order})}}"));
                    }
                }
                if !args.is_empty() {
                    s.push_str(&self.render_args_parens(args));
                }
                s
            }
            Expr::Add(terms) => self.render_add(terms),
            Expr::Mul(factors) => self.render_mul(factors),
            Expr::Pow(base, exp) => self.render_pow(base, exp),
            Expr::Relation { op, lhs, rhs } => self.render_relation(*op, lhs, rhs),
            Expr::Implication { antecedent, consequent } => {
                let a = self.render(antecedent);
                let c = self.render(consequent);
                format!("{a} \\Rightarrow {c}")
            }
            Expr::Quantifier { bound, domain, body } => {
                let names: Vec<String> = bound.iter().map(|s| s.to_string()).collect();
                let mut s = format!("\\forall {}", names.join(", "));
                if let Some(d) = domain {
                    s.push_str(" \\in ");
                    s.push_str(&self.at(d, PREC_SET));
                }
                if let Some(b) = body {
                    s.push(' ');
                    s.push_str(&self.render(b));
                }
                s
            }
            Expr::BigOp { kind, bound, lower, upper, body } => {
                self.render_bigop(*kind, bound, lower.as_deref(), upper.as_deref(), body)
            }
            Expr::Derivative { body, wrt, order } => self.render_derivative(body, wrt, *order),
            Expr::Matrix(rows) => self.render_matrix(rows),
            Expr::SetExpr(op) => self.render_set(op),
            Expr::Opaque { raw, .. } => raw.clone(),
        }
    }

    fn render_constant(&mut self, k: ConstantKind, base_of_symbolic_pow: bool) -> String {
        match k {
            ConstantKind::E => {
                if base_of_symbolic_pow {
                    "e".to_string()
                } else {
                    "\\mathrm{e}".to_string()
                }
            }
            ConstantKind::Pi => "\\pi".to_string(),
            ConstantKind::ImaginaryUnit => "\\mathrm{i}".to_string(),
            ConstantKind::Infinity => "\\infty".to_string(),
        }
    }

    fn render_args_parens(&mut self, args: &[Expr]) -> String {
        let was_tight = self.tight;
        self.tight = true;
        let parts: Vec<String> = args.iter().map(|a| self.render(a)).collect();
        self.tight = was_tight;
        let inner = parts.join(", ");
        if self.decider.coin(self.settings.left_right) {
            format!("\\left({inner}\\right)")
        } else {
            format!("({inner})")
        }
    }

    fn render_func(&mut self, kind: &FuncKind, args: &[Expr]) -> String {
        match kind {
            FuncKind::Sin | FuncKind::Cos | FuncKind::Tan => {
                format!("\\{}{}", kind.name(), self.render_args_parens(args))
            }
            FuncKind::ArcSin | FuncKind::ArcCos | FuncKind::ArcTan => {
                let base = match kind {
                    FuncKind::ArcSin => "sin",
                    FuncKind::ArcCos => "cos",
                    _ => "tan",
                };
                let choice = self.decider.pick(&self.settings.inv_trig);
                let head = match choice {
                    0 => format!("\\a{base}"),
                    1 => format!("\\arc{base}"),
                    _ => format!("\\{base}^{{-1}}"),
                };
                format!("{head}{}", self.render_args_parens(args))
            }
            FuncKind::Log(base) => {
                let b = self.script(base);
                format!("\\log_{b}{}", self.render_args_parens(args))
            }
            FuncKind::Ln => {
                let choice = self.decider.pick(&self.settings.natural_log);
                let head = if choice == 0 { "\\ln".to_string() } else { "\\log_e".to_string() };
                format!("{head}{}", self.render_args_parens(args))
            }
            FuncKind::Exp => format!("\\exp{}", self.render_args_parens(args)),
            FuncKind::Sqrt => {
                let was_tight = self.tight;
                self.tight = true;
                let inner = self.render(&args[0]);
                self.tight = was_tight;
                format!("\\sqrt{{{inner}}}")
            }
            FuncKind::Abs => {
                let was_tight = self.tight;
                self.tight = true;
                let inner = self.render(&args[0]);
                self.tight = was_tight;
                if self.decider.coin(self.settings.left_right) {
                    format!("\\left|{inner}\\right|")
                } else {
                    format!("|{inner}|")
                }
            }
            FuncKind::Factorial => {
                let arg = &args[0];
                let needs_parens = !matches!(
                    arg,
                    Expr::Symbol(_) | Expr::Constant(_) | Expr::GenericApp { .. }
                ) && !matches!(arg, Expr::Integer(v) if v.sign() != num_bigint::Sign::Minus);
                let inner = if needs_parens {
                    let r = self.render(arg);
                    self.parens(r)
                } else {
                    self.render(arg)
                };
                format!("{inner}!")
            }
            FuncKind::Binomial => {
                let was_tight = self.tight;
                self.tight = true;
                let n = self.render(&args[0]);
                let k = self.render(&args[1]);
                self.tight = was_tight;
                if self.decider.pick(&self.settings.binomial) == 0 {
                    format!("\\binom{{{n}}}{{{k}}}")
                } else {
                    format!("{{{n} \\choose {k}}}")
                }
            }
            FuncKind::Det => {
                let bars_ok = matches!(args[0], Expr::Matrix(_));
                let choice = self.decider.pick_masked(&self.settings.determinant, &[true, bars_ok]);
                if choice == 1 {
                    let inner = self.render(&args[0]);
                    format!("\\left|{inner}\\right|")
                } else {
                    format!("\\det{}", self.render_args_parens(args))
                }
            }
            FuncKind::Expectation => {
                let head = match self.decider.pick(&self.settings.expectation) {
                    0 => "\\mathbb{E}",
                    1 => "\\operatorname{E}",
                    _ => "E",
                };
                format!("{head}{}", self.render_args_brackets(args))
            }
            FuncKind::Variance => format!("\\mathrm{{Var}}{}", self.render_args_brackets(args)),
            FuncKind::Covariance => format!("\\mathrm{{Cov}}{}", self.render_args_brackets(args)),
            FuncKind::Probability => {
                let was_tight = self.tight;
                self.tight = true;
                let parts: Vec<String> = args.iter().map(|a| self.render(a)).collect();
                self.tight = was_tight;
                format!("\\mathbb{{P}}({})", parts.join(" | "))
            }
        }
    }

    fn render_args_brackets(&mut self, args: &[Expr]) -> String {
        let was_tight = self.tight;
        self.tight = true;
        let parts: Vec<String> = args.iter().map(|a| self.render(a)).collect();
        self.tight = was_tight;
        format!("[{}]", parts.join(", "))
    }

    fn render_add(&mut self, terms: &[Expr]) -> String {
        let mut terms: Vec<Expr> = terms.to_vec();
        if self.decider.coin(self.settings.commute) {
            if let Decider::Random(rng) = &mut self.decider {
                terms.shuffle(rng);
            }
        }
        let mut out = String::new();
        for (i, t) in terms.iter().enumerate() {
            if t.is_negated_term() {
                let stripped = t.strip_negation();
                if i == 0 {
                    out.push('-');
                } else {
                    out.push_str(self.minus());
                }
                out.push_str(&self.at(&stripped, PREC_ADD + 1));
            } else {
                if i > 0 {
                    out.push_str(self.plus());
                }
                out.push_str(&self.at(t, PREC_ADD + 1));
            }
        }
        out
    }

    fn render_mul(&mut self, factors: &[Expr]) -> String {
        // Split reciprocal factors into a denominator.
        let mut numerator: Vec<Expr> = Vec::new();
        let mut denominator: Vec<Expr> = Vec::new();
        for f in factors {
            match f {
                Expr::Pow(base, exp) if exp.is_integer_value(-1) => {
                    denominator.push(base.as_ref().clone())
                }
                other => numerator.push(other.clone()),
            }
        }
        let single_trailing_recip = denominator.len() == 1
            && matches!(&factors[factors.len() - 1], Expr::Pow(_, e) if e.is_integer_value(-1));

        if !denominator.is_empty() && single_trailing_recip && !numerator.is_empty() {
            return self.render_division(&numerator, &denominator[0]);
        }
        if !denominator.is_empty() {
            // Mixed or leading reciprocals: render factors in order with
            // inline slashes (`a / c \cdot d` keeps the original order).
            let mut out = String::new();
            for (i, f) in factors.iter().enumerate() {
                match f {
                    Expr::Pow(base, exp) if exp.is_integer_value(-1) => {
                        if i == 0 {
                            out.push('1');
                        }
                        out.push('/');
                        out.push_str(&self.at(base, PREC_MUL + 1));
                    }
                    other => {
                        if i > 0 {
                            out.push_str(" \\cdot ");
                        }
                        out.push_str(&self.at(other, PREC_MUL));
                    }
                }
            }
            return out;
        }
        self.render_plain_product(&numerator)
    }

    fn render_plain_product(&mut self, factors: &[Expr]) -> String {
        let mut factors: Vec<Expr> = factors.to_vec();
        if factors.len() >= 2 && self.decider.coin(self.settings.commute) {
            if let Decider::Random(rng) = &mut self.decider {
                factors.shuffle(rng);
            }
        }
        // A leading -1 renders as a sign.
        let mut sign = "";
        if factors.len() >= 2 {
            if let Expr::Integer(v) = &factors[0] {
                if *v == BigInt::from(-1) {
                    sign = "-";
                    factors.remove(0);
                }
            }
        }
        if factors.len() == 1 {
            return format!("{sign}{}", self.at(&factors[0], PREC_MUL));
        }
        let mut out = String::from(sign);
        for (i, f) in factors.iter().enumerate() {
            // Big operators swallow everything to their right; keep them
            // parenthesized inside products.
            let rendered = self.at(f, PREC_MUL);
            if i == 0 {
                out.push_str(&rendered);
                continue;
            }
            let sep = self.mul_separator(&factors[i - 1], f, &rendered);
            out.push_str(sep);
            out.push_str(&rendered);
        }
        out
    }

    /// Chooses the multiplication separator for one site, suppressing
    /// juxtaposition where it would be ambiguous or unparseable.
    fn mul_separator(&mut self, left: &Expr, right: &Expr, right_rendered: &str) -> &'static str {
        let right_is_number = matches!(right, Expr::Integer(_) | Expr::Rational(..))
            || right_rendered.starts_with(|c: char| c.is_ascii_digit() || c == '-');
        // A bare symbol followed by parentheses would re-parse as a
        // function call when that symbol carries function evidence.
        let left_is_bare_symbol = matches!(left, Expr::Symbol(_));
        let right_opens_paren = right_rendered.starts_with('(') || right_rendered.starts_with("\\left(");
        let juxt_ok = !right_is_number && !(left_is_bare_symbol && right_opens_paren);
        let allowed = [true, true, true, juxt_ok];
        match self.decider.pick_masked(&self.settings.mul_symbol, &allowed) {
            0 => " \\cdot ",
            1 => " * ",
            2 => " \\times ",
            _ => {
                if right_opens_paren {
                    ""
                } else {
                    " "
                }
            }
        }
    }

    fn render_division(&mut self, numerator: &[Expr], denominator: &Expr) -> String {
        let num_expr = if numerator.len() == 1 {
            numerator[0].clone()
        } else {
            Expr::Mul(numerator.to_vec())
        };
        enum Form {
            Slash,
            NegPow,
            Frac,
            FracCompact,
        }
        let form = match &mut self.decider {
            Decider::Canonical => Form::Frac,
            Decider::Random(_) => {
                // Compact \frac2n only for single-character operands.
                let num_r = render_canonical_expr(&num_expr);
                let den_r = render_canonical_expr(denominator);
                let compact_ok = is_single_char_token(&num_r) && is_single_char_token(&den_r);
                let allowed = [true, true, true, compact_ok];
                match self.decider.pick_masked(&self.settings.division, &allowed) {
                    0 => Form::Slash,
                    1 => Form::NegPow,
                    3 => Form::FracCompact,
                    _ => Form::Frac,
                }
            }
        };
        match form {
            Form::Frac => {
                let was_tight = self.tight;
                self.tight = true;
                let n = self.render(&num_expr);
                let d = self.render(denominator);
                self.tight = was_tight;
                format!("\\frac{{{n}}}{{{d}}}")
            }
            Form::FracCompact => {
                let n = self.render(&num_expr);
                let d = self.render(denominator);
                format!("\\frac{n}{d}")
            }
            Form::Slash => {
                let n = self.at(&num_expr, PREC_MUL + 1);
                let d = self.at(denominator, PREC_MUL + 1);
                format!("{n}/{d}")
            }
            Form::NegPow => {
                let n = self.at(&num_expr, PREC_MUL);
                let d = self.at(denominator, PREC_POW + 1);
                let sep = match self.decider.pick_masked(&self.settings.mul_symbol, &[true, true, true, false]) {
                    1 => " * ",
                    2 => " \\times ",
                    _ => " \\cdot ",
                };
                format!("{n}{sep}{d}^{{-1}}")
            }
        }
    }

    fn render_pow(&mut self, base: &Expr, exp: &Expr) -> String {
        // Integer power expansion (exponents 2-4 only).
        if let Expr::Integer(n) = exp {
            if let Some(n) = to_small(n) {
                if (2..=4).contains(&n) && self.decider.coin(self.settings.int_pow_expand) {
                    let choice = self.decider.pick(&self.settings.int_pow);
                    match choice {
                        1 if n > 2 => {
                            // a^{n-1} \cdot a
                            let head = self.render_pow_plain(base, &Expr::int(n - 1));
                            let tail = self.at(base, PREC_MUL + 1);
                            return format!("{head} \\cdot {tail}");
                        }
                        1 | 2 => {
                            let parts: Vec<String> =
                                (0..n).map(|_| self.at(base, PREC_MUL + 1)).collect();
                            return parts.join(" \\cdot ");
                        }
                        _ => {}
                    }
                }
            }
        }
        self.render_pow_plain(base, exp)
    }

    fn render_pow_plain(&mut self, base: &Expr, exp: &Expr) -> String {
        // e with a symbolic exponent prints as the bare letter.
        let base_rendered = match base {
            Expr::Constant(ConstantKind::E) if !matches!(exp, Expr::Integer(_)) => "e".to_string(),
            _ => self.at(base, PREC_POW + 1),
        };
        // sqrt forms for rational exponents 1/n.
        if let Expr::Rational(n, d) = exp {
            if *n == BigInt::from(1) && *d != BigInt::from(1) {
                if let Decider::Random(_) = self.decider {
                    if self.decider.coin(0.5) {
                        let was_tight = self.tight;
                        self.tight = true;
                        let inner = self.render(base);
                        self.tight = was_tight;
                        if *d == BigInt::from(2) {
                            return format!("\\sqrt{{{inner}}}");
                        }
                        return format!("\\sqrt[{d}]{{{inner}}}");
                    }
                }
            }
        }
        let script = self.script(exp);
        if script.starts_with('{') || script.len() == 1 || script.starts_with('\\') {
            format!("{base_rendered}^{script}")
        } else {
            format!("{base_rendered}^{{{script}}}")
        }
    }

    fn render_relation(&mut self, op: RelOp, lhs: &Expr, rhs: &Expr) -> String {
        let (mut op, mut lhs, mut rhs) = (op, lhs, rhs);
        match op {
            RelOp::Eq | RelOp::Ne => {
                if self.decider.coin(self.settings.eq_swap) {
                    std::mem::swap(&mut lhs, &mut rhs);
                }
            }
            _ => {
                if self.decider.coin(self.settings.ineq_flip) {
                    std::mem::swap(&mut lhs, &mut rhs);
                    op = op.mirrored();
                }
            }
        }
        let l = self.at(lhs, PREC_RELATION + 1);
        let r = self.at(rhs, PREC_RELATION + 1);
        format!("{l} {} {r}", op.latex())
    }

    fn render_bigop(
        &mut self,
        kind: BigOpKind,
        bound: &crate::expr::Symbol,
        lower: Option<&Expr>,
        upper: Option<&Expr>,
        body: &Expr,
    ) -> String {
        let head = match kind {
            BigOpKind::Sum => "\\sum",
            BigOpKind::Product => "\\prod",
            BigOpKind::Integral => "\\int",
            BigOpKind::Limit => "\\lim",
        };
        let mut s = String::from(head);
        match kind {
            BigOpKind::Sum | BigOpKind::Product => {
                let was_tight = self.tight;
                self.tight = true;
                if let Some(lo) = lower {
                    let lo = self.render(lo);
                    s.push_str(&format!("_{{{bound}={lo}}}"));
                } else {
                    s.push_str(&format!("_{{{bound}}}"));
                }
                self.tight = was_tight;
                if let Some(up) = upper {
                    let sc = self.script(up);
                    if sc.starts_with('{') || sc.len() == 1 || sc.starts_with('\\') {
                        s.push_str(&format!("^{sc}"));
                    } else {
                        s.push_str(&format!("^{{{sc}}}"));
                    }
                }
                s.push(' ');
                s.push_str(&self.at(body, PREC_BIGOP));
            }
            BigOpKind::Limit => {
                let target = lower.expect("limit target");
                let was_tight = self.tight;
                self.tight = true;
                let t = self.render(target);
                self.tight = was_tight;
                s.push_str(&format!("_{{{bound} \\to {t}}}"));
                s.push(' ');
                s.push_str(&self.at(body, PREC_BIGOP));
            }
            BigOpKind::Integral => {
                if let Some(lo) = lower {
                    let sc = self.script(lo);
                    if sc.starts_with('{') || sc.len() == 1 || sc.starts_with('\\') {
                        s.push_str(&format!("_{sc}"));
                    } else {
                        s.push_str(&format!("_{{{sc}}}"));
                    }
                }
                if let Some(up) = upper {
                    let sc = self.script(up);
                    if sc.starts_with('{') || sc.len() == 1 || sc.starts_with('\\') {
                        s.push_str(&format!("^{sc}"));
                    } else {
                        s.push_str(&format!("^{{{sc}}}"));
                    }
                }
                s.push(' ');
                s.push_str(&self.at(body, PREC_BIGOP));
                s.push_str(&format!(" \\, d{bound}"));
            }
        }
        s
    }

    fn render_derivative(&mut self, body: &Expr, wrt: &crate::expr::Symbol, order: u32) -> String {
        // Prime / order-superscript forms only apply to f(x) with x = wrt.
        let prime_ok = match body {
            Expr::GenericApp { args, deriv_order: 0, .. } => {
                args.len() == 1 && matches!(&args[0], Expr::Symbol(s) if s.key() == wrt.key())
            }
            _ => false,
        };
        // Canonical mode keeps the operator form: prime notation re-parses
        // as a GenericApp and would break structural round-trips.
        let choice = match self.decider {
            Decider::Canonical => 2,
            Decider::Random(_) => {
                let allowed = [prime_ok && order <= 3, prime_ok, true];
                self.decider.pick_masked(&self.settings.derivative, &allowed)
            }
        };
        match (choice, body) {
            (0, Expr::GenericApp { symbol, args, .. }) => {
                let primes: String = "'".repeat(order as usize);
                format!("{symbol}{primes}{}", self.render_args_parens(args))
            }
            (1, Expr::GenericApp { symbol, args, .. }) => {
                format!("{symbol}^{{({order})}}{}", self.render_args_parens(args))
            }
            _ => {
                let op = if order == 1 {
                    format!("\\frac{{d}}{{d{wrt}}}")
                } else {
                    format!("\\frac{{d^{{{order}}}}}{{d{wrt}^{{{order}}}}}")
                };
                let b = self.at(body, PREC_POW);
                format!("{op} {b}")
            }
        }
    }

    fn render_matrix(&mut self, rows: &[Vec<Expr>]) -> String {
        let was_tight = self.tight;
        self.tight = true;
        let body: Vec<String> = rows
            .iter()
            .map(|r| r.iter().map(|e| self.render(e)).collect::<Vec<_>>().join(" & "))
            .collect();
        self.tight = was_tight;
        format!("\\begin{{pmatrix}} {} \\end{{pmatrix}}", body.join(" \\\\ "))
    }

    fn render_set(&mut self, op: &SetOp) -> String {
        match op {
            SetOp::Union(xs) => {
                let parts: Vec<String> = xs.iter().map(|x| self.at(x, PREC_SET + 1)).collect();
                parts.join(" \\cup ")
            }
            SetOp::Intersection(xs) => {
                let parts: Vec<String> = xs.iter().map(|x| self.at(x, PREC_SET + 2)).collect();
                parts.join(" \\cap ")
            }
            SetOp::Membership { element, set } => {
                let e = self.at(element, PREC_SET + 1);
                let s = self.at(set, PREC_SET + 1);
                format!("{e} \\in {s}")
            }
            SetOp::Named(n) => n.latex().to_string(),
            SetOp::Empty => match self.decider.pick(&self.settings.empty_set) {
                0 => "\\emptyset".to_string(),
                1 => "\\varnothing".to_string(),
                _ => "\\{\\}".to_string(),
            },
        }
    }
}

fn is_single_char_token(s: &str) -> bool {
    s.len() == 1 && s.chars().all(|c| c.is_ascii_alphanumeric())
}

fn to_small(v: &BigInt) -> Option<i64> {
    use num_traits::ToPrimitive;
    v.to_i64()
}

fn render_canonical_expr(e: &Expr) -> String {
    let canonical = PrintSettings::default();
    let mut p = Printer { settings: &canonical, decider: Decider::Canonical, tight: false };
    p.render(e)
}

/// Deterministic canonical printing: `\cdot`, `\frac`, first-listed glyph
/// forms, no `\left`/`\right`, no permutation. Stable across runs and
/// idempotent through parse -> print.
pub fn print_canonical(formula: &ParsedFormula) -> String {
    let settings = PrintSettings::default();
    let mut out = String::new();
    for (delim, seg) in &formula.segments {
        if let Some(d) = delim {
            out.push_str(d);
        }
        let mut p = Printer { settings: &settings, decider: Decider::Canonical, tight: false };
        out.push_str(&p.render(seg));
    }
    out
}

/// Canonical printing of a single expression.
pub fn print_canonical_expr(e: &Expr) -> String {
    render_canonical_expr(e)
}

/// Randomized printing; every decision is drawn from `settings` through
/// the supplied generator. Opaque segments are emitted verbatim.
pub fn print_random(
    formula: &ParsedFormula,
    settings: &PrintSettings,
    rng: &mut impl rand::RngCore,
) -> String {
    let mut out = String::new();
    for (delim, seg) in &formula.segments {
        if let Some(d) = delim {
            out.push_str(d);
        }
        let mut p = Printer { settings, decider: Decider::Random(rng), tight: false };
        out.push_str(&p.render(seg));
    }
    out
}

/// Randomized printing of a math text: prose runs verbatim, formula runs
/// re-printed (each formula re-wrapped in dollars).
pub fn print_text_random(
    text: &MathText,
    settings: &PrintSettings,
    rng: &mut impl rand::RngCore,
) -> String {
    let mut out = String::new();
    for run in &text.runs {
        match run {
            Run::Prose(p) => out.push_str(p),
            Run::Formula(f) => {
                out.push('$');
                out.push_str(&print_random(f, settings, rng));
                out.push('$');
            }
        }
    }
    out
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
    fn canonical_binomial_golden() {
        let f = parse(r"(a+b)^2=a^2+2\cdot a\cdot b+b^2");
        assert_eq!(
            print_canonical(&f),
            "(a + b)^{2} = a^{2} + 2 \\cdot a \\cdot b + b^{2}"
        );
    }

    #[test]
    fn canonical_integer() {
        let f = parse("5");
        assert_eq!(print_canonical(&f), "5");
    }

    #[test]
    fn canonical_roundtrip_on_spec_formulas() {
        for s in [
            r"(a+b)^2=a^2+2ab+b^2",
            r"\frac{d}{dx} f(x) = \lim_{h \to 0} \frac{f(x+h)-f(x)}{h}",
            r"\int_a^b f(x)\,dx = F(b)-F(a)",
            r"\sum_{i=1}^n i^2",
            r"e^{i\pi}+1=0",
            r"\sin(x)+\sin(y)",
            r"\binom{n}{k}=\frac{n!}{k!(n-k)!}",
            r"\det\begin{pmatrix} a & b \\ c & d \end{pmatrix} = a\cdot d - b\cdot c",
            r"\tan(x)=\sin(x)/\cos(x)",
            r"x \neq 0",
            r"\forall n\in\mathbb{N}: n! = \prod_{i=1}^n i",
            r"a^2 - \frac{1}{2}",
            r"\mathrm{Var}[X] = \mathrm{E}[(X - \mathrm{E}[X])^2]",
        ] {
            let f = parse(s);
            assert!(f.fully_parsed(), "not fully parsed: {s}");
            let printed = print_canonical(&f);
            let reparsed = parse_formula(&printed, &ParseOptions::default())
                .unwrap_or_else(|e| panic!("reparse failed for {printed}: {e}"));
            assert!(reparsed.fully_parsed(), "reparse not full for {printed}");
            assert_eq!(reparsed.segments.len(), f.segments.len(), "segments differ for {s}");
            for (a, b) in f.segments.iter().zip(reparsed.segments.iter()) {
                assert_eq!(a.1, b.1, "roundtrip mismatch for {s} -> {printed}");
            }
            // idempotent
            assert_eq!(print_canonical(&reparsed), printed);
        }
    }

    #[test]
    fn random_print_reparses() {
        let settings = PrintSettings::default();
        for s in [
            r"(a+b)^2=a^2+2ab+b^2",
            r"\frac{d}{dx} f(x) = \lim_{h \to 0} \frac{f(x+h)-f(x)}{h}",
            r"\int_a^b f(x)\,dx = F(b)-F(a)",
            r"ab\le \frac{a^2+b^2}{2}",
            r"e^{i\pi}+1=0",
        ] {
            let f = parse(s);
            for seed in 0..40u64 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let printed = print_random(&f, &settings, &mut rng);
                let reparsed = parse_formula(&printed, &ParseOptions::default())
                    .unwrap_or_else(|e| panic!("reparse failed for {printed}: {e}"));
                assert!(reparsed.fully_parsed(), "reparse produced opaque for {printed}");
            }
        }
    }

    #[test]
    fn determinism_same_seed_same_output() {
        let f = parse(r"(a+b)^2=a^2+2ab+b^2");
        let settings = PrintSettings::default();
        let out1 = print_random(&f, &settings, &mut ChaCha8Rng::seed_from_u64(7));
        let out2 = print_random(&f, &settings, &mut ChaCha8Rng::seed_from_u64(7));
        assert_eq!(out1, out2);
    }

    #[test]
    fn power_expansion_forms() {
        let f = parse("a^3");
        let mut settings = PrintSettings::default();
        settings.int_pow_expand = 1.0;
        settings.commute = 0.0;
        settings.left_right = 0.0;
        let mut seen = std::collections::BTreeSet::new();
        for seed in 0..200u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            seen.insert(print_random(&f, &settings, &mut rng));
        }
        assert!(seen.contains("a^3") || seen.contains("a^{3}"), "{seen:?}");
        assert!(seen.contains("a^{2} \\cdot a") || seen.contains("a^2 \\cdot a"), "{seen:?}");
        assert!(seen.contains("a \\cdot a \\cdot a"), "{seen:?}");
    }

    #[test]
    fn delimiters_preserved() {
        let f = parse(r"\forall x, y: x\cdot y=y\cdot x");
        let printed = print_canonical(&f);
        assert_eq!(printed, "\\forall x, y: x \\cdot y = y \\cdot x");
    }
}

//! Limited univariate solver: exact roots of relations that are
//! polynomial of degree <= 2 in the chosen variable.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

use crate::expr::{Expr, FuncKind, RelOp, Symbol};

#[derive(Debug, Clone, PartialEq)]
pub enum SolveOutcome {
    /// Exact roots as expressions (rationals or quadratic-formula surds).
    Roots(Vec<Expr>),
    Unsupported(String),
}

/// Polynomial coefficient: exact rational when possible, else a symbolic
/// expression free of the solve variable.
#[derive(Debug, Clone)]
enum Coeff {
    Rat(BigRational),
    Sym(Expr),
}

impl Coeff {
    fn zero() -> Coeff {
        Coeff::Rat(BigRational::zero())
    }

    fn is_literal_zero(&self) -> bool {
        matches!(self, Coeff::Rat(r) if r.is_zero())
    }

    fn from_expr(e: &Expr) -> Coeff {
        match e {
            Expr::Integer(v) => Coeff::Rat(BigRational::from_integer(v.clone())),
            Expr::Rational(n, d) => Coeff::Rat(BigRational::new(n.clone(), d.clone())),
            other => Coeff::Sym(other.clone()),
        }
    }

    fn to_expr(&self) -> Expr {
        match self {
            Coeff::Rat(r) => rat_expr(r),
            Coeff::Sym(e) => e.clone(),
        }
    }

    fn add(&self, other: &Coeff) -> Coeff {
        match (self, other) {
            (Coeff::Rat(a), Coeff::Rat(b)) => Coeff::Rat(a + b),
            _ => {
                if self.is_literal_zero() {
                    return other.clone();
                }
                if other.is_literal_zero() {
                    return self.clone();
                }
                Coeff::Sym(Expr::add(vec![self.to_expr(), other.to_expr()]))
            }
        }
    }

    fn mul(&self, other: &Coeff) -> Coeff {
        match (self, other) {
            (Coeff::Rat(a), Coeff::Rat(b)) => Coeff::Rat(a * b),
            _ => {
                if self.is_literal_zero() || other.is_literal_zero() {
                    return Coeff::zero();
                }
                Coeff::Sym(Expr::mul(vec![self.to_expr(), other.to_expr()]))
            }
        }
    }

    fn neg(&self) -> Coeff {
        match self {
            Coeff::Rat(r) => Coeff::Rat(-r),
            Coeff::Sym(e) => Coeff::Sym(Expr::neg(e.clone())),
        }
    }
}

fn rat_expr(r: &BigRational) -> Expr {
    if r.denom().is_one() {
        Expr::Integer(r.numer().clone())
    } else if r.numer().is_negative() {
        Expr::neg(Expr::Rational(-r.numer().clone(), r.denom().clone()))
    } else {
        Expr::Rational(r.numer().clone(), r.denom().clone())
    }
}

fn contains_var(e: &Expr, var: &Symbol) -> bool {
    match e {
        Expr::Symbol(s) => s.key() == var.key(),
        _ => e.children().any(|c| contains_var(c, var)),
    }
}

/// Dense coefficients [c0, c1, c2]; degree above 2 is unsupported.
fn poly(e: &Expr, var: &Symbol) -> Result<Vec<Coeff>, String> {
    if !contains_var(e, var) {
        return Ok(vec![Coeff::from_expr(e)]);
    }
    match e {
        Expr::Symbol(s) if s.key() == var.key() => Ok(vec![Coeff::zero(), Coeff::Rat(BigRational::one())]),
        Expr::Add(terms) => {
            let mut acc = vec![Coeff::zero()];
            for t in terms {
                let p = poly(t, var)?;
                if p.len() > acc.len() {
                    acc.resize(p.len(), Coeff::zero());
                }
                for (i, c) in p.iter().enumerate() {
                    acc[i] = acc[i].add(c);
                }
            }
            Ok(acc)
        }
        Expr::Mul(factors) => {
            let mut acc = vec![Coeff::Rat(BigRational::one())];
            for f in factors {
                let p = poly(f, var)?;
                acc = convolve(&acc, &p)?;
            }
            Ok(acc)
        }
        Expr::Pow(base, exp) => {
            if contains_var(exp, var) {
                return Err("variable in exponent".into());
            }
            let n = match exp.as_ref() {
                Expr::Integer(v) => {
                    use num_traits::ToPrimitive;
                    v.to_i64().ok_or("huge exponent")?
                }
                _ => return Err("non-integer power of the variable".into()),
            };
            if !(0..=2).contains(&n) {
                return Err(format!("degree {n} exceeds 2"));
            }
            let b = poly(base, var)?;
            let mut acc = vec![Coeff::Rat(BigRational::one())];
            for _ in 0..n {
                acc = convolve(&acc, &b)?;
            }
            Ok(acc)
        }
        _ => Err("variable inside unsupported construct".into()),
    }
}

fn convolve(a: &[Coeff], b: &[Coeff]) -> Result<Vec<Coeff>, String> {
    let deg = a.len() + b.len() - 2;
    if deg > 2 {
        // Allow higher intermediate entries only when literally zero.
        let high_a = a.iter().enumerate().any(|(i, c)| i > 2 && !c.is_literal_zero());
        let high_b = b.iter().enumerate().any(|(i, c)| i > 2 && !c.is_literal_zero());
        if high_a || high_b {
            return Err("degree exceeds 2".into());
        }
    }
    let mut out = vec![Coeff::zero(); a.len() + b.len() - 1];
    for (i, ca) in a.iter().enumerate() {
        for (j, cb) in b.iter().enumerate() {
            let prod = ca.mul(cb);
            out[i + j] = out[i + j].add(&prod);
        }
    }
    for (i, c) in out.iter().enumerate() {
        if i > 2 && !c.is_literal_zero() {
            return Err("degree exceeds 2".into());
        }
    }
    out.truncate(3.min(out.len()));
    Ok(out)
}

/// Largest square factor: returns (s, m) with input = s^2 * m.
fn extract_square(n: &BigInt) -> (BigInt, BigInt) {
    let mut m = n.clone();
    let mut s = BigInt::one();
    let mut k = BigInt::from(2);
    while &k * &k <= m {
        let k2 = &k * &k;
        while (&m % &k2).is_zero() {
            m /= &k2;
            s *= &k;
        }
        k += 1;
    }
    (s, m)
}

fn sqrt_expr(m: &BigInt) -> Expr {
    Expr::Func(FuncKind::Sqrt, vec![Expr::Integer(m.clone())])
}

/// Builds `r0 + sign * c * surd` with exact folding of trivial parts.
fn root_with_surd(r0: &BigRational, c: &BigRational, surd: Expr, positive: bool) -> Expr {
    let c = if positive { c.clone() } else { -c.clone() };
    let term = if c.is_one() {
        surd
    } else if (-&c).is_one() {
        Expr::neg(surd)
    } else {
        let coeff = rat_expr(&c.abs());
        let m = Expr::mul(vec![coeff, surd]);
        if c.is_negative() {
            Expr::neg(m)
        } else {
            m
        }
    };
    if r0.is_zero() {
        term
    } else {
        Expr::add(vec![rat_expr(r0), term])
    }
}

/// Solves `eq` (a Relation with op `=`) for `var`, returning exact roots.
///
/// Degenerate relations (identically true, like `x = x`) and degrees above
/// two are unsupported; the caller skips those formulas.
pub fn solve_univariate(eq: &Expr, var: &Symbol) -> SolveOutcome {
    let Expr::Relation { op: RelOp::Eq, lhs, rhs } = eq else {
        return SolveOutcome::Unsupported("not an equality".into());
    };
    let (pl, pr) = match (poly(lhs, var), poly(rhs, var)) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return SolveOutcome::Unsupported(e),
    };
    // lhs - rhs
    let mut coeffs = vec![Coeff::zero(); 3];
    for (i, c) in pl.iter().enumerate() {
        coeffs[i] = coeffs[i].add(c);
    }
    for (i, c) in pr.iter().enumerate() {
        coeffs[i] = coeffs[i].add(&c.neg());
    }
    let [c0, c1, c2] = [&coeffs[0], &coeffs[1], &coeffs[2]];

    if c2.is_literal_zero() && c1.is_literal_zero() {
        return SolveOutcome::Unsupported("degenerate equation".into());
    }

    // Linear case.
    if c2.is_literal_zero() {
        return match (c0, c1) {
            (Coeff::Rat(a0), Coeff::Rat(a1)) => {
                SolveOutcome::Roots(vec![rat_expr(&(-(a0 / a1)))])
            }
            _ => SolveOutcome::Roots(vec![Expr::div(Expr::neg(c0.to_expr()), c1.to_expr())]),
        };
    }

    // Quadratic with exact rational coefficients.
    if let (Coeff::Rat(a0), Coeff::Rat(a1), Coeff::Rat(a2)) = (c0, c1, c2) {
        let disc = a1 * a1 - BigRational::from_integer(BigInt::from(4)) * a2 * a0;
        let r0 = -(a1 / (BigRational::from_integer(BigInt::from(2)) * a2));
        if disc.is_zero() {
            return SolveOutcome::Roots(vec![rat_expr(&r0)]);
        }
        // sqrt(p/q) = sqrt(p*q)/q
        let p = disc.numer().abs();
        let q = disc.denom().clone();
        let m_total = &p * &q;
        let (s, m) = extract_square(&m_total);
        // coefficient of the surd: s / (2*a2*q), sign of a2 handled by +-.
        let coeff = BigRational::new(s, BigInt::from(2) * a2.numer() * &q / a2.denom())
            .abs();
        if disc.is_positive() {
            if m.is_one() {
                // rational roots
                let lo = &r0 - &coeff;
                let hi = &r0 + &coeff;
                let mut roots = vec![rat_expr(&lo)];
                if hi != lo {
                    roots.push(rat_expr(&hi));
                }
                return SolveOutcome::Roots(roots);
            }
            let surd = sqrt_expr(&m);
            return SolveOutcome::Roots(vec![
                root_with_surd(&r0, &coeff, surd.clone(), false),
                root_with_surd(&r0, &coeff, surd, true),
            ]);
        }
        // Complex roots: r0 +- coeff * i * sqrt(m)
        let unit = Expr::Constant(crate::expr::ConstantKind::ImaginaryUnit);
        let surd = if m.is_one() {
            unit
        } else {
            Expr::mul(vec![unit, sqrt_expr(&m)])
        };
        return SolveOutcome::Roots(vec![
            root_with_surd(&r0, &coeff, surd.clone(), false),
            root_with_surd(&r0, &coeff, surd, true),
        ]);
    }

    // Symbolic quadratic formula.
    let a = c2.to_expr();
    let b = c1.to_expr();
    let c = c0.to_expr();
    let disc = Expr::add(vec![
        Expr::pow(b.clone(), Expr::int(2)),
        Expr::neg(Expr::mul(vec![Expr::int(4), a.clone(), c])),
    ]);
    let sqrt_disc = Expr::Func(FuncKind::Sqrt, vec![disc]);
    let two_a = Expr::mul(vec![Expr::int(2), a]);
    SolveOutcome::Roots(vec![
        Expr::div(
            Expr::add(vec![Expr::neg(b.clone()), Expr::neg(sqrt_disc.clone())]),
            two_a.clone(),
        ),
        Expr::div(Expr::add(vec![Expr::neg(b), sqrt_disc]), two_a),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::{parse_formula, ParseOptions};
    use crate::printer::print_canonical_expr;

    fn rel(s: &str) -> Expr {
        parse_formula(s, &ParseOptions::default()).unwrap().segments[0].1.clone()
    }

    #[test]
    fn sqrt_two_roots() {
        let eq = rel("x^2=2");
        match solve_univariate(&eq, &Symbol::var("x")) {
            SolveOutcome::Roots(roots) => {
                assert_eq!(roots.len(), 2);
                assert_eq!(print_canonical_expr(&roots[0]), "-\\sqrt{2}");
                assert_eq!(print_canonical_expr(&roots[1]), "\\sqrt{2}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn linear_root() {
        let eq = rel("3x=210");
        match solve_univariate(&eq, &Symbol::var("x")) {
            SolveOutcome::Roots(roots) => {
                assert_eq!(roots, vec![Expr::int(70)]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn degenerate_unsupported() {
        let eq = rel("x=x");
        assert!(matches!(
            solve_univariate(&eq, &Symbol::var("x")),
            SolveOutcome::Unsupported(_)
        ));
    }

    #[test]
    fn rational_roots() {
        let eq = rel("x^2 - 5x + 6 = 0");
        match solve_univariate(&eq, &Symbol::var("x")) {
            SolveOutcome::Roots(roots) => {
                assert_eq!(roots, vec![Expr::int(2), Expr::int(3)]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn surd_simplification() {
        // x^2 = 8 -> +-2 sqrt(2)
        let eq = rel("x^2=8");
        match solve_univariate(&eq, &Symbol::var("x")) {
            SolveOutcome::Roots(roots) => {
                assert_eq!(print_canonical_expr(&roots[1]), "2 \\cdot \\sqrt{2}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn symbolic_coefficients_satisfy_relation() {
        use crate::oracle::{check_general_validity};
        // x^2 + p x + q = 0 has symbolic roots; substituting back must
        // satisfy the relation numerically.
        let eq = rel("x^2 + px + q = 0");
        let SolveOutcome::Roots(roots) = solve_univariate(&eq, &Symbol::var("x")) else {
            panic!("expected roots");
        };
        assert_eq!(roots.len(), 2);
        for root in &roots {
            let mut map = crate::subst::SubstitutionMap::default();
            let _ = map;
            // substitute x by the root expression manually
            fn replace(e: &Expr, var: &Symbol, with: &Expr) -> Expr {
                match e {
                    Expr::Symbol(s) if s.key() == var.key() => with.clone(),
                    Expr::Add(xs) => Expr::Add(xs.iter().map(|x| replace(x, var, with)).collect()),
                    Expr::Mul(xs) => Expr::Mul(xs.iter().map(|x| replace(x, var, with)).collect()),
                    Expr::Pow(b, x) => {
                        Expr::pow(replace(b, var, with), replace(x, var, with))
                    }
                    Expr::Relation { op, lhs, rhs } => Expr::relation(
                        *op,
                        replace(lhs, var, with),
                        replace(rhs, var, with),
                    ),
                    Expr::Func(k, args) => Expr::Func(
                        k.clone(),
                        args.iter().map(|a| replace(a, var, with)).collect(),
                    ),
                    other => other.clone(),
                }
            }
            let substituted = replace(&eq, &Symbol::var("x"), root);
            let f = crate::expr::ParsedFormula::single(substituted, "");
            assert!(check_general_validity(&f, 32, 17), "root {root:?} fails");
        }
    }

    #[test]
    fn quadratic_formula_identity() {
        // 3x = 210 => x = 70 reproduces through canonical printing
        let eq = rel("3x = 210");
        let SolveOutcome::Roots(roots) = solve_univariate(&eq, &Symbol::var("x")) else {
            panic!();
        };
        assert_eq!(print_canonical_expr(&roots[0]), "70");
    }
}

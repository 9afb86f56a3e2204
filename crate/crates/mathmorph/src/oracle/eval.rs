//! Numeric evaluation of expression trees over complex assignments.
//!
//! Generic functions evaluate as randomly parameterized cubics (exact
//! under the five-point derivative stencils used for `Derivative` nodes).
//! Named operators without fixed semantics (E, Var, Cov, P) evaluate as
//! seeded fingerprint polynomials over their scalarized arguments, so
//! structurally identical formulas agree pointwise while edits perturb the
//! value. Set unions and intersections evaluate as max/min over the reals,
//! which models the lattice identities the catalog uses.

use num_complex::Complex64;

use crate::expr::{BigOpKind, ConstantKind, Expr, FuncKind, NamedSet, RelOp, SetOp, Symbol};

use super::Assignment;

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub atol: f64,
    pub rtol: f64,
    /// Imaginary part below this counts as real for ordering comparisons.
    pub imag_tol: f64,
    /// Term cap for infinite series.
    pub series_cap: usize,
    /// Iteration cap for finite sums/products.
    pub iter_cap: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { atol: 1e-9, rtol: 1e-9, imag_tol: 1e-8, series_cap: 200, iter_cap: 10_000 }
    }
}

/// Evaluation result. `Undefined` is a value, not an error.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Num(Complex64),
    Bool(bool),
    Matrix(Vec<Vec<Complex64>>),
    Undefined,
}

impl Value {
    pub fn is_defined(&self) -> bool {
        !matches!(self, Value::Undefined)
    }

    fn num(v: f64) -> Value {
        Value::Num(Complex64::new(v, 0.0))
    }
}

pub(crate) fn close(a: Complex64, b: Complex64, opts: &EvalOptions) -> bool {
    let diff = (a - b).norm();
    diff <= opts.atol + opts.rtol * a.norm().max(b.norm())
}

/// Tolerance-aware equality across value kinds.
pub fn values_close(a: &Value, b: &Value, opts: &EvalOptions) -> Option<bool> {
    match (a, b) {
        (Value::Num(x), Value::Num(y)) => Some(close(*x, *y, opts)),
        (Value::Bool(x), Value::Bool(y)) => Some(x == y),
        (Value::Matrix(x), Value::Matrix(y)) => {
            if x.len() != y.len() || x.iter().zip(y).any(|(r, s)| r.len() != s.len()) {
                return Some(false);
            }
            Some(
                x.iter()
                    .zip(y)
                    .all(|(r, s)| r.iter().zip(s).all(|(u, v)| close(*u, *v, opts))),
            )
        }
        (Value::Undefined, _) | (_, Value::Undefined) => None,
        _ => Some(false),
    }
}

/// Collapses a value to one scalar for fingerprinting; relations collapse
/// to the difference of their sides (computed by the caller).
fn scalarize(v: &Value) -> Option<Complex64> {
    match v {
        Value::Num(z) => Some(*z),
        Value::Bool(b) => Some(Complex64::new(if *b { 1.0 } else { 0.0 }, 0.0)),
        Value::Matrix(rows) => {
            let mut acc = Complex64::new(0.0, 0.0);
            for (i, row) in rows.iter().enumerate() {
                for (j, z) in row.iter().enumerate() {
                    let w = 1.0 / (1.0 + i as f64 + 2.0 * j as f64 + (i as f64) * (j as f64));
                    acc += z * w;
                }
            }
            Some(acc)
        }
        Value::Undefined => None,
    }
}

fn is_near_int(z: Complex64, tol: f64) -> Option<i64> {
    if z.im.abs() > tol {
        return None;
    }
    let r = z.re.round();
    if (z.re - r).abs() > tol || r.abs() > 1e15 {
        return None;
    }
    Some(r as i64)
}

fn complex_pow(base: Complex64, exp: Complex64, opts: &EvalOptions) -> Value {
    if let Some(n) = is_near_int(exp, 1e-12) {
        if n.unsigned_abs() <= 64 {
            if n == 0 {
                if base.norm() < 1e-300 {
                    return Value::Undefined; // 0^0
                }
                return Value::num(1.0);
            }
            if n < 0 && base.norm() < 1e-12 {
                return Value::Undefined;
            }
            let mut acc = Complex64::new(1.0, 0.0);
            for _ in 0..n.unsigned_abs() {
                acc *= base;
            }
            if n < 0 {
                acc = Complex64::new(1.0, 0.0) / acc;
            }
            return finite(acc);
        }
    }
    if base.norm() < 1e-12 {
        // 0^z defined only for Re(z) > 0
        if exp.re > opts.imag_tol {
            return Value::num(0.0);
        }
        return Value::Undefined;
    }
    finite((exp * base.ln()).exp())
}

fn finite(z: Complex64) -> Value {
    if z.re.is_finite() && z.im.is_finite() {
        Value::Num(z)
    } else {
        Value::Undefined
    }
}

fn matrix_mul(a: &[Vec<Complex64>], b: &[Vec<Complex64>]) -> Option<Vec<Vec<Complex64>>> {
    let n = a.len();
    let k = a[0].len();
    if b.len() != k {
        return None;
    }
    let m = b[0].len();
    let mut out = vec![vec![Complex64::new(0.0, 0.0); m]; n];
    for i in 0..n {
        for j in 0..m {
            for t in 0..k {
                out[i][j] += a[i][t] * b[t][j];
            }
        }
    }
    Some(out)
}

fn matrix_det(m: &[Vec<Complex64>]) -> Option<Complex64> {
    let n = m.len();
    if m.iter().any(|r| r.len() != n) {
        return None;
    }
    // Gaussian elimination with partial pivoting.
    let mut a: Vec<Vec<Complex64>> = m.to_vec();
    let mut det = Complex64::new(1.0, 0.0);
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| {
            a[i][col].norm().partial_cmp(&a[j][col].norm()).unwrap_or(std::cmp::Ordering::Equal)
        })?;
        if a[pivot][col].norm() < 1e-300 {
            return Some(Complex64::new(0.0, 0.0));
        }
        if pivot != col {
            a.swap(pivot, col);
            det = -det;
        }
        det *= a[col][col];
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            for k in col..n {
                let v = a[col][k];
                a[row][k] -= factor * v;
            }
        }
    }
    Some(det)
}

fn matrix_inverse(m: &[Vec<Complex64>]) -> Option<Vec<Vec<Complex64>>> {
    let n = m.len();
    if m.iter().any(|r| r.len() != n) {
        return None;
    }
    let mut a: Vec<Vec<Complex64>> = m.to_vec();
    let mut inv: Vec<Vec<Complex64>> = (0..n)
        .map(|i| (0..n).map(|j| Complex64::new(f64::from(u8::from(i == j)), 0.0)).collect())
        .collect();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| {
            a[i][col].norm().partial_cmp(&a[j][col].norm()).unwrap_or(std::cmp::Ordering::Equal)
        })?;
        if a[pivot][col].norm() < 1e-12 {
            return None;
        }
        a.swap(pivot, col);
        inv.swap(pivot, col);
        let p = a[col][col];
        for k in 0..n {
            a[col][k] /= p;
            inv[col][k] /= p;
        }
        for row in 0..n {
            if row != col {
                let factor = a[row][col];
                for k in 0..n {
                    let av = a[col][k];
                    let iv = inv[col][k];
                    a[row][k] -= factor * av;
                    inv[row][k] -= factor * iv;
                }
            }
        }
    }
    Some(inv)
}

fn factorial_value(z: Complex64) -> Value {
    match is_near_int(z, 1e-9) {
        Some(n) if (0..=170).contains(&n) => {
            let mut acc = 1.0f64;
            for k in 2..=n {
                acc *= k as f64;
            }
            Value::num(acc)
        }
        _ => Value::Undefined, // no gamma extension
    }
}

pub struct Evaluator<'a> {
    pub assignment: &'a Assignment,
    pub opts: &'a EvalOptions,
}

impl Evaluator<'_> {
    pub fn eval(&self, e: &Expr) -> Value {
        self.eval_with(e, &mut Vec::new())
    }

    /// `locals` shadow the assignment for bound variables (sum indices,
    /// integration variables, limit variables).
    fn eval_with(&self, e: &Expr, locals: &mut Vec<(Symbol, Complex64)>) -> Value {
        match e {
            Expr::Integer(v) => {
                let f = big_to_f64(v);
                if f.is_finite() {
                    Value::num(f)
                } else {
                    Value::Undefined
                }
            }
            Expr::Rational(n, d) => {
                let n = big_to_f64(n);
                let d = big_to_f64(d);
                if n.is_finite() && d.is_finite() && d != 0.0 {
                    Value::num(n / d)
                } else {
                    Value::Undefined
                }
            }
            Expr::Constant(k) => match k {
                ConstantKind::E => Value::num(std::f64::consts::E),
                ConstantKind::Pi => Value::num(std::f64::consts::PI),
                ConstantKind::ImaginaryUnit => Value::Num(Complex64::new(0.0, 1.0)),
                ConstantKind::Infinity => Value::Undefined,
            },
            Expr::Symbol(s) => {
                for (sym, v) in locals.iter().rev() {
                    if sym.key() == s.key() {
                        return Value::Num(*v);
                    }
                }
                match self.assignment.value_of(s) {
                    Some(v) => Value::Num(v),
                    None => Value::Undefined,
                }
            }
            Expr::Func(kind, args) => self.eval_func(kind, args, locals),
            Expr::GenericApp { symbol, args, deriv_order } => {
                let mut vals = Vec::with_capacity(args.len());
                for a in args {
                    match self.eval_with(a, locals) {
                        v @ Value::Num(_) | v @ Value::Bool(_) | v @ Value::Matrix(_) => {
                            match scalarize(&v) {
                                Some(z) => vals.push(z),
                                None => return Value::Undefined,
                            }
                        }
                        Value::Undefined => return Value::Undefined,
                    }
                }
                if vals.is_empty() {
                    return Value::Undefined; // bare f' without application
                }
                match self.assignment.generic_value(symbol, &vals, *deriv_order) {
                    Some(z) => finite(z),
                    None => Value::Undefined,
                }
            }
            Expr::Add(terms) => {
                let mut acc: Option<Value> = None;
                for t in terms {
                    let v = self.eval_with(t, locals);
                    acc = Some(match (acc, v) {
                        (None, v) => v,
                        (Some(Value::Num(x)), Value::Num(y)) => Value::Num(x + y),
                        (Some(Value::Matrix(x)), Value::Matrix(y)) => {
                            if x.len() != y.len()
                                || x.iter().zip(&y).any(|(r, s)| r.len() != s.len())
                            {
                                return Value::Undefined;
                            }
                            Value::Matrix(
                                x.iter()
                                    .zip(&y)
                                    .map(|(r, s)| r.iter().zip(s).map(|(u, v)| u + v).collect())
                                    .collect(),
                            )
                        }
                        _ => return Value::Undefined,
                    });
                }
                acc.unwrap_or(Value::Undefined)
            }
            Expr::Mul(factors) => {
                let mut acc: Option<Value> = None;
                for f in factors {
                    let v = self.eval_with(f, locals);
                    acc = Some(match (acc, v) {
                        (None, v) => v,
                        (Some(Value::Num(x)), Value::Num(y)) => finite(x * y),
                        (Some(Value::Num(x)), Value::Matrix(m)) | (Some(Value::Matrix(m)), Value::Num(x)) => {
                            Value::Matrix(m.iter().map(|r| r.iter().map(|v| v * x).collect()).collect())
                        }
                        (Some(Value::Matrix(a)), Value::Matrix(b)) => match matrix_mul(&a, &b) {
                            Some(m) => Value::Matrix(m),
                            None => return Value::Undefined,
                        },
                        _ => return Value::Undefined,
                    });
                    if matches!(acc, Some(Value::Undefined)) {
                        return Value::Undefined;
                    }
                }
                acc.unwrap_or(Value::Undefined)
            }
            Expr::Pow(base, exp) => {
                let b = self.eval_with(base, locals);
                let x = self.eval_with(exp, locals);
                match (b, x) {
                    (Value::Num(b), Value::Num(x)) => complex_pow(b, x, self.opts),
                    (Value::Matrix(m), Value::Num(x)) => match is_near_int(x, 1e-9) {
                        Some(-1) => match matrix_inverse(&m) {
                            Some(inv) => Value::Matrix(inv),
                            None => Value::Undefined,
                        },
                        Some(n) if (1..=8).contains(&n) => {
                            let mut acc = m.clone();
                            for _ in 1..n {
                                match matrix_mul(&acc, &m) {
                                    Some(p) => acc = p,
                                    None => return Value::Undefined,
                                }
                            }
                            Value::Matrix(acc)
                        }
                        _ => Value::Undefined,
                    },
                    _ => Value::Undefined,
                }
            }
            Expr::Relation { op, lhs, rhs } => {
                let l = self.eval_with(lhs, locals);
                let r = self.eval_with(rhs, locals);
                self.eval_relation(*op, &l, &r)
            }
            Expr::Implication { antecedent, consequent } => {
                match self.eval_with(antecedent, locals) {
                    Value::Bool(false) => Value::Bool(true),
                    Value::Bool(true) => self.eval_with(consequent, locals),
                    _ => Value::Undefined,
                }
            }
            Expr::Quantifier { body, .. } => match body {
                // Domains constrain sampling; a bare head is scaffolding.
                Some(b) => self.eval_with(b, locals),
                None => Value::Bool(true),
            },
            Expr::BigOp { kind, bound, lower, upper, body } => {
                self.eval_bigop(*kind, bound, lower.as_deref(), upper.as_deref(), body, locals)
            }
            Expr::Derivative { body, wrt, order } => {
                self.eval_derivative(body, wrt, *order, locals)
            }
            Expr::Matrix(rows) => {
                let mut out = Vec::with_capacity(rows.len());
                for row in rows {
                    let mut r = Vec::with_capacity(row.len());
                    for cell in row {
                        match self.eval_with(cell, locals) {
                            Value::Num(z) => r.push(z),
                            _ => return Value::Undefined,
                        }
                    }
                    out.push(r);
                }
                Value::Matrix(out)
            }
            Expr::SetExpr(op) => self.eval_set(op, locals),
            Expr::Opaque { .. } => Value::Undefined,
        }
    }

    fn eval_relation(&self, op: RelOp, l: &Value, r: &Value) -> Value {
        match op {
            RelOp::Eq => match values_close(l, r, self.opts) {
                Some(b) => Value::Bool(b),
                None => Value::Undefined,
            },
            RelOp::Ne => match values_close(l, r, self.opts) {
                Some(b) => Value::Bool(!b),
                None => Value::Undefined,
            },
            RelOp::Lt | RelOp::Le | RelOp::Gt | RelOp::Ge => {
                let (Value::Num(a), Value::Num(b)) = (l, r) else { return Value::Undefined };
                if a.im.abs() > self.opts.imag_tol || b.im.abs() > self.opts.imag_tol {
                    return Value::Undefined;
                }
                let (x, y) = (a.re, b.re);
                Value::Bool(match op {
                    RelOp::Lt => x < y,
                    RelOp::Le => x <= y + self.opts.atol,
                    RelOp::Gt => x > y,
                    RelOp::Ge => x + self.opts.atol >= y,
                    _ => unreachable!(),
                })
            }
        }
    }

    fn eval_func(&self, kind: &FuncKind, args: &[Expr], locals: &mut Vec<(Symbol, Complex64)>) -> Value {
        // Fingerprint operators scalarize relation arguments as side
        // differences so edits inside stay visible.
        if matches!(
            kind,
            FuncKind::Expectation | FuncKind::Variance | FuncKind::Covariance | FuncKind::Probability
        ) {
            let mut vals = Vec::with_capacity(args.len());
            for a in args {
                let v = match a {
                    Expr::Relation { lhs, rhs, .. } => {
                        let l = self.eval_with(lhs, locals);
                        let r = self.eval_with(rhs, locals);
                        match (scalarize(&l), scalarize(&r)) {
                            (Some(x), Some(y)) => Some(x - y),
                            _ => None,
                        }
                    }
                    other => scalarize(&self.eval_with(other, locals)),
                };
                match v {
                    Some(z) => vals.push(z),
                    None => return Value::Undefined,
                }
            }
            return match self.assignment.opaque_op_value(kind.name(), &vals) {
                Some(z) => finite(z),
                None => Value::Undefined,
            };
        }

        let mut vals = Vec::with_capacity(args.len());
        for a in args {
            match self.eval_with(a, locals) {
                Value::Num(z) => vals.push(Value::Num(z)),
                Value::Matrix(m) => vals.push(Value::Matrix(m)),
                _ => return Value::Undefined,
            }
        }
        let num = |i: usize| -> Option<Complex64> {
            match vals.get(i) {
                Some(Value::Num(z)) => Some(*z),
                _ => None,
            }
        };
        match kind {
            FuncKind::Sin => num(0).map(|z| finite(z.sin())).unwrap_or(Value::Undefined),
            FuncKind::Cos => num(0).map(|z| finite(z.cos())).unwrap_or(Value::Undefined),
            FuncKind::Tan => match num(0) {
                Some(z) if z.cos().norm() > 1e-9 => finite(z.tan()),
                _ => Value::Undefined,
            },
            FuncKind::ArcSin => num(0).map(|z| finite(z.asin())).unwrap_or(Value::Undefined),
            FuncKind::ArcCos => num(0).map(|z| finite(z.acos())).unwrap_or(Value::Undefined),
            FuncKind::ArcTan => num(0).map(|z| finite(z.atan())).unwrap_or(Value::Undefined),
            FuncKind::Ln => match num(0) {
                Some(z) if z.norm() > 1e-12 => finite(z.ln()),
                _ => Value::Undefined,
            },
            FuncKind::Log(base) => {
                let b = match self.eval_with(base, locals) {
                    Value::Num(b) => b,
                    _ => return Value::Undefined,
                };
                match num(0) {
                    Some(z) if z.norm() > 1e-12 && b.norm() > 1e-12 && (b.ln()).norm() > 1e-12 => {
                        finite(z.ln() / b.ln())
                    }
                    _ => Value::Undefined,
                }
            }
            FuncKind::Exp => num(0).map(|z| finite(z.exp())).unwrap_or(Value::Undefined),
            FuncKind::Sqrt => num(0).map(|z| finite(z.sqrt())).unwrap_or(Value::Undefined),
            FuncKind::Abs => match vals.first() {
                Some(Value::Num(z)) => Value::num(z.norm()),
                _ => Value::Undefined,
            },
            FuncKind::Factorial => num(0).map(factorial_value).unwrap_or(Value::Undefined),
            FuncKind::Binomial => {
                let (Some(n), Some(k)) = (num(0), num(1)) else { return Value::Undefined };
                match (is_near_int(n, 1e-9), is_near_int(k, 1e-9)) {
                    (Some(n), Some(k)) if k >= 0 && n >= k && n <= 170 => {
                        let mut acc = 1.0f64;
                        for j in 0..k {
                            acc = acc * (n - j) as f64 / (j + 1) as f64;
                        }
                        Value::num(acc)
                    }
                    _ => Value::Undefined,
                }
            }
            FuncKind::Det => match vals.first() {
                Some(Value::Matrix(m)) => match matrix_det(m) {
                    Some(d) => finite(d),
                    None => Value::Undefined,
                },
                _ => Value::Undefined,
            },
            _ => Value::Undefined,
        }
    }

    fn eval_bigop(
        &self,
        kind: BigOpKind,
        bound: &Symbol,
        lower: Option<&Expr>,
        upper: Option<&Expr>,
        body: &Expr,
        locals: &mut Vec<(Symbol, Complex64)>,
    ) -> Value {
        match kind {
            BigOpKind::Sum | BigOpKind::Product => {
                let is_sum = kind == BigOpKind::Sum;
                let lo = match lower.map(|l| self.eval_with(l, locals)) {
                    Some(Value::Num(z)) => match is_near_int(z, 1e-9) {
                        Some(n) => n,
                        None => return Value::Undefined,
                    },
                    _ => return Value::Undefined,
                };
                let upper_inf = matches!(upper, Some(Expr::Constant(ConstantKind::Infinity)));
                if upper_inf {
                    return self.eval_series(is_sum, bound, lo, body, locals);
                }
                let hi = match upper.map(|u| self.eval_with(u, locals)) {
                    Some(Value::Num(z)) => match is_near_int(z, 1e-9) {
                        Some(n) => n,
                        None => return Value::Undefined,
                    },
                    _ => return Value::Undefined,
                };
                if hi < lo || (hi - lo) as usize > self.opts.iter_cap {
                    return Value::Undefined;
                }
                let mut acc = Complex64::new(if is_sum { 0.0 } else { 1.0 }, 0.0);
                for k in lo..=hi {
                    locals.push((bound.clone(), Complex64::new(k as f64, 0.0)));
                    let v = self.eval_with(body, locals);
                    locals.pop();
                    match v {
                        Value::Num(z) => {
                            if is_sum {
                                acc += z;
                            } else {
                                acc *= z;
                            }
                        }
                        _ => return Value::Undefined,
                    }
                }
                finite(acc)
            }
            BigOpKind::Limit => {
                let target = match lower {
                    Some(t) => t,
                    None => return Value::Undefined,
                };
                if matches!(target, Expr::Constant(ConstantKind::Infinity)) {
                    return self.eval_limit_at_infinity(bound, body, locals);
                }
                let t = match self.eval_with(target, locals) {
                    Value::Num(z) => z,
                    _ => return Value::Undefined,
                };
                self.eval_limit_finite(bound, t, body, locals)
            }
            BigOpKind::Integral => self.eval_integral(bound, lower, upper, body, locals),
        }
    }

    /// Infinite series: partial sums with an early-stop tail check;
    /// undefined when not convergent within the term cap.
    fn eval_series(
        &self,
        is_sum: bool,
        bound: &Symbol,
        lo: i64,
        body: &Expr,
        locals: &mut Vec<(Symbol, Complex64)>,
    ) -> Value {
        let mut acc = Complex64::new(if is_sum { 0.0 } else { 1.0 }, 0.0);
        let mut quiet = 0;
        for k in 0..self.opts.series_cap {
            let n = lo + k as i64;
            locals.push((bound.clone(), Complex64::new(n as f64, 0.0)));
            let v = self.eval_with(body, locals);
            locals.pop();
            let term = match v {
                Value::Num(z) => z,
                _ => return Value::Undefined,
            };
            if is_sum {
                acc += term;
                if term.norm() < 1e-13 * (1.0 + acc.norm()) {
                    quiet += 1;
                } else {
                    quiet = 0;
                }
            } else {
                acc *= term;
                if (term - Complex64::new(1.0, 0.0)).norm() < 1e-13 {
                    quiet += 1;
                } else {
                    quiet = 0;
                }
            }
            if !acc.re.is_finite() || !acc.im.is_finite() {
                return Value::Undefined;
            }
            if quiet >= 3 {
                return Value::Num(acc);
            }
        }
        Value::Undefined
    }

    /// Finite limit target: geometric approach from above with a Cauchy
    /// stability check on the last iterates.
    fn eval_limit_finite(
        &self,
        bound: &Symbol,
        target: Complex64,
        body: &Expr,
        locals: &mut Vec<(Symbol, Complex64)>,
    ) -> Value {
        let mut prev: Option<Complex64> = None;
        let mut last_diff = f64::INFINITY;
        for k in 6..=26 {
            let h = 0.5f64.powi(k);
            locals.push((bound.clone(), target + Complex64::new(h, 0.0)));
            let v = self.eval_with(body, locals);
            locals.pop();
            let z = match v {
                Value::Num(z) => z,
                _ => return Value::Undefined,
            };
            if let Some(p) = prev {
                last_diff = (z - p).norm();
                if last_diff < 1e-7 * (1.0 + z.norm()) {
                    return Value::Num(z);
                }
            }
            prev = Some(z);
        }
        let _ = last_diff;
        Value::Undefined
    }

    fn eval_limit_at_infinity(
        &self,
        bound: &Symbol,
        body: &Expr,
        locals: &mut Vec<(Symbol, Complex64)>,
    ) -> Value {
        let mut prev: Option<Complex64> = None;
        for k in 20..=46 {
            let n = 2.0f64.powi(k);
            locals.push((bound.clone(), Complex64::new(n, 0.0)));
            let v = self.eval_with(body, locals);
            locals.pop();
            let z = match v {
                Value::Num(z) => z,
                _ => return Value::Undefined,
            };
            if let Some(p) = prev {
                if (z - p).norm() < 1e-9 * (1.0 + z.norm()) {
                    return Value::Num(z);
                }
            }
            prev = Some(z);
        }
        Value::Undefined
    }

    /// Definite integrals: 64-node Gauss-Legendre with a 32-node
    /// cross-check; infinite bounds truncate to +-12.
    fn eval_integral(
        &self,
        bound: &Symbol,
        lower: Option<&Expr>,
        upper: Option<&Expr>,
        body: &Expr,
        locals: &mut Vec<(Symbol, Complex64)>,
    ) -> Value {
        let resolve = |e: Option<&Expr>, this: &Self, locals: &mut Vec<(Symbol, Complex64)>| -> Option<f64> {
            match e {
                Some(Expr::Constant(ConstantKind::Infinity)) => Some(12.0),
                Some(Expr::Mul(fs))
                    if fs.len() == 2
                        && fs[0].is_integer_value(-1)
                        && matches!(fs[1], Expr::Constant(ConstantKind::Infinity)) =>
                {
                    Some(-12.0)
                }
                Some(x) => match this.eval_with(x, locals) {
                    Value::Num(z) if z.im.abs() < this.opts.imag_tol => Some(z.re),
                    _ => None,
                },
                None => None,
            }
        };
        let (Some(a), Some(b)) = (resolve(lower, self, locals), resolve(upper, self, locals)) else {
            return Value::Undefined; // indefinite integrals are not evaluated
        };
        let coarse = self.gauss_legendre(bound, a, b, body, locals, 32);
        let fine = self.gauss_legendre(bound, a, b, body, locals, 64);
        match (coarse, fine) {
            (Some(c), Some(f)) => {
                if (c - f).norm() <= 1e-7 * (1.0 + f.norm()) {
                    Value::Num(f)
                } else {
                    Value::Undefined
                }
            }
            _ => Value::Undefined,
        }
    }

    fn gauss_legendre(
        &self,
        bound: &Symbol,
        a: f64,
        b: f64,
        body: &Expr,
        locals: &mut Vec<(Symbol, Complex64)>,
        n: usize,
    ) -> Option<Complex64> {
        let (nodes, weights) = legendre_nodes(n);
        let mid = 0.5 * (a + b);
        let half = 0.5 * (b - a);
        let mut acc = Complex64::new(0.0, 0.0);
        for (x, w) in nodes.iter().zip(&weights) {
            locals.push((bound.clone(), Complex64::new(mid + half * x, 0.0)));
            let v = self.eval_with(body, locals);
            locals.pop();
            match v {
                Value::Num(z) => acc += z * *w,
                _ => return None,
            }
        }
        let out = acc * half;
        if out.re.is_finite() && out.im.is_finite() {
            Some(out)
        } else {
            None
        }
    }

    /// Numeric derivative via five-point stencils (exact for cubics), with
    /// one Richardson refinement step.
    fn eval_derivative(
        &self,
        body: &Expr,
        wrt: &Symbol,
        order: u32,
        locals: &mut Vec<(Symbol, Complex64)>,
    ) -> Value {
        if order == 0 {
            return self.eval_with(body, locals);
        }
        if order > 3 {
            return Value::Undefined;
        }
        let x0 = {
            let mut v = None;
            for (sym, val) in locals.iter().rev() {
                if sym.key() == wrt.key() {
                    v = Some(*val);
                    break;
                }
            }
            match v.or_else(|| self.assignment.value_of(wrt)) {
                Some(v) => v,
                None => return Value::Undefined,
            }
        };
        let stencil = |h: f64, locals: &mut Vec<(Symbol, Complex64)>| -> Option<Complex64> {
            let sample = |dx: f64, locals: &mut Vec<(Symbol, Complex64)>| -> Option<Complex64> {
                locals.push((wrt.clone(), x0 + Complex64::new(dx, 0.0)));
                let v = self.eval_with(body, locals);
                locals.pop();
                match v {
                    Value::Num(z) => Some(z),
                    _ => None,
                }
            };
            let fm2 = sample(-2.0 * h, locals)?;
            let fm1 = sample(-h, locals)?;
            let f0 = sample(0.0, locals)?;
            let fp1 = sample(h, locals)?;
            let fp2 = sample(2.0 * h, locals)?;
            let d = match order {
                1 => (fm2 - fp2 + (fp1 - fm1) * 8.0) / (12.0 * h),
                2 => (-fm2 - fp2 + (fm1 + fp1) * 16.0 - f0 * 30.0) / (12.0 * h * h),
                _ => (fp2 - fm2 + (fm1 - fp1) * 2.0) / (2.0 * h * h * h),
            };
            Some(d)
        };
        let h = 0.4;
        let (Some(d1), Some(d2)) = (stencil(h, locals), stencil(h / 2.0, locals)) else {
            return Value::Undefined;
        };
        let refined = match order {
            1 | 2 => (d2 * 16.0 - d1) / 15.0,
            _ => (d2 * 4.0 - d1) / 3.0,
        };
        if (d2 - d1).norm() > 1e-4 * (1.0 + refined.norm()) {
            return Value::Undefined;
        }
        finite(refined)
    }

    fn eval_set(&self, op: &SetOp, locals: &mut Vec<(Symbol, Complex64)>) -> Value {
        match op {
            // Union/intersection as max/min over the reals: the lattice
            // models the distributivity identities.
            SetOp::Union(xs) | SetOp::Intersection(xs) => {
                let is_union = matches!(op, SetOp::Union(_));
                let mut acc: Option<f64> = None;
                for x in xs {
                    match self.eval_with(x, locals) {
                        Value::Num(z) if z.im.abs() <= self.opts.imag_tol => {
                            acc = Some(match acc {
                                None => z.re,
                                Some(a) => {
                                    if is_union {
                                        a.max(z.re)
                                    } else {
                                        a.min(z.re)
                                    }
                                }
                            });
                        }
                        _ => return Value::Undefined,
                    }
                }
                acc.map(Value::num).unwrap_or(Value::Undefined)
            }
            SetOp::Membership { element, set } => {
                let v = match self.eval_with(element, locals) {
                    Value::Num(z) => z,
                    _ => return Value::Undefined,
                };
                match set.as_ref() {
                    Expr::SetExpr(SetOp::Named(n)) => {
                        let b = match n {
                            NamedSet::C => true,
                            NamedSet::R => v.im.abs() <= self.opts.imag_tol,
                            NamedSet::Z => is_near_int(v, 1e-9).is_some(),
                            NamedSet::N => is_near_int(v, 1e-9).map(|k| k >= 0).unwrap_or(false),
                        };
                        Value::Bool(b)
                    }
                    _ => Value::Undefined,
                }
            }
            SetOp::Named(_) | SetOp::Empty => Value::Undefined,
        }
    }
}

fn big_to_f64(v: &num_bigint::BigInt) -> f64 {
    use num_traits::ToPrimitive;
    v.to_f64().unwrap_or(f64::NAN)
}

/// Gauss-Legendre nodes and weights on [-1, 1], computed by Newton
/// iteration on the Legendre polynomial and cached per order.
fn legendre_nodes(n: usize) -> (Vec<f64>, Vec<f64>) {
    use std::collections::HashMap;
    use std::sync::Mutex;
    use std::sync::OnceLock;
    static CACHE: OnceLock<Mutex<HashMap<usize, (Vec<f64>, Vec<f64>)>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(hit) = cache.lock().unwrap().get(&n) {
        return hit.clone();
    }
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        // Chebyshev initial guess.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_eval(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_eval(n, x);
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    cache.lock().unwrap().insert(n, (nodes.clone(), weights.clone()));
    (nodes, weights)
}

fn legendre_eval(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

//! Operator-tree data model shared by the parser, printers, substitution
//! engine, falsifier and the numeric oracle.
//!
//! Trees are immutable after construction; every mutation produces a new
//! tree. A debug serialization in functional notation (`EQU(...)`,
//! `VAR(x)`, `FUNC(f, ...)`) is available through [`Expr::func_notation`].

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::fmt;

use num_bigint::BigInt;
use serde::{Deserialize, Serialize};

/// Maximum tree depth accepted by [`Expr::validate`] by default.
pub const DEFAULT_DEPTH_CAP: usize = 64;

/// Classification of a symbol with respect to substitution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SymbolKind {
    Variable,
    GenericFunction,
    /// Context constants (e, i, pi); never substituted.
    Constant,
    /// Ambiguous symbols blocked from substitution but printed verbatim.
    Reserved,
}

/// A named symbol, optionally indexed (`a_1`), with its substitution kind.
///
/// Greek letters keep their LaTeX command as the name (`\alpha`), so the
/// name is always exactly what appears in the source.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Symbol {
    pub name: String,
    pub index: Option<u32>,
    pub kind: SymbolKind,
}

impl Symbol {
    pub fn var(name: impl Into<String>) -> Self {
        Symbol { name: name.into(), index: None, kind: SymbolKind::Variable }
    }

    pub fn func(name: impl Into<String>) -> Self {
        Symbol { name: name.into(), index: None, kind: SymbolKind::GenericFunction }
    }

    pub fn indexed(name: impl Into<String>, index: u32, kind: SymbolKind) -> Self {
        Symbol { name: name.into(), index: Some(index), kind }
    }

    pub fn reserved(name: impl Into<String>) -> Self {
        Symbol { name: name.into(), index: None, kind: SymbolKind::Reserved }
    }

    /// Identity used for matching occurrences: name plus index, kind ignored.
    pub fn key(&self) -> (String, Option<u32>) {
        (self.name.clone(), self.index)
    }

    pub fn is_substitutable(&self) -> bool {
        matches!(self.kind, SymbolKind::Variable | SymbolKind::GenericFunction)
    }
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.index {
            Some(i) => write!(f, "{}_{{{}}}", self.name, i),
            None => write!(f, "{}", self.name),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ConstantKind {
    E,
    Pi,
    ImaginaryUnit,
    Infinity,
}

/// Named functions with fixed mathematical meaning.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FuncKind {
    Sin,
    Cos,
    Tan,
    ArcSin,
    ArcCos,
    ArcTan,
    /// Logarithm with explicit base.
    Log(Box<Expr>),
    Ln,
    Exp,
    Sqrt,
    Abs,
    Factorial,
    Binomial,
    Det,
    Expectation,
    Variance,
    Covariance,
    Probability,
}

impl FuncKind {
    /// Stable identifier, used by the falsifier's swap pool and reports.
    pub fn name(&self) -> &'static str {
        match self {
            FuncKind::Sin => "sin",
            FuncKind::Cos => "cos",
            FuncKind::Tan => "tan",
            FuncKind::ArcSin => "arcsin",
            FuncKind::ArcCos => "arccos",
            FuncKind::ArcTan => "arctan",
            FuncKind::Log(_) => "log",
            FuncKind::Ln => "ln",
            FuncKind::Exp => "exp",
            FuncKind::Sqrt => "sqrt",
            FuncKind::Abs => "abs",
            FuncKind::Factorial => "factorial",
            FuncKind::Binomial => "binomial",
            FuncKind::Det => "det",
            FuncKind::Expectation => "E",
            FuncKind::Variance => "Var",
            FuncKind::Covariance => "Cov",
            FuncKind::Probability => "P",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RelOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl RelOp {
    pub fn latex(self) -> &'static str {
        match self {
            RelOp::Eq => "=",
            RelOp::Ne => "\\neq",
            RelOp::Lt => "<",
            RelOp::Le => "\\le",
            RelOp::Gt => ">",
            RelOp::Ge => "\\ge",
        }
    }

    pub fn is_inequality(self) -> bool {
        !matches!(self, RelOp::Eq)
    }

    /// Mirror of the relation when operands are swapped: `a < b` <=> `b > a`.
    pub fn mirrored(self) -> RelOp {
        match self {
            RelOp::Lt => RelOp::Gt,
            RelOp::Le => RelOp::Ge,
            RelOp::Gt => RelOp::Lt,
            RelOp::Ge => RelOp::Le,
            other => other,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BigOpKind {
    Sum,
    Product,
    Integral,
    Limit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NamedSet {
    R,
    N,
    C,
    Z,
}

impl NamedSet {
    pub fn latex(self) -> &'static str {
        match self {
            NamedSet::R => "\\mathbb{R}",
            NamedSet::N => "\\mathbb{N}",
            NamedSet::C => "\\mathbb{C}",
            NamedSet::Z => "\\mathbb{Z}",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SetOp {
    Union(Vec<Expr>),
    Intersection(Vec<Expr>),
    Membership { element: Box<Expr>, set: Box<Expr> },
    Named(NamedSet),
    Empty,
}

/// One substitutable occurrence inside an opaque segment.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct OpaqueEntry {
    pub kind: SymbolKind,
    /// Disjoint byte spans into the raw string; each span's substring
    /// equals the symbol name exactly.
    pub spans: Vec<(usize, usize)>,
}

/// Operator-tree node.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Expr {
    Integer(BigInt),
    /// numerator / denominator, denominator > 0. Never auto-reduced.
    Rational(BigInt, BigInt),
    Constant(ConstantKind),
    Symbol(Symbol),
    Func(FuncKind, Vec<Expr>),
    GenericApp { symbol: Symbol, args: Vec<Expr>, deriv_order: u32 },
    /// n-ary addition, >= 2 terms, flattened. Subtraction is a term with a
    /// leading Integer(-1) factor.
    Add(Vec<Expr>),
    /// n-ary multiplication, >= 2 factors, flattened. Division is a
    /// Pow(denominator, -1) factor.
    Mul(Vec<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Relation { op: RelOp, lhs: Box<Expr>, rhs: Box<Expr> },
    Implication { antecedent: Box<Expr>, consequent: Box<Expr> },
    /// Universal quantifier. `body` is absent for head-only segments
    /// produced by splitting at `:`.
    Quantifier { bound: Vec<Symbol>, domain: Option<Box<Expr>>, body: Option<Box<Expr>> },
    BigOp {
        kind: BigOpKind,
        bound: Symbol,
        lower: Option<Box<Expr>>,
        upper: Option<Box<Expr>>,
        body: Box<Expr>,
    },
    Derivative { body: Box<Expr>, wrt: Symbol, order: u32 },
    Matrix(Vec<Vec<Expr>>),
    SetExpr(SetOp),
    /// Unparsed LaTeX span with a map of substitution-safe occurrences.
    Opaque { raw: String, occurrences: BTreeMap<String, OpaqueEntry> },
}

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum ExprError {
    #[error("expression depth exceeds cap of {0}")]
    DepthExceeded(usize),
    #[error("{0} node requires at least two operands")]
    TooFewOperands(&'static str),
    #[error("symbol name must be non-empty")]
    EmptySymbolName,
    #[error("rational denominator must be positive")]
    NonPositiveDenominator,
    #[error("opaque occurrence span invalid: {0}")]
    BadOpaqueSpan(String),
}

impl Expr {
    pub fn int(v: i64) -> Expr {
        Expr::Integer(BigInt::from(v))
    }

    pub fn sym(name: &str) -> Expr {
        Expr::Symbol(Symbol::var(name))
    }

    /// n-ary addition with flattening; single term collapses to itself.
    pub fn add(terms: Vec<Expr>) -> Expr {
        let mut flat = Vec::with_capacity(terms.len());
        for t in terms {
            match t {
                Expr::Add(inner) => flat.extend(inner),
                other => flat.push(other),
            }
        }
        match flat.len() {
            0 => Expr::int(0),
            1 => flat.pop().unwrap(),
            _ => Expr::Add(flat),
        }
    }

    /// n-ary multiplication with flattening; single factor collapses.
    pub fn mul(factors: Vec<Expr>) -> Expr {
        let mut flat = Vec::with_capacity(factors.len());
        for t in factors {
            match t {
                Expr::Mul(inner) => flat.extend(inner),
                other => flat.push(other),
            }
        }
        match flat.len() {
            0 => Expr::int(1),
            1 => flat.pop().unwrap(),
            _ => Expr::Mul(flat),
        }
    }

    pub fn pow(base: Expr, exponent: Expr) -> Expr {
        Expr::Pow(Box::new(base), Box::new(exponent))
    }

    /// Negation as a Mul with a leading -1 factor; literals fold directly.
    pub fn neg(e: Expr) -> Expr {
        match e {
            Expr::Integer(v) => Expr::Integer(-v),
            Expr::Rational(n, d) => Expr::Rational(-n, d),
            Expr::Mul(mut fs) => {
                if let Expr::Integer(v) = &fs[0] {
                    let nv = -v.clone();
                    if nv == BigInt::from(1) && fs.len() > 1 {
                        fs.remove(0);
                        return Expr::mul(fs);
                    }
                    fs[0] = Expr::Integer(nv);
                    return Expr::Mul(fs);
                }
                fs.insert(0, Expr::int(-1));
                Expr::Mul(fs)
            }
            other => Expr::mul(vec![Expr::int(-1), other]),
        }
    }

    /// Division as numerator times Pow(denominator, -1).
    pub fn div(num: Expr, den: Expr) -> Expr {
        Expr::mul(vec![num, Expr::pow(den, Expr::int(-1))])
    }

    pub fn relation(op: RelOp, lhs: Expr, rhs: Expr) -> Expr {
        Expr::Relation { op, lhs: Box::new(lhs), rhs: Box::new(rhs) }
    }

    /// True iff this term is a product carrying a leading negative literal.
    pub fn is_negated_term(&self) -> bool {
        match self {
            Expr::Integer(v) => v.sign() == num_bigint::Sign::Minus,
            Expr::Rational(n, _) => n.sign() == num_bigint::Sign::Minus,
            Expr::Mul(fs) => fs[0].is_negated_term(),
            _ => false,
        }
    }

    /// Strips one level of leading negation (see [`Expr::is_negated_term`]).
    pub fn strip_negation(&self) -> Expr {
        match self {
            Expr::Integer(v) => Expr::Integer(-v.clone()),
            Expr::Rational(n, d) => Expr::Rational(-n.clone(), d.clone()),
            Expr::Mul(fs) => {
                let mut fs = fs.clone();
                match &fs[0] {
                    Expr::Integer(v) if (-v.clone()) == BigInt::from(1) => {
                        fs.remove(0);
                        Expr::mul(fs)
                    }
                    _ => {
                        fs[0] = fs[0].strip_negation();
                        Expr::mul(fs)
                    }
                }
            }
            other => other.clone(),
        }
    }

    pub fn is_integer_value(&self, v: i64) -> bool {
        matches!(self, Expr::Integer(x) if *x == BigInt::from(v))
    }

    pub fn depth(&self) -> usize {
        1 + self.children().map(|c| c.depth()).max().unwrap_or(0)
    }

    /// Iterator over direct child expressions.
    pub fn children(&self) -> impl Iterator<Item = &Expr> {
        let v: Vec<&Expr> = match self {
            Expr::Integer(_)
            | Expr::Rational(..)
            | Expr::Constant(_)
            | Expr::Symbol(_)
            | Expr::Opaque { .. } => vec![],
            Expr::Func(kind, args) => {
                let mut v: Vec<&Expr> = vec![];
                if let FuncKind::Log(base) = kind {
                    v.push(base);
                }
                v.extend(args.iter());
                v
            }
            Expr::GenericApp { args, .. } => args.iter().collect(),
            Expr::Add(xs) | Expr::Mul(xs) => xs.iter().collect(),
            Expr::Pow(b, e) => vec![b, e],
            Expr::Relation { lhs, rhs, .. } => vec![lhs, rhs],
            Expr::Implication { antecedent, consequent } => vec![antecedent, consequent],
            Expr::Quantifier { domain, body, .. } => {
                let mut v: Vec<&Expr> = vec![];
                if let Some(d) = domain {
                    v.push(d);
                }
                if let Some(b) = body {
                    v.push(b);
                }
                v
            }
            Expr::BigOp { lower, upper, body, .. } => {
                let mut v: Vec<&Expr> = vec![];
                if let Some(l) = lower {
                    v.push(l);
                }
                if let Some(u) = upper {
                    v.push(u);
                }
                v.push(body);
                v
            }
            Expr::Derivative { body, .. } => vec![body],
            Expr::Matrix(rows) => rows.iter().flatten().collect(),
            Expr::SetExpr(op) => match op {
                SetOp::Union(xs) | SetOp::Intersection(xs) => xs.iter().collect(),
                SetOp::Membership { element, set } => vec![element, set],
                SetOp::Named(_) | SetOp::Empty => vec![],
            },
        };
        v.into_iter()
    }

    /// Rebuilds the node with `f` applied to each direct child, in the
    /// same order [`Expr::children`] visits them.
    pub fn map_children(&self, f: &mut impl FnMut(&Expr) -> Expr) -> Expr {
        match self {
            Expr::Integer(_)
            | Expr::Rational(..)
            | Expr::Constant(_)
            | Expr::Symbol(_)
            | Expr::Opaque { .. } => self.clone(),
            Expr::Func(kind, args) => {
                let kind = match kind {
                    FuncKind::Log(b) => FuncKind::Log(Box::new(f(b))),
                    other => other.clone(),
                };
                Expr::Func(kind, args.iter().map(|a| f(a)).collect())
            }
            Expr::GenericApp { symbol, args, deriv_order } => Expr::GenericApp {
                symbol: symbol.clone(),
                args: args.iter().map(|a| f(a)).collect(),
                deriv_order: *deriv_order,
            },
            Expr::Add(xs) => Expr::Add(xs.iter().map(|x| f(x)).collect()),
            Expr::Mul(xs) => Expr::Mul(xs.iter().map(|x| f(x)).collect()),
            Expr::Pow(b, e) => Expr::Pow(Box::new(f(b)), Box::new(f(e))),
            Expr::Relation { op, lhs, rhs } => {
                Expr::Relation { op: *op, lhs: Box::new(f(lhs)), rhs: Box::new(f(rhs)) }
            }
            Expr::Implication { antecedent, consequent } => Expr::Implication {
                antecedent: Box::new(f(antecedent)),
                consequent: Box::new(f(consequent)),
            },
            Expr::Quantifier { bound, domain, body } => Expr::Quantifier {
                bound: bound.clone(),
                domain: domain.as_ref().map(|d| Box::new(f(d))),
                body: body.as_ref().map(|b| Box::new(f(b))),
            },
            Expr::BigOp { kind, bound, lower, upper, body } => Expr::BigOp {
                kind: *kind,
                bound: bound.clone(),
                lower: lower.as_ref().map(|l| Box::new(f(l))),
                upper: upper.as_ref().map(|u| Box::new(f(u))),
                body: Box::new(f(body)),
            },
            Expr::Derivative { body, wrt, order } => Expr::Derivative {
                body: Box::new(f(body)),
                wrt: wrt.clone(),
                order: *order,
            },
            Expr::Matrix(rows) => {
                Expr::Matrix(rows.iter().map(|r| r.iter().map(|x| f(x)).collect()).collect())
            }
            Expr::SetExpr(op) => Expr::SetExpr(match op {
                SetOp::Union(xs) => SetOp::Union(xs.iter().map(|x| f(x)).collect()),
                SetOp::Intersection(xs) => SetOp::Intersection(xs.iter().map(|x| f(x)).collect()),
                SetOp::Membership { element, set } => SetOp::Membership {
                    element: Box::new(f(element)),
                    set: Box::new(f(set)),
                },
                SetOp::Named(n) => SetOp::Named(*n),
                SetOp::Empty => SetOp::Empty,
            }),
        }
    }

    /// Pre-order node count (self included).
    pub fn node_count(&self) -> usize {
        1 + self.children().map(|c| c.node_count()).sum::<usize>()
    }

    /// Checks all structural invariants plus the depth cap.
    pub fn validate(&self, depth_cap: usize) -> Result<(), ExprError> {
        self.validate_at(depth_cap, 1)
    }

    fn validate_at(&self, cap: usize, depth: usize) -> Result<(), ExprError> {
        if depth > cap {
            return Err(ExprError::DepthExceeded(cap));
        }
        match self {
            Expr::Add(xs) => {
                if xs.len() < 2 {
                    return Err(ExprError::TooFewOperands("Add"));
                }
            }
            Expr::Mul(xs) => {
                if xs.len() < 2 {
                    return Err(ExprError::TooFewOperands("Mul"));
                }
            }
            Expr::Rational(_, d) => {
                if d.sign() != num_bigint::Sign::Plus {
                    return Err(ExprError::NonPositiveDenominator);
                }
            }
            Expr::Symbol(s) => {
                if s.name.is_empty() {
                    return Err(ExprError::EmptySymbolName);
                }
            }
            Expr::Opaque { raw, occurrences } => {
                let mut all: Vec<(usize, usize)> = vec![];
                for (name, entry) in occurrences {
                    for &(a, b) in &entry.spans {
                        if b <= a || b > raw.len() || !raw.is_char_boundary(a) || !raw.is_char_boundary(b) {
                            return Err(ExprError::BadOpaqueSpan(format!("{name}: {a}..{b}")));
                        }
                        if &raw[a..b] != name {
                            return Err(ExprError::BadOpaqueSpan(format!(
                                "span {a}..{b} is {:?}, expected {name:?}",
                                &raw[a..b]
                            )));
                        }
                        all.push((a, b));
                    }
                }
                all.sort_unstable();
                for w in all.windows(2) {
                    if w[1].0 < w[0].1 {
                        return Err(ExprError::BadOpaqueSpan("overlapping spans".into()));
                    }
                }
            }
            _ => {}
        }
        for c in self.children() {
            c.validate_at(cap, depth + 1)?;
        }
        Ok(())
    }

    /// Collects all substitutable symbols (Variable and GenericFunction),
    /// including opaque occurrences and bound symbols.
    pub fn collect_symbols(&self, out: &mut BTreeSet<Symbol>) {
        match self {
            Expr::Symbol(s) => {
                if s.is_substitutable() {
                    out.insert(s.clone());
                }
            }
            Expr::GenericApp { symbol, .. } => {
                if symbol.is_substitutable() {
                    out.insert(symbol.clone());
                }
            }
            Expr::Quantifier { bound, .. } => {
                for s in bound {
                    if s.is_substitutable() {
                        out.insert(s.clone());
                    }
                }
            }
            Expr::BigOp { bound, .. } => {
                if bound.is_substitutable() {
                    out.insert(bound.clone());
                }
            }
            Expr::Derivative { wrt, .. } => {
                if wrt.is_substitutable() {
                    out.insert(wrt.clone());
                }
            }
            Expr::Opaque { occurrences, .. } => {
                for (name, entry) in occurrences {
                    if matches!(entry.kind, SymbolKind::Variable | SymbolKind::GenericFunction) {
                        out.insert(Symbol { name: name.clone(), index: None, kind: entry.kind });
                    }
                }
            }
            _ => {}
        }
        for c in self.children() {
            c.collect_symbols(out);
        }
    }

    /// Debug serialization in functional notation, e.g.
    /// `EQU(DERIV(FUNC(f, VAR(x)), VAR(x)), ...)`.
    pub fn func_notation(&self) -> String {
        let mut s = String::new();
        self.write_func_notation(&mut s);
        s
    }

    fn write_func_notation(&self, out: &mut String) {
        use std::fmt::Write;
        match self {
            Expr::Integer(v) => {
                let _ = write!(out, "INT({v})");
            }
            Expr::Rational(n, d) => {
                let _ = write!(out, "RAT({n}/{d})");
            }
            Expr::Constant(k) => {
                let name = match k {
                    ConstantKind::E => "e",
                    ConstantKind::Pi => "pi",
                    ConstantKind::ImaginaryUnit => "i",
                    ConstantKind::Infinity => "inf",
                };
                let _ = write!(out, "CONST({name})");
            }
            Expr::Symbol(s) => {
                let _ = write!(out, "VAR({s})");
            }
            Expr::Func(kind, args) => {
                let _ = write!(out, "{}(", kind.name().to_uppercase());
                if let FuncKind::Log(base) = kind {
                    base.write_func_notation(out);
                    out.push_str(", ");
                }
                join_notation(out, args);
                out.push(')');
            }
            Expr::GenericApp { symbol, args, deriv_order } => {
                let _ = write!(out, "FUNC({symbol}");
                if *deriv_order > 0 {
                    let _ = write!(out, "^({deriv_order})");
                }
                for a in args {
                    out.push_str(", ");
                    a.write_func_notation(out);
                }
                out.push(')');
            }
            Expr::Add(terms) => {
                // Render trailing negated terms through SUB for readability.
                if terms.len() == 2 && terms[1].is_negated_term() && !terms[0].is_negated_term() {
                    out.push_str("SUB(");
                    terms[0].write_func_notation(out);
                    out.push_str(", ");
                    terms[1].strip_negation().write_func_notation(out);
                    out.push(')');
                    return;
                }
                out.push_str("ADD(");
                join_notation(out, terms);
                out.push(')');
            }
            Expr::Mul(factors) => {
                // A single reciprocal factor renders as DIV.
                let recips: Vec<usize> = factors
                    .iter()
                    .enumerate()
                    .filter(|(_, f)| matches!(f, Expr::Pow(_, e) if e.is_integer_value(-1)))
                    .map(|(i, _)| i)
                    .collect();
                if recips.len() == 1 && factors.len() >= 2 {
                    let ri = recips[0];
                    let num: Vec<Expr> =
                        factors.iter().enumerate().filter(|(i, _)| *i != ri).map(|(_, f)| f.clone()).collect();
                    out.push_str("DIV(");
                    Expr::mul(num).write_func_notation(out);
                    out.push_str(", ");
                    if let Expr::Pow(base, _) = &factors[ri] {
                        base.write_func_notation(out);
                    }
                    out.push(')');
                    return;
                }
                out.push_str("MUL(");
                join_notation(out, factors);
                out.push(')');
            }
            Expr::Pow(b, e) => {
                out.push_str("POW(");
                b.write_func_notation(out);
                out.push_str(", ");
                e.write_func_notation(out);
                out.push(')');
            }
            Expr::Relation { op, lhs, rhs } => {
                let name = match op {
                    RelOp::Eq => "EQU",
                    RelOp::Ne => "NEQ",
                    RelOp::Lt => "LT",
                    RelOp::Le => "LE",
                    RelOp::Gt => "GT",
                    RelOp::Ge => "GE",
                };
                let _ = write!(out, "{name}(");
                lhs.write_func_notation(out);
                out.push_str(", ");
                rhs.write_func_notation(out);
                out.push(')');
            }
            Expr::Implication { antecedent, consequent } => {
                out.push_str("IMPL(");
                antecedent.write_func_notation(out);
                out.push_str(", ");
                consequent.write_func_notation(out);
                out.push(')');
            }
            Expr::Quantifier { bound, domain, body } => {
                out.push_str("FORALL(");
                let names: Vec<String> = bound.iter().map(|s| s.to_string()).collect();
                out.push_str(&names.join(", "));
                if let Some(d) = domain {
                    out.push_str(", IN ");
                    d.write_func_notation(out);
                }
                if let Some(b) = body {
                    out.push_str(", ");
                    b.write_func_notation(out);
                }
                out.push(')');
            }
            Expr::BigOp { kind, bound, lower, upper, body } => {
                let name = match kind {
                    BigOpKind::Sum => "SUM",
                    BigOpKind::Product => "PROD",
                    BigOpKind::Integral => "INTEG",
                    BigOpKind::Limit => "LIM",
                };
                let _ = write!(out, "{name}(");
                body.write_func_notation(out);
                let _ = write!(out, ", VAR({bound})");
                if let Some(l) = lower {
                    out.push_str(", ");
                    l.write_func_notation(out);
                }
                if let Some(u) = upper {
                    out.push_str(", ");
                    u.write_func_notation(out);
                }
                out.push(')');
            }
            Expr::Derivative { body, wrt, order } => {
                out.push_str("DERIV(");
                body.write_func_notation(out);
                let _ = write!(out, ", VAR({wrt})");
                if *order > 1 {
                    let _ = write!(out, ", {order}");
                }
                out.push(')');
            }
            Expr::Matrix(rows) => {
                out.push_str("MATRIX(");
                for (i, row) in rows.iter().enumerate() {
                    if i > 0 {
                        out.push_str("; ");
                    }
                    join_notation(out, row);
                }
                out.push(')');
            }
            Expr::SetExpr(op) => match op {
                SetOp::Union(xs) => {
                    out.push_str("UNION(");
                    join_notation(out, xs);
                    out.push(')');
                }
                SetOp::Intersection(xs) => {
                    out.push_str("INTERSECT(");
                    join_notation(out, xs);
                    out.push(')');
                }
                SetOp::Membership { element, set } => {
                    out.push_str("IN(");
                    element.write_func_notation(out);
                    out.push_str(", ");
                    set.write_func_notation(out);
                    out.push(')');
                }
                SetOp::Named(n) => {
                    let _ = write!(out, "SET({n:?})");
                }
                SetOp::Empty => out.push_str("EMPTYSET"),
            },
            Expr::Opaque { raw, .. } => {
                let _ = write!(out, "OPAQUE({raw:?})");
            }
        }
    }
}

fn join_notation(out: &mut String, items: &[Expr]) {
    for (i, item) in items.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        item.write_func_notation(out);
    }
}

/// Node-for-node equality including operand order; no commutative
/// normalization.
pub fn structural_eq(a: &Expr, b: &Expr) -> bool {
    a == b
}

/// A parsed formula: a sequence of segments, each either a fully parsed
/// expression or an opaque span, joined by literal delimiters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedFormula {
    /// `(delimiter, content)`: the delimiter is the literal text printed
    /// before the segment (None for the first segment).
    pub segments: Vec<(Option<String>, Expr)>,
    /// Original LaTeX source.
    pub source: String,
}

impl ParsedFormula {
    pub fn single(content: Expr, source: impl Into<String>) -> Self {
        ParsedFormula { segments: vec![(None, content)], source: source.into() }
    }

    /// All substitutable symbols across every segment.
    pub fn free_symbols(&self) -> BTreeSet<Symbol> {
        let mut out = BTreeSet::new();
        for (_, seg) in &self.segments {
            seg.collect_symbols(&mut out);
        }
        out
    }

    /// True when no segment is opaque.
    pub fn fully_parsed(&self) -> bool {
        fn has_opaque(e: &Expr) -> bool {
            matches!(e, Expr::Opaque { .. }) || e.children().any(has_opaque)
        }
        !self.segments.iter().any(|(_, e)| has_opaque(e))
    }

    pub fn validate(&self, depth_cap: usize) -> Result<(), ExprError> {
        for (_, seg) in &self.segments {
            seg.validate(depth_cap)?;
        }
        Ok(())
    }
}

/// Free-symbol listing for a whole formula (operation-level entry point).
pub fn free_symbols(formula: &ParsedFormula) -> BTreeSet<Symbol> {
    formula.free_symbols()
}

/// One run of a math-bearing text: prose or formula.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Run {
    Prose(String),
    Formula(ParsedFormula),
}

/// Alternating prose and dollar-delimited formulas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MathText {
    pub runs: Vec<Run>,
    pub source: String,
}

impl MathText {
    /// Re-serializes using the original formula sources; byte-identical to
    /// the input before any mutation.
    pub fn to_source(&self) -> String {
        let mut s = String::new();
        for run in &self.runs {
            match run {
                Run::Prose(p) => s.push_str(p),
                Run::Formula(f) => {
                    s.push('$');
                    s.push_str(&f.source);
                    s.push('$');
                }
            }
        }
        s
    }

    pub fn formula_count(&self) -> usize {
        self.runs.iter().filter(|r| matches!(r, Run::Formula(_))).count()
    }

    /// Union of substitutable symbols across every formula run.
    pub fn free_symbols(&self) -> BTreeSet<Symbol> {
        let mut out = BTreeSet::new();
        for run in &self.runs {
            if let Run::Formula(f) = run {
                out.extend(f.free_symbols());
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn add_flattens_and_requires_two() {
        let e = Expr::add(vec![Expr::sym("a"), Expr::add(vec![Expr::sym("b"), Expr::sym("c")])]);
        match &e {
            Expr::Add(xs) => assert_eq!(xs.len(), 3),
            _ => panic!("expected Add"),
        }
        assert!(e.validate(DEFAULT_DEPTH_CAP).is_ok());
        assert_eq!(Expr::add(vec![Expr::sym("a")]), Expr::sym("a"));
    }

    #[test]
    fn neg_folds_literals() {
        assert_eq!(Expr::neg(Expr::int(5)), Expr::int(-5));
        let e = Expr::neg(Expr::sym("x"));
        assert!(e.is_negated_term());
        assert_eq!(e.strip_negation(), Expr::sym("x"));
        // Double negation cancels.
        assert_eq!(Expr::neg(Expr::neg(Expr::sym("x"))), Expr::sym("x"));
    }

    #[test]
    fn depth_cap_enforced() {
        let mut e = Expr::sym("x");
        for _ in 0..70 {
            e = Expr::pow(e, Expr::int(2));
        }
        assert_eq!(e.validate(DEFAULT_DEPTH_CAP), Err(ExprError::DepthExceeded(DEFAULT_DEPTH_CAP)));
    }

    #[test]
    fn structural_eq_is_order_sensitive() {
        let xy = Expr::add(vec![Expr::sym("x"), Expr::sym("y")]);
        let yx = Expr::add(vec![Expr::sym("y"), Expr::sym("x")]);
        assert!(structural_eq(&xy, &xy.clone()));
        assert!(!structural_eq(&xy, &yx));
        // x^2 vs 2^x
        let a = Expr::pow(Expr::sym("x"), Expr::int(2));
        let b = Expr::pow(Expr::int(2), Expr::sym("x"));
        assert!(!structural_eq(&a, &b));
    }

    #[test]
    fn opaque_span_validation() {
        let mut occ = BTreeMap::new();
        occ.insert("x".to_string(), OpaqueEntry { kind: SymbolKind::Variable, spans: vec![(5, 6)] });
        let good = Expr::Opaque { raw: "\\exp{x}".into(), occurrences: occ.clone() };
        assert!(good.validate(DEFAULT_DEPTH_CAP).is_ok());

        occ.insert("y".to_string(), OpaqueEntry { kind: SymbolKind::Variable, spans: vec![(5, 6)] });
        let bad = Expr::Opaque { raw: "\\exp{x}".into(), occurrences: occ };
        assert!(bad.validate(DEFAULT_DEPTH_CAP).is_err());
    }

    #[test]
    fn func_notation_matches_operator_tree_shape() {
        // d/dx f(x) rendered as DERIV(FUNC(f, VAR(x)), VAR(x))
        let f = Expr::GenericApp {
            symbol: Symbol::func("f"),
            args: vec![Expr::sym("x")],
            deriv_order: 0,
        };
        let d = Expr::Derivative { body: Box::new(f), wrt: Symbol::var("x"), order: 1 };
        assert_eq!(d.func_notation(), "DERIV(FUNC(f, VAR(x)), VAR(x))");
    }
}

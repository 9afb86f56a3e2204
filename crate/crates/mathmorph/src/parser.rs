//! LaTeX formula and math-text parsing.
//!
//! The parser is a hand-written recursive descent over the token stream
//! with an adaptive hybrid fallback: input is split into segments at
//! top-level `:`, `\Rightarrow`, `\wedge` and commas (quantifier bound
//! lists stay together), and each segment that fails to parse degrades to
//! an opaque span carrying a map of substitution-safe symbol occurrences.

use std::collections::{BTreeMap, BTreeSet};

use num_bigint::BigInt;

use crate::expr::{
    BigOpKind, ConstantKind, Expr, FuncKind, MathText, NamedSet, OpaqueEntry, ParsedFormula,
    RelOp, Run, SetOp, Symbol, SymbolKind,
};
use crate::lexer::{is_greek, tokenize, Tok, Token};

/// Commands excluded from symbol substitution inside opaque segments and
/// recognized by the grammar. Includes every command the printer can emit.
pub fn default_reserved_commands() -> BTreeSet<String> {
    [
        "sin", "cos", "tan", "arcsin", "arccos", "arctan", "asin", "acos", "atan", "ln", "log",
        "exp", "sqrt", "frac", "dfrac", "tfrac", "binom", "choose", "det", "lim", "sum", "prod",
        "int", "mathbb", "mathrm", "mathbf", "operatorname", "text", "left", "right", "cdot",
        "times", "div", "to", "infty", "pi", "emptyset", "varnothing", "cup", "cap", "in",
        "notin", "neq", "ne", "le", "leq", "ge", "geq", "coloneqq", "Rightarrow", "rightarrow",
        "wedge", "vee", "neg", "forall", "exists", "begin", "end", "pmatrix", "smallmatrix",
        "bmatrix", "matrix", "imath", "jmath", "partial", "nabla", "pm", "mp", "ldots", "dots",
        "cdots", "ddots", "approx", "equiv", "circ", "prime",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

/// Parser configuration.
#[derive(Debug, Clone)]
pub struct ParseOptions {
    /// LaTeX commands excluded from symbol substitution.
    pub reserved_commands: BTreeSet<String>,
    /// Enable the contextual Euler-number heuristic for `e`.
    pub e_heuristic: bool,
    /// Enable the contextual imaginary-unit heuristic for `i`.
    pub i_heuristic: bool,
    /// Maximum accepted input length in bytes.
    pub max_input_length: usize,
    /// Symbols declared as variables (catalog-provided).
    pub declared_variables: BTreeSet<String>,
    /// Symbols declared as generic functions (catalog-provided).
    pub declared_functions: BTreeSet<String>,
    /// Expression depth cap.
    pub depth_cap: usize,
}

impl Default for ParseOptions {
    fn default() -> Self {
        ParseOptions {
            reserved_commands: default_reserved_commands(),
            e_heuristic: true,
            i_heuristic: true,
            max_input_length: 20_000,
            declared_variables: BTreeSet::new(),
            declared_functions: BTreeSet::new(),
            depth_cap: crate::expr::DEFAULT_DEPTH_CAP,
        }
    }
}

impl ParseOptions {
    /// Declarations switch undeclared plain letters to `Reserved`, which
    /// keeps catalog identities from substituting symbols they did not
    /// declare.
    pub fn with_declarations<I, J>(mut self, variables: I, functions: J) -> Self
    where
        I: IntoIterator<Item = String>,
        J: IntoIterator<Item = String>,
    {
        self.declared_variables = variables.into_iter().collect();
        self.declared_functions = functions.into_iter().collect();
        self
    }

    fn declared_mode(&self) -> bool {
        !self.declared_variables.is_empty() || !self.declared_functions.is_empty()
    }

    /// Loads a reserved-command list from a JSON string array.
    pub fn load_reserved_commands(&mut self, json: &str) -> Result<(), ParseError> {
        let list: Vec<String> = serde_json::from_str(json)
            .map_err(|e| ParseError::Failure { position: 0, reason: format!("bad reserved list: {e}") })?;
        self.reserved_commands = list.into_iter().collect();
        Ok(())
    }
}

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("input exceeds maximum length")]
    OversizeInput,
    #[error("unbalanced math delimiters")]
    UnbalancedDelimiters,
    #[error("parse failure at byte {position}: {reason}")]
    Failure { position: usize, reason: String },
}

/// Context facts the classifier consults for a single symbol occurrence.
#[derive(Debug, Clone, Copy, Default)]
pub struct SymbolContext {
    pub declared_variable: bool,
    pub declared_function: bool,
    /// `i` occurs as a summation/product index or in an `i = <int>` relation.
    pub bound_index: bool,
    /// `i` multiplied with pi or inside an exponent of `e`.
    pub adjacent_imaginary: bool,
    /// `e` is exponentiated with a non-integer (symbolic) exponent.
    pub exponentiated_symbolic: bool,
    /// Prime, derivative-operator or integrand evidence for a function.
    pub function_evidence: bool,
    /// Catalog declarations are present; undeclared letters are reserved.
    pub declared_mode: bool,
}

/// Resolves the substitution kind of a symbol from its context.
pub fn classify_symbol(name: &str, ctx: &SymbolContext) -> SymbolKind {
    if ctx.declared_function {
        return SymbolKind::GenericFunction;
    }
    if ctx.declared_variable {
        return SymbolKind::Variable;
    }
    if name == "\\pi" {
        return SymbolKind::Constant;
    }
    if name == "i" {
        if ctx.bound_index {
            return SymbolKind::Variable;
        }
        if ctx.adjacent_imaginary {
            return SymbolKind::Constant;
        }
        // Ambiguous `i`: blocked from substitution, printed as plain i.
        return SymbolKind::Reserved;
    }
    if name == "e" {
        if ctx.exponentiated_symbolic {
            return SymbolKind::Constant;
        }
        return if ctx.declared_mode { SymbolKind::Reserved } else { SymbolKind::Variable };
    }
    if ctx.function_evidence {
        return SymbolKind::GenericFunction;
    }
    if ctx.declared_mode {
        SymbolKind::Reserved
    } else {
        SymbolKind::Variable
    }
}

// ---------------------------------------------------------------------------
// Segmentation
// ---------------------------------------------------------------------------

struct Segment {
    /// Literal delimiter text preceding this segment (None for the first).
    delimiter: Option<String>,
    /// Token range in the full stream.
    toks: Vec<Token>,
    /// Byte range of the segment in the source.
    span: (usize, usize),
}

fn split_segments(src: &str, toks: &[Token]) -> Vec<Segment> {
    let mut segments = Vec::new();
    let mut current: Vec<Token> = Vec::new();
    let mut depth = 0i32;
    let mut in_forall_head = false;
    let mut pending_delim: Option<String> = None;
    let mut prev_end: Option<usize> = None;

    let flush = |current: &mut Vec<Token>, delim: &mut Option<String>| -> Option<Segment> {
        if current.is_empty() {
            return None;
        }
        let span = (current.first().unwrap().span.0, current.last().unwrap().span.1);
        Some(Segment { delimiter: delim.take(), toks: std::mem::take(current), span })
    };

    for t in toks {
        match &t.tok {
            Tok::LBrace | Tok::LParen | Tok::LBracket => depth += 1,
            Tok::RBrace | Tok::RParen | Tok::RBracket => depth -= 1,
            _ => {}
        }
        let is_split = depth == 0
            && match &t.tok {
                Tok::Colon => true,
                Tok::Comma => !in_forall_head,
                Tok::Command(c) => c == "Rightarrow" || c == "wedge",
                _ => false,
            };
        if is_split {
            if let Some(seg) = flush(&mut current, &mut pending_delim) {
                prev_end = Some(seg.span.1);
                segments.push(seg);
            }
            in_forall_head = false;
            // The delimiter text runs from the end of the previous segment
            // through this token (capturing surrounding whitespace).
            let from = prev_end.unwrap_or(t.span.0);
            pending_delim = Some(src[from..t.span.1].to_string());
            prev_end = Some(t.span.1);
            continue;
        }
        match &t.tok {
            Tok::Command(c) if c == "forall" && depth == 0 => in_forall_head = true,
            Tok::Letter(_) | Tok::Comma => {}
            Tok::Command(c) if is_greek(c) => {}
            _ => in_forall_head = false,
        }
        if current.is_empty() {
            if let (Some(pe), Some(d)) = (prev_end, pending_delim.as_mut()) {
                // Extend delimiter through any whitespace up to this token.
                if t.span.0 > pe {
                    d.push_str(&src[pe..t.span.0]);
                }
            }
        }
        current.push(t.clone());
    }
    if let Some(seg) = flush(&mut current, &mut pending_delim) {
        segments.push(seg);
    }
    segments
}

// ---------------------------------------------------------------------------
// Function evidence scan
// ---------------------------------------------------------------------------

/// Names with generic-function evidence anywhere in the formula: declared
/// functions, letters carrying a prime, letters applied under a derivative
/// operator, integrand heads, and case variants of any of those.
fn scan_function_evidence(toks: &[Token], opts: &ParseOptions) -> BTreeSet<String> {
    let mut ev: BTreeSet<String> = opts.declared_functions.clone();
    let get = |i: usize| toks.get(i).map(|t| &t.tok);
    for i in 0..toks.len() {
        match get(i) {
            // f' or f^{(n)}(
            Some(Tok::Letter(l)) => {
                if matches!(get(i + 1), Some(Tok::Prime)) {
                    ev.insert(l.to_string());
                }
            }
            Some(Tok::Command(c)) if is_greek(c) => {
                if matches!(get(i + 1), Some(Tok::Prime)) {
                    ev.insert(format!("\\{c}"));
                }
            }
            // \frac{d}{dx} L(   or   \frac{d^n}{dx^n} L(
            Some(Tok::Command(c)) if c == "frac" || c == "dfrac" => {
                if let Some(after) = match_derivative_operator(toks, i) {
                    let mut j = after;
                    // Skip optional \left[ or [ or \left( wrappers.
                    loop {
                        match get(j) {
                            Some(Tok::Command(c)) if c == "left" => j += 1,
                            Some(Tok::LBracket) | Some(Tok::LParen) => {
                                j += 1;
                                break;
                            }
                            _ => break,
                        }
                    }
                    if let Some(Tok::Letter(l)) = get(j) {
                        if matches!(get(j + 1), Some(Tok::LParen)) {
                            ev.insert(l.to_string());
                        }
                    }
                    if let Some(Tok::Command(c)) = get(j) {
                        if is_greek(c) && matches!(get(j + 1), Some(Tok::LParen)) {
                            ev.insert(format!("\\{c}"));
                        }
                    }
                }
            }
            // integrand heads: letters applied to the integration variable
            Some(Tok::Command(c)) if c == "int" => {
                // Find the differential `d v` after the \int.
                let mut dvar: Option<char> = None;
                let mut j = i + 1;
                while j + 1 < toks.len() {
                    if let (Some(Tok::Letter('d')), Some(Tok::Letter(v))) = (get(j), get(j + 1)) {
                        dvar = Some(*v);
                    }
                    j += 1;
                }
                if let Some(v) = dvar {
                    let mut k = i + 1;
                    while k + 3 < toks.len() {
                        if let (Some(Tok::Letter(l)), Some(Tok::LParen), Some(Tok::Letter(a)), Some(Tok::RParen)) =
                            (get(k), get(k + 1), get(k + 2), get(k + 3))
                        {
                            if *a == v {
                                ev.insert(l.to_string());
                            }
                        }
                        k += 1;
                    }
                }
            }
            _ => {}
        }
    }
    // Case-variant closure: if f is a function and F( occurs, F is too.
    let mut added = true;
    while added {
        added = false;
        for i in 0..toks.len() {
            if let Some(Tok::Letter(l)) = get(i) {
                if matches!(get(i + 1), Some(Tok::LParen)) {
                    let variant: String = if l.is_lowercase() {
                        l.to_uppercase().to_string()
                    } else {
                        l.to_lowercase().to_string()
                    };
                    if ev.contains(&variant) && !ev.contains(&l.to_string()) {
                        ev.insert(l.to_string());
                        added = true;
                    }
                }
            }
        }
    }
    ev
}

/// Matches `\frac{d}{dX}` / `\frac{d^n}{dX^n}` starting at `i` (the frac
/// command). Returns the token index just past the closing brace.
fn match_derivative_operator(toks: &[Token], i: usize) -> Option<usize> {
    let get = |k: usize| toks.get(k).map(|t| &t.tok);
    let mut j = i + 1;
    if !matches!(get(j), Some(Tok::LBrace)) {
        return None;
    }
    j += 1;
    if !matches!(get(j), Some(Tok::Letter('d'))) {
        return None;
    }
    j += 1;
    if matches!(get(j), Some(Tok::Caret)) {
        j += 1;
        match get(j) {
            Some(Tok::Number(_)) => j += 1,
            Some(Tok::LBrace) => {
                j += 1;
                if !matches!(get(j), Some(Tok::Number(_))) {
                    return None;
                }
                j += 1;
                if !matches!(get(j), Some(Tok::RBrace)) {
                    return None;
                }
                j += 1;
            }
            _ => return None,
        }
    }
    if !matches!(get(j), Some(Tok::RBrace)) {
        return None;
    }
    j += 1;
    if !matches!(get(j), Some(Tok::LBrace)) {
        return None;
    }
    j += 1;
    if !matches!(get(j), Some(Tok::Letter('d'))) {
        return None;
    }
    j += 1;
    // variable letter or greek
    match get(j) {
        Some(Tok::Letter(_)) => j += 1,
        Some(Tok::Command(c)) if is_greek(c) => j += 1,
        _ => return None,
    }
    if matches!(get(j), Some(Tok::Caret)) {
        j += 1;
        match get(j) {
            Some(Tok::Number(_)) => j += 1,
            Some(Tok::LBrace) => {
                j += 1;
                if !matches!(get(j), Some(Tok::Number(_))) {
                    return None;
                }
                j += 1;
                if !matches!(get(j), Some(Tok::RBrace)) {
                    return None;
                }
                j += 1;
            }
            _ => return None,
        }
    }
    if !matches!(get(j), Some(Tok::RBrace)) {
        return None;
    }
    Some(j + 1)
}

// ---------------------------------------------------------------------------
// Grammar
// ---------------------------------------------------------------------------

struct Parser<'a> {
    toks: Vec<Token>,
    pos: usize,
    functions: &'a BTreeSet<String>,
}

type PResult<T> = Result<T, ParseError>;

impl<'a> Parser<'a> {
    fn new(toks: Vec<Token>, functions: &'a BTreeSet<String>) -> Self {
        Parser { toks, pos: 0, functions }
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.tok)
    }

    fn peek_at(&self, off: usize) -> Option<&Tok> {
        self.toks.get(self.pos + off).map(|t| &t.tok)
    }

    fn next_tok(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|t| t.tok.clone());
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn here(&self) -> usize {
        self.toks.get(self.pos).map(|t| t.span.0).unwrap_or_else(|| {
            self.toks.last().map(|t| t.span.1).unwrap_or(0)
        })
    }

    fn fail<T>(&self, reason: impl Into<String>) -> PResult<T> {
        Err(ParseError::Failure { position: self.here(), reason: reason.into() })
    }

    fn expect(&mut self, tok: Tok) -> PResult<()> {
        if self.peek() == Some(&tok) {
            self.pos += 1;
            Ok(())
        } else {
            self.fail(format!("expected {tok:?}"))
        }
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek() == Some(tok) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn at_end(&self) -> bool {
        self.pos >= self.toks.len()
    }

    // segment := quantifier-head | relation
    fn parse_segment(&mut self) -> PResult<Expr> {
        let e = if self.peek() == Some(&Tok::Command("forall".into())) {
            self.parse_quantifier_head()?
        } else {
            self.parse_relation()?
        };
        if !self.at_end() {
            return self.fail("trailing tokens");
        }
        Ok(e)
    }

    fn parse_quantifier_head(&mut self) -> PResult<Expr> {
        self.expect(Tok::Command("forall".into()))?;
        let mut bound = Vec::new();
        loop {
            let sym = self.parse_symbol_name()?;
            bound.push(Symbol::var(&sym));
            if !self.eat(&Tok::Comma) {
                break;
            }
        }
        let domain = if self.eat(&Tok::Command("in".into())) {
            Some(Box::new(self.parse_union()?))
        } else {
            None
        };
        if !self.at_end() {
            return self.fail("quantifier head followed by content");
        }
        Ok(Expr::Quantifier { bound, domain, body: None })
    }

    fn parse_symbol_name(&mut self) -> PResult<String> {
        match self.next_tok() {
            Some(Tok::Letter(c)) => Ok(c.to_string()),
            Some(Tok::Command(c)) if is_greek(&c) => Ok(format!("\\{c}")),
            _ => self.fail("expected symbol"),
        }
    }

    // relation := setlevel (relop setlevel)?
    fn parse_relation(&mut self) -> PResult<Expr> {
        let lhs = self.parse_set_level()?;
        let op = match self.peek() {
            Some(Tok::Equals) => Some(RelOp::Eq),
            Some(Tok::Lt) => Some(RelOp::Lt),
            Some(Tok::Gt) => Some(RelOp::Gt),
            Some(Tok::Command(c)) => match c.as_str() {
                "neq" | "ne" => Some(RelOp::Ne),
                "le" | "leq" => Some(RelOp::Le),
                "ge" | "geq" => Some(RelOp::Ge),
                "coloneqq" => Some(RelOp::Eq),
                _ => None,
            },
            _ => None,
        };
        if let Some(op) = op {
            self.pos += 1;
            let rhs = self.parse_set_level()?;
            if !self.at_end() {
                // chained relations (a = b = c) are not representable
                return self.fail("chained relation");
            }
            return Ok(Expr::relation(op, lhs, rhs));
        }
        Ok(lhs)
    }

    // setlevel := union (\in union)?
    fn parse_set_level(&mut self) -> PResult<Expr> {
        let lhs = self.parse_union()?;
        if self.eat(&Tok::Command("in".into())) {
            let set = self.parse_union()?;
            return Ok(Expr::SetExpr(SetOp::Membership {
                element: Box::new(lhs),
                set: Box::new(set),
            }));
        }
        Ok(lhs)
    }

    fn parse_union(&mut self) -> PResult<Expr> {
        let first = self.parse_intersection()?;
        if self.peek() != Some(&Tok::Command("cup".into())) {
            return Ok(first);
        }
        let mut items = vec![first];
        while self.eat(&Tok::Command("cup".into())) {
            items.push(self.parse_intersection()?);
        }
        Ok(Expr::SetExpr(SetOp::Union(items)))
    }

    fn parse_intersection(&mut self) -> PResult<Expr> {
        let first = self.parse_additive()?;
        if self.peek() != Some(&Tok::Command("cap".into())) {
            return Ok(first);
        }
        let mut items = vec![first];
        while self.eat(&Tok::Command("cap".into())) {
            items.push(self.parse_additive()?);
        }
        Ok(Expr::SetExpr(SetOp::Intersection(items)))
    }

    // additive := term (("+"|"-") term)*
    fn parse_additive(&mut self) -> PResult<Expr> {
        let mut terms = Vec::new();
        let lead_minus = self.eat(&Tok::Minus);
        let first = self.parse_term()?;
        terms.push(if lead_minus { Expr::neg(first) } else { first });
        loop {
            match self.peek() {
                Some(Tok::Plus) => {
                    self.pos += 1;
                    let t = self.parse_term()?;
                    terms.push(t);
                }
                Some(Tok::Minus) => {
                    self.pos += 1;
                    let t = self.parse_term()?;
                    terms.push(Expr::neg(t));
                }
                _ => break,
            }
        }
        Ok(Expr::add(terms))
    }

    // term := factor ((\cdot | * | \times | / | juxtaposition) factor)*
    fn parse_term(&mut self) -> PResult<Expr> {
        let mut factors: Vec<Expr> = Vec::new();
        let first = self.parse_factor_or_bigop(&mut factors)?;
        factors.push(first);
        loop {
            match self.peek() {
                Some(Tok::Command(c)) if c == "cdot" || c == "times" || c == "div" => {
                    let is_div = c == "div";
                    self.pos += 1;
                    let f = self.parse_factor_or_bigop(&mut factors)?;
                    if is_div {
                        factors.push(Expr::pow(f, Expr::int(-1)));
                    } else {
                        factors.push(f);
                    }
                }
                Some(Tok::Star) => {
                    self.pos += 1;
                    let f = self.parse_factor_or_bigop(&mut factors)?;
                    factors.push(f);
                }
                Some(Tok::Slash) => {
                    self.pos += 1;
                    let f = self.parse_factor_or_bigop(&mut factors)?;
                    factors.push(Expr::pow(f, Expr::int(-1)));
                }
                Some(tok) if starts_factor(tok) => {
                    let f = self.parse_factor_or_bigop(&mut factors)?;
                    factors.push(f);
                }
                _ => break,
            }
        }
        Ok(Expr::mul(factors))
    }

    /// Parses a factor. Big operators swallow the remaining term as their
    /// body, so they are handled here and close over `factors` built so far.
    fn parse_factor_or_bigop(&mut self, _factors: &mut [Expr]) -> PResult<Expr> {
        if let Some(Tok::Command(c)) = self.peek() {
            match c.as_str() {
                "sum" | "prod" => return self.parse_sum_prod(),
                "lim" => return self.parse_limit(),
                "int" => return self.parse_integral(),
                _ => {}
            }
        }
        self.parse_factor()
    }

    fn parse_sum_prod(&mut self) -> PResult<Expr> {
        let kind = match self.next_tok() {
            Some(Tok::Command(c)) if c == "sum" => BigOpKind::Sum,
            Some(Tok::Command(c)) if c == "prod" => BigOpKind::Product,
            _ => return self.fail("expected sum/prod"),
        };
        let mut bound = None;
        let mut lower = None;
        let mut upper = None;
        if self.eat(&Tok::Underscore) {
            self.expect(Tok::LBrace)?;
            let name = self.parse_symbol_name()?;
            bound = Some(Symbol::var(&name));
            if self.eat(&Tok::Equals) {
                lower = Some(Box::new(self.parse_additive()?));
            }
            self.expect(Tok::RBrace)?;
        }
        if self.eat(&Tok::Caret) {
            upper = Some(Box::new(self.parse_script()?));
        }
        let bound = match bound {
            Some(b) => b,
            None => return self.fail("sum/prod without bound variable"),
        };
        let body = self.parse_term()?;
        Ok(Expr::BigOp { kind, bound, lower, upper, body: Box::new(body) })
    }

    fn parse_limit(&mut self) -> PResult<Expr> {
        self.expect(Tok::Command("lim".into()))?;
        self.expect(Tok::Underscore)?;
        self.expect(Tok::LBrace)?;
        let name = self.parse_symbol_name()?;
        self.expect(Tok::Command("to".into()))?;
        let target = self.parse_additive()?;
        self.expect(Tok::RBrace)?;
        let body = self.parse_term()?;
        Ok(Expr::BigOp {
            kind: BigOpKind::Limit,
            bound: Symbol::var(&name),
            lower: Some(Box::new(target)),
            upper: None,
            body: Box::new(body),
        })
    }

    fn parse_integral(&mut self) -> PResult<Expr> {
        self.expect(Tok::Command("int".into()))?;
        let mut lower = None;
        let mut upper = None;
        if self.eat(&Tok::Underscore) {
            lower = Some(Box::new(self.parse_script()?));
        }
        if self.eat(&Tok::Caret) {
            upper = Some(Box::new(self.parse_script()?));
        }
        // Integrand factors up to the differential `d v`.
        let mut factors = Vec::new();
        let mut dvar: Option<String> = None;
        loop {
            if self.at_end() {
                break;
            }
            // differential: letter d (or \mathrm{d}) followed by a symbol
            if self.peek() == Some(&Tok::Letter('d')) {
                if let Some(Tok::Letter(v)) = self.peek_at(1) {
                    let v = *v;
                    self.pos += 2;
                    dvar = Some(v.to_string());
                    break;
                }
                if let Some(Tok::Command(c)) = self.peek_at(1) {
                    if is_greek(c) {
                        let name = format!("\\{c}");
                        self.pos += 2;
                        dvar = Some(name);
                        break;
                    }
                }
            }
            if let Some(Tok::Command(c)) = self.peek() {
                if c == "mathrm" && self.peek_at(1) == Some(&Tok::LBrace)
                    && self.peek_at(2) == Some(&Tok::Letter('d'))
                    && self.peek_at(3) == Some(&Tok::RBrace)
                {
                    if let Some(Tok::Letter(v)) = self.peek_at(4) {
                        let v = *v;
                        self.pos += 5;
                        dvar = Some(v.to_string());
                        break;
                    }
                }
            }
            match self.peek() {
                Some(Tok::Command(c)) if c == "cdot" || c == "times" => {
                    self.pos += 1;
                    continue;
                }
                Some(Tok::Star) => {
                    self.pos += 1;
                    continue;
                }
                Some(tok) if starts_factor(tok) => {
                    let f = self.parse_factor()?;
                    factors.push(f);
                }
                _ => break,
            }
        }
        let dvar = match dvar {
            Some(v) => v,
            None => return self.fail("integral without differential"),
        };
        if factors.is_empty() {
            return self.fail("integral without integrand");
        }
        Ok(Expr::BigOp {
            kind: BigOpKind::Integral,
            bound: Symbol::var(&dvar),
            lower,
            upper,
            body: Box::new(Expr::mul(factors)),
        })
    }

    // factor := atom postfix*
    fn parse_factor(&mut self) -> PResult<Expr> {
        let mut e = self.parse_atom()?;
        loop {
            match self.peek() {
                Some(Tok::Caret) => {
                    self.pos += 1;
                    let exp = self.parse_script()?;
                    e = Expr::pow(e, exp);
                }
                Some(Tok::Bang) => {
                    self.pos += 1;
                    e = Expr::Func(FuncKind::Factorial, vec![e]);
                }
                _ => break,
            }
        }
        Ok(e)
    }

    /// Sub/superscript argument: a braced expression or a single token.
    fn parse_script(&mut self) -> PResult<Expr> {
        if self.eat(&Tok::LBrace) {
            let lead_minus = self.eat(&Tok::Minus);
            let e = self.parse_set_level()?;
            self.expect(Tok::RBrace)?;
            return Ok(if lead_minus { Expr::neg(e) } else { e });
        }
        if self.eat(&Tok::Minus) {
            let e = self.parse_single_script_token()?;
            return Ok(Expr::neg(e));
        }
        self.parse_single_script_token()
    }

    fn parse_single_script_token(&mut self) -> PResult<Expr> {
        // In unbraced scripts LaTeX takes exactly one character.
        match self.peek().cloned() {
            Some(Tok::Number(n)) => {
                if n.len() > 1 {
                    // Split: first digit is the script, rest stays.
                    let first_digit: i64 = n[..1].parse().unwrap();
                    let span = self.toks[self.pos].span;
                    self.toks[self.pos] =
                        Token { tok: Tok::Number(n[1..].to_string()), span: (span.0 + 1, span.1) };
                    Ok(Expr::int(first_digit))
                } else {
                    self.pos += 1;
                    Ok(Expr::Integer(n.parse::<BigInt>().unwrap()))
                }
            }
            Some(Tok::Letter(_)) | Some(Tok::Command(_)) => self.parse_atom(),
            _ => self.fail("expected script"),
        }
    }

    fn parse_atom(&mut self) -> PResult<Expr> {
        let tok = match self.peek().cloned() {
            Some(t) => t,
            None => return self.fail("unexpected end of input"),
        };
        match tok {
            Tok::Number(n) => {
                self.pos += 1;
                Ok(Expr::Integer(n.parse::<BigInt>().unwrap()))
            }
            Tok::Decimal(d) => {
                self.pos += 1;
                let dot = d.find('.').unwrap();
                let digits: String = d.chars().filter(|c| *c != '.').collect();
                let scale = d.len() - dot - 1;
                let num: BigInt = digits.parse().unwrap();
                let den = BigInt::from(10u32).pow(scale as u32);
                Ok(Expr::Rational(num, den))
            }
            Tok::LParen => {
                self.pos += 1;
                let e = self.parse_set_level()?;
                // {n \choose k} style is brace-level; parens close here.
                self.expect(Tok::RParen)?;
                self.maybe_subscript_reject()?;
                Ok(e)
            }
            Tok::LBrace => {
                self.pos += 1;
                let e = self.parse_set_level()?;
                if self.eat(&Tok::Command("choose".into())) {
                    let k = self.parse_set_level()?;
                    self.expect(Tok::RBrace)?;
                    return Ok(Expr::Func(FuncKind::Binomial, vec![e, k]));
                }
                self.expect(Tok::RBrace)?;
                Ok(e)
            }
            Tok::Pipe => {
                // |x| absolute value (single level)
                self.pos += 1;
                let e = self.parse_set_level()?;
                self.expect(Tok::Pipe)?;
                Ok(Expr::Func(FuncKind::Abs, vec![e]))
            }
            Tok::Letter(c) => self.parse_letter(c),
            Tok::Command(c) => self.parse_command(&c),
            Tok::Minus => {
                // unary minus inside scripts/atom positions
                self.pos += 1;
                let f = self.parse_factor()?;
                Ok(Expr::neg(f))
            }
            other => self.fail(format!("unexpected token {other:?}")),
        }
    }

    /// `x_1`-style subscripts are part of symbols; reject them after
    /// non-symbol atoms like `(...)_2`.
    fn maybe_subscript_reject(&mut self) -> PResult<()> {
        if self.peek() == Some(&Tok::Underscore) {
            return self.fail("subscript on group");
        }
        Ok(())
    }

    fn parse_letter(&mut self, c: char) -> PResult<Expr> {
        self.pos += 1;
        let name = c.to_string();
        // E[X] expectation shorthand
        if name == "E" && self.peek() == Some(&Tok::LBracket) {
            let args = self.parse_bracket_args()?;
            return Ok(Expr::Func(FuncKind::Expectation, args));
        }
        // primes and subscripts
        let mut deriv_order = 0u32;
        while self.eat(&Tok::Prime) {
            deriv_order += 1;
        }
        // f^{(n)}( explicit derivative order
        if deriv_order == 0
            && self.is_function_name(&name)
            && self.peek() == Some(&Tok::Caret)
            && self.peek_at(1) == Some(&Tok::LBrace)
            && self.peek_at(2) == Some(&Tok::LParen)
        {
            self.pos += 3;
            let n = match self.next_tok() {
                Some(Tok::Number(n)) => n.parse::<u32>().map_err(|_| ParseError::Failure {
                    position: self.here(),
                    reason: "bad derivative order".into(),
                })?,
                _ => return self.fail("expected derivative order"),
            };
            self.expect(Tok::RParen)?;
            self.expect(Tok::RBrace)?;
            deriv_order = n;
        }
        let symbol = self.finish_symbol(name, deriv_order > 0)?;
        // function application
        if (self.is_function_name(&symbol.name) || deriv_order > 0)
            && self.peek() == Some(&Tok::LParen)
        {
            let args = self.parse_paren_args()?;
            let mut sym = symbol;
            sym.kind = SymbolKind::GenericFunction;
            return Ok(Expr::GenericApp { symbol: sym, args, deriv_order });
        }
        if deriv_order > 0 {
            // f' without arguments: the derived function itself
            let mut sym = symbol;
            sym.kind = SymbolKind::GenericFunction;
            return Ok(Expr::GenericApp { symbol: sym, args: vec![], deriv_order });
        }
        Ok(Expr::Symbol(symbol))
    }

    fn is_function_name(&self, name: &str) -> bool {
        self.functions.contains(name)
    }

    /// Completes a symbol: optional numeric or single-symbol subscript.
    fn finish_symbol(&mut self, base: String, force_function: bool) -> PResult<Symbol> {
        let mut name = base;
        let mut index = None;
        if self.peek() == Some(&Tok::Underscore) {
            self.pos += 1;
            match self.peek().cloned() {
                Some(Tok::Number(n)) => {
                    self.pos += 1;
                    if n.len() > 1 {
                        // x_12 without braces means x_1 * 2; keep strict.
                        return self.fail("multi-digit subscript without braces");
                    }
                    index = Some(n.parse::<u32>().unwrap());
                }
                Some(Tok::LBrace) => {
                    self.pos += 1;
                    match self.peek().cloned() {
                        Some(Tok::Number(n)) => {
                            self.pos += 1;
                            index = Some(n.parse::<u32>().map_err(|_| ParseError::Failure {
                                position: self.here(),
                                reason: "subscript too large".into(),
                            })?);
                        }
                        Some(Tok::Letter(l)) => {
                            self.pos += 1;
                            name = format!("{name}_{{{l}}}");
                        }
                        Some(Tok::Command(c)) if is_greek(&c) => {
                            self.pos += 1;
                            name = format!("{name}_{{\\{c}}}");
                        }
                        _ => return self.fail("unsupported subscript"),
                    }
                    self.expect(Tok::RBrace)?;
                }
                Some(Tok::Letter(l)) => {
                    self.pos += 1;
                    name = format!("{name}_{{{l}}}");
                }
                Some(Tok::Command(c)) if is_greek(&c) => {
                    self.pos += 1;
                    name = format!("{name}_{{\\{c}}}");
                }
                _ => return self.fail("unsupported subscript"),
            }
        }
        let kind = if force_function || self.is_function_name(&name) {
            SymbolKind::GenericFunction
        } else {
            // provisional; resolved in the classification pass
            SymbolKind::Variable
        };
        Ok(Symbol { name, index, kind })
    }

    fn parse_paren_args(&mut self) -> PResult<Vec<Expr>> {
        self.expect(Tok::LParen)?;
        let mut args = Vec::new();
        loop {
            let a = self.parse_probability_arg()?;
            args.push(a);
            // Commas separate arguments; a pipe separates the condition
            // of a conditional probability.
            if !self.eat(&Tok::Comma) && !self.eat(&Tok::Pipe) {
                break;
            }
        }
        self.expect(Tok::RParen)?;
        Ok(args)
    }

    fn parse_bracket_args(&mut self) -> PResult<Vec<Expr>> {
        self.expect(Tok::LBracket)?;
        let mut args = Vec::new();
        loop {
            let a = self.parse_probability_arg()?;
            args.push(a);
            if !self.eat(&Tok::Comma) && !self.eat(&Tok::Pipe) {
                break;
            }
        }
        self.expect(Tok::RBracket)?;
        Ok(args)
    }

    /// Operator argument that may be a relation (`P(X=k)`) or carry a
    /// conditional bar (`P(A|B)` yields two args).
    fn parse_probability_arg(&mut self) -> PResult<Expr> {
        let lhs = self.parse_set_level()?;
        let op = match self.peek() {
            Some(Tok::Equals) => Some(RelOp::Eq),
            Some(Tok::Command(c)) if c == "neq" || c == "ne" => Some(RelOp::Ne),
            _ => None,
        };
        if let Some(op) = op {
            self.pos += 1;
            let rhs = self.parse_set_level()?;
            return Ok(Expr::relation(op, lhs, rhs));
        }
        Ok(lhs)
    }

    fn parse_command(&mut self, c: &str) -> PResult<Expr> {
        match c {
            "frac" | "dfrac" | "tfrac" => self.parse_frac(),
            "sqrt" => self.parse_sqrt(),
            "binom" => {
                self.pos += 1;
                let n = self.parse_group()?;
                let k = self.parse_group()?;
                Ok(Expr::Func(FuncKind::Binomial, vec![n, k]))
            }
            "sin" | "cos" | "tan" | "arcsin" | "arccos" | "arctan" | "asin" | "acos" | "atan"
            | "ln" | "exp" => self.parse_named_unary(c),
            "log" => self.parse_log(),
            "det" => self.parse_det(),
            "left" => self.parse_left_group(),
            "pi" => {
                self.pos += 1;
                Ok(Expr::Constant(ConstantKind::Pi))
            }
            "infty" => {
                self.pos += 1;
                Ok(Expr::Constant(ConstantKind::Infinity))
            }
            "imath" | "jmath" => {
                self.pos += 1;
                Ok(Expr::Constant(ConstantKind::ImaginaryUnit))
            }
            "emptyset" | "varnothing" => {
                self.pos += 1;
                Ok(Expr::SetExpr(SetOp::Empty))
            }
            "{" => {
                // \{ ... \} set literal; only the empty set is modeled.
                self.pos += 1;
                if self.eat(&Tok::Command("}".into())) {
                    Ok(Expr::SetExpr(SetOp::Empty))
                } else {
                    self.fail("non-empty set literal")
                }
            }
            "mathbb" => self.parse_mathbb(),
            "mathrm" => self.parse_mathrm(),
            "operatorname" => self.parse_operatorname(),
            "begin" => self.parse_matrix(),
            name if is_greek(name) => {
                self.pos += 1;
                let name = format!("\\{name}");
                if name == "\\pi" {
                    return Ok(Expr::Constant(ConstantKind::Pi));
                }
                let mut deriv_order = 0u32;
                while self.eat(&Tok::Prime) {
                    deriv_order += 1;
                }
                let symbol = self.finish_symbol(name, deriv_order > 0)?;
                if (self.is_function_name(&symbol.name) || deriv_order > 0)
                    && self.peek() == Some(&Tok::LParen)
                {
                    let args = self.parse_paren_args()?;
                    let mut sym = symbol;
                    sym.kind = SymbolKind::GenericFunction;
                    return Ok(Expr::GenericApp { symbol: sym, args, deriv_order });
                }
                if deriv_order > 0 {
                    let mut sym = symbol;
                    sym.kind = SymbolKind::GenericFunction;
                    return Ok(Expr::GenericApp { symbol: sym, args: vec![], deriv_order });
                }
                Ok(Expr::Symbol(symbol))
            }
            other => self.fail(format!("unsupported command \\{other}")),
        }
    }

    fn parse_frac(&mut self) -> PResult<Expr> {
        // derivative operator form?
        let start = self.pos;
        if let Some(after) = match_derivative_operator(&self.toks, self.pos) {
            // extract order and variable
            let (order, wrt) = self.extract_derivative_parts(start)?;
            self.pos = after;
            let body = self.parse_factor()?;
            return Ok(Expr::Derivative { body: Box::new(body), wrt, order });
        }
        self.pos += 1;
        let num = self.parse_group_or_digit()?;
        let den = self.parse_group_or_digit()?;
        // Integer literal fractions become exact rationals.
        if let (Expr::Integer(n), Expr::Integer(d)) = (&num, &den) {
            if d.sign() == num_bigint::Sign::Plus {
                return Ok(Expr::Rational(n.clone(), d.clone()));
            }
        }
        Ok(Expr::div(num, den))
    }

    fn extract_derivative_parts(&self, frac_pos: usize) -> PResult<(u32, Symbol)> {
        // \frac {d[^n]} {d<sym>[^n]}
        let mut j = frac_pos + 2; // skip frac, {
        j += 1; // skip d
        let mut order = 1u32;
        if self.toks.get(j).map(|t| &t.tok) == Some(&Tok::Caret) {
            j += 1;
            match self.toks.get(j).map(|t| &t.tok) {
                Some(Tok::Number(n)) => {
                    order = n.parse().unwrap_or(1);
                    j += 1;
                }
                Some(Tok::LBrace) => {
                    if let Some(Tok::Number(n)) = self.toks.get(j + 1).map(|t| &t.tok) {
                        order = n.parse().unwrap_or(1);
                    }
                    j += 3;
                }
                _ => {}
            }
        }
        j += 2; // skip }, {
        j += 1; // skip d
        let wrt = match self.toks.get(j).map(|t| &t.tok) {
            Some(Tok::Letter(v)) => Symbol::var(v.to_string()),
            Some(Tok::Command(c)) if is_greek(c) => Symbol::var(format!("\\{c}")),
            _ => return self.fail("bad derivative variable"),
        };
        Ok((order, wrt))
    }

    fn parse_sqrt(&mut self) -> PResult<Expr> {
        self.pos += 1;
        if self.eat(&Tok::LBracket) {
            let n = self.parse_set_level()?;
            self.expect(Tok::RBracket)?;
            let arg = self.parse_group()?;
            // nth root as a rational power
            if let Expr::Integer(k) = &n {
                if k.sign() == num_bigint::Sign::Plus {
                    return Ok(Expr::pow(arg, Expr::Rational(BigInt::from(1), k.clone())));
                }
            }
            return Ok(Expr::pow(arg, Expr::div(Expr::int(1), n)));
        }
        let arg = self.parse_group()?;
        Ok(Expr::Func(FuncKind::Sqrt, vec![arg]))
    }

    fn parse_named_unary(&mut self, c: &str) -> PResult<Expr> {
        let kind = match c {
            "sin" => FuncKind::Sin,
            "cos" => FuncKind::Cos,
            "tan" => FuncKind::Tan,
            "arcsin" | "asin" => FuncKind::ArcSin,
            "arccos" | "acos" => FuncKind::ArcCos,
            "arctan" | "atan" => FuncKind::ArcTan,
            "ln" => FuncKind::Ln,
            "exp" => FuncKind::Exp,
            _ => unreachable!(),
        };
        self.pos += 1;
        // \sin^{-1}(x) names the inverse; \sin^2(x) squares the value.
        if self.peek() == Some(&Tok::Caret) {
            self.pos += 1;
            let exp = self.parse_script()?;
            let arg = self.parse_unary_arg()?;
            if exp.is_integer_value(-1) {
                let inv = match kind {
                    FuncKind::Sin => FuncKind::ArcSin,
                    FuncKind::Cos => FuncKind::ArcCos,
                    FuncKind::Tan => FuncKind::ArcTan,
                    _ => return self.fail("inverse of non-trig function"),
                };
                return Ok(Expr::Func(inv, vec![arg]));
            }
            return Ok(Expr::pow(Expr::Func(kind, vec![arg]), exp));
        }
        let arg = self.parse_unary_arg()?;
        Ok(Expr::Func(kind, vec![arg]))
    }

    fn parse_log(&mut self) -> PResult<Expr> {
        self.pos += 1;
        let mut base: Option<Expr> = None;
        if self.eat(&Tok::Underscore) {
            base = Some(self.parse_script()?);
        }
        let arg = self.parse_unary_arg()?;
        match base {
            Some(Expr::Constant(ConstantKind::E)) => Ok(Expr::Func(FuncKind::Ln, vec![arg])),
            Some(Expr::Symbol(s)) if s.name == "e" => Ok(Expr::Func(FuncKind::Ln, vec![arg])),
            Some(b) => Ok(Expr::Func(FuncKind::Log(Box::new(b)), vec![arg])),
            None => Ok(Expr::Func(FuncKind::Log(Box::new(Expr::int(10))), vec![arg])),
        }
    }

    /// Argument of a named unary function: parenthesized, braced, or a
    /// tight factor (`\sin x`).
    fn parse_unary_arg(&mut self) -> PResult<Expr> {
        match self.peek() {
            Some(Tok::LParen) => {
                self.pos += 1;
                let e = self.parse_set_level()?;
                self.expect(Tok::RParen)?;
                Ok(e)
            }
            Some(Tok::LBrace) => {
                self.pos += 1;
                let e = self.parse_set_level()?;
                self.expect(Tok::RBrace)?;
                Ok(e)
            }
            Some(Tok::Command(c)) if c == "left" => self.parse_left_group(),
            _ => self.parse_factor(),
        }
    }

    fn parse_det(&mut self) -> PResult<Expr> {
        self.pos += 1;
        let arg = self.parse_unary_arg()?;
        Ok(Expr::Func(FuncKind::Det, vec![arg]))
    }

    fn parse_left_group(&mut self) -> PResult<Expr> {
        self.expect(Tok::Command("left".into()))?;
        let closer = match self.next_tok() {
            Some(Tok::LParen) => Tok::RParen,
            Some(Tok::LBracket) => Tok::RBracket,
            Some(Tok::Pipe) => Tok::Pipe,
            Some(Tok::Command(c)) if c == "{" => Tok::Command("}".into()),
            Some(Tok::Command(c)) if c == "lbrace" => Tok::Command("rbrace".into()),
            _ => return self.fail("unsupported \\left delimiter"),
        };
        let is_pipe = closer == Tok::Pipe;
        let inner = self.parse_set_level()?;
        self.expect(Tok::Command("right".into()))?;
        self.expect(closer)?;
        if is_pipe {
            // |Matrix| is a determinant, |x| an absolute value.
            if matches!(inner, Expr::Matrix(_)) {
                return Ok(Expr::Func(FuncKind::Det, vec![inner]));
            }
            return Ok(Expr::Func(FuncKind::Abs, vec![inner]));
        }
        Ok(inner)
    }

    fn parse_mathbb(&mut self) -> PResult<Expr> {
        self.pos += 1;
        self.expect(Tok::LBrace)?;
        let letter = match self.next_tok() {
            Some(Tok::Letter(l)) => l,
            _ => return self.fail("expected letter in \\mathbb"),
        };
        self.expect(Tok::RBrace)?;
        match letter {
            'R' => Ok(Expr::SetExpr(SetOp::Named(NamedSet::R))),
            'N' => Ok(Expr::SetExpr(SetOp::Named(NamedSet::N))),
            'C' => Ok(Expr::SetExpr(SetOp::Named(NamedSet::C))),
            'Z' => Ok(Expr::SetExpr(SetOp::Named(NamedSet::Z))),
            'E' => {
                let args = self.parse_op_args()?;
                Ok(Expr::Func(FuncKind::Expectation, args))
            }
            'P' => {
                let args = self.parse_op_args()?;
                Ok(Expr::Func(FuncKind::Probability, args))
            }
            'V' => {
                // \mathbb{V}ar[X] / \mathbb{V}\mathrm{ar}[X]
                self.skip_operator_suffix("ar");
                let args = self.parse_op_args()?;
                Ok(Expr::Func(FuncKind::Variance, args))
            }
            other => self.fail(format!("unsupported \\mathbb{{{other}}}")),
        }
    }

    fn skip_operator_suffix(&mut self, suffix: &str) {
        // plain letters
        let mut matched = 0;
        let save = self.pos;
        for ch in suffix.chars() {
            if self.peek() == Some(&Tok::Letter(ch)) {
                self.pos += 1;
                matched += 1;
            } else {
                break;
            }
        }
        if matched == suffix.len() {
            return;
        }
        self.pos = save;
        // \mathrm{ar}
        if self.peek() == Some(&Tok::Command("mathrm".into())) && self.peek_at(1) == Some(&Tok::LBrace) {
            let mut j = self.pos + 2;
            for ch in suffix.chars() {
                if self.toks.get(j).map(|t| &t.tok) == Some(&Tok::Letter(ch)) {
                    j += 1;
                } else {
                    return;
                }
            }
            if self.toks.get(j).map(|t| &t.tok) == Some(&Tok::RBrace) {
                self.pos = j + 1;
            }
        }
    }

    fn parse_op_args(&mut self) -> PResult<Vec<Expr>> {
        match self.peek() {
            Some(Tok::LBracket) => self.parse_bracket_args(),
            Some(Tok::LParen) => self.parse_paren_args(),
            Some(Tok::Command(c)) if c == "left" => {
                self.pos += 1;
                let (open, close) = match self.next_tok() {
                    Some(Tok::LBracket) => (Tok::LBracket, Tok::RBracket),
                    Some(Tok::LParen) => (Tok::LParen, Tok::RParen),
                    _ => return self.fail("unsupported operator delimiter"),
                };
                let _ = open;
                let mut args = Vec::new();
                loop {
                    args.push(self.parse_probability_arg()?);
                    if !self.eat(&Tok::Comma) {
                        break;
                    }
                }
                self.expect(Tok::Command("right".into()))?;
                self.expect(close)?;
                Ok(args)
            }
            _ => self.fail("expected operator arguments"),
        }
    }

    fn parse_mathrm(&mut self) -> PResult<Expr> {
        self.pos += 1;
        self.expect(Tok::LBrace)?;
        let mut letters = String::new();
        while let Some(Tok::Letter(l)) = self.peek() {
            letters.push(*l);
            self.pos += 1;
        }
        self.expect(Tok::RBrace)?;
        match letters.as_str() {
            "i" | "j" => Ok(Expr::Constant(ConstantKind::ImaginaryUnit)),
            "e" => Ok(Expr::Constant(ConstantKind::E)),
            "d" => self.fail("differential outside integral"),
            "E" => {
                let args = self.parse_op_args()?;
                Ok(Expr::Func(FuncKind::Expectation, args))
            }
            "P" => {
                let args = self.parse_op_args()?;
                Ok(Expr::Func(FuncKind::Probability, args))
            }
            "Var" => {
                let args = self.parse_op_args()?;
                Ok(Expr::Func(FuncKind::Variance, args))
            }
            "Cov" => {
                let args = self.parse_op_args()?;
                Ok(Expr::Func(FuncKind::Covariance, args))
            }
            other => self.fail(format!("unsupported \\mathrm{{{other}}}")),
        }
    }

    fn parse_operatorname(&mut self) -> PResult<Expr> {
        self.pos += 1;
        self.expect(Tok::LBrace)?;
        let mut letters = String::new();
        while let Some(Tok::Letter(l)) = self.peek() {
            letters.push(*l);
            self.pos += 1;
        }
        self.expect(Tok::RBrace)?;
        match letters.as_str() {
            "E" => {
                let args = self.parse_op_args()?;
                Ok(Expr::Func(FuncKind::Expectation, args))
            }
            "P" | "Pr" => {
                let args = self.parse_op_args()?;
                Ok(Expr::Func(FuncKind::Probability, args))
            }
            "Var" => {
                let args = self.parse_op_args()?;
                Ok(Expr::Func(FuncKind::Variance, args))
            }
            "Cov" => {
                let args = self.parse_op_args()?;
                Ok(Expr::Func(FuncKind::Covariance, args))
            }
            other => self.fail(format!("unsupported \\operatorname{{{other}}}")),
        }
    }

    fn parse_matrix(&mut self) -> PResult<Expr> {
        self.expect(Tok::Command("begin".into()))?;
        self.expect(Tok::LBrace)?;
        let env = self.read_env_name()?;
        self.expect(Tok::RBrace)?;
        if !matches!(env.as_str(), "pmatrix" | "smallmatrix" | "bmatrix" | "matrix") {
            return self.fail(format!("unsupported environment {env}"));
        }
        let mut rows: Vec<Vec<Expr>> = vec![];
        let mut row: Vec<Expr> = vec![];
        loop {
            let e = self.parse_additive()?;
            row.push(e);
            match self.peek() {
                Some(Tok::Ampersand) => {
                    self.pos += 1;
                }
                Some(Tok::RowSep) => {
                    self.pos += 1;
                    rows.push(std::mem::take(&mut row));
                }
                Some(Tok::Command(c)) if c == "end" => {
                    self.pos += 1;
                    break;
                }
                _ => return self.fail("expected matrix separator"),
            }
        }
        if !row.is_empty() {
            rows.push(row);
        }
        self.expect(Tok::LBrace)?;
        let end_env = self.read_env_name()?;
        self.expect(Tok::RBrace)?;
        if end_env != env {
            return self.fail("mismatched environment");
        }
        if rows.is_empty() || rows.iter().any(|r| r.len() != rows[0].len()) {
            return self.fail("ragged matrix");
        }
        Ok(Expr::Matrix(rows))
    }

    fn read_env_name(&mut self) -> PResult<String> {
        let mut s = String::new();
        while let Some(Tok::Letter(l)) = self.peek() {
            s.push(*l);
            self.pos += 1;
        }
        if s.is_empty() {
            return self.fail("expected environment name");
        }
        Ok(s)
    }

    fn parse_group(&mut self) -> PResult<Expr> {
        self.expect(Tok::LBrace)?;
        let lead_minus = self.eat(&Tok::Minus);
        let e = self.parse_set_level()?;
        self.expect(Tok::RBrace)?;
        Ok(if lead_minus { Expr::neg(e) } else { e })
    }

    /// `\frac` groups may be a braced expression or a single token
    /// (`\frac2n` compact form).
    fn parse_group_or_digit(&mut self) -> PResult<Expr> {
        if self.peek() == Some(&Tok::LBrace) {
            return self.parse_group();
        }
        self.parse_single_script_token()
    }
}

fn starts_factor(tok: &Tok) -> bool {
    match tok {
        Tok::Letter(_) | Tok::Number(_) | Tok::Decimal(_) | Tok::LParen | Tok::LBrace | Tok::Pipe => true,
        Tok::Command(c) => {
            !matches!(
                c.as_str(),
                "right" | "to" | "in" | "cup" | "cap" | "ne" | "neq" | "le" | "leq" | "ge" | "geq"
                    | "coloneqq" | "choose" | "end"
            )
        }
        _ => false,
    }
}

// ---------------------------------------------------------------------------
// e/i classification pass
// ---------------------------------------------------------------------------

#[derive(Default)]
struct EiFlags {
    i_bound: bool,
    i_imaginary: bool,
    e_symbolic_power: bool,
}

fn scan_ei_flags(e: &Expr, flags: &mut EiFlags) {
    match e {
        Expr::BigOp { bound, .. } => {
            if bound.name == "i" {
                flags.i_bound = true;
            }
        }
        Expr::Relation { op: RelOp::Eq, lhs, rhs } => {
            if let (Expr::Symbol(s), Expr::Integer(_)) = (lhs.as_ref(), rhs.as_ref()) {
                if s.name == "i" {
                    flags.i_bound = true;
                }
            }
        }
        Expr::Mul(fs) => {
            let has_i = fs.iter().any(
                |f| matches!(f, Expr::Symbol(s) if s.name == "i") || matches!(f, Expr::Constant(ConstantKind::ImaginaryUnit)),
            );
            let has_pi = fs.iter().any(|f| matches!(f, Expr::Constant(ConstantKind::Pi)));
            if has_i && has_pi {
                flags.i_imaginary = true;
            }
        }
        Expr::Pow(base, exp) => {
            let base_is_e = matches!(base.as_ref(), Expr::Symbol(s) if s.name == "e")
                || matches!(base.as_ref(), Expr::Constant(ConstantKind::E));
            if base_is_e {
                if !matches!(exp.as_ref(), Expr::Integer(_)) {
                    flags.e_symbolic_power = true;
                }
                let mut syms = BTreeSet::new();
                exp.collect_symbols(&mut syms);
                if syms.iter().any(|s| s.name == "i") || contains_i_symbol(exp) {
                    flags.i_imaginary = true;
                }
            }
        }
        _ => {}
    }
    for c in e.children() {
        scan_ei_flags(c, flags);
    }
}

fn contains_i_symbol(e: &Expr) -> bool {
    match e {
        Expr::Symbol(s) => s.name == "i",
        _ => e.children().any(contains_i_symbol),
    }
}

/// Rewrites provisional symbol kinds based on declarations and heuristics.
fn classify_pass(e: &Expr, flags: &EiFlags, opts: &ParseOptions) -> Expr {
    let rewrite_symbol = |s: &Symbol| -> Option<Expr> {
        let ctx = SymbolContext {
            declared_variable: opts.declared_variables.contains(&s.name),
            declared_function: opts.declared_functions.contains(&s.name),
            bound_index: flags.i_bound,
            adjacent_imaginary: flags.i_imaginary,
            exponentiated_symbolic: flags.e_symbolic_power,
            function_evidence: s.kind == SymbolKind::GenericFunction,
            declared_mode: opts.declared_mode(),
        };
        let kind = classify_symbol(&s.name, &ctx);
        if kind == SymbolKind::Constant {
            let c = match s.name.as_str() {
                "e" => ConstantKind::E,
                "i" => ConstantKind::ImaginaryUnit,
                "\\pi" => ConstantKind::Pi,
                _ => return Some(Expr::Symbol(Symbol { kind: SymbolKind::Reserved, ..s.clone() })),
            };
            return Some(Expr::Constant(c));
        }
        Some(Expr::Symbol(Symbol { kind, ..s.clone() }))
    };

    let classify_bound = |s: &Symbol| -> Symbol {
        // Bound symbols are substitutable variables by construction.
        Symbol { kind: SymbolKind::Variable, ..s.clone() }
    };

    match e {
        Expr::Symbol(s) => rewrite_symbol(s).unwrap(),
        Expr::GenericApp { symbol, args, deriv_order } => Expr::GenericApp {
            symbol: Symbol { kind: SymbolKind::GenericFunction, ..symbol.clone() },
            args: args.iter().map(|a| classify_pass(a, flags, opts)).collect(),
            deriv_order: *deriv_order,
        },
        Expr::Func(kind, args) => {
            let kind = match kind {
                FuncKind::Log(b) => FuncKind::Log(Box::new(classify_pass(b, flags, opts))),
                other => other.clone(),
            };
            Expr::Func(kind, args.iter().map(|a| classify_pass(a, flags, opts)).collect())
        }
        Expr::Add(xs) => Expr::Add(xs.iter().map(|x| classify_pass(x, flags, opts)).collect()),
        Expr::Mul(xs) => Expr::Mul(xs.iter().map(|x| classify_pass(x, flags, opts)).collect()),
        Expr::Pow(b, ex) => Expr::pow(classify_pass(b, flags, opts), classify_pass(ex, flags, opts)),
        Expr::Relation { op, lhs, rhs } => {
            Expr::relation(*op, classify_pass(lhs, flags, opts), classify_pass(rhs, flags, opts))
        }
        Expr::Implication { antecedent, consequent } => Expr::Implication {
            antecedent: Box::new(classify_pass(antecedent, flags, opts)),
            consequent: Box::new(classify_pass(consequent, flags, opts)),
        },
        Expr::Quantifier { bound, domain, body } => Expr::Quantifier {
            bound: bound.iter().map(classify_bound).collect(),
            domain: domain.as_ref().map(|d| Box::new(classify_pass(d, flags, opts))),
            body: body.as_ref().map(|b| Box::new(classify_pass(b, flags, opts))),
        },
        Expr::BigOp { kind, bound, lower, upper, body } => Expr::BigOp {
            kind: *kind,
            bound: classify_bound(bound),
            lower: lower.as_ref().map(|l| Box::new(classify_pass(l, flags, opts))),
            upper: upper.as_ref().map(|u| Box::new(classify_pass(u, flags, opts))),
            body: Box::new(classify_pass(body, flags, opts)),
        },
        Expr::Derivative { body, wrt, order } => Expr::Derivative {
            body: Box::new(classify_pass(body, flags, opts)),
            wrt: classify_bound(wrt),
            order: *order,
        },
        Expr::Matrix(rows) => Expr::Matrix(
            rows.iter().map(|r| r.iter().map(|x| classify_pass(x, flags, opts)).collect()).collect(),
        ),
        Expr::SetExpr(op) => Expr::SetExpr(match op {
            SetOp::Union(xs) => SetOp::Union(xs.iter().map(|x| classify_pass(x, flags, opts)).collect()),
            SetOp::Intersection(xs) => {
                SetOp::Intersection(xs.iter().map(|x| classify_pass(x, flags, opts)).collect())
            }
            SetOp::Membership { element, set } => SetOp::Membership {
                element: Box::new(classify_pass(element, flags, opts)),
                set: Box::new(classify_pass(set, flags, opts)),
            },
            SetOp::Named(n) => SetOp::Named(*n),
            SetOp::Empty => SetOp::Empty,
        }),
        other => other.clone(),
    }
}

// ---------------------------------------------------------------------------
// Opaque fallback
// ---------------------------------------------------------------------------

/// Scans a raw LaTeX span for substitution-safe symbol occurrences.
///
/// Letters inside commands and inside `\text`/`\mathrm`/`\mathbb`/
/// `\operatorname` groups are never occurrences; `e`, `i` and `d` are
/// excluded unless declared; occurrences followed by a subscript are
/// skipped so indexed families stay intact.
pub fn scan_opaque_occurrences(
    raw: &str,
    opts: &ParseOptions,
) -> BTreeMap<String, OpaqueEntry> {
    let mut map: BTreeMap<String, OpaqueEntry> = BTreeMap::new();
    let bytes = raw.as_bytes();
    let mut i = 0;
    let mut skip_group_depth: i32 = 0;
    let declared_mode = opts.declared_mode();

    let record = |name: String, kind: SymbolKind, span: (usize, usize), map: &mut BTreeMap<String, OpaqueEntry>| {
        map.entry(name).or_insert_with(|| OpaqueEntry { kind, spans: vec![] }).spans.push(span);
    };

    while i < raw.len() {
        let c = raw[i..].chars().next().unwrap();
        if c == '\\' {
            let start = i;
            i += 1;
            let name: String = raw[i..].chars().take_while(|c| c.is_ascii_alphabetic()).collect();
            if name.is_empty() {
                i += raw[i..].chars().next().map(|c| c.len_utf8()).unwrap_or(1);
                continue;
            }
            i += name.len();
            if matches!(name.as_str(), "text" | "mathrm" | "mathbb" | "mathbf" | "operatorname") {
                // Skip the following braced group entirely.
                while i < raw.len() && bytes[i].is_ascii_whitespace() {
                    i += 1;
                }
                if i < raw.len() && bytes[i] == b'{' {
                    let mut depth = 0;
                    while i < raw.len() {
                        match bytes[i] {
                            b'{' => depth += 1,
                            b'}' => {
                                depth -= 1;
                                if depth == 0 {
                                    i += 1;
                                    break;
                                }
                            }
                            _ => {}
                        }
                        i += 1;
                    }
                }
                continue;
            }
            if is_greek(&name) && name != "pi" {
                let full = format!("\\{name}");
                // Skip if subscripted.
                let next = raw[i..].chars().find(|c| !c.is_whitespace());
                if next != Some('_') && skip_group_depth == 0 {
                    let declared_f = opts.declared_functions.contains(&full);
                    let declared_v = opts.declared_variables.contains(&full);
                    if declared_f {
                        record(full, SymbolKind::GenericFunction, (start, i), &mut map);
                    } else if declared_v || !declared_mode {
                        record(full, SymbolKind::Variable, (start, i), &mut map);
                    }
                }
            }
            continue;
        }
        if c == '{' {
            if skip_group_depth > 0 {
                skip_group_depth += 1;
            }
            i += 1;
            continue;
        }
        if c == '}' {
            if skip_group_depth > 0 {
                skip_group_depth -= 1;
            }
            i += 1;
            continue;
        }
        if c.is_ascii_alphabetic() {
            let name = c.to_string();
            let next = raw[i + 1..].chars().find(|c| !c.is_whitespace());
            let subscripted = next == Some('_');
            let excluded_default = matches!(c, 'e' | 'i' | 'd');
            let declared_f = opts.declared_functions.contains(&name);
            let declared_v = opts.declared_variables.contains(&name);
            if !subscripted {
                if declared_f {
                    record(name, SymbolKind::GenericFunction, (i, i + 1), &mut map);
                } else if declared_v || (!declared_mode && !excluded_default) {
                    record(name, SymbolKind::Variable, (i, i + 1), &mut map);
                }
            }
            i += 1;
            continue;
        }
        i += c.len_utf8();
    }
    map
}

fn braces_balanced(s: &str) -> bool {
    let mut depth: i64 = 0;
    let mut prev_backslash = false;
    for c in s.chars() {
        match c {
            '{' if !prev_backslash => depth += 1,
            '}' if !prev_backslash => depth -= 1,
            _ => {}
        }
        if depth < 0 {
            return false;
        }
        prev_backslash = c == '\\' && !prev_backslash;
    }
    depth == 0
}

// ---------------------------------------------------------------------------
// Entry points
// ---------------------------------------------------------------------------

/// Parses a LaTeX formula into segments, degrading unparsable segments to
/// opaque spans with substitution-safe occurrence maps.
pub fn parse_formula(latex: &str, opts: &ParseOptions) -> Result<ParsedFormula, ParseError> {
    parse_formula_with_evidence(latex, opts, &BTreeSet::new())
}

/// Like [`parse_formula`] with extra generic-function evidence collected
/// elsewhere (used for text-wide consistency across formulas).
pub fn parse_formula_with_evidence(
    latex: &str,
    opts: &ParseOptions,
    extra_evidence: &BTreeSet<String>,
) -> Result<ParsedFormula, ParseError> {
    if latex.len() > opts.max_input_length {
        return Err(ParseError::OversizeInput);
    }
    let trimmed = latex.trim();
    if trimmed.is_empty() {
        return Err(ParseError::Failure { position: 0, reason: "empty formula".into() });
    }
    if !braces_balanced(trimmed) {
        return Err(ParseError::Failure { position: 0, reason: "unbalanced braces".into() });
    }

    let toks = match tokenize(trimmed) {
        Ok(t) => t,
        Err(_) => {
            // Unlexable input degrades to a single opaque segment.
            let occurrences = scan_opaque_occurrences(trimmed, opts);
            let seg = Expr::Opaque { raw: trimmed.to_string(), occurrences };
            return Ok(ParsedFormula { segments: vec![(None, seg)], source: latex.to_string() });
        }
    };
    if toks.is_empty() {
        return Err(ParseError::Failure { position: 0, reason: "no content".into() });
    }

    let mut functions = scan_function_evidence(&toks, opts);
    functions.extend(extra_evidence.iter().cloned());
    let segments = split_segments(trimmed, &toks);
    if segments.is_empty() {
        return Err(ParseError::Failure { position: 0, reason: "no segments".into() });
    }

    let mut out: Vec<(Option<String>, Expr)> = Vec::with_capacity(segments.len());
    for seg in segments {
        let mut parser = Parser::new(seg.toks.clone(), &functions);
        let parsed = parser.parse_segment().and_then(|e| {
            let mut flags = EiFlags::default();
            if opts.e_heuristic || opts.i_heuristic {
                scan_ei_flags(&e, &mut flags);
            }
            let e = classify_pass(&e, &flags, opts);
            e.validate(opts.depth_cap)
                .map_err(|err| ParseError::Failure { position: seg.span.0, reason: err.to_string() })?;
            Ok(e)
        });
        let content = match parsed {
            Ok(e) => e,
            Err(_) => {
                let raw = trimmed[seg.span.0..seg.span.1].to_string();
                let occurrences = scan_opaque_occurrences(&raw, opts);
                Expr::Opaque { raw, occurrences }
            }
        };
        out.push((seg.delimiter, content));
    }
    Ok(ParsedFormula { segments: out, source: latex.to_string() })
}

/// Parses a text with dollar-delimited inline formulas.
pub fn parse_math_text(text: &str, opts: &ParseOptions) -> Result<MathText, ParseError> {
    // Split at unescaped dollar signs.
    let mut spans: Vec<(usize, usize, bool)> = Vec::new(); // (start, end, is_formula)
    let bytes = text.as_bytes();
    let mut i = 0;
    let mut run_start = 0;
    let mut in_math: Option<usize> = None;
    while i < text.len() {
        let c = text[i..].chars().next().unwrap();
        if c == '\\' && i + 1 < text.len() && bytes[i + 1] == b'$' {
            i += 2;
            continue;
        }
        if c == '$' {
            match in_math {
                None => {
                    if i > run_start {
                        spans.push((run_start, i, false));
                    }
                    in_math = Some(i + 1);
                }
                Some(start) => {
                    spans.push((start, i, true));
                    in_math = None;
                    run_start = i + 1;
                }
            }
            i += 1;
            continue;
        }
        i += c.len_utf8();
    }
    if in_math.is_some() {
        return Err(ParseError::UnbalancedDelimiters);
    }
    if run_start < text.len() {
        spans.push((run_start, text.len(), false));
    }

    // Function evidence is shared across every formula of the text so a
    // prime or derivative operator in one formula marks the symbol as a
    // function in all of them.
    let mut evidence: BTreeSet<String> = BTreeSet::new();
    for &(a, b, is_formula) in &spans {
        if is_formula {
            if let Ok(toks) = tokenize(text[a..b].trim()) {
                evidence.extend(scan_function_evidence(&toks, opts));
            }
        }
    }

    let mut runs = Vec::new();
    for (a, b, is_formula) in spans {
        let slice = &text[a..b];
        if is_formula {
            let formula = match parse_formula_with_evidence(slice, opts, &evidence) {
                Ok(f) => ParsedFormula { source: slice.to_string(), ..f },
                Err(_) => ParsedFormula {
                    segments: vec![(
                        None,
                        Expr::Opaque { raw: slice.to_string(), occurrences: BTreeMap::new() },
                    )],
                    source: slice.to_string(),
                },
            };
            runs.push(Run::Formula(formula));
        } else {
            runs.push(Run::Prose(slice.to_string()));
        }
    }
    Ok(MathText { runs, source: text.to_string() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse1(s: &str) -> Expr {
        let f = parse_formula(s, &ParseOptions::default()).unwrap();
        assert_eq!(f.segments.len(), 1, "expected single segment for {s}");
        f.segments[0].1.clone()
    }

    #[test]
    fn binomial_formula_tree() {
        let e = parse1(r"(a+b)^2 = a^2 + 2\cdot a\cdot b + b^2");
        match &e {
            Expr::Relation { op: RelOp::Eq, lhs, .. } => match lhs.as_ref() {
                Expr::Pow(base, exp) => {
                    assert!(matches!(base.as_ref(), Expr::Add(_)));
                    assert!(exp.is_integer_value(2));
                }
                other => panic!("unexpected lhs {other:?}"),
            },
            other => panic!("expected relation, got {other:?}"),
        }
        let f = parse_formula(r"(a+b)^2=a^2+2ab+b^2", &ParseOptions::default()).unwrap();
        let syms: Vec<String> = f.free_symbols().iter().map(|s| s.name.clone()).collect();
        assert_eq!(syms, vec!["a", "b"]);
    }

    #[test]
    fn pow_direction_is_kept() {
        let a = parse1("x^2");
        let b = parse1("2^x");
        assert_ne!(a, b);
    }

    #[test]
    fn forall_head_splits_at_colon() {
        let f =
            parse_formula(r"\forall x, y: x\cdot y=y\cdot x", &ParseOptions::default()).unwrap();
        assert_eq!(f.segments.len(), 2);
        assert!(matches!(&f.segments[0].1, Expr::Quantifier { bound, .. } if bound.len() == 2));
        assert_eq!(f.segments[1].0.as_deref(), Some(": "));
        assert!(matches!(&f.segments[1].1, Expr::Relation { op: RelOp::Eq, .. }));
    }

    #[test]
    fn derivative_formula_matches_operator_tree() {
        let f = parse_formula(
            r"\frac{d}{dx} f(x) = \lim_{h \to 0} \frac{f(x+h)-f(x)}{h}",
            &ParseOptions::default(),
        )
        .unwrap();
        assert_eq!(f.segments.len(), 1);
        let e = &f.segments[0].1;
        let notation = e.func_notation();
        assert_eq!(
            notation,
            "EQU(DERIV(FUNC(f, VAR(x)), VAR(x)), LIM(DIV(SUB(FUNC(f, ADD(VAR(x), VAR(h))), \
             FUNC(f, VAR(x))), VAR(h)), VAR(h), INT(0)))"
        );
    }

    #[test]
    fn fundamental_theorem_symbols() {
        let f = parse_formula(r"\int_a^b f(x)\,dx = F(b)-F(a)", &ParseOptions::default()).unwrap();
        assert!(f.fully_parsed());
        let mut vars = vec![];
        let mut funcs = vec![];
        for s in f.free_symbols() {
            match s.kind {
                SymbolKind::Variable => vars.push(s.name),
                SymbolKind::GenericFunction => funcs.push(s.name),
                _ => {}
            }
        }
        assert_eq!(vars, vec!["a", "b", "x"]);
        assert_eq!(funcs, vec!["F", "f"]);
    }

    #[test]
    fn i_as_summation_index_is_variable() {
        let f = parse_formula(r"\sum_{i=1}^n i^2", &ParseOptions::default()).unwrap();
        let syms = f.free_symbols();
        assert!(syms.iter().any(|s| s.name == "i" && s.kind == SymbolKind::Variable));
    }

    #[test]
    fn i_next_to_pi_is_imaginary() {
        let f = parse_formula(r"e^{i\pi}", &ParseOptions::default()).unwrap();
        assert!(f.fully_parsed());
        let syms = f.free_symbols();
        assert!(!syms.iter().any(|s| s.name == "i"));
        assert!(!syms.iter().any(|s| s.name == "e"));
    }

    #[test]
    fn ambiguous_i_is_reserved() {
        let f = parse_formula(r"i + x", &ParseOptions::default()).unwrap();
        let syms = f.free_symbols();
        assert!(!syms.iter().any(|s| s.name == "i"), "reserved i must not be substitutable");
        assert!(syms.iter().any(|s| s.name == "x"));
    }

    #[test]
    fn no_symbols_in_constant_formula() {
        let f = parse_formula("3=3", &ParseOptions::default()).unwrap();
        assert!(f.free_symbols().is_empty());
    }

    #[test]
    fn math_text_structure() {
        let text = "The derivative of a function $f$, referred to as $\\frac{d}{dx}f(x)$, is \
                    defined as the limit of $\\frac{f(x+h) - f(x)}{h}$ as $h$ approaches $0$.";
        let mt = parse_math_text(text, &ParseOptions::default()).unwrap();
        assert_eq!(mt.to_source(), text);
        assert_eq!(mt.formula_count(), 5);
        assert_eq!(mt.runs.len(), 11);
        assert!(matches!(&mt.runs[0], Run::Prose(p) if p.starts_with("The derivative")));
    }

    #[test]
    fn plain_text_single_run() {
        let mt = parse_math_text("no math here", &ParseOptions::default()).unwrap();
        assert_eq!(mt.runs.len(), 1);
        assert_eq!(mt.formula_count(), 0);
    }

    #[test]
    fn unbalanced_dollars_error() {
        assert_eq!(
            parse_math_text("broken $x", &ParseOptions::default()),
            Err(ParseError::UnbalancedDelimiters)
        );
    }

    #[test]
    fn opaque_occurrences_exclude_reserved_commands() {
        let opts = ParseOptions::default();
        let occ = scan_opaque_occurrences(r"\exp{x} + \text{hello y} + z", &opts);
        assert!(occ.contains_key("x"));
        assert!(occ.contains_key("z"));
        assert!(!occ.contains_key("y"), "letters inside \\text are not substitutable");
        // No occurrence may point inside the \exp command.
        for entry in occ.values() {
            for &(a, _) in &entry.spans {
                assert!(a >= 4, "span starts inside a command");
            }
        }
    }

    #[test]
    fn letter_before_paren_defaults_to_multiplication() {
        let e = parse1(r"v(x+y)");
        assert!(matches!(e, Expr::Mul(_)));
        // with prime evidence it becomes an application
        let e = parse1(r"v'(x) + v(x)");
        fn count_apps(e: &Expr) -> usize {
            let own = usize::from(matches!(e, Expr::GenericApp { .. }));
            own + e.children().map(count_apps).sum::<usize>()
        }
        assert_eq!(count_apps(&e), 2);
    }

    #[test]
    fn oversize_input_rejected() {
        let opts = ParseOptions { max_input_length: 10, ..Default::default() };
        assert_eq!(parse_formula("x+y+z+a+b+c+d", &opts), Err(ParseError::OversizeInput));
    }

    #[test]
    fn matrix_parses() {
        let e = parse1(r"\begin{pmatrix} a & b \\ c & d \end{pmatrix}");
        match e {
            Expr::Matrix(rows) => {
                assert_eq!(rows.len(), 2);
                assert_eq!(rows[0].len(), 2);
            }
            other => panic!("expected matrix, got {other:?}"),
        }
    }

    #[test]
    fn unparsable_segment_becomes_opaque() {
        let f = parse_formula(r"x \approx y", &ParseOptions::default()).unwrap();
        assert!(!f.fully_parsed());
        if let Expr::Opaque { occurrences, .. } = &f.segments[0].1 {
            assert!(occurrences.contains_key("x"));
            assert!(occurrences.contains_key("y"));
        } else {
            panic!("expected opaque segment");
        }
    }
}

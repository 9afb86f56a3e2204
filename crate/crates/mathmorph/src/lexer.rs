//! LaTeX math-mode tokenizer.
//!
//! Produces a flat token stream with byte spans into the source. Spacing
//! and size commands are dropped here; everything else is preserved so the
//! parser (and the opaque-segment scanner) can see exact source positions.

/// Commands that only affect layout and carry no mathematical content.
const SPACING_COMMANDS: &[&str] = &[
    ",", ";", ":", "!", " ", "quad", "qquad", "displaystyle", "textstyle", "limits", "nolimits",
    "big", "Big", "bigg", "Bigg", "bigl", "bigr", "Bigl", "Bigr", "biggl", "biggr", "Biggl",
    "Biggr", "medspace", "thinspace",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Tok {
    /// `\command` (name without the backslash).
    Command(String),
    /// Single letter a-z / A-Z.
    Letter(char),
    /// Maximal run of digits.
    Number(String),
    /// Number with a decimal point, e.g. `2.718`.
    Decimal(String),
    LBrace,
    RBrace,
    LParen,
    RParen,
    LBracket,
    RBracket,
    Caret,
    Underscore,
    Plus,
    Minus,
    Star,
    Slash,
    Equals,
    Lt,
    Gt,
    Comma,
    Colon,
    Bang,
    Pipe,
    Prime,
    /// `&` matrix column separator.
    Ampersand,
    /// `\\` matrix row separator.
    RowSep,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub tok: Tok,
    /// Byte span in the source string.
    pub span: (usize, usize),
}

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum LexError {
    #[error("unexpected character {0:?} at byte {1}")]
    UnexpectedChar(char, usize),
}

pub fn tokenize(src: &str) -> Result<Vec<Token>, LexError> {
    let mut out = Vec::new();
    let bytes = src.as_bytes();
    let mut i = 0;
    while i < src.len() {
        let c = src[i..].chars().next().unwrap();
        let start = i;
        match c {
            ' ' | '\t' | '\n' | '\r' | '~' => {
                i += c.len_utf8();
            }
            '\\' => {
                if i + 1 < src.len() && bytes[i + 1] == b'\\' {
                    out.push(Token { tok: Tok::RowSep, span: (i, i + 2) });
                    i += 2;
                    continue;
                }
                let rest = &src[i + 1..];
                let next = rest.chars().next();
                match next {
                    Some(ch) if ch.is_ascii_alphabetic() => {
                        let name: String = rest.chars().take_while(|c| c.is_ascii_alphabetic()).collect();
                        i += 1 + name.len();
                        if !SPACING_COMMANDS.contains(&name.as_str()) {
                            out.push(Token { tok: Tok::Command(name), span: (start, i) });
                        }
                    }
                    Some(ch) => {
                        // Single-character commands: \, \; \! \{ \} etc.
                        i += 1 + ch.len_utf8();
                        let name = ch.to_string();
                        if !SPACING_COMMANDS.contains(&name.as_str()) {
                            out.push(Token { tok: Tok::Command(name), span: (start, i) });
                        }
                    }
                    None => {
                        return Err(LexError::UnexpectedChar('\\', i));
                    }
                }
            }
            '0'..='9' => {
                let digits: String = src[i..].chars().take_while(|c| c.is_ascii_digit()).collect();
                let mut end = i + digits.len();
                // Decimal point directly followed by digits.
                let mut is_decimal = false;
                if end < src.len() && bytes[end] == b'.' {
                    let frac: String =
                        src[end + 1..].chars().take_while(|c| c.is_ascii_digit()).collect();
                    if !frac.is_empty() {
                        end += 1 + frac.len();
                        is_decimal = true;
                    }
                }
                let text = src[i..end].to_string();
                out.push(Token {
                    tok: if is_decimal { Tok::Decimal(text) } else { Tok::Number(text) },
                    span: (i, end),
                });
                i = end;
            }
            'a'..='z' | 'A'..='Z' => {
                out.push(Token { tok: Tok::Letter(c), span: (i, i + 1) });
                i += 1;
            }
            '{' => {
                out.push(Token { tok: Tok::LBrace, span: (i, i + 1) });
                i += 1;
            }
            '}' => {
                out.push(Token { tok: Tok::RBrace, span: (i, i + 1) });
                i += 1;
            }
            '(' => {
                out.push(Token { tok: Tok::LParen, span: (i, i + 1) });
                i += 1;
            }
            ')' => {
                out.push(Token { tok: Tok::RParen, span: (i, i + 1) });
                i += 1;
            }
            '[' => {
                out.push(Token { tok: Tok::LBracket, span: (i, i + 1) });
                i += 1;
            }
            ']' => {
                out.push(Token { tok: Tok::RBracket, span: (i, i + 1) });
                i += 1;
            }
            '^' => {
                out.push(Token { tok: Tok::Caret, span: (i, i + 1) });
                i += 1;
            }
            '_' => {
                out.push(Token { tok: Tok::Underscore, span: (i, i + 1) });
                i += 1;
            }
            '+' => {
                out.push(Token { tok: Tok::Plus, span: (i, i + 1) });
                i += 1;
            }
            '-' | '−' => {
                out.push(Token { tok: Tok::Minus, span: (i, i + c.len_utf8()) });
                i += c.len_utf8();
            }
            '*' => {
                out.push(Token { tok: Tok::Star, span: (i, i + 1) });
                i += 1;
            }
            '/' => {
                out.push(Token { tok: Tok::Slash, span: (i, i + 1) });
                i += 1;
            }
            '=' => {
                out.push(Token { tok: Tok::Equals, span: (i, i + 1) });
                i += 1;
            }
            '<' => {
                out.push(Token { tok: Tok::Lt, span: (i, i + 1) });
                i += 1;
            }
            '>' => {
                out.push(Token { tok: Tok::Gt, span: (i, i + 1) });
                i += 1;
            }
            ',' => {
                out.push(Token { tok: Tok::Comma, span: (i, i + 1) });
                i += 1;
            }
            ':' => {
                out.push(Token { tok: Tok::Colon, span: (i, i + 1) });
                i += 1;
            }
            '!' => {
                out.push(Token { tok: Tok::Bang, span: (i, i + 1) });
                i += 1;
            }
            '|' => {
                out.push(Token { tok: Tok::Pipe, span: (i, i + 1) });
                i += 1;
            }
            '\'' | '’' => {
                out.push(Token { tok: Tok::Prime, span: (i, i + c.len_utf8()) });
                i += c.len_utf8();
            }
            '&' => {
                out.push(Token { tok: Tok::Ampersand, span: (i, i + 1) });
                i += 1;
            }
            '.' => {
                // Bare dots (ellipsis fragments) are not supported content.
                return Err(LexError::UnexpectedChar('.', i));
            }
            other => return Err(LexError::UnexpectedChar(other, i)),
        }
    }
    Ok(out)
}

/// Greek letter command names, usable as symbols.
pub const GREEK_LETTERS: &[&str] = &[
    "alpha", "beta", "gamma", "delta", "epsilon", "varepsilon", "zeta", "eta", "theta", "vartheta",
    "iota", "kappa", "lambda", "mu", "nu", "xi", "omicron", "rho", "varrho", "sigma", "varsigma",
    "tau", "upsilon", "phi", "varphi", "chi", "psi", "omega", "Gamma", "Delta", "Theta", "Lambda",
    "Xi", "Pi", "Sigma", "Upsilon", "Phi", "Psi", "Omega",
];

pub fn is_greek(name: &str) -> bool {
    GREEK_LETTERS.contains(&name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizes_commands_and_spans() {
        let toks = tokenize(r"\frac{d}{dx} f(x)").unwrap();
        assert_eq!(toks[0].tok, Tok::Command("frac".into()));
        assert_eq!(toks[0].span, (0, 5));
        let letters: Vec<_> =
            toks.iter().filter_map(|t| match &t.tok { Tok::Letter(c) => Some(*c), _ => None }).collect();
        assert_eq!(letters, vec!['d', 'd', 'x', 'f', 'x']);
    }

    #[test]
    fn spacing_commands_dropped() {
        let toks = tokenize(r"a \, b \quad c\!d").unwrap();
        assert_eq!(toks.len(), 4);
        assert!(toks.iter().all(|t| matches!(t.tok, Tok::Letter(_))));
    }

    #[test]
    fn decimal_numbers() {
        let toks = tokenize("2.718 + 3").unwrap();
        assert_eq!(toks[0].tok, Tok::Decimal("2.718".into()));
        assert_eq!(toks[2].tok, Tok::Number("3".into()));
    }

    #[test]
    fn double_backslash_is_rowsep() {
        let toks = tokenize(r"a \\ b").unwrap();
        assert_eq!(toks[1].tok, Tok::RowSep);
    }
}

//! Recursive-descent parser for the concrete formula syntax.
//!
//! ```text
//! formula := conj ('|' conj)*
//! conj    := unary ('&' unary)*
//! unary   := '!' unary
//!          | ('E' | 'A') dirs ( 'X' unary
//!                             | 'F' INT unary
//!                             | 'G' INT unary
//!                             | '[' formula 'U' INT formula ']' )
//!          | 'true' | 'false' | VAR ('<=' | '>=') NUM | '(' formula ')'
//! dirs    := '*' | '{' DIR (',' DIR)* '}'
//! ```
//!
//! `VAR` is `m` or `m1`, `m2`, ...; `DIR` is one of `NW NE SE SW`; `#` starts
//! a comment running to the end of the line.

use std::fmt;

use thiserror::Error;

use super::{Formula, Quantifier, Relation};
use crate::quadtree::{DirSet, Direction};

#[derive(Debug, Clone, PartialEq, Error)]
#[error("line {line}, column {col}: {kind}")]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ParseErrorKind {
    Unexpected { found: String, expected: Vec<String> },
    ThresholdOutOfRange { value: f64, bound: f64 },
    EmptyDirSet,
    ZeroBound,
    BadNumber(String),
    BadCharacter(char),
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseErrorKind::Unexpected { found, expected } => {
                write!(f, "found {found}, expected ")?;
                match expected.as_slice() {
                    [one] => f.write_str(one),
                    many => write!(f, "one of {}", many.join(", ")),
                }
            }
            ParseErrorKind::ThresholdOutOfRange { value, bound } => {
                write!(f, "threshold {value} outside [0, {bound}]")
            }
            ParseErrorKind::EmptyDirSet => f.write_str("empty direction set"),
            ParseErrorKind::ZeroBound => f.write_str("step bound must be at least 1"),
            ParseErrorKind::BadNumber(s) => write!(f, "malformed number '{s}'"),
            ParseErrorKind::BadCharacter(c) => write!(f, "unexpected character '{c}'"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Num(String),
    Star,
    LBrace,
    RBrace,
    Comma,
    LBracket,
    RBracket,
    LParen,
    RParen,
    Bang,
    Amp,
    Pipe,
    Le,
    Ge,
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) | Tok::Num(s) => format!("'{s}'"),
            Tok::Eof => "end of input".into(),
            other => format!("'{}'", other.text()),
        }
    }

    fn text(&self) -> &'static str {
        match self {
            Tok::Star => "*",
            Tok::LBrace => "{",
            Tok::RBrace => "}",
            Tok::Comma => ",",
            Tok::LBracket => "[",
            Tok::RBracket => "]",
            Tok::LParen => "(",
            Tok::RParen => ")",
            Tok::Bang => "!",
            Tok::Amp => "&",
            Tok::Pipe => "|",
            Tok::Le => "<=",
            Tok::Ge => ">=",
            Tok::Ident(_) | Tok::Num(_) | Tok::Eof => "",
        }
    }
}

struct Spanned {
    tok: Tok,
    line: usize,
    col: usize,
}

fn lex(text: &str) -> Result<Vec<Spanned>, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut line, mut col) = (1, 1);
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let (start_line, start_col) = (line, col);
        let single = match c {
            '*' => Some(Tok::Star),
            '{' => Some(Tok::LBrace),
            '}' => Some(Tok::RBrace),
            ',' => Some(Tok::Comma),
            '[' => Some(Tok::LBracket),
            ']' => Some(Tok::RBracket),
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            '!' => Some(Tok::Bang),
            '&' => Some(Tok::Amp),
            '|' => Some(Tok::Pipe),
            _ => None,
        };
        if let Some(tok) = single {
            out.push(Spanned { tok, line, col });
            i += 1;
            col += 1;
            continue;
        }
        match c {
            '\n' => {
                line += 1;
                col = 1;
                i += 1;
            }
            c if c.is_whitespace() => {
                i += 1;
                col += 1;
            }
            '#' => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
            }
            '<' | '>' => {
                if chars.get(i + 1) != Some(&'=') {
                    return Err(ParseError {
                        line,
                        col,
                        kind: ParseErrorKind::BadCharacter(c),
                    });
                }
                let tok = if c == '<' { Tok::Le } else { Tok::Ge };
                out.push(Spanned { tok, line, col });
                i += 2;
                col += 2;
            }
            c if c.is_ascii_digit() || c == '.' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '.') {
                    // Allow a signed exponent, as in 1e-3.
                    if (chars[i] == 'e' || chars[i] == 'E') && matches!(chars.get(i + 1), Some('-' | '+')) {
                        i += 1;
                    }
                    i += 1;
                }
                let s: String = chars[start..i].iter().collect();
                col += i - start;
                out.push(Spanned {
                    tok: Tok::Num(s),
                    line: start_line,
                    col: start_col,
                });
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                let s: String = chars[start..i].iter().collect();
                col += i - start;
                out.push(Spanned {
                    tok: Tok::Ident(s),
                    line: start_line,
                    col: start_col,
                });
            }
            other => {
                return Err(ParseError {
                    line,
                    col,
                    kind: ParseErrorKind::BadCharacter(other),
                })
            }
        }
    }
    out.push(Spanned {
        tok: Tok::Eof,
        line,
        col,
    });
    Ok(out)
}

const PRIMARY: &[&str] = &["'!'", "'E'", "'A'", "'true'", "'false'", "variable", "'('"];

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
    bound: f64,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn bump(&mut self) -> &Spanned {
        let t = &self.toks[self.pos];
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error_here(&self, kind: ParseErrorKind) -> ParseError {
        let t = &self.toks[self.pos];
        ParseError {
            line: t.line,
            col: t.col,
            kind,
        }
    }

    fn unexpected(&self, expected: &[&str]) -> ParseError {
        self.error_here(ParseErrorKind::Unexpected {
            found: self.peek().describe(),
            expected: expected.iter().map(|s| s.to_string()).collect(),
        })
    }

    fn expect(&mut self, tok: Tok) -> Result<(), ParseError> {
        if *self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            Err(self.unexpected(&[&format!("'{}'", tok.text())]))
        }
    }

    fn is_ident(&self, name: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == name)
    }

    fn formula(&mut self) -> Result<Formula, ParseError> {
        let mut lhs = self.conj()?;
        while *self.peek() == Tok::Pipe {
            self.bump();
            let rhs = self.conj()?;
            lhs = Formula::or(lhs, rhs);
        }
        Ok(lhs)
    }

    fn conj(&mut self) -> Result<Formula, ParseError> {
        let mut lhs = self.unary()?;
        while *self.peek() == Tok::Amp {
            self.bump();
            let rhs = self.unary()?;
            lhs = Formula::and(lhs, rhs);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Formula, ParseError> {
        match self.peek().clone() {
            Tok::Bang => {
                self.bump();
                Ok(Formula::not(self.unary()?))
            }
            Tok::LParen => {
                self.bump();
                let f = self.formula()?;
                self.expect(Tok::RParen)?;
                Ok(f)
            }
            Tok::Ident(name) => match name.as_str() {
                "E" | "A" => {
                    self.bump();
                    let quant = if name == "E" {
                        Quantifier::Exists
                    } else {
                        Quantifier::Forall
                    };
                    self.temporal(quant)
                }
                "true" => {
                    self.bump();
                    Ok(Formula::True)
                }
                "false" => {
                    self.bump();
                    Ok(Formula::False)
                }
                _ => match variable_index(&name) {
                    Some(var) => {
                        self.bump();
                        self.atom(var)
                    }
                    None => Err(self.unexpected(PRIMARY)),
                },
            },
            _ => Err(self.unexpected(PRIMARY)),
        }
    }

    fn atom(&mut self, var: usize) -> Result<Formula, ParseError> {
        let rel = match self.peek() {
            Tok::Le => Relation::Le,
            Tok::Ge => Relation::Ge,
            _ => return Err(self.unexpected(&["'<='", "'>='"])),
        };
        self.bump();
        let at = self.pos;
        let threshold = self.number()?;
        if !(0.0..=self.bound).contains(&threshold) {
            self.pos = at;
            return Err(self.error_here(ParseErrorKind::ThresholdOutOfRange {
                value: threshold,
                bound: self.bound,
            }));
        }
        Ok(Formula::atom(var, rel, threshold))
    }

    fn number(&mut self) -> Result<f64, ParseError> {
        match self.peek().clone() {
            Tok::Num(s) => {
                let v = s
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| self.error_here(ParseErrorKind::BadNumber(s.clone())))?;
                self.bump();
                Ok(v)
            }
            _ => Err(self.unexpected(&["number"])),
        }
    }

    fn step_bound(&mut self) -> Result<u32, ParseError> {
        match self.peek().clone() {
            Tok::Num(s) => {
                let k: u32 = s
                    .parse()
                    .map_err(|_| self.error_here(ParseErrorKind::BadNumber(s.clone())))?;
                if k == 0 {
                    return Err(self.error_here(ParseErrorKind::ZeroBound));
                }
                self.bump();
                Ok(k)
            }
            _ => Err(self.unexpected(&["step bound"])),
        }
    }

    fn dirs(&mut self) -> Result<DirSet, ParseError> {
        match self.peek() {
            Tok::Star => {
                self.bump();
                Ok(DirSet::ALL)
            }
            Tok::LBrace => {
                let open = self.pos;
                self.bump();
                let mut set = DirSet::EMPTY;
                if *self.peek() != Tok::RBrace {
                    loop {
                        match self.peek().clone() {
                            Tok::Ident(s) => match s.parse::<Direction>() {
                                Ok(d) => {
                                    set.insert(d);
                                    self.bump();
                                }
                                Err(_) => return Err(self.unexpected(&["'NW'", "'NE'", "'SE'", "'SW'"])),
                            },
                            _ => return Err(self.unexpected(&["'NW'", "'NE'", "'SE'", "'SW'"])),
                        }
                        if *self.peek() == Tok::Comma {
                            self.bump();
                        } else {
                            break;
                        }
                    }
                }
                self.expect(Tok::RBrace)?;
                if set.is_empty() {
                    self.pos = open;
                    return Err(self.error_here(ParseErrorKind::EmptyDirSet));
                }
                Ok(set)
            }
            _ => Err(self.unexpected(&["'*'", "'{'"])),
        }
    }

    fn temporal(&mut self, quant: Quantifier) -> Result<Formula, ParseError> {
        let dirs = self.dirs()?;
        if *self.peek() == Tok::LBracket {
            self.bump();
            let lhs = self.formula()?;
            if !self.is_ident("U") {
                return Err(self.unexpected(&["'U'", "'&'", "'|'"]));
            }
            self.bump();
            let k = self.step_bound()?;
            let rhs = self.formula()?;
            self.expect(Tok::RBracket)?;
            return Ok(Formula::until(quant, dirs, k, lhs, rhs));
        }
        let op = match self.peek() {
            Tok::Ident(s) if s == "X" || s == "F" || s == "G" => s.clone(),
            _ => return Err(self.unexpected(&["'X'", "'F'", "'G'", "'['"])),
        };
        self.bump();
        match op.as_str() {
            "X" => Ok(Formula::next(quant, dirs, self.unary()?)),
            "F" => {
                let k = self.step_bound()?;
                Ok(Formula::eventually(quant, dirs, k, self.unary()?))
            }
            _ => {
                let k = self.step_bound()?;
                Ok(Formula::globally(quant, dirs, k, self.unary()?))
            }
        }
    }
}

/// `m` and `m1` name variable 0, `m2` variable 1, and so on.
fn variable_index(name: &str) -> Option<usize> {
    let rest = name.strip_prefix('m')?;
    if rest.is_empty() {
        return Some(0);
    }
    if rest.starts_with('0') {
        return None;
    }
    rest.parse::<usize>().ok().map(|n| n - 1)
}

/// Parses a formula with thresholds bounded by 1.
pub fn parse(text: &str) -> Result<Formula, ParseError> {
    parse_with_bound(text, 1.0)
}

/// Parses a formula whose atom thresholds must lie in `[0, bound]`.
pub fn parse_with_bound(text: &str, bound: f64) -> Result<Formula, ParseError> {
    let mut p = Parser {
        toks: lex(text)?,
        pos: 0,
        bound,
    };
    let f = p.formula()?;
    if *p.peek() != Tok::Eof {
        return Err(p.unexpected(&["'&'", "'|'", "end of input"]));
    }
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dirs(s: &str) -> DirSet {
        s.parse().unwrap()
    }

    #[test]
    fn checkerboard_formula_structure() {
        let f = parse("A * X A * X ( A {SW,NE} X (m >= 1) & A {NW,SE} X (m <= 0) )").unwrap();
        let inner = Formula::and(
            Formula::next(Quantifier::Forall, dirs("{NE,SW}"), Formula::atom(0, Relation::Ge, 1.0)),
            Formula::next(Quantifier::Forall, dirs("{NW,SE}"), Formula::atom(0, Relation::Le, 0.0)),
        );
        let expected = Formula::next(
            Quantifier::Forall,
            DirSet::ALL,
            Formula::next(Quantifier::Forall, DirSet::ALL, inner),
        );
        assert_eq!(f, expected);
    }

    #[test]
    fn minimal_next() {
        assert_eq!(
            parse("E {NW} X true").unwrap(),
            Formula::next(Quantifier::Exists, dirs("{NW}"), Formula::True)
        );
    }

    #[test]
    fn sugar_expands() {
        let f = parse("A * F 2 (m >= 1)").unwrap();
        assert_eq!(
            f,
            Formula::until(
                Quantifier::Forall,
                DirSet::ALL,
                2,
                Formula::True,
                Formula::atom(0, Relation::Ge, 1.0)
            )
        );
        let g = parse("E {NW} G 3 m2 <= 0.5").unwrap();
        let body = Formula::not(Formula::atom(1, Relation::Le, 0.5));
        assert_eq!(
            g,
            Formula::not(Formula::until(Quantifier::Forall, dirs("{NW}"), 3, Formula::True, body))
        );
        let o = parse("true | false").unwrap();
        assert_eq!(o, Formula::or(Formula::True, Formula::False));
    }

    #[test]
    fn precedence_and_associativity() {
        let f = parse("m >= 0.1 | m >= 0.2 & m >= 0.3 | !m >= 0.4").unwrap();
        let a = |t| Formula::atom(0, Relation::Ge, t);
        let expected = Formula::or(Formula::or(a(0.1), Formula::and(a(0.2), a(0.3))), Formula::not(a(0.4)));
        assert_eq!(f, expected);
    }

    #[test]
    fn until_and_comments() {
        let f = parse("# spots\nE {NW,NE} [ m >= 0.2 U 3 m <= 0.1 ] # trailing\n").unwrap();
        assert_eq!(
            f,
            Formula::until(
                Quantifier::Exists,
                dirs("{NW,NE}"),
                3,
                Formula::atom(0, Relation::Ge, 0.2),
                Formula::atom(0, Relation::Le, 0.1)
            )
        );
    }

    #[test]
    fn error_positions_and_kinds() {
        let e = parse("E {} X true").unwrap_err();
        assert_eq!((e.line, e.col, e.kind.clone()), (1, 3, ParseErrorKind::EmptyDirSet));
        let e = parse("A * F 0 true").unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::ZeroBound);
        assert_eq!(e.col, 7);
        let e = parse("m >= 1.5").unwrap_err();
        assert!(matches!(e.kind, ParseErrorKind::ThresholdOutOfRange { .. }));
        assert!(parse_with_bound("m >= 1.5", 2.0).is_ok());
        let e = parse("true &\n  ) ").unwrap_err();
        assert_eq!((e.line, e.col), (2, 3));
        match e.kind {
            ParseErrorKind::Unexpected { found, expected } => {
                assert_eq!(found, "')'");
                assert!(expected.contains(&"'E'".to_string()));
            }
            other => panic!("{other:?}"),
        }
        assert!(parse("E * Y true").is_err());
        assert!(parse("m < 1").is_err());
        assert!(parse("(true").is_err());
        assert!(parse("true true").is_err());
        assert!(parse("m0 >= 1").is_err());
        assert!(parse("E {NW,XX} X true").is_err());
    }

    #[test]
    fn printer_round_trips() {
        for text in [
            "A * X A * X ( A {SW,NE} X (m >= 1) & A {NW,SE} X (m <= 0) )",
            "E {NW} X true",
            "A * F 2 ( A {SW,NE} X (m >= 1) & A {NW,SE} X (m <= 0) )",
            "E {SE} G 2 m3 <= 0.25 | !false",
            "E * [ m >= 0.125 U 4 A {NE} X m <= 0.7 ] & A {NW,SW} G 1 true",
            "!(m >= 0.3 | m <= 0.2) & !!true",
        ] {
            let f = parse(text).unwrap();
            let printed = f.to_string();
            assert_eq!(parse(&printed).unwrap(), f, "{printed}");
        }
    }
}

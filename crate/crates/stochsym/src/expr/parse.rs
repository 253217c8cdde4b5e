//! Expression text parser.
//!
//! Grammar (whitespace free between tokens):
//!
//! ```text
//! expr   := term (('+'|'-') term)*
//! term   := factor (('*'|'/') factor)*
//! factor := '-' factor | atom ('^' atom)?
//! atom   := NUMBER | IDENT | IDENT '(' expr ')' | '(' expr ')' | '-' atom
//! ```
//!
//! `^` is deliberately non-associative: `x1^2^3` is a parse error rather
//! than a silent precedence choice. Unary minus binds looser than `^`, so
//! `-x1^2` is `-(x1^2)`; write `(-x1)^2` for the other reading. Exponents
//! still take a bare sign (`x1^-2`) because the exponent slot is an atom.
//! Function names (`exp log sin cos sqrt`) are reserved; every other
//! identifier must be a variable of the declared space.

use super::{Expression, UnOp, VariableSpace};
use crate::error::Error;

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
}

#[derive(Debug, Clone)]
struct Lexed {
    tok: Tok,
    line: usize,
    col: usize,
}

fn lex(text: &str) -> Result<Vec<Lexed>, Error> {
    let mut out = Vec::new();
    let mut line = 1usize;
    let mut col = 1usize;
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        let (tline, tcol) = (line, col);
        let mut push = |tok: Tok| {
            out.push(Lexed { tok, line: tline, col: tcol });
        };
        match c {
            '\n' => {
                line += 1;
                col = 1;
                i += 1;
                continue;
            }
            ' ' | '\t' | '\r' => {}
            '+' => push(Tok::Plus),
            '-' => push(Tok::Minus),
            '*' => push(Tok::Star),
            '/' => push(Tok::Slash),
            '^' => push(Tok::Caret),
            '(' => push(Tok::LParen),
            ')' => push(Tok::RParen),
            '0'..='9' | '.' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                // exponent part: e or E, optional sign, at least one digit
                if i < bytes.len()
                    && (bytes[i] == b'e' || bytes[i] == b'E')
                    && {
                        let mut j = i + 1;
                        if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                            j += 1;
                        }
                        j < bytes.len() && bytes[j].is_ascii_digit()
                    }
                {
                    i += 1;
                    if bytes[i] == b'+' || bytes[i] == b'-' {
                        i += 1;
                    }
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                let s = &text[start..i];
                let v: f64 = s.parse().map_err(|_| Error::Parse {
                    line: tline,
                    col: tcol,
                    msg: format!("bad number literal `{s}`"),
                })?;
                out.push(Lexed { tok: Tok::Num(v), line: tline, col: tcol });
                col += i - start;
                continue;
            }
            'a'..='z' | 'A'..='Z' | '_' => {
                let start = i;
                while i < bytes.len()
                    && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_')
                {
                    i += 1;
                }
                out.push(Lexed {
                    tok: Tok::Ident(text[start..i].to_string()),
                    line: tline,
                    col: tcol,
                });
                col += i - start;
                continue;
            }
            _ => {
                return Err(Error::Parse {
                    line,
                    col,
                    msg: format!("unexpected character `{c}`"),
                })
            }
        }
        i += 1;
        col += 1;
    }
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<Lexed>,
    pos: usize,
    space: &'a VariableSpace,
    end_line: usize,
    end_col: usize,
}

const FUNCTIONS: [(&str, UnOp); 5] = [
    ("exp", UnOp::Exp),
    ("log", UnOp::Log),
    ("sin", UnOp::Sin),
    ("cos", UnOp::Cos),
    ("sqrt", UnOp::Sqrt),
];

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|l| &l.tok)
    }

    fn here(&self) -> (usize, usize) {
        self.toks
            .get(self.pos)
            .map(|l| (l.line, l.col))
            .unwrap_or((self.end_line, self.end_col))
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|l| l.tok.clone());
        self.pos += 1;
        t
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        let (line, col) = self.here();
        Error::Parse { line, col, msg: msg.into() }
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), Error> {
        if self.peek() == Some(&tok) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(format!("expected {what}")))
        }
    }

    fn expr(&mut self) -> Result<Expression, Error> {
        let mut acc = self.term()?;
        loop {
            match self.peek() {
                Some(Tok::Plus) => {
                    self.pos += 1;
                    acc = Expression::add(acc, self.term()?);
                }
                Some(Tok::Minus) => {
                    self.pos += 1;
                    acc = Expression::sub(acc, self.term()?);
                }
                _ => return Ok(acc),
            }
        }
    }

    fn term(&mut self) -> Result<Expression, Error> {
        let mut acc = self.factor()?;
        loop {
            match self.peek() {
                Some(Tok::Star) => {
                    self.pos += 1;
                    acc = Expression::mul(acc, self.factor()?);
                }
                Some(Tok::Slash) => {
                    self.pos += 1;
                    acc = Expression::div(acc, self.factor()?);
                }
                _ => return Ok(acc),
            }
        }
    }

    fn factor(&mut self) -> Result<Expression, Error> {
        // unary minus binds looser than `^`: -x^2 is -(x^2)
        if self.peek() == Some(&Tok::Minus) {
            self.pos += 1;
            return Ok(Expression::neg(self.factor()?));
        }
        let base = self.atom()?;
        if self.peek() == Some(&Tok::Caret) {
            self.pos += 1;
            let exp = self.atom()?;
            if self.peek() == Some(&Tok::Caret) {
                return Err(self.err(
                    "`^` does not chain; parenthesize one of the powers",
                ));
            }
            return Ok(Expression::pow(base, exp));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expression, Error> {
        let (line, col) = self.here();
        match self.bump() {
            Some(Tok::Num(v)) => Ok(Expression::num(v)),
            Some(Tok::Minus) => Ok(Expression::neg(self.atom()?)),
            Some(Tok::LParen) => {
                let inner = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(inner)
            }
            Some(Tok::Ident(name)) => {
                if let Some((_, op)) =
                    FUNCTIONS.iter().find(|(f, _)| *f == name.as_str())
                {
                    self.expect(Tok::LParen, &format!("`(` after `{name}`"))?;
                    let arg = self.expr()?;
                    self.expect(Tok::RParen, "`)`")?;
                    return Ok(Expression::apply_un(*op, arg));
                }
                match self.space.lookup(&name) {
                    Some(v) => Ok(Expression::var(v)),
                    None => Err(Error::UnknownName { name, line, col }),
                }
            }
            Some(_) => Err(Error::Parse {
                line,
                col,
                msg: "expected a number, variable, function or `(`".into(),
            }),
            None => Err(Error::Parse {
                line,
                col,
                msg: "unexpected end of expression".into(),
            }),
        }
    }
}

impl Expression {
    /// Parses expression text relative to a variable space.
    pub fn parse(text: &str, space: &VariableSpace) -> Result<Expression, Error> {
        let toks = lex(text)?;
        if toks.is_empty() {
            return Err(Error::Parse { line: 1, col: 1, msg: "empty expression".into() });
        }
        let (end_line, end_col) = toks
            .last()
            .map(|l| (l.line, l.col + 1))
            .unwrap_or((1, 1));
        let mut p = Parser { toks, pos: 0, space, end_line, end_col };
        let e = p.expr()?;
        if p.pos != p.toks.len() {
            return Err(p.err("trailing input after expression"));
        }
        Ok(e)
    }
}

#[cfg(test)]
mod tests {
    use super::super::{Node, Point, Var};
    use super::*;

    fn sp() -> VariableSpace {
        VariableSpace::new(2, 1)
    }

    #[test]
    fn precedence_matches_grammar() {
        // ^ binds tighter than *, which binds tighter than +
        let e = Expression::parse("x1^2*t + 1/2", &sp()).unwrap();
        let p = Point::new(vec![3.0, 0.0], 2.0, vec![0.0]);
        assert_eq!(e.eval(&p).unwrap(), 18.5);
    }

    #[test]
    fn unary_minus_binds_looser_than_power() {
        // the grammar reads -x1^2 as -(x1^2)
        let e = Expression::parse("-x1^2", &sp()).unwrap();
        let p = Point::new(vec![3.0, 0.0], 0.0, vec![0.0]);
        assert_eq!(e.eval(&p).unwrap(), -9.0);
        let e2 = Expression::parse("(-x1)^2", &sp()).unwrap();
        assert_eq!(e2.eval(&p).unwrap(), 9.0);
        // exponents take a bare sign
        let e3 = Expression::parse("x1^-2", &sp()).unwrap();
        assert_eq!(e3.eval(&p).unwrap(), 1.0 / 9.0);
    }

    #[test]
    fn caret_does_not_chain() {
        assert!(Expression::parse("x1^2^3", &sp()).is_err());
    }

    #[test]
    fn functions_require_parentheses() {
        assert!(Expression::parse("exp x1", &sp()).is_err());
        assert!(Expression::parse("exp(x1)", &sp()).is_ok());
    }

    #[test]
    fn unknown_names_are_rejected_with_position() {
        match Expression::parse("x1 + q3", &sp()) {
            Err(Error::UnknownName { name, line, col }) => {
                assert_eq!(name, "q3");
                assert_eq!((line, col), (1, 6));
            }
            other => panic!("expected UnknownName, got {other:?}"),
        }
        // x3 is shaped like a variable but lies outside the space
        assert!(Expression::parse("x3", &sp()).is_err());
    }

    #[test]
    fn scientific_notation_lexes() {
        let e = Expression::parse("1.5e-3 + 2E2", &sp()).unwrap();
        assert_eq!(e.as_num(), Some(200.0015));
    }

    #[test]
    fn double_negation_and_signed_factors() {
        let p = Point::new(vec![4.0, 0.0], 0.0, vec![0.0]);
        let e = Expression::parse("2*-x1", &sp()).unwrap();
        assert_eq!(e.eval(&p).unwrap(), -8.0);
        let e = Expression::parse("x1 - -x1", &sp()).unwrap();
        assert_eq!(e.eval(&p).unwrap(), 8.0);
    }

    #[test]
    fn negative_exponent_atom() {
        let e = Expression::parse("x1^-1", &sp()).unwrap();
        let p = Point::new(vec![4.0, 0.0], 0.0, vec![0.0]);
        assert_eq!(e.eval(&p).unwrap(), 0.25);
    }

    #[test]
    fn parse_errors_carry_position() {
        match Expression::parse("x1 + (t", &sp()) {
            Err(Error::Parse { line, col, .. }) => assert_eq!((line, col), (1, 8)),
            other => panic!("expected Parse error, got {other:?}"),
        }
    }

    #[test]
    fn trailing_input_is_an_error() {
        assert!(Expression::parse("x1 x2", &sp()).is_err());
        assert!(Expression::parse("(x1))", &sp()).is_err());
    }

    #[test]
    fn whitespace_and_newlines_are_ignored() {
        let a = Expression::parse("x1\n  + \t x2", &sp()).unwrap();
        match a.node() {
            Node::Bin(super::super::BinOp::Add, l, r) => {
                assert!(l.depends_on(Var::State(0)));
                assert!(r.depends_on(Var::State(1)));
            }
            _ => panic!("expected Add node"),
        }
    }
}

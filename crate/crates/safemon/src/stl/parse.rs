//! Recursive-descent parser for the STL formula text grammar.
//!
//! Grammar (whitespace-insensitive, UTF-8):
//!
//! ```text
//! formula  := and_or
//! or       := and ('|' and)*
//! and      := until ('&' until)*
//! until    := unary ('U' '[' a ',' b ']' until)?
//! unary    := '!' unary
//!           | 'G' '[' a ',' b ']' unary
//!           | 'F' '[' a ',' b ']' unary
//!           | '(' formula ')'
//!           | atom
//! atom     := arith ('>' | '<') arith
//! arith    := term (('+' | '-') term)*
//! term     := factor (('*' | '/') factor)*
//! factor   := number | 's' '[' i ']' | 'abs' '(' arith ')'
//!           | 'min' '(' arith ',' arith ')' | 'max' '(' arith ',' arith ')'
//!           | 'dist' '(' '(' arith ',' arith ')' ',' '(' arith ',' arith ')' ')'
//!           | '-' factor | '(' arith ')'
//! ```
//!
//! Comparisons are canonicalized to margins: `e1 > e2` becomes `e1 - e2` and
//! `e1 < e2` becomes `e2 - e1`, both read as "margin > 0". Temporal prefixes
//! bind to the immediately following unary unit; precedence is
//! `!` > `G`/`F` > `U` > `&` > `|`.

use super::{Expr, StlFormula};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("state index {index} out of range at byte {offset} (state dimension is {dim})")]
    IndexOutOfRange {
        offset: usize,
        index: usize,
        dim: usize,
    },
    #[error("bad interval [{a},{b}] at byte {offset}: upper bound below lower bound")]
    BadInterval { offset: usize, a: usize, b: usize },
}

/// Parses a formula, checking every `s[i]` against `state_dim`.
pub fn parse_formula(text: &str, state_dim: usize) -> Result<StlFormula, ParseError> {
    let mut p = Parser {
        bytes: text.as_bytes(),
        pos: 0,
        dim: state_dim,
    };
    let f = p.formula()?;
    p.skip_ws();
    if p.pos < p.bytes.len() {
        return Err(p.err("unexpected trailing input"));
    }
    Ok(f)
}

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
    dim: usize,
}

impl<'a> Parser<'a> {
    fn err(&self, message: &str) -> ParseError {
        ParseError::Syntax {
            offset: self.pos,
            message: message.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.bytes.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: u8) -> Result<(), ParseError> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.err(&format!("expected '{}'", c as char)))
        }
    }

    /// Matches a keyword followed by a non-identifier character.
    fn eat_keyword(&mut self, kw: &str) -> bool {
        self.skip_ws();
        let end = self.pos + kw.len();
        if self.bytes.get(self.pos..end) == Some(kw.as_bytes()) {
            let boundary = self
                .bytes
                .get(end)
                .map_or(true, |c| !c.is_ascii_alphanumeric() && *c != b'_');
            if boundary {
                self.pos = end;
                return true;
            }
        }
        false
    }

    fn formula(&mut self) -> Result<StlFormula, ParseError> {
        let mut lhs = self.and_formula()?;
        while self.eat(b'|') {
            let rhs = self.and_formula()?;
            lhs = StlFormula::Or(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn and_formula(&mut self) -> Result<StlFormula, ParseError> {
        let mut lhs = self.until_formula()?;
        while self.eat(b'&') {
            let rhs = self.until_formula()?;
            lhs = StlFormula::And(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn until_formula(&mut self) -> Result<StlFormula, ParseError> {
        let lhs = self.unary_formula()?;
        if self.eat_keyword("U") {
            let (a, b) = self.interval()?;
            let rhs = self.until_formula()?;
            return Ok(StlFormula::Until(a, b, Box::new(lhs), Box::new(rhs)));
        }
        Ok(lhs)
    }

    fn unary_formula(&mut self) -> Result<StlFormula, ParseError> {
        if self.eat(b'!') {
            return Ok(StlFormula::Not(Box::new(self.unary_formula()?)));
        }
        if self.eat_keyword("G") {
            let (a, b) = self.interval()?;
            return Ok(StlFormula::Always(a, b, Box::new(self.unary_formula()?)));
        }
        if self.eat_keyword("F") {
            let (a, b) = self.interval()?;
            return Ok(StlFormula::Eventually(a, b, Box::new(self.unary_formula()?)));
        }
        if self.peek() == Some(b'(') {
            // '(' may open a parenthesized formula or an arithmetic
            // sub-expression of an atom; try the formula reading first and
            // backtrack on failure.
            let save = self.pos;
            self.pos += 1;
            if let Ok(inner) = self.formula() {
                if self.eat(b')') {
                    return Ok(inner);
                }
            }
            self.pos = save;
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<StlFormula, ParseError> {
        let lhs = self.arith()?;
        match self.peek() {
            Some(b'>') => {
                self.pos += 1;
                let rhs = self.arith()?;
                Ok(StlFormula::Atom(margin(lhs, rhs)))
            }
            Some(b'<') => {
                self.pos += 1;
                let rhs = self.arith()?;
                Ok(StlFormula::Atom(margin(rhs, lhs)))
            }
            _ => Err(self.err("expected comparison '>' or '<'")),
        }
    }

    fn interval(&mut self) -> Result<(usize, usize), ParseError> {
        self.expect(b'[')?;
        let start = self.pos;
        let a = self.integer()?;
        self.expect(b',')?;
        let b = self.integer()?;
        self.expect(b']')?;
        if b < a {
            return Err(ParseError::BadInterval {
                offset: start,
                a,
                b,
            });
        }
        Ok((a, b))
    }

    fn integer(&mut self) -> Result<usize, ParseError> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if self.pos == start {
            return Err(self.err("expected nonnegative integer"));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .unwrap()
            .parse()
            .map_err(|_| self.err("integer literal out of range"))
    }

    fn arith(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            if self.eat(b'+') {
                lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat(b'-') {
                lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.factor()?;
        loop {
            if self.eat(b'*') {
                lhs = Expr::Mul(Box::new(lhs), Box::new(self.factor()?));
            } else if self.eat(b'/') {
                lhs = Expr::Div(Box::new(lhs), Box::new(self.factor()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn factor(&mut self) -> Result<Expr, ParseError> {
        if self.eat(b'-') {
            return Ok(Expr::Neg(Box::new(self.factor()?)));
        }
        if self.eat_keyword("abs") {
            self.expect(b'(')?;
            let e = self.arith()?;
            self.expect(b')')?;
            return Ok(Expr::Abs(Box::new(e)));
        }
        if self.eat_keyword("min") {
            let (a, b) = self.pair()?;
            return Ok(Expr::Min(Box::new(a), Box::new(b)));
        }
        if self.eat_keyword("max") {
            let (a, b) = self.pair()?;
            return Ok(Expr::Max(Box::new(a), Box::new(b)));
        }
        if self.eat_keyword("dist") {
            self.expect(b'(')?;
            let (ax, ay) = self.paren_pair()?;
            self.expect(b',')?;
            let (bx, by) = self.paren_pair()?;
            self.expect(b')')?;
            return Ok(Expr::Dist(
                Box::new(ax),
                Box::new(ay),
                Box::new(bx),
                Box::new(by),
            ));
        }
        if self.eat_keyword("s") {
            self.expect(b'[')?;
            let at = self.pos;
            let i = self.integer()?;
            self.expect(b']')?;
            if i >= self.dim {
                return Err(ParseError::IndexOutOfRange {
                    offset: at,
                    index: i,
                    dim: self.dim,
                });
            }
            return Ok(Expr::State(i));
        }
        if self.eat(b'(') {
            let e = self.arith()?;
            self.expect(b')')?;
            return Ok(e);
        }
        self.number()
    }

    fn pair(&mut self) -> Result<(Expr, Expr), ParseError> {
        self.expect(b'(')?;
        let a = self.arith()?;
        self.expect(b',')?;
        let b = self.arith()?;
        self.expect(b')')?;
        Ok((a, b))
    }

    fn paren_pair(&mut self) -> Result<(Expr, Expr), ParseError> {
        self.pair()
    }

    fn number(&mut self) -> Result<Expr, ParseError> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.bytes.len()
            && (self.bytes[self.pos].is_ascii_digit() || self.bytes[self.pos] == b'.')
        {
            self.pos += 1;
        }
        // exponent part
        if self.pos > start && self.bytes.get(self.pos).map_or(false, |&c| c == b'e' || c == b'E') {
            let mut p = self.pos + 1;
            if self.bytes.get(p).map_or(false, |&c| c == b'+' || c == b'-') {
                p += 1;
            }
            if self.bytes.get(p).map_or(false, |c| c.is_ascii_digit()) {
                self.pos = p;
                while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
            }
        }
        if self.pos == start {
            return Err(self.err("expected a number, state access, or function"));
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap();
        text.parse()
            .map(Expr::Const)
            .map_err(|_| ParseError::Syntax {
                offset: start,
                message: format!("bad numeric literal '{text}'"),
            })
    }
}

fn margin(greater: Expr, lesser: Expr) -> Expr {
    // e > 0 stays e; anything else becomes the difference.
    if lesser == Expr::Const(0.0) {
        greater
    } else {
        Expr::Sub(Box::new(greater), Box::new(lesser))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stl::{robustness, satisfies};
    use crate::trace::Trace;

    #[test]
    fn parses_cartpole_formula() {
        let f = parse_formula(
            "G[0,19] ((12 - abs(s[3]) > 0) & (2.4 - abs(s[0]) > 0))",
            4,
        )
        .unwrap();
        assert_eq!(f.required_horizon(), 19);
        match &f {
            StlFormula::Always(0, 19, inner) => {
                assert!(matches!(**inner, StlFormula::And(_, _)))
            }
            other => panic!("unexpected shape: {other:?}"),
        }
    }

    #[test]
    fn parses_degenerate_window() {
        let f = parse_formula("G[0,0] (s[0] > 0)", 1).unwrap();
        assert_eq!(
            f,
            StlFormula::Always(0, 0, Box::new(StlFormula::Atom(Expr::State(0))))
        );
    }

    #[test]
    fn parses_eventually_with_offset() {
        let f = parse_formula("F[1,3] (s[1] - 2 > 0)", 2).unwrap();
        assert_eq!(
            f,
            StlFormula::Eventually(
                1,
                3,
                Box::new(StlFormula::Atom(Expr::Sub(
                    Box::new(Expr::State(1)),
                    Box::new(Expr::Const(2.0))
                )))
            )
        );
    }

    #[test]
    fn less_than_swaps_operands() {
        let f = parse_formula("s[0] < 3", 1).unwrap();
        let t = Trace::new(vec![vec![1.0]], 0.1).unwrap();
        assert_eq!(robustness(&f, &t, 0).unwrap(), 2.0);
    }

    #[test]
    fn index_out_of_range() {
        let err = parse_formula("s[4] > 0", 4).unwrap_err();
        assert!(matches!(
            err,
            ParseError::IndexOutOfRange { index: 4, dim: 4, .. }
        ));
    }

    #[test]
    fn interval_error() {
        let err = parse_formula("G[3,1] (s[0] > 0)", 1).unwrap_err();
        assert!(matches!(err, ParseError::BadInterval { a: 3, b: 1, .. }));
    }

    #[test]
    fn syntax_error_has_offset() {
        let err = parse_formula("G[0,2] (s[0] >", 1).unwrap_err();
        assert!(matches!(err, ParseError::Syntax { .. }));
    }

    #[test]
    fn precedence_or_binds_loosest() {
        // !a & b | c parses as ((!a) & b) | c
        let f = parse_formula("!(s[0] > 0) & s[0] > 1 | s[0] > 2", 1).unwrap();
        assert!(matches!(f, StlFormula::Or(_, _)));
    }

    #[test]
    fn until_parses_between_and_and_unary() {
        let f = parse_formula("(s[0] > 0) U[0,2] (s[0] - 4 > 0)", 1).unwrap();
        assert!(matches!(f, StlFormula::Until(0, 2, _, _)));
    }

    #[test]
    fn dist_atom() {
        let f = parse_formula("dist((s[0],s[1]),(1,0)) - 0.5 > 0", 2).unwrap();
        let t = Trace::new(vec![vec![0.0, 0.0]], 0.1).unwrap();
        assert!((robustness(&f, &t, 0).unwrap() - 0.5).abs() < 1e-12);
        assert!(satisfies(&f, &t, 0).unwrap());
    }

    #[test]
    fn whitespace_insensitive() {
        let a = parse_formula("G[0,2](s[0]>0)", 1).unwrap();
        let b = parse_formula("  G [ 0 , 2 ]  ( s[0] > 0 ) ", 1).unwrap();
        assert_eq!(a, b);
    }
}

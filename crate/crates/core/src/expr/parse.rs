use super::Expr;
use crate::error::{Error, Result};

/// Parses infix text over `x1..x{dim}` into an [`Expr`].
pub fn parse(text: &str, dim: usize) -> Result<Expr> {
    let mut p = Parser {
        src: text.as_bytes(),
        pos: 0,
        dim,
    };
    let e = p.sum()?;
    p.skip_ws();
    if p.pos < p.src.len() {
        return Err(p.err("unexpected trailing input"));
    }
    Ok(e)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    dim: usize,
}

impl Parser<'_> {
    fn err(&self, msg: &str) -> Error {
        Error::Syntax {
            pos: self.pos,
            msg: msg.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn sum(&mut self) -> Result<Expr> {
        let mut lhs = self.product()?;
        loop {
            if self.eat(b'+') {
                lhs = lhs + self.product()?;
            } else if self.eat(b'-') {
                lhs = lhs - self.product()?;
            } else {
                return Ok(lhs);
            }
        }
    }

    fn product(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat(b'*') {
                lhs = lhs * self.unary()?;
            } else if self.eat(b'/') {
                lhs = lhs / self.unary()?;
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat(b'-') {
            Ok(-self.unary()?)
        } else {
            self.power()
        }
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if self.eat(b'^') {
            self.skip_ws();
            let start = self.pos;
            let n = self.digits();
            if n.is_empty() {
                self.pos = start;
                return Err(self.err("expected a non-negative integer exponent"));
            }
            let n: u32 = n
                .parse()
                .map_err(|_| self.err("exponent does not fit in 32 bits"))?;
            Ok(base.pow(n))
        } else {
            Ok(base)
        }
    }

    fn digits(&mut self) -> String {
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        String::from_utf8_lossy(&self.src[start..self.pos]).into_owned()
    }

    fn atom(&mut self) -> Result<Expr> {
        match self.peek() {
            None => Err(self.err("unexpected end of input")),
            Some(b'(') => {
                self.pos += 1;
                let e = self.sum()?;
                if !self.eat(b')') {
                    return Err(self.err("expected `)`"));
                }
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(b'x') => {
                let start = self.pos;
                self.pos += 1;
                let n = self.digits();
                let idx: usize = n.parse().map_err(|_| Error::Syntax {
                    pos: start,
                    msg: "expected variable index after `x`".into(),
                })?;
                if idx == 0 || idx > self.dim {
                    return Err(Error::VariableOutOfRange {
                        index: idx,
                        dim: self.dim,
                    });
                }
                Ok(Expr::Var(idx - 1))
            }
            Some(_) if self.src[self.pos..].starts_with(b"exp") => {
                self.pos += 3;
                if !self.eat(b'(') {
                    return Err(self.err("expected `(` after exp"));
                }
                let e = self.sum()?;
                if !self.eat(b')') {
                    return Err(self.err("expected `)`"));
                }
                Ok(e.exp())
            }
            Some(_) => Err(self.err("unexpected character")),
        }
    }

    fn number(&mut self) -> Result<Expr> {
        let start = self.pos;
        self.digits();
        if self.pos < self.src.len() && self.src[self.pos] == b'.' {
            self.pos += 1;
            self.digits();
        }
        if self.pos < self.src.len() && matches!(self.src[self.pos], b'e' | b'E') {
            let save = self.pos;
            self.pos += 1;
            if self.pos < self.src.len() && matches!(self.src[self.pos], b'+' | b'-') {
                self.pos += 1;
            }
            if self.digits().is_empty() {
                self.pos = save;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap_or("");
        text.parse::<f64>().map(Expr::Const).map_err(|_| Error::Syntax {
            pos: start,
            msg: format!("malformed number `{text}`"),
        })
    }
}

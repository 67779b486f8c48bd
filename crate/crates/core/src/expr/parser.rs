//! Lexer and recursive-descent parser for propensity/observable formulas.
//!
//! Grammar (standard infix, `^` binds tightest, then unary minus, then
//! `*`/`/`, then `+`/`-`; same-precedence operators associate left):
//!
//! ```text
//! expr     := mul (('+'|'-') mul)*
//! mul      := unary (('*'|'/') unary)*
//! unary    := '-' unary | power
//! power    := atom ('^' exponent)*
//! exponent := ['-'] INT | '(' ['-'] INT ')'
//! atom     := NUMBER | IDENT | FUNC '(' expr [',' expr] ')' | '(' expr ')'
//! ```
//!
//! Exponents are restricted to integer literals so derivatives stay exact.

use super::{Ast, BinOp, ExprError, Func1, Func2, SymbolRef};

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
    Comma,
    Eof,
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer {
            src: src.as_bytes(),
            pos: 0,
        }
    }

    fn tokens(mut self) -> Result<Vec<(Tok, usize)>, ExprError> {
        let mut out = Vec::new();
        loop {
            while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.pos >= self.src.len() {
                out.push((Tok::Eof, self.pos));
                return Ok(out);
            }
            let start = self.pos;
            let c = self.src[self.pos];
            let tok = match c {
                b'+' => {
                    self.pos += 1;
                    Tok::Plus
                }
                b'-' => {
                    self.pos += 1;
                    Tok::Minus
                }
                b'*' => {
                    self.pos += 1;
                    Tok::Star
                }
                b'/' => {
                    self.pos += 1;
                    Tok::Slash
                }
                b'^' => {
                    self.pos += 1;
                    Tok::Caret
                }
                b'(' => {
                    self.pos += 1;
                    Tok::LParen
                }
                b')' => {
                    self.pos += 1;
                    Tok::RParen
                }
                b',' => {
                    self.pos += 1;
                    Tok::Comma
                }
                b'0'..=b'9' | b'.' => self.number(start)?,
                c if c.is_ascii_alphabetic() || c == b'_' => {
                    while self.pos < self.src.len()
                        && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
                    {
                        self.pos += 1;
                    }
                    Tok::Ident(String::from_utf8_lossy(&self.src[start..self.pos]).into_owned())
                }
                other => {
                    return Err(ExprError::Syntax {
                        offset: start,
                        message: format!("unexpected character `{}`", other as char),
                    })
                }
            };
            out.push((tok, start));
        }
    }

    fn number(&mut self, start: usize) -> Result<Tok, ExprError> {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if self.pos < self.src.len() && self.src[self.pos] == b'.' {
            self.pos += 1;
            while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
        }
        if self.pos < self.src.len() && (self.src[self.pos] == b'e' || self.src[self.pos] == b'E') {
            let mark = self.pos;
            self.pos += 1;
            if self.pos < self.src.len() && (self.src[self.pos] == b'+' || self.src[self.pos] == b'-')
            {
                self.pos += 1;
            }
            if self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
            } else {
                // `e` belongs to a following identifier, not this number
                self.pos = mark;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii slice");
        text.parse::<f64>().map(Tok::Num).map_err(|_| ExprError::Syntax {
            offset: start,
            message: format!("malformed number `{text}`"),
        })
    }
}

pub(super) struct Parser<'a> {
    toks: Vec<(Tok, usize)>,
    cursor: usize,
    species: &'a [&'a str],
    params: &'a [&'a str],
}

impl<'a> Parser<'a> {
    pub(super) fn parse(
        text: &str,
        species: &'a [&'a str],
        params: &'a [&'a str],
    ) -> Result<Ast, ExprError> {
        if text.trim().is_empty() {
            return Err(ExprError::Syntax {
                offset: 0,
                message: "empty expression".into(),
            });
        }
        let toks = Lexer::new(text).tokens()?;
        let mut p = Parser {
            toks,
            cursor: 0,
            species,
            params,
        };
        let ast = p.additive()?;
        let (tok, off) = p.peek();
        if *tok != Tok::Eof {
            return Err(ExprError::Syntax {
                offset: off,
                message: "trailing input after expression".into(),
            });
        }
        Ok(ast)
    }

    fn peek(&self) -> (&Tok, usize) {
        let (t, o) = &self.toks[self.cursor];
        (t, *o)
    }

    fn bump(&mut self) -> (Tok, usize) {
        let item = self.toks[self.cursor].clone();
        if self.cursor + 1 < self.toks.len() {
            self.cursor += 1;
        }
        item
    }

    fn additive(&mut self) -> Result<Ast, ExprError> {
        let mut lhs = self.multiplicative()?;
        loop {
            let (tok, pos) = self.peek();
            let op = match tok {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.multiplicative()?;
            lhs = Ast::Bin {
                op,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
                pos,
            };
        }
    }

    fn multiplicative(&mut self) -> Result<Ast, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            let (tok, pos) = self.peek();
            let op = match tok {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Ast::Bin {
                op,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
                pos,
            };
        }
    }

    fn unary(&mut self) -> Result<Ast, ExprError> {
        if let (Tok::Minus, _) = self.peek() {
            self.bump();
            let inner = self.unary()?;
            return Ok(Ast::Neg(Box::new(inner)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Ast, ExprError> {
        let mut base = self.atom()?;
        while let (Tok::Caret, _) = self.peek() {
            self.bump();
            let n = self.exponent()?;
            base = Ast::Pow(Box::new(base), n);
        }
        Ok(base)
    }

    fn exponent(&mut self) -> Result<i32, ExprError> {
        let parenthesized = matches!(self.peek().0, Tok::LParen);
        if parenthesized {
            self.bump();
        }
        let negate = matches!(self.peek().0, Tok::Minus);
        if negate {
            self.bump();
        }
        let (tok, off) = self.bump();
        let n = match tok {
            Tok::Num(v) if v.fract() == 0.0 && v.abs() <= i32::MAX as f64 => v as i32,
            _ => {
                return Err(ExprError::Syntax {
                    offset: off,
                    message: "exponent must be an integer literal".into(),
                })
            }
        };
        if parenthesized {
            let (tok, off) = self.bump();
            if tok != Tok::RParen {
                return Err(ExprError::Syntax {
                    offset: off,
                    message: "expected `)` after exponent".into(),
                });
            }
        }
        Ok(if negate { -n } else { n })
    }

    fn atom(&mut self) -> Result<Ast, ExprError> {
        let (tok, off) = self.bump();
        match tok {
            Tok::Num(v) => Ok(Ast::Const(v)),
            Tok::LParen => {
                let inner = self.additive()?;
                let (tok, off2) = self.bump();
                if tok != Tok::RParen {
                    return Err(ExprError::Syntax {
                        offset: off2,
                        message: "expected `)`".into(),
                    });
                }
                Ok(inner)
            }
            Tok::Ident(name) => self.ident(name, off),
            other => Err(ExprError::Syntax {
                offset: off,
                message: format!("unexpected token `{other:?}`"),
            }),
        }
    }

    fn ident(&mut self, name: String, off: usize) -> Result<Ast, ExprError> {
        let builtin1 = match name.as_str() {
            "exp" => Some(Func1::Exp),
            "log" => Some(Func1::Log),
            _ => None,
        };
        let builtin2 = match name.as_str() {
            "min" => Some(Func2::Min),
            "max" => Some(Func2::Max),
            _ => None,
        };
        if builtin1.is_some() || builtin2.is_some() {
            let (tok, off2) = self.bump();
            if tok != Tok::LParen {
                return Err(ExprError::Syntax {
                    offset: off2,
                    message: format!("expected `(` after function `{name}`"),
                });
            }
            let first = self.additive()?;
            if let Some(f) = builtin1 {
                let (tok, off3) = self.bump();
                if tok != Tok::RParen {
                    return Err(ExprError::Syntax {
                        offset: off3,
                        message: format!("`{name}` takes exactly one argument"),
                    });
                }
                return Ok(Ast::Call1 {
                    f,
                    arg: Box::new(first),
                    pos: off,
                });
            }
            let f = builtin2.expect("checked above");
            let (tok, off3) = self.bump();
            if tok != Tok::Comma {
                return Err(ExprError::Syntax {
                    offset: off3,
                    message: format!("`{name}` takes exactly two arguments"),
                });
            }
            let second = self.additive()?;
            let (tok, off4) = self.bump();
            if tok != Tok::RParen {
                return Err(ExprError::Syntax {
                    offset: off4,
                    message: format!("expected `)` to close `{name}`"),
                });
            }
            return Ok(Ast::Call2 {
                f,
                a: Box::new(first),
                b: Box::new(second),
            });
        }
        if let Some(i) = self.species.iter().position(|s| *s == name) {
            return Ok(Ast::Sym(SymbolRef::Species(i)));
        }
        if let Some(j) = self.params.iter().position(|p| *p == name) {
            return Ok(Ast::Sym(SymbolRef::Param(j)));
        }
        Err(ExprError::UnknownIdentifier { name, offset: off })
    }
}

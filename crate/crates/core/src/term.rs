//! Tiny parser for the parameterised names used by system and measure specs,
//! e.g. `random-expanding(2,3,0.5)` or `markov((0.9,0.1),(0.2,0.8))`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Term {
    Number(f64),
    List(Vec<Term>),
    Call(String, Vec<Term>),
}

impl Term {
    pub fn parse(text: &str) -> Result<Term> {
        let mut p = Parser {
            src: text.as_bytes(),
            pos: 0,
            text,
        };
        let t = p.term()?;
        p.skip_ws();
        if p.pos != p.src.len() {
            return Err(p.err("trailing input"));
        }
        Ok(t)
    }

    /// Name and argument list; a bare number is not a call.
    pub fn as_call(&self) -> Option<(&str, &[Term])> {
        match self {
            Term::Call(name, args) => Some((name.as_str(), args.as_slice())),
            _ => None,
        }
    }

    pub fn as_number(&self) -> Option<f64> {
        match self {
            Term::Number(v) => Some(*v),
            _ => None,
        }
    }

    /// A list of numbers, or a single number promoted to a one-element list.
    pub fn as_numbers(&self) -> Option<Vec<f64>> {
        match self {
            Term::Number(v) => Some(vec![*v]),
            Term::List(items) => items.iter().map(Term::as_number).collect(),
            Term::Call(..) => None,
        }
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    text: &'a str,
}

impl Parser<'_> {
    fn err(&self, what: &str) -> Error {
        Error::InvalidArgument(format!(
            "cannot parse '{}' at offset {}: {}",
            self.text, self.pos, what
        ))
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn term(&mut self) -> Result<Term> {
        self.skip_ws();
        match self.peek() {
            None => Err(self.err("unexpected end")),
            Some(b'(') => {
                self.pos += 1;
                Ok(Term::List(self.args()?))
            }
            Some(c) if c.is_ascii_digit() || c == b'-' || c == b'+' || c == b'.' => {
                self.number()
            }
            Some(c) if c.is_ascii_alphabetic() => {
                let start = self.pos;
                while let Some(c) = self.peek() {
                    if c.is_ascii_alphanumeric() || c == b'-' || c == b'_' {
                        self.pos += 1;
                    } else {
                        break;
                    }
                }
                let name = self.text[start..self.pos].to_ascii_lowercase();
                self.skip_ws();
                if self.peek() == Some(b'(') {
                    self.pos += 1;
                    Ok(Term::Call(name, self.args()?))
                } else {
                    Ok(Term::Call(name, Vec::new()))
                }
            }
            Some(_) => Err(self.err("unexpected character")),
        }
    }

    // After an opening parenthesis: comma separated terms up to ')'.
    fn args(&mut self) -> Result<Vec<Term>> {
        let mut out = Vec::new();
        self.skip_ws();
        if self.peek() == Some(b')') {
            self.pos += 1;
            return Ok(out);
        }
        loop {
            out.push(self.term()?);
            self.skip_ws();
            match self.peek() {
                Some(b',') => self.pos += 1,
                Some(b')') => {
                    self.pos += 1;
                    return Ok(out);
                }
                _ => return Err(self.err("expected ',' or ')'")),
            }
        }
    }

    fn number(&mut self) -> Result<Term> {
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c.is_ascii_digit() || matches!(c, b'-' | b'+' | b'.' | b'e' | b'E') {
                self.pos += 1;
            } else {
                break;
            }
        }
        self.text[start..self.pos]
            .parse::<f64>()
            .map(Term::Number)
            .map_err(|_| self.err("bad number"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_nested_calls() {
        let t = Term::parse("full-shift(2,(0.7,0.3))").unwrap();
        let (name, args) = t.as_call().unwrap();
        assert_eq!(name, "full-shift");
        assert_eq!(args[0].as_number(), Some(2.0));
        assert_eq!(args[1].as_numbers(), Some(vec![0.7, 0.3]));
    }

    #[test]
    fn bare_name_is_call_without_args() {
        let t = Term::parse(" doubling ").unwrap();
        assert_eq!(t, Term::Call("doubling".into(), vec![]));
    }

    #[test]
    fn rejects_garbage() {
        assert!(Term::parse("full-shift(2").is_err());
        assert!(Term::parse("a) b").is_err());
        assert!(Term::parse("").is_err());
    }
}

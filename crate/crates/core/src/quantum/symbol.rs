use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// One computational basis label of a user register.
///
/// Text form: digits print as decimals, a branch-relabelled symbol as
/// `b.inner`, bottom as `⊥b`, a fused pair as `(a,b)`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Symbol {
    Digit(u32),
    /// A symbol carried over from branch `branch` of a superposition.
    Branch { branch: u32, inner: Box<Symbol> },
    /// Placeholder for a user absent from branch `branch`.
    Bottom { branch: u32 },
    /// Registers of two tensor factors encoded into one.
    Fused(Box<Symbol>, Box<Symbol>),
}

impl Symbol {
    pub fn branch(branch: u32, inner: Symbol) -> Self {
        Symbol::Branch {
            branch,
            inner: Box::new(inner),
        }
    }

    /// Fuses two symbols; a pair of digits collapses into the mixed-radix digit
    /// `a + radix * b`.
    pub fn fuse(a: &Symbol, radix: u32, b: &Symbol) -> Self {
        match (a, b) {
            (Symbol::Digit(x), Symbol::Digit(y)) => Symbol::Digit(x + radix * y),
            _ => Symbol::Fused(Box::new(a.clone()), Box::new(b.clone())),
        }
    }
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Symbol::Digit(d) => write!(f, "{d}"),
            Symbol::Branch { branch, inner } => write!(f, "{branch}.{inner}"),
            Symbol::Bottom { branch } => write!(f, "⊥{branch}"),
            Symbol::Fused(a, b) => write!(f, "({a},{b})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("cannot parse symbol `{0}`")]
pub struct SymbolParseError(pub String);

struct Parser<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
}

impl Parser<'_> {
    fn number(&mut self) -> Option<u32> {
        let mut s = String::new();
        while let Some(c) = self.chars.peek().copied().filter(char::is_ascii_digit) {
            s.push(c);
            self.chars.next();
        }
        s.parse().ok()
    }

    fn symbol(&mut self) -> Option<Symbol> {
        match self.chars.peek()? {
            '⊥' => {
                self.chars.next();
                Some(Symbol::Bottom {
                    branch: self.number()?,
                })
            }
            '(' => {
                self.chars.next();
                let a = self.symbol()?;
                (self.chars.next()? == ',').then_some(())?;
                let b = self.symbol()?;
                (self.chars.next()? == ')').then_some(())?;
                Some(Symbol::Fused(Box::new(a), Box::new(b)))
            }
            _ => {
                let n = self.number()?;
                if self.chars.peek() == Some(&'.') {
                    self.chars.next();
                    Some(Symbol::branch(n, self.symbol()?))
                } else {
                    Some(Symbol::Digit(n))
                }
            }
        }
    }
}

impl FromStr for Symbol {
    type Err = SymbolParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut p = Parser {
            chars: s.chars().peekable(),
        };
        match p.symbol() {
            Some(sym) if p.chars.next().is_none() => Ok(sym),
            _ => Err(SymbolParseError(s.to_owned())),
        }
    }
}

impl Serialize for Symbol {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Symbol {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

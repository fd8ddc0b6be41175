//! Per-problem target vocabulary: operators, constants, then quantities.

use crate::expr::{Constant, Op, Token};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<Token>,
}

impl Vocab {
    /// All five operators, the three constants and `n_quantities` quantities.
    pub fn full(n_quantities: usize) -> Self {
        let mut tokens: Vec<Token> = Op::ALL.iter().map(|&op| Token::Op(op)).collect();
        tokens.extend(Constant::ALL.iter().map(|&c| Token::Const(c)));
        tokens.extend((0..n_quantities).map(Token::Quantity));
        Vocab { tokens }
    }

    /// A restricted vocabulary; duplicates are dropped, order is kept.
    pub fn new(tokens: impl IntoIterator<Item = Token>) -> Self {
        let mut out: Vec<Token> = Vec::new();
        for t in tokens {
            if !out.contains(&t) {
                out.push(t);
            }
        }
        Vocab { tokens: out }
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, index: usize) -> Token {
        self.tokens[index]
    }

    pub fn index_of(&self, token: Token) -> Option<usize> {
        self.tokens.iter().position(|&t| t == token)
    }

    pub fn contains(&self, token: Token) -> bool {
        self.index_of(token).is_some()
    }

    pub fn operators(&self) -> impl Iterator<Item = (usize, Token)> + '_ {
        self.tokens.iter().copied().enumerate().filter(|(_, t)| t.is_op())
    }

    pub fn numerics(&self) -> impl Iterator<Item = (usize, Token)> + '_ {
        self.tokens.iter().copied().enumerate().filter(|(_, t)| t.is_numeric())
    }

    pub fn operator_count(&self) -> usize {
        self.operators().count()
    }

    pub fn numeric_count(&self) -> usize {
        self.numerics().count()
    }
}

//! Expression trees over operators, constants and problem quantities.
//!
//! Trees are stored as an owned binary structure and move to and from a flat
//! prefix (preorder) token sequence. The prefix form is what the decoder emits
//! and what the fixer edits in place, so most of the crate works on
//! `&[Token]` and only converts to [`ExprTree`] at the edges.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative-or-absolute tolerance used when comparing an executed answer to
/// the ground truth.
pub const ANSWER_TOLERANCE: f64 = 1e-4;

/// Divisors smaller than this in magnitude are treated as zero.
pub const DIVISION_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Op {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl Op {
    pub const ALL: [Op; 5] = [Op::Add, Op::Sub, Op::Mul, Op::Div, Op::Pow];

    pub fn symbol(self) -> &'static str {
        match self {
            Op::Add => "+",
            Op::Sub => "-",
            Op::Mul => "*",
            Op::Div => "/",
            Op::Pow => "^",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Applies the operator, rejecting results that are not real numbers.
    pub fn apply(self, left: f64, right: f64) -> Result<f64, EvalError> {
        let value = match self {
            Op::Add => left + right,
            Op::Sub => left - right,
            Op::Mul => left * right,
            Op::Div => {
                if right.abs() < DIVISION_EPSILON {
                    return Err(EvalError::DivisionByZero);
                }
                left / right
            }
            Op::Pow => {
                if left < 0.0 && right.fract() != 0.0 {
                    return Err(EvalError::Domain);
                }
                left.powf(right)
            }
        };
        if value.is_finite() {
            Ok(value)
        } else {
            Err(EvalError::Domain)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Constant {
    One,
    Two,
    Pi,
}

impl Constant {
    pub const ALL: [Constant; 3] = [Constant::One, Constant::Two, Constant::Pi];

    pub fn value(self) -> f64 {
        match self {
            Constant::One => 1.0,
            Constant::Two => 2.0,
            Constant::Pi => std::f64::consts::PI,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Constant::One => "1",
            Constant::Two => "2",
            Constant::Pi => "pi",
        }
    }
}

/// One symbol of a problem's target vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Token {
    Op(Op),
    Const(Constant),
    /// Index into the problem's ordered quantity list.
    Quantity(usize),
}

impl Token {
    pub fn is_op(self) -> bool {
        matches!(self, Token::Op(_))
    }

    pub fn is_numeric(self) -> bool {
        !self.is_op()
    }

    /// Numeric value of a leaf token, `None` for operators or out-of-range
    /// quantities.
    pub fn leaf_value(self, quantities: &[f64]) -> Option<f64> {
        match self {
            Token::Op(_) => None,
            Token::Const(c) => Some(c.value()),
            Token::Quantity(i) => quantities.get(i).copied(),
        }
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Op(op) => f.write_str(op.symbol()),
            Token::Const(c) => f.write_str(c.symbol()),
            Token::Quantity(i) => write!(f, "n{i}"),
        }
    }
}

impl FromStr for Token {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let token = match s {
            "+" => Token::Op(Op::Add),
            "-" | "−" => Token::Op(Op::Sub),
            "*" | "×" => Token::Op(Op::Mul),
            "/" | "÷" => Token::Op(Op::Div),
            "^" | "∧" => Token::Op(Op::Pow),
            "1" => Token::Const(Constant::One),
            "2" => Token::Const(Constant::Two),
            "pi" | "π" | "PI" => Token::Const(Constant::Pi),
            other => {
                let index = other
                    .strip_prefix('n')
                    .and_then(|rest| rest.parse::<usize>().ok())
                    .ok_or_else(|| ParseError::UnknownSymbol(other.to_string()))?;
                Token::Quantity(index)
            }
        };
        Ok(token)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("empty token sequence")]
    Empty,
    #[error("incomplete prefix expression: operands missing")]
    Incomplete,
    #[error("{0} trailing token(s) after a complete expression")]
    TrailingTokens(usize),
    #[error("unknown symbol `{0}`")]
    UnknownSymbol(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("result is not a finite real number")]
    Domain,
    #[error("quantity index {0} is out of range")]
    UnboundQuantity(usize),
}

/// A binary solution tree.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ExprTree {
    Leaf(Token),
    Node {
        op: Op,
        left: Box<ExprTree>,
        right: Box<ExprTree>,
    },
}

impl ExprTree {
    pub fn leaf(token: Token) -> Self {
        debug_assert!(token.is_numeric());
        ExprTree::Leaf(token)
    }

    pub fn node(op: Op, left: ExprTree, right: ExprTree) -> Self {
        ExprTree::Node {
            op,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    /// Total number of tokens, operators included.
    pub fn size(&self) -> usize {
        match self {
            ExprTree::Leaf(_) => 1,
            ExprTree::Node { left, right, .. } => 1 + left.size() + right.size(),
        }
    }

    pub fn operator_count(&self) -> usize {
        match self {
            ExprTree::Leaf(_) => 0,
            ExprTree::Node { left, right, .. } => 1 + left.operator_count() + right.operator_count(),
        }
    }

    pub fn to_prefix(&self) -> Vec<Token> {
        let mut out = Vec::with_capacity(self.size());
        self.write_prefix(&mut out);
        out
    }

    fn write_prefix(&self, out: &mut Vec<Token>) {
        match self {
            ExprTree::Leaf(token) => out.push(*token),
            ExprTree::Node { op, left, right } => {
                out.push(Token::Op(*op));
                left.write_prefix(out);
                right.write_prefix(out);
            }
        }
    }

    pub fn evaluate(&self, quantities: &[f64]) -> Result<f64, EvalError> {
        match self {
            ExprTree::Leaf(token) => leaf(*token, quantities),
            ExprTree::Node { op, left, right } => {
                let l = left.evaluate(quantities)?;
                let r = right.evaluate(quantities)?;
                op.apply(l, r)
            }
        }
    }
}

impl fmt::Display for ExprTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_prefix(&self.to_prefix()))
    }
}

impl FromStr for ExprTree {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_prefix(&parse_tokens(s)?)
    }
}

fn leaf(token: Token, quantities: &[f64]) -> Result<f64, EvalError> {
    match token {
        Token::Quantity(i) => quantities.get(i).copied().ok_or(EvalError::UnboundQuantity(i)),
        Token::Const(c) => Ok(c.value()),
        Token::Op(_) => unreachable!("operators are never leaves"),
    }
}

/// Parses whitespace-separated prefix symbols (`+ - * / ^`, `1 2 pi`, `n0 n1 ...`).
pub fn parse_tokens(text: &str) -> Result<Vec<Token>, ParseError> {
    text.split_whitespace().map(str::parse).collect()
}

pub fn format_prefix(tokens: &[Token]) -> String {
    let parts: Vec<String> = tokens.iter().map(Token::to_string).collect();
    parts.join(" ")
}

/// Builds the unique tree whose preorder traversal is `tokens`.
pub fn parse_prefix(tokens: &[Token]) -> Result<ExprTree, ParseError> {
    if tokens.is_empty() {
        return Err(ParseError::Empty);
    }
    let end = prefix_span(tokens, 0).ok_or(ParseError::Incomplete)?;
    if end != tokens.len() {
        return Err(ParseError::TrailingTokens(tokens.len() - end));
    }
    Ok(build(tokens, &mut 0))
}

fn build(tokens: &[Token], cursor: &mut usize) -> ExprTree {
    let token = tokens[*cursor];
    *cursor += 1;
    match token {
        Token::Op(op) => {
            let left = build(tokens, cursor);
            let right = build(tokens, cursor);
            ExprTree::node(op, left, right)
        }
        other => ExprTree::Leaf(other),
    }
}

/// End (exclusive) of the complete subexpression starting at `start`, or
/// `None` when the sequence runs out first.
pub fn prefix_span(tokens: &[Token], start: usize) -> Option<usize> {
    let mut need = 1usize;
    for (offset, token) in tokens[start..].iter().enumerate() {
        if token.is_op() {
            need += 1;
        } else {
            need -= 1;
        }
        if need == 0 {
            return Some(start + offset + 1);
        }
    }
    None
}

/// Whether `tokens` is one complete prefix expression.
pub fn is_complete_prefix(tokens: &[Token]) -> bool {
    !tokens.is_empty() && prefix_span(tokens, 0) == Some(tokens.len())
}

pub fn answers_match(predicted: f64, target: f64) -> bool {
    (predicted - target).abs() <= ANSWER_TOLERANCE * target.abs().max(1.0)
}

/// Per-position execution results for a prefix expression.
///
/// `values[i]` is the value of the subtree rooted at preorder position `i`
/// (for operator positions this is the auxiliary intermediate result), or the
/// error raised while computing it. `ends[i]` is the exclusive end of that
/// subtree, so the right child of an operator at `i` starts at `ends[i + 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub tokens: Vec<Token>,
    pub values: Vec<Result<f64, EvalError>>,
    pub ends: Vec<usize>,
}

impl Annotation {
    /// Annotates a complete prefix expression bottom-up.
    pub fn new(tokens: &[Token], quantities: &[f64]) -> Self {
        debug_assert!(is_complete_prefix(tokens));
        let len = tokens.len();
        let mut values = vec![Err(EvalError::Domain); len];
        let mut ends = vec![0; len];
        // Right-to-left sweep: each operator consumes the two subtrees to its right.
        let mut stack: Vec<usize> = Vec::with_capacity(len);
        for i in (0..len).rev() {
            match tokens[i] {
                Token::Op(op) => {
                    let l = stack.pop().expect("complete prefix");
                    let r = stack.pop().expect("complete prefix");
                    ends[i] = ends[r];
                    values[i] = match (values[l], values[r]) {
                        (Ok(a), Ok(b)) => op.apply(a, b),
                        (Err(e), _) | (_, Err(e)) => Err(e),
                    };
                }
                token => {
                    ends[i] = i + 1;
                    values[i] = leaf(token, quantities);
                }
            }
            stack.push(i);
        }
        Annotation {
            tokens: tokens.to_vec(),
            values,
            ends,
        }
    }

    pub fn root_value(&self) -> Result<f64, EvalError> {
        self.values[0]
    }

    /// Preorder positions of the children of the operator at `i`.
    pub fn children(&self, i: usize) -> (usize, usize) {
        debug_assert!(self.tokens[i].is_op());
        (i + 1, self.ends[i + 1])
    }

    /// Preorder position of the parent of `i`, if any.
    pub fn parent(&self, i: usize) -> Option<usize> {
        (0..i).rev().find(|&p| {
            self.tokens[p].is_op() && {
                let (l, r) = self.children(p);
                l == i || r == i
            }
        })
    }
}

/// Evaluates a prefix sequence directly, without building a tree.
pub fn evaluate_prefix(tokens: &[Token], quantities: &[f64]) -> Result<f64, EvalError> {
    parse_prefix(tokens)
        .map_err(|_| EvalError::Domain)?
        .evaluate(quantities)
}

/// Evaluates a sequence already known to be a complete prefix expression.
pub fn evaluate_prefix_unchecked(tokens: &[Token], quantities: &[f64]) -> Result<f64, EvalError> {
    let mut stack: Vec<f64> = Vec::with_capacity(tokens.len());
    for &token in tokens.iter().rev() {
        let v = match token {
            Token::Op(op) => {
                let l = stack.pop().expect("complete prefix");
                let r = stack.pop().expect("complete prefix");
                op.apply(l, r)?
            }
            t => leaf(t, quantities)?,
        };
        stack.push(v);
    }
    Ok(stack[0])
}

/// Number of positions at which two equal-length sequences differ.
pub fn hamming(a: &[Token], b: &[Token]) -> usize {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

/// Whether two prefix sequences describe trees of the same shape.
pub fn same_shape(a: &[Token], b: &[Token]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.is_op() == y.is_op())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<Token> {
        parse_tokens(s).unwrap()
    }

    #[test]
    fn parses_worked_example() {
        let tree = parse_prefix(&toks("* / n0 n1 + n1 n2")).unwrap();
        let expected = ExprTree::node(
            Op::Mul,
            ExprTree::node(Op::Div, ExprTree::leaf(Token::Quantity(0)), ExprTree::leaf(Token::Quantity(1))),
            ExprTree::node(Op::Add, ExprTree::leaf(Token::Quantity(1)), ExprTree::leaf(Token::Quantity(2))),
        );
        assert_eq!(tree, expected);
        assert_eq!(tree.to_prefix(), toks("* / n0 n1 + n1 n2"));
    }

    #[test]
    fn single_leaf_and_errors() {
        assert_eq!(parse_prefix(&toks("n0")).unwrap(), ExprTree::Leaf(Token::Quantity(0)));
        assert_eq!(parse_prefix(&toks("+ n0")), Err(ParseError::Incomplete));
        assert_eq!(parse_prefix(&toks("n0 n1")), Err(ParseError::TrailingTokens(1)));
        assert_eq!(parse_prefix(&[]), Err(ParseError::Empty));
        assert!(matches!(parse_tokens("n0 ?"), Err(ParseError::UnknownSymbol(_))));
        assert_eq!(ExprTree::Leaf(Token::Const(Constant::Pi)).to_prefix(), toks("pi"));
    }

    #[test]
    fn evaluates_both_worked_solutions() {
        let q = [100.0, 2.0, 3.5];
        let a: ExprTree = "* / n0 n1 + n1 n2".parse().unwrap();
        let b: ExprTree = "+ n0 * / n0 n1 n2".parse().unwrap();
        assert_eq!(a.evaluate(&q).unwrap(), 275.0);
        assert_eq!(b.evaluate(&q).unwrap(), 275.0);
    }

    #[test]
    fn evaluation_errors() {
        let t: ExprTree = "/ n0 - n1 n1".parse().unwrap();
        assert_eq!(t.evaluate(&[1.0, 7.0]), Err(EvalError::DivisionByZero));
        let t: ExprTree = "^ n0 n1".parse().unwrap();
        assert_eq!(t.evaluate(&[-8.0, 0.5]), Err(EvalError::Domain));
        assert_eq!(t.evaluate(&[-2.0, 3.0]), Ok(-8.0));
        assert_eq!(t.evaluate(&[0.0, -1.0]), Err(EvalError::Domain));
        let t: ExprTree = "n3".parse().unwrap();
        assert_eq!(t.evaluate(&[1.0]), Err(EvalError::UnboundQuantity(3)));
    }

    #[test]
    fn answer_tolerance() {
        assert!(answers_match(275.0, 275.0));
        assert!(answers_match(275.00001, 275.0));
        assert!(!answers_match(75.0, 275.0));
        assert!(answers_match(0.00005, 0.0));
    }

    #[test]
    fn annotation_tracks_subtrees() {
        let tokens = toks("* / n0 n1 + n1 n2");
        let ann = Annotation::new(&tokens, &[100.0, 2.0, 3.5]);
        assert_eq!(ann.root_value(), Ok(275.0));
        assert_eq!(ann.values[1], Ok(50.0));
        assert_eq!(ann.values[4], Ok(5.5));
        assert_eq!(ann.children(0), (1, 4));
        assert_eq!(ann.children(4), (5, 6));
        assert_eq!(ann.parent(6), Some(4));
        assert_eq!(ann.parent(0), None);
    }

    #[test]
    fn token_text_round_trip() {
        for s in ["+", "-", "*", "/", "^", "1", "2", "pi", "n0", "n12"] {
            let t: Token = s.parse().unwrap();
            assert_eq!(t.to_string(), s);
        }
    }
}

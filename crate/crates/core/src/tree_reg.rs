//! Tree regularization.
//!
//! A size prior turns the number of quantities in a problem into a range of
//! admissible tree sizes, and a per-step vocabulary mask forces preorder
//! decoding to stop at exactly the chosen target size. Two rules drive the
//! mask, for a target size `l`:
//!
//! 1. at most `l / 2` operators may be emitted;
//! 2. before the last position, the number of numeric tokens emitted may not
//!    exceed the number of operators emitted.
//!
//! Together they keep every proper prefix incomplete and force completion on
//! the `l`-th token.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::Token;
use crate::vocab::Vocab;

/// Largest size [`enumerate_trees`] will expand.
pub const MAX_ENUMERATION_SIZE: usize = 11;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TreeRegError {
    #[error("no token is admissible in this decode state")]
    InvalidState,
    #[error("target size {0} is not a positive odd number")]
    BadTargetSize(usize),
    #[error("enumeration size {0} exceeds the limit of {MAX_ENUMERATION_SIZE}")]
    SizeTooLarge(usize),
}

/// Linear size prior `[a_min * n + b_min, a_max * n + b_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizePrior {
    pub a_min: i64,
    pub b_min: i64,
    pub a_max: i64,
    pub b_max: i64,
}

impl Default for SizePrior {
    fn default() -> Self {
        SizePrior {
            a_min: 2,
            b_min: -1,
            a_max: 2,
            b_max: 3,
        }
    }
}

impl SizePrior {
    pub fn new(a_min: i64, b_min: i64, a_max: i64, b_max: i64) -> Self {
        SizePrior {
            a_min,
            b_min,
            a_max,
            b_max,
        }
    }

    /// Odd sizes admitted for a problem with `n_quantities` quantities.
    pub fn sizes(&self, n_quantities: usize) -> Vec<usize> {
        let (lo, hi) = size_bounds(n_quantities, self);
        (lo..=hi).step_by(2).collect()
    }
}

/// `(min_size, max_size)` clamped to odd values of at least one.
pub fn size_bounds(n_quantities: usize, prior: &SizePrior) -> (usize, usize) {
    let n = n_quantities.max(1) as i64;
    let mut lo = prior.a_min * n + prior.b_min;
    let mut hi = prior.a_max * n + prior.b_max;
    lo = lo.max(1);
    if lo % 2 == 0 {
        lo += 1;
    }
    hi = hi.max(1);
    if hi % 2 == 0 {
        hi -= 1;
    }
    let hi = hi.max(lo);
    (lo as usize, hi as usize)
}

/// Counters of an in-progress size-constrained decode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodeState {
    target: usize,
    emitted: Vec<Token>,
    operators: usize,
    numerics: usize,
}

impl DecodeState {
    pub fn new(target: usize) -> Result<Self, TreeRegError> {
        if target == 0 || target % 2 == 0 {
            return Err(TreeRegError::BadTargetSize(target));
        }
        Ok(DecodeState {
            target,
            emitted: Vec::with_capacity(target),
            operators: 0,
            numerics: 0,
        })
    }

    pub fn target(&self) -> usize {
        self.target
    }

    pub fn emitted(&self) -> &[Token] {
        &self.emitted
    }

    pub fn operators(&self) -> usize {
        self.operators
    }

    pub fn numerics(&self) -> usize {
        self.numerics
    }

    /// 1-based position of the next token.
    pub fn position(&self) -> usize {
        self.emitted.len() + 1
    }

    pub fn is_complete(&self) -> bool {
        self.emitted.len() == self.target
    }

    pub fn operator_allowed(&self) -> bool {
        self.operators < self.target / 2
    }

    pub fn numeric_allowed(&self) -> bool {
        self.position() == self.target || self.numerics < self.operators
    }

    pub fn allows(&self, token: Token) -> bool {
        !self.is_complete()
            && if token.is_op() {
                self.operator_allowed()
            } else {
                self.numeric_allowed()
            }
    }

    pub fn push(&mut self, token: Token) {
        debug_assert!(self.allows(token), "token {token} is masked");
        if token.is_op() {
            self.operators += 1;
        } else {
            self.numerics += 1;
        }
        self.emitted.push(token);
    }

    pub fn into_tokens(self) -> Vec<Token> {
        self.emitted
    }
}

/// Boolean admissibility of each vocabulary entry at the next position.
pub fn valid_token_mask(state: &DecodeState, vocab: &Vocab) -> Result<Vec<bool>, TreeRegError> {
    if state.is_complete() {
        return Err(TreeRegError::InvalidState);
    }
    let mask: Vec<bool> = vocab.tokens().iter().map(|&t| state.allows(t)).collect();
    if mask.iter().any(|&m| m) {
        Ok(mask)
    } else {
        Err(TreeRegError::InvalidState)
    }
}

/// Every prefix expression over `vocab` whose size is one of `sizes`,
/// in lexicographic vocabulary-index order per size.
pub fn enumerate_trees(vocab: &Vocab, sizes: &[usize]) -> Result<Vec<Vec<Token>>, TreeRegError> {
    let mut out = Vec::new();
    for_each_tree(vocab, sizes, |tokens| out.push(tokens.to_vec()))?;
    Ok(out)
}

/// Streaming form of [`enumerate_trees`].
pub fn for_each_tree(
    vocab: &Vocab,
    sizes: &[usize],
    mut visit: impl FnMut(&[Token]),
) -> Result<(), TreeRegError> {
    if let Some(&l) = sizes.iter().find(|&&l| l > MAX_ENUMERATION_SIZE) {
        return Err(TreeRegError::SizeTooLarge(l));
    }
    for &l in sizes {
        let mut state = DecodeState::new(l)?;
        expand(&mut state, vocab, &mut visit);
    }
    Ok(())
}

fn expand(state: &mut DecodeState, vocab: &Vocab, visit: &mut impl FnMut(&[Token])) {
    if state.is_complete() {
        visit(&state.emitted);
        return;
    }
    for &token in vocab.tokens() {
        if state.allows(token) {
            let (ops, nums) = (state.operators, state.numerics);
            state.push(token);
            expand(state, vocab, visit);
            state.emitted.pop();
            state.operators = ops;
            state.numerics = nums;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse_tokens, Op};

    #[test]
    fn default_bounds() {
        let p = SizePrior::default();
        assert_eq!(size_bounds(3, &p), (5, 9));
        assert_eq!(size_bounds(1, &p), (1, 5));
        assert_eq!(size_bounds(3, &SizePrior::new(2, -3, 2, 5)), (3, 11));
        assert_eq!(size_bounds(2, &SizePrior::new(2, -1, 2, 1)), (3, 5));
        // even bounds are pulled inward to odd values
        assert_eq!(size_bounds(2, &SizePrior::new(2, 0, 2, 2)), (5, 5));
        assert_eq!(p.sizes(2), vec![3, 5, 7]);
    }

    #[test]
    fn masks_follow_both_rules() {
        let vocab = Vocab::new(parse_tokens("+ * n0 n1").unwrap());
        let s = DecodeState::new(3).unwrap();
        assert_eq!(valid_token_mask(&s, &vocab).unwrap(), vec![true, true, false, false]);
        let s = DecodeState::new(1).unwrap();
        assert_eq!(valid_token_mask(&s, &vocab).unwrap(), vec![false, false, true, true]);

        let mut s = DecodeState::new(5).unwrap();
        s.push(Token::Op(Op::Add));
        s.push(Token::Quantity(0));
        assert_eq!(valid_token_mask(&s, &vocab).unwrap(), vec![true, true, false, false]);
    }

    #[test]
    fn even_target_rejected() {
        assert_eq!(DecodeState::new(4), Err(TreeRegError::BadTargetSize(4)));
        assert_eq!(DecodeState::new(0), Err(TreeRegError::BadTargetSize(0)));
    }

    #[test]
    fn complete_state_has_no_mask() {
        let vocab = Vocab::full(1);
        let mut s = DecodeState::new(1).unwrap();
        s.push(Token::Quantity(0));
        assert_eq!(valid_token_mask(&s, &vocab), Err(TreeRegError::InvalidState));
    }

    #[test]
    fn operator_only_vocab_is_stuck() {
        let vocab = Vocab::new([Token::Op(Op::Add)]);
        let s = DecodeState::new(1).unwrap();
        assert_eq!(valid_token_mask(&s, &vocab), Err(TreeRegError::InvalidState));
    }

    #[test]
    fn small_enumerations() {
        let vocab = Vocab::new(parse_tokens("+ n0 n1").unwrap());
        let got = enumerate_trees(&vocab, &[3]).unwrap();
        let want: Vec<Vec<Token>> = ["+ n0 n0", "+ n0 n1", "+ n1 n0", "+ n1 n1"]
            .iter()
            .map(|s| parse_tokens(s).unwrap())
            .collect();
        assert_eq!(got, want);
        assert_eq!(enumerate_trees(&vocab, &[1]).unwrap().len(), 2);
        assert_eq!(
            enumerate_trees(&vocab, &[13]),
            Err(TreeRegError::SizeTooLarge(13))
        );
    }
}

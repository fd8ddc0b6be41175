//! Repairing wrong expression trees.
//!
//! [`one_fix`] walks a best-first queue from the root downward. Every queue
//! entry says "if the subtree at this position evaluated to `alpha`, the whole
//! tree would produce the answer"; expected values for children come from
//! inverting the parent operator with [`solve_child`]. When an entry lands on a
//! single token (a leaf, or an operator slot) whose replacement realises the
//! expected value, that one substitution is the fix.
//!
//! [`m_fix`] interleaves `one_fix` with [`random_walk`] perturbations so that
//! trees more than one substitution away from a solution can still be
//! repaired.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use crate::expr::{answers_match, hamming, parse_prefix, Annotation, ExprTree, Op, Token};
use crate::vocab::Vocab;

/// Relative tolerance for matching an expected value to a leaf token.
pub const VALUE_MATCH_TOLERANCE: f64 = 1e-6;

/// Upper bound on queue pops per [`one_fix`] call.
pub const MAX_QUEUE_POPS: usize = 10_000;

/// Default step budget of [`m_fix`].
pub const DEFAULT_FIX_STEPS: usize = 50;

/// Per-position token distributions for a prefix expression.
///
/// `distributions(tokens)[i][j]` is the probability of vocabulary entry `j`
/// at preorder position `i`, given the tokens before it.
pub trait TokenScorer {
    fn vocab(&self) -> &Vocab;
    fn distributions(&self, tokens: &[Token]) -> Vec<Vec<f64>>;
}

/// Uniform distribution over the tokens admitted by the size masks.
#[derive(Debug, Clone)]
pub struct UniformScorer {
    vocab: Vocab,
}

impl UniformScorer {
    pub fn new(vocab: Vocab) -> Self {
        UniformScorer { vocab }
    }
}

impl TokenScorer for UniformScorer {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn distributions(&self, tokens: &[Token]) -> Vec<Vec<f64>> {
        let mut state = crate::tree_reg::DecodeState::new(tokens.len()).expect("odd tree size");
        let mut out = Vec::with_capacity(tokens.len());
        for &t in tokens {
            let mask: Vec<bool> = self.vocab.tokens().iter().map(|&v| state.allows(v)).collect();
            let admitted = mask.iter().filter(|&&m| m).count().max(1) as f64;
            out.push(mask.iter().map(|&m| if m { 1.0 / admitted } else { 0.0 }).collect());
            state.push(t);
        }
        out
    }
}

/// Which slot of an operator node is being solved for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Left,
    Right,
    Operator,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Expected {
    Value(f64),
    Operator(Op),
}

/// Expected values for one slot of `parent_op(left, right) = alpha`.
///
/// `left`/`right` are the current child values (the one being solved for is
/// ignored). An empty result means the slot cannot produce `alpha`. For the
/// operator slot at most one operator is returned: the first alternative in
/// `+ - * / ^` order whose result matches `alpha`. A power's base can have two
/// real solutions; the principal one comes first.
pub fn solve_child(
    parent_op: Op,
    left: Option<f64>,
    right: Option<f64>,
    alpha: f64,
    slot: Slot,
) -> Vec<Expected> {
    let finite = |v: f64| v.is_finite().then_some(v);
    let mut out: Vec<f64> = Vec::new();
    match slot {
        Slot::Left => {
            let Some(r) = right else { return Vec::new() };
            match parent_op {
                Op::Add => out.extend(finite(alpha - r)),
                Op::Sub => out.extend(finite(alpha + r)),
                Op::Mul => {
                    if r != 0.0 {
                        out.extend(finite(alpha / r));
                    }
                }
                Op::Div => out.extend(finite(alpha * r)),
                Op::Pow => out.extend(invert_base(alpha, r)),
            }
        }
        Slot::Right => {
            let Some(l) = left else { return Vec::new() };
            match parent_op {
                Op::Add => out.extend(finite(alpha - l)),
                Op::Sub => out.extend(finite(l - alpha)),
                Op::Mul => {
                    if l != 0.0 {
                        out.extend(finite(alpha / l));
                    }
                }
                Op::Div => {
                    if alpha != 0.0 {
                        out.extend(finite(l / alpha));
                    }
                }
                Op::Pow => out.extend(invert_exponent(l, alpha)),
            }
        }
        Slot::Operator => {
            let (Some(l), Some(r)) = (left, right) else { return Vec::new() };
            if let Some(op) = Op::ALL
                .iter()
                .copied()
                .filter(|&op| op != parent_op)
                .find(|op| op.apply(l, r).is_ok_and(|v| answers_match(v, alpha)))
            {
                return vec![Expected::Operator(op)];
            }
            return Vec::new();
        }
    }
    out.into_iter().map(Expected::Value).collect()
}

/// Solutions `x` of `x ^ exponent = alpha`.
fn invert_base(alpha: f64, exponent: f64) -> Vec<f64> {
    if exponent == 0.0 {
        return Vec::new();
    }
    let integral = exponent.fract() == 0.0;
    let even = integral && (exponent / 2.0).fract() == 0.0;
    let odd = integral && !even;
    let mut out = Vec::new();
    if alpha > 0.0 {
        let root = alpha.powf(1.0 / exponent);
        if root.is_finite() {
            out.push(root);
            if even {
                out.push(-root);
            }
        }
    } else if alpha < 0.0 {
        if odd {
            let root = -(-alpha).powf(1.0 / exponent);
            if root.is_finite() {
                out.push(root);
            }
        }
    } else if exponent > 0.0 {
        out.push(0.0);
    }
    out
}

/// Solutions `x` of `base ^ x = alpha`.
fn invert_exponent(base: f64, alpha: f64) -> Vec<f64> {
    if base > 0.0 && base != 1.0 && alpha > 0.0 {
        let x = alpha.ln() / base.ln();
        return if x.is_finite() { vec![x] } else { Vec::new() };
    }
    if base < 0.0 && base != -1.0 && alpha != 0.0 {
        // Only integer exponents are real; the sign must agree with parity.
        let x = (alpha.abs().ln() / (-base).ln()).round();
        if x.is_finite() && answers_match(base.powf(x), alpha) {
            return vec![x];
        }
    }
    Vec::new()
}

/// One best-first queue entry.
#[derive(Debug, Clone, Copy)]
pub struct FixTuple {
    /// Preorder position in the tree being fixed.
    pub node: usize,
    pub expected: Target,
    pub priority: f64,
    pub seq: u64,
}

/// What a queue entry asks of its position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    /// The subtree rooted here should evaluate to this value.
    Value(f64),
    /// Replace the token at this position with this one.
    Substitute(Token),
}

impl PartialEq for FixTuple {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for FixTuple {}

impl PartialOrd for FixTuple {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for FixTuple {
    // Max-heap order: higher priority first, then earlier insertion.
    fn cmp(&self, other: &Self) -> Ordering {
        self.priority
            .total_cmp(&other.priority)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixResult {
    pub tokens: Vec<Token>,
    /// Token substitutions relative to the tree handed to the fixer.
    pub edit_distance: usize,
    /// Random-walk iterations consumed before the fix was found.
    pub steps: usize,
}

impl FixResult {
    pub fn tree(&self) -> ExprTree {
        parse_prefix(&self.tokens).expect("fixes keep the tree shape")
    }
}

fn executes_to(tokens: &[Token], quantities: &[f64], y: f64) -> bool {
    Annotation::new(tokens, quantities)
        .root_value()
        .is_ok_and(|v| answers_match(v, y))
}

/// Single-substitution repair of `tokens` so that it executes to `y`.
///
/// `probs` are the per-position token distributions of the policy. Returns the
/// tree unchanged when it is already correct.
pub fn one_fix(
    tokens: &[Token],
    quantities: &[f64],
    y: f64,
    probs: &[Vec<f64>],
    vocab: &Vocab,
) -> Option<Vec<Token>> {
    one_fix_traced(tokens, quantities, y, probs, vocab, |_| {})
}

/// [`one_fix`] reporting every popped tuple to `on_pop`.
pub fn one_fix_traced(
    tokens: &[Token],
    quantities: &[f64],
    y: f64,
    probs: &[Vec<f64>],
    vocab: &Vocab,
    mut on_pop: impl FnMut(&FixTuple),
) -> Option<Vec<Token>> {
    let ann = Annotation::new(tokens, quantities);
    if ann.root_value().is_ok_and(|v| answers_match(v, y)) {
        return Some(tokens.to_vec());
    }
    let prob_of = |pos: usize, token: Token| -> f64 {
        vocab
            .index_of(token)
            .and_then(|j| probs.get(pos).and_then(|row| row.get(j)).copied())
            .unwrap_or(0.0)
    };

    let mut queue = BinaryHeap::new();
    let mut seq = 0u64;
    let mut push = |queue: &mut BinaryHeap<FixTuple>, node, expected, priority| {
        queue.push(FixTuple {
            node,
            expected,
            priority,
            seq,
        });
        seq += 1;
    };
    push(&mut queue, 0, Target::Value(y), 1.0);

    let mut pops = 0;
    while let Some(tuple) = queue.pop() {
        on_pop(&tuple);
        pops += 1;
        if pops > MAX_QUEUE_POPS {
            break;
        }
        let alpha = match tuple.expected {
            Target::Substitute(token) => {
                let mut fixed = tokens.to_vec();
                fixed[tuple.node] = token;
                if executes_to(&fixed, quantities, y) {
                    return Some(fixed);
                }
                continue;
            }
            Target::Value(alpha) => alpha,
        };
        let Token::Op(op) = tokens[tuple.node] else {
            // A value target on a leaf: pick the matching token.
            if let Some((token, p)) =
                leaf_candidate(tokens[tuple.node], alpha, quantities, vocab, tuple.node, &prob_of)
            {
                push(&mut queue, tuple.node, Target::Substitute(token), p);
            }
            continue;
        };
        let (l, r) = ann.children(tuple.node);
        let left = ann.values[l].ok();
        let right = ann.values[r].ok();
        for (child, slot) in [(l, Slot::Left), (r, Slot::Right)] {
            for expected in solve_child(op, left, right, alpha, slot) {
                let Expected::Value(alpha_child) = expected else { continue };
                match tokens[child] {
                    Token::Op(_) => {
                        let p = 1.0 - prob_of(child, tokens[child]);
                        push(&mut queue, child, Target::Value(alpha_child), p);
                    }
                    current => {
                        if let Some((token, p)) =
                            leaf_candidate(current, alpha_child, quantities, vocab, child, &prob_of)
                        {
                            push(&mut queue, child, Target::Substitute(token), p);
                        }
                    }
                }
            }
        }
        for expected in solve_child(op, left, right, alpha, Slot::Operator) {
            if let Expected::Operator(new_op) = expected {
                let token = Token::Op(new_op);
                if vocab.contains(token) {
                    push(&mut queue, tuple.node, Target::Substitute(token), prob_of(tuple.node, token));
                }
            }
        }
    }
    None
}

/// The most probable numeric token (other than `current`) whose value matches
/// `alpha`, if any.
fn leaf_candidate(
    current: Token,
    alpha: f64,
    quantities: &[f64],
    vocab: &Vocab,
    pos: usize,
    prob_of: &impl Fn(usize, Token) -> f64,
) -> Option<(Token, f64)> {
    let tolerance = VALUE_MATCH_TOLERANCE * alpha.abs().max(1.0);
    let mut best: Option<(Token, f64)> = None;
    for (_, token) in vocab.numerics() {
        if token == current {
            continue;
        }
        let Some(value) = token.leaf_value(quantities) else { continue };
        if (value - alpha).abs() <= tolerance {
            let p = prob_of(pos, token);
            if best.is_none_or(|(_, bp)| p > bp) {
                best = Some((token, p));
            }
        }
    }
    best
}

/// Replaces one token with another of the same kind, drawn from the policy
/// distribution at that position (renormalised, current token excluded).
pub fn random_walk<R: Rng + ?Sized>(
    tokens: &[Token],
    probs: &[Vec<f64>],
    vocab: &Vocab,
    rng: &mut R,
) -> Vec<Token> {
    for _ in 0..tokens.len() {
        let position = rng.gen_range(0..tokens.len());
        if let Some(walked) = random_walk_at(tokens, position, probs, vocab, rng) {
            return walked;
        }
    }
    tokens.to_vec()
}

/// [`random_walk`] at a fixed position; `None` if no alternative token of
/// the same kind exists.
pub fn random_walk_at<R: Rng + ?Sized>(
    tokens: &[Token],
    position: usize,
    probs: &[Vec<f64>],
    vocab: &Vocab,
    rng: &mut R,
) -> Option<Vec<Token>> {
    let current = tokens[position];
    let candidates: Vec<(usize, Token)> = vocab
        .tokens()
        .iter()
        .copied()
        .enumerate()
        .filter(|&(_, t)| t != current && t.is_op() == current.is_op())
        .collect();
    if candidates.is_empty() {
        return None;
    }
    let weights: Vec<f64> = candidates
        .iter()
        .map(|&(j, _)| probs.get(position).and_then(|row| row.get(j)).copied().unwrap_or(0.0))
        .collect();
    let choice = match WeightedIndex::new(&weights) {
        Ok(dist) => dist.sample(rng),
        Err(_) => rng.gen_range(0..candidates.len()),
    };
    let mut walked = tokens.to_vec();
    walked[position] = candidates[choice].1;
    Some(walked)
}

/// Multi-step repair: up to `m` random-walk perturbations, each followed by a
/// [`one_fix`] attempt with freshly scored token distributions.
pub fn m_fix<R: Rng + ?Sized>(
    tokens: &[Token],
    quantities: &[f64],
    y: f64,
    m: usize,
    scorer: &dyn TokenScorer,
    rng: &mut R,
) -> Option<FixResult> {
    if executes_to(tokens, quantities, y) {
        return Some(FixResult {
            tokens: tokens.to_vec(),
            edit_distance: 0,
            steps: 0,
        });
    }
    let vocab = scorer.vocab();
    let mut current = tokens.to_vec();
    for step in 0..=m {
        let probs = scorer.distributions(&current);
        if let Some(fixed) = one_fix(&current, quantities, y, &probs, vocab) {
            return Some(FixResult {
                edit_distance: hamming(tokens, &fixed),
                tokens: fixed,
                steps: step,
            });
        }
        if step < m {
            current = random_walk(&current, &probs, vocab, rng);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse_tokens, same_shape, Constant};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toks(s: &str) -> Vec<Token> {
        parse_tokens(s).unwrap()
    }

    fn value(v: f64) -> Vec<Expected> {
        vec![Expected::Value(v)]
    }

    #[test]
    fn solve_child_examples() {
        assert_eq!(solve_child(Op::Add, None, Some(4.0), 10.0, Slot::Left), value(6.0));
        assert_eq!(solve_child(Op::Sub, Some(9.0), None, 4.0, Slot::Right), value(5.0));
        assert_eq!(
            solve_child(Op::Add, Some(6.0), Some(4.0), 24.0, Slot::Operator),
            vec![Expected::Operator(Op::Mul)]
        );
        assert!(solve_child(Op::Mul, Some(0.0), None, 5.0, Slot::Right).is_empty());
    }

    #[test]
    fn solve_child_inverses() {
        assert_eq!(solve_child(Op::Div, None, Some(4.0), 3.0, Slot::Left), value(12.0));
        assert_eq!(solve_child(Op::Div, Some(12.0), None, 3.0, Slot::Right), value(4.0));
        assert_eq!(solve_child(Op::Mul, None, Some(4.0), 12.0, Slot::Left), value(3.0));
        assert_eq!(solve_child(Op::Sub, None, Some(4.0), 1.0, Slot::Left), value(5.0));
        assert!(solve_child(Op::Div, Some(12.0), None, 0.0, Slot::Right).is_empty());
        // powers
        assert_eq!(solve_child(Op::Pow, None, Some(2.0), 9.0, Slot::Left), vec![Expected::Value(3.0), Expected::Value(-3.0)]);
        assert_eq!(solve_child(Op::Pow, None, Some(3.0), -8.0, Slot::Left), value(-2.0));
        assert!(solve_child(Op::Pow, None, Some(2.0), -4.0, Slot::Left).is_empty());
        let Expected::Value(x) = solve_child(Op::Pow, Some(2.0), None, 8.0, Slot::Right)[0] else { panic!() };
        assert!((x - 3.0).abs() < 1e-12);
        assert!(solve_child(Op::Pow, Some(1.0), None, 8.0, Slot::Right).is_empty());
        assert_eq!(solve_child(Op::Pow, Some(-2.0), None, -8.0, Slot::Right), value(3.0));
        assert!(solve_child(Op::Pow, Some(-2.0), None, 8.0, Slot::Right).is_empty());
        // no alternative operator produces the value
        assert!(solve_child(Op::Add, Some(6.0), Some(4.0), 1000.0, Slot::Operator).is_empty());
        // a missing sibling value blocks the inversion
        assert!(solve_child(Op::Add, None, None, 1.0, Slot::Left).is_empty());
    }

    #[test]
    fn queue_order_is_priority_then_fifo() {
        let mut heap = BinaryHeap::new();
        for (seq, p) in [(0, 0.2), (1, 0.9), (2, 0.2), (3, 0.9), (4, 0.5)] {
            heap.push(FixTuple {
                node: 0,
                expected: Target::Value(0.0),
                priority: p,
                seq,
            });
        }
        let order: Vec<u64> = std::iter::from_fn(|| heap.pop()).map(|t| t.seq).collect();
        assert_eq!(order, vec![1, 3, 4, 0, 2]);
    }

    #[test]
    fn fixes_worked_example() {
        let q = [100.0, 2.0, 3.5];
        let tokens = toks("* / n0 n1 - n2 n1");
        let vocab = Vocab::full(3);
        let scorer = UniformScorer::new(vocab.clone());
        let probs = scorer.distributions(&tokens);
        let fixed = one_fix(&tokens, &q, 275.0, &probs, &vocab).unwrap();
        assert_eq!(fixed, toks("* / n0 n1 + n2 n1"));

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let result = m_fix(&tokens, &q, 275.0, 50, &scorer, &mut rng).unwrap();
        assert_eq!(result.tokens, fixed);
        assert_eq!(result.steps, 0);
        assert_eq!(result.edit_distance, 1);
    }

    #[test]
    fn correct_tree_is_returned_unchanged() {
        let tokens = toks("+ n0 n1");
        let scorer = UniformScorer::new(Vocab::full(2));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = m_fix(&tokens, &[3.0, 4.0], 7.0, 5, &scorer, &mut rng).unwrap();
        assert_eq!(r, FixResult { tokens: tokens.clone(), edit_distance: 0, steps: 0 });
        let probs = scorer.distributions(&tokens);
        assert_eq!(one_fix(&tokens, &[3.0, 4.0], 7.0, &probs, scorer.vocab()), Some(tokens));
    }

    #[test]
    fn unreachable_single_substitution() {
        let tokens = toks("+ n0 n1");
        let vocab = Vocab::full(2);
        let probs = UniformScorer::new(vocab.clone()).distributions(&tokens);
        assert_eq!(one_fix(&tokens, &[3.0, 4.0], 100.0, &probs, &vocab), None);
    }

    #[test]
    fn m_fix_reaches_product() {
        let tokens = toks("+ n0 n1");
        let scorer = UniformScorer::new(Vocab::full(2));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = m_fix(&tokens, &[3.0, 4.0], 12.0, 50, &scorer, &mut rng).unwrap();
        assert!(executes_to(&r.tokens, &[3.0, 4.0], 12.0));
        assert!(same_shape(&r.tokens, &tokens));
    }

    #[test]
    fn m_fix_uses_random_walk_for_distance_two() {
        // (3 + 4) + 5 = 12 ; 3 * 4 * 5 = 60 needs two operator changes.
        let tokens = toks("+ + n0 n1 n2");
        let q = [3.0, 4.0, 5.0];
        let scorer = UniformScorer::new(Vocab::full(3));
        let probs = scorer.distributions(&tokens);
        assert_eq!(one_fix(&tokens, &q, 60.0, &probs, scorer.vocab()), None);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let r = m_fix(&tokens, &q, 60.0, 200, &scorer, &mut rng).unwrap();
        assert!(r.steps > 0);
        assert!(executes_to(&r.tokens, &q, 60.0));
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        assert_eq!(m_fix(&tokens, &q, 60.0, 200, &scorer, &mut rng), Some(r));
    }

    #[test]
    fn m_fix_gives_up_after_budget() {
        let tokens = toks("n0");
        let vocab = Vocab::new([Token::Quantity(0), Token::Const(Constant::One)]);
        let scorer = UniformScorer::new(vocab);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(m_fix(&tokens, &[5.0], 42.0, 3, &scorer, &mut rng), None);
    }

    #[test]
    fn random_walk_operator_position_uniform() {
        let tokens = toks("+ n0 n1");
        let vocab = Vocab::full(2);
        let probs = UniformScorer::new(vocab.clone()).distributions(&tokens);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut counts = std::collections::BTreeMap::new();
        for _ in 0..4000 {
            let w = random_walk_at(&tokens, 0, &probs, &vocab, &mut rng).unwrap();
            assert_eq!(&w[1..], &tokens[1..]);
            *counts.entry(w[0]).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 4);
        assert!(!counts.contains_key(&Token::Op(Op::Add)));
        for &c in counts.values() {
            assert!((c as f64 - 1000.0).abs() < 120.0, "{counts:?}");
        }
    }

    #[test]
    fn random_walk_single_leaf_goes_to_constants() {
        let tokens = toks("n0");
        let vocab = Vocab::full(1);
        let probs = UniformScorer::new(vocab.clone()).distributions(&tokens);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let w = random_walk(&tokens, &probs, &vocab, &mut rng);
            assert!(matches!(w[0], Token::Const(_)));
        }
    }

    #[test]
    fn random_walk_without_alternatives_is_identity() {
        let tokens = toks("+ n0 n0");
        let vocab = Vocab::new(toks("+ n0"));
        let probs = UniformScorer::new(vocab.clone()).distributions(&tokens);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert_eq!(random_walk(&tokens, &probs, &vocab, &mut rng), tokens);
    }
}

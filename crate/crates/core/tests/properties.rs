use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lbf_core::data::{parse_corpus, synthetic_corpus, oracle_solutions, Provenance};
use lbf_core::expr::{
    answers_match, evaluate_prefix, is_complete_prefix, parse_prefix, same_shape, Annotation, Constant, ExprTree, Op,
    Token,
};
use lbf_core::fixer::{m_fix, one_fix, UniformScorer};
use lbf_core::tree_reg::{enumerate_trees, valid_token_mask, DecodeState};
use lbf_core::Vocab;

const OPS: [Op; 5] = [Op::Add, Op::Sub, Op::Mul, Op::Div, Op::Pow];

fn leaf_token(n_quantities: usize) -> impl Strategy<Value = Token> {
    prop_oneof![
        (0..n_quantities).prop_map(Token::Quantity),
        prop_oneof![Just(Constant::One), Just(Constant::Two), Just(Constant::Pi)].prop_map(Token::Const),
    ]
}

/// Random trees with at most `max_ops` operators.
fn tree(n_quantities: usize, max_ops: u32) -> impl Strategy<Value = ExprTree> {
    leaf_token(n_quantities)
        .prop_map(ExprTree::Leaf)
        .prop_recursive(max_ops, max_ops * 2 + 1, 2, |inner| {
            (0..5usize, inner.clone(), inner).prop_map(|(o, l, r)| ExprTree::node(OPS[o], l, r))
        })
        .prop_filter("size bound", move |t| t.operator_count() <= max_ops as usize)
}

fn quantities(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![1.0..100.0f64, (1..50i32).prop_map(f64::from)], n)
}

// Postfix oracle, written without the crate's evaluator.

fn postfix(t: &ExprTree, out: &mut Vec<Token>) {
    match t {
        ExprTree::Leaf(tok) => out.push(*tok),
        ExprTree::Node { op, left, right } => {
            postfix(left, out);
            postfix(right, out);
            out.push(Token::Op(*op));
        }
    }
}

fn postfix_eval(tokens: &[Token], q: &[f64]) -> Option<f64> {
    let mut stack = Vec::new();
    for &t in tokens {
        match t {
            Token::Quantity(i) => stack.push(*q.get(i)?),
            Token::Const(Constant::One) => stack.push(1.0),
            Token::Const(Constant::Two) => stack.push(2.0),
            Token::Const(Constant::Pi) => stack.push(std::f64::consts::PI),
            Token::Op(op) => {
                let b = stack.pop()?;
                let a = stack.pop()?;
                let v = match op {
                    Op::Add => a + b,
                    Op::Sub => a - b,
                    Op::Mul => a * b,
                    Op::Div if b.abs() < 1e-12 => return None,
                    Op::Div => a / b,
                    Op::Pow if a < 0.0 && b.fract() != 0.0 => return None,
                    Op::Pow => a.powf(b),
                };
                if !v.is_finite() {
                    return None;
                }
                stack.push(v);
            }
        }
    }
    (stack.len() == 1).then(|| stack[0])
}

/// Random decode under the size masks.
fn masked_decode(l: usize, vocab: &Vocab, rng: &mut ChaCha8Rng) -> Vec<Token> {
    let mut state = DecodeState::new(l).unwrap();
    while !state.is_complete() {
        let mask = valid_token_mask(&state, vocab).expect("decoder stranded");
        let allowed: Vec<usize> = (0..mask.len()).filter(|&j| mask[j]).collect();
        state.push(vocab.get(allowed[rng.gen_range(0..allowed.len())]));
    }
    state.into_tokens()
}

fn binomial(n: u64, k: u64) -> u64 {
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

fn catalan(k: u64) -> u64 {
    binomial(2 * k, k) / (k + 1)
}

/// Every proper prefix of a decode can still be completed: explores every
/// admitted choice and counts complete sequences.
fn exhaust(state: &DecodeState, vocab: &Vocab) -> u64 {
    if state.is_complete() {
        assert!(is_complete_prefix(state.emitted()));
        return 1;
    }
    let mask = valid_token_mask(state, vocab).expect("decoder stranded");
    let mut total = 0;
    for (j, ok) in mask.into_iter().enumerate() {
        if ok {
            let mut next = state.clone();
            next.push(vocab.get(j));
            let completions = exhaust(&next, vocab);
            assert!(completions > 0, "admitted token leads to a dead end");
            total += completions;
        }
    }
    total
}

fn toks(s: &str) -> Vec<Token> {
    lbf_core::expr::parse_tokens(s).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn prefix_round_trip(t in tree(4, 7)) {
        let tokens = t.to_prefix();
        prop_assert!(tokens.len() <= 15);
        prop_assert_eq!(parse_prefix(&tokens).unwrap(), t);
    }

    #[test]
    fn size_is_twice_operators_plus_one(t in tree(4, 7)) {
        prop_assert_eq!(t.size(), 2 * t.operator_count() + 1);
        prop_assert_eq!(t.to_prefix().len(), t.size());
    }

    #[test]
    fn annotation_is_locally_consistent(t in tree(3, 7), q in quantities(3)) {
        let tokens = t.to_prefix();
        let ann = Annotation::new(&tokens, &q);
        for i in 0..tokens.len() {
            if let Token::Op(op) = tokens[i] {
                let (l, r) = ann.children(i);
                if let (Ok(a), Ok(b), Ok(v)) = (ann.values[l], ann.values[r], ann.values[i]) {
                    let again = op.apply(a, b).unwrap();
                    prop_assert!((again - v).abs() <= 1e-9 * v.abs().max(1.0));
                }
            }
        }
        prop_assert_eq!(ann.root_value().ok(), t.evaluate(&q).ok());
    }

    #[test]
    fn masked_prefixes_admit_the_true_next_token(t in tree(3, 7)) {
        let tokens = t.to_prefix();
        let mut state = DecodeState::new(tokens.len()).unwrap();
        for &tok in &tokens {
            prop_assert!(state.allows(tok));
            state.push(tok);
        }
        prop_assert!(state.is_complete());
    }

    #[test]
    fn fixes_are_sound_and_keep_shape(
        t in tree(3, 4),
        q in quantities(3),
        target_seed in any::<u64>(),
        seed in any::<u64>(),
    ) {
        let tokens = t.to_prefix();
        let vocab = Vocab::full(3);
        // reachable target: value of a random same-shape tree
        let mut rng = ChaCha8Rng::seed_from_u64(target_seed);
        let other: Vec<Token> = tokens
            .iter()
            .map(|tok| {
                let same_kind: Vec<Token> = vocab.tokens().iter().copied().filter(|v| v.is_op() == tok.is_op()).collect();
                same_kind[rng.gen_range(0..same_kind.len())]
            })
            .collect();
        let Ok(y) = evaluate_prefix(&other, &q) else { return Ok(()) };
        let scorer = UniformScorer::new(vocab);
        let run = |s| m_fix(&tokens, &q, y, 10, &scorer, &mut ChaCha8Rng::seed_from_u64(s));
        let first = run(seed);
        if let Some(fix) = &first {
            let v = evaluate_prefix(&fix.tokens, &q).unwrap();
            prop_assert!(answers_match(v, y));
            prop_assert!(same_shape(&fix.tokens, &tokens));
            prop_assert_eq!(fix.edit_distance, tokens.iter().zip(&fix.tokens).filter(|(a, b)| a != b).count());
        }
        prop_assert_eq!(first, run(seed));
    }

    #[test]
    fn one_fix_finds_every_single_substitution(
        t in tree(3, 3),
        q in quantities(3),
        pos_seed in any::<usize>(),
        tok_seed in any::<usize>(),
    ) {
        let tokens = t.to_prefix();
        let vocab = Vocab::full(3);
        let pos = pos_seed % tokens.len();
        let same_kind: Vec<Token> =
            vocab.tokens().iter().copied().filter(|v| v.is_op() == tokens[pos].is_op()).collect();
        let mut mutant = tokens.clone();
        mutant[pos] = same_kind[tok_seed % same_kind.len()];
        let Ok(y) = evaluate_prefix(&mutant, &q) else { return Ok(()) };
        let probs = UniformScorer::new(vocab.clone());
        let probs = lbf_core::fixer::TokenScorer::distributions(&probs, &tokens);
        let fixed = one_fix(&tokens, &q, y, &probs, &vocab);
        prop_assert!(fixed.is_some(), "missed a fix of `{}` to {y}", lbf_core::expr::format_prefix(&tokens));
        let fixed = fixed.unwrap();
        prop_assert!(answers_match(evaluate_prefix(&fixed, &q).unwrap(), y));
        prop_assert!(lbf_core::expr::hamming(&fixed, &tokens) <= 1);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn evaluation_matches_postfix_oracle(t in tree(4, 7), q in quantities(4)) {
        let mut post = Vec::new();
        postfix(&t, &mut post);
        prop_assert_eq!(t.evaluate(&q).ok(), postfix_eval(&post, &q));
        prop_assert_eq!(evaluate_prefix(&t.to_prefix(), &q).ok(), postfix_eval(&post, &q));
    }
}

#[test]
fn random_masked_decodes_parse_at_their_size() {
    let vocab = Vocab::full(4);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for l in (1..=15).step_by(2) {
        for _ in 0..500 {
            let tokens = masked_decode(l, &vocab, &mut rng);
            let tree = parse_prefix(&tokens).unwrap();
            assert_eq!(tree.size(), l);
        }
    }
}

#[test]
fn masks_never_strand_the_decoder() {
    // one operator and one leaf make the count equal to the shape count
    let vocab = Vocab::new(toks("+ n0"));
    for l in (1..=9).step_by(2) {
        let count = exhaust(&DecodeState::new(l).unwrap(), &vocab);
        assert_eq!(count, catalan((l / 2) as u64), "size {l}");
    }
}

#[test]
fn enumeration_is_the_set_of_valid_sequences() {
    let vocab = Vocab::new(toks("+ * n0 n1"));
    for l in (1..=7).step_by(2) {
        let listed = enumerate_trees(&vocab, &[l]).unwrap();
        let set: BTreeSet<Vec<Token>> = listed.iter().cloned().collect();
        assert_eq!(set.len(), listed.len(), "duplicates at size {l}");
        let mut brute = BTreeSet::new();
        let n = vocab.len();
        for code in 0..n.pow(l as u32) {
            let mut c = code;
            let seq: Vec<Token> = (0..l)
                .map(|_| {
                    let t = vocab.get(c % n);
                    c /= n;
                    t
                })
                .collect();
            if parse_prefix(&seq).is_ok() {
                brute.insert(seq);
            }
        }
        assert_eq!(set, brute, "size {l}");
    }
}

#[test]
fn enumeration_counts_match_closed_form() {
    for (ops, nums) in [("+", "n0"), ("+ -", "n0 n1 1"), ("+ - * / ^", "n0 n1 n2 1 2 pi")] {
        let vocab = Vocab::new(toks(&format!("{ops} {nums}")));
        let o = vocab.operator_count() as u64;
        let v = vocab.numeric_count() as u64;
        for k in 0..=3u64 {
            let l = (2 * k + 1) as usize;
            let count = enumerate_trees(&vocab, &[l]).unwrap().len() as u64;
            assert_eq!(count, catalan(k) * o.pow(k as u32) * v.pow(k as u32 + 1), "{ops} {nums} size {l}");
        }
        let five = enumerate_trees(&vocab, &[5]).unwrap().len() as u64;
        assert_eq!(five, 2 * o * o * v * v * v);
    }
}

#[test]
fn synthetic_answers_match_their_expressions() {
    let corpus = synthetic_corpus(200, 20);
    for p in &corpus.problems {
        let gold = p.gold.as_ref().expect("synthetic gold maps");
        assert!(p.is_solved_by(gold), "{}", p.id);
    }
}

#[test]
fn loader_never_fabricates_quantities() {
    let text = r#"[{"id":"1","segmented_text":"a b 3.5 c 50% d (1/4) e 12","equation":"x=3.5*12","ans":"42"}]"#;
    let corpus = parse_corpus(text, Provenance::Math23k).unwrap();
    for p in synthetic_corpus(50, 3).problems.iter().chain(&corpus.problems) {
        for q in &p.quantities {
            let word = &p.words[q.position];
            let parsed = lbf_core::data::parse_number(word).expect("quantity word parses");
            assert_eq!(parsed, q.value, "{word}");
        }
    }
}

#[test]
fn oracle_contains_every_fix() {
    let corpus = synthetic_corpus(24, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for p in corpus.problems.iter().filter(|p| p.quantities.len() <= 3) {
        let vocab = p.vocab();
        let scorer = UniformScorer::new(vocab.clone());
        for l in [3, 5] {
            let start = masked_decode(l, &vocab, &mut rng);
            if let Some(fix) = m_fix(&start, &p.values(), p.answer, 20, &scorer, &mut rng) {
                let solutions = oracle_solutions(p, &[l], &vocab).unwrap();
                assert!(solutions.contains(&fix.tokens), "{}", p.id);
                // independent re-enumeration in reverse vocabulary order
                let reversed = Vocab::new(vocab.tokens().iter().rev().copied());
                let again: BTreeSet<_> = oracle_solutions(p, &[l], &reversed).unwrap().into_iter().collect();
                assert_eq!(again, solutions.into_iter().collect());
            }
        }
    }
}

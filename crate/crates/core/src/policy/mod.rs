//! Goal-driven tree decoder.
//!
//! The encoder runs a bidirectional gated recurrent cell over word
//! embeddings. Decoding walks the expression in preorder: each step attends
//! over the encoder states with the current goal, scores every admissible
//! token, and either splits the goal for an operator or closes a subtree
//! for a leaf. Right goals are conditioned on the summary of the finished
//! left subtree.

mod graph;
mod params;

use std::cell::RefCell;
use std::cmp::Ordering;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use crate::data::Problem;
use crate::expr::Token;
use crate::fixer::TokenScorer;
use crate::tree_reg::DecodeState;
use crate::vocab::Vocab;

pub use graph::{softmax, Graph, NodeId};
pub use params::{
    read_checkpoint, write_checkpoint, CheckpointError, Matrix, Param, PolicyParams, WordVocab, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION, UNKNOWN_WORD,
};

pub const DEFAULT_WIDTH: usize = 64;
pub const INIT_SCALE: f64 = 0.08;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode {
    Greedy,
    Sample,
    Beam(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeTrace {
    pub tokens: Vec<Token>,
    /// Full-vocabulary distribution at every step; masked entries are 0.
    pub distributions: Vec<Vec<f64>>,
    pub goals: Vec<Vec<f64>>,
    pub log_prob: f64,
}

/// Encoder output plus the per-token embeddings and key projections that
/// every decoding step reuses.
#[derive(Debug, Clone)]
struct Encoded {
    states: Vec<NodeId>,
    root_goal: NodeId,
    attn_keys: Vec<NodeId>,
    token_embeddings: Vec<NodeId>,
    score_keys: Vec<NodeId>,
    vocab: Vocab,
}

#[derive(Debug, Clone)]
struct Frame {
    goal: NodeId,
    context: NodeId,
    op: NodeId,
    left: Option<NodeId>,
}

#[derive(Debug, Clone)]
struct Cursor {
    state: DecodeState,
    stack: Vec<Frame>,
    goal: Option<NodeId>,
}

#[derive(Debug, Clone)]
struct Hypothesis {
    cursor: Cursor,
    indices: Vec<usize>,
    distributions: Vec<Vec<f64>>,
    goals: Vec<Vec<f64>>,
    log_prob: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub params: PolicyParams,
    pub words: WordVocab,
}

struct Step {
    admitted: Vec<usize>,
    scores: NodeId,
    context: NodeId,
    distribution: Vec<f64>,
}

impl Policy {
    pub fn new<R: Rng + ?Sized>(width: usize, words: WordVocab, rng: &mut R) -> Self {
        Policy {
            params: PolicyParams::uniform(width, words.len(), INIT_SCALE, rng),
            words,
        }
    }

    /// Word table covering every encoder word of `problems`.
    pub fn word_vocab<'a>(problems: impl IntoIterator<Item = &'a Problem>) -> WordVocab {
        let words: Vec<String> = problems.into_iter().flat_map(Problem::encoder_words).collect();
        WordVocab::build(words.iter().map(String::as_str))
    }

    pub fn width(&self) -> usize {
        self.params.width
    }

    pub fn to_checkpoint(&self) -> String {
        write_checkpoint(&self.params, &self.words)
    }

    pub fn from_checkpoint(text: &str) -> Result<Self, CheckpointError> {
        let (params, words) = read_checkpoint(text)?;
        Ok(Policy { params, words })
    }

    fn gru_step(&self, g: &mut Graph, x: NodeId, h: NodeId, backward: bool) -> NodeId {
        let d = self.width();
        let p = &self.params;
        let (gi, gh, gb, ci, ch, cb) = if backward {
            (
                Param::BwdGateInput,
                Param::BwdGateHidden,
                Param::BwdGateBias,
                Param::BwdCandInput,
                Param::BwdCandHidden,
                Param::BwdCandBias,
            )
        } else {
            (
                Param::FwdGateInput,
                Param::FwdGateHidden,
                Param::FwdGateBias,
                Param::FwdCandInput,
                Param::FwdCandHidden,
                Param::FwdCandBias,
            )
        };
        let pre = g.affine(p, &[(gi, 0, x), (gh, 0, h)], Some(gb));
        let gates = g.sigmoid(pre);
        let z = g.slice(gates, 0, d);
        let r = g.slice(gates, d, d);
        let rh = g.mul(r, h);
        let pre_n = g.affine(p, &[(ci, 0, x), (ch, 0, rh)], Some(cb));
        let n = g.tanh(pre_n);
        let diff = g.sub(h, n);
        let keep = g.mul(z, diff);
        g.add(n, keep)
    }

    fn encode_graph(&self, g: &mut Graph, problem: &Problem, vocab: &Vocab) -> Encoded {
        let d = self.width();
        let p = &self.params;
        let words = problem.encoder_words();
        assert!(!words.is_empty(), "problem {} has no words", problem.id);
        let xs: Vec<NodeId> = words
            .iter()
            .map(|w| g.row(p, Param::WordEmbedding, self.words.id(w)))
            .collect();
        let zero = g.input(vec![0.0; d]);
        let mut fwd = Vec::with_capacity(xs.len());
        let mut h = zero;
        for &x in &xs {
            h = self.gru_step(g, x, h, false);
            fwd.push(h);
        }
        let mut bwd = vec![zero; xs.len()];
        let mut h = zero;
        for (i, &x) in xs.iter().enumerate().rev() {
            h = self.gru_step(g, x, h, true);
            bwd[i] = h;
        }
        let states: Vec<NodeId> = fwd.iter().zip(&bwd).map(|(&f, &b)| g.add(f, b)).collect();
        let root_goal = g.add(*fwd.last().unwrap(), bwd[0]);
        let attn_keys = states.iter().map(|&h| g.affine(p, &[(Param::AttnW, d, h)], None)).collect();

        let vocab = vocab.clone();
        let token_embeddings: Vec<NodeId> = vocab
            .tokens()
            .iter()
            .map(|t| match *t {
                Token::Op(op) => g.row(p, Param::OpEmbedding, op.index()),
                Token::Const(c) => g.row(p, Param::ConstEmbedding, c.index()),
                Token::Quantity(i) => states[problem.quantities[i].position],
            })
            .collect();
        let score_keys = token_embeddings
            .iter()
            .map(|&e| g.affine(p, &[(Param::ScoreW, 2 * d, e)], None))
            .collect();
        Encoded {
            states,
            root_goal,
            attn_keys,
            token_embeddings,
            score_keys,
            vocab,
        }
    }

    fn context(&self, g: &mut Graph, enc: &Encoded, goal: NodeId) -> NodeId {
        let query = g.affine(&self.params, &[(Param::AttnW, 0, goal)], None);
        let scores = g.additive_scores(&self.params, query, &enc.attn_keys, Param::AttnV);
        g.attend(scores, &enc.states)
    }

    fn step(&self, g: &mut Graph, enc: &Encoded, cursor: &Cursor) -> Step {
        let d = self.width();
        let goal = cursor.goal.expect("decode cursor already complete");
        let context = self.context(g, enc, goal);
        let admitted: Vec<usize> = enc
            .vocab
            .tokens()
            .iter()
            .enumerate()
            .filter(|(_, &t)| cursor.state.allows(t))
            .map(|(i, _)| i)
            .collect();
        assert!(!admitted.is_empty(), "decode state admits no token");
        let query = g.affine(&self.params, &[(Param::ScoreW, 0, goal), (Param::ScoreW, d, context)], None);
        let keys: Vec<NodeId> = admitted.iter().map(|&i| enc.score_keys[i]).collect();
        let scores = g.additive_scores(&self.params, query, &keys, Param::ScoreV);
        let probs = softmax(g.value(scores));
        let mut distribution = vec![0.0; enc.vocab.len()];
        for (&i, &p) in admitted.iter().zip(&probs) {
            distribution[i] = p;
        }
        Step {
            admitted,
            scores,
            context,
            distribution,
        }
    }

    fn left_goal(&self, g: &mut Graph, goal: NodeId, context: NodeId, op: NodeId) -> NodeId {
        let d = self.width();
        let pre = g.affine(
            &self.params,
            &[(Param::GoalLeft, 0, goal), (Param::GoalLeft, d, context), (Param::GoalLeft, 2 * d, op)],
            None,
        );
        g.tanh(pre)
    }

    fn right_goal(&self, g: &mut Graph, frame: &Frame, left: NodeId) -> NodeId {
        let d = self.width();
        let pre = g.affine(
            &self.params,
            &[
                (Param::GoalRight, 0, frame.goal),
                (Param::GoalRight, d, frame.context),
                (Param::GoalRight, 2 * d, frame.op),
                (Param::GoalRight, 3 * d, left),
            ],
            None,
        );
        g.tanh(pre)
    }

    fn summary(&self, g: &mut Graph, op: NodeId, left: NodeId, right: NodeId) -> NodeId {
        let d = self.width();
        let pre = g.affine(
            &self.params,
            &[(Param::Subtree, 0, op), (Param::Subtree, d, left), (Param::Subtree, 2 * d, right)],
            None,
        );
        g.tanh(pre)
    }

    fn start(&self, enc: &Encoded, size: usize) -> Cursor {
        Cursor {
            state: DecodeState::new(size).expect("target size must be odd"),
            stack: Vec::new(),
            goal: Some(enc.root_goal),
        }
    }

    fn advance(&self, g: &mut Graph, enc: &Encoded, cursor: &mut Cursor, index: usize, context: NodeId) {
        let token = enc.vocab.get(index);
        let goal = cursor.goal.expect("decode cursor already complete");
        cursor.state.push(token);
        let embedding = enc.token_embeddings[index];
        if token.is_op() {
            cursor.stack.push(Frame {
                goal,
                context,
                op: embedding,
                left: None,
            });
            cursor.goal = Some(self.left_goal(g, goal, context, embedding));
            return;
        }
        let mut done = embedding;
        loop {
            match cursor.stack.last_mut() {
                None => {
                    cursor.goal = None;
                    return;
                }
                Some(frame) if frame.left.is_none() => {
                    frame.left = Some(done);
                    let frame = frame.clone();
                    cursor.goal = Some(self.right_goal(g, &frame, done));
                    return;
                }
                Some(_) => {
                    let frame = cursor.stack.pop().unwrap();
                    if cursor.stack.is_empty() {
                        cursor.goal = None;
                        return;
                    }
                    done = self.summary(g, frame.op, frame.left.unwrap(), done);
                }
            }
        }
    }

    /// Teacher-forced pass over `tokens`; returns the trace and, per step,
    /// the negative log-likelihood node of the forced token.
    fn force(&self, g: &mut Graph, enc: &Encoded, tokens: &[Token]) -> (DecodeTrace, Vec<NodeId>) {
        let mut cursor = self.start(enc, tokens.len());
        let mut trace = DecodeTrace {
            tokens: tokens.to_vec(),
            distributions: Vec::with_capacity(tokens.len()),
            goals: Vec::with_capacity(tokens.len()),
            log_prob: 0.0,
        };
        let mut losses = Vec::with_capacity(tokens.len());
        for &t in tokens {
            let index = enc.vocab.index_of(t).expect("token outside the problem vocabulary");
            trace.goals.push(g.value(cursor.goal.unwrap()).to_vec());
            let step = self.step(g, enc, &cursor);
            let slot = step
                .admitted
                .iter()
                .position(|&i| i == index)
                .unwrap_or_else(|| panic!("token {t} is masked at position {}", cursor.state.position()));
            let loss = g.neg_log_softmax(step.scores, slot);
            trace.log_prob -= g.value(loss)[0];
            losses.push(loss);
            trace.distributions.push(step.distribution);
            self.advance(g, enc, &mut cursor, index, step.context);
        }
        (trace, losses)
    }

    /// Contextual states `h_i` and the root goal `q_0`.
    pub fn encode(&self, problem: &Problem) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut g = Graph::new();
        let enc = self.encode_graph(&mut g, problem, &problem.vocab());
        (
            enc.states.iter().map(|&h| g.value(h).to_vec()).collect(),
            g.value(enc.root_goal).to_vec(),
        )
    }

    /// Attention context of goal `q` over `states`.
    pub fn attend(&self, q: &[f64], states: &[Vec<f64>]) -> Vec<f64> {
        self.attention(q, states).1
    }

    /// Attention weights and context.
    pub fn attention(&self, q: &[f64], states: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
        let d = self.width();
        let mut g = Graph::new();
        let goal = g.input(q.to_vec());
        let hs: Vec<NodeId> = states.iter().map(|h| g.input(h.clone())).collect();
        let keys: Vec<NodeId> = hs.iter().map(|&h| g.affine(&self.params, &[(Param::AttnW, d, h)], None)).collect();
        let query = g.affine(&self.params, &[(Param::AttnW, 0, goal)], None);
        let scores = g.additive_scores(&self.params, query, &keys, Param::AttnV);
        let weights = softmax(g.value(scores));
        let c = g.attend(scores, &hs);
        (weights, g.value(c).to_vec())
    }

    /// Masked token distribution over the problem vocabulary for goal `q`
    /// and context `c`.
    pub fn score_tokens(&self, q: &[f64], c: &[f64], problem: &Problem, mask: &[bool]) -> Vec<f64> {
        let d = self.width();
        let mut g = Graph::new();
        let enc = self.encode_graph(&mut g, problem, &problem.vocab());
        assert_eq!(mask.len(), enc.vocab.len());
        let admitted: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
        assert!(!admitted.is_empty(), "mask admits no token");
        let goal = g.input(q.to_vec());
        let context = g.input(c.to_vec());
        let query = g.affine(&self.params, &[(Param::ScoreW, 0, goal), (Param::ScoreW, d, context)], None);
        let keys: Vec<NodeId> = admitted.iter().map(|&i| enc.score_keys[i]).collect();
        let scores = g.additive_scores(&self.params, query, &keys, Param::ScoreV);
        let probs = softmax(g.value(scores));
        let mut out = vec![0.0; mask.len()];
        for (&i, p) in admitted.iter().zip(probs) {
            out[i] = p;
        }
        out
    }

    /// Left goal when `left_summary` is `None`, otherwise the right goal
    /// after a left subtree with that summary.
    pub fn decompose_goal(&self, q: &[f64], c: &[f64], op: crate::expr::Op, left_summary: Option<&[f64]>) -> Vec<f64> {
        let mut g = Graph::new();
        let goal = g.input(q.to_vec());
        let context = g.input(c.to_vec());
        let op = g.row(&self.params, Param::OpEmbedding, op.index());
        let out = match left_summary {
            None => self.left_goal(&mut g, goal, context, op),
            Some(s) => {
                let left = g.input(s.to_vec());
                let frame = Frame {
                    goal,
                    context,
                    op,
                    left: Some(left),
                };
                self.right_goal(&mut g, &frame, left)
            }
        };
        g.value(out).to_vec()
    }

    /// Summary vector of a subtree `op(left, right)`.
    pub fn subtree_summary(&self, op: crate::expr::Op, left: &[f64], right: &[f64]) -> Vec<f64> {
        let mut g = Graph::new();
        let op = g.row(&self.params, Param::OpEmbedding, op.index());
        let l = g.input(left.to_vec());
        let r = g.input(right.to_vec());
        let out = self.summary(&mut g, op, l, r);
        g.value(out).to_vec()
    }

    /// Decodes expressions of exactly `size` tokens. Greedy and sample
    /// return one trace; beam returns up to `width` traces, best first.
    pub fn decode<R: Rng + ?Sized>(&self, problem: &Problem, size: usize, mode: DecodeMode, rng: &mut R) -> Vec<DecodeTrace> {
        self.decode_in(problem, &problem.vocab(), size, mode, rng)
    }

    /// [`Policy::decode`] over a sub-vocabulary of the problem's tokens.
    pub fn decode_in<R: Rng + ?Sized>(
        &self,
        problem: &Problem,
        vocab: &Vocab,
        size: usize,
        mode: DecodeMode,
        rng: &mut R,
    ) -> Vec<DecodeTrace> {
        let mut g = Graph::new();
        let enc = self.encode_graph(&mut g, problem, vocab);
        match mode {
            DecodeMode::Beam(width) => self.beam(&mut g, &enc, size, width.max(1)),
            DecodeMode::Greedy => vec![self.walk(&mut g, &enc, size, argmax)],
            DecodeMode::Sample => vec![self.walk(&mut g, &enc, size, |dist, admitted| {
                let weights: Vec<f64> = admitted.iter().map(|&i| dist[i]).collect();
                match WeightedIndex::new(&weights) {
                    Ok(w) => admitted[w.sample(rng)],
                    Err(_) => admitted[rng.gen_range(0..admitted.len())],
                }
            })],
        }
    }

    pub fn greedy(&self, problem: &Problem, size: usize) -> DecodeTrace {
        let mut g = Graph::new();
        let enc = self.encode_graph(&mut g, problem, &problem.vocab());
        self.walk(&mut g, &enc, size, argmax)
    }

    fn walk(
        &self,
        g: &mut Graph,
        enc: &Encoded,
        size: usize,
        mut choose: impl FnMut(&[f64], &[usize]) -> usize,
    ) -> DecodeTrace {
        let mut cursor = self.start(enc, size);
        let mut trace = DecodeTrace {
            tokens: Vec::with_capacity(size),
            distributions: Vec::with_capacity(size),
            goals: Vec::with_capacity(size),
            log_prob: 0.0,
        };
        while let Some(goal) = cursor.goal {
            trace.goals.push(g.value(goal).to_vec());
            let step = self.step(g, enc, &cursor);
            let index = choose(&step.distribution, &step.admitted);
            trace.log_prob += step.distribution[index].ln();
            trace.tokens.push(enc.vocab.get(index));
            trace.distributions.push(step.distribution);
            self.advance(g, enc, &mut cursor, index, step.context);
        }
        trace
    }

    fn beam(&self, g: &mut Graph, enc: &Encoded, size: usize, width: usize) -> Vec<DecodeTrace> {
        let mut beam = vec![Hypothesis {
            cursor: self.start(enc, size),
            indices: Vec::new(),
            distributions: Vec::new(),
            goals: Vec::new(),
            log_prob: 0.0,
        }];
        for _ in 0..size {
            let mut steps = Vec::with_capacity(beam.len());
            let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
            for (h, hyp) in beam.iter().enumerate() {
                let step = self.step(g, enc, &hyp.cursor);
                for &i in &step.admitted {
                    candidates.push((hyp.log_prob + step.distribution[i].ln(), h, i));
                }
                steps.push(step);
            }
            candidates.sort_by(|a, b| {
                b.0.total_cmp(&a.0)
                    .then_with(|| beam[a.1].indices.cmp(&beam[b.1].indices))
                    .then_with(|| a.2.cmp(&b.2))
            });
            candidates.truncate(width);
            let mut next = Vec::with_capacity(candidates.len());
            for (log_prob, h, i) in candidates {
                let mut hyp = beam[h].clone();
                hyp.goals.push(g.value(hyp.cursor.goal.unwrap()).to_vec());
                hyp.distributions.push(steps[h].distribution.clone());
                hyp.indices.push(i);
                hyp.log_prob = log_prob;
                self.advance(g, enc, &mut hyp.cursor, i, steps[h].context);
                next.push(hyp);
            }
            beam = next;
        }
        beam.sort_by(|a, b| compare_ranked(a.log_prob, &a.indices, b.log_prob, &b.indices));
        beam.into_iter()
            .map(|h| DecodeTrace {
                tokens: h.indices.iter().map(|&i| enc.vocab.get(i)).collect(),
                distributions: h.distributions,
                goals: h.goals,
                log_prob: h.log_prob,
            })
            .collect()
    }

    /// Teacher-forced trace of `tokens`.
    pub fn teacher_force(&self, problem: &Problem, tokens: &[Token]) -> DecodeTrace {
        self.teacher_force_in(problem, &problem.vocab(), tokens)
    }

    pub fn teacher_force_in(&self, problem: &Problem, vocab: &Vocab, tokens: &[Token]) -> DecodeTrace {
        let mut g = Graph::new();
        let enc = self.encode_graph(&mut g, problem, vocab);
        self.force(&mut g, &enc, tokens).0
    }

    pub fn log_prob(&self, problem: &Problem, tokens: &[Token]) -> f64 {
        self.teacher_force(problem, tokens).log_prob
    }

    /// `sum_k w_k * -log p(T_k | P)` and its gradient. Masks stay active, so
    /// every tree must be a valid prefix expression over the problem
    /// vocabulary.
    pub fn weighted_loss_and_grads(&self, problem: &Problem, trees: &[(&[Token], f64)]) -> (f64, PolicyParams) {
        self.weighted_loss_and_grads_in(problem, &problem.vocab(), trees)
    }

    pub fn weighted_loss_and_grads_in(
        &self,
        problem: &Problem,
        vocab: &Vocab,
        trees: &[(&[Token], f64)],
    ) -> (f64, PolicyParams) {
        let mut g = Graph::new();
        let enc = self.encode_graph(&mut g, problem, vocab);
        let mut seeds = Vec::new();
        let mut loss = 0.0;
        for &(tokens, weight) in trees {
            let (trace, nodes) = self.force(&mut g, &enc, tokens);
            loss -= weight * trace.log_prob;
            seeds.extend(nodes.into_iter().map(|n| (n, weight)));
        }
        (loss, g.backward(&self.params, &seeds))
    }

    /// Buffer cross-entropy: summed negative log-likelihood of every tree.
    pub fn loss_and_grads(&self, problem: &Problem, trees: &[Vec<Token>]) -> (f64, PolicyParams) {
        let weighted: Vec<(&[Token], f64)> = trees.iter().map(|t| (t.as_slice(), 1.0)).collect();
        self.weighted_loss_and_grads(problem, &weighted)
    }

    pub fn loss_and_grads_in(&self, problem: &Problem, vocab: &Vocab, trees: &[Vec<Token>]) -> (f64, PolicyParams) {
        let weighted: Vec<(&[Token], f64)> = trees.iter().map(|t| (t.as_slice(), 1.0)).collect();
        self.weighted_loss_and_grads_in(problem, vocab, &weighted)
    }

    pub fn scorer<'a>(&'a self, problem: &'a Problem) -> PolicyScorer<'a> {
        let mut g = Graph::new();
        let enc = self.encode_graph(&mut g, problem, &problem.vocab());
        let base = g.len();
        PolicyScorer {
            policy: self,
            enc,
            graph: RefCell::new(g),
            base,
        }
    }
}

fn argmax(dist: &[f64], admitted: &[usize]) -> usize {
    let mut best = admitted[0];
    for &i in admitted {
        if dist[i] > dist[best] {
            best = i;
        }
    }
    best
}

/// Ranking used for beams and merged candidate lists: higher log-probability
/// first, then lexicographically smaller token indices.
pub fn compare_ranked(lp_a: f64, a: &[usize], lp_b: f64, b: &[usize]) -> Ordering {
    lp_b.total_cmp(&lp_a).then_with(|| a.cmp(b))
}

/// Policy bound to one problem, reusing the encoder pass across calls.
pub struct PolicyScorer<'a> {
    policy: &'a Policy,
    enc: Encoded,
    graph: RefCell<Graph>,
    base: usize,
}

impl TokenScorer for PolicyScorer<'_> {
    fn vocab(&self) -> &Vocab {
        &self.enc.vocab
    }

    fn distributions(&self, tokens: &[Token]) -> Vec<Vec<f64>> {
        let mut g = self.graph.borrow_mut();
        let (trace, _) = self.policy.force(&mut g, &self.enc, tokens);
        g.truncate(self.base);
        trace.distributions
    }
}

/// Relative error per block between analytic and central-difference
/// gradients.
pub fn gradient_check(pol: &mut Policy, p: &Problem, trees: &[Vec<Token>], eps: f64) -> Vec<(Param, f64)> {
    let (_, grads) = pol.loss_and_grads(p, trees);
    let mut out = Vec::new();
    for &param in Param::ALL {
        let n = pol.params.get(param).data.len();
        let mut numeric = vec![0.0; n];
        for i in 0..n {
            let orig = pol.params.get(param).data[i];
            pol.params.get_mut(param).data[i] = orig + eps;
            let plus = pol.loss_and_grads(p, trees).0;
            pol.params.get_mut(param).data[i] = orig - eps;
            let minus = pol.loss_and_grads(p, trees).0;
            pol.params.get_mut(param).data[i] = orig;
            numeric[i] = (plus - minus) / (2.0 * eps);
        }
        let analytic = &grads.get(param).data;
        let diff = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale = analytic
            .iter()
            .map(|a| a * a)
            .sum::<f64>()
            .sqrt()
            .max(numeric.iter().map(|a| a * a).sum::<f64>().sqrt());
        out.push((param, if scale < 1e-10 { diff } else { diff / scale }));
    }
    out
}

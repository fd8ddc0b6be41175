//! Training strategies.
//!
//! Every strategy implements [`Strategy`] and is looked up by name in a
//! [`StrategyRegistry`]. The built-in registry holds learning-by-fixing
//! (`lbf`), its memoryless variant (`lbf-no-memory`), the gold-initialised
//! variant (`lbf-fully`) and the two policy-gradient baselines
//! (`reinforce`, `mapo`).

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Problem;
use crate::expr::{format_prefix, Token};
use crate::fixer::m_fix;
use crate::policy::{DecodeMode, Policy, PolicyParams};
use crate::tree_reg::SizePrior;

pub const DEFAULT_CLIP_NORM: f64 = 5.0;
pub const DEFAULT_LEARNING_RATE: f64 = 0.01;
pub const DEFAULT_MAPO_CLIP: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InsertOutcome {
    Added,
    Duplicate,
    /// The tree does not execute to the problem's answer.
    Rejected,
}

/// Verified, deduplicated solutions per problem id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MemoryBuffer {
    capacity: Option<usize>,
    entries: BTreeMap<String, Vec<Vec<Token>>>,
}

impl MemoryBuffer {
    pub fn new() -> Self {
        MemoryBuffer::default()
    }

    /// Keeps at most `capacity` trees per problem, evicting the oldest.
    pub fn with_capacity(capacity: usize) -> Self {
        MemoryBuffer {
            capacity: Some(capacity.max(1)),
            entries: BTreeMap::new(),
        }
    }

    pub fn capacity(&self) -> Option<usize> {
        self.capacity
    }

    pub fn insert(&mut self, problem: &Problem, tokens: &[Token]) -> InsertOutcome {
        if !problem.is_solved_by(tokens) {
            return InsertOutcome::Rejected;
        }
        let trees = self.entries.entry(problem.id.clone()).or_default();
        if trees.iter().any(|t| t == tokens) {
            return InsertOutcome::Duplicate;
        }
        trees.push(tokens.to_vec());
        if let Some(cap) = self.capacity {
            while trees.len() > cap {
                trees.remove(0);
            }
        }
        InsertOutcome::Added
    }

    pub fn get(&self, id: &str) -> &[Vec<Token>] {
        self.entries.get(id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn contains(&self, id: &str, tokens: &[Token]) -> bool {
        self.get(id).iter().any(|t| t == tokens)
    }

    pub fn total(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    pub fn mean_size(&self, problems: &[Problem]) -> f64 {
        if problems.is_empty() {
            return 0.0;
        }
        problems.iter().map(|p| self.get(&p.id).len()).sum::<usize>() as f64 / problems.len() as f64
    }

    /// Re-verifies every stored tree.
    pub fn is_sound(&self, problems: &[Problem]) -> bool {
        let by_id: BTreeMap<&str, &Problem> = problems.iter().map(|p| (p.id.as_str(), p)).collect();
        self.entries.iter().all(|(id, trees)| {
            by_id
                .get(id.as_str())
                .is_some_and(|p| trees.iter().all(|t| p.is_solved_by(t)))
        })
    }

    /// One line per tree: `<problem id>\t<prefix>`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (id, trees) in &self.entries {
            for t in trees {
                writeln!(out, "{id}\t{}", format_prefix(t)).unwrap();
            }
        }
        out
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct InitStats {
    pub seeded: usize,
    pub missing_gold: usize,
    pub mismatched: usize,
}

/// Seeds each buffer with the problem's gold expression when it executes to
/// the stated answer.
pub fn init_buffers_fully(problems: &[Problem], buffers: &mut MemoryBuffer) -> InitStats {
    let mut stats = InitStats::default();
    for p in problems {
        let Some(gold) = &p.gold else {
            stats.missing_gold += 1;
            continue;
        };
        match buffers.insert(p, gold) {
            InsertOutcome::Added => stats.seeded += 1,
            InsertOutcome::Duplicate => {}
            InsertOutcome::Rejected => {
                log::warn!("gold for {} does not reach its answer, skipped", p.id);
                stats.mismatched += 1;
            }
        }
    }
    stats
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    Sum,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Exploration {
    Greedy,
    Sample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub strategy: String,
    pub epochs: usize,
    pub fix_steps: usize,
    pub size_prior: SizePrior,
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub optimizer: OptimizerKind,
    pub width: usize,
    pub beam_width: usize,
    pub mapo_clip: f64,
    pub reduction: Reduction,
    pub exploration: Exploration,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            strategy: "lbf".into(),
            epochs: 20,
            fix_steps: crate::fixer::DEFAULT_FIX_STEPS,
            size_prior: SizePrior::default(),
            learning_rate: DEFAULT_LEARNING_RATE,
            clip_norm: DEFAULT_CLIP_NORM,
            optimizer: OptimizerKind::Sgd,
            width: crate::policy::DEFAULT_WIDTH,
            beam_width: 5,
            mapo_clip: DEFAULT_MAPO_CLIP,
            reduction: Reduction::Sum,
            exploration: Exploration::Greedy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
    #[error("unknown strategy `{0}`")]
    UnknownStrategy(String),
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |field: &str, message: &str| {
            Err(ConfigError::Invalid {
                field: field.into(),
                message: message.into(),
            })
        };
        if self.epochs < 1 {
            return bad("epochs", "must be at least 1");
        }
        if self.fix_steps < 1 {
            return bad("fix_steps", "must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate", "must be positive");
        }
        if !(self.clip_norm > 0.0) {
            return bad("clip_norm", "must be positive");
        }
        if self.width < 1 {
            return bad("width", "must be at least 1");
        }
        if self.beam_width < 1 {
            return bad("beam_width", "must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.mapo_clip) {
            return bad("mapo_clip", "must lie in [0, 1]");
        }
        Ok(())
    }
}

pub trait Optimizer {
    fn step(&mut self, params: &mut PolicyParams, grads: &PolicyParams);
}

/// Scales `grads` down to norm `max_norm` if larger; returns the original norm.
pub fn clip_gradients(grads: &mut PolicyParams, max_norm: f64) -> f64 {
    let norm = grads.norm();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}

#[derive(Debug, Clone)]
pub struct Sgd {
    pub learning_rate: f64,
    pub clip_norm: f64,
}

impl Optimizer for Sgd {
    fn step(&mut self, params: &mut PolicyParams, grads: &PolicyParams) {
        let mut g = grads.clone();
        clip_gradients(&mut g, self.clip_norm);
        params.add_scaled(&g, -self.learning_rate);
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    t: i32,
    m: Option<PolicyParams>,
    v: Option<PolicyParams>,
}

impl Adam {
    pub fn new(learning_rate: f64, clip_norm: f64) -> Self {
        Adam {
            learning_rate,
            clip_norm,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            t: 0,
            m: None,
            v: None,
        }
    }
}

impl Optimizer for Adam {
    fn step(&mut self, params: &mut PolicyParams, grads: &PolicyParams) {
        let mut g = grads.clone();
        clip_gradients(&mut g, self.clip_norm);
        let m = self.m.get_or_insert_with(|| params.zeros_like());
        let v = self.v.get_or_insert_with(|| params.zeros_like());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (((p, g), m), v) in params.blocks.iter_mut().zip(&g.blocks).zip(&mut m.blocks).zip(&mut v.blocks) {
            for i in 0..p.data.len() {
                let gi = g.data[i];
                if gi == 0.0 && m.data[i] == 0.0 {
                    continue;
                }
                m.data[i] = self.beta1 * m.data[i] + (1.0 - self.beta1) * gi;
                v.data[i] = self.beta2 * v.data[i] + (1.0 - self.beta2) * gi * gi;
                let mh = m.data[i] / c1;
                let vh = v.data[i] / c2;
                p.data[i] -= self.learning_rate * mh / (vh.sqrt() + self.epsilon);
            }
        }
    }
}

pub fn make_optimizer(config: &TrainConfig) -> Box<dyn Optimizer> {
    match config.optimizer {
        OptimizerKind::Sgd => Box::new(Sgd {
            learning_rate: config.learning_rate,
            clip_norm: config.clip_norm,
        }),
        OptimizerKind::Adam => Box::new(Adam::new(config.learning_rate, config.clip_norm)),
    }
}

/// Update audit: buffer-driven updates only ever use verified trees, while
/// likelihood-ratio updates may touch unverified samples.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Counters {
    pub samples: usize,
    pub fixes_found: usize,
    pub verified_updates: usize,
    pub unverified_updates: usize,
    pub likelihood_ratio_updates: usize,
}

/// Mutable training state shared by every strategy.
pub struct TrainState {
    pub policy: Policy,
    pub buffers: MemoryBuffer,
    pub optimizer: Box<dyn Optimizer>,
    pub rng: ChaCha8Rng,
    pub counters: Counters,
    pub config: TrainConfig,
    /// Running mean reward for policy-gradient baselines.
    pub baseline: f64,
    pub rewards_seen: usize,
}

impl TrainState {
    pub fn new(policy: Policy, buffers: MemoryBuffer, config: TrainConfig, rng: ChaCha8Rng) -> Self {
        TrainState {
            optimizer: make_optimizer(&config),
            policy,
            buffers,
            rng,
            counters: Counters::default(),
            config,
            baseline: 0.0,
            rewards_seen: 0,
        }
    }

    fn sample_size(&mut self, problem: &Problem) -> usize {
        let sizes = self.config.size_prior.sizes(problem.quantities.len());
        sizes[self.rng.gen_range(0..sizes.len())]
    }

    fn explore(&mut self, problem: &Problem, mode: DecodeMode) -> Vec<Token> {
        let size = self.sample_size(problem);
        self.counters.samples += 1;
        self.policy.decode(problem, size, mode, &mut self.rng).remove(0).tokens
    }

    /// One optimiser step on the buffer cross-entropy; `None` if the buffer
    /// is empty.
    pub fn buffer_step(&mut self, problem: &Problem) -> Option<f64> {
        let trees = self.buffers.get(&problem.id).to_vec();
        if trees.is_empty() {
            return None;
        }
        debug_assert!(trees.iter().all(|t| problem.is_solved_by(t)));
        let (mut loss, mut grads) = self.policy.loss_and_grads(problem, &trees);
        if self.config.reduction == Reduction::Mean {
            loss /= trees.len() as f64;
            grads.scale(1.0 / trees.len() as f64);
        }
        self.optimizer.step(&mut self.policy.params, &grads);
        self.counters.verified_updates += trees.len();
        Some(loss)
    }

    /// Reward for `tokens` and the advantage against the running baseline,
    /// which is then updated.
    fn reward(&mut self, problem: &Problem, tokens: &[Token]) -> (f64, f64) {
        let reward = if problem.is_solved_by(tokens) { 1.0 } else { 0.0 };
        let advantage = reward - self.baseline;
        self.rewards_seen += 1;
        self.baseline += (reward - self.baseline) / self.rewards_seen as f64;
        (reward, advantage)
    }

    /// Gradient step on `sum_k w_k * -log p(T_k)`.
    fn weighted_step(&mut self, problem: &Problem, trees: &[(&[Token], f64)]) -> f64 {
        let (loss, grads) = self.policy.weighted_loss_and_grads(problem, trees);
        self.optimizer.step(&mut self.policy.params, &grads);
        loss
    }
}

/// What one strategy call did for one problem.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepOutcome {
    pub fixed: bool,
    pub loss: Option<f64>,
}

pub trait Strategy {
    fn name(&self) -> &str;

    /// Called once before the first epoch.
    fn prepare(&mut self, _state: &mut TrainState, _problems: &[Problem]) {}

    fn train_problem(&mut self, state: &mut TrainState, problem: &Problem) -> StepOutcome;

    /// Buffer used by a fresh run of this strategy.
    fn new_buffer(&self) -> MemoryBuffer {
        MemoryBuffer::new()
    }
}

/// Learning by fixing: explore, repair with m-FIX, remember, fit the buffer.
#[derive(Debug, Clone, Default)]
pub struct Lbf {
    memory: bool,
    fully: bool,
}

impl Lbf {
    pub fn with_memory() -> Self {
        Lbf { memory: true, fully: false }
    }

    pub fn without_memory() -> Self {
        Lbf { memory: false, fully: false }
    }

    pub fn fully() -> Self {
        Lbf { memory: true, fully: true }
    }
}

impl Strategy for Lbf {
    fn name(&self) -> &str {
        match (self.memory, self.fully) {
            (_, true) => "lbf-fully",
            (true, false) => "lbf",
            (false, false) => "lbf-no-memory",
        }
    }

    fn new_buffer(&self) -> MemoryBuffer {
        if self.memory {
            MemoryBuffer::new()
        } else {
            MemoryBuffer::with_capacity(1)
        }
    }

    fn prepare(&mut self, state: &mut TrainState, problems: &[Problem]) {
        if self.fully {
            let stats = init_buffers_fully(problems, &mut state.buffers);
            log::info!(
                "seeded {} buffers from gold ({} missing, {} mismatched)",
                stats.seeded,
                stats.missing_gold,
                stats.mismatched
            );
        }
    }

    fn train_problem(&mut self, state: &mut TrainState, problem: &Problem) -> StepOutcome {
        let mode = match state.config.exploration {
            Exploration::Greedy => DecodeMode::Greedy,
            Exploration::Sample => DecodeMode::Sample,
        };
        let guess = state.explore(problem, mode);
        let fix = {
            let scorer = state.policy.scorer(problem);
            m_fix(
                &guess,
                &problem.values(),
                problem.answer,
                state.config.fix_steps,
                &scorer,
                &mut state.rng,
            )
        };
        let fixed = fix.is_some();
        if let Some(fix) = fix {
            state.counters.fixes_found += 1;
            let outcome = state.buffers.insert(problem, &fix.tokens);
            debug_assert_ne!(outcome, InsertOutcome::Rejected);
        }
        StepOutcome {
            fixed,
            loss: state.buffer_step(problem),
        }
    }
}

/// Likelihood-ratio gradient with a running-mean reward baseline.
#[derive(Debug, Clone, Default)]
pub struct Reinforce;

impl Strategy for Reinforce {
    fn name(&self) -> &str {
        "reinforce"
    }

    fn train_problem(&mut self, state: &mut TrainState, problem: &Problem) -> StepOutcome {
        let sample = state.explore(problem, DecodeMode::Sample);
        let (reward, advantage) = state.reward(problem, &sample);
        if advantage == 0.0 {
            return StepOutcome::default();
        }
        state.counters.likelihood_ratio_updates += 1;
        if reward == 0.0 {
            state.counters.unverified_updates += 1;
        }
        StepOutcome {
            fixed: false,
            loss: Some(state.weighted_step(problem, &[(&sample, advantage)])),
        }
    }
}

/// Memory-augmented policy gradient: an exact expectation over the buffer of
/// rewarding samples plus a likelihood-ratio estimate outside it.
#[derive(Debug, Clone, Default)]
pub struct Mapo;

/// Weight of the buffer term: total policy mass of the buffer, clipped from
/// below; 0 for an empty buffer.
pub fn mapo_buffer_weight(buffer_log_probs: &[f64], clip: f64) -> f64 {
    if buffer_log_probs.is_empty() {
        return 0.0;
    }
    let mass: f64 = buffer_log_probs.iter().map(|lp| lp.exp()).sum();
    mass.clamp(clip, 1.0)
}

impl Strategy for Mapo {
    fn name(&self) -> &str {
        "mapo"
    }

    fn train_problem(&mut self, state: &mut TrainState, problem: &Problem) -> StepOutcome {
        let sample = state.explore(problem, DecodeMode::Sample);
        let buffer = state.buffers.get(&problem.id).to_vec();
        let log_probs: Vec<f64> = buffer.iter().map(|t| state.policy.log_prob(problem, t)).collect();
        let weight = mapo_buffer_weight(&log_probs, state.config.mapo_clip);
        let inside = buffer.contains(&sample);

        let mut terms: Vec<(&[Token], f64)> = buffer
            .iter()
            .map(|t| (t.as_slice(), weight / buffer.len() as f64))
            .collect();
        let mut rewarded = false;
        if !inside {
            let (reward, advantage) = state.reward(problem, &sample);
            rewarded = reward > 0.0;
            let w = (1.0 - weight) * advantage;
            if w != 0.0 {
                terms.push((&sample, w));
                state.counters.likelihood_ratio_updates += 1;
                if !rewarded {
                    state.counters.unverified_updates += 1;
                }
            }
        }
        state.counters.verified_updates += buffer.len();
        let loss = if terms.is_empty() {
            None
        } else {
            Some(state.weighted_step(problem, &terms))
        };
        if rewarded {
            state.buffers.insert(problem, &sample);
        }
        StepOutcome { fixed: false, loss }
    }
}

type Factory = fn() -> Box<dyn Strategy>;

/// Name-indexed strategy constructors.
pub struct StrategyRegistry {
    factories: BTreeMap<String, Factory>,
}

impl Default for StrategyRegistry {
    fn default() -> Self {
        let mut reg = StrategyRegistry {
            factories: BTreeMap::new(),
        };
        reg.register("lbf", || Box::new(Lbf::with_memory()));
        reg.register("lbf-no-memory", || Box::new(Lbf::without_memory()));
        reg.register("lbf-fully", || Box::new(Lbf::fully()));
        reg.register("reinforce", || Box::new(Reinforce));
        reg.register("mapo", || Box::new(Mapo));
        reg
    }
}

impl StrategyRegistry {
    pub fn empty() -> Self {
        StrategyRegistry {
            factories: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, name: &str, factory: Factory) {
        self.factories.insert(name.to_string(), factory);
    }

    pub fn names(&self) -> Vec<&str> {
        self.factories.keys().map(String::as_str).collect()
    }

    pub fn create(&self, name: &str) -> Result<Box<dyn Strategy>, ConfigError> {
        self.factories
            .get(name)
            .map(|f| f())
            .ok_or_else(|| ConfigError::UnknownStrategy(name.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub strategy: String,
    pub train_accuracy: f64,
    pub fixes_found: usize,
    pub mean_buffer_size: f64,
    pub loss: f64,
}

/// Top-1 answer accuracy: greedy decode at every admissible size, keep the
/// most probable.
pub fn greedy_accuracy(policy: &Policy, problems: &[Problem], prior: &SizePrior) -> f64 {
    if problems.is_empty() {
        return 0.0;
    }
    let solved = problems
        .iter()
        .filter(|p| {
            let best = prior
                .sizes(p.quantities.len())
                .into_iter()
                .map(|l| policy.greedy(p, l))
                .reduce(|a, b| if b.log_prob > a.log_prob { b } else { a });
            best.is_some_and(|t| p.is_solved_by(&t.tokens))
        })
        .count();
    solved as f64 / problems.len() as f64
}

/// Runs a strategy for the configured epochs and reports one row per epoch.
pub struct Trainer {
    pub strategy: Box<dyn Strategy>,
    pub state: TrainState,
}

impl Trainer {
    pub fn new(
        registry: &StrategyRegistry,
        config: TrainConfig,
        problems: &[Problem],
        seed: u64,
    ) -> Result<Self, ConfigError> {
        use rand::SeedableRng;
        config.validate()?;
        let mut strategy = registry.create(&config.strategy)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let policy = Policy::new(config.width, Policy::word_vocab(problems), &mut rng);
        let mut state = TrainState::new(policy, strategy.new_buffer(), config, rng);
        strategy.prepare(&mut state, problems);
        Ok(Trainer { strategy, state })
    }

    pub fn epoch(&mut self, epoch: usize, problems: &[Problem]) -> EpochStats {
        let mut order: Vec<usize> = (0..problems.len()).collect();
        order.shuffle(&mut self.state.rng);
        let mut fixes = 0;
        let mut losses = Vec::new();
        for i in order {
            let out = self.strategy.train_problem(&mut self.state, &problems[i]);
            fixes += out.fixed as usize;
            losses.extend(out.loss);
        }
        EpochStats {
            epoch,
            strategy: self.strategy.name().to_string(),
            train_accuracy: greedy_accuracy(&self.state.policy, problems, &self.state.config.size_prior),
            fixes_found: fixes,
            mean_buffer_size: self.state.buffers.mean_size(problems),
            loss: if losses.is_empty() {
                0.0
            } else {
                losses.iter().sum::<f64>() / losses.len() as f64
            },
        }
    }

    pub fn run(&mut self, problems: &[Problem], mut on_epoch: impl FnMut(&EpochStats)) -> Vec<EpochStats> {
        (1..=self.state.config.epochs)
            .map(|e| {
                let stats = self.epoch(e, problems);
                log::info!(
                    "{} epoch {e}: acc {:.3} fixes {} buffer {:.2} loss {:.4}",
                    stats.strategy,
                    stats.train_accuracy,
                    stats.fixes_found,
                    stats.mean_buffer_size,
                    stats.loss
                );
                on_epoch(&stats);
                stats
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthetic_corpus, Quantity};
    use crate::expr::parse_tokens;

    fn toks(s: &str) -> Vec<Token> {
        parse_tokens(s).unwrap()
    }

    fn fig1() -> Problem {
        Problem {
            id: "fig1".into(),
            words: "a 100 b 2 c 3.5".split(' ').map(String::from).collect(),
            quantities: vec![
                Quantity { value: 100.0, position: 1 },
                Quantity { value: 2.0, position: 3 },
                Quantity { value: 3.5, position: 5 },
            ],
            answer: 275.0,
            gold: Some(toks("* / n0 n1 + n1 n2")),
            equation: None,
        }
    }

    #[test]
    fn buffer_verifies_and_dedups() {
        let p = fig1();
        let mut b = MemoryBuffer::new();
        assert_eq!(b.insert(&p, &toks("* / n0 n1 + n1 n2")), InsertOutcome::Added);
        assert_eq!(b.insert(&p, &toks("* / n0 n1 + n1 n2")), InsertOutcome::Duplicate);
        assert_eq!(b.insert(&p, &toks("+ n0 n1")), InsertOutcome::Rejected);
        assert_eq!(b.insert(&p, &toks("+ n0 * / n0 n1 n2")), InsertOutcome::Added);
        assert_eq!(b.get("fig1").len(), 2);
        assert!(b.is_sound(&[p]));
        assert_eq!(b.dump(), "fig1\t* / n0 n1 + n1 n2\nfig1\t+ n0 * / n0 n1 n2\n");
    }

    #[test]
    fn capacity_one_keeps_latest() {
        let p = fig1();
        let mut b = MemoryBuffer::with_capacity(1);
        b.insert(&p, &toks("* / n0 n1 + n1 n2"));
        b.insert(&p, &toks("+ n0 * / n0 n1 n2"));
        assert_eq!(b.get("fig1"), &[toks("+ n0 * / n0 n1 n2")]);
    }

    #[test]
    fn fully_seeds_from_gold() {
        let mut p = fig1();
        let mut b = MemoryBuffer::new();
        let stats = init_buffers_fully(std::slice::from_ref(&p), &mut b);
        assert_eq!(stats.seeded, 1);
        assert_eq!(b.get("fig1"), &[toks("* / n0 n1 + n1 n2")]);
        init_buffers_fully(std::slice::from_ref(&p), &mut b);
        assert_eq!(b.total(), 1);
        p.id = "bad".into();
        p.answer = 1.0;
        let stats = init_buffers_fully(&[p], &mut b);
        assert_eq!(stats.mismatched, 1);
    }

    #[test]
    fn mapo_weight_clip() {
        assert_eq!(mapo_buffer_weight(&[], 0.1), 0.0);
        assert_eq!(mapo_buffer_weight(&[(-10.0f64)], 0.1), 0.1);
        assert!((mapo_buffer_weight(&[0.5f64.ln(), 0.25f64.ln()], 0.1) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut g = PolicyParams::zeros(2, 2);
        g.blocks[0].data.fill(10.0);
        let before = clip_gradients(&mut g, 5.0);
        assert!(before > 5.0);
        assert!((g.norm() - 5.0).abs() < 1e-9);
    }

    #[test]
    fn registry_knows_every_strategy() {
        let reg = StrategyRegistry::default();
        assert_eq!(reg.names(), vec!["lbf", "lbf-fully", "lbf-no-memory", "mapo", "reinforce"]);
        for name in reg.names() {
            assert_eq!(reg.create(name).unwrap().name(), name);
        }
        assert!(matches!(reg.create("nope"), Err(ConfigError::UnknownStrategy(_))));
    }

    #[test]
    fn config_validation_names_fields() {
        let cfg = TrainConfig {
            fix_steps: 0,
            ..TrainConfig::default()
        };
        assert_eq!(
            cfg.validate(),
            Err(ConfigError::Invalid {
                field: "fix_steps".into(),
                message: "must be at least 1".into()
            })
        );
    }

    fn small_config(strategy: &str) -> TrainConfig {
        TrainConfig {
            strategy: strategy.into(),
            epochs: 2,
            width: 8,
            fix_steps: 5,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn every_strategy_keeps_buffers_sound_and_replays() {
        let corpus = synthetic_corpus(12, 3);
        let reg = StrategyRegistry::default();
        for name in reg.names() {
            let run = || {
                let mut t = Trainer::new(&reg, small_config(name), &corpus.problems, 7).unwrap();
                let stats = t.run(&corpus.problems, |_| {});
                assert!(t.state.buffers.is_sound(&corpus.problems), "{name}");
                (stats, t.state.buffers.clone(), t.state.policy.params.clone(), t.state.counters)
            };
            let a = run();
            let b = run();
            assert_eq!(a.0, b.0, "{name}");
            assert_eq!(a.1, b.1, "{name}");
            assert_eq!(a.2, b.2, "{name}");
            if name.starts_with("lbf") {
                assert_eq!(a.3.unverified_updates, 0);
                assert_eq!(a.3.likelihood_ratio_updates, 0);
            }
        }
    }

    #[test]
    fn lbf_update_raises_fixed_tree_likelihood() {
        let p = fig1();
        let reg = StrategyRegistry::default();
        let mut t = Trainer::new(&reg, small_config("lbf"), std::slice::from_ref(&p), 1).unwrap();
        let tree = p.gold.clone().unwrap();
        t.state.buffers.insert(&p, &tree);
        let before = t.state.policy.log_prob(&p, &tree);
        t.state.buffer_step(&p);
        assert!(t.state.policy.log_prob(&p, &tree) > before);
    }

    #[test]
    fn wrong_sample_without_baseline_is_no_update() {
        let mut p = fig1();
        p.answer = 1e9;
        let reg = StrategyRegistry::default();
        let mut t = Trainer::new(&reg, small_config("reinforce"), std::slice::from_ref(&p), 1).unwrap();
        let before = t.state.policy.params.clone();
        let out = t.strategy.train_problem(&mut t.state, &p);
        assert_eq!(out.loss, None);
        assert_eq!(t.state.policy.params, before);
    }

    #[test]
    fn adam_moves_against_gradient() {
        let mut p = PolicyParams::zeros(2, 2);
        let mut g = p.zeros_like();
        g.blocks[0].data[0] = 1.0;
        let mut adam = Adam::new(0.01, 5.0);
        adam.step(&mut p, &g);
        assert!((p.blocks[0].data[0] + 0.01).abs() < 1e-6);
    }
}

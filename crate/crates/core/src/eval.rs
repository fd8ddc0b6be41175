//! Beam evaluation and Acc@k.
//!
//! Two readings of Acc@k are reported. The primary one counts a problem only
//! if every one of its top-k candidates reaches the answer, so Acc@1 >= Acc@3
//! >= Acc@5 always. The secondary one averages per-rank correctness over the
//! first k ranks. Problems with fewer than k candidates are padded with
//! failures and the number of pads is recorded.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Problem;
use crate::expr::{answers_match, evaluate_prefix, format_prefix, parse_tokens, Token};
use crate::policy::{compare_ranked, DecodeMode, Policy};
use crate::tree_reg::SizePrior;

pub const REPORT_KS: [usize; 3] = [1, 3, 5];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub prefix: String,
    pub log_prob: f64,
    /// `None` when execution fails.
    pub value: Option<f64>,
    pub correct: bool,
}

impl Candidate {
    pub fn new(tokens: &[Token], log_prob: f64, problem: &Problem) -> Self {
        let value = evaluate_prefix(tokens, &problem.values()).ok();
        Candidate {
            prefix: format_prefix(tokens),
            log_prob,
            value,
            correct: value.is_some_and(|v| answers_match(v, problem.answer)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemPrediction {
    pub id: String,
    pub answer: f64,
    pub candidates: Vec<Candidate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub problems: usize,
    /// Every one of the top-k candidates is correct (primary).
    pub acc_all: BTreeMap<String, f64>,
    /// Mean per-rank correctness over the first k ranks.
    pub acc_mean_rank: BTreeMap<String, f64>,
    pub execution_errors: usize,
    pub padded: BTreeMap<String, usize>,
    pub predictions: Vec<ProblemPrediction>,
}

/// Fraction of problems whose top-`k` candidates are all correct; missing
/// candidates count as failures.
pub fn acc_at_k(predictions: &[ProblemPrediction], k: usize) -> f64 {
    if predictions.is_empty() {
        return 0.0;
    }
    let hits = predictions
        .iter()
        .filter(|p| p.candidates.len() >= k && p.candidates[..k].iter().all(|c| c.correct))
        .count();
    hits as f64 / predictions.len() as f64
}

/// Mean over problems of the fraction of correct candidates among ranks
/// `1..=k`; missing candidates count as failures.
pub fn mean_rank_acc(predictions: &[ProblemPrediction], k: usize) -> f64 {
    if predictions.is_empty() || k == 0 {
        return 0.0;
    }
    let total: f64 = predictions
        .iter()
        .map(|p| p.candidates.iter().take(k).filter(|c| c.correct).count() as f64 / k as f64)
        .sum();
    total / predictions.len() as f64
}

pub fn padding(predictions: &[ProblemPrediction], k: usize) -> usize {
    predictions.iter().map(|p| k.saturating_sub(p.candidates.len())).sum()
}

/// One beam per admissible size, merged by log-probability and cut to
/// `width` candidates.
pub fn rank_candidates(policy: &Policy, problem: &Problem, prior: &SizePrior, width: usize) -> Vec<Candidate> {
    // beams never draw from the generator
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let vocab = problem.vocab();
    let mut merged: Vec<(f64, Vec<usize>, Vec<Token>)> = prior
        .sizes(problem.quantities.len())
        .into_iter()
        .flat_map(|l| policy.decode(problem, l, DecodeMode::Beam(width), &mut rng))
        .map(|t| {
            let idx = t.tokens.iter().map(|&x| vocab.index_of(x).unwrap()).collect();
            (t.log_prob, idx, t.tokens)
        })
        .collect();
    merged.sort_by(|a, b| compare_ranked(a.0, &a.1, b.0, &b.1));
    merged.truncate(width);
    merged.into_iter().map(|(lp, _, t)| Candidate::new(&t, lp, problem)).collect()
}

pub fn build_report(predictions: Vec<ProblemPrediction>) -> EvalReport {
    let key = |k: usize| format!("acc@{k}");
    EvalReport {
        problems: predictions.len(),
        acc_all: REPORT_KS.iter().map(|&k| (key(k), acc_at_k(&predictions, k))).collect(),
        acc_mean_rank: REPORT_KS.iter().map(|&k| (key(k), mean_rank_acc(&predictions, k))).collect(),
        execution_errors: predictions
            .iter()
            .flat_map(|p| &p.candidates)
            .filter(|c| c.value.is_none())
            .count(),
        padded: REPORT_KS.iter().map(|&k| (key(k), padding(&predictions, k))).collect(),
        predictions,
    }
}

pub fn evaluate(policy: &Policy, problems: &[Problem], prior: &SizePrior, width: usize) -> EvalReport {
    build_report(
        problems
            .iter()
            .map(|p| ProblemPrediction {
                id: p.id.clone(),
                answer: p.answer,
                candidates: rank_candidates(policy, p, prior, width),
            })
            .collect(),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegrityError(pub String);

impl std::fmt::Display for IntegrityError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for IntegrityError {}

/// Recomputes every number of `report` from its dumped predictions.
/// `quantities` maps problem ids to quantity values for re-execution.
pub fn check_integrity(report: &EvalReport, quantities: &BTreeMap<String, Vec<f64>>) -> Result<(), IntegrityError> {
    let mut predictions = report.predictions.clone();
    for p in &mut predictions {
        let values = quantities
            .get(&p.id)
            .ok_or_else(|| IntegrityError(format!("no quantities for problem {}", p.id)))?;
        for c in &mut p.candidates {
            let tokens = parse_tokens(&c.prefix).map_err(|e| IntegrityError(format!("{}: {e}", p.id)))?;
            let value = evaluate_prefix(&tokens, values).ok();
            let same = match (value, c.value) {
                (Some(a), Some(b)) => a == b || (a - b).abs() <= 1e-9 * a.abs().max(1.0),
                (None, None) => true,
                _ => false,
            };
            if !same {
                return Err(IntegrityError(format!("{}: value of `{}` does not recompute", p.id, c.prefix)));
            }
            c.correct = value.is_some_and(|v| answers_match(v, p.answer));
        }
    }
    let rebuilt = build_report(predictions);
    if rebuilt != *report {
        return Err(IntegrityError("aggregate numbers do not match predictions".into()));
    }
    Ok(())
}

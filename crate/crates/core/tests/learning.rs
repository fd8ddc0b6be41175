use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use lbf_core::data::synthetic_corpus;
use lbf_core::learner::{OptimizerKind, StrategyRegistry, TrainConfig, Trainer};
use lbf_core::policy::{DecodeMode, Policy};
use lbf_core::tree_reg::DecodeState;

fn config(strategy: &str) -> TrainConfig {
    TrainConfig {
        strategy: strategy.into(),
        epochs: 3,
        fix_steps: 10,
        width: 12,
        optimizer: OptimizerKind::Adam,
        learning_rate: 0.01,
        ..TrainConfig::default()
    }
}

#[test]
fn buffers_stay_sound_and_updates_are_audited() {
    let problems = synthetic_corpus(24, 4).problems;
    let registry = StrategyRegistry::default();
    for name in registry.names() {
        let mut trainer = Trainer::new(&registry, config(name), &problems, 9).unwrap();
        for epoch in 1..=3 {
            trainer.epoch(epoch, &problems);
            assert!(trainer.state.buffers.is_sound(&problems), "{name} epoch {epoch}");
        }
        let c = trainer.state.counters;
        if name.starts_with("lbf") {
            assert_eq!(c.unverified_updates, 0, "{name}");
            assert_eq!(c.likelihood_ratio_updates, 0, "{name}");
            assert!(c.verified_updates > 0, "{name}");
        } else {
            assert!(c.unverified_updates <= c.likelihood_ratio_updates, "{name}: {c:?}");
        }
    }
}

#[test]
fn registry_selects_by_name() {
    let registry = StrategyRegistry::default();
    for name in ["lbf", "lbf-no-memory", "lbf-fully", "reinforce", "mapo"] {
        assert_eq!(registry.create(name).unwrap().name(), name);
    }
    assert!(registry.create("beam-me-up").is_err());
    assert!(Trainer::new(&registry, config("nope"), &[], 0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn decode_masks_and_determinism(seed in any::<u64>(), pick in 0usize..40, size_pick in 0usize..3) {
        let corpus = synthetic_corpus(40, 1);
        let problem = &corpus.problems[pick];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let policy = Policy::new(10, Policy::word_vocab(&corpus.problems), &mut rng);
        let size = 2 * problem.quantities.len() - 1 + 2 * size_pick;
        let vocab = problem.vocab();

        let sample = |s| policy.decode(problem, size, DecodeMode::Sample, &mut ChaCha8Rng::seed_from_u64(s));
        let trace = sample(seed).remove(0);
        prop_assert_eq!(&trace, &sample(seed)[0]);
        let mut state = DecodeState::new(size).unwrap();
        for (step, dist) in trace.distributions.iter().enumerate() {
            for (j, &p) in dist.iter().enumerate() {
                if !state.allows(vocab.get(j)) {
                    prop_assert_eq!(p, 0.0, "step {} token {}", step, vocab.get(j));
                }
            }
            prop_assert!((dist.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            state.push(trace.tokens[step]);
        }

        let mut r = ChaCha8Rng::seed_from_u64(0);
        let greedy = policy.decode(problem, size, DecodeMode::Greedy, &mut r);
        prop_assert_eq!(&greedy, &policy.decode(problem, size, DecodeMode::Greedy, &mut r));
        let beam = policy.decode(problem, size, DecodeMode::Beam(5), &mut r);
        prop_assert_eq!(&beam, &policy.decode(problem, size, DecodeMode::Beam(5), &mut r));
        prop_assert!(beam.windows(2).all(|w| w[0].log_prob >= w[1].log_prob));
    }
}

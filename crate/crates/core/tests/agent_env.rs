//! Environment invariants, reference policies, training determinism and
//! checkpoint files.

use algopilot::agent::policy::{epsilon_greedy, BubbleSortPolicy, RandomPolicy};
use algopilot::agent::{self, train, AgentConfig, AgentError, PolicyModel};
use algopilot::env::{EnvConfig, SortEnv};
use algopilot::vocab::{GrammarState, Operation, Token, VOCAB_SIZE};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny_config(episodes: u64, seed: u64) -> AgentConfig {
    AgentConfig {
        context_window: 16,
        net_layers: 1,
        net_heads: 2,
        net_dim: 8,
        ffn_dim: 16,
        episodes,
        seed,
        ..AgentConfig::desk()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    /// Whatever the action sequence, the array stays a permutation of the
    /// original and the step budget is respected.
    #[test]
    fn swaps_preserve_the_multiset(n in 6usize..=12, seed in any::<u64>(), actions in prop::collection::vec((0usize..14, 0usize..14, any::<bool>()), 0..200)) {
        let env = SortEnv::new(EnvConfig::with_sizes(&[n])).unwrap();
        let mut s = env.reset(n, seed).unwrap();
        let mut want = s.array().to_vec();
        want.sort();
        for (i, j, swap) in actions {
            if s.done {
                break;
            }
            let _ = if swap { s.step_swap().map(|_| ()) } else { s.step_compare(i, j).map(|_| ()) };
            let mut got = s.array().to_vec();
            got.sort();
            prop_assert_eq!(&got, &want);
            prop_assert!(s.steps_used <= s.step_cap);
        }
    }

    #[test]
    fn checkpoint_round_trip(seed in 0u64..1000, len in 0usize..40) {
        let model = PolicyModel::new(tiny_config(1, seed).shape(), seed).unwrap();
        let back = PolicyModel::from_bytes(&model.to_bytes()).unwrap();
        prop_assert_eq!(&back, &model);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = GrammarState::new(6);
        let mut history = vec![Token::Length(6)];
        for _ in 0..len {
            let legal = g.legal_next();
            let t = legal[rng.gen_range(0..legal.len())];
            g.advance(t).unwrap();
            history.push(t);
        }
        prop_assert_eq!(back.values(&history), model.values(&history));
    }
}

#[test]
fn bubble_policy_always_sorts() {
    let env = EnvConfig::with_sizes(&[6, 8, 10]);
    let s = agent::evaluate(&mut BubbleSortPolicy::new(), &env, &[6, 8, 10], 200, 3).unwrap();
    assert_eq!(s.success_rate, 1.0);
    for size in &s.sizes {
        // never more compares than a full bubble sort
        assert!(size.mean_compares <= (size.n * (size.n - 1) / 2) as f64 * 2.0);
    }
}

#[test]
fn random_policy_rarely_sorts() {
    let env = EnvConfig::with_sizes(&[6]);
    let s = agent::evaluate(&mut RandomPolicy, &env, &[6], 1000, 9).unwrap();
    assert!(s.success_rate < 0.1, "random success {}", s.success_rate);
}

#[test]
fn exploration_is_uniform_over_legal_tokens() {
    let values = {
        let mut v = [0.0; VOCAB_SIZE];
        v[Token::Index(2).id() as usize] = 10.0;
        v
    };
    let legal: Vec<Token> = (0..6).map(Token::Index).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let draws = 60_000;
    let mut counts = [0usize; 6];
    for _ in 0..draws {
        match epsilon_greedy(&values, &legal, 1.0, &mut rng) {
            Token::Index(k) => counts[k as usize] += 1,
            other => panic!("illegal token {other}"),
        }
    }
    let p = 1.0 / 6.0;
    let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
    for c in counts {
        assert!((c as f64 - draws as f64 * p).abs() < 3.0 * sigma, "{counts:?}");
    }
    // with no exploration the best legal token always wins
    for _ in 0..100 {
        assert_eq!(epsilon_greedy(&values, &legal, 0.0, &mut rng), Token::Index(2));
    }
}

#[test]
fn training_is_deterministic() {
    let env = EnvConfig::with_sizes(&[6]);
    let run = || {
        let mut out = Vec::new();
        let model = train(&env, &tiny_config(40, 7), None, &mut out).unwrap();
        (out, model)
    };
    let (a, ma) = run();
    let (b, mb) = run();
    assert!(!a.is_empty());
    assert_eq!(a, b);
    assert_eq!(ma, mb);
    let (c, _) = {
        let mut out = Vec::new();
        let m = train(&env, &tiny_config(40, 8), None, &mut out).unwrap();
        (out, m)
    };
    assert_ne!(a, c);
    let lines: Vec<&str> = std::str::from_utf8(&a).unwrap().lines().collect();
    assert_eq!(lines.len(), 40);
    let first: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
    assert_eq!(first["episode"], 0);
    assert!(first["mean_guidance_loss"].is_null());
}

#[test]
fn rollout_trajectory_matches_counters() {
    let env = SortEnv::new(EnvConfig::with_sizes(&[6])).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let r = agent::run_episode(&mut BubbleSortPolicy::new(), env.reset(6, 4).unwrap(), &mut rng).unwrap();
    assert!(r.state.is_sorted());
    assert_eq!(r.rewards.len(), r.state.trajectory.ops.len());
    assert_eq!(r.state.trajectory.ops.last(), Some(&Operation::Swap));
    assert_eq!(r.rewards.last().unwrap().long, 0.5);
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.pol");
    let model = PolicyModel::new(tiny_config(1, 0).shape(), 0).unwrap();
    model.save(&path).unwrap();
    assert_eq!(PolicyModel::load(&path).unwrap(), model);

    let bytes = std::fs::read(&path).unwrap();
    for cut in [0, 8, 30, bytes.len() - 1] {
        let err = PolicyModel::from_bytes(&bytes[..cut]).unwrap_err();
        assert!(matches!(err, AgentError::CorruptFile(_) | AgentError::VersionMismatch(_)), "cut {cut}: {err:?}");
    }
    assert!(matches!(PolicyModel::from_bytes(&bytes[..bytes.len() - 1]), Err(AgentError::CorruptFile(_))));
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(matches!(PolicyModel::from_bytes(&extra), Err(AgentError::CorruptFile(_))));
    let mut magic = bytes.clone();
    magic[0] ^= 0xff;
    assert!(matches!(PolicyModel::from_bytes(&magic), Err(AgentError::VersionMismatch(_))));
    assert!(matches!(PolicyModel::load(dir.path().join("missing")), Err(AgentError::Io(_))));
}

#[test]
fn guided_training_without_a_model_is_refused() {
    let env = EnvConfig::with_sizes(&[6]);
    let cfg = AgentConfig {
        guidance_enabled: true,
        ..tiny_config(5, 0)
    };
    assert!(matches!(train(&env, &cfg, None, &mut Vec::new()), Err(AgentError::MissingTlm)));
}

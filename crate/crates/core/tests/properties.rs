//! Property checks against independent oracles.

use algopilot::agent::compute_two_channel_returns;
use algopilot::analysis::{bubble_sort_reference_trajectory, count_discrepancies};
use algopilot::program_gen::generate_trajectories;
use algopilot::tlm::{TlmConfig, TlmModel};
use algopilot::vocab::{GrammarState, Operation, Outcome, Token, Trajectory, Vocabulary, MAX_N};
use proptest::prelude::*;

fn outcome() -> impl Strategy<Value = Outcome> {
    prop_oneof![Just(Outcome::Less), Just(Outcome::Equal), Just(Outcome::More)]
}

fn trajectory(max_ops: usize) -> impl Strategy<Value = Trajectory> {
    (2usize..=MAX_N).prop_flat_map(move |n| {
        let op = prop_oneof![
            3 => (0..n as u8, 0..n as u8, outcome()).prop_map(|(i, j, outcome)| Operation::Compare { i, j, outcome }),
            1 => Just(Operation::Swap),
        ];
        // a Swap is only legal after some Compare
        prop::collection::vec(op, 0..max_ops).prop_map(move |ops| Trajectory {
            n,
            ops: ops.into_iter().skip_while(|o| !o.is_compare()).collect(),
        })
    })
}

/// Exhaustive insert/delete distance; exponential, so short inputs only.
fn brute_distance(a: &[Operation], b: &[Operation]) -> usize {
    match (a.split_first(), b.split_first()) {
        (None, _) => b.len(),
        (_, None) => a.len(),
        (Some((x, ra)), Some((y, rb))) => {
            let skip = 1 + brute_distance(ra, b).min(brute_distance(a, rb));
            if x == y {
                skip.min(brute_distance(ra, rb))
            } else {
                skip
            }
        }
    }
}

/// Operations over a three-symbol alphabet, so that matches are frequent.
fn small_ops(max_ops: usize) -> impl Strategy<Value = Vec<Operation>> {
    let op = prop_oneof![
        (0..2u8, Just(Outcome::More)).prop_map(|(i, outcome)| Operation::Compare { i, j: i + 1, outcome }),
        Just(Operation::Swap),
    ];
    prop::collection::vec(op, 0..max_ops)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn trajectory_text_round_trip(t in trajectory(40)) {
        let text = t.serialize();
        let back: Trajectory = text.parse().unwrap();
        prop_assert_eq!(&back, &t);
        prop_assert_eq!(Trajectory::from_tokens(&t.tokens()).unwrap(), t.clone());
        prop_assert_eq!(back.tokens().len(), 1 + t.ops.iter().map(|o| if o.is_compare() { 4 } else { 1 }).sum::<usize>());
    }

    #[test]
    fn token_ids_round_trip(id in 0u8..36) {
        let t = Token::from_id(id).unwrap();
        prop_assert_eq!(t.id(), id);
        prop_assert_eq!(t.to_string().parse::<Token>().unwrap(), t);
    }

    /// Each legal token is accepted and every other token is rejected, along
    /// random legal walks.
    #[test]
    fn grammar_mask_is_sound(n in 2usize..=MAX_N, picks in prop::collection::vec(any::<prop::sample::Index>(), 1..60)) {
        let vocab = Vocabulary::standard();
        let mut g = GrammarState::new(n);
        for pick in picks {
            let legal = g.legal_next();
            prop_assert!(!legal.is_empty());
            for &tok in vocab.tokens() {
                let mut probe = g;
                prop_assert_eq!(probe.advance(tok).is_ok(), legal.contains(&tok), "token {}", tok);
                prop_assert_eq!(g.is_legal(tok), legal.contains(&tok));
            }
            let tok = legal[pick.index(legal.len())];
            g.advance(tok).unwrap();
        }
    }

    #[test]
    fn returns_match_double_sum(
        rewards in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 20),
        gs in 0.0f64..1.0,
        gl in 0.0f64..1.0,
    ) {
        let short: Vec<f64> = rewards.iter().map(|r| r.0).collect();
        let long: Vec<f64> = rewards.iter().map(|r| r.1).collect();
        let got = compute_two_channel_returns(&short, &long, gs, gl).unwrap();
        for t in 0..20 {
            let want: f64 = (t..20).map(|k| gs.powi((k - t) as i32) * short[k] + gl.powi((k - t) as i32) * long[k]).sum();
            prop_assert!((got[t] - want).abs() < 1e-12, "t={} {} vs {}", t, got[t], want);
        }
    }

    #[test]
    fn discrepancy_matches_brute_force(a in small_ops(9), b in small_ops(9)) {
        let ta = Trajectory { n: 3, ops: a.clone() };
        let tb = Trajectory { n: 3, ops: b.clone() };
        let rep = count_discrepancies(&ta, &tb).unwrap();
        prop_assert_eq!(rep.count, brute_distance(&a, &b));
        prop_assert_eq!(rep.count, count_discrepancies(&tb, &ta).unwrap().count);
    }

    #[test]
    fn discrepancy_alignment_is_consistent(a in trajectory(30)) {
        let mut b = a.clone();
        b.ops.reverse();
        let rep = count_discrepancies(&a, &b).unwrap();
        prop_assert_eq!(rep.count, rep.missing.len() + rep.extra.len());
        prop_assert_eq!(rep.count % 2, 0, "equal lengths give an even insert/delete distance");
        prop_assert_eq!(rep.missing.len(), rep.extra.len());
    }

    #[test]
    fn discrepancy_triangle_inequality(a in small_ops(12), b in small_ops(12), c in small_ops(12)) {
        let t = |ops: &Vec<Operation>| Trajectory { n: 3, ops: ops.clone() };
        let d = |x: &Vec<Operation>, y: &Vec<Operation>| count_discrepancies(&t(x), &t(y)).unwrap().count;
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c));
    }

    /// Deleting k operations from a bubble-sort reference costs exactly k.
    #[test]
    fn deletions_cost_their_count(
        array in (2usize..=8).prop_flat_map(|n| Just((1..=n as i64).collect::<Vec<_>>()).prop_shuffle()),
        drops in prop::collection::vec(any::<prop::sample::Index>(), 0..=5),
    ) {
        let reference = bubble_sort_reference_trajectory(&array);
        let mut model = reference.clone();
        let k = drops.len().min(model.ops.len());
        for d in drops.iter().take(k) {
            let at = d.index(model.ops.len());
            model.ops.remove(at);
        }
        let rep = count_discrepancies(&model, &reference).unwrap();
        prop_assert_eq!(rep.count, k);
        prop_assert!(rep.extra.is_empty());
        prop_assert_eq!(count_discrepancies(&reference, &reference).unwrap().count, 0);
    }
}

fn corpus() -> Vec<Trajectory> {
    generate_trajectories(600, &[6, 8], 41).unwrap()
}

#[test]
fn distributions_sum_to_one() {
    let ts = corpus();
    for config in [TlmConfig::default(), TlmConfig::with_order(3), TlmConfig { interpolation: algopilot::Interpolation::Linear, ..TlmConfig::default() }] {
        let m = TlmModel::train_trajectories(ts[..500].iter(), config).unwrap();
        for t in &ts[500..] {
            let mut prefix = vec![Token::BOS];
            for tok in t.tokens() {
                let d = m.next_token_distribution(&prefix);
                let s: f64 = d.iter().sum();
                assert!((s - 1.0).abs() < 1e-9, "sum {s}");
                assert!(d.iter().all(|&p| p > 0.0));
                prefix.push(tok);
            }
        }
    }
}

#[test]
fn merge_is_a_homomorphism() {
    let ts = corpus();
    let config = TlmConfig::default();
    let whole = TlmModel::train_trajectories(ts.iter(), config).unwrap();
    let shard = |r: std::ops::Range<usize>| TlmModel::train_trajectories(ts[r].iter(), config).unwrap();
    let (a, b, c) = (shard(0..150), shard(150..420), shard(420..600));
    let left = a.merge(&b).unwrap().merge(&c).unwrap();
    let right = a.merge(&b.merge(&c).unwrap()).unwrap();
    assert_eq!(left, whole);
    assert_eq!(right, whole);
    assert_eq!(c.merge(&a).unwrap().merge(&b).unwrap(), whole);
}

#[test]
fn merge_rejects_other_configs() {
    let a = TlmModel::new(TlmConfig::with_order(3)).unwrap();
    let b = TlmModel::new(TlmConfig::with_order(4)).unwrap();
    assert!(a.merge(&b).is_err());
}

//! Randomized invariants over the numeric core: generator convexity and
//! duality, occupancy identities, dataset plumbing, and seed derivation.

use ndarray::{Array1, Array2, Array3};
use proptest::prelude::*;

use damo_core::data::{
    collect_dataset, dataset_stats, mixed_batch, read_jsonl, write_jsonl, DataSource, Transition,
    TransitionDataset,
};
use damo_core::fdiv::{cubic_generator, f_divergence, variational_f_divergence};
use damo_core::mdp::{
    bellman_backup, expected_reward, policy_evaluation_q, softmax_rows, StochasticPolicy,
    TabularMDP,
};
use damo_core::occupancy::{
    flow_residual, kl_divergence, total_variation, transition_occupancy, OccupancyMeasure,
    Provenance,
};
use damo_core::ratio::clip_symmetric;
use damo_core::solver::sub_seed;

const GAMMA: f64 = 0.9;

fn normalize_rows(raw: Vec<f64>, n_rows: usize, n_cols: usize) -> Array2<f64> {
    let mut out = Array2::zeros((n_rows, n_cols));
    for r in 0..n_rows {
        let row = &raw[r * n_cols..(r + 1) * n_cols];
        let z: f64 = row.iter().sum();
        for c in 0..n_cols {
            out[[r, c]] = row[c] / z;
        }
    }
    out
}

prop_compose! {
    fn arb_mdp(max_states: usize, max_actions: usize)
        (n_s in 2..=max_states, n_a in 1..=max_actions)
        (
            t_raw in prop::collection::vec(0.05..1.0f64, n_s * n_a * n_s),
            r_raw in prop::collection::vec(-1.0..1.0f64, n_s * n_a * n_s),
            mu_raw in prop::collection::vec(0.05..1.0f64, n_s),
            n_s in Just(n_s),
            n_a in Just(n_a),
        ) -> TabularMDP {
        let mut transition = Array3::zeros((n_s, n_a, n_s));
        let mut reward = Array3::zeros((n_s, n_a, n_s));
        for s in 0..n_s {
            for a in 0..n_a {
                let base = (s * n_a + a) * n_s;
                let z: f64 = t_raw[base..base + n_s].iter().sum();
                for sp in 0..n_s {
                    transition[[s, a, sp]] = t_raw[base + sp] / z;
                    reward[[s, a, sp]] = r_raw[base + sp];
                }
            }
        }
        let z: f64 = mu_raw.iter().sum();
        let initial_dist = Array1::from_vec(mu_raw.iter().map(|x| x / z).collect());
        TabularMDP { n_states: n_s, n_actions: n_a, transition, reward, initial_dist, discount: GAMMA }
    }
}

fn arb_policy_for(n_s: usize, n_a: usize) -> impl Strategy<Value = StochasticPolicy> {
    prop::collection::vec(0.05..1.0f64, n_s * n_a)
        .prop_map(move |raw| StochasticPolicy::from_probs(normalize_rows(raw, n_s, n_a)).unwrap())
}

fn arb_mdp_and_policy() -> impl Strategy<Value = (TabularMDP, StochasticPolicy)> {
    arb_mdp(6, 3).prop_flat_map(|mdp| {
        let (n_s, n_a) = (mdp.n_states, mdp.n_actions);
        (Just(mdp), arb_policy_for(n_s, n_a))
    })
}

fn occupancy_from_weights(raw: &[f64], n: usize) -> OccupancyMeasure {
    let z: f64 = raw.iter().sum();
    let mut rho = Array3::zeros((n, 1, 1));
    for i in 0..n {
        rho[[i, 0, 0]] = raw[i] / z;
    }
    OccupancyMeasure {
        rho,
        provenance: Provenance::Empirical,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn policy_evaluation_reaches_a_bellman_fixed_point((mdp, policy) in arb_mdp_and_policy()) {
        let reward = mdp.reward.clone();
        let q = policy_evaluation_q(&mdp, &policy, &reward, 1e-10).unwrap();
        let rbar = expected_reward(&mdp, &reward);
        let backup = bellman_backup(&mdp, &policy, &q);
        let mut worst = 0.0f64;
        for (qi, (ri, bi)) in q.q.iter().zip(rbar.iter().zip(backup.q.iter())) {
            worst = worst.max((qi - (ri + bi)).abs());
        }
        prop_assert!(worst <= 1e-8, "residual {worst}");
    }

    #[test]
    fn exact_occupancy_is_normalized_and_conserves_flow((mdp, policy) in arb_mdp_and_policy()) {
        let occ = transition_occupancy(&mdp, &policy).unwrap();
        prop_assert!((occ.mass() - 1.0).abs() <= 1e-9);
        prop_assert!(flow_residual(&mdp, &policy, &occ) <= 1e-9);
    }

    #[test]
    fn kl_is_nonnegative_and_zero_on_self(
        p_raw in prop::collection::vec(0.01..1.0f64, 12),
        q_raw in prop::collection::vec(0.01..1.0f64, 12),
    ) {
        let p = occupancy_from_weights(&p_raw, 12);
        let q = occupancy_from_weights(&q_raw, 12);
        prop_assert!(kl_divergence(&p, &q).unwrap() >= -1e-12);
        prop_assert!(kl_divergence(&p, &p).unwrap().abs() <= 1e-12);
    }

    #[test]
    fn total_variation_is_a_bounded_symmetric_distance(
        p_raw in prop::collection::vec(0.01..1.0f64, 12),
        q_raw in prop::collection::vec(0.01..1.0f64, 12),
    ) {
        let p = occupancy_from_weights(&p_raw, 12);
        let q = occupancy_from_weights(&q_raw, 12);
        let d = total_variation(&p, &q);
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert!((d - total_variation(&q, &p)).abs() <= 1e-15);
        prop_assert!(total_variation(&p, &p) <= 1e-15);
    }

    #[test]
    fn cubic_generator_satisfies_fenchel_young(x in 0.0..40.0f64, y in -3.0..40.0f64) {
        let gen = cubic_generator();
        let lhs = x * y;
        let rhs = (gen.f)(x) + (gen.f_star)(y);
        prop_assert!(lhs <= rhs + 1e-9, "xy = {lhs}, f + f* = {rhs}");
        let y_star = (gen.f_prime)(x);
        let gap = (gen.f)(x) + (gen.f_star)(y_star) - x * y_star;
        prop_assert!(gap.abs() <= 1e-8, "equality gap {gap} at x = {x}");
    }

    #[test]
    fn cubic_generator_is_convex_on_segments(
        a in 0.0..30.0f64,
        b in 0.0..30.0f64,
        t in 0.0..1.0f64,
    ) {
        let gen = cubic_generator();
        let mid = (gen.f)(t * a + (1.0 - t) * b);
        let chord = t * (gen.f)(a) + (1.0 - t) * (gen.f)(b);
        prop_assert!(mid <= chord + 1e-9);
    }

    #[test]
    fn variational_form_never_exceeds_the_direct_divergence(
        p_raw in prop::collection::vec(0.01..1.0f64, 10),
        q_raw in prop::collection::vec(0.01..1.0f64, 10),
    ) {
        let gen = cubic_generator();
        let p = occupancy_from_weights(&p_raw, 10);
        let q = occupancy_from_weights(&q_raw, 10);
        let direct = f_divergence(&p, &q, &gen).unwrap();
        let variational = variational_f_divergence(&p, &q, &gen, 120).unwrap();
        prop_assert!(direct >= -1e-10);
        prop_assert!(variational <= direct + 1e-9, "var {variational} > direct {direct}");
    }

    #[test]
    fn clipping_is_idempotent_and_bounded(x in -1e6..1e6f64, c in 0.0..60.0f64) {
        let once = clip_symmetric(x, c);
        prop_assert!(once.abs() <= c);
        prop_assert_eq!(clip_symmetric(once, c), once);
        if x.abs() <= c {
            prop_assert_eq!(once, x);
        }
    }

    #[test]
    fn jsonl_round_trips_datasets(
        triples in prop::collection::vec((0usize..5, 0usize..3, -1.0..1.0f64, 0usize..5), 1..40),
        horizon in prop::option::of(1usize..20),
    ) {
        let ds = TransitionDataset {
            transitions: triples
                .into_iter()
                .map(|(s, a, r, sp)| Transition { s, a, r, sp })
                .collect(),
            source: DataSource::Offline,
            env_hash: "cafe".into(),
            horizon,
        };
        let back = read_jsonl(&write_jsonl(&ds)).unwrap();
        prop_assert_eq!(back.transitions, ds.transitions);
        prop_assert_eq!(back.env_hash, ds.env_hash);
        prop_assert_eq!(back.horizon, ds.horizon);
    }

    #[test]
    fn mixed_batch_counts_follow_the_offline_ratio(
        ratio in 0.0..=1.0f64,
        batch in 1usize..200,
        seed in any::<u64>(),
    ) {
        let mk = |n: usize, s: usize| TransitionDataset {
            transitions: vec![Transition { s, a: 0, r: 0.0, sp: s }; n],
            source: DataSource::Offline,
            env_hash: "cafe".into(),
            horizon: None,
        };
        let d_r = mk(17, 0);
        let d_m = mk(13, 1);
        let out = mixed_batch(&d_r, &d_m, ratio, batch, seed).unwrap();
        prop_assert_eq!(out.len(), batch);
        let n_offline = out.transitions.iter().filter(|t| t.s == 0).count();
        prop_assert_eq!(n_offline, (batch as f64 * ratio).round() as usize);
    }

    #[test]
    fn longer_collection_with_the_same_seed_extends_coverage(
        seed in any::<u64>(),
        episodes in 1usize..8,
        extra in 1usize..8,
    ) {
        let env = damo_core::envs::three_road(5.0);
        let small = collect_dataset(&env.mdp, &env.behavior, episodes, 6, seed).unwrap();
        let large = collect_dataset(&env.mdp, &env.behavior, episodes + extra, 6, seed).unwrap();
        prop_assert_eq!(&large.transitions[..small.len()], &small.transitions[..]);
        let cov_small = dataset_stats(&small, env.mdp.n_states).covered_sas;
        let cov_large = dataset_stats(&large, env.mdp.n_states).covered_sas;
        prop_assert!(cov_small.is_subset(&cov_large));
    }

    #[test]
    fn softmax_rows_are_distributions(logits_raw in prop::collection::vec(-8.0..8.0f64, 12)) {
        let logits = Array2::from_shape_vec((4, 3), logits_raw).unwrap();
        let probs = softmax_rows(&logits);
        for r in 0..4 {
            let z: f64 = (0..3).map(|c| probs[[r, c]]).sum();
            prop_assert!((z - 1.0).abs() <= 1e-12);
            for c in 0..3 {
                prop_assert!(probs[[r, c]] > 0.0);
            }
        }
    }

    #[test]
    fn sub_seeds_separate_epochs_and_salts(base in any::<u64>()) {
        let mut seen = std::collections::BTreeSet::new();
        for epoch in 0..20u64 {
            for salt in [1u64, 2, 3, 4] {
                prop_assert!(seen.insert(sub_seed(base, epoch, salt)));
            }
        }
    }

    #[test]
    fn behavior_cloning_rows_are_distributions(
        triples in prop::collection::vec((0usize..4, 0usize..3), 1..60),
    ) {
        let ds = TransitionDataset {
            transitions: triples
                .into_iter()
                .map(|(s, a)| Transition { s, a, r: 0.0, sp: 0 })
                .collect(),
            source: DataSource::Offline,
            env_hash: "cafe".into(),
            horizon: None,
        };
        let pi = damo_core::baselines::behavior_cloning(&ds, 4, 3, 0.1);
        for s in 0..4 {
            let z: f64 = (0..3).map(|a| pi.probs[[s, a]]).sum();
            prop_assert!((z - 1.0).abs() <= 1e-12);
        }
    }
}

mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vav_core::bench::{builtin_env, gen_random_gridworld};
use vav_core::geometry::*;
use vav_core::heuristic::random_unit;
use vav_core::mdp::{solve_mdp, RewardWeights};

fn set(rows: &[&[f64]]) -> HalfspaceSet<f64> {
    let mut h = HalfspaceSet::new(rows[0].len());
    for (i, r) in rows.iter().enumerate() {
        h.push(
            r.to_vec(),
            Provenance::StateAction {
                state: i,
                optimal: 0,
                alternative: 1,
            },
        );
    }
    h
}

#[test]
fn zero_reward_gives_empty_degenerate_delta() {
    let (env, f) = gen_random_gridworld::<f64>(3, 3, 2, 1).unwrap();
    let d = build_arp_delta(&env, &f, &RewardWeights::zeros(2)).unwrap();
    assert!(d.is_empty());
    assert!(d.is_degenerate());
}

#[test]
fn dedup_examples() {
    assert_eq!(dedup_halfspaces(&set(&[&[1.0, 0.0], &[1.0, 0.0]])).len(), 1);
    assert_eq!(dedup_halfspaces(&set(&[&[1.0, 0.0], &[2.0, 0.0]])).len(), 1);
    assert_eq!(dedup_halfspaces(&set(&[&[1.0, 0.0], &[0.0, 1.0]])).len(), 2);
}

#[test]
fn redundancy_examples() {
    let r = remove_redundant(&set(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]])).unwrap();
    assert_eq!(r.len(), 2);
    let normals: Vec<Vec<f64>> = r.normals().map(<[f64]>::to_vec).collect();
    assert!(normals.iter().all(|n| n[0] == 0.0 || n[1] == 0.0));
    assert_eq!(remove_redundant(&set(&[&[0.3, -0.2]])).unwrap().len(), 1);
}

#[test]
fn island_minimal_arp_has_two_rows() {
    let b = builtin_env::<f64>("island").unwrap();
    let m = minimal_arp(&b.env, &b.features, &b.w).unwrap();
    assert_eq!(m.len(), 2);
    assert!(m.is_minimal());
}

#[test]
fn membership_examples() {
    let b = builtin_env::<f64>("lava").unwrap();
    let m = minimal_arp(&b.env, &b.features, &b.w).unwrap();
    assert!(arp_membership(&m, &b.w).unwrap());
    assert!(arp_membership(&m, &b.w.scaled(2.0)).unwrap());
    assert!(!arp_membership(&m, &RewardWeights::zeros(3)).unwrap());
    assert!(!arp_membership(&m, &b.w.scaled(-1.0)).unwrap());
}

#[test]
fn halfspace_set_json_round_trip() {
    let b = builtin_env::<f64>("island").unwrap();
    let m = minimal_arp(&b.env, &b.features, &b.w).unwrap();
    let back: HalfspaceSet<f64> = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
    assert_eq!(back, m);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(30))]

    #[test]
    fn generating_reward_satisfies_every_row(seed in 0u64..2000, k in 2usize..6) {
        let (env, f) = gen_random_gridworld::<f64>(4, 3, k, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = random_unit::<f64, _>(k, &mut rng);
        let d = build_arp_delta(&env, &f, &w).unwrap();
        for n in d.normals() {
            prop_assert!(n.iter().zip(w.as_slice()).map(|(a, b)| a * b).sum::<f64>() > 0.0);
        }
    }

    #[test]
    fn redundancy_removal_preserves_the_cone(seed in 0u64..2000, k in 2usize..7) {
        let (env, f) = gen_random_gridworld::<f64>(4, 4, k, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let w = random_unit::<f64, _>(k, &mut rng);
        let full = dedup_halfspaces(&build_arp_delta(&env, &f, &w).unwrap());
        let (min, witnesses) = remove_redundant_with_witnesses(&full).unwrap();
        prop_assert!(min.len() <= full.len());
        // each kept row has a witness violating it alone
        for (row, x) in min.rows().iter().zip(&witnesses) {
            let own: f64 = row.normal.iter().zip(x).map(|(a, b)| a * b).sum();
            prop_assert!(own <= 1e-7);
        }
        let probes = sample_probes(k, 500, &[w.0.clone()], &mut rng);
        prop_assert!(containment_violations(&min, &full, &probes).is_empty());
        prop_assert!(containment_violations(&full, &min, &probes).is_empty());
    }

    #[test]
    fn membership_means_optimal_subset(seed in 0u64..2000) {
        let (env, f) = gen_random_gridworld::<f64>(3, 3, 3, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        let w = random_unit::<f64, _>(3, &mut rng);
        let m = minimal_arp(&env, &f, &w).unwrap();
        let opt = solve_mdp(&env, &f, &w).unwrap();
        for _ in 0..20 {
            let wp = random_unit::<f64, _>(3, &mut rng);
            if arp_membership(&m, &wp).unwrap() {
                let o = solve_mdp(&env, &f, &wp).unwrap();
                for s in 0..env.n_states() {
                    for a in o.optimal_set(s) {
                        prop_assert!(opt.optimal_set(s).contains(a));
                    }
                }
            }
        }
    }
}

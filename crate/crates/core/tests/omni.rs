use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vav_core::mdp::Policy;
use vav_core::omni::*;

#[test]
fn canonical_form() {
    assert_eq!(canonicalize(&[0.0f64, 5.0, 10.0]).unwrap(), vec![0.0, 0.5, 1.0]);
    let c = canonicalize(&[3.0f64, -1.0, 7.0, 1.0]).unwrap();
    assert_eq!(canonicalize(&c).unwrap(), c);
    let affine: Vec<f64> = [3.0f64, -1.0, 7.0, 1.0].iter().map(|x| 2.5 * x - 4.0).collect();
    for (a, b) in canonicalize(&affine).unwrap().iter().zip(&c) {
        assert!((a - b).abs() < 1e-15);
    }
    assert!(canonicalize::<f64>(&[]).is_err());
    assert!(canonicalize(&[1.0f64, f64::NAN]).is_err());
    assert_eq!(extreme_states(&[0.5f64, 0.0, 1.0, 0.0, 1.0]), (1, 2));
}

#[test]
fn alpha_bands() {
    let raw = [0.0f64, 0.02, 0.3, 0.7, 0.99, 1.0];
    let t0 = build_omni_test(&raw, 0.0, 0.9).unwrap();
    assert_eq!(t0.alpha_l, t0.alpha_u);
    for (a, c) in t0.alpha_l.iter().zip(&raw) {
        assert!((a - c).abs() < 1e-15);
    }
    let mut prev_l = t0.alpha_l.clone();
    let mut prev_u = t0.alpha_u.clone();
    for eps in [0.5, 1.0, 4.0, 9.0] {
        let t = build_omni_test(&raw, eps, 0.9).unwrap();
        for s in 0..raw.len() {
            assert!(t.alpha_l[s] <= prev_l[s] && t.alpha_u[s] >= prev_u[s]);
            assert!(t.alpha_l[s] >= 0.0 && t.alpha_u[s] <= 1.0);
        }
        prev_l = t.alpha_l;
        prev_u = t.alpha_u;
    }
    // ε(1-γ)/2 = 0.05: 0.02 clamps to 0 below, 0.99 clamps to 1 above
    let t = build_omni_test(&raw, 1.0, 0.9).unwrap();
    assert_eq!(t.alpha_l[1], 0.0);
    assert_eq!(t.alpha_u[4], 1.0);
    assert!((omni_slack(1.0f64, 0.9) - 0.05).abs() < 1e-15);
}

#[test]
fn bad_parameters_are_rejected() {
    assert!(build_omni_test(&[0.0f64, 1.0, 2.0], 2.0, 0.0).is_err());
    assert!(build_omni_test(&[0.0f64, 1.0, 2.0], 0.1, 1.0).is_err());
    assert!(build_omni_test(&[0.0f64, 1.0, 2.0], -0.1, 0.5).is_err());
    assert!(build_omni_test(&[1.0f64, 1.0, 1.0], 0.1, 0.5).is_err());
    let t = build_omni_test(&[0.0f64, 1.0, 2.0], 0.1, 0.5).unwrap();
    assert!(verify_robot(&t, &[0.0, 1.0]).is_err());
}

#[test]
fn two_state_rewards() {
    let t = build_omni_test(&[1.0f64, 3.0], 0.1, 0.9).unwrap();
    assert_eq!(t.checks_l, vec![(0, GAMBLE)]);
    assert!(verify_robot(&t, &[1.0, 3.0]).unwrap());
    assert!(verify_robot(&t, &[-7.0, 0.0]).unwrap());
    assert!(!verify_robot(&t, &[3.0, 1.0]).unwrap());
}

#[test]
fn truth_passes_and_perturbation_fails() {
    let raw = [0.0f64, 0.2, 0.5, 0.8, 1.0];
    let t = build_omni_test(&raw, 0.5, 0.9).unwrap();
    assert!(verify_robot(&t, &raw).unwrap());
    let scaled: Vec<f64> = raw.iter().map(|x| 10.0 * x + 3.0).collect();
    assert!(verify_robot(&t, &scaled).unwrap());
    // slack is 0.025; push one interior state well past it
    let mut far = raw;
    far[2] = 0.6;
    assert!(!verify_robot(&t, &far).unwrap());
    let mut near = raw;
    near[2] = 0.51;
    assert!(verify_robot(&t, &near).unwrap());
}

#[test]
fn strict_policy_check() {
    let t = build_omni_test(&[0.0f64, 0.4, 1.0], 0.0, 0.9).unwrap();
    let stay = Policy::deterministic(&[STAY; 3], 2);
    let gamble = Policy::deterministic(&[GAMBLE; 3], 2);
    assert!(verify_omni(&t, &stay, &gamble).unwrap());
    assert!(!verify_omni(&t, &gamble, &gamble).unwrap());
    let mixed = Policy::new(vec![vec![0.5, 0.5]; 3]).unwrap();
    assert!(!verify_omni(&t, &stay, &mixed).unwrap());
}

#[test]
fn manifest_round_trip() {
    let t = build_omni_test(&[0.0f64, 0.4, 1.0, 0.9], 0.3, 0.8).unwrap();
    let m = t.manifest("l.json", "u.json");
    let text = serde_json::to_string(&m).unwrap();
    let back: OmniManifest<f64> = serde_json::from_str(&text).unwrap();
    assert_eq!(back, m);
    let t2 = OmniTest::from_manifest(back, t.env_l.clone(), t.env_u.clone()).unwrap();
    assert_eq!(t2.checks_u, t.checks_u);
}

#[test]
fn passing_robots_are_epsilon_aligned_on_the_family() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for eps in [0.1, 1.0] {
        let mut passed = 0;
        for draw in 0..40 {
            let n = rng.random_range(3..7);
            let r: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            // family discounts reach 0.99, so the slack must be sized for it
            let gamma = 0.99;
            let test = build_omni_test(&r, eps, gamma).unwrap();
            let canon = canonicalize(&r).unwrap();
            let noise = omni_slack(eps, gamma) * 0.9;
            let robot: Vec<f64> = canon.iter().map(|c| c + rng.random_range(-noise..noise)).collect();
            if verify_robot(&test, &robot).unwrap() {
                passed += 1;
                let fc = family_alignment_check(&r, &robot, eps, 30, draw).unwrap();
                assert!(fc.passed, "ε {eps} draw {draw}: gap {}", fc.worst_gap);
            }
        }
        assert!(passed > 10);
    }
}

#[test]
fn family_envs_are_valid_and_seeded() {
    for seed in 0..20 {
        let e = sample_family_env::<f64>(5, seed).unwrap();
        let e2 = sample_family_env::<f64>(5, seed).unwrap();
        assert_eq!(e.n_actions(), e2.n_actions());
        assert!((2..=5).contains(&e.n_actions()));
        assert!(e.gamma() >= 0.5 && e.gamma() <= 0.99);
        assert!(e.d_max() <= 3);
    }
}

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use zorl::env::{make_env, riverswim_branches, EnvError, ENV_NAMES};

#[test]
fn states_stay_inside_the_box() {
    for name in ENV_NAMES {
        let env = make_env(name).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut s = env.initial_state.clone();
        for _ in 0..100_000 {
            let a: Vec<f64> = env
                .action_range
                .iter()
                .map(|&(lo, hi)| rng.random_range(lo..=hi))
                .collect();
            let (next, raw) = env.step(&s, &a, &mut rng).unwrap();
            for (x, &(lo, hi)) in next.iter().zip(&env.state_range) {
                assert!((lo..=hi).contains(x), "{name}: {x} escaped [{lo}, {hi}]");
            }
            let (rlo, rhi) = env.reward_range;
            assert!((rlo..=rhi).contains(&raw), "{name}: reward {raw}");
            s = next;
        }
    }
}

#[test]
fn noiseless_linear_step_from_the_corner() {
    let mut env = make_env("lq1").unwrap();
    env.noise_std = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (next, raw) = env.step(&[4.0, 4.0], &[1.0, 1.0], &mut rng).unwrap();
    // A·(4,4) + B·(1,1) by hand.
    let expected = [
        -0.2 * 4.0 - 0.07 * 4.0 + 0.07 + 0.09,
        0.6 * 4.0 + 0.07 * 4.0 - 0.03 - 0.1,
    ];
    for (a, b) in next.iter().zip(&expected) {
        assert!((a - b).abs() < 1e-12);
    }
    assert!((raw - -(0.4 * 32.0 + 0.6 * 2.0)).abs() < 1e-12);
    assert_eq!(env.normalize_reward(raw), 0.0);

    let mut env = make_env("lq2").unwrap();
    env.noise_std = 0.0;
    let (next, _) = env
        .step(&[4.0, 4.0], &[1.0, -1.0, 0.0, 0.5], &mut rng)
        .unwrap();
    let expected = [-1.08 + 0.1 + 0.01 + 0.04, 2.68 + 0.02 + 0.1 + 0.0005];
    for (a, b) in next.iter().zip(&expected) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn nonlinear_step_is_clipped() {
    let mut env = make_env("nonlinear").unwrap();
    env.noise_std = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (next, _) = env.step(&[4.0, 4.0], &[1.0, 1.0], &mut rng).unwrap();
    // f(4) = 10 in both coordinates.
    assert!((next[0] - (-2.7 + 0.16)).abs() < 1e-12);
    assert_eq!(next[1], 4.0);
}

#[test]
fn riverswim_branch_frequencies() {
    let mut env = make_env("riverswim").unwrap();
    env.noise_std = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = 0.3;
    let mut counts = [0usize; 3];
    let n = 100_000;
    for _ in 0..n {
        let (next, _) = env.step(&[3.0], &[a], &mut rng).unwrap();
        let k = if next[0] < 3.0 {
            0
        } else if next[0] == 3.0 {
            1
        } else {
            2
        };
        counts[k] += 1;
    }
    for (c, p) in counts.iter().zip(riverswim_branches(a)) {
        assert!((*c as f64 / n as f64 - p).abs() < 0.01);
    }
}

#[test]
fn finite_chain_frequencies() {
    let env = make_env("synthetic-finite").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let n = 100_000;
    let stay = (0..n)
        .filter(|_| env.step(&[0.25], &[0.75], &mut rng).unwrap().0[0] == 0.25)
        .count();
    assert!((stay as f64 / n as f64 - 0.9).abs() < 0.01);
}

#[test]
fn out_of_range_inputs_are_rejected() {
    let env = make_env("riverswim").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(matches!(
        env.step(&[7.0], &[0.0], &mut rng),
        Err(EnvError::OutOfRange { what: "state", .. })
    ));
    assert!(matches!(
        env.step(&[1.0], &[0.0, 0.0], &mut rng),
        Err(EnvError::Dimension { .. })
    ));
    assert!(matches!(make_env("pendulum"), Err(EnvError::UnknownEnv(_))));
}

proptest! {
    #[test]
    fn riverswim_branches_form_a_distribution(a in -1.0f64..=1.0) {
        let p = riverswim_branches(a);
        prop_assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unit_maps_round_trip(idx in 0usize..5, u in prop::collection::vec(0.0f64..=1.0, 4)) {
        let env = make_env(ENV_NAMES[idx]).unwrap();
        let s = env.state_from_unit(&u[..env.state_dims()]);
        let back = env.state_to_unit(&s);
        for (a, b) in back.iter().zip(&u) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        let a = env.action_from_unit(&u[..env.action_dims()]);
        let back = env.action_to_unit(&a);
        for (x, y) in back.iter().zip(&u) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn normalized_rewards_lie_in_the_unit_interval(idx in 0usize..5, u in prop::collection::vec(0.0f64..=1.0, 6)) {
        let env = make_env(ENV_NAMES[idx]).unwrap();
        let z = &u[..env.state_dims() + env.action_dims()];
        let r = env.unit_reward(z).unwrap();
        prop_assert!((0.0..=1.0).contains(&r));
    }
}

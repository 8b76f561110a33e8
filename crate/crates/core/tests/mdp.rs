use std::collections::VecDeque;

use gitd_core::env::{ControlEnv, GridLayout, DEFAULT_GRID, GOAL_REWARD};
use gitd_core::mdp::{hall_mp, star_mp, tabular_bellman, triangle_bellman, TabularMP, TriangleOperator};
use gitd_core::Error;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SQRT3: f64 = 1.732_050_807_568_877_2;

/// Rotation of a plane vector by `angle` about (1,1,1)/√3, written in the
/// in-plane form `cos·v + sin·(n × v)`.
fn plane_rotate(v: [f64; 3], angle: f64) -> [f64; 3] {
    let n = [1.0 / SQRT3; 3];
    let cross = [n[1] * v[2] - n[2] * v[1], n[2] * v[0] - n[0] * v[2], n[0] * v[1] - n[1] * v[0]];
    let (s, c) = angle.sin_cos();
    [c * v[0] + s * cross[0], c * v[1] + s * cross[1], c * v[2] + s * cross[2]]
}

fn plane_point(a: f64, b: f64) -> [f64; 3] {
    // a·(1,0,−1) + b·(1,−2,1)
    [a + b, -2.0 * b, -a + b]
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[test]
fn triangle_golden_value() {
    let got = triangle_bellman([1.0, 0.0, -1.0]).unwrap();
    let oracle = plane_rotate([0.5, 0.0, -0.5], -std::f64::consts::FRAC_PI_3);
    let golden = [0.5, -0.5, 0.0];
    for i in 0..3 {
        assert!((oracle[i] - golden[i]).abs() < 1e-15);
        assert!((got[i] - golden[i]).abs() < 1e-15, "{got:?}");
    }
}

#[test]
fn triangle_rejects_off_plane_input() {
    assert!(matches!(triangle_bellman([1.0, 1.0, 1.0]), Err(Error::OffPlane(_))));
    assert_eq!(triangle_bellman([0.0; 3]).unwrap(), [0.0; 3]);
}

#[test]
fn built_in_processes_have_zero_rewards_and_their_discounts() {
    let (star, _) = star_mp();
    let (hall, _) = hall_mp();
    assert_eq!(star.gamma(), 0.99);
    assert_eq!(hall.gamma(), 0.9);
    for mp in [&star, &hall] {
        assert!(mp.rewards().iter().all(|&r| r == 0.0));
        for s in 0..mp.n_states() {
            let row: f64 = mp.transition_row(s).iter().sum();
            assert!((row - 1.0).abs() <= 1e-12);
        }
        let zero = vec![0.0; mp.n_states()];
        assert_eq!(tabular_bellman(mp, &zero).unwrap(), zero);
    }
    assert_eq!(TriangleOperator::new().apply3([0.0; 3]), [0.0; 3]);
}

#[test]
fn star_bellman_of_ones_matches_dense_product() {
    let (mp, _) = star_mp();
    let n = mp.n_states();
    let ones = vec![1.0; n];
    let got = tabular_bellman(&mp, &ones).unwrap();
    for s in 0..n {
        let mut want = 0.0;
        for t in 0..n {
            want += mp.transition(s, t) * (mp.reward(s, t) + mp.gamma() * ones[t]);
        }
        assert!((got[s] - want).abs() < 1e-15);
    }
}

#[test]
fn tabular_bellman_checks_length() {
    let (mp, _) = hall_mp();
    assert!(matches!(tabular_bellman(&mp, &[0.0; 2]), Err(Error::Dimension { .. })));
}

#[test]
fn tabular_bellman_fixes_the_true_values() {
    // two-state chain with a reward, V* solved by hand
    let mp = TabularMP::new(2, vec![0.0, 1.0, 0.0, 1.0], vec![0.0, 1.0, 0.0, 0.0], 0.5).unwrap();
    let v_star = [1.0, 0.0];
    let got = tabular_bellman(&mp, &v_star).unwrap();
    assert_eq!(got, v_star.to_vec());
}

proptest! {
    #[test]
    fn triangle_is_linear(a in -5.0..5.0f64, b in -5.0..5.0f64, c in -5.0..5.0f64, d in -5.0..5.0f64,
                          alpha in -3.0..3.0f64, beta in -3.0..3.0f64) {
        let u = plane_point(a, b);
        let v = plane_point(c, d);
        let mix: [f64; 3] = std::array::from_fn(|i| alpha * u[i] + beta * v[i]);
        let lhs = triangle_bellman(mix).unwrap();
        let (gu, gv) = (triangle_bellman(u).unwrap(), triangle_bellman(v).unwrap());
        for i in 0..3 {
            prop_assert!((lhs[i] - (alpha * gu[i] + beta * gv[i])).abs() <= 1e-12);
        }
    }

    #[test]
    fn triangle_halves_norms(a in -5.0..5.0f64, b in -5.0..5.0f64, n in 1usize..12) {
        let v = plane_point(a, b);
        let mut w = v;
        for _ in 0..n {
            w = triangle_bellman(w).unwrap();
            prop_assert!(w.iter().sum::<f64>().abs() < 1e-9);
        }
        let want = norm(&v) * 0.5f64.powi(n as i32);
        prop_assert!((norm(&w) - want).abs() <= 1e-9 * want.max(1e-300));
    }

    #[test]
    fn triangle_matches_plane_rotation(a in -5.0..5.0f64, b in -5.0..5.0f64) {
        let v = plane_point(a, b);
        let got = triangle_bellman(v).unwrap();
        let want = plane_rotate(v.map(|x| 0.5 * x), -std::f64::consts::FRAC_PI_3);
        for i in 0..3 {
            prop_assert!((got[i] - want[i]).abs() <= 1e-12 * (1.0 + norm(&v)));
        }
    }

    #[test]
    fn tabular_bellman_is_a_contraction(seed in 0u64..1000, which in 0usize..2) {
        use rand::Rng;
        let (mp, _) = if which == 0 { star_mp() } else { hall_mp() };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v1: Vec<f64> = (0..mp.n_states()).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let v2: Vec<f64> = (0..mp.n_states()).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let (g1, g2) = (tabular_bellman(&mp, &v1).unwrap(), tabular_bellman(&mp, &v2).unwrap());
        let sup = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        prop_assert!(sup(&g1, &g2) <= mp.gamma() * sup(&v1, &v2) + 1e-12);
    }
}

fn bfs_distance(env: &ControlEnv, from: usize) -> usize {
    let mut dist = vec![usize::MAX; env.n_states()];
    let mut queue = VecDeque::from([from]);
    dist[from] = 0;
    while let Some(s) = queue.pop_front() {
        if env.is_terminal(s) {
            return dist[s];
        }
        for a in 0..env.n_actions() {
            for (t, _) in env.kernel(s, a).unwrap() {
                if dist[t] == usize::MAX {
                    dist[t] = dist[s] + 1;
                    queue.push_back(t);
                }
            }
        }
    }
    panic!("goal unreachable");
}

#[test]
fn default_grid_optimal_value_matches_shortest_path() {
    let env = ControlEnv::default_grid();
    let start = env.start_states()[0];
    let d = bfs_distance(&env, start);
    assert_eq!(d, 8);
    let want = 0.99f64.powi(d as i32 - 1) * GOAL_REWARD;
    assert!((env.optimal_start_value(0.99) - want).abs() < 1e-10);
}

#[test]
fn deterministic_moves_follow_the_layout() {
    let mut env = ControlEnv::default_grid();
    let s = env.reset(7);
    assert_eq!(env.position(s), (1, 1));
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let right = env.step(s, 1, &mut rng).unwrap();
    assert_eq!(env.position(right.next_state), (1, 2));
    let up = env.step(right.next_state, 0, &mut rng).unwrap();
    assert_eq!(up.next_state, right.next_state);
    assert_eq!(up.reward, 0.0);
    assert!(matches!(env.step(s, 9, &mut rng), Err(Error::Argument(_))));
}

#[test]
fn goal_pays_and_terminates() {
    let layout = GridLayout::parse("SG\n").unwrap();
    let mut env = ControlEnv::new(layout, 10, 0.0).unwrap();
    let s = env.reset(0);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let t = env.step(s, 1, &mut rng).unwrap();
    assert_eq!(t.reward, GOAL_REWARD);
    assert!(t.terminal);
    assert!(matches!(env.step(t.next_state, 0, &mut rng), Err(Error::State(_))));
}

#[test]
fn horizon_ends_the_episode() {
    let layout = GridLayout::parse("S.G\n").unwrap();
    let mut env = ControlEnv::new(layout, 2, 0.0).unwrap();
    let s = env.reset(0);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(!env.step(s, 3, &mut rng).unwrap().terminal);
    assert!(env.step(s, 3, &mut rng).unwrap().terminal);
    assert!(matches!(env.step(s, 3, &mut rng), Err(Error::State(_))));
}

#[test]
fn reset_is_seeded_and_uniform_over_starts() {
    let layout = GridLayout::parse("S.S\n.#.\nS.G\n").unwrap();
    let mut env = ControlEnv::new(layout, 50, 0.0).unwrap();
    assert_eq!(env.reset(3), env.reset(3));
    let starts = env.start_states().to_vec();
    assert_eq!(starts.len(), 3);
    let n = 10_000;
    let mut counts = vec![0usize; starts.len()];
    for seed in 0..n {
        let s = env.reset(seed as u64);
        counts[starts.iter().position(|&x| x == s).unwrap()] += 1;
    }
    let p = 1.0 / 3.0;
    let sigma = (n as f64 * p * (1.0 - p)).sqrt();
    for c in counts {
        assert!((c as f64 - n as f64 * p).abs() <= 3.0 * sigma, "{c}");
    }
}

#[test]
fn slippery_successors_match_the_kernel() {
    let layout = GridLayout::parse(DEFAULT_GRID).unwrap();
    let mut env = ControlEnv::new(layout, usize::MAX, 0.3).unwrap();
    let s = env.reset(0);
    let (a, n) = (1, 100_000);
    let kernel = env.kernel(s, a).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut counts = vec![0usize; env.n_states()];
    for _ in 0..n {
        counts[env.step(s, a, &mut rng).unwrap().next_state] += 1;
    }
    assert!((kernel.iter().map(|(_, p)| p).sum::<f64>() - 1.0).abs() <= 1e-12);
    for (t, p) in kernel {
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((counts[t] as f64 - n as f64 * p).abs() <= 3.0 * sigma, "state {t}: {} vs {p}", counts[t]);
    }
}

#[test]
fn layout_errors() {
    assert!(matches!(GridLayout::parse(""), Err(Error::Empty)));
    assert!(GridLayout::parse("S.\nG\n").is_err());
    assert!(GridLayout::parse("S.x\n..G\n").is_err());
    assert!(GridLayout::parse("...\n..G\n").is_err());
    assert!(GridLayout::parse("S..\n...\n").is_err());
    let l = GridLayout::parse(DEFAULT_GRID).unwrap();
    assert_eq!(l.render(), DEFAULT_GRID);
}

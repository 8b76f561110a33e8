use gitd_core::metrics::{iqm, normalized_auc, normalized_curve, smooth, ScoreTensor};
use gitd_core::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Repeating every value four times makes the 25% trim an integer count,
/// so the trimmed mean needs no fractional weights.
fn oracle_iqm(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().flat_map(|&x| [x; 4]).collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    v[n..3 * n].iter().sum::<f64>() / (2 * n) as f64
}

fn random_tensor(rng: &mut ChaCha8Rng, seeds: usize, envs: usize, steps: usize) -> ScoreTensor {
    let data = (0..seeds * envs * steps).map(|_| rng.gen_range(0.1..10.0)).collect();
    ScoreTensor::new(seeds, envs, steps, data).unwrap()
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * (1.0 + b.abs())
}

#[test]
fn iqm_matches_the_replication_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..200 {
        let n = rng.gen_range(1..40);
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-100.0..100.0)).collect();
        assert!(close(iqm(&v).unwrap(), oracle_iqm(&v)));
    }
    assert_eq!(oracle_iqm(&[0.0, 10.0, 10.0, 10.0, 10.0, 1000.0]), 10.0);
}

#[test]
fn normalized_curve_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let (seeds, envs, steps) = (rng.gen_range(1..7), rng.gen_range(1..4), rng.gen_range(1..6));
        let t = random_tensor(&mut rng, seeds, envs, steps);
        let base: Vec<f64> = (0..envs).map(|_| rng.gen_range(0.5..5.0)).collect();
        let got = normalized_curve(&t, &base).unwrap();
        for (step, g) in got.iter().enumerate() {
            let mut pool = Vec::new();
            for i in 0..seeds {
                for (j, b) in base.iter().enumerate() {
                    pool.push(t.get(i, j, step) / b);
                }
            }
            assert!(close(*g, oracle_iqm(&pool)));
        }
    }
    // 2 environments × 4 seeds
    let t = random_tensor(&mut rng, 4, 2, 3);
    let c = normalized_curve(&t, &[1.0, 2.0]).unwrap();
    assert_eq!(c.len(), 3);
}

#[test]
fn normalized_auc_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..50 {
        let (seeds, envs, steps) = (rng.gen_range(1..7), rng.gen_range(1..4), rng.gen_range(1..6));
        let scores = random_tensor(&mut rng, seeds, envs, steps);
        let baseline = random_tensor(&mut rng, seeds, envs, steps);
        let end: Vec<f64> = (0..envs)
            .map(|j| (0..seeds).map(|i| baseline.get(i, j, steps - 1)).sum::<f64>() / seeds as f64)
            .collect();
        let area = |t: &ScoreTensor| {
            let mut sums = Vec::new();
            for i in 0..seeds {
                for (j, b) in end.iter().enumerate() {
                    sums.push((0..steps).map(|s| t.get(i, j, s) / b).sum::<f64>());
                }
            }
            oracle_iqm(&sums)
        };
        let want = area(&scores) / area(&baseline);
        assert!(close(normalized_auc(&scores, &baseline).unwrap(), want));
        assert_eq!(normalized_auc(&baseline, &baseline).unwrap(), 1.0);
    }
}

#[test]
fn auc_is_homogeneous() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let base = random_tensor(&mut rng, 5, 2, 8);
    let data = (0..5)
        .flat_map(|i| (0..2).flat_map(move |j| (0..8).map(move |t| (i, j, t))))
        .map(|(i, j, t)| 2.0 * base.get(i, j, t))
        .collect();
    let double = ScoreTensor::new(5, 2, 8, data).unwrap();
    assert_eq!(normalized_auc(&double, &base).unwrap(), 2.0);
}

#[test]
fn baselines_equal_to_scores_give_ones() {
    let t = ScoreTensor::from_curves(&[vec![vec![3.0, 3.0, 3.0], vec![5.0, 5.0, 5.0]]]).unwrap();
    assert_eq!(normalized_curve(&t, &[3.0, 5.0]).unwrap(), vec![1.0; 3]);
    let single = ScoreTensor::from_curves(&[vec![vec![1.0, 2.0, 6.0]]]).unwrap();
    assert_eq!(normalized_curve(&single, &[4.0]).unwrap(), vec![0.25, 0.5, 1.5]);
    assert!(matches!(normalized_curve(&t, &[3.0, 0.0]), Err(Error::ZeroBaseline(1))));
    assert!(ScoreTensor::from_curves(&[vec![vec![1.0], vec![1.0, 2.0]]]).is_err());
}

#[test]
fn smoothing_examples() {
    assert_eq!(smooth(&[4.0; 6], 3).unwrap(), vec![4.0; 6]);
    let v = [0.5, -1.0, 2.0];
    assert_eq!(smooth(&v, 1).unwrap(), v.to_vec());
    assert!(smooth(&v, 5).is_err());
}

proptest! {
    #[test]
    fn iqm_is_bounded_and_permutation_invariant(v in prop::collection::vec(-1e3..1e3f64, 1..50), seed in any::<u64>()) {
        let m = iqm(&v).unwrap();
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(m >= lo - 1e-9 && m <= hi + 1e-9);
        let mut shuffled = v.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, rng.gen_range(0..=i));
        }
        prop_assert_eq!(iqm(&shuffled).unwrap(), m);
    }

    #[test]
    fn iqm_is_monotone(v in prop::collection::vec(-1e3..1e3f64, 1..50), idx in any::<prop::sample::Index>(), bump in 0.0..100.0f64) {
        let before = iqm(&v).unwrap();
        let mut w = v.clone();
        w[idx.index(v.len())] += bump;
        prop_assert!(iqm(&w).unwrap() >= before - 1e-9);
    }

    #[test]
    fn iqm_of_symmetric_data_is_the_mean(half in prop::collection::vec(0.0..1e3f64, 1..20), centre in -100.0..100.0f64) {
        let v: Vec<f64> = half.iter().flat_map(|&d| [centre + d, centre - d]).collect();
        prop_assert!((iqm(&v).unwrap() - centre).abs() <= 1e-9 * (1.0 + centre.abs()));
    }

    #[test]
    fn normalized_curve_is_scale_equivariant(seed in any::<u64>(), c in 0.01..100.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = random_tensor(&mut rng, 4, 2, 5);
        let base = [1.5, 3.0];
        let scaled = ScoreTensor::new(4, 2, 5, (0..4 * 2 * 5).map(|i| {
            let (s, rest) = (i / 10, i % 10);
            c * t.get(s, rest / 5, rest % 5)
        }).collect()).unwrap();
        let a = normalized_curve(&t, &base).unwrap();
        let b = normalized_curve(&scaled, &[c * base[0], c * base[1]]).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-12 * x.abs());
        }
    }
}

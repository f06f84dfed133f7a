mod common;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::SeedableRng;
use unirag_core::metrics::{feature_stats, fid, inception_score, FeatureStats};

fn stats(mean: [f64; 2], cov: [[f64; 2]; 2]) -> FeatureStats {
    FeatureStats {
        mean: DVector::from_row_slice(&mean),
        cov: DMatrix::from_row_slice(2, 2, &[cov[0][0], cov[0][1], cov[1][0], cov[1][1]]),
        n: 100,
    }
}

#[test]
fn fid_two_by_two_hand_expansion() {
    let cases = [
        ([0.0, 0.0], [[2.0, 0.3], [0.3, 1.0]], [1.0, -0.5], [[0.5, -0.2], [-0.2, 1.5]]),
        ([3.0, 1.0], [[1.0, 0.0], [0.0, 4.0]], [0.0, 0.0], [[9.0, 2.0], [2.0, 1.0]]),
    ];
    for (ma, a, mb, b) in cases {
        let got = fid(&stats(ma, a), &stats(mb, b)).unwrap();
        let want = common::fid_2x2(ma, a, mb, b);
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }
}

#[test]
fn fid_of_shifted_gaussians_is_mean_gap() {
    let mut rng = StdRng::seed_from_u64(5);
    let mu = [0.5f32, -0.25, 1.0, 0.0, 0.75, -0.5, 0.25, 1.25];
    let a = common::normal_rows(&mut rng, 20_000, 8, &[0.0; 8]);
    let b = common::normal_rows(&mut rng, 20_000, 8, &mu);
    let (sa, sb) = (feature_stats(&a).unwrap(), feature_stats(&b).unwrap());
    let want: f64 = mu.iter().map(|&m| f64::from(m) * f64::from(m)).sum();
    let got = fid(&sa, &sb).unwrap();
    assert!((got - want).abs() / want < 0.02, "{got} vs {want}");
    assert!((fid(&sa, &sb).unwrap() - fid(&sb, &sa).unwrap()).abs() < 1e-8);
    assert!(fid(&sa, &sa).unwrap() < 1e-6);
}

#[test]
fn inception_uniform_one_hot_and_oracle() {
    let uniform = vec![vec![0.1; 10]; 1_000];
    let is = inception_score(&uniform, 10, None).unwrap();
    assert_eq!((is.mean, is.sd), (1.0, 0.0));

    let one_hot: Vec<Vec<f64>> = (0..1_000)
        .map(|i| {
            let mut r = vec![0.0; 10];
            r[i % 10] = 1.0;
            r
        })
        .collect();
    let is = inception_score(&one_hot, 10, None).unwrap();
    assert!((is.mean - 10.0).abs() < 1e-12 * 10.0, "{}", is.mean);
    assert!(is.sd < 1e-12);

    let mut rng = StdRng::seed_from_u64(8);
    let probs = common::random_probs(&mut rng, 1_000, 10);
    let is = inception_score(&probs, 10, None).unwrap();
    let (mean, sd) = common::inception_loop_oracle(&probs, 10);
    assert!((is.mean - mean).abs() < 1e-9 && (is.sd - sd).abs() < 1e-9);
}

#[test]
fn inception_one_split_equals_unsplit_for_any_seed() {
    let mut rng = StdRng::seed_from_u64(9);
    let probs = common::random_probs(&mut rng, 257, 6);
    let base = inception_score(&probs, 1, None).unwrap();
    for seed in [0, 1, 42] {
        assert_eq!(inception_score(&probs, 1, Some(seed)).unwrap(), base);
    }
    assert_eq!(base.sd, 0.0);
}

fn rotation(dim: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = StdRng::seed_from_u64(seed);
    let rows = common::normal_rows(&mut rng, dim, dim, &vec![0.0; dim]);
    let m = DMatrix::from_fn(dim, dim, |i, j| f64::from(rows[i][j]));
    m.qr().q()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn fid_is_symmetric_and_rotation_invariant(seed in any::<u64>(), dim in 2usize..6) {
        let mut rng = StdRng::seed_from_u64(seed);
        let shift: Vec<f32> = (0..dim).map(|i| i as f32 * 0.3).collect();
        let a = common::normal_rows(&mut rng, 200, dim, &vec![0.0; dim]);
        let b = common::normal_rows(&mut rng, 200, dim, &shift);
        let (sa, sb) = (feature_stats(&a).unwrap(), feature_stats(&b).unwrap());
        let d = fid(&sa, &sb).unwrap();
        prop_assert!((d - fid(&sb, &sa).unwrap()).abs() < 1e-8);

        let r = rotation(dim, seed ^ 1);
        let rotate = |s: &FeatureStats| FeatureStats {
            mean: &r * &s.mean,
            cov: &r * &s.cov * r.transpose(),
            n: s.n,
        };
        prop_assert!((d - fid(&rotate(&sa), &rotate(&sb)).unwrap()).abs() < 1e-6);
    }
}

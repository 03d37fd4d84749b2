mod common;

use common::{dense_three_level, fd_max_rel_error, random_three_level, random_two_level};
use pseudoclust::lmm::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn two_level_matches_quadrature() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let (data, params) = random_two_level(&mut rng);
        for weighted in [false, true] {
            let a = loglik_two_level(&data, &params, weighted).unwrap();
            let q = loglik_quadrature_oracle(&data, &params, weighted).unwrap();
            assert!((a - q).abs() <= 1e-8, "analytic {a} quadrature {q}");
        }
    }
}

#[test]
fn three_level_matches_quadrature_and_dense() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let (data, params) = random_three_level(&mut rng);
        let a = loglik_three_level(&data, &params, true).unwrap();
        let q = loglik_quadrature_three_level(&data, &params, true).unwrap();
        assert!((a - q).abs() <= 1e-6, "analytic {a} quadrature {q}");
        let a = loglik_three_level(&data, &params, false).unwrap();
        let d = dense_three_level(&data, &params);
        assert!((a - d).abs() <= 1e-8, "analytic {a} dense {d}");
    }
}

#[test]
fn scores_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let (data, params) = random_two_level(&mut rng);
        let p = params.beta.len();
        let theta: Vec<f64> = params
            .beta
            .iter()
            .copied()
            .chain([params.sigma2_e, params.sigma2_u])
            .collect();
        let f = |t: &[f64]| {
            let pr = TwoLevelParams {
                beta: t[..p].to_vec(),
                sigma2_e: t[p],
                sigma2_u: t[p + 1],
            };
            loglik_two_level(&data, &pr, true).unwrap()
        };
        assert!(fd_max_rel_error(&f, &theta, &score_two_level(&data, &params, true).unwrap()) <= 1e-4);

        let (data, params) = random_three_level(&mut rng);
        let p = params.beta.len();
        let theta: Vec<f64> = params
            .beta
            .iter()
            .copied()
            .chain([params.sigma2_e, params.sigma2_u, params.sigma2_tau])
            .collect();
        let f = |t: &[f64]| {
            let pr = ThreeLevelParams {
                beta: t[..p].to_vec(),
                sigma2_e: t[p],
                sigma2_u: t[p + 1],
                sigma2_tau: t[p + 2],
            };
            loglik_three_level(&data, &pr, true).unwrap()
        };
        assert!(fd_max_rel_error(&f, &theta, &score_three_level(&data, &params, true).unwrap()) <= 1e-4);
    }
}

mod common;

use common::{grid_argmin, kron_quadratic_prox, max_abs_diff, random_matrix, random_model, random_spd, rng};
use graphem::estep::{estep, EStepStats, QuadraticTerm};
use graphem::linalg::{spectral_norm, Mat};
use graphem::prox::{
    prox_quadratic, prox_quadratic_isotropic, prox_quadratic_lyapunov, BlockMap, PenaltyTerm,
};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn catalog(dim: usize) -> Vec<PenaltyTerm> {
    let mut mask = DMatrix::from_element(dim, dim, true);
    mask[(0, dim - 1)] = false;
    vec![
        PenaltyTerm::L1 { weight: 0.4 },
        PenaltyTerm::BlockL21 {
            weight: 0.4,
            blocks: BlockMap::contiguous(dim, if dim % 2 == 0 { 2 } else { 1 }).unwrap(),
        },
        PenaltyTerm::Gaussian { weight: 0.7 },
        PenaltyTerm::ElasticNet { weight: 0.3 },
        PenaltyTerm::SpectralBall { radius: 0.8 },
        PenaltyTerm::BoxRange { min: -0.2, max: 0.5 },
        PenaltyTerm::FrobeniusBall { radius: 0.9 },
        PenaltyTerm::SupportMask { mask },
        PenaltyTerm::Zero,
    ]
}

#[test]
fn separable_proxes_match_grid_minimization() {
    let theta = 0.7;
    let scalar_terms = [
        PenaltyTerm::L1 { weight: 0.4 },
        PenaltyTerm::Gaussian { weight: 0.7 },
        PenaltyTerm::ElasticNet { weight: 0.3 },
        PenaltyTerm::BoxRange { min: -0.2, max: 0.5 },
        PenaltyTerm::Zero,
    ];
    for term in &scalar_terms {
        for &v in &[-2.0, -0.25, -0.1, 0.0, 0.05, 0.3, 1.4] {
            let point = Mat::from_element(1, 1, v);
            let got = term.prox(&point, theta).unwrap()[(0, 0)];
            let objective = |x: f64| {
                let pen = term.value(&Mat::from_element(1, 1, x));
                theta * pen + 0.5 * (x - v).powi(2)
            };
            let best = grid_argmin(objective, -3.0, 3.0, 1e-4);
            assert!((got - best).abs() <= 1e-3, "{term} at {v}: {got} vs grid {best}");
        }
    }
}

#[test]
fn block_and_ball_proxes_satisfy_optimality() {
    let mut g = rng(2);
    for _ in 0..20 {
        let a = random_matrix(4, 4, 1.0, &mut g);
        // spectral ball: singular vectors kept, values clamped
        let p = PenaltyTerm::SpectralBall { radius: 0.8 }.prox(&a, 1.0).unwrap();
        let sa = a.clone().svd(true, true);
        let sp = p.clone().svd(false, false);
        let mut expect: Vec<f64> = sa.singular_values.iter().map(|s| s.min(0.8)).collect();
        let mut got: Vec<f64> = sp.singular_values.iter().copied().collect();
        expect.sort_by(f64::total_cmp);
        got.sort_by(f64::total_cmp);
        for (e, v) in expect.iter().zip(&got) {
            assert!((e - v).abs() < 1e-8);
        }
        // the residual A − P lies in the normal cone: ⟨A − P, X − P⟩ ≤ 0 for feasible X
        for _ in 0..10 {
            let x = random_matrix(4, 4, 1.0, &mut g);
            let x = &x * (0.8 / spectral_norm(&x)).min(1.0);
            assert!((&a - &p).dot(&(x - &p)) <= 1e-8);
        }
        // block L21: stationarity of θκ Σ‖x_b‖ + ½‖x − a‖² per block
        let blocks = BlockMap::contiguous(4, 2).unwrap();
        let term = PenaltyTerm::BlockL21 { weight: 0.6, blocks: blocks.clone() };
        let theta = 0.9;
        let x = term.prox(&a, theta).unwrap();
        for (b, block) in blocks.blocks().iter().enumerate() {
            let norm_x = blocks.block_norm(&x, b);
            let norm_a = blocks.block_norm(&a, b);
            if norm_x == 0.0 {
                assert!(norm_a <= theta * 0.6 + 1e-12);
            } else {
                for &(i, j) in block {
                    let r = x[(i, j)] - a[(i, j)] + theta * 0.6 * x[(i, j)] / norm_x;
                    assert!(r.abs() < 1e-8);
                }
            }
        }
    }
}

fn stats_and_q(seed: u64, n: usize) -> (EStepStats, Mat) {
    let (params, a, obs) = random_model(n, 2, 8, seed);
    (estep(&params, &a, &obs).unwrap(), params.q)
}

#[test]
fn quadratic_prox_matches_kronecker_solve() {
    let mut g = rng(12);
    for seed in 0..10u64 {
        let n = 1 + (seed % 3) as usize;
        let (stats, q) = stats_and_q(seed, n);
        let a = random_matrix(n, n, 1.0, &mut g);
        for &theta in &[1e-3, 0.5, 20.0] {
            let want = kron_quadratic_prox(&a, theta, &stats, &q);
            let got = prox_quadratic_lyapunov(&a, theta, &stats, &q).unwrap();
            assert!(max_abs_diff(&got, &want) < 1e-8 * (1.0 + want.amax()));
            // optimality: X − A + θ ∇f₁(X) = 0
            let grad = QuadraticTerm::new(&stats, &q).unwrap().gradient(&got);
            assert!((&got - &a + grad * theta).amax() < 1e-8 * (1.0 + a.amax()));
        }
    }
}

#[test]
fn isotropic_route_agrees_with_general_route() {
    let mut g = rng(4);
    let (stats, _) = stats_and_q(44, 3);
    let q = Mat::identity(3, 3) * 0.09;
    let a = random_matrix(3, 3, 1.0, &mut g);
    let iso = prox_quadratic_isotropic(&a, 0.3, &stats, 0.09).unwrap();
    let gen = prox_quadratic_lyapunov(&a, 0.3, &stats, &q).unwrap();
    assert!(max_abs_diff(&iso, &gen) < 1e-10);
    assert!(max_abs_diff(&prox_quadratic(&a, 0.3, &stats, &q).unwrap(), &iso) == 0.0);
    let q_full = random_spd(3, 0.5, &mut g);
    assert!(max_abs_diff(
        &prox_quadratic(&a, 0.3, &stats, &q_full).unwrap(),
        &kron_quadratic_prox(&a, 0.3, &stats, &q_full)
    ) < 1e-9);
}

#[test]
fn projections_are_idempotent_and_feasible() {
    let mut g = rng(8);
    for term in catalog(4).iter().filter(|t| t.is_constraint()) {
        for _ in 0..10 {
            let a = random_matrix(4, 4, 2.0, &mut g);
            let p = term.prox(&a, 1.0).unwrap();
            assert_eq!(term.value(&p), 0.0, "{term}");
            let pp = term.prox(&p, 1.0).unwrap();
            assert!(max_abs_diff(&p, &pp) < 1e-10, "{term}");
        }
    }
}

fn matrix_strategy(n: usize) -> impl Strategy<Value = Mat> {
    proptest::collection::vec(-2.0f64..2.0, n * n).prop_map(move |v| Mat::from_vec(n, n, v))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn proxes_are_nonexpansive(a in matrix_strategy(4), b in matrix_strategy(4), theta in 0.01f64..5.0) {
        for term in catalog(4) {
            let pa = term.prox(&a, theta).unwrap();
            let pb = term.prox(&b, theta).unwrap();
            prop_assert!((&pa - &pb).norm() <= (&a - &b).norm() * (1.0 + 1e-10) + 1e-12, "{}", term);
        }
    }

    #[test]
    fn quadratic_prox_is_nonexpansive(a in matrix_strategy(3), b in matrix_strategy(3), theta in 0.01f64..50.0, seed in 0u64..500) {
        let (stats, q) = stats_and_q(seed, 3);
        let pa = prox_quadratic(&a, theta, &stats, &q).unwrap();
        let pb = prox_quadratic(&b, theta, &stats, &q).unwrap();
        prop_assert!((&pa - &pb).norm() <= (&a - &b).norm() * (1.0 + 1e-9));
    }

    #[test]
    fn vanishing_scale_returns_the_point(a in matrix_strategy(3)) {
        for term in catalog(3).iter().filter(|t| !t.is_constraint()) {
            let p = term.prox(&a, 1e-12).unwrap();
            prop_assert!(max_abs_diff(&p, &a) < 1e-10);
        }
    }

    #[test]
    fn sparse_proxes_give_exact_zeros(a in matrix_strategy(4), theta in 0.1f64..3.0) {
        let l1 = PenaltyTerm::L1 { weight: 0.5 }.prox(&a, theta).unwrap();
        for (x, v) in l1.iter().zip(a.iter()) {
            if v.abs() <= 0.5 * theta {
                prop_assert!(*x == 0.0);
            } else {
                prop_assert!(*x != 0.0 && x.signum() == v.signum());
            }
        }
    }
}

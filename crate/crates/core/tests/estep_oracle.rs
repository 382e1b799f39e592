mod common;

use common::{max_abs_diff, random_matrix, random_model, rng, JointGaussian};
use graphem::em::{fit, FitConfig, Method};
use graphem::estep::{estep, map_loss, q_gradient, q_value, surrogate};
use graphem::linalg::{Mat, Vector};
use graphem::prox::{PenaltyTerm, Regularizer};
use graphem::ssm::ModelParams;
use nalgebra::Cholesky;
use rand_distr::{Distribution, StandardNormal};

#[test]
fn statistics_match_dense_posterior() {
    for seed in 0..15u64 {
        let nx = 1 + (seed % 3) as usize;
        let (params, a, obs) = random_model(nx, 2, 2 + (seed % 5) as usize, 100 + seed);
        let (psi, delta, phi) = JointGaussian::new(&params, &a, &obs).stats();
        let s = estep(&params, &a, &obs).unwrap();
        assert!(max_abs_diff(&s.psi, &psi) < 1e-8);
        assert!(max_abs_diff(&s.delta, &delta) < 1e-8);
        assert!(max_abs_diff(&s.phi, &phi) < 1e-8);
    }
}

#[test]
fn statistics_match_monte_carlo() {
    let (params, a, obs) = random_model(2, 2, 3, 7);
    let joint = JointGaussian::new(&params, &a, &obs);
    let post = joint.posterior(3);
    let l = Cholesky::new(post.cov.clone()).unwrap().l();
    let s = estep(&params, &a, &obs).unwrap();
    let n = 200_000;
    let mut g = rng(11);
    let dim = post.mean.len();
    let mut sums = [Mat::zeros(2, 2), Mat::zeros(2, 2), Mat::zeros(2, 2)];
    let mut sq = [Mat::zeros(2, 2), Mat::zeros(2, 2), Mat::zeros(2, 2)];
    for _ in 0..n {
        let z = Vector::from_fn(dim, |_, _| StandardNormal.sample(&mut g));
        let x = &post.mean + &l * z;
        let mut draws = [Mat::zeros(2, 2), Mat::zeros(2, 2), Mat::zeros(2, 2)];
        for k in 1..=3 {
            let xk = x.rows(2 * k, 2);
            let xp = x.rows(2 * (k - 1), 2);
            draws[0] += xk * xk.transpose();
            draws[1] += xk * xp.transpose();
            draws[2] += xp * xp.transpose();
        }
        for i in 0..3 {
            sq[i] += draws[i].component_mul(&draws[i]);
            sums[i] += &draws[i];
        }
    }
    let exact = [&s.psi, &s.delta, &s.phi];
    for i in 0..3 {
        let mean = &sums[i] / n as f64;
        let var = &sq[i] / n as f64 - mean.component_mul(&mean);
        for (idx, (&m, &v)) in mean.iter().zip(var.iter()).enumerate() {
            let se = (v / n as f64).sqrt();
            assert!((m - exact[i][idx]).abs() <= 4.0 * se, "stat {i} entry {idx}: {m} vs {}", exact[i][idx]);
        }
    }
}

#[test]
fn gradient_matches_finite_differences() {
    let (params, a, obs) = random_model(3, 2, 5, 21);
    let s = estep(&params, &a, &obs).unwrap();
    let mut g = rng(5);
    let point = random_matrix(3, 3, 0.5, &mut g);
    let grad = q_gradient(&point, &s, &params.q).unwrap();
    let h = 1e-6;
    for i in 0..3 {
        for j in 0..3 {
            let mut up = point.clone();
            let mut dn = point.clone();
            up[(i, j)] += h;
            dn[(i, j)] -= h;
            let fd = (q_value(&up, &s, &params.q).unwrap() - q_value(&dn, &s, &params.q).unwrap()) / (2.0 * h);
            assert!((fd - grad[(i, j)]).abs() < 1e-6 * (1.0 + fd.abs()), "({i},{j}) {fd} vs {}", grad[(i, j)]);
        }
    }
}

#[test]
fn surrogate_majorizes_loss_up_to_constant() {
    // L(A) − S(A; A') ≤ L(A') − S(A'; A') for every pair
    let mut g = rng(77);
    for pair in 0..50u64 {
        let (params, _, obs) = random_model(2, 2, 6, 300 + pair);
        let reg = Regularizer::new(vec![PenaltyTerm::L1 { weight: 0.3 }]);
        let a_ref = random_matrix(2, 2, 0.6, &mut g);
        let a = random_matrix(2, 2, 0.6, &mut g);
        let s = estep(&params, &a_ref, &obs).unwrap();
        let gap_ref = map_loss(&a_ref, &params, &obs, &reg).unwrap() - surrogate(&a_ref, &s, &params.q, &reg).unwrap();
        let gap = map_loss(&a, &params, &obs, &reg).unwrap() - surrogate(&a, &s, &params.q, &reg).unwrap();
        assert!(gap <= gap_ref + 1e-9 * gap_ref.abs().max(1.0), "pair {pair}: {gap} > {gap_ref}");
    }
}

#[test]
fn mlem_loss_is_monotone() {
    let a_true = Mat::from_row_slice(3, 3, &[0.7, 0.2, 0.0, 0.0, 0.5, -0.3, 0.1, 0.0, 0.6]);
    let params = ModelParams::isotropic(3, 0.3, 0.3, 1.0, 200).unwrap();
    let traj = graphem::ssm::simulate(&params, &a_true, 8).unwrap();
    let cfg = FitConfig {
        max_em_iters: 40,
        epsilon: 1e-12,
        ..FitConfig::new(Method::Mlem)
    };
    let out = fit(&params, &traj.observations, &cfg).unwrap();
    for w in out.loss_trace.windows(2) {
        assert!(w[1] <= w[0] + 1e-8 * w[0].abs().max(1.0), "{} -> {}", w[0], w[1]);
    }
}

mod common;

use common::{complex_pilot_matrix, rng, ComplexKalman};
use graphem::datasets::channel_e_matrix;
use graphem::linalg::{Mat, Vector};
use graphem::mimo::{
    build_observation_matrix, channel_block_map, channel_to_state, state_to_channel, track_and_ber, CMat, CVector,
    MimoConfig, QamConstellation,
};
use graphem::ssm::kalman_step;
use num_complex::Complex64;
use rand::Rng;

fn random_complex(n: usize, m: usize, g: &mut impl Rng) -> CMat {
    CMat::from_fn(n, m, |_, _| Complex64::new(g.random_range(-1.0..1.0), g.random_range(-1.0..1.0)))
}

fn stacked(z: &[CVector]) -> Vector {
    let l = z[0].len();
    let mut out = Vector::zeros(2 * l * z.len());
    for (i, zi) in z.iter().enumerate() {
        for r in 0..l {
            out[2 * l * i + r] = zi[r].re;
            out[2 * l * i + l + r] = zi[r].im;
        }
    }
    out
}

#[test]
fn scalar_embeddings() {
    let one = build_observation_matrix(&[CVector::from_element(1, Complex64::new(1.0, 0.0))], 1).unwrap();
    assert_eq!(one, Mat::identity(2, 2));
    let i = build_observation_matrix(&[CVector::from_element(1, Complex64::new(0.0, 1.0))], 1).unwrap();
    assert_eq!(i, Mat::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]));
}

#[test]
fn observation_matrix_matches_complex_product() {
    let mut g = rng(1);
    for _ in 0..100 {
        let c = random_complex(2, 2, &mut g);
        let pilots: Vec<CVector> = (0..3).map(|_| random_complex(2, 1, &mut g).column(0).into_owned()).collect();
        let h = build_observation_matrix(&pilots, 2).unwrap();
        let z: Vec<CVector> = pilots.iter().map(|p| &c * p).collect();
        assert!((h * channel_to_state(&c) - stacked(&z)).amax() <= 1e-12);
    }
    assert!(build_observation_matrix(&[CVector::zeros(3)], 2).is_err());
}

#[test]
fn state_round_trip() {
    let mut g = rng(2);
    let c = random_complex(3, 3, &mut g);
    assert_eq!(state_to_channel(&channel_to_state(&c), 3), c);
}

#[test]
fn constellations() {
    let q = QamConstellation::new(64).unwrap();
    assert_eq!(q.order(), 64);
    let energy = q.points.iter().map(|p| p.norm_sqr()).sum::<f64>() / 64.0;
    assert!((energy - 1.0).abs() < 1e-12);
    let mut labels = q.labels.clone();
    labels.sort();
    labels.dedup();
    assert_eq!(labels.len(), 64);
    // neighbours on the grid differ in exactly one bit
    let side = q.side();
    for ix in 0..side {
        for iy in 0..side {
            let here = q.labels[ix * side + iy];
            if ix + 1 < side {
                assert_eq!((here ^ q.labels[(ix + 1) * side + iy]).count_ones(), 1);
            }
            if iy + 1 < side {
                assert_eq!((here ^ q.labels[ix * side + iy + 1]).count_ones(), 1);
            }
        }
    }
    for idx in 0..64 {
        assert_eq!(q.nearest(q.points[idx]), idx);
    }
    for bad in [0, 2, 8, 32, 48] {
        assert!(QamConstellation::new(bad).is_err());
    }
}

#[test]
fn random_guess_ber_is_one_half() {
    let q = QamConstellation::new(64).unwrap();
    let mut g = rng(3);
    let (mut errors, mut bits) = (0u64, 0u64);
    for _ in 0..200_000 {
        let a = q.random_index(&mut g);
        let b = q.random_index(&mut g);
        errors += (q.labels[a] ^ q.labels[b]).count_ones() as u64;
        bits += 6;
    }
    let ber = errors as f64 / bits as f64;
    assert!((ber - 0.5).abs() < 0.01, "{ber}");
}

#[test]
fn block_map_partitions_entries() {
    let one = channel_block_map(1).unwrap();
    assert_eq!(one.blocks(), &[vec![(0, 0), (1, 0), (0, 1), (1, 1)]]);
    for l in 1..=4 {
        let map = channel_block_map(l).unwrap();
        let n = 2 * l * l;
        let mut seen = vec![false; n * n];
        for block in map.blocks() {
            for &(i, j) in block {
                assert!(!seen[i + j * n]);
                seen[i + j * n] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
    }
    // 1-based (1,2),(5,2),(1,6),(5,6) for L = 2
    let two = channel_block_map(2).unwrap();
    assert!(two.blocks().contains(&vec![(0, 1), (4, 1), (0, 5), (4, 5)]));
}

#[test]
fn real_filter_matches_complex_filter() {
    let mut g = rng(4);
    let l = 2;
    let a_c = random_complex(4, 4, &mut g) * Complex64::new(0.4, 0.0);
    // real embedding of x ↦ A_c x on [Re x; Im x]
    let a = Mat::from_fn(8, 8, |i, j| {
        let (bi, bj) = (i / 4, j / 4);
        let v = a_c[(i % 4, j % 4)];
        match (bi, bj) {
            (0, 0) | (1, 1) => v.re,
            (0, 1) => -v.im,
            _ => v.im,
        }
    });
    let (sq, sr) = (0.2f64, 0.3f64);
    let q = Mat::identity(8, 8) * sq * sq;
    let r = Mat::identity(8, 8) * sr * sr;
    let mut mean = Vector::zeros(8);
    let mut cov = Mat::identity(8, 8);
    let mut cplx = ComplexKalman {
        mean: CVector::zeros(4),
        cov: CMat::identity(4, 4) * Complex64::new(2.0, 0.0),
    };
    for k in 1..=10 {
        let pilots: Vec<CVector> = (0..2).map(|_| random_complex(2, 1, &mut g).column(0).into_owned()).collect();
        let h = build_observation_matrix(&pilots, l).unwrap();
        let y = Vector::from_fn(8, |_, _| g.random_range(-1.0..1.0));
        let step = kalman_step(&a, &q, &h, &r, &mean, &cov, &y, k).unwrap();
        mean = step.mean;
        cov = step.cov;
        let z = CVector::from_fn(4, |i, _| {
            let (p, rr) = (i / 2, i % 2);
            Complex64::new(y[4 * p + rr], y[4 * p + 2 + rr])
        });
        cplx.step(&a_c, &complex_pilot_matrix(&pilots, l), 2.0 * sq * sq, 2.0 * sr * sr, &z);
        let from_real = state_to_channel(&mean, l);
        let from_cplx = CMat::from_column_slice(2, 2, cplx.mean.as_slice());
        assert!((from_real - from_cplx).iter().all(|d| d.norm() < 1e-9), "step {k}");
    }
}

fn small_cfg() -> MimoConfig {
    MimoConfig {
        k_test: 60,
        symbols_per_step: 50,
        ..MimoConfig::default()
    }
}

#[test]
fn clean_channel_is_decoded_almost_perfectly() {
    let cfg = MimoConfig {
        sigma_q: 1e-3,
        sigma_r: 1e-3,
        eb_n0_db: 60.0,
        ..small_cfg()
    };
    let a = channel_e_matrix();
    let res = track_and_ber(&a, &a, &cfg, 5).unwrap();
    assert!(res.ber <= 1e-4, "{}", res.ber);
    assert_eq!(res.bits, 60 * 50 * 4 * 6);
}

#[test]
fn ber_falls_with_snr() {
    let a = channel_e_matrix();
    let mut prev = f64::INFINITY;
    for db in [5.0, 15.0, 25.0] {
        let cfg = MimoConfig {
            eb_n0_db: db,
            sigma_q: 0.05,
            sigma_r: 0.05,
            ..small_cfg()
        };
        let ber: f64 = (0..3).map(|s| track_and_ber(&a, &a, &cfg, 10 + s).unwrap().ber).sum::<f64>() / 3.0;
        assert!(ber <= prev, "{db} dB: {ber} > {prev}");
        prev = ber;
    }
}

#[test]
fn noise_variance_from_eb_n0() {
    let cfg = MimoConfig::default();
    assert!((cfg.noise_variance() - 1.0 / (6.0 * 10f64.powf(3.8))).abs() < 1e-18);
    assert_eq!(cfg.state_dim(), 32);
}

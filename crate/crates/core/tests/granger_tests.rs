mod common;

use common::{planted_lag_pair, white_noise_pair};
use graphem::granger::{granger_graph, granger_p_value, GrangerConfig, GrangerMode};
use graphem::linalg::{Mat, Vector};

fn cfg(mode: GrangerMode) -> GrangerConfig {
    GrangerConfig {
        mode,
        ..GrangerConfig::default()
    }
}

#[test]
fn null_false_positive_rate_matches_alpha() {
    let c = cfg(GrangerMode::Pairwise);
    let mut hits = 0;
    let trials = 200;
    for seed in 0..100 {
        let adj = granger_graph(&white_noise_pair(1000, seed), &c).unwrap();
        hits += adj[(0, 1)] as usize + adj[(1, 0)] as usize;
    }
    let expected = trials as f64 * c.alpha;
    let sd = (trials as f64 * c.alpha * (1.0 - c.alpha)).sqrt();
    assert!((hits as f64 - expected).abs() <= 3.0 * sd, "{hits} false positives of {trials}");
}

#[test]
fn planted_lag_is_detected_in_the_right_direction() {
    for mode in [GrangerMode::Pairwise, GrangerMode::Conditional] {
        let mut good = 0;
        for seed in 0..100 {
            let adj = granger_graph(&planted_lag_pair(1000, 500 + seed), &cfg(mode)).unwrap();
            if adj[(1, 0)] && !adj[(0, 1)] {
                good += 1;
            }
        }
        assert!(good >= 95, "{mode}: {good}/100");
    }
}

#[test]
fn modes_agree_for_two_series() {
    for seed in 0..10 {
        let obs = planted_lag_pair(300, seed);
        let series = Mat::from_fn(300, 2, |t, s| obs[t][s]);
        for (i, j) in [(0, 1), (1, 0)] {
            let p1 = granger_p_value(&series, i, j, &cfg(GrangerMode::Pairwise)).unwrap();
            let p2 = granger_p_value(&series, i, j, &cfg(GrangerMode::Conditional)).unwrap();
            assert_eq!(p1, p2);
        }
    }
}

#[test]
fn output_is_deterministic_and_has_true_diagonal() {
    let obs: Vec<Vector> = white_noise_pair(400, 3)
        .into_iter()
        .zip(white_noise_pair(400, 4))
        .map(|(a, b)| Vector::from_vec(vec![a[0], a[1], b[0]]))
        .collect();
    let c = cfg(GrangerMode::Conditional);
    let g1 = granger_graph(&obs, &c).unwrap();
    assert_eq!(g1, granger_graph(&obs, &c).unwrap());
    assert!((0..3).all(|i| g1[(i, i)]));
}

#[test]
fn config_is_validated() {
    let bad = GrangerConfig {
        alpha: 1.5,
        ..GrangerConfig::default()
    };
    assert!(granger_graph(&white_noise_pair(100, 1), &bad).is_err());
    let bad = GrangerConfig {
        ar_order: 0,
        ..GrangerConfig::default()
    };
    assert!(bad.validate().is_err());
}

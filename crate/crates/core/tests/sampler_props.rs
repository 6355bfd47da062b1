mod common;

use common::{fourth_central_moment, moment_grid, params};
use proptest::prelude::*;
use qndsim::protocol;
use qndsim::sampler::{self, assign_m, estimate, misassignment_probability, sample_record};

fn sample_variance(ys: &[f64]) -> f64 {
    let n = ys.len() as f64;
    let mean = ys.iter().sum::<f64>() / n;
    ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

/// Each grid point is checked against its own 99% interval; 48 independent
/// checks at 1% each leave room for a few misses, and more than 3 has
/// probability ≈ 0.002 when the sampler is correct.
#[test]
fn empirical_variance_inside_kurtosis_corrected_interval() {
    let shots = 100_000;
    let z99 = 2.575_829_303_548_901;
    let mut misses = Vec::new();
    for (i, (a, n, g)) in moment_grid().into_iter().enumerate() {
        let p = params(a, g, n);
        let rec = sample_record(&p, shots, 1000 + i as u64).unwrap();
        let ys: Vec<f64> = rec.shots.iter().map(|s| s.y).collect();
        let s2 = sample_variance(&ys);
        let var = protocol::var_y(&p);
        let k = shots as f64;
        let mu4 = fourth_central_moment(a, n, p.squeeze_r);
        let sd = ((mu4 - var * var * (k - 3.0) / (k - 1.0)) / k).sqrt();
        let z = (s2 - var) / sd;
        if z.abs() > z99 {
            misses.push((a, n, g, z));
        }
    }
    assert!(misses.len() <= 3, "{misses:?}");
}

#[test]
fn empirical_misassignment_matches_erfc_prediction() {
    let shots = 200_000;
    for (k, (a, g, n)) in [(0.5, 4.0, 1.0), (1.0, 2.0, 0.5), (0.5, 16.0, 3.0), (1.0, 9.0, 2.0)].into_iter().enumerate()
    {
        let p = params(a, g, n);
        let want = misassignment_probability(&p);
        assert!(want >= 1e-3);
        let rec = sample_record(&p, shots, 77 + k as u64).unwrap();
        let got = estimate(&rec).unwrap().misassign_rate;
        let se = (want * (1.0 - want) / shots as f64).sqrt();
        assert!((got - want).abs() <= 3.0 * se, "{a} {g} {n}: {got} vs {want} (se {se})");
    }
}

#[test]
fn reported_stderr_matches_replication_spread() {
    let p = params(1.0, 50.0, 1.0);
    let shots = 2000;
    let reps: Vec<f64> = (0..200u64).map(|s| estimate(&sample_record(&p, shots, s).unwrap()).unwrap().n_hat).collect();
    let spread = sample_variance(&reps).sqrt();
    let want = protocol::var_y(&p).sqrt() / (2.0 * p.pulse_area * (shots as f64).sqrt());
    assert!((spread / want - 1.0).abs() <= 0.15, "{spread} vs {want}");
}

#[test]
fn estimate_converges_with_shots() {
    let p = params(0.5, 10.0, 3.0);
    let mut last = f64::INFINITY;
    for (i, shots) in [10_000, 100_000, 1_000_000].into_iter().enumerate() {
        let r = estimate(&sample_record(&p, shots, 500 + i as u64).unwrap()).unwrap();
        assert!((r.n_hat - 3.0).abs() <= 4.0 * r.n_stderr, "{shots}: {}", r.n_hat);
        // tenfold shots shrink the standard error by about √10
        assert!((last / r.n_stderr - 10f64.sqrt()).abs() < 0.1 || last.is_infinite());
        last = r.n_stderr;
    }
}

#[test]
fn histogram_estimator_agrees_when_sectors_resolve() {
    let p = params(1.0, 50.0, 1.0);
    let rec = sample_record(&p, 100_000, 9).unwrap();
    let h = sampler::assignment_histogram(&rec).unwrap();
    let direct = estimate(&rec).unwrap();
    assert!((h.n_hat - direct.n_hat).abs() < 1e-3);
    let probs = h.probabilities();
    assert!((probs[0] - 0.5).abs() < 0.01 && (probs[1] - 0.25).abs() < 0.01);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn same_seed_same_record(seed in any::<u64>(), shots in 1usize..10_000, n in 0.0f64..3.0) {
        let p = params(0.5, 10.0, n);
        let a = sample_record(&p, shots, seed).unwrap();
        let b = sample_record(&p, shots, seed).unwrap();
        prop_assert_eq!(&a.shots, &b.shots);
        prop_assert_eq!(a.shots.len(), shots);
    }

    #[test]
    fn assignment_picks_nearest_sector(m in 0u64..200, off in -0.49f64..0.49, a in 0.1f64..3.0) {
        let p = params(a, 10.0, 1.0);
        prop_assert_eq!(assign_m(2.0 * a * (m as f64 + off), &p), m);
    }
}

use approx::assert_abs_diff_eq;
use ndarray::s;
use num_complex::Complex64 as C64;
use proptest::prelude::*;
use qndsim::fock::{DensityOperator, FockOperator, Ket, Subsystem, DEFAULT_GUARD_BAND};
use qndsim::linalg;

/// Amplitudes `e^{−|α|²/2} αⁿ/√n!` summed directly.
fn coherent_series(alpha: C64, dim: usize) -> Ket {
    let mut amps = ndarray::Array1::zeros(dim);
    let mut term = C64::new((-0.5 * alpha.norm_sqr()).exp(), 0.0);
    for n in 0..dim {
        amps[n] = term;
        term = term * alpha / ((n + 1) as f64).sqrt();
    }
    Ket::from_amplitudes(amps).unwrap()
}

#[test]
fn coherent_state_matches_series_oracle() {
    let dim = 40;
    let alpha = C64::new(0.0, 1.0);
    let d = FockOperator::displacement(alpha, dim).unwrap();
    let psi = d.apply(&Ket::vacuum(dim).unwrap()).unwrap();
    let oracle = coherent_series(alpha, dim);
    let diff = (psi.amplitudes() - oracle.amplitudes()).iter().map(|z| z.norm()).fold(0.0, f64::max);
    assert!(diff < 1e-12, "{diff}");
    let a = FockOperator::annihilation(dim).unwrap();
    assert_abs_diff_eq!(psi.expect(&a).unwrap().im, 1.0, epsilon = 1e-12);
    assert_abs_diff_eq!(psi.expect(&a).unwrap().re, 0.0, epsilon = 1e-12);
    assert_abs_diff_eq!(psi.quadrature_moments().mean_n, 1.0, epsilon = 1e-12);
    // ⟨Y⟩ = 2 Im α
    let rho = psi.to_density();
    assert_abs_diff_eq!(rho.expectation(&FockOperator::quadrature_y(dim).unwrap()).unwrap().re, 2.0, epsilon = 1e-12);
}

#[test]
fn squeezed_vacuum_at_gain_fifty() {
    let r = 0.5 * 50f64.ln();
    let m = Ket::vacuum(600).unwrap().squeezed(r).unwrap().quadrature_moments();
    assert_abs_diff_eq!(m.var_y, 0.02, epsilon = 1e-6);
    assert_abs_diff_eq!(m.mean_y, 0.0, epsilon = 1e-12);
}

#[test]
fn thermal_tensor_vacuum_is_diagonal_product() {
    let th = DensityOperator::thermal(1.0, 34).unwrap();
    let st = th.tensor(&DensityOperator::vacuum(4).unwrap());
    let dense = st.to_dense().unwrap();
    for (n, pn) in th.diagonal().iter().enumerate() {
        assert_abs_diff_eq!(dense.mat[[4 * n, 4 * n]].re, *pn, epsilon = 1e-15);
    }
    assert_abs_diff_eq!(th.diagonal()[0], 0.5, epsilon = 1e-10);
    assert!(st.max_phonon_coherence() == 0.0);
    assert_eq!(st.partial_trace(Subsystem::Field).unwrap(), DensityOperator::vacuum(4).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn displacement_is_unitary_within_headroom(dim in 20usize..60, frac in 0.0f64..1.0, phase in 0.0f64..std::f64::consts::TAU) {
        let amp = (frac * dim as f64 / 4.0).sqrt();
        let d = FockOperator::displacement(C64::from_polar(amp, phase), dim).unwrap();
        prop_assert!(d.unitarity_defect(DEFAULT_GUARD_BAND) <= 1e-10);
    }

    #[test]
    fn squeeze_is_unitary_within_headroom(dim in 16usize..64, frac in -1.0f64..1.0) {
        let r_max = 0.5 * (dim as f64 / 8.0).ln();
        let s = FockOperator::squeeze(frac * r_max, dim).unwrap();
        prop_assert!(s.unitarity_defect(DEFAULT_GUARD_BAND) <= 1e-10);
    }

    #[test]
    fn canonical_commutator(dim in 2usize..40) {
        let a = FockOperator::annihilation(dim).unwrap();
        let c = a.commutator(&a.dagger()).unwrap();
        let k = dim - 1;
        let diff = &c.matrix().slice(s![..k, ..k]) - &linalg::identity(k);
        prop_assert!(linalg::max_abs(diff.view()) <= 1e-12);
    }

    #[test]
    fn maps_preserve_density_invariants(n in 0.0f64..2.0, re in -1.0f64..1.0, im in -1.0f64..1.0) {
        let th = DensityOperator::thermal(n, qndsim::fock::thermal_dim(n, 1e-10)).unwrap();
        th.validate().unwrap();
        let field = Ket::vacuum(30).unwrap().displaced(C64::new(re, im)).unwrap().to_density();
        field.validate().unwrap();
        let small = DensityOperator::thermal(n.min(0.3), 16).unwrap();
        let joint = small.tensor(&field);
        joint.to_dense().unwrap().as_density().unwrap();
        for keep in [Subsystem::Phonon, Subsystem::Field] {
            joint.partial_trace(keep).unwrap().validate().unwrap();
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10))]

    /// `D(α) S(r)|0⟩`: mean set by α, variances set by r alone.
    #[test]
    fn displaced_squeezed_vacuum_moments(re in -2.0f64..2.0, im in -2.0f64..2.0, r in -0.6f64..0.6) {
        let dim = 120;
        let alpha = C64::new(re, im);
        let d = FockOperator::displacement(alpha, dim).unwrap();
        let sq = FockOperator::squeeze(r, dim).unwrap();
        let psi = d.compose(&sq).unwrap().apply(&Ket::vacuum(dim).unwrap()).unwrap();
        let a = FockOperator::annihilation(dim).unwrap();
        let mean_a = psi.expect(&a).unwrap();
        prop_assert!((mean_a - alpha).norm() < 1e-8);
        let m = psi.quadrature_moments();
        prop_assert!((m.var_x - (2.0 * r).exp()).abs() < 1e-8);
        prop_assert!((m.var_y - (-2.0 * r).exp()).abs() < 1e-8);
    }
}

//! The pulsed readout protocol: thermal phonons ⊗ field vacuum, a squeezing
//! pulse, then a phonon-conditioned displacement of the field.
//!
//! After the two pulses phonon sector `n` carries the field state
//! `D(i n A) S(r) |0⟩`, with populations untouched. Closed-form moments live
//! next to the matrix path that is used to check them.

use ndarray::{s, Array2};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fock::{
    self, BlockState, CompositeState, DenseComposite, DensityOperator, DisplacedKet, FockOperator, Ket, PhononBlock,
    QuadratureMoments, Subsystem,
};
use crate::linalg;

/// Reduced Planck constant, J·s (CODATA 2018, exact).
pub const HBAR: f64 = 1.054_571_817e-34;
/// Boltzmann constant, J/K (CODATA 2018, exact).
pub const K_B: f64 = 1.380_649e-23;

/// Probability below which a phonon sector counts as unpopulated.
pub const SUPPORT_THRESHOLD: f64 = 1e-10;

/// Dimensionless protocol parameters plus truncations.
///
/// Only two pulse combinations matter: `pulse_area` (the time integral of
/// the coupling drive) and `squeeze_r` (squeezing rate × squeezing time).
/// For a χ(2) medium pumped at amplitude β the rate is βχ/2; no relation
/// between χ and circuit parameters is assumed here.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolParams {
    pub pulse_area: f64,
    pub squeeze_r: f64,
    pub thermal_n: f64,
    /// Mechanical angular frequency, rad/s.
    pub nu: f64,
    pub phonon_dim: usize,
    pub field_dim: usize,
}

/// Field truncation used when none is given: `max(32, ⌈12 e^{2r}⌉)`.
pub fn default_field_dim(squeeze_r: f64) -> usize {
    ((12.0 * (2.0 * squeeze_r).exp()).ceil() as usize).max(32)
}

impl ProtocolParams {
    /// Parameters with truncations chosen by the tail and headroom rules.
    pub fn new(pulse_area: f64, squeeze_r: f64, thermal_n: f64, nu: f64) -> Result<Self> {
        let p = Self {
            pulse_area,
            squeeze_r,
            thermal_n,
            nu,
            phonon_dim: fock::thermal_dim(thermal_n.max(0.0), fock::DEFAULT_TAIL),
            field_dim: default_field_dim(squeeze_r.abs()),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_dims(mut self, phonon_dim: usize, field_dim: usize) -> Result<Self> {
        self.phonon_dim = phonon_dim;
        self.field_dim = field_dim;
        self.validate()?;
        Ok(self)
    }

    /// Squeezing given as `e^{2r}`.
    pub fn squeeze_from_gain(gain: f64) -> Result<f64> {
        if !(gain >= 1.0) || !gain.is_finite() {
            return Err(invalid("squeeze_gain", format!("e^(2r) must be finite and >= 1, got {gain}")));
        }
        Ok(0.5 * gain.ln())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pulse_area > 0.0) || !self.pulse_area.is_finite() {
            return Err(invalid("pulse_area", format!("must be finite and > 0, got {}", self.pulse_area)));
        }
        if !(self.squeeze_r >= 0.0) || !self.squeeze_r.is_finite() {
            return Err(invalid("squeeze_r", format!("must be finite and >= 0, got {}", self.squeeze_r)));
        }
        if !(self.thermal_n >= 0.0) || !self.thermal_n.is_finite() {
            return Err(invalid("thermal_n", format!("must be finite and >= 0, got {}", self.thermal_n)));
        }
        if !(self.nu > 0.0) || !self.nu.is_finite() {
            return Err(invalid("nu", format!("must be finite and > 0, got {}", self.nu)));
        }
        fock::thermal_distribution(self.thermal_n, self.phonon_dim)?;
        if self.field_dim < 2 {
            return Err(Error::InvalidDimension { dim: self.field_dim, min: 2 });
        }
        fock::check_squeeze_headroom(self.squeeze_r, self.field_dim)
    }

    /// Thermal populations on the phonon truncation.
    pub fn phonon_distribution(&self) -> Result<Vec<f64>> {
        fock::thermal_distribution(self.thermal_n, self.phonon_dim)
    }

    /// Field displacement of phonon sector `n`: `i n A`.
    pub fn block_displacement(&self, n: usize) -> C64 {
        C64::new(0.0, n as f64 * self.pulse_area)
    }
}

/// `thermal(N) ⊗ |0⟩⟨0|` in block form.
pub fn initial_state(p: &ProtocolParams) -> Result<CompositeState> {
    p.validate()?;
    let vac = Ket::vacuum(p.field_dim)?;
    let blocks = p
        .phonon_distribution()?
        .into_iter()
        .enumerate()
        .filter(|(_, w)| *w > 0.0)
        .map(|(n, weight)| PhononBlock { n, weight, field: DisplacedKet::new(C64::new(0.0, 0.0), vac.clone()) })
        .collect();
    Ok(CompositeState::Blocks(BlockState { phonon_dim: p.phonon_dim, field_dim: p.field_dim, blocks }))
}

/// `thermal(N) ⊗ |0⟩⟨0|` as a full matrix.
pub fn initial_state_dense(p: &ProtocolParams) -> Result<CompositeState> {
    p.validate()?;
    let phonons = DensityOperator::thermal(p.thermal_n, p.phonon_dim)?;
    Ok(phonons.tensor(&DensityOperator::vacuum(p.field_dim)?))
}

/// Squeezing pulse then phonon-conditioned displacement.
///
/// Block input is evolved sector by sector (displacements stay exact); dense
/// input is multiplied by the truncated propagator, which requires headroom
/// for the largest sector displacement.
pub fn evolve_pulse(rho0: &CompositeState, p: &ProtocolParams) -> Result<CompositeState> {
    p.validate()?;
    let (db, da) = rho0.dims();
    if da != p.field_dim {
        return Err(Error::DimensionMismatch { expected: p.field_dim, got: da });
    }
    match rho0 {
        CompositeState::Blocks(b) => {
            let mut cache: Option<(Ket, DisplacedKet)> = None;
            let mut blocks = Vec::with_capacity(b.blocks.len());
            for blk in &b.blocks {
                // every sector usually starts from the same field ket; squeeze it once
                let base = match &cache {
                    Some((ket, out)) if *ket == blk.field.ket => out.clone(),
                    _ => {
                        let out = DisplacedKet::new(C64::new(0.0, 0.0), blk.field.ket.clone()).squeezed(p.squeeze_r)?;
                        cache = Some((blk.field.ket.clone(), out.clone()));
                        out
                    }
                };
                // S D(β) = D(β cosh r + β* sinh r) S
                let beta = blk.field.alpha;
                let squeezed = base.displaced(beta * p.squeeze_r.cosh() + beta.conj() * p.squeeze_r.sinh());
                blocks.push(PhononBlock {
                    n: blk.n,
                    weight: blk.weight,
                    field: squeezed.displaced(p.block_displacement(blk.n)),
                });
            }
            Ok(CompositeState::Blocks(BlockState { phonon_dim: db, field_dim: da, blocks }))
        }
        CompositeState::Dense(d) => {
            let coherence = rho0.max_phonon_coherence();
            if coherence > 1e-12 {
                return Err(invalid("rho0", format!("has phonon-number coherence {coherence:e}")));
            }
            let u = dense_propagator(p, db)?;
            let mat = u.dot(&d.mat).dot(&linalg::dagger(u.view()));
            Ok(CompositeState::Dense(DenseComposite { phonon_dim: db, field_dim: da, mat }))
        }
    }
}

/// `Σ_n |n⟩⟨n| ⊗ D(i n A) S(r)` on the truncated product space.
pub fn dense_propagator(p: &ProtocolParams, phonon_dim: usize) -> Result<Array2<C64>> {
    let da = p.field_dim;
    let sq = FockOperator::squeeze(p.squeeze_r, da)?;
    let mut u = Array2::zeros((phonon_dim * da, phonon_dim * da));
    for n in 0..phonon_dim {
        let d = FockOperator::displacement(p.block_displacement(n), da)?;
        let blk = d.compose(&sq)?;
        u.slice_mut(s![n * da..(n + 1) * da, n * da..(n + 1) * da]).assign(&blk.matrix());
    }
    Ok(u)
}

/// Field state of one phonon sector.
#[derive(Clone, Debug, PartialEq)]
pub enum FieldState {
    Pure(DisplacedKet),
    Mixed(DensityOperator),
}

/// Normalised field state given phonon number `m`, with its probability.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionedFieldState {
    pub m: usize,
    pub weight: f64,
    pub state: FieldState,
}

impl ConditionedFieldState {
    pub fn moments(&self) -> Result<QuadratureMoments> {
        match &self.state {
            FieldState::Pure(k) => Ok(k.quadrature_moments()),
            FieldState::Mixed(rho) => rho.quadrature_moments(),
        }
    }

    /// The state as a density matrix on the field truncation.
    pub fn density(&self) -> Result<DensityOperator> {
        match &self.state {
            FieldState::Pure(k) => Ok(k.materialize()?.to_density()),
            FieldState::Mixed(rho) => Ok(rho.clone()),
        }
    }
}

/// `Tr_b{Π_m ρ Π_m}` normalised.
pub fn conditioned_state(rho: &CompositeState, m: usize) -> Result<ConditionedFieldState> {
    let (db, da) = rho.dims();
    if m >= db {
        return Err(Error::OutOfSupport { m, weight: 0.0 });
    }
    match rho {
        CompositeState::Blocks(b) => {
            let blk = b.block(m).filter(|blk| blk.weight > SUPPORT_THRESHOLD);
            let blk = blk.ok_or(Error::OutOfSupport { m, weight: b.block(m).map_or(0.0, |x| x.weight) })?;
            Ok(ConditionedFieldState { m, weight: blk.weight, state: FieldState::Pure(blk.field.clone()) })
        }
        CompositeState::Dense(d) => {
            let sub = d.mat.slice(s![m * da..(m + 1) * da, m * da..(m + 1) * da]).to_owned();
            let weight = linalg::trace(sub.view()).re;
            if weight <= SUPPORT_THRESHOLD {
                return Err(Error::OutOfSupport { m, weight });
            }
            let rho = DensityOperator::from_matrix_unchecked(sub.mapv(|z| z / weight))?;
            Ok(ConditionedFieldState { m, weight, state: FieldState::Mixed(rho) })
        }
    }
}

/// Moments of the field after tracing out the phonons.
pub fn field_moments(rho: &CompositeState) -> Result<QuadratureMoments> {
    match rho {
        CompositeState::Dense(_) => rho.partial_trace(Subsystem::Field)?.quadrature_moments(),
        CompositeState::Blocks(b) => {
            let (mut w, mut mx, mut my, mut x2, mut y2, mut mn) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
            for blk in &b.blocks {
                let m = blk.field.quadrature_moments();
                w += blk.weight;
                mx += blk.weight * m.mean_x;
                my += blk.weight * m.mean_y;
                x2 += blk.weight * (m.var_x + m.mean_x * m.mean_x);
                y2 += blk.weight * (m.var_y + m.mean_y * m.mean_y);
                mn += blk.weight * m.mean_n;
            }
            let (mx, my) = (mx / w, my / w);
            Ok(QuadratureMoments {
                mean_x: mx,
                mean_y: my,
                var_x: x2 / w - mx * mx,
                var_y: y2 / w - my * my,
                mean_n: mn / w,
            })
        }
    }
}

/// `⟨Y⟩ = 2AN`.
pub fn mean_y(p: &ProtocolParams) -> f64 {
    2.0 * p.pulse_area * p.thermal_n
}

/// `⟨X⟩ = 0`.
pub fn mean_x(_p: &ProtocolParams) -> f64 {
    0.0
}

/// `Var(Y) = 4A²N(N+1) + e^{−2r}`.
pub fn var_y(p: &ProtocolParams) -> f64 {
    let a = p.pulse_area;
    let n = p.thermal_n;
    4.0 * a * a * n * (n + 1.0) + (-2.0 * p.squeeze_r).exp()
}

/// `√Var(Y) / ⟨Y⟩`; undefined at `N = 0`.
pub fn relative_uncertainty(p: &ProtocolParams) -> Result<f64> {
    if p.thermal_n <= 0.0 {
        return Err(invalid("thermal_n", "relative uncertainty needs N > 0"));
    }
    Ok(var_y(p).sqrt() / mean_y(p))
}

/// Large-squeezing limit of [`relative_uncertainty`]: `√(1 + 1/N)`.
pub fn relative_uncertainty_limit(thermal_n: f64) -> Result<f64> {
    if !(thermal_n > 0.0) {
        return Err(invalid("thermal_n", "relative uncertainty needs N > 0"));
    }
    Ok((1.0 + 1.0 / thermal_n).sqrt())
}

/// Squeezing needed for neighbouring sectors to separate: `−ln √(2A)`.
pub fn distinguishability_threshold(pulse_area: f64) -> Result<f64> {
    if !(pulse_area > 0.0) {
        return Err(invalid("pulse_area", "must be > 0"));
    }
    Ok(-0.5 * (2.0 * pulse_area).ln())
}

pub fn is_distinguishable(p: &ProtocolParams) -> Result<bool> {
    Ok(p.squeeze_r > distinguishability_threshold(p.pulse_area)?)
}

/// `T = ħν / (k_B ln(1 + 1/N))` in kelvin.
pub fn temperature_from_n(thermal_n: f64, nu: f64) -> Result<f64> {
    if !(thermal_n > 0.0) || !thermal_n.is_finite() {
        return Err(invalid("thermal_n", format!("must be finite and > 0, got {thermal_n}")));
    }
    if !(nu > 0.0) || !nu.is_finite() {
        return Err(invalid("nu", format!("must be finite and > 0, got {nu}")));
    }
    Ok(HBAR * nu / (K_B * (1.0 / thermal_n).ln_1p()))
}

/// `N = 1 / (exp(ħν / k_B T) − 1)`.
pub fn n_from_temperature(kelvin: f64, nu: f64) -> Result<f64> {
    if !(kelvin > 0.0) || !kelvin.is_finite() {
        return Err(invalid("temperature", format!("must be finite and > 0, got {kelvin}")));
    }
    if !(nu > 0.0) || !nu.is_finite() {
        return Err(invalid("nu", format!("must be finite and > 0, got {nu}")));
    }
    Ok(1.0 / (HBAR * nu / (K_B * kelvin)).exp_m1())
}

/// `dT/dN` at `N`, used for delta-method error bars.
pub fn temperature_slope(thermal_n: f64, nu: f64) -> Result<f64> {
    let l = (1.0 / thermal_n).ln_1p();
    let t = temperature_from_n(thermal_n, nu)?;
    Ok(t / (l * thermal_n * (thermal_n + 1.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    const GHZ: f64 = 2.0 * std::f64::consts::PI * 1e9;

    fn params(a: f64, gain: f64, n: f64) -> ProtocolParams {
        ProtocolParams::new(a, ProtocolParams::squeeze_from_gain(gain).unwrap(), n, GHZ).unwrap()
    }

    #[test]
    fn closed_forms() {
        let p = params(1.0, 50.0, 1.0);
        assert_abs_diff_eq!(mean_y(&p), 2.0);
        assert_abs_diff_eq!(var_y(&p), 8.02, epsilon = 1e-12);
        assert_abs_diff_eq!(relative_uncertainty(&p).unwrap(), 1.415_980_225_850_63, epsilon = 1e-12);
        assert!(is_distinguishable(&p).unwrap());

        assert_abs_diff_eq!(mean_y(&params(1.0, 1.0, 0.0)), 0.0);
        assert_abs_diff_eq!(var_y(&params(1.0, 1.0, 0.0)), 1.0);
        let q = params(0.5, 1.0, 2.0);
        assert_abs_diff_eq!(mean_y(&q), 2.0);
        assert_eq!(mean_x(&q), 0.0);

        let mut big = params(2.0, 1.0, 1.0);
        big.squeeze_r = 40.0;
        assert_abs_diff_eq!(var_y(&big), 32.0, epsilon = 1e-12);
        assert!(relative_uncertainty(&params(1.0, 1.0, 0.0)).is_err());
    }

    #[test]
    fn relative_uncertainty_limits() {
        let mut p = params(1.0, 1.0, 1.0);
        p.squeeze_r = 40.0;
        assert_abs_diff_eq!(relative_uncertainty(&p).unwrap(), 2f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(relative_uncertainty_limit(1.0).unwrap(), 2f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(relative_uncertainty_limit(1e12).unwrap(), 1.0, epsilon = 1e-11);
        // independent of pulse area at large squeezing
        p.pulse_area = 7.0;
        assert_abs_diff_eq!(relative_uncertainty(&p).unwrap(), 2f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn thresholds() {
        assert_abs_diff_eq!(distinguishability_threshold(1.0).unwrap(), -0.346_573_590_279_973, epsilon = 1e-15);
        assert_eq!(distinguishability_threshold(0.5).unwrap(), 0.0);
        assert!(distinguishability_threshold(0.0).is_err());
    }

    #[test]
    fn temperature_spot_value_and_round_trip() {
        let t = temperature_from_n(1.0, GHZ).unwrap();
        assert_relative_eq!(t, 0.069_238_441_777_237_8, max_relative = 1e-13);
        for n in [1e-3, 0.2, 1.0, 3.0, 250.0] {
            let back = n_from_temperature(temperature_from_n(n, GHZ).unwrap(), GHZ).unwrap();
            assert_relative_eq!(back, n, max_relative = 1e-12);
        }
        assert!(temperature_from_n(0.0, GHZ).is_err());
        assert!(n_from_temperature(-1.0, GHZ).is_err());
        assert!(temperature_from_n(1.0, 0.0).is_err());
    }

    #[test]
    fn temperature_slope_matches_finite_difference() {
        let n = 1.3;
        let h = 1e-6;
        let fd = (temperature_from_n(n + h, GHZ).unwrap() - temperature_from_n(n - h, GHZ).unwrap()) / (2.0 * h);
        assert_relative_eq!(temperature_slope(n, GHZ).unwrap(), fd, max_relative = 1e-7);
    }

    #[test]
    fn initial_state_marginals() {
        let p = params(1.0, 1.0, 1.0);
        let rho = initial_state(&p).unwrap();
        let pn = rho.phonon_distribution();
        assert_abs_diff_eq!(pn[0], 0.5, epsilon = 1e-10);
        assert_abs_diff_eq!(pn[1], 0.25, epsilon = 1e-10);
        let m = field_moments(&rho).unwrap();
        assert_abs_diff_eq!(m.mean_y, 0.0);
        assert_abs_diff_eq!(m.var_y, 1.0, epsilon = 1e-14);

        let p0 = params(1.0, 1.0, 0.0).with_dims(2, 8).unwrap();
        let d = initial_state_dense(&p0).unwrap().to_dense().unwrap();
        assert_eq!(d.mat[[0, 0]], C64::new(1.0, 0.0));
        assert_abs_diff_eq!(linalg::trace(d.mat.view()).re, 1.0);
    }

    #[test]
    fn pulse_examples() {
        let p = params(1.0, 1.0, 0.0);
        let out = evolve_pulse(&initial_state(&p).unwrap(), &p).unwrap();
        let c0 = conditioned_state(&out, 0).unwrap();
        assert_abs_diff_eq!(c0.moments().unwrap().mean_y, 0.0);

        // r = 0, n = 1: coherent |i⟩
        let p = params(1.0, 1.0, 1.0);
        let out = evolve_pulse(&initial_state(&p).unwrap(), &p).unwrap();
        let c1 = conditioned_state(&out, 1).unwrap();
        let m = c1.moments().unwrap();
        assert_abs_diff_eq!(m.mean_y, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.mean_n, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c1.weight, 0.25, epsilon = 1e-10);
        let c2 = conditioned_state(&out, 2).unwrap();
        assert_abs_diff_eq!(c2.moments().unwrap().mean_y, 4.0, epsilon = 1e-12);
        assert!(matches!(conditioned_state(&out, 200), Err(Error::OutOfSupport { .. })));
    }

    #[test]
    fn conditioned_state_at_fig_parameters() {
        let p = params(1.0, 50.0, 1.0);
        let out = evolve_pulse(&initial_state(&p).unwrap(), &p).unwrap();
        for m in 0..4 {
            let c = conditioned_state(&out, m).unwrap();
            let mom = c.moments().unwrap();
            assert_abs_diff_eq!(mom.mean_y, 2.0 * m as f64, epsilon = 1e-8);
            assert_abs_diff_eq!(mom.var_y, 0.02, epsilon = 1e-8);
        }
    }

    #[test]
    fn dense_path_agrees_with_block_path() {
        let p = params(0.25, 2.0, 0.1).with_dims(10, 40).unwrap();
        let blocks = evolve_pulse(&initial_state(&p).unwrap(), &p).unwrap();
        let dense = evolve_pulse(&initial_state_dense(&p).unwrap(), &p).unwrap();
        let b = blocks.to_dense().unwrap();
        let CompositeState::Dense(d) = &dense else { unreachable!() };
        let diff = linalg::max_abs((&b.mat - &d.mat).view());
        assert!(diff < 1e-10, "{diff}");
        d.as_density().unwrap();
        assert!(dense.max_phonon_coherence() < 1e-14);
        let cd = conditioned_state(&dense, 1).unwrap();
        let cb = conditioned_state(&blocks, 1).unwrap();
        assert_abs_diff_eq!(cd.weight, cb.weight, epsilon = 1e-12);
        let diff = linalg::max_abs((&cd.density().unwrap().matrix() - &cb.density().unwrap().matrix()).view());
        assert!(diff < 1e-10);
    }

    #[test]
    fn dense_path_refuses_missing_headroom() {
        let p = params(2.0, 2.0, 0.1).with_dims(10, 40).unwrap();
        assert!(matches!(evolve_pulse(&initial_state_dense(&p).unwrap(), &p), Err(Error::TruncationRisk { .. })));
    }

    #[test]
    fn validation() {
        assert!(ProtocolParams::new(0.0, 0.0, 1.0, 1.0).is_err());
        assert!(ProtocolParams::new(1.0, -0.1, 1.0, 1.0).is_err());
        assert!(ProtocolParams::new(1.0, 0.0, -1.0, 1.0).is_err());
        assert!(ProtocolParams::new(1.0, 0.0, 1.0, f64::NAN).is_err());
        assert!(params(1.0, 50.0, 1.0).with_dims(34, 100).is_err());
        assert!(params(1.0, 1.0, 1.0).with_dims(10, 100).is_err());
        assert!(ProtocolParams::squeeze_from_gain(0.5).is_err());
        assert_eq!(params(1.0, 50.0, 1.0).field_dim, 600);
    }
}

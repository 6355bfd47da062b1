//! Truncated bosonic Fock-space engine.
//!
//! Quadrature convention used throughout the crate:
//!
//! ```text
//! X = a + a†,   Y = i(a† − a),   Var(X) = Var(Y) = 1 on the vacuum
//! ```
//!
//! With this choice a squeezed vacuum `S(r)|0⟩` has `Var(Y) = e^{−2r}` and a
//! block displaced by `α_n = i n A` sits at `⟨Y⟩ = 2 n A`.
//!
//! Truncation: every constructor that exponentiates a generator checks a
//! headroom rule (`|α|² ≤ dim/4` for displacements, `e^{2|r|} ≤ dim/8` for
//! squeezing). Unitarity is only meaningful away from the top of the ladder,
//! so checks skip a guard band of the highest levels.

use ndarray::{s, Array1, Array2, ArrayView2};
use num_complex::Complex64 as C64;

use crate::error::{invalid, Error, Result};
use crate::linalg::{self, Banded};

const I: C64 = C64 { re: 0.0, im: 1.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };
const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Default number of top Fock levels excluded from unitarity checks.
pub const DEFAULT_GUARD_BAND: usize = 5;

/// Tail mass below which an infinite phonon sum is cut.
pub const DEFAULT_TAIL: f64 = 1e-10;

/// How strictly truncation headroom is enforced.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Truncation {
    pub guard_band: usize,
    /// Refuse to build operators that violate the headroom rule.
    pub enforce_headroom: bool,
}

impl Default for Truncation {
    fn default() -> Self {
        Self { guard_band: DEFAULT_GUARD_BAND, enforce_headroom: true }
    }
}

fn check_dim(dim: usize) -> Result<()> {
    if dim < 2 {
        return Err(Error::InvalidDimension { dim, min: 2 });
    }
    Ok(())
}

pub fn check_displacement_headroom(alpha: C64, dim: usize) -> Result<()> {
    let needed = (4.0 * alpha.norm_sqr()).ceil() as usize;
    if needed > dim {
        return Err(Error::TruncationRisk { what: format!("displacement |alpha| = {}", alpha.norm()), needed, dim });
    }
    Ok(())
}

pub fn check_squeeze_headroom(r: f64, dim: usize) -> Result<()> {
    let needed = (8.0 * (2.0 * r.abs()).exp()).ceil();
    if !needed.is_finite() || needed > dim as f64 {
        return Err(Error::TruncationRisk {
            what: format!("squeeze r = {r}"),
            needed: if needed.is_finite() { needed as usize } else { usize::MAX },
            dim,
        });
    }
    Ok(())
}

fn ladder_values(dim: usize) -> Vec<C64> {
    (1..dim).map(|n| C64::new((n as f64).sqrt(), 0.0)).collect()
}

/// Banded `α a† − α* a`.
pub fn displacement_generator(alpha: C64, dim: usize) -> Banded {
    let mut g = Banded::new(dim);
    let sq = ladder_values(dim);
    g.add_diag(-1, sq.iter().map(|v| alpha * v).collect());
    g.add_diag(1, sq.iter().map(|v| -alpha.conj() * v).collect());
    g
}

/// Banded `(r/2)(a†² − a²)`.
pub fn squeeze_generator(r: f64, dim: usize) -> Banded {
    let mut g = Banded::new(dim);
    let two: Vec<C64> = (2..dim).map(|n| C64::new(0.5 * r * ((n * (n - 1)) as f64).sqrt(), 0.0)).collect();
    g.add_diag(-2, two.clone());
    g.add_diag(2, two.iter().map(|v| -v).collect());
    g
}

/// A square operator on a truncated Fock space (or a tensor product of them).
#[derive(Clone, Debug, PartialEq)]
pub struct FockOperator {
    mat: Array2<C64>,
}

impl FockOperator {
    pub fn from_matrix(mat: Array2<C64>) -> Result<Self> {
        let (r, c) = mat.dim();
        if r != c {
            return Err(Error::DimensionMismatch { expected: r, got: c });
        }
        check_dim(r)?;
        Ok(Self { mat })
    }

    /// `a` with `(a)_{n−1,n} = √n`.
    pub fn annihilation(dim: usize) -> Result<Self> {
        check_dim(dim)?;
        let mut m = Array2::zeros((dim, dim));
        for n in 1..dim {
            m[[n - 1, n]] = C64::new((n as f64).sqrt(), 0.0);
        }
        Ok(Self { mat: m })
    }

    pub fn creation(dim: usize) -> Result<Self> {
        Ok(Self::annihilation(dim)?.dagger())
    }

    pub fn number(dim: usize) -> Result<Self> {
        check_dim(dim)?;
        Ok(Self { mat: Array2::from_diag(&Array1::from_iter((0..dim).map(|n| C64::new(n as f64, 0.0)))) })
    }

    pub fn identity(dim: usize) -> Result<Self> {
        check_dim(dim)?;
        Ok(Self { mat: linalg::identity(dim) })
    }

    pub fn parity(dim: usize) -> Result<Self> {
        check_dim(dim)?;
        let d = Array1::from_iter((0..dim).map(|n| if n % 2 == 0 { ONE } else { -ONE }));
        Ok(Self { mat: Array2::from_diag(&d) })
    }

    /// `X = a + a†`.
    pub fn quadrature_x(dim: usize) -> Result<Self> {
        let a = Self::annihilation(dim)?;
        Ok(Self { mat: &a.mat + &linalg::dagger(a.mat.view()) })
    }

    /// `Y = i(a† − a)`.
    pub fn quadrature_y(dim: usize) -> Result<Self> {
        let a = Self::annihilation(dim)?;
        Ok(Self { mat: (linalg::dagger(a.mat.view()) - &a.mat).mapv(|z| I * z) })
    }

    /// `D(α) = exp(α a† − α* a)`, refusing truncations without headroom.
    pub fn displacement(alpha: C64, dim: usize) -> Result<Self> {
        Self::displacement_with(alpha, dim, &Truncation::default())
    }

    pub fn displacement_with(alpha: C64, dim: usize, trunc: &Truncation) -> Result<Self> {
        check_dim(dim)?;
        if trunc.enforce_headroom {
            check_displacement_headroom(alpha, dim)?;
        }
        if alpha == ZERO {
            return Self::identity(dim);
        }
        let g = displacement_generator(alpha, dim).to_dense();
        Ok(Self { mat: linalg::expm(g.view()) })
    }

    /// `S(r) = exp[(r/2)(a†² − a²)]`; squeezes `Y` for `r > 0`.
    pub fn squeeze(r: f64, dim: usize) -> Result<Self> {
        Self::squeeze_with(r, dim, &Truncation::default())
    }

    pub fn squeeze_with(r: f64, dim: usize, trunc: &Truncation) -> Result<Self> {
        check_dim(dim)?;
        if !r.is_finite() {
            return Err(invalid("r", "squeeze parameter must be finite"));
        }
        if trunc.enforce_headroom {
            check_squeeze_headroom(r, dim)?;
        }
        if r == 0.0 {
            return Self::identity(dim);
        }
        let g = squeeze_generator(r, dim).to_dense();
        Ok(Self { mat: linalg::expm(g.view()) })
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> ArrayView2<'_, C64> {
        self.mat.view()
    }

    pub fn into_matrix(self) -> Array2<C64> {
        self.mat
    }

    pub fn dagger(&self) -> Self {
        Self { mat: linalg::dagger(self.mat.view()) }
    }

    pub fn compose(&self, rhs: &Self) -> Result<Self> {
        self.same_dim(rhs.dim())?;
        Ok(Self { mat: self.mat.dot(&rhs.mat) })
    }

    pub fn commutator(&self, rhs: &Self) -> Result<Self> {
        self.same_dim(rhs.dim())?;
        Ok(Self { mat: self.mat.dot(&rhs.mat) - rhs.mat.dot(&self.mat) })
    }

    pub fn tensor(&self, rhs: &Self) -> Self {
        Self { mat: linalg::kron(self.mat.view(), rhs.mat.view()) }
    }

    pub fn apply(&self, ket: &Ket) -> Result<Ket> {
        self.same_dim(ket.dim())?;
        Ok(Ket { amps: self.mat.dot(&ket.amps) })
    }

    /// `max |(U†U − I)_{ij}|` over the block that excludes the top `guard_band` levels.
    pub fn unitarity_defect(&self, guard_band: usize) -> f64 {
        let keep = self.dim().saturating_sub(guard_band);
        let uu = linalg::dagger(self.mat.view()).dot(&self.mat);
        let diff = &uu.slice(s![..keep, ..keep]) - &linalg::identity(keep);
        linalg::max_abs(diff.view())
    }

    pub fn hermiticity_defect(&self) -> f64 {
        linalg::max_abs((&self.mat - &linalg::dagger(self.mat.view())).view())
    }

    fn same_dim(&self, got: usize) -> Result<()> {
        if got != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got });
        }
        Ok(())
    }
}

/// First and second quadrature moments of a field state.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct QuadratureMoments {
    pub mean_x: f64,
    pub mean_y: f64,
    pub var_x: f64,
    pub var_y: f64,
    pub mean_n: f64,
}

/// A pure state vector in a truncated Fock space.
#[derive(Clone, Debug, PartialEq)]
pub struct Ket {
    amps: Array1<C64>,
}

impl Ket {
    pub fn from_amplitudes(amps: Array1<C64>) -> Result<Self> {
        check_dim(amps.len())?;
        Ok(Self { amps })
    }

    pub fn basis(n: usize, dim: usize) -> Result<Self> {
        check_dim(dim)?;
        if n >= dim {
            return Err(Error::DimensionMismatch { expected: dim, got: n + 1 });
        }
        let mut amps = Array1::zeros(dim);
        amps[n] = ONE;
        Ok(Self { amps })
    }

    pub fn vacuum(dim: usize) -> Result<Self> {
        Self::basis(0, dim)
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &Array1<C64> {
        &self.amps
    }

    pub fn norm(&self) -> f64 {
        self.amps.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn inner(&self, other: &Ket) -> C64 {
        linalg::inner(self.amps.view(), other.amps.view())
    }

    /// `S(r)|self⟩` through the banded exponential action.
    pub fn squeezed(&self, r: f64) -> Result<Ket> {
        check_squeeze_headroom(r, self.dim())?;
        if r == 0.0 {
            return Ok(self.clone());
        }
        Ok(Ket { amps: squeeze_generator(r, self.dim()).expm_action(self.amps.view()) })
    }

    /// `D(α)|self⟩` through the banded exponential action.
    pub fn displaced(&self, alpha: C64) -> Result<Ket> {
        check_displacement_headroom(alpha, self.dim())?;
        if alpha == ZERO {
            return Ok(self.clone());
        }
        Ok(Ket { amps: displacement_generator(alpha, self.dim()).expm_action(self.amps.view()) })
    }

    pub fn expect(&self, op: &FockOperator) -> Result<C64> {
        let v = op.apply(self)?;
        Ok(self.inner(&v))
    }

    /// Quadrature moments computed from truncated ladder operators.
    pub fn quadrature_moments(&self) -> QuadratureMoments {
        let dim = self.dim();
        let mut a = Banded::new(dim);
        a.add_diag(1, ladder_values(dim));
        let mut ad = Banded::new(dim);
        ad.add_diag(-1, ladder_values(dim));
        let a_psi = a.apply(self.amps.view());
        let ad_psi = ad.apply(self.amps.view());
        let x_psi = &a_psi + &ad_psi;
        let y_psi = (&ad_psi - &a_psi).mapv(|z| I * z);
        let norm2 = self.norm().powi(2);
        let mean_x = linalg::inner(self.amps.view(), x_psi.view()).re / norm2;
        let mean_y = linalg::inner(self.amps.view(), y_psi.view()).re / norm2;
        let x2 = x_psi.iter().map(|z| z.norm_sqr()).sum::<f64>() / norm2;
        let y2 = y_psi.iter().map(|z| z.norm_sqr()).sum::<f64>() / norm2;
        let mean_n = a_psi.iter().map(|z| z.norm_sqr()).sum::<f64>() / norm2;
        QuadratureMoments { mean_x, mean_y, var_x: x2 - mean_x * mean_x, var_y: y2 - mean_y * mean_y, mean_n }
    }

    pub fn to_density(&self) -> DensityOperator {
        let n = self.norm().powi(2);
        let col = self.amps.view().insert_axis(ndarray::Axis(1));
        let row = self.amps.mapv(|z| z.conj()).insert_axis(ndarray::Axis(0));
        DensityOperator { mat: col.dot(&row).mapv(|z| z / n) }
    }
}

/// `D(α)|ket⟩` held in the displaced frame.
///
/// Displacement is kept as an exact amplitude so large coherent offsets do
/// not need a huge truncation; moments use `D†(α) a D(α) = a + α`.
#[derive(Clone, Debug, PartialEq)]
pub struct DisplacedKet {
    pub alpha: C64,
    pub ket: Ket,
}

impl DisplacedKet {
    pub fn new(alpha: C64, ket: Ket) -> Self {
        Self { alpha, ket }
    }

    pub fn quadrature_moments(&self) -> QuadratureMoments {
        let m = self.ket.quadrature_moments();
        let (ax, ay) = (2.0 * self.alpha.re, 2.0 * self.alpha.im);
        // ⟨(a+α)†(a+α)⟩ = ⟨n⟩ + 2 Re(α* ⟨a⟩) + |α|²,  ⟨a⟩ = (⟨X⟩ + i⟨Y⟩)/2
        let mean_a = C64::new(m.mean_x, m.mean_y) / 2.0;
        let mean_n = m.mean_n + 2.0 * (self.alpha.conj() * mean_a).re + self.alpha.norm_sqr();
        QuadratureMoments { mean_x: m.mean_x + ax, mean_y: m.mean_y + ay, var_x: m.var_x, var_y: m.var_y, mean_n }
    }

    /// Apply `S(r)` then keep the result in the displaced frame:
    /// `S(r) D(β) = D(β cosh r + β* sinh r) S(r)`.
    pub fn squeezed(&self, r: f64) -> Result<Self> {
        let beta = self.alpha * r.cosh() + self.alpha.conj() * r.sinh();
        Ok(Self { alpha: beta, ket: self.ket.squeezed(r)? })
    }

    /// Apply `D(α)`; equal to the product up to a global phase.
    pub fn displaced(&self, alpha: C64) -> Self {
        Self { alpha: self.alpha + alpha, ket: self.ket.clone() }
    }

    /// The state as a plain Fock vector of the same truncation.
    pub fn materialize(&self) -> Result<Ket> {
        self.ket.displaced(self.alpha)
    }
}

/// A validated density matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityOperator {
    mat: Array2<C64>,
}

impl DensityOperator {
    /// Checks Hermiticity (1e−12), unit trace (1e−10) and positivity (min eigenvalue ≥ −1e−10).
    pub fn from_matrix(mat: Array2<C64>) -> Result<Self> {
        let rho = Self::from_matrix_unchecked(mat)?;
        rho.validate()?;
        Ok(rho)
    }

    pub fn from_matrix_unchecked(mat: Array2<C64>) -> Result<Self> {
        let (r, c) = mat.dim();
        if r != c {
            return Err(Error::DimensionMismatch { expected: r, got: c });
        }
        check_dim(r)?;
        Ok(Self { mat })
    }

    pub fn validate(&self) -> Result<()> {
        let herm = linalg::max_abs((&self.mat - &linalg::dagger(self.mat.view())).view());
        if herm > 1e-12 {
            return Err(invalid("rho", format!("not Hermitian (defect {herm:e})")));
        }
        let tr = self.trace();
        if (tr - 1.0).abs() > 1e-10 {
            return Err(invalid("rho", format!("trace {tr} is not 1")));
        }
        if !linalg::is_psd_with_shift(self.mat.view(), 1e-10) {
            return Err(invalid("rho", "eigenvalue below -1e-10"));
        }
        Ok(())
    }

    /// Thermal state `Σ P(n)|n⟩⟨n|`, `P(n) = Nⁿ/(N+1)^{n+1}`, renormalised on the truncation.
    pub fn thermal(mean_n: f64, dim: usize) -> Result<Self> {
        let p = thermal_distribution(mean_n, dim)?;
        let d = Array1::from_iter(p.into_iter().map(|x| C64::new(x, 0.0)));
        Ok(Self { mat: Array2::from_diag(&d) })
    }

    pub fn vacuum(dim: usize) -> Result<Self> {
        Ok(Ket::vacuum(dim)?.to_density())
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> ArrayView2<'_, C64> {
        self.mat.view()
    }

    pub fn trace(&self) -> f64 {
        linalg::trace(self.mat.view()).re
    }

    pub fn diagonal(&self) -> Vec<f64> {
        self.mat.diag().iter().map(|z| z.re).collect()
    }

    /// `tr(O ρ)`.
    pub fn expectation(&self, op: &FockOperator) -> Result<C64> {
        if op.dim() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: op.dim() });
        }
        Ok(linalg::trace(op.matrix().dot(&self.mat).view()))
    }

    pub fn quadrature_moments(&self) -> Result<QuadratureMoments> {
        let dim = self.dim();
        let x = FockOperator::quadrature_x(dim)?;
        let y = FockOperator::quadrature_y(dim)?;
        let mean_x = self.expectation(&x)?.re;
        let mean_y = self.expectation(&y)?.re;
        let x2 = self.expectation(&x.compose(&x)?)?.re;
        let y2 = self.expectation(&y.compose(&y)?)?.re;
        let mean_n = self.expectation(&FockOperator::number(dim)?)?.re;
        Ok(QuadratureMoments { mean_x, mean_y, var_x: x2 - mean_x * mean_x, var_y: y2 - mean_y * mean_y, mean_n })
    }

    /// `self ⊗ rhs` with `self` as the phonon factor.
    pub fn tensor(&self, rhs: &DensityOperator) -> CompositeState {
        CompositeState::Dense(DenseComposite {
            phonon_dim: self.dim(),
            field_dim: rhs.dim(),
            mat: linalg::kron(self.mat.view(), rhs.mat.view()),
        })
    }
}

/// Smallest truncation whose thermal tail `(N/(N+1))^dim` is at most `tol` (never below 2).
pub fn thermal_dim(mean_n: f64, tol: f64) -> usize {
    if mean_n <= 0.0 {
        return 2;
    }
    let q = mean_n / (mean_n + 1.0);
    ((tol.ln() / q.ln()).ceil() as usize).max(2)
}

/// Thermal populations on `0..dim`, renormalised after the cut.
pub fn thermal_distribution(mean_n: f64, dim: usize) -> Result<Vec<f64>> {
    check_dim(dim)?;
    if !(mean_n >= 0.0) || !mean_n.is_finite() {
        return Err(invalid("N", format!("thermal number must be finite and >= 0, got {mean_n}")));
    }
    let q = mean_n / (mean_n + 1.0);
    let tail = q.powi(dim as i32);
    if tail > DEFAULT_TAIL {
        return Err(Error::TruncationRisk {
            what: format!("thermal tail at N = {mean_n}"),
            needed: thermal_dim(mean_n, DEFAULT_TAIL),
            dim,
        });
    }
    let mut p: Vec<f64> = (0..dim).map(|n| q.powi(n as i32) / (mean_n + 1.0)).collect();
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= total);
    Ok(p)
}

/// Which factor of the phonon ⊗ field product to keep.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Subsystem {
    Phonon,
    Field,
}

impl TryFrom<usize> for Subsystem {
    type Error = Error;
    fn try_from(i: usize) -> Result<Self> {
        match i {
            0 => Ok(Subsystem::Phonon),
            1 => Ok(Subsystem::Field),
            other => Err(Error::BadSubsystem(other)),
        }
    }
}

/// Full matrix on `phonon ⊗ field`, index `n_b · field_dim + n_a`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseComposite {
    pub phonon_dim: usize,
    pub field_dim: usize,
    pub mat: Array2<C64>,
}

/// One phonon sector `P(n) |n⟩⟨n| ⊗ |ψ_n⟩⟨ψ_n|`.
#[derive(Clone, Debug, PartialEq)]
pub struct PhononBlock {
    pub n: usize,
    pub weight: f64,
    pub field: DisplacedKet,
}

/// Block-diagonal (in phonon number) composite state with pure field blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockState {
    pub phonon_dim: usize,
    pub field_dim: usize,
    pub blocks: Vec<PhononBlock>,
}

impl BlockState {
    pub fn block(&self, n: usize) -> Option<&PhononBlock> {
        self.blocks.iter().find(|b| b.n == n)
    }

    /// Expand into a dense matrix; each field block is displaced numerically.
    pub fn to_dense(&self) -> Result<DenseComposite> {
        let (db, da) = (self.phonon_dim, self.field_dim);
        let mut mat = Array2::zeros((db * da, db * da));
        for b in &self.blocks {
            let psi = b.field.materialize()?;
            let rho = psi.to_density();
            mat.slice_mut(s![b.n * da..(b.n + 1) * da, b.n * da..(b.n + 1) * da])
                .assign(&rho.mat.mapv(|z| z * b.weight));
        }
        Ok(DenseComposite { phonon_dim: db, field_dim: da, mat })
    }
}

/// State of the phonon ⊗ field system, dense or compressed by phonon sector.
#[derive(Clone, Debug, PartialEq)]
pub enum CompositeState {
    Dense(DenseComposite),
    Blocks(BlockState),
}

impl CompositeState {
    pub fn dims(&self) -> (usize, usize) {
        match self {
            CompositeState::Dense(d) => (d.phonon_dim, d.field_dim),
            CompositeState::Blocks(b) => (b.phonon_dim, b.field_dim),
        }
    }

    /// Phonon-number populations `⟨n|tr_a ρ|n⟩`.
    pub fn phonon_distribution(&self) -> Vec<f64> {
        match self {
            CompositeState::Dense(d) => {
                let da = d.field_dim;
                (0..d.phonon_dim).map(|n| (0..da).map(|k| d.mat[[n * da + k, n * da + k]].re).sum()).collect()
            }
            CompositeState::Blocks(b) => {
                let mut p = vec![0.0; b.phonon_dim];
                for blk in &b.blocks {
                    p[blk.n] += blk.weight;
                }
                p
            }
        }
    }

    /// Reduced state of one factor.
    pub fn partial_trace(&self, keep: Subsystem) -> Result<DensityOperator> {
        match (self, keep) {
            (CompositeState::Dense(d), _) => Ok(dense_partial_trace(d, keep)),
            (CompositeState::Blocks(b), Subsystem::Phonon) => {
                let p = self.phonon_distribution();
                let d = Array1::from_iter(p.into_iter().map(|x| C64::new(x, 0.0)));
                let _ = b;
                Ok(DensityOperator { mat: Array2::from_diag(&d) })
            }
            (CompositeState::Blocks(b), Subsystem::Field) => {
                let mut mat = Array2::zeros((b.field_dim, b.field_dim));
                for blk in &b.blocks {
                    let rho = blk.field.materialize()?.to_density();
                    mat.scaled_add(C64::new(blk.weight, 0.0), &rho.mat);
                }
                Ok(DensityOperator { mat })
            }
        }
    }

    pub fn to_dense(&self) -> Result<DenseComposite> {
        match self {
            CompositeState::Dense(d) => Ok(d.clone()),
            CompositeState::Blocks(b) => b.to_dense(),
        }
    }

    /// Whether the dense form has any coherence between different phonon numbers.
    pub fn max_phonon_coherence(&self) -> f64 {
        match self {
            CompositeState::Blocks(_) => 0.0,
            CompositeState::Dense(d) => {
                let da = d.field_dim;
                let mut worst: f64 = 0.0;
                for (i, j) in (0..d.mat.nrows()).flat_map(|i| (0..d.mat.ncols()).map(move |j| (i, j))) {
                    if i / da != j / da {
                        worst = worst.max(d.mat[[i, j]].norm());
                    }
                }
                worst
            }
        }
    }
}

fn dense_partial_trace(d: &DenseComposite, keep: Subsystem) -> DensityOperator {
    let (db, da) = (d.phonon_dim, d.field_dim);
    let mat = match keep {
        Subsystem::Phonon => {
            Array2::from_shape_fn((db, db), |(i, j)| (0..da).map(|k| d.mat[[i * da + k, j * da + k]]).sum())
        }
        Subsystem::Field => {
            Array2::from_shape_fn((da, da), |(i, j)| (0..db).map(|n| d.mat[[n * da + i, n * da + j]]).sum())
        }
    };
    DensityOperator { mat }
}

impl DenseComposite {
    pub fn as_density(&self) -> Result<DensityOperator> {
        DensityOperator::from_matrix(self.mat.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn annihilation_small_dims() {
        let a = FockOperator::annihilation(2).unwrap();
        assert_eq!(a.matrix()[[0, 1]], ONE);
        assert_eq!(a.matrix()[[0, 0]], ZERO);
        assert_eq!(a.matrix()[[1, 0]], ZERO);
        let a3 = FockOperator::annihilation(3).unwrap();
        assert_abs_diff_eq!(a3.matrix()[[1, 2]].re, 2f64.sqrt(), epsilon = 1e-15);
        assert!(matches!(FockOperator::annihilation(1), Err(Error::InvalidDimension { .. })));
    }

    #[test]
    fn number_operator_from_ladder() {
        let a = FockOperator::annihilation(7).unwrap();
        let n = a.dagger().compose(&a).unwrap();
        for k in 0..7 {
            assert_abs_diff_eq!(n.matrix()[[k, k]].re, k as f64, epsilon = 1e-14);
        }
    }

    #[test]
    fn canonical_commutator_below_top_level() {
        let dim = 12;
        let a = FockOperator::annihilation(dim).unwrap();
        let c = a.commutator(&a.dagger()).unwrap();
        let block = &c.matrix().slice(s![..dim - 1, ..dim - 1]) - &linalg::identity(dim - 1);
        assert!(linalg::max_abs(block.view()) <= 1e-12);
        // the top level is the truncation artefact: [a,a†]_{d−1,d−1} = −(d−1)
        assert_abs_diff_eq!(c.matrix()[[dim - 1, dim - 1]].re, -((dim - 1) as f64), epsilon = 1e-12);
    }

    #[test]
    fn displacement_identity_and_inverse() {
        let d0 = FockOperator::displacement(ZERO, 10).unwrap();
        assert!(linalg::max_abs((d0.matrix().to_owned() - linalg::identity(10)).view()) <= 1e-14);

        let dim = 40;
        let alpha = C64::new(0.7, -1.1);
        let d = FockOperator::displacement(alpha, dim).unwrap();
        let dm = FockOperator::displacement(-alpha, dim).unwrap();
        assert!(d.unitarity_defect(DEFAULT_GUARD_BAND) <= 1e-10);
        let prod = d.compose(&dm).unwrap();
        let keep = dim - DEFAULT_GUARD_BAND;
        // D(α)D(−α) is only the identity where truncation has not leaked in
        let low = 20;
        let diff = &prod.matrix().slice(s![..low, ..low]) - &linalg::identity(low);
        assert!(linalg::max_abs(diff.view()) <= 1e-10, "{}", linalg::max_abs(diff.view()));
        assert!(keep > low);
    }

    #[test]
    fn displacement_headroom_is_enforced() {
        let err = FockOperator::displacement(C64::new(3.0, 0.0), 20).unwrap_err();
        assert!(matches!(err, Error::TruncationRisk { needed: 36, .. }));
        let lax = Truncation { enforce_headroom: false, ..Default::default() };
        assert!(FockOperator::displacement_with(C64::new(3.0, 0.0), 20, &lax).is_ok());
    }

    #[test]
    fn squeeze_identity_and_headroom() {
        let s0 = FockOperator::squeeze(0.0, 8).unwrap();
        assert_eq!(s0, FockOperator::identity(8).unwrap());
        assert!(matches!(FockOperator::squeeze(1.0, 40), Err(Error::TruncationRisk { .. })));
    }

    #[test]
    fn dense_and_banded_squeeze_agree() {
        let dim = 80;
        let r = 0.8;
        let dense = FockOperator::squeeze(r, dim).unwrap().apply(&Ket::vacuum(dim).unwrap()).unwrap();
        let banded = Ket::vacuum(dim).unwrap().squeezed(r).unwrap();
        let err = (&dense.amps - &banded.amps).iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(err < 1e-12, "{err}");
    }

    #[test]
    fn squeezed_vacuum_minimum_uncertainty() {
        let dim = 120;
        let m = Ket::vacuum(dim).unwrap().squeezed(0.5).unwrap().quadrature_moments();
        assert_abs_diff_eq!(m.var_x * m.var_y, 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(m.var_y, (-1.0f64).exp(), epsilon = 1e-10);
    }

    #[test]
    fn thermal_examples() {
        let t0 = DensityOperator::thermal(0.0, 4).unwrap();
        assert_eq!(t0.diagonal(), vec![1.0, 0.0, 0.0, 0.0]);
        let t1 = DensityOperator::thermal(1.0, 40).unwrap();
        let d = t1.diagonal();
        assert_abs_diff_eq!(d[0], 0.5, epsilon = 1e-11);
        assert_abs_diff_eq!(d[1], 0.25, epsilon = 1e-11);
        assert_abs_diff_eq!(d[2], 0.125, epsilon = 1e-11);
        let mean = t1.expectation(&FockOperator::number(40).unwrap()).unwrap().re;
        // geometric-series oracle on the same cut: Σ n 2^{-(n+1)} / (1 − 2^{-40})
        let oracle: f64 = (0..40).map(|n| n as f64 * 0.5f64.powi(n + 1)).sum::<f64>() / (1.0 - 0.5f64.powi(40));
        assert_abs_diff_eq!(mean, oracle, epsilon = 1e-12);
        assert_abs_diff_eq!(mean, 1.0, epsilon = 1e-9);
        assert!(matches!(DensityOperator::thermal(-0.1, 10), Err(Error::InvalidParameter { .. })));
        assert!(matches!(DensityOperator::thermal(1.0, 10), Err(Error::TruncationRisk { .. })));
    }

    #[test]
    fn tensor_and_partial_trace() {
        let i2 = FockOperator::identity(2).unwrap();
        let i3 = FockOperator::identity(3).unwrap();
        assert_eq!(i2.tensor(&i3), FockOperator::identity(6).unwrap());

        let a = DensityOperator::thermal(0.3, 25).unwrap();
        let b = Ket::vacuum(5).unwrap().displaced(C64::new(0.2, 0.4)).unwrap().to_density();
        let ab = a.tensor(&b);
        let CompositeState::Dense(ref d) = ab else { unreachable!() };
        assert_abs_diff_eq!(linalg::trace(d.mat.view()).re, a.trace() * b.trace(), epsilon = 1e-12);
        let back_a = ab.partial_trace(Subsystem::Phonon).unwrap();
        let back_b = ab.partial_trace(Subsystem::Field).unwrap();
        assert!(linalg::max_abs((&back_a.mat - &a.mat).view()) < 1e-12);
        assert!(linalg::max_abs((&back_b.mat - &b.mat).view()) < 1e-12);
        assert!(matches!(Subsystem::try_from(2), Err(Error::BadSubsystem(2))));
    }

    #[test]
    fn correlated_block_state_traces_to_classical_marginal() {
        // Σ_n p_n |n⟩⟨n| ⊗ |n⟩⟨n|: both marginals are diag(p) (direct-sum oracle)
        let p = [0.5, 0.3, 0.2];
        let dim = 3;
        let mut mat = Array2::zeros((9, 9));
        for (n, w) in p.iter().enumerate() {
            mat[[n * dim + n, n * dim + n]] = C64::new(*w, 0.0);
        }
        let st = CompositeState::Dense(DenseComposite { phonon_dim: 3, field_dim: 3, mat });
        for keep in [Subsystem::Phonon, Subsystem::Field] {
            let r = st.partial_trace(keep).unwrap();
            assert_eq!(r.diagonal(), p.to_vec());
            r.validate().unwrap();
        }
    }

    #[test]
    fn expectation_conventions() {
        let dim = 30;
        let vac = DensityOperator::vacuum(dim).unwrap();
        assert_abs_diff_eq!(vac.expectation(&FockOperator::identity(dim).unwrap()).unwrap().re, 1.0, epsilon = 1e-15);
        let m = vac.quadrature_moments().unwrap();
        assert_abs_diff_eq!(m.mean_y, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m.var_y, 1.0, epsilon = 1e-15);
        assert!(matches!(vac.expectation(&FockOperator::identity(4).unwrap()), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn density_validation_rejects_bad_matrices() {
        let mut m = Array2::zeros((2, 2));
        m[[0, 0]] = C64::new(0.7, 0.0);
        assert!(DensityOperator::from_matrix(m.clone()).is_err());
        m[[1, 1]] = C64::new(0.3, 0.0);
        m[[0, 1]] = C64::new(0.0, 0.1);
        assert!(DensityOperator::from_matrix(m.clone()).is_err());
        m[[1, 0]] = C64::new(0.0, -0.1);
        assert!(DensityOperator::from_matrix(m).is_ok());
    }

    #[test]
    fn displaced_ket_moments_match_materialized() {
        let dim = 90;
        let sq = Ket::vacuum(dim).unwrap().squeezed(0.4).unwrap();
        let dk = DisplacedKet::new(C64::new(0.3, 1.2), sq);
        let a = dk.quadrature_moments();
        let b = dk.materialize().unwrap().quadrature_moments();
        assert_abs_diff_eq!(a.mean_x, b.mean_x, epsilon = 1e-10);
        assert_abs_diff_eq!(a.mean_y, b.mean_y, epsilon = 1e-10);
        assert_abs_diff_eq!(a.var_y, b.var_y, epsilon = 1e-10);
        assert_abs_diff_eq!(a.mean_n, b.mean_n, epsilon = 1e-9);
    }

    #[test]
    fn squeeze_then_displace_commutation_rule() {
        // S(r) D(β)|0⟩ must equal D(β cosh r + β* sinh r) S(r)|0⟩ up to phase
        let dim = 120;
        let (r, beta) = (0.3, C64::new(0.4, -0.5));
        let lhs = Ket::vacuum(dim).unwrap().displaced(beta).unwrap().squeezed(r).unwrap();
        let rhs = DisplacedKet::new(beta, Ket::vacuum(dim).unwrap()).squeezed(r).unwrap().materialize().unwrap();
        assert_abs_diff_eq!(lhs.inner(&rhs).norm(), 1.0, epsilon = 1e-10);
    }
}

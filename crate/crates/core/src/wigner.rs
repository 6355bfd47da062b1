//! Phase-space pictures of the field and phonon histograms read off them.
//!
//! Two conventions are kept apart:
//!
//! * [`Convention::PaperClosedForm`]: a mixture of Gaussians with prefactor
//!   `1/2π`, widths `e^{r}` on the real axis and `e^{−r}` on the imaginary axis,
//!   sector centres at `Im α = nA`.
//! * [`Convention::StandardNumeric`]: the textbook displaced-parity Wigner
//!   function `W(β) = (2/π) tr[D(β) Π D†(β) ρ]`, where `Re β = X/2` and
//!   `Im β = Y/2`. Same centres, half the widths.
//!
//! Both place sector `n` at `Im α = nA`, so histogram bins have spacing `A`
//! in either convention even though the `Y` quadrature spacing is `2A`.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::Write;

use ndarray::Array2;
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fock::{self, BlockState, DensityOperator, Ket};
use crate::protocol::{self, ProtocolParams};

/// Standard deviations of margin that every grid must cover.
pub const COVERAGE_SIGMAS: f64 = 5.0;

/// Beyond this many standard deviations a block's contribution is dropped.
pub const SUPPORT_SIGMAS: f64 = 8.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl Axis {
    pub fn new(min: f64, max: f64, count: usize) -> Result<Self> {
        if count < 2 || !(max > min) || !min.is_finite() || !max.is_finite() {
            return Err(invalid("axis", format!("need finite min < max and count >= 2, got [{min}, {max}] x {count}")));
        }
        Ok(Self { min, max, count })
    }

    pub fn step(&self) -> f64 {
        (self.max - self.min) / (self.count - 1) as f64
    }

    pub fn point(&self, i: usize) -> f64 {
        self.min + i as f64 * self.step()
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.count).map(|i| self.point(i)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub re: Axis,
    pub im: Axis,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Convention {
    PaperClosedForm,
    StandardNumeric,
}

impl Convention {
    /// Gaussian widths `(σ_re, σ_im)` of one sector.
    pub fn widths(self, squeeze_r: f64) -> (f64, f64) {
        let (re, im) = (squeeze_r.exp(), (-squeeze_r).exp());
        match self {
            Convention::PaperClosedForm => (re, im),
            Convention::StandardNumeric => (re / 2.0, im / 2.0),
        }
    }

    /// Distance between neighbouring sector centres on the imaginary axis.
    pub fn spacing(self, pulse_area: f64) -> f64 {
        pulse_area
    }
}

/// Values sampled on a grid; `values[[i_re, i_im]]`.
#[derive(Clone, Debug, PartialEq)]
pub struct WignerGrid {
    pub re: Axis,
    pub im: Axis,
    pub values: Array2<f64>,
    pub convention: Convention,
}

fn trapezoid(values: impl ExactSizeIterator<Item = f64>, h: f64) -> f64 {
    let n = values.len();
    values.enumerate().map(|(i, v)| if i == 0 || i + 1 == n { 0.5 * v } else { v }).sum::<f64>() * h
}

impl WignerGrid {
    /// Trapezoidal `∫∫ W d²α`.
    pub fn integral(&self) -> f64 {
        let rows: Vec<f64> =
            (0..self.re.count).map(|i| trapezoid(self.values.row(i).iter().copied(), self.im.step())).collect();
        trapezoid(rows.into_iter(), self.re.step())
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Largest phonon number kept by the thermal tail rule.
fn n_max(p: &ProtocolParams) -> usize {
    fock::thermal_dim(p.thermal_n, fock::DEFAULT_TAIL) - 1
}

fn check_coverage(p: &ProtocolParams, spec: &GridSpec, convention: Convention) -> Result<()> {
    let (sre, sim) = convention.widths(p.squeeze_r);
    let top = n_max(p) as f64 * convention.spacing(p.pulse_area);
    let need_re = COVERAGE_SIGMAS * sre;
    let need_im = COVERAGE_SIGMAS * sim;
    if spec.re.min > -need_re || spec.re.max < need_re {
        return Err(Error::Coverage(format!(
            "real axis [{}, {}] must contain [-{need_re}, {need_re}]",
            spec.re.min, spec.re.max
        )));
    }
    if spec.im.min > -need_im || spec.im.max < top + need_im {
        return Err(Error::Coverage(format!(
            "imaginary axis [{}, {}] must contain [-{need_im}, {}]",
            spec.im.min,
            spec.im.max,
            top + need_im
        )));
    }
    Ok(())
}

/// A grid wide enough for [`check_coverage`] with `per_sigma` points per
/// width on each axis.
///
/// The imaginary step divides the sector spacing exactly, so every sector
/// centre lies on a grid line.
pub fn auto_grid(p: &ProtocolParams, convention: Convention, per_sigma: f64) -> Result<GridSpec> {
    p.validate()?;
    if !(per_sigma > 0.0) {
        return Err(invalid("per_sigma", "must be > 0"));
    }
    let (sre, sim) = convention.widths(p.squeeze_r);
    let margin = COVERAGE_SIGMAS + 1.0;
    let half_re = margin * sre;
    let re_count = ((2.0 * half_re * per_sigma / sre).ceil() as usize + 1) | 1;
    let spacing = convention.spacing(p.pulse_area);
    let per_spacing = (spacing * per_sigma / sim).ceil().max(1.0);
    let h = spacing / per_spacing;
    let below = (margin * sim / h).ceil();
    let above = (n_max(p) as f64 * per_spacing + (margin * sim / h).ceil()) as usize;
    Ok(GridSpec {
        re: Axis::new(-half_re, half_re, re_count)?,
        im: Axis { min: -below * h, max: above as f64 * h, count: below as usize + above + 1 },
    })
}

/// Closed-form mixture `Σ_n P(n)/(2π) exp(−½ re² e^{−2r} − ½ (im − nA)² e^{2r})`.
pub fn wigner_paper(p: &ProtocolParams, spec: &GridSpec) -> Result<WignerGrid> {
    p.validate()?;
    check_coverage(p, spec, Convention::PaperClosedForm)?;
    let top = n_max(p);
    let weights = fock::thermal_distribution(p.thermal_n, top + 1)?;
    let (e2, em2) = ((2.0 * p.squeeze_r).exp(), (-2.0 * p.squeeze_r).exp());
    let res = spec.re.points();
    let ims = spec.im.points();
    let rows: Vec<Vec<f64>> = res
        .par_iter()
        .map(|&x| {
            let gx = (-0.5 * x * x * em2).exp() / (2.0 * PI);
            ims.iter()
                .map(|&y| {
                    weights
                        .iter()
                        .enumerate()
                        .map(|(n, w)| {
                            let d = y - n as f64 * p.pulse_area;
                            w * (-0.5 * d * d * e2).exp()
                        })
                        .sum::<f64>()
                        * gx
                })
                .collect()
        })
        .collect();
    Ok(WignerGrid { re: spec.re, im: spec.im, values: to_array(rows), convention: Convention::PaperClosedForm })
}

fn to_array(rows: Vec<Vec<f64>>) -> Array2<f64> {
    let (nr, nc) = (rows.len(), rows.first().map_or(0, Vec::len));
    Array2::from_shape_vec((nr, nc), rows.into_iter().flatten().collect()).expect("rectangular grid")
}

/// `ρ_{j,j+k}` stored by superdiagonal `k`, dropping diagonals that vanish.
struct Superdiagonals {
    diags: Vec<(usize, Vec<C64>)>,
}

impl Superdiagonals {
    fn from_density(rho: &DensityOperator) -> Self {
        let m = rho.matrix();
        let d = rho.dim();
        Self::collect(d, |j, k| m[[j, j + k]])
    }

    fn from_ket(ket: &Ket) -> Self {
        let amps = ket.amplitudes();
        let norm2 = ket.norm().powi(2);
        // trailing amplitudes below 1e-17 of the peak carry no weight
        let peak = amps.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let d = amps.iter().rposition(|z| z.norm() > 1e-17 * peak).map_or(1, |i| i + 1);
        Self::collect(d, |j, k| amps[j] * amps[j + k].conj() / norm2)
    }

    fn collect(d: usize, entry: impl Fn(usize, usize) -> C64) -> Self {
        let diags = (0..d)
            .filter_map(|k| {
                let v: Vec<C64> = (0..d - k).map(|j| entry(j, k)).collect();
                v.iter().any(|z| z.norm() > 0.0).then_some((k, v))
            })
            .collect();
        Self { diags }
    }

    /// `(2/π) tr[D(γ) Π ρ]` at `γ = 2β`, with exact displacement matrix elements.
    fn wigner_at(&self, beta: C64) -> f64 {
        let gamma = 2.0 * beta;
        let x = gamma.norm_sqr();
        let theta = gamma.arg();
        let mut total = 0.0;
        for (k, coeffs) in &self.diags {
            let k = *k;
            if x == 0.0 && k > 0 {
                continue;
            }
            let s = laguerre_row_sum(k, x, coeffs);
            total += if k == 0 { s.re } else { 2.0 * (C64::from_polar(1.0, k as f64 * theta) * s).re };
        }
        2.0 / PI * total
    }
}

/// `Σ_j (−1)^j f_j^{(k)}(x) c_j` where `f_j^{(k)} = √(j!/(j+k)!) x^{k/2} e^{−x/2} L_j^{(k)}(x)`.
///
/// The three-term recurrence in `j` is run on rescaled values with a
/// separate log scale, so neither the tiny start value nor growth overflow.
fn laguerre_row_sum(k: usize, x: f64, coeffs: &[C64]) -> C64 {
    let kf = k as f64;
    let mut log_scale = if k == 0 { -0.5 * x } else { 0.5 * kf * x.ln() - 0.5 * x - 0.5 * libm::lgamma(kf + 1.0) };
    let mut factor = log_scale.exp();
    let (mut prev, mut cur) = (0.0f64, 1.0f64);
    let mut sum = C64::new(0.0, 0.0);
    for (j, c) in coeffs.iter().enumerate() {
        if factor != 0.0 {
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            sum += c * (sign * cur * factor);
        }
        let jf = j as f64;
        let next =
            ((2.0 * jf + 1.0 + kf - x) * cur - (jf * (jf + kf)).sqrt() * prev) / ((jf + 1.0) * (jf + kf + 1.0)).sqrt();
        prev = cur;
        cur = next;
        if cur.abs() > 1e200 {
            prev *= 1e-200;
            cur *= 1e-200;
            log_scale += 200.0 * std::f64::consts::LN_10;
            factor = log_scale.exp();
        }
    }
    sum
}

/// Standard displaced-parity Wigner function of a density matrix.
pub fn wigner_numeric(rho: &DensityOperator, spec: &GridSpec) -> Result<WignerGrid> {
    let sd = Superdiagonals::from_density(rho);
    let res = spec.re.points();
    let ims = spec.im.points();
    let rows: Vec<Vec<f64>> =
        res.par_iter().map(|&x| ims.iter().map(|&y| sd.wigner_at(C64::new(x, y))).collect()).collect();
    Ok(WignerGrid { re: spec.re, im: spec.im, values: to_array(rows), convention: Convention::StandardNumeric })
}

/// Standard Wigner function of a pure state.
pub fn wigner_numeric_ket(ket: &Ket, spec: &GridSpec) -> Result<WignerGrid> {
    let sd = Superdiagonals::from_ket(ket);
    let res = spec.re.points();
    let ims = spec.im.points();
    let rows: Vec<Vec<f64>> =
        res.par_iter().map(|&x| ims.iter().map(|&y| sd.wigner_at(C64::new(x, y))).collect()).collect();
    Ok(WignerGrid { re: spec.re, im: spec.im, values: to_array(rows), convention: Convention::StandardNumeric })
}

/// Standard Wigner function of the traced field of a block state.
///
/// Uses `W_{DρD†}(β) = W_ρ(β − α)`: each distinct field ket is evaluated once
/// on the lattice of shifted grid points it needs, then the sectors are
/// summed. Points further than [`SUPPORT_SIGMAS`] widths from a sector's
/// centre are skipped.
pub fn wigner_numeric_blocks(state: &BlockState, p: &ProtocolParams, spec: &GridSpec) -> Result<WignerGrid> {
    check_coverage(p, spec, Convention::StandardNumeric)?;
    let (hr, hi) = (spec.re.step(), spec.im.step());
    let mut groups: Vec<(Ket, Vec<usize>)> = Vec::new();
    for (b, blk) in state.blocks.iter().enumerate() {
        match groups.iter_mut().find(|(k, _)| *k == blk.field.ket) {
            Some((_, members)) => members.push(b),
            None => groups.push((blk.field.ket.clone(), vec![b])),
        }
    }
    let mut values = Array2::<f64>::zeros((spec.re.count, spec.im.count));
    for (ket, members) in &groups {
        let m = ket.quadrature_moments();
        let (sre, sim) = (m.var_x.sqrt() / 2.0, m.var_y.sqrt() / 2.0);
        let own = C64::new(m.mean_x / 2.0, m.mean_y / 2.0);
        // lattice keys are offsets in grid steps; off-lattice shifts are evaluated directly
        let mut wanted: HashMap<(i64, i64), C64> = HashMap::new();
        let mut plan: Vec<(usize, usize, usize, (i64, i64))> = Vec::new();
        for &b in members {
            let alpha = state.blocks[b].field.alpha;
            let centre = alpha + own;
            let (sr, si) = (alpha.re / hr, alpha.im / hi);
            let on_lattice = (sr - sr.round()).abs() < 1e-9 && (si - si.round()).abs() < 1e-9;
            for i in 0..spec.re.count {
                let x = spec.re.point(i);
                if (x - centre.re).abs() > SUPPORT_SIGMAS * sre {
                    continue;
                }
                for j in 0..spec.im.count {
                    let y = spec.im.point(j);
                    if (y - centre.im).abs() > SUPPORT_SIGMAS * sim {
                        continue;
                    }
                    let key = if on_lattice {
                        (i as i64 - sr.round() as i64, j as i64 - si.round() as i64)
                    } else {
                        // unique key outside the lattice range
                        (i64::MIN + plan.len() as i64, i64::MIN)
                    };
                    wanted.entry(key).or_insert(C64::new(x, y) - alpha);
                    plan.push((b, i, j, key));
                }
            }
        }
        let sd = Superdiagonals::from_ket(ket);
        let points: Vec<((i64, i64), C64)> = wanted.into_iter().collect();
        let evaluated: HashMap<(i64, i64), f64> =
            points.par_iter().map(|(key, beta)| (*key, sd.wigner_at(*beta))).collect();
        for (b, i, j, key) in plan {
            values[[i, j]] += state.blocks[b].weight * evaluated[&key];
        }
    }
    let total: f64 = state.blocks.iter().map(|b| b.weight).sum();
    values.mapv_inplace(|v| v / total);
    Ok(WignerGrid { re: spec.re, im: spec.im, values, convention: Convention::StandardNumeric })
}

/// Density along the imaginary axis after integrating out the real part.
#[derive(Clone, Debug, PartialEq)]
pub struct Marginal {
    pub axis: Axis,
    pub values: Vec<f64>,
    pub convention: Convention,
}

impl Marginal {
    pub fn integral(&self) -> f64 {
        trapezoid(self.values.iter().copied(), self.axis.step())
    }

    /// Mass below `t` for the piecewise-linear interpolant.
    fn cumulative(&self, t: f64) -> f64 {
        let h = self.axis.step();
        let mut acc = 0.0;
        for i in 0..self.values.len() - 1 {
            let (a, b) = (self.axis.point(i), self.axis.point(i + 1));
            if t <= a {
                break;
            }
            let (fa, fb) = (self.values[i], self.values[i + 1]);
            if t >= b {
                acc += 0.5 * (fa + fb) * h;
            } else {
                let u = t - a;
                let ft = fa + (fb - fa) * u / h;
                acc += 0.5 * (fa + ft) * u;
                break;
            }
        }
        acc
    }
}

/// Trapezoidal integration over the real axis, normalised to unit mass.
pub fn marginal_p(w: &WignerGrid) -> Marginal {
    let hr = w.re.step();
    let values: Vec<f64> = (0..w.im.count).map(|j| trapezoid(w.values.column(j).iter().copied(), hr)).collect();
    let mut m = Marginal { axis: w.im, values, convention: w.convention };
    let total = m.integral();
    if total > 0.0 {
        m.values.iter_mut().for_each(|v| *v /= total);
    }
    m
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HistogramMethod {
    MarginalIntegration,
    Direct,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhononHistogram {
    pub probabilities: Vec<f64>,
    pub method: HistogramMethod,
}

impl PhononHistogram {
    /// The thermal law itself on the protocol truncation.
    pub fn direct(p: &ProtocolParams) -> Result<Self> {
        Ok(Self { probabilities: p.phonon_distribution()?, method: HistogramMethod::Direct })
    }

    /// `½ Σ |p_n − P(n)|` against the untruncated geometric law, tail included.
    pub fn total_variation_to_thermal(&self, thermal_n: f64) -> f64 {
        total_variation_to_geometric(&self.probabilities, thermal_n)
    }
}

/// Total variation between `probs` (zero beyond its length) and `P(n) = Nⁿ/(N+1)^{n+1}`.
pub fn total_variation_to_geometric(probs: &[f64], thermal_n: f64) -> f64 {
    let q = thermal_n / (thermal_n + 1.0);
    let mut pn = 1.0 / (thermal_n + 1.0);
    let mut acc = 0.0;
    for &x in probs {
        acc += (x - pn).abs();
        pn *= q;
    }
    // remaining mass of the geometric law beyond the histogram
    acc += q.powi(probs.len() as i32);
    0.5 * acc
}

/// Raised when neighbouring sectors overlap enough to bias the histogram.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct OverlapWarning {
    pub squeeze_r: f64,
    pub threshold: f64,
    /// Probability that one sector's Gaussian falls outside its own bin.
    pub leakage: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Reconstruction {
    pub histogram: PhononHistogram,
    pub warning: Option<OverlapWarning>,
}

/// Gaussian mass outside `±spacing/2` for one interior sector.
pub fn sector_leakage(p: &ProtocolParams, convention: Convention) -> f64 {
    let (_, sim) = convention.widths(p.squeeze_r);
    libm::erfc(convention.spacing(p.pulse_area) / (2.0 * sim * std::f64::consts::SQRT_2))
}

/// Bin the marginal into sectors `[(n−½)s, (n+½)s]`, the `n = 0` bin open below.
pub fn reconstruct_pn(marginal: &Marginal, p: &ProtocolParams) -> Result<Reconstruction> {
    p.validate()?;
    let s = marginal.convention.spacing(p.pulse_area);
    let top = marginal.axis.max;
    let bins = ((top / s + 0.5).floor().max(0.0) as usize) + 1;
    let mut probabilities = Vec::with_capacity(bins);
    let mut below = 0.0;
    for n in 0..bins {
        let hi = ((n as f64 + 0.5) * s).min(top);
        let c = marginal.cumulative(hi);
        probabilities.push((c - below).max(0.0));
        below = c;
    }
    let warning = if protocol::is_distinguishable(p)? {
        None
    } else {
        Some(OverlapWarning {
            squeeze_r: p.squeeze_r,
            threshold: protocol::distinguishability_threshold(p.pulse_area)?,
            leakage: sector_leakage(p, marginal.convention),
        })
    };
    Ok(Reconstruction {
        histogram: PhononHistogram { probabilities, method: HistogramMethod::MarginalIntegration },
        warning,
    })
}

/// CSV `re,im,w`, real axis outermost.
pub fn write_grid_csv<W: Write>(w: &WignerGrid, out: W) -> Result<()> {
    let mut csv = csv::Writer::from_writer(out);
    csv.write_record(["re", "im", "w"])?;
    for i in 0..w.re.count {
        let x = w.re.point(i).to_string();
        for j in 0..w.im.count {
            csv.write_record([x.as_str(), &w.im.point(j).to_string(), &w.values[[i, j]].to_string()])?;
        }
    }
    csv.flush()?;
    Ok(())
}

/// CSV `coordinate,value`.
pub fn write_marginal_csv<W: Write>(m: &Marginal, out: W) -> Result<()> {
    let mut csv = csv::Writer::from_writer(out);
    csv.write_record(["coordinate", "value"])?;
    for (j, v) in m.values.iter().enumerate() {
        csv.write_record([m.axis.point(j).to_string(), v.to_string()])?;
    }
    csv.flush()?;
    Ok(())
}

/// CSV `n,p`.
pub fn write_histogram_csv<W: Write>(h: &PhononHistogram, out: W) -> Result<()> {
    let mut csv = csv::Writer::from_writer(out);
    csv.write_record(["n", "p"])?;
    for (n, v) in h.probabilities.iter().enumerate() {
        csv.write_record([n.to_string(), v.to_string()])?;
    }
    csv.flush()?;
    Ok(())
}

/// Provenance written next to every exported table.
#[derive(Clone, Debug, Serialize)]
pub struct Sidecar<'a> {
    pub file: &'a str,
    pub params: &'a ProtocolParams,
    pub convention: Convention,
    pub grid: Option<GridSpec>,
    pub seed: Option<u64>,
}

pub fn write_sidecar<W: Write>(sidecar: &Sidecar<'_>, mut out: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, sidecar)?;
    out.write_all(b"\n")?;
    Ok(())
}

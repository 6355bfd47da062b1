//! Small dense/banded complex linear algebra used by the Fock-space engine.
//!
//! Everything here works on `ndarray` containers of `Complex64`. The matrix
//! exponential is scaling-and-squaring over a Taylor series; the banded
//! `expm_action` never forms the dense exponential and is what makes
//! heavily squeezed states affordable.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use num_complex::Complex64 as C64;

/// Max absolute row sum (the induced ∞-norm).
pub fn norm_inf(m: ArrayView2<C64>) -> f64 {
    m.rows().into_iter().map(|r| r.iter().map(|z| z.norm()).sum::<f64>()).fold(0.0, f64::max)
}

/// Largest entry magnitude.
pub fn max_abs(m: ArrayView2<C64>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn dagger(m: ArrayView2<C64>) -> Array2<C64> {
    m.t().mapv(|z| z.conj())
}

pub fn identity(dim: usize) -> Array2<C64> {
    Array2::from_diag_elem(dim, C64::new(1.0, 0.0))
}

pub fn kron(a: ArrayView2<C64>, b: ArrayView2<C64>) -> Array2<C64> {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    let mut out = Array2::zeros((ar * br, ac * bc));
    for i in 0..ar {
        for j in 0..ac {
            let s = a[[i, j]];
            if s == C64::new(0.0, 0.0) {
                continue;
            }
            let mut blk = out.slice_mut(ndarray::s![i * br..(i + 1) * br, j * bc..(j + 1) * bc]);
            blk.zip_mut_with(&b, |o, &x| *o = s * x);
        }
    }
    out
}

pub fn trace(m: ArrayView2<C64>) -> C64 {
    m.diag().sum()
}

pub fn inner(a: ArrayView1<C64>, b: ArrayView1<C64>) -> C64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}

/// Dense matrix exponential, scaling-and-squaring with a Taylor core.
///
/// The scaled matrix has ∞-norm at most 1/2 and the series is summed until
/// the next term is below machine precision relative to the partial sum.
pub fn expm(m: ArrayView2<C64>) -> Array2<C64> {
    let n = m.nrows();
    assert_eq!(n, m.ncols(), "expm needs a square matrix");
    let norm = norm_inf(m);
    let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let scale = 0.5f64.powi(squarings);
    let b = m.mapv(|z| z * scale);

    let mut sum = identity(n);
    let mut term = identity(n);
    for k in 1..=40 {
        term = term.dot(&b).mapv(|z| z / k as f64);
        sum += &term;
        if norm_inf(term.view()) <= 1e-18 * norm_inf(sum.view()).max(1.0) {
            break;
        }
    }
    for _ in 0..squarings {
        sum = sum.dot(&sum);
    }
    sum
}

/// Sparse matrix stored by diagonals: `diags[k] = (offset, values)` with
/// `values[p]` sitting at `(row, row + offset)`, `row = p + max(0, -offset)`.
#[derive(Clone, Debug)]
pub struct Banded {
    dim: usize,
    diags: Vec<(isize, Vec<C64>)>,
}

impl Banded {
    pub fn new(dim: usize) -> Self {
        Self { dim, diags: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Add `values` on diagonal `offset` (summing into an existing one).
    pub fn add_diag(&mut self, offset: isize, values: Vec<C64>) {
        assert_eq!(values.len(), self.dim - offset.unsigned_abs(), "diagonal length");
        if let Some((_, v)) = self.diags.iter_mut().find(|(o, _)| *o == offset) {
            v.iter_mut().zip(values).for_each(|(a, b)| *a += b);
        } else {
            self.diags.push((offset, values));
        }
    }

    pub fn scaled(&self, s: C64) -> Self {
        Self { dim: self.dim, diags: self.diags.iter().map(|(o, v)| (*o, v.iter().map(|z| z * s).collect())).collect() }
    }

    fn row_start(offset: isize) -> usize {
        if offset < 0 {
            offset.unsigned_abs()
        } else {
            0
        }
    }

    pub fn apply(&self, v: ArrayView1<C64>) -> Array1<C64> {
        let mut out = Array1::zeros(self.dim);
        self.apply_into(v, &mut out);
        out
    }

    fn apply_into(&self, v: ArrayView1<C64>, out: &mut Array1<C64>) {
        out.fill(C64::new(0.0, 0.0));
        for (offset, vals) in &self.diags {
            let r0 = Self::row_start(*offset);
            for (p, val) in vals.iter().enumerate() {
                let row = r0 + p;
                let col = (row as isize + offset) as usize;
                out[row] += val * v[col];
            }
        }
    }

    pub fn norm_inf(&self) -> f64 {
        let mut rows = vec![0.0; self.dim];
        for (offset, vals) in &self.diags {
            let r0 = Self::row_start(*offset);
            for (p, val) in vals.iter().enumerate() {
                rows[r0 + p] += val.norm();
            }
        }
        rows.into_iter().fold(0.0, f64::max)
    }

    pub fn to_dense(&self) -> Array2<C64> {
        let mut m = Array2::zeros((self.dim, self.dim));
        for (offset, vals) in &self.diags {
            let r0 = Self::row_start(*offset);
            for (p, val) in vals.iter().enumerate() {
                let row = r0 + p;
                m[[row, (row as isize + offset) as usize]] += *val;
            }
        }
        m
    }

    /// `exp(self) · v` without forming the exponential.
    ///
    /// The interval is cut into substeps of ∞-norm ≤ 1 and each substep is a
    /// Taylor series run to machine precision.
    pub fn expm_action(&self, v: ArrayView1<C64>) -> Array1<C64> {
        let norm = self.norm_inf();
        let steps = norm.ceil().max(1.0) as usize;
        let h = 1.0 / steps as f64;
        let mut w = v.to_owned();
        let mut term = Array1::zeros(self.dim);
        let mut next = Array1::zeros(self.dim);
        for _ in 0..steps {
            term.assign(&w);
            for k in 1..=60 {
                self.apply_into(term.view(), &mut next);
                let c = h / k as f64;
                next.mapv_inplace(|z| z * c);
                std::mem::swap(&mut term, &mut next);
                w += &term;
                let tn = term.iter().map(|z| z.norm()).fold(0.0, f64::max);
                if tn <= 1e-17 * w.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1e-300) {
                    break;
                }
            }
        }
        w
    }
}

/// Cholesky test for positive semidefiniteness of a Hermitian matrix:
/// factorises `m + shift·I` and reports whether every pivot stayed positive.
pub fn is_psd_with_shift(m: ArrayView2<C64>, shift: f64) -> bool {
    let n = m.nrows();
    let mut l = Array2::<C64>::zeros((n, n));
    for j in 0..n {
        let mut d = m[[j, j]].re + shift;
        for k in 0..j {
            d -= l[[j, k]].norm_sqr();
        }
        if d <= 0.0 {
            return false;
        }
        let d = d.sqrt();
        l[[j, j]] = C64::new(d, 0.0);
        for i in (j + 1)..n {
            let mut s = m[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]].conj();
            }
            l[[i, j]] = s / d;
        }
    }
    true
}

//! Small dense complex helpers shared by the beamforming, WPE and GSS kernels.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

pub(crate) fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// `(m + m^H) / 2`.
pub fn hermitize(m: &CMat) -> CMat {
    (m + m.adjoint()) * c(0.5)
}

pub fn trace_re(m: &CMat) -> f64 {
    m.diagonal().iter().map(|x| x.re).sum()
}

/// Adds `rel * trace(m) / K` to the diagonal.
pub fn load_diagonal(m: &CMat, rel: f64) -> CMat {
    let k = m.nrows();
    let eps = rel * trace_re(m) / k as f64;
    m + CMat::identity(k, k) * c(eps)
}

/// Solves `a x = b`; `None` when `a` is numerically singular or the result is non-finite.
pub fn solve(a: &CMat, b: &CMat) -> Option<CMat> {
    let x = a.clone().lu().solve(b)?;
    x.iter().all(|v| v.re.is_finite() && v.im.is_finite()).then_some(x)
}

pub fn is_finite(m: &CMat) -> bool {
    m.iter().all(|v| v.re.is_finite() && v.im.is_finite())
}

/// `v^H m v`, real part.
pub fn quad_form(m: &CMat, v: &CVec) -> f64 {
    quad_form_slice(m, v.as_slice())
}

/// [`quad_form`] without allocating.
pub fn quad_form_slice(m: &CMat, v: &[Complex64]) -> f64 {
    let k = v.len();
    let mut acc = Complex64::new(0.0, 0.0);
    for j in 0..k {
        let mut col = Complex64::new(0.0, 0.0);
        for i in 0..k {
            col += v[i].conj() * m[(i, j)];
        }
        acc += col * v[j];
    }
    acc.re
}

/// `m += w * v v^H` in place.
pub fn add_outer(m: &mut CMat, v: &[Complex64], w: f64) {
    let k = v.len();
    for j in 0..k {
        let vj = v[j].conj() * w;
        for i in 0..k {
            m[(i, j)] += v[i] * vj;
        }
    }
}

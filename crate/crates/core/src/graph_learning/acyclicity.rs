//! Smooth acyclicity measure `h(A) = tr(exp(A ∘ A)) − N`.

use nalgebra::DMatrix;

use crate::error::{shape_err, Error, Result};

/// Matrix exponential by scaling and squaring around a truncated Taylor core.
///
/// The input is scaled by `2^-s` until its 1-norm is at most 1/2, where an
/// 18-term Taylor polynomial is accurate to double precision, then the
/// result is squared `s` times.
pub fn expm(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let norm = m.column_iter().map(|c| c.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let mut squarings = 0u32;
    if norm > 0.5 {
        squarings = (norm / 0.5).log2().ceil() as u32;
    }
    let scaled = m * 0.5f64.powi(squarings as i32);
    let mut result = DMatrix::<f64>::identity(n, n);
    let mut term = DMatrix::<f64>::identity(n, n);
    for k in 1..=18 {
        term = &term * &scaled / k as f64;
        result += &term;
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

/// Value and gradient of the acyclicity constraint.
#[derive(Clone, Debug)]
pub struct Acyclicity {
    pub h: f64,
    /// `∇h = exp(A ∘ A)ᵀ ∘ 2A`.
    pub grad: DMatrix<f64>,
}

pub fn acyclicity(a: &DMatrix<f64>) -> Result<Acyclicity> {
    if a.nrows() != a.ncols() {
        return shape_err("acyclicity", format!("expected a square matrix, got {}x{}", a.nrows(), a.ncols()));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("acyclicity input".into()));
    }
    let e = expm(&a.component_mul(a));
    let h = e.trace() - a.nrows() as f64;
    let grad = e.transpose().component_mul(a) * 2.0;
    Ok(Acyclicity { h, grad })
}

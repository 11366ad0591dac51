//! Linear DAG structure learning with a smooth acyclicity constraint.
//!
//! Minimizes `(1/2B)‖X − XA‖²_F + λ‖A‖₁` subject to `h(A) = 0` by an
//! augmented Lagrangian. The ℓ1 term is handled by splitting
//! `A = A⁺ − A⁻` with both halves nonnegative, which keeps every inner
//! problem smooth for the projected L-BFGS solver.

use nalgebra::DMatrix;

use super::acyclicity::acyclicity;
use super::lbfgs::{lbfgs_minimize_bounded, Bounds, LbfgsOptions};
use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

/// Samples (rows) over nodes (columns) plus the sparsity weight.
#[derive(Clone, Debug)]
pub struct NotearsProblem {
    samples: DMatrix<f64>,
    pub lambda: f64,
}

impl NotearsProblem {
    /// Centers every column; requires at least two samples.
    pub fn new(samples: &Tensor, lambda: f64) -> Result<Self> {
        if samples.rank() != 2 {
            return shape_err("notears", format!("samples must be a B x N matrix, got {:?}", samples.shape()));
        }
        let (b, n) = (samples.rows(), samples.cols());
        if b < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 samples, got {b}")));
        }
        if !(lambda >= 0.0) {
            return Err(Error::InvalidArgument(format!("lambda must be nonnegative, got {lambda}")));
        }
        samples.ensure_finite("notears samples")?;
        let mut x = DMatrix::from_row_slice(b, n, samples.data());
        for mut col in x.column_iter_mut() {
            let mean = col.mean();
            col.add_scalar_mut(-mean);
        }
        Ok(Self { samples: x, lambda })
    }

    pub fn sample_count(&self) -> usize {
        self.samples.nrows()
    }

    pub fn nodes(&self) -> usize {
        self.samples.ncols()
    }

    /// `(1/2B)‖X − XA‖²_F + λ‖A‖₁` on the unscaled samples.
    pub fn score(&self, a: &DMatrix<f64>) -> f64 {
        let r = &self.samples - &self.samples * a;
        r.norm_squared() / (2.0 * self.sample_count() as f64) + self.lambda * a.abs().sum()
    }
}

#[derive(Clone, Debug)]
pub struct NotearsOptions {
    pub h_tol: f64,
    pub rho_max: f64,
    pub max_outer: usize,
    pub inner: LbfgsOptions,
}

impl Default for NotearsOptions {
    fn default() -> Self {
        Self {
            h_tol: 1e-8,
            rho_max: 1e16,
            max_outer: 100,
            inner: LbfgsOptions {
                max_iter: 2000,
                ftol: 2.2e-9,
                ..LbfgsOptions::default()
            },
        }
    }
}

#[derive(Clone, Debug)]
pub struct NotearsResult {
    /// Signed weighted adjacency, `N × N`, zero diagonal.
    pub weights: Tensor,
    pub h: f64,
    pub rho: f64,
    pub converged: bool,
}

/// Augmented-Lagrangian objective over the split variables `[A⁺; A⁻]`.
struct Subproblem<'a> {
    cov: &'a DMatrix<f64>,
    lambda: f64,
    rho: f64,
    alpha: f64,
    n: usize,
}

impl Subproblem<'_> {
    fn adjacency(&self, w: &[f64]) -> DMatrix<f64> {
        let nn = self.n * self.n;
        DMatrix::from_fn(self.n, self.n, |i, j| w[i * self.n + j] - w[nn + i * self.n + j])
    }

    fn eval(&self, w: &[f64]) -> (f64, Vec<f64>) {
        let n = self.n;
        let a = self.adjacency(w);
        // With C = XᵀX / B: loss = ½ tr((I − A)ᵀ C (I − A)), ∇loss = −C (I − A).
        let i_minus_a = DMatrix::<f64>::identity(n, n) - &a;
        let c_ima = self.cov * &i_minus_a;
        let loss = 0.5 * i_minus_a.component_mul(&c_ima).sum();
        let Ok(acyc) = acyclicity(&a) else {
            return (f64::NAN, vec![f64::NAN; w.len()]);
        };
        let h = acyc.h;
        let smooth_grad = -c_ima + acyc.grad * (self.rho * h + self.alpha);
        let value = loss + 0.5 * self.rho * h * h + self.alpha * h + self.lambda * w.iter().sum::<f64>();
        let mut grad = vec![0.0; w.len()];
        for i in 0..n {
            for j in 0..n {
                let gij = smooth_grad[(i, j)];
                grad[i * n + j] = gij + self.lambda;
                grad[n * n + i * n + j] = -gij + self.lambda;
            }
        }
        (value, grad)
    }
}

/// Solves the constrained problem.
///
/// The centered samples are divided by their root-mean-square so that `λ`
/// acts on a unit data scale; a common rescale of all columns leaves the
/// least-squares weights unchanged.
pub fn notears_fit(problem: &NotearsProblem, opts: &NotearsOptions) -> Result<NotearsResult> {
    let n = problem.nodes();
    let b = problem.sample_count() as f64;
    let rms = (problem.samples.norm_squared() / (b * n as f64)).sqrt();
    let scale = if rms > 0.0 { 1.0 / rms } else { 1.0 };
    let cov = problem.samples.transpose() * &problem.samples * (scale * scale / b);

    let nn = n * n;
    let mut fixed = vec![false; 2 * nn];
    for i in 0..n {
        fixed[i * n + i] = true;
        fixed[nn + i * n + i] = true;
    }
    let bounds = Bounds {
        nonneg: vec![true; 2 * nn],
        fixed,
    };

    let mut w = vec![0.0; 2 * nn];
    let (mut rho, mut alpha, mut h) = (1.0, 0.0, f64::INFINITY);
    for _ in 0..opts.max_outer {
        let (w_new, h_new) = loop {
            let sub = Subproblem {
                cov: &cov,
                lambda: problem.lambda,
                rho,
                alpha,
                n,
            };
            let res = lbfgs_minimize_bounded(|x| sub.eval(x), &w, &bounds, &opts.inner)?;
            let h_new = acyclicity(&sub.adjacency(&res.x))?.h;
            if h_new > 0.25 * h && rho < opts.rho_max {
                rho *= 10.0;
            } else {
                break (res.x, h_new);
            }
        };
        w = w_new;
        h = h_new;
        alpha += rho * h;
        if h <= opts.h_tol || rho >= opts.rho_max {
            break;
        }
    }
    let a = DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { w[i * n + j] - w[nn + i * n + j] });
    let converged = h <= opts.h_tol;
    if !converged {
        log::warn!("NOTEARS stopped with h = {h:e} above tolerance {:e} (rho = {rho:e})", opts.h_tol);
    }
    let weights = Tensor::from_fn(n, n, |i, j| a[(i, j)]);
    Ok(NotearsResult {
        weights,
        h,
        rho,
        converged,
    })
}

//! Limited-memory BFGS with a backtracking Armijo line search.
//!
//! Supports simple bounds of the form `x_i ≥ 0` and coordinates pinned at
//! zero through [`Bounds`]; the search direction is computed on the free
//! coordinates and each trial point is projected back onto the feasible set.

use std::collections::VecDeque;

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct LbfgsOptions {
    /// Number of correction pairs kept.
    pub memory: usize,
    /// Stop once the (projected) gradient's ∞-norm is at most this.
    pub tol: f64,
    pub max_iter: usize,
    /// Armijo sufficient-decrease constant.
    pub c1: f64,
    pub max_halvings: usize,
    /// Also stop once an accepted step lowers the value by at most
    /// `ftol · max(|f_k|, |f_k+1|, 1)`; 0 disables this test.
    pub ftol: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            memory: 10,
            tol: 1e-6,
            max_iter: 1000,
            c1: 1e-4,
            max_halvings: 50,
            ftol: 0.0,
        }
    }
}

/// Feasible set for [`lbfgs_minimize_bounded`].
#[derive(Clone, Debug, Default)]
pub struct Bounds {
    /// `nonneg[i] = true` constrains `x_i ≥ 0`.
    pub nonneg: Vec<bool>,
    /// `fixed[i] = true` pins `x_i` at zero.
    pub fixed: Vec<bool>,
}

impl Bounds {
    pub fn all_nonneg(n: usize) -> Self {
        Self {
            nonneg: vec![true; n],
            fixed: vec![false; n],
        }
    }

    fn project(&self, x: &mut [f64]) {
        for i in 0..x.len() {
            let fixed = self.fixed.get(i).copied().unwrap_or(false);
            if fixed || (self.nonneg.get(i).copied().unwrap_or(false) && x[i] < 0.0) {
                x[i] = 0.0;
            }
        }
    }

    /// Coordinates that cannot move along `-g` from `x`.
    fn active(&self, x: &[f64], g: &[f64]) -> Vec<bool> {
        (0..x.len())
            .map(|i| {
                self.fixed.get(i).copied().unwrap_or(false)
                    || (self.nonneg.get(i).copied().unwrap_or(false) && x[i] <= 0.0 && g[i] > 0.0)
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    /// Gradient tolerance reached.
    pub converged: bool,
    /// The line search could not find a decrease.
    pub line_search_failed: bool,
    /// Objective value at the start and after every accepted step.
    pub path: Vec<f64>,
}

/// Unconstrained minimization of `f`, which returns `(value, gradient)`.
pub fn lbfgs_minimize<F>(f: F, x0: &[f64], opts: &LbfgsOptions) -> Result<LbfgsResult>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let bounds = Bounds {
        nonneg: vec![false; x0.len()],
        fixed: vec![false; x0.len()],
    };
    lbfgs_minimize_bounded(f, x0, &bounds, opts)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Projected L-BFGS over the feasible set described by `bounds`.
///
/// Function values along the returned path never increase, so the result
/// is never worse than the (projected) starting point.
pub fn lbfgs_minimize_bounded<F>(mut f: F, x0: &[f64], bounds: &Bounds, opts: &LbfgsOptions) -> Result<LbfgsResult>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    if opts.memory == 0 {
        return Err(Error::InvalidArgument("L-BFGS memory must be at least 1".into()));
    }
    let n = x0.len();
    let mut x = x0.to_vec();
    bounds.project(&mut x);
    let (mut fx, mut g) = f(&x);
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) || g.len() != n {
        return Err(Error::NonFinite("L-BFGS objective at the starting point".into()));
    }
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut iterations = 0;
    let mut line_search_failed = false;
    let mut path = vec![fx];

    loop {
        let active = bounds.active(&x, &g);
        let pg: Vec<f64> = g.iter().zip(&active).map(|(&gi, &a)| if a { 0.0 } else { gi }).collect();
        if inf_norm(&pg) <= opts.tol {
            return Ok(LbfgsResult {
                x,
                value: fx,
                iterations,
                converged: true,
                line_search_failed,
                path,
            });
        }
        if iterations >= opts.max_iter {
            break;
        }

        // Two-loop recursion on the free coordinates.
        let mut q = pg.clone();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * dot(s, &q);
            for i in 0..n {
                q[i] -= a * y[i];
            }
            alphas.push(a);
        }
        let gamma = match history.back() {
            Some((s, y, _)) => dot(s, y) / dot(y, y),
            None => 1.0 / inf_norm(&pg).max(1.0),
        };
        for v in &mut q {
            *v *= gamma;
        }
        for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            for i in 0..n {
                q[i] += (a - b) * s[i];
            }
        }
        let mut d: Vec<f64> = q.iter().zip(&active).map(|(&v, &a)| if a { 0.0 } else { -v }).collect();
        if dot(&d, &pg) >= 0.0 {
            // Not a descent direction: restart from steepest descent.
            history.clear();
            let scale = 1.0 / inf_norm(&pg).max(1.0);
            d = pg.iter().map(|v| -v * scale).collect();
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let mut trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + step * di).collect();
            bounds.project(&mut trial);
            let moved: Vec<f64> = trial.iter().zip(&x).map(|(t, xi)| t - xi).collect();
            let (ft, gt) = f(&trial);
            if ft.is_finite() && gt.iter().all(|v| v.is_finite()) && ft <= fx + opts.c1 * dot(&g, &moved) && ft <= fx {
                accepted = Some((trial, ft, gt, moved));
                break;
            }
            step *= 0.5;
        }
        let Some((x_new, f_new, g_new, s)) = accepted else {
            if history.is_empty() {
                line_search_failed = true;
                break;
            }
            history.clear();
            iterations += 1;
            continue;
        };
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-10 * dot(&y, &y) {
            if history.len() == opts.memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        let small_decrease = fx - f_new <= opts.ftol * fx.abs().max(f_new.abs()).max(1.0);
        x = x_new;
        fx = f_new;
        path.push(fx);
        g = g_new;
        iterations += 1;
        if opts.ftol > 0.0 && small_decrease {
            return Ok(LbfgsResult {
                x,
                value: fx,
                iterations,
                converged: true,
                line_search_failed,
                path,
            });
        }
    }
    if line_search_failed {
        log::warn!("L-BFGS line search found no decrease after {} halvings", opts.max_halvings);
    }
    Ok(LbfgsResult {
        x,
        value: fx,
        iterations,
        converged: false,
        line_search_failed,
        path,
    })
}

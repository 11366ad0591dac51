//! Graph convolution primitives: adjacency normalization, K-hop
//! propagation, and the graph-convolutional GRU cell.

use rand::Rng;

use crate::autodiff::{Gradients, Tape, Var};
use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

/// Weighted directed graph; entry `(i, j)` is the weight of edge `i → j`.
#[derive(Clone, Debug, PartialEq)]
pub struct AdjMatrix {
    weights: Tensor,
}

impl AdjMatrix {
    pub fn new(weights: Tensor) -> Result<Self> {
        if weights.rank() != 2 || weights.rows() != weights.cols() {
            return shape_err("adjacency", format!("expected a square matrix, got {:?}", weights.shape()));
        }
        if let Some(v) = weights.data().iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "adjacency weights must be finite and nonnegative, found {v}"
            )));
        }
        Ok(Self { weights })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            weights: Tensor::zeros(&[n, n]),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            weights: Tensor::identity(n),
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(Tensor::from_rows(rows)?)
    }

    pub fn n(&self) -> usize {
        self.weights.rows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.weights.get2(i, j)
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn into_weights(self) -> Tensor {
        self.weights
    }

    pub fn row_sums(&self) -> Vec<f64> {
        let n = self.n();
        (0..n).map(|i| (0..n).map(|j| self.get(i, j)).sum()).collect()
    }

    pub fn edge_count(&self) -> usize {
        self.weights.data().iter().filter(|&&w| w > 0.0).count()
    }

    /// Relabels nodes so that node `perm[i]` of the result is node `i` here.
    pub fn permute(&self, perm: &[usize]) -> Self {
        let n = self.n();
        let mut out = Tensor::zeros(&[n, n]);
        for i in 0..n {
            for j in 0..n {
                out.set2(perm[i], perm[j], self.get(i, j));
            }
        }
        Self { weights: out }
    }
}

/// Row-normalizes `A` into `D⁻¹A` using out-degrees.
///
/// Rows with zero out-degree first receive a unit self-loop, so every row of
/// the result sums to one.
pub fn normalize_adjacency(adj: &AdjMatrix) -> Result<AdjMatrix> {
    let n = adj.n();
    let mut w = adj.weights.clone();
    for i in 0..n {
        let mut deg: f64 = (0..n).map(|j| w.get2(i, j)).sum();
        if deg <= 0.0 {
            w.set2(i, i, 1.0);
            deg = 1.0;
        }
        for j in 0..n {
            let v = w.get2(i, j) / deg;
            w.set2(i, j, v);
        }
    }
    let out = AdjMatrix::new(w)?;
    debug_assert!(out.row_sums().iter().all(|s| (s - 1.0).abs() <= 1e-12));
    Ok(out)
}

/// Per-hop projections of a K-hop graph convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct KhopWeights {
    /// `w[k]` has shape `d_in × d_out`, for hops `0..=K`.
    pub w: Vec<Tensor>,
    pub alpha: f64,
    pub beta: f64,
}

impl KhopWeights {
    /// Uniform init in `±1/√d_in`.
    pub fn init(d_in: usize, d_out: usize, hops: usize, alpha: f64, beta: f64, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (d_in.max(1) as f64).sqrt();
        let w = (0..=hops)
            .map(|_| Tensor::from_fn(d_in, d_out, |_, _| rng.gen_range(-bound..=bound)))
            .collect();
        Self { w, alpha, beta }
    }

    pub fn zeros(d_in: usize, d_out: usize, hops: usize, alpha: f64, beta: f64) -> Self {
        Self {
            w: (0..=hops).map(|_| Tensor::zeros(&[d_in, d_out])).collect(),
            alpha,
            beta,
        }
    }

    pub fn hops(&self) -> usize {
        self.w.len().saturating_sub(1)
    }

    pub fn d_in(&self) -> usize {
        self.w.first().map_or(0, Tensor::rows)
    }

    pub fn d_out(&self) -> usize {
        self.w.first().map_or(0, Tensor::cols)
    }

    pub fn bind<'t>(&self, tape: &'t Tape) -> KhopVars<'t> {
        KhopVars {
            w: self.w.iter().map(|t| tape.leaf(t.clone())).collect(),
            alpha: self.alpha,
            beta: self.beta,
        }
    }
}

pub struct KhopVars<'t> {
    pub w: Vec<Var<'t>>,
    pub alpha: f64,
    pub beta: f64,
}

impl KhopVars<'_> {
    pub fn grads(&self, g: &Gradients) -> KhopWeights {
        KhopWeights {
            w: self.w.iter().map(|&v| g.wrt(v)).collect(),
            alpha: self.alpha,
            beta: self.beta,
        }
    }
}

/// `Σₖ H⁽ᵏ⁾ W⁽ᵏ⁾` with `H⁽⁰⁾ = H_in` and `H⁽ᵏ⁾ = α H_in + β Ã H⁽ᵏ⁻¹⁾`.
pub fn khop_conv<'t>(h_in: Var<'t>, a_norm: Var<'t>, w: &KhopVars<'t>) -> Result<Var<'t>> {
    if w.w.is_empty() {
        return Err(Error::InvalidArgument("k-hop weights need at least one hop".into()));
    }
    let mut out = h_in.matmul(w.w[0])?;
    if w.w.len() > 1 {
        let scaled_in = h_in.scale(w.alpha);
        let mut h = h_in;
        for wk in &w.w[1..] {
            h = scaled_in.add(a_norm.block_matmul(h)?.scale(w.beta))?;
            out = out.add(h.matmul(*wk)?)?;
        }
    }
    Ok(out)
}

/// Gate parameters of a graph-convolutional GRU cell.
#[derive(Clone, Debug, PartialEq)]
pub struct GcrnParams {
    pub theta_r: KhopWeights,
    pub theta_u: KhopWeights,
    pub theta_c: KhopWeights,
}

impl GcrnParams {
    pub fn init(d_x: usize, d_h: usize, hops: usize, alpha: f64, beta: f64, rng: &mut impl Rng) -> Self {
        let d_in = d_x + d_h;
        Self {
            theta_r: KhopWeights::init(d_in, d_h, hops, alpha, beta, rng),
            theta_u: KhopWeights::init(d_in, d_h, hops, alpha, beta, rng),
            theta_c: KhopWeights::init(d_in, d_h, hops, alpha, beta, rng),
        }
    }

    pub fn zeros(d_x: usize, d_h: usize, hops: usize, alpha: f64, beta: f64) -> Self {
        let d_in = d_x + d_h;
        Self {
            theta_r: KhopWeights::zeros(d_in, d_h, hops, alpha, beta),
            theta_u: KhopWeights::zeros(d_in, d_h, hops, alpha, beta),
            theta_c: KhopWeights::zeros(d_in, d_h, hops, alpha, beta),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.theta_r.d_out()
    }

    pub fn input_dim(&self) -> usize {
        self.theta_r.d_in() - self.hidden_dim()
    }

    pub fn gates(&self) -> [&KhopWeights; 3] {
        [&self.theta_r, &self.theta_u, &self.theta_c]
    }

    pub fn gates_mut(&mut self) -> [&mut KhopWeights; 3] {
        [&mut self.theta_r, &mut self.theta_u, &mut self.theta_c]
    }

    pub fn bind<'t>(&self, tape: &'t Tape) -> GcrnVars<'t> {
        GcrnVars {
            theta_r: self.theta_r.bind(tape),
            theta_u: self.theta_u.bind(tape),
            theta_c: self.theta_c.bind(tape),
            one: tape.constant(Tensor::scalar(1.0)),
        }
    }
}

pub struct GcrnVars<'t> {
    pub theta_r: KhopVars<'t>,
    pub theta_u: KhopVars<'t>,
    pub theta_c: KhopVars<'t>,
    one: Var<'t>,
}

impl GcrnVars<'_> {
    pub fn grads(&self, g: &Gradients) -> GcrnParams {
        GcrnParams {
            theta_r: self.theta_r.grads(g),
            theta_u: self.theta_u.grads(g),
            theta_c: self.theta_c.grads(g),
        }
    }
}

/// One recurrent step:
///
/// ```text
/// r = σ(Θ_r ⋆ [x | H])
/// u = σ(Θ_u ⋆ [x | H])
/// C = tanh(Θ_C ⋆ [x | r ⊙ H])
/// H' = u ⊙ C + (1 − u) ⊙ H
/// ```
pub fn gcrn_step<'t>(x: Var<'t>, h_prev: Var<'t>, a_norm: Var<'t>, p: &GcrnVars<'t>) -> Result<Var<'t>> {
    let xh = x.concat(h_prev)?;
    let r = khop_conv(xh, a_norm, &p.theta_r)?.sigmoid();
    let u = khop_conv(xh, a_norm, &p.theta_u)?.sigmoid();
    let xrh = x.concat(r.hadamard(h_prev)?)?;
    let c = khop_conv(xrh, a_norm, &p.theta_c)?.tanh();
    let keep = p.one.sub(u)?;
    u.hadamard(c)?.add(keep.hadamard(h_prev)?)
}

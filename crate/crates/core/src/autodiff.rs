//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Tape`] records every operation applied to its [`Var`]s. Node ids are
//! assigned in creation order, so the id order is already a topological order
//! of the computation graph and [`Tape::backward`] simply walks it in reverse,
//! summing contributions from every consumer of a node.
//!
//! The op set is deliberately small: matmul, blockwise matmul, add, subtract, hadamard,
//! scalar-scale, concat along the last axis, sigmoid, tanh, sum, mean and
//! absolute value. Elementwise binary ops accept a single-element operand on
//! either side and broadcast it.

use std::cell::RefCell;

use crate::error::{shape_err, Error, Result};
use crate::tensor::{block_left_gemm, block_outer_sum, gemm, Tensor};

#[derive(Clone, Copy, Debug)]
enum Op {
    Leaf,
    Constant,
    MatMul(usize, usize),
    BlockMatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Hadamard(usize, usize),
    Scale(usize, f64),
    Concat(usize, usize),
    Sigmoid(usize),
    Tanh(usize),
    Sum(usize),
    Mean(usize),
    Abs(usize),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records a computation for later differentiation.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({})", self.id)
    }
}

/// Gradients of a scalar loss with respect to the leaves of a tape.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `var`, or `None` if the loss does not depend on it.
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    /// Gradient for `var`, zero-filled when the loss does not depend on it.
    pub fn wrt(&self, var: Var<'_>) -> Tensor {
        match self.get(var) {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[var.id]),
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A differentiable input.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// An input that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Constant, false)
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn unary(&self, a: Var<'_>, op: Op, f: impl FnOnce(&Tensor) -> Result<Tensor>) -> Result<Var<'_>> {
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            let n = &nodes[a.id];
            (f(&n.value)?, n.requires_grad)
        };
        Ok(self.push(value, op, rg))
    }

    fn binary(
        &self,
        a: Var<'_>,
        b: Var<'_>,
        op: Op,
        f: impl FnOnce(&Tensor, &Tensor) -> Result<Tensor>,
    ) -> Result<Var<'_>> {
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            let (na, nb) = (&nodes[a.id], &nodes[b.id]);
            (f(&na.value, &nb.value)?, na.requires_grad || nb.requires_grad)
        };
        Ok(self.push(value, op, rg))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if !root.value.is_scalar() {
            return shape_err(
                "backward",
                format!("loss must be scalar, got shape {:?}", root.value.shape()),
            );
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[loss.id] = Some(Tensor::full(root.value.shape(), 1.0));

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            match node.op {
                Op::Leaf | Op::Constant => {}
                Op::MatMul(a, b) => {
                    if nodes[a].requires_grad {
                        let ga = gemm(&g, false, &nodes[b].value, true)?;
                        accumulate(&mut grads, a, ga)?;
                    }
                    if nodes[b].requires_grad {
                        let gb = gemm(&nodes[a].value, true, &g, false)?;
                        accumulate(&mut grads, b, gb)?;
                    }
                }
                Op::BlockMatMul(a, h) => {
                    if nodes[a].requires_grad {
                        let n = nodes[a].value.rows();
                        accumulate(&mut grads, a, block_outer_sum(&g, &nodes[h].value, n)?)?;
                    }
                    if nodes[h].requires_grad {
                        accumulate(&mut grads, h, block_left_gemm(&nodes[a].value, true, &g)?)?;
                    }
                }
                Op::Add(a, b) => {
                    if nodes[a].requires_grad {
                        accumulate(&mut grads, a, reduce_to(&g, &nodes[a].value))?;
                    }
                    if nodes[b].requires_grad {
                        accumulate(&mut grads, b, reduce_to(&g, &nodes[b].value))?;
                    }
                }
                Op::Sub(a, b) => {
                    if nodes[a].requires_grad {
                        accumulate(&mut grads, a, reduce_to(&g, &nodes[a].value))?;
                    }
                    if nodes[b].requires_grad {
                        accumulate(&mut grads, b, reduce_to(&g.scale(-1.0), &nodes[b].value))?;
                    }
                }
                Op::Hadamard(a, b) => {
                    if nodes[a].requires_grad {
                        let ga = g.hadamard(&nodes[b].value)?;
                        accumulate(&mut grads, a, reduce_to(&ga, &nodes[a].value))?;
                    }
                    if nodes[b].requires_grad {
                        let gb = g.hadamard(&nodes[a].value)?;
                        accumulate(&mut grads, b, reduce_to(&gb, &nodes[b].value))?;
                    }
                }
                Op::Scale(a, c) => accumulate(&mut grads, a, g.scale(c))?,
                Op::Concat(a, b) => {
                    let (ga, gb) = g.split_cols(nodes[a].value.cols())?;
                    if nodes[a].requires_grad {
                        accumulate(&mut grads, a, ga)?;
                    }
                    if nodes[b].requires_grad {
                        accumulate(&mut grads, b, gb)?;
                    }
                }
                Op::Sigmoid(a) => {
                    let local = node.value.map(|s| s * (1.0 - s));
                    accumulate(&mut grads, a, g.hadamard(&local)?)?;
                }
                Op::Tanh(a) => {
                    let local = node.value.map(|t| 1.0 - t * t);
                    accumulate(&mut grads, a, g.hadamard(&local)?)?;
                }
                Op::Sum(a) => {
                    let s = g.item()?;
                    accumulate(&mut grads, a, Tensor::full(nodes[a].value.shape(), s))?;
                }
                Op::Mean(a) => {
                    let n = nodes[a].value.numel().max(1) as f64;
                    let s = g.item()? / n;
                    accumulate(&mut grads, a, Tensor::full(nodes[a].value.shape(), s))?;
                }
                Op::Abs(a) => {
                    let local = nodes[a].value.map(sign);
                    accumulate(&mut grads, a, g.hadamard(&local)?)?;
                }
            }
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(g);
            }
        }
        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Sums a broadcast gradient back down to a scalar operand's shape.
fn reduce_to(g: &Tensor, operand: &Tensor) -> Tensor {
    if g.shape() == operand.shape() {
        g.clone()
    } else {
        Tensor::full(operand.shape(), g.sum())
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: usize, g: Tensor) -> Result<()> {
    match &mut grads[id] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

impl<'t> Var<'t> {
    pub fn id(self) -> usize {
        self.id
    }

    pub fn tape(self) -> &'t Tape {
        self.tape
    }

    /// A copy of the node's value.
    pub fn value(self) -> Tensor {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn with_value<R>(self, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.tape.nodes.borrow()[self.id].value)
    }

    pub fn shape(self) -> Vec<usize> {
        self.with_value(|t| t.shape().to_vec())
    }

    fn check_same_tape(self, other: Var<'_>) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(Error::InvalidArgument("operands live on different tapes".into()))
        }
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.check_same_tape(other)?;
        self.tape
            .binary(self, other, Op::MatMul(self.id, other.id), |a, b| a.matmul(b))
    }

    /// `self · h_b` for every consecutive block of `self.rows()` rows of `h`.
    pub fn block_matmul(self, h: Var<'t>) -> Result<Var<'t>> {
        self.check_same_tape(h)?;
        self.tape
            .binary(self, h, Op::BlockMatMul(self.id, h.id), |a, b| block_left_gemm(a, false, b))
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.check_same_tape(other)?;
        self.tape
            .binary(self, other, Op::Add(self.id, other.id), |a, b| a.add(b))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.check_same_tape(other)?;
        self.tape
            .binary(self, other, Op::Sub(self.id, other.id), |a, b| a.sub(b))
    }

    pub fn hadamard(self, other: Var<'t>) -> Result<Var<'t>> {
        self.check_same_tape(other)?;
        self.tape
            .binary(self, other, Op::Hadamard(self.id, other.id), |a, b| a.hadamard(b))
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        self.tape
            .unary(self, Op::Scale(self.id, c), |a| Ok(a.scale(c)))
            .expect("scale is total")
    }

    /// Concatenation along the last (feature) axis of two matrices.
    pub fn concat(self, other: Var<'t>) -> Result<Var<'t>> {
        self.check_same_tape(other)?;
        self.tape
            .binary(self, other, Op::Concat(self.id, other.id), |a, b| a.concat_cols(b))
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.tape
            .unary(self, Op::Sigmoid(self.id), |a| Ok(a.map(sigmoid)))
            .expect("sigmoid is total")
    }

    pub fn tanh(self) -> Var<'t> {
        self.tape
            .unary(self, Op::Tanh(self.id), |a| Ok(a.map(f64::tanh)))
            .expect("tanh is total")
    }

    pub fn sum(self) -> Var<'t> {
        self.tape
            .unary(self, Op::Sum(self.id), |a| Ok(Tensor::scalar(a.sum())))
            .expect("sum is total")
    }

    pub fn mean(self) -> Var<'t> {
        self.tape
            .unary(self, Op::Mean(self.id), |a| {
                Ok(Tensor::scalar(a.sum() / a.numel().max(1) as f64))
            })
            .expect("mean is total")
    }

    pub fn abs(self) -> Var<'t> {
        self.tape
            .unary(self, Op::Abs(self.id), |a| Ok(a.map(f64::abs)))
            .expect("abs is total")
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Compares an analytic gradient with central finite differences.
///
/// `f` maps a flat parameter vector to the loss value and its analytic
/// gradient. Returns the largest `|analytic - numeric| / max(1, |numeric|)`
/// over all coordinates.
pub fn finite_diff_check<F>(f: F, params: &[f64], eps: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let coords: Vec<usize> = (0..params.len()).collect();
    finite_diff_check_coords(f, params, eps, &coords)
}

/// Like [`finite_diff_check`], restricted to the listed coordinates.
pub fn finite_diff_check_coords<F>(mut f: F, params: &[f64], eps: f64, coords: &[usize]) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    let (v0, analytic) = f(params)?;
    if !v0.is_finite() {
        return Err(Error::NonFinite("finite-difference objective".into()));
    }
    if analytic.len() != params.len() {
        return shape_err(
            "finite_diff_check",
            format!("gradient has {} entries for {} parameters", analytic.len(), params.len()),
        );
    }
    let mut p = params.to_vec();
    let mut worst = 0.0f64;
    for &i in coords {
        let orig = p[i];
        p[i] = orig + eps;
        let (fp, _) = f(&p)?;
        p[i] = orig - eps;
        let (fm, _) = f(&p)?;
        p[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite("finite-difference objective".into()));
        }
        let numeric = (fp - fm) / (2.0 * eps);
        let rel = (analytic[i] - numeric).abs() / numeric.abs().max(1.0);
        worst = worst.max(rel);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mat(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn matmul_by_identity() {
        let tape = Tape::new();
        let a = tape.constant(mat(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let i = tape.constant(Tensor::identity(2));
        assert_eq!(a.matmul(i).unwrap().value().data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn sigmoid_of_zero_is_half() {
        let tape = Tape::new();
        let z = tape.constant(Tensor::zeros(&[2, 3]));
        assert!(z.sigmoid().value().data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn hadamard_by_hand() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let b = tape.constant(Tensor::vector(vec![4.0, 5.0, 6.0]));
        assert_eq!(a.hadamard(b).unwrap().value().data(), &[4.0, 10.0, 18.0]);
    }

    #[test]
    fn shape_errors_are_reported() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        let err = a.matmul(b).unwrap_err().to_string();
        assert!(err.contains("inner dimensions"), "{err}");
        let c = tape.constant(Tensor::zeros(&[3]));
        assert!(a.add(c).is_err());
        let d = tape.constant(Tensor::zeros(&[3, 1]));
        assert!(a.concat(d).is_err());
    }

    #[test]
    fn sum_gradient_is_ones() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![0.3, -1.0, 2.0]));
        let loss = x.sum();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(x).data(), &[1.0, 1.0, 1.0]);
        assert!(g.get(loss).is_none(), "only leaf gradients are kept");
    }

    #[test]
    fn mean_of_squares_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        let loss = x.hadamard(x).unwrap().mean();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(x).data(), &[1.0, 2.0]);
    }

    #[test]
    fn disconnected_leaf_has_zero_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        let w = tape.leaf(Tensor::vector(vec![5.0]));
        let loss = x.sum();
        let g = tape.backward(loss).unwrap();
        assert!(g.get(w).is_none());
        assert_eq!(g.wrt(w).data(), &[0.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn scalar_broadcast_gradient_sums() {
        let tape = Tape::new();
        let s = tape.leaf(Tensor::scalar(2.0));
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let loss = s.hadamard(x).unwrap().sum();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(s).data(), &[6.0]);
        assert_eq!(g.wrt(x).data(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn sum_of_squares_passes_fd_check() {
        let f = |p: &[f64]| {
            let tape = Tape::new();
            let x = tape.leaf(Tensor::vector(p.to_vec()));
            let loss = x.hadamard(x)?.sum();
            let g = tape.backward(loss)?;
            Ok((loss.value().item()?, g.wrt(x).into_data()))
        };
        let err = finite_diff_check(f, &[1.0, 2.0, 3.0], 1e-6).unwrap();
        assert!(err <= 1e-8, "{err}");
    }

    #[test]
    fn constant_function_has_zero_error() {
        let f = |p: &[f64]| Ok((4.0, vec![0.0; p.len()]));
        assert_eq!(finite_diff_check(f, &[1.0, -3.0], 1e-6).unwrap(), 0.0);
    }

    #[test]
    fn non_finite_objective_is_an_error() {
        let f = |p: &[f64]| Ok((f64::NAN, vec![0.0; p.len()]));
        assert!(finite_diff_check(f, &[1.0], 1e-6).is_err());
        let g = |p: &[f64]| Ok((1.0, vec![0.0; p.len()]));
        assert!(finite_diff_check(g, &[1.0], 0.0).is_err());
    }

    #[test]
    fn shared_subexpression_matches_expanded_graph() {
        let vals = vec![0.7, -1.3, 0.4];
        // y = tanh(x); loss = sum(y * y + y)
        let shared = {
            let tape = Tape::new();
            let x = tape.leaf(Tensor::vector(vals.clone()));
            let y = x.tanh();
            let loss = y.hadamard(y).unwrap().add(y).unwrap().sum();
            tape.backward(loss).unwrap().wrt(x)
        };
        let expanded = {
            let tape = Tape::new();
            let x = tape.leaf(Tensor::vector(vals.clone()));
            let (y1, y2, y3) = (x.tanh(), x.tanh(), x.tanh());
            let loss = y1.hadamard(y2).unwrap().add(y3).unwrap().sum();
            tape.backward(loss).unwrap().wrt(x)
        };
        for (a, b) in shared.data().iter().zip(expanded.data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    fn fd_for_op(op: usize, a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() / 2;
        let f = |p: &[f64]| {
            let tape = Tape::new();
            let x = tape.leaf(Tensor::matrix(2, n, p[..2 * n].to_vec())?);
            let y_shape = if op == 0 { [n, 2] } else { [2, n] };
            let y = tape.leaf(Tensor::new(y_shape.to_vec(), p[2 * n..].to_vec())?);
            let out = match op {
                0 => x.matmul(y)?,
                1 => x.add(y)?,
                2 => x.sub(y)?,
                3 => x.hadamard(y)?,
                4 => x.scale(-1.7),
                5 => x.concat(y)?,
                6 => x.sigmoid(),
                7 => x.tanh(),
                8 => x.hadamard(y.sum())?,
                9 => x.hadamard(y.mean())?,
                _ => x.abs(),
            };
            // Weight the outputs so every coordinate of the result matters.
            let w = tape.constant(Tensor::from_fn(
                out.shape()[0],
                out.shape()[1],
                |i, j| 0.3 + 0.1 * (i * 7 + j) as f64,
            ));
            let loss = out.hadamard(w)?.sum();
            let g = tape.backward(loss)?;
            let mut grad = g.wrt(x).into_data();
            grad.extend(g.wrt(y).into_data());
            Ok((loss.value().item()?, grad))
        };
        let mut p = a.to_vec();
        p.extend_from_slice(b);
        finite_diff_check(f, &p, 1e-6).unwrap()
    }

    #[test]
    fn block_matmul_gradient_matches_finite_differences() {
        let f = |p: &[f64]| {
            let tape = Tape::new();
            let a = tape.leaf(Tensor::matrix(2, 2, p[..4].to_vec())?);
            let h = tape.leaf(Tensor::matrix(6, 2, p[4..].to_vec())?);
            let w = tape.constant(Tensor::from_fn(6, 2, |i, j| 0.2 + 0.15 * (i * 2 + j) as f64));
            let loss = a.block_matmul(h)?.tanh().hadamard(w)?.sum();
            let g = tape.backward(loss)?;
            let mut grad = g.wrt(a).into_data();
            grad.extend(g.wrt(h).into_data());
            Ok((loss.value().item()?, grad))
        };
        let p: Vec<f64> = (0..16).map(|i| ((i * 37 % 11) as f64 - 5.0) * 0.13).collect();
        assert!(finite_diff_check(f, &p, 1e-6).unwrap() <= 1e-6);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn every_forward_op_matches_finite_differences(
            op in 0usize..11,
            a in proptest::collection::vec(-2.0f64..2.0, 6),
            b in proptest::collection::vec(-2.0f64..2.0, 6),
        ) {
            // abs is non-differentiable at 0; keep inputs away from it.
            prop_assume!(op != 10 || a.iter().all(|v| v.abs() > 1e-3));
            let err = fd_for_op(op, &a, &b);
            prop_assert!(err <= 1e-5, "op {} rel err {}", op, err);
        }

        #[test]
        fn forward_is_deterministic(a in proptest::collection::vec(-2.0f64..2.0, 6)) {
            let run = || {
                let tape = Tape::new();
                let x = tape.leaf(Tensor::matrix(2, 3, a.clone()).unwrap());
                let w = tape.constant(Tensor::from_fn(3, 2, |i, j| (i + j) as f64 * 0.1));
                x.matmul(w).unwrap().tanh().sigmoid().value()
            };
            let (r1, r2) = (run(), run());
            prop_assert!(r1.data().iter().zip(r2.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
    }
}

//! Dense row-major `f64` tensors.
//!
//! Tensors are immutable value objects once built; every operation returns a
//! fresh tensor. Only scalar-against-tensor broadcasting is supported: two
//! operands must either have identical shapes or one of them must hold a
//! single element.

use crate::error::{shape_err, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return shape_err(
                "tensor",
                format!("shape {shape:?} needs {numel} elements, got {}", data.len()),
            );
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    /// Rank-0 tensor holding one value.
    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return shape_err("from_rows", "ragged rows");
        }
        Self::matrix(rows.len(), cols, rows.concat())
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self {
            shape: vec![rows, cols],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access to the buffer; the shape is fixed.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.is_scalar() {
            Ok(self.data[0])
        } else {
            shape_err("item", format!("tensor of shape {:?} is not a scalar", self.shape))
        }
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 | 1 => 1,
            _ => self.shape[1],
        }
    }

    pub fn get2(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn set2(&mut self, i: usize, j: usize, v: f64) {
        let c = self.cols();
        self.data[i * c + j] = v;
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return shape_err(
                "reshape",
                format!("cannot view {:?} as {shape:?}", self.shape),
            );
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, context: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(context.to_string()))
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise combination with scalar broadcasting.
    pub fn zip_map(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape == other.shape {
            let data = self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect();
            Ok(Self {
                shape: self.shape.clone(),
                data,
            })
        } else if other.is_scalar() {
            let b = other.data[0];
            Ok(self.map(|a| f(a, b)))
        } else if self.is_scalar() {
            let a = self.data[0];
            Ok(other.map(|b| f(a, b)))
        } else {
            shape_err(
                op,
                format!("shapes {:?} and {:?} differ and neither is a scalar", self.shape, other.shape),
            )
        }
    }

    pub fn add(&self, other: &Tensor) -> Result<Self> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Self> {
        self.zip_map(other, "subtract", |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Tensor) -> Result<Self> {
        self.zip_map(other, "hadamard", |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|v| v * c)
    }

    /// In-place `self += other` for identical shapes.
    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return shape_err(
                "add_assign",
                format!("{:?} vs {:?}", self.shape, other.shape),
            );
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn transpose(&self) -> Result<Self> {
        let (r, c) = self.dims2("transpose")?;
        Ok(Self::from_fn(c, r, |i, j| self.data[j * c + i]))
    }

    fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        if self.shape.len() != 2 {
            return shape_err(op, format!("expected a matrix, got shape {:?}", self.shape));
        }
        Ok((self.shape[0], self.shape[1]))
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Self> {
        gemm(self, false, other, false)
    }

    /// Concatenates two matrices along the last (column) axis.
    pub fn concat_cols(&self, other: &Tensor) -> Result<Self> {
        let (ra, ca) = self.dims2("concat")?;
        let (rb, cb) = other.dims2("concat")?;
        if ra != rb {
            return shape_err("concat", format!("row counts {ra} and {rb} differ"));
        }
        let mut data = Vec::with_capacity(ra * (ca + cb));
        for i in 0..ra {
            data.extend_from_slice(&self.data[i * ca..(i + 1) * ca]);
            data.extend_from_slice(&other.data[i * cb..(i + 1) * cb]);
        }
        Ok(Self {
            shape: vec![ra, ca + cb],
            data,
        })
    }

    /// Splits columns `[0, at)` and `[at, cols)` into two matrices.
    pub fn split_cols(&self, at: usize) -> Result<(Self, Self)> {
        let (r, c) = self.dims2("split")?;
        if at > c {
            return shape_err("split", format!("split point {at} beyond {c} columns"));
        }
        let mut left = Vec::with_capacity(r * at);
        let mut right = Vec::with_capacity(r * (c - at));
        for i in 0..r {
            left.extend_from_slice(&self.data[i * c..i * c + at]);
            right.extend_from_slice(&self.data[i * c + at..(i + 1) * c]);
        }
        Ok((
            Self {
                shape: vec![r, at],
                data: left,
            },
            Self {
                shape: vec![r, c - at],
                data: right,
            },
        ))
    }

    /// Column `j` of a matrix as an `rows × 1` matrix.
    pub fn column(&self, j: usize) -> Result<Self> {
        let (r, c) = self.dims2("column")?;
        if j >= c {
            return shape_err("column", format!("column {j} out of range for {c} columns"));
        }
        Ok(Self {
            shape: vec![r, 1],
            data: (0..r).map(|i| self.data[i * c + j]).collect(),
        })
    }
}

/// `op(a) · op(b)` where `op` optionally transposes a matrix without copying.
pub fn gemm(a: &Tensor, trans_a: bool, b: &Tensor, trans_b: bool) -> Result<Tensor> {
    let (ar, ac) = a.dims2("matmul")?;
    let (br, bc) = b.dims2("matmul")?;
    let (m, k) = if trans_a { (ac, ar) } else { (ar, ac) };
    let (k2, n) = if trans_b { (bc, br) } else { (br, bc) };
    if k != k2 {
        return shape_err(
            "matmul",
            format!(
                "inner dimensions differ: {:?}{} x {:?}{}",
                a.shape,
                if trans_a { "ᵀ" } else { "" },
                b.shape,
                if trans_b { "ᵀ" } else { "" }
            ),
        );
    }
    let mut out = vec![0.0; m * n];
    if m > 0 && n > 0 && k > 0 {
        let (rsa, csa) = if trans_a { (1, ac as isize) } else { (ac as isize, 1) };
        let (rsb, csb) = if trans_b { (1, bc as isize) } else { (bc as isize, 1) };
        // SAFETY: the strides describe exactly the buffers of `a`, `b` and `out`,
        // whose lengths were validated against their shapes.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                a.data.as_ptr(),
                rsa,
                csa,
                b.data.as_ptr(),
                rsb,
                csb,
                0.0,
                out.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
    Ok(Tensor {
        shape: vec![m, n],
        data: out,
    })
}

/// Applies `op(a)` (`n × n`) to every consecutive `n`-row block of `h`.
///
/// With `h` stacking per-sample `n × c` matrices, this is the batched
/// product `op(a) · h_b` without materializing a block-diagonal matrix.
pub fn block_left_gemm(a: &Tensor, trans_a: bool, h: &Tensor) -> Result<Tensor> {
    let (n, n2) = a.dims2("block_matmul")?;
    let (r, c) = h.dims2("block_matmul")?;
    if n != n2 || n == 0 || r % n != 0 {
        return shape_err(
            "block_matmul",
            format!("{:?} cannot act on row blocks of {:?}", a.shape, h.shape),
        );
    }
    let (rsa, csa) = if trans_a { (1, n as isize) } else { (n as isize, 1) };
    let mut out = vec![0.0; r * c];
    if c > 0 {
        for b in 0..r / n {
            let off = b * n * c;
            // SAFETY: each block spans `n * c` elements inside `h` and `out`.
            unsafe {
                matrixmultiply::dgemm(
                    n,
                    n,
                    c,
                    1.0,
                    a.data.as_ptr(),
                    rsa,
                    csa,
                    h.data.as_ptr().add(off),
                    c as isize,
                    1,
                    0.0,
                    out.as_mut_ptr().add(off),
                    c as isize,
                    1,
                );
            }
        }
    }
    Ok(Tensor {
        shape: vec![r, c],
        data: out,
    })
}

/// `Σ_b g_b · h_bᵀ` over consecutive `n`-row blocks: the gradient of
/// [`block_left_gemm`] with respect to its matrix.
pub fn block_outer_sum(g: &Tensor, h: &Tensor, n: usize) -> Result<Tensor> {
    let (r, c) = g.dims2("block_matmul")?;
    if h.shape != g.shape || n == 0 || r % n != 0 {
        return shape_err("block_matmul", format!("{:?} and {:?} in blocks of {n}", g.shape, h.shape));
    }
    let mut out = vec![0.0; n * n];
    if c > 0 {
        for b in 0..r / n {
            let off = b * n * c;
            // SAFETY: as in `block_left_gemm`; `out` is `n × n`.
            unsafe {
                matrixmultiply::dgemm(
                    n,
                    c,
                    n,
                    1.0,
                    g.data.as_ptr().add(off),
                    c as isize,
                    1,
                    h.data.as_ptr().add(off),
                    1,
                    c as isize,
                    1.0,
                    out.as_mut_ptr(),
                    n as isize,
                    1,
                );
            }
        }
    }
    Ok(Tensor {
        shape: vec![n, n],
        data: out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_checks_element_count() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert_eq!(Tensor::new(vec![2, 3], vec![0.0; 6]).unwrap().numel(), 6);
        assert_eq!(Tensor::scalar(2.0).numel(), 1);
    }

    #[test]
    fn gemm_transposes_match_explicit_transpose() {
        let a = Tensor::from_fn(3, 2, |i, j| (i * 2 + j) as f64 - 1.5);
        let b = Tensor::from_fn(3, 4, |i, j| (i as f64) * 0.5 - j as f64);
        let at = a.transpose().unwrap();
        let direct = at.matmul(&b).unwrap();
        let strided = gemm(&a, true, &b, false).unwrap();
        assert_eq!(direct, strided);
        let bt = b.transpose().unwrap();
        let c = gemm(&at, false, &bt, true).unwrap();
        assert_eq!(c, direct);
    }

    #[test]
    fn block_gemm_matches_per_block_products() {
        let a = Tensor::from_fn(3, 3, |i, j| (i as f64 - j as f64) * 0.7 + 0.1);
        let h = Tensor::from_fn(6, 2, |i, j| (i * 2 + j) as f64 * 0.3 - 1.0);
        let out = block_left_gemm(&a, false, &h).unwrap();
        let out_t = block_left_gemm(&a, true, &h).unwrap();
        let g = Tensor::from_fn(6, 2, |i, j| (i + j) as f64 - 2.5);
        let mut outer = Tensor::zeros(&[3, 3]);
        for b in 0..2 {
            let hb = Tensor::from_fn(3, 2, |i, j| h.get2(3 * b + i, j));
            let gb = Tensor::from_fn(3, 2, |i, j| g.get2(3 * b + i, j));
            let direct = a.matmul(&hb).unwrap();
            let direct_t = a.transpose().unwrap().matmul(&hb).unwrap();
            for i in 0..3 {
                for j in 0..2 {
                    assert_eq!(out.get2(3 * b + i, j), direct.get2(i, j));
                    assert_eq!(out_t.get2(3 * b + i, j), direct_t.get2(i, j));
                }
            }
            outer.add_assign(&gb.matmul(&hb.transpose().unwrap()).unwrap()).unwrap();
        }
        let got = block_outer_sum(&g, &h, 3).unwrap();
        assert!(got.sub(&outer).unwrap().max_abs() < 1e-12);
        assert!(block_left_gemm(&a, false, &Tensor::zeros(&[4, 2])).is_err());
    }

    #[test]
    fn broadcasting_is_scalar_only() {
        let a = Tensor::vector(vec![1.0, 2.0]);
        let s = Tensor::scalar(3.0);
        assert_eq!(a.add(&s).unwrap().data(), &[4.0, 5.0]);
        assert_eq!(s.sub(&a).unwrap().data(), &[2.0, 1.0]);
        let b = Tensor::vector(vec![1.0, 2.0, 3.0]);
        assert!(a.add(&b).is_err());
    }

    #[test]
    fn concat_and_split_are_inverse() {
        let a = Tensor::from_fn(2, 3, |i, j| (i * 3 + j) as f64);
        let b = Tensor::from_fn(2, 1, |i, _| -(i as f64));
        let c = a.concat_cols(&b).unwrap();
        assert_eq!(c.shape(), &[2, 4]);
        let (l, r) = c.split_cols(3).unwrap();
        assert_eq!(l, a);
        assert_eq!(r, b);
    }
}

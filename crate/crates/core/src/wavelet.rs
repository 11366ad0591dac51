//! Haar wavelet pyramid and its learnable inverse.
//!
//! The decomposition recurses on the detail branch: with `b⁰ = x`,
//!
//! ```text
//! aʷ(k) = ½ [bʷ⁻¹(2k) + bʷ⁻¹(2k+1)]
//! bʷ(k) = ½ [bʷ⁻¹(2k) − bʷ⁻¹(2k+1)]
//! ```
//!
//! and the output streams are `a¹ … aᴼ` followed by `bᴼ`. The inverse
//! rebuilds `bʷ⁻¹` from `(aʷ, bʷ)` with one coefficient per output position,
//! so it can be trained; at initialization it is the exact algebraic inverse.

use crate::autodiff::{Gradients, Tape, Var};
use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

/// Output of an Ω-level decomposition of an `N × L` signal.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveletPyramid {
    /// `approx[ω-1]` is `aʷ`, shape `N × L/2ʷ`.
    pub approx: Vec<Tensor>,
    /// `bᴼ`, shape `N × L/2ᴼ`.
    pub detail_last: Tensor,
    pub levels: usize,
}

impl WaveletPyramid {
    /// Assembles a pyramid from its `Ω + 1` streams, checking their shapes.
    pub fn from_streams(mut streams: Vec<Tensor>) -> Result<Self> {
        if streams.len() < 2 {
            return shape_err("pyramid", format!("need at least 2 streams, got {}", streams.len()));
        }
        let levels = streams.len() - 1;
        let detail_last = streams.pop().expect("non-empty");
        let pyramid = Self {
            approx: streams,
            detail_last,
            levels,
        };
        pyramid.validate()?;
        Ok(pyramid)
    }

    fn validate(&self) -> Result<()> {
        if self.approx.len() != self.levels || self.levels == 0 {
            return shape_err("pyramid", "approximation count must equal the level count");
        }
        let n = self.approx[0].rows();
        let base = self.approx[0].cols() * 2;
        for (i, a) in self.approx.iter().enumerate() {
            let expected = base >> (i + 1);
            if a.rank() != 2 || a.rows() != n || a.cols() != expected || (base >> i) % 2 != 0 {
                return shape_err(
                    "pyramid",
                    format!("level {} approximation has shape {:?}, expected [{n}, {expected}]", i + 1, a.shape()),
                );
            }
        }
        let last = base >> self.levels;
        if self.detail_last.rank() != 2 || self.detail_last.rows() != n || self.detail_last.cols() != last {
            return shape_err(
                "pyramid",
                format!("detail stream has shape {:?}, expected [{n}, {last}]", self.detail_last.shape()),
            );
        }
        Ok(())
    }

    /// The `Ω + 1` streams in order `a¹ … aᴼ, bᴼ`.
    pub fn streams(&self) -> Vec<&Tensor> {
        self.approx.iter().chain(std::iter::once(&self.detail_last)).collect()
    }

    pub fn into_streams(self) -> Vec<Tensor> {
        let mut s = self.approx;
        s.push(self.detail_last);
        s
    }

    /// Length of the reconstructed signal.
    pub fn signal_len(&self) -> usize {
        self.approx[0].cols() * 2
    }

    pub fn nodes(&self) -> usize {
        self.approx[0].rows()
    }
}

/// Stream lengths `L/2, L/4, …, L/2ᴼ, L/2ᴼ` for a signal of length `len`.
pub fn stream_lengths(len: usize, levels: usize) -> Result<Vec<usize>> {
    check_divisible(len, levels)?;
    let mut out: Vec<usize> = (1..=levels).map(|w| len >> w).collect();
    out.push(len >> levels);
    Ok(out)
}

fn check_divisible(len: usize, levels: usize) -> Result<()> {
    if levels == 0 {
        return Err(Error::InvalidArgument("wavelet level count must be at least 1".into()));
    }
    let mut cur = len;
    for level in 1..=levels {
        if cur == 0 || cur % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "signal length {len} is not divisible by 2^{levels}: level {level} would split a length-{cur} series"
            )));
        }
        cur /= 2;
    }
    Ok(())
}

/// Ω-level Haar decomposition of each row of an `N × L` matrix.
pub fn dwt_decompose(series: &Tensor, levels: usize) -> Result<WaveletPyramid> {
    if series.rank() != 2 {
        return shape_err("dwt", format!("expected an N x L matrix, got {:?}", series.shape()));
    }
    check_divisible(series.cols(), levels)?;
    let n = series.rows();
    let mut detail = series.clone();
    let mut approx = Vec::with_capacity(levels);
    for _ in 0..levels {
        let len = detail.cols() / 2;
        let mut a = Tensor::zeros(&[n, len]);
        let mut b = Tensor::zeros(&[n, len]);
        for i in 0..n {
            for k in 0..len {
                let (even, odd) = (detail.get2(i, 2 * k), detail.get2(i, 2 * k + 1));
                a.set2(i, k, 0.5 * (even + odd));
                b.set2(i, k, 0.5 * (even - odd));
            }
        }
        approx.push(a);
        detail = b;
    }
    Ok(WaveletPyramid {
        approx,
        detail_last: detail,
        levels,
    })
}

/// Reconstruction coefficients for one level, one entry per position `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelCoeffs {
    pub d_l: Tensor,
    pub d_h: Tensor,
    pub a_l: Tensor,
    pub a_h: Tensor,
}

impl LevelCoeffs {
    pub fn len(&self) -> usize {
        self.d_l.numel()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn tensors(&self) -> [&Tensor; 4] {
        [&self.d_l, &self.d_h, &self.a_l, &self.a_h]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 4] {
        [&mut self.d_l, &mut self.d_h, &mut self.a_l, &mut self.a_h]
    }
}

/// Learnable inverse-transform coefficients; `levels[ω-1]` holds level ω.
#[derive(Clone, Debug, PartialEq)]
pub struct LidwtParams {
    pub levels: Vec<LevelCoeffs>,
}

/// Coefficients that make the inverse exact: `even = a + b`, `odd = a − b`.
pub fn init_lidwt_params(len: usize, levels: usize) -> Result<LidwtParams> {
    let lens = stream_lengths(len, levels)?;
    let levels = lens[..levels]
        .iter()
        .map(|&n| LevelCoeffs {
            d_l: Tensor::ones(&[n]),
            d_h: Tensor::ones(&[n]),
            a_l: Tensor::ones(&[n]),
            a_h: Tensor::full(&[n], -1.0),
        })
        .collect();
    Ok(LidwtParams { levels })
}

impl LidwtParams {
    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    /// Signal length this parameter set reconstructs.
    pub fn signal_len(&self) -> usize {
        self.levels.first().map_or(0, |l| l.len() * 2)
    }

    fn validate(&self) -> Result<()> {
        let base = self.signal_len();
        for (i, lvl) in self.levels.iter().enumerate() {
            let expected = base >> (i + 1);
            if lvl.tensors().iter().any(|t| t.numel() != expected) {
                return shape_err(
                    "lidwt",
                    format!("level {} coefficient vectors must all have length {expected}", i + 1),
                );
            }
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> Self {
        let levels = self
            .levels
            .iter()
            .map(|l| LevelCoeffs {
                d_l: Tensor::zeros(l.d_l.shape()),
                d_h: Tensor::zeros(l.d_h.shape()),
                a_l: Tensor::zeros(l.a_l.shape()),
                a_h: Tensor::zeros(l.a_h.shape()),
            })
            .collect();
        Self { levels }
    }

    /// Registers every coefficient as its own scalar leaf.
    pub fn bind<'t>(&self, tape: &'t Tape) -> LidwtVars<'t> {
        let levels = self
            .levels
            .iter()
            .map(|l| {
                l.tensors().map(|t| {
                    t.data().iter().map(|&v| tape.leaf(Tensor::scalar(v))).collect::<Vec<_>>()
                })
            })
            .collect();
        LidwtVars { levels }
    }
}

/// Tape-bound view of [`LidwtParams`]: `levels[ω-1] = [D_L, D_H, A_L, A_H]`.
pub struct LidwtVars<'t> {
    levels: Vec<[Vec<Var<'t>>; 4]>,
}

impl<'t> LidwtVars<'t> {
    /// Collects the gradient of every coefficient back into parameter shape.
    pub fn grads(&self, g: &Gradients) -> LidwtParams {
        let levels = self
            .levels
            .iter()
            .map(|[dl, dh, al, ah]| {
                let collect = |vars: &Vec<Var<'t>>| {
                    Tensor::vector(vars.iter().map(|&v| g.wrt(v).data()[0]).collect())
                };
                LevelCoeffs {
                    d_l: collect(dl),
                    d_h: collect(dh),
                    a_l: collect(al),
                    a_h: collect(ah),
                }
            })
            .collect();
        LidwtParams { levels }
    }
}

/// Differentiable inverse over sequences of tape values.
///
/// `streams` holds `Ω + 1` sequences in pyramid order; each element is the
/// value at one coefficient index and may have any shape (a column of
/// sensor values, or an `N × d_h` hidden state). Returns the `L` values of
/// the reconstructed sequence.
pub fn lidwt_reconstruct_seq<'t>(streams: &[Vec<Var<'t>>], coeffs: &LidwtVars<'t>) -> Result<Vec<Var<'t>>> {
    let levels = coeffs.levels.len();
    if streams.len() != levels + 1 {
        return shape_err(
            "lidwt",
            format!("expected {} streams for {levels} levels, got {}", levels + 1, streams.len()),
        );
    }
    let mut detail = streams[levels].clone();
    for w in (1..=levels).rev() {
        let approx = &streams[w - 1];
        let [dl, dh, al, ah] = &coeffs.levels[w - 1];
        if approx.len() != detail.len() || approx.len() != dl.len() {
            return shape_err(
                "lidwt",
                format!(
                    "level {w}: approximation length {}, detail length {}, coefficient length {}",
                    approx.len(),
                    detail.len(),
                    dl.len()
                ),
            );
        }
        let mut next = Vec::with_capacity(2 * approx.len());
        for k in 0..approx.len() {
            let even = dl[k].hadamard(approx[k])?.add(dh[k].hadamard(detail[k])?)?;
            let odd = al[k].hadamard(approx[k])?.add(ah[k].hadamard(detail[k])?)?;
            next.push(even);
            next.push(odd);
        }
        detail = next;
    }
    Ok(detail)
}

/// Inverse transform of a pyramid of `N × ·` matrices into an `N × L` matrix.
pub fn lidwt_reconstruct(pyramid: &WaveletPyramid, params: &LidwtParams) -> Result<Tensor> {
    pyramid.validate()?;
    params.validate()?;
    if params.level_count() != pyramid.levels || params.signal_len() != pyramid.signal_len() {
        return shape_err(
            "lidwt",
            format!(
                "parameters cover {} levels of length {}, pyramid has {} levels of length {}",
                params.level_count(),
                params.signal_len(),
                pyramid.levels,
                pyramid.signal_len()
            ),
        );
    }
    let n = pyramid.nodes();
    let mut detail = pyramid.detail_last.clone();
    for w in (1..=pyramid.levels).rev() {
        let a = &pyramid.approx[w - 1];
        let c = &params.levels[w - 1];
        let len = a.cols();
        let mut out = Tensor::zeros(&[n, 2 * len]);
        for i in 0..n {
            for k in 0..len {
                let (av, bv) = (a.get2(i, k), detail.get2(i, k));
                out.set2(i, 2 * k, c.d_l.data()[k] * av + c.d_h.data()[k] * bv);
                out.set2(i, 2 * k + 1, c.a_l.data()[k] * av + c.a_h.data()[k] * bv);
            }
        }
        detail = out;
    }
    Ok(detail)
}

//! The forecasting network: wavelet streams, per-stream graph-convolutional
//! GRU encoders, learnable inverse-wavelet fusion and a recurrent decoder.
//!
//! Batches stack `B` samples of `N` sensors row-wise, so every per-step
//! quantity is a `(B·N) × c` matrix and graph products act blockwise.
//!
//! The decoder cell takes `d_h + d` input features: while it warms up on the
//! fused sequence the last `d` are zero, and while it rolls forward the first
//! `d_h` are zero and the rest hold the previous output. Its first rolled-out
//! input is the last observed history step.

use rand::Rng;

use crate::autodiff::{Gradients, Tape, Var};
use crate::data::Normalizer;
use crate::error::{shape_err, Error, Result};
use crate::graph_learning::GraphLearningConfig;
use crate::graph_ops::{gcrn_step, normalize_adjacency, AdjMatrix, GcrnParams, GcrnVars};
use crate::tensor::Tensor;
use crate::wavelet::{dwt_decompose, init_lidwt_params, lidwt_reconstruct_seq, stream_lengths, LidwtParams, LidwtVars};

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// History length `L`.
    pub history_len: usize,
    /// Forecast horizon `T`.
    pub horizon: usize,
    /// Wavelet levels `Ω`.
    pub levels: usize,
    /// Hops `K` per graph convolution.
    pub hops: usize,
    pub alpha: f64,
    pub beta: f64,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub gamma: f64,
    pub eta: f64,
    pub lambda: f64,
    pub threshold: f64,
    /// Kernel width of the road graph; `None` uses the spread of distances.
    pub road_sigma: Option<f64>,
    pub road_kappa: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            history_len: 12,
            horizon: 12,
            levels: 2,
            hops: 2,
            alpha: 0.05,
            beta: 0.95,
            input_dim: 1,
            hidden_dim: 64,
            gamma: 0.5,
            eta: 0.5,
            lambda: 0.1,
            threshold: 0.3,
            road_sigma: None,
            road_kappa: 0.1,
            seed: 42,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        stream_lengths(self.history_len, self.levels)
            .map_err(|e| Error::Config(format!("history_len {} with levels {}: {e}", self.history_len, self.levels)))?;
        if self.horizon == 0 || self.hidden_dim == 0 || self.input_dim == 0 || self.hops == 0 {
            return bad("horizon, hidden_dim, input_dim and hops must be at least 1".into());
        }
        for (name, v) in [("gamma", self.gamma), ("eta", self.eta)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("lambda", self.lambda)] {
            if !v.is_finite() {
                return bad(format!("{name} must be finite, got {v}"));
            }
        }
        if !(self.lambda >= 0.0 && self.threshold >= 0.0 && self.road_kappa >= 0.0) {
            return bad("lambda, threshold and road_kappa must be nonnegative".into());
        }
        if let Some(s) = self.road_sigma {
            if !(s > 0.0 && s.is_finite()) {
                return bad(format!("road_sigma must be positive, got {s}"));
            }
        }
        Ok(())
    }

    /// Number of wavelet streams, `Ω + 1`.
    pub fn streams(&self) -> usize {
        self.levels + 1
    }

    pub fn graph_config(&self) -> GraphLearningConfig {
        GraphLearningConfig {
            gamma: self.gamma,
            eta: self.eta,
            lambda: self.lambda,
            threshold: self.threshold,
        }
    }
}

/// Every learnable parameter of the network.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub encoders: Vec<GcrnParams>,
    pub lidwt: LidwtParams,
    pub decoder: GcrnParams,
    /// `d_h × d`.
    pub out_proj: Tensor,
}

impl ModelParams {
    pub fn init(cfg: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let (d, dh) = (cfg.input_dim, cfg.hidden_dim);
        let encoders = (0..cfg.streams())
            .map(|_| GcrnParams::init(d, dh, cfg.hops, cfg.alpha, cfg.beta, rng))
            .collect();
        let decoder = GcrnParams::init(dh + d, dh, cfg.hops, cfg.alpha, cfg.beta, rng);
        let bound = 1.0 / (dh as f64).sqrt();
        let out_proj = Tensor::from_fn(dh, d, |_, _| rng.gen_range(-bound..bound));
        Ok(Self {
            encoders,
            lidwt: init_lidwt_params(cfg.history_len, cfg.levels)?,
            decoder,
            out_proj,
        })
    }

    /// All-zero weights with the initial (exact-inverse) fusion coefficients.
    pub fn zeros(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let (d, dh) = (cfg.input_dim, cfg.hidden_dim);
        Ok(Self {
            encoders: (0..cfg.streams())
                .map(|_| GcrnParams::zeros(d, dh, cfg.hops, cfg.alpha, cfg.beta))
                .collect(),
            lidwt: init_lidwt_params(cfg.history_len, cfg.levels)?,
            decoder: GcrnParams::zeros(dh + d, dh, cfg.hops, cfg.alpha, cfg.beta),
            out_proj: Tensor::zeros(&[dh, d]),
        })
    }

    fn names(&self) -> Vec<String> {
        let gate_names = ["theta_r", "theta_u", "theta_c"];
        let mut names = Vec::new();
        let mut gcrn = |prefix: String, p: &GcrnParams| {
            for (g, gate) in gate_names.iter().zip(p.gates()) {
                for k in 0..gate.w.len() {
                    names.push(format!("{prefix}.{g}.w{k}"));
                }
            }
        };
        for (s, e) in self.encoders.iter().enumerate() {
            gcrn(format!("encoder.{s}"), e);
        }
        gcrn("decoder".into(), &self.decoder);
        for w in 1..=self.lidwt.level_count() {
            for c in ["d_l", "d_h", "a_l", "a_h"] {
                names.push(format!("lidwt.{w}.{c}"));
            }
        }
        names.push("out_proj".into());
        names
    }

    /// Parameter tensors in a fixed order with stable names.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut tensors: Vec<&Tensor> = Vec::new();
        for p in self.encoders.iter().chain(std::iter::once(&self.decoder)) {
            for gate in p.gates() {
                tensors.extend(gate.w.iter());
            }
        }
        for lvl in &self.lidwt.levels {
            tensors.extend(lvl.tensors());
        }
        tensors.push(&self.out_proj);
        self.names().into_iter().zip(tensors).collect()
    }

    /// Mutable tensors in the order of [`ModelParams::named`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut tensors: Vec<&mut Tensor> = Vec::new();
        for p in self.encoders.iter_mut().chain(std::iter::once(&mut self.decoder)) {
            for gate in p.gates_mut() {
                tensors.extend(gate.w.iter_mut());
            }
        }
        for lvl in &mut self.lidwt.levels {
            tensors.extend(lvl.tensors_mut());
        }
        tensors.push(&mut self.out_proj);
        tensors
    }

    pub fn count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.named().iter().flat_map(|(_, t)| t.data().iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.count() {
            return shape_err("set_flat", format!("{} values for {} parameters", flat.len(), self.count()));
        }
        let mut at = 0;
        for t in self.tensors_mut() {
            let n = t.numel();
            t.data_mut().copy_from_slice(&flat[at..at + n]);
            at += n;
        }
        Ok(())
    }

    /// Replaces every tensor by name; all names must be present with
    /// matching shapes.
    pub fn load_named(&mut self, source: &[(String, Tensor)]) -> Result<()> {
        let names = self.names();
        for (name, slot) in names.iter().zip(self.tensors_mut()) {
            let Some((_, t)) = source.iter().find(|(n, _)| n == name) else {
                return Err(Error::Checkpoint(format!("missing parameter '{name}'")));
            };
            if t.shape() != slot.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter '{name}' has shape {:?}, expected {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t.clone();
        }
        Ok(())
    }

    pub fn bind<'t>(&self, tape: &'t Tape) -> ModelVars<'t> {
        ModelVars {
            encoders: self.encoders.iter().map(|e| e.bind(tape)).collect(),
            lidwt: self.lidwt.bind(tape),
            decoder: self.decoder.bind(tape),
            out_proj: tape.leaf(self.out_proj.clone()),
            hidden_dim: self.out_proj.rows(),
            input_dim: self.out_proj.cols(),
        }
    }
}

/// Tape-bound [`ModelParams`].
pub struct ModelVars<'t> {
    pub encoders: Vec<GcrnVars<'t>>,
    pub lidwt: LidwtVars<'t>,
    pub decoder: GcrnVars<'t>,
    pub out_proj: Var<'t>,
    hidden_dim: usize,
    input_dim: usize,
}

impl ModelVars<'_> {
    pub fn grads(&self, g: &Gradients) -> ModelParams {
        ModelParams {
            encoders: self.encoders.iter().map(|e| e.grads(g)).collect(),
            lidwt: self.lidwt.grads(g),
            decoder: self.decoder.grads(g),
            out_proj: g.wrt(self.out_proj),
        }
    }
}

/// Adjacency matrices used by the network: one per stream plus the decoder's.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGraphs {
    pub streams: Vec<AdjMatrix>,
    pub decoder: AdjMatrix,
}

impl ModelGraphs {
    pub fn uniform(n: usize, streams: usize, adj: &AdjMatrix) -> Self {
        debug_assert_eq!(adj.n(), n);
        Self {
            streams: vec![adj.clone(); streams],
            decoder: adj.clone(),
        }
    }

    pub fn nodes(&self) -> usize {
        self.decoder.n()
    }

    /// Row-normalized weights: streams first, decoder last.
    pub fn normalized(&self) -> Result<Vec<Tensor>> {
        self.streams
            .iter()
            .chain(std::iter::once(&self.decoder))
            .map(|a| normalize_adjacency(a).map(AdjMatrix::into_weights))
            .collect()
    }

    pub fn permute(&self, perm: &[usize]) -> Self {
        Self {
            streams: self.streams.iter().map(|a| a.permute(perm)).collect(),
            decoder: self.decoder.permute(perm),
        }
    }
}

/// Splits per-channel `(B·N) × L` histories into wavelet streams.
///
/// Returns `streams[s][k]`: the `(B·N) × d` input of stream `s` at
/// coefficient index `k`.
pub fn stream_inputs(history: &[Tensor], levels: usize) -> Result<Vec<Vec<Tensor>>> {
    if history.is_empty() {
        return Err(Error::InvalidArgument("history needs at least one channel".into()));
    }
    let pyramids = history
        .iter()
        .map(|h| dwt_decompose(h, levels))
        .collect::<Result<Vec<_>>>()?;
    let rows = history[0].rows();
    let d = history.len();
    let stream_count = levels + 1;
    let mut out = Vec::with_capacity(stream_count);
    for s in 0..stream_count {
        let per_channel: Vec<&Tensor> = pyramids.iter().map(|p| p.streams()[s]).collect();
        let len = per_channel[0].cols();
        out.push(
            (0..len)
                .map(|k| Tensor::from_fn(rows, d, |i, c| per_channel[c].get2(i, k)))
                .collect(),
        );
    }
    Ok(out)
}

/// Runs each stream through its encoder from a zero state and returns every
/// hidden state.
pub fn encode<'t>(
    tape: &'t Tape,
    streams: &[Vec<Tensor>],
    graphs: &[Var<'t>],
    encoders: &[GcrnVars<'t>],
    hidden_dim: usize,
) -> Result<Vec<Vec<Var<'t>>>> {
    if streams.len() != encoders.len() || graphs.len() < streams.len() {
        return shape_err(
            "encode",
            format!("{} streams, {} encoders, {} graphs", streams.len(), encoders.len(), graphs.len()),
        );
    }
    let mut hidden = Vec::with_capacity(streams.len());
    for ((stream, enc), &a) in streams.iter().zip(encoders).zip(graphs) {
        let Some(first) = stream.first() else {
            return shape_err("encode", "empty stream".to_string());
        };
        let mut h = tape.constant(Tensor::zeros(&[first.rows(), hidden_dim]));
        let mut seq = Vec::with_capacity(stream.len());
        for x in stream {
            h = gcrn_step(tape.constant(x.clone()), h, a, enc)?;
            seq.push(h);
        }
        hidden.push(seq);
    }
    Ok(hidden)
}

/// Learnable inverse wavelet transform of the hidden sequences.
pub fn fuse<'t>(hidden: &[Vec<Var<'t>>], lidwt: &LidwtVars<'t>) -> Result<Vec<Var<'t>>> {
    lidwt_reconstruct_seq(hidden, lidwt)
}

/// Decoder inputs and scheduled-sampling settings.
pub struct DecodeInputs<'a, R> {
    /// Last observed step, `(B·N) × d`.
    pub last_observed: &'a Tensor,
    /// Ground truth per output step, `(B·N) × d`; needed when `sampling_p > 0`.
    pub teacher: Option<&'a [Tensor]>,
    pub sampling_p: f64,
    pub steps: usize,
    pub rng: &'a mut R,
}

/// Warms the decoder on the fused sequence, then rolls out `steps` outputs.
pub fn decode<'t, R: Rng>(
    tape: &'t Tape,
    fused: &[Var<'t>],
    a_dec: Var<'t>,
    vars: &ModelVars<'t>,
    inputs: DecodeInputs<'_, R>,
) -> Result<Vec<Var<'t>>> {
    let p = inputs.sampling_p;
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("sampling probability must lie in [0, 1], got {p}")));
    }
    if p > 0.0 {
        match inputs.teacher {
            None => return Err(Error::InvalidArgument("scheduled sampling needs ground-truth targets".into())),
            Some(t) if t.len() + 1 < inputs.steps => {
                return shape_err("decode", format!("{} teacher steps for {} outputs", t.len(), inputs.steps))
            }
            _ => {}
        }
    }
    let rows = inputs.last_observed.rows();
    let (d, dh) = (vars.input_dim, vars.hidden_dim);
    let pad_out = tape.constant(Tensor::zeros(&[rows, d]));
    let pad_hidden = tape.constant(Tensor::zeros(&[rows, dh]));
    let mut h = pad_hidden;
    for &f in fused {
        h = gcrn_step(f.concat(pad_out)?, h, a_dec, &vars.decoder)?;
    }
    let mut prev = tape.constant(inputs.last_observed.clone());
    let mut outputs = Vec::with_capacity(inputs.steps);
    for i in 0..inputs.steps {
        if i > 0 && p > 0.0 && inputs.rng.gen::<f64>() < p {
            prev = tape.constant(inputs.teacher.expect("checked above")[i - 1].clone());
        }
        h = gcrn_step(pad_hidden.concat(prev)?, h, a_dec, &vars.decoder)?;
        let y = h.matmul(vars.out_proj)?;
        outputs.push(y);
        prev = y;
    }
    Ok(outputs)
}

/// A batch of normalized windows over `nodes` sensors.
#[derive(Clone, Debug)]
pub struct Batch {
    pub nodes: usize,
    /// Per channel, `(B·N) × L`.
    pub history: Vec<Tensor>,
    /// Per output step, `(B·N) × d`.
    pub target: Vec<Tensor>,
    /// Per output step, `(B·N) × d`, 1 where the target is valid.
    pub mask: Vec<Tensor>,
}

impl Batch {
    pub fn size(&self) -> usize {
        self.history[0].rows() / self.nodes
    }

    /// Last history step of every row, `(B·N) × d`.
    pub fn last_observed(&self) -> Tensor {
        let rows = self.history[0].rows();
        let l = self.history[0].cols();
        Tensor::from_fn(rows, self.history.len(), |i, c| self.history[c].get2(i, l - 1))
    }
}

/// Full forward pass returning `steps` predictions of shape `(B·N) × d`.
pub fn forward<'t, R: Rng>(
    tape: &'t Tape,
    vars: &ModelVars<'t>,
    graphs: &[Tensor],
    batch: &Batch,
    steps: usize,
    sampling_p: f64,
    rng: &mut R,
) -> Result<Vec<Var<'t>>> {
    let levels = vars.lidwt_levels();
    if graphs.len() != levels + 2 {
        return shape_err("forward", format!("{} graphs for {} streams plus decoder", graphs.len(), levels + 1));
    }
    if batch.history.len() != vars.input_dim {
        return shape_err(
            "forward",
            format!("{} input channels, model expects {}", batch.history.len(), vars.input_dim),
        );
    }
    let graph_vars: Vec<Var<'t>> = graphs.iter().map(|g| tape.constant(g.clone())).collect();
    let streams = stream_inputs(&batch.history, levels)?;
    let hidden = encode(tape, &streams, &graph_vars[..levels + 1], &vars.encoders, vars.hidden_dim)?;
    let fused = fuse(&hidden, &vars.lidwt)?;
    let last = batch.last_observed();
    decode(
        tape,
        &fused,
        graph_vars[levels + 1],
        vars,
        DecodeInputs {
            last_observed: &last,
            teacher: (sampling_p > 0.0).then_some(batch.target.as_slice()),
            sampling_p,
            steps,
            rng,
        },
    )
}

impl ModelVars<'_> {
    fn lidwt_levels(&self) -> usize {
        self.encoders.len() - 1
    }
}

/// Everything needed to forecast from raw sensor values.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub graphs: ModelGraphs,
    pub normalizer: Normalizer,
    pub sensor_ids: Vec<String>,
}

impl ModelState {
    /// Predictions for normalized `(B·N) × L` single-channel histories.
    pub fn predict_normalized(&self, batch: &Batch) -> Result<Vec<Tensor>> {
        let tape = Tape::new();
        let vars = self.params.bind(&tape);
        let graphs = self.graphs.normalized()?;
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let out = forward(&tape, &vars, &graphs, batch, self.config.horizon, 0.0, &mut rng)?;
        Ok(out.into_iter().map(Var::value).collect())
    }

    /// `T`-step forecast in original units from a raw `N × L` history.
    ///
    /// Entries with `mask` false are treated as missing.
    pub fn forecast_masked(&self, history: &Tensor, mask: Option<&[bool]>) -> Result<Tensor> {
        let (n, l) = (self.sensor_ids.len(), self.config.history_len);
        if self.config.input_dim != 1 {
            return Err(Error::Config("raw forecasting supports a single input channel".into()));
        }
        if history.shape() != [n, l] {
            return shape_err("forecast", format!("history shape {:?}, expected [{n}, {l}]", history.shape()));
        }
        if let Some(m) = mask {
            if m.len() != n * l {
                return shape_err("forecast", format!("mask has {} entries for {}", m.len(), n * l));
            }
        }
        let valid = |i: usize| mask.is_none_or(|m| m[i]);
        if history.data().iter().enumerate().any(|(i, v)| valid(i) && !v.is_finite()) {
            return Err(Error::NonFinite("forecast history".into()));
        }
        let data = history
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| if valid(i) { self.normalizer.apply(v) } else { 0.0 })
            .collect();
        let batch = Batch {
            nodes: n,
            history: vec![Tensor::matrix(n, l, data)?],
            target: Vec::new(),
            mask: Vec::new(),
        };
        let steps = self.predict_normalized(&batch)?;
        Ok(Tensor::from_fn(n, self.config.horizon, |i, t| self.normalizer.invert(steps[t].get2(i, 0))))
    }

    pub fn forecast(&self, history: &Tensor) -> Result<Tensor> {
        self.forecast_masked(history, None)
    }
}

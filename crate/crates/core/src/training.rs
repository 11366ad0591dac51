//! Loss, metrics, optimizer, sampling schedules and the training loop.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::data::{Dataset, SampleSet};
use crate::error::{shape_err, Error, Result};
use crate::graph_learning::{blend_graphs, learn_graph, LearnedGraphState};
use crate::graph_ops::AdjMatrix;
use crate::model::{forward, Batch, ModelConfig, ModelGraphs, ModelParams, ModelState};
use crate::tensor::Tensor;
use crate::wavelet::dwt_decompose;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Scheduled-sampling decay constant, in iterations.
    pub tau: f64,
    /// Iterations per curriculum horizon increment.
    pub cl_step: usize,
    /// Maximum global gradient norm.
    pub grad_clip: f64,
    /// Training windows drawn per epoch; 0 uses all of them.
    pub windows_per_epoch: usize,
    /// Training windows sampled for each graph refit.
    pub graph_windows: usize,
    /// Forecast steps reported in evaluations.
    pub horizons: Vec<usize>,
    /// Train, validation and test fractions.
    pub split: [f64; 3],
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            epochs: 10,
            batch_size: 16,
            tau: 3000.0,
            cl_step: 2500,
            grad_clip: 5.0,
            windows_per_epoch: 0,
            graph_windows: 256,
            horizons: vec![3, 6, 12],
            split: [0.7, 0.1, 0.2],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("adam_beta1", self.adam_beta1),
            ("adam_beta2", self.adam_beta2),
            ("adam_eps", self.adam_eps),
            ("tau", self.tau),
            ("grad_clip", self.grad_clip),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be nonnegative, got {}", self.lr)));
        }
        if self.adam_beta1 >= 1.0 || self.adam_beta2 >= 1.0 {
            return Err(Error::Config("Adam betas must be below 1".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.cl_step == 0 || self.graph_windows == 0 {
            return Err(Error::Config("epochs, batch_size, cl_step and graph_windows must be at least 1".into()));
        }
        if self.horizons.is_empty() || self.horizons.contains(&0) {
            return Err(Error::Config("horizons must be a non-empty list of positive steps".into()));
        }
        Ok(())
    }
}

/// Masked mean absolute error over a sequence of `(B·N) × d` predictions.
pub fn mae_loss<'t>(preds: &[Var<'t>], targets: &[Tensor], masks: &[Tensor]) -> Result<Var<'t>> {
    if preds.is_empty() || preds.len() > targets.len() || preds.len() > masks.len() {
        return shape_err(
            "mae_loss",
            format!("{} predictions, {} targets, {} masks", preds.len(), targets.len(), masks.len()),
        );
    }
    let tape = preds[0].tape();
    let mut total: Option<Var<'t>> = None;
    let mut count = 0.0;
    for ((p, t), m) in preds.iter().zip(targets).zip(masks) {
        let diff = p.sub(tape.constant(t.clone()))?;
        let term = diff.abs().hadamard(tape.constant(m.clone()))?.sum();
        count += m.sum();
        total = Some(match total {
            Some(acc) => acc.add(term)?,
            None => term,
        });
    }
    if count <= 0.0 {
        return Err(Error::Data("loss mask selects no entries".into()));
    }
    Ok(total.expect("at least one step").scale(1.0 / count))
}

/// Targets with `|target|` below this are left out of MAPE.
pub const MAPE_FLOOR: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub mae: f64,
    pub rmse: f64,
    /// A fraction, not a percentage.
    pub mape: f64,
    pub count: usize,
}

/// Running sums for [`Metrics`].
#[derive(Clone, Copy, Debug, Default)]
pub struct MetricsAccumulator {
    abs: f64,
    sq: f64,
    pct: f64,
    count: usize,
    pct_count: usize,
}

impl MetricsAccumulator {
    pub fn push(&mut self, pred: f64, target: f64) {
        let e = pred - target;
        self.abs += e.abs();
        self.sq += e * e;
        self.count += 1;
        if target.abs() >= MAPE_FLOOR {
            self.pct += (e / target).abs();
            self.pct_count += 1;
        }
    }

    pub fn finish(&self) -> Result<Metrics> {
        if self.count == 0 {
            return Err(Error::Data("metric mask selects no entries".into()));
        }
        let n = self.count as f64;
        let mae = self.abs / n;
        let rmse = (self.sq / n).sqrt();
        Ok(Metrics {
            mae,
            rmse: rmse.max(mae),
            mape: if self.pct_count == 0 { 0.0 } else { self.pct / self.pct_count as f64 },
            count: self.count,
        })
    }
}

pub fn metrics(pred: &[f64], target: &[f64], mask: &[bool]) -> Result<Metrics> {
    if pred.len() != target.len() || pred.len() != mask.len() {
        return shape_err("metrics", format!("{} / {} / {} entries", pred.len(), target.len(), mask.len()));
    }
    let mut acc = MetricsAccumulator::default();
    for ((&p, &t), &m) in pred.iter().zip(target).zip(mask) {
        if m {
            acc.push(p, t);
        }
    }
    acc.finish()
}

#[derive(Clone, Debug, PartialEq)]
pub struct HorizonMetrics {
    pub horizon: usize,
    pub metrics: Metrics,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<HorizonMetrics>,
    /// Over every forecast step.
    pub overall: Metrics,
    pub samples: usize,
}

impl EvalReport {
    pub fn new(rows: Vec<HorizonMetrics>, overall: Metrics, samples: usize) -> Self {
        for m in rows.iter().map(|r| &r.metrics).chain(std::iter::once(&overall)) {
            assert!(m.rmse >= m.mae && m.mae >= 0.0 && m.mape >= 0.0, "inconsistent metrics {m:?}");
        }
        Self { rows, overall, samples }
    }

    pub fn horizon(&self, h: usize) -> Option<&Metrics> {
        self.rows.iter().find(|r| r.horizon == h).map(|r| &r.metrics)
    }

    /// Tab-separated table: one row per horizon, MAPE in percent.
    pub fn table(&self) -> String {
        let mut s = String::from("horizon\tMAE\tRMSE\tMAPE\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{}\t{:.4}\t{:.4}\t{:.2}%\n",
                r.horizon,
                r.metrics.mae,
                r.metrics.rmse,
                100.0 * r.metrics.mape
            ));
        }
        s
    }
}

/// `τ / (τ + exp(iter / τ))`.
pub fn scheduled_sampling_prob(iter: u64, tau: f64) -> f64 {
    let e = (iter as f64 / tau).exp();
    if e.is_infinite() {
        0.0
    } else {
        tau / (tau + e)
    }
}

/// `min(T, 1 + ⌊iter / cl_step⌋)`.
pub fn curriculum_horizon(iter: u64, cl_step: usize, horizon: usize) -> usize {
    let step = (iter / cl_step.max(1) as u64).saturating_add(1);
    step.min(horizon as u64) as usize
}

/// Scales `grads` so their global ℓ2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_grad_norm(grads: &mut [&mut Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g.sum_sq()).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let c = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= c;
            }
        }
    }
    norm
}

/// Adaptive moment estimation.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(cfg: &TrainConfig, shapes: &[&Tensor]) -> Self {
        let zeros: Vec<Tensor> = shapes.iter().map(|t| Tensor::zeros(t.shape())).collect();
        Self {
            lr: cfg.lr,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[&Tensor]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return shape_err("adam", format!("{} params, {} grads, {} slots", params.len(), grads.len(), self.m.len()));
        }
        self.t = self.t.saturating_add(1);
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            if p.shape() != g.shape() {
                return shape_err("adam", format!("param {:?} vs grad {:?}", p.shape(), g.shape()));
            }
            let (pd, gd) = (p.data_mut(), g.data());
            for (((pi, &gi), mi), vi) in pd.iter_mut().zip(gd).zip(m.data_mut()).zip(v.data_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let update = self.lr * (*mi / bc1) / ((*vi / bc2).sqrt() + self.eps);
                *pi -= update;
            }
        }
        Ok(())
    }
}

/// Normalized single-channel batch for the windows starting at `starts`.
pub fn build_batch(data: &Dataset, starts: &[usize], history_len: usize, horizon: usize) -> Batch {
    let n = data.sensors();
    let rows = n * starts.len();
    let hist = Tensor::from_fn(rows, history_len, |r, j| data.normalized.get2(r % n, starts[r / n] + j));
    let mut target = Vec::with_capacity(horizon);
    let mut mask = Vec::with_capacity(horizon);
    for k in 0..horizon {
        let t = |r: usize| starts[r / n] + history_len + k;
        target.push(Tensor::from_fn(rows, 1, |r, _| data.normalized.get2(r % n, t(r))));
        mask.push(Tensor::from_fn(rows, 1, |r, _| {
            if data.panel.is_valid(r % n, t(r)) {
                1.0
            } else {
                0.0
            }
        }));
    }
    Batch {
        nodes: n,
        history: vec![hist],
        target,
        mask,
    }
}

fn report_from(accs: &[MetricsAccumulator], horizons: &[usize], samples: usize) -> Result<EvalReport> {
    let mut overall = MetricsAccumulator::default();
    for a in accs {
        overall.abs += a.abs;
        overall.sq += a.sq;
        overall.pct += a.pct;
        overall.count += a.count;
        overall.pct_count += a.pct_count;
    }
    let rows = horizons
        .iter()
        .filter(|&&h| h <= accs.len())
        .map(|&h| {
            Ok(HorizonMetrics {
                horizon: h,
                metrics: accs[h - 1].finish()?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::new(rows, overall.finish()?, samples))
}

/// Forecast metrics in original units over `set`.
pub fn evaluate(state: &ModelState, data: &Dataset, set: &SampleSet, horizons: &[usize], batch_size: usize) -> Result<EvalReport> {
    let (l, t) = (state.config.history_len, state.config.horizon);
    let n = data.sensors();
    let mut accs = vec![MetricsAccumulator::default(); t];
    for chunk in set.starts.chunks(batch_size.max(1)) {
        let batch = build_batch(data, chunk, l, t);
        let preds = state.predict_normalized(&batch)?;
        for (k, p) in preds.iter().enumerate() {
            for (r, &s) in chunk.iter().enumerate().flat_map(|(b, s)| (0..n).map(move |i| (b * n + i, s))) {
                let (sensor, time) = (r % n, s + l + k);
                if data.panel.is_valid(sensor, time) {
                    let pred = data.normalizer.invert(p.get2(r, 0));
                    accs[k].push(pred, data.panel.values.get2(sensor, time));
                }
            }
        }
    }
    report_from(&accs, horizons, set.len())
}

/// Metrics of repeating the last observed value; missing last values fall
/// back to the most recent valid one in the history, or the training mean.
pub fn evaluate_persistence(data: &Dataset, set: &SampleSet, horizons: &[usize]) -> Result<EvalReport> {
    let (l, t) = (set.history_len, set.horizon);
    let mut accs = vec![MetricsAccumulator::default(); t];
    for &s in &set.starts {
        for i in 0..data.sensors() {
            let last = (s..s + l)
                .rev()
                .find(|&j| data.panel.is_valid(i, j))
                .map_or(data.normalizer.mean, |j| data.panel.values.get2(i, j));
            for (k, acc) in accs.iter_mut().enumerate() {
                let time = s + l + k;
                if data.panel.is_valid(i, time) {
                    acc.push(last, data.panel.values.get2(i, time));
                }
            }
        }
    }
    report_from(&accs, horizons, set.len())
}

/// Rows of `N` normalized values for fitting each network graph: one matrix
/// per wavelet stream (one row per coefficient index per window) and one for
/// the decoder (one row per history step per window).
pub fn graph_samples(data: &Dataset, starts: &[usize], cfg: &ModelConfig) -> Result<Vec<Tensor>> {
    let n = data.sensors();
    let mut rows: Vec<Vec<f64>> = vec![Vec::new(); cfg.streams() + 1];
    for &s in starts {
        let hist = data.history(s, cfg.history_len);
        let pyramid = dwt_decompose(&hist, cfg.levels)?;
        for (slot, stream) in rows.iter_mut().zip(pyramid.streams()) {
            let t = stream.transpose()?;
            slot.extend_from_slice(t.data());
        }
        rows[cfg.streams()].extend_from_slice(hist.transpose()?.data());
    }
    rows.into_iter()
        .map(|r| {
            let b = r.len() / n.max(1);
            Tensor::matrix(b, n, r)
        })
        .collect()
}

/// Learns one data-driven graph per stream plus one for the decoder.
pub fn learn_network_graphs(data: &Dataset, starts: &[usize], cfg: &ModelConfig) -> Result<Vec<AdjMatrix>> {
    let gcfg = cfg.graph_config();
    graph_samples(data, starts, cfg)?
        .iter()
        .map(|x| learn_graph(x, &gcfg))
        .collect()
}

fn sample_windows(starts: &[usize], count: usize, rng: &mut impl Rng) -> Vec<usize> {
    if count >= starts.len() {
        return starts.to_vec();
    }
    let mut picked: Vec<usize> = starts.choose_multiple(rng, count).copied().collect();
    picked.sort_unstable();
    picked
}

/// Per-epoch training summary.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val: EvalReport,
    pub sampling_p: f64,
    pub horizon: usize,
}

impl EpochRecord {
    pub fn log_header(horizons: &[usize]) -> String {
        let mut cols = vec!["epoch".to_string(), "train_loss".into()];
        for h in horizons {
            cols.extend([format!("val_mae@{h}"), format!("val_rmse@{h}"), format!("val_mape@{h}")]);
        }
        cols.extend(["sampling_p".into(), "horizon".into()]);
        cols.join("\t")
    }

    pub fn log_line(&self) -> String {
        let mut cols = vec![self.epoch.to_string(), format!("{:.6}", self.train_loss)];
        for r in &self.val.rows {
            cols.extend([
                format!("{:.6}", r.metrics.mae),
                format!("{:.6}", r.metrics.rmse),
                format!("{:.6}", r.metrics.mape),
            ]);
        }
        cols.extend([format!("{:.6}", self.sampling_p), self.horizon.to_string()]);
        cols.join("\t")
    }
}

pub struct TrainOutcome {
    /// Parameters and graphs from the epoch with the lowest validation MAE.
    pub best: ModelState,
    pub best_epoch: usize,
    pub epochs: Vec<EpochRecord>,
}

fn blended(states: &[LearnedGraphState], levels: usize) -> Result<ModelGraphs> {
    let mut all = states.iter().map(blend_graphs).collect::<Result<Vec<_>>>()?;
    let decoder = all.pop().expect("decoder graph");
    debug_assert_eq!(all.len(), levels + 1);
    Ok(ModelGraphs { streams: all, decoder })
}

/// Trains a fresh model, writing one tab-separated log line per epoch.
pub fn train(
    cfg: &ModelConfig,
    tcfg: &TrainConfig,
    data: &Dataset,
    road: &AdjMatrix,
    log: &mut dyn Write,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    tcfg.validate()?;
    if road.n() != data.sensors() {
        return shape_err("train", format!("road graph has {} nodes for {} sensors", road.n(), data.sensors()));
    }
    if data.train.is_empty() || data.val.is_empty() {
        return Err(Error::Data("training and validation splits must be non-empty".into()));
    }
    let (l, t) = (cfg.history_len, cfg.horizon);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut graph_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut sampling_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let params = ModelParams::init(cfg, &mut rng)?;

    let initial = learn_network_graphs(data, &sample_windows(&data.train.starts, tcfg.graph_windows, &mut graph_rng), cfg)?;
    let mut graph_states = initial
        .into_iter()
        .map(|a| LearnedGraphState::new(a, road.clone(), cfg.gamma, cfg.eta))
        .collect::<Result<Vec<_>>>()?;

    let mut state = ModelState {
        config: cfg.clone(),
        params,
        graphs: blended(&graph_states, cfg.levels)?,
        normalizer: data.normalizer,
        sensor_ids: data.panel.sensor_ids.clone(),
    };
    let mut adam = Adam::new(tcfg, &state.params.named().into_iter().map(|(_, t)| t).collect::<Vec<_>>());
    let horizons: Vec<usize> = tcfg.horizons.iter().copied().filter(|&h| h <= t).collect();
    writeln!(log, "{}", EpochRecord::log_header(&horizons))?;

    let mut iter: u64 = 0;
    let mut best: Option<(f64, usize, ModelState)> = None;
    let mut records = Vec::with_capacity(tcfg.epochs);
    for epoch in 1..=tcfg.epochs {
        let mut order = data.train.starts.clone();
        order.shuffle(&mut rng);
        if tcfg.windows_per_epoch > 0 {
            order.truncate(tcfg.windows_per_epoch);
        }
        let graphs = state.graphs.normalized()?;
        let (mut loss_sum, mut batches) = (0.0, 0usize);
        let (mut last_p, mut last_h) = (0.0, 1);
        for (bi, chunk) in order.chunks(tcfg.batch_size).enumerate() {
            let p = scheduled_sampling_prob(iter, tcfg.tau);
            let h = curriculum_horizon(iter, tcfg.cl_step, t);
            let batch = build_batch(data, chunk, l, t);
            if batch.mask[..h].iter().all(|m| m.sum() == 0.0) {
                iter += 1;
                continue;
            }
            let tape = Tape::new();
            let vars = state.params.bind(&tape);
            let preds = forward(&tape, &vars, &graphs, &batch, h, p, &mut sampling_rng)?;
            let loss = mae_loss(&preds, &batch.target, &batch.mask)?;
            let value = loss.value().item()?;
            if !value.is_finite() {
                let at = data
                    .panel
                    .timestamps
                    .get(chunk[0])
                    .map(crate::data::format_timestamp)
                    .unwrap_or_default();
                return Err(Error::NonFinite(format!(
                    "training loss at epoch {epoch}, batch {bi} (first window starts {at})"
                )));
            }
            let mut grads = vars.grads(&tape.backward(loss)?);
            drop(tape);
            clip_grad_norm(&mut grads.tensors_mut(), tcfg.grad_clip);
            let grad_refs: Vec<&Tensor> = grads.named().into_iter().map(|(_, t)| t).collect();
            adam.step(&mut state.params.tensors_mut(), &grad_refs)?;
            loss_sum += value;
            batches += 1;
            last_p = p;
            last_h = h;
            iter += 1;
        }
        let fresh = learn_network_graphs(data, &sample_windows(&data.train.starts, tcfg.graph_windows, &mut graph_rng), cfg)?;
        for (s, a) in graph_states.iter_mut().zip(&fresh) {
            s.absorb(a)?;
        }
        state.graphs = blended(&graph_states, cfg.levels)?;

        let val = evaluate(&state, data, &data.val, &horizons, tcfg.batch_size.max(32))?;
        let record = EpochRecord {
            epoch,
            train_loss: if batches > 0 { loss_sum / batches as f64 } else { 0.0 },
            sampling_p: last_p,
            horizon: last_h,
            val,
        };
        writeln!(log, "{}", record.log_line())?;
        log::info!("epoch {epoch}: train loss {:.4}, val MAE {:.4}", record.train_loss, record.val.overall.mae);
        let score = record.val.overall.mae;
        if best.as_ref().is_none_or(|(b, _, _)| score < *b) {
            best = Some((score, epoch, state.clone()));
        }
        records.push(record);
    }
    let (_, best_epoch, best) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        best,
        best_epoch,
        epochs: records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Panel;
    use chrono::TimeDelta;
    use proptest::prelude::*;

    #[test]
    fn mae_loss_examples() {
        let tape = Tape::new();
        let run = |p: Vec<f64>, t: Vec<f64>| {
            let n = p.len();
            let pred = tape.leaf(Tensor::matrix(n, 1, p).unwrap());
            let loss = mae_loss(&[pred], &[Tensor::matrix(n, 1, t).unwrap()], &[Tensor::ones(&[n, 1])]).unwrap();
            loss.value().item().unwrap()
        };
        assert_eq!(run(vec![1.0, 2.0], vec![1.0, 2.0]), 0.0);
        assert_eq!(run(vec![1.0, -1.0], vec![0.0, 0.0]), 1.0);
        assert_eq!(run(vec![2.0, 4.0], vec![1.0, 2.0]), 1.5);
    }

    #[test]
    fn mae_loss_respects_mask() {
        let tape = Tape::new();
        let pred = tape.leaf(Tensor::vector(vec![2.0, 100.0]).reshape(&[2, 1]).unwrap());
        let target = Tensor::matrix(2, 1, vec![1.0, 0.0]).unwrap();
        let mask = Tensor::matrix(2, 1, vec![1.0, 0.0]).unwrap();
        let loss = mae_loss(&[pred], std::slice::from_ref(&target), &[mask]).unwrap();
        assert_eq!(loss.value().item().unwrap(), 1.0);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(pred).data(), &[1.0, 0.0]);
        assert!(mae_loss(&[pred], &[target], &[Tensor::zeros(&[2, 1])]).is_err());
    }

    #[test]
    fn metrics_hand_check() {
        let m = metrics(&[2.0, 4.0], &[1.0, 2.0], &[true, true]).unwrap();
        assert!((m.mae - 1.5).abs() <= 1e-12);
        assert!((m.rmse - 2.5f64.sqrt()).abs() <= 1e-12);
        assert!((m.rmse - 1.5811).abs() < 1e-4);
        // mean(|1/1|, |2/2|)
        assert!((m.mape - 1.0).abs() <= 1e-12);
        let z = metrics(&[3.0, 5.0], &[3.0, 5.0], &[true, true]).unwrap();
        assert_eq!((z.mae, z.rmse, z.mape), (0.0, 0.0, 0.0));
        assert!(metrics(&[1.0], &[1.0], &[false]).is_err());
    }

    #[test]
    fn mape_skips_near_zero_targets() {
        let m = metrics(&[1.0, 3.0], &[0.0, 2.0], &[true, true]).unwrap();
        assert!((m.mape - 0.5).abs() < 1e-12);
        assert!((m.mae - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sampling_schedule() {
        assert!((scheduled_sampling_prob(0, 3000.0) - 3000.0 / 3001.0).abs() < 1e-15);
        assert!((scheduled_sampling_prob(0, 3000.0) - 0.99967).abs() < 1e-5);
        assert_eq!(scheduled_sampling_prob(u64::MAX, 3000.0), 0.0);
        assert!(scheduled_sampling_prob(100_000, 3000.0) < 1e-10);
    }

    #[test]
    fn curriculum_schedule() {
        assert_eq!(curriculum_horizon(0, 2500, 12), 1);
        assert_eq!(curriculum_horizon(5000, 2500, 12), 3);
        assert_eq!(curriculum_horizon(11 * 2500, 2500, 12), 12);
        assert_eq!(curriculum_horizon(u64::MAX, 2500, 12), 12);
    }

    #[test]
    fn adam_with_zero_gradient_is_a_no_op() {
        let mut p = Tensor::vector(vec![0.5, -1.25]);
        let g = Tensor::zeros(&[2]);
        let mut adam = Adam::new(&TrainConfig::default(), &[&p]);
        adam.step(&mut [&mut p], &[&g]).unwrap();
        assert_eq!(p.data(), &[0.5, -1.25]);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = Tensor::vector(vec![1.0, 1.0]);
        let g = Tensor::vector(vec![3.0, -0.01]);
        let mut adam = Adam::new(&TrainConfig::default(), &[&p]);
        adam.step(&mut [&mut p], &[&g]).unwrap();
        assert!((p.data()[0] - (1.0 - 1e-3)).abs() < 1e-9);
        assert!((p.data()[1] - (1.0 + 1e-3)).abs() < 1e-6);
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let mut a = Tensor::vector(vec![3.0, 4.0]);
        let mut b = Tensor::vector(vec![12.0]);
        let norm = clip_grad_norm(&mut [&mut a, &mut b], 5.0);
        assert_eq!(norm, 13.0);
        let after = (a.sum_sq() + b.sum_sq()).sqrt();
        assert!(after <= 5.0 + 1e-9);
        let mut c = Tensor::vector(vec![0.1]);
        clip_grad_norm(&mut [&mut c], 5.0);
        assert_eq!(c.data(), &[0.1]);
    }

    #[test]
    fn report_table_layout() {
        let m = Metrics { mae: 0.0, rmse: 0.0, mape: 0.0, count: 4 };
        let r = EvalReport::new(vec![HorizonMetrics { horizon: 3, metrics: m }], m, 2);
        assert_eq!(r.table(), "horizon\tMAE\tRMSE\tMAPE\n3\t0.0000\t0.0000\t0.00%\n");
    }

    #[test]
    #[should_panic]
    fn report_rejects_rmse_below_mae() {
        let m = Metrics { mae: 2.0, rmse: 1.0, mape: 0.0, count: 1 };
        EvalReport::new(vec![], m, 1);
    }

    fn small_dataset(len: usize) -> Dataset {
        let t0 = crate::data::parse_timestamp("2024-01-01T00:00:00").unwrap();
        let ts = (0..len).map(|i| t0 + TimeDelta::minutes(5 * i as i64)).collect();
        let values = Tensor::from_fn(3, len, |i, t| 50.0 + 10.0 * ((t as f64) * 0.2 + i as f64).sin());
        let panel = Panel::new(vec!["a".into(), "b".into(), "c".into()], ts, values).unwrap();
        Dataset::prepare(panel, 4, 2, [0.7, 0.1, 0.2]).unwrap()
    }

    fn small_configs() -> (ModelConfig, TrainConfig) {
        let cfg = ModelConfig {
            history_len: 4,
            horizon: 2,
            levels: 1,
            hops: 1,
            hidden_dim: 4,
            seed: 7,
            ..ModelConfig::default()
        };
        let tcfg = TrainConfig {
            epochs: 2,
            batch_size: 8,
            windows_per_epoch: 24,
            graph_windows: 16,
            cl_step: 5,
            tau: 5.0,
            horizons: vec![1, 2],
            ..TrainConfig::default()
        };
        (cfg, tcfg)
    }

    #[test]
    fn batches_stack_windows_row_wise() {
        let d = small_dataset(120);
        let b = build_batch(&d, &[0, 10], 4, 2);
        assert_eq!(b.size(), 2);
        assert_eq!(b.history[0].shape(), &[6, 4]);
        assert_eq!(b.history[0].get2(4, 1), d.normalized.get2(1, 11));
        assert_eq!(b.target[1].get2(3, 0), d.normalized.get2(0, 15));
    }

    #[test]
    fn graph_samples_have_expected_rows() {
        let d = small_dataset(120);
        let (cfg, _) = small_configs();
        let xs = graph_samples(&d, &[0, 5, 9], &cfg).unwrap();
        let rows: Vec<usize> = xs.iter().map(Tensor::rows).collect();
        assert_eq!(rows, vec![6, 6, 12]);
        assert!(xs.iter().all(|x| x.cols() == 3));
    }

    #[test]
    fn training_is_deterministic_and_logs_each_epoch() {
        let d = small_dataset(160);
        let (cfg, tcfg) = small_configs();
        let road = AdjMatrix::identity(3);
        let run = || {
            let mut log = Vec::new();
            let out = train(&cfg, &tcfg, &d, &road, &mut log).unwrap();
            (String::from_utf8(log).unwrap(), out.best.params)
        };
        let (a, pa) = run();
        let (b, pb) = run();
        assert_eq!(a, b);
        assert_eq!(pa, pb);
        let lines: Vec<&str> = a.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("epoch\ttrain_loss\tval_mae@1"));
        assert_eq!(lines[1].split('\t').count(), lines[0].split('\t').count());
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let d = small_dataset(160);
        let (cfg, mut tcfg) = small_configs();
        tcfg.lr = 0.0;
        tcfg.epochs = 1;
        let out = train(&cfg, &tcfg, &d, &AdjMatrix::identity(3), &mut Vec::new()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let init = ModelParams::init(&cfg, &mut rng).unwrap();
        assert_eq!(out.best.params, init);
    }

    #[test]
    fn first_iteration_covers_horizon_one() {
        let (_, tcfg) = small_configs();
        assert_eq!(curriculum_horizon(0, tcfg.cl_step, 12), 1);
        let d = small_dataset(160);
        let (cfg, mut tcfg) = small_configs();
        tcfg.epochs = 1;
        tcfg.windows_per_epoch = 8;
        let out = train(&cfg, &tcfg, &d, &AdjMatrix::identity(3), &mut Vec::new()).unwrap();
        assert_eq!(out.epochs[0].horizon, 1);
    }

    #[test]
    fn persistence_is_exact_on_a_constant_panel() {
        let t0 = crate::data::parse_timestamp("2024-01-01T00:00:00").unwrap();
        let ts = (0..100).map(|i| t0 + TimeDelta::minutes(5 * i)).collect();
        let panel = Panel::new(vec!["a".into()], ts, Tensor::full(&[1, 100], 42.0)).unwrap();
        let d = Dataset::prepare(panel, 4, 2, [0.7, 0.1, 0.2]).unwrap();
        let r = evaluate_persistence(&d, &d.test, &[1, 2]).unwrap();
        assert_eq!(r.overall.mae, 0.0);
    }

    proptest! {
        #[test]
        fn sampling_prob_decreases(iter in 0u64..200_000, tau in 1.0f64..5000.0) {
            let (a, b) = (scheduled_sampling_prob(iter, tau), scheduled_sampling_prob(iter + 1, tau));
            prop_assert!((0.0..1.0).contains(&a));
            prop_assert!(b <= a);
            if a > 1e-300 {
                prop_assert!(b < a);
            }
        }

        #[test]
        fn curriculum_stays_in_range(iter in 0u64..1_000_000, step in 1usize..5000, t in 1usize..24) {
            let h = curriculum_horizon(iter, step, t);
            prop_assert!((1..=t).contains(&h));
            prop_assert!(curriculum_horizon(iter + 1, step, t) >= h);
        }

        #[test]
        fn rmse_never_below_mae(pairs in proptest::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 1..50)) {
            let (p, t): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let m = metrics(&p, &t, &vec![true; p.len()]).unwrap();
            prop_assert!(m.rmse >= m.mae && m.mae >= 0.0);
        }

        #[test]
        fn clipped_norm_is_bounded(v in proptest::collection::vec(-1e3f64..1e3, 1..20), c in 0.1f64..10.0) {
            let mut g = Tensor::vector(v);
            clip_grad_norm(&mut [&mut g], c);
            prop_assert!(g.sum_sq().sqrt() <= c + 1e-9);
        }
    }
}

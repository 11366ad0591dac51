//! Hybrid graph construction: a distance-kernel road prior blended with
//! graphs learned from data as directed acyclic structures.

mod acyclicity;
mod lbfgs;
mod notears;

use std::collections::HashMap;

pub use acyclicity::{acyclicity, expm, Acyclicity};
pub use lbfgs::{lbfgs_minimize, lbfgs_minimize_bounded, Bounds, LbfgsOptions, LbfgsResult};
pub use notears::{notears_fit, NotearsOptions, NotearsProblem, NotearsResult};

use crate::error::{shape_err, Error, Result};
use crate::graph_ops::AdjMatrix;
use crate::tensor::Tensor;

/// Hyperparameters shared by every graph fit.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphLearningConfig {
    /// Blend weight of the learned graph against the road prior.
    pub gamma: f64,
    /// Smoothing of successive learned graphs.
    pub eta: f64,
    /// ℓ1 weight.
    pub lambda: f64,
    /// Absolute weights below this are pruned.
    pub threshold: f64,
}

impl Default for GraphLearningConfig {
    fn default() -> Self {
        Self {
            gamma: 0.5,
            eta: 0.5,
            lambda: 0.1,
            threshold: 0.3,
        }
    }
}

/// Current learned graph alongside the fixed road prior.
#[derive(Clone, Debug)]
pub struct LearnedGraphState {
    pub a_data: AdjMatrix,
    a_road: AdjMatrix,
    pub gamma: f64,
    pub eta: f64,
}

impl LearnedGraphState {
    pub fn new(a_data: AdjMatrix, a_road: AdjMatrix, gamma: f64, eta: f64) -> Result<Self> {
        if a_data.n() != a_road.n() {
            return shape_err("graph state", format!("{} vs {} nodes", a_data.n(), a_road.n()));
        }
        check_unit("gamma", gamma)?;
        check_unit("eta", eta)?;
        Ok(Self {
            a_data,
            a_road,
            gamma,
            eta,
        })
    }

    pub fn a_road(&self) -> &AdjMatrix {
        &self.a_road
    }

    /// Folds a freshly learned graph into the state with EMA smoothing.
    pub fn absorb(&mut self, a_new: &AdjMatrix) -> Result<()> {
        self.a_data = update_graph_ema(&self.a_data, a_new, self.eta)?;
        Ok(())
    }
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} must lie in [0, 1], got {v}")))
    }
}

/// `|W|` with small entries and the diagonal zeroed.
pub fn extract_adjacency(w_dag: &Tensor, threshold: f64) -> Result<AdjMatrix> {
    if !(threshold >= 0.0) {
        return Err(Error::InvalidArgument(format!("threshold must be nonnegative, got {threshold}")));
    }
    if w_dag.rank() != 2 || w_dag.rows() != w_dag.cols() {
        return shape_err("extract_adjacency", format!("expected a square matrix, got {:?}", w_dag.shape()));
    }
    let n = w_dag.rows();
    AdjMatrix::new(Tensor::from_fn(n, n, |i, j| {
        let v = w_dag.get2(i, j).abs();
        if i == j || v < threshold {
            0.0
        } else {
            v
        }
    }))
}

fn convex_mix(a: &AdjMatrix, b: &AdjMatrix, weight_a: f64, op: &'static str) -> Result<AdjMatrix> {
    if a.n() != b.n() {
        return shape_err(op, format!("{} vs {} nodes", a.n(), b.n()));
    }
    let out = a.weights().zip_map(b.weights(), op, |x, y| weight_a * x + (1.0 - weight_a) * y)?;
    AdjMatrix::new(out.map(|v| v.max(0.0)))
}

/// `γ A_data + (1 − γ) A_road`.
pub fn blend_graphs(state: &LearnedGraphState) -> Result<AdjMatrix> {
    check_unit("gamma", state.gamma)?;
    convex_mix(&state.a_data, &state.a_road, state.gamma, "blend_graphs")
}

/// `η A_new + (1 − η) A_prev`.
pub fn update_graph_ema(a_prev: &AdjMatrix, a_new: &AdjMatrix, eta: f64) -> Result<AdjMatrix> {
    check_unit("eta", eta)?;
    convex_mix(a_new, a_prev, eta, "update_graph_ema")
}

/// A directed sensor-to-sensor distance in meters.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceEdge {
    pub from: String,
    pub to: String,
    pub distance: f64,
}

/// Thresholded Gaussian kernel `exp(−d²/σ²)` over sensor distances.
///
/// Edges touching sensors outside `sensor_ids` are skipped. `sigma` defaults
/// to the standard deviation of the finite distances among the remaining
/// edges (falling back to their mean, then to 1, when that is zero); entries
/// below `kappa` and missing pairs are zero.
pub fn road_graph_from_distances(
    edges: &[DistanceEdge],
    sensor_ids: &[String],
    sigma: Option<f64>,
    kappa: f64,
) -> Result<AdjMatrix> {
    let index: HashMap<&str, usize> = sensor_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    for e in edges {
        if e.distance.is_nan() || e.distance < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "distance {} -> {} must be nonnegative, got {}",
                e.from, e.to, e.distance
            )));
        }
    }
    let known: Vec<(usize, usize, &DistanceEdge)> = edges
        .iter()
        .filter_map(|e| Some((*index.get(e.from.as_str())?, *index.get(e.to.as_str())?, e)))
        .collect();
    if known.is_empty() && !edges.is_empty() {
        return Err(Error::Data("no distance entry names two sensors of the panel".into()));
    }
    if known.len() < edges.len() {
        log::debug!("skipped {} distance entries for sensors outside the panel", edges.len() - known.len());
    }
    let sigma = match sigma {
        Some(s) if s > 0.0 && s.is_finite() => s,
        Some(s) => return Err(Error::InvalidArgument(format!("sigma must be positive, got {s}"))),
        None => default_sigma(known.iter().map(|(_, _, e)| e.distance)),
    };
    let n = sensor_ids.len();
    let mut w = Tensor::zeros(&[n, n]);
    for (i, j, e) in known {
        let k = (-(e.distance / sigma).powi(2)).exp();
        w.set2(i, j, if k >= kappa { k } else { 0.0 });
    }
    AdjMatrix::new(w)
}

fn default_sigma(distances: impl Iterator<Item = f64>) -> f64 {
    let finite: Vec<f64> = distances.filter(|d| d.is_finite()).collect();
    if finite.is_empty() {
        return 1.0;
    }
    let mean = finite.iter().sum::<f64>() / finite.len() as f64;
    let var = finite.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / finite.len() as f64;
    let std = var.sqrt();
    if std > 0.0 {
        std
    } else if mean > 0.0 {
        mean
    } else {
        1.0
    }
}

/// Fits a learned adjacency from `B × N` samples: NOTEARS, then thresholding.
pub fn learn_graph(samples: &Tensor, cfg: &GraphLearningConfig) -> Result<AdjMatrix> {
    let problem = NotearsProblem::new(samples, cfg.lambda)?;
    let fit = notears_fit(&problem, &NotearsOptions::default())?;
    extract_adjacency(&fit.weights, cfg.threshold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn adj(rows: &[&[f64]]) -> AdjMatrix {
        AdjMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn extract_prunes_small_weights() {
        let w = Tensor::from_rows(&[vec![0.0, 0.8], vec![-0.2, 0.0]]).unwrap();
        assert_eq!(extract_adjacency(&w, 0.3).unwrap(), adj(&[&[0.0, 0.8], &[0.0, 0.0]]));
        assert_eq!(extract_adjacency(&Tensor::zeros(&[3, 3]), 0.3).unwrap(), AdjMatrix::zeros(3));
        let w = Tensor::from_rows(&[vec![0.5, -0.01], vec![-0.2, 0.7]]).unwrap();
        assert_eq!(extract_adjacency(&w, 0.0).unwrap(), adj(&[&[0.0, 0.01], &[0.2, 0.0]]));
        assert!(extract_adjacency(&w, -1.0).is_err());
    }

    #[test]
    fn blend_endpoints_and_midpoint() {
        let data = adj(&[&[0.0, 1.0], &[0.0, 0.0]]);
        let road = adj(&[&[0.0, 0.0], &[1.0, 0.0]]);
        let mut s = LearnedGraphState::new(data.clone(), road.clone(), 0.0, 0.5).unwrap();
        assert_eq!(blend_graphs(&s).unwrap(), road);
        s.gamma = 1.0;
        assert_eq!(blend_graphs(&s).unwrap(), data);
        s.gamma = 0.5;
        assert_eq!(blend_graphs(&s).unwrap(), adj(&[&[0.0, 0.5], &[0.5, 0.0]]));
        s.gamma = 1.5;
        assert!(blend_graphs(&s).is_err());
    }

    #[test]
    fn ema_endpoints_and_mean() {
        let prev = adj(&[&[0.0, 2.0], &[1.0, 0.0]]);
        let new = adj(&[&[0.0, 0.0], &[3.0, 0.0]]);
        assert_eq!(update_graph_ema(&prev, &new, 1.0).unwrap(), new);
        assert_eq!(update_graph_ema(&prev, &new, 0.0).unwrap(), prev);
        assert_eq!(update_graph_ema(&prev, &new, 0.5).unwrap(), adj(&[&[0.0, 1.0], &[2.0, 0.0]]));
        assert!(update_graph_ema(&prev, &AdjMatrix::zeros(3), 0.5).is_err());
    }

    #[test]
    fn state_absorbs_new_graphs() {
        let road = AdjMatrix::identity(2);
        let mut s = LearnedGraphState::new(AdjMatrix::zeros(2), road.clone(), 0.5, 0.5).unwrap();
        s.absorb(&adj(&[&[0.0, 4.0], &[0.0, 0.0]])).unwrap();
        assert_eq!(s.a_data.get(0, 1), 2.0);
        assert_eq!(s.a_road(), &road);
        assert!(LearnedGraphState::new(AdjMatrix::zeros(2), AdjMatrix::zeros(3), 0.5, 0.5).is_err());
    }

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("s{i}")).collect()
    }

    fn edge(from: &str, to: &str, distance: f64) -> DistanceEdge {
        DistanceEdge {
            from: from.into(),
            to: to.into(),
            distance,
        }
    }

    #[test]
    fn kernel_values() {
        let edges = [edge("s0", "s1", 0.0), edge("s1", "s2", 500.0), edge("s2", "s0", f64::INFINITY)];
        let g = road_graph_from_distances(&edges, &ids(3), Some(500.0), 0.1).unwrap();
        assert_eq!(g.get(0, 1), 1.0);
        assert!((g.get(1, 2) - (-1f64).exp()).abs() < 1e-15);
        assert!((g.get(1, 2) - 0.3679).abs() < 1e-4);
        assert_eq!(g.get(2, 0), 0.0);
        assert_eq!(g.get(1, 0), 0.0);
    }

    #[test]
    fn kernel_threshold_and_default_sigma() {
        let edges = [edge("s0", "s1", 100.0), edge("s1", "s0", 300.0), edge("s0", "s2", 2000.0)];
        let g = road_graph_from_distances(&edges, &ids(3), None, 0.1).unwrap();
        let d = [100.0f64, 300.0, 2000.0];
        let mean = d.iter().sum::<f64>() / 3.0;
        let sigma = (d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 3.0).sqrt();
        assert!((g.get(0, 1) - (-(100.0f64 / sigma).powi(2)).exp()).abs() < 1e-15);
        assert_eq!(g.get(0, 2), 0.0, "weight below kappa is pruned");
    }

    #[test]
    fn unknown_sensors_are_skipped_and_bad_distances_fail() {
        assert!(road_graph_from_distances(&[edge("s0", "zz", 1.0)], &ids(2), None, 0.1).is_err());
        let g = road_graph_from_distances(&[edge("s0", "zz", 1.0), edge("s1", "s0", 5.0)], &ids(2), Some(10.0), 0.1).unwrap();
        assert_eq!(g.get(0, 1), 0.0);
        assert!((g.get(1, 0) - (-0.25f64).exp()).abs() < 1e-15);
        assert!(road_graph_from_distances(&[edge("s0", "s1", -1.0)], &ids(2), None, 0.1).is_err());
        assert!(road_graph_from_distances(&[edge("s0", "s1", 1.0)], &ids(2), Some(0.0), 0.1).is_err());
    }

    proptest! {
        #[test]
        fn mixing_preserves_nonnegativity_and_shape(
            a in proptest::collection::vec(0.0f64..3.0, 9),
            b in proptest::collection::vec(0.0f64..3.0, 9),
            w in 0.0f64..=1.0,
        ) {
            let a = AdjMatrix::new(Tensor::matrix(3, 3, a).unwrap()).unwrap();
            let b = AdjMatrix::new(Tensor::matrix(3, 3, b).unwrap()).unwrap();
            let s = LearnedGraphState::new(a.clone(), b.clone(), w, w).unwrap();
            for g in [blend_graphs(&s).unwrap(), update_graph_ema(&a, &b, w).unwrap()] {
                prop_assert_eq!(g.n(), 3);
                prop_assert!(g.weights().data().iter().all(|&v| v >= 0.0));
            }
        }
    }
}

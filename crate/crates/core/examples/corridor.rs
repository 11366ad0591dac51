//! Trains on a synthetic 20-sensor corridor and compares against persistence.
//!
//! `cargo run --release -p wavcast-core --example corridor [epochs] [windows_per_epoch]`

use std::time::Instant;

use wavcast::data::Dataset;
use wavcast::graph_learning::road_graph_from_distances;
use wavcast::model::ModelConfig;
use wavcast::synthetic::{corridor, CorridorConfig};
use wavcast::training::{evaluate, evaluate_persistence, train, TrainConfig};

fn main() -> wavcast::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let start = Instant::now();
    let c = corridor(&CorridorConfig::default())?;
    let cfg = ModelConfig::default();
    let tcfg = TrainConfig {
        epochs: args.first().copied().unwrap_or(4),
        windows_per_epoch: args.get(1).copied().unwrap_or(640),
        cl_step: 20,
        tau: 40.0,
        lr: 3e-3,
        ..TrainConfig::default()
    };
    let road = road_graph_from_distances(&c.distances, &c.panel.sensor_ids, cfg.road_sigma, cfg.road_kappa)?;
    let data = Dataset::prepare(c.panel, cfg.history_len, cfg.horizon, tcfg.split)?;
    let out = train(&cfg, &tcfg, &data, &road, &mut std::io::stderr())?;
    let model = evaluate(&out.best, &data, &data.test, &tcfg.horizons, 64)?;
    let naive = evaluate_persistence(&data, &data.test, &tcfg.horizons)?;
    println!("model\n{}persistence\n{}", model.table(), naive.table());
    println!("elapsed {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}

//! Synthetic traffic panels for demos and tests.
//!
//! Sensors sit along a single corridor. Speeds follow a free-flow level with
//! weekday rush-hour slowdowns that travel upstream, a disturbance that
//! diffuses between neighboring sensors, and independent measurement noise.

use chrono::{Datelike, NaiveDate, NaiveDateTime, TimeDelta, Timelike, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::Panel;
use crate::error::{Error, Result};
use crate::graph_learning::DistanceEdge;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct CorridorConfig {
    pub sensors: usize,
    pub days: usize,
    pub cadence_minutes: i64,
    pub seed: u64,
    /// Standard deviation of the measurement noise, in mph.
    pub noise: f64,
    /// Standard deviation of the disturbance innovations, in mph.
    pub disturbance: f64,
    /// Fraction of readings dropped at random.
    pub missing: f64,
    /// Distance edges are emitted between sensors at most this many positions apart.
    pub link_span: usize,
}

impl Default for CorridorConfig {
    fn default() -> Self {
        Self {
            sensors: 20,
            days: 14,
            cadence_minutes: 5,
            seed: 7,
            noise: 1.5,
            disturbance: 1.2,
            missing: 0.0,
            link_span: 3,
        }
    }
}

pub struct Corridor {
    pub panel: Panel,
    pub distances: Vec<DistanceEdge>,
}

fn start_time() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2024, 3, 4)
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .expect("valid date")
}

fn bump(hour: f64, center: f64, width: f64) -> f64 {
    let z = (hour - center) / width;
    (-0.5 * z * z).exp()
}

pub fn corridor(cfg: &CorridorConfig) -> Result<Corridor> {
    if cfg.sensors == 0 || cfg.days == 0 || cfg.cadence_minutes <= 0 {
        return Err(Error::InvalidArgument("sensors, days and cadence must be positive".into()));
    }
    if !(0.0..1.0).contains(&cfg.missing) || !(cfg.noise >= 0.0) || !(cfg.disturbance >= 0.0) {
        return Err(Error::InvalidArgument("noise, disturbance and missing rate out of range".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.sensors;
    let steps = (cfg.days as i64 * 24 * 60 / cfg.cadence_minutes) as usize;

    let mut position = vec![0.0f64; n];
    for i in 1..n {
        position[i] = position[i - 1] + rng.gen_range(400.0..1600.0);
    }
    let free_flow: Vec<f64> = (0..n).map(|_| rng.gen_range(60.0..70.0)).collect();
    let depth: Vec<f64> = (0..n).map(|_| rng.gen_range(12.0..30.0)).collect();
    let length = position[n - 1].max(1.0);

    let t0 = start_time();
    let step = TimeDelta::minutes(cfg.cadence_minutes);
    let timestamps: Vec<NaiveDateTime> = (0..steps).map(|k| t0 + step * k as i32).collect();

    let innov = Normal::new(0.0, cfg.disturbance).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let meas = Normal::new(0.0, cfg.noise).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut r = vec![0.0f64; n];
    let mut values = vec![0.0f64; n * steps];
    for (k, ts) in timestamps.iter().enumerate() {
        let prev = r.clone();
        for i in 0..n {
            let up = if i > 0 { prev[i - 1] } else { prev[i] };
            let down = if i + 1 < n { prev[i + 1] } else { prev[i] };
            r[i] = 0.9 * prev[i] + 0.04 * (up + down) + innov.sample(&mut rng);
        }
        let weekday = !matches!(ts.weekday(), Weekday::Sat | Weekday::Sun);
        let hour = ts.hour() as f64 + ts.minute() as f64 / 60.0;
        for i in 0..n {
            let lag = 0.75 * (1.0 - position[i] / length);
            let rush = if weekday {
                bump(hour, 8.0 + lag, 0.8) + 0.8 * bump(hour, 17.5 + lag, 1.0)
            } else {
                0.3 * bump(hour, 13.0, 2.0)
            };
            let v = free_flow[i] - depth[i] * rush + r[i] + meas.sample(&mut rng);
            values[i * steps + k] = if rng.gen::<f64>() < cfg.missing { f64::NAN } else { v.max(0.0) };
        }
    }

    let sensor_ids: Vec<String> = (0..n).map(|i| format!("s{:03}", i + 1)).collect();
    let mut distances = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j && i.abs_diff(j) <= cfg.link_span {
                distances.push(DistanceEdge {
                    from: sensor_ids[i].clone(),
                    to: sensor_ids[j].clone(),
                    distance: (position[i] - position[j]).abs().round(),
                });
            }
        }
    }
    let panel = Panel::new(sensor_ids, timestamps, Tensor::matrix(n, steps, values)?)?;
    Ok(Corridor { panel, distances })
}

/// Two phase-shifted sinusoids where the second also echoes the first.
pub fn coupled_sinusoids(steps: usize, period: f64) -> Result<Panel> {
    if steps == 0 || !(period > 0.0) {
        return Err(Error::InvalidArgument("steps and period must be positive".into()));
    }
    let w = std::f64::consts::TAU / period;
    let a: Vec<f64> = (0..steps).map(|t| 50.0 + 10.0 * (w * t as f64).sin()).collect();
    let b: Vec<f64> = (0..steps)
        .map(|t| {
            let echo = if t > 0 { a[t - 1] - 50.0 } else { 0.0 };
            55.0 + 6.0 * (w * t as f64 - 1.0).sin() + 0.4 * echo
        })
        .collect();
    let t0 = start_time();
    let timestamps = (0..steps).map(|k| t0 + TimeDelta::minutes(5 * k as i64)).collect();
    let values = Tensor::matrix(2, steps, a.into_iter().chain(b).collect())?;
    Panel::new(vec!["a".into(), "b".into()], timestamps, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corridor_shape_and_determinism() {
        let cfg = CorridorConfig {
            sensors: 5,
            days: 2,
            ..CorridorConfig::default()
        };
        let c = corridor(&cfg).unwrap();
        assert_eq!(c.panel.sensors(), 5);
        assert_eq!(c.panel.len(), 2 * 288);
        assert_eq!(c.panel.cadence(), Some(TimeDelta::minutes(5)));
        assert!(c.panel.mask.iter().all(|&m| m));
        assert_eq!(c.distances.len(), 5 * 4 - 2);
        assert!(c.distances.iter().all(|e| e.distance > 0.0));
        assert_eq!(corridor(&cfg).unwrap().panel, c.panel);
    }

    #[test]
    fn rush_hour_is_slower_than_night() {
        let c = corridor(&CorridorConfig {
            sensors: 3,
            days: 1,
            noise: 0.0,
            disturbance: 0.0,
            ..CorridorConfig::default()
        })
        .unwrap();
        let at = |h: usize| c.panel.values.get2(2, h * 12);
        assert!(at(8) < at(3) - 10.0);
    }

    #[test]
    fn missing_rate_is_honored() {
        let c = corridor(&CorridorConfig {
            sensors: 4,
            days: 3,
            missing: 0.1,
            ..CorridorConfig::default()
        })
        .unwrap();
        let frac = c.panel.mask.iter().filter(|&&m| !m).count() as f64 / c.panel.mask.len() as f64;
        assert!((frac - 0.1).abs() < 0.03, "{frac}");
    }

    #[test]
    fn sinusoids() {
        let p = coupled_sinusoids(48, 24.0).unwrap();
        assert_eq!(p.sensors(), 2);
        assert!((p.values.get2(0, 6) - 60.0).abs() < 1e-12);
    }
}

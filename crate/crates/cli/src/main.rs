use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use log::{info, warn};
use wavcast::config::RunConfig;
use wavcast::data::{format_timestamp, load_distances, load_panel, parse_timestamp, write_distances, write_matrix_csv, write_panel, Dataset, LabeledMatrix, Normalizer, Panel};
use wavcast::graph_learning::{blend_graphs, road_graph_from_distances, LearnedGraphState};
use wavcast::model::{ModelConfig, ModelState};
use wavcast::synthetic::{corridor, CorridorConfig};
use wavcast::tensor::Tensor;
use wavcast::training::{evaluate, evaluate_persistence, learn_network_graphs, train};
use wavcast::wavelet::dwt_decompose;

/// Wavelet multi-stream graph forecasting of sensor networks.
#[derive(Parser)]
#[command(name = "wavcast", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Haar-decompose every sensor series and write one CSV per stream.
    Decompose {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 2)]
        levels: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Learn a blended adjacency matrix per stream plus one for the decoder.
    LearnGraph {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        distances: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        gamma: f64,
        /// Optional config file for history length, levels and graph settings.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and save the best-validation checkpoint.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        distances: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print MAE, RMSE and MAPE of a checkpoint over every window of a panel.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Also print the last-value persistence baseline.
        #[arg(long)]
        baseline: bool,
    },
    /// Forecast the steps after `--at` (default: the last timestamp).
    Forecast {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        at: Option<String>,
    },
    /// Write a synthetic corridor panel and its distance file.
    Synth {
        #[arg(long, default_value_t = 20)]
        sensors: usize,
        #[arg(long, default_value_t = 14)]
        days: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Fraction of readings left empty.
        #[arg(long, default_value_t = 0.0)]
        missing: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run_config(path: Option<&Path>) -> anyhow::Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p).with_context(|| format!("reading config {}", p.display()))?,
        None => RunConfig::default(),
    };
    if let Ok(seed) = std::env::var("WAVCAST_SEED") {
        cfg.model.seed = seed.trim().parse().with_context(|| format!("WAVCAST_SEED={seed} is not an unsigned integer"))?;
    }
    Ok(cfg)
}

fn panel(path: &Path) -> anyhow::Result<Panel> {
    load_panel(path).with_context(|| format!("loading panel {}", path.display()))
}

fn write_matrix(dir: &Path, name: &str, m: &LabeledMatrix) -> anyhow::Result<()> {
    let path = dir.join(name);
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    write_matrix_csv(m, BufWriter::new(file))?;
    info!("wrote {}", path.display());
    Ok(())
}

fn decompose(input: &Path, levels: usize, out: &Path) -> anyhow::Result<()> {
    let p = panel(input)?;
    if levels == 0 {
        bail!("levels must be at least 1");
    }
    let block = 1usize << levels.min(63);
    let keep = p.len() / block * block;
    if keep == 0 {
        bail!("{} time steps are too few for {levels} levels", p.len());
    }
    let skip = p.len() - keep;
    if skip > 0 {
        warn!("dropping the first {skip} time steps so the length divides 2^{levels}");
    }
    if p.mask.iter().any(|m| !m) {
        warn!("missing readings are decomposed as 0");
    }
    let series = Tensor::from_fn(p.sensors(), keep, |i, j| p.values.get2(i, skip + j));
    let pyramid = dwt_decompose(&series, levels)?;
    std::fs::create_dir_all(out)?;
    let names = (1..=levels).map(|w| format!("a{w}")).chain([format!("b{levels}")]);
    for (name, s) in names.zip(pyramid.streams()) {
        let m = LabeledMatrix {
            corner: "sensor".into(),
            row_labels: p.sensor_ids.clone(),
            col_labels: (0..s.cols()).map(|k| k.to_string()).collect(),
            values: s.clone(),
        };
        write_matrix(out, &format!("{name}.csv"), &m)?;
    }
    Ok(())
}

fn learn_graph(input: &Path, distances: &Path, gamma: f64, config: Option<&Path>, out: &Path) -> anyhow::Result<()> {
    let cfg = run_config(config)?;
    let mut model = cfg.model;
    model.gamma = gamma;
    model.validate()?;
    let p = panel(input)?;
    let edges = load_distances(distances).with_context(|| format!("loading distances {}", distances.display()))?;
    let road = road_graph_from_distances(&edges, &p.sensor_ids, model.road_sigma, model.road_kappa)?;
    let normalizer = Normalizer::fit(&p, p.len())?;
    let ids = p.sensor_ids.clone();
    let data = Dataset::for_inference(p, model.history_len, model.horizon, normalizer)?;
    let all = &data.test.starts;
    let take = cfg.train.graph_windows.min(all.len());
    let starts: Vec<usize> = (0..take).map(|k| all[k * all.len() / take]).collect();
    info!("fitting {} graphs on {take} windows", model.streams() + 1);
    let learned = learn_network_graphs(&data, &starts, &model)?;
    std::fs::create_dir_all(out)?;
    let streams = model.streams();
    for (s, a) in learned.into_iter().enumerate() {
        let state = LearnedGraphState::new(a, road.clone(), model.gamma, model.eta)?;
        let m = LabeledMatrix {
            corner: "from".into(),
            row_labels: ids.clone(),
            col_labels: ids.clone(),
            values: blend_graphs(&state)?.into_weights(),
        };
        let name = if s < streams { format!("stream_{s}.csv") } else { "decoder.csv".into() };
        write_matrix(out, &name, &m)?;
    }
    Ok(())
}

fn train_cmd(config: Option<&Path>, data: &Path, distances: &Path, out: &Path) -> anyhow::Result<()> {
    let cfg = run_config(config)?;
    let p = panel(data)?;
    let edges = load_distances(distances).with_context(|| format!("loading distances {}", distances.display()))?;
    let road = road_graph_from_distances(&edges, &p.sensor_ids, cfg.model.road_sigma, cfg.model.road_kappa)?;
    let ds = Dataset::prepare(p, cfg.model.history_len, cfg.model.horizon, cfg.train.split)?;
    info!(
        "{} sensors; {} train, {} val, {} test windows",
        ds.sensors(),
        ds.train.len(),
        ds.val.len(),
        ds.test.len()
    );
    let stdout = io::stdout();
    let mut log = stdout.lock();
    let outcome = train(&cfg.model, &cfg.train, &ds, &road, &mut log)?;
    log.flush()?;
    outcome.best.save(out).with_context(|| format!("writing checkpoint {}", out.display()))?;
    info!("saved epoch {} to {}", outcome.best_epoch, out.display());
    let report = evaluate(&outcome.best, &ds, &ds.test, &cfg.train.horizons, cfg.train.batch_size)?;
    info!("test split:\n{}", report.table());
    Ok(())
}

fn load_pair(ckpt: &Path, data: &Path) -> anyhow::Result<(ModelState, Panel)> {
    let state = ModelState::load(ckpt).with_context(|| format!("loading checkpoint {}", ckpt.display()))?;
    let p = panel(data)?;
    if p.sensor_ids != state.sensor_ids {
        bail!("panel sensors do not match the checkpoint's {} sensors", state.sensor_ids.len());
    }
    Ok((state, p))
}

fn report_horizons(cfg: &ModelConfig) -> Vec<usize> {
    let hs: Vec<usize> = [3, 6, 12].into_iter().filter(|&h| h <= cfg.horizon).collect();
    if hs.is_empty() {
        vec![cfg.horizon]
    } else {
        hs
    }
}

fn eval_cmd(ckpt: &Path, data: &Path, baseline: bool) -> anyhow::Result<()> {
    let (state, p) = load_pair(ckpt, data)?;
    let cfg = &state.config;
    let ds = Dataset::for_inference(p, cfg.history_len, cfg.horizon, state.normalizer)?;
    let horizons = report_horizons(cfg);
    let report = evaluate(&state, &ds, &ds.test, &horizons, 64)?;
    let mut out = io::stdout().lock();
    write!(out, "{}", report.table())?;
    if baseline {
        let naive = evaluate_persistence(&ds, &ds.test, &horizons)?;
        write!(out, "\npersistence\n{}", naive.table())?;
    }
    Ok(())
}

fn forecast_cmd(ckpt: &Path, data: &Path, at: Option<&str>) -> anyhow::Result<()> {
    let (state, p) = load_pair(ckpt, data)?;
    let (l, t) = (state.config.history_len, state.config.horizon);
    let origin = match at {
        Some(s) => {
            let ts = parse_timestamp(s)?;
            p.position(&ts).with_context(|| format!("timestamp {s} is not in the panel"))?
        }
        None => p.len().checked_sub(1).context("empty panel")?,
    };
    if origin + 1 < l {
        bail!("forecast at step {origin} needs {l} steps of history");
    }
    let from = origin + 1 - l;
    let n = p.sensors();
    let history = Tensor::from_fn(n, l, |i, j| p.values.get2(i, from + j));
    let mask: Vec<bool> = (0..n).flat_map(|i| (0..l).map(move |j| (i, j))).map(|(i, j)| p.is_valid(i, from + j)).collect();
    let pred = state.forecast_masked(&history, Some(&mask))?;
    let cadence = p.cadence().context("panel needs two timestamps to infer its cadence")?;
    let last = p.timestamps[origin];
    let mut out = io::stdout().lock();
    write!(out, "timestamp")?;
    for id in &p.sensor_ids {
        write!(out, ",{id}")?;
    }
    writeln!(out)?;
    for k in 0..t {
        write!(out, "{}", format_timestamp(&(last + cadence * (k as i32 + 1))))?;
        for i in 0..n {
            write!(out, ",{}", pred.get2(i, k))?;
        }
        writeln!(out)?;
    }
    Ok(())
}

fn synth(cfg: &CorridorConfig, out: &Path) -> anyhow::Result<()> {
    let c = corridor(cfg)?;
    std::fs::create_dir_all(out)?;
    let panel_path = out.join("panel.csv");
    write_panel(&c.panel, BufWriter::new(File::create(&panel_path)?))?;
    let dist_path = out.join("distances.csv");
    write_distances(&c.distances, BufWriter::new(File::create(&dist_path)?))?;
    info!("wrote {} and {}", panel_path.display(), dist_path.display());
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Decompose { input, levels, out } => decompose(&input, levels, &out),
        Command::LearnGraph {
            input,
            distances,
            gamma,
            config,
            out,
        } => learn_graph(&input, &distances, gamma, config.as_deref(), &out),
        Command::Train {
            config,
            data,
            distances,
            out,
        } => train_cmd(config.as_deref(), &data, &distances, &out),
        Command::Eval { ckpt, data, baseline } => eval_cmd(&ckpt, &data, baseline),
        Command::Forecast { ckpt, data, at } => forecast_cmd(&ckpt, &data, at.as_deref()),
        Command::Synth {
            sensors,
            days,
            seed,
            missing,
            out,
        } => synth(
            &CorridorConfig {
                sensors,
                days,
                seed,
                missing,
                ..CorridorConfig::default()
            },
            &out,
        ),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use otcnet_core::analytics::experiments::{
    pooled_mm_changes, sweep_replicate, trained_state, ReplicateStats, SweepConfig, SweepResult, TrainedRun,
};
use otcnet_core::analytics::{
    arbitrage_series, crash_technicals, kurtosis, mean, mean_positive, pca_weights, skewness, zipf_fit,
    CrashTechnicals, ReturnSeries, ZipfFit,
};
use otcnet_core::snapshot::{provenance_line, write_history, write_trades, Snapshot};
use otcnet_core::trendrl::TelemetryRow;
use otcnet_core::{SimConfig, SimState, WeightSnapshot};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::args::{Cli, Command, ConfigArgs, CrashArgs, ExportArgs, RunArgs, StatsArgs, SweepArgs, TrainArgs};

/// Exit-code class of a failed command.
#[derive(Debug)]
pub enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<otcnet_core::Error> for Failure {
    fn from(e: otcnet_core::Error) -> Self {
        match e {
            otcnet_core::Error::Config { .. } | otcnet_core::Error::Parse(_) => Failure::Config(e.into()),
            _ => Failure::Runtime(e.into()),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

type Outcome<T = ()> = Result<T, Failure>;

fn config_error(msg: impl Into<String>) -> Failure {
    Failure::Config(anyhow!(msg.into()))
}

pub fn dispatch(cli: Cli) -> Outcome {
    if let Some(n) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| config_error(format!("--workers: {e}")))?;
    }
    let config = resolve_config(&cli.config)?;
    match cli.command {
        Command::Run(a) => run(config, a),
        Command::Train(a) => train(config, a),
        Command::CrashDemo(a) => crash_demo(config, a),
        Command::Sweep(a) => sweep(config, a),
        Command::Stats(a) => stats(a),
        Command::ExportWeights(a) => export_weights(a),
    }
}

/// Defaults, then the config file, then flags and environment.
pub fn resolve_config(args: &ConfigArgs) -> Outcome<SimConfig> {
    let mut config = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
            SimConfig::from_toml_str(&text)?
        }
        None => SimConfig::default(),
    };
    args.apply(&mut config);
    config.validate()?;
    Ok(config)
}

/// Trained trend-investor weights with the run that produced them.
#[derive(Debug, Serialize, Deserialize)]
pub struct WeightsFile {
    pub config: SimConfig,
    pub seeds: Vec<u64>,
    /// One entry per trained agent, seeds in order.
    pub agents: Vec<WeightSnapshot>,
}

fn read_weights(path: &Path) -> Outcome<WeightsFile> {
    let text = fs::read_to_string(path).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))
}

fn create(dir: &Path, name: &str) -> Outcome<(PathBuf, BufWriter<File>)> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    Ok((path, BufWriter::new(file)))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Outcome<PathBuf> {
    let (path, mut out) = create(dir, name)?;
    serde_json::to_writer_pretty(&mut out, value).context("serializing")?;
    writeln!(out).and_then(|_| out.flush()).context("writing")?;
    Ok(path)
}

fn write_with<F>(dir: &Path, name: &str, body: F) -> Outcome<PathBuf>
where
    F: FnOnce(&mut BufWriter<File>) -> anyhow::Result<()>,
{
    let (path, mut out) = create(dir, name)?;
    body(&mut out).with_context(|| format!("writing {}", path.display()))?;
    out.flush().context("flushing")?;
    Ok(path)
}

fn report(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

/// Fresh state, or the trained regime with learning frozen when weights are given.
fn initial_state(config: &SimConfig, freeze: Option<&Path>) -> Outcome<SimState> {
    match freeze {
        None => Ok(SimState::new(config.clone())?),
        Some(path) => {
            let weights = read_weights(path)?;
            let mut state = trained_state(config, config.rng_seed, &weights.agents)?;
            state.set_learning(false);
            Ok(state)
        }
    }
}

fn write_state_artifacts(dir: &Path, state: &SimState) -> Outcome<Vec<PathBuf>> {
    let cfg = &state.config;
    let mut paths = vec![
        write_with(dir, "trades.csv", |out| Ok(write_trades(out, cfg, &state.trades)?))?,
        write_with(dir, "history.csv", |out| {
            Ok(write_history(out, cfg, &state.mm_history)?)
        })?,
        write_json(dir, "snapshot.json", &Snapshot::of(state))?,
        write_with(dir, "config.toml", |out| {
            Ok(out.write_all(cfg.to_toml_string().as_bytes())?)
        })?,
    ];
    if !state.tis.is_empty() {
        paths.push(write_with(dir, "telemetry.csv", |out| {
            writeln!(out, "{}", provenance_line(cfg))?;
            writeln!(out, "agent,{}", TelemetryRow::CSV_HEADER)?;
            for ti in &state.tis {
                for row in &ti.telemetry {
                    writeln!(out, "{},{}", ti.agent, row.csv_row())?;
                }
            }
            Ok(())
        })?);
    }
    Ok(paths)
}

fn run(config: SimConfig, args: RunArgs) -> Outcome {
    let mut state = initial_state(&config, args.freeze_weights.as_deref())?;
    state.run(args.ticks)?;
    report(&write_state_artifacts(&args.out, &state)?);
    Ok(())
}

#[derive(Debug, Serialize)]
struct TrainingSummary {
    seed: u64,
    trained_at: u64,
    floor_mse: Option<f64>,
    profit_slope: f64,
    kurtosis: Option<f64>,
}

fn train(config: SimConfig, args: TrainArgs) -> Outcome {
    if config.n_trend_investors == 0 {
        return Err(config_error("n_trend_investors is 0; nothing to train"));
    }
    let seeds = if args.seeds.is_empty() {
        vec![config.rng_seed]
    } else {
        args.seeds
    };
    let runs: Vec<TrainedRun> = seeds
        .par_iter()
        .map(|&s| TrainedRun::train(&config, s, args.budget, args.measure_ticks))
        .collect::<Result<_, _>>()?;
    let summaries: Vec<TrainingSummary> = runs
        .iter()
        .map(|r| TrainingSummary {
            seed: r.seed,
            trained_at: r.trained_at,
            floor_mse: r.mean_floor_mse(100),
            profit_slope: r.profit_slope(),
            kurtosis: kurtosis(&r.trained_changes()).ok(),
        })
        .collect();
    let weights = WeightsFile {
        config: config.clone(),
        seeds: seeds.clone(),
        agents: runs.iter().flat_map(TrainedRun::weights).collect(),
    };
    let paths = vec![
        write_json(&args.out, "weights.json", &weights)?,
        write_json(
            &args.out,
            "training.json",
            &serde_json::json!({ "config": config, "seeds": seeds, "runs": summaries }),
        )?,
        write_with(&args.out, "telemetry.csv", |out| {
            writeln!(out, "{}", provenance_line(&config))?;
            writeln!(out, "seed,agent,{}", TelemetryRow::CSV_HEADER)?;
            for r in &runs {
                for ti in &r.state.tis {
                    for row in &ti.telemetry {
                        writeln!(out, "{},{},{}", r.seed, ti.agent, row.csv_row())?;
                    }
                }
            }
            Ok(())
        })?,
    ];
    report(&paths);
    Ok(())
}

fn crash_demo(config: SimConfig, args: CrashArgs) -> Outcome {
    if args.crash_tick >= args.ticks {
        return Err(config_error(format!(
            "--crash-tick {} must be below --ticks {}",
            args.crash_tick, args.ticks
        )));
    }
    let mut state = initial_state(&config, args.freeze_weights.as_deref())?;
    state.run(args.crash_tick)?;
    state.intervene_crash();
    state.run(args.ticks - args.crash_tick)?;
    let technicals: Option<CrashTechnicals> =
        crash_technicals(&state.mean_history, args.crash_tick as usize, args.window).ok();
    let mut paths = write_state_artifacts(&args.out, &state)?;
    paths.push(write_json(
        &args.out,
        "crash.json",
        &serde_json::json!({
            "config": config,
            "seed": config.rng_seed,
            "crash_tick": args.crash_tick,
            "ticks": args.ticks,
            "window": args.window,
            "technicals": technicals,
        }),
    )?);
    report(&paths);
    Ok(())
}

/// `start:stop:step`, inclusive of `stop` up to rounding.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>, String> {
    let parts: Vec<f64> = spec
        .split(':')
        .map(|s| s.trim().parse::<f64>().map_err(|e| format!("grid `{spec}`: {e}")))
        .collect::<Result<_, _>>()?;
    let [start, stop, step] = parts[..] else {
        return Err(format!("grid `{spec}` is not start:stop:step"));
    };
    if step.is_nan() || step <= 0.0 || stop < start {
        return Err(format!("grid `{spec}` is empty"));
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    Ok((0..=n)
        .map(|k| ((start + k as f64 * step) * 1e9).round() / 1e9)
        .collect())
}

/// One finished replicate, keyed on disk by `p` and seed.
#[derive(Debug, Serialize, Deserialize)]
struct ReplicateFile {
    p: f64,
    measure_ticks: u64,
    config: SimConfig,
    weights_from: Option<PathBuf>,
    stats: ReplicateStats,
}

fn sweep(config: SimConfig, args: SweepArgs) -> Outcome {
    let p_values = match &args.grid {
        Some(g) => parse_grid(g).map_err(config_error)?,
        None => args.p_values.clone(),
    };
    if p_values.is_empty() {
        return Err(config_error("sweep needs --p-values or --grid"));
    }
    if let Some(bad) = p_values.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(config_error(format!("link probability {bad} outside [0, 1]")));
    }
    if args.replicates == 0 {
        return Err(config_error("--replicates must be at least 1"));
    }
    let weights = match &args.weights {
        Some(path) => read_weights(path)?.agents,
        None => Vec::new(),
    };
    let seeds: Vec<u64> = (0..args.replicates).map(|k| config.rng_seed + k).collect();
    let cfg = SweepConfig {
        base: config.clone(),
        p_values: p_values.clone(),
        seeds: seeds.clone(),
        measure_ticks: args.ticks,
        weights,
    };
    let rep_dir = args.out.join("replicates");
    fs::create_dir_all(&rep_dir).with_context(|| format!("creating {}", rep_dir.display()))?;

    let jobs: Vec<(f64, u64)> = p_values
        .iter()
        .flat_map(|&p| seeds.iter().map(move |&s| (p, s)))
        .collect();
    let done: Vec<(f64, ReplicateStats)> = jobs
        .par_iter()
        .map(|&(p, seed)| -> Outcome<(f64, ReplicateStats)> {
            let name = format!("p{p}_seed{seed}.json");
            let path = rep_dir.join(&name);
            if let Some(prev) = fs::read_to_string(&path)
                .ok()
                .and_then(|t| serde_json::from_str::<ReplicateFile>(&t).ok())
                .filter(|f| f.config == config && f.measure_ticks == args.ticks && f.weights_from == args.weights)
            {
                return Ok((p, prev.stats));
            }
            let stats = sweep_replicate(&cfg, p, seed)?;
            let file = ReplicateFile {
                p,
                measure_ticks: args.ticks,
                config: config.clone(),
                weights_from: args.weights.clone(),
                stats: stats.clone(),
            };
            write_json(&rep_dir, &name, &file)?;
            Ok((p, stats))
        })
        .collect::<Result<_, _>>()?;

    let results: Vec<SweepResult> = p_values
        .iter()
        .map(|&p| {
            let reps = done.iter().filter(|(q, _)| *q == p).map(|(_, r)| r.clone()).collect();
            SweepResult::aggregate(p, reps)
        })
        .collect();
    let paths = vec![
        write_with(&args.out, "sweep.csv", |out| {
            writeln!(out, "{}", provenance_line(&config))?;
            writeln!(
                out,
                "p,seed,kurtosis,mean_arbitrage,max_arbitrage,mean_positive_arbitrage,mm_components"
            )?;
            for r in &results {
                for s in &r.replicates {
                    let k = s.kurtosis.map_or(String::new(), |k| k.to_string());
                    writeln!(
                        out,
                        "{},{},{k},{},{},{},{}",
                        r.p, s.seed, s.mean_arbitrage, s.max_arbitrage, s.mean_positive_arbitrage, s.mm_components
                    )?;
                }
            }
            Ok(())
        })?,
        write_json(
            &args.out,
            "aggregate.json",
            &serde_json::json!({
                "config": config,
                "seeds": seeds,
                "measure_ticks": args.ticks,
                "results": results,
            }),
        )?,
    ];
    report(&paths);
    Ok(())
}

#[derive(Debug, Serialize)]
struct Moments {
    n: usize,
    kurtosis: Option<f64>,
    skewness: Option<f64>,
}

impl Moments {
    fn of(xs: &[f64]) -> Self {
        Self {
            n: xs.len(),
            kurtosis: kurtosis(xs).ok(),
            skewness: skewness(xs).ok(),
        }
    }
}

/// Per-dealer mid series from a long-format history file.
pub fn read_history(path: &Path) -> Outcome<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| config_error(format!("{}: {e}", path.display())))?;
    let mut series: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for row in reader.records() {
        let row = row.with_context(|| format!("reading {}", path.display()))?;
        let bad = || anyhow!("{}: malformed row {:?}", path.display(), row);
        let tick: usize = row.get(0).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let mm: usize = row
            .get(1)
            .and_then(|s| s.strip_prefix("MM"))
            .and_then(|s| s.parse().ok())
            .ok_or_else(bad)?;
        let mid: f64 = row.get(2).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let s = series.entry(mm).or_default();
        if s.len() != tick {
            return Err(bad().into());
        }
        s.push(mid);
    }
    Ok(series.into_values().collect())
}

fn stats(args: StatsArgs) -> Outcome {
    let snap_path = args.dir.join("snapshot.json");
    let snap: Snapshot = serde_json::from_str(
        &fs::read_to_string(&snap_path).map_err(|e| config_error(format!("{}: {e}", snap_path.display())))?,
    )
    .with_context(|| format!("parsing {}", snap_path.display()))?;
    let mm_history = read_history(&args.dir.join("history.csv"))?;
    let len = mm_history.first().map_or(0, Vec::len);
    if mm_history.iter().any(|h| h.len() != len) {
        return Err(anyhow!("dealer histories differ in length").into());
    }
    let mean_history: Vec<f64> = (0..len)
        .map(|t| mm_history.iter().map(|h| h[t]).sum::<f64>() / mm_history.len() as f64)
        .collect();
    let from = args
        .from_tick
        .or(snap.trained_at.map(|t| t as usize))
        .unwrap_or(0)
        .min(len);

    let changes = ReturnSeries::default_window(&mean_history[from..]).changes;
    let pooled = pooled_mm_changes(&mm_history, from);
    let abs: Vec<f64> = changes.iter().map(|c| c.abs()).collect();
    let zipf: Option<ZipfFit> = zipf_fit(&abs).ok();
    let arb = if mm_history.len() >= 2 {
        arbitrage_series(&mm_history, snap.config.bid_offer)?.split_off(from)
    } else {
        Vec::new()
    };
    let summary = serde_json::json!({
        "config": snap.config,
        "seed": snap.seed,
        "from_tick": from,
        "trained_at": snap.trained_at,
        "global_mid": Moments::of(&changes),
        "pooled_dealer_mids": Moments::of(&pooled),
        "zipf": zipf,
        "arbitrage": {
            "mean": (!arb.is_empty()).then(|| mean(&arb)),
            "mean_positive": (!arb.is_empty()).then(|| mean_positive(&arb)),
            "fraction_positive": (!arb.is_empty())
                .then(|| arb.iter().filter(|&&a| a > 0.0).count() as f64 / arb.len() as f64),
        },
    });
    let paths = vec![
        write_json(&args.dir, "stats.json", &summary)?,
        write_with(&args.dir, "changes.csv", |out| {
            writeln!(out, "{}", provenance_line(&snap.config))?;
            writeln!(out, "window,change")?;
            for (k, c) in changes.iter().enumerate() {
                writeln!(out, "{k},{c}")?;
            }
            Ok(())
        })?,
    ];
    report(&paths);
    Ok(())
}

fn export_weights(args: ExportArgs) -> Outcome {
    let file = read_weights(&args.weights)?;
    let cfg = &file.config;
    let mut paths = vec![write_with(&args.out, "layers.csv", |out| {
        writeln!(out, "{}", provenance_line(cfg))?;
        writeln!(out, "agent,layer,shape,size,l2_norm,mean,std")?;
        for (a, snap) in file.agents.iter().enumerate() {
            for layer in &snap.layers {
                let v = &layer.values;
                let m = mean(v);
                let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len().max(1) as f64).sqrt();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                let shape = layer.shape.iter().map(usize::to_string).collect::<Vec<_>>().join("x");
                writeln!(out, "{a},{},{shape},{},{norm},{m},{sd}", layer.name, v.len())?;
            }
        }
        Ok(())
    })?];
    if file.agents.len() >= 3 {
        let flat: Vec<Vec<f64>> = file.agents.iter().map(WeightSnapshot::flatten).collect();
        let pca = pca_weights(&flat)?;
        paths.push(write_with(&args.out, "pca.csv", |out| {
            writeln!(out, "{}", provenance_line(cfg))?;
            writeln!(out, "agent,pc1,pc2")?;
            for (a, [x, y]) in pca.coords.iter().enumerate() {
                writeln!(out, "{a},{x},{y}")?;
            }
            Ok(())
        })?);
        paths.push(write_json(
            &args.out,
            "pca.json",
            &serde_json::json!({ "config": cfg, "seeds": file.seeds, "eigenvalues": pca.eigenvalues }),
        )?);
    }
    report(&paths);
    Ok(())
}

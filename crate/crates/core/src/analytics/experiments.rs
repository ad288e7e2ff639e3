//! Experiment harnesses: trained-regime runs, link-probability sweeps, crash
//! and convergence scenarios, and positioning ensembles.
//!
//! Every harness is a pure function of its configuration and seed list, so
//! results are reproducible regardless of how runs are scheduled.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    arbitrage_series, crash_technicals, kurtosis, mean, mean_convergence_check, mean_positive, trend_slope,
    ConvergenceReport, CrashTechnicals, ReturnSeries, RETURN_WINDOW,
};
use crate::config::SimConfig;
use crate::engine::SimState;
use crate::error::{Error, Result};
use crate::neural::WeightSnapshot;
use crate::trendrl::{DecisionRecord, TelemetryRow};

/// Tick budget for reaching the exploration floor from scratch.
pub const DEFAULT_TRAINING_BUDGET: u64 = 1_000_000;

/// A simulation trained from scratch and then observed for a while.
#[derive(Debug, Clone)]
pub struct TrainedRun {
    pub seed: u64,
    pub trained_at: u64,
    pub state: SimState,
}

impl TrainedRun {
    /// Trains until every trend investor reaches its exploration floor, then
    /// runs `measure_ticks` more.
    pub fn train(config: &SimConfig, seed: u64, budget: u64, measure_ticks: u64) -> Result<Self> {
        let mut state = SimState::with_seed(config.clone(), seed)?;
        if !state.run_until_trained(budget)? {
            return Err(Error::InsufficientData(format!(
                "seed {seed}: training did not finish within {budget} ticks"
            )));
        }
        let trained_at = state.trained_at.expect("training finished");
        state.run(measure_ticks)?;
        Ok(Self {
            seed,
            trained_at,
            state,
        })
    }

    fn start(&self) -> usize {
        self.trained_at as usize
    }

    /// Global mean-mid history from the end of training on.
    pub fn trained_history(&self) -> &[f64] {
        &self.state.mean_history[self.start()..]
    }

    pub fn trained_changes(&self) -> Vec<f64> {
        ReturnSeries::default_window(self.trained_history()).changes
    }

    /// Trend-investor profit, realized plus open, from the end of training on.
    pub fn trained_profit(&self) -> &[f64] {
        &self.state.ti_profit_history[self.start()..]
    }

    pub fn profit_slope(&self) -> f64 {
        trend_slope(self.trained_profit())
    }

    /// Every decision taken once training had finished.
    pub fn trained_decisions(&self) -> Vec<DecisionRecord> {
        self.state
            .tis
            .iter()
            .flat_map(|t| t.decisions.iter().filter(|d| d.tick >= self.trained_at).copied())
            .collect()
    }

    /// Mean batch MSE per agent over its updates once at the exploration
    /// floor, taking at most the last `window` of them. `None` for an agent
    /// with no such updates.
    pub fn floor_mse(&self, window: usize) -> Vec<Option<f64>> {
        self.state
            .tis
            .iter()
            .map(|t| {
                let floor = t.schedule.floor;
                let rows: Vec<&TelemetryRow> = t.telemetry.iter().filter(|r| r.epsilon <= floor).collect();
                let tail = &rows[rows.len().saturating_sub(window)..];
                (!tail.is_empty()).then(|| mean(&tail.iter().map(|r| r.batch_mse).collect::<Vec<_>>()))
            })
            .collect()
    }

    /// Mean of [`TrainedRun::floor_mse`] across agents.
    pub fn mean_floor_mse(&self, window: usize) -> Option<f64> {
        let vals: Vec<f64> = self.floor_mse(window).into_iter().flatten().collect();
        (!vals.is_empty()).then(|| mean(&vals))
    }

    pub fn weights(&self) -> Vec<WeightSnapshot> {
        self.state.tis.iter().map(|t| t.online().snapshot()).collect()
    }
}

/// Fresh simulation in the trained regime: trend investors start from
/// `weights` with exploration at its floor. With no weights the simulation
/// trains from scratch first.
pub fn trained_state(config: &SimConfig, seed: u64, weights: &[WeightSnapshot]) -> Result<SimState> {
    let mut state = SimState::with_seed(config.clone(), seed)?;
    if config.n_trend_investors == 0 {
        return Ok(state);
    }
    if weights.is_empty() {
        if !state.run_until_trained(DEFAULT_TRAINING_BUDGET)? {
            return Err(Error::InsufficientData(format!("seed {seed}: training did not finish")));
        }
        // Restart the clock so histories cover the trained regime only.
        let trained: Vec<WeightSnapshot> = state.tis.iter().map(|t| t.online().snapshot()).collect();
        state = SimState::with_seed(config.clone(), seed)?;
        state.load_trend_weights(&trained)?;
    } else {
        // Rotate the pool so different seeds see different agents.
        let offset = (seed as usize * config.n_trend_investors) % weights.len();
        let rotated: Vec<WeightSnapshot> = weights[offset..].iter().chain(&weights[..offset]).cloned().collect();
        state.load_trend_weights(&rotated)?;
    }
    Ok(state)
}

/// 50-tick changes of every dealer's mid, pooled.
pub fn pooled_mm_changes(mm_history: &[Vec<f64>], start: usize) -> Vec<f64> {
    mm_history
        .iter()
        .flat_map(|h| ReturnSeries::new(&h[start.min(h.len())..], RETURN_WINDOW).changes)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub base: SimConfig,
    pub p_values: Vec<f64>,
    /// One seed per replicate; the same seeds are reused for every `p`.
    pub seeds: Vec<u64>,
    pub measure_ticks: u64,
    /// Trained weights installed on the trend investors of every replicate.
    #[serde(skip)]
    pub weights: Vec<WeightSnapshot>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateStats {
    pub seed: u64,
    /// Kurtosis of pooled per-dealer 50-tick changes; `None` when undefined.
    pub kurtosis: Option<f64>,
    pub mean_arbitrage: f64,
    pub max_arbitrage: f64,
    pub mean_positive_arbitrage: f64,
    pub mm_components: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub p: f64,
    pub replicates: Vec<ReplicateStats>,
    pub mean_kurtosis: f64,
    pub stderr_kurtosis: f64,
    pub mean_positive_arbitrage: f64,
    pub stderr_positive_arbitrage: f64,
    pub mean_max_arbitrage: f64,
    pub mean_components: f64,
}

fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    match xs.len() {
        0 => (f64::NAN, f64::NAN),
        1 => (xs[0], 0.0),
        n => {
            let m = mean(xs);
            let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
            (m, (var / n as f64).sqrt())
        }
    }
}

impl SweepResult {
    pub fn aggregate(p: f64, replicates: Vec<ReplicateStats>) -> Self {
        let kurt: Vec<f64> = replicates.iter().filter_map(|r| r.kurtosis).collect();
        let pos: Vec<f64> = replicates.iter().map(|r| r.mean_positive_arbitrage).collect();
        let max: Vec<f64> = replicates.iter().map(|r| r.max_arbitrage).collect();
        let comps: Vec<f64> = replicates.iter().map(|r| r.mm_components as f64).collect();
        let (mean_kurtosis, stderr_kurtosis) = mean_stderr(&kurt);
        let (mean_positive_arbitrage, stderr_positive_arbitrage) = mean_stderr(&pos);
        Self {
            p,
            mean_kurtosis,
            stderr_kurtosis,
            mean_positive_arbitrage,
            stderr_positive_arbitrage,
            mean_max_arbitrage: mean_stderr(&max).0,
            mean_components: mean_stderr(&comps).0,
            replicates,
        }
    }
}

/// One replicate of a link-probability sweep.
pub fn sweep_replicate(cfg: &SweepConfig, p: f64, seed: u64) -> Result<ReplicateStats> {
    let config = SimConfig {
        prob_of_link: p,
        ..cfg.base.clone()
    };
    let mut state = trained_state(&config, seed, &cfg.weights)?;
    state.run(cfg.measure_ticks)?;
    let arb = arbitrage_series(&state.mm_history, config.bid_offer)?;
    Ok(ReplicateStats {
        seed,
        kurtosis: kurtosis(&pooled_mm_changes(&state.mm_history, 0)).ok(),
        mean_arbitrage: mean(&arb),
        max_arbitrage: arb.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        mean_positive_arbitrage: mean_positive(&arb),
        mm_components: state.network.market_maker_components().len(),
    })
}

/// Runs every `(p, seed)` pair in parallel and aggregates per `p`, in the
/// order of `cfg.p_values`.
pub fn sweep_link_probability(cfg: &SweepConfig) -> Result<Vec<SweepResult>> {
    let jobs: Vec<(usize, f64, u64)> = cfg
        .p_values
        .iter()
        .enumerate()
        .flat_map(|(i, &p)| cfg.seeds.iter().map(move |&s| (i, p, s)))
        .collect();
    let stats: Vec<(usize, ReplicateStats)> = jobs
        .par_iter()
        .map(|&(i, p, seed)| sweep_replicate(cfg, p, seed).map(|r| (i, r)))
        .collect::<Result<_>>()?;
    Ok(cfg
        .p_values
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let reps = stats.iter().filter(|(j, _)| *j == i).map(|(_, r)| r.clone()).collect();
            SweepResult::aggregate(p, reps)
        })
        .collect())
}

/// Runs `ticks` ticks in the trained regime and compares the terminal mean
/// mid with the mean value-investor target.
pub fn convergence_run(
    config: &SimConfig,
    seed: u64,
    weights: &[WeightSnapshot],
    ticks: u64,
) -> Result<Option<ConvergenceReport>> {
    let mut state = trained_state(config, seed, weights)?;
    state.run(ticks)?;
    mean_convergence_check(&state.mean_history, &state.targets())
}

/// Crashes value-investor targets at `crash_tick` and measures the
/// aftermath over `window`-tick spans.
pub fn crash_run(
    config: &SimConfig,
    seed: u64,
    weights: &[WeightSnapshot],
    crash_tick: u64,
    total_ticks: u64,
    window: usize,
) -> Result<CrashTechnicals> {
    let mut state = trained_state(config, seed, weights)?;
    state.run(crash_tick)?;
    state.intervene_crash();
    state.run(total_ticks.saturating_sub(crash_tick))?;
    crash_technicals(&state.mean_history, crash_tick as usize, window)
}

/// Total dealer inventory and mean-mid series of one trained-regime run.
pub fn positioning_run(
    config: &SimConfig,
    seed: u64,
    weights: &[WeightSnapshot],
    ticks: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut state = trained_state(config, seed, weights)?;
    state.run(ticks)?;
    Ok((state.inventory_history, state.mean_history))
}

/// Runs [`positioning_run`] for every seed in parallel.
pub fn positioning_ensemble(
    config: &SimConfig,
    seeds: &[u64],
    weights: &[WeightSnapshot],
    ticks: u64,
) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    seeds
        .par_iter()
        .map(|&s| positioning_run(config, s, weights, ticks))
        .collect()
}

/// Trains one simulation per seed in parallel.
pub fn train_many(config: &SimConfig, seeds: &[u64], measure_ticks: u64) -> Result<Vec<TrainedRun>> {
    seeds
        .par_iter()
        .map(|&s| TrainedRun::train(config, s, DEFAULT_TRAINING_BUDGET, measure_ticks))
        .collect()
}

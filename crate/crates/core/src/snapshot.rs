//! Serializable views of a running simulation and CSV artifact writers.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::config::SimConfig;
use crate::engine::{Intervention, SimState};
use crate::error::Result;
use crate::market::Trade;
use crate::netgen::Role;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentView {
    pub index: usize,
    pub id: String,
    pub role: Role,
    pub present: bool,
    pub inventory: f64,
    /// Value-investor target.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub target: Option<f64>,
    /// Trend-investor exploration rate.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub profit: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkView {
    pub tick: u64,
    pub agents: Vec<AgentView>,
    pub edges: Vec<(usize, usize)>,
    pub mm_components: usize,
}

/// Full state summary taken between ticks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub tick: u64,
    pub seed: u64,
    pub mids: Vec<f64>,
    pub bids: Vec<f64>,
    pub offers: Vec<f64>,
    pub inventories: Vec<f64>,
    pub mean_mid: f64,
    pub targets: Vec<f64>,
    pub epsilons: Vec<f64>,
    pub trade_count: usize,
    pub trained_at: Option<u64>,
    pub interventions: Vec<Intervention>,
    pub network: NetworkView,
    pub config: SimConfig,
}

impl NetworkView {
    pub fn of(state: &SimState) -> Self {
        let net = &state.network;
        let agents = (0..net.len())
            .map(|i| {
                let agent = net.agent(i).expect("index in range");
                let mut view = AgentView {
                    index: i,
                    id: agent.to_string(),
                    role: agent.role,
                    present: net.is_present(i),
                    inventory: state.inventory_of(i).expect("index in range"),
                    target: None,
                    epsilon: None,
                    profit: None,
                };
                match agent.role {
                    Role::MarketMaker => {}
                    Role::ValueInvestor => {
                        view.target = Some(state.vis[i - state.config.n_dealers].state.target);
                    }
                    Role::TrendInvestor => {
                        let ti = &state.tis[i - state.config.n_dealers - state.config.n_value_investors];
                        view.epsilon = Some(ti.epsilon());
                        view.profit = Some(ti.cumulative_profit);
                    }
                }
                view
            })
            .collect();
        Self {
            tick: state.tick,
            agents,
            edges: net.edges(),
            mm_components: net.market_maker_components().len(),
        }
    }
}

impl Snapshot {
    pub fn of(state: &SimState) -> Self {
        Self {
            tick: state.tick,
            seed: state.seed(),
            mids: state.mids(),
            bids: state.mms.iter().map(|m| m.bid()).collect(),
            offers: state.mms.iter().map(|m| m.offer()).collect(),
            inventories: state.mms.iter().map(|m| m.inventory).collect(),
            mean_mid: state.mean_mid(),
            targets: state.targets(),
            epsilons: state.tis.iter().map(|t| t.epsilon()).collect(),
            trade_count: state.trades.len(),
            trained_at: state.trained_at,
            interventions: state.interventions.clone(),
            network: NetworkView::of(state),
            config: state.config.clone(),
        }
    }
}

/// Comment line that ties an artifact to the run that produced it.
pub fn provenance_line(config: &SimConfig) -> String {
    let flat = config.to_toml_string().lines().collect::<Vec<_>>().join(";");
    format!("# seed={} config={}", config.rng_seed, flat)
}

pub fn write_trades<W: Write>(mut out: W, config: &SimConfig, trades: &[Trade]) -> Result<()> {
    writeln!(out, "{}", provenance_line(config))?;
    writeln!(out, "{}", Trade::CSV_HEADER)?;
    for t in trades {
        writeln!(out, "{}", t.csv_row())?;
    }
    Ok(())
}

/// Long-format mid history: one `tick,mm,mid` row per dealer per tick.
pub fn write_history<W: Write>(mut out: W, config: &SimConfig, mm_history: &[Vec<f64>]) -> Result<()> {
    writeln!(out, "{}", provenance_line(config))?;
    writeln!(out, "tick,mm,mid")?;
    for (m, series) in mm_history.iter().enumerate() {
        for (t, mid) in series.iter().enumerate() {
            writeln!(out, "{t},MM{m},{mid}")?;
        }
    }
    Ok(())
}

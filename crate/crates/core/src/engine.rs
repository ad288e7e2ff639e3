//! Simulation lifecycle: seeding, the per-tick scheduler, price histories and
//! live interventions.
//!
//! All randomness flows through one ChaCha stream owned by [`SimState`]. At
//! initialization it is consumed by network generation, then target draws,
//! then trend-investor weight initialization. Each tick consumes the
//! scheduler draw first, then whatever the selected agent needs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::config::SimConfig;
use crate::error::{Error, Result};
use crate::market::{
    best_quote, execute_trade, interdealer_act, value_investor_act, MarketMakerState, Side, Trade, ValueInvestorState,
};
use crate::netgen::{AgentId, NetworkTopology, Role};
use crate::neural::WeightSnapshot;
use crate::trendrl::{ActionId, TrendInvestor, Turn};

/// Draws `n` value-investor targets from an equal mixture of
/// `N(center + disparity, sigma)` and `N(center - disparity, sigma)`.
pub fn draw_targets<R: Rng + ?Sized>(n: usize, center: f64, disparity: f64, sigma: f64, rng: &mut R) -> Vec<f64> {
    let noise = Normal::new(0.0, sigma).expect("sigma is finite and non-negative");
    (0..n)
        .map(|_| {
            let mode = if rng.random::<bool>() {
                center + disparity
            } else {
                center - disparity
            };
            mode + noise.sample(rng)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueAgent {
    pub agent: usize,
    pub state: ValueInvestorState,
    pub active: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterventionKind {
    Crash,
    ForceShort,
    RemoveValueInvestors,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Intervention {
    pub tick: u64,
    pub kind: InterventionKind,
}

/// Who acted on a tick.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Actor {
    Value(usize),
    Trend(usize),
    Dealer(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub config: SimConfig,
    pub tick: u64,
    pub network: NetworkTopology,
    pub mms: Vec<MarketMakerState>,
    pub vis: Vec<ValueAgent>,
    pub tis: Vec<TrendInvestor>,
    /// `mm_history[m][t]` is dealer `m`'s mid recorded at tick `t`.
    pub mm_history: Vec<Vec<f64>>,
    /// Mean of all dealer mids per tick.
    pub mean_history: Vec<f64>,
    /// Sum of dealer inventories per tick.
    pub inventory_history: Vec<f64>,
    /// Total trend-investor profit per tick, realized plus marked to market.
    pub ti_profit_history: Vec<f64>,
    pub trades: Vec<Trade>,
    pub interventions: Vec<Intervention>,
    /// First tick at which every trend investor's exploration hit its floor.
    pub trained_at: Option<u64>,
    pub last_actor: Option<Actor>,
    rng: ChaCha8Rng,
}

impl SimState {
    /// Builds a fresh simulation seeded from `config.rng_seed`.
    pub fn new(config: SimConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        let network = NetworkTopology::generate(
            config.n_dealers,
            config.n_value_investors,
            config.n_trend_investors,
            config.prob_of_link,
            &mut rng,
        )?;
        let p0 = config.initial_price;
        let mms = vec![MarketMakerState::new(p0, config.skew_coefficient, config.bid_offer); config.n_dealers];
        let targets = draw_targets(
            config.n_value_investors,
            p0,
            config.market_disparity,
            config.target_mixture_sigma,
            &mut rng,
        );
        let vis = targets
            .into_iter()
            .enumerate()
            .map(|(k, target)| ValueAgent {
                agent: config.n_dealers + k,
                state: ValueInvestorState::new(target, config.vi_sigma),
                active: true,
            })
            .collect();
        let ti_base = config.n_dealers + config.n_value_investors;
        let tis = (0..config.n_trend_investors)
            .map(|k| TrendInvestor::new(ti_base + k, &config, &mut rng))
            .collect();
        let mut state = Self {
            tick: 0,
            network,
            mm_history: vec![Vec::new(); config.n_dealers],
            mean_history: Vec::new(),
            inventory_history: Vec::new(),
            ti_profit_history: Vec::new(),
            mms,
            vis,
            tis,
            trades: Vec::new(),
            interventions: Vec::new(),
            trained_at: None,
            last_actor: None,
            rng,
            config,
        };
        state.record();
        state.check_trained();
        Ok(state)
    }

    /// Same as [`SimState::new`] with the seed overridden.
    pub fn with_seed(mut config: SimConfig, seed: u64) -> Result<Self> {
        config.rng_seed = seed;
        Self::new(config)
    }

    pub fn seed(&self) -> u64 {
        self.config.rng_seed
    }

    pub fn mids(&self) -> Vec<f64> {
        self.mms.iter().map(MarketMakerState::mid).collect()
    }

    pub fn mean_mid(&self) -> f64 {
        self.mms.iter().map(MarketMakerState::mid).sum::<f64>() / self.mms.len() as f64
    }

    pub fn targets(&self) -> Vec<f64> {
        self.vis.iter().map(|v| v.state.target).collect()
    }

    /// Unweighted mean target of the value investors still in the market.
    pub fn mean_active_target(&self) -> Option<f64> {
        let active: Vec<f64> = self.vis.iter().filter(|v| v.active).map(|v| v.state.target).collect();
        (!active.is_empty()).then(|| active.iter().sum::<f64>() / active.len() as f64)
    }

    /// Sum of every participant's inventory; zero up to rounding.
    pub fn net_inventory(&self) -> f64 {
        self.mms.iter().map(|m| m.inventory).sum::<f64>()
            + self.vis.iter().map(|v| v.state.inventory).sum::<f64>()
            + self.tis.iter().map(|t| t.inventory).sum::<f64>()
    }

    pub fn total_mm_inventory(&self) -> f64 {
        self.mms.iter().map(|m| m.inventory).sum()
    }

    pub fn total_ti_profit(&self) -> f64 {
        self.tis.iter().map(|t| t.cumulative_profit + t.unrealized()).sum()
    }

    /// Agents eligible for this tick's draw, in index order.
    pub fn actor_pool(&self) -> Vec<Actor> {
        let mut pool: Vec<Actor> = self
            .vis
            .iter()
            .enumerate()
            .filter(|(_, v)| v.active)
            .map(|(k, _)| Actor::Value(k))
            .collect();
        pool.extend((0..self.tis.len()).map(Actor::Trend));
        if self.config.enable_broker_market {
            let limit = self.config.dealer_position_limit;
            pool.extend(
                self.mms
                    .iter()
                    .enumerate()
                    .filter(|(_, m)| m.inventory.abs() > limit)
                    .map(|(m, _)| Actor::Dealer(m)),
            );
        }
        pool
    }

    /// Advances the simulation by one tick.
    pub fn step(&mut self) -> Result<()> {
        let pool = self.actor_pool();
        self.last_actor = None;
        if !pool.is_empty() {
            let actor = pool[self.rng.random_range(0..pool.len())];
            self.act(actor)?;
            self.last_actor = Some(actor);
        }
        for mm in &mut self.mms {
            mm.update_mid();
        }
        self.tick += 1;
        self.record();
        self.check_trained();
        Ok(())
    }

    pub fn run(&mut self, ticks: u64) -> Result<()> {
        for _ in 0..ticks {
            self.step()?;
        }
        Ok(())
    }

    /// Steps until every trend investor has finished exploring or `max_ticks`
    /// more ticks have elapsed. Returns whether training completed.
    pub fn run_until_trained(&mut self, max_ticks: u64) -> Result<bool> {
        let stop = self.tick + max_ticks;
        while self.trained_at.is_none() && self.tick < stop {
            self.step()?;
        }
        Ok(self.trained_at.is_some())
    }

    fn act(&mut self, actor: Actor) -> Result<()> {
        let tick = self.tick;
        let cap = self.config.trade_size_cap;
        match actor {
            Actor::Value(k) => {
                let vi = &self.vis[k];
                if let Some(trade) =
                    value_investor_act(tick, vi.agent, &vi.state, &self.network, &self.mms, cap, &mut self.rng)?
                {
                    execute_trade(
                        &trade,
                        &self.network,
                        &mut self.mms,
                        Some(&mut self.vis[k].state.inventory),
                    );
                    self.trades.push(trade);
                }
            }
            Actor::Dealer(m) => {
                if let Some(trade) = interdealer_act(tick, m, &self.network, &self.mms, cap, &mut self.rng)? {
                    execute_trade(&trade, &self.network, &mut self.mms, None);
                    self.trades.push(trade);
                }
            }
            Actor::Trend(k) => self.trend_act(k)?,
        }
        Ok(())
    }

    fn trend_act(&mut self, k: usize) -> Result<()> {
        let tick = self.tick;
        let ti = &mut self.tis[k];
        let agent = ti.agent;
        match ti.turn(tick) {
            Turn::Wait => {}
            Turn::Close => {
                let open = ti.open.as_ref().expect("close turn has a position");
                let price = match open.direction {
                    // Unwinding a long means the maker buys back.
                    Some(d) => {
                        let size = d.sign() * open.size;
                        let trade = trend_trade(
                            tick,
                            agent,
                            size,
                            &self.network,
                            &mut self.mms,
                            &mut ti.inventory,
                            &mut self.rng,
                        )?;
                        let price = trade.price;
                        self.trades.push(trade);
                        Some(price)
                    }
                    None => None,
                };
                ti.close_position(price, tick, &mut self.rng);
            }
            Turn::Decide => {
                let action = ti.select_action(tick, &mut self.rng);
                match action.direction() {
                    Some(d) => {
                        let size = -d.sign() * self.config.trade_size_cap;
                        let trade = trend_trade(
                            tick,
                            agent,
                            size,
                            &self.network,
                            &mut self.mms,
                            &mut ti.inventory,
                            &mut self.rng,
                        )?;
                        ti.open_position(action, Some(trade.price), tick);
                        self.trades.push(trade);
                    }
                    None => ti.open_position(ActionId::NOTHING, None, tick),
                }
            }
        }
        Ok(())
    }

    fn record(&mut self) {
        for (m, mm) in self.mms.iter().enumerate() {
            self.mm_history[m].push(mm.mid());
        }
        self.mean_history.push(self.mean_mid());
        self.inventory_history.push(self.total_mm_inventory());
        let mids = self.mids();
        for ti in &mut self.tis {
            let neighbors = self
                .network
                .mm_neighbors(ti.agent)
                .expect("trend investor is in the network");
            ti.observe(crate::trendrl::visible_mid(neighbors, &mids));
        }
        let profit = self.total_ti_profit();
        self.ti_profit_history.push(profit);
    }

    fn check_trained(&mut self) {
        if self.trained_at.is_none() && self.tis.iter().all(TrendInvestor::is_trained) {
            self.trained_at = Some(self.tick);
        }
    }

    /// Multiplies every value-investor target by 0.8.
    pub fn intervene_crash(&mut self) {
        for vi in &mut self.vis {
            vi.state.target *= 0.8;
        }
        self.log(InterventionKind::Crash);
    }

    /// Puts every dealer short beyond its soft limit by one maximum trade.
    pub fn intervene_force_short(&mut self) {
        let level = -(self.config.dealer_position_limit + self.config.trade_size_cap);
        for mm in &mut self.mms {
            mm.inventory = level;
            mm.update_mid();
        }
        self.log(InterventionKind::ForceShort);
    }

    /// Takes every value investor out of the actor pool and the network.
    pub fn intervene_remove_value_investors(&mut self) {
        for vi in &mut self.vis {
            if vi.active {
                self.network
                    .remove_agent(vi.agent)
                    .expect("value investors are removable");
                vi.active = false;
            }
        }
        self.log(InterventionKind::RemoveValueInvestors);
    }

    pub fn intervene(&mut self, kind: InterventionKind) {
        match kind {
            InterventionKind::Crash => self.intervene_crash(),
            InterventionKind::ForceShort => self.intervene_force_short(),
            InterventionKind::RemoveValueInvestors => self.intervene_remove_value_investors(),
        }
    }

    fn log(&mut self, kind: InterventionKind) {
        self.interventions.push(Intervention { tick: self.tick, kind });
    }

    /// Installs trained weights on the trend investors, cycling through
    /// `weights` when there are fewer snapshots than agents.
    pub fn load_trend_weights(&mut self, weights: &[WeightSnapshot]) -> Result<()> {
        if weights.is_empty() && !self.tis.is_empty() {
            return Err(Error::Shape("no weight snapshots supplied".into()));
        }
        for (k, ti) in self.tis.iter_mut().enumerate() {
            ti.load_weights(&weights[k % weights.len()])?;
        }
        self.trained_at = None;
        self.check_trained();
        Ok(())
    }

    pub fn set_learning(&mut self, on: bool) {
        self.config.learning_enabled = on;
        for ti in &mut self.tis {
            ti.set_learning(on);
        }
    }

    pub fn agent(&self, index: usize) -> Result<AgentId> {
        self.network.agent(index)
    }

    /// Inventory held by any agent.
    pub fn inventory_of(&self, index: usize) -> Result<f64> {
        let agent = self.network.agent(index)?;
        Ok(match agent.role {
            Role::MarketMaker => self.mms[index].inventory,
            Role::ValueInvestor => self.vis[index - self.config.n_dealers].state.inventory,
            Role::TrendInvestor => self.tis[index - self.config.n_dealers - self.config.n_value_investors].inventory,
        })
    }
}

/// Executes a trend-investor trade at the best quote. `size` is signed from
/// the maker's side.
fn trend_trade(
    tick: u64,
    agent: usize,
    size: f64,
    net: &NetworkTopology,
    mms: &mut [MarketMakerState],
    inventory: &mut f64,
    rng: &mut ChaCha8Rng,
) -> Result<Trade> {
    let quote = best_quote(agent, net, mms, Side::of_size(size), size, rng)?;
    let trade = Trade::new(tick, net.agent(agent)?, net.agent(quote.mm)?, quote.price, size);
    execute_trade(&trade, net, mms, Some(inventory));
    Ok(trade)
}

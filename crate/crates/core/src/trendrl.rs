//! Deep-Q trend investors.
//!
//! Each agent watches the mean mid of the market makers it is linked to, keeps
//! at most one position open, and learns the value of seven actions: sell or
//! buy for 100, 250 or 500 ticks, or stay out. A transition is stored when a
//! position closes, with the state seen at opening and the state seen at
//! closing, and one minibatch update follows every stored transition.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::analytics::{momentum, range_percentile};
use crate::config::SimConfig;
use crate::error::{Error, Result};
use crate::neural::{AdamState, Network, WeightSnapshot, Q_INPUT_LEN, Q_OUTPUTS};

pub const HOLDING_TIMES: [u64; 3] = [100, 250, 500];

/// Ticks after which a do-nothing decision is scored.
pub const NOTHING_HORIZON: u64 = 100;

/// Lookback used for the momentum feature of decision records.
pub const MOMENTUM_LAG: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ActionId(u8);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Buy,
    Sell,
}

impl Direction {
    /// `+1` for a long position, `-1` for a short one.
    pub fn sign(self) -> f64 {
        match self {
            Direction::Buy => 1.0,
            Direction::Sell => -1.0,
        }
    }
}

impl ActionId {
    pub const COUNT: usize = Q_OUTPUTS;
    pub const NOTHING: ActionId = ActionId(3);

    pub fn new(id: usize) -> Result<Self> {
        if id < Self::COUNT {
            Ok(ActionId(id as u8))
        } else {
            Err(Error::Shape(format!("action id {id} out of range")))
        }
    }

    pub fn all() -> impl Iterator<Item = ActionId> {
        (0..Self::COUNT as u8).map(ActionId)
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn direction(self) -> Option<Direction> {
        match self.0 {
            0..=2 => Some(Direction::Sell),
            4..=6 => Some(Direction::Buy),
            _ => None,
        }
    }

    pub fn holding_time(self) -> u64 {
        match self.0 {
            0 | 4 => HOLDING_TIMES[0],
            1 | 5 => HOLDING_TIMES[1],
            2 | 6 => HOLDING_TIMES[2],
            _ => NOTHING_HORIZON,
        }
    }
}

/// Mean of the mids of the listed market makers.
pub fn visible_mid(mm_neighbors: &[usize], mids: &[f64]) -> f64 {
    mm_neighbors.iter().map(|&m| mids[m]).sum::<f64>() / mm_neighbors.len() as f64
}

/// The 512 prices ending at index `end` (inclusive) of `series`, left-padded
/// with `pad` before the start of the series.
pub fn window_state(series: &[f64], end: usize, pad: f64) -> Vec<f64> {
    let mut out = vec![pad; Q_INPUT_LEN];
    let first = (end + 1).saturating_sub(Q_INPUT_LEN);
    let take = end + 1 - first;
    out[Q_INPUT_LEN - take..].copy_from_slice(&series[first..=end]);
    out
}

/// State of an investor at tick `end` built directly from per-dealer mid
/// histories (`mm_history[m][t]`).
pub fn build_state(mm_neighbors: &[usize], mm_history: &[Vec<f64>], end: usize, pad: f64) -> Vec<f64> {
    let mut out = vec![pad; Q_INPUT_LEN];
    let first = (end + 1).saturating_sub(Q_INPUT_LEN);
    let offset = Q_INPUT_LEN - (end + 1 - first);
    for (slot, t) in (first..=end).enumerate() {
        out[offset + slot] = mm_neighbors.iter().map(|&m| mm_history[m][t]).sum::<f64>() / mm_neighbors.len() as f64;
    }
    out
}

/// Replay entry. States are kept as indices into the agent's visible price
/// series and materialized on demand.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoredTransition {
    pub state_end: usize,
    pub action: ActionId,
    pub reward: f64,
    pub next_end: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: ActionId,
    pub reward: f64,
    pub next_state: Vec<f64>,
}

/// Fixed-capacity ring buffer that overwrites its oldest entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayMemory {
    capacity: usize,
    next: usize,
    items: Vec<StoredTransition>,
}

impl ReplayMemory {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            next: 0,
            items: Vec::with_capacity(capacity.min(1024)),
        }
    }

    pub fn push(&mut self, t: StoredTransition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<&StoredTransition> {
        self.items.get(i)
    }

    pub fn iter(&self) -> impl Iterator<Item = &StoredTransition> {
        self.items.iter()
    }
}

/// An open position, or a pending do-nothing decision (no direction).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenTrade {
    pub action: ActionId,
    pub direction: Option<Direction>,
    pub size: f64,
    pub open_price: f64,
    pub opened_at: u64,
    pub hold: u64,
    pub state_end: usize,
}

impl OpenTrade {
    pub fn close_after(&self, tick: u64) -> i64 {
        self.hold as i64 - (tick as i64 - self.opened_at as i64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub epsilon: f64,
    pub decay: f64,
    pub floor: f64,
}

impl EpsilonSchedule {
    pub fn step(&mut self) {
        self.epsilon = (self.epsilon * self.decay).max(self.floor);
    }

    pub fn at_floor(&self) -> bool {
        self.epsilon <= self.floor
    }
}

/// One row of per-agent training telemetry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TelemetryRow {
    pub update: u64,
    pub tick: u64,
    pub epsilon: f64,
    pub batch_mse: f64,
    pub cumulative_profit: f64,
}

impl TelemetryRow {
    pub const CSV_HEADER: &'static str = "update,tick,epsilon,batch_mse,cumulative_profit";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.update, self.tick, self.epsilon, self.batch_mse, self.cumulative_profit
        )
    }
}

/// Features of the visible price series at the moment an action was chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub tick: u64,
    pub action: ActionId,
    pub greedy: bool,
    pub epsilon: f64,
    pub momentum: f64,
    pub percentile: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LearnerParams {
    discount: f64,
    batch_size: usize,
    tau: f64,
    trade_size: f64,
    center: f64,
    state_scale: f64,
    reward_scale: f64,
    learning: bool,
}

/// What a trend investor does with its turn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Turn {
    /// A position is open and not yet due.
    Wait,
    /// The open position (or pending do-nothing) is due and must be closed.
    Close,
    /// Flat: choose a new action.
    Decide,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendInvestor {
    pub agent: usize,
    online: Network,
    target: Network,
    adam: AdamState,
    pub schedule: EpsilonSchedule,
    memory: ReplayMemory,
    pub open: Option<OpenTrade>,
    /// Settled by the engine when trades execute.
    pub inventory: f64,
    /// Realized profit in price units.
    pub cumulative_profit: f64,
    pub updates: u64,
    visible: Vec<f64>,
    pub telemetry: Vec<TelemetryRow>,
    pub decisions: Vec<DecisionRecord>,
    params: LearnerParams,
}

impl TrendInvestor {
    pub fn new<R: Rng + ?Sized>(agent: usize, config: &SimConfig, rng: &mut R) -> Self {
        let mut online = Network::q_network();
        online.init_uniform(rng);
        let target = online.clone();
        let adam = AdamState::new(&online, config.learning_rate);
        Self {
            agent,
            online,
            target,
            adam,
            schedule: EpsilonSchedule {
                epsilon: config.epsilon_start,
                decay: config.epsilon_decay,
                floor: config.epsilon_floor,
            },
            memory: ReplayMemory::new(config.replay_capacity),
            open: None,
            inventory: 0.0,
            cumulative_profit: 0.0,
            updates: 0,
            visible: Vec::new(),
            telemetry: Vec::new(),
            decisions: Vec::new(),
            params: LearnerParams {
                discount: config.discount,
                batch_size: config.batch_size,
                tau: config.soft_update_tau,
                trade_size: config.trade_size_cap,
                center: config.initial_price,
                state_scale: config.state_scale,
                reward_scale: config.reward_scale,
                learning: config.learning_enabled,
            },
        }
    }

    /// Replaces both networks with trained weights and starts exploration at
    /// the floor.
    pub fn load_weights(&mut self, snapshot: &WeightSnapshot) -> Result<()> {
        self.online.load_snapshot(snapshot)?;
        self.target = self.online.clone();
        self.schedule.epsilon = self.schedule.floor;
        Ok(())
    }

    pub fn online(&self) -> &Network {
        &self.online
    }

    pub fn online_mut(&mut self) -> &mut Network {
        &mut self.online
    }

    pub fn target_network(&self) -> &Network {
        &self.target
    }

    pub fn memory(&self) -> &ReplayMemory {
        &self.memory
    }

    pub fn epsilon(&self) -> f64 {
        self.schedule.epsilon
    }

    pub fn is_trained(&self) -> bool {
        self.schedule.at_floor()
    }

    pub fn learning_enabled(&self) -> bool {
        self.params.learning
    }

    pub fn set_learning(&mut self, on: bool) {
        self.params.learning = on;
    }

    /// Appends this tick's visible mid.
    pub fn observe(&mut self, price: f64) {
        self.visible.push(price);
    }

    pub fn visible_history(&self) -> &[f64] {
        &self.visible
    }

    pub fn last_visible(&self) -> f64 {
        self.visible.last().copied().unwrap_or(self.params.center)
    }

    /// Raw (unnormalized) state ending at series index `end`.
    pub fn raw_state(&self, end: usize) -> Vec<f64> {
        window_state(&self.visible, end, self.params.center)
    }

    /// Network input for the state ending at `end`.
    pub fn input(&self, end: usize) -> Vec<f64> {
        self.normalize(self.raw_state(end))
    }

    fn normalize(&self, mut state: Vec<f64>) -> Vec<f64> {
        let (c, s) = (self.params.center, self.params.state_scale);
        state.iter_mut().for_each(|x| *x = (*x - c) / s);
        state
    }

    pub fn transition(&self, i: usize) -> Option<Transition> {
        self.memory.get(i).map(|t| Transition {
            state: self.raw_state(t.state_end),
            action: t.action,
            reward: t.reward,
            next_state: self.raw_state(t.next_end),
        })
    }

    pub fn turn(&self, tick: u64) -> Turn {
        match &self.open {
            Some(open) if open.close_after(tick) <= 0 => Turn::Close,
            Some(_) => Turn::Wait,
            None => Turn::Decide,
        }
    }

    pub fn q_values(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.online.forward(input)
    }

    /// Epsilon-greedy choice on the state ending at the latest observation.
    /// Always draws one uniform variate, plus one more when exploring.
    pub fn select_action<R: Rng + ?Sized>(&mut self, tick: u64, rng: &mut R) -> ActionId {
        let end = self.visible.len() - 1;
        let raw = self.raw_state(end);
        let explore = rng.random::<f64>() < self.schedule.epsilon;
        let action = if explore {
            ActionId(rng.random_range(0..ActionId::COUNT) as u8)
        } else {
            let q = self
                .online
                .forward(&self.normalize(raw.clone()))
                .expect("state has network input length");
            greedy_action(&q)
        };
        self.decisions.push(DecisionRecord {
            tick,
            action,
            greedy: !explore,
            epsilon: self.schedule.epsilon,
            momentum: momentum(&self.visible, MOMENTUM_LAG),
            percentile: range_percentile(&self.visible),
        });
        action
    }

    /// Records a newly opened position (or a do-nothing decision when
    /// `price` is `None`).
    pub fn open_position(&mut self, action: ActionId, price: Option<f64>, tick: u64) {
        let direction = action.direction();
        let size = if direction.is_some() {
            self.params.trade_size
        } else {
            0.0
        };
        self.open = Some(OpenTrade {
            action,
            direction,
            size,
            open_price: price.unwrap_or(f64::NAN),
            opened_at: tick,
            hold: action.holding_time(),
            state_end: self.visible.len() - 1,
        });
    }

    /// Closes the open position at `price` (ignored for do-nothing), stores
    /// the transition and runs one training step. Returns the reward.
    pub fn close_position<R: Rng + ?Sized>(&mut self, price: Option<f64>, tick: u64, rng: &mut R) -> f64 {
        let open = self.open.take().expect("close without an open position");
        let (reward, next_end) = match open.direction {
            Some(d) => {
                let close = price.expect("trade close needs a price");
                (d.sign() * open.size * (close - open.open_price), self.visible.len() - 1)
            }
            None => (0.0, open.state_end + NOTHING_HORIZON as usize),
        };
        self.cumulative_profit += reward;
        self.memory.push(StoredTransition {
            state_end: open.state_end,
            action: open.action,
            reward,
            next_end,
        });
        if self.params.learning {
            self.train_step(tick, rng);
        }
        reward
    }

    /// Mark-to-market value of the open position at the visible mid.
    pub fn unrealized(&self) -> f64 {
        match &self.open {
            Some(OpenTrade {
                direction: Some(d),
                size,
                open_price,
                ..
            }) => d.sign() * size * (self.last_visible() - open_price),
            _ => 0.0,
        }
    }

    /// One minibatch update. Returns the batch MSE, or `None` while memory
    /// holds fewer than one batch.
    pub fn train_step<R: Rng + ?Sized>(&mut self, tick: u64, rng: &mut R) -> Option<f64> {
        let batch = self.params.batch_size;
        if self.memory.len() < batch {
            return None;
        }
        let picks: Vec<StoredTransition> = (0..batch)
            .map(|_| self.memory.items[rng.random_range(0..self.memory.len())])
            .collect();
        let inputs: Vec<Vec<f64>> = picks.iter().map(|t| self.input(t.state_end)).collect();
        let targets: Vec<f64> = picks
            .iter()
            .map(|t| {
                let bootstrap = if self.params.discount > 0.0 {
                    let q_next = self
                        .target
                        .forward(&self.input(t.next_end))
                        .expect("state has network input length");
                    self.params.discount * q_next.iter().copied().fold(f64::NEG_INFINITY, f64::max)
                } else {
                    0.0
                };
                t.reward / self.params.reward_scale + bootstrap
            })
            .collect();
        let actions: Vec<usize> = picks.iter().map(|t| t.action.index()).collect();
        let refs: Vec<&[f64]> = inputs.iter().map(Vec::as_slice).collect();
        let (mse, grads) = self
            .online
            .batch_gradient(&refs, &actions, &targets)
            .expect("batch is well formed");
        self.adam
            .apply(&mut self.online, &grads)
            .expect("optimizer matches network");
        self.target
            .soft_update(&self.online, self.params.tau)
            .expect("target matches online network");
        self.schedule.step();
        self.updates += 1;
        self.telemetry.push(TelemetryRow {
            update: self.updates,
            tick,
            epsilon: self.schedule.epsilon,
            batch_mse: mse,
            cumulative_profit: self.cumulative_profit,
        });
        Some(mse)
    }

    /// Mean squared Bellman error over the whole memory against the current
    /// target network.
    pub fn memory_mse(&self) -> f64 {
        let mut total = 0.0;
        for t in self.memory.iter() {
            let q = self.online.forward(&self.input(t.state_end)).unwrap();
            let q_next = self.target.forward(&self.input(t.next_end)).unwrap();
            let y = t.reward / self.params.reward_scale
                + self.params.discount * q_next.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            total += (q[t.action.index()] - y).powi(2);
        }
        total / self.memory.len().max(1) as f64
    }
}

/// Index of the largest Q-value; the first index wins ties.
pub fn greedy_action(q: &[f64]) -> ActionId {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate() {
        if v > q[best] {
            best = i;
        }
    }
    ActionId(best as u8)
}

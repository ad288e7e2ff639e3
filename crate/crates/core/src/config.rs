use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Every simulation parameter. Serialized as a flat key-value document; keys
/// missing from a file keep their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n_value_investors: usize,
    pub n_trend_investors: usize,
    pub n_dealers: usize,
    /// Fixed distance between every dealer's bid and offer.
    pub bid_offer: f64,
    /// Soft inventory limit beyond which a dealer may recycle risk with its
    /// dealer neighbors.
    pub dealer_position_limit: f64,
    pub prob_of_link: f64,
    pub trade_size_cap: f64,
    /// Distance of each target-mixture mode from the initial price.
    pub market_disparity: f64,
    pub enable_broker_market: bool,
    /// Price shift per unit of dealer inventory.
    pub skew_coefficient: f64,
    /// Value-investor mispricing per unit of trade size.
    pub vi_sigma: f64,
    pub target_mixture_sigma: f64,
    pub initial_price: f64,
    pub rng_seed: u64,

    pub discount: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub learning_rate: f64,
    pub soft_update_tau: f64,
    pub epsilon_start: f64,
    pub epsilon_decay: f64,
    pub epsilon_floor: f64,
    /// Prices entering the Q-network are mapped to `(p - initial_price) / state_scale`.
    pub state_scale: f64,
    /// Rewards are divided by this before they become training targets.
    pub reward_scale: f64,
    /// Trend investors skip training when false (frozen weights).
    pub learning_enabled: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_value_investors: 10,
            n_trend_investors: 5,
            n_dealers: 10,
            bid_offer: 1.0,
            dealer_position_limit: 20.0,
            prob_of_link: 0.5,
            trade_size_cap: 3.0,
            market_disparity: 20.0,
            enable_broker_market: true,
            skew_coefficient: 0.001,
            vi_sigma: 5.0,
            target_mixture_sigma: 5.0,
            initial_price: 100.0,
            rng_seed: 0,
            discount: 0.99,
            batch_size: 32,
            replay_capacity: 10_000,
            learning_rate: 1e-3,
            soft_update_tau: 1e-3,
            epsilon_start: 1.0,
            epsilon_decay: 0.995,
            epsilon_floor: 0.05,
            state_scale: 10.0,
            reward_scale: 100.0,
            learning_enabled: true,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        fn check(ok: bool, field: &'static str, msg: &str) -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::config(field, msg))
            }
        }
        let prob = |x: f64| (0.0..=1.0).contains(&x);
        let pos = |x: f64| x.is_finite() && x > 0.0;
        check(
            self.n_dealers >= 1,
            "n_dealers",
            "at least one market maker is required",
        )?;
        check(
            self.bid_offer.is_finite() && self.bid_offer >= 0.0,
            "bid_offer",
            "must be >= 0",
        )?;
        check(
            self.dealer_position_limit.is_finite() && self.dealer_position_limit >= 0.0,
            "dealer_position_limit",
            "must be >= 0",
        )?;
        check(prob(self.prob_of_link), "prob_of_link", "must lie in [0, 1]")?;
        check(pos(self.trade_size_cap), "trade_size_cap", "must be > 0")?;
        check(self.market_disparity.is_finite(), "market_disparity", "must be finite")?;
        check(
            self.skew_coefficient.is_finite() && self.skew_coefficient >= 0.0,
            "skew_coefficient",
            "must be >= 0",
        )?;
        check(pos(self.vi_sigma), "vi_sigma", "must be > 0")?;
        check(
            self.target_mixture_sigma.is_finite() && self.target_mixture_sigma >= 0.0,
            "target_mixture_sigma",
            "must be >= 0",
        )?;
        check(pos(self.initial_price), "initial_price", "must be > 0")?;
        check((0.0..=1.0).contains(&self.discount), "discount", "must lie in [0, 1]")?;
        check(self.batch_size >= 1, "batch_size", "must be >= 1")?;
        check(
            self.replay_capacity >= self.batch_size,
            "replay_capacity",
            "must hold at least one batch",
        )?;
        check(pos(self.learning_rate), "learning_rate", "must be > 0")?;
        check(prob(self.soft_update_tau), "soft_update_tau", "must lie in [0, 1]")?;
        check(prob(self.epsilon_start), "epsilon_start", "must lie in [0, 1]")?;
        check(
            self.epsilon_decay > 0.0 && self.epsilon_decay <= 1.0,
            "epsilon_decay",
            "must lie in (0, 1]",
        )?;
        check(
            prob(self.epsilon_floor) && self.epsilon_floor <= self.epsilon_start,
            "epsilon_floor",
            "must lie in [0, epsilon_start]",
        )?;
        check(pos(self.state_scale), "state_scale", "must be > 0")?;
        check(pos(self.reward_scale), "reward_scale", "must be > 0")?;
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: SimConfig = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("flat config always serializes")
    }

    pub fn total_agents(&self) -> usize {
        self.n_dealers + self.n_value_investors + self.n_trend_investors
    }
}

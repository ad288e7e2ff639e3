//! Agent-based simulator of an over-the-counter market.
//!
//! Market makers are the only intermediaries. Every agent sits on a random
//! visibility network and can only trade with, or see prices from, the market
//! makers it is linked to. Two investor populations drive the flow:
//!
//! - value investors hold a static price target and size trades in proportion
//!   to their mispricing ([`market`]);
//! - trend investors learn from the visible mid-price history with a deep
//!   Q-network ([`trendrl`], backed by the small engine in [`neural`]).
//!
//! [`engine`] owns the world and advances it one tick at a time, and
//! [`analytics`] holds the statistics and experiment harnesses used to study
//! the resulting price series.

pub mod analytics;
pub mod config;
pub mod engine;
pub mod error;
pub mod market;
pub mod netgen;
pub mod neural;
pub mod snapshot;
pub mod trendrl;

pub use config::SimConfig;
pub use engine::SimState;
pub use error::{Error, Result};
pub use market::{MarketMakerState, Side, Trade};
pub use netgen::{AgentId, NetworkTopology, Role};
pub use neural::{AdamState, Network, Tensor, WeightSnapshot};
pub use trendrl::{ActionId, TrendInvestor};

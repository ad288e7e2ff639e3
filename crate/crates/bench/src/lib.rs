//! Fixtures shared by the benchmarks.

use otcnet_core::neural::Q_INPUT_LEN;
use otcnet_core::{Network, SimConfig, SimState, TrendInvestor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Default-config simulation advanced by `ticks`.
pub fn warm_state(ticks: u64) -> SimState {
    let mut s = SimState::new(SimConfig::default()).expect("default config is valid");
    s.run(ticks).expect("simulation runs");
    s
}

pub fn random_input(seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..Q_INPUT_LEN).map(|_| rng.random_range(-2.0..2.0)).collect()
}

pub fn q_network(seed: u64) -> Network {
    let mut net = Network::q_network();
    net.init_uniform(&mut ChaCha8Rng::seed_from_u64(seed));
    net
}

/// A trend investor whose replay memory holds at least one training batch.
pub fn trainable_investor() -> TrendInvestor {
    let mut state = warm_state(0);
    let batch = state.config.batch_size;
    loop {
        if let Some(k) = state.tis.iter().position(|t| t.memory().len() >= batch) {
            return state.tis.swap_remove(k);
        }
        state.run(1_000).expect("simulation runs");
    }
}

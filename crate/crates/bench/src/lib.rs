//! Shared fixtures for the benchmarks.

use cpmm_core::dynamics::ModelIParams;
use cpmm_core::execution::LiquidationConfig;
use cpmm_core::pool::{ClPool, LiquidityPosition};

/// Small-grid HJB problem on the usual test parameters.
pub fn hjb_problem() -> (ModelIParams, LiquidationConfig) {
    (
        ModelIParams { sigma: 0.03, beta: 1.0, gamma: 0.02, s0: 2000.0, z0: 2000.0 },
        LiquidationConfig { t_horizon: 0.1, phi: 1e-5, alpha: 5.0, eta: 1.0, kappa: 1e7, y0: 0.0 },
    )
}

/// Backtest-scale liquidation problem.
pub fn liquidation_problem() -> LiquidationConfig {
    LiquidationConfig { t_horizon: 0.083, phi: 0.005, alpha: 10.0, eta: 13.0 / 86_400.0, kappa: 2.25e7, y0: 14_877.0 }
}

/// Concentrated pool with a ladder of positions around `z`.
pub fn laddered_pool(z: f64) -> ClPool {
    let mut pool = ClPool::new(z, 0.003, 1e6).expect("pool");
    let centre = cpmm_core::pool::tick_of_rate(z).expect("tick");
    for k in 1..=20 {
        let p = LiquidityPosition::new(centre - 10 * k, centre + 10 * k, 5e4).expect("position");
        pool.add_position(p);
    }
    pool
}

//! Constant-product market maker toolkit.
//!
//! Pool arithmetic with concentrated liquidity, Monte Carlo simulators for the
//! rate/depth models, closed-form optimal execution and liquidity-provision
//! strategies, finite-difference HJB solvers used as numerical oracles,
//! estimation routines, a multi-pool LP environment and replay backtests.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backtest;
pub mod dynamics;
pub mod econometrics;
pub mod env;
pub mod error;
pub mod execution;
pub mod hjb;
pub mod lp;
pub mod pool;
pub mod rng;

pub use backtest::{BacktestConfig, EventRecord, LpBacktestConfig, LpBacktestReport, RunResult};
pub use dynamics::{CirParams, ModelIIParams, ModelIParams, MultiOuParams, OrderFlowParams, Paths};
pub use econometrics::{OlsFit, SpilloverReport, VarModel};
pub use env::{Action, EnvConfig, EnvState};
pub use error::{Error, Result};
pub use execution::{LiquidationConfig, MatrixCoefficients, MultiAssetConfig, ScalarCoefficients};
pub use hjb::{Grid3D, PdeSolution};
pub use lp::{LpParams, LpWealthState, SpreadQuote};
pub use nalgebra;
pub use pool::{LiquidityPosition, PoolState, Side, SwapResult, Tick};

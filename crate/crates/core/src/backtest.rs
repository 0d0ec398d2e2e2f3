//! Replay backtests over timestamped pool events.
//!
//! Execution backtests roll an (in-sample, out-of-sample) window pair across
//! the event log: Model I is estimated on the first half and a strategy is
//! executed against the replayed rates of the second. The LT's own orders pay
//! the CPMM execution cost at the replayed pre-trade depth but do not move the
//! replayed rates.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::dynamics::{simulate_cir, simulate_model1, CirParams, ModelIParams};
use crate::econometrics::{estimate_model1, sample_variance, Model1Estimate};
use crate::error::{domain, Error, Result};
use crate::execution::{benchmark_speed, exact_speed, AbMethod, Benchmark, LiquidationConfig, Schedule};
use crate::lp::{optimal_spread, spread_to_ticks, LpParams};
use crate::pool::{cl_holdings, execute_swap, wealth_to_position_depth, LiquidityPosition, PoolState, Side};
use crate::rng::{normal, stream};

const DAY: f64 = 86_400.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Swap,
    Mint,
    Burn,
}

/// One row of the event log. Oracle quotes are swap rows under the oracle id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    /// Unix seconds.
    pub timestamp: f64,
    pub pool_id: String,
    pub kind: EventKind,
    pub delta_x: f64,
    pub delta_y: f64,
    pub rate: f64,
    pub depth: f64,
    pub tick_lower: Option<i32>,
    pub tick_upper: Option<i32>,
}

pub fn read_events<R: Read>(r: R) -> Result<Vec<EventRecord>> {
    let mut rd = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for row in rd.deserialize() {
        let e: EventRecord = row?;
        if !(e.rate > 0.0) {
            return Err(domain(format!("event at {} has nonpositive rate", e.timestamp)));
        }
        out.push(e);
    }
    check_order(&out)?;
    Ok(out)
}

pub fn write_events<W: Write>(events: &[EventRecord], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for e in events {
        wr.serialize(e)?;
    }
    wr.flush()?;
    Ok(())
}

fn check_order(events: &[EventRecord]) -> Result<()> {
    let mut last: std::collections::HashMap<&str, f64> = Default::default();
    for e in events {
        if let Some(&t) = last.get(e.pool_id.as_str()) {
            if e.timestamp < t {
                return Err(domain(format!("timestamps decrease in pool {} at {}", e.pool_id, e.timestamp)));
            }
        }
        last.insert(&e.pool_id, e.timestamp);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyKind {
    Optimal,
    Twap,
    SingleOrder,
    AlmgrenChriss,
}

impl StrategyKind {
    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Optimal => "optimal",
            StrategyKind::Twap => "twap",
            StrategyKind::SingleOrder => "single-order",
            StrategyKind::AlmgrenChriss => "almgren-chriss",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestConfig {
    pub pool_id: String,
    pub oracle_id: String,
    /// Seconds.
    pub in_sample_window: f64,
    /// Seconds; also the execution horizon.
    pub out_sample_window: f64,
    /// Sampling step of the estimation series, seconds.
    pub sample_interval: f64,
    pub participation_rate: f64,
    pub gas_per_tx: f64,
    pub amm_fee: f64,
    pub phi: f64,
    pub alpha: f64,
    pub strategies: Vec<StrategyKind>,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        BacktestConfig {
            pool_id: "pool".into(),
            oracle_id: "oracle".into(),
            in_sample_window: 7200.0,
            out_sample_window: 7200.0,
            sample_interval: 15.0,
            participation_rate: 0.5,
            gas_per_tx: 5.0,
            amm_fee: 1e-4,
            phi: 0.005,
            alpha: 10.0,
            strategies: vec![StrategyKind::Optimal, StrategyKind::Twap, StrategyKind::SingleOrder],
        }
    }
}

impl BacktestConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.in_sample_window > 0.0 && self.out_sample_window > 0.0 && self.sample_interval > 0.0) {
            return Err(domain("windows and sampling interval must be positive"));
        }
        if !(0.0..=1.0).contains(&self.participation_rate) {
            return Err(domain("participation rate must lie in [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.amm_fee) || self.gas_per_tx < 0.0 || self.phi < 0.0 || self.alpha <= 0.0 {
            return Err(domain("fees and penalties out of range"));
        }
        if self.strategies.is_empty() {
            return Err(domain("no strategy selected"));
        }
        Ok(())
    }
}

/// One strategy run over one out-of-sample window. Amounts in X, inventory in Y.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub window: usize,
    pub strategy: String,
    pub exec_start_s: f64,
    pub exec_end_s: f64,
    pub estimation_start_s: f64,
    #[serde(rename = "y0_y_units")]
    pub y0: f64,
    #[serde(rename = "gross_pnl_x_units")]
    pub gross_pnl: f64,
    #[serde(rename = "fees_x_units")]
    pub fees: f64,
    #[serde(rename = "gas_x_units")]
    pub gas: f64,
    pub num_trades: usize,
    #[serde(rename = "terminal_inventory_y_units")]
    pub terminal_inventory: f64,
    #[serde(rename = "running_penalty_x_units")]
    pub running_penalty: f64,
    /// `x_T + y_T Z_T - y0 Z_0 - alpha y_T^2 - phi int y^2 dt - gas`.
    #[serde(rename = "objective_x_units")]
    pub objective: f64,
    #[serde(rename = "sigma_hat_per_sqrt_day")]
    pub sigma_hat: f64,
    #[serde(rename = "gamma_hat_per_sqrt_day")]
    pub gamma_hat: f64,
    #[serde(rename = "beta_hat_per_day")]
    pub beta_hat: f64,
    pub kappa: f64,
    pub eta_days: f64,
}

/// Trade-by-trade record; `gross_pnl` is recomputable from these rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeRecord {
    pub time_s: f64,
    /// Positive sells Y.
    pub delta_y: f64,
    /// Cash change in X.
    pub delta_x: f64,
    pub rate: f64,
    pub fee: f64,
}

/// A sampled view of the log: last value at or before each grid time.
struct Series {
    times: Vec<f64>,
    rates: Vec<f64>,
    depths: Vec<f64>,
    volumes: Vec<f64>,
}

impl Series {
    fn from_events(events: &[EventRecord], id: &str) -> Self {
        let mut s = Series { times: vec![], rates: vec![], depths: vec![], volumes: vec![] };
        for e in events.iter().filter(|e| e.pool_id == id && e.kind == EventKind::Swap) {
            s.times.push(e.timestamp);
            s.rates.push(e.rate);
            s.depths.push(e.depth);
            s.volumes.push(e.delta_y.abs());
        }
        s
    }

    fn last_at(&self, t: f64) -> Option<usize> {
        let k = self.times.partition_point(|&u| u <= t);
        k.checked_sub(1)
    }

    fn sample(&self, t0: f64, n: usize, step: f64) -> Option<(Vec<f64>, Vec<f64>)> {
        let mut r = Vec::with_capacity(n + 1);
        let mut d = Vec::with_capacity(n + 1);
        for k in 0..=n {
            let i = self.last_at(t0 + k as f64 * step)?;
            r.push(self.rates[i]);
            d.push(self.depths[i]);
        }
        Some((r, d))
    }

    /// Indices of events in `[t0, t1)`.
    fn range(&self, t0: f64, t1: f64) -> std::ops::Range<usize> {
        self.times.partition_point(|&u| u < t0)..self.times.partition_point(|&u| u < t1)
    }
}

/// Result of replaying one schedule.
pub struct Replay {
    pub result: RunResult,
    pub trades: Vec<TradeRecord>,
}

struct Window {
    index: usize,
    est_start: f64,
    exec_start: f64,
    est: Model1Estimate,
    y0: f64,
    kappa: f64,
    eta_days: f64,
    steps: usize,
    s: Vec<f64>,
    z: Vec<f64>,
    depth: Vec<f64>,
}

fn prepare_windows(events: &[EventRecord], cfg: &BacktestConfig, speculation: bool) -> Result<Vec<Window>> {
    cfg.validate()?;
    let pool = Series::from_events(events, &cfg.pool_id);
    let oracle = Series::from_events(events, &cfg.oracle_id);
    if pool.times.is_empty() || oracle.times.is_empty() {
        return Err(Error::InsufficientData(format!(
            "need swap rows for both '{}' and '{}'",
            cfg.pool_id, cfg.oracle_id
        )));
    }
    let t_first = pool.times[0].max(oracle.times[0]);
    let t_last = pool.times[pool.times.len() - 1];
    let n_est = (cfg.in_sample_window / cfg.sample_interval).round() as usize;
    let mut out = Vec::new();
    let mut start = t_first;
    let mut index = 0;
    while start + cfg.in_sample_window + cfg.out_sample_window <= t_last {
        let exec_start = start + cfg.in_sample_window;
        let w = prepare_one(&pool, &oracle, cfg, start, exec_start, n_est, index, speculation);
        match w {
            Some(w) => out.push(w),
            None => log_skip(index, start),
        }
        index += 1;
        start += cfg.out_sample_window;
    }
    if out.is_empty() {
        return Err(Error::InsufficientData("events do not cover a full window pair".into()));
    }
    Ok(out)
}

fn log_skip(index: usize, start: f64) {
    eprintln!("skipping window {index} starting at {start}: insufficient events");
}

#[allow(clippy::too_many_arguments)]
fn prepare_one(
    pool: &Series,
    oracle: &Series,
    cfg: &BacktestConfig,
    start: f64,
    exec_start: f64,
    n_est: usize,
    index: usize,
    speculation: bool,
) -> Option<Window> {
    // Estimation sees nothing at or after exec_start.
    let step = cfg.sample_interval;
    let (z_in, _) = pool.sample(start, n_est - 1, step)?;
    let (s_in, _) = oracle.sample(start, n_est - 1, step)?;
    let est = estimate_model1(&s_in, &z_in, step / DAY).ok()?;
    let swaps = pool.range(start, exec_start);
    if swaps.len() < 2 {
        return None;
    }
    let volume: f64 = pool.volumes[swaps.clone()].iter().sum();
    let span = pool.times[swaps.end - 1] - pool.times[swaps.start];
    let eta_s = span / (swaps.len() - 1) as f64;
    if !(eta_s > 0.0) {
        return None;
    }
    let y0 =
        if speculation { 0.0 } else { cfg.participation_rate * volume * cfg.out_sample_window / cfg.in_sample_window };
    let steps = (cfg.out_sample_window / eta_s).floor().max(1.0) as usize;
    let dt_s = cfg.out_sample_window / steps as f64;
    let (z, depth) = pool.sample(exec_start, steps, dt_s)?;
    let (s, _) = oracle.sample(exec_start, steps, dt_s)?;
    let kappa = depth[0];
    if !(kappa > 0.0) {
        return None;
    }
    Some(Window { index, est_start: start, exec_start, est, y0, kappa, eta_days: dt_s / DAY, steps, s, z, depth })
}

/// Outcome of executing a schedule along one path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathExecution {
    pub cash: f64,
    pub inventory: f64,
    pub fees: f64,
    pub running_penalty: f64,
    /// Inventory after each decision, `steps` entries.
    pub inventory_path: Vec<f64>,
    /// Signed Y sold at each decision.
    pub orders: Vec<f64>,
    pub trades: Vec<TradeRecord>,
}

/// Execute `kind` at `s.len() - 1` equally spaced decisions over `cfg.t_horizon`.
///
/// Each order is filled against a CPMM of the replayed depth at the replayed
/// pre-trade rate; the path itself is not moved. `t0_s` stamps the trade log.
#[allow(clippy::too_many_arguments)]
pub fn execute_path(
    kind: StrategyKind,
    s: &[f64],
    z: &[f64],
    depth: &[f64],
    cfg: &LiquidationConfig,
    beta: f64,
    amm_fee: f64,
    t0_s: f64,
) -> Result<PathExecution> {
    cfg.validate()?;
    if s.len() != z.len() || z.len() != depth.len() || z.len() < 2 {
        return Err(Error::Dimension("paths must share a length of at least 2".into()));
    }
    let steps = z.len() - 1;
    let dt = cfg.t_horizon / steps as f64;
    let mut out = PathExecution {
        cash: 0.0,
        inventory: cfg.y0,
        fees: 0.0,
        running_penalty: 0.0,
        inventory_path: Vec::with_capacity(steps),
        orders: Vec::with_capacity(steps),
        trades: Vec::new(),
    };
    for k in 0..steps {
        let t = k as f64 * dt;
        let y = out.inventory;
        let dy = match kind {
            StrategyKind::Optimal => exact_speed(t, y, z[k], s[k], cfg, beta, AbMethod::Analytic) * dt,
            other => {
                let b = match other {
                    StrategyKind::Twap => Benchmark::Twap,
                    StrategyKind::SingleOrder => Benchmark::SingleOrder,
                    _ => Benchmark::AlmgrenChriss,
                };
                match benchmark_speed(b, t, 0.0, y, z[k], cfg) {
                    Schedule::Speed(nu) => (nu * dt).min(y.max(0.0)),
                    Schedule::Block(q) => q,
                }
            }
        };
        let dy = if dy.is_finite() { dy } else { 0.0 };
        if dy != 0.0 {
            let p = PoolState::from_rate_depth(z[k], depth[k], amm_fee)?;
            let side = if dy > 0.0 { Side::SellY } else { Side::BuyY };
            let (_, r) = execute_swap(&p, side, dy.abs())?;
            let cash = if dy > 0.0 { r.delta_x } else { -r.delta_x };
            out.cash += cash;
            out.inventory -= dy;
            out.fees += r.fee_paid;
            out.trades.push(TradeRecord {
                time_s: t0_s + t * DAY,
                delta_y: dy,
                delta_x: cash,
                rate: z[k],
                fee: r.fee_paid,
            });
        }
        out.orders.push(dy);
        out.inventory_path.push(out.inventory);
        out.running_penalty += cfg.phi * out.inventory * out.inventory * dt;
    }
    Ok(out)
}

/// Replay one strategy over a prepared window.
fn replay(w: &Window, kind: StrategyKind, cfg: &BacktestConfig) -> Result<Replay> {
    let lc = LiquidationConfig {
        t_horizon: cfg.out_sample_window / DAY,
        phi: cfg.phi,
        alpha: cfg.alpha,
        eta: w.eta_days,
        kappa: w.kappa,
        y0: w.y0,
    };
    let ex = execute_path(kind, &w.s, &w.z, &w.depth, &lc, w.est.beta, cfg.amm_fee, w.exec_start)?;
    let y = ex.inventory;
    let gross = ex.cash + y * w.z[w.steps] - w.y0 * w.z[0];
    let gas = cfg.gas_per_tx * ex.trades.len() as f64;
    let result = RunResult {
        window: w.index,
        strategy: kind.name().into(),
        exec_start_s: w.exec_start,
        exec_end_s: w.exec_start + cfg.out_sample_window,
        estimation_start_s: w.est_start,
        y0: w.y0,
        gross_pnl: gross,
        fees: ex.fees,
        gas,
        num_trades: ex.trades.len(),
        terminal_inventory: y,
        running_penalty: ex.running_penalty,
        objective: gross - gas - cfg.alpha * y * y - ex.running_penalty,
        sigma_hat: w.est.sigma,
        gamma_hat: w.est.gamma,
        beta_hat: w.est.beta,
        kappa: w.kappa,
        eta_days: w.eta_days,
    };
    Ok(Replay { result, trades: ex.trades })
}

fn run(events: &[EventRecord], cfg: &BacktestConfig, speculation: bool) -> Result<Vec<RunResult>> {
    let windows = prepare_windows(events, cfg, speculation)?;
    let mut out = Vec::with_capacity(windows.len() * cfg.strategies.len());
    for w in &windows {
        for &k in &cfg.strategies {
            out.push(replay(w, k, cfg)?.result);
        }
    }
    Ok(out)
}

/// Rolling-window liquidation backtest; one result per (window, strategy).
pub fn run_liquidation_backtest(events: &[EventRecord], cfg: &BacktestConfig) -> Result<Vec<RunResult>> {
    run(events, cfg, false)
}

/// As the liquidation backtest, starting flat.
pub fn run_speculation_backtest(events: &[EventRecord], cfg: &BacktestConfig) -> Result<Vec<RunResult>> {
    run(events, cfg, true)
}

/// Trade logs of every run, in the same order as the results.
pub fn liquidation_trade_logs(events: &[EventRecord], cfg: &BacktestConfig) -> Result<Vec<Replay>> {
    let windows = prepare_windows(events, cfg, false)?;
    let mut out = Vec::new();
    for w in &windows {
        for &k in &cfg.strategies {
            out.push(replay(w, k, cfg)?);
        }
    }
    Ok(out)
}

pub fn write_results<W: Write>(results: &[RunResult], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in results {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

/// Synthetic Model I log: an oracle row and a pool swap every `step_s` seconds.
///
/// Pool rows carry the Y traded by a full-range pool of depth `kappa` moving
/// between consecutive rates, plus `flow_y` of rate-neutral two-way volume.
pub fn synthetic_model1_events(
    params: &ModelIParams,
    kappa: f64,
    flow_y: f64,
    step_s: f64,
    steps: usize,
    seed: u64,
) -> Result<Vec<EventRecord>> {
    let paths = simulate_model1(params, step_s / DAY, steps, seed)?;
    let s = paths.column("S").expect("S path");
    let z = paths.column("Z").expect("Z path");
    let mut out = Vec::with_capacity(2 * (steps + 1));
    for k in 0..=steps {
        let t = k as f64 * step_s;
        out.push(EventRecord {
            timestamp: t,
            pool_id: "oracle".into(),
            kind: EventKind::Swap,
            delta_x: 0.0,
            delta_y: 0.0,
            rate: s[k],
            depth: 0.0,
            tick_lower: None,
            tick_upper: None,
        });
        let (dx, dy) = if k == 0 {
            (0.0, 0.0)
        } else {
            (kappa * (z[k].sqrt() - z[k - 1].sqrt()), kappa * (1.0 / z[k].sqrt() - 1.0 / z[k - 1].sqrt()))
        };
        let sign = if dy < 0.0 { -1.0 } else { 1.0 };
        let (dx, dy) = (dx - sign * flow_y * z[k], dy + sign * flow_y);
        out.push(EventRecord {
            timestamp: t,
            pool_id: "pool".into(),
            kind: EventKind::Swap,
            delta_x: dx,
            delta_y: dy,
            rate: z[k],
            depth: kappa,
            tick_lower: None,
            tick_upper: None,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpBacktestConfig {
    pub pool_id: String,
    /// Length of one operation, seconds.
    pub period: f64,
    /// Rolling window for the volatility estimate, seconds.
    pub vol_window: f64,
    pub fee_tier: f64,
    pub wealth: f64,
    pub gas_per_op: f64,
    pub params: LpParams,
}

impl Default for LpBacktestConfig {
    fn default() -> Self {
        LpBacktestConfig {
            pool_id: "pool".into(),
            period: 60.0,
            vol_window: DAY,
            fee_tier: 5e-4,
            wealth: 1.0e5,
            gas_per_op: 84.8,
            params: LpParams { epsilon: 1e-6, ..LpParams::default() },
        }
    }
}

/// Per-operation returns as fractions of wealth, gas excluded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpBacktestReport {
    pub operations: usize,
    pub position_mean: f64,
    pub position_sd: f64,
    pub fee_mean: f64,
    pub fee_sd: f64,
    pub total_mean: f64,
    pub total_sd: f64,
    pub rebalance_cost_mean: f64,
    /// Mean total return net of gas at the configured wealth.
    pub net_mean: f64,
    /// Smallest wealth at which mean total return covers the flat gas; infinite if none.
    ///
    /// Position and fee income scale linearly with wealth, the rebalancing
    /// cost quadratically.
    pub break_even_wealth: f64,
    pub mean_spread: f64,
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (m, if v.len() > 1 { sample_variance(v).sqrt() } else { 0.0 })
}

/// Smallest `v` with `lin v - quad v^2 >= gas`.
fn break_even(lin: f64, quad: f64, gas: f64) -> f64 {
    if gas <= 0.0 {
        return 0.0;
    }
    if quad <= 0.0 {
        return if lin > 0.0 { gas / lin } else { f64::INFINITY };
    }
    let disc = lin * lin - 4.0 * quad * gas;
    if lin <= 0.0 || disc < 0.0 {
        return f64::INFINITY;
    }
    2.0 * gas / (lin + disc.sqrt())
}

/// Minute-by-minute replay of an optimal-spread LP.
///
/// Each operation deposits wealth `V` around the current rate, collects its
/// share of the fees of replayed swaps that land inside the range, and is
/// marked to market at the next rate. Fee income is in X; the Y leg of the
/// holdings is rebalanced at the CPMM convexity cost `zeta * dy^2`.
pub fn run_lp_backtest(events: &[EventRecord], cfg: &LpBacktestConfig) -> Result<LpBacktestReport> {
    cfg.params.validate()?;
    if !(cfg.period > 0.0 && cfg.vol_window >= cfg.period && cfg.wealth > 0.0) {
        return Err(domain("periods and wealth must be positive"));
    }
    let swaps: Vec<&EventRecord> =
        events.iter().filter(|e| e.pool_id == cfg.pool_id && e.kind == EventKind::Swap).collect();
    if swaps.is_empty() {
        return Err(Error::InsufficientData(format!("no swaps for pool '{}'", cfg.pool_id)));
    }
    if swaps.iter().any(|e| !(e.depth > 0.0)) {
        return Err(Error::InsufficientData("swap rows without pool depth".into()));
    }
    let times: Vec<f64> = swaps.iter().map(|e| e.timestamp).collect();
    let last_at = |t: f64| times.partition_point(|&u| u <= t).checked_sub(1);
    let t0 = times[0] + cfg.vol_window;
    let t_end = times[times.len() - 1];
    let n_vol = (cfg.vol_window / cfg.period).round() as usize;
    let per_day = DAY / cfg.period;

    let mut pos_r = Vec::new();
    let mut fee_r = Vec::new();
    let mut tot_r = Vec::new();
    let mut rebal = Vec::new();
    let mut spreads = Vec::new();
    let mut prev_y: Option<f64> = None;
    let mut t = t0;
    while t + cfg.period <= t_end {
        // Rolling daily volatility of period log returns.
        let mut rets = Vec::with_capacity(n_vol);
        let mut ok = true;
        for j in 0..n_vol {
            let a = last_at(t - cfg.vol_window + j as f64 * cfg.period);
            let b = last_at(t - cfg.vol_window + (j + 1) as f64 * cfg.period);
            match (a, b) {
                (Some(a), Some(b)) => rets.push((swaps[b].rate / swaps[a].rate).ln()),
                _ => ok = false,
            }
        }
        let Some(i_now) = last_at(t) else {
            t += cfg.period;
            continue;
        };
        if !ok {
            t += cfg.period;
            continue;
        }
        let sigma = (sample_variance(&rets) * per_day).sqrt();
        let z = swaps[i_now].rate;
        let depth = swaps[i_now].depth;
        let pool_value = 2.0 * depth * z.sqrt();
        // Fee rate over the last period, per day.
        let recent = times.partition_point(|&u| u <= t - cfg.period)..=i_now;
        let fee_prev: f64 = recent.map(|i| cfg.fee_tier * swaps[i].delta_x.abs()).sum();
        let pi = (fee_prev / pool_value * per_day).max(1e-12);

        let params = LpParams { sigma: sigma.max(1e-8), ..cfg.params };
        let quote = optimal_spread(pi, z, &params)?;
        let ticks = spread_to_ticks(&quote, z)?;
        let k_pos = wealth_to_position_depth(cfg.wealth, 1.0, z, ticks.lower, ticks.upper)?;
        let pos = LiquidityPosition { lower: ticks.lower, upper: ticks.upper, depth: k_pos };
        let (hx, hy) = cl_holdings(&pos, z);
        let v_in = hx + hy * z;
        spreads.push(ticks.upper.rate / ticks.lower.rate - 1.0);

        let mut fee = 0.0;
        let window = times.partition_point(|&u| u <= t)..times.partition_point(|&u| u <= t + cfg.period);
        for e in &swaps[window] {
            if pos.in_range(e.rate) {
                fee += cfg.fee_tier * e.delta_x.abs() * k_pos / (k_pos + e.depth);
            }
        }
        let z1 = swaps[last_at(t + cfg.period).unwrap_or(i_now)].rate;
        let (hx1, hy1) = cl_holdings(&pos, z1);
        let dv = hx1 + hy1 * z1 - v_in;
        let cost = match prev_y {
            Some(py) => z.powf(1.5) / depth * (hy - py).powi(2),
            None => 0.0,
        };
        prev_y = Some(hy1);
        pos_r.push(dv / cfg.wealth);
        fee_r.push(fee / cfg.wealth);
        rebal.push(cost / cfg.wealth);
        tot_r.push((dv + fee - cost) / cfg.wealth);
        t += cfg.period;
    }
    if pos_r.is_empty() {
        return Err(Error::InsufficientData("no complete operation after the volatility window".into()));
    }
    let (pm, ps) = mean_sd(&pos_r);
    let (fm, fs) = mean_sd(&fee_r);
    let (tm, ts) = mean_sd(&tot_r);
    let (rm, _) = mean_sd(&rebal);
    let (sm, _) = mean_sd(&spreads);
    Ok(LpBacktestReport {
        operations: pos_r.len(),
        position_mean: pm,
        position_sd: ps,
        fee_mean: fm,
        fee_sd: fs,
        total_mean: tm,
        total_sd: ts,
        rebalance_cost_mean: rm,
        net_mean: tm - cfg.gas_per_op / cfg.wealth,
        break_even_wealth: break_even(pm + fm, rm / cfg.wealth, cfg.gas_per_op),
        mean_spread: sm,
    })
}

/// Synthetic CL pool log: GBM rate, CIR fee rate, one swap every `period_s`.
///
/// Each swap's X volume is sized so that the fee tier on it earns the pool
/// `pi` per day.
#[allow(clippy::too_many_arguments)]
pub fn synthetic_lp_events(
    z0: f64,
    sigma: f64,
    kappa: f64,
    fee_tier: f64,
    cir: &CirParams,
    period_s: f64,
    steps: usize,
    seed: u64,
) -> Result<Vec<EventRecord>> {
    if !(z0 > 0.0 && kappa > 0.0 && fee_tier > 0.0 && sigma >= 0.0) {
        return Err(domain("rate, depth and fee tier must be positive"));
    }
    let dt = period_s / DAY;
    let pis = simulate_cir(cir, dt, steps, seed)?;
    let pi = pis.column("pi_tilde").expect("pi path");
    let mut r = stream(seed, 11);
    let mut z = z0;
    let mut out = Vec::with_capacity(steps + 1);
    for (k, &pi_k) in pi.iter().enumerate().take(steps + 1) {
        let vol_x = pi_k * 2.0 * kappa * z.sqrt() * dt / fee_tier;
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        out.push(EventRecord {
            timestamp: k as f64 * period_s,
            pool_id: "pool".into(),
            kind: EventKind::Swap,
            delta_x: sign * vol_x,
            delta_y: -sign * vol_x / z,
            rate: z,
            depth: kappa,
            tick_lower: None,
            tick_upper: None,
        });
        z *= (-0.5 * sigma * sigma * dt + sigma * dt.sqrt() * normal(&mut r)).exp();
    }
    Ok(out)
}

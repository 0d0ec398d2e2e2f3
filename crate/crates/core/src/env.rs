//! Discrete-time multi-pool liquidity-provision environment.
//!
//! Every `dt` minutes the agent picks, per pool, a weight and a tick range
//! `(Z(i - l), Z(i + u + 1)]` around the active tick `i`. Between decisions, Poisson
//! order flow trades against the pool's constant background depth plus the
//! agent's position, and the agent earns its depth share of the fees.

use serde::{Deserialize, Serialize};

use crate::dynamics::{OrderFlowGenerator, OrderFlowParams};
use crate::econometrics::sample_variance;
use crate::error::{domain, Error, Result};
use crate::lp::{optimal_spread, LpParams};
use crate::pool::{
    cl_holdings, rate_of_tick, tick_of_rate, wealth_to_position_depth, Amount, ClPool, LiquidityPosition, Side, Tick,
};
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoolConfig {
    pub flow: OrderFlowParams,
    pub kappa_rest: f64,
    pub tau: f64,
    pub z0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub pools: Vec<PoolConfig>,
    /// Minutes between decisions.
    pub dt: f64,
    /// Episode length in minutes.
    pub horizon: f64,
    pub v0: f64,
    /// Largest spread in ticks on either side.
    pub max_spread: u32,
    /// Gas in X per adjusted pool.
    pub gas_per_adjust: f64,
}

impl EnvConfig {
    /// One pool with the reference market: `Z0 = 2200`, depth `1.5e7`, one-day episodes
    /// with 30-minute decisions, wealth 500,000 and gas 73.3.
    pub fn single_pool(lambda: f64, p_buy: f64, tau: f64) -> Self {
        EnvConfig {
            pools: vec![PoolConfig {
                flow: OrderFlowParams { lambda, p_buy, mu_size: 132_030.0, xi_size: 20_000.0 },
                kappa_rest: 15_000_000.0,
                tau,
                z0: 2200.0,
            }],
            dt: 30.0,
            horizon: 1440.0,
            v0: 500_000.0,
            max_spread: 500,
            gas_per_adjust: 73.3,
        }
    }

    pub fn n_pools(&self) -> usize {
        self.pools.len()
    }

    pub fn n_steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.pools.is_empty() {
            return Err(domain("need at least one pool"));
        }
        if !(self.dt > 0.0 && self.horizon > 0.0) {
            return Err(domain("dt and horizon must be positive"));
        }
        let k = self.horizon / self.dt;
        if (k - k.round()).abs() > 1e-9 {
            return Err(domain("dt must divide the horizon"));
        }
        if self.max_spread < 1 || !(self.v0 > 0.0) || !(self.gas_per_adjust >= 0.0) {
            return Err(domain("need max_spread >= 1, V0 > 0, gas >= 0"));
        }
        for p in &self.pools {
            if !(p.kappa_rest >= 0.0 && p.z0 > 0.0 && (0.0..1.0).contains(&p.tau)) {
                return Err(domain("pool needs depth >= 0, Z0 > 0, fee tier in [0, 1)"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub weights: Vec<f64>,
    pub lower: Vec<u32>,
    pub upper: Vec<u32>,
}

impl Action {
    /// The same spreads in every pool with equal weights.
    pub fn uniform(n: usize, lower: u32, upper: u32) -> Self {
        Action { weights: vec![1.0 / n as f64; n], lower: vec![lower; n], upper: vec![upper; n] }
    }

    pub fn validate(&self, cfg: &EnvConfig) -> Result<()> {
        let n = cfg.n_pools();
        if self.weights.len() != n || self.lower.len() != n || self.upper.len() != n {
            return Err(Error::Dimension(format!("action for {} pools, environment has {n}", self.weights.len())));
        }
        if self.weights.iter().any(|w| !(*w >= 0.0)) || (self.weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(domain("weights must be nonnegative and sum to 1"));
        }
        if self.lower.iter().chain(&self.upper).any(|&s| s > cfg.max_spread) {
            return Err(domain(format!("spreads must lie in 0..={}", cfg.max_spread)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolView {
    pub z: f64,
    pub tick: i32,
    pub x_hold: f64,
    pub y_hold: f64,
    /// Fees accrued since the last withdrawal, in X.
    pub fees: f64,
    pub position: Option<LiquidityPosition>,
    pub weight: f64,
    pub lower_spread: u32,
    pub upper_spread: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub t: f64,
    pub step: usize,
    /// Mark-to-market wealth in X.
    pub v: f64,
    /// Wealth not deployed in any pool.
    pub cash: f64,
    pub pools: Vec<PoolView>,
    pub done: bool,
    pub ruined: bool,
}

impl EnvState {
    /// `cash + sum (x + y Z + fees)`.
    pub fn mark_to_market(&self) -> f64 {
        self.cash + self.pools.iter().map(|p| p.x_hold + p.y_hold * p.z + p.fees).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub v_before: f64,
    pub gas: f64,
    pub adjusted: Vec<bool>,
    pub v_after: f64,
    pub agent_fees: Vec<f64>,
    pub background_fees: Vec<f64>,
    pub charged_fees: Vec<f64>,
    pub n_trades: Vec<usize>,
    pub log_returns: Vec<f64>,
}

pub struct Env {
    pub config: EnvConfig,
    pools: Vec<ClPool>,
    flows: Vec<OrderFlowGenerator>,
    state: EnvState,
}

impl Env {
    pub fn reset(config: &EnvConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut pools = Vec::new();
        let mut flows = Vec::new();
        let mut views = Vec::new();
        for (n, p) in config.pools.iter().enumerate() {
            pools.push(ClPool::new(p.z0, p.tau, p.kappa_rest)?);
            flows.push(OrderFlowGenerator::new(&p.flow, derive_seed(seed, n as u64))?);
            views.push(PoolView {
                z: p.z0,
                tick: tick_of_rate(p.z0)?,
                x_hold: 0.0,
                y_hold: 0.0,
                fees: 0.0,
                position: None,
                weight: 0.0,
                lower_spread: 0,
                upper_spread: 0,
            });
        }
        let state =
            EnvState { t: 0.0, step: 0, v: config.v0, cash: config.v0, pools: views, done: false, ruined: false };
        Ok(Env { config: config.clone(), pools, flows, state })
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    fn refresh_views(&mut self) {
        for (view, pool) in self.state.pools.iter_mut().zip(&self.pools) {
            view.z = pool.rate();
            view.tick = tick_of_rate(view.z).unwrap_or(view.tick);
            let (x, y) = view.position.as_ref().map_or((0.0, 0.0), |p| cl_holdings(p, view.z));
            view.x_hold = x;
            view.y_hold = y;
        }
        self.state.v = self.state.mark_to_market();
    }

    /// Reposition per `action`, then let order flow run for `dt` minutes.
    pub fn step(&mut self, action: &Action) -> Result<StepInfo> {
        if self.state.done {
            return Err(domain("episode is over"));
        }
        action.validate(&self.config)?;
        let n = self.config.n_pools();
        let v_before = self.state.mark_to_market();
        let mut targets = Vec::with_capacity(n);
        let mut adjusted = vec![false; n];
        for (k, view) in self.state.pools.iter().enumerate() {
            let w = action.weights[k];
            let (lo, hi) = (view.tick - action.lower[k] as i32, view.tick + action.upper[k] as i32 + 1);
            let same_range = view.position.is_some_and(|p| p.lower.index == lo && p.upper.index == hi);
            let same = w == view.weight && (w == 0.0 || same_range);
            adjusted[k] = !same && w > 0.0;
            targets.push((w, lo, hi, same));
        }
        let mut gas = 0.0;
        if targets.iter().any(|t| !t.3) {
            gas = self.config.gas_per_adjust * adjusted.iter().filter(|a| **a).count() as f64;
            let v = v_before - gas;
            if !(v > 0.0) {
                self.state.v = v;
                self.state.done = true;
                self.state.ruined = true;
                return Err(Error::Ruin(v));
            }
            let mut deployed = 0.0;
            for (k, &(w, lo, hi, _)) in targets.iter().enumerate() {
                let pool = &mut self.pools[k];
                pool.clear_positions();
                let view = &mut self.state.pools[k];
                view.fees = 0.0;
                view.position = None;
                view.weight = w;
                view.lower_spread = action.lower[k];
                view.upper_spread = action.upper[k];
                if w > 0.0 {
                    let depth = wealth_to_position_depth(v, w, view.z, Tick::new(lo), Tick::new(hi))?;
                    let pos = LiquidityPosition::new(lo, hi, depth)?;
                    pool.add_position(pos);
                    view.position = Some(pos);
                    let (x, y) = cl_holdings(&pos, view.z);
                    deployed += x + y * view.z;
                }
            }
            self.state.cash = v - deployed;
            if self.state.cash.abs() <= 1e-9 * v {
                self.state.cash = 0.0;
            }
        }
        self.refresh_views();

        let t_end = self.state.t + self.config.dt;
        let mut agent_fees = vec![0.0; n];
        let mut background_fees = vec![0.0; n];
        let mut charged_fees = vec![0.0; n];
        let mut n_trades = vec![0; n];
        let mut log_returns = vec![0.0; n];
        for k in 0..n {
            let z_start = self.pools[k].rate();
            for ev in self.flows[k].events_until(t_end)? {
                if ev.size <= 0.0 {
                    continue;
                }
                let side = if ev.buy { Side::BuyY } else { Side::SellY };
                let sw = self.pools[k].swap(side, Amount::X(ev.size))?;
                let agent: f64 = sw.position_fees.iter().sum();
                agent_fees[k] += agent;
                background_fees[k] += sw.background_fee;
                charged_fees[k] += sw.fee_total;
                n_trades[k] += 1;
            }
            self.state.pools[k].fees += agent_fees[k];
            log_returns[k] = (self.pools[k].rate() / z_start).ln();
        }
        self.state.t = t_end;
        self.state.step += 1;
        self.refresh_views();
        if self.state.step >= self.config.n_steps() {
            self.state.done = true;
        }
        Ok(StepInfo {
            v_before,
            gas,
            adjusted,
            v_after: self.state.v,
            agent_fees,
            background_fees,
            charged_fees,
            n_trades,
            log_returns,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t: f64,
    pub z: Vec<f64>,
    pub lower: Vec<u32>,
    pub upper: Vec<u32>,
    pub weights: Vec<f64>,
    pub fees: Vec<f64>,
    pub v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub rows: Vec<TrajectoryRow>,
    pub steps: Vec<StepInfo>,
    pub terminal_wealth: f64,
    pub gas_total: f64,
    pub ruined: bool,
}

impl Episode {
    /// Per-step log returns of pool `k`'s rate.
    pub fn log_returns(&self, k: usize) -> Vec<f64> {
        self.steps.iter().map(|s| s.log_returns[k]).collect()
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let n = self.rows.first().map_or(0, |r| r.z.len());
        let mut header = vec!["t_min".to_string()];
        for k in 0..n {
            for f in ["Z", "l", "u", "w", "fees_x"] {
                header.push(format!("{f}_{k}"));
            }
        }
        header.push("V_x".into());
        wr.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.t.to_string()];
            for k in 0..n {
                rec.push(r.z[k].to_string());
                rec.push(r.lower[k].to_string());
                rec.push(r.upper[k].to_string());
                rec.push(r.weights[k].to_string());
                rec.push(r.fees[k].to_string());
            }
            rec.push(r.v.to_string());
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }
}

fn row(state: &EnvState) -> TrajectoryRow {
    TrajectoryRow {
        t: state.t,
        z: state.pools.iter().map(|p| p.z).collect(),
        lower: state.pools.iter().map(|p| p.lower_spread).collect(),
        upper: state.pools.iter().map(|p| p.upper_spread).collect(),
        weights: state.pools.iter().map(|p| p.weight).collect(),
        fees: state.pools.iter().map(|p| p.fees).collect(),
        v: state.v,
    }
}

/// Run one episode. A ruined episode ends early with the negative wealth recorded.
pub fn run_episode<F>(config: &EnvConfig, mut strategy: F, seed: u64) -> Result<Episode>
where
    F: FnMut(&EnvState, &EnvConfig) -> Action,
{
    let mut env = Env::reset(config, seed)?;
    let mut rows = vec![row(env.state())];
    let mut steps = Vec::new();
    let mut gas_total = 0.0;
    while !env.state().done {
        let action = strategy(env.state(), &env.config);
        match env.step(&action) {
            Ok(info) => {
                gas_total += info.gas;
                steps.push(info);
                rows.push(row(env.state()));
            }
            Err(Error::Ruin(v)) => {
                return Ok(Episode { rows, steps, terminal_wealth: v, gas_total, ruined: true });
            }
            Err(e) => return Err(e),
        }
    }
    Ok(Episode { rows, steps, terminal_wealth: env.state().v, gas_total, ruined: false })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Criterion {
    Sharpe,
    MeanVariance { gamma: f64 },
}

/// Sharpe `(E[V_T] - V0) / sd(V_T)` or mean-variance `E[V_T] - gamma Var(V_T)`.
pub fn criterion(terminal_wealths: &[f64], v0: f64, kind: Criterion) -> Result<f64> {
    if terminal_wealths.len() < 2 {
        return Err(Error::InsufficientData("need at least two episodes".into()));
    }
    let m = terminal_wealths.iter().sum::<f64>() / terminal_wealths.len() as f64;
    let var = sample_variance(terminal_wealths);
    match kind {
        Criterion::Sharpe => {
            if var == 0.0 {
                return Err(Error::ZeroVariance);
            }
            Ok((m - v0) / var.sqrt())
        }
        Criterion::MeanVariance { gamma } => Ok(m - gamma * var),
    }
}

/// Sample standard deviation of returns, raw and multiplied by `sqrt(1440)`.
pub fn return_volatility(returns: &[f64]) -> (f64, f64) {
    let sd = sample_variance(returns).sqrt();
    (sd, sd * 1440f64.sqrt())
}

/// Daily volatility and fee rate implied by a pool's order flow at rate `z`.
///
/// Each order of size `s` in X moves `sqrt(Z)` by `s / kappa`, so `dZ/Z ~ 2 s / (kappa sqrt(Z))`.
pub fn implied_pool_stats(p: &PoolConfig, z: f64) -> (f64, f64) {
    let per_day = p.flow.lambda * 1440.0;
    let m2 = p.flow.mu_size.powi(2) + p.flow.xi_size.powi(2);
    let scale = 2.0 / (p.kappa_rest * z.sqrt());
    let sigma = (per_day * m2).sqrt() * scale;
    let pi = p.tau * per_day * p.flow.mu_size / (2.0 * p.kappa_rest * z.sqrt());
    (sigma, pi)
}

/// Spreads in ticks for the closed-form optimal range, clamped to `0..=max_spread`.
pub fn optimal_spread_ticks(p: &PoolConfig, z: f64, lp: &LpParams, max_spread: u32) -> Result<(u32, u32)> {
    let (sigma, pi) = implied_pool_stats(p, z);
    let q = optimal_spread(pi, z, &LpParams { sigma, ..*lp })?;
    if q.full_range || !q.viable {
        return Ok((max_spread, max_spread));
    }
    let i = tick_of_rate(z)?;
    let lo = {
        let t = tick_of_rate(q.z_l)?;
        if rate_of_tick(t + 1) == q.z_l {
            t + 1
        } else {
            t
        }
    };
    let hi = tick_of_rate(q.z_u)? + 1;
    let l = (i - lo).clamp(0, max_spread as i32) as u32;
    let u = (hi - i - 1).clamp(0, max_spread as i32) as u32;
    Ok((l, u))
}

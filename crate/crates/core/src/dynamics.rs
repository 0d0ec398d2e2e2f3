//! Monte Carlo simulators for the rate, depth, fee-rate and order-flow models.
//!
//! Time is measured in days except for order flow, which uses minutes.
//! Geometric processes use log-Euler steps so paths stay positive; the CIR
//! process uses full truncation.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::rng::{normal, stream};

/// Oracle rate `dS = sigma S dW`, pool rate `dZ = beta (S - Z) dt + gamma Z dB`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelIParams {
    pub sigma: f64,
    pub beta: f64,
    pub gamma: f64,
    pub s0: f64,
    pub z0: f64,
}

/// `dZ = gamma Z dB`, `d kappa = varsigma kappa dL`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelIIParams {
    pub gamma: f64,
    pub varsigma: f64,
    pub z0: f64,
    pub kappa0: f64,
}

/// `d pi = Gamma (pi_bar - pi) dt + psi sqrt(pi) dB` for the excess fee rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CirParams {
    pub big_gamma: f64,
    pub pi_bar: f64,
    pub psi: f64,
    pub pi_tilde0: f64,
}

/// `dR = beta (mu - R) dt + L dW` with `L L^T = Sigma`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiOuParams {
    pub beta: DMatrix<f64>,
    pub mu: DVector<f64>,
    pub sigma_chol: DMatrix<f64>,
    pub r0: DVector<f64>,
}

/// Poisson arrivals (per minute) of normally sized orders denominated in X.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderFlowParams {
    pub lambda: f64,
    pub p_buy: f64,
    pub mu_size: f64,
    pub xi_size: f64,
}

/// Sampled paths on a uniform time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Paths {
    pub t: Vec<f64>,
    pub names: Vec<String>,
    /// `values[k]` is the path of coordinate `names[k]`.
    pub values: Vec<Vec<f64>>,
}

impl Paths {
    fn with_capacity(names: &[&str], n: usize) -> Self {
        Paths {
            t: Vec::with_capacity(n),
            names: names.iter().map(|s| s.to_string()).collect(),
            values: vec![Vec::with_capacity(n); names.len()],
        }
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.names.iter().position(|n| n == name).map(|k| self.values[k].as_slice())
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend(self.names.iter().cloned());
        wr.write_record(&header)?;
        for i in 0..self.t.len() {
            let mut row = vec![format!("{}", self.t[i])];
            row.extend(self.values.iter().map(|c| format!("{}", c[i])));
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }
}

fn check_dt(dt: f64) -> Result<()> {
    if dt > 0.0 && dt.is_finite() {
        Ok(())
    } else {
        Err(domain(format!("time step must be positive, got {dt}")))
    }
}

pub fn simulate_model1(p: &ModelIParams, dt: f64, steps: usize, seed: u64) -> Result<Paths> {
    check_dt(dt)?;
    if !(p.s0 > 0.0 && p.z0 > 0.0 && p.sigma >= 0.0 && p.gamma >= 0.0) {
        return Err(domain("model I needs positive initial rates and nonnegative volatilities"));
    }
    let mut rw = stream(seed, 1);
    let mut rb = stream(seed, 2);
    let mut out = Paths::with_capacity(&["S", "Z"], steps + 1);
    let (mut s, mut z) = (p.s0, p.z0);
    let sq = dt.sqrt();
    for k in 0..=steps {
        out.t.push(k as f64 * dt);
        out.values[0].push(s);
        out.values[1].push(z);
        if k == steps {
            break;
        }
        let (dw, db) = (normal(&mut rw), normal(&mut rb));
        let zn = z * ((p.beta * (s - z) / z - 0.5 * p.gamma * p.gamma) * dt + p.gamma * sq * db).exp();
        s *= (-0.5 * p.sigma * p.sigma * dt + p.sigma * sq * dw).exp();
        z = zn;
    }
    Ok(out)
}

/// Conditional mean of `Z_T` given `(Z_t, S_t)` under model I.
pub fn model1_mean_z(beta: f64, z: f64, s: f64, tau: f64) -> f64 {
    let e = (-beta * tau).exp();
    z * e + s * (1.0 - e)
}

pub fn simulate_cir(p: &CirParams, dt: f64, steps: usize, seed: u64) -> Result<Paths> {
    check_dt(dt)?;
    if p.pi_tilde0 < 0.0 {
        return Err(domain("initial excess fee rate must be nonnegative"));
    }
    let mut r = stream(seed, 3);
    let mut out = Paths::with_capacity(&["pi_tilde"], steps + 1);
    let mut v = p.pi_tilde0;
    let sq = dt.sqrt();
    for k in 0..=steps {
        out.t.push(k as f64 * dt);
        out.values[0].push(v.max(0.0));
        if k == steps {
            break;
        }
        let vp = v.max(0.0);
        v += p.big_gamma * (p.pi_bar - vp) * dt + p.psi * vp.sqrt() * sq * normal(&mut r);
    }
    Ok(out)
}

/// `E[pi_T] = pi_bar + (pi_0 - pi_bar) e^{-Gamma T}`.
pub fn cir_mean(p: &CirParams, t: f64) -> f64 {
    p.pi_bar + (p.pi_tilde0 - p.pi_bar) * (-p.big_gamma * t).exp()
}

impl MultiOuParams {
    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.mu.len();
        if self.beta.shape() != (d, d) || self.sigma_chol.shape() != (d, d) || self.r0.len() != d {
            return Err(Error::Dimension(format!(
                "beta {:?}, chol {:?}, mu {}, r0 {}",
                self.beta.shape(),
                self.sigma_chol.shape(),
                d,
                self.r0.len()
            )));
        }
        for i in 0..d {
            if self.sigma_chol[(i, i)] < 0.0 {
                return Err(domain("Cholesky factor needs a nonnegative diagonal"));
            }
            for j in i + 1..d {
                if self.sigma_chol[(i, j)] != 0.0 {
                    return Err(domain("Cholesky factor must be lower triangular"));
                }
            }
        }
        Ok(())
    }
}

pub fn simulate_multi_ou(p: &MultiOuParams, dt: f64, steps: usize, seed: u64) -> Result<Paths> {
    check_dt(dt)?;
    p.validate()?;
    let d = p.dim();
    let names: Vec<String> = (0..d).map(|i| format!("R{i}")).collect();
    let name_refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
    let mut out = Paths::with_capacity(&name_refs, steps + 1);
    let mut r = p.r0.clone();
    let mut rng = stream(seed, 4);
    let sq = dt.sqrt();
    let mut xi = DVector::zeros(d);
    for k in 0..=steps {
        out.t.push(k as f64 * dt);
        for i in 0..d {
            out.values[i].push(r[i]);
        }
        if k == steps {
            break;
        }
        for i in 0..d {
            xi[i] = normal(&mut rng);
        }
        let drift = &p.beta * (&p.mu - &r) * dt;
        let shock = &p.sigma_chol * &xi * sq;
        r += drift + shock;
    }
    Ok(out)
}

/// `E[R_t] = mu + e^{-beta t} (R_0 - mu)`.
pub fn multi_ou_mean(p: &MultiOuParams, t: f64) -> DVector<f64> {
    let e = (-&p.beta * t).exp();
    &p.mu + e * (&p.r0 - &p.mu)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderEvent {
    /// Minutes from the start.
    pub time: f64,
    pub buy: bool,
    /// Order size in X.
    pub size: f64,
}

/// Order arrivals over `[0, horizon)` minutes. Sizes are floored at zero.
pub fn simulate_order_flow(p: &OrderFlowParams, horizon: f64, seed: u64) -> Result<Vec<OrderEvent>> {
    let mut gen = OrderFlowGenerator::new(p, seed)?;
    gen.events_until(horizon)
}

/// Streaming order-flow generator with independent arrival, side and size streams.
#[derive(Debug, Clone)]
pub struct OrderFlowGenerator {
    params: OrderFlowParams,
    arrivals: crate::rng::Rng,
    sides: crate::rng::Rng,
    sizes: crate::rng::Rng,
    next_time: f64,
}

impl OrderFlowGenerator {
    pub fn new(p: &OrderFlowParams, seed: u64) -> Result<Self> {
        if !(p.lambda > 0.0) || !(0.0..=1.0).contains(&p.p_buy) || p.xi_size < 0.0 {
            return Err(domain("order flow needs lambda > 0, p in [0,1], xi >= 0"));
        }
        let mut g = OrderFlowGenerator {
            params: *p,
            arrivals: stream(seed, 11),
            sides: stream(seed, 12),
            sizes: stream(seed, 13),
            next_time: 0.0,
        };
        g.next_time = g.draw_gap();
        Ok(g)
    }

    fn draw_gap(&mut self) -> f64 {
        let u: f64 = self.arrivals.random::<f64>();
        -(1.0 - u).ln() / self.params.lambda
    }

    /// All events with time strictly below `t_end` not yet emitted.
    pub fn events_until(&mut self, t_end: f64) -> Result<Vec<OrderEvent>> {
        let mut out = Vec::new();
        while self.next_time < t_end {
            let buy = self.sides.random::<f64>() < self.params.p_buy;
            let size = (self.params.mu_size + self.params.xi_size * normal(&mut self.sizes)).max(0.0);
            out.push(OrderEvent { time: self.next_time, buy, size });
            self.next_time += self.draw_gap();
        }
        Ok(out)
    }
}

pub fn simulate_depth(p: &ModelIIParams, dt: f64, steps: usize, seed: u64) -> Result<Paths> {
    check_dt(dt)?;
    if !(p.z0 > 0.0 && p.kappa0 > 0.0) {
        return Err(domain("initial rate and depth must be positive"));
    }
    let mut rb = stream(seed, 5);
    let mut rl = stream(seed, 6);
    let mut out = Paths::with_capacity(&["Z", "kappa"], steps + 1);
    let (mut z, mut k) = (p.z0, p.kappa0);
    let sq = dt.sqrt();
    for i in 0..=steps {
        out.t.push(i as f64 * dt);
        out.values[0].push(z);
        out.values[1].push(k);
        if i == steps {
            break;
        }
        z *= (-0.5 * p.gamma * p.gamma * dt + p.gamma * sq * normal(&mut rb)).exp();
        k *= (-0.5 * p.varsigma * p.varsigma * dt + p.varsigma * sq * normal(&mut rl)).exp();
    }
    Ok(out)
}

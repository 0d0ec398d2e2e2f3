//! Optimal execution in a constant-product pool.
//!
//! The strategy coefficients solve backward ODEs with terminal data at `T`.
//! Speeds follow the convention `dy = -nu dt`: positive `nu` sells Y and
//! negative `nu` buys Y.
//!
//! Scalar model, with `zeta = Z^{3/2} / kappa`:
//!
//! ```text
//! A' = phi - A^2 / (eta zeta),             A(T) = -alpha
//! B' = beta + beta B - A B / (eta zeta),   B(T) = 0
//! nu = -(1 / (eta zeta)) A y + (1 / (2 eta zeta)) B (S - Z)
//! ```
//!
//! Multi-asset model, with state `R = (Z_1..Z_n, S_1..S_n, extra_1..extra_m)`:
//!
//! ```text
//! A' = phi Sigma~ - (1/eta) A D^{-1} A,          A(T) = -alpha
//! B' = (X + B) beta - (1/eta) A D^{-1} B,        B(T) = 0
//! nu = (1 / (2 eta)) D^{-1} (B (mu - R) - 2 A y)
//! ```
//!
//! where `D = diag(zeta)` and `X = [I_n 0]` selects the pool rates.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LiquidationConfig {
    /// Horizon in days.
    pub t_horizon: f64,
    pub phi: f64,
    pub alpha: f64,
    /// Trading-frequency scale in days.
    pub eta: f64,
    pub kappa: f64,
    pub y0: f64,
}

impl LiquidationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_horizon > 0.0 && self.phi >= 0.0 && self.alpha > 0.0 && self.eta > 0.0 && self.kappa > 0.0) {
            return Err(domain("need T > 0, phi >= 0, alpha > 0, eta > 0, kappa > 0"));
        }
        Ok(())
    }

    pub fn zeta(&self, z: f64) -> f64 {
        zeta(z, self.kappa)
    }
}

/// `Z^{3/2} / kappa`.
pub fn zeta(z: f64, kappa: f64) -> f64 {
    z.powf(1.5) / kappa
}

/// Which solver produces scalar coefficients at a given `zeta`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AbMethod {
    /// Backward RK4 on the ODE system.
    Ode,
    /// Exact solution of the ODE system (tanh form for A, integrating factor for B).
    Analytic,
}

#[inline]
fn ab_rhs(a: f64, b: f64, phi: f64, beta: f64, ez: f64) -> (f64, f64) {
    (phi - a * a / ez, beta + beta * b - a * b / ez)
}

fn rk4_ab(a: f64, b: f64, h: f64, phi: f64, beta: f64, ez: f64) -> (f64, f64) {
    let (k1a, k1b) = ab_rhs(a, b, phi, beta, ez);
    let (k2a, k2b) = ab_rhs(a + 0.5 * h * k1a, b + 0.5 * h * k1b, phi, beta, ez);
    let (k3a, k3b) = ab_rhs(a + 0.5 * h * k2a, b + 0.5 * h * k2b, phi, beta, ez);
    let (k4a, k4b) = ab_rhs(a + h * k3a, b + h * k3b, phi, beta, ez);
    (a + h / 6.0 * (k1a + 2.0 * k2a + 2.0 * k3a + k4a), b + h / 6.0 * (k1b + 2.0 * k2b + 2.0 * k3b + k4b))
}

/// Largest rate of change of the (A, B) system, used to size RK4 substeps.
fn ab_stiffness(cfg: &LiquidationConfig, beta: f64, ez: f64) -> f64 {
    cfg.alpha.max((cfg.phi * ez).sqrt()) / ez + beta.abs() + (cfg.phi / ez).sqrt()
}

fn substeps(h: f64, rate: f64) -> usize {
    ((h.abs() * rate / 0.02).ceil() as usize).max(1)
}

/// Exact A at time-to-maturity `tau`.
pub fn a_analytic(cfg: &LiquidationConfig, zeta: f64, tau: f64) -> f64 {
    let ez = cfg.eta * zeta;
    if cfg.phi == 0.0 {
        return -cfg.alpha / (1.0 + cfg.alpha * tau / ez);
    }
    let c = (cfg.phi * ez).sqrt();
    let th = ((cfg.phi / ez).sqrt() * tau).tanh();
    -c * (cfg.alpha + c * th) / (c + cfg.alpha * th)
}

/// Exact B at time-to-maturity `tau`.
pub fn b_analytic(cfg: &LiquidationConfig, beta: f64, zeta: f64, tau: f64) -> f64 {
    if beta == 0.0 || tau == 0.0 {
        return 0.0;
    }
    let ez = cfg.eta * zeta;
    if cfg.phi == 0.0 {
        let eps = ez / cfg.alpha;
        let e = (-beta * tau).exp();
        return -1.0 + (beta * eps * e - (-beta * tau).exp_m1()) / (beta * (eps + tau));
    }
    let c = (cfg.phi * ez).sqrt();
    let k = (cfg.phi / ez).sqrt();
    let a = cfg.alpha / c;
    let e2k = (-2.0 * k * tau).exp();
    let t1 = -(-(beta + k) * tau).exp_m1() / (beta + k);
    let x = (beta - k) * tau;
    let t2 = if x > 0.0 {
        e2k * -(-x).exp_m1() / (beta - k)
    } else if x < 0.0 {
        (-(beta + k) * tau).exp() * x.exp_m1() / (beta - k)
    } else {
        e2k * tau
    };
    let num = 0.5 * (1.0 + a) * t1 + 0.5 * (1.0 - a) * t2;
    let den = 0.5 * (1.0 + a) + 0.5 * (1.0 - a) * e2k;
    -beta * num / den
}

/// (A, B) at time `t` for a fixed `zeta`.
pub fn scalar_ab(cfg: &LiquidationConfig, beta: f64, zeta: f64, t: f64, method: AbMethod) -> (f64, f64) {
    let tau = (cfg.t_horizon - t).max(0.0);
    match method {
        AbMethod::Analytic => (a_analytic(cfg, zeta, tau), b_analytic(cfg, beta, zeta, tau)),
        AbMethod::Ode => {
            if tau == 0.0 {
                return (-cfg.alpha, 0.0);
            }
            let ez = cfg.eta * zeta;
            let n = substeps(tau, ab_stiffness(cfg, beta, ez));
            let h = -tau / n as f64;
            let (mut a, mut b) = (-cfg.alpha, 0.0);
            for _ in 0..n {
                (a, b) = rk4_ab(a, b, h, cfg.phi, beta, ez);
            }
            (a, b)
        }
    }
}

/// A and B tabulated on a uniform time grid and a rate grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarCoefficients {
    pub config: LiquidationConfig,
    pub beta: f64,
    pub t: Vec<f64>,
    pub z: Vec<f64>,
    /// `a[iz * t.len() + it]`.
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

/// Interpolated coefficient value and whether the query was clamped to the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interp {
    pub value: f64,
    pub clamped: bool,
}

fn locate(grid: &[f64], x: f64) -> (usize, f64, bool) {
    let n = grid.len();
    if n == 1 {
        return (0, 0.0, x != grid[0]);
    }
    if x <= grid[0] {
        return (0, 0.0, x < grid[0]);
    }
    if x >= grid[n - 1] {
        return (n - 2, 1.0, x > grid[n - 1]);
    }
    let i = match grid.binary_search_by(|g| g.partial_cmp(&x).unwrap()) {
        Ok(i) => i.min(n - 2),
        Err(i) => i - 1,
    };
    (i, (x - grid[i]) / (grid[i + 1] - grid[i]), false)
}

impl ScalarCoefficients {
    fn nt(&self) -> usize {
        self.t.len()
    }

    fn interp(&self, table: &[f64], t: f64, z: f64) -> Interp {
        let (it, ft, ct) = locate(&self.t, t);
        let (iz, fz, cz) = locate(&self.z, z);
        let nt = self.nt();
        let at = |iz: usize, it: usize| table[iz * nt + it];
        let it1 = (it + 1).min(nt - 1);
        let iz1 = (iz + 1).min(self.z.len() - 1);
        let lo = at(iz, it) * (1.0 - ft) + at(iz, it1) * ft;
        let hi = at(iz1, it) * (1.0 - ft) + at(iz1, it1) * ft;
        Interp { value: lo * (1.0 - fz) + hi * fz, clamped: ct || cz }
    }

    pub fn a_at(&self, t: f64, z: f64) -> Interp {
        self.interp(&self.a, t, z)
    }

    pub fn b_at(&self, t: f64, z: f64) -> Interp {
        self.interp(&self.b, t, z)
    }

    /// `C = -B`.
    pub fn c_at(&self, t: f64, z: f64) -> Interp {
        let b = self.b_at(t, z);
        Interp { value: -b.value, ..b }
    }

    pub fn a_node(&self, iz: usize, it: usize) -> f64 {
        self.a[iz * self.nt() + it]
    }

    pub fn b_node(&self, iz: usize, it: usize) -> f64 {
        self.b[iz * self.nt() + it]
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["t", "Z", "A", "B"])?;
        for (iz, z) in self.z.iter().enumerate() {
            for (it, t) in self.t.iter().enumerate() {
                wr.write_record(&[
                    format!("{t}"),
                    format!("{z}"),
                    format!("{}", self.a_node(iz, it)),
                    format!("{}", self.b_node(iz, it)),
                ])?;
            }
        }
        wr.flush()?;
        Ok(())
    }
}

/// `n` rates spanning `[z0 e^{-5 vol sqrt(T)}, z0 e^{5 vol sqrt(T)}]`.
pub fn default_z_grid(z0: f64, vol: f64, t_horizon: f64, n: usize) -> Vec<f64> {
    let w = 5.0 * vol * t_horizon.sqrt();
    let (lo, hi) = (z0 * (-w).exp(), z0 * w.exp());
    if n == 1 {
        return vec![z0];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Integrate the (A, B) system backward on `n_t` uniform steps for every rate in `z_grid`.
pub fn solve_scalar_coefficients(
    cfg: &LiquidationConfig,
    beta: f64,
    z_grid: &[f64],
    n_t: usize,
) -> Result<ScalarCoefficients> {
    cfg.validate()?;
    if z_grid.is_empty() || n_t == 0 {
        return Err(domain("need a nonempty rate grid and at least one time step"));
    }
    if z_grid.iter().any(|&z| !(z > 0.0)) || z_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(domain("rate grid must be positive and strictly increasing"));
    }
    let nt = n_t + 1;
    let h = cfg.t_horizon / n_t as f64;
    let t: Vec<f64> = (0..nt).map(|i| i as f64 * h).collect();
    let mut a = vec![0.0; z_grid.len() * nt];
    let mut b = vec![0.0; z_grid.len() * nt];
    for (iz, &z) in z_grid.iter().enumerate() {
        let ez = cfg.eta * zeta(z, cfg.kappa);
        if !(ez > 0.0) || !ez.is_finite() {
            return Err(domain(format!("non-positive zeta at Z = {z}")));
        }
        let m = substeps(h, ab_stiffness(cfg, beta, ez));
        let hs = -h / m as f64;
        let (mut av, mut bv) = (-cfg.alpha, 0.0);
        a[iz * nt + n_t] = av;
        b[iz * nt + n_t] = bv;
        for it in (0..n_t).rev() {
            for _ in 0..m {
                (av, bv) = rk4_ab(av, bv, hs, cfg.phi, beta, ez);
            }
            a[iz * nt + it] = av;
            b[iz * nt + it] = bv;
        }
    }
    Ok(ScalarCoefficients { config: *cfg, beta, t, z: z_grid.to_vec(), a, b })
}

/// Fourth-order central difference of `f` at interior index `i`.
fn d5(f: &[f64], i: usize, h: f64) -> f64 {
    (-f[i + 2] + 8.0 * f[i + 1] - 8.0 * f[i - 1] + f[i - 2]) / (12.0 * h)
}

/// Largest ODE residual of a scalar table over interior time nodes: `(max_A, max_B)`.
pub fn scalar_ode_residual(c: &ScalarCoefficients) -> (f64, f64) {
    let nt = c.t.len();
    if nt < 5 {
        return (0.0, 0.0);
    }
    let h = c.t[1] - c.t[0];
    let (mut ra, mut rb) = (0.0f64, 0.0f64);
    for (iz, &z) in c.z.iter().enumerate() {
        let ez = c.config.eta * zeta(z, c.config.kappa);
        let a = &c.a[iz * nt..(iz + 1) * nt];
        let b = &c.b[iz * nt..(iz + 1) * nt];
        for i in 2..nt - 2 {
            let (fa, fb) = ab_rhs(a[i], b[i], c.config.phi, c.beta, ez);
            ra = ra.max((d5(a, i, h) - fa).abs());
            rb = rb.max((d5(b, i, h) - fb).abs());
        }
    }
    (ra, rb)
}

/// Full coefficient set of the value function at a fixed `zeta`.
///
/// `C = -B` and `D = H = I = J = 0`; `E`, `F`, `G` are integrated alongside A and B.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueCoefficients {
    pub t: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub e: f64,
    pub f: f64,
    pub g: f64,
    pub h: f64,
    pub i: f64,
    pub j: f64,
}

pub fn value_coefficients(
    cfg: &LiquidationConfig,
    beta: f64,
    gamma: f64,
    sigma: f64,
    zeta: f64,
    n_t: usize,
) -> Result<Vec<ValueCoefficients>> {
    cfg.validate()?;
    let ez = cfg.eta * zeta;
    let h = cfg.t_horizon / n_t.max(1) as f64;
    let m = substeps(h, ab_stiffness(cfg, beta, ez) + gamma * gamma + 2.0 * beta.abs() + sigma * sigma);
    let hs = -h / m as f64;
    let rhs = |v: [f64; 5]| -> [f64; 5] {
        let [a, b, e, f, g] = v;
        let c = -b;
        [
            cfg.phi - a * a / ez,
            beta + beta * b - a * b / ez,
            -(gamma * gamma - 2.0 * beta) * e - b * b / (4.0 * ez),
            -beta * g - sigma * sigma * f - c * c / (4.0 * ez),
            -2.0 * beta * e + beta * g - b * c / (2.0 * ez),
        ]
    };
    let mut v = [-cfg.alpha, 0.0, 0.0, 0.0, 0.0];
    let mut out = vec![
        ValueCoefficients {
            t: cfg.t_horizon,
            a: v[0],
            b: 0.0,
            c: 0.0,
            d: 0.0,
            e: 0.0,
            f: 0.0,
            g: 0.0,
            h: 0.0,
            i: 0.0,
            j: 0.0
        };
        n_t + 1
    ];
    for it in (0..n_t).rev() {
        for _ in 0..m {
            let k1 = rhs(v);
            let k2 = rhs(std::array::from_fn(|q| v[q] + 0.5 * hs * k1[q]));
            let k3 = rhs(std::array::from_fn(|q| v[q] + 0.5 * hs * k2[q]));
            let k4 = rhs(std::array::from_fn(|q| v[q] + hs * k3[q]));
            v = std::array::from_fn(|q| v[q] + hs / 6.0 * (k1[q] + 2.0 * k2[q] + 2.0 * k3[q] + k4[q]));
        }
        out[it] = ValueCoefficients {
            t: it as f64 * h,
            a: v[0],
            b: v[1],
            c: -v[1],
            d: 0.0,
            e: v[2],
            f: v[3],
            g: v[4],
            h: 0.0,
            i: 0.0,
            j: 0.0,
        };
    }
    Ok(out)
}

/// Speed and whether the coefficient lookup was clamped to the table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Speed {
    pub nu: f64,
    pub clamped: bool,
}

/// Two-term speed from tabulated coefficients.
pub fn closed_form_speed(t: f64, y: f64, z: f64, s: f64, coeffs: &ScalarCoefficients) -> Speed {
    let a = coeffs.a_at(t, z);
    let b = coeffs.b_at(t, z);
    let ez = coeffs.config.eta * zeta(z, coeffs.config.kappa);
    Speed { nu: speed_from_ab(a.value, b.value, ez, y, s - z), clamped: a.clamped || b.clamped }
}

/// Two-term speed with coefficients solved at the exact `zeta(Z)`.
pub fn exact_speed(t: f64, y: f64, z: f64, s: f64, cfg: &LiquidationConfig, beta: f64, method: AbMethod) -> f64 {
    let zt = zeta(z, cfg.kappa);
    let (a, b) = scalar_ab(cfg, beta, zt, t, method);
    speed_from_ab(a, b, cfg.eta * zt, y, s - z)
}

#[inline]
pub fn speed_from_ab(a: f64, b: f64, eta_zeta: f64, y: f64, spread: f64) -> f64 {
    -a * y / eta_zeta + 0.5 * b * spread / eta_zeta
}

/// Constant-`zeta` strategies on a uniform partition of `[z_low, z_high]`, frozen at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseStrategy {
    pub z_low: f64,
    pub z_high: f64,
    pub anchors: Vec<f64>,
    pub eta_zeta: Vec<f64>,
    pub ab: Vec<(f64, f64)>,
}

impl PiecewiseStrategy {
    pub fn new(
        cfg: &LiquidationConfig,
        beta: f64,
        n: usize,
        z_low: f64,
        z_high: f64,
        t: f64,
        method: AbMethod,
    ) -> Result<Self> {
        if !(z_low > 0.0 && z_low < z_high) || n == 0 {
            return Err(domain("need 0 < z_low < z_high and N >= 1"));
        }
        let anchors: Vec<f64> = (0..=n).map(|j| z_low + (z_high - z_low) * j as f64 / n as f64).collect();
        let zetas: Vec<f64> = anchors.iter().map(|&z| zeta(z, cfg.kappa)).collect();
        let ab = zetas.iter().map(|&zt| scalar_ab(cfg, beta, zt, t, method)).collect();
        Ok(PiecewiseStrategy { z_low, z_high, eta_zeta: zetas.iter().map(|zt| cfg.eta * zt).collect(), anchors, ab })
    }

    pub fn n(&self) -> usize {
        self.anchors.len() - 1
    }

    /// Strip `j` with `Z in [Z_j, Z_{j+1})`, clamped to the partition.
    pub fn strip_of(&self, z: f64) -> usize {
        let n = self.n();
        let f = (z - self.z_low) / (self.z_high - self.z_low) * n as f64;
        (f.floor().max(0.0) as usize).min(n - 1)
    }

    pub fn speed_in_strip(&self, j: usize, y: f64, z: f64, s: f64) -> f64 {
        let (a, b) = self.ab[j];
        speed_from_ab(a, b, self.eta_zeta[j], y, s - z)
    }

    pub fn speed(&self, y: f64, z: f64, s: f64) -> f64 {
        self.speed_in_strip(self.strip_of(z), y, z, s)
    }

    /// Largest jump of the speed across interior strip boundaries at fixed `(y, S)`.
    pub fn max_interstrip_jump(&self, y: f64, s: f64) -> f64 {
        (0..self.n() - 1)
            .map(|j| {
                let zb = self.anchors[j + 1];
                (self.speed_in_strip(j, y, zb, s) - self.speed_in_strip(j + 1, y, zb, s)).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// One-shot evaluation of the piecewise strategy.
#[allow(clippy::too_many_arguments)]
pub fn piecewise_speed(
    t: f64,
    y: f64,
    z: f64,
    s: f64,
    n: usize,
    z_low: f64,
    z_high: f64,
    cfg: &LiquidationConfig,
    beta: f64,
) -> Result<f64> {
    if !(z_low > 0.0 && z_low < z_high) || n == 0 {
        return Err(domain("need 0 < z_low < z_high and N >= 1"));
    }
    let f = (z - z_low) / (z_high - z_low) * n as f64;
    let j = (f.floor().max(0.0) as usize).min(n - 1);
    let zj = z_low + (z_high - z_low) * j as f64 / n as f64;
    let zt = zeta(zj, cfg.kappa);
    let (a, b) = scalar_ab(cfg, beta, zt, t, AbMethod::Ode);
    Ok(speed_from_ab(a, b, cfg.eta * zt, y, s - z))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Benchmark {
    Twap,
    SingleOrder,
    AlmgrenChriss,
}

/// A benchmark instruction: trade at a rate, or send one block order now.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Schedule {
    Speed(f64),
    Block(f64),
}

/// Benchmark schedules. `t0` is the first decision time; the single order fires only there.
pub fn benchmark_speed(kind: Benchmark, t: f64, t0: f64, y: f64, z: f64, cfg: &LiquidationConfig) -> Schedule {
    match kind {
        Benchmark::Twap => Schedule::Speed(cfg.y0 / cfg.t_horizon),
        Benchmark::SingleOrder => {
            if t <= t0 {
                Schedule::Block(y)
            } else {
                Schedule::Speed(0.0)
            }
        }
        Benchmark::AlmgrenChriss => {
            let zt = zeta(z, cfg.kappa);
            let a = a_analytic(cfg, zt, (cfg.t_horizon - t).max(0.0));
            Schedule::Speed(-a * y / (cfg.eta * zt))
        }
    }
}

/// Multi-asset execution problem.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiAssetConfig {
    pub t_horizon: f64,
    pub phi: f64,
    /// Terminal penalty matrix (n x n).
    pub alpha: DMatrix<f64>,
    pub eta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixCoefficients {
    pub t: Vec<f64>,
    pub zeta: DVector<f64>,
    pub eta: f64,
    /// `a[it]` is n x n.
    pub a: Vec<DMatrix<f64>>,
    /// `b[it]` is n x (2n + m).
    pub b: Vec<DMatrix<f64>>,
}

impl MatrixCoefficients {
    /// Linear interpolation in time.
    pub fn at(&self, t: f64) -> (DMatrix<f64>, DMatrix<f64>) {
        let (i, f, _) = locate(&self.t, t);
        let j = (i + 1).min(self.t.len() - 1);
        (&self.a[i] * (1.0 - f) + &self.a[j] * f, &self.b[i] * (1.0 - f) + &self.b[j] * f)
    }
}

fn check_multi(
    cfg: &MultiAssetConfig,
    zeta: &DVector<f64>,
    beta: &DMatrix<f64>,
    sigma_tilde: &DMatrix<f64>,
) -> Result<(usize, usize)> {
    let n = cfg.alpha.nrows();
    if cfg.alpha.ncols() != n || zeta.len() != n || sigma_tilde.shape() != (n, n) {
        return Err(Error::Dimension(format!(
            "alpha {:?}, zeta {}, Sigma~ {:?}",
            cfg.alpha.shape(),
            zeta.len(),
            sigma_tilde.shape()
        )));
    }
    let d = beta.nrows();
    if beta.ncols() != d || d < 2 * n {
        return Err(Error::Dimension(format!("beta {:?} for {n} assets", beta.shape())));
    }
    if zeta.iter().any(|&z| !(z > 0.0)) {
        return Err(domain("zeta must be positive componentwise"));
    }
    if !(cfg.t_horizon > 0.0 && cfg.eta > 0.0 && cfg.phi >= 0.0) {
        return Err(domain("need T > 0, eta > 0, phi >= 0"));
    }
    Ok((n, d))
}

/// Selection of the pool-rate block, `[I_n 0]`.
pub fn selection(n: usize, d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, d, |i, j| if i == j { 1.0 } else { 0.0 })
}

/// Backward RK4 for the matrix (A, B) system on `n_t` uniform steps.
pub fn solve_matrix_coefficients(
    cfg: &MultiAssetConfig,
    zeta: &DVector<f64>,
    beta: &DMatrix<f64>,
    sigma_tilde: &DMatrix<f64>,
    n_t: usize,
) -> Result<MatrixCoefficients> {
    let (n, d) = check_multi(cfg, zeta, beta, sigma_tilde)?;
    let dinv = DMatrix::from_diagonal(&zeta.map(|z| 1.0 / (cfg.eta * z)));
    let x = selection(n, d);
    let xb = &x * beta;
    let ps = sigma_tilde * cfg.phi;
    let rhs = |a: &DMatrix<f64>, b: &DMatrix<f64>| -> (DMatrix<f64>, DMatrix<f64>) {
        let k = a * &dinv;
        (&ps - &k * a, &xb + b * beta - &k * b)
    };
    let h = cfg.t_horizon / n_t.max(1) as f64;
    let zmin = zeta.min();
    let rate = cfg.alpha.norm().max((cfg.phi * cfg.eta * zmin).sqrt()) / (cfg.eta * zmin)
        + beta.norm()
        + (cfg.phi * sigma_tilde.norm() / (cfg.eta * zmin)).sqrt();
    let m = substeps(h, rate);
    let hs = -h / m as f64;
    let mut a = -cfg.alpha.clone();
    let mut b = DMatrix::zeros(n, d);
    let mut a_out = vec![DMatrix::zeros(n, n); n_t + 1];
    let mut b_out = vec![DMatrix::zeros(n, d); n_t + 1];
    a_out[n_t] = a.clone();
    b_out[n_t] = b.clone();
    for it in (0..n_t).rev() {
        for _ in 0..m {
            let (k1a, k1b) = rhs(&a, &b);
            let (k2a, k2b) = rhs(&(&a + &k1a * (0.5 * hs)), &(&b + &k1b * (0.5 * hs)));
            let (k3a, k3b) = rhs(&(&a + &k2a * (0.5 * hs)), &(&b + &k2b * (0.5 * hs)));
            let (k4a, k4b) = rhs(&(&a + &k3a * hs), &(&b + &k3b * hs));
            a += (k1a + k2a * 2.0 + k3a * 2.0 + k4a) * (hs / 6.0);
            b += (k1b + k2b * 2.0 + k3b * 2.0 + k4b) * (hs / 6.0);
        }
        a_out[it] = a.clone();
        b_out[it] = b.clone();
    }
    Ok(MatrixCoefficients {
        t: (0..=n_t).map(|i| i as f64 * h).collect(),
        zeta: zeta.clone(),
        eta: cfg.eta,
        a: a_out,
        b: b_out,
    })
}

/// Largest ODE residual of a matrix table over interior nodes: `(max_A, max_B)`.
pub fn matrix_ode_residual(
    c: &MatrixCoefficients,
    phi: f64,
    beta: &DMatrix<f64>,
    sigma_tilde: &DMatrix<f64>,
) -> (f64, f64) {
    let nt = c.t.len();
    if nt < 5 {
        return (0.0, 0.0);
    }
    let n = c.zeta.len();
    let d = beta.nrows();
    let h = c.t[1] - c.t[0];
    let dinv = DMatrix::from_diagonal(&c.zeta.map(|z| 1.0 / (c.eta * z)));
    let xb = selection(n, d) * beta;
    let (mut ra, mut rb) = (0.0f64, 0.0f64);
    for i in 2..nt - 2 {
        let da = (-&c.a[i + 2] + &c.a[i + 1] * 8.0 - &c.a[i - 1] * 8.0 + &c.a[i - 2]) / (12.0 * h);
        let db = (-&c.b[i + 2] + &c.b[i + 1] * 8.0 - &c.b[i - 1] * 8.0 + &c.b[i - 2]) / (12.0 * h);
        let k = &c.a[i] * &dinv;
        let fa = sigma_tilde * phi - &k * &c.a[i];
        let fb = &xb + &c.b[i] * beta - &k * &c.b[i];
        ra = ra.max((da - fa).amax());
        rb = rb.max((db - fb).amax());
    }
    (ra, rb)
}

/// Closed-form A for the matrix Riccati equation.
///
/// With `M = (eta D)^{-1/2}`, `Psi = phi M Sigma~ M` and `Phi = -M alpha M`, the
/// scaled `A^ = M A M` solves `A^' = Psi - A^^2`. Writing `A^ = Q' Q^{-1}` gives
/// `Q'' = Psi Q`, so `Q(t) = cosh(sqrt(Psi) tau) - sinh_c(tau) Phi` with `tau = T - t`.
pub fn riccati_closed_form(
    cfg: &MultiAssetConfig,
    zeta: &DVector<f64>,
    sigma_tilde: &DMatrix<f64>,
    t: f64,
) -> Result<DMatrix<f64>> {
    let n = cfg.alpha.nrows();
    if zeta.len() != n || sigma_tilde.shape() != (n, n) {
        return Err(Error::Dimension("alpha, zeta and Sigma~ disagree".into()));
    }
    let tau = (cfg.t_horizon - t).max(0.0);
    let m = DMatrix::from_diagonal(&zeta.map(|z| 1.0 / (cfg.eta * z).sqrt()));
    let minv = DMatrix::from_diagonal(&zeta.map(|z| (cfg.eta * z).sqrt()));
    let psi = &m * sigma_tilde * &m * cfg.phi;
    let psi = (&psi + psi.transpose()) * 0.5;
    let phi_t = -(&m * &cfg.alpha * &m);
    let eig = SymmetricEigen::new(psi);
    let v = &eig.eigenvectors;
    let lam = eig.eigenvalues.map(|l| l.max(0.0));
    let f = |g: &dyn Fn(f64) -> f64| -> DMatrix<f64> {
        let dg = DMatrix::from_diagonal(&lam.map(g));
        v * dg * v.transpose()
    };
    let cosh = f(&|l| (l.sqrt() * tau).cosh());
    let sinhc = f(&|l| {
        let r = l.sqrt();
        if r * tau < 1e-8 {
            tau
        } else {
            (r * tau).sinh() / r
        }
    });
    let rsinh = f(&|l| {
        let r = l.sqrt();
        r * (r * tau).sinh()
    });
    let q = &cosh - &sinhc * &phi_t;
    let qd = &cosh * &phi_t - &rsinh;
    let qinv = q.clone().try_inverse().ok_or_else(|| Error::Singular("Q(t) is not invertible".into()))?;
    let a_hat = qd * qinv;
    Ok(&minv * a_hat * &minv)
}

/// B on the coefficient time grid from a product of short-interval matrix exponentials.
///
/// `vec(B)' = vec(X beta) + (beta^T (x) I - I (x) K(t)) vec(B)` with `K = A D^{-1} / eta`,
/// frozen at each interval midpoint.
pub fn b_time_ordered_exponential(
    c: &MatrixCoefficients,
    beta: &DMatrix<f64>,
    substeps: usize,
) -> Result<Vec<DMatrix<f64>>> {
    let n = c.zeta.len();
    let d = beta.nrows();
    let nd = n * d;
    let dinv = DMatrix::from_diagonal(&c.zeta.map(|z| 1.0 / (c.eta * z)));
    let xb = selection(n, d) * beta;
    let vec_xb = DVector::from_column_slice(xb.as_slice());
    let eye_n = DMatrix::<f64>::identity(n, n);
    let eye_d = DMatrix::<f64>::identity(d, d);
    let bt_kron = beta.transpose().kronecker(&eye_n);
    let nt = c.t.len();
    let mut out = vec![DMatrix::zeros(n, d); nt];
    let mut state = DVector::<f64>::zeros(nd + 1);
    state[nd] = 1.0;
    let m = substeps.max(1);
    for it in (0..nt - 1).rev() {
        let h = (c.t[it + 1] - c.t[it]) / m as f64;
        for s in (0..m).rev() {
            let frac = (s as f64 + 0.5) / m as f64;
            let a_mid = &c.a[it] * (1.0 - frac) + &c.a[it + 1] * frac;
            let k = a_mid * &dinv;
            let l = &bt_kron - eye_d.kronecker(&k);
            let mut g = DMatrix::<f64>::zeros(nd + 1, nd + 1);
            g.view_mut((0, 0), (nd, nd)).copy_from(&l);
            g.view_mut((0, nd), (nd, 1)).copy_from(&vec_xb);
            let step = (g * (-h)).exp();
            state = step * state;
        }
        out[it] = DMatrix::from_column_slice(n, d, &state.as_slice()[..nd]);
    }
    Ok(out)
}

/// Feedback speed for the multi-asset model. `zeta` is taken from the current pool rates.
pub fn closed_form_speed_multi(
    t: f64,
    y: &DVector<f64>,
    r: &DVector<f64>,
    mu: &DVector<f64>,
    coeffs: &MatrixCoefficients,
    kappa: &DVector<f64>,
) -> Result<DVector<f64>> {
    let n = coeffs.zeta.len();
    if y.len() != n || kappa.len() != n || r.len() != mu.len() || r.len() != coeffs.b[0].ncols() {
        return Err(Error::Dimension("inventory, rates and coefficients disagree".into()));
    }
    let (a, b) = coeffs.at(t);
    let v = b * (mu - r) - a * y * 2.0;
    Ok(DVector::from_fn(n, |i, _| {
        let z = zeta(r[i], kappa[i]);
        v[i] / (2.0 * coeffs.eta * z)
    }))
}

//! Estimators, VAR fitting, spillover indices and signal features.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::dynamics::MultiOuParams;
use crate::error::{domain, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsFit {
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub r_squared: f64,
    pub residual_variance: f64,
    pub n_obs: usize,
}

impl OlsFit {
    pub fn t_stat(&self, i: usize) -> f64 {
        self.coefficients[i] / self.std_errors[i]
    }
}

/// Least squares of `y` on the columns of `x`, with a leading constant when `intercept`.
///
/// R-squared is centered with an intercept and uncentered without one.
pub fn ols(y: &[f64], x: &DMatrix<f64>, intercept: bool) -> Result<OlsFit> {
    let n = y.len();
    if x.nrows() != n {
        return Err(Error::Dimension(format!("{} observations, design has {} rows", n, x.nrows())));
    }
    let design = if intercept { x.clone().insert_column(0, 1.0) } else { x.clone() };
    let k = design.ncols();
    if n <= k {
        return Err(Error::InsufficientData(format!("{n} observations for {k} regressors")));
    }
    let xtx = design.transpose() * &design;
    let inv = xtx.try_inverse().ok_or_else(|| Error::Singular("design matrix is rank deficient".into()))?;
    let yv = DVector::from_column_slice(y);
    let coef = &inv * design.transpose() * &yv;
    let resid = &yv - &design * &coef;
    let ssr = resid.norm_squared();
    let s2 = ssr / (n - k) as f64;
    let sst = if intercept {
        let m = yv.mean();
        yv.iter().map(|v| (v - m).powi(2)).sum::<f64>()
    } else {
        yv.norm_squared()
    };
    let r2 = if sst > 0.0 { (1.0 - ssr / sst).clamp(0.0, 1.0) } else { 0.0 };
    Ok(OlsFit {
        coefficients: coef.iter().copied().collect(),
        std_errors: (0..k).map(|i| (s2 * inv[(i, i)]).max(0.0).sqrt()).collect(),
        r_squared: r2,
        residual_variance: s2,
        n_obs: n,
    })
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample variance with the `n - 1` divisor.
pub fn sample_variance(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Model1Estimate {
    pub sigma: f64,
    pub sigma_se: f64,
    pub gamma: f64,
    pub gamma_se: f64,
    pub beta: f64,
    pub beta_se: f64,
    pub n_obs: usize,
}

impl Model1Estimate {
    pub fn beta_t(&self) -> f64 {
        self.beta / self.beta_se
    }
}

/// Two-pass estimation of Model I from sampled oracle and pool rates.
///
/// Log returns of S give sigma. Log returns of Z are regressed on
/// `(S - Z) / Z dt` with a free intercept; the residual scale gives gamma, and the
/// slope is re-fitted with the intercept fixed at `-gamma^2 dt / 2`.
pub fn estimate_model1(s: &[f64], z: &[f64], dt: f64) -> Result<Model1Estimate> {
    if s.len() != z.len() {
        return Err(Error::Dimension("S and Z paths differ in length".into()));
    }
    if s.len() < 31 {
        return Err(Error::InsufficientData("need at least 30 returns".into()));
    }
    if !(dt > 0.0) || s.iter().chain(z).any(|v| !(*v > 0.0)) {
        return Err(domain("paths must be positive and dt > 0"));
    }
    let n = s.len() - 1;
    let rs: Vec<f64> = (0..n).map(|i| (s[i + 1] / s[i]).ln()).collect();
    let sigma = (sample_variance(&rs) / dt).sqrt();
    let rz: Vec<f64> = (0..n).map(|i| (z[i + 1] / z[i]).ln()).collect();
    let reg: Vec<f64> = (0..n).map(|i| (s[i] - z[i]) / z[i] * dt).collect();
    let scale = reg.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if scale == 0.0 || sample_variance(&reg) <= 1e-30 * scale * scale {
        return Err(domain("S - Z regressor is degenerate; beta is unidentified"));
    }
    let first = ols(&rz, &DMatrix::from_column_slice(n, 1, &reg), true)?;
    let gamma = (first.residual_variance / dt).sqrt();
    let shifted: Vec<f64> = rz.iter().map(|r| r + 0.5 * gamma * gamma * dt).collect();
    let second = ols(&shifted, &DMatrix::from_column_slice(n, 1, &reg), false)?;
    let se = |v: f64| v / (2.0 * (n as f64 - 1.0)).sqrt();
    Ok(Model1Estimate {
        sigma,
        sigma_se: se(sigma),
        gamma,
        gamma_se: se(gamma),
        beta: second.coefficients[0],
        beta_se: second.std_errors[0],
        n_obs: n,
    })
}

/// Daily fee return of a pool: `fee_tier * volume / (2 kappa sqrt(Z))`.
pub fn pool_fee_rate(volume_24h: f64, kappa: f64, z: f64, fee_tier: f64) -> Result<f64> {
    if !(volume_24h >= 0.0 && kappa > 0.0 && z > 0.0 && fee_tier >= 0.0) {
        return Err(domain("volume, depth, rate and fee tier must be positive"));
    }
    Ok(fee_tier * volume_24h / (2.0 * kappa * z.sqrt()))
}

/// `R_t = a + sum_l Phi_l R_{t-l} + e_t`, `Cov(e) = Sigma`.
#[derive(Debug, Clone, PartialEq)]
pub struct VarModel {
    pub intercept: DVector<f64>,
    pub lags: Vec<DMatrix<f64>>,
    pub sigma: DMatrix<f64>,
    /// Standard errors of the lag coefficients, same layout as `lags`.
    pub lag_se: Vec<DMatrix<f64>>,
    pub intercept_se: DVector<f64>,
    pub n_obs: usize,
}

impl VarModel {
    pub fn dim(&self) -> usize {
        self.intercept.len()
    }

    pub fn order(&self) -> usize {
        self.lags.len()
    }

    /// Spectral radius of the companion matrix.
    pub fn spectral_radius(&self) -> f64 {
        let d = self.dim();
        let p = self.order();
        if p == 0 {
            return 0.0;
        }
        let mut c = DMatrix::zeros(d * p, d * p);
        for (l, phi) in self.lags.iter().enumerate() {
            c.view_mut((0, l * d), (d, d)).copy_from(phi);
        }
        for i in d..d * p {
            c[(i, i - d)] = 1.0;
        }
        c.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

/// Equation-by-equation least squares. Rows of `data` are observations.
pub fn fit_var(data: &DMatrix<f64>, k: usize) -> Result<VarModel> {
    let (t, d) = data.shape();
    if k == 0 || d == 0 {
        return Err(domain("need at least one lag and one variable"));
    }
    let n = t.saturating_sub(k);
    let p = 1 + d * k;
    if n <= p {
        return Err(Error::InsufficientData(format!("{t} observations for a {d}-variable VAR({k})")));
    }
    let mut x = DMatrix::zeros(n, p);
    let mut y = DMatrix::zeros(n, d);
    for r in 0..n {
        let row = r + k;
        x[(r, 0)] = 1.0;
        for l in 1..=k {
            for j in 0..d {
                x[(r, 1 + (l - 1) * d + j)] = data[(row - l, j)];
            }
        }
        for j in 0..d {
            y[(r, j)] = data[(row, j)];
        }
    }
    let inv = (x.transpose() * &x)
        .try_inverse()
        .ok_or_else(|| Error::Singular("VAR design matrix is rank deficient".into()))?;
    let b = &inv * x.transpose() * &y;
    let e = &y - &x * &b;
    let sigma = e.transpose() * &e / (n - p) as f64;
    let sigma = (&sigma + sigma.transpose()) * 0.5;
    let coef = |l: usize, i: usize, j: usize| b[(1 + l * d + j, i)];
    let se = |l: usize, i: usize, j: usize| (sigma[(i, i)] * inv[(1 + l * d + j, 1 + l * d + j)]).max(0.0).sqrt();
    Ok(VarModel {
        intercept: DVector::from_fn(d, |i, _| b[(0, i)]),
        lags: (0..k).map(|l| DMatrix::from_fn(d, d, |i, j| coef(l, i, j))).collect(),
        lag_se: (0..k).map(|l| DMatrix::from_fn(d, d, |i, j| se(l, i, j))).collect(),
        intercept_se: DVector::from_fn(d, |i, _| (sigma[(i, i)] * inv[(0, 0)]).max(0.0).sqrt()),
        sigma,
        n_obs: n,
    })
}

/// Euler identification of an OU process from a VAR(1) in levels sampled every `dt`.
///
/// `Pi = Phi - I`, `beta = -Pi / dt`, `a = beta mu dt`, `Sigma_OU = Sigma / dt`.
pub fn var1_to_multi_ou(model: &VarModel, dt: f64) -> Result<MultiOuParams> {
    if model.order() != 1 {
        return Err(domain("OU mapping needs a VAR(1)"));
    }
    if !(dt > 0.0) {
        return Err(domain("dt must be positive"));
    }
    let d = model.dim();
    let pi = &model.lags[0] - DMatrix::identity(d, d);
    let beta = -pi / dt;
    let mu = beta
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular("mean-reversion matrix is singular; mu unidentified".into()))?
        * &model.intercept
        / dt;
    let chol = (&model.sigma / dt)
        .cholesky()
        .ok_or_else(|| Error::Singular("innovation covariance is not positive definite".into()))?;
    Ok(MultiOuParams { beta, r0: mu.clone(), mu, sigma_chol: chol.l() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FevdVariant {
    /// Denominator is the sum of forecast-error variances.
    Standard,
    /// Denominator is the square of that sum.
    SquaredDenominator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpilloverReport {
    pub horizon: usize,
    /// Row-normalized generalized FEVD; `fevd[i][j]` is the share of i's error due to j.
    pub fevd: Vec<Vec<f64>>,
    pub tsi_pct: f64,
    pub dsi_to_pct: Vec<f64>,
    pub dsi_from_pct: Vec<f64>,
    pub nsi_pct: Vec<f64>,
}

/// Moving-average coefficients `A_0 = I`, `A_h = sum_l Phi_l A_{h-l}` for `h < n`.
pub fn ma_coefficients(model: &VarModel, n: usize) -> Vec<DMatrix<f64>> {
    let d = model.dim();
    let mut a: Vec<DMatrix<f64>> = vec![DMatrix::identity(d, d)];
    for h in 1..n {
        let mut m = DMatrix::zeros(d, d);
        for (l, phi) in model.lags.iter().enumerate() {
            if l < h {
                m += phi * &a[h - l - 1];
            }
        }
        a.push(m);
    }
    a
}

/// Unnormalized generalized FEVD at horizon `n`.
pub fn generalized_fevd(model: &VarModel, n: usize, variant: FevdVariant) -> DMatrix<f64> {
    let d = model.dim();
    let s = &model.sigma;
    let a = ma_coefficients(model, n);
    DMatrix::from_fn(d, d, |i, j| {
        let num: f64 = a.iter().map(|al| (al.row(i) * s.column(j))[(0, 0)].powi(2)).sum::<f64>() / s[(j, j)];
        let den: f64 = a.iter().map(|al| (al.row(i) * s * al.row(i).transpose())[(0, 0)]).sum();
        match variant {
            FevdVariant::Standard => num / den,
            FevdVariant::SquaredDenominator => num / (den * den),
        }
    })
}

pub fn spillover(model: &VarModel, n: usize, variant: FevdVariant) -> Result<SpilloverReport> {
    if n == 0 {
        return Err(domain("horizon must be at least 1"));
    }
    let rho = model.spectral_radius();
    if !(rho < 1.0) {
        return Err(Error::Unstable(rho));
    }
    let d = model.dim();
    if (0..d).any(|i| !(model.sigma[(i, i)] > 0.0)) {
        return Err(Error::ZeroVariance);
    }
    let theta = generalized_fevd(model, n, variant);
    let mut tilde = theta.clone();
    for i in 0..d {
        let row: f64 = theta.row(i).sum();
        for j in 0..d {
            tilde[(i, j)] = theta[(i, j)] / row;
        }
    }
    let off = |i: usize, j: usize| if i == j { 0.0 } else { tilde[(i, j)] };
    let scale = 100.0 / d as f64;
    let from: Vec<f64> = (0..d).map(|i| scale * (0..d).map(|j| off(i, j)).sum::<f64>()).collect();
    let to: Vec<f64> = (0..d).map(|j| scale * (0..d).map(|i| off(i, j)).sum::<f64>()).collect();
    let tsi = from.iter().sum();
    Ok(SpilloverReport {
        horizon: n,
        fevd: (0..d).map(|i| (0..d).map(|j| tilde[(i, j)]).collect()).collect(),
        tsi_pct: tsi,
        nsi_pct: to.iter().zip(&from).map(|(t, f)| t - f).collect(),
        dsi_to_pct: to,
        dsi_from_pct: from,
    })
}

/// Spillover reports on windows of `window` rows advancing by `step`.
pub fn rolling_spillover(
    data: &DMatrix<f64>,
    window: usize,
    step: usize,
    k: usize,
    n: usize,
    variant: FevdVariant,
) -> Result<Vec<(usize, SpilloverReport)>> {
    if window == 0 || step == 0 {
        return Err(domain("window and step must be positive"));
    }
    let mut out = Vec::new();
    let mut start = 0;
    while start + window <= data.nrows() {
        let w = data.rows(start, window).into_owned();
        out.push((start, spillover(&fit_var(&w, k)?, n, variant)?));
        start += step;
    }
    Ok(out)
}

/// `E_0 = x_0`, `E_t = (s - 1)/(s + 1) E_{t-1} + 2/(s + 1) x_t`.
pub fn ema(series: &[f64], span: f64) -> Vec<f64> {
    let a = 2.0 / (span + 1.0);
    let mut out = Vec::with_capacity(series.len());
    let mut e = match series.first() {
        Some(&x) => x,
        None => return out,
    };
    out.push(e);
    for &x in &series[1..] {
        e = (1.0 - a) * e + a * x;
        out.push(e);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Macd {
    pub ema12: Vec<f64>,
    pub ema26: Vec<f64>,
    pub macd: Vec<f64>,
    /// EMA of the MACD with the requested span.
    pub signal: Vec<f64>,
}

pub fn compute_macd(series: &[f64], span_n: f64) -> Result<Macd> {
    if series.is_empty() {
        return Err(Error::InsufficientData("empty series".into()));
    }
    let ema12 = ema(series, 12.0);
    let ema26 = ema(series, 26.0);
    let macd: Vec<f64> = ema12.iter().zip(&ema26).map(|(a, b)| a - b).collect();
    let signal = ema(&macd, span_n);
    Ok(Macd { ema12, ema26, macd, signal })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub mean_diff: f64,
    pub std_err: f64,
    pub t_stat: f64,
    pub df: f64,
    /// Two-sided.
    pub p_value: f64,
}

/// Paired t-test of `a - b`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::Dimension("paired samples differ in length".into()));
    }
    if a.len() < 2 {
        return Err(Error::InsufficientData("need at least two pairs".into()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    let m = mean(&d);
    let se = (sample_variance(&d) / n).sqrt();
    if se == 0.0 {
        return Err(Error::ZeroVariance);
    }
    let t = m / se;
    let dist = StudentsT::new(0.0, 1.0, n - 1.0).map_err(|e| domain(e.to_string()))?;
    Ok(TTest { mean_diff: m, std_err: se, t_stat: t, df: n - 1.0, p_value: 2.0 * (1.0 - dist.cdf(t.abs())) })
}

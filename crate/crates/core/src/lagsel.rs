//! ARIMA fitting by conditional sum of squares and AIC-ranked order search.
//!
//! The AR order of the best-ranked model becomes the number of lagged
//! inputs fed to the forecasters.
//!
//! On the `d`-times differenced series `z` with mean parameter `mu`, the
//! one-step residuals are
//!
//! ```text
//! e[t] = (z[t] - mu) - sum_i phi[i] (z[t-i] - mu) - sum_j theta[j] e[t-j]
//! ```
//!
//! for `t >= max(p, q)`, with earlier residuals fixed at zero. The parameters
//! minimise `sum e[t]^2`, found with Levenberg-Marquardt on the exact
//! residual Jacobian (propagated through the MA recursion).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ArimaOrder {
    pub p: usize,
    pub d: usize,
    pub q: usize,
}

impl ArimaOrder {
    pub fn new(p: usize, d: usize, q: usize) -> Result<Self> {
        if p + q == 0 {
            return Err(Error::Config("ARIMA order needs p + q >= 1".into()));
        }
        Ok(Self { p, d, q })
    }

    /// Coefficients plus the mean term.
    pub fn n_params(&self) -> usize {
        self.p + self.q + 1
    }

    fn warmup(&self) -> usize {
        self.p.max(self.q)
    }
}

impl std::fmt::Display for ArimaOrder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {})", self.p, self.d, self.q)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArimaFit {
    pub order: ArimaOrder,
    pub ar_coeffs: Vec<f64>,
    pub ma_coeffs: Vec<f64>,
    /// Mean of the differenced series.
    pub intercept: f64,
    #[serde(skip)]
    pub residuals: Vec<f64>,
    pub sigma2: f64,
    pub css: f64,
    /// Sum of squares at the starting point of the optimiser.
    pub initial_css: f64,
    pub n_eff: usize,
    pub aic: f64,
    pub converged: bool,
    /// All roots of the AR polynomial lie outside the unit circle.
    pub stationary: bool,
    pub iterations: usize,
}

/// `d`-fold first differencing.
pub fn difference(s: &[f64], d: usize) -> Result<Vec<f64>> {
    if s.len() <= d {
        return Err(Error::insufficient(format!(
            "differencing order {d} needs more than {} samples",
            s.len()
        )));
    }
    let mut out = s.to_vec();
    for _ in 0..d {
        out = out.windows(2).map(|w| w[1] - w[0]).collect();
    }
    Ok(out)
}

/// First value of each intermediate differencing level `0..d`, which is what
/// [`undifference`] needs to invert [`difference`].
pub fn difference_heads(s: &[f64], d: usize) -> Result<Vec<f64>> {
    let mut heads = Vec::with_capacity(d);
    let mut level = s.to_vec();
    for _ in 0..d {
        if level.len() < 2 {
            return Err(Error::insufficient("series too short for differencing"));
        }
        heads.push(level[0]);
        level = level.windows(2).map(|w| w[1] - w[0]).collect();
    }
    Ok(heads)
}

/// Inverts `d = heads.len()` differencing passes by cumulative summation.
pub fn undifference(diff: &[f64], heads: &[f64]) -> Vec<f64> {
    let mut level = diff.to_vec();
    for &head in heads.iter().rev() {
        let mut next = Vec::with_capacity(level.len() + 1);
        let mut acc = head;
        next.push(acc);
        for v in &level {
            acc += v;
            next.push(acc);
        }
        level = next;
    }
    level
}

/// `n_eff * ln(sigma2) + 2 * n_params`.
pub fn aic(sigma2: f64, n_eff: usize, n_params: usize) -> Result<f64> {
    if n_eff == 0 {
        return Err(Error::insufficient("AIC needs at least one residual"));
    }
    if !(sigma2 > 0.0) {
        return Err(Error::DegenerateFit);
    }
    Ok(n_eff as f64 * sigma2.ln() + 2.0 * n_params as f64)
}

/// Yule-Walker AR coefficients via Levinson-Durbin; zeros if degenerate.
fn yule_walker(z: &[f64], p: usize) -> Vec<f64> {
    if p == 0 {
        return Vec::new();
    }
    let n = z.len();
    let mean = z.iter().sum::<f64>() / n as f64;
    let gamma: Vec<f64> = (0..=p)
        .map(|k| {
            (0..n - k)
                .map(|t| (z[t] - mean) * (z[t + k] - mean))
                .sum::<f64>()
                / n as f64
        })
        .collect();
    if gamma[0] <= 0.0 {
        return vec![0.0; p];
    }
    let mut phi = vec![0.0; p];
    let mut prev = vec![0.0; p];
    let mut err = gamma[0];
    for k in 0..p {
        let acc: f64 = (0..k).map(|j| prev[j] * gamma[k - j]).sum();
        let refl = (gamma[k + 1] - acc) / err;
        phi[k] = refl;
        for j in 0..k {
            phi[j] = prev[j] - refl * prev[k - 1 - j];
        }
        err *= 1.0 - refl * refl;
        if err <= 0.0 {
            return vec![0.0; p];
        }
        prev[..=k].copy_from_slice(&phi[..=k]);
    }
    phi
}

/// Residuals, and optionally their Jacobian (row-major, `rows x n_params`),
/// at parameters `[mu, phi.., theta..]`.
fn residuals(z: &[f64], order: &ArimaOrder, beta: &[f64], jac: Option<&mut Vec<f64>>) -> Vec<f64> {
    let (p, q) = (order.p, order.q);
    let w = order.warmup();
    let k = order.n_params();
    let rows = z.len() - w;
    let mu = beta[0];
    let phi = &beta[1..1 + p];
    let theta = &beta[1 + p..];
    let phi_sum: f64 = phi.iter().sum();
    let mut e = vec![0.0; rows];
    let mut jac = jac;
    if let Some(j) = jac.as_deref_mut() {
        j.clear();
        j.resize(rows * k, 0.0);
    }
    for r in 0..rows {
        let t = r + w;
        let mut v = z[t] - mu;
        for i in 0..p {
            v -= phi[i] * (z[t - 1 - i] - mu);
        }
        for jq in 0..q.min(r) {
            v -= theta[jq] * e[r - 1 - jq];
        }
        e[r] = v;
        if let Some(jm) = jac.as_deref_mut() {
            let (done, cur) = jm.split_at_mut(r * k);
            let row = &mut cur[..k];
            row[0] = -(1.0 - phi_sum);
            for i in 0..p {
                row[1 + i] = -(z[t - 1 - i] - mu);
            }
            for jq in 0..q {
                row[1 + p + jq] = if jq < r { -e[r - 1 - jq] } else { 0.0 };
            }
            for jq in 0..q.min(r) {
                let th = theta[jq];
                let prev = &done[(r - 1 - jq) * k..(r - jq) * k];
                for (c, pv) in row.iter_mut().zip(prev) {
                    *c -= th * pv;
                }
            }
        }
    }
    e
}

/// `J^T J` and `J^T e` for a row-major `rows x k` Jacobian.
fn normal_equations(jac: &[f64], e: &[f64], rows: usize, k: usize) -> (DMatrix<f64>, DVector<f64>) {
    let mut jtj = DMatrix::<f64>::zeros(k, k);
    let mut grad = DVector::<f64>::zeros(k);
    // SAFETY: strides describe `jac` (rows x k, row-major) read as its transpose,
    // `e` as a rows x 1 column, and the column-major k x k / k x 1 outputs.
    unsafe {
        matrixmultiply::dgemm(
            k, rows, k, 1.0,
            jac.as_ptr(), 1, k as isize,
            jac.as_ptr(), k as isize, 1,
            0.0,
            jtj.as_mut_ptr(), 1, k as isize,
        );
        matrixmultiply::dgemm(
            k, rows, 1, 1.0,
            jac.as_ptr(), 1, k as isize,
            e.as_ptr(), 1, 1,
            0.0,
            grad.as_mut_ptr(), 1, k as isize,
        );
    }
    (jtj, grad)
}

fn sum_sq(e: &[f64]) -> f64 {
    e.iter().map(|v| v * v).sum()
}

/// AR polynomial stationarity via the companion matrix spectral radius.
fn ar_is_stationary(phi: &[f64]) -> bool {
    let p = phi.len();
    if p == 0 {
        return true;
    }
    let mut c = DMatrix::<f64>::zeros(p, p);
    for (j, &v) in phi.iter().enumerate() {
        c[(0, j)] = v;
    }
    for i in 1..p {
        c[(i, i - 1)] = 1.0;
    }
    c.complex_eigenvalues().iter().all(|z| z.norm() < 1.0)
}

/// Optimiser controls for [`fit_arima_with`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub max_iterations: usize,
    /// Relative SSE decrease below which the fit counts as converged.
    pub tolerance: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            tolerance: 1e-9,
        }
    }
}

pub fn fit_arima(s: &[f64], order: ArimaOrder) -> Result<ArimaFit> {
    fit_arima_with(s, order, &FitConfig::default())
}

pub fn fit_arima_with(s: &[f64], order: ArimaOrder, cfg: &FitConfig) -> Result<ArimaFit> {
    if order.p + order.q == 0 {
        return Err(Error::Config("ARIMA order needs p + q >= 1".into()));
    }
    let z = difference(s, order.d)?;
    let k = order.n_params();
    if z.len() < 10 * k {
        return Err(Error::insufficient(format!(
            "ARIMA{order} needs at least {} differenced samples, got {}",
            10 * k,
            z.len()
        )));
    }
    let mean = z.iter().sum::<f64>() / z.len() as f64;
    let mut beta = Vec::with_capacity(k);
    beta.push(mean);
    beta.extend(yule_walker(&z, order.p));
    beta.extend(std::iter::repeat_n(0.0, order.q));

    let mut jac = Vec::new();
    let mut e = residuals(&z, &order, &beta, Some(&mut jac));
    let mut sse = sum_sq(&e);
    let initial_css = sse;
    let rows = e.len();
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;

    if sse == 0.0 {
        converged = true;
    }
    while !converged && iterations < cfg.max_iterations {
        iterations += 1;
        let (jtj, grad) = normal_equations(&jac, &e, rows, k);
        let mut improved = false;
        while lambda < 1e12 {
            let mut a = jtj.clone();
            for i in 0..k {
                a[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
            }
            let Some(chol) = a.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let delta = chol.solve(&(-&grad));
            let trial: Vec<f64> = beta.iter().zip(delta.iter()).map(|(b, d)| b + d).collect();
            let e_trial = residuals(&z, &order, &trial, None);
            let sse_trial = sum_sq(&e_trial);
            if sse_trial.is_finite() && sse_trial < sse {
                let rel = (sse - sse_trial) / sse;
                beta = trial;
                sse = sse_trial;
                lambda = (lambda / 10.0).max(1e-12);
                improved = true;
                if rel < cfg.tolerance {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            // no descent direction left at any damping: a stationary point
            converged = true;
        }
        e = residuals(&z, &order, &beta, Some(&mut jac));
    }

    let n_eff = rows;
    let sigma2 = sse / n_eff as f64;
    let aic_value = if converged && sigma2 > 0.0 {
        aic(sigma2, n_eff, k)?
    } else {
        f64::INFINITY
    };
    let ar_coeffs = beta[1..1 + order.p].to_vec();
    Ok(ArimaFit {
        order,
        stationary: ar_is_stationary(&ar_coeffs),
        ar_coeffs,
        ma_coeffs: beta[1 + order.p..].to_vec(),
        intercept: beta[0],
        residuals: e,
        sigma2,
        css: sse,
        initial_css,
        n_eff,
        aic: aic_value,
        converged,
        iterations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedOrder {
    pub order: ArimaOrder,
    pub aic: f64,
    pub converged: bool,
    pub stationary: bool,
}

/// Inclusive search bounds for [`grid_search`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderGrid {
    pub p: (usize, usize),
    pub q: (usize, usize),
    pub d: usize,
}

impl Default for OrderGrid {
    fn default() -> Self {
        Self {
            p: (2, 24),
            q: (2, 24),
            d: 1,
        }
    }
}

impl OrderGrid {
    pub fn orders(&self) -> Vec<ArimaOrder> {
        let mut out = Vec::new();
        for p in self.p.0..=self.p.1 {
            for q in self.q.0..=self.q.1 {
                if p + q > 0 {
                    out.push(ArimaOrder { p, d: self.d, q });
                }
            }
        }
        out
    }
}

/// Fits every order in the grid and ranks them by ascending AIC.
///
/// Fits that did not converge carry `aic = +inf` and sort last; ties go to
/// the smaller `p`, then the smaller `q`.
pub fn grid_search(s: &[f64], grid: &OrderGrid, exec: Exec) -> Result<Vec<RankedOrder>> {
    let orders = grid.orders();
    if orders.is_empty() {
        return Err(Error::Config("empty ARIMA order grid".into()));
    }
    let largest = grid.p.1 + grid.q.1 + 1;
    let available = s.len().saturating_sub(grid.d);
    if available < 10 * largest {
        return Err(Error::insufficient(format!(
            "order grid up to p={}, q={} needs at least {} differenced samples, got {available}",
            grid.p.1,
            grid.q.1,
            10 * largest
        )));
    }
    let fits = exec.map(&orders, |&order| fit_arima(s, order));
    let mut ranked = Vec::with_capacity(fits.len());
    for fit in fits {
        let fit = fit?;
        ranked.push(RankedOrder {
            order: fit.order,
            aic: fit.aic,
            converged: fit.converged,
            stationary: fit.stationary,
        });
    }
    ranked.sort_by(|a, b| {
        a.aic
            .total_cmp(&b.aic)
            .then(a.order.p.cmp(&b.order.p))
            .then(a.order.q.cmp(&b.order.q))
    });
    Ok(ranked)
}

/// AR order of the best converged model.
pub fn select_lag_count(ranked: &[RankedOrder]) -> Result<usize> {
    ranked
        .iter()
        .find(|r| r.converged && r.aic.is_finite())
        .map(|r| r.order.p)
        .ok_or(Error::NoViableModel)
}

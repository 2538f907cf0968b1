//! Empirical-rule outlier detection and KNN-based mitigation.
//!
//! Bounds are `mean ± 3σ` with the population standard deviation; a sample
//! is flagged only when it lies strictly outside them. The neighbour count
//! used for replacement is chosen by a KNN next-step regressor: for every
//! window of `window` consecutive values, the value that follows is
//! predicted as the mean of the successors of its K nearest other windows,
//! and the K with the lowest RMSE wins (smallest K on ties).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::series::TrafficSeries;

/// Lowest and highest neighbour counts searched by default.
pub const DEFAULT_K_RANGE: (usize, usize) = (2, 24);

/// Default KNN feature window.
pub const DEFAULT_WINDOW: usize = 13;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalBounds {
    pub mean: f64,
    pub std_dev: f64,
    pub upper: f64,
    pub lower: f64,
}

impl EmpiricalBounds {
    pub fn fit(values: &[f64]) -> Result<Self> {
        let n = values.len();
        if n < 2 {
            return Err(Error::insufficient("empirical bounds need at least 2 samples"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::MalformedInput("bounds require a complete series".into()));
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let std_dev = var.sqrt();
        Ok(Self {
            mean,
            std_dev,
            upper: mean + 3.0 * std_dev,
            lower: mean - 3.0 * std_dev,
        })
    }

    pub fn is_outlier(&self, v: f64) -> bool {
        v > self.upper || v < self.lower
    }

    /// Indices strictly outside the bounds, ascending.
    pub fn flag(&self, values: &[f64]) -> Vec<usize> {
        values
            .iter()
            .enumerate()
            .filter(|(_, &v)| self.is_outlier(v))
            .map(|(i, _)| i)
            .collect()
    }
}

/// Fits empirical bounds to `s` and flags the samples outside them.
pub fn detect(s: &TrafficSeries) -> Result<(EmpiricalBounds, Vec<usize>)> {
    s.require_complete()?;
    let bounds = EmpiricalBounds::fit(&s.values)?;
    let flagged = bounds.flag(&s.values);
    Ok((bounds, flagged))
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// For each window, the indices of its `k_max` nearest other windows,
/// ordered by squared Euclidean distance and then by index.
#[derive(Debug, Clone)]
pub struct NeighborTable {
    window: usize,
    k_max: usize,
    successors: Vec<f64>,
    neighbors: Vec<Vec<usize>>,
}

impl NeighborTable {
    pub fn build(values: &[f64], window: usize, k_max: usize, exec: Exec) -> Result<Self> {
        if window == 0 {
            return Err(Error::Config("KNN window must be at least 1".into()));
        }
        if k_max < 1 {
            return Err(Error::Config("K must be at least 1".into()));
        }
        if values.len() < window + k_max + 1 {
            return Err(Error::insufficient(format!(
                "KNN regressor with window {window} and K {k_max} needs at least {} samples, got {}",
                window + k_max + 1,
                values.len()
            )));
        }
        let m = values.len() - window;
        let successors = values[window..].to_vec();
        let neighbors = exec.map_range(m, |i| {
            let query = &values[i..i + window];
            let mut cand: Vec<(f64, usize)> = (0..m)
                .filter(|&j| j != i)
                .map(|j| (sq_dist(query, &values[j..j + window]), j))
                .collect();
            let by_key = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            if cand.len() > k_max {
                cand.select_nth_unstable_by(k_max - 1, by_key);
                cand.truncate(k_max);
            }
            cand.sort_unstable_by(by_key);
            cand.into_iter().map(|(_, j)| j).collect()
        });
        Ok(Self {
            window,
            k_max,
            successors,
            neighbors,
        })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn queries(&self) -> usize {
        self.neighbors.len()
    }

    /// Next-step predictions using the first `k` neighbours of every window.
    pub fn predictions(&self, k: usize) -> Result<Vec<f64>> {
        if k == 0 || k > self.k_max {
            return Err(Error::Config(format!("K {k} outside 1..={}", self.k_max)));
        }
        Ok(self
            .neighbors
            .iter()
            .map(|nb| nb[..k].iter().map(|&j| self.successors[j]).sum::<f64>() / k as f64)
            .collect())
    }

    pub fn rmse(&self, k: usize) -> Result<f64> {
        let pred = self.predictions(k)?;
        let sse: f64 = pred
            .iter()
            .zip(&self.successors)
            .map(|(p, y)| (y - p) * (y - p))
            .sum();
        Ok((sse / pred.len() as f64).sqrt())
    }
}

/// RMSE of leave-one-out KNN next-step prediction over every window.
pub fn knn_regressor_rmse(values: &[f64], k: usize, window: usize, exec: Exec) -> Result<f64> {
    if k < 2 {
        return Err(Error::Config("K must be at least 2".into()));
    }
    NeighborTable::build(values, window, k, exec)?.rmse(k)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KRmse {
    pub k: usize,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSearch {
    pub best_k: usize,
    pub table: Vec<KRmse>,
}

/// Evaluates every K in `k_lo..=k_hi` and returns the RMSE-minimising one.
pub fn optimize_k(
    values: &[f64],
    (k_lo, k_hi): (usize, usize),
    window: usize,
    exec: Exec,
) -> Result<KSearch> {
    if k_lo < 2 || k_hi < k_lo {
        return Err(Error::Config(format!("invalid K range {k_lo}..={k_hi}")));
    }
    let neighbors = NeighborTable::build(values, window, k_hi, exec)?;
    let ks: Vec<usize> = (k_lo..=k_hi).collect();
    let table = exec
        .map(&ks, |&k| neighbors.rmse(k).map(|rmse| KRmse { k, rmse }))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let best_k = argmin_k(&table);
    Ok(KSearch { best_k, table })
}

/// Smallest K among those with the minimum RMSE.
pub fn argmin_k(table: &[KRmse]) -> usize {
    let mut best = table[0];
    for row in &table[1..] {
        if row.rmse < best.rmse || (row.rmse == best.rmse && row.k < best.k) {
            best = *row;
        }
    }
    best.k
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MitigationMode {
    /// Mean of the K nearest unflagged samples, comparing the lag windows
    /// that precede each sample with flagged entries masked out.
    #[default]
    Neighbor,
    /// Mean of the K closest unflagged samples that precede the outlier.
    Preceding,
}

impl std::str::FromStr for MitigationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "neighbor" | "neighbour" => Ok(Self::Neighbor),
            "preceding" => Ok(Self::Preceding),
            other => Err(Error::Config(format!("unknown mitigation mode `{other}`"))),
        }
    }
}

/// NaN-aware squared Euclidean distance between the lag windows preceding
/// `a` and `b`; coordinates missing in either are skipped and the sum is
/// rescaled by `window / present`. `None` when no coordinate is shared.
pub(crate) fn masked_lag_distance(
    values: &[f64],
    masked: &[bool],
    a: usize,
    b: usize,
    window: usize,
) -> Option<f64> {
    let mut sum = 0.0;
    let mut present = 0usize;
    for l in 1..=window {
        let (Some(ia), Some(ib)) = (a.checked_sub(l), b.checked_sub(l)) else {
            continue;
        };
        if masked[ia] || masked[ib] {
            continue;
        }
        let d = values[ia] - values[ib];
        sum += d * d;
        present += 1;
    }
    (present > 0).then(|| sum * window as f64 / present as f64)
}

/// Replaces every flagged sample; all other samples are returned untouched.
pub fn mitigate(
    values: &[f64],
    flagged: &[usize],
    k: usize,
    mode: MitigationMode,
    window: usize,
) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::Config("K must be at least 1".into()));
    }
    let n = values.len();
    let mut masked = vec![false; n];
    for &i in flagged {
        if i >= n {
            return Err(Error::MalformedInput(format!("flagged index {i} out of range")));
        }
        masked[i] = true;
    }
    let mut out = values.to_vec();
    for &i in flagged {
        let donors: Vec<usize> = match mode {
            MitigationMode::Preceding => (0..i).rev().filter(|&j| !masked[j]).take(k).collect(),
            MitigationMode::Neighbor => {
                let mut cand: Vec<(f64, usize)> = (0..n)
                    .filter(|&j| j != i && !masked[j])
                    .filter_map(|j| masked_lag_distance(values, &masked, i, j, window).map(|d| (d, j)))
                    .collect();
                cand.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                cand.into_iter().take(k).map(|(_, j)| j).collect()
            }
        };
        if donors.len() < k {
            return Err(Error::InsufficientDonors {
                index: i,
                needed: k,
                available: donors.len(),
            });
        }
        out[i] = donors.iter().map(|&j| values[j]).sum::<f64>() / k as f64;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutlierConfig {
    pub k_range: (usize, usize),
    pub window: usize,
    pub mode: MitigationMode,
}

impl Default for OutlierConfig {
    fn default() -> Self {
        Self {
            k_range: DEFAULT_K_RANGE,
            window: DEFAULT_WINDOW,
            mode: MitigationMode::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierReport {
    pub bounds: EmpiricalBounds,
    pub flagged: Vec<usize>,
    pub best_k: usize,
    pub k_rmse_table: Vec<KRmse>,
    pub mode: MitigationMode,
    pub window: usize,
    #[serde(skip)]
    pub mitigated: Vec<f64>,
}

/// Detection, K search and mitigation in sequence.
pub fn analyze(s: &TrafficSeries, cfg: &OutlierConfig, exec: Exec) -> Result<OutlierReport> {
    let (bounds, flagged) = detect(s)?;
    let search = optimize_k(&s.values, cfg.k_range, cfg.window, exec)?;
    let mitigated = mitigate(&s.values, &flagged, search.best_k, cfg.mode, cfg.window)?;
    Ok(OutlierReport {
        bounds,
        flagged,
        best_k: search.best_k,
        k_rmse_table: search.table,
        mode: cfg.mode,
        window: cfg.window,
        mitigated,
    })
}

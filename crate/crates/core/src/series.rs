//! Uniformly sampled traffic series: counter ingestion, forward fill,
//! min-max scaling and sample autocorrelation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default SNMP polling interval in seconds.
pub const DEFAULT_INTERVAL: u64 = 300;

/// A univariate series on a uniform time grid, values in bits/second.
///
/// Timestamps are implicit: `t(i) = start_time + i * interval`. Missing
/// samples hold `NaN` in `values` and `true` in `missing`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficSeries {
    pub start_time: i64,
    pub interval: u64,
    pub values: Vec<f64>,
    pub missing: Vec<bool>,
}

impl TrafficSeries {
    /// Builds a fully observed series.
    pub fn new(start_time: i64, interval: u64, values: Vec<f64>) -> Result<Self> {
        let missing = values.iter().map(|v| !v.is_finite()).collect();
        Self::with_mask(start_time, interval, values, missing)
    }

    pub fn with_mask(
        start_time: i64,
        interval: u64,
        mut values: Vec<f64>,
        missing: Vec<bool>,
    ) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput);
        }
        if interval == 0 {
            return Err(Error::MalformedInput("interval must be positive".into()));
        }
        if missing.len() != values.len() {
            return Err(Error::shape(format!(
                "mask length {} != values length {}",
                missing.len(),
                values.len()
            )));
        }
        for (v, &m) in values.iter_mut().zip(&missing) {
            if m {
                *v = f64::NAN;
            } else if !v.is_finite() {
                return Err(Error::MalformedInput("non-finite value not marked missing".into()));
            }
        }
        Ok(Self {
            start_time,
            interval,
            values,
            missing,
        })
    }

    /// Same grid, new values (all observed).
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.start_time, self.interval, values)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn timestamp(&self, i: usize) -> i64 {
        self.start_time + (i as i64) * self.interval as i64
    }

    pub fn missing_count(&self) -> usize {
        self.missing.iter().filter(|&&m| m).count()
    }

    pub fn has_missing(&self) -> bool {
        self.missing.iter().any(|&m| m)
    }

    pub(crate) fn require_complete(&self) -> Result<()> {
        if self.has_missing() {
            return Err(Error::MalformedInput(format!(
                "{} missing values; forward-fill first",
                self.missing_count()
            )));
        }
        Ok(())
    }
}

/// One raw `ifOutOctets` reading.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterRecord {
    pub timestamp: i64,
    pub counter: u64,
}

/// How octet deltas become a rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum BpsConversion {
    /// `delta * 8 / interval`: bits per second.
    #[default]
    PerSecond,
    /// `delta * 8`: bits per interval, the literal rule without dividing.
    PerInterval,
}

/// Converts consecutive counter readings to a rate series on the `interval` grid.
///
/// A gap spanning several intervals (dropped readings) spreads its average
/// rate over every sample it covers. A counter that goes backwards (wrap or
/// reset) marks the samples it covers missing.
pub fn ingest_counters(
    records: &[CounterRecord],
    interval: u64,
    conversion: BpsConversion,
) -> Result<TrafficSeries> {
    if records.len() < 2 {
        return Err(Error::EmptyInput);
    }
    if interval == 0 {
        return Err(Error::MalformedInput("interval must be positive".into()));
    }
    let mut values = Vec::with_capacity(records.len() - 1);
    let mut missing = Vec::with_capacity(records.len() - 1);
    for w in records.windows(2) {
        let span = w[1].timestamp - w[0].timestamp;
        if span <= 0 {
            return Err(Error::MalformedInput(format!(
                "timestamps not strictly increasing at {} -> {}",
                w[0].timestamp, w[1].timestamp
            )));
        }
        if !(span as u64).is_multiple_of(interval) {
            return Err(Error::MalformedInput(format!(
                "readings at {} and {} are not a whole number of {interval}s intervals apart",
                w[0].timestamp, w[1].timestamp
            )));
        }
        let steps = span as u64 / interval;
        let divisor = match conversion {
            BpsConversion::PerSecond => span as f64,
            BpsConversion::PerInterval => steps as f64,
        };
        let rate = w[1].counter.checked_sub(w[0].counter).map(|delta| delta as f64 * 8.0 / divisor);
        for _ in 0..steps {
            values.push(rate.unwrap_or(f64::NAN));
            missing.push(rate.is_none());
        }
    }
    TrafficSeries::with_mask(records[0].timestamp, interval, values, missing)
}

/// Replaces every missing sample with the closest preceding observed value.
pub fn forward_fill(s: &TrafficSeries) -> Result<TrafficSeries> {
    if s.missing[0] {
        return Err(Error::LeadingGap);
    }
    let mut values = s.values.clone();
    let mut last = values[0];
    for (v, &m) in values.iter_mut().zip(&s.missing) {
        if m {
            *v = last;
        } else {
            last = *v;
        }
    }
    Ok(TrafficSeries {
        start_time: s.start_time,
        interval: s.interval,
        missing: vec![false; values.len()],
        values,
    })
}

/// Sample autocorrelation for lags `0..=max_lag`.
///
/// Lag-k covariance is summed over the `n - k` overlapping pairs and divided
/// by the lag-0 sum, so entry 0 is exactly 1.
pub fn acf(values: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    let n = values.len();
    if max_lag >= n {
        return Err(Error::insufficient(format!(
            "max_lag {max_lag} requires more than {n} samples"
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::MalformedInput("acf requires a complete series".into()));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = values.iter().map(|v| v - mean).collect();
    let c0: f64 = centered.iter().map(|x| x * x).sum();
    if c0 <= 0.0 {
        return Err(Error::ZeroVariance);
    }
    let mut out = Vec::with_capacity(max_lag + 1);
    out.push(1.0);
    for k in 1..=max_lag {
        let ck: f64 = centered[..n - k]
            .iter()
            .zip(&centered[k..])
            .map(|(a, b)| a * b)
            .sum();
        out.push(ck / c0);
    }
    Ok(out)
}

/// Min-max scale parameters; `x' = (x - min) / (max - min)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleParams {
    pub min: f64,
    pub max: f64,
}

impl ScaleParams {
    pub fn fit(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput);
        }
        let (min, max) = values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        if !(max > min) {
            return Err(Error::ZeroRange);
        }
        Ok(Self { min, max })
    }

    pub fn range(&self) -> f64 {
        self.max - self.min
    }

    pub fn transform(&self, v: f64) -> f64 {
        (v - self.min) / self.range()
    }

    pub fn inverse(&self, v: f64) -> f64 {
        v * self.range() + self.min
    }

    pub fn transform_all(&self, values: &[f64]) -> Vec<f64> {
        values.iter().map(|&v| self.transform(v)).collect()
    }

    pub fn inverse_all(&self, values: &[f64]) -> Vec<f64> {
        values.iter().map(|&v| self.inverse(v)).collect()
    }
}

/// Scales a series to `[0, 1]` using its own extremes.
pub fn minmax_normalize(s: &TrafficSeries) -> Result<(TrafficSeries, ScaleParams)> {
    s.require_complete()?;
    let params = ScaleParams::fit(&s.values)?;
    let scaled = s.with_values(params.transform_all(&s.values))?;
    Ok((scaled, params))
}

pub fn minmax_inverse(s: &TrafficSeries, params: &ScaleParams) -> Result<TrafficSeries> {
    s.with_values(params.inverse_all(&s.values))
}

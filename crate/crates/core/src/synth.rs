//! Seeded synthetic traffic: daily and weekly cycles, Gaussian noise, upward spikes.

use std::f64::consts::TAU;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::TrafficSeries;

/// Samples per day at a five-minute cadence.
pub const DAILY_PERIOD: usize = 288;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n: usize,
    /// Seconds between samples.
    pub interval: u64,
    pub start_time: i64,
    /// bps
    pub base_level: f64,
    /// bps
    pub daily_amplitude: f64,
    /// Relative depth of the weekly modulation of the daily cycle.
    pub weekly_depth: f64,
    /// bps
    pub noise_sigma: f64,
    pub spike_count: usize,
    /// Spike height in multiples of the unspiked series' standard deviation.
    pub spike_magnitude: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n: 8352,
            interval: 300,
            start_time: 1_600_000_000,
            base_level: 4.0e9,
            daily_amplitude: 1.5e9,
            weekly_depth: 0.2,
            noise_sigma: 1.5e8,
            spike_count: 43,
            spike_magnitude: 8.0,
            seed: 42,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Config("synthetic series needs n >= 2".into()));
        }
        if self.interval == 0 {
            return Err(Error::Config("interval must be positive".into()));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::Config("noise_sigma must be >= 0".into()));
        }
        if self.spike_count > 0 && !(self.spike_magnitude > 3.0) {
            return Err(Error::Config("spike_magnitude must exceed 3".into()));
        }
        if self.spike_count >= self.n {
            return Err(Error::Config(format!(
                "{} spikes do not fit in {} samples",
                self.spike_count, self.n
            )));
        }
        Ok(())
    }
}

/// Generated series with its exact additive components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthOutput {
    pub spec: SynthSpec,
    pub clean: TrafficSeries,
    pub noisy: TrafficSeries,
    pub noise: Vec<f64>,
    /// Added height at each spike index, zero elsewhere.
    pub spikes: Vec<f64>,
    /// Ascending.
    pub spike_indices: Vec<usize>,
}

impl SynthOutput {
    /// `clean + noise + spikes`, which equals `noisy` exactly.
    pub fn recompose(&self) -> Vec<f64> {
        self.clean
            .values
            .iter()
            .zip(&self.noise)
            .zip(&self.spikes)
            .map(|((c, e), s)| c + e + s)
            .collect()
    }

    pub fn truth(&self) -> SynthTruth {
        SynthTruth {
            spec: self.spec,
            clean: self.clean.values.clone(),
            spike_indices: self.spike_indices.clone(),
        }
    }
}

/// Ground-truth sidecar written next to a generated series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub spec: SynthSpec,
    pub clean: Vec<f64>,
    pub spike_indices: Vec<usize>,
}

pub fn generate(spec: &SynthSpec) -> Result<SynthOutput> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let weekly = 7.0 * DAILY_PERIOD as f64;
    let clean: Vec<f64> = (0..spec.n)
        .map(|t| {
            let t = t as f64;
            let week = 1.0 + spec.weekly_depth * (TAU * t / weekly).sin();
            let day = (TAU * t / DAILY_PERIOD as f64 - TAU / 4.0).sin();
            spec.base_level + spec.daily_amplitude * week * day
        })
        .collect();
    let noise: Vec<f64> = if spec.noise_sigma > 0.0 {
        let dist = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
        (0..spec.n).map(|_| dist.sample(&mut rng)).collect()
    } else {
        vec![0.0; spec.n]
    };
    let base: Vec<f64> = clean.iter().zip(&noise).map(|(c, e)| c + e).collect();

    let mut spikes = vec![0.0; spec.n];
    let mut spike_indices = Vec::new();
    if spec.spike_count > 0 {
        let mean = base.iter().sum::<f64>() / spec.n as f64;
        let sd = (base.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / spec.n as f64).sqrt();
        let height = spec.spike_magnitude * sd;
        spike_indices = sample(&mut rng, spec.n - 1, spec.spike_count)
            .into_iter()
            .map(|i| i + 1)
            .collect();
        spike_indices.sort_unstable();
        for &i in &spike_indices {
            spikes[i] = height;
        }
    }
    let noisy: Vec<f64> = base.iter().zip(&spikes).map(|(b, s)| b + s).collect();
    Ok(SynthOutput {
        spec: *spec,
        clean: TrafficSeries::new(spec.start_time, spec.interval, clean)?,
        noisy: TrafficSeries::new(spec.start_time, spec.interval, noisy)?,
        noise,
        spikes,
        spike_indices,
    })
}

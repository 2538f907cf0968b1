use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_TRAIN_FRAC: f64 = 0.70;

/// Lagged inputs `y(t-p)..y(t-1)` (oldest first) paired with targets `y(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowedDataset {
    p: usize,
    /// Row-major `samples x p`.
    inputs: Vec<f64>,
    targets: Vec<f64>,
    /// Position of each target in the source series.
    target_index: Vec<usize>,
}

pub fn make_windows(values: &[f64], p: usize) -> Result<WindowedDataset> {
    if p == 0 {
        return Err(Error::Config("lag count must be at least 1".into()));
    }
    if values.len() <= p {
        return Err(Error::insufficient(format!(
            "{} samples cannot form windows of {p} lags",
            values.len()
        )));
    }
    let samples = values.len() - p;
    let mut inputs = Vec::with_capacity(samples * p);
    for t in p..values.len() {
        inputs.extend_from_slice(&values[t - p..t]);
    }
    Ok(WindowedDataset {
        p,
        inputs,
        targets: values[p..].to_vec(),
        target_index: (p..values.len()).collect(),
    })
}

impl WindowedDataset {
    pub fn from_parts(p: usize, inputs: Vec<f64>, targets: Vec<f64>) -> Result<Self> {
        if p == 0 || inputs.len() != targets.len() * p {
            return Err(Error::shape(format!(
                "{} inputs for {} targets at p = {p}",
                inputs.len(),
                targets.len()
            )));
        }
        let target_index = (0..targets.len()).collect();
        Ok(Self {
            p,
            inputs,
            targets,
            target_index,
        })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.p..(i + 1) * self.p]
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn target_index(&self) -> &[usize] {
        &self.target_index
    }

    fn range(&self, start: usize, end: usize) -> Self {
        Self {
            p: self.p,
            inputs: self.inputs[start * self.p..end * self.p].to_vec(),
            targets: self.targets[start..end].to_vec(),
            target_index: self.target_index[start..end].to_vec(),
        }
    }
}

/// Chronological split: the first `floor(train_frac * samples)` rows train.
pub fn split(ds: &WindowedDataset, train_frac: f64) -> Result<(WindowedDataset, WindowedDataset)> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::Config(format!("train fraction {train_frac} outside (0, 1)")));
    }
    let cut = (train_frac * ds.len() as f64).floor() as usize;
    if cut == 0 || cut == ds.len() {
        return Err(Error::insufficient(format!(
            "{} samples leave an empty side at fraction {train_frac}",
            ds.len()
        )));
    }
    Ok((ds.range(0, cut), ds.range(cut, ds.len())))
}

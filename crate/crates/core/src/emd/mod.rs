//! Empirical Mode Decomposition and average-IMF denoising.
//!
//! A signal is split into intrinsic mode functions (IMFs) by repeated
//! sifting: cubic-spline envelopes through the local maxima and minima are
//! averaged and the mean envelope is subtracted until the candidate settles.
//! Each accepted IMF is removed from the running residue and the process
//! repeats on what is left, so that
//!
//! ```text
//! signal(t) = sum_i imf_i(t) + residue(t)
//! ```
//!
//! Denoising subtracts the elementwise mean of all IMFs (`avg_imf`) from the
//! input; the residue is not part of that average.

mod spline;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use spline::natural_cubic_on_grid;

/// Minimum signal length accepted by [`decompose`].
pub const MIN_LEN: usize = 8;

/// Sifting controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SiftConfig {
    /// Stop sifting once the normalised squared difference between successive
    /// candidates drops below this value (and the candidate is a valid IMF).
    pub sd_threshold: f64,
    /// Hard cap on sifting passes per IMF.
    pub max_sift_iterations: usize,
    /// Cap on the number of IMFs; `None` means `floor(log2(n)) - 1`.
    pub max_imfs: Option<usize>,
}

impl Default for SiftConfig {
    fn default() -> Self {
        Self {
            sd_threshold: 0.2,
            max_sift_iterations: 100,
            max_imfs: None,
        }
    }
}

impl SiftConfig {
    pub fn imf_cap(&self, n: usize) -> usize {
        self.max_imfs
            .unwrap_or_else(|| (n.max(1).ilog2() as usize).saturating_sub(1))
            .max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmdResult {
    pub imfs: Vec<Vec<f64>>,
    pub residue: Vec<f64>,
    pub avg_imf: Vec<f64>,
}

impl EmdResult {
    pub fn imf_count(&self) -> usize {
        self.imfs.len()
    }

    /// `sum(imfs) + residue`, elementwise.
    pub fn reconstruct(&self) -> Vec<f64> {
        let mut out = self.residue.clone();
        for imf in &self.imfs {
            for (o, v) in out.iter_mut().zip(imf) {
                *o += v;
            }
        }
        out
    }
}

/// Indices of the interior local maxima and minima.
///
/// A flat run counts as one extremum, placed at its centre, when both
/// neighbours of the run lie on the same side of it.
pub fn find_extrema(s: &[f64]) -> (Vec<usize>, Vec<usize>) {
    let n = s.len();
    let mut maxima = Vec::new();
    let mut minima = Vec::new();
    if n < 3 {
        return (maxima, minima);
    }
    let mut i = 1;
    while i < n - 1 {
        // extend over a plateau
        let mut j = i;
        while j + 1 < n - 1 && s[j + 1] == s[i] {
            j += 1;
        }
        let left = s[i - 1];
        let right = s[j + 1];
        let v = s[i];
        if v > left && v > right {
            maxima.push((i + j) / 2);
        } else if v < left && v < right {
            minima.push((i + j) / 2);
        }
        i = j + 1;
    }
    (maxima, minima)
}

/// Number of sign changes, skipping exact zeros.
pub fn count_zero_crossings(s: &[f64]) -> usize {
    let mut last = 0.0f64;
    let mut count = 0;
    for &v in s {
        if v == 0.0 {
            continue;
        }
        if last != 0.0 && (v > 0.0) != (last > 0.0) {
            count += 1;
        }
        last = v;
    }
    count
}

/// `|#extrema - #zero-crossings| <= 1`.
pub fn is_imf(s: &[f64]) -> bool {
    let (maxima, minima) = find_extrema(s);
    let extrema = maxima.len() + minima.len();
    extrema.abs_diff(count_zero_crossings(s)) <= 1
}

/// Residue variation, relative to the input's, below which sifting stops.
const RESIDUE_FLOOR: f64 = 1e-10;

fn value_range(s: &[f64]) -> f64 {
    let (lo, hi) = s
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    hi - lo
}

fn is_monotone(s: &[f64]) -> bool {
    s.windows(2).all(|w| w[1] >= w[0]) || s.windows(2).all(|w| w[1] <= w[0])
}

/// Envelope through `idx`, with up to two extrema mirrored about each end.
fn envelope(s: &[f64], idx: &[usize]) -> Vec<f64> {
    let n = s.len();
    let last = (n - 1) as f64;
    let take = idx.len().min(2);
    let mut x = Vec::with_capacity(idx.len() + 4);
    let mut y = Vec::with_capacity(idx.len() + 4);
    for &i in idx[..take].iter().rev() {
        x.push(-(i as f64));
        y.push(s[i]);
    }
    for &i in idx {
        x.push(i as f64);
        y.push(s[i]);
    }
    for &i in idx[idx.len() - take..].iter().rev() {
        x.push(2.0 * last - i as f64);
        y.push(s[i]);
    }
    natural_cubic_on_grid(&x, &y, n)
}

/// Mean of the upper and lower envelopes.
pub fn mean_envelope(s: &[f64]) -> Result<Vec<f64>> {
    let (maxima, minima) = find_extrema(s);
    if maxima.is_empty() || minima.is_empty() {
        return Err(Error::InsufficientExtrema);
    }
    let upper = envelope(s, &maxima);
    let lower = envelope(s, &minima);
    Ok(upper.iter().zip(&lower).map(|(u, l)| 0.5 * (u + l)).collect())
}

/// One sifting pass: `s - mean_envelope(s)`.
pub fn sift_once(s: &[f64]) -> Result<Vec<f64>> {
    let mean = mean_envelope(s)?;
    Ok(s.iter().zip(&mean).map(|(v, m)| v - m).collect())
}

fn extract_imf(r: &[f64], cfg: &SiftConfig) -> Vec<f64> {
    let mut h = r.to_vec();
    for it in 0..cfg.max_sift_iterations {
        let next = match sift_once(&h) {
            Ok(v) => v,
            Err(_) => break,
        };
        let den: f64 = h.iter().map(|v| v * v).sum();
        let num: f64 = h.iter().zip(&next).map(|(a, b)| (a - b) * (a - b)).sum();
        h = next;
        // the unsifted residue carries its offset; compare sifted candidates only
        if it == 0 {
            continue;
        }
        if den == 0.0 || (num / den < cfg.sd_threshold && is_imf(&h)) {
            break;
        }
    }
    h
}

/// Decomposes `s` into IMFs and a residue.
pub fn decompose(s: &[f64], cfg: &SiftConfig) -> Result<EmdResult> {
    let n = s.len();
    if n < MIN_LEN {
        return Err(Error::NotDecomposable);
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::MalformedInput("EMD input contains missing values".into()));
    }
    let cap = cfg.imf_cap(n);
    let floor = RESIDUE_FLOOR * value_range(s);
    let mut residue = s.to_vec();
    let mut imfs: Vec<Vec<f64>> = Vec::new();
    while imfs.len() < cap {
        let (maxima, minima) = find_extrema(&residue);
        if maxima.len() + minima.len() < 2 || is_monotone(&residue) || value_range(&residue) <= floor {
            break;
        }
        let imf = extract_imf(&residue, cfg);
        for (r, v) in residue.iter_mut().zip(&imf) {
            *r -= v;
        }
        imfs.push(imf);
    }
    if imfs.is_empty() {
        return Err(Error::NotDecomposable);
    }
    let scale = 1.0 / imfs.len() as f64;
    let mut avg_imf = vec![0.0; n];
    for imf in &imfs {
        for (a, v) in avg_imf.iter_mut().zip(imf) {
            *a += v;
        }
    }
    avg_imf.iter_mut().for_each(|a| *a *= scale);
    Ok(EmdResult {
        imfs,
        residue,
        avg_imf,
    })
}

/// Output of [`denoise`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Denoised {
    pub denoised: Vec<f64>,
    /// The subtracted average IMF; all zeros when decomposition failed.
    pub noise: Vec<f64>,
    pub imf_count: usize,
    /// Set when the input could not be decomposed and was passed through.
    pub warning: Option<String>,
}

/// Removes the average IMF from `s`.
///
/// Inputs that cannot be decomposed pass through unchanged with a warning.
pub fn denoise(s: &[f64], cfg: &SiftConfig) -> Result<Denoised> {
    match decompose(s, cfg) {
        Ok(emd) => Ok(denoise_from(s, &emd)),
        Err(Error::NotDecomposable) => Ok(Denoised {
            denoised: s.to_vec(),
            noise: vec![0.0; s.len()],
            imf_count: 0,
            warning: Some("signal not decomposable; passed through unchanged".into()),
        }),
        Err(e) => Err(e),
    }
}

/// Denoising step given an existing decomposition of `s`.
pub fn denoise_from(s: &[f64], emd: &EmdResult) -> Denoised {
    Denoised {
        denoised: s.iter().zip(&emd.avg_imf).map(|(v, a)| v - a).collect(),
        noise: emd.avg_imf.clone(),
        imf_count: emd.imf_count(),
        warning: None,
    }
}

/// `10 * log10(sum(reference^2) / sum((reference - test)^2))`.
///
/// Identical signals give `f64::INFINITY`.
pub fn snr_db(reference: &[f64], test: &[f64]) -> Result<f64> {
    if reference.len() != test.len() {
        return Err(Error::shape(format!(
            "reference length {} != test length {}",
            reference.len(),
            test.len()
        )));
    }
    if reference.is_empty() {
        return Err(Error::EmptyInput);
    }
    let signal: f64 = reference.iter().map(|v| v * v).sum();
    if signal == 0.0 {
        return Err(Error::ZeroPower);
    }
    let noise: f64 = reference
        .iter()
        .zip(test)
        .map(|(r, t)| (r - t) * (r - t))
        .sum();
    if noise == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (signal / noise).log10())
}

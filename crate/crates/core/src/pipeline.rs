//! End-to-end run: ingest, fill, denoise, outlier mitigation, lag selection,
//! windowing, training, prediction and metrics, with every intermediate
//! written to disk and listed in a hashed manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::emd::{self, SiftConfig};
use crate::error::{Error, Result};
use crate::eval::{error_reduction, MetricReport};
use crate::exec::Exec;
use crate::io::{self, ComparisonRow, Input};
use crate::lagsel::{self, OrderGrid, RankedOrder};
use crate::outlier::{self, OutlierConfig, OutlierReport};
use crate::seqmodels::{self, Architecture, ModelSpec, DEFAULT_TRAIN_FRAC};
use crate::series::{self, BpsConversion, TrafficSeries};

pub const SEED_ENV: &str = "DEK_SEED";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineConfig {
    pub input: Option<PathBuf>,
    #[serde(skip)]
    pub output_dir: PathBuf,
    pub conversion: BpsConversion,
    pub denoise: bool,
    pub outliers: bool,
    pub sift: SiftConfig,
    pub outlier: OutlierConfig,
    pub grid: OrderGrid,
    /// Fixed lag count; skips the ARIMA grid when set.
    pub lags: Option<usize>,
    pub model: ModelSpec,
    pub train_frac: f64,
    pub acf_max_lag: usize,
    pub parallel: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            input: None,
            output_dir: PathBuf::from("out"),
            conversion: BpsConversion::PerSecond,
            denoise: true,
            outliers: true,
            sift: SiftConfig::default(),
            outlier: OutlierConfig::default(),
            grid: OrderGrid::default(),
            lags: None,
            model: ModelSpec::default(),
            train_frac: DEFAULT_TRAIN_FRAC,
            acf_max_lag: 48,
            parallel: true,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value '{value}' for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean '{value}' for {key}"))),
    }
}

/// Accepted keys for [`PipelineConfig::set`] and the config file.
pub const CONFIG_KEYS: &[&str] = &[
    "input",
    "output_dir",
    "conversion",
    "denoise",
    "outliers",
    "mitigation",
    "k_min",
    "k_max",
    "knn_window",
    "sd_threshold",
    "max_sift_iterations",
    "max_imfs",
    "p_min",
    "p_max",
    "q_min",
    "q_max",
    "d",
    "lags",
    "architecture",
    "hidden_size",
    "epochs",
    "batch_size",
    "learning_rate",
    "beta1",
    "beta2",
    "eps",
    "seed",
    "train_frac",
    "acf_max_lag",
    "parallel",
];

impl PipelineConfig {
    /// Sets one option by key, as used in config files.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "input" => self.input = Some(PathBuf::from(v)),
            "output_dir" => self.output_dir = PathBuf::from(v),
            "conversion" => {
                self.conversion = match v {
                    "per_second" => BpsConversion::PerSecond,
                    "per_interval" => BpsConversion::PerInterval,
                    _ => return Err(Error::Config(format!("conversion must be per_second or per_interval, got '{v}'"))),
                }
            }
            "denoise" => self.denoise = parse_bool(key, v)?,
            "outliers" => self.outliers = parse_bool(key, v)?,
            "mitigation" => self.outlier.mode = v.parse()?,
            "k_min" => self.outlier.k_range.0 = parse(key, v)?,
            "k_max" => self.outlier.k_range.1 = parse(key, v)?,
            "knn_window" => self.outlier.window = parse(key, v)?,
            "sd_threshold" => self.sift.sd_threshold = parse(key, v)?,
            "max_sift_iterations" => self.sift.max_sift_iterations = parse(key, v)?,
            "max_imfs" => self.sift.max_imfs = if v == "auto" { None } else { Some(parse(key, v)?) },
            "p_min" => self.grid.p.0 = parse(key, v)?,
            "p_max" => self.grid.p.1 = parse(key, v)?,
            "q_min" => self.grid.q.0 = parse(key, v)?,
            "q_max" => self.grid.q.1 = parse(key, v)?,
            "d" => self.grid.d = parse(key, v)?,
            "lags" => self.lags = if v == "auto" { None } else { Some(parse(key, v)?) },
            "architecture" => self.model.architecture = v.parse()?,
            "hidden_size" => self.model.hidden_size = parse(key, v)?,
            "epochs" => self.model.epochs = parse(key, v)?,
            "batch_size" => self.model.batch_size = parse(key, v)?,
            "learning_rate" => self.model.learning_rate = parse(key, v)?,
            "beta1" => self.model.beta1 = parse(key, v)?,
            "beta2" => self.model.beta2 = parse(key, v)?,
            "eps" => self.model.eps = parse(key, v)?,
            "seed" => self.model.seed = parse(key, v)?,
            "train_frac" => self.train_frac = parse(key, v)?,
            "acf_max_lag" => self.acf_max_lag = parse(key, v)?,
            "parallel" => self.parallel = parse_bool(key, v)?,
            other => return Err(Error::Config(format!("unknown option '{other}'"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines. Section headers only group keys.
    pub fn apply_ini(&mut self, text: &str) -> Result<()> {
        let ini = ini::Ini::load_from_str(text).map_err(|e| Error::Config(format!("config file: {e}")))?;
        for (_, props) in ini.iter() {
            for (k, v) in props.iter() {
                self.set(k, v)?;
            }
        }
        Ok(())
    }

    pub fn from_ini_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::default();
        cfg.apply_ini(&text)?;
        Ok(cfg)
    }

    /// Reads the seed override from `DEK_SEED`, if set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.model.seed = parse(SEED_ENV, &v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.train_frac > 0.0 && self.train_frac < 1.0) {
            return Err(Error::Config(format!("train_frac {} outside (0, 1)", self.train_frac)));
        }
        let (k0, k1) = self.outlier.k_range;
        if k0 == 0 || k0 > k1 {
            return Err(Error::Config(format!("invalid K range {k0}..={k1}")));
        }
        if self.outlier.window == 0 {
            return Err(Error::Config("knn_window must be at least 1".into()));
        }
        if self.grid.p.0 > self.grid.p.1 || self.grid.q.0 > self.grid.q.1 {
            return Err(Error::Config("empty ARIMA order range".into()));
        }
        if self.lags == Some(0) {
            return Err(Error::Config("lags must be at least 1".into()));
        }
        if !(self.sift.sd_threshold > 0.0) || self.sift.max_sift_iterations == 0 {
            return Err(Error::Config("invalid sifting controls".into()));
        }
        self.model.validate()
    }

    pub fn exec(&self) -> Exec {
        if self.parallel {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ManifestEntry {
    /// Relative to the output directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Hashes every file under `dir` except the manifest itself, sorted by path.
pub fn build_manifest(dir: &Path) -> Result<Vec<ManifestEntry>> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<ManifestEntry>) -> Result<()> {
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            if path.is_dir() {
                walk(root, &path, out)?;
                continue;
            }
            let rel = path
                .strip_prefix(root)
                .expect("walk stays under root")
                .components()
                .map(|c| c.as_os_str().to_string_lossy().into_owned())
                .collect::<Vec<_>>()
                .join("/");
            if rel == MANIFEST_FILE {
                continue;
            }
            let data = fs::read(&path)?;
            out.push(ManifestEntry {
                path: rel,
                sha256: hex::encode(Sha256::digest(&data)),
                bytes: data.len() as u64,
            });
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out)?;
    out.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(out)
}

fn write_manifest(dir: &Path) -> Result<Vec<ManifestEntry>> {
    let entries = build_manifest(dir)?;
    io::write_json(&dir.join(MANIFEST_FILE), &entries)?;
    Ok(entries)
}

/// Series after the optional denoising and outlier stages, plus the chosen lag count.
#[derive(Debug, Clone)]
pub struct Prepared {
    /// Forward-filled input.
    pub observed: TrafficSeries,
    pub processed: TrafficSeries,
    pub imf_count: Option<usize>,
    pub outliers: Option<OutlierReport>,
    pub ranking: Vec<RankedOrder>,
    pub lags: usize,
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(name))
}

pub fn load_input(cfg: &PipelineConfig) -> Result<TrafficSeries> {
    let path = cfg
        .input
        .as_ref()
        .ok_or_else(|| Error::Config("no input file given".into()))?;
    stage("ingest", io::read_input_file(path).and_then(|i: Input| i.into_series(cfg.conversion)))
}

/// Runs the preprocessing stages on `raw`, writing their artifacts into `dir`.
pub fn prepare(cfg: &PipelineConfig, raw: &TrafficSeries, dir: &Path) -> Result<Prepared> {
    fs::create_dir_all(dir)?;
    let exec = cfg.exec();
    let observed = stage("forward_fill", series::forward_fill(raw))?;
    let mut current = observed.clone();
    let mut imf_count = None;

    if cfg.denoise {
        let (den, emd_result) = stage(
            "denoise",
            match emd::decompose(&current.values, &cfg.sift) {
                Ok(e) => Ok((emd::denoise_from(&current.values, &e), Some(e))),
                Err(Error::NotDecomposable) => emd::denoise(&current.values, &cfg.sift).map(|d| (d, None)),
                Err(e) => Err(e),
            },
        )?;
        if let Some(w) = &den.warning {
            log::warn!("{w}");
        }
        io::write_decomposition(&dir.join("decomposition.csv"), &current.values, emd_result.as_ref(), &den)?;
        imf_count = Some(den.imf_count);
        current = current.with_values(den.denoised)?;
        io::write_series(&dir.join("denoised.csv"), &current)?;
    }

    let mut outliers = None;
    if cfg.outliers {
        let report = stage("outliers", outlier::analyze(&current, &cfg.outlier, exec))?;
        io::write_json(&dir.join("outliers.json"), &report)?;
        current = current.with_values(report.mitigated.clone())?;
        io::write_series(&dir.join("mitigated.csv"), &current)?;
        outliers = Some(report);
    }

    let max_lag = cfg.acf_max_lag.min(current.len() - 1);
    io::write_acf(&dir.join("acf.csv"), &stage("acf", series::acf(&current.values, max_lag))?)?;

    let (ranking, lags) = match cfg.lags {
        Some(p) => (Vec::new(), p),
        None => {
            let ranked = stage("select_lags", lagsel::grid_search(&current.values, &cfg.grid, exec))?;
            io::write_ranking(&dir.join("lag_ranking.csv"), &ranked)?;
            let p = stage("select_lags", lagsel::select_lag_count(&ranked))?;
            (ranked, p)
        }
    };
    Ok(Prepared {
        observed,
        processed: current,
        imf_count,
        outliers,
        ranking,
        lags,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub spec: ModelSpec,
    pub seed: u64,
    pub epochs: usize,
    pub lags: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    pub final_train_loss: f64,
    pub loss_history: Vec<f64>,
    pub imf_count: Option<usize>,
    pub outliers_flagged: Option<usize>,
    pub best_k: Option<usize>,
    /// Test metrics against the reference series, in bps.
    pub metrics: MetricReport,
}

/// Windows, splits, trains and evaluates one architecture on prepared data.
///
/// Metrics compare predictions with `reference` (the observed series when
/// `None`) at the test target positions.
pub fn fit_and_evaluate(
    cfg: &PipelineConfig,
    spec: &ModelSpec,
    prep: &Prepared,
    reference: Option<&[f64]>,
    dir: &Path,
) -> Result<RunReport> {
    fs::create_dir_all(dir)?;
    let reference = reference.unwrap_or(&prep.observed.values);
    if reference.len() != prep.processed.len() {
        return Err(Error::shape(format!(
            "reference has {} samples, series has {}",
            reference.len(),
            prep.processed.len()
        )));
    }
    let ds = stage("window", seqmodels::make_windows(&prep.processed.values, prep.lags))?;
    let (train_ds, test_ds) = stage("split", seqmodels::split(&ds, cfg.train_frac))?;
    let model = stage("train", seqmodels::train(&train_ds, spec))?;
    let mut ckpt = Vec::new();
    seqmodels::write_checkpoint(&model, &mut ckpt)?;
    fs::write(dir.join("model.bin"), ckpt)?;
    let predicted = stage("predict", seqmodels::predict(&model, &test_ds))?;
    let actual: Vec<f64> = test_ds.target_index().iter().map(|&t| reference[t]).collect();
    io::write_predictions(&dir.join("predictions.csv"), test_ds.target_index(), &actual, &predicted)?;
    let metrics = stage("evaluate", MetricReport::compute(&actual, &predicted))?;
    let report = RunReport {
        spec: *spec,
        seed: spec.seed,
        epochs: spec.epochs,
        lags: prep.lags,
        train_samples: train_ds.len(),
        test_samples: test_ds.len(),
        final_train_loss: model.final_loss(),
        loss_history: model.loss_history.clone(),
        imf_count: prep.imf_count,
        outliers_flagged: prep.outliers.as_ref().map(|o| o.flagged.len()),
        best_k: prep.outliers.as_ref().map(|o| o.best_k),
        metrics,
    };
    io::write_json(&dir.join("report.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub report: RunReport,
    pub manifest: Vec<ManifestEntry>,
}

/// Full pipeline on the configured input.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunArtifacts> {
    cfg.validate()?;
    let raw = load_input(cfg)?;
    run_pipeline_on(cfg, &raw, None)
}

/// Full pipeline on an in-memory series.
pub fn run_pipeline_on(cfg: &PipelineConfig, raw: &TrafficSeries, reference: Option<&[f64]>) -> Result<RunArtifacts> {
    cfg.validate()?;
    let dir = cfg.output_dir.clone();
    fs::create_dir_all(&dir)?;
    io::write_json(&dir.join("config.json"), cfg)?;
    let prep = prepare(cfg, raw, &dir)?;
    let report = fit_and_evaluate(cfg, &cfg.model, &prep, reference, &dir)?;
    let manifest = write_manifest(&dir)?;
    Ok(RunArtifacts { dir, report, manifest })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Variant {
    #[serde(rename = "baseline")]
    Baseline,
    #[serde(rename = "knn")]
    Knn,
    #[serde(rename = "knn_emd")]
    KnnEmd,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Baseline, Variant::Knn, Variant::KnnEmd];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Knn => "knn",
            Variant::KnnEmd => "knn_emd",
        }
    }

    /// `(denoise, outliers)`.
    pub fn stages(self) -> (bool, bool) {
        match self {
            Variant::Baseline => (false, false),
            Variant::Knn => (false, true),
            Variant::KnnEmd => (true, true),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    pub manifest: Vec<ManifestEntry>,
}

impl Comparison {
    pub fn row(&self, model: Architecture, variant: Variant) -> Option<&ComparisonRow> {
        self.rows
            .iter()
            .find(|r| r.model == model.name() && r.variant == variant.name())
    }
}

/// Runs every variant for every architecture with a shared seed and split.
///
/// Each variant prepares its series once under `<output_dir>/<variant>/`;
/// models go to `<output_dir>/<variant>/<model>/`. Writes `comparison.csv`
/// and a manifest at the top level.
pub fn compare_variants(
    cfg: &PipelineConfig,
    raw: &TrafficSeries,
    architectures: &[Architecture],
    reference: Option<&[f64]>,
) -> Result<Comparison> {
    cfg.validate()?;
    if architectures.is_empty() {
        return Err(Error::Config("no architectures to compare".into()));
    }
    let root = cfg.output_dir.clone();
    fs::create_dir_all(&root)?;
    io::write_json(&root.join("config.json"), cfg)?;
    let exec = cfg.exec();
    let mut rows = Vec::new();
    for variant in Variant::ALL {
        let (denoise, outliers) = variant.stages();
        let vcfg = PipelineConfig {
            denoise,
            outliers,
            ..cfg.clone()
        };
        let vdir = root.join(variant.name());
        let prep = prepare(&vcfg, raw, &vdir)?;
        log::info!("{}: {} lags", variant.name(), prep.lags);
        let reports = exec.map(architectures, |&arch| {
            let spec = ModelSpec {
                architecture: arch,
                ..cfg.model
            };
            fit_and_evaluate(&vcfg, &spec, &prep, reference, &vdir.join(arch.name()))
        });
        for (arch, report) in architectures.iter().zip(reports) {
            let report = report?;
            log::info!("{} {}: MAPE {:.4}", variant.name(), arch, report.metrics.mape);
            rows.push(ComparisonRow {
                model: arch.name().to_string(),
                variant: variant.name().to_string(),
                metrics: report.metrics,
                error_reduction: None,
            });
        }
    }
    let baseline: Vec<(String, f64)> = rows
        .iter()
        .filter(|r| r.variant == Variant::Baseline.name())
        .map(|r| (r.model.clone(), r.metrics.mape))
        .collect();
    for r in &mut rows {
        if let Some((_, b)) = baseline.iter().find(|(m, _)| *m == r.model) {
            r.error_reduction = error_reduction(*b, r.metrics.mape).ok();
        }
    }
    let mut csv = Vec::new();
    io::write_comparison(&mut csv, &rows)?;
    fs::write(root.join("comparison.csv"), csv)?;
    let manifest = write_manifest(&root)?;
    Ok(Comparison { rows, manifest })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::outlier::MitigationMode;

    #[test]
    fn ini_and_set() {
        let mut cfg = PipelineConfig::default();
        cfg.apply_ini(
            "# experiment\nseed = 7\n[model]\narchitecture = gru\nhidden_size=8\n[stages]\ndenoise = off\nmitigation = preceding\nlags = 5\n",
        )
        .unwrap();
        assert_eq!(cfg.model.seed, 7);
        assert_eq!(cfg.model.architecture, Architecture::Gru);
        assert_eq!(cfg.model.hidden_size, 8);
        assert!(!cfg.denoise);
        assert_eq!(cfg.outlier.mode, MitigationMode::Preceding);
        assert_eq!(cfg.lags, Some(5));
        assert!(matches!(cfg.set("bogus", "1"), Err(Error::Config(_))));
        assert!(matches!(cfg.set("epochs", "many"), Err(Error::Config(_))));
        cfg.set("train_frac", "1.5").unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn every_key_is_settable() {
        let samples = [
            ("input", "x.csv"),
            ("output_dir", "o"),
            ("conversion", "per_interval"),
            ("denoise", "true"),
            ("outliers", "false"),
            ("mitigation", "neighbor"),
            ("k_min", "2"),
            ("k_max", "5"),
            ("knn_window", "4"),
            ("sd_threshold", "0.3"),
            ("max_sift_iterations", "50"),
            ("max_imfs", "auto"),
            ("p_min", "1"),
            ("p_max", "3"),
            ("q_min", "1"),
            ("q_max", "2"),
            ("d", "0"),
            ("lags", "auto"),
            ("architecture", "LSTM_Seq2Seq"),
            ("hidden_size", "4"),
            ("epochs", "2"),
            ("batch_size", "8"),
            ("learning_rate", "0.01"),
            ("beta1", "0.8"),
            ("beta2", "0.99"),
            ("eps", "1e-7"),
            ("seed", "3"),
            ("train_frac", "0.6"),
            ("acf_max_lag", "10"),
            ("parallel", "no"),
        ];
        assert_eq!(samples.len(), CONFIG_KEYS.len());
        let mut cfg = PipelineConfig::default();
        for (k, v) in samples {
            assert!(CONFIG_KEYS.contains(&k));
            cfg.set(k, v).unwrap();
        }
        cfg.validate().unwrap();
    }

    #[test]
    fn variant_stages() {
        assert_eq!(Variant::Baseline.stages(), (false, false));
        assert_eq!(Variant::Knn.stages(), (false, true));
        assert_eq!(Variant::KnnEmd.stages(), (true, true));
    }
}

use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use dekcast::emd;
use dekcast::eval::MetricReport;
use dekcast::io::{self, write_json};
use dekcast::lagsel;
use dekcast::outlier;
use dekcast::pipeline::{self, PipelineConfig};
use dekcast::seqmodels::{self, Architecture};
use dekcast::series;
use dekcast::synth::{self, SynthSpec, SynthTruth};

/// Network traffic forecasting with EMD denoising, KNN outlier mitigation,
/// ARIMA lag selection and recurrent models.
///
/// Options resolve in order: built-in defaults, `--config` file, the
/// DEK_SEED environment variable, then command-line flags.
#[derive(Parser, Debug)]
#[command(name = "dekcast", version)]
struct Cli {
    /// INI-style `key = value` file; see the README for the key list.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Log progress (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic series and its ground-truth sidecar.
    Synth(SynthArgs),
    /// Convert counter or rate CSV to a filled rate series.
    Ingest(IngestArgs),
    /// Empirical mode decomposition and average-IMF denoising.
    Decompose(DecomposeArgs),
    /// Empirical-rule outlier detection and KNN mitigation.
    Outliers(OutliersArgs),
    /// Rank ARIMA orders by AIC and report the selected lag count.
    SelectLags(SelectLagsArgs),
    /// Train a forecaster on the chronological training split.
    Train(TrainArgs),
    /// Forecast the test split with a trained model and score it.
    Evaluate(EvaluateArgs),
    /// Run every stage end to end.
    Pipeline(PipelineArgs),
    /// Compare baseline, knn and knn_emd variants across architectures.
    Compare(CompareArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Series CSV (`timestamp,bps`).
    #[arg(long)]
    out: PathBuf,
    /// Ground-truth JSON (clean values, spike indices).
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    /// Seconds between samples.
    #[arg(long)]
    interval: Option<u64>,
    #[arg(long)]
    base_level: Option<f64>,
    #[arg(long)]
    daily_amplitude: Option<f64>,
    #[arg(long)]
    weekly_depth: Option<f64>,
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long)]
    spike_count: Option<usize>,
    /// Spike height in standard deviations.
    #[arg(long)]
    spike_magnitude: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct IngestArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// `per_second` divides octet deltas by the interval; `per_interval` does not.
    #[arg(long, default_value = "per_second")]
    conversion: String,
    /// Also write the autocorrelation function (`lag,correlation`).
    #[arg(long)]
    acf: Option<PathBuf>,
    #[arg(long, default_value_t = 48)]
    max_lag: usize,
}

#[derive(Args, Debug)]
struct DecomposeArgs {
    #[arg(long)]
    input: PathBuf,
    /// CSV with `t,original,imf_1..imf_I,residue,avg_imf,denoised`.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    opts: Overrides,
}

#[derive(Args, Debug)]
struct OutliersArgs {
    #[arg(long)]
    input: PathBuf,
    /// JSON report: bounds, flagged indices, best K, per-K RMSE.
    #[arg(long)]
    report: PathBuf,
    /// Mitigated series CSV.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    opts: Overrides,
}

#[derive(Args, Debug)]
struct SelectLagsArgs {
    #[arg(long)]
    input: PathBuf,
    /// Ranking CSV `rank,p,d,q,aic,converged`.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    opts: Overrides,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    input: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    model: PathBuf,
    /// Run report JSON.
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    opts: Overrides,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Predictions CSV `t,actual,predicted`.
    #[arg(long)]
    out: PathBuf,
    /// Metrics JSON.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Ground-truth sidecar whose clean values replace the input as actuals.
    #[arg(long)]
    reference: Option<PathBuf>,
    #[command(flatten)]
    opts: Overrides,
}

#[derive(Args, Debug)]
struct PipelineArgs {
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Ground-truth sidecar whose clean values replace the input as actuals.
    #[arg(long)]
    reference: Option<PathBuf>,
    #[command(flatten)]
    opts: Overrides,
}

#[derive(Args, Debug)]
struct CompareArgs {
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Ground-truth sidecar whose clean values replace the input as actuals.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Comma-separated architectures; all five by default.
    #[arg(long, value_delimiter = ',')]
    architectures: Vec<String>,
    #[command(flatten)]
    opts: Overrides,
}

/// Pipeline options shared by the processing subcommands.
#[derive(Args, Debug, Default)]
struct Overrides {
    /// Enable EMD denoising (true/false).
    #[arg(long)]
    denoise: Option<String>,
    /// Enable outlier mitigation (true/false).
    #[arg(long)]
    outliers: Option<String>,
    /// `neighbor` or `preceding`.
    #[arg(long)]
    mitigation: Option<String>,
    #[arg(long)]
    k_min: Option<String>,
    #[arg(long)]
    k_max: Option<String>,
    /// Lag window for KNN distances.
    #[arg(long)]
    knn_window: Option<String>,
    #[arg(long)]
    sd_threshold: Option<String>,
    #[arg(long)]
    max_sift_iterations: Option<String>,
    /// Number or `auto`.
    #[arg(long)]
    max_imfs: Option<String>,
    #[arg(long)]
    p_min: Option<String>,
    #[arg(long)]
    p_max: Option<String>,
    #[arg(long)]
    q_min: Option<String>,
    #[arg(long)]
    q_max: Option<String>,
    /// Differencing order.
    #[arg(long)]
    d: Option<String>,
    /// Fixed lag count, or `auto` for ARIMA selection.
    #[arg(long)]
    lags: Option<String>,
    /// RNN, LSTM, GRU, LSTM_Seq2Seq or LSTM_Seq2Seq_ATN.
    #[arg(long)]
    architecture: Option<String>,
    #[arg(long)]
    hidden_size: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    learning_rate: Option<String>,
    #[arg(long)]
    beta1: Option<String>,
    #[arg(long)]
    beta2: Option<String>,
    #[arg(long)]
    eps: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    train_frac: Option<String>,
    #[arg(long)]
    acf_max_lag: Option<String>,
    /// `per_second` or `per_interval`.
    #[arg(long)]
    conversion: Option<String>,
    /// Use the data-parallel executor (true/false).
    #[arg(long)]
    parallel: Option<String>,
}

impl Overrides {
    fn apply(&self, cfg: &mut PipelineConfig) -> dekcast::Result<()> {
        let pairs = [
            ("denoise", &self.denoise),
            ("outliers", &self.outliers),
            ("mitigation", &self.mitigation),
            ("k_min", &self.k_min),
            ("k_max", &self.k_max),
            ("knn_window", &self.knn_window),
            ("sd_threshold", &self.sd_threshold),
            ("max_sift_iterations", &self.max_sift_iterations),
            ("max_imfs", &self.max_imfs),
            ("p_min", &self.p_min),
            ("p_max", &self.p_max),
            ("q_min", &self.q_min),
            ("q_max", &self.q_max),
            ("d", &self.d),
            ("lags", &self.lags),
            ("architecture", &self.architecture),
            ("hidden_size", &self.hidden_size),
            ("epochs", &self.epochs),
            ("batch_size", &self.batch_size),
            ("learning_rate", &self.learning_rate),
            ("beta1", &self.beta1),
            ("beta2", &self.beta2),
            ("eps", &self.eps),
            ("seed", &self.seed),
            ("train_frac", &self.train_frac),
            ("acf_max_lag", &self.acf_max_lag),
            ("conversion", &self.conversion),
            ("parallel", &self.parallel),
        ];
        for (key, value) in pairs {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        Ok(())
    }
}

fn base_config(cli: &Cli, opts: Option<&Overrides>) -> dekcast::Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::from_ini_file(path)?,
        None => PipelineConfig::default(),
    };
    cfg.apply_env()?;
    if let Some(o) = opts {
        o.apply(&mut cfg)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_series(path: &Path, cfg: &PipelineConfig) -> Result<series::TrafficSeries> {
    let raw = io::read_input_file(path)
        .and_then(|i| i.into_series(cfg.conversion))
        .with_context(|| format!("reading {}", path.display()))?;
    Ok(series::forward_fill(&raw)?)
}

fn load_reference(path: &Path) -> Result<Vec<f64>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let truth: SynthTruth = serde_json::from_reader(BufReader::new(file))
        .map_err(dekcast::Error::from)
        .with_context(|| format!("reading ground truth {}", path.display()))?;
    Ok(truth.clean)
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => {
            let mut spec = SynthSpec::default();
            if let Ok(v) = std::env::var(pipeline::SEED_ENV) {
                spec.seed = v
                    .parse()
                    .map_err(|_| dekcast::Error::Config(format!("invalid {} '{v}'", pipeline::SEED_ENV)))?;
            }
            macro_rules! over {
                ($($f:ident),*) => { $( if let Some(v) = a.$f { spec.$f = v; } )* };
            }
            over!(n, interval, base_level, daily_amplitude, weekly_depth, noise_sigma, spike_count, spike_magnitude, seed);
            let out = synth::generate(&spec)?;
            io::write_series(&a.out, &out.noisy)?;
            if let Some(t) = &a.truth {
                write_json(t, &out.truth())?;
            }
            log::info!("{} samples, {} spikes", spec.n, out.spike_indices.len());
        }
        Command::Ingest(a) => {
            let mut cfg = base_config(cli, None)?;
            cfg.set("conversion", &a.conversion)?;
            let raw = io::read_input_file(&a.input)?.into_series(cfg.conversion)?;
            let filled = series::forward_fill(&raw)?;
            io::write_series(&a.out, &filled)?;
            if let Some(path) = &a.acf {
                let max = a.max_lag.min(filled.len().saturating_sub(1));
                io::write_acf(path, &series::acf(&filled.values, max)?)?;
            }
            log::info!("{} samples, {} missing filled", raw.len(), raw.missing_count());
        }
        Command::Decompose(a) => {
            let cfg = base_config(cli, Some(&a.opts))?;
            let s = load_series(&a.input, &cfg)?;
            let (den, emd_result) = match emd::decompose(&s.values, &cfg.sift) {
                Ok(e) => (emd::denoise_from(&s.values, &e), Some(e)),
                Err(dekcast::Error::NotDecomposable) => (emd::denoise(&s.values, &cfg.sift)?, None),
                Err(e) => return Err(e.into()),
            };
            if let Some(w) = &den.warning {
                log::warn!("{w}");
            }
            io::write_decomposition(&a.out, &s.values, emd_result.as_ref(), &den)?;
            println!("imfs: {}", den.imf_count);
        }
        Command::Outliers(a) => {
            let cfg = base_config(cli, Some(&a.opts))?;
            let s = load_series(&a.input, &cfg)?;
            let report = outlier::analyze(&s, &cfg.outlier, cfg.exec())?;
            write_json(&a.report, &report)?;
            io::write_series(&a.out, &s.with_values(report.mitigated.clone())?)?;
            println!("flagged: {}, best_k: {}", report.flagged.len(), report.best_k);
        }
        Command::SelectLags(a) => {
            let cfg = base_config(cli, Some(&a.opts))?;
            let s = load_series(&a.input, &cfg)?;
            let ranked = lagsel::grid_search(&s.values, &cfg.grid, cfg.exec())?;
            io::write_ranking(&a.out, &ranked)?;
            println!("lags: {}", lagsel::select_lag_count(&ranked)?);
        }
        Command::Train(a) => {
            let cfg = base_config(cli, Some(&a.opts))?;
            let s = load_series(&a.input, &cfg)?;
            let p = match cfg.lags {
                Some(p) => p,
                None => lagsel::select_lag_count(&lagsel::grid_search(&s.values, &cfg.grid, cfg.exec())?)?,
            };
            let ds = seqmodels::make_windows(&s.values, p)?;
            let (train, _) = seqmodels::split(&ds, cfg.train_frac)?;
            let model = seqmodels::train(&train, &cfg.model)?;
            let mut buf = Vec::new();
            seqmodels::write_checkpoint(&model, &mut buf)?;
            fs::write(&a.model, buf).with_context(|| format!("writing {}", a.model.display()))?;
            let summary = serde_json::json!({
                "spec": model.spec,
                "seed": model.spec.seed,
                "epochs": model.spec.epochs,
                "lags": p,
                "train_samples": train.len(),
                "final_train_loss": model.final_loss(),
                "loss_history": model.loss_history,
            });
            if let Some(path) = &a.report {
                write_json(path, &summary)?;
            }
            println!("final_train_loss: {:.6e}", model.final_loss());
        }
        Command::Evaluate(a) => {
            let cfg = base_config(cli, Some(&a.opts))?;
            let s = load_series(&a.input, &cfg)?;
            let file = File::open(&a.model).with_context(|| format!("opening {}", a.model.display()))?;
            let model = seqmodels::read_checkpoint(BufReader::new(file))?;
            let ds = seqmodels::make_windows(&s.values, model.p)?;
            let (_, test) = seqmodels::split(&ds, cfg.train_frac)?;
            let predicted = seqmodels::predict(&model, &test)?;
            let reference = match &a.reference {
                Some(p) => load_reference(p)?,
                None => s.values.clone(),
            };
            if reference.len() != s.len() {
                return Err(dekcast::Error::ShapeError(format!(
                    "reference has {} samples, input has {}",
                    reference.len(),
                    s.len()
                ))
                .into());
            }
            let actual: Vec<f64> = test.target_index().iter().map(|&t| reference[t]).collect();
            io::write_predictions(&a.out, test.target_index(), &actual, &predicted)?;
            let metrics = MetricReport::compute(&actual, &predicted)?;
            if let Some(path) = &a.report {
                write_json(path, &metrics)?;
            }
            print_json(&metrics)?;
        }
        Command::Pipeline(a) => {
            let mut cfg = base_config(cli, Some(&a.opts))?;
            if let Some(i) = &a.input {
                cfg.input = Some(i.clone());
            }
            if let Some(o) = &a.out_dir {
                cfg.output_dir = o.clone();
            }
            let raw = pipeline::load_input(&cfg)?;
            let reference = a.reference.as_deref().map(load_reference).transpose()?;
            let run = pipeline::run_pipeline_on(&cfg, &raw, reference.as_deref())?;
            print_json(&run.report.metrics)?;
        }
        Command::Compare(a) => {
            let mut cfg = base_config(cli, Some(&a.opts))?;
            if let Some(i) = &a.input {
                cfg.input = Some(i.clone());
            }
            if let Some(o) = &a.out_dir {
                cfg.output_dir = o.clone();
            }
            let archs = if a.architectures.is_empty() {
                Architecture::ALL.to_vec()
            } else {
                a.architectures
                    .iter()
                    .map(|s| s.parse())
                    .collect::<dekcast::Result<Vec<_>>>()?
            };
            let raw = pipeline::load_input(&cfg)?;
            let reference = a.reference.as_deref().map(load_reference).transpose()?;
            let cmp = pipeline::compare_variants(&cfg, &raw, &archs, reference.as_deref())?;
            io::write_comparison(std::io::stdout().lock(), &cmp.rows)?;
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    err.chain()
        .find_map(|e| e.downcast_ref::<dekcast::Error>())
        .map(|e| e.exit_code() as u8)
        .unwrap_or(3)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

//! `riemann-ssvep`: synthetic data generation, training, evaluation,
//! estimator benchmarking and tangent-space embedding from the command line.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use riemann_ssvep::estimators::EstimatorSpec;
use riemann_ssvep::manifold::MeanConfig;
use riemann_ssvep::preprocessing::BandParams;
use riemann_ssvep::{Error, ErrorKind};

#[derive(Debug, Parser)]
#[command(name = "riemann-ssvep", version, about)]
pub struct Cli {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Output directory (created; must be empty unless --force).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Allow writing into a non-empty output directory.
    #[arg(long, global = true)]
    pub force: bool,
    /// Worker threads; all cores when omitted. Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic SSVEP dataset.
    Gen(GenArgs),
    /// Fit class centers and save a model.
    Train(TrainArgs),
    /// Compare offline, latency-trimmed, online and curve-gated online accuracy.
    Eval(EvalArgs),
    /// Bootstrap comparison of covariance estimators over trial lengths.
    Bench(BenchArgs),
    /// Two-dimensional tangent-space embedding of trial covariances.
    Embed(EmbedArgs),
    /// Riemannian potato outlier rejection.
    Potato(PotatoArgs),
}

fn parse_estimator(s: &str) -> Result<EstimatorSpec, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Debug, Clone, Args)]
pub struct BandArgs {
    /// Half width of every pass band in Hz.
    #[arg(long, default_value_t = 1.0)]
    pub half_bandwidth: f64,
    /// Overall Butterworth band-pass order (even).
    #[arg(long, default_value_t = 8)]
    pub order: usize,
}

impl BandArgs {
    pub fn band(&self) -> BandParams {
        BandParams {
            half_bandwidth: self.half_bandwidth,
            order: self.order,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct MeanArgs {
    /// Riemannian mean stopping tolerance.
    #[arg(long, default_value_t = 1e-8)]
    pub mean_tolerance: f64,
    /// Riemannian mean iteration limit.
    #[arg(long, default_value_t = 50)]
    pub mean_iterations: usize,
}

impl MeanArgs {
    pub fn mean(&self) -> MeanConfig {
        MeanConfig {
            tolerance: self.mean_tolerance,
            max_iterations: self.mean_iterations,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct CovArgs {
    /// Covariance estimator: scm, nscm, ledoit, blankertz, schafer, fixed-point.
    #[arg(long, default_value = "schafer", value_parser = parse_estimator)]
    pub estimator: EstimatorSpec,
    /// Seconds dropped after each cue onset.
    #[arg(long, default_value_t = 0.0)]
    pub latency: f64,
    /// Seconds kept after the latency trim (whole remainder when omitted).
    #[arg(long)]
    pub duration: Option<f64>,
    #[command(flatten)]
    pub band: BandArgs,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, default_value_t = 8)]
    pub channels: usize,
    #[arg(long, default_value_t = 256.0)]
    pub sample_rate: f64,
    /// Stimulus frequencies in Hz; one class each plus a resting class.
    #[arg(long, value_delimiter = ',', default_value = "13,17,21")]
    pub stim_freqs: Vec<f64>,
    #[arg(long, default_value_t = 6.0)]
    pub trial_seconds: f64,
    #[arg(long, default_value_t = 8)]
    pub trials_per_class: usize,
    #[arg(long, default_value_t = -5.0, allow_negative_numbers = true)]
    pub snr_db: f64,
    #[arg(long, default_value_t = 1)]
    pub harmonics: usize,
    /// Seconds of the previous trial's response leaking into each trial.
    #[arg(long, default_value_t = 0.0)]
    pub carryover: f64,
    /// Recording session of the subject fixed by --seed.
    #[arg(long, default_value_t = 0)]
    pub session: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// EEGSET dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub cov: CovArgs,
    #[command(flatten)]
    pub mean: MeanArgs,
    /// Drop training trials whose potato z-score exceeds this value.
    #[arg(long)]
    pub potato_z: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Model file written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    /// EEGSET dataset to evaluate on.
    #[arg(long)]
    pub data: PathBuf,
    /// Training dataset used to refit the latency-trimmed model; the
    /// evaluation set itself when omitted.
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Latency of the trimmed offline variant.
    #[arg(long, default_value_t = 2.0)]
    pub opt_latency: f64,
    #[arg(long, default_value_t = 3.6)]
    pub window: f64,
    #[arg(long, default_value_t = 0.2)]
    pub step: f64,
    /// Number of consecutive epochs considered per decision.
    #[arg(long, default_value_t = 5)]
    pub depth: usize,
    /// Occurrence threshold for online decisions.
    #[arg(long, default_value_t = 0.7)]
    pub theta: f64,
    #[command(flatten)]
    pub mean: MeanArgs,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// EEGSET dataset; a default synthetic set generated from --seed when omitted.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', value_parser = parse_estimator,
          default_value = "scm,nscm,ledoit,blankertz,schafer,fixed-point")]
    pub estimators: Vec<EstimatorSpec>,
    /// Trial lengths in seconds.
    #[arg(long, value_delimiter = ',', default_value = "0.5,1,1.5,2,2.5,3,3.5,4,4.5,5")]
    pub lengths: Vec<f64>,
    #[arg(long, default_value_t = 1000)]
    pub replications: usize,
    /// Seconds skipped before each crop.
    #[arg(long, default_value_t = 0.0)]
    pub latency: f64,
    /// Iteration cap of the fixed-point estimator.
    #[arg(long, default_value_t = 100)]
    pub fixed_point_iterations: usize,
    /// Relative stopping tolerance of the fixed-point estimator.
    #[arg(long, default_value_t = 1e-6)]
    pub fixed_point_tolerance: f64,
    #[command(flatten)]
    pub band: BandArgs,
    #[command(flatten)]
    pub mean: MeanArgs,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Model whose preprocessing is reused and whose centers are overlaid.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[command(flatten)]
    pub cov: CovArgs,
    #[command(flatten)]
    pub mean: MeanArgs,
    /// Also embed the trials kept by a potato filter at this z threshold.
    #[arg(long)]
    pub potato_z: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PotatoArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub cov: CovArgs,
    #[command(flatten)]
    pub mean: MeanArgs,
    #[arg(long, default_value_t = 2.5)]
    pub z: f64,
}

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Validation => 2,
        ErrorKind::NonConvergence => 3,
        ErrorKind::Io => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

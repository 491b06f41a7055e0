use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "evae",
    version,
    about = "Epanechnikov VAE: training, evaluation, sampling and kernel lab"
)]
pub struct Cli {
    /// Log progress at info level (RUST_LOG overrides).
    #[arg(long, short, global = true)]
    pub verbose: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a VAE or EVAE; writes a checkpoint, loss curves and a manifest.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the hold-out split of a dataset.
    Eval(EvalArgs),
    /// Kernel and divergence experiments written as CSV.
    #[command(subcommand)]
    Lab(LabCommand),
    /// Decode prior draws scaled by B into an image grid.
    Sample(SampleArgs),
}

/// Model flags; each overrides the matching key of `--config`.
#[derive(Debug, Clone, Default, Args)]
pub struct ModelFlags {
    /// vae or evae
    #[arg(long)]
    pub model: Option<String>,
    /// uniform or gaussian
    #[arg(long)]
    pub prior: Option<String>,
    /// Support length B of the prior.
    #[arg(long = "B")]
    pub support: Option<f64>,
    /// Step size b(m) of the resampling step.
    #[arg(long)]
    pub bm: Option<f64>,
    /// Latent dimension.
    #[arg(long)]
    pub dz: Option<usize>,
    /// Minibatch size.
    #[arg(long = "M")]
    pub minibatch: Option<usize>,
    /// Reparametrization draws per image.
    #[arg(long = "L")]
    pub samples: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Comma-separated hidden layer sizes, e.g. 512,256.
    #[arg(long)]
    pub hidden: Option<String>,
    /// bernoulli or gaussian
    #[arg(long)]
    pub recon: Option<String>,
}

impl ModelFlags {
    /// `(key, value)` pairs for the flags that were given.
    pub fn overrides(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        let mut put = |k: &'static str, v: Option<String>| {
            if let Some(v) = v {
                out.push((k, v));
            }
        };
        put("model", self.model.clone());
        put("prior", self.prior.clone());
        put("B", self.support.map(|v| format!("{v:?}")));
        put("bm", self.bm.map(|v| format!("{v:?}")));
        put("dz", self.dz.map(|v| v.to_string()));
        put("M", self.minibatch.map(|v| v.to_string()));
        put("L", self.samples.map(|v| v.to_string()));
        put("epochs", self.epochs.map(|v| v.to_string()));
        put("lr", self.lr.map(|v| format!("{v:?}")));
        put("hidden", self.hidden.clone());
        put("recon", self.recon.clone());
        out
    }
}

/// Dataset selection shared by train and eval.
#[derive(Debug, Clone, Default, Args)]
pub struct DataFlags {
    /// idx:<images file> or synth:<two-blob|bars>
    #[arg(long)]
    pub data: Option<String>,
    /// Number of synthetic images.
    #[arg(long)]
    pub n: Option<usize>,
    /// Side length of synthetic images.
    #[arg(long)]
    pub hw: Option<usize>,
    /// Seed of the synthetic generator.
    #[arg(long = "data-seed")]
    pub data_seed: Option<u64>,
    /// Images held out for validation (taken from the end of the dataset).
    #[arg(long)]
    pub valid: Option<usize>,
}

impl DataFlags {
    pub fn overrides(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        if let Some(v) = &self.data {
            out.push(("data", v.clone()));
        }
        if let Some(v) = self.n {
            out.push(("n", v.to_string()));
        }
        if let Some(v) = self.hw {
            out.push(("hw", v.to_string()));
        }
        if let Some(v) = self.data_seed {
            out.push(("data_seed", v.to_string()));
        }
        if let Some(v) = self.valid {
            out.push(("valid", v.to_string()));
        }
        out
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub model: ModelFlags,
    #[command(flatten)]
    pub data: DataFlags,
    #[arg(long)]
    pub seed: Option<u64>,
    /// key=value file; flags win over its entries.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataFlags,
    /// Expected latent dimension; a mismatch with the checkpoint is an error.
    #[arg(long)]
    pub dz: Option<usize>,
    /// Seed of the evaluation noise (defaults to the training seed).
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Support length used to scale the prior draws (defaults to the trained B).
    #[arg(long = "B")]
    pub support: Option<f64>,
    #[arg(long, default_value_t = 16)]
    pub count: i64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum LabCommand {
    /// I(K) and J(K) of one kernel.
    Ik(IkArgs),
    /// I(K) over the variance-matched candidate family.
    Lemma1(Lemma1Args),
    /// Replications of the weighted integrated squared KDE error T_m.
    Tm(TmArgs),
    /// Monte Carlo KL and chi-square of the EVAE posterior against the uniform prior.
    Bound(BoundArgs),
}

#[derive(Debug, Args)]
pub struct IkArgs {
    /// epanechnikov, gaussian, uniform, quartic or tabulated:<file>
    #[arg(long, default_value = "epanechnikov")]
    pub kernel: String,
    #[arg(long, default_value_t = 1.0)]
    pub r: f64,
    #[arg(long, default_value_t = 0.0)]
    pub mu: f64,
    /// Simpson points (odd, at least 1001).
    #[arg(long, default_value_t = 4001)]
    pub points: usize,
    /// Directory for ik.csv; stdout only when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct Lemma1Args {
    #[arg(long, default_value_t = 1.0)]
    pub r: f64,
    #[arg(long, default_value_t = 0.0)]
    pub mu: f64,
    #[arg(long, default_value_t = 4001)]
    pub points: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TmArgs {
    #[arg(long, default_value_t = 10_000)]
    pub m: usize,
    /// Bandwidth exponent, b = m^-gamma, strictly inside (2/9, 1/4).
    #[arg(long, default_value_t = 0.23)]
    pub gamma: f64,
    /// uniform01, triangular or tabulated:<file>
    #[arg(long, default_value = "uniform01")]
    pub density: String,
    #[arg(long, default_value = "epanechnikov")]
    pub kernel: String,
    #[arg(long, default_value_t = 1.0)]
    pub r: f64,
    #[arg(long, default_value_t = 0.25)]
    pub lo: f64,
    #[arg(long, default_value_t = 0.75)]
    pub hi: f64,
    /// Height of the weight on [lo, hi].
    #[arg(long, default_value_t = 1.0)]
    pub level: f64,
    #[arg(long, default_value_t = 200)]
    pub replications: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BoundArgs {
    #[arg(long, default_value_t = 0.0)]
    pub mu: f64,
    #[arg(long, default_value_t = 1.0)]
    pub r: f64,
    #[arg(long = "B", default_value_t = 1.0)]
    pub support: f64,
    /// Step size b(m); defaults to 100^(-2/9).
    #[arg(long)]
    pub bm: Option<f64>,
    /// Sample size n of the closed-form cap 3B/(5nr).
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long = "n-mc", default_value_t = 100_000)]
    pub n_mc: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

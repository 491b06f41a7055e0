use std::fmt;

use crate::error::{Error, Result};
use crate::numeric::AdamState;
use crate::sampling::{default_step_size, Prior, SamplerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    /// Gaussian posterior and prior.
    Vae,
    /// Epanechnikov kernel posterior with the resampling step.
    Evae,
}

impl ModelKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "vae" => Ok(ModelKind::Vae),
            "evae" => Ok(ModelKind::Evae),
            other => Err(Error::config(format!("unknown model '{other}' (expected vae or evae)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Vae => "vae",
            ModelKind::Evae => "evae",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReconModel {
    /// Binary cross entropy, summed.
    Bernoulli,
    /// Squared error between the sigmoid output and the image, summed.
    Gaussian,
}

impl ReconModel {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "bernoulli" => Ok(ReconModel::Bernoulli),
            "gaussian" => Ok(ReconModel::Gaussian),
            other => Err(Error::config(format!(
                "unknown reconstruction model '{other}' (expected bernoulli or gaussian)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ReconModel::Bernoulli => "bernoulli",
            ReconModel::Gaussian => "gaussian",
        }
    }
}

/// Latent sizes used by the reference experiments. Other sizes are
/// accepted (small toy models use them) but logged.
pub const STANDARD_LATENT_DIMS: [usize; 4] = [8, 16, 32, 64];

/// Floor added after the softplus producing the spread `r`.
pub const SPREAD_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct EvaeConfig {
    pub model: ModelKind,
    pub latent_dim: usize,
    pub pixels: usize,
    pub hidden: Vec<usize>,
    /// Minibatch size `M`; also the `n` of the penalty.
    pub minibatch: usize,
    /// Support length `B`.
    pub support: f64,
    /// Step size `b(m)`.
    pub b_m: f64,
    /// Reparametrization draws `L` per data point.
    pub samples: usize,
    pub prior: Prior,
    pub recon: ReconModel,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for EvaeConfig {
    fn default() -> Self {
        EvaeConfig {
            model: ModelKind::Evae,
            latent_dim: 16,
            pixels: 784,
            hidden: vec![512, 256],
            minibatch: 100,
            support: 0.1,
            b_m: default_step_size(),
            samples: 1,
            prior: Prior::Uniform,
            recon: ReconModel::Bernoulli,
            epochs: 10,
            lr: AdamState::DEFAULT_LR,
            seed: 0,
        }
    }
}

/// Keys understood by [`EvaeConfig::set`], in the order [`EvaeConfig::to_kv`] writes them.
pub const CONFIG_KEYS: [&str; 13] = [
    "model", "dz", "pixels", "hidden", "M", "B", "bm", "L", "prior", "recon", "epochs", "lr", "seed",
];

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::config(format!("invalid value '{value}' for key '{key}'")))
}

impl EvaeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(Error::config("latent dimension must be positive"));
        }
        if !STANDARD_LATENT_DIMS.contains(&self.latent_dim) {
            log::debug!(
                "latent dimension {} is outside the standard set {STANDARD_LATENT_DIMS:?}",
                self.latent_dim
            );
        }
        if self.pixels == 0 {
            return Err(Error::config("pixel count must be positive"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::config("hidden layer sizes must be positive"));
        }
        if self.minibatch == 0 {
            return Err(Error::config("minibatch size M must be positive"));
        }
        if self.samples == 0 {
            return Err(Error::config("L must be at least 1"));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::config(format!(
                "learning rate must be nonnegative, got {}",
                self.lr
            )));
        }
        self.sampler_config().validate()
    }

    pub fn sampler_config(&self) -> SamplerConfig {
        SamplerConfig {
            b_m: self.b_m,
            support: self.support,
            prior: self.prior,
            seed: self.seed,
        }
    }

    /// Sets one key. Unknown keys are a config error naming the valid ones.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "model" => self.model = ModelKind::parse(v)?,
            "dz" => self.latent_dim = parse_num(key, v)?,
            "pixels" => self.pixels = parse_num(key, v)?,
            "hidden" => {
                self.hidden = if v.is_empty() {
                    Vec::new()
                } else {
                    v.split(',').map(|h| parse_num(key, h)).collect::<Result<_>>()?
                }
            }
            "M" => self.minibatch = parse_num(key, v)?,
            "B" => self.support = parse_num(key, v)?,
            "bm" => self.b_m = parse_num(key, v)?,
            "L" => self.samples = parse_num(key, v)?,
            "prior" => self.prior = Prior::parse(v)?,
            "recon" => self.recon = ReconModel::parse(v)?,
            "epochs" => self.epochs = parse_num(key, v)?,
            "lr" => self.lr = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            other => {
                return Err(Error::config(format!(
                    "unknown config key '{other}'; valid keys: {}",
                    CONFIG_KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    pub fn to_kv(&self) -> Vec<(&'static str, String)> {
        let hidden: Vec<String> = self.hidden.iter().map(usize::to_string).collect();
        vec![
            ("model", self.model.name().to_string()),
            ("dz", self.latent_dim.to_string()),
            ("pixels", self.pixels.to_string()),
            ("hidden", hidden.join(",")),
            ("M", self.minibatch.to_string()),
            ("B", format!("{:?}", self.support)),
            ("bm", format!("{:?}", self.b_m)),
            ("L", self.samples.to_string()),
            ("prior", self.prior.name().to_string()),
            ("recon", self.recon.name().to_string()),
            ("epochs", self.epochs.to_string()),
            ("lr", format!("{:?}", self.lr)),
            ("seed", self.seed.to_string()),
        ]
    }

    /// `key=value` lines; `#` starts a comment.
    pub fn to_kv_text(&self) -> String {
        self.to_kv().iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn apply_kv_text(&mut self, text: &str) -> Result<()> {
        for (k, v) in parse_kv_text(text)? {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    pub fn from_kv_text(text: &str) -> Result<Self> {
        let mut cfg = EvaeConfig::default();
        cfg.apply_kv_text(text)?;
        Ok(cfg)
    }
}

/// Splits `key=value` lines, skipping blanks and `#` comments.
pub fn parse_kv_text(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::config(format!("line {}: expected key=value, got '{line}'", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_round_trip() {
        let cfg = EvaeConfig {
            model: ModelKind::Vae,
            hidden: vec![7, 3],
            support: 0.3,
            b_m: 0.1 + 0.2,
            seed: 42,
            ..Default::default()
        };
        assert_eq!(EvaeConfig::from_kv_text(&cfg.to_kv_text()).unwrap(), cfg);
    }

    #[test]
    fn unknown_key_lists_valid_keys() {
        let err = EvaeConfig::from_kv_text("beta=2\n").unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Config(_)));
        assert!(msg.contains("epochs") && msg.contains("bm"), "{msg}");
    }

    #[test]
    fn comments_and_blank_lines() {
        let cfg = EvaeConfig::from_kv_text("# header\n\nB = 10 # large\nL=2\n").unwrap();
        assert_eq!(cfg.support, 10.0);
        assert_eq!(cfg.samples, 2);
    }

    #[test]
    fn validation() {
        assert!(EvaeConfig::default().validate().is_ok());
        assert!(EvaeConfig {
            samples: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(EvaeConfig {
            support: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(EvaeConfig {
            latent_dim: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}

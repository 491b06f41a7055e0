//! Stochastic machinery: the median-of-three Epanechnikov sampler, the
//! minibatch resampling step of the Epanechnikov posterior, Gaussian
//! reparametrization and prior sampling for unconditional generation.
//!
//! All randomness comes from explicit [`RngStream`]s. A stream is identified
//! by a seed and a stream id, so per-batch or per-replication generators are
//! reproducible regardless of how work is scheduled.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::numeric::{Graph, Tensor, Var};

pub type RngStream = ChaCha8Rng;

/// Independent generator for `(seed, stream)`.
pub fn rng_stream(seed: u64, stream: u64) -> RngStream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// `b(100) = 100^(-2/9)`, the fixed step size used for every run.
pub fn default_step_size() -> f64 {
    100f64.powf(-2.0 / 9.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Prior {
    /// `Unif[-B/2, B/2]`
    Uniform,
    /// `B * N(0, 1)`; keeps the support parameter in front of a Gaussian.
    Gaussian,
}

impl Prior {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Prior::Uniform),
            "gaussian" => Ok(Prior::Gaussian),
            other => Err(Error::config(format!(
                "unknown prior '{other}' (expected uniform or gaussian)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Prior::Uniform => "uniform",
            Prior::Gaussian => "gaussian",
        }
    }
}

impl fmt::Display for Prior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig {
    /// Step size `b(m)` scaling the kernel perturbation.
    pub b_m: f64,
    /// Support length `B` of the prior.
    pub support: f64,
    pub prior: Prior,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            b_m: default_step_size(),
            support: 0.1,
            prior: Prior::Uniform,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        // b_m = 0 is allowed as the degenerate prior-only case
        if !(self.b_m >= 0.0) || !self.b_m.is_finite() {
            return Err(Error::config(format!(
                "step size b_m must be nonnegative, got {}",
                self.b_m
            )));
        }
        if !(self.support > 0.0) || !self.support.is_finite() {
            return Err(Error::config(format!(
                "support length B must be positive, got {}",
                self.support
            )));
        }
        Ok(())
    }
}

/// Test hooks that pin a noise source to a constant.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NoiseHooks {
    /// Replaces the standard Epanechnikov draws `K`.
    pub kernel: Option<f64>,
    /// Replaces the prior draws `U`.
    pub prior: Option<f64>,
    /// Replaces the standard normal draws `eps`.
    pub gaussian: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Posterior,
    Prior,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentBatch {
    pub values: Tensor,
    pub provenance: Provenance,
}

/// Median of three `Unif[-1, 1]` draws; distributed with density
/// `3/4 (1 - t²)` on `[-1, 1]`.
pub fn sample_std_epanechnikov(rng: &mut impl Rng, count: usize) -> Vec<f64> {
    (0..count).map(|_| std_epanechnikov(rng)).collect()
}

fn std_epanechnikov(rng: &mut impl Rng) -> f64 {
    let a = rng.gen_range(-1.0..=1.0);
    let b = rng.gen_range(-1.0..=1.0);
    let c = rng.gen_range(-1.0..=1.0);
    // median without sorting
    f64::max(f64::min(a, b), f64::min(f64::max(a, b), c))
}

/// Anything that maps a `[n, d_z]` latent batch to `[n, pixels]` images.
pub trait Decoder {
    fn latent_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn decode_latents(&self, z: &Tensor) -> Result<Tensor>;
}

#[derive(Debug, Clone, Default)]
pub struct Sampler {
    pub config: SamplerConfig,
    pub hooks: NoiseHooks,
}

fn check_positive(g: &Graph, r: Var) -> Result<()> {
    if let Some(v) = g.value(r)?.data().iter().find(|&&v| !(v > 0.0)) {
        return Err(Error::domain(format!("spread r must be positive, found {v}")));
    }
    Ok(())
}

impl Sampler {
    pub fn new(config: SamplerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Sampler {
            config,
            hooks: NoiseHooks::default(),
        })
    }

    pub fn with_hooks(mut self, hooks: NoiseHooks) -> Self {
        self.hooks = hooks;
        self
    }

    fn noise(shape: &[usize], forced: Option<f64>, mut draw: impl FnMut() -> f64) -> Tensor {
        let n = shape.iter().product();
        let data = match forced {
            Some(v) => vec![v; n],
            None => (0..n).map(|_| draw()).collect(),
        };
        Tensor::from_parts_unchecked(shape.to_vec(), data)
    }

    pub fn kernel_noise(&self, rng: &mut impl Rng, shape: &[usize]) -> Tensor {
        Self::noise(shape, self.hooks.kernel, || std_epanechnikov(rng))
    }

    /// Prior draws `U`: `Unif[-B/2, B/2]` or `B * N(0, 1)`.
    pub fn prior_noise(&self, rng: &mut impl Rng, shape: &[usize]) -> Tensor {
        let b = self.config.support;
        match self.config.prior {
            Prior::Uniform => Self::noise(shape, self.hooks.prior, || b * (rng.gen::<f64>() - 0.5)),
            Prior::Gaussian => Self::noise(shape, self.hooks.prior, || b * rng.sample::<f64, _>(StandardNormal)),
        }
    }

    pub fn gaussian_noise(&self, rng: &mut impl Rng, shape: &[usize]) -> Tensor {
        Self::noise(shape, self.hooks.gaussian, || rng.sample(StandardNormal))
    }

    /// `mu + r * k` with `k` standard Epanechnikov noise. Gradients reach
    /// `mu` and `r`; the noise is a constant of the graph.
    pub fn reparam_epanechnikov(&self, g: &mut Graph, mu: Var, r: Var, rng: &mut impl Rng) -> Result<Var> {
        check_positive(g, r)?;
        let shape = g.value(mu)?.shape().to_vec();
        if g.value(r)?.shape() != shape.as_slice() {
            return Err(Error::dim("mu and r shapes differ"));
        }
        let k = g.constant(self.kernel_noise(rng, &shape));
        let rk = g.mul(r, k)?;
        g.add(mu, rk)
    }

    /// Resampling step of a minibatch: `b_m * (mu + r * K) + U`.
    pub fn resample_minibatch(&self, g: &mut Graph, mu: Var, r: Var, rng: &mut impl Rng) -> Result<Var> {
        check_positive(g, r)?;
        let shape = g.value(mu)?.shape().to_vec();
        if g.value(r)?.shape() != shape.as_slice() {
            return Err(Error::dim("mu and r shapes differ"));
        }
        let u = g.constant(self.prior_noise(rng, &shape));
        let z = self.reparam_epanechnikov(g, mu, r, rng)?;
        let scaled = g.scale(z, self.config.b_m)?;
        g.add(scaled, u)
    }

    /// `mu + exp(logvar / 2) * eps`.
    pub fn reparam_gaussian(&self, g: &mut Graph, mu: Var, logvar: Var, rng: &mut impl Rng) -> Result<Var> {
        let shape = g.value(mu)?.shape().to_vec();
        if g.value(logvar)?.shape() != shape.as_slice() {
            return Err(Error::dim("mu and logvar shapes differ"));
        }
        let eps = g.constant(self.gaussian_noise(rng, &shape));
        let half = g.scale(logvar, 0.5)?;
        let std = g.exp(half)?;
        let noise = g.mul(std, eps)?;
        g.add(mu, noise)
    }

    /// Value-only version of [`Sampler::reparam_epanechnikov`].
    pub fn reparam_epanechnikov_values(&self, mu: &Tensor, r: &Tensor, rng: &mut impl Rng) -> Result<Tensor> {
        let mut g = Graph::new();
        let (m, s) = (g.constant(mu.clone()), g.constant(r.clone()));
        let z = self.reparam_epanechnikov(&mut g, m, s, rng)?;
        Ok(g.value(z)?.clone())
    }

    /// Value-only version of [`Sampler::resample_minibatch`].
    pub fn resample_minibatch_values(&self, mu: &Tensor, r: &Tensor, rng: &mut impl Rng) -> Result<LatentBatch> {
        let mut g = Graph::new();
        let (m, s) = (g.constant(mu.clone()), g.constant(r.clone()));
        let z = self.resample_minibatch(&mut g, m, s, rng)?;
        Ok(LatentBatch {
            values: g.value(z)?.clone(),
            provenance: Provenance::Posterior,
        })
    }

    /// Value-only version of [`Sampler::reparam_gaussian`].
    pub fn reparam_gaussian_values(&self, mu: &Tensor, logvar: &Tensor, rng: &mut impl Rng) -> Result<Tensor> {
        let mut g = Graph::new();
        let (m, l) = (g.constant(mu.clone()), g.constant(logvar.clone()));
        let z = self.reparam_gaussian(&mut g, m, l, rng)?;
        Ok(g.value(z)?.clone())
    }

    /// Unit-scale prior draws multiplied by `B`. The unit uniform prior is
    /// `Unif[-1/2, 1/2]`, so the result has the same law as the `U` term of
    /// the resampling step.
    pub fn sample_prior(&self, rng: &mut impl Rng, count: usize, latent_dim: usize) -> LatentBatch {
        let unit = match self.config.prior {
            Prior::Uniform => Self::noise(&[count, latent_dim], self.hooks.prior, || rng.gen::<f64>() - 0.5),
            Prior::Gaussian => Self::noise(&[count, latent_dim], self.hooks.prior, || rng.sample(StandardNormal)),
        };
        LatentBatch {
            values: unit.map(|v| v * self.config.support),
            provenance: Provenance::Prior,
        }
    }

    /// Decodes `count` prior draws scaled by `B`.
    pub fn sample_unconditional(&self, decoder: &impl Decoder, count: usize, rng: &mut impl Rng) -> Result<Tensor> {
        let pixels = decoder.output_dim();
        if count == 0 {
            return Ok(Tensor::from_parts_unchecked(vec![0, pixels], Vec::new()));
        }
        let z = self.sample_prior(rng, count, decoder.latent_dim());
        let images = decoder.decode_latents(&z.values)?;
        if images.shape() != [count, pixels] {
            return Err(Error::dim(format!(
                "decoder returned shape {:?}, expected [{count}, {pixels}]",
                images.shape()
            )));
        }
        Ok(images)
    }
}

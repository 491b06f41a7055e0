//! Encoder/decoder networks and the two training objectives.
//!
//! Both models share the same MLP trunk: `pixels -> hidden... -> (mu, s)`
//! for the encoder and the mirror image ending in a sigmoid for the decoder.
//! For the VAE `s` is the log variance; for the EVAE it is passed through
//! `softplus(s) + 1e-3` to give the spread `r`.

mod checkpoint;
mod config;
mod train;

use rand::Rng;

use crate::divergences::{evae_penalty_graph, kl_gaussian_graph};
use crate::error::{Error, Result};
use crate::numeric::{affine_forward, sigmoid, softplus, AdamState, Graph, Tensor, Var};
use crate::sampling::{rng_stream, Decoder, NoiseHooks, Sampler};

pub use checkpoint::{CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{parse_kv_text, EvaeConfig, ModelKind, ReconModel, CONFIG_KEYS, SPREAD_FLOOR, STANDARD_LATENT_DIMS};
pub use train::{train, train_from, write_loss_csv, EpochLoss, Split, TrainReport};

/// Stream of the seed used to initialize parameters.
pub const INIT_STREAM: u64 = 0;

/// Encoder heads for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    pub mu: Tensor,
    /// Spread `r` (EVAE) or log variance (VAE).
    pub spread: Tensor,
    pub model: ModelKind,
}

/// Loss terms summed over the batch. `divergence` is the Gaussian KL for
/// the VAE and the spread penalty for the EVAE.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValues {
    pub total: f64,
    pub recon: f64,
    pub divergence: f64,
}

/// Test hooks for the loss functions.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossHooks {
    pub noise: NoiseHooks,
    /// Replaces the decoder output (probabilities) in the reconstruction term.
    pub forced_reconstruction: Option<Tensor>,
}

/// Parameters, configuration and optimizer state of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub config: EvaeConfig,
    names: Vec<String>,
    params: Vec<Tensor>,
    pub adam: AdamState,
}

struct LossVars {
    total: Var,
    recon: Var,
    divergence: Var,
}

fn layer_shapes(cfg: &EvaeConfig) -> Vec<(String, Vec<usize>)> {
    let mut out = Vec::new();
    let mut push = |name: String, fan_in: usize, fan_out: usize| {
        out.push((format!("{name}.w"), vec![fan_in, fan_out]));
        out.push((format!("{name}.b"), vec![fan_out]));
    };
    let mut width = cfg.pixels;
    for (i, &h) in cfg.hidden.iter().enumerate() {
        push(format!("enc{i}"), width, h);
        width = h;
    }
    push("mu".into(), width, cfg.latent_dim);
    push("spread".into(), width, cfg.latent_dim);
    let mut width = cfg.latent_dim;
    for (i, &h) in cfg.hidden.iter().rev().enumerate() {
        push(format!("dec{i}"), width, h);
        width = h;
    }
    push("out".into(), width, cfg.pixels);
    out
}

fn check_pixels(x: &Tensor, pixels: usize) -> Result<usize> {
    let (rows, cols) = x.dims2()?;
    if cols != pixels {
        return Err(Error::dim(format!(
            "batch has {cols} pixels per image, model expects {pixels}"
        )));
    }
    if let Some(v) = x.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Validation(format!("pixel value {v} outside [0, 1]")));
    }
    Ok(rows)
}

/// Keeps decoder probabilities strictly inside `(0, 1)`.
fn open_unit(p: f64) -> f64 {
    p.clamp(1e-15, 1.0 - 1e-15)
}

impl ModelState {
    /// Fresh model: weights uniform in `±1/sqrt(fan_in)`, zero biases.
    pub fn new(config: EvaeConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_stream(config.seed, INIT_STREAM);
        let mut names = Vec::new();
        let mut params = Vec::new();
        for (name, shape) in layer_shapes(&config) {
            let t = if shape.len() == 2 {
                let bound = 1.0 / (shape[0] as f64).sqrt();
                let data = (0..shape[0] * shape[1]).map(|_| rng.gen_range(-bound..bound)).collect();
                Tensor::new(shape, data)?
            } else {
                Tensor::zeros(shape)
            };
            names.push(name);
            params.push(t);
        }
        let n = params.iter().map(Tensor::len).sum();
        let adam = AdamState::new(n, config.lr);
        Ok(ModelState {
            config,
            names,
            params,
            adam,
        })
    }

    /// Rebuilds a state from named tensors, checking them against the layout.
    pub fn from_named(config: EvaeConfig, named: Vec<(String, Tensor)>) -> Result<Self> {
        config.validate()?;
        let layout = layer_shapes(&config);
        if layout.len() != named.len() {
            return Err(Error::Validation(format!(
                "expected {} parameter tensors, found {}",
                layout.len(),
                named.len()
            )));
        }
        for ((name, shape), (got_name, t)) in layout.iter().zip(&named) {
            if name != got_name || shape.as_slice() != t.shape() {
                return Err(Error::Validation(format!(
                    "parameter '{got_name}' with shape {:?} does not match '{name}' {shape:?}",
                    t.shape()
                )));
            }
        }
        let (names, params): (Vec<_>, Vec<_>) = named.into_iter().unzip();
        let n = params.iter().map(Tensor::len).sum();
        let adam = AdamState::new(n, config.lr);
        Ok(ModelState {
            config,
            names,
            params,
            adam,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.params[i])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(move |i| &mut self.params[i])
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.params.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::dim(format!(
                "got {} values for {} parameters",
                flat.len(),
                self.num_params()
            )));
        }
        let mut offset = 0;
        for t in &mut self.params {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    fn sampler(&self, hooks: NoiseHooks) -> Result<Sampler> {
        Ok(Sampler::new(self.config.sampler_config())?.with_hooks(hooks))
    }

    fn layer(&self, i: usize) -> (&Tensor, &Tensor) {
        (&self.params[2 * i], &self.params[2 * i + 1])
    }

    fn depth(&self) -> usize {
        self.config.hidden.len()
    }

    /// Encoder heads for a batch of images in `[0, 1]`.
    pub fn encode(&self, x: &Tensor) -> Result<EncoderOutput> {
        check_pixels(x, self.config.pixels)?;
        let mut h = x.clone();
        for i in 0..self.depth() {
            let (w, b) = self.layer(i);
            h = affine_forward(&h, w, b)?.map(|v| v.max(0.0));
        }
        let (w, b) = self.layer(self.depth());
        let mu = affine_forward(&h, w, b)?;
        let (w, b) = self.layer(self.depth() + 1);
        let raw = affine_forward(&h, w, b)?;
        let spread = match self.config.model {
            ModelKind::Evae => raw.map(|v| softplus(v) + SPREAD_FLOOR),
            ModelKind::Vae => raw,
        };
        Ok(EncoderOutput {
            mu,
            spread,
            model: self.config.model,
        })
    }

    /// Decoder probabilities in `(0, 1)` for a batch of latents.
    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        let (_, d) = z.dims2()?;
        if d != self.config.latent_dim {
            return Err(Error::dim(format!(
                "latent batch has {d} columns, model expects {}",
                self.config.latent_dim
            )));
        }
        let base = self.depth() + 2;
        let mut h = z.clone();
        for i in 0..self.depth() {
            let (w, b) = self.layer(base + i);
            h = affine_forward(&h, w, b)?.map(|v| v.max(0.0));
        }
        let (w, b) = self.layer(base + self.depth());
        Ok(affine_forward(&h, w, b)?.map(|v| open_unit(sigmoid(v))))
    }

    /// Encodes, draws one posterior latent per image and decodes.
    pub fn reconstruct(&self, x: &Tensor, rng: &mut impl Rng) -> Result<Tensor> {
        let enc = self.encode(x)?;
        let sampler = self.sampler(NoiseHooks::default())?;
        let z = match self.config.model {
            ModelKind::Evae => sampler.resample_minibatch_values(&enc.mu, &enc.spread, rng)?.values,
            ModelKind::Vae => sampler.reparam_gaussian_values(&enc.mu, &enc.spread, rng)?,
        };
        self.decode(&z)
    }

    fn bind(&self, g: &mut Graph) -> Vec<Var> {
        self.params.iter().map(|t| g.param(t)).collect()
    }

    fn encode_graph(&self, g: &mut Graph, vars: &[Var], x: Var) -> Result<(Var, Var)> {
        let mut h = x;
        for i in 0..self.depth() {
            let a = g.affine(h, vars[2 * i], vars[2 * i + 1])?;
            h = g.relu(a)?;
        }
        let d = self.depth();
        let mu = g.affine(h, vars[2 * d], vars[2 * d + 1])?;
        let raw = g.affine(h, vars[2 * d + 2], vars[2 * d + 3])?;
        let spread = match self.config.model {
            ModelKind::Evae => {
                let s = g.softplus(raw)?;
                g.add_scalar(s, SPREAD_FLOOR)?
            }
            ModelKind::Vae => raw,
        };
        Ok((mu, spread))
    }

    fn decode_logits_graph(&self, g: &mut Graph, vars: &[Var], z: Var) -> Result<Var> {
        let base = 2 * (self.depth() + 2);
        let mut h = z;
        for i in 0..self.depth() {
            let a = g.affine(h, vars[base + 2 * i], vars[base + 2 * i + 1])?;
            h = g.relu(a)?;
        }
        let last = base + 2 * self.depth();
        g.affine(h, vars[last], vars[last + 1])
    }

    fn recon_graph(&self, g: &mut Graph, vars: &[Var], z: Var, x: Var, hooks: &LossHooks) -> Result<Var> {
        let forced = match &hooks.forced_reconstruction {
            Some(p) => {
                if p.shape() != g.value(x)?.shape() {
                    return Err(Error::dim("forced reconstruction shape differs from the batch"));
                }
                Some(g.constant(p.clone()))
            }
            None => None,
        };
        match self.config.recon {
            ReconModel::Bernoulli => match forced {
                Some(p) => g.bce(p, x),
                None => {
                    let logits = self.decode_logits_graph(g, vars, z)?;
                    g.bce_with_logits(logits, x)
                }
            },
            ReconModel::Gaussian => {
                let p = match forced {
                    Some(p) => p,
                    None => {
                        let logits = self.decode_logits_graph(g, vars, z)?;
                        g.sigmoid(logits)?
                    }
                };
                let d = g.sub(p, x)?;
                let sq = g.mul(d, d)?;
                g.sum(sq)
            }
        }
    }

    fn loss_graph(
        &self,
        g: &mut Graph,
        vars: &[Var],
        x: &Tensor,
        rng: &mut impl Rng,
        hooks: &LossHooks,
    ) -> Result<LossVars> {
        check_pixels(x, self.config.pixels)?;
        let sampler = self.sampler(hooks.noise)?;
        let xv = g.constant(x.clone());
        let (mu, spread) = self.encode_graph(g, vars, xv)?;
        match self.config.model {
            ModelKind::Vae => {
                let z = sampler.reparam_gaussian(g, mu, spread, rng)?;
                let recon = self.recon_graph(g, vars, z, xv, hooks)?;
                let divergence = kl_gaussian_graph(g, mu, spread)?;
                let total = g.add(recon, divergence)?;
                Ok(LossVars {
                    total,
                    recon,
                    divergence,
                })
            }
            ModelKind::Evae => {
                let draws = self.config.samples;
                let mut recon = None;
                for _ in 0..draws {
                    let z = sampler.resample_minibatch(g, mu, spread, rng)?;
                    let r = self.recon_graph(g, vars, z, xv, hooks)?;
                    recon = Some(match recon {
                        None => r,
                        Some(acc) => g.add(acc, r)?,
                    });
                }
                let summed = recon.expect("at least one draw");
                let recon = if draws == 1 {
                    summed
                } else {
                    g.scale(summed, 1.0 / draws as f64)?
                };
                let divergence = evae_penalty_graph(g, spread, self.config.support, self.config.minibatch)?;
                let total = g.add(recon, divergence)?;
                Ok(LossVars {
                    total,
                    recon,
                    divergence,
                })
            }
        }
    }

    fn values(g: &Graph, l: &LossVars) -> Result<LossValues> {
        Ok(LossValues {
            total: g.value(l.total)?.data()[0],
            recon: g.value(l.recon)?.data()[0],
            divergence: g.value(l.divergence)?.data()[0],
        })
    }

    /// Loss of one batch; noise comes from `rng`.
    pub fn loss(&self, x: &Tensor, rng: &mut impl Rng) -> Result<LossValues> {
        self.loss_with_hooks(x, rng, &LossHooks::default())
    }

    pub fn loss_with_hooks(&self, x: &Tensor, rng: &mut impl Rng, hooks: &LossHooks) -> Result<LossValues> {
        let mut g = Graph::new();
        let vars: Vec<Var> = self.params.iter().map(|t| g.constant(t.clone())).collect();
        let l = self.loss_graph(&mut g, &vars, x, rng, hooks)?;
        Self::values(&g, &l)
    }

    /// Loss of one batch and the gradient of its total with respect to
    /// every parameter, flattened in parameter order.
    pub fn loss_and_gradient(&self, x: &Tensor, rng: &mut impl Rng) -> Result<(LossValues, Vec<f64>)> {
        let (values, grads) = self.loss_and_gradients(x, rng, &LossHooks::default())?;
        Ok((values, grads.into_iter().flatten().collect()))
    }

    fn loss_and_gradients(
        &self,
        x: &Tensor,
        rng: &mut impl Rng,
        hooks: &LossHooks,
    ) -> Result<(LossValues, Vec<Vec<f64>>)> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g);
        let l = self.loss_graph(&mut g, &vars, x, rng, hooks)?;
        let values = Self::values(&g, &l)?;
        let grads = g.backward(l.total)?;
        let per_param = vars
            .iter()
            .map(|&v| grads.get(v).map(<[f64]>::to_vec))
            .collect::<Result<_>>()?;
        Ok((values, per_param))
    }

    /// One Adam step on a batch; returns the loss before the step.
    pub fn step(&mut self, x: &Tensor, rng: &mut impl Rng) -> Result<LossValues> {
        let (values, grads) = self.loss_and_gradients(x, rng, &LossHooks::default())?;
        for (p, g) in self.params.iter_mut().zip(grads) {
            p.set_grad(g)?;
        }
        self.adam.lr = self.config.lr;
        self.adam.update_tensors(&mut self.params)?;
        for p in &mut self.params {
            p.clear_grad();
        }
        Ok(values)
    }
}

/// Gaussian VAE objective: summed reconstruction error plus Gaussian KL.
pub fn loss_vae(x: &Tensor, state: &ModelState, rng: &mut impl Rng) -> Result<LossValues> {
    if state.config.model != ModelKind::Vae {
        return Err(Error::config("loss_vae called on an EVAE state"));
    }
    state.loss(x, rng)
}

/// EVAE objective: reconstruction error averaged over `L` resampled latents
/// plus `3B/(5M) Σ 1/r`, summed over the batch. `cfg` must match the state.
pub fn loss_evae(x: &Tensor, state: &ModelState, cfg: &EvaeConfig, rng: &mut impl Rng) -> Result<LossValues> {
    if state.config.model != ModelKind::Evae || cfg.model != ModelKind::Evae {
        return Err(Error::config("loss_evae needs an EVAE state and config"));
    }
    if cfg.latent_dim != state.config.latent_dim
        || cfg.pixels != state.config.pixels
        || cfg.hidden != state.config.hidden
    {
        return Err(Error::Validation("config does not match the model state".into()));
    }
    let mut view = state.clone();
    view.config = cfg.clone();
    view.loss(x, rng)
}

impl Decoder for ModelState {
    fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    fn output_dim(&self) -> usize {
        self.config.pixels
    }

    fn decode_latents(&self, z: &Tensor) -> Result<Tensor> {
        self.decode(z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::divergences::kl_gaussian;
    use crate::numeric::finite_diff_check;

    fn toy(model: ModelKind) -> EvaeConfig {
        EvaeConfig {
            model,
            latent_dim: 2,
            pixels: 4,
            hidden: vec![5, 3],
            minibatch: 2,
            support: 0.5,
            ..Default::default()
        }
    }

    fn batch() -> Tensor {
        Tensor::from_rows(&[vec![0.1, 0.9, 0.5, 0.0], vec![1.0, 0.3, 0.7, 0.2]]).unwrap()
    }

    fn zero_heads(state: &mut ModelState) {
        for name in ["mu.w", "mu.b", "spread.w", "spread.b"] {
            state.param_mut(name).unwrap().data_mut().fill(0.0);
        }
    }

    #[test]
    fn zero_heads_give_mu_zero_and_floor_spread() {
        let mut s = ModelState::new(toy(ModelKind::Evae)).unwrap();
        zero_heads(&mut s);
        let out = s.encode(&batch()).unwrap();
        assert!(out.mu.data().iter().all(|&v| v == 0.0));
        for &r in out.spread.data() {
            assert!((r - (2f64.ln() + 1e-3)).abs() < 1e-15);
            assert!((r - 0.6941).abs() < 1e-4);
        }
    }

    #[test]
    fn encode_shapes_and_identical_rows() {
        let s = ModelState::new(toy(ModelKind::Evae)).unwrap();
        let x = Tensor::from_rows(&[vec![0.2; 4], vec![0.2; 4], vec![0.9; 4]]).unwrap();
        let out = s.encode(&x).unwrap();
        assert_eq!(out.mu.shape(), [3, 2]);
        assert_eq!(out.spread.shape(), [3, 2]);
        assert_eq!(out.mu.row(0), out.mu.row(1));
        assert_eq!(out.spread.row(0), out.spread.row(1));
    }

    #[test]
    fn encode_rejects_out_of_range_pixels() {
        let s = ModelState::new(toy(ModelKind::Vae)).unwrap();
        let x = Tensor::from_rows(&[vec![0.2, 1.5, 0.0, 0.0]]).unwrap();
        assert!(matches!(s.encode(&x), Err(Error::Validation(_))));
    }

    #[test]
    fn decode_contract() {
        let mut s = ModelState::new(toy(ModelKind::Evae)).unwrap();
        let z = Tensor::from_rows(&[vec![0.3, -2.0], vec![5.0, 1.0]]).unwrap();
        let a = s.decode(&z).unwrap();
        assert_eq!(a.shape(), [2, 4]);
        assert!(a.data().iter().all(|&p| p > 0.0 && p < 1.0));
        assert_eq!(a, s.decode(&z).unwrap());
        s.param_mut("out.w").unwrap().data_mut().fill(0.0);
        assert!(s.decode(&z).unwrap().data().iter().all(|&p| p == 0.5));
        assert!(matches!(s.decode(&Tensor::zeros(vec![1, 3])), Err(Error::Dimension(_))));
    }

    #[test]
    fn forced_reconstruction_bce() {
        let s = ModelState::new(EvaeConfig {
            minibatch: 1,
            ..toy(ModelKind::Vae)
        })
        .unwrap();
        let x = Tensor::full(vec![1, 4], 0.5);
        let hooks = LossHooks {
            forced_reconstruction: Some(x.clone()),
            ..Default::default()
        };
        let l = s.loss_with_hooks(&x, &mut rng_stream(0, 1), &hooks).unwrap();
        assert!((l.recon - 4.0 * 2f64.ln()).abs() < 1e-12);
        assert!((l.recon - 2.7726).abs() < 1e-4);
    }

    #[test]
    fn vae_kl_delegates_exactly() {
        let s = ModelState::new(toy(ModelKind::Vae)).unwrap();
        let x = batch();
        let enc = s.encode(&x).unwrap();
        let l = s.loss(&x, &mut rng_stream(1, 1)).unwrap();
        assert_eq!(l.divergence, kl_gaussian(enc.mu.data(), enc.spread.data()).unwrap());
        assert_eq!(l.total, l.recon + l.divergence);
    }

    #[test]
    fn vae_zero_heads_have_zero_kl() {
        let mut s = ModelState::new(toy(ModelKind::Vae)).unwrap();
        zero_heads(&mut s);
        let l = s.loss(&batch(), &mut rng_stream(1, 1)).unwrap();
        assert_eq!(l.divergence, 0.0);
        assert_eq!(l.total, l.recon);
    }

    #[test]
    fn evae_b_zero_limit_is_penalty_free() {
        // B must stay positive for the sampler, so check the penalty scales to 0 linearly
        let x = batch();
        let small = ModelState::new(EvaeConfig {
            support: 1e-12,
            ..toy(ModelKind::Evae)
        })
        .unwrap();
        let l = small.loss(&x, &mut rng_stream(2, 1)).unwrap();
        assert!(l.divergence < 1e-10);
        assert!((l.total - l.recon).abs() < 1e-10);
    }

    #[test]
    fn evae_penalty_at_spread_floor() {
        let cfg = EvaeConfig {
            latent_dim: 64,
            pixels: 4,
            hidden: vec![3],
            minibatch: 100,
            support: 0.1,
            ..Default::default()
        };
        let mut s = ModelState::new(cfg).unwrap();
        zero_heads(&mut s);
        // softplus(-1e3) underflows to 0, leaving r at the floor
        s.param_mut("spread.b").unwrap().data_mut().fill(-1e3);
        let x = Tensor::full(vec![1, 4], 0.3);
        let l = s.loss(&x, &mut rng_stream(3, 1)).unwrap();
        assert!((l.divergence - 38.4).abs() < 1e-9, "{}", l.divergence);
    }

    #[test]
    fn evae_total_at_least_recon() {
        for seed in 0..5 {
            let s = ModelState::new(EvaeConfig {
                seed,
                ..toy(ModelKind::Evae)
            })
            .unwrap();
            let l = s.loss(&batch(), &mut rng_stream(seed, 1)).unwrap();
            assert!(l.total >= l.recon);
        }
    }

    #[test]
    fn loss_evae_checks_config() {
        let s = ModelState::new(toy(ModelKind::Evae)).unwrap();
        let cfg = EvaeConfig {
            latent_dim: 3,
            ..toy(ModelKind::Evae)
        };
        assert!(loss_evae(&batch(), &s, &cfg, &mut rng_stream(0, 1)).is_err());
        assert!(loss_vae(&batch(), &s, &mut rng_stream(0, 1)).is_err());
        let doubled = EvaeConfig {
            support: 1.0,
            ..toy(ModelKind::Evae)
        };
        let a = loss_evae(&batch(), &s, &s.config, &mut rng_stream(0, 1)).unwrap();
        let b = loss_evae(&batch(), &s, &doubled, &mut rng_stream(0, 1)).unwrap();
        assert!((b.divergence - 2.0 * a.divergence).abs() < 1e-12);
    }

    /// Random parameters including biases: with zero biases a dead hidden
    /// layer leaves the next pre-activation exactly on the ReLU kink.
    fn gradient_error(cfg: EvaeConfig, noise_seed: u64) -> f64 {
        let mut state = ModelState::new(cfg).unwrap();
        let mut rng = rng_stream(noise_seed, 7);
        let p: Vec<f64> = (0..state.num_params()).map(|_| rng.gen_range(-0.8..0.8)).collect();
        state.set_flat_params(&p).unwrap();
        let x = batch();
        let f = |p: &[f64]| {
            let mut s = state.clone();
            s.set_flat_params(p)?;
            let (l, g) = s.loss_and_gradient(&x, &mut rng_stream(noise_seed, 1))?;
            Ok((l.total, g))
        };
        finite_diff_check(f, &state.flat_params(), 1e-6).unwrap()
    }

    #[test]
    fn full_loss_gradients_match_finite_differences() {
        for seed in 0..3 {
            for model in [ModelKind::Vae, ModelKind::Evae] {
                let err = gradient_error(EvaeConfig { seed, ..toy(model) }, seed + 10);
                assert!(err < 1e-4, "{model} seed {seed}: {err}");
            }
        }
        let gauss = EvaeConfig {
            recon: ReconModel::Gaussian,
            samples: 3,
            ..toy(ModelKind::Evae)
        };
        assert!(gradient_error(gauss, 4) < 1e-4);
    }

    #[test]
    fn penalty_gradient_does_not_reach_mu_head() {
        let cfg = EvaeConfig {
            b_m: 0.0,
            ..toy(ModelKind::Evae)
        };
        let s = ModelState::new(cfg).unwrap();
        let (_, grads) = s
            .loss_and_gradients(&batch(), &mut rng_stream(5, 1), &LossHooks::default())
            .unwrap();
        let mu_w = s.names().iter().position(|n| n == "mu.w").unwrap();
        let mu_b = s.names().iter().position(|n| n == "mu.b").unwrap();
        // with b_m = 0 the latent ignores mu, and the penalty never sees it
        assert!(grads[mu_w].iter().chain(&grads[mu_b]).all(|&g| g == 0.0));
    }

    #[test]
    fn mu_gradient_scales_with_step_size() {
        let grad_norm = |b_m: f64| {
            let s = ModelState::new(EvaeConfig {
                b_m,
                ..toy(ModelKind::Evae)
            })
            .unwrap();
            let hooks = LossHooks {
                noise: NoiseHooks {
                    kernel: Some(0.2),
                    prior: Some(0.01),
                    gaussian: None,
                },
                ..Default::default()
            };
            let (_, grads) = s.loss_and_gradients(&batch(), &mut rng_stream(0, 1), &hooks).unwrap();
            let i = s.names().iter().position(|n| n == "mu.b").unwrap();
            grads[i].iter().map(|g| g * g).sum::<f64>().sqrt()
        };
        let (a, b) = (grad_norm(1e-4), grad_norm(2e-4));
        assert!(a > 0.0);
        assert!((b / a - 2.0).abs() < 1e-3, "{}", b / a);
    }

    #[test]
    fn adam_step_with_zero_lr_keeps_params() {
        let mut s = ModelState::new(EvaeConfig {
            lr: 0.0,
            ..toy(ModelKind::Evae)
        })
        .unwrap();
        let before = s.flat_params();
        s.step(&batch(), &mut rng_stream(0, 1)).unwrap();
        assert_eq!(before, s.flat_params());
    }

    #[test]
    fn from_named_rejects_wrong_layout() {
        let s = ModelState::new(toy(ModelKind::Vae)).unwrap();
        let named: Vec<(String, Tensor)> = s.names().iter().cloned().zip(s.params().iter().cloned()).collect();
        assert!(ModelState::from_named(s.config.clone(), named.clone()).is_ok());
        let other = EvaeConfig {
            latent_dim: 3,
            ..s.config.clone()
        };
        assert!(matches!(
            ModelState::from_named(other, named),
            Err(Error::Validation(_))
        ));
    }
}

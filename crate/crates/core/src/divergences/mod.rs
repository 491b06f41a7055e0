//! Divergence-side quantities.
//!
//! Closed-form Gaussian KL for the baseline, Monte Carlo KL and chi-square
//! estimators, the Epanechnikov penalty `3B/(5M) Σ 1/r_k`, the check that
//! the chi-square bound dominates KL for the Epanechnikov posterior, and the
//! integrated squared KDE error statistic in [`tm`].

pub mod tm;

use std::io::Write;

use rand::Rng;

use crate::error::{Error, Result};
use crate::kernels::standard_epanechnikov_cdf;
use crate::numeric::{Graph, Tensor, Var};
use crate::sampling::{Prior, Sampler, SamplerConfig};

pub use tm::{simulate_tm, Density, TmResult, TmSpec, Weight};

/// `KL(N(mu, diag(exp(logvar))) || N(0, I)) = Σ (mu² + σ² - 1 - log σ²) / 2`.
pub fn kl_gaussian(mu: &[f64], logvar: &[f64]) -> Result<f64> {
    if mu.len() != logvar.len() {
        return Err(Error::dim("mu and logvar lengths differ"));
    }
    if mu.iter().chain(logvar).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite input to kl_gaussian".into()));
    }
    // same operation order as kl_gaussian_graph so both agree bit for bit
    Ok(mu
        .iter()
        .zip(logvar)
        .map(|(&m, &lv)| ((m * m + lv.exp()) - 1.0 - lv) * 0.5)
        .sum())
}

/// Graph version of [`kl_gaussian`], summed over every element.
pub fn kl_gaussian_graph(g: &mut Graph, mu: Var, logvar: Var) -> Result<Var> {
    let mu2 = g.mul(mu, mu)?;
    let var = g.exp(logvar)?;
    let a = g.add(mu2, var)?;
    let b = g.add_scalar(a, -1.0)?;
    let c = g.sub(b, logvar)?;
    let half = g.scale(c, 0.5)?;
    g.sum(half)
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub samples: usize,
}

impl McEstimate {
    fn from_terms(terms: &[f64]) -> Self {
        let n = terms.len() as f64;
        let mean = terms.iter().sum::<f64>() / n;
        let var = terms.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        McEstimate {
            estimate: mean,
            std_error: (var / n).sqrt(),
            samples: terms.len(),
        }
    }
}

/// Minimum sample count for the Monte Carlo divergence estimators.
pub const MIN_MC_SAMPLES: usize = 10_000;

/// KL and chi-square estimates computed on one shared stream of draws from `q`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DivergencePair {
    pub kl: McEstimate,
    pub chi_square: McEstimate,
}

impl DivergencePair {
    /// `kl <= chi_square + 3 * combined standard error`.
    pub fn bound_holds(&self) -> bool {
        let se = (self.kl.std_error.powi(2) + self.chi_square.std_error.powi(2)).sqrt();
        self.kl.estimate <= self.chi_square.estimate + 3.0 * se
    }
}

/// Draws `z ~ q` and averages `log(q/p)` (KL) and `q/p - 1` (chi-square,
/// `∫ (q - p)² / p`) over the same draws.
pub fn divergence_pair_mc<R: Rng>(
    mut q_sampler: impl FnMut(&mut R) -> f64,
    q_pdf: impl Fn(f64) -> f64,
    p_pdf: impl Fn(f64) -> f64,
    n_samples: usize,
    rng: &mut R,
) -> Result<DivergencePair> {
    if n_samples < MIN_MC_SAMPLES {
        return Err(Error::domain(format!(
            "need at least {MIN_MC_SAMPLES} samples, got {n_samples}"
        )));
    }
    let mut kl = Vec::with_capacity(n_samples);
    let mut chi = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let z = q_sampler(rng);
        let p = p_pdf(z);
        if !(p > 0.0) {
            return Err(Error::SupportViolation(format!("p vanishes at q-sample {z}")));
        }
        let w = q_pdf(z) / p;
        kl.push(w.ln());
        chi.push(w - 1.0);
    }
    Ok(DivergencePair {
        kl: McEstimate::from_terms(&kl),
        chi_square: McEstimate::from_terms(&chi),
    })
}

/// Monte Carlo estimate of `∫ (q - p)² / p = E_q[q/p] - 1`.
pub fn chi_square_divergence_mc<R: Rng>(
    q_sampler: impl FnMut(&mut R) -> f64,
    q_pdf: impl Fn(f64) -> f64,
    p_pdf: impl Fn(f64) -> f64,
    n_samples: usize,
    rng: &mut R,
) -> Result<McEstimate> {
    divergence_pair_mc(q_sampler, q_pdf, p_pdf, n_samples, rng).map(|d| d.chi_square)
}

/// Monte Carlo estimate of `KL(q || p) = E_q[log(q/p)]`.
pub fn kl_divergence_mc<R: Rng>(
    q_sampler: impl FnMut(&mut R) -> f64,
    q_pdf: impl Fn(f64) -> f64,
    p_pdf: impl Fn(f64) -> f64,
    n_samples: usize,
    rng: &mut R,
) -> Result<McEstimate> {
    divergence_pair_mc(q_sampler, q_pdf, p_pdf, n_samples, rng).map(|d| d.kl)
}

/// Per-row Epanechnikov penalty `3B/(5M) Σ_k 1/r_k` and its batch sum.
#[derive(Debug, Clone, PartialEq)]
pub struct Penalty {
    pub per_row: Vec<f64>,
    pub total: f64,
}

fn penalty_scale(support: f64, minibatch: usize) -> Result<f64> {
    if !(support >= 0.0) {
        return Err(Error::domain(format!(
            "support length B must be nonnegative, got {support}"
        )));
    }
    if minibatch == 0 {
        return Err(Error::domain("minibatch size M must be positive"));
    }
    Ok(3.0 * support / (5.0 * minibatch as f64))
}

pub fn evae_penalty(r: &Tensor, support: f64, minibatch: usize) -> Result<Penalty> {
    let scale = penalty_scale(support, minibatch)?;
    let (rows, _) = r.dims2()?;
    if let Some(v) = r.data().iter().find(|&&v| !(v > 0.0)) {
        return Err(Error::domain(format!("spread r must be positive, found {v}")));
    }
    let per_row: Vec<f64> = (0..rows)
        .map(|i| scale * r.row(i).iter().map(|v| 1.0 / v).sum::<f64>())
        .collect();
    let total = per_row.iter().sum();
    Ok(Penalty { per_row, total })
}

/// Graph version of [`evae_penalty`] returning the batch sum.
pub fn evae_penalty_graph(g: &mut Graph, r: Var, support: f64, minibatch: usize) -> Result<Var> {
    let scale = penalty_scale(support, minibatch)?;
    if let Some(v) = g.value(r)?.data().iter().find(|&&v| !(v > 0.0)) {
        return Err(Error::domain(format!("spread r must be positive, found {v}")));
    }
    let inv = g.recip(r)?;
    let s = g.sum(inv)?;
    g.scale(s, scale)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundChainReport {
    pub kl: McEstimate,
    pub chi_square: McEstimate,
    /// `B * I(K*) / n = 3B / (5 n r)` for one latent dimension.
    pub cap: f64,
    /// Fraction of posterior draws that fell outside the prior support.
    pub outside_mass: f64,
}

impl BoundChainReport {
    pub fn bound_holds(&self) -> bool {
        DivergencePair {
            kl: self.kl,
            chi_square: self.chi_square,
        }
        .bound_holds()
    }

    pub fn write_csv_header(mut w: impl Write) -> Result<()> {
        writeln!(w, "mu,r,B,b_m,n,kl,kl_se,chi2,chi2_se,cap,outside_mass,bound_holds")?;
        Ok(())
    }

    pub fn write_csv_row(&self, mut w: impl Write, mu: f64, r: f64, cfg: &SamplerConfig, n: usize) -> Result<()> {
        writeln!(
            w,
            "{mu},{r},{},{},{n},{:.10},{:.10},{:.10},{:.10},{:.10},{:.6},{}",
            cfg.support,
            cfg.b_m,
            self.kl.estimate,
            self.kl.std_error,
            self.chi_square.estimate,
            self.chi_square.std_error,
            self.cap,
            self.outside_mass,
            self.bound_holds()
        )?;
        Ok(())
    }
}

/// Density of `b_m (mu + r K) + U` with `K` standard Epanechnikov and
/// `U ~ Unif[-B/2, B/2]`.
pub fn evae_posterior_pdf(z: f64, mu: f64, r: f64, b_m: f64, support: f64) -> f64 {
    let half = support / 2.0;
    let scale = b_m * r;
    if scale == 0.0 {
        let c = b_m * mu;
        return if (z - c).abs() <= half { 1.0 / support } else { 0.0 };
    }
    let c = b_m * mu;
    let upper = standard_epanechnikov_cdf((z + half - c) / scale);
    let lower = standard_epanechnikov_cdf((z - half - c) / scale);
    (upper - lower) / support
}

/// Monte Carlo KL and chi-square between the one-dimensional Epanechnikov
/// posterior and the uniform prior, next to the closed-form cap `3B/(5nr)`.
///
/// The posterior leaks past the prior support whenever `b_m r > 0`, where
/// both divergences are infinite. Both integrals are therefore taken over
/// the prior support (weight `1/p` on `supp p`, zero elsewhere); the leaked
/// fraction is reported as `outside_mass`.
pub fn kl_bound_chain_check(
    mu: f64,
    r: f64,
    cfg: &SamplerConfig,
    n: usize,
    n_mc: usize,
    rng: &mut impl Rng,
) -> Result<BoundChainReport> {
    cfg.validate()?;
    if cfg.prior != Prior::Uniform {
        return Err(Error::config("the bound chain check needs the uniform prior"));
    }
    if !(r > 0.0) {
        return Err(Error::domain(format!("spread r must be positive, got {r}")));
    }
    if n == 0 {
        return Err(Error::domain("n must be positive"));
    }
    if n_mc < MIN_MC_SAMPLES {
        return Err(Error::domain(format!(
            "need at least {MIN_MC_SAMPLES} samples, got {n_mc}"
        )));
    }
    let sampler = Sampler::new(*cfg)?;
    let u = sampler.prior_noise(rng, &[n_mc]);
    let k = sampler.kernel_noise(rng, &[n_mc]);
    let b = cfg.support;
    let half = b / 2.0;

    let mut kl_terms = Vec::with_capacity(n_mc);
    let mut chi_terms = Vec::with_capacity(n_mc);
    let mut outside = 0usize;
    for (&u, &k) in u.data().iter().zip(k.data()) {
        let z = cfg.b_m * (mu + r * k) + u;
        if z.abs() > half {
            outside += 1;
            kl_terms.push(0.0);
            // ∫_S (q-p)²/p = E_q[1_S (w - 2)] + 1
            chi_terms.push(1.0);
            continue;
        }
        let w = evae_posterior_pdf(z, mu, r, cfg.b_m, b) * b;
        kl_terms.push(w.max(f64::MIN_POSITIVE).ln());
        chi_terms.push(w - 1.0);
    }
    if outside == n_mc {
        return Err(Error::SupportViolation(
            "no posterior draw landed inside the prior support".into(),
        ));
    }
    Ok(BoundChainReport {
        kl: McEstimate::from_terms(&kl_terms),
        chi_square: McEstimate::from_terms(&chi_terms),
        cap: 3.0 * b / (5.0 * n as f64 * r),
        outside_mass: outside as f64 / n_mc as f64,
    })
}

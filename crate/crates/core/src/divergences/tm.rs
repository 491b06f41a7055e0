//! Weighted integrated squared error of a kernel density estimate,
//! `T_m = m b ∫ (f_m - f)² a`, and its replication study.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernels::{functional_i, simpson, Kernel, KernelFamily, Tabulated};
use crate::sampling::rng_stream;

/// Bandwidth exponents must lie strictly inside this window.
pub const GAMMA_WINDOW: (f64, f64) = (2.0 / 9.0, 0.25);

/// Simpson grid size for the integral over the weight interval.
pub const TM_GRID_POINTS: usize = 2001;

/// Sampling density of the KDE study.
#[derive(Debug, Clone, PartialEq)]
pub enum Density {
    Uniform01,
    /// Law of `(U1 + U2) / 2`: `4t` on `[0, 1/2]`, `4(1 - t)` on `[1/2, 1]`.
    Triangular,
    Tabulated(Tabulated),
}

impl Density {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "uniform01" | "uniform" => Ok(Density::Uniform01),
            "triangular" => Ok(Density::Triangular),
            other => match other.strip_prefix("tabulated:") {
                Some(path) => Ok(Density::Tabulated(Tabulated::load(path)?)),
                None => Err(Error::config(format!(
                    "unknown density '{other}' (expected uniform01, triangular or tabulated:<path>)"
                ))),
            },
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Density::Uniform01 => "uniform01",
            Density::Triangular => "triangular",
            Density::Tabulated(_) => "tabulated",
        }
    }

    pub fn pdf(&self, t: f64) -> f64 {
        match self {
            Density::Uniform01 => {
                if (0.0..=1.0).contains(&t) {
                    1.0
                } else {
                    0.0
                }
            }
            Density::Triangular => {
                if !(0.0..=1.0).contains(&t) {
                    0.0
                } else if t <= 0.5 {
                    4.0 * t
                } else {
                    4.0 * (1.0 - t)
                }
            }
            Density::Tabulated(table) => table.pdf(t),
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        match self {
            Density::Uniform01 => rng.gen::<f64>(),
            Density::Triangular => 0.5 * (rng.gen::<f64>() + rng.gen::<f64>()),
            Density::Tabulated(table) => table.quantile(rng.gen::<f64>()),
        }
    }

    fn support(&self) -> (f64, f64) {
        match self {
            Density::Uniform01 | Density::Triangular => (0.0, 1.0),
            Density::Tabulated(t) => (t.lo(), t.hi()),
        }
    }
}

/// `a(t) = level` on `[lo, hi]`, zero elsewhere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Weight {
    pub lo: f64,
    pub hi: f64,
    pub level: f64,
}

impl Weight {
    pub fn indicator(lo: f64, hi: f64) -> Self {
        Weight { lo, hi, level: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TmSpec {
    pub density: Density,
    pub kernel: Kernel,
    pub m: usize,
    pub gamma: f64,
    pub weight: Weight,
    pub replications: usize,
}

impl TmSpec {
    pub fn validate(&self) -> Result<()> {
        let (glo, ghi) = GAMMA_WINDOW;
        if !(self.gamma > glo && self.gamma < ghi) {
            return Err(Error::config(format!(
                "bandwidth exponent gamma = {} must lie strictly inside ({glo:.6}, {ghi}), \
                 the rate window b(m) = m^-gamma with b(m) = o(m^(-2/9))",
                self.gamma
            )));
        }
        if self.m < 2 {
            return Err(Error::config(format!(
                "sample size m must be at least 2, got {}",
                self.m
            )));
        }
        if self.replications == 0 {
            return Err(Error::config("replications must be positive"));
        }
        let w = self.weight;
        if !(w.lo < w.hi) || !w.lo.is_finite() || !w.hi.is_finite() || !w.level.is_finite() {
            return Err(Error::config(format!("invalid weight interval [{}, {}]", w.lo, w.hi)));
        }
        let (slo, shi) = self.density.support();
        if !(w.lo > slo && w.hi < shi) {
            return Err(Error::config(format!(
                "weight interval [{}, {}] must sit strictly inside the density support [{slo}, {shi}]",
                w.lo, w.hi
            )));
        }
        Ok(())
    }

    pub fn bandwidth(&self) -> f64 {
        (self.m as f64).powf(-self.gamma)
    }

    /// `I(K) ∫ f a`, the centering of `T_m`.
    pub fn limit(&self) -> Result<f64> {
        let i = match self.kernel.i_closed_form() {
            Some(i) => i,
            None => functional_i(&self.kernel, &self.kernel.quadrature())?,
        };
        let w = self.weight;
        let mass = simpson(|t| self.density.pdf(t), w.lo, w.hi, TM_GRID_POINTS);
        Ok(i * w.level * mass)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TmResult {
    pub mean: f64,
    pub std_error: f64,
    pub limit: f64,
    pub bandwidth: f64,
    /// One value per replication, in replication order.
    pub values: Vec<f64>,
}

impl TmResult {
    pub fn relative_error(&self) -> f64 {
        (self.mean - self.limit).abs() / self.limit.abs()
    }

    pub fn write_csv_header(mut w: impl Write) -> Result<()> {
        writeln!(
            w,
            "density,kernel,m,gamma,bandwidth,lo,hi,replications,seed,mean,se,limit"
        )?;
        Ok(())
    }

    pub fn write_csv_row(&self, mut w: impl Write, spec: &TmSpec, seed: u64) -> Result<()> {
        writeln!(
            w,
            "{},{},{},{},{:.10},{},{},{},{seed},{:.10},{:.10},{:.10}",
            spec.density.name(),
            spec.kernel.name(),
            spec.m,
            spec.gamma,
            self.bandwidth,
            spec.weight.lo,
            spec.weight.hi,
            spec.replications,
            self.mean,
            self.std_error,
            self.limit
        )?;
        Ok(())
    }
}

/// Kernel density estimate `f_m(t) = (1/(m b)) Σ K((t - X_i)/b)` evaluated on a grid.
///
/// `sorted` must be ascending. The kernel is used centred at zero.
pub fn kde_on_grid(sorted: &[f64], kernel: &Kernel, bandwidth: f64, grid: &[f64]) -> Vec<f64> {
    let m = sorted.len() as f64;
    if kernel.family() == KernelFamily::Epanechnikov {
        return epanechnikov_kde(sorted, kernel.r(), bandwidth, grid);
    }
    let center = kernel.mu();
    let (slo, shi) = kernel.support();
    grid.iter()
        .map(|&t| {
            // (t - x)/b + center ∈ [slo, shi]
            let from = sorted.partition_point(|&x| x < t - bandwidth * (shi - center));
            let to = sorted.partition_point(|&x| x <= t - bandwidth * (slo - center));
            let s: f64 = sorted[from..to]
                .iter()
                .map(|&x| kernel.pdf(center + (t - x) / bandwidth))
                .sum();
            s / (m * bandwidth)
        })
        .collect()
}

/// Window sums of `1`, `x` and `x²` from prefix sums turn each grid value
/// into `O(log m)` work.
fn epanechnikov_kde(sorted: &[f64], r: f64, bandwidth: f64, grid: &[f64]) -> Vec<f64> {
    let m = sorted.len() as f64;
    let h = bandwidth * r;
    let mut s1 = Vec::with_capacity(sorted.len() + 1);
    let mut s2 = Vec::with_capacity(sorted.len() + 1);
    s1.push(0.0);
    s2.push(0.0);
    let (mut a1, mut a2) = (0.0, 0.0);
    for &x in sorted {
        a1 += x;
        a2 += x * x;
        s1.push(a1);
        s2.push(a2);
    }
    grid.iter()
        .map(|&t| {
            let from = sorted.partition_point(|&x| x < t - h);
            let to = sorted.partition_point(|&x| x <= t + h);
            let n = (to - from) as f64;
            let sx = s1[to] - s1[from];
            let sxx = s2[to] - s2[from];
            // Σ (t - x)² over the window
            let sq = n * t * t - 2.0 * t * sx + sxx;
            let s = 0.75 / r * (n - sq / (h * h));
            (s / (m * bandwidth)).max(0.0)
        })
        .collect()
}

fn one_replication(spec: &TmSpec, seed: u64, index: usize, grid: &[f64]) -> f64 {
    let w = spec.weight;
    if w.level == 0.0 {
        return 0.0;
    }
    let mut rng = rng_stream(seed, index as u64);
    let mut xs: Vec<f64> = (0..spec.m).map(|_| spec.density.sample(&mut rng)).collect();
    xs.sort_by(f64::total_cmp);
    let b = spec.bandwidth();
    let fm = kde_on_grid(&xs, &spec.kernel, b, grid);
    let n = grid.len();
    let step = (w.hi - w.lo) / (n - 1) as f64;
    let mut acc = 0.0;
    for (i, (&t, &f)) in grid.iter().zip(&fm).enumerate() {
        let c = if i == 0 || i == n - 1 {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let d = f - spec.density.pdf(t);
        acc += c * d * d;
    }
    spec.m as f64 * b * w.level * acc * step / 3.0
}

/// Runs `spec.replications` independent replications of `T_m`.
///
/// Replication `j` draws from stream `j` of `seed`, so runs with the same
/// seed and different `m` share their leading draws. Replications run on
/// the rayon pool; the reduction is in replication order.
pub fn simulate_tm(spec: &TmSpec, seed: u64) -> Result<TmResult> {
    spec.validate()?;
    let w = spec.weight;
    let grid: Vec<f64> = (0..TM_GRID_POINTS)
        .map(|i| w.lo + (w.hi - w.lo) * i as f64 / (TM_GRID_POINTS - 1) as f64)
        .collect();
    let values: Vec<f64> = crate::with_thread_pool(|| {
        (0..spec.replications)
            .into_par_iter()
            .map(|j| one_replication(spec, seed, j, &grid))
            .collect()
    });
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite T_m replication value {v}")));
    }
    let (mean, std_error) = crate::stats::mean_and_se(&values);
    Ok(TmResult {
        mean,
        std_error: if std_error.is_nan() { 0.0 } else { std_error },
        limit: spec.limit()?,
        bandwidth: spec.bandwidth(),
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_spec(m: usize, replications: usize) -> TmSpec {
        TmSpec {
            density: Density::Uniform01,
            kernel: Kernel::epanechnikov(0.0, 1.0).unwrap(),
            m,
            gamma: 0.23,
            weight: Weight::indicator(0.25, 0.75),
            replications,
        }
    }

    /// `E T_m` for a uniform density away from the boundary: the estimate
    /// is unbiased there and `Var f_m(t) = (I(K)/b - 1)/m`.
    fn finite_sample_mean(i: f64, b: f64, width: f64) -> f64 {
        (i - b) * width
    }

    #[test]
    fn gamma_window_is_enforced() {
        for gamma in [2.0 / 9.0, 0.25, 0.1, 0.3] {
            let spec = TmSpec {
                gamma,
                ..uniform_spec(1000, 1)
            };
            assert!(matches!(simulate_tm(&spec, 0), Err(Error::Config(_))), "{gamma}");
        }
    }

    #[test]
    fn zero_weight_gives_exact_zero() {
        let spec = TmSpec {
            weight: Weight {
                lo: 0.25,
                hi: 0.75,
                level: 0.0,
            },
            ..uniform_spec(1000, 4)
        };
        let res = simulate_tm(&spec, 1).unwrap();
        assert!(res.values.iter().all(|&v| v == 0.0));
        assert_eq!(res.mean, 0.0);
    }

    #[test]
    fn limit_is_i_times_weighted_mass() {
        let spec = uniform_spec(10_000, 1);
        assert!((spec.limit().unwrap() - 0.3).abs() < 1e-12);
        let tri = TmSpec {
            density: Density::Triangular,
            ..spec
        };
        // ∫_{1/4}^{3/4} f = 3/4 for the triangular density
        assert!((tri.limit().unwrap() - 0.6 * 0.75).abs() < 1e-9);
    }

    #[test]
    fn fast_path_matches_direct_sum() {
        let mut rng = rng_stream(3, 0);
        let mut xs: Vec<f64> = (0..500).map(|_| rng.gen::<f64>()).collect();
        xs.sort_by(f64::total_cmp);
        let grid: Vec<f64> = (0..101).map(|i| i as f64 / 100.0).collect();
        let k = Kernel::epanechnikov(0.0, 1.3).unwrap();
        let b = 0.07;
        let fast = kde_on_grid(&xs, &k, b, &grid);
        for (&t, &f) in grid.iter().zip(&fast) {
            let direct: f64 = xs.iter().map(|&x| k.pdf((t - x) / b)).sum::<f64>() / (500.0 * b);
            assert!((f - direct).abs() < 1e-10, "{t}: {f} vs {direct}");
        }
    }

    #[test]
    fn generic_path_matches_direct_sum() {
        let mut rng = rng_stream(4, 0);
        let mut xs: Vec<f64> = (0..400).map(|_| rng.gen::<f64>()).collect();
        xs.sort_by(f64::total_cmp);
        let grid: Vec<f64> = (0..51).map(|i| 0.2 + 0.6 * i as f64 / 50.0).collect();
        for k in [
            Kernel::quartic(0.0, 1.0).unwrap(),
            Kernel::uniform(0.0, 1.0).unwrap(),
            Kernel::gaussian(0.0, 1.0).unwrap(),
        ] {
            let b = 0.05;
            let est = kde_on_grid(&xs, &k, b, &grid);
            for (&t, &f) in grid.iter().zip(&est) {
                let direct: f64 = xs.iter().map(|&x| k.pdf((t - x) / b)).sum::<f64>() / (400.0 * b);
                assert!((f - direct).abs() < 1e-9, "{}: {f} vs {direct}", k.name());
            }
        }
    }

    #[test]
    fn mean_matches_finite_sample_oracle() {
        let spec = uniform_spec(2_000, 400);
        let res = simulate_tm(&spec, 11).unwrap();
        let expected = finite_sample_mean(0.6, res.bandwidth, 0.5);
        assert!(
            (res.mean - expected).abs() < 4.0 * res.std_error,
            "mean {} expected {expected} se {}",
            res.mean,
            res.std_error
        );
    }

    #[test]
    fn replications_are_deterministic_and_stream_indexed() {
        let spec = uniform_spec(1000, 6);
        let a = simulate_tm(&spec, 5).unwrap();
        let b = simulate_tm(&spec, 5).unwrap();
        assert_eq!(a.values, b.values);
        let fewer = simulate_tm(
            &TmSpec {
                replications: 3,
                ..spec
            },
            5,
        )
        .unwrap();
        assert_eq!(&a.values[..3], &fewer.values[..]);
    }

    #[test]
    fn weight_must_be_interior() {
        let spec = TmSpec {
            weight: Weight::indicator(0.0, 0.5),
            ..uniform_spec(1000, 1)
        };
        assert!(matches!(simulate_tm(&spec, 0), Err(Error::Config(_))));
    }

    #[test]
    fn mean_moves_toward_limit_as_m_grows() {
        let errs: Vec<f64> = [1_000, 10_000, 100_000]
            .iter()
            .map(|&m| {
                let res = simulate_tm(&uniform_spec(m, 40), 21).unwrap();
                (res.mean - res.limit).abs()
            })
            .collect();
        assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
    }
}

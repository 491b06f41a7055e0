//! Kernel densities and the quadratic functionals
//! `I(K) = ∫ K²` and `J(K) = ∫ (∫ K(t + y) K(t) dt)² dy`.
//!
//! Every analytic family is parameterized by a location `mu` and a spread `r`
//! chosen so that the second central moment is `r² / 5`. With that
//! convention `r` is the support half-width of the Epanechnikov kernel and
//! kernels of different families with the same `r` have equal variance,
//! which is the comparison under which Epanechnikov minimizes `I(K)`.

mod quadrature;
mod tabulated;

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;

pub use quadrature::{simpson, QuadratureSpec};
pub use tabulated::Tabulated;

use crate::error::{Error, Result};

/// Infinite-support kernels are cut at this many standard deviations.
pub const GAUSSIAN_TRUNCATION_SIGMAS: f64 = 8.0;

const MOMENT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelFamily {
    Epanechnikov,
    Gaussian,
    Uniform,
    Quartic,
    Tabulated,
}

impl KernelFamily {
    pub fn name(self) -> &'static str {
        match self {
            KernelFamily::Epanechnikov => "epanechnikov",
            KernelFamily::Gaussian => "gaussian",
            KernelFamily::Uniform => "uniform",
            KernelFamily::Quartic => "quartic",
            KernelFamily::Tabulated => "tabulated",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "epanechnikov" | "epa" => KernelFamily::Epanechnikov,
            "gaussian" | "normal" => KernelFamily::Gaussian,
            "uniform" | "box" => KernelFamily::Uniform,
            "quartic" | "biweight" => KernelFamily::Quartic,
            "tabulated" => KernelFamily::Tabulated,
            other => return Err(Error::config(format!("unknown kernel family '{other}'"))),
        })
    }
}

impl fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Shape {
    Epanechnikov,
    Gaussian,
    Uniform,
    Quartic,
    Tabulated(Tabulated),
}

/// A probability density used as a smoothing kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    shape: Shape,
    mu: f64,
    r: f64,
}

/// `3/(4r) (1 - ((t - mu)/r)²)` on `[mu - r, mu + r]`, zero elsewhere.
pub fn epanechnikov_pdf(t: f64, mu: f64, r: f64) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::domain(format!("spread r must be positive, got {r}")));
    }
    Ok(epanechnikov_unchecked(t, mu, r))
}

fn epanechnikov_unchecked(t: f64, mu: f64, r: f64) -> f64 {
    let u = (t - mu) / r;
    if u.abs() <= 1.0 {
        0.75 / r * (1.0 - u * u)
    } else {
        0.0
    }
}

/// CDF of the standard Epanechnikov kernel on `[-1, 1]`.
pub fn standard_epanechnikov_cdf(t: f64) -> f64 {
    if t <= -1.0 {
        0.0
    } else if t >= 1.0 {
        1.0
    } else {
        0.5 + 0.75 * t - 0.25 * t * t * t
    }
}

/// Closed form `I(K*) = 3 / (5r)` for the Epanechnikov kernel.
pub fn epanechnikov_i(r: f64) -> f64 {
    0.6 / r
}

impl Kernel {
    fn analytic(shape: Shape, mu: f64, r: f64) -> Result<Self> {
        if !(r > 0.0) || !r.is_finite() {
            return Err(Error::domain(format!("spread r must be positive, got {r}")));
        }
        if !mu.is_finite() {
            return Err(Error::domain(format!("location must be finite, got {mu}")));
        }
        Ok(Kernel { shape, mu, r })
    }

    pub fn epanechnikov(mu: f64, r: f64) -> Result<Self> {
        Self::analytic(Shape::Epanechnikov, mu, r)
    }

    /// Gaussian with `sigma² = r² / 5`.
    pub fn gaussian(mu: f64, r: f64) -> Result<Self> {
        Self::analytic(Shape::Gaussian, mu, r)
    }

    /// Uniform with half-width `r * sqrt(3/5)`.
    pub fn uniform(mu: f64, r: f64) -> Result<Self> {
        Self::analytic(Shape::Uniform, mu, r)
    }

    /// Biweight `15/(16h) (1 - u²)²` with `h = r * sqrt(7/5)`.
    pub fn quartic(mu: f64, r: f64) -> Result<Self> {
        Self::analytic(Shape::Quartic, mu, r)
    }

    pub fn of_family(family: KernelFamily, mu: f64, r: f64) -> Result<Self> {
        match family {
            KernelFamily::Epanechnikov => Self::epanechnikov(mu, r),
            KernelFamily::Gaussian => Self::gaussian(mu, r),
            KernelFamily::Uniform => Self::uniform(mu, r),
            KernelFamily::Quartic => Self::quartic(mu, r),
            KernelFamily::Tabulated => Err(Error::config("tabulated kernels are built from a table")),
        }
    }

    /// Kernel from a normalized table; `mu` and `r` are its mean and
    /// `sqrt(5 * variance)`.
    pub fn tabulated(table: Tabulated) -> Result<Self> {
        let mean = integrate_piecewise(&table, |t, k| t * k);
        let var = integrate_piecewise(&table, |t, k| (t - mean) * (t - mean) * k);
        if !(var > 0.0) {
            return Err(Error::Validation("tabulated kernel has zero variance".into()));
        }
        Ok(Kernel {
            mu: mean,
            r: (5.0 * var).sqrt(),
            shape: Shape::Tabulated(table),
        })
    }

    pub fn family(&self) -> KernelFamily {
        match self.shape {
            Shape::Epanechnikov => KernelFamily::Epanechnikov,
            Shape::Gaussian => KernelFamily::Gaussian,
            Shape::Uniform => KernelFamily::Uniform,
            Shape::Quartic => KernelFamily::Quartic,
            Shape::Tabulated(_) => KernelFamily::Tabulated,
        }
    }

    pub fn name(&self) -> &'static str {
        self.family().name()
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    fn sigma(&self) -> f64 {
        self.r / 5f64.sqrt()
    }

    fn uniform_half_width(&self) -> f64 {
        self.r * (3.0f64 / 5.0).sqrt()
    }

    fn quartic_bandwidth(&self) -> f64 {
        self.r * (7.0f64 / 5.0).sqrt()
    }

    /// Same kernel moved to a new location.
    pub fn recentered(&self, mu: f64) -> Kernel {
        let mut k = self.clone();
        if let Shape::Tabulated(_) = k.shape {
            // tables carry absolute coordinates; keep them as given
            return k;
        }
        k.mu = mu;
        k
    }

    pub fn pdf(&self, t: f64) -> f64 {
        let mu = self.mu;
        match &self.shape {
            Shape::Epanechnikov => epanechnikov_unchecked(t, mu, self.r),
            Shape::Gaussian => {
                let s = self.sigma();
                let z = (t - mu) / s;
                (-0.5 * z * z).exp() / (s * (2.0 * PI).sqrt())
            }
            Shape::Uniform => {
                let w = self.uniform_half_width();
                if (t - mu).abs() <= w {
                    0.5 / w
                } else {
                    0.0
                }
            }
            Shape::Quartic => {
                let h = self.quartic_bandwidth();
                let u = (t - mu) / h;
                if u.abs() <= 1.0 {
                    let a = 1.0 - u * u;
                    15.0 / (16.0 * h) * a * a
                } else {
                    0.0
                }
            }
            Shape::Tabulated(table) => table.pdf(t),
        }
    }

    /// Interval outside which the density is zero (or below quadrature
    /// resolution for the Gaussian).
    pub fn support(&self) -> (f64, f64) {
        let half = match &self.shape {
            Shape::Epanechnikov => self.r,
            Shape::Gaussian => GAUSSIAN_TRUNCATION_SIGMAS * self.sigma(),
            Shape::Uniform => self.uniform_half_width(),
            Shape::Quartic => self.quartic_bandwidth(),
            Shape::Tabulated(t) => return (t.lo(), t.hi()),
        };
        (self.mu - half, self.mu + half)
    }

    /// Closed-form `I(K)` for the analytic families.
    pub fn i_closed_form(&self) -> Option<f64> {
        match self.shape {
            Shape::Epanechnikov => Some(epanechnikov_i(self.r)),
            Shape::Gaussian => Some(1.0 / (2.0 * self.sigma() * PI.sqrt())),
            Shape::Uniform => Some(0.5 / self.uniform_half_width()),
            Shape::Quartic => Some(5.0 / (7.0 * self.quartic_bandwidth())),
            Shape::Tabulated(_) => None,
        }
    }

    /// Default Simpson grid spanning the support.
    pub fn quadrature(&self) -> QuadratureSpec {
        let (lo, hi) = self.support();
        QuadratureSpec::new(QuadratureSpec::DEFAULT_POINTS, lo, hi).expect("support is a finite interval")
    }

    /// `(mass, mean, second central moment)` by quadrature over the support.
    pub fn moments(&self, points: usize) -> (f64, f64, f64) {
        let (lo, hi) = self.support();
        let mass = simpson(|t| self.pdf(t), lo, hi, points);
        let mean = simpson(|t| t * self.pdf(t), lo, hi, points);
        let var = simpson(|t| (t - mean) * (t - mean) * self.pdf(t), lo, hi, points);
        (mass, mean, var)
    }
}

/// Simpson per table segment, so the kinks at the nodes never sit inside a panel.
fn integrate_piecewise(table: &Tabulated, f: impl Fn(f64, f64) -> f64) -> f64 {
    table
        .grid()
        .windows(2)
        .map(|w| simpson(|t| f(t, table.pdf(t)), w[0], w[1], 5))
        .sum()
}

fn covered_interval(k: &Kernel, q: &QuadratureSpec) -> Result<(f64, f64)> {
    let (lo, hi) = k.support();
    let slack = 1e-12 * (hi - lo).max(1.0);
    if q.lo() > lo + slack || q.hi() < hi - slack {
        return Err(Error::Validation(format!(
            "quadrature interval [{}, {}] does not cover the {} kernel support [{lo}, {hi}]",
            q.lo(),
            q.hi(),
            k.name()
        )));
    }
    Ok((lo, hi))
}

/// `I(K) = ∫ K(t)² dt` by composite Simpson over the kernel support.
pub fn functional_i(k: &Kernel, q: &QuadratureSpec) -> Result<f64> {
    let (lo, hi) = covered_interval(k, q)?;
    Ok(simpson(|t| k.pdf(t).powi(2), lo, hi, q.points()))
}

/// Autocorrelation `∫ K(t + y) K(t) dt`, integrated over the overlap of the
/// two shifted supports so the integrand has no jump.
pub fn autocorrelation(k: &Kernel, y: f64, points: usize) -> f64 {
    let (lo, hi) = k.support();
    let a = lo.max(lo - y);
    let b = hi.min(hi - y);
    simpson(|t| k.pdf(t + y) * k.pdf(t), a, b, points)
}

/// `J(K) = ∫ (∫ K(t + y) K(t) dt)² dy`.
///
/// The autocorrelation is even in `y`, so the outer integral runs over
/// `[0, width]` and is doubled.
pub fn functional_j(k: &Kernel, q: &QuadratureSpec) -> Result<f64> {
    let (lo, hi) = covered_interval(k, q)?;
    let width = hi - lo;
    let half = simpson(|y| autocorrelation(k, y, q.points()).powi(2), 0.0, width, q.points());
    Ok(2.0 * half)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lemma1Row {
    pub kernel: String,
    pub i: f64,
    pub j: f64,
    /// `I(K) - I(epanechnikov)`; zero on the Epanechnikov row.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lemma1Report {
    pub rows: Vec<Lemma1Row>,
    pub argmin: String,
    /// Smallest `I(K) - I(epanechnikov)` over the other candidates
    /// (infinite when Epanechnikov is the only candidate).
    pub margin: f64,
}

impl Lemma1Report {
    /// Writes `kernel,I,J,margin,argmin` rows.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "kernel,I,J,margin,argmin")?;
        for row in &self.rows {
            writeln!(
                w,
                "{},{:.12},{:.12},{:.12},{}",
                row.kernel,
                row.i,
                row.j,
                row.margin,
                row.kernel == self.argmin
            )?;
        }
        Ok(())
    }
}

/// Slack allowed for quadrature error when asserting that the Epanechnikov
/// kernel attains the minimum.
pub const LEMMA1_MARGIN_FLOOR: f64 = -1e-6;

/// Computes `I` and `J` for variance-matched candidates and checks that the
/// Epanechnikov kernel attains the smallest `I`.
///
/// Every candidate must be a density with the first candidate's mean and
/// second moment `r² / 5`; a violating candidate is named in the error.
pub fn verify_lemma1(candidates: &[Kernel], q: &QuadratureSpec) -> Result<Lemma1Report> {
    let first = candidates
        .first()
        .ok_or_else(|| Error::Validation("no candidate kernels".into()))?;
    let (mu, target_var) = (first.mu(), first.r() * first.r() / 5.0);

    let mut rows = Vec::with_capacity(candidates.len());
    for k in candidates {
        let (mass, mean, var) = k.moments(q.points());
        if (mass - 1.0).abs() > MOMENT_TOL || (mean - mu).abs() > MOMENT_TOL || (var - target_var).abs() > MOMENT_TOL {
            return Err(Error::Validation(format!(
                "candidate {} violates the moment constraints: mass {mass}, mean {mean} (want {mu}), second moment {var} (want {target_var})",
                k.name()
            )));
        }
        rows.push(Lemma1Row {
            kernel: k.name().to_string(),
            i: functional_i(k, q)?,
            j: functional_j(k, q)?,
            margin: 0.0,
        });
    }

    let argmin = rows
        .iter()
        .min_by(|a, b| a.i.total_cmp(&b.i))
        .map(|r| r.kernel.clone())
        .expect("at least one candidate");

    let mut margin = f64::INFINITY;
    if let Some(epa_i) = rows
        .iter()
        .find(|r| r.kernel == KernelFamily::Epanechnikov.name())
        .map(|r| r.i)
    {
        for row in rows.iter_mut() {
            row.margin = row.i - epa_i;
            if row.kernel != KernelFamily::Epanechnikov.name() {
                margin = margin.min(row.margin);
            }
        }
        if margin < LEMMA1_MARGIN_FLOOR {
            return Err(Error::Numeric(format!(
                "epanechnikov is not the minimizer of I(K): margin {margin}"
            )));
        }
    }
    Ok(Lemma1Report { rows, argmin, margin })
}

/// The variance-matched family `{epanechnikov, gaussian, uniform, quartic}`.
pub fn default_candidates(mu: f64, r: f64) -> Result<Vec<Kernel>> {
    Ok(vec![
        Kernel::epanechnikov(mu, r)?,
        Kernel::gaussian(mu, r)?,
        Kernel::uniform(mu, r)?,
        Kernel::quartic(mu, r)?,
    ])
}

/// Quadrature interval wide enough for every kernel in `candidates`.
pub fn common_quadrature(candidates: &[Kernel], points: usize) -> Result<QuadratureSpec> {
    let lo = candidates.iter().map(|k| k.support().0).fold(f64::INFINITY, f64::min);
    let hi = candidates
        .iter()
        .map(|k| k.support().1)
        .fold(f64::NEG_INFINITY, f64::max);
    QuadratureSpec::new(points, lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn q(k: &Kernel) -> QuadratureSpec {
        k.quadrature()
    }

    #[test]
    fn epanechnikov_pdf_values() {
        assert_eq!(epanechnikov_pdf(0.0, 0.0, 1.0).unwrap(), 0.75);
        assert_eq!(epanechnikov_pdf(1.0, 0.0, 1.0).unwrap(), 0.0);
        assert!((epanechnikov_pdf(0.5, 0.0, 1.0).unwrap() - 0.5625).abs() < 1e-15);
        assert_eq!(epanechnikov_pdf(2.0, 0.0, 1.0).unwrap(), 0.0);
        assert!(matches!(epanechnikov_pdf(0.0, 0.0, 0.0), Err(Error::Domain(_))));
        assert!(matches!(epanechnikov_pdf(0.0, 0.0, -1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn analytic_kernels_are_variance_matched_densities() {
        for r in [0.3, 1.0, 2.5] {
            for k in default_candidates(0.7, r).unwrap() {
                let (mass, mean, var) = k.moments(QuadratureSpec::DEFAULT_POINTS);
                assert!((mass - 1.0).abs() < 1e-6, "{} mass {mass}", k.name());
                assert!((mean - 0.7).abs() < 1e-6, "{} mean {mean}", k.name());
                assert!((var - r * r / 5.0).abs() < 1e-6, "{} var {var}", k.name());
            }
        }
    }

    #[test]
    fn i_of_epanechnikov() {
        let k1 = Kernel::epanechnikov(0.0, 1.0).unwrap();
        assert!((functional_i(&k1, &q(&k1)).unwrap() - 0.6).abs() < 1e-6);
        let k2 = Kernel::epanechnikov(0.0, 2.0).unwrap();
        assert!((functional_i(&k2, &q(&k2)).unwrap() - 0.3).abs() < 1e-6);
    }

    #[test]
    fn i_of_gaussian_exceeds_epanechnikov() {
        let k = Kernel::gaussian(0.0, 1.0).unwrap();
        let i = functional_i(&k, &q(&k)).unwrap();
        let closed = 1.0 / (2.0 * (0.2f64).sqrt() * PI.sqrt());
        assert!((i - closed).abs() < 1e-6);
        assert!((i - 0.63078).abs() < 1e-5);
        assert!(i > 0.6);
    }

    #[test]
    fn quadrature_must_cover_support() {
        let k = Kernel::epanechnikov(0.0, 1.0).unwrap();
        let narrow = QuadratureSpec::new(1001, -0.5, 0.5).unwrap();
        assert!(matches!(functional_i(&k, &narrow), Err(Error::Validation(_))));
    }

    #[test]
    fn j_of_uniform_is_one_third() {
        // density 1/2 on [-1, 1] has half-width sqrt(3/5) r = 1
        let k = Kernel::uniform(0.0, (5.0f64 / 3.0).sqrt()).unwrap();
        let j = functional_j(&k, &q(&k)).unwrap();
        assert!(((j - 1.0 / 3.0) / (1.0 / 3.0)).abs() < 1e-4, "{j}");
    }

    #[test]
    fn j_of_epanechnikov_matches_exact_value() {
        // symbolic integration of the triangular-free autocorrelation gives 167/385
        let k = Kernel::epanechnikov(0.0, 1.0).unwrap();
        let j = functional_j(&k, &q(&k)).unwrap();
        let exact = 167.0 / 385.0;
        assert!(((j - exact) / exact).abs() < 1e-4, "{j}");
    }

    #[test]
    fn j_of_epanechnikov_matches_monte_carlo() {
        use rand::{Rng, SeedableRng};
        // J = ∫∫∫ K(t+y)K(t)K(s+y)K(s) with t, s ~ K and y ~ Unif[-2, 2]
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let k = Kernel::epanechnikov(0.0, 1.0).unwrap();
        let draw = |rng: &mut rand_chacha::ChaCha8Rng| {
            let mut u = [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ];
            u.sort_by(f64::total_cmp);
            u[1]
        };
        let n = 1_000_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let t = draw(&mut rng);
            let s = draw(&mut rng);
            let y: f64 = rng.gen_range(-2.0..2.0);
            acc += k.pdf(t + y) * k.pdf(s + y);
        }
        let mc = 4.0 * acc / n as f64;
        let j = functional_j(&k, &q(&k)).unwrap();
        assert!(((j - mc) / mc).abs() < 0.01, "quadrature {j} vs monte carlo {mc}");
    }

    #[test]
    fn j_is_positive_for_every_family() {
        for k in default_candidates(0.0, 1.0).unwrap() {
            assert!(functional_j(&k, &q(&k)).unwrap() > 0.0);
        }
    }

    #[test]
    fn lemma1_over_default_family() {
        let cands = default_candidates(0.0, 1.0).unwrap();
        let q = common_quadrature(&cands, QuadratureSpec::DEFAULT_POINTS).unwrap();
        let report = verify_lemma1(&cands, &q).unwrap();
        assert_eq!(report.argmin, "epanechnikov");
        assert!((report.rows[0].i - 0.6).abs() < 1e-6);
        for (row, k) in report.rows.iter().zip(&cands) {
            assert!((row.i - k.i_closed_form().unwrap()).abs() < 1e-6, "{}", row.kernel);
        }
        // the biweight is the closest competitor
        let quartic = 5.0 / (7.0 * (7.0f64 / 5.0).sqrt());
        assert!((report.margin - (quartic - 0.6)).abs() < 1e-6);
    }

    #[test]
    fn lemma1_single_candidate() {
        let cands = vec![Kernel::epanechnikov(1.0, 0.5).unwrap()];
        let report = verify_lemma1(&cands, &cands[0].quadrature()).unwrap();
        assert_eq!(report.argmin, "epanechnikov");
        assert!(report.margin.is_infinite());
    }

    #[test]
    fn lemma1_uniform_candidate_value() {
        let k = Kernel::uniform(0.0, 1.0).unwrap();
        let i = functional_i(&k, &q(&k)).unwrap();
        let expected = 1.0 / (2.0 * (3.0f64 / 5.0).sqrt());
        assert!((i - expected).abs() < 1e-9);
        assert!((i - 0.6455).abs() < 1e-4);
    }

    #[test]
    fn lemma1_rejects_mismatched_moments() {
        let cands = vec![
            Kernel::epanechnikov(0.0, 1.0).unwrap(),
            Kernel::gaussian(0.0, 2.0).unwrap(),
        ];
        let q = common_quadrature(&cands, 4001).unwrap();
        match verify_lemma1(&cands, &q) {
            Err(Error::Validation(msg)) => assert!(msg.contains("gaussian"), "{msg}"),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn lemma1_csv_lists_argmin() {
        let cands = default_candidates(0.0, 1.0).unwrap();
        let q = common_quadrature(&cands, 4001).unwrap();
        let mut out = Vec::new();
        verify_lemma1(&cands, &q).unwrap().write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("kernel,I,J,margin,argmin\n"));
        assert!(text
            .lines()
            .any(|l| l.starts_with("epanechnikov,") && l.ends_with(",true")));
    }

    #[test]
    fn tabulated_kernel_from_epanechnikov_table() {
        let grid: Vec<f64> = (0..=400).map(|i| -1.0 + i as f64 / 200.0).collect();
        let vals: Vec<f64> = grid.iter().map(|&t| epanechnikov_unchecked(t, 0.0, 1.0)).collect();
        // the trapezoid rule undershoots the parabola; rescale to unit mass
        let area: f64 = grid
            .windows(2)
            .zip(vals.windows(2))
            .map(|(g, v)| 0.5 * (v[0] + v[1]) * (g[1] - g[0]))
            .sum();
        let vals = vals.iter().map(|v| v / area).collect();
        let k = Kernel::tabulated(Tabulated::new(grid, vals).unwrap()).unwrap();
        assert_eq!(k.family(), KernelFamily::Tabulated);
        assert!((k.r() - 1.0).abs() < 1e-3);
        let i = functional_i(&k, &k.quadrature()).unwrap();
        assert!((i - 0.6).abs() < 1e-3);
    }

    proptest! {
        #[test]
        fn i_closed_form_over_spreads(r in prop::sample::select(vec![0.1, 0.5, 1.0, 2.0, 10.0])) {
            let k = Kernel::epanechnikov(0.0, r).unwrap();
            prop_assert!((functional_i(&k, &q(&k)).unwrap() - 0.6 / r).abs() < 1e-6);
        }

        #[test]
        fn i_is_location_invariant(mu1 in -5.0f64..5.0, mu2 in -5.0f64..5.0, r in 0.2f64..3.0) {
            for fam in [KernelFamily::Epanechnikov, KernelFamily::Gaussian, KernelFamily::Quartic] {
                let a = Kernel::of_family(fam, mu1, r).unwrap();
                let b = Kernel::of_family(fam, mu2, r).unwrap();
                let ia = functional_i(&a, &q(&a)).unwrap();
                let ib = functional_i(&b, &q(&b)).unwrap();
                prop_assert!((ia - ib).abs() < 1e-9, "{fam}: {ia} vs {ib}");
            }
        }

        #[test]
        fn i_scales_inversely_with_spread(r in 0.2f64..3.0, c in 0.5f64..4.0) {
            for fam in [KernelFamily::Epanechnikov, KernelFamily::Gaussian, KernelFamily::Uniform, KernelFamily::Quartic] {
                let a = Kernel::of_family(fam, 0.0, r).unwrap();
                let b = Kernel::of_family(fam, 0.0, c * r).unwrap();
                let ia = functional_i(&a, &q(&a)).unwrap();
                let ib = functional_i(&b, &q(&b)).unwrap();
                prop_assert!((ib - ia / c).abs() < 1e-6);
            }
        }

        #[test]
        fn epanechnikov_minimizes_i(mu in -3.0f64..3.0, r in 0.2f64..5.0) {
            let cands = default_candidates(mu, r).unwrap();
            let q = common_quadrature(&cands, 2001).unwrap();
            let is: Vec<f64> = cands.iter().map(|k| functional_i(k, &q).unwrap()).collect();
            for i in &is[1..] {
                prop_assert!(is[0] < *i);
            }
        }

        #[test]
        fn densities_are_nonnegative(t in -20.0f64..20.0, mu in -3.0f64..3.0, r in 0.1f64..5.0) {
            for k in default_candidates(mu, r).unwrap() {
                prop_assert!(k.pdf(t) >= 0.0);
            }
        }
    }
}

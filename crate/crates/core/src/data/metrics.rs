use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::ImageDataset;
use crate::error::{Error, Result};

/// Number of PCA components used as features by [`fid_proxy`].
pub const FID_PCA_DIM: usize = 32;
/// Minimum images per set for [`fid_proxy`].
pub const FID_MIN_IMAGES: usize = 50;
const COV_JITTER: f64 = 1e-6;

/// Variance of the valid 3x3 Laplacian response `[[0,1,0],[1,-4,1],[0,1,0]]`
/// of one `h x w` image.
pub fn sharpness_image(img: &[f64], h: usize, w: usize) -> Result<f64> {
    if h < 3 || w < 3 {
        return Err(Error::dim(format!("image {h}x{w} is smaller than the 3x3 filter")));
    }
    if img.len() != h * w {
        return Err(Error::dim(format!("image has {} pixels, expected {h}x{w}", img.len())));
    }
    let mut acts = Vec::with_capacity((h - 2) * (w - 2));
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let c = y * w + x;
            acts.push(img[c - w] + img[c + w] + img[c - 1] + img[c + 1] - 4.0 * img[c]);
        }
    }
    Ok(crate::stats::variance(&acts))
}

/// Mean over images of [`sharpness_image`].
pub fn sharpness(ds: &ImageDataset) -> Result<f64> {
    let mut total = 0.0;
    for i in 0..ds.len() {
        total += sharpness_image(ds.image(i), ds.height(), ds.width())?;
    }
    Ok(total / ds.len() as f64)
}

/// Which images the PCA feature basis is fitted on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PcaFit {
    /// The real set only; the proxy is then asymmetric in its arguments.
    #[default]
    Real,
    /// Both sets pooled; the proxy is symmetric.
    Union,
}

fn as_matrix(ds: &ImageDataset) -> DMatrix<f64> {
    DMatrix::from_row_slice(ds.len(), ds.pixels(), ds.tensor().data())
}

fn column_mean(x: &DMatrix<f64>) -> DVector<f64> {
    let n = x.nrows() as f64;
    DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / n))
}

/// Sample covariance (divisor `n - 1`) of the rows of `x`.
fn covariance(x: &DMatrix<f64>, mean: &DVector<f64>) -> DMatrix<f64> {
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let c = centered.transpose() * &centered / (x.nrows() as f64 - 1.0);
    (&c + c.transpose()) * 0.5
}

/// Top `k` principal directions (as columns) and the mean of `x`.
fn pca_basis(x: &DMatrix<f64>, k: usize) -> (DMatrix<f64>, DVector<f64>) {
    let mean = column_mean(x);
    let cov = covariance(x, &mean);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    // descending eigenvalue, ties by index for a stable basis
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let k = k.min(order.len());
    let mut basis = DMatrix::zeros(x.ncols(), k);
    for (j, &i) in order.iter().take(k).enumerate() {
        let mut v = eig.eigenvectors.column(i).clone_owned();
        // fix the sign so the largest-magnitude entry is positive
        let (imax, _) = v.iter().enumerate().fold(
            (0, 0.0),
            |acc, (i, &e)| if e.abs() > acc.1 { (i, e.abs()) } else { acc },
        );
        if v[imax] < 0.0 {
            v = -v;
        }
        basis.set_column(j, &v);
    }
    (basis, mean)
}

fn project(x: &DMatrix<f64>, basis: &DMatrix<f64>, mean: &DVector<f64>) -> DMatrix<f64> {
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    centered * basis
}

fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

fn is_singular(cov: &DMatrix<f64>) -> bool {
    let eig = SymmetricEigen::new(cov.clone());
    let max = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    min <= 1e-12 * max.max(1e-300)
}

fn frechet(mu1: &DVector<f64>, c1: &DMatrix<f64>, mu2: &DVector<f64>, c2: &DMatrix<f64>) -> f64 {
    let diff = (mu1 - mu2).norm_squared();
    let s = psd_sqrt(c1);
    let inner = &s * c2 * &s;
    let inner = (&inner + inner.transpose()) * 0.5;
    let tr_sqrt: f64 = SymmetricEigen::new(inner)
        .eigenvalues
        .iter()
        .map(|l| l.max(0.0).sqrt())
        .sum();
    (diff + c1.trace() + c2.trace() - 2.0 * tr_sqrt).max(0.0)
}

/// `|mu1 - mu2|² + Tr(C1 + C2 - 2 (C1^{1/2} C2 C1^{1/2})^{1/2})` for
/// row-major `d x d` covariances. Tiny negative results from rounding are
/// clamped to zero.
pub fn frechet_distance(mu1: &[f64], cov1: &[f64], mu2: &[f64], cov2: &[f64]) -> Result<f64> {
    let d = mu1.len();
    if mu2.len() != d || cov1.len() != d * d || cov2.len() != d * d {
        return Err(Error::dim("mean and covariance sizes disagree"));
    }
    let sym = |c: &[f64]| {
        let m = DMatrix::from_row_slice(d, d, c);
        (&m + m.transpose()) * 0.5
    };
    Ok(frechet(
        &DVector::from_column_slice(mu1),
        &sym(cov1),
        &DVector::from_column_slice(mu2),
        &sym(cov2),
    ))
}

/// Fréchet distance between Gaussians fitted to PCA features of two image
/// sets, with the basis fitted on the real set.
pub fn fid_proxy(real: &ImageDataset, fake: &ImageDataset) -> Result<f64> {
    fid_proxy_with(real, fake, PcaFit::Real, FID_PCA_DIM)
}

pub fn fid_proxy_with(real: &ImageDataset, fake: &ImageDataset, fit: PcaFit, k: usize) -> Result<f64> {
    for (name, ds) in [("real", real), ("fake", fake)] {
        if ds.len() < FID_MIN_IMAGES {
            return Err(Error::Validation(format!(
                "{name} set has {} images, the proxy needs at least {FID_MIN_IMAGES}",
                ds.len()
            )));
        }
    }
    if (real.height(), real.width()) != (fake.height(), fake.width()) {
        return Err(Error::dim(format!(
            "image sizes differ: {}x{} vs {}x{}",
            real.height(),
            real.width(),
            fake.height(),
            fake.width()
        )));
    }
    if k == 0 {
        return Err(Error::config("PCA dimension must be positive"));
    }
    let xr = as_matrix(real);
    let xf = as_matrix(fake);
    let (basis, mean) = match fit {
        PcaFit::Real => pca_basis(&xr, k),
        PcaFit::Union => {
            let mut pooled = DMatrix::zeros(xr.nrows() + xf.nrows(), xr.ncols());
            pooled.rows_mut(0, xr.nrows()).copy_from(&xr);
            pooled.rows_mut(xr.nrows(), xf.nrows()).copy_from(&xf);
            pca_basis(&pooled, k)
        }
    };
    let fr = project(&xr, &basis, &mean);
    let ff = project(&xf, &basis, &mean);
    let (mr, mf) = (column_mean(&fr), column_mean(&ff));
    let (mut cr, mut cf) = (covariance(&fr, &mr), covariance(&ff, &mf));
    if is_singular(&cr) || is_singular(&cf) {
        log::warn!("singular feature covariance; adding {COV_JITTER:e} I to both");
        let jitter = DMatrix::identity(cr.nrows(), cr.ncols()) * COV_JITTER;
        cr += &jitter;
        cf += &jitter;
    }
    Ok(frechet(&mr, &cr, &mf, &cf))
}

/// One-sided `P(X >= wins)` for `X ~ Binomial(trials, 1/2)`.
///
/// Up to 120 trials the binomial coefficients are summed exactly in integer
/// arithmetic; beyond that the pmf recurrence runs in log space.
pub fn binomial_test(wins: u64, trials: u64) -> Result<f64> {
    if wins > trials {
        return Err(Error::domain(format!("wins {wins} exceed trials {trials}")));
    }
    if wins == 0 {
        return Ok(1.0);
    }
    if trials <= 120 {
        let mut c: u128 = 1;
        let mut sum: u128 = 0;
        for i in 0..=trials {
            if i >= wins {
                sum += c;
            }
            c = c * (trials - i) as u128 / (i + 1) as u128;
        }
        return Ok(sum as f64 / 2f64.powi(trials as i32));
    }
    let mut log_pmf = trials as f64 * 0.5f64.ln();
    let mut tail = 0.0;
    for i in 0..=trials {
        if i >= wins {
            tail += log_pmf.exp();
        }
        log_pmf += ((trials - i) as f64).ln() - ((i + 1) as f64).ln();
    }
    Ok(tail.min(1.0))
}

/// Evaluation summary for one model on one hold-out set.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub fid_proxy: f64,
    /// Sharpness of the reconstructions.
    pub sharpness: f64,
    /// Sharpness of the real hold-out images, for reference.
    pub real_sharpness: f64,
    /// Per-image reconstruction loss.
    pub recon: f64,
    pub n_images: usize,
    pub config: Vec<(String, String)>,
}

impl MetricReport {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("fid_proxy", self.fid_proxy),
            ("sharpness", self.sharpness),
            ("real_sharpness", self.real_sharpness),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Numeric(format!(
                    "{name} = {v} is not a finite nonnegative value"
                )));
            }
        }
        Ok(())
    }

    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        let keys: Vec<&str> = self.config.iter().map(|(k, _)| k.as_str()).collect();
        let vals: Vec<&str> = self.config.iter().map(|(_, v)| v.as_str()).collect();
        let mut header = vec!["fid_proxy", "sharpness", "real_sharpness", "recon", "n_images"];
        header.extend(keys);
        writeln!(w, "{}", header.join(","))?;
        let mut row = vec![
            format!("{:.10}", self.fid_proxy),
            format!("{:.10}", self.sharpness),
            format!("{:.10}", self.real_sharpness),
            format!("{:.10}", self.recon),
            self.n_images.to_string(),
        ];
        row.extend(vals.iter().map(|v| v.replace(',', ";")));
        writeln!(w, "{}", row.join(","))?;
        Ok(())
    }

    pub fn to_text(&self) -> String {
        format!(
            "images          {}\nfid_proxy       {:.6}\nsharpness       {:.6}\nreal sharpness  {:.6}\nrecon per image {:.6}\n",
            self.n_images, self.fid_proxy, self.sharpness, self.real_sharpness, self.recon
        )
    }
}

//! Image datasets and evaluation metrics.

mod idx;
mod metrics;
mod pgm;
mod synth;

use std::fmt;

use crate::error::{Error, Result};
use crate::numeric::Tensor;

pub use idx::{load_idx, parse_idx_images, parse_idx_labels, write_idx, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
pub use metrics::{
    binomial_test, fid_proxy, fid_proxy_with, frechet_distance, sharpness, sharpness_image, MetricReport, PcaFit,
    FID_MIN_IMAGES, FID_PCA_DIM,
};
pub use pgm::{grid_dims, write_pgm_grid};
pub use synth::{synth_dataset, SynthKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitTag {
    Train,
    Valid,
    Test,
    All,
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitTag::Train => "train",
            SplitTag::Valid => "valid",
            SplitTag::Test => "test",
            SplitTag::All => "all",
        })
    }
}

/// Grayscale images with pixels in `[0, 1]`, stored one image per row.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageDataset {
    images: Tensor,
    height: usize,
    width: usize,
    pub labels: Option<Vec<u8>>,
    pub split: SplitTag,
    pub source: String,
}

impl ImageDataset {
    /// `pixels` holds `count * height * width` values in row-major order.
    pub fn new(pixels: Vec<f64>, count: usize, height: usize, width: usize, source: impl Into<String>) -> Result<Self> {
        if count == 0 {
            return Err(Error::Validation("a dataset needs at least one image".into()));
        }
        if height == 0 || width == 0 {
            return Err(Error::Validation("image dimensions must be positive".into()));
        }
        if let Some(v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Validation(format!("pixel value {v} outside [0, 1]")));
        }
        let images = Tensor::new(vec![count, height * width], pixels)?;
        Ok(ImageDataset {
            images,
            height,
            width,
            labels: None,
            split: SplitTag::All,
            source: source.into(),
        })
    }

    pub fn from_tensor(images: Tensor, height: usize, width: usize, source: impl Into<String>) -> Result<Self> {
        let (count, pixels) = images.dims2()?;
        if pixels != height * width {
            return Err(Error::dim(format!(
                "{pixels} pixels per row, expected {height}x{width}"
            )));
        }
        Self::new(images.into_data(), count, height, width, source)
    }

    pub fn with_labels(mut self, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::Validation(format!(
                "{} labels for {} images",
                labels.len(),
                self.len()
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.images.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn image(&self, i: usize) -> &[f64] {
        self.images.row(i)
    }

    /// Images as a `[N x (H*W)]` tensor.
    pub fn tensor(&self) -> &Tensor {
        &self.images
    }

    /// Images `range.start..range.end`, keeping labels.
    pub fn subset(&self, range: std::ops::Range<usize>, split: SplitTag) -> Result<Self> {
        if range.start >= range.end || range.end > self.len() {
            return Err(Error::Validation(format!(
                "subset {range:?} is empty or exceeds {} images",
                self.len()
            )));
        }
        let p = self.pixels();
        let data = self.images.data()[range.start * p..range.end * p].to_vec();
        let mut out = Self::new(data, range.len(), self.height, self.width, self.source.clone())?;
        out.labels = self.labels.as_ref().map(|l| l[range.clone()].to_vec());
        out.split = split;
        Ok(out)
    }

    /// Last `n_valid` images become the validation split.
    pub fn split_train_valid(&self, n_valid: usize) -> Result<(Self, Self)> {
        if n_valid == 0 || n_valid >= self.len() {
            return Err(Error::config(format!(
                "validation size {n_valid} must be in 1..{}",
                self.len()
            )));
        }
        let cut = self.len() - n_valid;
        Ok((
            self.subset(0..cut, SplitTag::Train)?,
            self.subset(cut..self.len(), SplitTag::Valid)?,
        ))
    }
}

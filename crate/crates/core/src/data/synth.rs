use rand::Rng;

use super::ImageDataset;
use crate::error::{Error, Result};
use crate::sampling::rng_stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthKind {
    /// A Gaussian bump near one of two class positions, class ~ Bernoulli(1/2).
    TwoBlob,
    /// Random full-length horizontal and vertical bars.
    Bars,
}

impl SynthKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "two-blob" | "twoblob" => Ok(SynthKind::TwoBlob),
            "bars" => Ok(SynthKind::Bars),
            other => Err(Error::config(format!(
                "unknown synthetic dataset '{other}' (expected two-blob or bars)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SynthKind::TwoBlob => "two-blob",
            SynthKind::Bars => "bars",
        }
    }
}

fn two_blob(rng: &mut impl Rng, hw: usize, out: &mut Vec<f64>) -> u8 {
    let class = rng.gen_range(0..2u8);
    let s = hw as f64;
    let (cx, cy) = if class == 0 {
        (0.3 * s, 0.35 * s)
    } else {
        (0.7 * s, 0.65 * s)
    };
    let cx = cx + rng.gen_range(-0.08..0.08) * s;
    let cy = cy + rng.gen_range(-0.08..0.08) * s;
    let sigma = rng.gen_range(0.08..0.16) * s;
    let amp = rng.gen_range(0.7..1.0);
    for y in 0..hw {
        for x in 0..hw {
            let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
            out.push((amp * (-d2 / (2.0 * sigma * sigma)).exp()).clamp(0.0, 1.0));
        }
    }
    class
}

fn bars(rng: &mut impl Rng, hw: usize, out: &mut Vec<f64>) -> u8 {
    let start = out.len();
    out.resize(start + hw * hw, 0.0);
    let img = &mut out[start..];
    let horizontal = rng.gen_bool(0.5);
    let count = rng.gen_range(1..=3);
    for _ in 0..count {
        let k = rng.gen_range(0..hw);
        for t in 0..hw {
            let i = if horizontal { k * hw + t } else { t * hw + k };
            img[i] = 1.0;
        }
    }
    horizontal as u8
}

/// Deterministic synthetic images of size `hw x hw`; labels are the class
/// (two-blob) or the bar orientation (bars).
pub fn synth_dataset(kind: SynthKind, n: usize, hw: usize, seed: u64) -> Result<ImageDataset> {
    if hw < 4 {
        return Err(Error::config(format!("synthetic images need hw >= 4, got {hw}")));
    }
    if n == 0 {
        return Err(Error::config("synthetic dataset needs n >= 1"));
    }
    let mut rng = rng_stream(seed, 0);
    let mut pixels = Vec::with_capacity(n * hw * hw);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        labels.push(match kind {
            SynthKind::TwoBlob => two_blob(&mut rng, hw, &mut pixels),
            SynthKind::Bars => bars(&mut rng, hw, &mut pixels),
        });
    }
    ImageDataset::new(pixels, n, hw, hw, format!("synth:{}", kind.name()))?.with_labels(labels)
}

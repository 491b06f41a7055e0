use std::fmt;
use std::io::Write;

use rand::seq::SliceRandom;

use super::{LossValues, ModelState};
use crate::error::{Error, Result};
use crate::numeric::Tensor;
use crate::sampling::rng_stream;

/// Stream used to shuffle minibatches.
const SHUFFLE_STREAM: u64 = 1;
/// Stream of the training noise.
const NOISE_STREAM: u64 = 2;
/// Stream of the noise used by evaluation passes; reset for every pass.
pub(crate) const EVAL_STREAM: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
        })
    }
}

/// Loss terms averaged per image. Epoch 0 is the untrained model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub split: Split,
    pub recon: f64,
    pub divergence: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub curves: Vec<EpochLoss>,
}

impl TrainReport {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &EpochLoss> {
        self.curves.iter().filter(move |e| e.split == split)
    }
}

pub fn write_loss_csv(curves: &[EpochLoss], mut w: impl Write) -> Result<()> {
    writeln!(w, "epoch,split,recon,divergence,total")?;
    for e in curves {
        writeln!(
            w,
            "{},{},{:.10},{:.10},{:.10}",
            e.epoch, e.split, e.recon, e.divergence, e.total
        )?;
    }
    Ok(())
}

fn gather(data: &Tensor, rows: &[usize]) -> Tensor {
    let cols = data.shape()[1];
    let mut out = Vec::with_capacity(rows.len() * cols);
    for &i in rows {
        out.extend_from_slice(data.row(i));
    }
    Tensor::new(vec![rows.len(), cols], out).expect("rows of a valid tensor")
}

fn check_split(name: &str, data: &Tensor, pixels: usize) -> Result<()> {
    let (rows, cols) = data.dims2()?;
    if rows == 0 {
        return Err(Error::config(format!("{name} split is empty")));
    }
    if cols != pixels {
        return Err(Error::dim(format!(
            "{name} split has {cols} pixels, model expects {pixels}"
        )));
    }
    Ok(())
}

impl ModelState {
    /// Per-image mean loss over `data` in minibatches of `M`, with noise
    /// from a fixed stream so repeated evaluations agree.
    pub fn evaluate(&self, data: &Tensor) -> Result<LossValues> {
        let (rows, _) = data.dims2()?;
        if rows == 0 {
            return Err(Error::config("cannot evaluate on an empty set"));
        }
        let mut rng = rng_stream(self.config.seed, EVAL_STREAM);
        let mut acc = LossValues {
            total: 0.0,
            recon: 0.0,
            divergence: 0.0,
        };
        let idx: Vec<usize> = (0..rows).collect();
        for chunk in idx.chunks(self.config.minibatch) {
            let l = self.loss(&gather(data, chunk), &mut rng)?;
            acc.total += l.total;
            acc.recon += l.recon;
            acc.divergence += l.divergence;
        }
        let n = rows as f64;
        Ok(LossValues {
            total: acc.total / n,
            recon: acc.recon / n,
            divergence: acc.divergence / n,
        })
    }

    /// Reconstructions of every row of `data` through one posterior draw
    /// each, from the fixed evaluation stream.
    pub fn reconstruct_all(&self, data: &Tensor) -> Result<Tensor> {
        let (rows, cols) = data.dims2()?;
        let mut rng = rng_stream(self.config.seed, EVAL_STREAM);
        let mut out = Vec::with_capacity(rows * cols);
        let idx: Vec<usize> = (0..rows).collect();
        for chunk in idx.chunks(self.config.minibatch) {
            out.extend(self.reconstruct(&gather(data, chunk), &mut rng)?.into_data());
        }
        Tensor::new(vec![rows, cols], out)
    }
}

fn record(curves: &mut Vec<EpochLoss>, epoch: usize, split: Split, l: LossValues) {
    curves.push(EpochLoss {
        epoch,
        split,
        recon: l.recon,
        divergence: l.divergence,
        total: l.total,
    });
}

/// Trains a fresh model from `cfg` with Adam on shuffled minibatches of `M`.
///
/// Both splits are evaluated before training (epoch 0) and after every
/// epoch. Identical inputs and seed give bit-identical curves.
pub fn train(train: &Tensor, valid: &Tensor, cfg: &super::EvaeConfig) -> Result<(ModelState, TrainReport)> {
    let state = ModelState::new(cfg.clone())?;
    train_from(state, train, valid)
}

/// Continues training an existing state for `state.config.epochs` epochs.
pub fn train_from(mut state: ModelState, train: &Tensor, valid: &Tensor) -> Result<(ModelState, TrainReport)> {
    let cfg = state.config.clone();
    check_split("train", train, cfg.pixels)?;
    check_split("validation", valid, cfg.pixels)?;
    let mut report = TrainReport::default();
    record(&mut report.curves, 0, Split::Train, state.evaluate(train)?);
    record(&mut report.curves, 0, Split::Valid, state.evaluate(valid)?);

    let mut shuffle = rng_stream(cfg.seed, SHUFFLE_STREAM);
    let mut noise = rng_stream(cfg.seed, NOISE_STREAM);
    let mut order: Vec<usize> = (0..train.shape()[0]).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle);
        for (b, chunk) in order.chunks(cfg.minibatch).enumerate() {
            let x = gather(train, chunk);
            let l = state.step(&x, &mut noise).map_err(|e| {
                let terms = state.loss(&x, &mut rng_stream(cfg.seed, NOISE_STREAM)).ok();
                Error::Numeric(format!(
                    "training aborted at epoch {epoch}, batch {b}: {e}; terms {terms:?}"
                ))
            })?;
            if !l.total.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss at epoch {epoch}, batch {b}: recon {}, divergence {}, total {}",
                    l.recon, l.divergence, l.total
                )));
            }
        }
        let tl = state.evaluate(train)?;
        let vl = state.evaluate(valid)?;
        log::info!(
            "{} epoch {epoch}: train recon {:.4} div {:.4} | valid recon {:.4} div {:.4}",
            cfg.model,
            tl.recon,
            tl.divergence,
            vl.recon,
            vl.divergence
        );
        record(&mut report.curves, epoch, Split::Train, tl);
        record(&mut report.curves, epoch, Split::Valid, vl);
    }
    Ok((state, report))
}

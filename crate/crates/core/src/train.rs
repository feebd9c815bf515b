//! Training loop over spectrogram pairs and loss-history bookkeeping.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{sample_step_queries, shortcut_step, LossBreakdown, LossWeights, StepSchedule, TrainItem};
use crate::net::{AdamState, VelocityNet};
use crate::priors::{draw_with_scale, PriorSpec};
use crate::spectro::{stft, Bins, StftConfig, Utterance, Waveform};

/// Batch-level hyperparameters shared by every epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainHyper {
    pub schedule: StepSchedule,
    pub weights: LossWeights,
    pub batch_size: usize,
    /// Random excerpt length in frames; longer spectrograms are cropped.
    pub segment_frames: usize,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            schedule: StepSchedule::default(),
            weights: LossWeights::default(),
            batch_size: 16,
            segment_frames: 32,
        }
    }
}

impl TrainHyper {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if self.batch_size == 0 || self.segment_frames == 0 {
            return Err(Error::Config("batch_size and segment_frames must be positive".into()));
        }
        if !(self.weights.lambda_sc >= 0.0 && self.weights.lambda_sc.is_finite()) {
            return Err(Error::Config(format!("lambda_sc {} must be finite and >= 0", self.weights.lambda_sc)));
        }
        Ok(())
    }
}

/// Gain applied to both signals of an utterance before the transform: the
/// reciprocal of the noisy peak, so observations sit in [-1, 1].
pub fn input_gain(noisy: &Waveform) -> f64 {
    let p = noisy.peak();
    if p > 0.0 {
        1.0 / p
    } else {
        1.0
    }
}

/// Clean and noisy spectrograms of one utterance at training scale.
#[derive(Debug, Clone, PartialEq)]
pub struct SpecPair {
    pub id: String,
    pub clean: Bins,
    pub noisy: Bins,
}

impl SpecPair {
    pub fn from_utterance(u: &Utterance, config: &StftConfig) -> Result<Self> {
        let g = input_gain(&u.noisy);
        Ok(Self {
            id: u.id.clone(),
            clean: stft(&u.clean.scaled(g), config)?.bins,
            noisy: stft(&u.noisy.scaled(g), config)?.bins,
        })
    }

    pub fn frames(&self) -> usize {
        self.clean.ncols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub epoch: usize,
    pub batch: usize,
    pub loss: LossBreakdown,
}

/// One pass over `data` in shuffled batches: builds training items from
/// random excerpts and prior draws, then takes one Adam step per batch.
pub fn train_epoch(
    net: &mut VelocityNet,
    adam: &mut AdamState,
    data: &[SpecPair],
    prior: &PriorSpec,
    hyper: &TrainHyper,
    epoch: usize,
    rng: &mut impl Rng,
) -> Result<Vec<BatchRecord>> {
    hyper.validate()?;
    prior.validate()?;
    if data.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);
    let mut history = Vec::new();
    for (batch, idx) in order.chunks(hyper.batch_size).enumerate() {
        let queries = sample_step_queries(idx.len(), &hyper.schedule, rng)?;
        let mut items = Vec::with_capacity(idx.len());
        for (&i, query) in idx.iter().zip(queries) {
            let pair = &data[i];
            let scale = prior.noise_scale(&pair.noisy);
            let len = hyper.segment_frames.min(pair.frames());
            let start = rng.random_range(0..=pair.frames() - len);
            let cols = ndarray::s![.., start..start + len];
            let y = pair.noisy.slice(cols).to_owned();
            let x1 = draw_with_scale(prior.is_centred(), &y, scale, rng);
            items.push(TrainItem {
                x0: pair.clean.slice(cols).to_owned(),
                x1,
                y,
                query,
            });
        }
        let loss = shortcut_step(net, &items, hyper.weights, &hyper.schedule, batch)?;
        adam.step(net).map_err(|e| match e {
            Error::Training { msg, .. } => Error::Training { step: batch, msg },
            other => other,
        })?;
        history.push(BatchRecord { epoch, batch, loss });
    }
    Ok(history)
}

/// `epoch,batch,fm_loss,sc_loss,total`
pub fn write_loss_csv(history: &[BatchRecord], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let fmt = |e: csv::Error| Error::Format(e.to_string());
    w.write_record(["epoch", "batch", "fm_loss", "sc_loss", "total"]).map_err(fmt)?;
    for r in history {
        w.write_record([
            r.epoch.to_string(),
            r.batch.to_string(),
            r.loss.fm_loss.to_string(),
            r.loss.sc_loss.to_string(),
            r.loss.total.to_string(),
        ])
        .map_err(fmt)?;
    }
    w.flush().map_err(|e| Error::Format(e.to_string()))
}

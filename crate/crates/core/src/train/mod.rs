//! Losses, optimizer, schedule and the training loop.

mod adam;
mod loss;

pub use adam::{clip_global_norm, Adam, AdamConfig};
pub use loss::{
    attention_loss, foreground_weight, pixel_weights, prediction_loss, LossGrad, LossReport, ALPHA,
};

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{rasterize_labels, CharBox};
use crate::nn::io::{decode, encode, write_atomic, Section};
use crate::nn::{Float, Model, NetConfig, Tensor};
use crate::synth::{augment, read_dataset, AugmentParams, Sample};

/// Optimization hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSchedule {
    pub base_lr: f64,
    pub epochs: usize,
    /// 1-based epochs at whose start the learning rate drops tenfold.
    pub decay_epochs: Vec<usize>,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Global gradient-norm limit; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Write a metrics record every this many steps.
    pub log_every: usize,
    pub augment: AugmentParams,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            base_lr: 1e-3,
            epochs: 16,
            decay_epochs: vec![12, 15],
            batch_size: 8,
            adam: AdamConfig::default(),
            clip_norm: Some(10.0),
            log_every: 1,
            augment: AugmentParams::default(),
        }
    }
}

impl TrainSchedule {
    /// The large-corpus schedule: 1e-4 for two epochs, then tenfold drops
    /// at epochs 3 and 4.
    pub fn paper() -> Self {
        TrainSchedule {
            base_lr: 1e-4,
            epochs: 5,
            decay_epochs: vec![3, 4],
            ..TrainSchedule::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.log_every == 0 {
            return Err(Error::invalid(
                "epochs, batch size and log interval must be positive",
            ));
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if self.clip_norm.is_some_and(|c| c <= 0.0) {
            return Err(Error::invalid("clip norm must be positive"));
        }
        self.augment.validate()
    }

    /// Learning rate during 1-based `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let drops = self.decay_epochs.iter().filter(|&&e| e <= epoch).count();
        self.base_lr * 0.1f64.powi(drops as i32)
    }
}

/// Forward and backward pass for one image. Returns the loss terms and the
/// gradient of the total loss for every parameter.
pub fn image_loss<T: Float>(
    model: &Model<T>,
    image: &Tensor<T>,
    boxes: &[CharBox],
) -> Result<(LossReport, Vec<Tensor<T>>)> {
    let (_, h, w) = image.chw()?;
    let trace = model.forward(image)?;
    let labels = rasterize_labels(boxes, (h, w), &model.config.attention_dims(h, w))?;
    let weights = pixel_weights(&labels.pred_gt);
    let pred = prediction_loss(trace.logits(), &labels.pred_gt, &weights)?;
    let mut seeds = vec![(trace.logits, pred.grad)];
    let mut l_a = Vec::with_capacity(trace.attention.len());
    for (&(_, var), gt) in trace.attention.iter().zip(&labels.attn_gt) {
        let a = attention_loss(trace.tape.value(var), gt)?;
        l_a.push(a.loss);
        let mut g = a.grad;
        g.scale(T::from_f64(ALPHA));
        seeds.push((var, g));
    }
    let grads = trace.backward(seeds)?.into_param_grads(&model.params);
    Ok((LossReport::new(pred.loss, l_a), grads))
}

/// One metrics-log record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    #[serde(rename = "L_p")]
    pub l_p: f64,
    #[serde(rename = "L_a")]
    pub l_a: Vec<f64>,
}

impl StepMetrics {
    pub fn total(&self) -> f64 {
        LossReport::new(self.l_p, self.l_a.clone()).total
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct OptimizerHeader {
    step: usize,
    t: u64,
    config: AdamConfig,
    seed: u64,
}

const OPTIMIZER_TAG: [u8; 4] = *b"ADAM";

/// Serialize model weights plus optimizer state.
pub fn encode_checkpoint(
    model: &Model<f32>,
    adam: &Adam<f32>,
    step: usize,
    seed: u64,
) -> Result<Vec<u8>> {
    let mut values = Vec::with_capacity(2 * model.params.num_values());
    for t in adam.m.iter().chain(&adam.v) {
        values.extend_from_slice(t.data());
    }
    let header = OptimizerHeader {
        step,
        t: adam.t,
        config: adam.config,
        seed,
    };
    let section = Section {
        tag: OPTIMIZER_TAG,
        json: serde_json::to_value(header)?,
        values,
    };
    encode(model, &[section])
}

/// Model, optimizer and completed step count from a checkpoint.
pub struct Checkpoint {
    pub model: Model<f32>,
    pub adam: Adam<f32>,
    pub step: usize,
    pub seed: u64,
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let (model, sections) = decode(bytes, None)?;
    let section = sections
        .iter()
        .find(|s| s.tag == OPTIMIZER_TAG)
        .ok_or_else(|| Error::Format("checkpoint has no optimizer state".into()))?;
    let header: OptimizerHeader = serde_json::from_value(section.json.clone())?;
    let n = model.params.num_values();
    if section.values.len() != 2 * n {
        return Err(Error::Format(format!(
            "optimizer state has {} values, expected {}",
            section.values.len(),
            2 * n
        )));
    }
    let mut adam = Adam::new(header.config, &model.params);
    adam.t = header.t;
    let mut offset = 0;
    for t in adam.m.iter_mut().chain(adam.v.iter_mut()) {
        let len = t.len();
        t.data_mut()
            .copy_from_slice(&section.values[offset..offset + len]);
        offset += len;
    }
    Ok(Checkpoint {
        model,
        adam,
        step: header.step,
        seed: header.seed,
    })
}

/// Runtime options that do not change the result.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads for per-image passes; 0 uses all cores.
    pub jobs: usize,
    /// Directory for checkpoints and `metrics.jsonl`; nothing is written
    /// when unset.
    pub out_dir: Option<PathBuf>,
    /// Stop after this many steps in total (for resumable partial runs).
    pub stop_after: Option<usize>,
}

/// Mini-batch training over an in-memory sample set.
pub struct Trainer<'a> {
    samples: &'a [Sample],
    pub schedule: TrainSchedule,
    pub model: Model<f32>,
    pub adam: Adam<f32>,
    /// Completed optimizer steps.
    pub step: usize,
    seed: u64,
    pool: rayon::ThreadPool,
}

const SHUFFLE_STREAM: u64 = 1 << 62;
const AUGMENT_STREAM: u64 = 1 << 63;

impl<'a> Trainer<'a> {
    pub fn new(
        samples: &'a [Sample],
        config: NetConfig,
        schedule: TrainSchedule,
        seed: u64,
        jobs: usize,
    ) -> Result<Self> {
        let model = Model::init(config, seed)?;
        let adam = Adam::new(schedule.adam, &model.params);
        Self::from_parts(samples, schedule, model, adam, 0, seed, jobs)
    }

    pub fn resume(
        samples: &'a [Sample],
        checkpoint: Checkpoint,
        schedule: TrainSchedule,
        jobs: usize,
    ) -> Result<Self> {
        let Checkpoint {
            model,
            adam,
            step,
            seed,
        } = checkpoint;
        Self::from_parts(samples, schedule, model, adam, step, seed, jobs)
    }

    fn from_parts(
        samples: &'a [Sample],
        schedule: TrainSchedule,
        model: Model<f32>,
        adam: Adam<f32>,
        step: usize,
        seed: u64,
        jobs: usize,
    ) -> Result<Self> {
        schedule.validate()?;
        if samples.is_empty() {
            return Err(Error::invalid("training set is empty"));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::invalid(format!("cannot start {jobs} workers: {e}")))?;
        Ok(Trainer {
            samples,
            schedule,
            model,
            adam,
            step,
            seed,
            pool,
        })
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.samples.len().div_ceil(self.schedule.batch_size)
    }

    pub fn total_steps(&self) -> usize {
        self.steps_per_epoch() * self.schedule.epochs
    }

    /// 1-based epoch of the next step.
    pub fn epoch(&self) -> usize {
        self.step / self.steps_per_epoch() + 1
    }

    fn permutation(&self, epoch: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(SHUFFLE_STREAM | epoch as u64);
        let mut order: Vec<usize> = (0..self.samples.len()).collect();
        order.shuffle(&mut rng);
        order
    }

    /// Run one optimizer step on the next batch.
    pub fn train_step(&mut self) -> Result<StepMetrics> {
        let epoch = self.epoch();
        let within = self.step % self.steps_per_epoch();
        let order = self.permutation(epoch);
        let bs = self.schedule.batch_size;
        let batch = &order[within * bs..((within + 1) * bs).min(order.len())];
        let lr = self.schedule.lr_at(epoch);
        let model = &self.model;
        let samples = self.samples;
        let params = &self.schedule.augment;
        let seed = self.seed;
        let step = self.step;
        let results: Vec<Result<(LossReport, Vec<Tensor<f32>>)>> = self.pool.install(|| {
            batch
                .par_iter()
                .enumerate()
                .map(|(slot, &idx)| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(AUGMENT_STREAM | ((step as u64) << 16) | slot as u64);
                    let s = augment(&samples[idx], params, &mut rng)?;
                    image_loss(model, &s.image.to_tensor(), &s.boxes)
                })
                .collect()
        });
        // sum in batch order so the result does not depend on thread timing
        let mut reports = Vec::with_capacity(batch.len());
        let mut total: Option<Vec<Tensor<f32>>> = None;
        for r in results {
            let (report, grads) = r?;
            reports.push(report);
            match &mut total {
                None => total = Some(grads),
                Some(acc) => acc
                    .iter_mut()
                    .zip(&grads)
                    .for_each(|(a, g)| a.add_assign(g)),
            }
        }
        let mut grads = total.expect("batch is non-empty");
        let inv = 1.0 / batch.len() as f32;
        grads.iter_mut().for_each(|g| g.scale(inv));
        if let Some(c) = self.schedule.clip_norm {
            clip_global_norm(&mut grads, c);
        }
        self.adam.step(&mut self.model.params, &grads, lr)?;
        self.step += 1;
        let mean = LossReport::mean(&reports);
        Ok(StepMetrics {
            epoch,
            step: self.step,
            lr,
            l_p: mean.l_p,
            l_a: mean.l_a,
        })
    }

    pub fn checkpoint_bytes(&self) -> Result<Vec<u8>> {
        encode_checkpoint(&self.model, &self.adam, self.step, self.seed)
    }

    /// Train until the schedule (or `stop_after`) is exhausted. Writes
    /// `metrics.jsonl`, `epochNNN.cafw` at each epoch end and `last.cafw`
    /// after every epoch and at the stop point.
    pub fn run(
        &mut self,
        opts: &RunOptions,
        mut on_step: impl FnMut(&StepMetrics),
    ) -> Result<Vec<StepMetrics>> {
        let mut log = match &opts.out_dir {
            Some(dir) => {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                let path = dir.join("metrics.jsonl");
                let file = OpenOptions::new()
                    .create(true)
                    .append(self.step > 0)
                    .write(true)
                    .truncate(self.step == 0)
                    .open(&path)
                    .map_err(|e| Error::io(&path, e))?;
                Some((BufWriter::new(file), path))
            }
            None => None,
        };
        let end = opts
            .stop_after
            .map_or(self.total_steps(), |s| s.min(self.total_steps()));
        let mut history = Vec::new();
        while self.step < end {
            let m = self.train_step()?;
            on_step(&m);
            if let Some((w, path)) = &mut log {
                if m.step % self.schedule.log_every == 0 {
                    write_record(w, path, &m)?;
                }
            }
            let epoch_done = self.step % self.steps_per_epoch() == 0;
            history.push(m);
            if let Some(dir) = &opts.out_dir {
                if epoch_done || self.step == end {
                    let bytes = self.checkpoint_bytes()?;
                    if epoch_done {
                        let e = self.step / self.steps_per_epoch();
                        write_atomic(&dir.join(format!("epoch{e:03}.cafw")), &bytes)?;
                    }
                    write_atomic(&dir.join("last.cafw"), &bytes)?;
                }
            }
        }
        if let Some((mut w, path)) = log {
            w.flush().map_err(|e| Error::io(&path, e))?;
        }
        Ok(history)
    }
}

fn write_record(w: &mut BufWriter<File>, path: &Path, m: &StepMetrics) -> Result<()> {
    serde_json::to_writer(&mut *w, m)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Train on a dataset directory, optionally resuming from a checkpoint.
/// Returns the trained model.
pub fn train(
    dataset: &Path,
    config: NetConfig,
    schedule: TrainSchedule,
    seed: u64,
    resume: Option<&Path>,
    opts: &RunOptions,
) -> Result<Model<f32>> {
    let samples: Vec<Sample> = read_dataset(dataset)?
        .into_iter()
        .map(|r| r.sample)
        .collect();
    if samples.is_empty() {
        return Err(Error::invalid(format!(
            "no samples in {}",
            dataset.display()
        )));
    }
    let mut trainer = match resume {
        Some(path) => {
            let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
            let ckpt = decode_checkpoint(&bytes)?;
            if ckpt.model.config != config {
                return Err(Error::invalid(
                    "checkpoint network configuration differs from --config",
                ));
            }
            Trainer::resume(&samples, ckpt, schedule, opts.jobs)?
        }
        None => Trainer::new(&samples, config, schedule, seed, opts.jobs)?,
    };
    trainer.run(opts, |m| {
        log::info!(
            "epoch {} step {} lr {:e} L_p {:.4} L_a {:?}",
            m.epoch,
            m.step,
            m.lr,
            m.l_p,
            m.l_a
        )
    })?;
    Ok(trainer.model)
}

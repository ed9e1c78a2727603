//! Optimization loop, checkpointing and evaluation.

mod adam;
mod config;

use std::fs;
use std::path::{Path, PathBuf};

use crate::dataio::{batch_indices, load_manifest, make_batch, split, SampledVideo, VideoRecord};
use crate::error::{Error, Result};
use crate::evalmetrics::{write_predictions, EvalReport, PredictionRow, VideoPrediction, TOP_K};
use crate::models::{Checkpoint, Model, ModelConfig};

pub use adam::{adam_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use config::TrainConfig;

/// Environment variable that requests verification mode.
pub const VERIFY_ENV: &str = "POOLFORGE_VERIFY";

/// Whether `POOLFORGE_VERIFY=1` is set. Arithmetic is always 64-bit and
/// single-threaded, so runs are bit-reproducible either way; verification
/// mode additionally checks every parameter for finiteness after each step.
pub fn verify_mode() -> bool {
    std::env::var(VERIFY_ENV).is_ok_and(|v| v == "1")
}

/// Samples every record to the model's frame count, checking widths and
/// label range against the configuration.
pub fn prepare(records: &[VideoRecord], config: &ModelConfig) -> Result<Vec<SampledVideo>> {
    records
        .iter()
        .map(|r| {
            if r.video_dim != config.video_dim || r.audio_dim != config.audio_dim {
                return Err(Error::Data(format!(
                    "record {:?} has widths {}+{}, model expects {}+{}",
                    r.id, r.video_dim, r.audio_dim, config.video_dim, config.audio_dim
                )));
            }
            if let Some(&l) = r.labels.iter().find(|&&l| l as usize >= config.labels) {
                return Err(Error::Data(format!(
                    "record {:?} has label {l}, model has {} labels",
                    r.id, config.labels
                )));
            }
            Ok(SampledVideo::from_record(r, config.frames))
        })
        .collect()
}

/// Inference-mode predictions for `videos`, `batch` at a time.
pub fn predict(model: &Model, videos: &[SampledVideo], batch: usize) -> Result<Vec<VideoPrediction>> {
    let mut out = Vec::with_capacity(videos.len());
    for chunk in videos.chunks(batch.max(1)) {
        let refs: Vec<&SampledVideo> = chunk.iter().collect();
        let b = make_batch(&refs, model.config.labels)?;
        let probs = model.infer(&b.frames)?;
        for (v, row) in chunk.iter().zip(probs.rows()) {
            out.push(VideoPrediction::from_scores(v.id.clone(), row, v.labels.clone(), TOP_K));
        }
    }
    Ok(out)
}

/// GAP@20 and per-class AP of `model` on `videos`, with the predictions.
pub fn evaluate(model: &Model, videos: &[SampledVideo], batch: usize) -> Result<(EvalReport, Vec<VideoPrediction>)> {
    if videos.is_empty() {
        return Err(Error::Data("cannot evaluate an empty dataset".into()));
    }
    let predictions = predict(model, videos, batch)?;
    let report = EvalReport::compute(&predictions, model.config.labels)?;
    Ok((report, predictions))
}

/// Evaluates a checkpoint on every record of a manifest and writes the
/// predictions file.
pub fn evaluate_checkpoint(checkpoint: &Path, manifest: &Path, predictions_out: &Path) -> Result<EvalReport> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let records = load_manifest(manifest)?;
    let videos = prepare(&records, &ckpt.model.config)?;
    let (report, predictions) = evaluate(&ckpt.model, &videos, 32)?;
    let rows: Vec<PredictionRow> = predictions.into_iter().map(|p| (p.id, p.predictions)).collect();
    write_predictions(predictions_out, &rows)?;
    Ok(report)
}

/// Model, optimizer and data of one run, advanced a step at a time.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainConfig,
    pub model: Model,
    pub adam: AdamState,
    pub train_set: Vec<SampledVideo>,
    pub holdout: Vec<SampledVideo>,
}

impl Trainer {
    /// Fresh model initialized from `config.seed`. `validation` replaces
    /// the holdout split when given.
    pub fn new(config: TrainConfig, records: &[VideoRecord], validation: Option<&[VideoRecord]>) -> Result<Self> {
        config.validate()?;
        let model = Model::new(config.model.clone(), config.seed)?;
        Self::assemble(config, model, AdamState::new(), records, validation)
    }

    /// Continues from a checkpoint written by [`Trainer::checkpoint`].
    pub fn resume(
        config: TrainConfig,
        checkpoint: Checkpoint,
        records: &[VideoRecord],
        validation: Option<&[VideoRecord]>,
    ) -> Result<Self> {
        config.validate()?;
        if checkpoint.model.config != config.model {
            return Err(Error::config("checkpoint model configuration differs from the run configuration"));
        }
        let adam = AdamState::from_extra(&checkpoint.extra, checkpoint.step, &checkpoint.model.params)?;
        Self::assemble(config, checkpoint.model, adam, records, validation)
    }

    fn assemble(
        config: TrainConfig,
        model: Model,
        adam: AdamState,
        records: &[VideoRecord],
        validation: Option<&[VideoRecord]>,
    ) -> Result<Self> {
        let (train, holdout) = match validation {
            Some(v) => (records.to_vec(), v.to_vec()),
            None if config.holdout_fraction > 0.0 => split(records, config.holdout_fraction, config.seed)?,
            None => (records.to_vec(), Vec::new()),
        };
        if train.is_empty() {
            return Err(Error::Data("no training records".into()));
        }
        let train_set = prepare(&train, &config.model)?;
        let holdout = prepare(&holdout, &config.model)?;
        Ok(Trainer {
            config,
            model,
            adam,
            train_set,
            holdout,
        })
    }

    /// Optimizer steps taken so far.
    pub fn step(&self) -> u64 {
        self.adam.step
    }

    /// One optimizer step on the batch assigned to the current step.
    /// Returns the batch loss before the update.
    pub fn train_step(&mut self) -> Result<f64> {
        let step = self.adam.step;
        let idx = batch_indices(self.train_set.len(), self.config.batch_size, self.config.seed, step);
        let refs: Vec<&SampledVideo> = idx.iter().map(|&i| &self.train_set[i]).collect();
        let batch = make_batch(&refs, self.config.model.labels)?;
        let (loss, grads) = self.model.loss_and_gradients(&batch.frames, &batch.targets)?;
        if !loss.is_finite() {
            return Err(Error::numeric(format!("loss at step {step}")));
        }
        let lr = self.config.learning_rate_at(step);
        adam_step(&mut self.model.params, &grads, &mut self.adam, lr)?;
        if verify_mode() {
            if let Some((path, _)) = self.model.params.iter().find(|(_, t)| !t.is_finite()) {
                return Err(Error::numeric(format!("parameter {path} after step {step}")));
            }
        }
        Ok(loss)
    }

    pub fn evaluate_train(&self) -> Result<EvalReport> {
        Ok(evaluate(&self.model, &self.train_set, self.config.batch_size)?.0)
    }

    pub fn evaluate_holdout(&self) -> Result<Option<EvalReport>> {
        if self.holdout.is_empty() {
            return Ok(None);
        }
        Ok(Some(evaluate(&self.model, &self.holdout, self.config.batch_size)?.0))
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(self.model.clone(), self.adam.step);
        ck.extra = self.adam.to_extra();
        ck.meta = serde_json::json!({
            "seed": self.config.seed,
            "learning_rate": self.config.learning_rate,
            "batch_size": self.config.batch_size,
        });
        ck
    }
}

/// Outcome of [`train`].
#[derive(Debug, Clone)]
pub struct TrainSummary {
    /// Batch loss of every step taken in this invocation, by step number.
    pub losses: Vec<(u64, f64)>,
    /// Holdout reports by step.
    pub evaluations: Vec<(u64, EvalReport)>,
    pub final_checkpoint: PathBuf,
    pub steps: u64,
}

pub fn checkpoint_path(dir: &Path, step: u64) -> PathBuf {
    dir.join(format!("step-{step:06}.ckpt"))
}

/// Runs `config` to `max_steps`, from scratch or from `resume`.
///
/// Writes periodic checkpoints and always `final.ckpt` in the output
/// directory, even when no step is taken.
pub fn train(config: &TrainConfig, resume: Option<&Path>) -> Result<TrainSummary> {
    config.validate()?;
    let records = load_manifest(&config.train_data)?;
    let validation = match &config.validation_data {
        Some(p) => Some(load_manifest(p)?),
        None => None,
    };
    let mut trainer = match resume {
        Some(path) => Trainer::resume(config.clone(), Checkpoint::load(path)?, &records, validation.as_deref())?,
        None => Trainer::new(config.clone(), &records, validation.as_deref())?,
    };
    fs::create_dir_all(&config.output_dir)?;
    log::info!(
        "training {} on {} videos ({} held out) from step {}{}",
        config.model.architecture,
        trainer.train_set.len(),
        trainer.holdout.len(),
        trainer.step(),
        if verify_mode() { ", verification mode" } else { "" }
    );

    let mut losses = Vec::new();
    let mut evaluations = Vec::new();
    while trainer.step() < config.max_steps {
        let step = trainer.step();
        let loss = trainer.train_step()?;
        losses.push((step, loss));
        let done = trainer.step();
        if config.log_interval > 0 && done % config.log_interval == 0 {
            log::info!("step {done} loss {loss:.6}");
        }
        if config.eval_interval > 0 && done % config.eval_interval == 0 {
            if let Some(report) = trainer.evaluate_holdout()? {
                log::info!("step {done} holdout GAP {:.6}", report.gap);
                evaluations.push((done, report));
            }
        }
        if config.checkpoint_interval > 0 && done % config.checkpoint_interval == 0 {
            trainer.checkpoint().save(&checkpoint_path(&config.output_dir, done))?;
        }
    }
    if evaluations.last().map(|e| e.0) != Some(trainer.step()) {
        if let Some(report) = trainer.evaluate_holdout()? {
            log::info!("final holdout GAP {:.6}", report.gap);
            evaluations.push((trainer.step(), report));
        }
    }
    let final_checkpoint = config.output_dir.join("final.ckpt");
    trainer.checkpoint().save(&final_checkpoint)?;
    Ok(TrainSummary {
        losses,
        evaluations,
        final_checkpoint,
        steps: trainer.step(),
    })
}

//! Supervised CutMix pretraining on the source domain and joint
//! source/target adaptation, with Adam, a linear-decay schedule,
//! checkpoints and a per-step log.
//!
//! Randomness is derived, never carried: the batch order of epoch `e`
//! comes from a ChaCha stream keyed by `(data_seed, e)` and the
//! augmentations of step `s` from one keyed by `(augment_seed, s)`. A
//! checkpoint therefore only needs the step counter besides the network
//! and optimiser state.

pub mod config;

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::info;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{cutmix, pretrain_augment, rand_augment, GeometricRecord, RandAugmentPolicy};
use crate::dataset::{DepthMap, DepthSample, Image};
use crate::error::{Error, Result};
use crate::losses::{
    compose_batch, consistency_loss, pretrain_loss, source_loss, total_loss, BatchPlan, LossConfig,
    Ratio, TOTAL_WEIGHT,
};
use crate::metrics::{compute_metrics, EvalConfig, MetricsReport};
use crate::model::{Checkpoint, DepthNet, Gradients};

pub use config::{key_table, parse_override, parse_pairs, KeySpec, Profile, RunConfig, KEYS};

pub const ADAM_BETAS: (f64, f64) = (0.9, 0.999);
pub const ADAM_EPS: f64 = 1e-8;
pub const LOG_FILE: &str = "log.tsv";
pub const LOG_HEADER: &str = "step\tepoch\tlr\tforward_batch\tsource_loss\tconsistency_loss\ttotal";

const EPOCH_STREAM: u64 = 1 << 40;
const SOURCE_STREAM: u64 = 2 << 40;
const AUGMENT_STREAM: u64 = 3 << 40;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Pretrain,
    Adapt,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::Pretrain => "pretrain",
            Stage::Adapt => "adapt",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub model: u64,
    pub data: u64,
    pub augment: u64,
}

/// Settings of one training stage.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub stage: Stage,
    pub lr: f64,
    pub epochs: usize,
    pub decay_start_epoch: usize,
    /// Pretraining batch size.
    pub batch_size: usize,
    pub batch_n: usize,
    pub ratio: Ratio,
    pub cutmix_alpha: f64,
    pub loss: LossConfig,
    pub policy: RandAugmentPolicy,
    /// Global-norm clip; 0 disables.
    pub grad_clip: f64,
    pub seeds: Seeds,
    pub checkpoint_every: usize,
    pub config_hash: String,
}

impl TrainConfig {
    fn from_run(run: &RunConfig, stage: Stage) -> Self {
        let t = &run.train;
        let (lr, epochs, decay) = match stage {
            Stage::Pretrain => (
                t.pretrain_lr,
                t.pretrain_epochs,
                t.pretrain_decay_start_epoch.unwrap_or(t.pretrain_epochs),
            ),
            Stage::Adapt => (t.adapt_lr, t.adapt_epochs, t.decay_start_epoch),
        };
        Self {
            stage,
            lr,
            epochs,
            decay_start_epoch: decay,
            batch_size: t.pretrain_batch,
            batch_n: run.batch_n,
            ratio: run.ratio,
            cutmix_alpha: t.cutmix_alpha,
            loss: run.loss(),
            policy: run.policy(),
            grad_clip: t.grad_clip,
            seeds: Seeds {
                model: t.model_seed,
                data: t.data_seed,
                augment: t.augment_seed,
            },
            checkpoint_every: t.checkpoint_every,
            config_hash: run.hash(),
        }
    }

    pub fn pretrain(run: &RunConfig) -> Self {
        Self::from_run(run, Stage::Pretrain)
    }

    pub fn adapt(run: &RunConfig) -> Self {
        Self::from_run(run, Stage::Adapt)
    }

    pub fn plan(&self) -> Result<BatchPlan> {
        compose_batch(self.batch_n, self.ratio, self.loss.streams)
    }
}

/// Learning rate during `epoch`: constant before the decay start, then
/// linear to zero at `cfg.epochs`.
pub fn lr_at(cfg: &TrainConfig, epoch: usize) -> Result<f64> {
    if epoch > cfg.epochs {
        return Err(Error::arg(format!(
            "epoch {epoch} beyond the schedule's {}",
            cfg.epochs
        )));
    }
    if epoch < cfg.decay_start_epoch {
        return Ok(cfg.lr);
    }
    let span = cfg.epochs.saturating_sub(cfg.decay_start_epoch);
    if span == 0 {
        return Ok(0.0);
    }
    Ok(cfg.lr * (cfg.epochs - epoch) as f64 / span as f64)
}

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub t: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(net: &DepthNet) -> Self {
        let zeros: Vec<Vec<f32>> = net
            .param_slices()
            .iter()
            .map(|s| vec![0.0; s.len()])
            .collect();
        Self {
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, net: &mut DepthNet, grads: &Gradients<f32>, lr: f64) {
        let (b1, b2) = ADAM_BETAS;
        self.t += 1;
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        for (((p, g), m), v) in net
            .param_slices_mut()
            .into_iter()
            .zip(grads.slices())
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..p.len() {
                let gi = g[i] as f64;
                let mi = b1 * m[i] as f64 + (1.0 - b1) * gi;
                let vi = b2 * v[i] as f64 + (1.0 - b2) * gi * gi;
                m[i] = mi as f32;
                v[i] = vi as f32;
                let update = lr * (mi / c1) / ((vi / c2).sqrt() + ADAM_EPS);
                p[i] = (p[i] as f64 - update) as f32;
            }
        }
    }
}

/// Losses of one optimisation step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub lr: f64,
    pub forward_batch: usize,
    pub source_loss: f64,
    pub consistency_loss: f64,
    pub total: f64,
}

impl StepRecord {
    pub fn tsv(&self) -> String {
        format!(
            "{}\t{}\t{:e}\t{}\t{:.9}\t{:.9}\t{:.9}",
            self.step,
            self.epoch,
            self.lr,
            self.forward_batch,
            self.source_loss,
            self.consistency_loss,
            self.total
        )
    }
}

/// Metadata stored alongside every checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub stage: Stage,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimisation steps.
    pub step: u64,
    pub config_hash: String,
    pub seeds: Seeds,
    pub adam_t: u64,
    /// Mean `(source, consistency, total)` over the last completed epoch.
    pub epoch_loss: (f64, f64, f64),
    pub workers: usize,
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn permutation(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

/// Drives one training stage step by step.
pub struct Trainer {
    cfg: TrainConfig,
    net: DepthNet,
    adam: Adam,
    source: Vec<DepthSample>,
    target: Vec<DepthSample>,
    plan: Option<BatchPlan>,
    step: u64,
    run_dir: Option<PathBuf>,
    epoch_records: Vec<StepRecord>,
    last_epoch_loss: (f64, f64, f64),
}

impl Trainer {
    /// Pretraining on labelled source samples.
    pub fn pretrain(net: DepthNet, source: Vec<DepthSample>, cfg: TrainConfig) -> Result<Self> {
        if cfg.stage != Stage::Pretrain {
            return Err(Error::config("pretraining needs a pretrain-stage config"));
        }
        if source.is_empty() {
            return Err(Error::config(
                "pretraining needs at least one source sample",
            ));
        }
        if let Some(s) = source.iter().find(|s| !s.is_labelled()) {
            return Err(Error::config(format!(
                "source sample {} carries no depth labels",
                s.id
            )));
        }
        Self::build(net, source, Vec::new(), cfg, None)
    }

    /// Adaptation from a pretrained network.
    pub fn adapt(
        net: DepthNet,
        source: Vec<DepthSample>,
        target: Vec<DepthSample>,
        cfg: TrainConfig,
    ) -> Result<Self> {
        if cfg.stage != Stage::Adapt {
            return Err(Error::config("adaptation needs an adapt-stage config"));
        }
        let plan = cfg.plan()?;
        if source.is_empty() || target.is_empty() {
            return Err(Error::config("adaptation needs source and target samples"));
        }
        if let Some(s) = source.iter().find(|s| !s.is_labelled()) {
            return Err(Error::config(format!(
                "source sample {} carries no depth labels",
                s.id
            )));
        }
        if let Some(s) = target.iter().find(|s| s.is_labelled()) {
            return Err(Error::config(format!(
                "target sample {} carries depth labels; adaptation must not see them",
                s.id
            )));
        }
        if target.len() < plan.unsup_originals {
            return Err(Error::config(format!(
                "{} target images cannot fill {} per step",
                target.len(),
                plan.unsup_originals
            )));
        }
        Self::build(net, source, target, cfg, Some(plan))
    }

    fn build(
        net: DepthNet,
        source: Vec<DepthSample>,
        target: Vec<DepthSample>,
        cfg: TrainConfig,
        plan: Option<BatchPlan>,
    ) -> Result<Self> {
        cfg.policy.validate()?;
        cfg.loss.validate()?;
        let spec = net.spec();
        if let Some(s) = source
            .iter()
            .chain(&target)
            .find(|s| (s.height(), s.width()) != (spec.height, spec.width))
        {
            return Err(Error::config(format!(
                "sample {} is {}x{}, model expects {}x{}",
                s.id,
                s.height(),
                s.width(),
                spec.height,
                spec.width
            )));
        }
        Ok(Self {
            adam: Adam::new(&net),
            cfg,
            net,
            source,
            target,
            plan,
            step: 0,
            run_dir: None,
            epoch_records: Vec::new(),
            last_epoch_loss: (0.0, 0.0, 0.0),
        })
    }

    /// Directory for `log.tsv` and `ckpt-<epoch>` files.
    pub fn with_run_dir(mut self, dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let log = dir.join(LOG_FILE);
        if self.step == 0 || !log.exists() {
            std::fs::write(&log, format!("{LOG_HEADER}\n")).map_err(|e| Error::io(&log, e))?;
        }
        self.run_dir = Some(dir);
        Ok(self)
    }

    /// Restores network, optimiser and step counter from a checkpoint of
    /// the same stage and configuration.
    pub fn resume_from(mut self, ckpt: &Checkpoint) -> Result<Self> {
        let meta: CheckpointMeta = serde_json::from_value(ckpt.meta.clone())
            .map_err(|e| Error::config(format!("checkpoint metadata: {e}")))?;
        if meta.stage != self.cfg.stage {
            return Err(Error::config(format!(
                "checkpoint is from stage {}, not {}",
                meta.stage, self.cfg.stage
            )));
        }
        if meta.config_hash != self.cfg.config_hash {
            return Err(Error::config(
                "checkpoint was written under a different configuration",
            ));
        }
        if ckpt.spec != *self.net.spec() {
            return Err(Error::config(
                "checkpoint model spec differs from the configured one",
            ));
        }
        self.net = ckpt.to_net()?;
        let names: Vec<String> = self
            .net
            .named_params()
            .into_iter()
            .map(|(n, _)| n)
            .collect();
        let mut adam = Adam::new(&self.net);
        adam.t = meta.adam_t;
        for (i, name) in names.iter().enumerate() {
            for (key, dst) in [("m", &mut adam.m[i]), ("v", &mut adam.v[i])] {
                let src = ckpt.tensor(&format!("adam.{key}.{name}")).ok_or_else(|| {
                    Error::config(format!("checkpoint lacks optimiser state for {name}"))
                })?;
                if src.len() != dst.len() {
                    return Err(Error::config(format!(
                        "optimiser state for {name} has the wrong size"
                    )));
                }
                dst.copy_from_slice(src);
            }
        }
        self.adam = adam;
        self.step = meta.step;
        self.last_epoch_loss = meta.epoch_loss;
        Ok(self)
    }

    pub fn net(&self) -> &DepthNet {
        &self.net
    }

    pub fn into_net(self) -> DepthNet {
        self.net
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn plan(&self) -> Option<&BatchPlan> {
        self.plan.as_ref()
    }

    /// Completed optimisation steps.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn steps_per_epoch(&self) -> usize {
        match &self.plan {
            None => self.source.len().div_ceil(self.cfg.batch_size),
            Some(p) => (self.target.len() / p.unsup_originals).max(1),
        }
    }

    pub fn total_steps(&self) -> u64 {
        (self.steps_per_epoch() * self.cfg.epochs) as u64
    }

    pub fn is_finished(&self) -> bool {
        self.step >= self.total_steps()
    }

    pub fn epoch(&self) -> usize {
        (self.step / self.steps_per_epoch() as u64) as usize
    }

    /// Runs one optimisation step.
    pub fn step(&mut self) -> Result<StepRecord> {
        if self.is_finished() {
            return Err(Error::arg("training schedule already complete"));
        }
        let spe = self.steps_per_epoch();
        let epoch = self.epoch();
        let within = (self.step % spe as u64) as usize;
        let lr = lr_at(&self.cfg, epoch)?;
        let (record, grads) = match self.plan {
            None => self.pretrain_step(epoch, within, lr)?,
            Some(plan) => self.adapt_step(&plan, epoch, within, lr)?,
        };
        let mut grads = grads;
        if self.cfg.grad_clip > 0.0 {
            let norm = grads.global_norm();
            if norm > self.cfg.grad_clip {
                let scale = (self.cfg.grad_clip / norm) as f32;
                for s in grads.slices_mut() {
                    s.iter_mut().for_each(|g| *g *= scale);
                }
            }
        }
        self.adam.step(&mut self.net, &grads, lr);
        self.step += 1;
        if let Some(dir) = &self.run_dir {
            let path = dir.join(LOG_FILE);
            let mut f = OpenOptions::new()
                .append(true)
                .create(true)
                .open(&path)
                .map_err(|e| Error::io(&path, e))?;
            writeln!(f, "{}", record.tsv()).map_err(|e| Error::io(&path, e))?;
        }
        self.epoch_records.push(record.clone());
        if self.step % spe as u64 == 0 {
            let n = self.epoch_records.len() as f64;
            let sum = self.epoch_records.iter().fold((0.0, 0.0, 0.0), |a, r| {
                (a.0 + r.source_loss, a.1 + r.consistency_loss, a.2 + r.total)
            });
            self.last_epoch_loss = (sum.0 / n, sum.1 / n, sum.2 / n);
            self.epoch_records.clear();
            let done = self.epoch();
            info!(
                "{} epoch {done}/{}: total {:.5}",
                self.cfg.stage, self.cfg.epochs, self.last_epoch_loss.2
            );
            if let Some(dir) = self.run_dir.clone() {
                if done % self.cfg.checkpoint_every == 0 || done == self.cfg.epochs {
                    self.checkpoint().save(&dir.join(format!("ckpt-{done}")))?;
                }
            }
        }
        Ok(record)
    }

    /// Runs until the current epoch ends; returns its step records.
    pub fn run_epoch(&mut self) -> Result<Vec<StepRecord>> {
        let spe = self.steps_per_epoch() as u64;
        let mut out = Vec::new();
        loop {
            out.push(self.step()?);
            if self.step % spe == 0 {
                return Ok(out);
            }
        }
    }

    /// Runs the remaining schedule.
    pub fn run(&mut self) -> Result<Vec<StepRecord>> {
        let mut out = Vec::new();
        while !self.is_finished() {
            out.push(self.step()?);
        }
        Ok(out)
    }

    /// Mean `(source, consistency, total)` of the last completed epoch.
    pub fn last_epoch_loss(&self) -> (f64, f64, f64) {
        self.last_epoch_loss
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let meta = CheckpointMeta {
            stage: self.cfg.stage,
            epoch: self.epoch(),
            step: self.step,
            config_hash: self.cfg.config_hash.clone(),
            seeds: self.cfg.seeds,
            adam_t: self.adam.t,
            epoch_loss: self.last_epoch_loss,
            workers: rayon::current_num_threads(),
        };
        let mut ck = Checkpoint::from_net(
            &self.net,
            serde_json::to_value(meta).expect("metadata serialises"),
        );
        let names: Vec<String> = self
            .net
            .named_params()
            .into_iter()
            .map(|(n, _)| n)
            .collect();
        for (i, name) in names.iter().enumerate() {
            ck.tensors
                .push((format!("adam.m.{name}"), self.adam.m[i].clone()));
            ck.tensors
                .push((format!("adam.v.{name}"), self.adam.v[i].clone()));
        }
        ck
    }

    fn pretrain_step(
        &self,
        epoch: usize,
        within: usize,
        lr: f64,
    ) -> Result<(StepRecord, Gradients<f32>)> {
        let order = permutation(
            self.source.len(),
            &mut rng_for(self.cfg.seeds.data, EPOCH_STREAM | epoch as u64),
        );
        let b = self.cfg.batch_size;
        let idx = &order[within * b..((within + 1) * b).min(order.len())];
        let mut rng = rng_for(self.cfg.seeds.augment, AUGMENT_STREAM | self.step);
        let augmented: Vec<DepthSample> = idx
            .iter()
            .map(|&i| pretrain_augment(&self.source[i], &mut rng))
            .collect();
        let mixed: Vec<DepthSample> = augmented
            .iter()
            .map(|a| {
                let partner = &augmented[rng.random_range(0..augmented.len())];
                if partner.is_labelled() && a.is_labelled() {
                    cutmix(a, partner, self.cfg.cutmix_alpha, &mut rng)
                } else {
                    Ok(a.clone())
                }
            })
            .collect::<Result<_>>()?;
        let images: Vec<Image> = mixed.iter().map(|s| s.image.clone()).collect();
        let labels: Vec<DepthMap> = mixed.into_iter().map(|s| s.depth).collect();
        let pass = self.net.forward(&images)?;
        let loss = pretrain_loss(&pass.predictions, &labels)?;
        if !loss.value.is_finite() {
            return Err(self.non_finite(loss.value, 0.0, idx.iter().map(|&i| &self.source[i])));
        }
        let grads = self.net.backward(&pass, &loss.grads)?;
        let record = StepRecord {
            step: self.step,
            epoch,
            lr,
            forward_batch: images.len(),
            source_loss: loss.value,
            consistency_loss: 0.0,
            total: loss.value,
        };
        Ok((record, grads))
    }

    fn adapt_step(
        &self,
        plan: &BatchPlan,
        epoch: usize,
        within: usize,
        lr: f64,
    ) -> Result<(StepRecord, Gradients<f32>)> {
        let u = plan.unsup_originals;
        let n = plan.sup_pairs;
        let views = plan.streams - 1;
        let target_order = permutation(
            self.target.len(),
            &mut rng_for(self.cfg.seeds.data, EPOCH_STREAM | epoch as u64),
        );
        let target_idx = &target_order[within * u..(within + 1) * u];
        let mut src_rng = rng_for(self.cfg.seeds.data, SOURCE_STREAM | self.step);
        let mut source_idx = Vec::with_capacity(2 * n);
        while source_idx.len() < 2 * n {
            let p = permutation(self.source.len(), &mut src_rng);
            source_idx.extend(p.into_iter().take(2 * n - source_idx.len()));
        }
        let mut rng = rng_for(self.cfg.seeds.augment, AUGMENT_STREAM | self.step);
        let mut aug_images = Vec::with_capacity(u * views);
        let mut records: Vec<GeometricRecord> = Vec::with_capacity(u * views);
        for &t in target_idx {
            for _ in 0..views {
                let (im, rec) = rand_augment(&self.target[t].image, &self.cfg.policy, &mut rng)?;
                aug_images.push(im);
                records.push(rec);
            }
        }
        let first = &source_idx[..n];
        let second = &source_idx[n..];
        let mut images: Vec<Image> = Vec::with_capacity(plan.concat_total);
        images.extend(first.iter().map(|&i| self.source[i].image.clone()));
        images.extend(second.iter().map(|&i| self.source[i].image.clone()));
        images.extend(target_idx.iter().map(|&i| self.target[i].image.clone()));
        images.extend(aug_images);
        if images.len() != plan.concat_total {
            return Err(Error::Internal(format!(
                "assembled {} inputs for a plan of {}",
                images.len(),
                plan.concat_total
            )));
        }
        let pass = self.net.forward(&images)?;
        let preds = &pass.predictions;
        let labels = |ids: &[usize]| -> Vec<DepthMap> {
            ids.iter().map(|&i| self.source[i].depth.clone()).collect()
        };
        let src = source_loss(
            &self.cfg.loss,
            &preds[..n],
            &preds[n..2 * n],
            &labels(first),
            &labels(second),
        )?;
        let mut dpreds: Vec<Array2<f64>> = Vec::with_capacity(preds.len());
        dpreds.extend(src.grads1);
        dpreds.extend(src.grads2);
        let mut cons_value = 0.0;
        let mut ref_grads = Vec::with_capacity(u);
        let mut view_grads = Vec::with_capacity(u * views);
        for j in 0..u {
            let lo = 2 * n + u + j * views;
            let c = consistency_loss(
                &preds[2 * n + j],
                &preds[lo..lo + views],
                &records[j * views..(j + 1) * views],
                &self.cfg.loss,
            )?;
            cons_value += c.value / u as f64;
            ref_grads.push(c.grad_ref / u as f64);
            view_grads.extend(c.grad_aug.into_iter().map(|g| g / u as f64));
        }
        dpreds.extend(ref_grads);
        dpreds.extend(view_grads);
        let total = total_loss(src.value, cons_value).map_err(|_| {
            self.non_finite(
                src.value,
                cons_value,
                source_idx
                    .iter()
                    .map(|&i| &self.source[i])
                    .chain(target_idx.iter().map(|&i| &self.target[i])),
            )
        })?;
        for g in dpreds.iter_mut() {
            *g *= TOTAL_WEIGHT;
        }
        let grads = self.net.backward(&pass, &dpreds)?;
        let record = StepRecord {
            step: self.step,
            epoch,
            lr,
            forward_batch: images.len(),
            source_loss: src.value,
            consistency_loss: cons_value,
            total,
        };
        Ok((record, grads))
    }

    fn non_finite<'a>(
        &self,
        source_loss: f64,
        consistency_loss: f64,
        samples: impl Iterator<Item = &'a DepthSample>,
    ) -> Error {
        Error::NonFinite {
            step: self.step,
            source_loss,
            consistency_loss,
            batch_ids: samples.map(|s| s.id.clone()).collect(),
        }
    }
}

/// Runs the whole pretraining schedule.
pub fn pretrain(
    source: Vec<DepthSample>,
    cfg: TrainConfig,
    spec: crate::model::ModelSpec,
    run_dir: Option<&Path>,
) -> Result<DepthNet> {
    let net = DepthNet::init(spec, cfg.seeds.model)?;
    let mut trainer = Trainer::pretrain(net, source, cfg)?;
    if let Some(d) = run_dir {
        trainer = trainer.with_run_dir(d)?;
    }
    trainer.run()?;
    Ok(trainer.into_net())
}

/// Runs the whole adaptation schedule from `net`.
pub fn adapt(
    net: DepthNet,
    source: Vec<DepthSample>,
    target: Vec<DepthSample>,
    cfg: TrainConfig,
    run_dir: Option<&Path>,
) -> Result<DepthNet> {
    let mut trainer = Trainer::adapt(net, source, target, cfg)?;
    if let Some(d) = run_dir {
        trainer = trainer.with_run_dir(d)?;
    }
    trainer.run()?;
    Ok(trainer.into_net())
}

/// Per-image mean metrics of `net` on labelled samples.
pub fn evaluate(
    net: &DepthNet,
    samples: &[DepthSample],
    cfg: &EvalConfig,
) -> Result<MetricsReport> {
    if samples.is_empty() {
        return Err(Error::arg("nothing to evaluate"));
    }
    let mut reports = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(16) {
        let images: Vec<Image> = chunk.iter().map(|s| s.image.clone()).collect();
        for (p, s) in net.predict(&images)?.iter().zip(chunk) {
            reports.push(compute_metrics(p, &s.depth, cfg)?);
        }
    }
    MetricsReport::mean(&reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn adapt_defaults() -> TrainConfig {
        TrainConfig {
            lr: 4e-8,
            ..TrainConfig::adapt(&RunConfig::default())
        }
    }

    #[test]
    fn schedule_examples() {
        let c = adapt_defaults();
        assert_eq!(lr_at(&c, 0).unwrap(), 4e-8);
        assert!((lr_at(&c, 7).unwrap() - 2e-8).abs() < 1e-22);
        assert_eq!(lr_at(&c, 10).unwrap(), 0.0);
        assert!(lr_at(&c, 11).is_err());
    }

    #[test]
    fn pretraining_without_decay_is_constant() {
        let c = TrainConfig::pretrain(&RunConfig::default());
        assert_eq!(lr_at(&c, 49).unwrap(), 4e-3);
    }
}

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{total_loss_graph, LossConfig};
use super::optim::{lr_schedule, Adam, AdamConfig};
use crate::geometry::{AttentionCube, FrameMap, Vec3};
use crate::model::AcrModel;
use crate::tensor::{Graph, Tensor, Var};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_decay: f64,
    /// Epochs between decays; 0 keeps the rate constant.
    pub lr_decay_every: usize,
    /// Stops after this many optimizer steps, even mid-epoch.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<u64>,
    /// Epochs between checkpoint writes.
    pub checkpoint_every: usize,
    pub shuffle: bool,
    pub adam: AdamConfig,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 8,
            lr: 1e-4,
            lr_decay: 0.1,
            lr_decay_every: 10,
            max_steps: None,
            checkpoint_every: 1,
            shuffle: true,
            adam: AdamConfig::default(),
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("training.batch_size must be at least 1"));
        }
        if !(self.lr > 0.0) || !(self.lr_decay > 0.0) {
            return Err(Error::config("training.lr and training.lr_decay must be positive"));
        }
        self.loss.validate()
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        lr_schedule(epoch, self.lr, self.lr_decay, self.lr_decay_every)
    }
}

/// One training example in the cube frame.
#[derive(Clone, Debug)]
pub struct Sample {
    /// Preprocessed `[1, S, S]` inputs, main view first.
    pub views: Vec<Tensor>,
    /// `[J, 3]` labels in the cube frame.
    pub target: Tensor,
    /// Labels in world millimetres.
    pub world: Vec<Vec3>,
    pub map: FrameMap,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StepLog {
    pub step: u64,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_mpjpe_mm: Option<f64>,
    pub wall_seconds: f64,
}

/// Position of the shuffling generator: one stream per epoch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: u64,
    pub stream: u64,
    pub word_pos: u128,
}

/// Everything needed to continue training bit-for-bit.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub model: AcrModel,
    pub adam: Adam,
    pub seed: u64,
    /// Completed epochs.
    pub epoch: usize,
}

impl TrainState {
    pub fn new(model: AcrModel, cfg: &TrainConfig, seed: u64) -> Self {
        let adam = Adam::new(model.params(), cfg.lr_at(0), cfg.adam.clone());
        TrainState { model, adam, seed, epoch: 0 }
    }

    pub fn step(&self) -> u64 {
        self.adam.step
    }

    /// Generator state after shuffling the epoch that is currently in progress.
    pub fn rng_state(&self, samples: usize, cfg: &TrainConfig) -> RngState {
        let (_, rng) = epoch_order(self.seed, self.epoch, samples, cfg.shuffle);
        RngState { seed: self.seed, stream: self.epoch as u64, word_pos: rng.get_word_pos() }
    }
}

fn epoch_order(seed: u64, epoch: usize, n: usize, shuffle: bool) -> (Vec<usize>, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        order.shuffle(&mut rng);
    }
    (order, rng)
}

/// Hooks the loop calls; all default to doing nothing.
pub trait TrainObserver {
    fn on_step(&mut self, _log: &StepLog) {}
    fn on_epoch(&mut self, _log: &EpochLog, _state: &TrainState) -> Result<()> {
        Ok(())
    }
    fn should_stop(&self) -> bool {
        false
    }
}

pub struct NoopObserver;
impl TrainObserver for NoopObserver {}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TrainSummary {
    pub steps: u64,
    pub epochs: Vec<EpochLog>,
    pub step_losses: Vec<f64>,
    pub interrupted: bool,
}

/// Mean of per-sample losses over a batch, all in one graph.
pub fn batch_loss(
    g: &mut Graph,
    model: &AcrModel,
    params: &crate::model::Bound,
    batch: &[&Sample],
    cube: &AttentionCube,
    beta: f64,
    loss: &LossConfig,
) -> Result<Var> {
    let mut terms = Vec::with_capacity(batch.len());
    for s in batch {
        let views: Vec<Var> = s.views.iter().map(|v| g.constant(v.clone())).collect();
        let out = model.forward(g, params, &views, cube)?;
        terms.push(total_loss_graph(g, out.joints, &s.target, beta, loss)?);
    }
    let mut total = terms[0];
    for &t in &terms[1..] {
        total = g.add(total, t)?;
    }
    g.scale(total, 1.0 / batch.len() as f64)
}

/// Loss of the current parameters over a whole set, averaged per sample.
pub fn dataset_loss(model: &AcrModel, data: &[Sample], cube: &AttentionCube, cfg: &TrainConfig) -> Result<f64> {
    let beta = cfg.loss.beta_for(cube.mode);
    let mut total = 0.0;
    for chunk in data.chunks(cfg.batch_size) {
        let mut g = Graph::new();
        let p = model.params().bind_frozen(&mut g);
        let refs: Vec<&Sample> = chunk.iter().collect();
        let l = batch_loss(&mut g, model, &p, &refs, cube, beta, &cfg.loss)?;
        total += g.value(l).item() * chunk.len() as f64;
    }
    Ok(total / data.len() as f64)
}

/// Mean per-joint position error in millimetres after mapping predictions to world.
pub fn dataset_mpjpe(model: &AcrModel, data: &[Sample], cube: &AttentionCube) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for s in data {
        let (est, _) = model.predict(&s.views, cube)?;
        for (p, q) in est.joints.iter().zip(&s.world) {
            let w = s.map.to_world(*p)?;
            total += crate::geometry::norm(crate::geometry::sub(w, *q));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

pub struct Trainer<'a> {
    pub cfg: &'a TrainConfig,
    pub cube: &'a AttentionCube,
    pub state: TrainState,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: &'a TrainConfig, cube: &'a AttentionCube, state: TrainState) -> Self {
        Trainer { cfg, cube, state }
    }

    fn batches_per_epoch(&self, n: usize) -> u64 {
        n.div_ceil(self.cfg.batch_size) as u64
    }

    /// Runs until `cfg.epochs` complete, `max_steps` is hit, or the observer asks
    /// to stop. A non-finite value rolls the state back to the last completed
    /// epoch and returns a numerical abort.
    pub fn run(
        &mut self,
        train: &[Sample],
        val: Option<&[Sample]>,
        observer: &mut dyn TrainObserver,
    ) -> Result<TrainSummary> {
        if train.is_empty() {
            return Err(Error::contract("training set is empty"));
        }
        self.cfg.validate()?;
        let beta = self.cfg.loss.beta_for(self.cube.mode);
        let bpe = self.batches_per_epoch(train.len());
        let mut summary = TrainSummary::default();
        let mut last_good = self.state.clone();

        while self.state.epoch < self.cfg.epochs {
            let epoch = self.state.epoch;
            let started = Instant::now();
            let lr = self.cfg.lr_at(epoch);
            self.state.adam.lr = lr;
            let (order, _) = epoch_order(self.state.seed, epoch, train.len(), self.cfg.shuffle);
            let done_in_epoch = (self.state.step() - epoch as u64 * bpe) as usize;
            let mut losses = Vec::new();
            let mut stopped = false;
            for chunk in order.chunks(self.cfg.batch_size).skip(done_in_epoch) {
                if self.cfg.max_steps.is_some_and(|m| self.state.step() >= m) || observer.should_stop() {
                    stopped = true;
                    summary.interrupted = observer.should_stop();
                    break;
                }
                let step_result = self.step(train, chunk, beta);
                let loss = match step_result {
                    Ok(l) => l,
                    Err(e @ (Error::NonFinite { .. } | Error::NumericalAbort { .. })) => {
                        let step = self.state.step() + 1;
                        self.state = last_good;
                        return Err(Error::NumericalAbort { epoch, step, cause: e.to_string() });
                    }
                    Err(e) => return Err(e),
                };
                let log = StepLog { step: self.state.step(), epoch, lr, loss };
                observer.on_step(&log);
                summary.step_losses.push(loss);
                losses.push(loss);
            }
            if stopped {
                break;
            }
            self.state.epoch += 1;
            let val_mpjpe_mm = match val {
                Some(v) if !v.is_empty() => Some(dataset_mpjpe(&self.state.model, v, self.cube)?),
                _ => None,
            };
            let log = EpochLog {
                epoch,
                lr,
                train_loss: losses.iter().sum::<f64>() / losses.len().max(1) as f64,
                val_mpjpe_mm,
                wall_seconds: started.elapsed().as_secs_f64(),
            };
            summary.epochs.push(log);
            observer.on_epoch(&log, &self.state)?;
            last_good = self.state.clone();
        }
        summary.steps = self.state.step();
        Ok(summary)
    }

    fn step(&mut self, train: &[Sample], chunk: &[usize], beta: f64) -> Result<f64> {
        let model = &self.state.model;
        let mut g = Graph::new();
        let p = model.params().bind(&mut g);
        let batch: Vec<&Sample> = chunk.iter().map(|&i| &train[i]).collect();
        let loss = batch_loss(&mut g, model, &p, &batch, self.cube, beta, &self.cfg.loss)?;
        let value = g.value(loss).item();
        g.backward(loss)?;
        let grads = p.grad_options(&g);
        if grads.iter().flatten().any(|t| !t.all_finite()) {
            return Err(Error::NonFinite { op: "backward" });
        }
        let params = self.state.model.params_mut();
        self.state.adam.update(params, &grads)?;
        if params.iter().any(|(_, _, t)| !t.all_finite()) {
            return Err(Error::NonFinite { op: "adam" });
        }
        Ok(value)
    }
}

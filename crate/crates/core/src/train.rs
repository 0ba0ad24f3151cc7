//! The training loop: adaptive, constant-weight, and single-task modes.
//!
//! An adaptive step runs three backward passes on one graph: one per task
//! loss to measure gradient norms over the encoder (cleared in between), and
//! one through the blended total so the model and the weighting network
//! update together. Constant mode runs a single backward pass and never
//! touches the adaptive machinery; single-task mode is constant mode with
//! the classification weight pinned to zero.
//!
//! Every source of randomness is derived from the run seed: model and
//! weighting init, one dropout stream per global step, and one shuffle per
//! epoch, so a run is reproducible and a restored checkpoint continues
//! bit-for-bit.

use alloc::format;
use alloc::vec::Vec;

use crate::dao::DaoModule;
use crate::data::{epoch_batches, Dataset, Tokenizer};
use crate::error::{Error, Result};
use crate::graph::Tape;
use crate::losses::{self, NUM_CLASSES};
use crate::metrics::{argmax, regression_metrics, ConfusionMatrix, RegressionMetrics};
use crate::model::{Model, ModelConfig, ENCODER_PREFIX};
use crate::nn::{Binder, GradientMap, Mode};
use crate::optim::{Adam, AdamConfig, LrSchedule};
use crate::rng::{derive_seed, stream, Rng};
use crate::tensor::Tensor;

/// How the two task losses are blended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    /// Gradient-norm balancing plus the learned softmax task weights.
    Dao,
    /// Fixed `(w_r, w_c)` from the configuration.
    Constant,
    /// Regression only: constant mode with weights `(1, 0)`.
    SingleTask,
}

/// Which parameters the per-task gradient norms are measured over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradScope {
    /// Encoder parameters only (the shared trunk).
    Trunk,
    /// Every trainable model parameter.
    All,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub mode: TrainMode,
    /// Constant-mode task weights; ignored in the other modes.
    pub w_r: f64,
    pub w_c: f64,
    pub epochs: u64,
    pub batch_size: usize,
    pub base_lr: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub warmup_steps: u64,
    /// Learning rate of the weighting network and knobs (not scheduled).
    pub dao_lr: f64,
    pub seed: u64,
    pub grad_norm_scope: GradScope,
    /// Clamp predicted scores to `[-1, 1]` before computing regression
    /// metrics. The model itself never clamps.
    pub eval_clamp: bool,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::Dao,
            w_r: 0.9,
            w_c: 0.1,
            epochs: 100,
            batch_size: 10,
            base_lr: 1e-5,
            eps: 1e-8,
            weight_decay: 0.01,
            warmup_steps: 100,
            dao_lr: 1e-3,
            seed: 42,
            grad_norm_scope: GradScope::Trunk,
            eval_clamp: false,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch size 0".into()));
        }
        for (name, rate) in [
            ("base_lr", self.base_lr),
            ("dao_lr", self.dao_lr),
            ("eps", self.eps),
        ] {
            if !(rate > 0.0) || !rate.is_finite() {
                return Err(Error::Config(format!("{name} {rate} must be > 0")));
            }
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "weight decay {} must be >= 0",
                self.weight_decay
            )));
        }
        if self.mode == TrainMode::Constant {
            if !(self.w_r >= 0.0) || !(self.w_c >= 0.0) || (self.w_r + self.w_c - 1.0).abs() > 1e-9
            {
                return Err(Error::Config(format!(
                    "constant weights ({}, {}) must be non-negative and sum to 1",
                    self.w_r, self.w_c
                )));
            }
        }
        Ok(())
    }

    /// The weights a constant-family step blends with.
    fn constant_weights(&self) -> (f64, f64) {
        match self.mode {
            TrainMode::SingleTask => (1.0, 0.0),
            _ => (self.w_r, self.w_c),
        }
    }

    /// Optimizer settings for the model (decoupled weight decay).
    pub fn model_adam(&self) -> AdamConfig {
        AdamConfig {
            eps: self.eps,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }

    /// Optimizer settings for the weighting network and knobs.
    pub fn dao_adam(&self) -> AdamConfig {
        AdamConfig {
            eps: self.eps,
            ..AdamConfig::default()
        }
    }
}

/// One tokenized training batch.
#[derive(Debug, Clone)]
pub struct BatchData {
    pub tokens: Vec<Vec<u32>>,
    pub scores: Vec<f64>,
    pub labels: Vec<usize>,
}

/// Per-step log record. In the constant family the balance coefficients are
/// recorded as 1 and the adaptive-only fields are NaN.
#[derive(Debug, Clone, Copy)]
pub struct StepRecord {
    pub epoch: u64,
    pub batch: u64,
    pub lambda_r: f64,
    pub lambda_c: f64,
    pub w_r: f64,
    pub w_c: f64,
    pub loss_r: f64,
    pub loss_c: f64,
    pub loss_imb: f64,
    pub loss_mtl: f64,
    pub alpha: f64,
    pub beta: f64,
    pub lr: f64,
    /// The step was rejected (non-finite values); parameters kept.
    pub aborted: bool,
}

/// Values that feed the independent recomputation oracles in tests.
#[derive(Debug, Clone, Copy)]
pub struct StepTrace {
    pub norm_r: f64,
    pub norm_c: f64,
    pub l_ck: [f64; NUM_CLASSES],
    pub counts: [usize; NUM_CLASSES],
}

/// Evaluation result over a whole dataset.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub regression: RegressionMetrics,
    pub confusion: ConfusionMatrix,
}

/// Owns the model, the weighting module, both optimizers, and the step
/// counters.
#[derive(Clone)]
pub struct Trainer {
    pub model: Model,
    pub dao: DaoModule,
    cfg: TrainConfig,
    tokenizer: Tokenizer,
    schedule: LrSchedule,
    model_opt: Adam,
    dao_opt: Adam,
    epoch: u64,
    global_step: u64,
    consecutive_aborts: u32,
    dao_invocations: u64,
}

const MAX_CONSECUTIVE_ABORTS: u32 = 3;

impl Trainer {
    /// Build a trainer for a training set of `train_len` examples (used to
    /// size the learning-rate schedule; warmup is clipped to the run
    /// length).
    pub fn new(cfg: TrainConfig, train_len: usize) -> Result<Self> {
        cfg.validate()?;
        let mut init_rng = Rng::seeded(cfg.seed, stream::INIT);
        let model = Model::init(cfg.model, &mut init_rng)?;
        let dao = DaoModule::init(&mut init_rng)?;
        let steps_per_epoch = if train_len == 0 {
            0
        } else {
            (train_len + cfg.batch_size - 1) / cfg.batch_size
        };
        let total_steps = (cfg.epochs * steps_per_epoch as u64).max(1);
        let schedule = LrSchedule::new(cfg.base_lr, cfg.warmup_steps.min(total_steps), total_steps)?;
        let model_opt = Adam::new(cfg.model_adam())?;
        let dao_opt = Adam::new(cfg.dao_adam())?;
        Ok(Self {
            model,
            dao,
            cfg,
            tokenizer: Tokenizer::new(cfg.model.vocab_size)?,
            schedule,
            model_opt,
            dao_opt,
            epoch: 0,
            global_step: 0,
            consecutive_aborts: 0,
            dao_invocations: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn tokenizer(&self) -> &Tokenizer {
        &self.tokenizer
    }

    pub fn schedule(&self) -> &LrSchedule {
        &self.schedule
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn global_step(&self) -> u64 {
        self.global_step
    }

    pub fn consecutive_aborts(&self) -> u32 {
        self.consecutive_aborts
    }

    /// How many times the adaptive machinery ran; stays 0 in the constant
    /// family.
    pub fn dao_invocations(&self) -> u64 {
        self.dao_invocations
    }

    pub fn optimizer_states(
        &self,
    ) -> (
        (u64, f64, f64, Vec<(alloc::string::String, Vec<f64>, Vec<f64>)>),
        (u64, f64, f64, Vec<(alloc::string::String, Vec<f64>, Vec<f64>)>),
    ) {
        (self.model_opt.state(), self.dao_opt.state())
    }

    /// Restore progress counters and optimizer states from a checkpoint.
    /// Parameter tensors are restored by mutating `model.params` and
    /// `dao.params` directly.
    pub fn restore_progress(
        &mut self,
        epoch: u64,
        global_step: u64,
        consecutive_aborts: u32,
        dao_invocations: u64,
        model_opt: Adam,
        dao_opt: Adam,
    ) {
        self.epoch = epoch;
        self.global_step = global_step;
        self.consecutive_aborts = consecutive_aborts;
        self.dao_invocations = dao_invocations;
        self.model_opt = model_opt;
        self.dao_opt = dao_opt;
    }

    /// Tokenize the examples at `idx`.
    pub fn make_batch(&self, data: &Dataset, idx: &[usize]) -> BatchData {
        let mut tokens = Vec::with_capacity(idx.len());
        let mut scores = Vec::with_capacity(idx.len());
        let mut labels = Vec::with_capacity(idx.len());
        for &i in idx {
            let e = data.get(i);
            tokens.push(self.tokenizer.encode(&e.text));
            scores.push(e.score);
            labels.push(e.label);
        }
        BatchData {
            tokens,
            scores,
            labels,
        }
    }

    /// One full epoch: seeded shuffle, one step per batch. Advances the
    /// epoch counter.
    pub fn train_epoch(&mut self, data: &Dataset) -> Result<Vec<StepRecord>> {
        let batches = epoch_batches(data.len(), self.cfg.batch_size, self.cfg.seed, self.epoch)?;
        let mut records = Vec::with_capacity(batches.len());
        for (bi, idx) in batches.iter().enumerate() {
            let batch = self.make_batch(data, idx);
            records.push(self.step(&batch, bi as u64)?);
        }
        self.epoch += 1;
        Ok(records)
    }

    /// One optimization step. A step whose values go non-finite is rejected:
    /// parameters stay as they were, the record carries the NaNs, and the
    /// run fails outright after three rejections in a row.
    pub fn step(&mut self, batch: &BatchData, batch_index: u64) -> Result<StepRecord> {
        Ok(self.step_traced(batch, batch_index)?.0)
    }

    /// [`Trainer::step`] plus the intermediate values oracles recompute from.
    pub fn step_traced(
        &mut self,
        batch: &BatchData,
        batch_index: u64,
    ) -> Result<(StepRecord, StepTrace)> {
        if batch.tokens.is_empty()
            || batch.tokens.len() != batch.scores.len()
            || batch.tokens.len() != batch.labels.len()
        {
            return Err(Error::Contract(format!(
                "batch with {} token rows, {} scores, {} labels",
                batch.tokens.len(),
                batch.scores.len(),
                batch.labels.len()
            )));
        }
        let out = match self.try_step(batch, batch_index) {
            Ok(out) => out,
            Err(Error::Numeric(_)) | Err(Error::Domain(_)) => {
                self.consecutive_aborts += 1;
                let record = self.abort_record(batch_index);
                self.global_step += 1;
                if self.consecutive_aborts >= MAX_CONSECUTIVE_ABORTS {
                    return Err(Error::Numeric(format!(
                        "{MAX_CONSECUTIVE_ABORTS} consecutive non-finite steps; training halted"
                    )));
                }
                return Ok((record, StepTrace {
                    norm_r: f64::NAN,
                    norm_c: f64::NAN,
                    l_ck: [f64::NAN; NUM_CLASSES],
                    counts: [0; NUM_CLASSES],
                }));
            }
            Err(e) => return Err(e),
        };
        self.consecutive_aborts = 0;
        self.global_step += 1;
        Ok(out)
    }

    fn abort_record(&self, batch_index: u64) -> StepRecord {
        StepRecord {
            epoch: self.epoch,
            batch: batch_index,
            lambda_r: f64::NAN,
            lambda_c: f64::NAN,
            w_r: f64::NAN,
            w_c: f64::NAN,
            loss_r: f64::NAN,
            loss_c: f64::NAN,
            loss_imb: f64::NAN,
            loss_mtl: f64::NAN,
            alpha: self.dao.alpha(),
            beta: self.dao.beta(),
            lr: self.schedule.lr_at(self.global_step),
            aborted: true,
        }
    }

    fn try_step(&mut self, batch: &BatchData, batch_index: u64) -> Result<(StepRecord, StepTrace)> {
        let lr = self.schedule.lr_at(self.global_step);
        let mut drop_rng = Rng::seeded(
            derive_seed(self.cfg.seed, self.global_step),
            stream::DROPOUT,
        );
        let tape = Tape::new();
        let mut binder = Binder::new(&self.model.params);
        let heads = self
            .model
            .forward(&tape, &mut binder, &batch.tokens, Mode::Train, &mut drop_rng)?;
        let l_r = losses::mse_loss(&tape, &heads.scores, &batch.scores)?;
        let per_class = losses::cross_entropy_per_class(&heads.logits, &batch.labels)?;
        let l_c = per_class.mean.clone();

        match self.cfg.mode {
            TrainMode::Dao => {
                self.dao_invocations += 1;
                let scope: fn(&str) -> bool = match self.cfg.grad_norm_scope {
                    GradScope::Trunk => |name| name.starts_with(ENCODER_PREFIX),
                    GradScope::All => |_| true,
                };
                tape.backward(&l_r)?;
                let norm_r = crate::math::sqrt(binder.grad_sq_sum_where(scope));
                tape.zero_grads();
                tape.backward(&l_c)?;
                let norm_c = crate::math::sqrt(binder.grad_sq_sum_where(scope));
                tape.zero_grads();

                let stats = losses::class_stats(&batch.labels)?;
                let alpha = self.dao.alpha();
                let beta = self.dao.beta();
                let l_imb = losses::imbalance_loss(&per_class.per_class, &stats, alpha, beta)?;
                let coeffs = losses::balance_coeffs(norm_r, norm_c)?;

                let in_r = l_r.scale(coeffs.lambda_r);
                let in_c = l_imb.scale(coeffs.lambda_c);
                let mut dao_binder = Binder::new(&self.dao.params);
                let weights = self.dao.forward(&tape, &mut dao_binder, &in_r, &in_c)?;
                let (w_r_val, w_c_val) = (weights.w_r.item(), weights.w_c.item());
                let l_mtl = losses::combine_weighted(
                    &l_r,
                    &l_imb,
                    coeffs.lambda_r,
                    coeffs.lambda_c,
                    &weights.w_r,
                    &weights.w_c,
                )?;

                tape.backward(&l_mtl)?;
                let model_grads = binder.grads();
                let mut dao_grads = dao_binder.grads();
                let mut l_ck = [0.0; NUM_CLASSES];
                for k in stats.present() {
                    l_ck[k] = per_class.per_class[k].as_ref().expect("present").item();
                }
                let v = losses::class_weights(&stats, beta);
                let d_alpha = losses::alpha_grad(coeffs.lambda_c, w_c_val, &v, &stats);
                let d_beta =
                    losses::beta_grad(coeffs.lambda_c, w_c_val, &stats, &l_ck, alpha, beta);
                dao_grads.insert(crate::dao::ALPHA_NAME, Tensor::scalar(d_alpha));
                dao_grads.insert(crate::dao::BETA_NAME, Tensor::scalar(d_beta));

                let values = [
                    l_r.item(),
                    l_c.item(),
                    l_imb.item(),
                    l_mtl.item(),
                    norm_r,
                    norm_c,
                    w_r_val,
                    w_c_val,
                ];
                if values.iter().any(|x| !x.is_finite())
                    || !grads_finite(&model_grads)
                    || !grads_finite(&dao_grads)
                {
                    return Err(Error::Numeric("non-finite step values".into()));
                }

                self.model_opt.step(&mut self.model.params, &model_grads, lr)?;
                self.dao_opt.step(&mut self.dao.params, &dao_grads, self.cfg.dao_lr)?;
                self.dao.clamp_knobs();

                let mut counts = [0; NUM_CLASSES];
                for k in 0..NUM_CLASSES {
                    counts[k] = stats.count(k);
                }
                Ok((
                    StepRecord {
                        epoch: self.epoch,
                        batch: batch_index,
                        lambda_r: coeffs.lambda_r,
                        lambda_c: coeffs.lambda_c,
                        w_r: w_r_val,
                        w_c: w_c_val,
                        loss_r: values[0],
                        loss_c: values[1],
                        loss_imb: values[2],
                        loss_mtl: values[3],
                        alpha,
                        beta,
                        lr,
                        aborted: false,
                    },
                    StepTrace {
                        norm_r,
                        norm_c,
                        l_ck,
                        counts,
                    },
                ))
            }
            TrainMode::Constant | TrainMode::SingleTask => {
                let (w_r, w_c) = self.cfg.constant_weights();
                let l_mtl = l_r.scale(w_r).add(&l_c.scale(w_c))?;
                tape.backward(&l_mtl)?;
                let model_grads = binder.grads();
                let values = [l_r.item(), l_c.item(), l_mtl.item()];
                if values.iter().any(|x| !x.is_finite()) || !grads_finite(&model_grads) {
                    return Err(Error::Numeric("non-finite step values".into()));
                }
                self.model_opt.step(&mut self.model.params, &model_grads, lr)?;
                Ok((
                    StepRecord {
                        epoch: self.epoch,
                        batch: batch_index,
                        lambda_r: 1.0,
                        lambda_c: 1.0,
                        w_r,
                        w_c,
                        loss_r: values[0],
                        loss_c: values[1],
                        loss_imb: f64::NAN,
                        loss_mtl: values[2],
                        alpha: f64::NAN,
                        beta: f64::NAN,
                        lr,
                        aborted: false,
                    },
                    StepTrace {
                        norm_r: f64::NAN,
                        norm_c: f64::NAN,
                        l_ck: [f64::NAN; NUM_CLASSES],
                        counts: [0; NUM_CLASSES],
                    },
                ))
            }
        }
    }

    /// Dropout-free metrics over a whole dataset; the predicted class is the
    /// argmax of the logits.
    pub fn evaluate(&self, data: &Dataset) -> Result<EvalReport> {
        let n = data.len();
        let mut scores = Vec::with_capacity(n);
        let mut targets = Vec::with_capacity(n);
        let mut preds = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        let idx: Vec<usize> = (0..n).collect();
        for chunk in idx.chunks(self.cfg.batch_size.max(1)) {
            let batch = self.make_batch(data, chunk);
            let tape = Tape::new();
            let mut binder = Binder::new(&self.model.params);
            let mut rng = Rng::seeded(0, stream::DROPOUT);
            let heads =
                self.model
                    .forward(&tape, &mut binder, &batch.tokens, Mode::Eval, &mut rng)?;
            scores.extend_from_slice(heads.scores.value().data());
            let logits = heads.logits.value();
            for row in 0..batch.tokens.len() {
                let start = row * NUM_CLASSES;
                preds.push(argmax(&logits.data()[start..start + NUM_CLASSES]));
            }
            targets.extend_from_slice(&batch.scores);
            labels.extend_from_slice(&batch.labels);
        }
        if self.cfg.eval_clamp {
            for s in &mut scores {
                *s = s.clamp(-1.0, 1.0);
            }
        }
        Ok(EvalReport {
            regression: regression_metrics(&scores, &targets)?,
            confusion: ConfusionMatrix::from_pairs(&labels, &preds)?,
        })
    }
}

fn grads_finite(grads: &GradientMap) -> bool {
    grads.iter().all(|(_, g)| g.is_finite())
}

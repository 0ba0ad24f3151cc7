//! Desk-scale text model: hashing-embedding encoder with two linear trunk
//! layers (tanh between), a two-layer sigmoid regression head emitting one
//! polarity score per sample, and a two-layer classification head with
//! dropout emitting five logits per sample.
//!
//! With `lora_rank` set, the trunk linears are wrapped in low-rank adapters
//! and the whole encoder (embedding included) is frozen; only the adapters,
//! the heads, and the weighting module keep training. All widths are
//! configuration values, so larger geometries remain expressible.

use alloc::format;
use alloc::vec::Vec;

use crate::data::PAD_ID;
use crate::error::{Error, Result};
use crate::graph::{Tape, Var};
use crate::losses::NUM_CLASSES;
use crate::nn::{Binder, DropoutLayer, LinearLayer, LoraLinear, Mode, ParameterStore};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Parameter-name prefix of the encoder (embedding plus trunk); gradient
/// norms for task balancing are measured over this scope by default.
pub const ENCODER_PREFIX: &str = "enc.";

/// Adapter ranks accepted by configuration. Whether a rank actually fits a
/// layer is checked against that layer's dimensions when the adapter is
/// built.
pub const ALLOWED_LORA_RANKS: [usize; 8] = [8, 16, 32, 64, 128, 256, 384, 512];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_embed: usize,
    pub d_hidden: usize,
    pub d_mid: usize,
    /// Dropout rate of the classification head's two dropout layers.
    pub dropout: f64,
    /// `Some(r)` wraps the trunk linears in rank-`r` adapters and freezes
    /// the encoder.
    pub lora_rank: Option<usize>,
    /// Dropout on the adapter branch input.
    pub adapter_dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 32768,
            d_embed: 64,
            d_hidden: 64,
            d_mid: 32,
            dropout: 0.1,
            lora_rank: None,
            adapter_dropout: 0.05,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 || self.d_embed == 0 || self.d_hidden == 0 || self.d_mid == 0 {
            return Err(Error::Config(format!("degenerate model geometry {self:?}")));
        }
        if let Some(rank) = self.lora_rank {
            if !ALLOWED_LORA_RANKS.contains(&rank) {
                return Err(Error::Config(format!(
                    "adapter rank {rank} not one of {ALLOWED_LORA_RANKS:?}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone)]
enum TrunkLayer {
    Plain(LinearLayer),
    Adapted(LoraLinear),
}

impl TrunkLayer {
    fn forward(
        &self,
        tape: &Tape,
        binder: &mut Binder,
        x: &Var,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<Var> {
        match self {
            TrunkLayer::Plain(l) => l.forward(tape, binder, x),
            TrunkLayer::Adapted(l) => l.forward(tape, binder, x, mode, rng),
        }
    }
}

/// Both heads' outputs for one batch.
pub struct Heads {
    /// Polarity scores, shape `(batch)`. Unbounded by construction; the
    /// architecture does not clamp them.
    pub scores: Var,
    /// Classification logits, shape `(batch, 5)`.
    pub logits: Var,
}

#[derive(Clone)]
pub struct Model {
    pub params: ParameterStore,
    cfg: ModelConfig,
    trunk1: TrunkLayer,
    trunk2: TrunkLayer,
    reg1: LinearLayer,
    reg2: LinearLayer,
    cls1: LinearLayer,
    cls2: LinearLayer,
    dp1: DropoutLayer,
    dp2: DropoutLayer,
}

impl Model {
    pub fn init(cfg: ModelConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParameterStore::new();
        let embed: Vec<f64> = (0..cfg.vocab_size * cfg.d_embed)
            .map(|_| rng.normal(0.0, 0.02))
            .collect();
        params.insert(
            "enc.embed",
            Tensor::new(alloc::vec![cfg.vocab_size, cfg.d_embed], embed)?,
        )?;
        let fc1 = LinearLayer::init(&mut params, "enc.fc1", cfg.d_embed, cfg.d_hidden, rng)?;
        let fc2 = LinearLayer::init(&mut params, "enc.fc2", cfg.d_hidden, cfg.d_hidden, rng)?;
        let (trunk1, trunk2) = match cfg.lora_rank {
            None => (TrunkLayer::Plain(fc1), TrunkLayer::Plain(fc2)),
            Some(rank) => {
                let a1 = LoraLinear::wrap(&mut params, fc1, "enc.fc1", rank, cfg.adapter_dropout, rng)?;
                let a2 = LoraLinear::wrap(&mut params, fc2, "enc.fc2", rank, cfg.adapter_dropout, rng)?;
                (TrunkLayer::Adapted(a1), TrunkLayer::Adapted(a2))
            }
        };
        let reg1 = LinearLayer::init(&mut params, "reg.fc1", cfg.d_hidden, cfg.d_mid, rng)?;
        let reg2 = LinearLayer::init(&mut params, "reg.fc2", cfg.d_mid, 1, rng)?;
        let cls1 = LinearLayer::init(&mut params, "cls.fc1", cfg.d_hidden, cfg.d_mid, rng)?;
        let cls2 = LinearLayer::init(&mut params, "cls.fc2", cfg.d_mid, NUM_CLASSES, rng)?;
        if cfg.lora_rank.is_some() {
            // Adapter mode: the whole encoder freezes, then the adapter
            // matrices thaw. Heads stay trainable.
            params.set_trainable("enc.*", false);
            params.set_trainable("enc.fc1.lora_*", true);
            params.set_trainable("enc.fc2.lora_*", true);
        }
        Ok(Self {
            params,
            cfg,
            trunk1,
            trunk2,
            reg1,
            reg2,
            cls1,
            cls2,
            dp1: DropoutLayer::new(cfg.dropout)?,
            dp2: DropoutLayer::new(cfg.dropout)?,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    /// Mean-pooled embeddings pushed through the trunk; `(batch, d_hidden)`.
    /// A row with no tokens falls back to the reserved padding row.
    pub fn encode(
        &self,
        tape: &Tape,
        binder: &mut Binder,
        tokens: &[Vec<u32>],
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<Var> {
        let rows: Vec<Vec<u32>> = tokens
            .iter()
            .map(|r| {
                if r.is_empty() {
                    alloc::vec![PAD_ID]
                } else {
                    r.clone()
                }
            })
            .collect();
        let table = binder.var(tape, "enc.embed")?;
        let pooled = table.embed_mean_pool(&rows)?;
        let h = self.trunk1.forward(tape, binder, &pooled, mode, rng)?.tanh();
        self.trunk2.forward(tape, binder, &h, mode, rng)
    }

    /// Regression head: `LL2(sigmoid(LL1(h)))`, squeezed to shape `(batch)`.
    pub fn regress(&self, tape: &Tape, binder: &mut Binder, h: &Var) -> Result<Var> {
        let n = h.shape()[0];
        let s = self.reg1.forward(tape, binder, h)?.sigmoid();
        self.reg2.forward(tape, binder, &s)?.reshape(alloc::vec![n])
    }

    /// Classification head: dropout, linear, tanh, dropout, linear; `(batch, 5)`.
    pub fn classify(
        &self,
        tape: &Tape,
        binder: &mut Binder,
        h: &Var,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<Var> {
        let x = self.dp1.forward(tape, h, mode, rng)?;
        let x = self.cls1.forward(tape, binder, &x)?.tanh();
        let x = self.dp2.forward(tape, &x, mode, rng)?;
        self.cls2.forward(tape, binder, &x)
    }

    /// Encoder plus both heads.
    pub fn forward(
        &self,
        tape: &Tape,
        binder: &mut Binder,
        tokens: &[Vec<u32>],
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<Heads> {
        let h = self.encode(tape, binder, tokens, mode, rng)?;
        let scores = self.regress(tape, binder, &h)?;
        let logits = self.classify(tape, binder, &h, mode, rng)?;
        Ok(Heads { scores, logits })
    }
}

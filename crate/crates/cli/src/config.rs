//! Flat `key = value` run configuration.
//!
//! One assignment per line, `#` starts a comment. Every key has a default
//! except the data source: exactly one of `data` (a corpus file) or the
//! `synth_*` trio must be present. `to_text` emits the canonical form that
//! `parse` round-trips exactly; checkpoints embed that canonical text so a
//! resumed run can prove it was launched with the same configuration.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use daomix::model::ModelConfig;
use daomix::train::{GradScope, TrainConfig, TrainMode};

use crate::error::{CliError, Result};

pub const NUM_CLASSES: usize = daomix::losses::NUM_CLASSES;

/// Where the corpus comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// A JSONL or CSV corpus file.
    Path(String),
    /// Generated on the fly; the generator seed is the run seed.
    Synth {
        n: usize,
        mix: [f64; NUM_CLASSES],
        noise: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub data: DataSource,
    pub val_fraction: f64,
    /// Save `checkpoint-epoch-<e>.bin` every this many epochs; 0 keeps only
    /// the final `checkpoint.bin`.
    pub checkpoint_every: u64,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate().map_err(CliError::from)?;
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(CliError::Data(format!(
                "val_fraction {} outside (0, 1)",
                self.val_fraction
            )));
        }
        if let DataSource::Synth { n, mix, noise } = &self.data {
            if *n == 0 {
                return Err(CliError::Data("synth_n must be positive".into()));
            }
            if mix.iter().any(|m| !(*m >= 0.0) || !m.is_finite()) {
                return Err(CliError::Data(format!("synth_mix {mix:?} must be non-negative")));
            }
            if !(0.0..=1.0).contains(noise) {
                return Err(CliError::Data(format!("synth_noise {noise} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        parse(&text)
    }

    /// Canonical serialization; `parse(to_text(c)) == c`.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let m = &t.model;
        let mut s = String::new();
        let _ = writeln!(s, "mode = {}", mode_name(t.mode));
        let _ = writeln!(s, "w_r = {}", t.w_r);
        let _ = writeln!(s, "w_c = {}", t.w_c);
        let _ = writeln!(s, "epochs = {}", t.epochs);
        let _ = writeln!(s, "batch_size = {}", t.batch_size);
        let _ = writeln!(s, "base_lr = {}", t.base_lr);
        let _ = writeln!(s, "eps = {}", t.eps);
        let _ = writeln!(s, "weight_decay = {}", t.weight_decay);
        let _ = writeln!(s, "warmup_steps = {}", t.warmup_steps);
        let _ = writeln!(s, "dao_lr = {}", t.dao_lr);
        let _ = writeln!(s, "seed = {}", t.seed);
        let _ = writeln!(s, "grad_norm_scope = {}", scope_name(t.grad_norm_scope));
        let _ = writeln!(s, "eval_clamp = {}", t.eval_clamp);
        let _ = writeln!(s, "vocab_size = {}", m.vocab_size);
        let _ = writeln!(s, "d_embed = {}", m.d_embed);
        let _ = writeln!(s, "d_hidden = {}", m.d_hidden);
        let _ = writeln!(s, "d_mid = {}", m.d_mid);
        let _ = writeln!(s, "dropout = {}", m.dropout);
        match m.lora_rank {
            Some(r) => {
                let _ = writeln!(s, "lora_rank = {r}");
            }
            None => {
                let _ = writeln!(s, "lora_rank = off");
            }
        }
        let _ = writeln!(s, "adapter_dropout = {}", m.adapter_dropout);
        match &self.data {
            DataSource::Path(p) => {
                let _ = writeln!(s, "data = {p}");
            }
            DataSource::Synth { n, mix, noise } => {
                let _ = writeln!(s, "synth_n = {n}");
                let _ = writeln!(s, "synth_mix = {}", join_floats(mix));
                let _ = writeln!(s, "synth_noise = {noise}");
            }
        }
        let _ = writeln!(s, "val_fraction = {}", self.val_fraction);
        let _ = writeln!(s, "checkpoint_every = {}", self.checkpoint_every);
        s
    }
}

pub fn mode_name(mode: TrainMode) -> &'static str {
    match mode {
        TrainMode::Dao => "dao",
        TrainMode::Constant => "constant",
        TrainMode::SingleTask => "single_task",
    }
}

pub fn parse_mode(s: &str) -> Result<TrainMode> {
    match s.replace('-', "_").as_str() {
        "dao" => Ok(TrainMode::Dao),
        "constant" => Ok(TrainMode::Constant),
        "single_task" => Ok(TrainMode::SingleTask),
        other => Err(CliError::Data(format!(
            "mode {other:?} is not dao, constant, or single_task"
        ))),
    }
}

pub fn scope_name(scope: GradScope) -> &'static str {
    match scope {
        GradScope::Trunk => "trunk",
        GradScope::All => "all",
    }
}

pub fn parse_scope(s: &str) -> Result<GradScope> {
    match s {
        "trunk" => Ok(GradScope::Trunk),
        "all" => Ok(GradScope::All),
        other => Err(CliError::Data(format!(
            "grad_norm_scope {other:?} is not trunk or all"
        ))),
    }
}

pub fn parse_mix(s: &str) -> Result<[f64; NUM_CLASSES]> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != NUM_CLASSES {
        return Err(CliError::Data(format!(
            "mix needs {NUM_CLASSES} comma-separated numbers, got {}",
            parts.len()
        )));
    }
    let mut mix = [0.0; NUM_CLASSES];
    for (slot, part) in mix.iter_mut().zip(&parts) {
        *slot = parse_f64("synth_mix", part)?;
    }
    Ok(mix)
}

fn join_floats(xs: &[f64]) -> String {
    xs.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.parse()
        .map_err(|_| CliError::Data(format!("{key}: {v:?} is not a number")))
}

fn parse_u64(key: &str, v: &str) -> Result<u64> {
    v.parse()
        .map_err(|_| CliError::Data(format!("{key}: {v:?} is not a non-negative integer")))
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.parse()
        .map_err(|_| CliError::Data(format!("{key}: {v:?} is not a non-negative integer")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(CliError::Data(format!("{key}: {v:?} is not true or false"))),
    }
}

pub fn parse(text: &str) -> Result<RunConfig> {
    let mut train = TrainConfig::default();
    let mut model = ModelConfig::default();
    let mut data: Option<DataSource> = None;
    let mut synth_n: Option<usize> = None;
    let mut synth_mix: Option<[f64; NUM_CLASSES]> = None;
    let mut synth_noise: Option<f64> = None;
    let mut val_fraction = 0.1;
    let mut checkpoint_every = 0u64;
    let mut seen = BTreeSet::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::Data(format!("line {}: expected `key = value`", lineno + 1))
        })?;
        let key = key.trim();
        let value = value.trim();
        if !seen.insert(key.to_string()) {
            return Err(CliError::Data(format!("duplicate key {key:?}")));
        }
        match key {
            "mode" => train.mode = parse_mode(value)?,
            "w_r" => train.w_r = parse_f64(key, value)?,
            "w_c" => train.w_c = parse_f64(key, value)?,
            "epochs" => train.epochs = parse_u64(key, value)?,
            "batch_size" => train.batch_size = parse_usize(key, value)?,
            "base_lr" => train.base_lr = parse_f64(key, value)?,
            "eps" => train.eps = parse_f64(key, value)?,
            "weight_decay" => train.weight_decay = parse_f64(key, value)?,
            "warmup_steps" => train.warmup_steps = parse_u64(key, value)?,
            "dao_lr" => train.dao_lr = parse_f64(key, value)?,
            "seed" => train.seed = parse_u64(key, value)?,
            "grad_norm_scope" => train.grad_norm_scope = parse_scope(value)?,
            "eval_clamp" => train.eval_clamp = parse_bool(key, value)?,
            "vocab_size" => model.vocab_size = parse_usize(key, value)?,
            "d_embed" => model.d_embed = parse_usize(key, value)?,
            "d_hidden" => model.d_hidden = parse_usize(key, value)?,
            "d_mid" => model.d_mid = parse_usize(key, value)?,
            "dropout" => model.dropout = parse_f64(key, value)?,
            "lora_rank" => {
                model.lora_rank = if value == "off" {
                    None
                } else {
                    Some(parse_usize(key, value)?)
                }
            }
            "adapter_dropout" => model.adapter_dropout = parse_f64(key, value)?,
            "data" => data = Some(DataSource::Path(value.to_string())),
            "synth_n" => synth_n = Some(parse_usize(key, value)?),
            "synth_mix" => synth_mix = Some(parse_mix(value)?),
            "synth_noise" => synth_noise = Some(parse_f64(key, value)?),
            "val_fraction" => val_fraction = parse_f64(key, value)?,
            "checkpoint_every" => checkpoint_every = parse_u64(key, value)?,
            other => return Err(CliError::Data(format!("unknown key {other:?}"))),
        }
    }

    let synth_given = synth_n.is_some() || synth_mix.is_some() || synth_noise.is_some();
    let data = match (data, synth_given) {
        (Some(_), true) => {
            return Err(CliError::Data(
                "config sets both data and synth_* keys; pick one source".into(),
            ))
        }
        (Some(d), false) => d,
        (None, true) => DataSource::Synth {
            n: synth_n.ok_or_else(|| CliError::Data("synth_n missing".into()))?,
            mix: synth_mix.ok_or_else(|| CliError::Data("synth_mix missing".into()))?,
            noise: synth_noise.ok_or_else(|| CliError::Data("synth_noise missing".into()))?,
        },
        (None, false) => {
            return Err(CliError::Data(
                "config needs a data source: data = <file> or synth_n/synth_mix/synth_noise".into(),
            ))
        }
    };

    train.model = model;
    let cfg = RunConfig {
        train,
        data,
        val_fraction,
        checkpoint_every,
    };
    cfg.validate()?;
    Ok(cfg)
}

//! Orchestration: full training runs with logging and checkpoints, weight
//! sweeps, and checkpoint evaluation.

use std::fs;
use std::path::{Path, PathBuf};

use daomix::data::{generate, Dataset, SynthConfig};
use daomix::train::{EvalReport, StepRecord, TrainConfig, TrainMode, Trainer};

use crate::checkpoint;
use crate::config::{parse as parse_config, DataSource, RunConfig};
use crate::corpus;
use crate::error::{CliError, Result};
use crate::logs::{self, CsvLog};

/// Build the corpus a config names: read the file or generate the synthetic
/// set with the run seed.
pub fn load_corpus(cfg: &RunConfig) -> Result<Dataset> {
    match &cfg.data {
        DataSource::Path(p) => corpus::load(Path::new(p)),
        DataSource::Synth { n, mix, noise } => generate(&SynthConfig {
            n: *n,
            mix: *mix,
            noise: *noise,
            seed: cfg.train.seed,
        })
        .map_err(CliError::from),
    }
}

/// Everything a finished run leaves behind.
pub struct RunOutcome {
    pub final_report: EvalReport,
    pub records: Vec<StepRecord>,
    pub checkpoint: PathBuf,
}

/// Train per the config, logging each step to `steps.csv`, each epoch's
/// metrics to `epochs.csv`, and saving `checkpoint.bin` (plus periodic
/// `checkpoint-epoch-<e>.bin` when configured). With `epochs = 0` this is an
/// evaluation-only run. `resume` restores a checkpoint saved by an earlier
/// run with byte-identical configuration.
pub fn run(cfg: &RunConfig, out_dir: &Path, resume: Option<&Path>) -> Result<RunOutcome> {
    cfg.validate()?;
    let corpus = load_corpus(cfg)?;
    let (train_set, val_set) = corpus
        .split(cfg.val_fraction, cfg.train.seed)
        .map_err(CliError::from)?;
    let config_text = cfg.to_text();

    let mut trainer = Trainer::new(cfg.train, train_set.len()).map_err(CliError::from)?;
    if let Some(ckpt_path) = resume {
        let snapshot = checkpoint::load(ckpt_path)?;
        if snapshot.config_text != config_text {
            return Err(CliError::Data(format!(
                "{}: checkpoint was written by a different configuration",
                ckpt_path.display()
            )));
        }
        if snapshot.epoch > cfg.train.epochs {
            return Err(CliError::Data(format!(
                "checkpoint is at epoch {}, past the configured {}",
                snapshot.epoch, cfg.train.epochs
            )));
        }
        checkpoint::apply(&snapshot, &mut trainer)?;
    }

    fs::create_dir_all(out_dir)?;
    let mut steps_log = CsvLog::create(&out_dir.join("steps.csv"), logs::STEPS_HEADER)?;
    let mut epochs_log = CsvLog::create(&out_dir.join("epochs.csv"), logs::EPOCHS_HEADER)?;
    let ckpt_path = out_dir.join("checkpoint.bin");

    let mut all_records = Vec::new();
    let mut final_report: Option<EvalReport> = None;

    while trainer.epoch() < cfg.train.epochs {
        let records = match trainer.train_epoch(&train_set) {
            Ok(r) => r,
            Err(e) => {
                // Keep whatever was logged so a failed run can be studied.
                steps_log.flush()?;
                epochs_log.flush()?;
                checkpoint::save(&ckpt_path, &trainer, &config_text)?;
                return Err(e.into());
            }
        };
        for r in &records {
            steps_log.row(&logs::step_fields(r))?;
        }
        steps_log.flush()?;

        let report = trainer.evaluate(&val_set).map_err(CliError::from)?;
        let epoch = trainer.epoch();
        epochs_log.row(&logs::epoch_fields(epoch, mean_mtl(&records), &report))?;
        epochs_log.flush()?;
        all_records.extend(records);
        final_report = Some(report);

        if cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 {
            checkpoint::save(
                &out_dir.join(format!("checkpoint-epoch-{epoch}.bin")),
                &trainer,
                &config_text,
            )?;
        }
    }

    let final_report = match final_report {
        Some(r) => r,
        None => {
            // Evaluation-only: no epochs ran (epochs = 0 or resume at the end).
            let report = trainer.evaluate(&val_set).map_err(CliError::from)?;
            epochs_log.row(&logs::epoch_fields(trainer.epoch(), f64::NAN, &report))?;
            epochs_log.flush()?;
            report
        }
    };
    checkpoint::save(&ckpt_path, &trainer, &config_text)?;
    Ok(RunOutcome {
        final_report,
        records: all_records,
        checkpoint: ckpt_path,
    })
}

/// Mean blended loss over the completed steps of an epoch; aborted steps
/// carry no loss and are excluded.
pub fn mean_mtl(records: &[StepRecord]) -> f64 {
    let clean: Vec<f64> = records
        .iter()
        .filter(|r| !r.aborted)
        .map(|r| r.loss_mtl)
        .collect();
    if clean.is_empty() {
        f64::NAN
    } else {
        clean.iter().sum::<f64>() / clean.len() as f64
    }
}

/// One sweep row: label, nominal classification weight (NaN for the
/// adaptive run), validation MSE and accuracy.
pub struct SweepRow {
    pub run: String,
    pub w_c: f64,
    pub mse: f64,
    pub acc: f64,
}

/// Constant-weight runs at each `w_c` plus exactly one adaptive run, all
/// from the same seed, data, and initial weights. Writes `sweep.csv` and
/// returns the rows in file order.
pub fn sweep(cfg: &RunConfig, wc_values: &[f64], out_dir: &Path) -> Result<Vec<SweepRow>> {
    if wc_values.is_empty() {
        return Err(CliError::Usage("sweep needs at least one w_c value".into()));
    }
    for &wc in wc_values {
        if !(wc > 0.0 && wc < 1.0) {
            return Err(CliError::Usage(format!("sweep w_c {wc} outside (0, 1)")));
        }
    }
    cfg.validate()?;
    let corpus = load_corpus(cfg)?;
    let (train_set, val_set) = corpus
        .split(cfg.val_fraction, cfg.train.seed)
        .map_err(CliError::from)?;

    fs::create_dir_all(out_dir)?;
    let mut log = CsvLog::create(&out_dir.join("sweep.csv"), logs::SWEEP_HEADER)?;
    let mut rows = Vec::new();

    let one = |train_cfg: TrainConfig, run: String, w_c: f64| -> Result<SweepRow> {
        let mut trainer = Trainer::new(train_cfg, train_set.len()).map_err(CliError::from)?;
        for _ in 0..train_cfg.epochs {
            trainer.train_epoch(&train_set).map_err(CliError::from)?;
        }
        let report = trainer.evaluate(&val_set).map_err(CliError::from)?;
        Ok(SweepRow {
            run,
            w_c,
            mse: report.regression.mse,
            acc: report.confusion.accuracy(),
        })
    };

    for &wc in wc_values {
        let train_cfg = TrainConfig {
            mode: TrainMode::Constant,
            w_r: 1.0 - wc,
            w_c: wc,
            ..cfg.train
        };
        rows.push(one(train_cfg, format!("constant-{wc}"), wc)?);
    }
    let dao_cfg = TrainConfig {
        mode: TrainMode::Dao,
        ..cfg.train
    };
    rows.push(one(dao_cfg, "dao".into(), f64::NAN)?);

    for row in &rows {
        log.row(&logs::sweep_fields(&row.run, row.w_c, row.mse, row.acc))?;
    }
    log.flush()?;
    Ok(rows)
}

/// Metrics of a stored checkpoint against a corpus file.
pub fn eval_checkpoint(ckpt_path: &Path, data_path: &Path) -> Result<(EvalReport, usize)> {
    let snapshot = checkpoint::load(ckpt_path)?;
    let cfg = parse_config(&snapshot.config_text)
        .map_err(|e| CliError::Data(format!("checkpoint config echo: {e}")))?;
    let data = corpus::load(data_path)?;
    let mut trainer = Trainer::new(cfg.train, data.len()).map_err(CliError::from)?;
    checkpoint::apply(&snapshot, &mut trainer)?;
    let report = trainer.evaluate(&data).map_err(CliError::from)?;
    Ok((report, data.len()))
}

/// Human-readable metric block, also consumed by the eval subcommand tests.
pub fn format_report(report: &EvalReport, examples: usize) -> String {
    let reg = &report.regression;
    let cm = &report.confusion;
    let mut s = String::new();
    s.push_str(&format!("examples = {examples}\n"));
    s.push_str(&format!("mse = {}\n", reg.mse));
    s.push_str(&format!("mae = {}\n", reg.mae));
    s.push_str(&format!("rmse = {}\n", reg.rmse));
    s.push_str(&format!("r2 = {}\n", reg.r2.unwrap_or(f64::NAN)));
    s.push_str(&format!("acc = {}\n", cm.accuracy()));
    s.push_str(&format!("weighted_precision = {}\n", cm.weighted_precision()));
    s.push_str(&format!("weighted_recall = {}\n", cm.weighted_recall()));
    s.push_str(&format!("weighted_f1 = {}\n", cm.weighted_f1()));
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use daomix::model::ModelConfig;

    fn tiny_run_config() -> RunConfig {
        RunConfig {
            train: TrainConfig {
                mode: TrainMode::Dao,
                epochs: 2,
                batch_size: 5,
                base_lr: 1e-3,
                warmup_steps: 2,
                model: ModelConfig {
                    vocab_size: 128,
                    d_embed: 8,
                    d_hidden: 8,
                    d_mid: 4,
                    ..ModelConfig::default()
                },
                ..TrainConfig::default()
            },
            data: DataSource::Synth {
                n: 50,
                mix: [0.1, 0.2, 0.4, 0.2, 0.1],
                noise: 0.2,
            },
            val_fraction: 0.2,
            checkpoint_every: 1,
        }
    }

    #[test]
    fn run_writes_logs_and_checkpoints() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        let cfg = tiny_run_config();
        let outcome = run(&cfg, &out, None).unwrap();

        // 50 examples, 10 val, 40 train, batch 5 -> 8 steps x 2 epochs.
        assert_eq!(outcome.records.len(), 16);
        let steps = fs::read_to_string(out.join("steps.csv")).unwrap();
        assert_eq!(steps.lines().count(), 17);
        assert!(steps.starts_with(logs::STEPS_HEADER));
        let epochs = fs::read_to_string(out.join("epochs.csv")).unwrap();
        assert_eq!(epochs.lines().count(), 3);
        assert!(out.join("checkpoint.bin").is_file());
        assert!(out.join("checkpoint-epoch-1.bin").is_file());
        assert!(out.join("checkpoint-epoch-2.bin").is_file());
    }

    #[test]
    fn identical_runs_write_identical_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_run_config();
        let out_a = dir.path().join("a");
        let out_b = dir.path().join("b");
        run(&cfg, &out_a, None).unwrap();
        run(&cfg, &out_b, None).unwrap();
        for name in ["steps.csv", "epochs.csv", "checkpoint.bin"] {
            let a = fs::read(out_a.join(name)).unwrap();
            let b = fs::read(out_b.join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between identical runs");
        }
    }

    #[test]
    fn resume_continues_the_run_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_run_config();
        cfg.train.epochs = 4;
        let out_full = dir.path().join("full");
        let full = run(&cfg, &out_full, None).unwrap();

        let out_resumed = dir.path().join("resumed");
        let resumed = run(
            &cfg,
            &out_resumed,
            Some(&out_full.join("checkpoint-epoch-2.bin")),
        )
        .unwrap();

        assert_eq!(resumed.records.len(), full.records.len() / 2);
        let tail = &full.records[full.records.len() / 2..];
        for (a, b) in tail.iter().zip(&resumed.records) {
            assert_eq!(a.epoch, b.epoch);
            assert_eq!(a.loss_mtl.to_bits(), b.loss_mtl.to_bits());
            assert_eq!(a.w_c.to_bits(), b.w_c.to_bits());
        }
        let a = fs::read(out_full.join("checkpoint.bin")).unwrap();
        let b = fs::read(out_resumed.join("checkpoint.bin")).unwrap();
        assert_eq!(a, b, "final checkpoints differ");
    }

    #[test]
    fn resume_rejects_other_configs() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_run_config();
        let out = dir.path().join("out");
        run(&cfg, &out, None).unwrap();

        let mut other = cfg.clone();
        other.train.seed = 43;
        let err = run(&other, &dir.path().join("o2"), Some(&out.join("checkpoint.bin")));
        assert!(err.is_err());
    }

    #[test]
    fn zero_epochs_is_evaluation_only() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_run_config();
        cfg.train.epochs = 0;
        cfg.checkpoint_every = 0;
        let out = dir.path().join("out");
        let outcome = run(&cfg, &out, None).unwrap();
        assert!(outcome.records.is_empty());
        let steps = fs::read_to_string(out.join("steps.csv")).unwrap();
        assert_eq!(steps.lines().count(), 1, "header only");
        let epochs = fs::read_to_string(out.join("epochs.csv")).unwrap();
        assert_eq!(epochs.lines().count(), 2, "header plus one metrics row");
        assert!(outcome.final_report.confusion.total() > 0);
    }

    #[test]
    fn sweep_emits_constant_rows_plus_one_adaptive_row() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_run_config();
        cfg.train.epochs = 1;
        let out = dir.path().join("sweep");
        let rows = sweep(&cfg, &[0.1, 0.3], &out).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].run, "constant-0.1");
        assert_eq!(rows[1].run, "constant-0.3");
        assert_eq!(rows[2].run, "dao");
        assert!(rows[2].w_c.is_nan());
        let text = fs::read_to_string(out.join("sweep.csv")).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert_eq!(text.lines().next().unwrap(), logs::SWEEP_HEADER);
        assert_eq!(text.matches("\ndao,").count(), 1);
    }

    #[test]
    fn eval_checkpoint_reports_metrics() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_run_config();
        let out = dir.path().join("out");
        let outcome = run(&cfg, &out, None).unwrap();

        let data_path = dir.path().join("val.jsonl");
        let corpus = load_corpus(&cfg).unwrap();
        corpus::save(&corpus, &data_path).unwrap();

        let (report, n) = eval_checkpoint(&outcome.checkpoint, &data_path).unwrap();
        assert_eq!(n, 50);
        assert!(report.regression.mse.is_finite());
        let text = format_report(&report, n);
        assert!(text.contains("mse = "));
        assert!(text.contains("weighted_recall = "));
    }
}

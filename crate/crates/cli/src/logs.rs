//! Run logs: plain CSV, one fixed header per file, shortest-roundtrip float
//! formatting. Identical runs produce byte-identical files. Undefined values
//! (constant-mode imbalance fields, R² on a constant target) print as NaN.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use daomix::train::{EvalReport, StepRecord};

use crate::error::Result;

pub const STEPS_HEADER: &str =
    "epoch,batch,lambda_r,lambda_c,w_r,w_c,loss_r,loss_c,loss_imb,loss_mtl,alpha,beta,lr,aborted";
pub const EPOCHS_HEADER: &str =
    "epoch,mean_loss_mtl,mse,mae,rmse,r2,acc,weighted_precision,weighted_recall,weighted_f1";
pub const SWEEP_HEADER: &str = "run,w_c,mse,acc";

pub struct CsvLog {
    w: BufWriter<File>,
}

impl CsvLog {
    pub fn create(path: &Path, header: &str) -> Result<Self> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "{header}")?;
        Ok(Self { w })
    }

    pub fn row(&mut self, fields: &[String]) -> Result<()> {
        writeln!(self.w, "{}", fields.join(","))?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.w.flush()?;
        Ok(())
    }
}

fn f(x: f64) -> String {
    x.to_string()
}

pub fn step_fields(r: &StepRecord) -> Vec<String> {
    vec![
        r.epoch.to_string(),
        r.batch.to_string(),
        f(r.lambda_r),
        f(r.lambda_c),
        f(r.w_r),
        f(r.w_c),
        f(r.loss_r),
        f(r.loss_c),
        f(r.loss_imb),
        f(r.loss_mtl),
        f(r.alpha),
        f(r.beta),
        f(r.lr),
        (r.aborted as u8).to_string(),
    ]
}

pub fn epoch_fields(epoch: u64, mean_loss_mtl: f64, report: &EvalReport) -> Vec<String> {
    let reg = &report.regression;
    let cm = &report.confusion;
    vec![
        epoch.to_string(),
        f(mean_loss_mtl),
        f(reg.mse),
        f(reg.mae),
        f(reg.rmse),
        f(reg.r2.unwrap_or(f64::NAN)),
        f(cm.accuracy()),
        f(cm.weighted_precision()),
        f(cm.weighted_recall()),
        f(cm.weighted_f1()),
    ]
}

pub fn sweep_fields(run: &str, w_c: f64, mse: f64, acc: f64) -> Vec<String> {
    vec![run.to_string(), f(w_c), f(mse), f(acc)]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formatting_is_shortest_roundtrip_and_nan_spelled_out() {
        assert_eq!(f(0.1), "0.1");
        assert_eq!(f(f64::NAN), "NaN");
        assert_eq!(f(1e-5), "0.00001");
        assert_eq!(f(2.5e-17), "0.000000000000000025");
        let parsed: f64 = f(0.30000000000000004).parse().unwrap();
        assert_eq!(parsed.to_bits(), 0.30000000000000004f64.to_bits());
    }

    #[test]
    fn step_row_shape_matches_header() {
        let r = StepRecord {
            epoch: 1,
            batch: 2,
            lambda_r: 0.5,
            lambda_c: 0.5,
            w_r: 0.5,
            w_c: 0.5,
            loss_r: 1.0,
            loss_c: 2.0,
            loss_imb: 3.0,
            loss_mtl: 4.0,
            alpha: 0.1,
            beta: 1.0,
            lr: 1e-3,
            aborted: false,
        };
        assert_eq!(step_fields(&r).len(), STEPS_HEADER.split(',').count());
    }
}

use std::fmt::Write as _;
use std::path::PathBuf;

use crate::metrics::MetricsReport;

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    /// Running accuracy of the pre-update predictions over the epoch.
    pub train_acc: f64,
    pub val_acc: Option<f64>,
    pub val_f1: Option<f64>,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// Loss of every optimizer step, in order.
    pub batch_losses: Vec<f64>,
    /// Validation metrics after the last epoch.
    pub final_validation: Option<MetricsReport>,
    pub checkpoint: Option<PathBuf>,
}

impl TrainReport {
    pub fn seconds(&self) -> f64 {
        self.epochs.iter().map(|e| e.seconds).sum()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    /// `epoch,train_loss,train_acc,val_acc,val_f1,seconds`; validation
    /// fields are empty when no validation set was given.
    pub fn to_csv(&self) -> String {
        let opt = |x: Option<f64>| x.map(|v| format!("{v}")).unwrap_or_default();
        let mut out = String::from("epoch,train_loss,train_acc,val_acc,val_f1,seconds\n");
        for e in &self.epochs {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{:.3}",
                e.epoch,
                e.train_loss,
                e.train_acc,
                opt(e.val_acc),
                opt(e.val_f1),
                e.seconds
            );
        }
        out
    }
}

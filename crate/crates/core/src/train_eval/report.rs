use std::path::Path;

use crate::error::{Error, Result};
use crate::train_eval::{EpochRecord, SplitMetrics};

fn csv_err(e: csv::Error) -> Error {
    Error::Csv { line: e.position().map_or(0, |p| p.line()), message: e.to_string() }
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Data(e.to_string()))
}

/// Rows `split,metric,value,epoch` for each named split.
pub fn metrics_csv(splits: &[(&str, SplitMetrics)], epoch: usize) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["split", "metric", "value", "epoch"]).map_err(csv_err)?;
    let epoch = epoch.to_string();
    for (name, m) in splits {
        for (metric, v) in [
            ("mae", m.truth.mae),
            ("mse", m.truth.mse),
            ("observed_mae", m.observed.mae),
            ("observed_mse", m.observed.mse),
        ] {
            w.write_record([name, metric, &v.to_string(), &epoch]).map_err(csv_err)?;
        }
    }
    finish(w)
}

/// Per-epoch losses without wall-clock columns, so reruns match byte for byte.
pub fn history_csv(history: &[EpochRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["epoch", "train_loss", "val_mse", "val_mae"]).map_err(csv_err)?;
    for r in history {
        w.write_record([r.epoch.to_string(), r.train_loss.to_string(), r.val_mse.to_string(), r.val_mae.to_string()])
            .map_err(csv_err)?;
    }
    finish(w)
}

pub fn timing_csv(history: &[EpochRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["epoch", "seconds"]).map_err(csv_err)?;
    for r in history {
        w.write_record([r.epoch.to_string(), format!("{:.3}", r.seconds)]).map_err(csv_err)?;
    }
    finish(w)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

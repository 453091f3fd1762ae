use std::io;

use super::{Metrics, TrainReport};

/// Column header of [`write_metrics_csv`].
pub const METRICS_HEADER: [&str; 9] = ["model", "split", "mse", "half_mse", "mape", "h", "g", "nrmse", "failures"];

fn metric_fields(m: &Metrics) -> [String; 7] {
    [
        format!("{:e}", m.mse),
        format!("{:e}", m.half_mse),
        format!("{:e}", m.mape),
        format!("{:e}", m.eq_violation),
        format!("{:e}", m.ineq_violation),
        format!("{:e}", m.nrmse),
        m.failures.to_string(),
    ]
}

impl TrainReport {
    /// One row per epoch. The RMSE columns are normalized by the training
    /// target range of each output, stated in a leading comment.
    pub fn write_curve_csv<W: io::Write>(&self, mut w: W) -> csv::Result<()> {
        let ranges: Vec<String> = self.ranges.iter().map(|r| format!("{r:e}")).collect();
        writeln!(w, "# nrmse = rmse / target range per output, averaged; ranges {}", ranges.join(" "))?;
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "epoch",
            "loss",
            "train_nrmse",
            "val_nrmse",
            "train_h",
            "val_h",
            "train_g",
            "val_g",
            "train_failures",
            "val_failures",
        ])?;
        for e in &self.epochs {
            out.write_record([
                e.epoch.to_string(),
                format!("{:e}", e.loss),
                format!("{:e}", e.train.nrmse),
                format!("{:e}", e.val.nrmse),
                format!("{:e}", e.train.eq_violation),
                format!("{:e}", e.val.eq_violation),
                format!("{:e}", e.train.ineq_violation),
                format!("{:e}", e.val.ineq_violation),
                e.train.failures.to_string(),
                e.val.failures.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Rows `(model, split, metrics…)` for the training and validation splits.
    pub fn metric_rows(&self) -> Vec<Vec<String>> {
        [("train", &self.train), ("val", &self.val)]
            .into_iter()
            .map(|(split, m)| {
                let mut row = vec![self.model.clone(), split.to_string()];
                row.extend(metric_fields(m));
                row
            })
            .collect()
    }
}

/// Final metrics of several runs, two rows per run.
pub fn write_metrics_csv<W: io::Write>(reports: &[&TrainReport], w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(METRICS_HEADER)?;
    for r in reports {
        for row in r.metric_rows() {
            out.write_record(&row)?;
        }
    }
    out.flush()?;
    Ok(())
}

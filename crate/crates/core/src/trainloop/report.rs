//! Per-epoch records and the files an experiment run leaves behind.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Duration;

use serde::Serialize;

use super::ExperimentOutput;
use crate::error::{Error, Result};
use crate::metrics::MetricReport;
use crate::tinymoe::save_checkpoint;
use crate::weights::{ALPHA_CSV_HEADER, WEIGHTS_CSV_HEADER};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Warm,
    Weighted,
    /// Epochs the unweighted baseline trains where other variants weight.
    Unweighted,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Warm => "warm",
            Phase::Weighted => "weighted",
            Phase::Unweighted => "unweighted",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based, counted over the warm and weighted phases together.
    pub epoch: usize,
    pub phase: Phase,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_metrics: MetricReport,
    /// Smoothing factor after this epoch's update; absent outside the
    /// weighted phase.
    pub alpha: Option<f64>,
    pub mean_weights: Vec<f64>,
    pub duration: Duration,
}

/// Header for `records.csv`. The wall-clock duration is kept out so the file
/// is reproducible byte for byte; it goes to `timings.csv`.
pub fn records_header(metrics: &MetricReport, n_modalities: usize) -> String {
    let mut cols = vec![
        "epoch".to_string(),
        "phase".into(),
        "train_loss".into(),
        "val_loss".into(),
    ];
    cols.extend(metrics.columns().iter().map(|(k, _)| format!("val_{k}")));
    cols.push("alpha".into());
    cols.extend((0..n_modalities).map(|m| format!("mean_weight_{m}")));
    cols.join(",")
}

impl EpochRecord {
    pub fn csv_row(&self) -> String {
        let mut cols = vec![
            self.epoch.to_string(),
            self.phase.to_string(),
            self.train_loss.to_string(),
            self.val_loss.to_string(),
        ];
        cols.extend(self.val_metrics.columns().iter().map(|(_, v)| v.to_string()));
        cols.push(self.alpha.map_or(String::new(), |a| a.to_string()));
        cols.extend(self.mean_weights.iter().map(f64::to_string));
        cols.join(",")
    }
}

/// Contents of `metrics.json`.
#[derive(Debug, Clone, Serialize)]
pub struct FinalReport {
    pub variant: String,
    pub seed: u64,
    pub acc2_convention: &'static str,
    pub test: MetricReport,
    pub val: MetricReport,
    pub eval_multipliers: Vec<f64>,
    pub final_mean_weights: Vec<f64>,
    pub modality_mi: Option<Vec<f64>>,
    pub modality_mi_weights: Option<Vec<f64>>,
    pub final_alpha: Option<f64>,
    pub unimodal_val: Vec<MetricReport>,
    pub unimodal_test: Vec<MetricReport>,
}

impl FinalReport {
    pub fn from_output(out: &ExperimentOutput) -> Self {
        Self {
            variant: out.config.variant.to_string(),
            seed: out.config.seed,
            acc2_convention: "include_zero counts a zero as non-positive; non_zero drops zero targets",
            test: out.test_metrics.clone(),
            val: out.val_metrics.clone(),
            eval_multipliers: out.eval_multipliers.clone(),
            final_mean_weights: out.records.last().map(|r| r.mean_weights.clone()).unwrap_or_default(),
            modality_mi: out.trajectory.mi.last().cloned(),
            modality_mi_weights: out.final_mi_weights(),
            final_alpha: out.trajectory.alphas.last().map(|(_, a)| *a),
            unimodal_val: out.unimodal.val_metrics.clone(),
            unimodal_test: out.unimodal_test_metrics.clone(),
        }
    }
}

fn write_file(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    body(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

/// Writes `records.csv`, `weights_trajectory.csv`, `alpha.csv`,
/// `timings.csv`, `metrics.json` and `checkpoints/*.btwm` into `dir`.
pub fn write_outputs(out: &ExperimentOutput, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let m = out.unimodal.models.len();

    write_file(&dir.join("records.csv"), |w| {
        writeln!(w, "{}", records_header(&out.val_metrics, m))?;
        for r in &out.records {
            writeln!(w, "{}", r.csv_row())?;
        }
        Ok(())
    })?;
    write_file(&dir.join("timings.csv"), |w| {
        writeln!(w, "epoch,phase,seconds")?;
        for r in &out.records {
            writeln!(w, "{},{},{}", r.epoch, r.phase, r.duration.as_secs_f64())?;
        }
        Ok(())
    })?;
    write_file(&dir.join("weights_trajectory.csv"), |w| {
        writeln!(w, "{WEIGHTS_CSV_HEADER}")?;
        for (epoch, wm) in &out.trajectory.weights {
            wm.write_csv_rows(w, *epoch)?;
        }
        Ok(())
    })?;
    write_file(&dir.join("alpha.csv"), |w| {
        writeln!(w, "{ALPHA_CSV_HEADER}")?;
        for (epoch, a) in &out.trajectory.alphas {
            writeln!(w, "{epoch},{a}")?;
        }
        Ok(())
    })?;
    let report_path = dir.join("metrics.json");
    let json = serde_json::to_string_pretty(&FinalReport::from_output(out))
        .map_err(|e| Error::format(&report_path, e.to_string()))?;
    fs::write(&report_path, json + "\n").map_err(|e| Error::io(&report_path, e))?;

    let ckpt = dir.join("checkpoints");
    fs::create_dir_all(&ckpt).map_err(|e| Error::io(&ckpt, e))?;
    save_checkpoint(&out.model, &ckpt.join("multimodal.btwm"))?;
    for (i, model) in out.unimodal.models.iter().enumerate() {
        save_checkpoint(model, &ckpt.join(format!("unimodal_{i}.btwm")))?;
    }
    Ok(())
}

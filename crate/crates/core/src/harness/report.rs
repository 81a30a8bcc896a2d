//! Metrics tables and report files.
//!
//! `metrics.csv` has one row per cell with the columns of [`CSV_HEADER`].
//! Floats are written in the shortest form that parses back exactly.
//!
//! `report.json` holds `{"metrics": ..., "metrics_sha256": ..., "wall_clock_seconds": ...}`.
//! The digest covers the compact JSON encoding of `metrics` only, so two runs
//! of the same config produce the same digest regardless of timing.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{hex, ExperimentConfig, SeedResult, SeedRun};
use crate::classifier::LossKind;
use crate::error::{Error, Result};
use crate::style::LearningMode;

pub const CSV_HEADER: &str = "label,param,value,use_style_loss,use_content_loss,loss_kind,mode,\
num_styles,iterations,n_seeds,trained_mean,trained_std,trained_stderr,zero_shot_mean,\
zero_shot_std,zero_shot_stderr,peak_live_features";

/// Mean, sample standard deviation and standard error of the mean. The
/// deviation is zero for a single value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub stderr: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self {
            mean,
            std,
            stderr: std / n.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub label: String,
    pub param: String,
    pub value: String,
    pub use_style_loss: bool,
    pub use_content_loss: bool,
    pub loss_kind: LossKind,
    pub mode: LearningMode,
    pub num_styles: usize,
    pub iterations: usize,
    pub n_seeds: usize,
    pub trained: Summary,
    pub zero_shot: Summary,
    pub peak_live_features: usize,
}

impl MetricsRow {
    pub(crate) fn new(
        label: &str,
        param: &str,
        value: &str,
        config: &ExperimentConfig,
        seeds: &[SeedResult],
    ) -> Self {
        let trained: Vec<f64> = seeds.iter().map(|s| s.trained_accuracy).collect();
        let zero: Vec<f64> = seeds.iter().map(|s| s.zero_shot_accuracy).collect();
        Self {
            label: label.into(),
            param: param.into(),
            value: value.into(),
            use_style_loss: config.ablation.use_style_loss,
            use_content_loss: config.ablation.use_content_loss,
            loss_kind: config.classifier.loss_kind,
            mode: config.train.mode,
            num_styles: config.train.num_styles,
            iterations: config.train.iterations,
            n_seeds: seeds.len(),
            trained: Summary::of(&trained),
            zero_shot: Summary::of(&zero),
            peak_live_features: seeds
                .iter()
                .map(|s| s.peak_live_features)
                .max()
                .unwrap_or(0),
        }
    }

    fn cells(&self) -> Vec<String> {
        let kind = match self.loss_kind {
            LossKind::ArcFace => "arcface",
            LossKind::Softmax => "softmax",
        };
        let mode = match self.mode {
            LearningMode::Sequential => "sequential",
            LearningMode::Parallel => "parallel",
        };
        vec![
            self.label.clone(),
            self.param.clone(),
            self.value.clone(),
            self.use_style_loss.to_string(),
            self.use_content_loss.to_string(),
            kind.into(),
            mode.into(),
            self.num_styles.to_string(),
            self.iterations.to_string(),
            self.n_seeds.to_string(),
            self.trained.mean.to_string(),
            self.trained.std.to_string(),
            self.trained.stderr.to_string(),
            self.zero_shot.mean.to_string(),
            self.zero_shot.std.to_string(),
            self.zero_shot.stderr.to_string(),
            self.peak_live_features.to_string(),
        ]
    }
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.cells().join(","));
        out.push('\n');
    }
    out
}

/// Parses a table written by [`metrics_csv`], checking the header and
/// every cell type.
pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricsRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::Format("metrics header mismatch".into()));
    }
    let width = CSV_HEADER.split(',').count();
    lines
        .enumerate()
        .map(|(i, line)| {
            let bad = |what: &str| Error::Format(format!("metrics row {}: {what}", i + 1));
            let c: Vec<&str> = line.split(',').collect();
            if c.len() != width {
                return Err(bad("wrong number of cells"));
            }
            let b = |s: &str| s.parse::<bool>().map_err(|_| bad("boolean"));
            let u = |s: &str| s.parse::<usize>().map_err(|_| bad("integer"));
            let f = |s: &str| {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| bad("number"))
            };
            let loss_kind = match c[5] {
                "arcface" => LossKind::ArcFace,
                "softmax" => LossKind::Softmax,
                _ => return Err(bad("loss kind")),
            };
            let mode = match c[6] {
                "sequential" => LearningMode::Sequential,
                "parallel" => LearningMode::Parallel,
                _ => return Err(bad("mode")),
            };
            Ok(MetricsRow {
                label: c[0].into(),
                param: c[1].into(),
                value: c[2].into(),
                use_style_loss: b(c[3])?,
                use_content_loss: b(c[4])?,
                loss_kind,
                mode,
                num_styles: u(c[7])?,
                iterations: u(c[8])?,
                n_seeds: u(c[9])?,
                trained: Summary {
                    mean: f(c[10])?,
                    std: f(c[11])?,
                    stderr: f(c[12])?,
                },
                zero_shot: Summary {
                    mean: f(c[13])?,
                    std: f(c[14])?,
                    stderr: f(c[15])?,
                },
                peak_live_features: u(c[16])?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportKind {
    Run,
    Sweep,
    Ablation,
}

/// Metrics of a run, sweep or ablation. `cells[i]` holds the per-seed results
/// behind `rows[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub kind: ReportKind,
    pub config_digest: String,
    pub rows: Vec<MetricsRow>,
    pub cells: Vec<Vec<SeedResult>>,
}

impl Report {
    pub(crate) fn new(
        kind: ReportKind,
        config: &ExperimentConfig,
        rows: Vec<MetricsRow>,
        cells: Vec<Vec<SeedResult>>,
    ) -> Self {
        Self {
            kind,
            config_digest: config.digest(),
            rows,
            cells,
        }
    }

    pub fn metrics_digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("report serializes");
        hex(&Sha256::digest(bytes))
    }
}

pub fn report_json(report: &Report, wall_clock_seconds: f64) -> String {
    let doc = serde_json::json!({
        "metrics": report,
        "metrics_sha256": report.metrics_digest(),
        "wall_clock_seconds": wall_clock_seconds,
    });
    let mut s = serde_json::to_string_pretty(&doc).expect("report serializes");
    s.push('\n');
    s
}

/// Writes `metrics.csv` and `report.json` into `dir`, plus the artifacts of
/// `first` selected by the config's output flags.
pub fn write_outputs(
    dir: &Path,
    config: &ExperimentConfig,
    report: &Report,
    wall_clock_seconds: f64,
    first: Option<&SeedRun>,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("metrics.csv"), metrics_csv(&report.rows))?;
    fs::write(
        dir.join("report.json"),
        report_json(report, wall_clock_seconds),
    )?;
    if let Some(run) = first {
        if config.outputs.styles {
            crate::style::io::save(&run.bank, &dir.join("styles.bin"))?;
        }
        if config.outputs.classifier {
            crate::classifier::io::save(&run.classifier, &dir.join("classifier.bin"))?;
        }
        if config.outputs.samples {
            crate::world::save_samples(&run.samples, &dir.join("samples.txt"))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_statistics() {
        let s = Summary::of(&[0.5, 0.7, 0.9]);
        assert!((s.mean - 0.7).abs() < 1e-15);
        assert!((s.std - 0.2).abs() < 1e-12);
        assert!((s.stderr - 0.2 / 3f64.sqrt()).abs() < 1e-12);
        assert_eq!(Summary::of(&[0.25]).std, 0.0);
    }

    #[test]
    fn csv_round_trip() {
        let row = MetricsRow {
            label: "sweep".into(),
            param: "K".into(),
            value: "5".into(),
            use_style_loss: true,
            use_content_loss: false,
            loss_kind: LossKind::Softmax,
            mode: LearningMode::Parallel,
            num_styles: 5,
            iterations: 100,
            n_seeds: 3,
            trained: Summary::of(&[0.1, 0.2, 0.35]),
            zero_shot: Summary::of(&[0.9, 0.8, 0.7]),
            peak_live_features: 25,
        };
        let text = metrics_csv(std::slice::from_ref(&row));
        assert_eq!(parse_metrics_csv(&text).unwrap(), vec![row]);
        assert!(parse_metrics_csv("a,b\n").is_err());
        let broken = text.replace(",3,", ",x,");
        assert!(parse_metrics_csv(&broken).is_err());
    }
}

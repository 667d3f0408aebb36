//! Dataset statistics, prediction-error evaluation and dataset export.

mod eval;
mod export;
mod stats;

pub use eval::{
    ade, constant_velocity_predictions, enumerate_cases, evaluate_predictions, fde, read_predictions,
    write_predictions, EvalConfig, EvalReport, ModelScore, PredictionCase, PredictionRecord, Score,
};
pub use export::{export_dataset, export_rows, read_export, series_from_rows, write_export, ExportRow};
pub use stats::{
    compute_stats, is_dynamic, min_distance_stats, motion_speed_stats, perception_noise, split_dynamic,
    tracking_duration_stats, Counts, DynamicCriterion, DynamicParams, DynamicSplit, MeanStd, Methodology, Moments,
    StatsReport,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Session;

#[derive(Debug, Error, PartialEq)]
pub enum AnalyticsError {
    #[error("no trajectories")]
    Empty,
    #[error("trajectory {ped}: sampling interval {found} s differs from {expected} s")]
    NonUniform { ped: u64, found: f64, expected: f64 },
    #[error("no trajectory spans {0} s")]
    TooShort(f64),
    #[error("no instant has two or more pedestrians")]
    NeverCoPresent,
    #[error("predicted and ground-truth lengths differ ({predicted} vs {truth})")]
    LengthMismatch { predicted: usize, truth: usize },
    #[error("model {model}: unknown case {case_id}")]
    UnknownCase { model: String, case_id: String },
    #[error("model {model}, case {case_id}: {message}")]
    Misaligned { model: String, case_id: String, message: String },
    #[error("export frequency {export} Hz does not divide label frequency {label} Hz")]
    Frequency { export: f64, label: f64 },
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("{0}")]
    Io(String),
}

impl From<std::io::Error> for AnalyticsError {
    fn from(e: std::io::Error) -> Self {
        AnalyticsError::Io(e.to_string())
    }
}

impl From<csv::Error> for AnalyticsError {
    fn from(e: csv::Error) -> Self {
        match e.position() {
            Some(p) => AnalyticsError::Parse {
                line: p.line(),
                message: e.to_string(),
            },
            None => AnalyticsError::Io(e.to_string()),
        }
    }
}

/// One pedestrian's ground-plane track on a uniform time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackSeries {
    pub ped_id: u64,
    pub times: Vec<f64>,
    pub xy: Vec<[f64; 2]>,
    /// Set for grid points filled by interpolation across a gap.
    pub interpolated: Vec<bool>,
}

impl TrackSeries {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn duration(&self) -> f64 {
        match (self.times.first(), self.times.last()) {
            (Some(a), Some(b)) => b - a,
            _ => 0.0,
        }
    }

    /// Linear interpolation; `None` outside the span.
    pub fn position_at(&self, t: f64) -> Option<[f64; 2]> {
        let eps = 1e-9;
        let (first, last) = (*self.times.first()?, *self.times.last()?);
        if t < first - eps || t > last + eps {
            return None;
        }
        let i = self.times.partition_point(|&x| x < t - eps);
        if i >= self.len() {
            return self.xy.last().copied();
        }
        if (self.times[i] - t).abs() <= eps || i == 0 {
            return Some(self.xy[i]);
        }
        let (t0, t1) = (self.times[i - 1], self.times[i]);
        let w = (t - t0) / (t1 - t0);
        let (a, b) = (self.xy[i - 1], self.xy[i]);
        Some([a[0] + w * (b[0] - a[0]), a[1] + w * (b[1] - a[1])])
    }
}

/// Metric trajectories of a session on the label grid, with gaps left by
/// joins filled linearly and flagged. `z` is dropped.
pub fn series_from_session(session: &Session) -> Vec<TrackSeries> {
    let f = session.label_frequency;
    session
        .store
        .trajectories
        .values()
        .filter(|t| !t.samples.is_empty())
        .map(|t| {
            let mut s = TrackSeries {
                ped_id: t.ped_id.0,
                times: Vec::new(),
                xy: Vec::new(),
                interpolated: Vec::new(),
            };
            for (i, smp) in t.samples.iter().enumerate() {
                if i > 0 {
                    let prev = &t.samples[i - 1];
                    let gap = smp.step - prev.step;
                    for k in 1..gap {
                        let w = k as f64 / gap as f64;
                        s.times.push((prev.step + k) as f64 / f);
                        s.xy.push([prev.x + w * (smp.x - prev.x), prev.y + w * (smp.y - prev.y)]);
                        s.interpolated.push(true);
                    }
                }
                s.times.push(smp.step as f64 / f);
                s.xy.push([smp.x, smp.y]);
                s.interpolated.push(false);
            }
            s
        })
        .collect()
}

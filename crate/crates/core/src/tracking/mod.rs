//! Tracking-by-detection baseline and tracker interchange.

mod io;

pub use io::{
    export_detections, export_tracklets, import_detections, import_tracklets, read_detections, read_tracklets,
    write_detections, write_tracklets,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{BBox, CameraId, Source, Tracklet, TrackletId, TrackletSample};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub score: f64,
}

/// All detections of one camera at one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionFrame {
    pub camera_id: CameraId,
    pub frame: i64,
    pub detections: Vec<Detection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackerParams {
    pub high_score_threshold: f64,
    pub low_score_threshold: f64,
    pub iou_gate: f64,
    pub max_coast_frames: u32,
    pub min_track_length: u32,
}

impl Default for TrackerParams {
    fn default() -> Self {
        TrackerParams {
            high_score_threshold: 0.6,
            low_score_threshold: 0.1,
            iou_gate: 0.3,
            max_coast_frames: 30,
            min_track_length: 5,
        }
    }
}

impl TrackerParams {
    pub fn check(&self) -> Result<(), TrackingError> {
        let ok = 0.0 <= self.low_score_threshold
            && self.low_score_threshold < self.high_score_threshold
            && self.high_score_threshold <= 1.0
            && self.iou_gate > 0.0
            && self.iou_gate < 1.0
            && self.max_coast_frames > 0
            && self.min_track_length > 0;
        if ok {
            Ok(())
        } else {
            Err(TrackingError::Params(format!("{self:?}")))
        }
    }
}

#[derive(Debug, Error)]
pub enum TrackingError {
    #[error("invalid tracker parameters: {0}")]
    Params(String),
    #[error("detections from several cameras: {0} and {1}")]
    MixedCameras(CameraId, CameraId),
    #[error("frames out of order: {0} after {1}")]
    Unordered(i64, i64),
    #[error("frame {frame}: detection {index} {message}")]
    BadDetection { frame: i64, index: usize, message: String },
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("tracklet {id}: {message}")]
    Invalid { id: TrackletId, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Intersection over union; 0 for disjoint boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let w = (a.u_max.min(b.u_max) - a.u_min.max(b.u_min)).max(0.0);
    let h = (a.v_max.min(b.v_max) - a.v_min.max(b.v_min)).max(0.0);
    let inter = w * h;
    if inter <= 0.0 {
        return 0.0;
    }
    inter / (a.area() + b.area() - inter)
}

const VELOCITY_SMOOTHING: f64 = 0.5;

struct Track {
    samples: Vec<TrackletSample>,
    /// Box-center velocity, pixels per frame.
    velocity: (f64, f64),
}

impl Track {
    fn last(&self) -> &TrackletSample {
        self.samples.last().expect("tracks start with a sample")
    }

    fn predict(&self, frame: i64) -> BBox {
        let last = self.last();
        let dt = (frame - last.frame) as f64;
        let (du, dv) = (self.velocity.0 * dt, self.velocity.1 * dt);
        let b = last.bbox;
        BBox::new(b.u_min + du, b.v_min + dv, b.u_max + du, b.v_max + dv)
    }

    fn extend(&mut self, frame: i64, bbox: BBox) {
        let last = *self.last();
        let dt = (frame - last.frame) as f64;
        let center = |b: &BBox| (0.5 * (b.u_min + b.u_max), 0.5 * (b.v_min + b.v_max));
        let (c0, c1) = (center(&last.bbox), center(&bbox));
        let observed = ((c1.0 - c0.0) / dt, (c1.1 - c0.1) / dt);
        let a = VELOCITY_SMOOTHING;
        self.velocity = (
            a * observed.0 + (1.0 - a) * self.velocity.0,
            a * observed.1 + (1.0 - a) * self.velocity.1,
        );
        self.samples.push(TrackletSample::new(frame, bbox));
    }
}

/// Greedy max-IoU assignment of `tracks` (indices into `all`) to
/// `candidates` (indices into `dets`). Ties go to the lower detection index,
/// then the older track. Returns the matched pairs.
fn greedy_match(
    all: &[Track],
    tracks: &[usize],
    dets: &[Detection],
    candidates: &[usize],
    frame: i64,
    gate: f64,
) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for &t in tracks {
        let pred = all[t].predict(frame);
        for &d in candidates {
            let v = iou(&pred, &dets[d].bbox);
            if v >= gate {
                pairs.push((v, d, t));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_t = vec![false; all.len()];
    let mut used_d = vec![false; dets.len()];
    let mut out = Vec::new();
    for (_, d, t) in pairs {
        if !used_t[t] && !used_d[d] {
            used_t[t] = true;
            used_d[d] = true;
            out.push((t, d));
        }
    }
    out
}

/// Two-stage tracking-by-detection over the frames of one camera.
///
/// Output tracklets carry ids `1..` in order of creation; callers ingesting
/// them into a session get fresh session ids.
pub fn track_detections(frames: &[DetectionFrame], params: &TrackerParams) -> Result<Vec<Tracklet>, TrackingError> {
    params.check()?;
    let Some(first) = frames.first() else {
        return Ok(Vec::new());
    };
    let camera_id = first.camera_id.clone();
    for w in frames.windows(2) {
        if w[1].frame <= w[0].frame {
            return Err(TrackingError::Unordered(w[1].frame, w[0].frame));
        }
    }
    let mut tracks: Vec<Track> = Vec::new();
    let mut active: Vec<usize> = Vec::new();

    for df in frames {
        if df.camera_id != camera_id {
            return Err(TrackingError::MixedCameras(camera_id, df.camera_id.clone()));
        }
        for (index, d) in df.detections.iter().enumerate() {
            if !d.bbox.is_valid() {
                return Err(TrackingError::BadDetection {
                    frame: df.frame,
                    index,
                    message: "has an invalid box".into(),
                });
            }
            if !(0.0..=1.0).contains(&d.score) {
                return Err(TrackingError::BadDetection {
                    frame: df.frame,
                    index,
                    message: format!("score {} outside [0, 1]", d.score),
                });
            }
        }
        let max_gap = i64::from(params.max_coast_frames) + 1;
        active.retain(|&t| df.frame - tracks[t].last().frame <= max_gap);

        let dets = &df.detections;
        let high: Vec<usize> = (0..dets.len())
            .filter(|&i| dets[i].score >= params.high_score_threshold)
            .collect();
        let low: Vec<usize> = (0..dets.len())
            .filter(|&i| (params.low_score_threshold..params.high_score_threshold).contains(&dets[i].score))
            .collect();

        let first_stage = greedy_match(&tracks, &active, dets, &high, df.frame, params.iou_gate);
        let matched_tracks: Vec<usize> = first_stage.iter().map(|m| m.0).collect();
        let remaining: Vec<usize> = active.iter().copied().filter(|t| !matched_tracks.contains(t)).collect();
        let second_stage = greedy_match(&tracks, &remaining, dets, &low, df.frame, params.iou_gate);

        let mut used = vec![false; dets.len()];
        for (t, d) in first_stage.into_iter().chain(second_stage) {
            used[d] = true;
            tracks[t].extend(df.frame, dets[d].bbox);
        }
        for d in high.into_iter().filter(|&d| !used[d]) {
            active.push(tracks.len());
            tracks.push(Track {
                samples: vec![TrackletSample::new(df.frame, dets[d].bbox)],
                velocity: (0.0, 0.0),
            });
        }
    }

    Ok(tracks
        .into_iter()
        .filter(|t| t.samples.len() >= params.min_track_length as usize)
        .enumerate()
        .map(|(i, t)| Tracklet {
            id: TrackletId(i as u64 + 1),
            camera_id: camera_id.clone(),
            samples: t.samples,
            source: Source::Auto,
        })
        .collect())
}

//! Frame synchronization from a shared light event.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::GeometryError;
use crate::model::{CameraId, Session};

/// Frame offsets that put every camera's marker frame on the same timeline
/// instant. The reference camera gets offset 0; a frame `f` of camera `c`
/// sits at `(f - offset[c]) / fps` seconds.
pub fn align_frames(
    session: &Session,
    markers: &BTreeMap<CameraId, i64>,
) -> Result<BTreeMap<CameraId, i64>, GeometryError> {
    for cam in &session.cameras {
        if !markers.contains_key(&cam.camera_id) {
            return Err(GeometryError::MissingMarker(cam.camera_id.clone()));
        }
    }
    let reference = markers[&session.reference_camera];
    Ok(session
        .cameras
        .iter()
        .map(|c| (c.camera_id.clone(), markers[&c.camera_id] - reference))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarkerParams {
    /// Leading frames used to estimate the unlit baseline.
    pub baseline_frames: usize,
    /// Threshold above the baseline median, in median absolute deviations.
    pub mad_multiple: f64,
}

impl Default for MarkerParams {
    fn default() -> Self {
        MarkerParams {
            baseline_frames: 30,
            mad_multiple: 10.0,
        }
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Index of the first frame whose region-of-interest luminance rises above
/// `median + mad_multiple * MAD` of the leading baseline frames.
pub fn detect_marker(luminance: &[f64], params: &MarkerParams) -> Result<usize, GeometryError> {
    if luminance.len() < 2 {
        return Err(GeometryError::NoMarker);
    }
    let n = params.baseline_frames.clamp(1, luminance.len());
    let mut base = luminance[..n].to_vec();
    let med = median(&mut base);
    let mut dev: Vec<f64> = luminance[..n].iter().map(|v| (v - med).abs()).collect();
    let mad = median(&mut dev);
    let threshold = med + params.mad_multiple * mad;
    luminance
        .iter()
        .position(|&v| v > threshold)
        .ok_or(GeometryError::NoMarker)
}

/// Marker frame of every camera's luminance trace.
pub fn detect_markers(
    signals: &BTreeMap<CameraId, Vec<f64>>,
    params: &MarkerParams,
) -> Result<BTreeMap<CameraId, i64>, (CameraId, GeometryError)> {
    signals
        .iter()
        .map(|(cam, sig)| {
            detect_marker(sig, params)
                .map(|f| (cam.clone(), f as i64))
                .map_err(|e| (cam.clone(), e))
        })
        .collect()
}

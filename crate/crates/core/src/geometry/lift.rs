//! Cross-view association of tracklets and lifting to metric trajectories.
//!
//! Every admissible pair of tracklets from different cameras is triangulated
//! frame by frame on the shared timeline and scored by its mean reprojection
//! error. Pairs are accepted greedily, lowest error first, each tracklet used
//! at most once. Accepted pairs then pick up tracklets from further cameras
//! that agree with the lifted path.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::triangulate::{triangulate, Observation};
use super::{project, GeometryError};
use crate::model::{
    CameraId, CameraModel, MetricTrajectory, PixelPoint, Session, Source, SourceRef, Tracklet, TrackletId,
    TrajectorySample, WorldPoint,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssociationParams {
    /// Maximum mean reprojection error (pixels) for an accepted match.
    pub max_error_px: f64,
    /// Minimum number of shared timeline frames.
    pub min_overlap: usize,
}

impl Default for AssociationParams {
    fn default() -> Self {
        AssociationParams {
            max_error_px: 10.0,
            min_overlap: 10,
        }
    }
}

/// A triangulated point on the session timeline (reference-camera frames).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LiftedFrame {
    pub frame: i64,
    pub point: WorldPoint,
    pub rms_error: f64,
}

/// Candidate metric path of a tracklet pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairLift {
    pub frames: Vec<LiftedFrame>,
    /// Mean over frames of the per-frame RMS reprojection error.
    pub mean_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Match {
    /// One tracklet per camera, in session camera order.
    pub tracklets: Vec<TrackletId>,
    /// Mean reprojection error of the pair that founded the match.
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AssociationResult {
    pub matches: Vec<Match>,
    pub unmatched: Vec<TrackletId>,
}

/// Camera and timeline offset of one tracklet.
struct View<'a> {
    camera: &'a CameraModel,
    offset: i64,
}

fn view<'a>(session: &'a Session, camera_id: &CameraId) -> Result<View<'a>, GeometryError> {
    let camera = session
        .camera(camera_id)
        .ok_or_else(|| GeometryError::UnknownCamera(camera_id.clone()))?;
    let offset = *session
        .sync_offsets
        .get(camera_id)
        .ok_or_else(|| GeometryError::MissingSync(camera_id.clone()))?;
    Ok(View { camera, offset })
}

/// Pairs of sample indices for frames both tracklets cover on the timeline.
fn shared_frames(a: &Tracklet, off_a: i64, b: &Tracklet, off_b: i64) -> Vec<(i64, usize, usize)> {
    let mut out = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < a.samples.len() && j < b.samples.len() {
        let fa = a.samples[i].frame - off_a;
        let fb = b.samples[j].frame - off_b;
        match fa.cmp(&fb) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                out.push((fa, i, j));
                i += 1;
                j += 1;
            }
        }
    }
    out
}

fn span_overlap(a: &Tracklet, off_a: i64, b: &Tracklet, off_b: i64) -> i64 {
    match (a.first_frame(), a.last_frame(), b.first_frame(), b.last_frame()) {
        (Some(a0), Some(a1), Some(b0), Some(b1)) => {
            ((a1 - off_a).min(b1 - off_b) - (a0 - off_a).max(b0 - off_b) + 1).max(0)
        }
        _ => 0,
    }
}

/// Triangulates two tracklets from different cameras on every timeline frame
/// they share.
pub fn lift_pair(
    session: &Session,
    a: &Tracklet,
    b: &Tracklet,
    params: &AssociationParams,
) -> Result<PairLift, GeometryError> {
    if a.camera_id == b.camera_id {
        return Err(GeometryError::SameCamera(a.camera_id.clone()));
    }
    let va = view(session, &a.camera_id)?;
    let vb = view(session, &b.camera_id)?;
    let shared = shared_frames(a, va.offset, b, vb.offset);
    if shared.len() < params.min_overlap {
        return Err(GeometryError::InsufficientOverlap {
            overlap: shared.len(),
            required: params.min_overlap,
        });
    }
    let frames: Vec<LiftedFrame> = shared
        .iter()
        .filter_map(|&(frame, i, j)| {
            let obs: [Observation<'_>; 2] = [
                (va.camera, a.samples[i].bbox.anchor()),
                (vb.camera, b.samples[j].bbox.anchor()),
            ];
            triangulate(&obs).ok().map(|t| LiftedFrame {
                frame,
                point: t.point,
                rms_error: t.rms_error,
            })
        })
        .collect();
    if frames.is_empty() {
        return Err(GeometryError::Degenerate(format!(
            "every shared frame of tracklets {} and {} is degenerate",
            a.id, b.id
        )));
    }
    let mean_error = frames.iter().map(|f| f.rms_error).sum::<f64>() / frames.len() as f64;
    Ok(PairLift { frames, mean_error })
}

/// Mean pixel distance between a lifted path projected into `t`'s camera and
/// `t`'s anchors, over shared frames. `None` when they share fewer than
/// `min_overlap` frames.
fn attach_error(lift: &PairLift, t: &Tracklet, v: &View<'_>, min_overlap: usize) -> Option<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    let mut j = 0;
    for lf in &lift.frames {
        let frame = lf.frame + v.offset;
        while j < t.samples.len() && t.samples[j].frame < frame {
            j += 1;
        }
        if j < t.samples.len() && t.samples[j].frame == frame {
            let anchor: PixelPoint = t.samples[j].bbox.anchor();
            total += match project(v.camera, &lf.point) {
                Ok(p) => p.distance(&anchor),
                Err(_) => super::triangulate::BEHIND_CAMERA_PENALTY_PX,
            };
            n += 1;
        }
    }
    (n >= min_overlap && n > 0).then(|| total / n as f64)
}

fn check_ready(session: &Session) -> Result<Vec<&CameraId>, GeometryError> {
    let cams: BTreeSet<&CameraId> = session.store.tracklets.values().map(|t| &t.camera_id).collect();
    for cam in &cams {
        if !session.has_camera(cam) {
            return Err(GeometryError::UnknownCamera((*cam).clone()));
        }
        if !session.calibrated.contains(*cam) {
            return Err(GeometryError::NotCalibrated((*cam).clone()));
        }
        if !session.sync_offsets.contains_key(*cam) {
            return Err(GeometryError::MissingSync((*cam).clone()));
        }
    }
    // Session camera order.
    Ok(session
        .cameras
        .iter()
        .map(|c| &c.camera_id)
        .filter(|c| cams.contains(c))
        .collect())
}

/// Scores of every admissible cross-camera pair, sorted by error then ids.
pub fn score_pairs(
    session: &Session,
    params: &AssociationParams,
) -> Result<Vec<(f64, TrackletId, TrackletId)>, GeometryError> {
    let cams = check_ready(session)?;
    let rank: BTreeMap<&CameraId, usize> = cams.iter().enumerate().map(|(i, c)| (*c, i)).collect();
    let tracklets: Vec<&Tracklet> = session.store.tracklets.values().collect();
    let mut candidates = Vec::new();
    for (i, a) in tracklets.iter().enumerate() {
        for b in &tracklets[i + 1..] {
            if a.camera_id == b.camera_id {
                continue;
            }
            let (a, b) = if rank[&a.camera_id] < rank[&b.camera_id] {
                (*a, *b)
            } else {
                (*b, *a)
            };
            let off_a = session.sync_offsets[&a.camera_id];
            let off_b = session.sync_offsets[&b.camera_id];
            if span_overlap(a, off_a, b, off_b) >= params.min_overlap as i64 {
                candidates.push((a, b));
            }
        }
    }
    let mut scored: Vec<(f64, TrackletId, TrackletId)> = candidates
        .par_iter()
        .filter_map(|(a, b)| {
            lift_pair(session, a, b, params)
                .ok()
                .map(|l| (l.mean_error, a.id, b.id))
        })
        .collect();
    scored.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    Ok(scored)
}

/// Groups tracklets that view the same pedestrian.
pub fn associate_cross_view(
    session: &Session,
    params: &AssociationParams,
) -> Result<AssociationResult, GeometryError> {
    let scored = score_pairs(session, params)?;
    let mut used: BTreeSet<TrackletId> = BTreeSet::new();
    let mut accepted: Vec<(TrackletId, TrackletId, f64)> = Vec::new();
    for (err, a, b) in scored {
        if err > params.max_error_px {
            break;
        }
        if used.contains(&a) || used.contains(&b) {
            continue;
        }
        used.insert(a);
        used.insert(b);
        accepted.push((a, b, err));
    }

    let cams = check_ready(session)?;
    let mut matches = Vec::with_capacity(accepted.len());
    for (a, b, err) in accepted {
        let ta = &session.store.tracklets[&a];
        let tb = &session.store.tracklets[&b];
        let lift = lift_pair(session, ta, tb, params)?;
        let mut members = vec![a, b];
        for cam in &cams {
            if **cam == ta.camera_id || **cam == tb.camera_id {
                continue;
            }
            let v = view(session, cam)?;
            let best = session
                .store
                .tracklets
                .values()
                .filter(|t| &t.camera_id == *cam && !used.contains(&t.id))
                .filter_map(|t| attach_error(&lift, t, &v, params.min_overlap).map(|e| (e, t.id)))
                .filter(|(e, _)| *e <= params.max_error_px)
                .min_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
            if let Some((_, id)) = best {
                used.insert(id);
                members.push(id);
            }
        }
        let order: BTreeMap<&CameraId, usize> = cams.iter().enumerate().map(|(i, c)| (*c, i)).collect();
        members.sort_by_key(|id| order[&session.store.tracklets[id].camera_id]);
        matches.push(Match {
            tracklets: members,
            error: err,
        });
    }
    matches.sort_by(|a, b| a.tracklets.cmp(&b.tracklets));
    let unmatched = session
        .store
        .tracklets
        .keys()
        .filter(|id| !used.contains(id))
        .copied()
        .collect();
    Ok(AssociationResult { matches, unmatched })
}

/// Triangulates every timeline frame seen by at least two of `members`.
pub fn lift_match(session: &Session, members: &[TrackletId]) -> Result<Vec<LiftedFrame>, GeometryError> {
    let mut per_frame: BTreeMap<i64, Vec<Observation<'_>>> = BTreeMap::new();
    for id in members {
        let t = session
            .store
            .tracklets
            .get(id)
            .ok_or(GeometryError::UnknownTracklet(*id))?;
        let v = view(session, &t.camera_id)?;
        for s in &t.samples {
            per_frame
                .entry(s.frame - v.offset)
                .or_default()
                .push((v.camera, s.bbox.anchor()));
        }
    }
    Ok(per_frame
        .into_iter()
        .filter(|(_, obs)| obs.len() >= 2)
        .filter_map(|(frame, obs)| {
            triangulate(&obs).ok().map(|t| LiftedFrame {
                frame,
                point: t.point,
                rms_error: t.rms_error,
            })
        })
        .collect())
}

/// Linear resampling of timeline frames (at `fps`) onto label steps (at
/// `label_frequency`) within the lifted span.
pub fn resample(frames: &[LiftedFrame], fps: f64, label_frequency: f64) -> Vec<TrajectorySample> {
    let (Some(first), Some(last)) = (frames.first(), frames.last()) else {
        return Vec::new();
    };
    let time = |f: &LiftedFrame| f.frame as f64 / fps;
    let eps = 1e-9;
    let j0 = (time(first) * label_frequency - eps).ceil() as i64;
    let j1 = (time(last) * label_frequency + eps).floor() as i64;
    let mut out = Vec::new();
    let mut k = 0;
    for step in j0..=j1 {
        let t = step as f64 / label_frequency;
        while k + 1 < frames.len() && time(&frames[k + 1]) <= t + eps {
            k += 1;
        }
        let a = &frames[k];
        let p = if (time(a) - t).abs() <= eps || k + 1 >= frames.len() {
            a.point
        } else {
            let b = &frames[k + 1];
            let w = (t - time(a)) / (time(b) - time(a));
            WorldPoint::new(
                a.point.x + w * (b.point.x - a.point.x),
                a.point.y + w * (b.point.y - a.point.y),
                a.point.z + w * (b.point.z - a.point.z),
            )
        };
        out.push(TrajectorySample {
            step,
            x: p.x,
            y: p.y,
            z: p.z,
        });
    }
    out
}

/// Replaces the session's metric trajectories with one per match.
pub fn lift_session(session: &Session, association: &AssociationResult) -> Result<Session, GeometryError> {
    let lifted = association
        .matches
        .par_iter()
        .map(|m| lift_match(session, &m.tracklets))
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = session.clone();
    out.store.trajectories.clear();
    for (m, frames) in association.matches.iter().zip(lifted) {
        let samples = resample(&frames, session.fps, session.label_frequency);
        if samples.is_empty() {
            continue;
        }
        let source = m
            .tracklets
            .iter()
            .map(|id| session.store.tracklets[id].source)
            .reduce(Source::combine)
            .unwrap_or(Source::Auto);
        let ped_id = out.ids.mint_ped();
        out.store.trajectories.insert(
            ped_id,
            MetricTrajectory {
                ped_id,
                samples,
                source_tracklets: m
                    .tracklets
                    .iter()
                    .map(|id| SourceRef {
                        camera_id: session.store.tracklets[id].camera_id.clone(),
                        tracklet_id: *id,
                    })
                    .collect(),
                source,
            },
        );
    }
    Ok(out)
}

//! Synthetic rigs, walkers and edit streams.
//!
//! Used by the test suites and by `pedlabel synth` to produce fixtures whose
//! ground truth is known exactly.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::editops::{EditOp, Layer, SampleList};
use crate::geometry::project;
use crate::model::{
    BBox, CameraId, CameraModel, Landmark, Session, SessionConfig, Tracklet, TrackletId, TrackletSample,
    TrajectorySample, WorldPoint,
};
use crate::tracking::{Detection, DetectionFrame};

pub const IMAGE_WIDTH: f64 = 1920.0;
pub const IMAGE_HEIGHT: f64 = 1080.0;
/// Height used to size synthetic bounding boxes, meters.
pub const PERSON_HEIGHT: f64 = 1.7;

/// World-to-camera pose of a camera at `eye` looking at `target`, with the
/// image `v` axis pointing down (world `z` is up).
pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>) -> (Matrix3<f64>, Vector3<f64>) {
    let forward = (target - eye).normalize();
    let right = forward.cross(&Vector3::z()).normalize();
    let down = forward.cross(&right);
    let r = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
    let t = -(r * eye);
    (r, t)
}

/// Cameras on a circle of `radius` meters at `height`, `90°` apart, all
/// looking at the origin.
pub fn ring_rig(n_cameras: usize, radius: f64, height: f64) -> Vec<CameraModel> {
    (0..n_cameras)
        .map(|i| {
            let az = i as f64 * PI / 2.0 + 0.3;
            let eye = Vector3::new(radius * az.cos(), radius * az.sin(), height);
            let (r, t) = look_at(eye, Vector3::new(0.0, 0.0, 0.0));
            CameraModel::pinhole(format!("cam{}", i + 1), 1000.0, 1000.0, IMAGE_WIDTH / 2.0, IMAGE_HEIGHT / 2.0)
                .with_distortion(-0.03, 0.005)
                .with_pose(r, t)
        })
        .collect()
}

pub fn in_image(p: &crate::model::PixelPoint) -> bool {
    p.u >= 0.0 && p.u < IMAGE_WIDTH && p.v >= 0.0 && p.v < IMAGE_HEIGHT
}

/// Surveyed points spread over the scene at several heights, observed
/// (noise-free) by every camera that sees them.
pub fn landmarks(cameras: &[CameraModel], n: usize, rng: &mut impl Rng) -> Vec<Landmark> {
    (0..n)
        .map(|i| {
            let world = WorldPoint::new(
                rng.gen_range(-6.0..6.0),
                rng.gen_range(-6.0..6.0),
                [0.0, 0.8, 1.6, 2.5][i % 4] + rng.gen_range(0.0..0.2),
            );
            let observations = cameras
                .iter()
                .filter_map(|c| {
                    project(c, &world)
                        .ok()
                        .filter(in_image)
                        .map(|p| (c.camera_id.clone(), p))
                })
                .collect();
            Landmark { world, observations }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Motion {
    Static { x: f64, y: f64 },
    Linear { x: f64, y: f64, vx: f64, vy: f64 },
    Circle { cx: f64, cy: f64, radius: f64, omega: f64, phase: f64 },
}

/// Ground-truth pedestrian on the ground plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Walker {
    pub motion: Motion,
    pub start: f64,
    pub end: f64,
}

impl Walker {
    pub fn position(&self, t: f64) -> [f64; 2] {
        match self.motion {
            Motion::Static { x, y } => [x, y],
            Motion::Linear { x, y, vx, vy } => [x + vx * (t - self.start), y + vy * (t - self.start)],
            Motion::Circle {
                cx,
                cy,
                radius,
                omega,
                phase,
            } => {
                let a = phase + omega * (t - self.start);
                [cx + radius * a.cos(), cy + radius * a.sin()]
            }
        }
    }

    pub fn active(&self, t: f64) -> bool {
        t >= self.start - 1e-9 && t <= self.end + 1e-9
    }
}

/// A complete synthetic recording: rig, walkers and per-camera clock offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub cameras: Vec<CameraModel>,
    pub walkers: Vec<Walker>,
    pub fps: f64,
    pub label_frequency: f64,
    pub duration: f64,
    /// Camera frame index minus timeline frame index, per camera.
    pub frame_offsets: BTreeMap<CameraId, i64>,
    /// Timeline frame of the sync flash.
    pub flash_frame: i64,
}

impl Scene {
    /// Three cameras, `walkers.len()` pedestrians, 30 fps video labeled at 10 Hz.
    pub fn new(walkers: Vec<Walker>, duration: f64) -> Scene {
        let cameras = ring_rig(3, 12.0, 9.0);
        let frame_offsets = cameras
            .iter()
            .zip([0, 7, -4])
            .map(|(c, o)| (c.camera_id.clone(), o))
            .collect();
        Scene {
            cameras,
            walkers,
            fps: 30.0,
            label_frequency: 10.0,
            duration,
            frame_offsets,
            flash_frame: 45,
        }
    }

    /// Three slow constant-velocity walkers over 20 s.
    pub fn three_walkers() -> Scene {
        let mk = |x, y, vx, vy| Walker {
            motion: Motion::Linear { x, y, vx, vy },
            start: 0.0,
            end: 20.0,
        };
        Scene::new(
            vec![mk(-4.0, -3.0, 0.3, 0.1), mk(3.0, -2.0, -0.2, 0.25), mk(0.0, 3.5, 0.15, -0.2)],
            20.0,
        )
    }

    /// Ten walkers circling or pacing in separate cells for 60 s.
    pub fn ten_walkers() -> Scene {
        let mut walkers = Vec::new();
        let cells = [
            (-4.5, -3.0),
            (-1.5, -3.0),
            (1.5, -3.0),
            (4.5, -3.0),
            (-3.0, 0.0),
            (0.0, 0.0),
            (3.0, 0.0),
            (-1.5, 3.0),
            (1.5, 3.0),
            (4.5, 3.0),
        ];
        for (i, (cx, cy)) in cells.into_iter().enumerate() {
            let motion = if i % 3 == 2 {
                Motion::Linear {
                    x: cx - 0.6,
                    y: cy,
                    vx: 0.02,
                    vy: 0.0,
                }
            } else {
                Motion::Circle {
                    cx,
                    cy,
                    radius: 0.6,
                    omega: if i % 2 == 0 { 0.4 } else { -0.35 },
                    phase: i as f64,
                }
            };
            walkers.push(Walker {
                motion,
                start: 0.0,
                end: 60.0,
            });
        }
        Scene::new(walkers, 60.0)
    }

    pub fn timeline_frames(&self) -> i64 {
        (self.duration * self.fps).round() as i64
    }

    /// Session with the rig's intrinsics (poses left at identity, to be
    /// recovered by calibration) and `n_landmarks` surveyed landmarks.
    pub fn session(&self, n_landmarks: usize, rng: &mut impl Rng) -> Session {
        let mut session = Session::create(SessionConfig {
            session_id: "synthetic".to_string(),
            label_frequency: self.label_frequency,
            fps: self.fps,
            cameras: self
                .cameras
                .iter()
                .map(|c| c.clone().with_pose(Matrix3::identity(), Vector3::zeros()))
                .collect(),
            reference_camera: None,
        })
        .expect("synthetic rig is valid");
        session.landmarks = landmarks(&self.cameras, n_landmarks, rng);
        session
    }

    /// Session with true poses and offsets already in place.
    pub fn calibrated_session(&self) -> Session {
        let mut session = Session::create(SessionConfig {
            session_id: "synthetic".to_string(),
            label_frequency: self.label_frequency,
            fps: self.fps,
            cameras: self.cameras.clone(),
            reference_camera: None,
        })
        .expect("synthetic rig is valid");
        session.calibrated = self.cameras.iter().map(|c| c.camera_id.clone()).collect();
        session.sync_offsets = self.frame_offsets.clone();
        session
    }

    /// Box whose bottom-center is the projected foot point.
    fn bbox(&self, cam: &CameraModel, xy: [f64; 2]) -> Option<BBox> {
        let foot = project(cam, &WorldPoint::new(xy[0], xy[1], 0.0)).ok()?;
        let head = project(cam, &WorldPoint::new(xy[0], xy[1], PERSON_HEIGHT)).ok()?;
        if !in_image(&foot) {
            return None;
        }
        let h = (foot.v - head.v).max(10.0);
        let w = 0.4 * h;
        Some(BBox::new(foot.u - w / 2.0, foot.v - h, foot.u + w / 2.0, foot.v))
    }

    /// Per-frame detections for one camera, in camera frame indices, with
    /// Gaussian pixel noise of `noise_px` on each box edge.
    pub fn detections(&self, camera: usize, noise_px: f64, rng: &mut impl Rng) -> Vec<DetectionFrame> {
        let cam = &self.cameras[camera];
        let offset = self.frame_offsets[&cam.camera_id];
        let noise = Normal::new(0.0, noise_px.max(0.0)).expect("finite sigma");
        (0..=self.timeline_frames())
            .map(|k| {
                let t = k as f64 / self.fps;
                let detections = self
                    .walkers
                    .iter()
                    .filter(|w| w.active(t))
                    .filter_map(|w| self.bbox(cam, w.position(t)))
                    .map(|b| {
                        let mut a = [b.u_min, b.v_min, b.u_max, b.v_max];
                        if noise_px > 0.0 {
                            for v in &mut a {
                                *v += noise.sample(rng);
                            }
                        }
                        Detection {
                            bbox: BBox::new(a[0], a[1], a[2], a[3]),
                            score: 0.9,
                        }
                    })
                    .collect();
                DetectionFrame {
                    camera_id: cam.camera_id.clone(),
                    frame: k + offset,
                    detections,
                }
            })
            .collect()
    }

    /// Ground-truth tracklets (one per visible walker) for one camera.
    pub fn true_tracklets(&self, camera: usize) -> Vec<Tracklet> {
        let cam = &self.cameras[camera];
        let offset = self.frame_offsets[&cam.camera_id];
        self.walkers
            .iter()
            .enumerate()
            .filter_map(|(i, w)| {
                let samples: Vec<TrackletSample> = (0..=self.timeline_frames())
                    .filter_map(|k| {
                        let t = k as f64 / self.fps;
                        w.active(t)
                            .then(|| self.bbox(cam, w.position(t)))
                            .flatten()
                            .map(|b| TrackletSample::new(k + offset, b))
                    })
                    .collect();
                (!samples.is_empty()).then(|| Tracklet {
                    id: TrackletId(i as u64 + 1),
                    camera_id: cam.camera_id.clone(),
                    samples,
                    source: crate::model::Source::Auto,
                })
            })
            .collect()
    }

    /// Mean region-of-interest luminance per camera frame: dark with sensor
    /// noise, bright for a few frames from the flash on.
    pub fn luminance(&self, camera: usize, rng: &mut impl Rng) -> Vec<f64> {
        let offset = self.frame_offsets[&self.cameras[camera].camera_id];
        let noise = Normal::new(12.0, 1.5).expect("finite sigma");
        let flash = self.flash_frame + offset;
        (0..self.timeline_frames().max(flash + 10))
            .map(|f| {
                if (flash..flash + 6).contains(&f) {
                    210.0
                } else {
                    noise.sample(rng)
                }
            })
            .collect()
    }

    /// Camera frame index of the flash, per camera.
    pub fn flash_markers(&self) -> BTreeMap<CameraId, i64> {
        self.frame_offsets
            .iter()
            .map(|(c, o)| (c.clone(), self.flash_frame + o))
            .collect()
    }
}

fn random_bbox(rng: &mut impl Rng) -> BBox {
    let u = rng.gen_range(0.0..1800.0);
    let v = rng.gen_range(0.0..900.0);
    BBox::new(u, v, u + rng.gen_range(5.0..120.0), v + rng.gen_range(10.0..180.0))
}

/// A random, valid tracklet of `len` samples starting near `start`.
pub fn random_tracklet(rng: &mut impl Rng, camera_id: CameraId, start: i64, len: usize) -> Tracklet {
    let mut frame = start;
    let samples = (0..len.max(1))
        .map(|_| {
            frame += rng.gen_range(1..3);
            TrackletSample::new(frame, random_bbox(rng))
        })
        .collect();
    Tracklet {
        id: TrackletId(0),
        camera_id,
        samples,
        source: crate::model::Source::Auto,
    }
}

fn random_metric_samples(rng: &mut impl Rng, start: i64, len: usize) -> Vec<TrajectorySample> {
    let mut step = start;
    (0..len.max(1))
        .map(|_| {
            step += rng.gen_range(1..3);
            TrajectorySample {
                step,
                x: rng.gen_range(-10.0..10.0),
                y: rng.gen_range(-10.0..10.0),
                z: rng.gen_range(-0.1..0.1),
            }
        })
        .collect()
}

/// Session with `n_tracklets` random tracklets over `cameras` and a few
/// random metric trajectories.
pub fn random_session(rng: &mut impl Rng, n_cameras: usize, n_tracklets: usize, n_trajectories: usize) -> Session {
    let cameras = ring_rig(n_cameras.max(1), 12.0, 9.0);
    let mut session = Session::create(SessionConfig {
        session_id: format!("random-{}", rng.gen::<u32>()),
        label_frequency: 10.0,
        fps: 30.0,
        cameras: cameras.clone(),
        reference_camera: None,
    })
    .expect("valid rig");
    let tracklets = (0..n_tracklets)
        .map(|_| {
            let cam = cameras.choose(rng).expect("non-empty").camera_id.clone();
            let start = rng.gen_range(0..200);
            let len = rng.gen_range(1..25);
            random_tracklet(rng, cam, start, len)
        })
        .collect();
    session.ingest_tracklets(tracklets);
    for _ in 0..n_trajectories {
        let id = session.ids.mint_ped();
        let start = rng.gen_range(0..100);
        let len = rng.gen_range(1..25);
        session.store.trajectories.insert(
            id,
            crate::model::MetricTrajectory {
                ped_id: id,
                samples: random_metric_samples(rng, start, len),
                source_tracklets: Vec::new(),
                source: crate::model::Source::Auto,
            },
        );
    }
    session
}

/// Keys (frames or steps) and group of every track in one layer.
fn layer_tracks(session: &Session, layer: Layer) -> Vec<(u64, Option<CameraId>, Vec<i64>)> {
    match layer {
        Layer::Pixel => session
            .store
            .tracklets
            .values()
            .map(|t| (t.id.0, Some(t.camera_id.clone()), t.samples.iter().map(|s| s.frame).collect()))
            .collect(),
        Layer::Metric => session
            .store
            .trajectories
            .values()
            .map(|t| (t.ped_id.0, None, t.samples.iter().map(|s| s.step).collect()))
            .collect(),
    }
}

fn samples_at(layer: Layer, keys: &[i64], rng: &mut impl Rng) -> SampleList {
    match layer {
        Layer::Pixel => SampleList::Pixel(keys.iter().map(|&f| TrackletSample::new(f, random_bbox(rng))).collect()),
        Layer::Metric => SampleList::Metric(
            keys.iter()
                .map(|&step| TrajectorySample {
                    step,
                    x: rng.gen_range(-10.0..10.0),
                    y: rng.gen_range(-10.0..10.0),
                    z: 0.0,
                })
                .collect(),
        ),
    }
}

/// A random edit that is valid against the current store, or `None` when
/// the drawn kind has no valid instance (e.g. Join with no disjoint pair).
pub fn random_edit(session: &Session, rng: &mut impl Rng) -> Option<EditOp> {
    let layer = if session.store.trajectories.is_empty() || rng.gen_bool(0.6) {
        Layer::Pixel
    } else {
        Layer::Metric
    };
    let tracks = layer_tracks(session, layer);
    match rng.gen_range(0..6) {
        0 => {
            let splittable: Vec<_> = tracks.iter().filter(|t| t.2.len() >= 2).collect();
            let (id, _, keys) = *splittable.choose(rng)?;
            let frame = keys[rng.gen_range(1..keys.len())];
            Some(EditOp::Break { layer, id: *id, frame })
        }
        1 => {
            for _ in 0..20 {
                let a = tracks.choose(rng)?;
                let b = tracks.choose(rng)?;
                if a.0 != b.0 && a.1 == b.1 && a.2.iter().all(|k| b.2.binary_search(k).is_err()) {
                    return Some(EditOp::Join { layer, a: a.0, b: b.0 });
                }
            }
            None
        }
        2 => {
            // Keep the store from draining.
            if tracks.len() < 3 {
                return None;
            }
            Some(EditOp::Delete {
                layer,
                id: tracks.choose(rng)?.0,
            })
        }
        3 => {
            for _ in 0..20 {
                let a = tracks.choose(rng)?;
                let b = tracks.choose(rng)?;
                if a.0 == b.0 || a.1 != b.1 {
                    continue;
                }
                let hi = *a.2.last()?.min(b.2.last()?);
                let lo = (*a.2.first()?).min(*b.2.first()?);
                return Some(EditOp::Disentangle {
                    layer,
                    a: a.0,
                    b: b.0,
                    frame: rng.gen_range(lo..=hi),
                });
            }
            None
        }
        4 => {
            let (id, _, keys) = tracks.choose(rng)?;
            let id = *id;
            let from = keys[rng.gen_range(0..keys.len())] - rng.gen_range(0..3);
            let to = from + rng.gen_range(0..6);
            let mut new_keys: Vec<i64> = (from..=to).filter(|_| rng.gen_bool(0.5)).collect();
            let outside = keys.iter().any(|k| !(from..=to).contains(k));
            if new_keys.is_empty() && !outside {
                new_keys.push(from);
            }
            Some(EditOp::Relabel {
                id,
                from,
                to,
                samples: samples_at(layer, &new_keys, rng),
            })
        }
        _ => {
            let start = rng.gen_range(0..300);
            let len = rng.gen_range(1..10);
            let keys: Vec<i64> = (start..start + len).collect();
            let camera_id = match layer {
                Layer::Pixel => Some(session.cameras.choose(rng)?.camera_id.clone()),
                Layer::Metric => None,
            };
            Some(EditOp::AddMissing {
                camera_id,
                samples: samples_at(layer, &keys, rng),
            })
        }
    }
}

//! Session data model: cameras, tracklets, metric trajectories, landmarks.
//!
//! A [`Session`] is a plain value. Every pipeline step takes a session (or a
//! borrow of one) and produces a new one; edits go through
//! [`crate::editops`] so that each mutation is recorded in the action log.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::editops::ActionLog;

/// Camera identifier, e.g. `"cam1"`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CameraId(pub String);

impl CameraId {
    pub fn new(id: impl Into<String>) -> Self {
        CameraId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for CameraId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for CameraId {
    fn from(s: &str) -> Self {
        CameraId(s.to_string())
    }
}

macro_rules! int_id {
    ($(#[$meta:meta])* $name:ident, $prefix:literal) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub u64);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{}"), self.0)
            }
        }
    };
}

int_id!(
    /// Identifier of a pixel-space tracklet.
    TrackletId,
    "t"
);
int_id!(
    /// Identifier of a pedestrian (metric trajectory).
    PedId,
    "p"
);

/// Axis-aligned bounding box in image coordinates (origin top-left).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub u_min: f64,
    pub v_min: f64,
    pub u_max: f64,
    pub v_max: f64,
}

impl BBox {
    pub fn new(u_min: f64, v_min: f64, u_max: f64, v_max: f64) -> Self {
        BBox {
            u_min,
            v_min,
            u_max,
            v_max,
        }
    }

    pub fn is_valid(&self) -> bool {
        [self.u_min, self.v_min, self.u_max, self.v_max]
            .iter()
            .all(|c| c.is_finite())
            && self.u_min < self.u_max
            && self.v_min < self.v_max
    }

    pub fn width(&self) -> f64 {
        self.u_max - self.u_min
    }

    pub fn height(&self) -> f64 {
        self.v_max - self.v_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Ground-contact point of the pedestrian: bottom-center of the box.
    /// All geometry uses this point as the pedestrian's image position.
    pub fn anchor(&self) -> PixelPoint {
        PixelPoint::new(0.5 * (self.u_min + self.u_max), self.v_max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelPoint {
    pub u: f64,
    pub v: f64,
}

impl PixelPoint {
    pub fn new(u: f64, v: f64) -> Self {
        PixelPoint { u, v }
    }

    pub fn distance(&self, other: &PixelPoint) -> f64 {
        (self.u - other.u).hypot(self.v - other.v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl WorldPoint {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        WorldPoint { x, y, z }
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        WorldPoint::new(v.x, v.y, v.z)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

/// Where the samples of a track came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Auto,
    Manual,
    Mixed,
}

impl Source {
    pub fn combine(self, other: Source) -> Source {
        if self == other {
            self
        } else {
            Source::Mixed
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Source::Auto => "auto",
            Source::Manual => "manual",
            Source::Mixed => "mixed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackletSample {
    pub frame: i64,
    pub bbox: BBox,
}

impl TrackletSample {
    pub fn new(frame: i64, bbox: BBox) -> Self {
        TrackletSample { frame, bbox }
    }
}

/// A pixel-space trajectory of one pedestrian in one camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tracklet {
    pub id: TrackletId,
    pub camera_id: CameraId,
    pub samples: Vec<TrackletSample>,
    pub source: Source,
}

impl Tracklet {
    pub fn first_frame(&self) -> Option<i64> {
        self.samples.first().map(|s| s.frame)
    }

    pub fn last_frame(&self) -> Option<i64> {
        self.samples.last().map(|s| s.frame)
    }

    pub fn sample_at(&self, frame: i64) -> Option<&TrackletSample> {
        self.samples
            .binary_search_by_key(&frame, |s| s.frame)
            .ok()
            .map(|i| &self.samples[i])
    }
}

/// One ground-plane sample. `step` indexes the session's label timeline:
/// the sample's time is `step / label_frequency` seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub step: i64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl TrajectorySample {
    pub fn time(&self, label_frequency: f64) -> f64 {
        self.step as f64 / label_frequency
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceRef {
    pub camera_id: CameraId,
    pub tracklet_id: TrackletId,
}

/// A pedestrian's metric trajectory on the label timeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricTrajectory {
    pub ped_id: PedId,
    pub samples: Vec<TrajectorySample>,
    pub source_tracklets: Vec<SourceRef>,
    pub source: Source,
}

/// Pinhole camera with two radial distortion terms and a world-to-camera pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "CalibrationRecord", from = "CalibrationRecord")]
pub struct CameraModel {
    pub camera_id: CameraId,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub k1: f64,
    pub k2: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

/// On-disk form of a camera calibration: intrinsics, `R` row-major, `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub camera_id: CameraId,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub k1: f64,
    pub k2: f64,
    #[serde(rename = "R")]
    pub rotation: [f64; 9],
    pub t: [f64; 3],
}

impl From<CameraModel> for CalibrationRecord {
    fn from(c: CameraModel) -> Self {
        let r = &c.rotation;
        CalibrationRecord {
            camera_id: c.camera_id,
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            k1: c.k1,
            k2: c.k2,
            rotation: [
                r[(0, 0)],
                r[(0, 1)],
                r[(0, 2)],
                r[(1, 0)],
                r[(1, 1)],
                r[(1, 2)],
                r[(2, 0)],
                r[(2, 1)],
                r[(2, 2)],
            ],
            t: [c.translation.x, c.translation.y, c.translation.z],
        }
    }
}

impl From<CalibrationRecord> for CameraModel {
    fn from(r: CalibrationRecord) -> Self {
        CameraModel {
            camera_id: r.camera_id,
            fx: r.fx,
            fy: r.fy,
            cx: r.cx,
            cy: r.cy,
            k1: r.k1,
            k2: r.k2,
            rotation: Matrix3::from_row_slice(&r.rotation),
            translation: Vector3::from_row_slice(&r.t),
        }
    }
}

impl CameraModel {
    /// Camera with the given intrinsics, no distortion and identity pose.
    pub fn pinhole(camera_id: impl Into<String>, fx: f64, fy: f64, cx: f64, cy: f64) -> Self {
        CameraModel {
            camera_id: CameraId::new(camera_id),
            fx,
            fy,
            cx,
            cy,
            k1: 0.0,
            k2: 0.0,
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn with_distortion(mut self, k1: f64, k2: f64) -> Self {
        self.k1 = k1;
        self.k2 = k2;
        self
    }

    pub fn with_pose(mut self, rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        self.rotation = rotation;
        self.translation = translation;
        self
    }

    /// Camera center in world coordinates, `-Rᵀt`.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let intr = [self.fx, self.fy, self.cx, self.cy, self.k1, self.k2];
        if intr.iter().any(|v| !v.is_finite()) {
            out.push("non-finite intrinsics".to_string());
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            out.push(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            ));
        }
        let ortho = (self.rotation.transpose() * self.rotation - Matrix3::identity()).norm();
        if !(ortho < 1e-9) {
            out.push(format!("rotation is not orthonormal (|RᵀR - I| = {ortho:e})"));
        }
        let det = self.rotation.determinant();
        if !((det - 1.0).abs() <= 1e-9) {
            out.push(format!("rotation determinant is {det}, expected +1"));
        }
        if self.translation.iter().any(|v| !v.is_finite()) {
            out.push("non-finite translation".to_string());
        }
        out
    }
}

/// A surveyed physical point and where it appears in each camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    pub world: WorldPoint,
    pub observations: BTreeMap<CameraId, PixelPoint>,
}

/// Parameters for [`Session::create`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub session_id: String,
    pub label_frequency: f64,
    /// Nominal frame rate shared by all cameras.
    pub fps: f64,
    pub cameras: Vec<CameraModel>,
    /// Defaults to the first camera.
    #[serde(default)]
    pub reference_camera: Option<CameraId>,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("session needs at least one camera")]
    NoCameras,
    #[error("duplicate camera id {0}")]
    DuplicateCamera(CameraId),
    #[error("label frequency must be positive, got {0}")]
    BadLabelFrequency(f64),
    #[error("frame rate must be positive, got {0}")]
    BadFrameRate(f64),
    #[error("reference camera {0} is not one of the session cameras")]
    UnknownReference(CameraId),
    #[error("camera {camera}: {message}")]
    BadCamera { camera: CameraId, message: String },
}

/// Next fresh identifier per kind. Never rolled back, so ids are not reused
/// even after deletions or undo.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdAllocator {
    pub next_tracklet: u64,
    pub next_ped: u64,
}

impl Default for IdAllocator {
    fn default() -> Self {
        IdAllocator {
            next_tracklet: 1,
            next_ped: 1,
        }
    }
}

impl IdAllocator {
    pub fn mint_tracklet(&mut self) -> TrackletId {
        let id = TrackletId(self.next_tracklet);
        self.next_tracklet += 1;
        id
    }

    pub fn mint_ped(&mut self) -> PedId {
        let id = PedId(self.next_ped);
        self.next_ped += 1;
        id
    }

    /// Make sure future mints stay above ids that were assigned elsewhere.
    pub fn reserve_tracklet(&mut self, id: TrackletId) {
        self.next_tracklet = self.next_tracklet.max(id.0 + 1);
    }

    pub fn reserve_ped(&mut self, id: PedId) {
        self.next_ped = self.next_ped.max(id.0 + 1);
    }
}

/// The mutable content of a session: the tracks the labeler edits.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Store {
    pub tracklets: BTreeMap<TrackletId, Tracklet>,
    pub trajectories: BTreeMap<PedId, MetricTrajectory>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub session_id: String,
    pub label_frequency: f64,
    pub fps: f64,
    pub cameras: Vec<CameraModel>,
    pub reference_camera: CameraId,
    /// Cameras whose pose came from landmarks or a calibration file.
    pub calibrated: BTreeSet<CameraId>,
    pub sync_offsets: BTreeMap<CameraId, i64>,
    pub landmarks: Vec<Landmark>,
    pub store: Store,
    pub ids: IdAllocator,
    pub action_log: ActionLog,
}

impl Session {
    pub fn create(config: SessionConfig) -> Result<Session, ConfigError> {
        if config.cameras.is_empty() {
            return Err(ConfigError::NoCameras);
        }
        if !(config.label_frequency > 0.0 && config.label_frequency.is_finite()) {
            return Err(ConfigError::BadLabelFrequency(config.label_frequency));
        }
        if !(config.fps > 0.0 && config.fps.is_finite()) {
            return Err(ConfigError::BadFrameRate(config.fps));
        }
        let mut seen = BTreeSet::new();
        for cam in &config.cameras {
            if !seen.insert(cam.camera_id.clone()) {
                return Err(ConfigError::DuplicateCamera(cam.camera_id.clone()));
            }
            if let Some(message) = cam.violations().into_iter().next() {
                return Err(ConfigError::BadCamera {
                    camera: cam.camera_id.clone(),
                    message,
                });
            }
        }
        let reference = config
            .reference_camera
            .unwrap_or_else(|| config.cameras[0].camera_id.clone());
        if !seen.contains(&reference) {
            return Err(ConfigError::UnknownReference(reference));
        }
        let mut sync_offsets = BTreeMap::new();
        sync_offsets.insert(reference.clone(), 0);
        Ok(Session {
            session_id: config.session_id,
            label_frequency: config.label_frequency,
            fps: config.fps,
            cameras: config.cameras,
            reference_camera: reference,
            calibrated: BTreeSet::new(),
            sync_offsets,
            landmarks: Vec::new(),
            store: Store::default(),
            ids: IdAllocator::default(),
            action_log: ActionLog::default(),
        })
    }

    pub fn camera(&self, id: &CameraId) -> Option<&CameraModel> {
        self.cameras.iter().find(|c| &c.camera_id == id)
    }

    pub fn camera_mut(&mut self, id: &CameraId) -> Option<&mut CameraModel> {
        self.cameras.iter_mut().find(|c| &c.camera_id == id)
    }

    pub fn has_camera(&self, id: &CameraId) -> bool {
        self.camera(id).is_some()
    }

    /// Adds tracklets under freshly minted ids, returning the new ids in
    /// input order. The incoming ids are discarded.
    pub fn ingest_tracklets(&mut self, tracklets: Vec<Tracklet>) -> Vec<TrackletId> {
        tracklets
            .into_iter()
            .map(|mut t| {
                let id = self.ids.mint_tracklet();
                t.id = id;
                self.store.tracklets.insert(id, t);
                id
            })
            .collect()
    }

    /// Adds tracklets keeping their ids (e.g. imported from an external
    /// tracker). Fails on the first id already present.
    pub fn insert_tracklets(&mut self, tracklets: Vec<Tracklet>) -> Result<(), TrackletId> {
        if let Some(t) = tracklets
            .iter()
            .find(|t| self.store.tracklets.contains_key(&t.id))
        {
            return Err(t.id);
        }
        for t in tracklets {
            self.ids.reserve_tracklet(t.id);
            self.store.tracklets.insert(t.id, t);
        }
        Ok(())
    }

    /// Seconds on the session timeline for `frame` of camera `camera`.
    pub fn frame_time(&self, camera: &CameraId, frame: i64) -> Option<f64> {
        self.sync_offsets
            .get(camera)
            .map(|off| (frame - off) as f64 / self.fps)
    }
}

/// One failed invariant, naming the offending entity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub entity: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.entity, self.message)
    }
}

fn violation(entity: impl Into<String>, message: impl Into<String>) -> Violation {
    Violation {
        entity: entity.into(),
        message: message.into(),
    }
}

pub(crate) fn tracklet_violations(t: &Tracklet) -> Vec<String> {
    let mut out = Vec::new();
    if t.samples.is_empty() {
        out.push("tracklet has no samples".to_string());
    }
    if let Some(w) = t.samples.windows(2).find(|w| w[1].frame <= w[0].frame) {
        out.push(format!(
            "frames not strictly increasing ({} then {})",
            w[0].frame, w[1].frame
        ));
    }
    if let Some(s) = t.samples.iter().find(|s| !s.bbox.is_valid()) {
        out.push(format!("invalid bounding box at frame {}", s.frame));
    }
    out
}

pub(crate) fn trajectory_violations(t: &MetricTrajectory) -> Vec<String> {
    let mut out = Vec::new();
    if t.samples.is_empty() {
        out.push("trajectory has no samples".to_string());
    }
    if let Some(w) = t.samples.windows(2).find(|w| w[1].step <= w[0].step) {
        out.push(format!(
            "steps not strictly increasing ({} then {})",
            w[0].step, w[1].step
        ));
    }
    if let Some(s) = t
        .samples
        .iter()
        .find(|s| !(s.x.is_finite() && s.y.is_finite() && s.z.is_finite()))
    {
        out.push(format!("non-finite position at step {}", s.step));
    }
    out
}

/// Checks every model invariant; an empty list means the session is valid.
pub fn validate(session: &Session) -> Vec<Violation> {
    let mut out = Vec::new();
    if !(session.label_frequency > 0.0 && session.label_frequency.is_finite()) {
        out.push(violation(
            "session",
            format!("label frequency {} is not positive", session.label_frequency),
        ));
    }
    if !(session.fps > 0.0 && session.fps.is_finite()) {
        out.push(violation(
            "session",
            format!("frame rate {} is not positive", session.fps),
        ));
    }
    let mut ids = BTreeSet::new();
    for cam in &session.cameras {
        if !ids.insert(&cam.camera_id) {
            out.push(violation(
                format!("camera {}", cam.camera_id),
                "duplicate camera id",
            ));
        }
        for m in cam.violations() {
            out.push(violation(format!("camera {}", cam.camera_id), m));
        }
    }
    if !ids.contains(&session.reference_camera) {
        out.push(violation(
            "session",
            format!(
                "reference camera {} is not a session camera",
                session.reference_camera
            ),
        ));
    }
    match session.sync_offsets.get(&session.reference_camera) {
        Some(0) => {}
        other => out.push(violation(
            "session",
            format!("reference camera offset must be 0, found {other:?}"),
        )),
    }
    for cam in session.sync_offsets.keys().chain(session.calibrated.iter()) {
        if !ids.contains(cam) {
            out.push(violation(
                format!("camera {cam}"),
                "referenced but not a session camera",
            ));
        }
    }
    for (i, lm) in session.landmarks.iter().enumerate() {
        if lm.observations.is_empty() {
            out.push(violation(format!("landmark {i}"), "no observations"));
        }
        if !lm.world.is_finite() {
            out.push(violation(format!("landmark {i}"), "non-finite position"));
        }
        for cam in lm.observations.keys() {
            if !ids.contains(cam) {
                out.push(violation(
                    format!("landmark {i}"),
                    format!("observed by unknown camera {cam}"),
                ));
            }
        }
    }
    for (id, t) in &session.store.tracklets {
        let name = format!("tracklet {id}");
        if *id != t.id {
            out.push(violation(&name, format!("stored under key {id} but carries id {}", t.id)));
        }
        if !ids.contains(&t.camera_id) {
            out.push(violation(&name, format!("unknown camera {}", t.camera_id)));
        }
        if id.0 >= session.ids.next_tracklet {
            out.push(violation(&name, "id not below the allocator watermark"));
        }
        out.extend(tracklet_violations(t).into_iter().map(|m| violation(&name, m)));
    }
    for (id, t) in &session.store.trajectories {
        let name = format!("trajectory {id}");
        if *id != t.ped_id {
            out.push(violation(&name, format!("stored under key {id} but carries id {}", t.ped_id)));
        }
        if id.0 >= session.ids.next_ped {
            out.push(violation(&name, "id not below the allocator watermark"));
        }
        out.extend(trajectory_violations(t).into_iter().map(|m| violation(&name, m)));
    }
    out.extend(session.action_log.violations());
    out
}

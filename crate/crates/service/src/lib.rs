//! HTTP service for the label-correction UI.
//!
//! Sessions are read through immutable snapshots; mutations go through one
//! writer per session, guarded by the client's last-seen revision and
//! journaled before they are acknowledged.

pub mod journal;
pub mod sessions;

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use pedlabel_core::editops::{ActionKind, ActionLog, Applied, EditError, EditOp};
use pedlabel_core::model::{BBox, CameraId, PedId, Session, Source};
use serde::{Deserialize, Serialize};

pub use sessions::{load_dir, save_dir, DirError, Mutation, Registry, SessionHandle, SubmitError};

#[derive(Debug)]
pub enum ApiError {
    NotFound(String),
    Stale { client_seq: u64, revision: u64 },
    Unprocessable(String),
    BadRequest(String),
    Internal(String),
}

#[derive(Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub revision: Option<u64>,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, error, message, revision) = match self {
            ApiError::NotFound(m) => (StatusCode::NOT_FOUND, "not_found", m, None),
            ApiError::Stale { client_seq, revision } => (
                StatusCode::CONFLICT,
                "stale",
                format!("client_seq {client_seq} is stale; session is at revision {revision}"),
                Some(revision),
            ),
            ApiError::Unprocessable(m) => (StatusCode::UNPROCESSABLE_ENTITY, "rejected", m, None),
            ApiError::BadRequest(m) => (StatusCode::BAD_REQUEST, "bad_request", m, None),
            ApiError::Internal(m) => (StatusCode::INTERNAL_SERVER_ERROR, "internal", m, None),
        };
        let body = ErrorBody {
            error: error.into(),
            message,
            revision,
        };
        (status, Json(body)).into_response()
    }
}

impl From<SubmitError> for ApiError {
    fn from(e: SubmitError) -> Self {
        match e {
            SubmitError::Stale { client_seq, revision } => ApiError::Stale { client_seq, revision },
            SubmitError::Rejected(e @ EditError::UnknownTrack { .. }) => ApiError::NotFound(e.to_string()),
            SubmitError::Rejected(e) => ApiError::Unprocessable(e.to_string()),
            SubmitError::Journal(e) => ApiError::Internal(e.to_string()),
        }
    }
}

type AppState = Arc<Registry>;

fn session(reg: &Registry, id: &str) -> Result<Arc<SessionHandle>, ApiError> {
    reg.get(id)
        .cloned()
        .ok_or_else(|| ApiError::NotFound(format!("unknown session {id}")))
}

pub fn router(registry: Arc<Registry>) -> Router {
    Router::new()
        .route("/sessions", get(list_sessions))
        .route("/sessions/{id}", get(session_info))
        .route("/sessions/{id}/progress", get(progress))
        .route("/sessions/{id}/actions", get(actions))
        .route("/sessions/{id}/trajectories", get(trajectory_window))
        .route("/sessions/{id}/trajectories/{ped}", get(trajectory))
        .route("/sessions/{id}/tracklets", get(tracklet_window))
        .route("/sessions/{id}/frames/{camera}/{frame}", get(frame_meta))
        .route("/sessions/{id}/frames/{camera}/{frame}/image", get(frame_image))
        .route("/sessions/{id}/edits", post(submit_edit))
        .route("/sessions/{id}/undo", post(submit_undo))
        .route("/sessions/{id}/redo", post(submit_redo))
        .with_state(registry)
}

#[derive(Serialize, Deserialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub revision: u64,
    pub head_seq: u64,
    pub label_frequency: f64,
    pub fps: f64,
    pub cameras: Vec<CameraId>,
    pub reference_camera: CameraId,
    pub sync_offsets: BTreeMap<CameraId, i64>,
    pub tracklets: usize,
    pub trajectories: usize,
}

fn summary(s: &Session) -> SessionSummary {
    SessionSummary {
        session_id: s.session_id.clone(),
        revision: s.action_log.revision,
        head_seq: s.action_log.head_seq(),
        label_frequency: s.label_frequency,
        fps: s.fps,
        cameras: s.cameras.iter().map(|c| c.camera_id.clone()).collect(),
        reference_camera: s.reference_camera.clone(),
        sync_offsets: s.sync_offsets.clone(),
        tracklets: s.store.tracklets.len(),
        trajectories: s.store.trajectories.len(),
    }
}

async fn list_sessions(State(reg): State<AppState>) -> Json<Vec<SessionSummary>> {
    Json(reg.sessions.values().map(|h| summary(&h.snapshot())).collect())
}

async fn session_info(State(reg): State<AppState>, Path(id): Path<String>) -> Result<Json<SessionSummary>, ApiError> {
    Ok(Json(summary(&session(&reg, &id)?.snapshot())))
}

#[derive(Serialize, Deserialize)]
pub struct Progress {
    pub revision: u64,
    pub head_seq: u64,
    pub undo_depth: usize,
    pub actions: BTreeMap<ActionKind, usize>,
    pub trajectories: usize,
    pub tracklets: usize,
    /// Trajectories whose samples all came from the automatic pipeline.
    pub untouched_trajectories: usize,
    pub labeled_minutes: f64,
}

async fn progress(State(reg): State<AppState>, Path(id): Path<String>) -> Result<Json<Progress>, ApiError> {
    let s = session(&reg, &id)?.snapshot();
    let f = s.label_frequency;
    Ok(Json(Progress {
        revision: s.action_log.revision,
        head_seq: s.action_log.head_seq(),
        undo_depth: s.action_log.undone.len(),
        actions: s.action_log.counts(),
        trajectories: s.store.trajectories.len(),
        tracklets: s.store.tracklets.len(),
        untouched_trajectories: s
            .store
            .trajectories
            .values()
            .filter(|t| t.source == Source::Auto)
            .count(),
        labeled_minutes: s
            .store
            .trajectories
            .values()
            .filter_map(|t| Some((t.samples.last()?.step - t.samples.first()?.step) as f64 / f))
            .sum::<f64>()
            / 60.0,
    }))
}

async fn actions(State(reg): State<AppState>, Path(id): Path<String>) -> Result<Json<ActionLog>, ApiError> {
    Ok(Json(session(&reg, &id)?.snapshot().action_log.clone()))
}

/// Time window in seconds plus the coarsest spacing wanted between samples.
#[derive(Debug, Default, Deserialize)]
pub struct Window {
    pub from: Option<f64>,
    pub to: Option<f64>,
    pub resolution: Option<f64>,
    pub camera: Option<String>,
}

impl Window {
    fn contains(&self, t: f64) -> bool {
        self.from.is_none_or(|a| t >= a - 1e-9) && self.to.is_none_or(|b| t <= b + 1e-9)
    }

    fn check(&self) -> Result<(), ApiError> {
        if let (Some(a), Some(b)) = (self.from, self.to) {
            if a > b {
                return Err(ApiError::BadRequest(format!("from {a} is after to {b}")));
            }
        }
        if self.resolution.is_some_and(|r| !(r >= 0.0)) {
            return Err(ApiError::BadRequest("resolution must be non-negative".into()));
        }
        Ok(())
    }

    /// Keeps every `rate * resolution`-th index plus both ends.
    fn decimate<T: Copy>(&self, items: Vec<(i64, T)>, rate: f64) -> Vec<T> {
        let k = self.resolution.map_or(1, |r| ((r * rate).round() as i64).max(1));
        let n = items.len();
        items
            .into_iter()
            .enumerate()
            .filter(|(i, (key, _))| key.rem_euclid(k) == 0 || *i == 0 || *i + 1 == n)
            .map(|(_, (_, v))| v)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PointOut {
    pub step: i64,
    pub time: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

#[derive(Serialize, Deserialize)]
pub struct TrajectoryOut {
    pub ped_id: PedId,
    pub source: Source,
    pub samples: Vec<PointOut>,
}

#[derive(Serialize, Deserialize)]
pub struct TrajectoryWindow {
    pub revision: u64,
    pub trajectories: Vec<TrajectoryOut>,
}

async fn trajectory_window(
    State(reg): State<AppState>,
    Path(id): Path<String>,
    Query(w): Query<Window>,
) -> Result<Json<TrajectoryWindow>, ApiError> {
    w.check()?;
    let s = session(&reg, &id)?.snapshot();
    let f = s.label_frequency;
    let trajectories = s
        .store
        .trajectories
        .values()
        .filter_map(|t| {
            let inside: Vec<(i64, PointOut)> = t
                .samples
                .iter()
                .map(|p| PointOut {
                    step: p.step,
                    time: p.step as f64 / f,
                    x: p.x,
                    y: p.y,
                    z: p.z,
                })
                .filter(|p| w.contains(p.time))
                .map(|p| (p.step, p))
                .collect();
            (!inside.is_empty()).then(|| TrajectoryOut {
                ped_id: t.ped_id,
                source: t.source,
                samples: w.decimate(inside, f),
            })
        })
        .collect();
    Ok(Json(TrajectoryWindow {
        revision: s.action_log.revision,
        trajectories,
    }))
}

async fn trajectory(
    State(reg): State<AppState>,
    Path((id, ped)): Path<(String, u64)>,
) -> Result<Json<TrajectoryOut>, ApiError> {
    let s = session(&reg, &id)?.snapshot();
    let t = s
        .store
        .trajectories
        .get(&PedId(ped))
        .ok_or_else(|| ApiError::NotFound(format!("unknown trajectory {ped}")))?;
    let f = s.label_frequency;
    Ok(Json(TrajectoryOut {
        ped_id: t.ped_id,
        source: t.source,
        samples: t
            .samples
            .iter()
            .map(|p| PointOut {
                step: p.step,
                time: p.step as f64 / f,
                x: p.x,
                y: p.y,
                z: p.z,
            })
            .collect(),
    }))
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BoxOut {
    pub frame: i64,
    pub time: f64,
    pub bbox: BBox,
}

#[derive(Serialize, Deserialize)]
pub struct TrackletOut {
    pub tracklet_id: u64,
    pub camera_id: CameraId,
    pub source: Source,
    pub samples: Vec<BoxOut>,
}

#[derive(Serialize, Deserialize)]
pub struct TrackletWindow {
    pub revision: u64,
    pub tracklets: Vec<TrackletOut>,
}

fn frame_time(s: &Session, camera: &CameraId, frame: i64) -> f64 {
    s.frame_time(camera, frame).unwrap_or(frame as f64 / s.fps)
}

async fn tracklet_window(
    State(reg): State<AppState>,
    Path(id): Path<String>,
    Query(w): Query<Window>,
) -> Result<Json<TrackletWindow>, ApiError> {
    w.check()?;
    let s = session(&reg, &id)?.snapshot();
    let camera = w.camera.clone().map(CameraId);
    if let Some(c) = &camera {
        if !s.has_camera(c) {
            return Err(ApiError::NotFound(format!("unknown camera {c}")));
        }
    }
    let tracklets = s
        .store
        .tracklets
        .values()
        .filter(|t| camera.as_ref().is_none_or(|c| &t.camera_id == c))
        .filter_map(|t| {
            let inside: Vec<(i64, BoxOut)> = t
                .samples
                .iter()
                .map(|p| BoxOut {
                    frame: p.frame,
                    time: frame_time(&s, &t.camera_id, p.frame),
                    bbox: p.bbox,
                })
                .filter(|b| w.contains(b.time))
                .map(|b| (b.frame, b))
                .collect();
            (!inside.is_empty()).then(|| TrackletOut {
                tracklet_id: t.id.0,
                camera_id: t.camera_id.clone(),
                source: t.source,
                samples: w.decimate(inside, s.fps),
            })
        })
        .collect();
    Ok(Json(TrackletWindow {
        revision: s.action_log.revision,
        tracklets,
    }))
}

#[derive(Serialize, Deserialize)]
pub struct FrameBox {
    pub tracklet_id: u64,
    pub bbox: BBox,
}

#[derive(Serialize, Deserialize)]
pub struct FrameMeta {
    pub camera_id: CameraId,
    pub frame: i64,
    pub time: f64,
    /// Nearest label-timeline step.
    pub step: i64,
    /// Path of the image endpoint, when an image file exists.
    pub image: Option<String>,
    pub boxes: Vec<FrameBox>,
}

fn image_path(handle: &SessionHandle, camera: &CameraId, frame: i64) -> Option<(PathBuf, &'static str)> {
    let dir = handle.dir.join("frames").join(camera.as_str());
    let names = [format!("{frame:06}"), frame.to_string()];
    for name in &names {
        for (ext, mime) in [("jpg", "image/jpeg"), ("jpeg", "image/jpeg"), ("png", "image/png")] {
            let p = dir.join(format!("{name}.{ext}"));
            if p.is_file() {
                return Some((p, mime));
            }
        }
    }
    None
}

fn known_camera(s: &Session, camera: &str) -> Result<CameraId, ApiError> {
    let c = CameraId::new(camera);
    if s.has_camera(&c) {
        Ok(c)
    } else {
        Err(ApiError::NotFound(format!("unknown camera {camera}")))
    }
}

async fn frame_meta(
    State(reg): State<AppState>,
    Path((id, camera, frame)): Path<(String, String, i64)>,
) -> Result<Json<FrameMeta>, ApiError> {
    let handle = session(&reg, &id)?;
    let s = handle.snapshot();
    let camera = known_camera(&s, &camera)?;
    let time = frame_time(&s, &camera, frame);
    let boxes = s
        .store
        .tracklets
        .values()
        .filter(|t| t.camera_id == camera)
        .filter_map(|t| {
            t.sample_at(frame).map(|p| FrameBox {
                tracklet_id: t.id.0,
                bbox: p.bbox,
            })
        })
        .collect();
    Ok(Json(FrameMeta {
        image: image_path(&handle, &camera, frame).map(|_| format!("/sessions/{id}/frames/{camera}/{frame}/image")),
        step: (time * s.label_frequency).round() as i64,
        camera_id: camera,
        frame,
        time,
        boxes,
    }))
}

async fn frame_image(
    State(reg): State<AppState>,
    Path((id, camera, frame)): Path<(String, String, i64)>,
) -> Result<Response, ApiError> {
    let handle = session(&reg, &id)?;
    let camera = known_camera(&handle.snapshot(), &camera)?;
    let (path, mime) = image_path(&handle, &camera, frame)
        .ok_or_else(|| ApiError::NotFound(format!("no image for {camera} frame {frame}")))?;
    let bytes = tokio::fs::read(&path)
        .await
        .map_err(|e| ApiError::Internal(format!("{}: {e}", path.display())))?;
    Ok(([(header::CONTENT_TYPE, mime)], bytes).into_response())
}

#[derive(Serialize, Deserialize)]
pub struct EditRequest {
    pub client_seq: u64,
    pub op: EditOp,
}

#[derive(Serialize, Deserialize)]
pub struct SeqRequest {
    pub client_seq: u64,
}

async fn submit_edit(
    State(reg): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<EditRequest>,
) -> Result<Json<Applied>, ApiError> {
    let handle = session(&reg, &id)?;
    Ok(Json(handle.submit(req.client_seq, Mutation::Edit(req.op)).await?))
}

async fn submit_undo(
    State(reg): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<SeqRequest>,
) -> Result<Json<Applied>, ApiError> {
    let handle = session(&reg, &id)?;
    Ok(Json(handle.submit(req.client_seq, Mutation::Undo).await?))
}

async fn submit_redo(
    State(reg): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<SeqRequest>,
) -> Result<Json<Applied>, ApiError> {
    let handle = session(&reg, &id)?;
    Ok(Json(handle.submit(req.client_seq, Mutation::Redo).await?))
}

/// Serves until Ctrl-C, then checkpoints every session.
pub async fn serve(registry: Arc<Registry>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(registry.clone()))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    for handle in registry.sessions.values() {
        handle.checkpoint().await.map_err(std::io::Error::other)?;
    }
    Ok(())
}

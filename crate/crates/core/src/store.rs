//! On-disk session directory.
//!
//! ```text
//! session/
//!   manifest.json        schema version, settings, file table, row counts
//!   cameras/<n>-<id>.json  one calibration record per camera
//!   tracklets.csv        tracklet interchange format
//!   tracklet_sources.json
//!   trajectories.json
//!   landmarks.json
//!   sync.json            camera id -> frame offset
//!   actions.log          applied actions, one JSON record per line
//!   undone.log           undo stack, bottom first
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::editops::{ActionLog, EditAction};
use crate::model::{
    validate, CalibrationRecord, CameraId, CameraModel, IdAllocator, Landmark, MetricTrajectory, Session, Source,
    Store, TrackletId,
};
use crate::tracking::{read_tracklets, write_tracklets, TrackingError};

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("schema version {found} is not supported (expected {expected})")]
    SchemaMismatch { found: u32, expected: u32 },
    #[error("{path}: expected {expected} records, found {found} (truncated?)")]
    Truncated { path: PathBuf, expected: usize, found: usize },
    #[error("session fails validation: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Files {
    pub cameras: Vec<String>,
    pub tracklets: String,
    pub tracklet_sources: String,
    pub trajectories: String,
    pub landmarks: String,
    pub sync: String,
    pub actions: String,
    pub undone: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub tracklet_rows: usize,
    pub actions: usize,
    pub undone: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub session_id: String,
    pub label_frequency: f64,
    pub fps: f64,
    pub camera_ids: Vec<CameraId>,
    pub reference_camera: CameraId,
    pub calibrated: BTreeSet<CameraId>,
    pub ids: IdAllocator,
    pub revision: u64,
    pub files: Files,
    pub counts: Counts,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_err(path: &Path, message: impl ToString) -> StoreError {
    StoreError::Parse {
        path: path.to_path_buf(),
        message: message.to_string(),
    }
}

/// Writes through a temporary sibling and renames, so a crash never leaves a
/// half-written file under the final name.
fn write_atomic(path: &Path, write: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>) -> Result<(), StoreError> {
    let tmp = path.with_extension("tmp");
    let file = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    let mut w = BufWriter::new(file);
    write(&mut w).map_err(io_err(&tmp))?;
    let file = w.into_inner().map_err(|e| io_err(&tmp)(e.into_error()))?;
    file.sync_all().map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), StoreError> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n")
    })
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, StoreError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| parse_err(path, e))
}

fn write_lines<T: Serialize>(path: &Path, values: &[T]) -> Result<(), StoreError> {
    write_atomic(path, |w| {
        for v in values {
            serde_json::to_writer(&mut *w, v)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    })
}

/// One JSON value per non-empty line; errors carry the line number.
pub fn read_lines<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, StoreError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| parse_err(path, format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}

fn camera_file(index: usize, id: &CameraId) -> String {
    let safe: String = id
        .as_str()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("cameras/{index}-{safe}.json")
}

pub fn save_session(session: &Session, dir: &Path) -> Result<(), StoreError> {
    fs::create_dir_all(dir.join("cameras")).map_err(io_err(dir))?;
    let files = Files {
        cameras: session
            .cameras
            .iter()
            .enumerate()
            .map(|(i, c)| camera_file(i, &c.camera_id))
            .collect(),
        tracklets: "tracklets.csv".into(),
        tracklet_sources: "tracklet_sources.json".into(),
        trajectories: "trajectories.json".into(),
        landmarks: "landmarks.json".into(),
        sync: "sync.json".into(),
        actions: "actions.log".into(),
        undone: "undone.log".into(),
    };
    for (cam, name) in session.cameras.iter().zip(&files.cameras) {
        write_json(&dir.join(name), &CalibrationRecord::from(cam.clone()))?;
    }
    let tracklets = session.store.tracklets.values();
    write_atomic(&dir.join(&files.tracklets), |w| {
        write_tracklets(&mut *w, tracklets).map_err(|e| match e {
            TrackingError::Io(e) => e,
            other => std::io::Error::other(other.to_string()),
        })
    })?;
    let sources: BTreeMap<TrackletId, Source> = session.store.tracklets.values().map(|t| (t.id, t.source)).collect();
    write_json(&dir.join(&files.tracklet_sources), &sources)?;
    let trajectories: Vec<&MetricTrajectory> = session.store.trajectories.values().collect();
    write_json(&dir.join(&files.trajectories), &trajectories)?;
    write_json(&dir.join(&files.landmarks), &session.landmarks)?;
    write_json(&dir.join(&files.sync), &session.sync_offsets)?;
    write_lines(&dir.join(&files.actions), &session.action_log.applied)?;
    write_lines(&dir.join(&files.undone), &session.action_log.undone)?;

    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        session_id: session.session_id.clone(),
        label_frequency: session.label_frequency,
        fps: session.fps,
        camera_ids: session.cameras.iter().map(|c| c.camera_id.clone()).collect(),
        reference_camera: session.reference_camera.clone(),
        calibrated: session.calibrated.clone(),
        ids: session.ids.clone(),
        revision: session.action_log.revision,
        counts: Counts {
            tracklet_rows: session.store.tracklets.values().map(|t| t.samples.len()).sum(),
            actions: session.action_log.applied.len(),
            undone: session.action_log.undone.len(),
        },
        files,
    };
    // Manifest last: a session directory without one is incomplete.
    write_json(&dir.join(MANIFEST), &manifest)
}

fn check_count(path: &Path, expected: usize, found: usize) -> Result<(), StoreError> {
    if expected == found {
        Ok(())
    } else {
        Err(StoreError::Truncated {
            path: path.to_path_buf(),
            expected,
            found,
        })
    }
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, StoreError> {
    let path = dir.join(MANIFEST);
    let raw: serde_json::Value = read_json(&path)?;
    let found = raw
        .get("schema_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| parse_err(&path, "missing schema_version"))? as u32;
    if found != SCHEMA_VERSION {
        return Err(StoreError::SchemaMismatch {
            found,
            expected: SCHEMA_VERSION,
        });
    }
    serde_json::from_value(raw).map_err(|e| parse_err(&path, e))
}

pub fn load_session(dir: &Path) -> Result<Session, StoreError> {
    let m = read_manifest(dir)?;
    let files = &m.files;
    if files.cameras.len() != m.camera_ids.len() {
        return Err(parse_err(&dir.join(MANIFEST), "camera file table does not match camera ids"));
    }
    let mut cameras = Vec::with_capacity(files.cameras.len());
    for (id, name) in m.camera_ids.iter().zip(&files.cameras) {
        let path = dir.join(name);
        let cam = CameraModel::from(read_json::<CalibrationRecord>(&path)?);
        if &cam.camera_id != id {
            return Err(parse_err(&path, format!("holds camera {}, manifest says {id}", cam.camera_id)));
        }
        cameras.push(cam);
    }

    let path = dir.join(&files.tracklets);
    let file = fs::File::open(&path).map_err(io_err(&path))?;
    let mut tracklets = read_tracklets(BufReader::new(file)).map_err(|e| parse_err(&path, e))?;
    check_count(
        &path,
        m.counts.tracklet_rows,
        tracklets.iter().map(|t| t.samples.len()).sum(),
    )?;
    let path = dir.join(&files.tracklet_sources);
    let sources: BTreeMap<TrackletId, Source> = read_json(&path)?;
    check_count(&path, tracklets.len(), sources.len())?;
    for t in &mut tracklets {
        t.source = *sources
            .get(&t.id)
            .ok_or_else(|| parse_err(&path, format!("no source for tracklet {}", t.id)))?;
    }
    let trajectories: Vec<MetricTrajectory> = read_json(&dir.join(&files.trajectories))?;
    let landmarks: Vec<Landmark> = read_json(&dir.join(&files.landmarks))?;
    let sync_offsets: BTreeMap<CameraId, i64> = read_json(&dir.join(&files.sync))?;
    let path = dir.join(&files.actions);
    let applied: Vec<EditAction> = read_lines(&path)?;
    check_count(&path, m.counts.actions, applied.len())?;
    let path = dir.join(&files.undone);
    let undone: Vec<EditAction> = read_lines(&path)?;
    check_count(&path, m.counts.undone, undone.len())?;

    let session = Session {
        session_id: m.session_id,
        label_frequency: m.label_frequency,
        fps: m.fps,
        cameras,
        reference_camera: m.reference_camera,
        calibrated: m.calibrated,
        sync_offsets,
        landmarks,
        store: Store {
            tracklets: tracklets.into_iter().map(|t| (t.id, t)).collect(),
            trajectories: trajectories.into_iter().map(|t| (t.ped_id, t)).collect(),
        },
        ids: m.ids,
        action_log: ActionLog {
            applied,
            undone,
            revision: m.revision,
        },
    };
    let violations = validate(&session);
    if let Some(v) = violations.first() {
        return Err(StoreError::Invalid(format!("{v} ({} violations)", violations.len())));
    }
    Ok(session)
}

/// Landmark file: a JSON list of `{world: {x, y, z}, observations: {camera: {u, v}}}`.
pub fn read_landmarks(path: &Path) -> Result<Vec<Landmark>, StoreError> {
    read_json(path)
}

pub fn write_landmarks(path: &Path, landmarks: &[Landmark]) -> Result<(), StoreError> {
    write_json(path, &landmarks)
}

/// Calibration file: `fx, fy, cx, cy, k1, k2, R` (row-major) and `t`.
pub fn read_calibration(path: &Path) -> Result<CameraModel, StoreError> {
    let cam = CameraModel::from(read_json::<CalibrationRecord>(path)?);
    if let Some(v) = cam.violations().first() {
        return Err(parse_err(path, v));
    }
    Ok(cam)
}

pub fn write_calibration(path: &Path, camera: &CameraModel) -> Result<(), StoreError> {
    write_json(path, &CalibrationRecord::from(camera.clone()))
}

/// Sync file: a JSON object mapping camera id to marker frame.
pub fn read_markers(path: &Path) -> Result<BTreeMap<CameraId, i64>, StoreError> {
    read_json(path)
}

pub fn write_markers(path: &Path, markers: &BTreeMap<CameraId, i64>) -> Result<(), StoreError> {
    write_json(path, markers)
}

pub fn write_json_file<T: Serialize>(path: &Path, value: &T) -> Result<(), StoreError> {
    write_json(path, value)
}

pub fn read_json_file<T: DeserializeOwned>(path: &Path) -> Result<T, StoreError> {
    read_json(path)
}

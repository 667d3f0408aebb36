//! Label-correction edits over tracklets and metric trajectories.
//!
//! Every edit goes through [`apply`], which records an [`EditAction`] in the
//! session's [`ActionLog`] together with the payload needed to invert it.
//! [`undo`] and [`redo`] walk that log; [`replay`] rebuilds a store from a
//! pre-edit snapshot plus a log.
//!
//! Edits that create tracks record the ids they minted. Redo and replay reuse
//! those ids instead of minting, so a log replays to an identical store.

mod ops;
mod track;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::{
    CameraId, MetricTrajectory, PedId, Session, Source, Tracklet, TrackletId, TrackletSample,
    TrajectorySample, Violation,
};

/// Which kind of track an edit targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layer {
    /// Per-camera pixel tracklets.
    Pixel,
    /// Metric trajectories; the frame of an edit is the label-timeline step.
    Metric,
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Layer::Pixel => "pixel",
            Layer::Metric => "metric",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ActionKind {
    Break,
    Join,
    Delete,
    Disentangle,
    Relabel,
    AddMissing,
}

impl ActionKind {
    pub const ALL: [ActionKind; 6] = [
        ActionKind::Break,
        ActionKind::Join,
        ActionKind::Delete,
        ActionKind::Disentangle,
        ActionKind::Relabel,
        ActionKind::AddMissing,
    ];
}

/// Replacement or new samples for one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "layer", content = "samples", rename_all = "lowercase")]
pub enum SampleList {
    Pixel(Vec<TrackletSample>),
    Metric(Vec<TrajectorySample>),
}

impl SampleList {
    pub fn layer(&self) -> Layer {
        match self {
            SampleList::Pixel(_) => Layer::Pixel,
            SampleList::Metric(_) => Layer::Metric,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            SampleList::Pixel(s) => s.len(),
            SampleList::Metric(s) => s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// An edit request: what the labeler asked for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params")]
pub enum EditOp {
    /// Split a track; `frame` starts the right-hand piece.
    Break { layer: Layer, id: u64, frame: i64 },
    Join { layer: Layer, a: u64, b: u64 },
    Delete { layer: Layer, id: u64 },
    /// Exchange all samples at or after `frame` between two tracks.
    Disentangle {
        layer: Layer,
        a: u64,
        b: u64,
        frame: i64,
    },
    /// Replace the samples in `from..=to` with `samples`.
    Relabel {
        id: u64,
        from: i64,
        to: i64,
        samples: SampleList,
    },
    AddMissing {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        camera_id: Option<CameraId>,
        samples: SampleList,
    },
}

impl EditOp {
    pub fn kind(&self) -> ActionKind {
        match self {
            EditOp::Break { .. } => ActionKind::Break,
            EditOp::Join { .. } => ActionKind::Join,
            EditOp::Delete { .. } => ActionKind::Delete,
            EditOp::Disentangle { .. } => ActionKind::Disentangle,
            EditOp::Relabel { .. } => ActionKind::Relabel,
            EditOp::AddMissing { .. } => ActionKind::AddMissing,
        }
    }

    pub fn layer(&self) -> Layer {
        match self {
            EditOp::Break { layer, .. }
            | EditOp::Join { layer, .. }
            | EditOp::Delete { layer, .. }
            | EditOp::Disentangle { layer, .. } => *layer,
            EditOp::Relabel { samples, .. } | EditOp::AddMissing { samples, .. } => samples.layer(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "layer", content = "track", rename_all = "lowercase")]
pub enum AnyTrack {
    #[serde(rename = "pixel")]
    Tracklet(Tracklet),
    #[serde(rename = "metric")]
    Trajectory(MetricTrajectory),
}

impl AnyTrack {
    pub fn raw_id(&self) -> u64 {
        match self {
            AnyTrack::Tracklet(t) => t.id.0,
            AnyTrack::Trajectory(t) => t.ped_id.0,
        }
    }
}

/// Data captured when an action is applied, sufficient to revert it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Inverse {
    /// Remove tracks the action created and put back the ones it retired.
    Restore {
        layer: Layer,
        remove: Vec<u64>,
        reinsert: Vec<AnyTrack>,
    },
    /// Disentangle is its own inverse.
    Swap {
        layer: Layer,
        a: u64,
        b: u64,
        frame: i64,
    },
    /// Samples and source a relabel overwrote.
    Replace {
        id: u64,
        from: i64,
        to: i64,
        samples: SampleList,
        source: Source,
    },
}

/// One entry of the action log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditAction {
    pub seq: u64,
    /// ISO-8601, UTC.
    pub timestamp: String,
    #[serde(flatten)]
    pub op: EditOp,
    /// Ids minted by this action, in creation order.
    #[serde(default)]
    pub created: Vec<u64>,
    pub inverse: Inverse,
}

impl EditAction {
    pub fn kind(&self) -> ActionKind {
        self.op.kind()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ActionLog {
    pub applied: Vec<EditAction>,
    /// Undone actions, most recent last.
    pub undone: Vec<EditAction>,
    /// Bumped by every apply, undo and redo; clients use it to detect
    /// concurrent changes.
    pub revision: u64,
}

impl ActionLog {
    pub fn head_seq(&self) -> u64 {
        self.applied.last().map_or(0, |a| a.seq)
    }

    /// Number of applied actions per kind.
    pub fn counts(&self) -> BTreeMap<ActionKind, usize> {
        let mut out: BTreeMap<ActionKind, usize> =
            ActionKind::ALL.iter().map(|k| (*k, 0)).collect();
        for a in &self.applied {
            *out.entry(a.kind()).or_default() += 1;
        }
        out
    }

    pub(crate) fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        for (i, a) in self.applied.iter().enumerate() {
            if a.seq != i as u64 + 1 {
                out.push(Violation {
                    entity: format!("action {}", a.seq),
                    message: format!("expected seq {} at log position {i}", i + 1),
                });
            }
        }
        let head = self.applied.len() as u64;
        for (depth, a) in self.undone.iter().rev().enumerate() {
            if a.seq != head + depth as u64 + 1 {
                out.push(Violation {
                    entity: format!("undone action {}", a.seq),
                    message: "undo stack out of sequence".to_string(),
                });
            }
        }
        out
    }
}

/// Reference to a track in either layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TrackRef {
    pub layer: Layer,
    pub id: u64,
}

/// What an edit (or undo/redo) changed in the store.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Diff {
    pub created: Vec<TrackRef>,
    pub retired: Vec<TrackRef>,
    pub changed: Vec<TrackRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Applied {
    pub seq: u64,
    pub revision: u64,
    pub diff: Diff,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EditError {
    #[error("unknown {layer} track {id}")]
    UnknownTrack { layer: Layer, id: u64 },
    #[error("unknown camera {0}")]
    UnknownCamera(CameraId),
    #[error("pixel tracks need a camera id")]
    MissingCamera,
    #[error("breaking track {id} at frame {frame} leaves an empty side")]
    EmptySide { id: u64, frame: i64 },
    #[error("tracks {a} and {b} both have samples at frame {frame}")]
    Overlap { a: u64, b: u64, frame: i64 },
    #[error("tracks {a} and {b} belong to different cameras")]
    DifferentCameras { a: u64, b: u64 },
    #[error("an edit needs two distinct tracks, got {0} twice")]
    SameTrack(u64),
    #[error("track {id} has no samples at or after frame {frame}")]
    NoTail { id: u64, frame: i64 },
    #[error("malformed samples: {0}")]
    MalformedSamples(String),
    #[error("no samples given")]
    EmptySamples,
    #[error("relabel would leave track {0} without samples; delete it instead")]
    WouldEmpty(u64),
    #[error("sample layer does not match the target")]
    LayerMismatch,
    #[error("recorded id {0} is already in use")]
    IdInUse(u64),
    #[error("nothing to undo")]
    NothingToUndo,
    #[error("nothing to redo")]
    NothingToRedo,
    #[error("log entry at position {position} has seq {seq}")]
    OutOfSequence { position: usize, seq: u64 },
    #[error("replay failed at seq {seq}: {source}")]
    Replay {
        seq: u64,
        #[source]
        source: Box<EditError>,
    },
}

/// Supplies ids for tracks an edit creates: either freshly minted or the ones
/// a log entry recorded.
pub(crate) enum IdSource<'a> {
    Fresh,
    Recorded(std::slice::Iter<'a, u64>),
}

pub(crate) struct Ctx<'a, 'b> {
    pub cameras: &'a [crate::model::CameraModel],
    pub ids: &'a mut crate::model::IdAllocator,
    pub source: IdSource<'b>,
}

impl Ctx<'_, '_> {
    pub(crate) fn mint(&mut self, layer: Layer) -> Result<u64, EditError> {
        let recorded = match &mut self.source {
            IdSource::Fresh => None,
            IdSource::Recorded(it) => it.next().copied(),
        };
        Ok(match (layer, recorded) {
            (Layer::Pixel, Some(id)) => {
                self.ids.reserve_tracklet(TrackletId(id));
                id
            }
            (Layer::Metric, Some(id)) => {
                self.ids.reserve_ped(PedId(id));
                id
            }
            (Layer::Pixel, None) => self.ids.mint_tracklet().0,
            (Layer::Metric, None) => self.ids.mint_ped().0,
        })
    }

    fn has_camera(&self, id: &CameraId) -> bool {
        self.cameras.iter().any(|c| &c.camera_id == id)
    }
}

pub(crate) struct Outcome {
    pub created: Vec<u64>,
    pub inverse: Inverse,
    pub diff: Diff,
}

fn execute(session: &mut Session, op: &EditOp, source: IdSource<'_>) -> Result<Outcome, EditError> {
    let mut ctx = Ctx {
        cameras: &session.cameras,
        ids: &mut session.ids,
        source,
    };
    match op.layer() {
        Layer::Pixel => ops::run::<Tracklet>(&mut session.store, &mut ctx, op),
        Layer::Metric => ops::run::<MetricTrajectory>(&mut session.store, &mut ctx, op),
    }
}

/// Current UTC time in the action-log timestamp format.
pub fn timestamp_now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Applies `op`, appends it to the log and clears the redo stack.
pub fn apply(session: &mut Session, op: EditOp) -> Result<Applied, EditError> {
    apply_at(session, op, timestamp_now())
}

/// [`apply`] with an explicit timestamp.
pub fn apply_at(session: &mut Session, op: EditOp, timestamp: String) -> Result<Applied, EditError> {
    let outcome = execute(session, &op, IdSource::Fresh)?;
    let log = &mut session.action_log;
    let seq = log.applied.len() as u64 + 1;
    log.applied.push(EditAction {
        seq,
        timestamp,
        op,
        created: outcome.created,
        inverse: outcome.inverse,
    });
    log.undone.clear();
    log.revision += 1;
    Ok(Applied {
        seq,
        revision: log.revision,
        diff: outcome.diff,
    })
}

/// Reverts the most recent applied action.
pub fn undo(session: &mut Session) -> Result<Applied, EditError> {
    let action = session
        .action_log
        .applied
        .pop()
        .ok_or(EditError::NothingToUndo)?;
    let diff = match ops::revert(&mut session.store, &action.inverse) {
        Ok(diff) => diff,
        Err(e) => {
            session.action_log.applied.push(action);
            return Err(e);
        }
    };
    let log = &mut session.action_log;
    log.undone.push(action);
    log.revision += 1;
    Ok(Applied {
        seq: log.head_seq(),
        revision: log.revision,
        diff,
    })
}

/// Re-applies the most recently undone action with the ids it minted originally.
pub fn redo(session: &mut Session) -> Result<Applied, EditError> {
    let mut action = session
        .action_log
        .undone
        .pop()
        .ok_or(EditError::NothingToRedo)?;
    let outcome = match execute(session, &action.op, IdSource::Recorded(action.created.iter())) {
        Ok(o) => o,
        Err(e) => {
            session.action_log.undone.push(action);
            return Err(e);
        }
    };
    action.created = outcome.created;
    action.inverse = outcome.inverse;
    let log = &mut session.action_log;
    log.applied.push(action);
    log.revision += 1;
    Ok(Applied {
        seq: log.head_seq(),
        revision: log.revision,
        diff: outcome.diff,
    })
}

/// Rebuilds the session `log` was recorded against, starting from the
/// pre-edit snapshot `initial`. The returned session carries `log` itself.
pub fn replay(initial: &Session, log: &ActionLog) -> Result<Session, EditError> {
    let mut session = initial.clone();
    session.action_log = ActionLog::default();
    for (i, action) in log.applied.iter().enumerate() {
        if action.seq != i as u64 + 1 {
            return Err(EditError::OutOfSequence {
                position: i,
                seq: action.seq,
            });
        }
        execute(&mut session, &action.op, IdSource::Recorded(action.created.iter())).map_err(
            |e| EditError::Replay {
                seq: action.seq,
                source: Box::new(e),
            },
        )?;
    }
    for action in &log.undone {
        for &id in &action.created {
            match action.op.layer() {
                Layer::Pixel => session.ids.reserve_tracklet(TrackletId(id)),
                Layer::Metric => session.ids.reserve_ped(PedId(id)),
            }
        }
    }
    session.ids.next_tracklet = session.ids.next_tracklet.max(initial.ids.next_tracklet);
    session.ids.next_ped = session.ids.next_ped.max(initial.ids.next_ped);
    session.action_log = log.clone();
    Ok(session)
}

// Convenience wrappers, one per edit kind.

pub fn break_trajectory(
    session: &mut Session,
    layer: Layer,
    id: u64,
    frame: i64,
) -> Result<(u64, u64), EditError> {
    let applied = apply(session, EditOp::Break { layer, id, frame })?;
    Ok((applied.diff.created[0].id, applied.diff.created[1].id))
}

pub fn join_trajectories(session: &mut Session, layer: Layer, a: u64, b: u64) -> Result<u64, EditError> {
    let applied = apply(session, EditOp::Join { layer, a, b })?;
    Ok(applied.diff.created[0].id)
}

pub fn delete_trajectory(session: &mut Session, layer: Layer, id: u64) -> Result<(), EditError> {
    apply(session, EditOp::Delete { layer, id }).map(|_| ())
}

pub fn disentangle(
    session: &mut Session,
    layer: Layer,
    a: u64,
    b: u64,
    frame: i64,
) -> Result<(), EditError> {
    apply(session, EditOp::Disentangle { layer, a, b, frame }).map(|_| ())
}

pub fn relabel(
    session: &mut Session,
    id: u64,
    from: i64,
    to: i64,
    samples: SampleList,
) -> Result<(), EditError> {
    apply(
        session,
        EditOp::Relabel {
            id,
            from,
            to,
            samples,
        },
    )
    .map(|_| ())
}

pub fn add_missing(
    session: &mut Session,
    camera_id: Option<CameraId>,
    samples: SampleList,
) -> Result<u64, EditError> {
    let applied = apply(session, EditOp::AddMissing { camera_id, samples })?;
    Ok(applied.diff.created[0].id)
}

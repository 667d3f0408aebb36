//! Multi-view geometry: projection, landmark calibration, triangulation,
//! frame synchronization and lifting of pixel tracklets to metric space.

mod calibrate;
mod camera;
mod lift;
mod solve;
mod sync;
mod triangulate;

pub use calibrate::{
    calibrate_extrinsics, calibrate_from_correspondences, calibrate_session, correspondences_for, PoseEstimate, MIN_LANDMARKS,
};
pub use camera::{distort, project, undistort, undistort_with, UNDISTORT_MAX_ITERATIONS};
pub use lift::{
    associate_cross_view, lift_match, lift_pair, lift_session, resample, score_pairs, AssociationParams,
    AssociationResult, LiftedFrame, Match, PairLift,
};
pub use solve::{MAX_ITERATIONS, STEP_TOLERANCE};
pub use sync::{align_frames, detect_marker, detect_markers, MarkerParams};
pub use triangulate::{
    reprojection_error, reprojection_error_with_penalty, triangulate, Observation, Triangulation,
    BEHIND_CAMERA_PENALTY_PX, MIN_RAY_ANGLE,
};

use crate::model::{CameraId, TrackletId};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("point is behind camera {camera} (depth {depth})")]
    BehindCamera { camera: CameraId, depth: f64 },
    #[error("undistortion of ({u}, {v}) did not converge in {iterations} iterations")]
    UndistortDiverged { u: f64, v: f64, iterations: usize },
    #[error("need at least {needed} landmarks, got {got}")]
    InsufficientLandmarks { needed: usize, got: usize },
    #[error("degenerate geometry: {0}")]
    Degenerate(String),
    #[error("pose refinement diverged")]
    Divergence,
    #[error("triangulation needs at least two views, got {0}")]
    TooFewViews(usize),
    #[error("no sync marker for camera {0}")]
    MissingMarker(CameraId),
    #[error("no frame exceeds the marker threshold")]
    NoMarker,
    #[error("tracklets share {overlap} timeline frames, need {required}")]
    InsufficientOverlap { overlap: usize, required: usize },
    #[error("both tracklets come from camera {0}")]
    SameCamera(CameraId),
    #[error("camera {0} has no calibrated pose")]
    NotCalibrated(CameraId),
    #[error("no sync offset for camera {0}")]
    MissingSync(CameraId),
    #[error("unknown camera {0}")]
    UnknownCamera(CameraId),
    #[error("unknown tracklet {0}")]
    UnknownTracklet(TrackletId),
}

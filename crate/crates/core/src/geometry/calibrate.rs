//! Camera pose from surveyed landmarks with known intrinsics.
//!
//! A normalized DLT on undistorted observations gives an initial 3×4 pose,
//! whose left block is projected onto the nearest rotation. Gauss–Newton on
//! the pixel reprojection error then refines rotation and translation.

use nalgebra::{DMatrix, Matrix3, Matrix3x4, Matrix4, Rotation3, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};

use super::camera::{project_camera_frame, to_camera, undistort_normalized, UNDISTORT_MAX_ITERATIONS};
use super::solve::{gauss_newton, Normal};
use super::GeometryError;
use std::collections::BTreeMap;

use crate::model::{CameraId, CameraModel, Landmark, PixelPoint, Session, WorldPoint};

pub const MIN_LANDMARKS: usize = 6;

/// Ratio of second-smallest to largest DLT singular value below which the
/// landmark configuration is treated as degenerate.
const DEGENERACY_RATIO: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseEstimate {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    /// RMS pixel reprojection error over the landmarks used.
    pub rms_error: f64,
    pub iterations: usize,
}

impl PoseEstimate {
    pub fn apply_to(&self, camera: &CameraModel) -> CameraModel {
        camera.clone().with_pose(self.rotation, self.translation)
    }
}

/// Landmark observations for one camera, in landmark order.
pub fn correspondences_for(camera: &CameraModel, landmarks: &[Landmark]) -> Vec<(WorldPoint, PixelPoint)> {
    landmarks
        .iter()
        .filter_map(|lm| lm.observations.get(&camera.camera_id).map(|px| (lm.world, *px)))
        .collect()
}

/// Estimates the pose of `camera` (its intrinsics are used, its pose ignored)
/// from the landmarks it observes.
pub fn calibrate_extrinsics(camera: &CameraModel, landmarks: &[Landmark]) -> Result<PoseEstimate, GeometryError> {
    calibrate_from_correspondences(camera, &correspondences_for(camera, landmarks))
}

/// Calibrates every session camera from the session landmarks and marks it
/// calibrated. Stops at the first camera that fails.
pub fn calibrate_session(session: &mut Session) -> Result<BTreeMap<CameraId, PoseEstimate>, (CameraId, GeometryError)> {
    let mut out = BTreeMap::new();
    for i in 0..session.cameras.len() {
        let cam = &session.cameras[i];
        let id = cam.camera_id.clone();
        let pose = calibrate_extrinsics(cam, &session.landmarks).map_err(|e| (id.clone(), e))?;
        session.cameras[i] = pose.apply_to(cam);
        session.calibrated.insert(id.clone());
        out.insert(id, pose);
    }
    Ok(out)
}

pub fn calibrate_from_correspondences(
    camera: &CameraModel,
    points: &[(WorldPoint, PixelPoint)],
) -> Result<PoseEstimate, GeometryError> {
    if points.len() < MIN_LANDMARKS {
        return Err(GeometryError::InsufficientLandmarks {
            needed: MIN_LANDMARKS,
            got: points.len(),
        });
    }
    let normalized = points
        .iter()
        .map(|(_, px)| undistort_normalized(camera, px, UNDISTORT_MAX_ITERATIONS))
        .collect::<Result<Vec<_>, _>>()?;
    let world: Vec<Vector3<f64>> = points.iter().map(|(w, _)| w.to_vector()).collect();

    let (rotation, translation) = dlt_pose(&world, &normalized)?;

    let refined = gauss_newton::<6, (Matrix3<f64>, Vector3<f64>)>(
        (rotation, translation),
        |(r, t)| pose_normal(camera, r, t, &world, points),
        |(r, t), step| {
            let dr = Rotation3::new(Vector3::new(step[0], step[1], step[2]));
            (dr.matrix() * r, t + Vector3::new(step[3], step[4], step[5]))
        },
    );
    let refined = match refined {
        Some(r) => r,
        // DLT pose puts landmarks behind the camera; nothing to refine from.
        None => return Err(GeometryError::Divergence),
    };
    let (rotation, translation) = refined.state;
    if !refined.cost.is_finite() || rotation.iter().chain(translation.iter()).any(|v| !v.is_finite()) {
        return Err(GeometryError::Divergence);
    }
    Ok(PoseEstimate {
        rotation,
        translation,
        rms_error: (refined.cost / points.len() as f64).sqrt(),
        iterations: refined.iterations,
    })
}

fn pose_normal(
    camera: &CameraModel,
    r: &Matrix3<f64>,
    t: &Vector3<f64>,
    world: &[Vector3<f64>],
    points: &[(WorldPoint, PixelPoint)],
) -> Option<Normal<6>> {
    let cam = camera.clone().with_pose(*r, *t);
    let mut jtj = SMatrix::<f64, 6, 6>::zeros();
    let mut jtr = SVector::<f64, 6>::zeros();
    let mut cost = 0.0;
    for (x, (_, obs)) in world.iter().zip(points) {
        let xc = to_camera(&cam, x);
        if !(xc.z > 0.0) {
            return None;
        }
        let (pixel, d_xc) = project_camera_frame(&cam, &xc);
        let res = nalgebra::Vector2::new(pixel.x - obs.u, pixel.y - obs.v);
        let rx = r * x;
        let mut j = SMatrix::<f64, 2, 6>::zeros();
        j.fixed_view_mut::<2, 3>(0, 0).copy_from(&(d_xc * -rx.cross_matrix()));
        j.fixed_view_mut::<2, 3>(0, 3).copy_from(&d_xc);
        jtj += j.transpose() * j;
        jtr += j.transpose() * res;
        cost += res.norm_squared();
    }
    Some(Normal { jtj, jtr, cost })
}

/// Similarity that moves the centroid to the origin and scales the mean
/// distance to `target`.
fn normalizing_scale(points: impl Iterator<Item = Vec<f64>> + Clone, target: f64) -> (Vec<f64>, f64) {
    let n = points.clone().count() as f64;
    let dim = points.clone().next().map_or(0, |p| p.len());
    let mut centroid = vec![0.0; dim];
    for p in points.clone() {
        for (c, v) in centroid.iter_mut().zip(&p) {
            *c += v / n;
        }
    }
    let mean_dist = points
        .map(|p| p.iter().zip(&centroid).map(|(v, c)| (v - c).powi(2)).sum::<f64>().sqrt())
        .sum::<f64>()
        / n;
    let scale = if mean_dist > 0.0 { target / mean_dist } else { 1.0 };
    (centroid, scale)
}

/// Linear pose from world points and their normalized image coordinates.
fn dlt_pose(
    world: &[Vector3<f64>],
    image: &[nalgebra::Vector2<f64>],
) -> Result<(Matrix3<f64>, Vector3<f64>), GeometryError> {
    let (c3, s3) = normalizing_scale(world.iter().map(|w| vec![w.x, w.y, w.z]), 3f64.sqrt());
    let (c2, s2) = normalizing_scale(image.iter().map(|p| vec![p.x, p.y]), 2f64.sqrt());
    let t3 = Matrix4::new(
        s3, 0.0, 0.0, -s3 * c3[0],
        0.0, s3, 0.0, -s3 * c3[1],
        0.0, 0.0, s3, -s3 * c3[2],
        0.0, 0.0, 0.0, 1.0,
    );
    let t2 = Matrix3::new(s2, 0.0, -s2 * c2[0], 0.0, s2, -s2 * c2[1], 0.0, 0.0, 1.0);

    let n = world.len();
    let mut a = DMatrix::<f64>::zeros(2 * n, 12);
    for (i, (w, p)) in world.iter().zip(image).enumerate() {
        let xw = [s3 * (w.x - c3[0]), s3 * (w.y - c3[1]), s3 * (w.z - c3[2]), 1.0];
        let (u, v) = (s2 * (p.x - c2[0]), s2 * (p.y - c2[1]));
        for k in 0..4 {
            a[(2 * i, k)] = xw[k];
            a[(2 * i, 8 + k)] = -u * xw[k];
            a[(2 * i + 1, 4 + k)] = xw[k];
            a[(2 * i + 1, 8 + k)] = -v * xw[k];
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.as_ref().expect("requested V");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
    let sv = &svd.singular_values;
    let largest = sv[order[order.len() - 1]];
    if !(largest > 0.0) || sv[order[1]] / largest < DEGENERACY_RATIO {
        return Err(GeometryError::Degenerate(format!(
            "landmark configuration does not determine a pose (singular value ratio {:e})",
            sv[order[1]] / largest
        )));
    }
    let h = v_t.row(order[0]);
    let pn = Matrix3x4::from_fn(|r, c| h[4 * r + c]);
    let t2_inv = t2.try_inverse().expect("similarity is invertible");
    let mut p = t2_inv * pn * t3;

    let m = p.fixed_view::<3, 3>(0, 0).into_owned();
    if m.determinant() < 0.0 {
        p = -p;
    }
    let m = p.fixed_view::<3, 3>(0, 0).into_owned();
    let svd_m = m.svd(true, true);
    let (u, v_t) = (svd_m.u.expect("requested U"), svd_m.v_t.expect("requested V"));
    let mut rotation = u * v_t;
    if rotation.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        rotation = u * v_t;
    }
    let scale = svd_m.singular_values.sum() / 3.0;
    if !(scale > 0.0) {
        return Err(GeometryError::Degenerate("DLT pose has zero scale".to_string()));
    }
    let translation = p.column(3) / scale;
    Ok((rotation, translation.into_owned()))
}

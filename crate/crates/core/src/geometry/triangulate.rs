//! Multi-view point triangulation and reprojection scoring.

use nalgebra::{DMatrix, Matrix3, SVector, Vector3};
use serde::{Deserialize, Serialize};

use super::camera::{project_camera_frame, to_camera, undistort_normalized, UNDISTORT_MAX_ITERATIONS};
use super::solve::{gauss_newton, Normal};
use super::{project, GeometryError};
use crate::model::{CameraModel, PixelPoint, WorldPoint};

/// Pixel error charged for a view that sees the point behind the camera.
pub const BEHIND_CAMERA_PENALTY_PX: f64 = 1e6;

/// Minimum angle between two viewing rays for them to constrain depth.
pub const MIN_RAY_ANGLE: f64 = 1e-6;

/// One view of a point: the camera and the observed pixel.
pub type Observation<'a> = (&'a CameraModel, PixelPoint);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Triangulation {
    pub point: WorldPoint,
    /// RMS reprojection error over all views, pixels.
    pub rms_error: f64,
    /// Set when the solution lies behind at least one of the cameras.
    pub behind_camera: bool,
}

/// Root-mean-square pixel distance between the projections of `point` and the
/// observations. Views with the point behind the camera count as
/// [`BEHIND_CAMERA_PENALTY_PX`].
pub fn reprojection_error(point: &WorldPoint, observations: &[Observation<'_>]) -> f64 {
    reprojection_error_with_penalty(point, observations, BEHIND_CAMERA_PENALTY_PX)
}

pub fn reprojection_error_with_penalty(point: &WorldPoint, observations: &[Observation<'_>], penalty: f64) -> f64 {
    if observations.is_empty() {
        return 0.0;
    }
    let sum: f64 = observations
        .iter()
        .map(|(cam, obs)| match project(cam, point) {
            Ok(p) => (p.u - obs.u).powi(2) + (p.v - obs.v).powi(2),
            Err(_) => penalty * penalty,
        })
        .sum();
    (sum / observations.len() as f64).sqrt()
}

fn check_geometry(rays: &[(Vector3<f64>, Vector3<f64>)]) -> Result<(), GeometryError> {
    let mut distinct_centers = false;
    for (i, (ci, di)) in rays.iter().enumerate() {
        for (cj, dj) in &rays[i + 1..] {
            if (ci - cj).norm() <= 1e-9 {
                continue;
            }
            distinct_centers = true;
            let angle = di.cross(dj).norm().atan2(di.dot(dj));
            if angle > MIN_RAY_ANGLE {
                return Ok(());
            }
        }
    }
    Err(GeometryError::Degenerate(if distinct_centers {
        "viewing rays are parallel".to_string()
    } else {
        "all views share one camera center".to_string()
    }))
}

/// Linear DLT followed by Gauss–Newton refinement of the pixel reprojection
/// error.
pub fn triangulate(observations: &[Observation<'_>]) -> Result<Triangulation, GeometryError> {
    if observations.len() < 2 {
        return Err(GeometryError::TooFewViews(observations.len()));
    }
    let normalized = observations
        .iter()
        .map(|(cam, px)| undistort_normalized(cam, px, UNDISTORT_MAX_ITERATIONS))
        .collect::<Result<Vec<_>, _>>()?;
    let rays: Vec<_> = observations
        .iter()
        .zip(&normalized)
        .map(|((cam, _), n)| {
            let d = cam.rotation.transpose() * Vector3::new(n.x, n.y, 1.0);
            (cam.center(), d.normalize())
        })
        .collect();
    check_geometry(&rays)?;

    let mut a = DMatrix::<f64>::zeros(2 * observations.len().max(2), 4);
    for (i, ((cam, _), n)) in observations.iter().zip(&normalized).enumerate() {
        let r: &Matrix3<f64> = &cam.rotation;
        let t = &cam.translation;
        for (k, coord) in [n.x, n.y].into_iter().enumerate() {
            let mut row = [0.0; 4];
            for c in 0..3 {
                row[c] = coord * r[(2, c)] - r[(k, c)];
            }
            row[3] = coord * t.z - t[k];
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            for c in 0..4 {
                a[(2 * i + k, c)] = row[c] / norm;
            }
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.as_ref().expect("requested V");
    let smallest = (0..svd.singular_values.len())
        .min_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]))
        .expect("non-empty");
    let h = v_t.row(smallest);
    if h[3].abs() < 1e-12 * h.norm() {
        return Err(GeometryError::Degenerate("point at infinity".to_string()));
    }
    let linear = Vector3::new(h[0] / h[3], h[1] / h[3], h[2] / h[3]);

    let refined = gauss_newton::<3, Vector3<f64>>(
        linear,
        |x| point_normal(x, observations),
        |x, step| x + step,
    );
    let point = match refined {
        Some(r) => r.state,
        // Linear solution sits behind a camera; keep it and report.
        None => linear,
    };
    let point = WorldPoint::from_vector(&point);
    let behind_camera = observations
        .iter()
        .any(|(cam, _)| !(to_camera(cam, &point.to_vector()).z > 0.0));
    Ok(Triangulation {
        point,
        rms_error: reprojection_error(&point, observations),
        behind_camera,
    })
}

fn point_normal(x: &Vector3<f64>, observations: &[Observation<'_>]) -> Option<Normal<3>> {
    let mut normal = Normal {
        jtj: nalgebra::Matrix3::zeros(),
        jtr: SVector::<f64, 3>::zeros(),
        cost: 0.0,
    };
    for (cam, obs) in observations {
        let xc = to_camera(cam, x);
        if !(xc.z > 0.0) {
            return None;
        }
        let (pixel, d_xc) = project_camera_frame(cam, &xc);
        let res = nalgebra::Vector2::new(pixel.x - obs.u, pixel.y - obs.v);
        let j = d_xc * cam.rotation;
        normal.jtj += j.transpose() * j;
        normal.jtr += j.transpose() * res;
        normal.cost += res.norm_squared();
    }
    Some(normal)
}

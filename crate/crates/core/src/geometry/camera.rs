//! Pinhole projection with two-term radial distortion.

use nalgebra::{Matrix2, Matrix2x3, Vector2, Vector3};

use super::GeometryError;
use crate::model::{CameraModel, PixelPoint, WorldPoint};

/// Default iteration cap for [`undistort`].
pub const UNDISTORT_MAX_ITERATIONS: usize = 20;

/// Radial distortion factor `1 + k1 r² + k2 r⁴` at normalized point `(x, y)`.
fn radial(cam: &CameraModel, x: f64, y: f64) -> f64 {
    let r2 = x * x + y * y;
    1.0 + cam.k1 * r2 + cam.k2 * r2 * r2
}

/// Pixel coordinates of an ideal (undistorted) normalized point.
fn normalized_to_pixel(cam: &CameraModel, x: f64, y: f64) -> Vector2<f64> {
    let d = radial(cam, x, y);
    Vector2::new(cam.fx * d * x + cam.cx, cam.fy * d * y + cam.cy)
}

/// Jacobian of the pixel position w.r.t. the normalized coordinates.
fn pixel_wrt_normalized(cam: &CameraModel, x: f64, y: f64) -> Matrix2<f64> {
    let r2 = x * x + y * y;
    let d = 1.0 + cam.k1 * r2 + cam.k2 * r2 * r2;
    // ∂d/∂x = 2x (k1 + 2 k2 r²)
    let dd = 2.0 * (cam.k1 + 2.0 * cam.k2 * r2);
    Matrix2::new(
        cam.fx * (d + x * x * dd),
        cam.fx * x * y * dd,
        cam.fy * x * y * dd,
        cam.fy * (d + y * y * dd),
    )
}

/// World point into camera coordinates.
pub(crate) fn to_camera(cam: &CameraModel, p: &Vector3<f64>) -> Vector3<f64> {
    cam.rotation * p + cam.translation
}

/// Projection of a camera-frame point plus `∂pixel/∂X_cam`. No front-of-camera
/// check; callers decide what a non-positive depth means.
pub(crate) fn project_camera_frame(cam: &CameraModel, xc: &Vector3<f64>) -> (Vector2<f64>, Matrix2x3<f64>) {
    let iz = 1.0 / xc.z;
    let (x, y) = (xc.x * iz, xc.y * iz);
    let pixel = normalized_to_pixel(cam, x, y);
    let dn = Matrix2x3::new(iz, 0.0, -x * iz, 0.0, iz, -y * iz);
    (pixel, pixel_wrt_normalized(cam, x, y) * dn)
}

/// Projects a world point to pixels.
pub fn project(camera: &CameraModel, p: &WorldPoint) -> Result<PixelPoint, GeometryError> {
    let xc = to_camera(camera, &p.to_vector());
    if !(xc.z > 0.0) {
        return Err(GeometryError::BehindCamera {
            camera: camera.camera_id.clone(),
            depth: xc.z,
        });
    }
    let px = normalized_to_pixel(camera, xc.x / xc.z, xc.y / xc.z);
    Ok(PixelPoint::new(px.x, px.y))
}

/// Applies the lens distortion to an ideal pixel.
pub fn distort(camera: &CameraModel, ideal: &PixelPoint) -> PixelPoint {
    let x = (ideal.u - camera.cx) / camera.fx;
    let y = (ideal.v - camera.cy) / camera.fy;
    let px = normalized_to_pixel(camera, x, y);
    PixelPoint::new(px.x, px.y)
}

/// Removes lens distortion, returning the ideal pixel a distortion-free
/// camera would have observed. Uses fixed-point iteration.
pub fn undistort(camera: &CameraModel, p: &PixelPoint) -> Result<PixelPoint, GeometryError> {
    undistort_with(camera, p, UNDISTORT_MAX_ITERATIONS)
}

pub fn undistort_with(
    camera: &CameraModel,
    p: &PixelPoint,
    max_iterations: usize,
) -> Result<PixelPoint, GeometryError> {
    let n = undistort_normalized(camera, p, max_iterations)?;
    Ok(PixelPoint::new(
        camera.fx * n.x + camera.cx,
        camera.fy * n.y + camera.cy,
    ))
}

/// Ideal normalized image coordinates `(X/Z, Y/Z)` of an observed pixel.
pub(crate) fn undistort_normalized(
    camera: &CameraModel,
    p: &PixelPoint,
    max_iterations: usize,
) -> Result<Vector2<f64>, GeometryError> {
    let xd = (p.u - camera.cx) / camera.fx;
    let yd = (p.v - camera.cy) / camera.fy;
    if camera.k1 == 0.0 && camera.k2 == 0.0 {
        return Ok(Vector2::new(xd, yd));
    }
    let (mut x, mut y) = (xd, yd);
    for _ in 0..max_iterations {
        let d = radial(camera, x, y);
        let (nx, ny) = (xd / d, yd / d);
        let step = (nx - x).abs().max((ny - y).abs());
        x = nx;
        y = ny;
        if step < 1e-16 {
            break;
        }
    }
    let back = normalized_to_pixel(camera, x, y);
    let residual = (back.x - p.u).hypot(back.y - p.v);
    if !(residual <= 1e-6) {
        return Err(GeometryError::UndistortDiverged {
            u: p.u,
            v: p.v,
            iterations: max_iterations,
        });
    }
    Ok(Vector2::new(x, y))
}

//! Perspective projection of LiDAR returns into a sparse depth image, and
//! its inverse.

use super::{Calibration, DepthMap, GeometryError, PointCloud, Result};

/// Points closer than this (camera-frame z, meters) are dropped before the
/// perspective division. LiDAR minimum range sits well above it.
pub const NEAR_PLANE_M: f64 = 0.1;

/// Project every cloud point into the image; each pixel keeps the minimum
/// depth among the points that land on it (nearest surface occludes).
pub fn project_points(
    cloud: &PointCloud,
    calib: &Calibration,
    width: usize,
    height: usize,
) -> DepthMap {
    let mut map = DepthMap::new_invalid(width, height);
    for p in &cloud.points {
        let cam = calib.lidar_point_to_camera([p.x as f64, p.y as f64, p.z as f64]);
        let depth = cam[2];
        if depth <= NEAR_PLANE_M {
            continue;
        }
        let Some((u, v)) = calib.project_camera_point(cam) else {
            continue;
        };
        let px = (u + 0.5).floor();
        let py = (v + 0.5).floor();
        if px < 0.0 || py < 0.0 || px >= width as f64 || py >= height as f64 {
            continue;
        }
        let (x, y) = (px as usize, py as usize);
        match map.get(x, y) {
            Some(existing) if existing <= depth as f32 => {}
            _ => map.set(x, y, depth as f32),
        }
    }
    map
}

/// Invert the pinhole projection: pixel (u, v) at the given camera-frame
/// depth back to a 3-D camera-frame point. Requires an affine intrinsic
/// matrix (last row `[0 0 1 tz]`, no row-1 skew), which holds for rectified
/// projection matrices.
pub fn back_project(u: f64, v: f64, depth: f64, calib: &Calibration) -> Result<[f64; 3]> {
    if depth <= 0.0 {
        return Err(GeometryError::Domain(format!(
            "back_project requires depth > 0, got {depth}"
        )));
    }
    let m = &calib.intrinsic;
    if m[2][0] != 0.0 || m[2][1] != 0.0 || m[1][0] != 0.0 {
        return Err(GeometryError::Domain(
            "back_project requires an affine rectified intrinsic matrix".into(),
        ));
    }
    let w = m[2][2] * depth + m[2][3];
    let y = (v * w - m[1][2] * depth - m[1][3]) / m[1][1];
    let x = (u * w - m[0][1] * y - m[0][2] * depth - m[0][3]) / m[0][0];
    Ok([x, y, depth])
}

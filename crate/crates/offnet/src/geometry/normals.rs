//! Surface normals from dense depth by windowed plane fitting.
//!
//! Each pixel and its window neighbors are back-projected to camera-frame
//! points; the normal is the eigenvector of their covariance with the
//! smallest eigenvalue, sign-flipped so the camera-frame z component is
//! non-positive (normals face the camera).

use super::{back_project, Calibration, DepthMap, GeometryError, NormalMap, Result};

/// Default plane-fit window.
pub const NORMAL_WINDOW: usize = 7;

pub fn estimate_normals(dense: &DepthMap, calib: &Calibration, window: usize) -> Result<NormalMap> {
    if window < 3 || window % 2 == 0 {
        return Err(GeometryError::Domain(format!(
            "plane-fit window must be odd and >= 3, got {window}"
        )));
    }
    let radius = (window / 2) as isize;
    let (w, h) = (dense.width, dense.height);
    let mut out = NormalMap::new_invalid(w, h);

    for y in 0..h {
        for x in 0..w {
            let mut pts: Vec<[f64; 3]> = Vec::with_capacity(window * window);
            for dy in -radius..=radius {
                for dx in -radius..=radius {
                    let (nx, ny) = (x as isize + dx, y as isize + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    if let Some(d) = dense.get(nx as usize, ny as usize) {
                        let p = back_project(nx as f64, ny as f64, d as f64, calib)?;
                        pts.push(p);
                    }
                }
            }
            if pts.len() < 3 {
                continue;
            }
            let n = pts.len() as f64;
            let mut mean = [0.0f64; 3];
            for p in &pts {
                for c in 0..3 {
                    mean[c] += p[c];
                }
            }
            for m in &mut mean {
                *m /= n;
            }
            let mut cov = [[0.0f64; 3]; 3];
            for p in &pts {
                let d = [p[0] - mean[0], p[1] - mean[1], p[2] - mean[2]];
                for i in 0..3 {
                    for j in 0..3 {
                        cov[i][j] += d[i] * d[j];
                    }
                }
            }
            for row in &mut cov {
                for v in row {
                    *v /= n;
                }
            }
            let mut normal = smallest_eigenvector_sym3(cov);
            let len =
                (normal[0] * normal[0] + normal[1] * normal[1] + normal[2] * normal[2]).sqrt();
            if len < 1e-12 {
                continue;
            }
            for c in &mut normal {
                *c /= len;
            }
            if normal[2] > 0.0 {
                for c in &mut normal {
                    *c = -*c;
                }
            }
            out.set(x, y, [normal[0] as f32, normal[1] as f32, normal[2] as f32]);
        }
    }
    Ok(out)
}

/// Eigenvector of the smallest eigenvalue of a symmetric 3x3 matrix, via
/// cyclic Jacobi rotations.
pub fn smallest_eigenvector_sym3(mut a: [[f64; 3]; 3]) -> [f64; 3] {
    let mut v = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    for _ in 0..64 {
        let off = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
        if off < 1e-30 {
            break;
        }
        for &(p, q) in &[(0usize, 1usize), (0, 2), (1, 2)] {
            let apq = a[p][q];
            if apq.abs() < 1e-300 {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;

            let (app, aqq) = (a[p][p], a[q][q]);
            a[p][p] = app - t * apq;
            a[q][q] = aqq + t * apq;
            a[p][q] = 0.0;
            a[q][p] = 0.0;
            for r in 0..3 {
                if r != p && r != q {
                    let (arp, arq) = (a[r][p], a[r][q]);
                    a[r][p] = c * arp - s * arq;
                    a[p][r] = a[r][p];
                    a[r][q] = s * arp + c * arq;
                    a[q][r] = a[r][q];
                }
            }
            for r in 0..3 {
                let (vrp, vrq) = (v[r][p], v[r][q]);
                v[r][p] = c * vrp - s * vrq;
                v[r][q] = s * vrp + c * vrq;
            }
        }
    }
    let mut min_i = 0;
    for i in 1..3 {
        if a[i][i] < a[min_i][min_i] {
            min_i = i;
        }
    }
    [v[0][min_i], v[1][min_i], v[2][min_i]]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cosine(a: [f32; 3], b: [f64; 3]) -> f64 {
        let dot = a[0] as f64 * b[0] + a[1] as f64 * b[1] + a[2] as f64 * b[2];
        let nb = (b[0] * b[0] + b[1] * b[1] + b[2] * b[2]).sqrt();
        dot / nb
    }

    #[test]
    fn jacobi_finds_smallest_axis_of_diagonal() {
        let v = smallest_eigenvector_sym3([[3.0, 0.0, 0.0], [0.0, 0.5, 0.0], [0.0, 0.0, 2.0]]);
        assert!(v[1].abs() > 0.999, "{v:?}");
    }

    #[test]
    fn jacobi_handles_off_diagonal_coupling() {
        // Rank-2 matrix built from two spanning directions; the null
        // direction (1,1,1)/sqrt(3) is the smallest eigenvector.
        let u1 = [1.0, -1.0, 0.0];
        let u2 = [1.0, 1.0, -2.0];
        let mut m = [[0.0f64; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] = 2.0 * u1[i] * u1[j] + 0.7 * u2[i] * u2[j];
            }
        }
        let v = smallest_eigenvector_sym3(m);
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        let dot = (v[0] + v[1] + v[2]) / (n * 3.0f64.sqrt());
        assert!(dot.abs() > 0.999_99, "{v:?}");
    }

    #[test]
    fn fronto_parallel_plane_faces_camera() {
        let calib = Calibration::pinhole(64.0, 16.0, 16.0);
        let mut map = DepthMap::new_invalid(32, 32);
        for y in 0..32 {
            for x in 0..32 {
                map.set(x, y, 10.0);
            }
        }
        let normals = estimate_normals(&map, &calib, 7).unwrap();
        for y in 8..24 {
            for x in 8..24 {
                let n = normals.get(x, y).unwrap();
                assert!(n[2] <= 0.0);
                assert!(cosine(n, [0.0, 0.0, -1.0]) > 0.999, "{n:?} at {x},{y}");
            }
        }
    }

    #[test]
    fn slanted_plane_recovers_analytic_normal() {
        // Plane z = 10 + 0.5 x in camera frame; normal ~ (0.5, 0, -1).
        let calib = Calibration::pinhole(64.0, 16.0, 16.0);
        let mut map = DepthMap::new_invalid(32, 32);
        for y in 0..32 {
            for x in 0..32 {
                let ratio = (x as f64 - 16.0) / 64.0;
                let denom = 1.0 - 0.5 * ratio;
                assert!(denom > 0.2);
                map.set(x, y, (10.0 / denom) as f32);
            }
        }
        let normals = estimate_normals(&map, &calib, 7).unwrap();
        let expect = [0.5, 0.0, -1.0];
        for y in 6..26 {
            for x in 6..26 {
                let n = normals.get(x, y).unwrap();
                let cos = cosine(n, expect);
                assert!(1.0 - cos < 1e-2, "cosine distance {} at {x},{y}", 1.0 - cos);
                let unit = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
                assert!((unit - 1.0).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn underdetermined_window_is_invalid() {
        let calib = Calibration::pinhole(10.0, 1.0, 1.0);
        let mut map = DepthMap::new_invalid(3, 3);
        map.set(1, 1, 5.0);
        map.set(0, 0, 5.0);
        let normals = estimate_normals(&map, &calib, 3).unwrap();
        assert!(normals.get(1, 1).is_none());
        assert!(normals.get(2, 2).is_none());
    }

    #[test]
    fn window_must_be_odd_and_large_enough() {
        let calib = Calibration::pinhole(10.0, 1.0, 1.0);
        let map = DepthMap::new_invalid(3, 3);
        assert!(estimate_normals(&map, &calib, 4).is_err());
        assert!(estimate_normals(&map, &calib, 1).is_err());
    }
}

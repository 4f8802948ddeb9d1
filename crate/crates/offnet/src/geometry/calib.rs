//! Calibration file parsing and the projective camera model.

use super::{GeometryError, Result};

/// Camera intrinsics (`P2`, pixels) and the LiDAR-to-camera rigid transform
/// (`Tr_velo_to_cam`, meters), both 3x4 row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub intrinsic: [[f64; 4]; 3],
    pub lidar_to_camera: [[f64; 4]; 3],
}

fn parse_matrix(line_no: usize, key: &str, rest: &str) -> Result<[[f64; 4]; 3]> {
    let values: Vec<f64> = rest
        .split_whitespace()
        .map(|tok| {
            tok.parse::<f64>().map_err(|_| GeometryError::Parse {
                context: format!("line {line_no} ({key})"),
                msg: format!("bad float {tok:?}"),
            })
        })
        .collect::<Result<_>>()?;
    if values.len() != 12 {
        return Err(GeometryError::Parse {
            context: format!("line {line_no} ({key})"),
            msg: format!("expected 12 values, found {}", values.len()),
        });
    }
    let mut m = [[0.0; 4]; 3];
    for (i, v) in values.iter().enumerate() {
        m[i / 4][i % 4] = *v;
    }
    Ok(m)
}

impl Calibration {
    /// Parse the plain-text format: one `P2: <12 floats>` line and one
    /// `Tr_velo_to_cam: <12 floats>` line; unknown keys are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut intrinsic = None;
        let mut extrinsic = None;
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, rest)) = line.split_once(':') else {
                continue;
            };
            match key.trim() {
                "P2" => intrinsic = Some(parse_matrix(idx + 1, "P2", rest)?),
                "Tr_velo_to_cam" => {
                    extrinsic = Some(parse_matrix(idx + 1, "Tr_velo_to_cam", rest)?)
                }
                _ => {}
            }
        }
        let calib = Calibration {
            intrinsic: intrinsic.ok_or_else(|| GeometryError::Parse {
                context: "end of file".into(),
                msg: "missing P2 line".into(),
            })?,
            lidar_to_camera: extrinsic.ok_or_else(|| GeometryError::Parse {
                context: "end of file".into(),
                msg: "missing Tr_velo_to_cam line".into(),
            })?,
        };
        calib.validate()?;
        Ok(calib)
    }

    pub fn to_text(&self) -> String {
        let fmt = |m: &[[f64; 4]; 3]| {
            m.iter()
                .flatten()
                .map(|v| format!("{v:e}"))
                .collect::<Vec<_>>()
                .join(" ")
        };
        format!(
            "P2: {}\nTr_velo_to_cam: {}\n",
            fmt(&self.intrinsic),
            fmt(&self.lidar_to_camera)
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.intrinsic[0][0] <= 0.0 || self.intrinsic[1][1] <= 0.0 {
            return Err(GeometryError::Domain(format!(
                "focal entries must be positive, got {} and {}",
                self.intrinsic[0][0], self.intrinsic[1][1]
            )));
        }
        // Rotation part orthonormal within 1e-4.
        let r = &self.lidar_to_camera;
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[i][k] * r[j][k]).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                if (dot - expect).abs() > 1e-4 {
                    return Err(GeometryError::Domain(format!(
                        "lidar_to_camera rotation is not orthonormal (rows {i},{j}: {dot})"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Simple pinhole intrinsics with an identity LiDAR-to-camera transform.
    pub fn pinhole(focal: f64, cx: f64, cy: f64) -> Self {
        Calibration {
            intrinsic: [
                [focal, 0.0, cx, 0.0],
                [0.0, focal, cy, 0.0],
                [0.0, 0.0, 1.0, 0.0],
            ],
            lidar_to_camera: [
                [1.0, 0.0, 0.0, 0.0],
                [0.0, 1.0, 0.0, 0.0],
                [0.0, 0.0, 1.0, 0.0],
            ],
        }
    }

    pub fn with_lidar_to_camera(mut self, transform: [[f64; 4]; 3]) -> Self {
        self.lidar_to_camera = transform;
        self
    }

    /// Rescale intrinsics after the image is resized by (sx, sy).
    pub fn scaled(&self, sx: f64, sy: f64) -> Self {
        let mut out = self.clone();
        for c in 0..4 {
            out.intrinsic[0][c] = self.intrinsic[0][c] * sx;
            out.intrinsic[1][c] = self.intrinsic[1][c] * sy;
        }
        out
    }

    pub fn lidar_point_to_camera(&self, p: [f64; 3]) -> [f64; 3] {
        let m = &self.lidar_to_camera;
        [
            m[0][0] * p[0] + m[0][1] * p[1] + m[0][2] * p[2] + m[0][3],
            m[1][0] * p[0] + m[1][1] * p[1] + m[1][2] * p[2] + m[1][3],
            m[2][0] * p[0] + m[2][1] * p[1] + m[2][2] * p[2] + m[2][3],
        ]
    }

    /// Perspective projection of a camera-frame point to continuous pixel
    /// coordinates. Returns `None` when the homogeneous scale is not positive.
    pub fn project_camera_point(&self, p: [f64; 3]) -> Option<(f64, f64)> {
        let m = &self.intrinsic;
        let w = m[2][0] * p[0] + m[2][1] * p[1] + m[2][2] * p[2] + m[2][3];
        if w <= 0.0 {
            return None;
        }
        let u = m[0][0] * p[0] + m[0][1] * p[1] + m[0][2] * p[2] + m[0][3];
        let v = m[1][0] * p[0] + m[1][1] * p[1] + m[1][2] * p[2] + m[1][3];
        Some((u / w, v / w))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_round_trips_through_serialization() {
        let calib = Calibration::pinhole(721.5377, 609.5593, 172.854);
        let reparsed = Calibration::parse(&calib.to_text()).unwrap();
        assert_eq!(calib, reparsed);
    }

    #[test]
    fn parse_rejects_wrong_arity() {
        let err =
            Calibration::parse("P2: 1 2 3\nTr_velo_to_cam: 1 0 0 0 0 1 0 0 0 0 1 0\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("P2") && msg.contains("3"), "{msg}");
    }

    #[test]
    fn parse_requires_both_keys() {
        let err = Calibration::parse("P2: 1 0 0 0 0 1 0 0 0 0 1 0\n").unwrap_err();
        assert!(err.to_string().contains("Tr_velo_to_cam"));
    }

    #[test]
    fn parse_kitti_style_file_entrywise() {
        // Golden sample with a non-trivial axis-permutation extrinsic.
        let text = "P0: 1 0 0 0 0 1 0 0 0 0 1 0\n\
                    P2: 7.215377e+02 0.0 6.095593e+02 4.485728e+01 0.0 7.215377e+02 1.728540e+02 2.163791e-01 0.0 0.0 1.0 2.745884e-03\n\
                    Tr_velo_to_cam: 0 -1 0 0.1 0 0 -1 -0.2 1 0 0 0.3\n";
        let calib = Calibration::parse(text).unwrap();
        assert_eq!(calib.intrinsic[0][0], 721.5377);
        assert_eq!(calib.intrinsic[0][3], 44.85728);
        assert_eq!(calib.intrinsic[2][3], 2.745884e-3);
        assert_eq!(calib.lidar_to_camera[0][1], -1.0);
        assert_eq!(calib.lidar_to_camera[1][3], -0.2);
        assert_eq!(calib.lidar_to_camera[2][0], 1.0);
    }

    #[test]
    fn validate_rejects_skewed_rotation() {
        let mut calib = Calibration::pinhole(100.0, 32.0, 32.0);
        calib.lidar_to_camera[0][0] = 0.9;
        assert!(calib.validate().is_err());
    }
}

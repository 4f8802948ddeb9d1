//! Point-cloud container and its on-disk binary format: consecutive
//! little-endian `f32` records of (x, y, z, intensity).

use std::path::Path;

use super::{GeometryError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LidarPoint {
    pub x: f32,
    pub y: f32,
    pub z: f32,
    pub intensity: f32,
}

#[derive(Debug, Clone, Default)]
pub struct PointCloud {
    pub points: Vec<LidarPoint>,
}

impl PointCloud {
    pub fn from_bytes(bytes: &[u8], context: &str) -> Result<Self> {
        if bytes.len() % 16 != 0 {
            return Err(GeometryError::Parse {
                context: context.to_string(),
                msg: format!(
                    "{} bytes is not a whole number of 16-byte records",
                    bytes.len()
                ),
            });
        }
        let mut points = Vec::with_capacity(bytes.len() / 16);
        for record in bytes.chunks_exact(16) {
            let f = |i: usize| f32::from_le_bytes(record[i * 4..i * 4 + 4].try_into().unwrap());
            let p = LidarPoint {
                x: f(0),
                y: f(1),
                z: f(2),
                intensity: f(3),
            };
            if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
                return Err(GeometryError::Parse {
                    context: context.to_string(),
                    msg: format!("non-finite coordinate in record {}", points.len()),
                });
            }
            points.push(p);
        }
        Ok(PointCloud { points })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.points.len() * 16);
        for p in &self.points {
            out.extend_from_slice(&p.x.to_le_bytes());
            out.extend_from_slice(&p.y.to_le_bytes());
            out.extend_from_slice(&p.z.to_le_bytes());
            out.extend_from_slice(&p.intensity.to_le_bytes());
        }
        out
    }

    pub fn read_bin(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|source| GeometryError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }

    pub fn write_bin(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|source| GeometryError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

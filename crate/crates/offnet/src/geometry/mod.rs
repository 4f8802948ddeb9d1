//! LiDAR/camera geometry: calibration, point-cloud projection, depth
//! completion, and surface-normal estimation.
//!
//! The camera frame follows the usual rectified convention (x right, y down,
//! z forward, meters); image coordinates are pixels with the origin at the
//! top-left pixel center. All operations here are pure functions of their
//! inputs.

mod calib;
mod cloud;
mod densify;
mod normals;
mod project;

pub use calib::Calibration;
pub use cloud::{LidarPoint, PointCloud};
pub use densify::densify_depth;
pub use normals::{estimate_normals, smallest_eigenvector_sym3, NORMAL_WINDOW};
pub use project::{back_project, project_points, NEAR_PLANE_M};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("calibration parse error ({context}): {msg}")]
    Parse { context: String, msg: String },
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, GeometryError>;

/// Per-pixel metric depth with a validity mask.
#[derive(Debug, Clone)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    depth: Vec<f32>,
    valid: Vec<bool>,
}

impl DepthMap {
    pub fn new_invalid(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            depth: vec![0.0; width * height],
            valid: vec![false; width * height],
        }
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    pub fn get(&self, x: usize, y: usize) -> Option<f32> {
        let i = self.index(x, y);
        self.valid[i].then_some(self.depth[i])
    }

    /// Store a measurement. Depth must be positive and finite.
    pub fn set(&mut self, x: usize, y: usize, depth: f32) {
        debug_assert!(depth > 0.0 && depth.is_finite());
        let i = self.index(x, y);
        self.depth[i] = depth;
        self.valid[i] = true;
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn is_fully_valid(&self) -> bool {
        self.valid.iter().all(|&v| v)
    }

    pub fn depth_raw(&self) -> &[f32] {
        &self.depth
    }

    pub fn valid_raw(&self) -> &[bool] {
        &self.valid
    }
}

/// Per-pixel unit surface normal (camera frame) with a validity mask.
#[derive(Debug, Clone)]
pub struct NormalMap {
    pub width: usize,
    pub height: usize,
    normal: Vec<[f32; 3]>,
    valid: Vec<bool>,
}

impl NormalMap {
    pub fn new_invalid(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            normal: vec![[0.0; 3]; width * height],
            valid: vec![false; width * height],
        }
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    pub fn get(&self, x: usize, y: usize) -> Option<[f32; 3]> {
        let i = self.index(x, y);
        self.valid[i].then_some(self.normal[i])
    }

    pub fn set(&mut self, x: usize, y: usize, normal: [f32; 3]) {
        let i = self.index(x, y);
        self.normal[i] = normal;
        self.valid[i] = true;
    }

    pub fn normals_raw(&self) -> &[[f32; 3]] {
        &self.normal
    }

    pub fn valid_raw(&self) -> &[bool] {
        &self.valid
    }

    /// Model input layout: `[3, H, W]` with invalid pixels zeroed.
    pub fn to_tensor(&self) -> crate::tensor::Tensor {
        let plane = self.width * self.height;
        let mut data = vec![0.0f32; 3 * plane];
        for i in 0..plane {
            if self.valid[i] {
                data[i] = self.normal[i][0];
                data[plane + i] = self.normal[i][1];
                data[2 * plane + i] = self.normal[i][2];
            }
        }
        crate::tensor::Tensor::from_vec(data, &[3, self.height, self.width])
            .expect("normal map tensor shape")
    }
}

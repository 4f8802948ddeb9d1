//! Procedurally generated scenes: a flat ground plane seen from a forward
//! camera, a traversable corridor, box obstacles, and a simulated LiDAR.
//!
//! Frames are deterministic in (seed, variant) and are written in the same
//! directory layout the scanner expects, so tests and examples can build a
//! complete miniature dataset anywhere.

use std::path::Path;

use crate::dataset::{DatasetError, GT_NON_TRAVERSABLE, GT_TRAVERSABLE, GT_UNREACHABLE};
use crate::geometry::{Calibration, LidarPoint, PointCloud};
use crate::raster;
use crate::rng::SplitMix64;

pub type Result<T> = std::result::Result<T, DatasetError>;

const CAM_HEIGHT: f64 = 1.5;
const MAX_RANGE: f64 = 120.0;
const LIDAR_OFFSET: [f64; 3] = [0.0, -0.3, 0.0];

/// LiDAR-to-camera rotation: sensor x (forward) -> camera z, sensor y (left)
/// -> camera -x, sensor z (up) -> camera -y.
const LIDAR_ROTATION: [[f64; 3]; 3] = [[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]];

#[derive(Debug, Clone, Copy)]
struct BoxObstacle {
    x_center: f64,
    z_front: f64,
    half_width: f64,
    height: f64,
}

#[derive(Debug, Clone)]
pub struct SyntheticFrame {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<u8>,
    /// Annotation levels: 255 traversable, 0 non-traversable, 128 unreachable.
    pub gt_levels: Vec<u8>,
    pub cloud: PointCloud,
    pub calib: Calibration,
}

fn pixel_noise(seed: u64, u: usize, v: usize, channel: usize) -> i32 {
    let mut rng = SplitMix64::new(
        seed ^ (u as u64).wrapping_mul(0x9e3779b97f4a7c15)
            ^ (v as u64).wrapping_mul(0xbf58476d1ce4e5b9)
            ^ channel as u64,
    );
    (rng.next_below(15) as i32) - 7
}

fn shade(base: [u8; 3], seed: u64, u: usize, v: usize) -> [u8; 3] {
    let mut out = [0u8; 3];
    for c in 0..3 {
        out[c] = (base[c] as i32 + pixel_noise(seed, u, v, c)).clamp(0, 255) as u8;
    }
    out
}

/// Image-space traversable band: full width, starting at a row snapped to a
/// multiple of 4 so the label edge lands between cells of the decoder's
/// 1/4-scale grid (the sharpest boundary its bilinear upsampling can carry).
fn band_start_row(height: usize, variant: u64) -> usize {
    let unit = height / 16;
    let start_units = match variant % 4 {
        0 => 10,
        1 => 11,
        2 => 12,
        _ => 10,
    };
    start_units * unit
}

fn obstacles(width: usize, focal: f64, variant: u64) -> Vec<BoxObstacle> {
    // One distant box per frame, left or right; far enough that its base
    // stays above the traversable band.
    let z = 20.0 + (variant % 3) as f64 * 3.0;
    let side = if variant % 2 == 0 { -1.0 } else { 1.0 };
    let u_off = side * 0.38 * width as f64;
    let x_center = u_off * z / focal;
    vec![BoxObstacle {
        x_center,
        z_front: z,
        half_width: 0.8,
        height: 1.2,
    }]
}

/// Render one frame. The camera looks along +z with the ground plane at
/// y = CAM_HEIGHT below it; the traversable corridor is an image-space
/// band on the ground, obstacles are boxes standing on the ground, and the
/// sky is unreachable.
pub fn render_frame(width: usize, height: usize, seed: u64, variant: u64) -> SyntheticFrame {
    let focal = width as f64;
    let (cx, cy) = (width as f64 / 2.0, height as f64 / 2.0);
    let calib = Calibration::pinhole(focal, cx, cy).with_lidar_to_camera([
        [
            LIDAR_ROTATION[0][0],
            LIDAR_ROTATION[0][1],
            LIDAR_ROTATION[0][2],
            LIDAR_OFFSET[0],
        ],
        [
            LIDAR_ROTATION[1][0],
            LIDAR_ROTATION[1][1],
            LIDAR_ROTATION[1][2],
            LIDAR_OFFSET[1],
        ],
        [
            LIDAR_ROTATION[2][0],
            LIDAR_ROTATION[2][1],
            LIDAR_ROTATION[2][2],
            LIDAR_OFFSET[2],
        ],
    ]);
    let noise_seed = seed ^ variant.wrapping_mul(0x2545f4914f6cdd1d);
    let row_lo = band_start_row(height, variant);
    let boxes = obstacles(width, focal, variant);

    let mut rgb = vec![0u8; width * height * 3];
    let mut gt = vec![GT_UNREACHABLE; width * height];
    for v in 0..height {
        for u in 0..width {
            let dir = [(u as f64 - cx) / focal, (v as f64 - cy) / focal, 1.0];
            // Box hit (front face) if any.
            let mut box_depth: Option<f64> = None;
            for b in &boxes {
                let t = b.z_front / dir[2];
                let (x, y) = (dir[0] * t, dir[1] * t);
                if (x - b.x_center).abs() <= b.half_width
                    && y <= CAM_HEIGHT
                    && y >= CAM_HEIGHT - b.height
                {
                    box_depth = Some(match box_depth {
                        Some(d) => d.min(b.z_front),
                        None => b.z_front,
                    });
                }
            }
            // Ground hit.
            let ground_depth = if dir[1] > 1e-9 {
                let t = CAM_HEIGHT / dir[1];
                (t <= MAX_RANGE).then_some(t)
            } else {
                None
            };

            let idx = v * width + u;
            let (label, base) = match (box_depth, ground_depth) {
                (Some(bz), Some(gz)) if bz <= gz => (GT_NON_TRAVERSABLE, [128, 128, 135]),
                (Some(_), None) => (GT_NON_TRAVERSABLE, [128, 128, 135]),
                (_, Some(_)) => {
                    if v >= row_lo {
                        (GT_TRAVERSABLE, [62, 138, 52])
                    } else {
                        (GT_NON_TRAVERSABLE, [122, 88, 54])
                    }
                }
                (None, None) => (GT_UNREACHABLE, [150, 185, 235]),
            };
            gt[idx] = label;
            let color = shade(base, noise_seed, u, v);
            rgb[idx * 3..idx * 3 + 3].copy_from_slice(&color);
        }
    }

    let cloud = simulate_lidar(&boxes, noise_seed);
    SyntheticFrame {
        width,
        height,
        rgb,
        gt_levels: gt,
        cloud,
        calib,
    }
}

fn simulate_lidar(boxes: &[BoxObstacle], seed: u64) -> PointCloud {
    let mut rng = SplitMix64::new(seed ^ 0x11dab);
    let mut points = Vec::new();
    let beams = 40;
    let azimuths = 120;
    for b in 0..beams {
        let elevation = -30.0f64.to_radians() + b as f64 * 27.0f64.to_radians() / beams as f64;
        for a in 0..azimuths {
            let azimuth = -40.0f64.to_radians() + a as f64 * 80.0f64.to_radians() / azimuths as f64;
            // LiDAR frame: x forward, y left, z up.
            let dl = [
                elevation.cos() * azimuth.cos(),
                elevation.cos() * azimuth.sin(),
                elevation.sin(),
            ];
            // Camera frame via the fixed rotation.
            let dc = [-dl[1], -dl[2], dl[0]];
            let o = LIDAR_OFFSET;

            let mut hit: Option<(f64, [f64; 3])> = None;
            if dc[1] > 1e-9 {
                let t = (CAM_HEIGHT - o[1]) / dc[1];
                let p = [o[0] + t * dc[0], CAM_HEIGHT, o[2] + t * dc[2]];
                if p[2] > 0.5 && p[2] <= MAX_RANGE {
                    hit = Some((t, p));
                }
            }
            for bx in boxes {
                if dc[2] <= 1e-9 {
                    continue;
                }
                let t = (bx.z_front - o[2]) / dc[2];
                if t <= 0.5 {
                    continue;
                }
                let p = [o[0] + t * dc[0], o[1] + t * dc[1], bx.z_front];
                if (p[0] - bx.x_center).abs() <= bx.half_width
                    && p[1] <= CAM_HEIGHT
                    && p[1] >= CAM_HEIGHT - bx.height
                    && hit.map_or(true, |(tg, _)| t < tg)
                {
                    hit = Some((t, p));
                }
            }
            if let Some((_, p_cam)) = hit {
                // Back to the LiDAR frame: p_l = R^T (p_cam - t_vec).
                let d = [p_cam[0] - o[0], p_cam[1] - o[1], p_cam[2] - o[2]];
                let p_l = [d[2], -d[0], -d[1]];
                points.push(LidarPoint {
                    x: p_l[0] as f32,
                    y: p_l[1] as f32,
                    z: p_l[2] as f32,
                    intensity: 0.3 + 0.4 * rng.next_f64() as f32,
                });
            }
        }
    }
    PointCloud { points }
}

/// Write a complete miniature dataset: `counts` frames for the training,
/// validation, and testing subtrees respectively.
pub fn write_dataset(
    root: &Path,
    width: usize,
    height: usize,
    counts: [usize; 3],
    seed: u64,
) -> Result<()> {
    for (split_idx, (split_dir, n)) in ["training", "validation", "testing"]
        .iter()
        .zip(counts)
        .enumerate()
    {
        if n == 0 {
            continue;
        }
        let seq_dir = root.join(split_dir).join(format!("seq-{split_dir}"));
        for sub in ["image_data", "lidar_data", "calib", "gt_image"] {
            std::fs::create_dir_all(seq_dir.join(sub)).map_err(|source| DatasetError::Io {
                path: seq_dir.join(sub).display().to_string(),
                source,
            })?;
        }
        for i in 0..n {
            let variant = (split_idx as u64) * 17 + i as u64;
            let frame = render_frame(width, height, seed, variant);
            let stem = format!("{i:06}");
            raster::save_rgb8(
                &seq_dir.join("image_data").join(format!("{stem}.png")),
                width,
                height,
                &frame.rgb,
            )?;
            raster::save_gray8(
                &seq_dir.join("gt_image").join(format!("{stem}.png")),
                width,
                height,
                &frame.gt_levels,
            )?;
            frame
                .cloud
                .write_bin(&seq_dir.join("lidar_data").join(format!("{stem}.bin")))?;
            let calib_path = seq_dir.join("calib").join(format!("{stem}.txt"));
            std::fs::write(&calib_path, frame.calib.to_text()).map_err(|source| {
                DatasetError::Io {
                    path: calib_path.display().to_string(),
                    source,
                }
            })?;
        }
    }
    Ok(())
}

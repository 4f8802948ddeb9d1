//! PNG raster formats shared across the pipeline.
//!
//! - Depth maps: 16-bit single-channel PNG, value = round(depth_m * 256),
//!   0 marks an invalid pixel (KITTI depth-completion convention).
//! - Normal maps: 8-bit 3-channel PNG, channel = round((n + 1) / 2 * 255);
//!   the all-zero triple marks an invalid pixel (no unit normal maps to it).
//! - Ground truth and predictions: 8-bit single-channel PNG.

use std::path::Path;

use image::{DynamicImage, GrayImage, ImageBuffer, ImageFormat, Luma, Rgb, RgbImage};
use thiserror::Error;

use crate::geometry::{DepthMap, NormalMap};

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("image error on {path}: {source}")]
    Image {
        path: String,
        #[source]
        source: image::ImageError,
    },
    #[error("format error on {path}: {msg}")]
    Format { path: String, msg: String },
}

pub type Result<T> = std::result::Result<T, RasterError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RasterError + '_ {
    move |source| RasterError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn image_err(path: &Path) -> impl FnOnce(image::ImageError) -> RasterError + '_ {
    move |source| RasterError::Image {
        path: path.display().to_string(),
        source,
    }
}

fn open(path: &Path) -> Result<DynamicImage> {
    let reader = image::ImageReader::open(path).map_err(io_err(path))?;
    reader.decode().map_err(image_err(path))
}

pub const DEPTH_SCALE: f32 = 256.0;

pub fn save_depth_png16(path: &Path, map: &DepthMap) -> Result<()> {
    let mut buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::new(map.width as u32, map.height as u32);
    for y in 0..map.height {
        for x in 0..map.width {
            let value = match map.get(x, y) {
                Some(d) => ((d * DEPTH_SCALE).round() as u32).clamp(1, u16::MAX as u32) as u16,
                None => 0,
            };
            buf.put_pixel(x as u32, y as u32, Luma([value]));
        }
    }
    buf.save_with_format(path, ImageFormat::Png)
        .map_err(image_err(path))
}

pub fn load_depth_png16(path: &Path) -> Result<DepthMap> {
    let img = open(path)?;
    let buf = match img {
        DynamicImage::ImageLuma16(buf) => buf,
        other => {
            return Err(RasterError::Format {
                path: path.display().to_string(),
                msg: format!(
                    "expected 16-bit grayscale depth PNG, got {:?}",
                    other.color()
                ),
            })
        }
    };
    let (w, h) = (buf.width() as usize, buf.height() as usize);
    let mut map = DepthMap::new_invalid(w, h);
    for y in 0..h {
        for x in 0..w {
            let v = buf.get_pixel(x as u32, y as u32).0[0];
            if v > 0 {
                map.set(x, y, v as f32 / DEPTH_SCALE);
            }
        }
    }
    Ok(map)
}

pub fn save_normal_png8(path: &Path, map: &NormalMap) -> Result<()> {
    let mut buf = RgbImage::new(map.width as u32, map.height as u32);
    for y in 0..map.height {
        for x in 0..map.width {
            let px = match map.get(x, y) {
                Some(n) => {
                    let enc =
                        |c: f32| (((c + 1.0) / 2.0 * 255.0).round() as i32).clamp(0, 255) as u8;
                    Rgb([enc(n[0]), enc(n[1]), enc(n[2])])
                }
                None => Rgb([0, 0, 0]),
            };
            buf.put_pixel(x as u32, y as u32, px);
        }
    }
    buf.save_with_format(path, ImageFormat::Png)
        .map_err(image_err(path))
}

pub fn load_normal_png8(path: &Path) -> Result<NormalMap> {
    let img = open(path)?;
    let buf = img.into_rgb8();
    let (w, h) = (buf.width() as usize, buf.height() as usize);
    let mut map = NormalMap::new_invalid(w, h);
    for y in 0..h {
        for x in 0..w {
            let p = buf.get_pixel(x as u32, y as u32).0;
            if p == [0, 0, 0] {
                continue;
            }
            // Decoded as stored, unit only up to 8-bit quantization; callers
            // needing strict units renormalize. Keeping the lattice value
            // makes save -> load -> save the identity at the byte level.
            let dec = |c: u8| c as f32 / 255.0 * 2.0 - 1.0;
            map.set(x, y, [dec(p[0]), dec(p[1]), dec(p[2])]);
        }
    }
    Ok(map)
}

pub fn save_gray8(path: &Path, width: usize, height: usize, data: &[u8]) -> Result<()> {
    let buf = GrayImage::from_raw(width as u32, height as u32, data.to_vec()).ok_or_else(|| {
        RasterError::Format {
            path: path.display().to_string(),
            msg: "buffer does not match extents".into(),
        }
    })?;
    buf.save_with_format(path, ImageFormat::Png)
        .map_err(image_err(path))
}

/// Load an 8-bit single-channel PNG; errors out on multi-channel input.
pub fn load_gray8_strict(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let img = open(path)?;
    match img {
        DynamicImage::ImageLuma8(buf) => {
            Ok((buf.width() as usize, buf.height() as usize, buf.into_raw()))
        }
        other => Err(RasterError::Format {
            path: path.display().to_string(),
            msg: format!("expected 8-bit grayscale PNG, got {:?}", other.color()),
        }),
    }
}

pub fn save_rgb8(path: &Path, width: usize, height: usize, data: &[u8]) -> Result<()> {
    let buf = RgbImage::from_raw(width as u32, height as u32, data.to_vec()).ok_or_else(|| {
        RasterError::Format {
            path: path.display().to_string(),
            msg: "buffer does not match extents".into(),
        }
    })?;
    buf.save_with_format(path, ImageFormat::Png)
        .map_err(image_err(path))
}

pub fn load_rgb8(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let img = open(path)?;
    let buf = img.into_rgb8();
    Ok((buf.width() as usize, buf.height() as usize, buf.into_raw()))
}

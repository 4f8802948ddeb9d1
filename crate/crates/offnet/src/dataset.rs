//! Sequence scanning, ground-truth decoding, and frame loading.
//!
//! Expected directory layout, one subtree per split:
//!
//! ```text
//! <root>/<split>/<sequence>/image_data/<frame>.png
//!                           lidar_data/<frame>.bin
//!                           calib/<frame>.txt
//!                           gt_image/<frame>.png
//! ```
//!
//! with `<split>` one of `training`, `validation`, `testing`. Alternatively a
//! split file ("`<split> <sequence_id>`" per line) assigns sequences that live
//! directly under the root.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::geometry::{self, Calibration, GeometryError, PointCloud};
use crate::raster::{self, RasterError};
use crate::tensor::{ops, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("dataset error: {0}")]
    Invalid(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, DatasetError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn dir_name(self) -> &'static str {
        match self {
            Split::Train => "training",
            Split::Val => "validation",
            Split::Test => "testing",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" | "training" => Some(Split::Train),
            "val" | "validation" => Some(Split::Val),
            "test" | "testing" => Some(Split::Test),
            _ => None,
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// One frame's four modal files.
#[derive(Debug, Clone)]
pub struct FrameRecord {
    pub sequence_id: String,
    pub frame_id: String,
    pub image_path: PathBuf,
    pub cloud_path: PathBuf,
    pub calib_path: PathBuf,
    pub gt_path: PathBuf,
}

#[derive(Debug, Clone, Default)]
pub struct SplitManifest {
    pub train: Vec<FrameRecord>,
    pub val: Vec<FrameRecord>,
    pub test: Vec<FrameRecord>,
}

impl SplitManifest {
    pub fn split(&self, split: Split) -> &[FrameRecord] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn total(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }
}

/// Frames dropped during a scan, with the first missing modality.
#[derive(Debug, Clone, Default)]
pub struct ScanReport {
    pub skipped: Vec<(String, String, String)>,
}

fn list_dirs(path: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    let entries = std::fs::read_dir(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    for entry in entries {
        let entry = entry.map_err(|source| DatasetError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if entry.path().is_dir() {
            out.push((
                entry.file_name().to_string_lossy().into_owned(),
                entry.path(),
            ));
        }
    }
    out.sort();
    Ok(out)
}

fn scan_sequence(
    split: Split,
    sequence_id: &str,
    seq_dir: &Path,
    manifest: &mut SplitManifest,
    report: &mut ScanReport,
) -> Result<()> {
    let image_dir = seq_dir.join("image_data");
    if !image_dir.is_dir() {
        return Ok(());
    }
    let mut stems: Vec<String> = Vec::new();
    let entries = std::fs::read_dir(&image_dir).map_err(|source| DatasetError::Io {
        path: image_dir.display().to_string(),
        source,
    })?;
    for entry in entries.flatten() {
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) == Some("png") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                stems.push(stem.to_string());
            }
        }
    }
    stems.sort();

    for stem in stems {
        let record = FrameRecord {
            sequence_id: sequence_id.to_string(),
            frame_id: stem.clone(),
            image_path: image_dir.join(format!("{stem}.png")),
            cloud_path: seq_dir.join("lidar_data").join(format!("{stem}.bin")),
            calib_path: seq_dir.join("calib").join(format!("{stem}.txt")),
            gt_path: seq_dir.join("gt_image").join(format!("{stem}.png")),
        };
        let missing = [
            (&record.cloud_path, "lidar_data"),
            (&record.calib_path, "calib"),
            (&record.gt_path, "gt_image"),
        ]
        .iter()
        .find(|(p, _)| !p.is_file())
        .map(|(_, kind)| kind.to_string());
        match missing {
            Some(kind) => report.skipped.push((sequence_id.to_string(), stem, kind)),
            None => match split {
                Split::Train => manifest.train.push(record),
                Split::Val => manifest.val.push(record),
                Split::Test => manifest.test.push(record),
            },
        }
    }
    Ok(())
}

/// Enumerate every complete frame under the root. Incomplete frames are
/// skipped and reported. Two scans of the same tree yield identical,
/// sorted manifests.
pub fn scan_dataset(root: &Path, split_file: Option<&Path>) -> Result<(SplitManifest, ScanReport)> {
    let mut manifest = SplitManifest::default();
    let mut report = ScanReport::default();

    if let Some(split_file) = split_file {
        let text = std::fs::read_to_string(split_file).map_err(|source| DatasetError::Io {
            path: split_file.display().to_string(),
            source,
        })?;
        let mut assignment: BTreeMap<String, Split> = BTreeMap::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let (Some(split_name), Some(seq)) = (parts.next(), parts.next()) else {
                return Err(DatasetError::Invalid(format!(
                    "split file line {}: expected '<split> <sequence_id>', got {line:?}",
                    idx + 1
                )));
            };
            let split = Split::parse(split_name).ok_or_else(|| {
                DatasetError::Invalid(format!(
                    "split file line {}: unknown split {split_name:?}",
                    idx + 1
                ))
            })?;
            assignment.insert(seq.to_string(), split);
        }
        for (seq, split) in &assignment {
            let seq_dir = root.join(seq);
            if !seq_dir.is_dir() {
                return Err(DatasetError::Invalid(format!(
                    "sequence {seq} from the split file not found under {}",
                    root.display()
                )));
            }
            scan_sequence(*split, seq, &seq_dir, &mut manifest, &mut report)?;
        }
    } else {
        for split in Split::ALL {
            let split_dir = root.join(split.dir_name());
            if !split_dir.is_dir() {
                continue;
            }
            for (seq, seq_dir) in list_dirs(&split_dir)? {
                scan_sequence(split, &seq, &seq_dir, &mut manifest, &mut report)?;
            }
        }
    }

    if manifest.total() == 0 {
        return Err(DatasetError::Invalid(format!(
            "no complete frames found under {}",
            root.display()
        )));
    }
    let mut seen = std::collections::HashSet::new();
    for split in Split::ALL {
        for r in manifest.split(split) {
            if !seen.insert((r.sequence_id.clone(), r.frame_id.clone())) {
                return Err(DatasetError::Invalid(format!(
                    "frame {}/{} appears in more than one split",
                    r.sequence_id, r.frame_id
                )));
            }
        }
    }
    Ok((manifest, report))
}

// ---------------------------------------------------------------------------
// Ground truth
// ---------------------------------------------------------------------------

pub const GT_TRAVERSABLE: u8 = 255;
pub const GT_NON_TRAVERSABLE: u8 = 0;
pub const GT_UNREACHABLE: u8 = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TriClass {
    Traversable,
    NonTraversable,
    Unreachable,
}

/// Three-class annotation plus its binary collapse (unreachable counts as
/// not traversable).
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub width: usize,
    pub height: usize,
    tri: Vec<TriClass>,
    binary: Vec<bool>,
}

impl GroundTruth {
    pub fn from_tri(width: usize, height: usize, tri: Vec<TriClass>) -> Result<Self> {
        if tri.len() != width * height {
            return Err(DatasetError::Invalid(format!(
                "{} labels cannot fill {width}x{height}",
                tri.len()
            )));
        }
        let binary = tri.iter().map(|&c| c == TriClass::Traversable).collect();
        Ok(GroundTruth {
            width,
            height,
            tri,
            binary,
        })
    }

    pub fn tri(&self) -> &[TriClass] {
        &self.tri
    }

    /// Per-pixel traversability (the positive class).
    pub fn binary(&self) -> &[bool] {
        &self.binary
    }

    pub fn resized_nearest(&self, out_w: usize, out_h: usize) -> Result<GroundTruth> {
        let mut tri = Vec::with_capacity(out_w * out_h);
        for y in 0..out_h {
            let sy = (y * self.height / out_h).min(self.height - 1);
            for x in 0..out_w {
                let sx = (x * self.width / out_w).min(self.width - 1);
                tri.push(self.tri[sy * self.width + sx]);
            }
        }
        GroundTruth::from_tri(out_w, out_h, tri)
    }
}

/// Decode an 8-bit grayscale annotation. 255 is traversable, 0 is
/// non-traversable, 128 is unreachable; any other value snaps to the nearest
/// of the three levels and bumps the returned warning counter.
pub fn decode_ground_truth(
    width: usize,
    height: usize,
    pixels: &[u8],
) -> Result<(GroundTruth, usize)> {
    if pixels.len() != width * height {
        return Err(DatasetError::Invalid(format!(
            "{} pixels cannot fill {width}x{height}",
            pixels.len()
        )));
    }
    let levels = [
        (GT_TRAVERSABLE, TriClass::Traversable),
        (GT_NON_TRAVERSABLE, TriClass::NonTraversable),
        (GT_UNREACHABLE, TriClass::Unreachable),
    ];
    let mut warnings = 0usize;
    let tri = pixels
        .iter()
        .map(|&p| {
            if let Some(&(_, class)) = levels.iter().find(|(v, _)| *v == p) {
                class
            } else {
                warnings += 1;
                levels
                    .iter()
                    .min_by_key(|(v, _)| (p as i32 - *v as i32).abs())
                    .unwrap()
                    .1
            }
        })
        .collect();
    Ok((GroundTruth::from_tri(width, height, tri)?, warnings))
}

pub fn load_ground_truth(path: &Path) -> Result<(GroundTruth, usize)> {
    let (w, h, pixels) = raster::load_gray8_strict(path)?;
    decode_ground_truth(w, h, &pixels)
}

/// Threshold a traversable-probability mask into the 8-bit annotation
/// encoding (255 where probability >= threshold, else 0). Decoding the
/// result reproduces the thresholded mask exactly.
pub fn encode_prediction(probs: &[f32], threshold: f32) -> Vec<u8> {
    probs
        .iter()
        .map(|&p| {
            if p >= threshold {
                GT_TRAVERSABLE
            } else {
                GT_NON_TRAVERSABLE
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Frame loading
// ---------------------------------------------------------------------------

/// Stage-4 of the encoder divides the input by 32, so target extents must be
/// multiples of 32.
pub const EXTENT_MULTIPLE: usize = 32;

#[derive(Debug)]
pub struct LoadedFrame {
    pub image: Tensor,
    pub cloud: PointCloud,
    pub calib: Calibration,
    pub gt: GroundTruth,
    pub gt_warnings: usize,
}

/// Load one frame, resizing the image bilinearly to the target extents (and
/// the ground truth by nearest neighbor), rescaling the intrinsics by the
/// same factors, and scaling pixel values to [0, 1].
pub fn load_frame(record: &FrameRecord, target_w: usize, target_h: usize) -> Result<LoadedFrame> {
    if target_w == 0
        || target_h == 0
        || target_w % EXTENT_MULTIPLE != 0
        || target_h % EXTENT_MULTIPLE != 0
    {
        return Err(DatasetError::Invalid(format!(
            "target extents {target_w}x{target_h} must be positive multiples of {EXTENT_MULTIPLE}"
        )));
    }
    let (src_w, src_h, rgb) = raster::load_rgb8(&record.image_path)?;
    let plane = src_w * src_h;
    let mut data = vec![0.0f32; 3 * plane];
    for i in 0..plane {
        for c in 0..3 {
            data[c * plane + i] = rgb[i * 3 + c] as f32 / 255.0;
        }
    }
    let image = Tensor::from_vec(data, &[3, src_h, src_w])?;
    let image = if (src_w, src_h) == (target_w, target_h) {
        image
    } else {
        ops::resize_bilinear(&image, target_h, target_w)?
    };

    let calib_text =
        std::fs::read_to_string(&record.calib_path).map_err(|source| DatasetError::Io {
            path: record.calib_path.display().to_string(),
            source,
        })?;
    let calib = Calibration::parse(&calib_text)?.scaled(
        target_w as f64 / src_w as f64,
        target_h as f64 / src_h as f64,
    );

    let cloud = PointCloud::read_bin(&record.cloud_path)?;

    let (gt_full, gt_warnings) = load_ground_truth(&record.gt_path)?;
    let gt = if (gt_full.width, gt_full.height) == (target_w, target_h) {
        gt_full
    } else {
        gt_full.resized_nearest(target_w, target_h)?
    };

    Ok(LoadedFrame {
        image,
        cloud,
        calib,
        gt,
        gt_warnings,
    })
}

/// A frame prepared as model input: RGB tensor, surface-normal tensor, and
/// the binary target. The normal stream is computed from the point cloud by
/// projection, densification, and windowed plane fitting.
#[derive(Debug)]
pub struct Sample {
    pub sequence_id: String,
    pub frame_id: String,
    pub image: Tensor,
    pub normals: Tensor,
    pub gt: GroundTruth,
}

pub fn prepare_sample(record: &FrameRecord, target_w: usize, target_h: usize) -> Result<Sample> {
    let frame = load_frame(record, target_w, target_h)?;
    let sparse = geometry::project_points(&frame.cloud, &frame.calib, target_w, target_h);
    let dense = geometry::densify_depth(&sparse)?;
    let normals = geometry::estimate_normals(&dense, &frame.calib, geometry::NORMAL_WINDOW)?;
    Ok(Sample {
        sequence_id: record.sequence_id.clone(),
        frame_id: record.frame_id.clone(),
        image: frame.image,
        normals: normals.to_tensor(),
        gt: frame.gt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decode_pure_levels() {
        let (gt, warnings) = decode_ground_truth(2, 2, &[255, 0, 128, 255]).unwrap();
        assert_eq!(warnings, 0);
        assert_eq!(gt.tri()[0], TriClass::Traversable);
        assert_eq!(gt.tri()[1], TriClass::NonTraversable);
        assert_eq!(gt.tri()[2], TriClass::Unreachable);
        assert_eq!(gt.binary(), &[true, false, false, true]);
    }

    #[test]
    fn decode_unreachable_collapses_to_not_traversable() {
        let (gt, _) = decode_ground_truth(1, 1, &[128]).unwrap();
        assert_eq!(gt.tri()[0], TriClass::Unreachable);
        assert!(!gt.binary()[0]);
    }

    #[test]
    fn decode_snaps_off_levels_with_warning() {
        let (gt, warnings) = decode_ground_truth(1, 3, &[130, 250, 4]).unwrap();
        assert_eq!(warnings, 3);
        assert_eq!(gt.tri()[0], TriClass::Unreachable);
        assert_eq!(gt.tri()[1], TriClass::Traversable);
        assert_eq!(gt.tri()[2], TriClass::NonTraversable);
    }

    #[test]
    fn encode_then_decode_is_lossless() {
        let probs = [1.0f32, 0.6, 0.4, 0.5, 0.0];
        let encoded = encode_prediction(&probs, 0.5);
        assert_eq!(encoded, vec![255, 255, 0, 255, 0]);
        let (gt, warnings) = decode_ground_truth(5, 1, &encoded).unwrap();
        assert_eq!(warnings, 0);
        let expect: Vec<bool> = probs.iter().map(|&p| p >= 0.5).collect();
        assert_eq!(gt.binary(), expect.as_slice());
    }

    #[test]
    fn all_high_probabilities_encode_white() {
        assert!(encode_prediction(&[1.0; 6], 0.5).iter().all(|&v| v == 255));
    }

    #[test]
    fn checkerboard_encodes_checkerboard() {
        let probs = [0.6f32, 0.4, 0.6, 0.4];
        assert_eq!(encode_prediction(&probs, 0.5), vec![255, 0, 255, 0]);
    }

    #[test]
    fn nearest_resize_never_interpolates_labels() {
        let (gt, _) = decode_ground_truth(4, 2, &[255, 255, 0, 0, 128, 128, 255, 255]).unwrap();
        let small = gt.resized_nearest(2, 1).unwrap();
        for &c in small.tri() {
            assert!(matches!(
                c,
                TriClass::Traversable | TriClass::NonTraversable | TriClass::Unreachable
            ));
        }
        assert_eq!(small.width, 2);
        assert_eq!(small.height, 1);
    }
}

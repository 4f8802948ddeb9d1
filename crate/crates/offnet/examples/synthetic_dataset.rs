//! Generate a complete miniature dataset (training/validation/testing
//! subtrees with images, point clouds, calibration, and ground truth) and
//! scan it back.
//!
//! ```text
//! cargo run --release --example synthetic_dataset [root_dir]
//! ```

use std::path::PathBuf;

use offnet::dataset::scan_dataset;
use offnet::synthetic::write_dataset;

fn main() {
    let root: PathBuf = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("examples-out/synthetic_dataset"));
    write_dataset(&root, 64, 64, [4, 1, 2], 0).unwrap();
    let (manifest, report) = scan_dataset(&root, None).unwrap();
    println!(
        "wrote and scanned {}: {} train / {} val / {} test frames ({} skipped)",
        root.display(),
        manifest.train.len(),
        manifest.val.len(),
        manifest.test.len(),
        report.skipped.len()
    );
    for r in &manifest.train {
        println!("train {}/{}", r.sequence_id, r.frame_id);
    }
}

//! LiDAR-to-image geometry end to end: render a synthetic scene, project the
//! cloud to sparse depth, complete it, estimate surface normals, and write
//! all three rasters.
//!
//! ```text
//! cargo run --release --example geometry_pipeline [out_dir]
//! ```

use std::path::PathBuf;

use offnet::geometry::{densify_depth, estimate_normals, project_points, NORMAL_WINDOW};
use offnet::raster;
use offnet::synthetic::render_frame;

fn main() {
    let out: PathBuf = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("examples-out/geometry_pipeline"));
    std::fs::create_dir_all(&out).unwrap();

    let frame = render_frame(128, 128, 0, 0);
    println!("rendered scene with {} LiDAR returns", frame.cloud.len());

    let sparse = project_points(&frame.cloud, &frame.calib, frame.width, frame.height);
    println!(
        "sparse depth: {} of {} pixels hit",
        sparse.valid_count(),
        frame.width * frame.height
    );

    let dense = densify_depth(&sparse).unwrap();
    assert!(dense.is_fully_valid());
    let normals = estimate_normals(&dense, &frame.calib, NORMAL_WINDOW).unwrap();

    // Ground pixels should point straight up (camera-frame (0,-1,0)).
    let mid = normals.get(64, 100).unwrap();
    println!(
        "normal at a ground pixel: ({:+.3}, {:+.3}, {:+.3})",
        mid[0], mid[1], mid[2]
    );

    raster::save_rgb8(
        &out.join("image.png"),
        frame.width,
        frame.height,
        &frame.rgb,
    )
    .unwrap();
    raster::save_depth_png16(&out.join("sparse_depth.png"), &sparse).unwrap();
    raster::save_depth_png16(&out.join("dense_depth.png"), &dense).unwrap();
    raster::save_normal_png8(&out.join("surface_normal.png"), &normals).unwrap();
    println!(
        "wrote image, sparse/dense depth, and normal map under {}",
        out.display()
    );
}

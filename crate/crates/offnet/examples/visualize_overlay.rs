//! Prediction overlay: render a scene, use its ground truth as a stand-in
//! prediction, and emit the green-blend visualization through the CLI.
//!
//! ```text
//! cargo run --release --example visualize_overlay
//! ```

use offnet::raster;
use offnet::synthetic::render_frame;

fn main() {
    let out = std::path::PathBuf::from("examples-out/visualize_overlay");
    std::fs::create_dir_all(&out).unwrap();

    let frame = render_frame(128, 128, 5, 1);
    let image_path = out.join("image.png");
    raster::save_rgb8(&image_path, frame.width, frame.height, &frame.rgb).unwrap();

    // Binary prediction PNG from the annotation's traversable level.
    let prediction: Vec<u8> = frame
        .gt_levels
        .iter()
        .map(|&v| if v == 255 { 255 } else { 0 })
        .collect();
    let pred_path = out.join("prediction.png");
    raster::save_gray8(&pred_path, frame.width, frame.height, &prediction).unwrap();

    let overlay_path = out.join("overlay.png");
    let args: Vec<String> = [
        "visualize",
        image_path.to_str().unwrap(),
        pred_path.to_str().unwrap(),
        "--out",
        overlay_path.to_str().unwrap(),
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    std::process::exit(offnet::cli::run(&args));
}

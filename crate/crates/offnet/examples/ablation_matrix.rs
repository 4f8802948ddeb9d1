//! The encoder-depth x fusion on/off ablation harness, driven through the
//! command-line front end on a generated fixture.
//!
//! ```text
//! cargo run --release --example ablation_matrix [epochs]
//! ```
//!
//! The full 200-epoch matrix takes a couple of minutes; pass a smaller epoch
//! count for a faster (less converged) table.

use offnet::synthetic::write_dataset;

fn main() {
    let epochs: usize = std::env::args()
        .nth(1)
        .map(|s| s.parse().expect("epochs must be an integer"))
        .unwrap_or(200);
    let root = std::path::PathBuf::from("examples-out/ablation_matrix");
    let _ = std::fs::remove_dir_all(&root);
    write_dataset(&root.join("data"), 64, 64, [4, 1, 2], 0).unwrap();

    let train_cfg = root.join("train.cfg");
    std::fs::write(
        &train_cfg,
        format!(
            "learning_rate = 0.001\nmomentum = 0.9\nbatch_size = 2\nepochs = {epochs}\nseed = 0\ncheckpoint_dir = {}\n",
            root.join("ckpt").display()
        ),
    )
    .unwrap();

    let args: Vec<String> = [
        "ablate",
        "--root",
        root.join("data").to_str().unwrap(),
        "--out",
        root.join("out").to_str().unwrap(),
        "--train-config",
        train_cfg.to_str().unwrap(),
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let code = offnet::cli::run(&args);
    std::process::exit(code);
}

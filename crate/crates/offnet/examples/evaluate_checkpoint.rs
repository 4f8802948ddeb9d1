//! Micro-averaged evaluation of a trained checkpoint on the test split, with
//! the per-frame table and CSV the pipeline emits.
//!
//! ```text
//! cargo run --release --example evaluate_checkpoint [checkpoint]
//! ```
//!
//! Without an argument this trains a quick model first, so the example is
//! self-contained.

use std::path::PathBuf;

use offnet::dataset::scan_dataset;
use offnet::eval::{evaluate_samples, format_report, to_csv};
use offnet::model::{ModelConfig, OffNet};
use offnet::synthetic::write_dataset;
use offnet::train::{prepare_samples, train_epoch, TrainConfig};

fn main() {
    let root = PathBuf::from("examples-out/evaluate_checkpoint");
    let _ = std::fs::remove_dir_all(&root);
    write_dataset(&root.join("data"), 64, 64, [4, 1, 2], 0).unwrap();
    let (manifest, _) = scan_dataset(&root.join("data"), None).unwrap();
    let cfg = ModelConfig::toy(64, 64);
    let model = OffNet::new(cfg, 0).unwrap();

    match std::env::args().nth(1) {
        Some(ckpt) => {
            model.load(std::path::Path::new(&ckpt)).unwrap();
            println!("loaded {ckpt}");
        }
        None => {
            let train = prepare_samples(&manifest.train, 64, 64).unwrap();
            let mut tc = TrainConfig::new(150, root.join("ckpt"));
            tc.batch_size = 2;
            println!("no checkpoint given; training {} epochs first", tc.epochs);
            for epoch in 1..=tc.epochs {
                train_epoch(&model, &train, &tc, epoch).unwrap();
            }
        }
    }

    let test = prepare_samples(&manifest.test, 64, 64).unwrap();
    let evaluation = evaluate_samples(&model, &test, 0.5).unwrap();
    print!("{}", format_report(&evaluation));

    let csv_path = root.join("frames_test.csv");
    std::fs::write(&csv_path, to_csv(&evaluation)).unwrap();
    println!("per-frame csv: {}", csv_path.display());
}

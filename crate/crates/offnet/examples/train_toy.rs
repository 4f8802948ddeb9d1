//! Overfit the toy network on a generated 4-frame fixture: the full training
//! loop with deterministic seeding, validation selection, and checkpoints.
//!
//! ```text
//! cargo run --release --example train_toy [epochs]
//! ```

use offnet::dataset::scan_dataset;
use offnet::eval::evaluate_samples;
use offnet::model::{ModelConfig, OffNet};
use offnet::synthetic::write_dataset;
use offnet::train::{fit, prepare_samples, TrainConfig};

fn main() {
    let epochs: usize = std::env::args()
        .nth(1)
        .map(|s| s.parse().expect("epochs must be an integer"))
        .unwrap_or(120);
    let root = std::path::PathBuf::from("examples-out/train_toy");
    let _ = std::fs::remove_dir_all(&root);
    write_dataset(&root.join("data"), 64, 64, [4, 1, 2], 0).unwrap();

    let (manifest, _) = scan_dataset(&root.join("data"), None).unwrap();
    let cfg = ModelConfig::toy(64, 64);
    let train = prepare_samples(&manifest.train, 64, 64).unwrap();
    let val = prepare_samples(&manifest.val, 64, 64).unwrap();

    let mut train_cfg = TrainConfig::new(epochs, root.join("checkpoints"));
    train_cfg.batch_size = 2;
    let model = OffNet::new(cfg, train_cfg.seed).unwrap();
    println!(
        "toy model: {} parameters, {} epochs, lr {}, momentum {}, batch {}",
        model.count_parameters(),
        train_cfg.epochs,
        train_cfg.learning_rate,
        train_cfg.momentum,
        train_cfg.batch_size
    );

    let started = std::time::Instant::now();
    let outcome = fit(&model, &train, &val, &train_cfg).unwrap();
    for record in outcome.history.iter().step_by(10.max(epochs / 12)) {
        println!(
            "epoch {:>3}  train_loss {:.5}  val_fscore {:.5}",
            record.epoch, record.train_loss, record.val_fscore
        );
    }
    let train_f = evaluate_samples(&model, &train, 0.5)
        .unwrap()
        .pooled
        .f_score;
    println!(
        "done in {:?}: best epoch {} (val F {:.5}), final train F {:.5}",
        started.elapsed(),
        outcome.best_epoch,
        outcome.best_val_fscore,
        train_f
    );
    println!(
        "checkpoints: {} and {}",
        outcome.best_path.display(),
        outcome.last_path.display()
    );
}

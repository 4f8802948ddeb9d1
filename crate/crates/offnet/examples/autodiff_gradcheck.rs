//! Reverse-mode differentiation in action: build a small graph, run
//! backward, and verify the gradients of each primitive against central
//! differences.
//!
//! ```text
//! cargo run --release --example autodiff_gradcheck
//! ```

use offnet::rng::SplitMix64;
use offnet::tensor::{grad_check, ops, Tensor};

fn random_variable(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = SplitMix64::new(seed);
    let count: usize = shape.iter().product();
    Tensor::variable(
        (0..count).map(|_| rng.uniform(-1.0, 1.0) as f32).collect(),
        shape,
    )
    .unwrap()
}

fn main() {
    // A scalar loss through a few layers of primitives.
    let x = random_variable(&[4, 3], 1);
    let w = random_variable(&[3, 5], 2);
    let y = ops::gelu(&ops::matmul(&x, &w).unwrap());
    let p = ops::softmax(&y, 1).unwrap();
    let loss = ops::mean_all(&ops::mul(&p, &p).unwrap()).unwrap();
    loss.backward().unwrap();
    println!("loss = {:.6}", loss.item().unwrap());
    println!(
        "d(loss)/dx first row: {:?}",
        &x.grad().unwrap()[..3]
            .iter()
            .map(|g| format!("{g:+.5}"))
            .collect::<Vec<_>>()
    );

    // Finite-difference oracle over the same composite.
    let report = grad_check(
        || {
            let y = ops::gelu(&ops::matmul(&x, &w)?);
            let p = ops::softmax(&y, 1)?;
            ops::mean_all(&ops::mul(&p, &p)?)
        },
        &x,
        1e-3,
        1e-3,
    )
    .unwrap();
    println!(
        "composite check: {} coords, max rel error {:.3e} -> {}",
        report.checked_coords,
        report.max_rel_error,
        if report.passed() { "pass" } else { "FAIL" }
    );

    // Per-primitive sweep.
    let checks: Vec<(
        &str,
        Box<dyn Fn() -> offnet::tensor::Result<Tensor>>,
        Tensor,
    )> = {
        let a = random_variable(&[3, 4], 3);
        let b = random_variable(&[4, 2], 4);
        let s = random_variable(&[2, 6], 5);
        let img = random_variable(&[2, 6, 6], 6);
        let k = random_variable(&[3, 2, 3, 3], 7);
        vec![
            (
                "matmul",
                Box::new({
                    let (a, b) = (a.clone(), b.clone());
                    move || ops::sum_all(&ops::matmul(&a, &b)?)
                }),
                a.clone(),
            ),
            (
                "softmax",
                Box::new({
                    let s = s.clone();
                    move || {
                        let y = ops::softmax(&s, 1)?;
                        ops::sum_all(&ops::mul(&y, &y)?)
                    }
                }),
                s.clone(),
            ),
            (
                "conv2d",
                Box::new({
                    let (img, k) = (img.clone(), k.clone());
                    move || {
                        let y = ops::conv2d(&img, &k, None, 1, 1, 1)?;
                        ops::sum_all(&ops::mul(&y, &y)?)
                    }
                }),
                img.clone(),
            ),
            (
                "resize_bilinear",
                Box::new({
                    let img = img.clone();
                    move || {
                        let y = ops::resize_bilinear(&img, 9, 5)?;
                        ops::sum_all(&ops::mul(&y, &y)?)
                    }
                }),
                img.clone(),
            ),
        ]
    };
    for (name, f, target) in checks {
        let report = grad_check(f, &target, 1e-3, 1e-3).unwrap();
        println!(
            "{name:<16} max rel error {:.3e} -> {}",
            report.max_rel_error,
            if report.passed() { "pass" } else { "FAIL" }
        );
    }
}

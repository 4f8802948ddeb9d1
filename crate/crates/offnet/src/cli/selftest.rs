//! Built-in oracle suite behind `offnet selftest`: finite-difference checks
//! for every differentiable primitive, the closed-form attention and fusion
//! identities, metric fixtures, and geometry round trips. Prints one line
//! per check; any failure exits with the internal-invariant code.

use super::{CliError, Result};
use crate::dataset::{GroundTruth, TriClass};
use crate::eval::{confusion_counts, metrics, ConfusionCounts};
use crate::geometry::{back_project, densify_depth, estimate_normals, Calibration, DepthMap};
use crate::model::bce_loss;
use crate::rng::SplitMix64;
use crate::tensor::{grad_check, ops, Tensor};

type Check = std::result::Result<(), String>;

fn random_variable(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor {
    let mut rng = SplitMix64::new(seed);
    let count: usize = shape.iter().product();
    Tensor::variable(
        (0..count).map(|_| rng.uniform(lo, hi) as f32).collect(),
        shape,
    )
    .unwrap()
}

fn expect(cond: bool, msg: &str) -> Check {
    if cond {
        Ok(())
    } else {
        Err(msg.to_string())
    }
}

fn check_grad<F>(f: F, x: &Tensor, what: &str) -> Check
where
    F: FnMut() -> crate::tensor::Result<Tensor>,
{
    let report = grad_check(f, x, 1e-3, 1e-3).map_err(|e| format!("{what}: {e}"))?;
    expect(
        report.passed(),
        &format!("{what}: max rel error {:.3e}", report.max_rel_error),
    )
}

fn primitive_gradients() -> Check {
    let x = random_variable(&[3, 4], 1, -1.0, 1.0);
    let w = random_variable(&[4, 2], 2, -1.0, 1.0);
    check_grad(
        || ops::sum_all(&ops::matmul(&x, &w)?),
        &x,
        "matmul left argument",
    )?;
    check_grad(
        || ops::sum_all(&ops::matmul(&x, &w)?),
        &w,
        "matmul right argument",
    )?;

    let s = random_variable(&[2, 5], 3, -2.0, 2.0);
    check_grad(
        || {
            let sm = ops::softmax(&s, 1)?;
            ops::sum_all(&ops::mul(&sm, &sm)?)
        },
        &s,
        "softmax",
    )?;

    let g = random_variable(&[6], 4, -2.0, 2.0);
    check_grad(|| ops::sum_all(&ops::gelu(&g)), &g, "gelu")?;
    check_grad(|| ops::sum_all(&ops::sigmoid(&g)), &g, "sigmoid")?;

    let ln_x = random_variable(&[3, 4], 5, -1.0, 1.0);
    let gamma = random_variable(&[4], 6, 0.5, 1.5);
    let beta = random_variable(&[4], 7, -0.5, 0.5);
    for (t, what) in [
        (&ln_x, "layer_norm input"),
        (&gamma, "layer_norm gamma"),
        (&beta, "layer_norm beta"),
    ] {
        check_grad(
            || {
                let y = ops::layer_norm(&ln_x, &gamma, &beta, 1e-5)?;
                ops::sum_all(&ops::mul(&y, &y)?)
            },
            t,
            what,
        )?;
    }

    let img = random_variable(&[2, 5, 5], 8, -1.0, 1.0);
    let kernel = random_variable(&[3, 2, 3, 3], 9, -0.5, 0.5);
    let bias = random_variable(&[3], 10, -0.5, 0.5);
    for (t, what) in [
        (&img, "conv2d input"),
        (&kernel, "conv2d weight"),
        (&bias, "conv2d bias"),
    ] {
        check_grad(
            || {
                let y = ops::conv2d(&img, &kernel, Some(&bias), 2, 1, 1)?;
                ops::sum_all(&ops::mul(&y, &y)?)
            },
            t,
            what,
        )?;
    }

    let small = random_variable(&[2, 3, 4], 11, -1.0, 1.0);
    check_grad(
        || {
            let y = ops::resize_bilinear(&small, 5, 7)?;
            ops::sum_all(&ops::mul(&y, &y)?)
        },
        &small,
        "resize_bilinear",
    )?;

    let probs_src = random_variable(&[2, 6], 12, 0.2, 0.8);
    check_grad(
        || {
            let p = ops::softmax(&probs_src, 0)?;
            ops::nll_mean(&p, &[0, 1, 1, 0, 1, 0], 1e-7)
        },
        &probs_src,
        "softmax + nll",
    )?;
    Ok(())
}

fn attention_oracle() -> Check {
    // softmax(Q K^T / sqrt(d)) V with identity projections on two
    // orthonormal tokens, against direct evaluation.
    let x = Tensor::from_vec(vec![1.0, 0.0, 0.0, 1.0], &[2, 2]).unwrap();
    let scale = 1.0 / 2.0f32.sqrt();
    let scores = ops::mul_scalar(
        &ops::matmul(&x, &ops::permute(&x, &[1, 0]).unwrap()).unwrap(),
        scale,
    );
    let attn = ops::softmax(&scores, 1).unwrap();
    let out = ops::matmul(&attn, &x).unwrap().to_vec();

    let e = (1.0f64 / 2.0f64.sqrt()).exp();
    let z = e + 1.0;
    let expect_rows = [[e / z, 1.0 / z], [1.0 / z, e / z]];
    for i in 0..2 {
        for c in 0..2 {
            let diff = (out[i * 2 + c] as f64 - expect_rows[i][c]).abs();
            if diff > 1e-6 {
                return Err(format!("attention row {i} channel {c} off by {diff:.3e}"));
            }
        }
    }
    // Sensitivity: the wrong 1/d scale must move the output by more than the
    // tolerance, otherwise the oracle cannot catch that bug.
    let e_wrong = 0.5f64.exp();
    let z_wrong = e_wrong + 1.0;
    expect(
        (e_wrong / z_wrong - expect_rows[0][0]).abs() > 1e-3,
        "oracle cannot separate 1/d from 1/sqrt(d)",
    )
}

fn fusion_identities() -> Check {
    let mut rng = SplitMix64::new(77);
    for _ in 0..50 {
        let s = rng.uniform(-4.0, 4.0);
        let a = 1.0 / (1.0 + (-s).exp());
        let complement = 1.0 - a;
        expect(
            (a + complement - 1.0).abs() < 1e-15,
            "gate complementarity violated",
        )?;
    }
    // sigma(2) case.
    let a = 1.0 / (1.0 + (-2.0f64).exp());
    expect((a - 0.880_797).abs() < 1e-6, "sigma(2) mismatch")?;
    let x_img_out = a * 2.0 + 2.0;
    expect(
        (x_img_out - 3.761_594).abs() < 1e-6,
        "refined image feature mismatch",
    )?;
    // A swapped gate (a applied to the normal stream) breaks the identity.
    let swapped_sum = a + a;
    expect(
        (swapped_sum - 1.0).abs() > 1e-3,
        "oracle cannot detect a swapped gate",
    )
}

fn loss_values() -> Check {
    let gt = GroundTruth::from_tri(2, 2, vec![TriClass::Traversable; 4]).unwrap();
    let uniform = Tensor::full(&[2, 2, 2], 0.5);
    let loss = bce_loss(&uniform, &gt).map_err(|e| e.to_string())?;
    expect(
        (loss.item().unwrap() as f64 - std::f64::consts::LN_2).abs() < 1e-6,
        "uniform loss is not ln 2",
    )?;
    let worst = Tensor::zeros(&[2, 2, 2]);
    let loss = bce_loss(&worst, &gt).map_err(|e| e.to_string())?;
    expect(
        loss.item().unwrap().is_finite(),
        "clamped worst-case loss is not finite",
    )
}

fn metric_fixture() -> Check {
    let pred = [
        true, true, true, true, false, false, false, false, false, false,
    ];
    let gt = [
        true, true, true, false, true, false, false, false, false, false,
    ];
    let c = confusion_counts(&pred, &gt).map_err(|e| e.to_string())?;
    let m = metrics(&c).map_err(|e| e.to_string())?;
    expect(
        m.accuracy == 0.8
            && m.precision == 0.75
            && m.recall == 0.75
            && m.f_score == 0.75
            && m.iou == 0.6,
        &format!("fixture metrics off: {m:?}"),
    )?;
    // F1-Jaccard identity over random count tuples.
    let mut rng = SplitMix64::new(123);
    for _ in 0..1000 {
        let c = ConfusionCounts {
            true_pos: rng.next_below(1000),
            false_pos: rng.next_below(1000),
            false_neg: rng.next_below(1000),
            true_neg: rng.next_below(1000) + 1,
        };
        let m = metrics(&c).map_err(|e| e.to_string())?;
        let j = m.f_score / (2.0 - m.f_score);
        expect(
            (m.iou - j).abs() < 1e-9,
            &format!("F1-Jaccard identity violated: iou {} vs {}", m.iou, j),
        )?;
    }
    Ok(())
}

fn geometry_round_trip() -> Check {
    let calib = Calibration::pinhole(721.5377, 609.5593, 172.854);
    let mut rng = SplitMix64::new(5);
    for _ in 0..1000 {
        let p = [
            rng.uniform(-20.0, 20.0),
            rng.uniform(-5.0, 5.0),
            rng.uniform(0.5, 80.0),
        ];
        let Some((u, v)) = calib.project_camera_point(p) else {
            return Err("projection unexpectedly failed".into());
        };
        let q = back_project(u, v, p[2], &calib).map_err(|e| e.to_string())?;
        let (u2, v2) = calib
            .project_camera_point(q)
            .ok_or("re-projection failed")?;
        if (u - u2).abs() > 1e-4 || (v - v2).abs() > 1e-4 {
            return Err(format!(
                "round trip error {:.3e}",
                (u - u2).abs().max((v - v2).abs())
            ));
        }
    }
    Ok(())
}

fn densify_oracle() -> Check {
    let mut map = DepthMap::new_invalid(9, 1);
    map.set(0, 0, 2.0);
    map.set(8, 0, 8.0);
    let out = densify_depth(&map).map_err(|e| e.to_string())?;
    let expect_row = [2.0, 2.0, 2.0, 2.0, 2.0, 8.0, 8.0, 8.0, 8.0];
    for (x, e) in expect_row.iter().enumerate() {
        if out.get(x, 0) != Some(*e) {
            return Err(format!("1x9 dilation schedule broke at pixel {x}"));
        }
    }
    expect(
        out.get(0, 0).unwrap().to_bits() == 2.0f32.to_bits(),
        "measured pixel altered",
    )
}

fn normals_plane_recovery() -> Check {
    let calib = Calibration::pinhole(64.0, 16.0, 16.0);
    let mut map = DepthMap::new_invalid(32, 32);
    for y in 0..32 {
        for x in 0..32 {
            let ratio = (x as f64 - 16.0) / 64.0;
            map.set(x, y, (10.0 / (1.0 - 0.5 * ratio)) as f32);
        }
    }
    let normals = estimate_normals(&map, &calib, 7).map_err(|e| e.to_string())?;
    let expect_n = {
        let len = (0.25f64 + 1.0).sqrt();
        [0.5 / len, 0.0, -1.0 / len]
    };
    for y in 8..24 {
        for x in 8..24 {
            let n = normals.get(x, y).ok_or("interior pixel invalid")?;
            let cos =
                n[0] as f64 * expect_n[0] + n[1] as f64 * expect_n[1] + n[2] as f64 * expect_n[2];
            if 1.0 - cos > 1e-2 {
                return Err(format!(
                    "plane normal off at {x},{y}: cosine distance {}",
                    1.0 - cos
                ));
            }
        }
    }
    Ok(())
}

fn softmax_normalization() -> Check {
    let mut rng = SplitMix64::new(9);
    for trial in 0..10 {
        let x = Tensor::from_vec(
            (0..24).map(|_| rng.uniform(-50.0, 50.0) as f32).collect(),
            &[4, 6],
        )
        .unwrap();
        let y = ops::softmax(&x, 1).map_err(|e| e.to_string())?;
        let v = y.to_vec();
        for row in 0..4 {
            let sum: f32 = v[row * 6..(row + 1) * 6].iter().sum();
            if (sum - 1.0).abs() > 1e-5 {
                return Err(format!("trial {trial} row {row} sums to {sum}"));
            }
        }
    }
    Ok(())
}

pub fn cmd_selftest() -> Result<()> {
    let checks: Vec<(&str, fn() -> Check)> = vec![
        (
            "gradients of differentiable primitives",
            primitive_gradients,
        ),
        ("attention 2x2 closed form", attention_oracle),
        ("fusion gate identities", fusion_identities),
        ("loss reference values", loss_values),
        ("metric fixture and F1-Jaccard identity", metric_fixture),
        ("projection round trip", geometry_round_trip),
        ("depth completion schedule", densify_oracle),
        ("plane normal recovery", normals_plane_recovery),
        ("softmax normalization", softmax_normalization),
    ];
    let mut failed = 0usize;
    for (name, check) in checks {
        match check() {
            Ok(()) => println!("ok   {name}"),
            Err(msg) => {
                failed += 1;
                println!("FAIL {name}: {msg}");
            }
        }
    }
    if failed == 0 {
        println!("selftest passed");
        Ok(())
    } else {
        Err(CliError::Internal(format!(
            "{failed} selftest check(s) failed"
        )))
    }
}

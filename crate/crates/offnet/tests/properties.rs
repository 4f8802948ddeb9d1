//! Property tests for the numeric invariants.

use offnet::dataset::{decode_ground_truth, encode_prediction};
use offnet::tensor::{ops, Tensor};
use proptest::prelude::*;

fn finite_f32(lo: f32, hi: f32) -> impl Strategy<Value = f32> {
    (lo..hi).prop_map(|v| v)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matmul_is_associative_on_4x4(
        a in proptest::collection::vec(finite_f32(-2.0, 2.0), 16),
        b in proptest::collection::vec(finite_f32(-2.0, 2.0), 16),
        c in proptest::collection::vec(finite_f32(-2.0, 2.0), 16),
    ) {
        let ta = Tensor::from_vec(a, &[4, 4]).unwrap();
        let tb = Tensor::from_vec(b, &[4, 4]).unwrap();
        let tc = Tensor::from_vec(c, &[4, 4]).unwrap();
        let left = ops::matmul(&ops::matmul(&ta, &tb).unwrap(), &tc).unwrap();
        let right = ops::matmul(&ta, &ops::matmul(&tb, &tc).unwrap()).unwrap();
        for (l, r) in left.to_vec().iter().zip(right.to_vec()) {
            prop_assert!((l - r).abs() < 1e-4, "{l} vs {r}");
        }
    }

    #[test]
    fn softmax_rows_sum_to_one(
        values in proptest::collection::vec(finite_f32(-50.0, 50.0), 24),
    ) {
        let x = Tensor::from_vec(values, &[4, 6]).unwrap();
        let y = ops::softmax(&x, 1).unwrap();
        let v = y.to_vec();
        for row in 0..4 {
            let sum: f32 = v[row * 6..(row + 1) * 6].iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-5);
            prop_assert!(v[row * 6..(row + 1) * 6].iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn resize_preserves_constant_images_exactly(
        value in finite_f32(-100.0, 100.0),
        out_h in 1usize..12,
        out_w in 1usize..12,
    ) {
        let x = Tensor::full(&[2, 5, 7], value);
        let y = ops::resize_bilinear(&x, out_h, out_w).unwrap();
        prop_assert!(y.to_vec().iter().all(|&v| v == value));
    }

    #[test]
    fn prediction_encoding_round_trips(
        probs in proptest::collection::vec(finite_f32(0.0, 1.0), 30),
        threshold in finite_f32(0.05, 0.95),
    ) {
        let encoded = encode_prediction(&probs, threshold);
        let (gt, warnings) = decode_ground_truth(30, 1, &encoded).unwrap();
        prop_assert_eq!(warnings, 0);
        let expect: Vec<bool> = probs.iter().map(|&p| p >= threshold).collect();
        prop_assert_eq!(gt.binary(), expect.as_slice());
    }

    #[test]
    fn backward_of_random_chains_accumulates_linearly(
        values in proptest::collection::vec(finite_f32(-2.0, 2.0), 6),
        scale in finite_f32(-3.0, 3.0),
    ) {
        // d/dx of sum(scale * x) is scale everywhere, twice that after two
        // backward passes through rebuilt graphs.
        let x = Tensor::variable(values, &[6]).unwrap();
        for _ in 0..2 {
            let loss = ops::sum_all(&ops::mul_scalar(&x, scale)).unwrap();
            loss.backward().unwrap();
        }
        for g in x.grad().unwrap() {
            prop_assert!((g - 2.0 * scale).abs() <= 2.0 * scale.abs() * 1e-6 + 1e-6);
        }
    }
}

//! Brute-force reference implementations of every tensor kernel, checked
//! against the production kernels on randomized instances. The references
//! use explicit padded nested vectors and naive loops on purpose: they share
//! no indexing code with the library.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tsviz_core::tensor::{self, Padding, Tensor};

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
    Tensor::from_vec(shape.to_vec(), data).unwrap()
}

/// Zero-pads into a (h+2ph) x (w+2pw) x c nested structure and convolves with
/// four explicit loops per output element.
fn conv_oracle(
    input: &Tensor,
    kernels: &Tensor,
    bias: &Tensor,
    padding: Padding,
) -> Vec<Vec<Vec<f64>>> {
    let (h, w, c) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (kh, kw, f) = (kernels.shape()[0], kernels.shape()[1], kernels.shape()[3]);
    let (ph, pw) = match padding {
        Padding::Same => (kh / 2, kw / 2),
        Padding::Valid => (0, 0),
    };
    let mut padded = vec![vec![vec![0.0; c]; w + 2 * pw]; h + 2 * ph];
    for i in 0..h {
        for j in 0..w {
            for ch in 0..c {
                padded[i + ph][j + pw][ch] = input.at3(i, j, ch);
            }
        }
    }
    let (oh, ow) = match padding {
        Padding::Same => (h, w),
        Padding::Valid => (h - kh + 1, w - kw + 1),
    };
    let mut out = vec![vec![vec![0.0; f]; ow]; oh];
    for oi in 0..oh {
        for oj in 0..ow {
            for fi in 0..f {
                let mut acc = bias.data()[fi];
                for di in 0..kh {
                    for dj in 0..kw {
                        for ch in 0..c {
                            let kv = kernels.data()[((di * kw + dj) * c + ch) * f + fi];
                            acc += padded[oi + di][oj + dj][ch] * kv;
                        }
                    }
                }
                out[oi][oj][fi] = acc;
            }
        }
    }
    out
}

#[test]
fn conv_same_matches_quadruple_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let (h, w) = (rng.gen_range(1..=9), rng.gen_range(1..=9));
        let c = rng.gen_range(1..=4);
        let f = rng.gen_range(1..=5);
        let k = *[1usize, 3, 5].get(rng.gen_range(0..3)).unwrap();
        let input = random_tensor(&mut rng, &[h, w, c]);
        let kernels = random_tensor(&mut rng, &[k, k, c, f]);
        let bias = random_tensor(&mut rng, &[f]);
        let got = tensor::conv2d(&input, &kernels, &bias, Padding::Same).unwrap();
        let want = conv_oracle(&input, &kernels, &bias, Padding::Same);
        assert_eq!(got.shape(), &[h, w, f]);
        for i in 0..h {
            for j in 0..w {
                for fi in 0..f {
                    assert!(
                        (got.at3(i, j, fi) - want[i][j][fi]).abs() <= 1e-12,
                        "same conv mismatch at ({i},{j},{fi})"
                    );
                }
            }
        }
    }
}

#[test]
fn conv_valid_matches_quadruple_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..100 {
        let k = *[1usize, 3, 5].get(rng.gen_range(0..3)).unwrap();
        let (h, w) = (rng.gen_range(k..=k + 6), rng.gen_range(k..=k + 6));
        let c = rng.gen_range(1..=4);
        let f = rng.gen_range(1..=5);
        let input = random_tensor(&mut rng, &[h, w, c]);
        let kernels = random_tensor(&mut rng, &[k, k, c, f]);
        let bias = random_tensor(&mut rng, &[f]);
        let got = tensor::conv2d(&input, &kernels, &bias, Padding::Valid).unwrap();
        let want = conv_oracle(&input, &kernels, &bias, Padding::Valid);
        assert_eq!(got.shape(), &[h - k + 1, w - k + 1, f]);
        for i in 0..h - k + 1 {
            for j in 0..w - k + 1 {
                for fi in 0..f {
                    assert!(
                        (got.at3(i, j, fi) - want[i][j][fi]).abs() <= 1e-12,
                        "valid conv mismatch at ({i},{j},{fi})"
                    );
                }
            }
        }
    }
}

#[test]
fn maxpool_matches_windowed_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..100 {
        let (h, w) = (2 * rng.gen_range(1..=5), 2 * rng.gen_range(1..=5));
        let c = rng.gen_range(1..=4);
        let input = random_tensor(&mut rng, &[h, w, c]);
        let (got, argmax) = tensor::maxpool2x2(&input).unwrap();
        for i in 0..h / 2 {
            for j in 0..w / 2 {
                for ch in 0..c {
                    // First maximum in row-major window order wins.
                    let window = [
                        (2 * i, 2 * j),
                        (2 * i, 2 * j + 1),
                        (2 * i + 1, 2 * j),
                        (2 * i + 1, 2 * j + 1),
                    ];
                    let mut best = f64::NEG_INFINITY;
                    let mut best_flat = 0;
                    for (y, x) in window {
                        let v = input.at3(y, x, ch);
                        if v > best {
                            best = v;
                            best_flat = (y * w + x) * c + ch;
                        }
                    }
                    assert_eq!(got.at3(i, j, ch), best);
                    assert_eq!(argmax[(i * (w / 2) + j) * c + ch], best_flat);
                }
            }
        }
    }
}

#[test]
fn dense_matches_matrix_vector_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..100 {
        let n = rng.gen_range(1..=40);
        let m = rng.gen_range(1..=20);
        let x = random_tensor(&mut rng, &[n]);
        let w = random_tensor(&mut rng, &[n, m]);
        let b = random_tensor(&mut rng, &[m]);
        let got = tensor::dense(&x, &w, &b).unwrap();
        for out in 0..m {
            let mut acc = b.data()[out];
            for i in 0..n {
                acc += x.data()[i] * w.data()[i * m + out];
            }
            assert!((got.data()[out] - acc).abs() <= 1e-12);
        }
    }
}

#[test]
fn upsample_matches_block_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for _ in 0..100 {
        let (h, w) = (rng.gen_range(1..=6), rng.gen_range(1..=6));
        let c = rng.gen_range(1..=4);
        let input = random_tensor(&mut rng, &[h, w, c]);
        let got = tensor::upsample2x(&input).unwrap();
        assert_eq!(got.shape(), &[2 * h, 2 * w, c]);
        for i in 0..2 * h {
            for j in 0..2 * w {
                for ch in 0..c {
                    assert_eq!(got.at3(i, j, ch), input.at3(i / 2, j / 2, ch));
                }
            }
        }
    }
}

#[test]
fn concat_matches_copy_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for _ in 0..100 {
        let (h, w) = (rng.gen_range(1..=6), rng.gen_range(1..=6));
        let (ca, cb) = (rng.gen_range(1..=5), rng.gen_range(1..=5));
        let a = random_tensor(&mut rng, &[h, w, ca]);
        let b = random_tensor(&mut rng, &[h, w, cb]);
        let got = tensor::concat_channels(&a, &b).unwrap();
        assert_eq!(got.shape(), &[h, w, ca + cb]);
        for i in 0..h {
            for j in 0..w {
                for ch in 0..ca + cb {
                    let want = if ch < ca {
                        a.at3(i, j, ch)
                    } else {
                        b.at3(i, j, ch - ca)
                    };
                    assert_eq!(got.at3(i, j, ch), want);
                }
            }
        }
    }
}

mod invariants {
    use super::*;
    use proptest::prelude::*;

    fn small_volume() -> impl Strategy<Value = (usize, usize, usize, Vec<f64>)> {
        (1usize..=6, 1usize..=6, 1usize..=4).prop_flat_map(|(h, w, c)| {
            let n = h * w * c;
            (
                Just(h),
                Just(w),
                Just(c),
                prop::collection::vec(-10.0..10.0f64, n),
            )
        })
    }

    proptest! {
        #[test]
        fn conv_same_preserves_spatial_extent((h, w, c, data) in small_volume(), f in 1usize..=4) {
            let input = Tensor::from_vec(vec![h, w, c], data).unwrap();
            let kernels = Tensor::filled(&[3, 3, c, f], 0.1);
            let bias = Tensor::zeros(&[f]);
            let out = tensor::conv2d(&input, &kernels, &bias, Padding::Same).unwrap();
            prop_assert_eq!(out.shape(), &[h, w, f]);
        }

        #[test]
        fn softmax_is_a_distribution(data in prop::collection::vec(-30.0..30.0f64, 1..10)) {
            let z = Tensor::from_vec(vec![data.len()], data).unwrap();
            let p = tensor::softmax(&z).unwrap();
            let sum: f64 = p.data().iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            prop_assert!(p.data().iter().all(|&v| v > 0.0 && v <= 1.0));
        }

        #[test]
        fn softmax_is_shift_invariant(data in prop::collection::vec(-5.0..5.0f64, 2..8), shift in -20.0..20.0f64) {
            let z = Tensor::from_vec(vec![data.len()], data.clone()).unwrap();
            let zs = Tensor::from_vec(
                vec![data.len()],
                data.iter().map(|v| v + shift).collect(),
            ).unwrap();
            let p = tensor::softmax(&z).unwrap();
            let ps = tensor::softmax(&zs).unwrap();
            for (a, b) in p.data().iter().zip(ps.data().iter()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn relu_is_nonnegative_and_idempotent((h, w, c, data) in small_volume()) {
            let x = Tensor::from_vec(vec![h, w, c], data).unwrap();
            let y = tensor::relu(&x);
            prop_assert!(y.data().iter().all(|&v| v >= 0.0));
            let twice = tensor::relu(&y);
            prop_assert_eq!(twice.data(), y.data());
        }

        #[test]
        fn sigmoid_is_bounded_and_monotone(a in -40.0..40.0f64, b in -40.0..40.0f64) {
            // Saturates to exactly 1.0 past ~36.7 in f64, so bounds are closed.
            let sa = tensor::sigmoid_scalar(a);
            let sb = tensor::sigmoid_scalar(b);
            prop_assert!((0.0..=1.0).contains(&sa));
            if a < b {
                prop_assert!(sa <= sb);
            }
        }

        #[test]
        fn flatten_preserves_row_major_order((h, w, c, data) in small_volume()) {
            let x = Tensor::from_vec(vec![h, w, c], data.clone()).unwrap();
            let flat = tensor::flatten(&x);
            prop_assert_eq!(flat.shape(), &[h * w * c]);
            prop_assert_eq!(flat.data(), &data[..]);
        }

        #[test]
        fn concat_then_slice_recovers_both_halves((h, w, ca, da) in small_volume(), cb in 1usize..=4) {
            let a = Tensor::from_vec(vec![h, w, ca], da).unwrap();
            let b = Tensor::filled(&[h, w, cb], 0.5);
            let joined = tensor::concat_channels(&a, &b).unwrap();
            let first = tensor::slice_channels(&joined, 0, ca).unwrap();
            let second = tensor::slice_channels(&joined, ca, ca + cb).unwrap();
            prop_assert_eq!(first.data(), a.data());
            prop_assert_eq!(second.data(), b.data());
        }

        #[test]
        fn maxpool_dominates_every_window_element((h2, w2, c, _unused) in small_volume()) {
            let (h, w) = (2 * h2, 2 * w2);
            let data: Vec<f64> = (0..h * w * c).map(|i| ((i * 37) % 101) as f64 - 50.0).collect();
            let x = Tensor::from_vec(vec![h, w, c], data).unwrap();
            let (out, _) = tensor::maxpool2x2(&x).unwrap();
            for i in 0..h {
                for j in 0..w {
                    for ch in 0..c {
                        prop_assert!(out.at3(i / 2, j / 2, ch) >= x.at3(i, j, ch));
                    }
                }
            }
        }
    }
}

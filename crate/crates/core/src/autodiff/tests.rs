use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let len = shape.iter().product();
    let data = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn t64(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

/// Six nested loops, zero padding, stride 1.
fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>) -> Vec<f64> {
    let (n, c1, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (c2, k) = (w.shape()[0], w.shape()[2]);
    let pad = (k / 2) as isize;
    let mut out = vec![0.0; n * c2 * h * wd];
    for s in 0..n {
        for o in 0..c2 {
            for y in 0..h {
                for xx in 0..wd {
                    let mut acc = b.data()[o];
                    for c in 0..c1 {
                        for ky in 0..k {
                            for kx in 0..k {
                                let sy = y as isize + ky as isize - pad;
                                let sx = xx as isize + kx as isize - pad;
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= wd as isize {
                                    continue;
                                }
                                acc += w.data()[((o * c1 + c) * k + ky) * k + kx]
                                    * x.data()[((s * c1 + c) * h + sy as usize) * wd + sx as usize];
                            }
                        }
                    }
                    out[((s * c2 + o) * h + y) * wd + xx] = acc;
                }
            }
        }
    }
    out
}

fn assert_close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        assert!((x - y).abs() <= tol, "entry {i}: {x} vs {y}");
    }
}

#[test]
fn conv_identity_kernel_reproduces_input() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::full(&[1, 1, 3, 3], 1.0f64)).unwrap();
    let mut k = vec![0.0; 9];
    k[4] = 1.0;
    let w = g.constant(t64(&[1, 1, 3, 3], &k)).unwrap();
    let b = g.constant(Tensor::zeros(&[1])).unwrap();
    let y = g.conv2d(x, w, b).unwrap();
    assert_eq!(g.value(y).data(), &[1.0; 9]);
}

#[test]
fn conv_zero_weights_give_bias() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut g = Graph::new();
    let x = g.constant(random_tensor(&mut rng, &[2, 3, 4, 4])).unwrap();
    let w = g.constant(Tensor::zeros(&[2, 3, 3, 3])).unwrap();
    let b = g.constant(t64(&[2], &[0.75, 0.75])).unwrap();
    let y = g.conv2d(x, w, b).unwrap();
    assert!(g.value(y).data().iter().all(|&v| v == 0.75));
    assert_eq!(g.value(y).shape(), &[2, 2, 4, 4]);
}

#[test]
fn conv_ones_kernel_on_2x2_matches_oracle() {
    let x = t64(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
    let w = Tensor::full(&[1, 1, 3, 3], 1.0);
    let b = Tensor::zeros(&[1]);
    let expected = naive_conv(&x, &w, &b);
    // Every output pixel sees the whole 2x2 input.
    assert_eq!(expected, vec![10.0; 4]);
    let mut g = Graph::new();
    let (xv, wv, bv) = (
        g.constant(x).unwrap(),
        g.constant(w).unwrap(),
        g.constant(b).unwrap(),
    );
    let y = g.conv2d(xv, wv, bv).unwrap();
    assert_eq!(g.value(y).data(), expected.as_slice());
}

#[test]
fn conv_random_matches_oracle_for_both_kernel_sizes() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for k in [1usize, 3] {
        let x = random_tensor(&mut rng, &[2, 3, 5, 4]);
        let w = random_tensor(&mut rng, &[4, 3, k, k]);
        let b = random_tensor(&mut rng, &[4]);
        let expected = naive_conv(&x, &w, &b);
        let mut g = Graph::new();
        let (xv, wv, bv) = (
            g.constant(x).unwrap(),
            g.constant(w).unwrap(),
            g.constant(b).unwrap(),
        );
        let y = g.conv2d(xv, wv, bv).unwrap();
        assert_close(g.value(y).data(), &expected, 1e-12);
    }
}

#[test]
fn conv_shape_errors_name_dimensions() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::<f64>::zeros(&[1, 2, 4, 4])).unwrap();
    let w = g.constant(Tensor::zeros(&[3, 5, 3, 3])).unwrap();
    let b = g.constant(Tensor::zeros(&[3])).unwrap();
    let err = g.conv2d(x, w, b).unwrap_err().to_string();
    assert!(err.contains("5 input channels") && err.contains("has 2"), "{err}");
}

#[test]
fn avg_pool_examples() {
    let mut g = Graph::new();
    let c = g.constant(Tensor::full(&[1, 2, 4, 4], 3.5f64)).unwrap();
    let p = g.avg_pool2(c).unwrap();
    assert!(g.value(p).data().iter().all(|&v| v == 3.5));
    let x = g.constant(t64(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0])).unwrap();
    let p = g.avg_pool2(x).unwrap();
    assert_eq!(g.value(p).data(), &[2.5]);
    let odd = g.constant(Tensor::zeros(&[1, 1, 3, 4])).unwrap();
    assert!(g.avg_pool2(odd).is_err());
}

#[test]
fn avg_pool_random_matches_block_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random_tensor(&mut rng, &[1, 1, 4, 4]);
    let mut expected = vec![0.0; 4];
    for by in 0..2 {
        for bx in 0..2 {
            let mut acc = 0.0;
            for dy in 0..2 {
                for dx in 0..2 {
                    acc += x.data()[(2 * by + dy) * 4 + 2 * bx + dx];
                }
            }
            expected[by * 2 + bx] = acc / 4.0;
        }
    }
    let mut g = Graph::new();
    let xv = g.constant(x).unwrap();
    let p = g.avg_pool2(xv).unwrap();
    assert_close(g.value(p).data(), &expected, 1e-15);
}

#[test]
fn upsample_examples() {
    let mut g = Graph::new();
    let x = g.constant(t64(&[1, 1, 1, 1], &[1.0])).unwrap();
    let u = g.upsample_nearest2(x).unwrap();
    assert_eq!(g.value(u).data(), &[1.0; 4]);

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random_tensor(&mut rng, &[1, 1, 3, 3]);
    let xv = g.constant(x.clone()).unwrap();
    let u = g.upsample_nearest2(xv).unwrap();
    let out = g.value(u);
    assert_eq!(out.shape(), &[1, 1, 6, 6]);
    for y in 0..6 {
        for xx in 0..6 {
            assert_eq!(out.data()[y * 6 + xx], x.data()[(y / 2) * 3 + xx / 2]);
        }
    }
}

#[test]
fn activation_examples() {
    let mut g = Graph::new();
    let x = g
        .constant(t64(&[4], &[0.0, -1.0, -50.0, 2.0]))
        .unwrap();
    let e = g.elu(x).unwrap();
    let t = g.tanh(x).unwrap();
    let ev = g.value(e).data();
    assert_eq!(ev[0], 0.0);
    assert!((ev[1] - ((-1.0f64).exp() - 1.0)).abs() < 1e-15);
    assert!((ev[2] + 1.0).abs() < 1e-15);
    assert_eq!(ev[3], 2.0);
    let tv = g.value(t).data();
    assert_eq!(tv[0], 0.0);
    assert!(tv.iter().all(|v| v.abs() <= 1.0));

    let mut g32 = Graph::<f32>::new();
    let x = g32
        .constant(Tensor::new(vec![3], vec![-3.0f32, 0.5, 3.0]).unwrap())
        .unwrap();
    let t = g32.tanh(x).unwrap();
    assert!(g32.value(t).data().iter().all(|v| v.abs() < 1.0));
}

#[test]
fn fully_connected_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut g = Graph::new();
    let x = random_tensor(&mut rng, &[2, 3]);
    let xv = g.constant(x.clone()).unwrap();
    let eye = g
        .constant(t64(&[3, 3], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]))
        .unwrap();
    let zero_b = g.constant(Tensor::zeros(&[3])).unwrap();
    let y = g.fully_connected(xv, eye, zero_b).unwrap();
    assert_eq!(g.value(y).data(), x.data());

    let zero_in = g.constant(Tensor::zeros(&[2, 3])).unwrap();
    let w = random_tensor(&mut rng, &[4, 3]);
    let b = random_tensor(&mut rng, &[4]);
    let wv = g.constant(w.clone()).unwrap();
    let bv = g.constant(b.clone()).unwrap();
    let y = g.fully_connected(zero_in, wv, bv).unwrap();
    assert_eq!(&g.value(y).data()[..4], b.data());
    assert_eq!(&g.value(y).data()[4..], b.data());

    let y = g.fully_connected(xv, wv, bv).unwrap();
    let mut expected = vec![0.0; 8];
    for i in 0..2 {
        for j in 0..4 {
            let mut acc = b.data()[j];
            for k in 0..3 {
                acc += x.data()[i * 3 + k] * w.data()[j * 3 + k];
            }
            expected[i * 4 + j] = acc;
        }
    }
    assert_close(g.value(y).data(), &expected, 1e-14);

    let bad = g.constant(Tensor::zeros(&[2, 5])).unwrap();
    assert!(g.fully_connected(bad, wv, bv).is_err());
}

#[test]
fn l1_mean_examples() {
    let mut g = Graph::new();
    let a = g.constant(t64(&[2], &[1.0, -1.0])).unwrap();
    let b = g.constant(Tensor::zeros(&[2])).unwrap();
    let l = g.l1_mean(a, a).unwrap();
    assert_eq!(g.value(l).item(), 0.0);
    let l = g.l1_mean(a, b).unwrap();
    assert_eq!(g.value(l).item(), 1.0);

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = random_tensor(&mut rng, &[3, 7]);
    let y = random_tensor(&mut rng, &[3, 7]);
    let mut acc = 0.0;
    for i in 0..21 {
        acc += (x.data()[i] - y.data()[i]).abs();
    }
    let (xv, yv) = (g.constant(x).unwrap(), g.constant(y).unwrap());
    let l = g.l1_mean(xv, yv).unwrap();
    assert!((g.value(l).item() - acc / 21.0).abs() < 1e-15);
    let c = g.constant(Tensor::zeros(&[21])).unwrap();
    assert!(g.l1_mean(xv, c).is_err());
}

#[test]
fn l1_subgradient_at_zero_is_zero() {
    let mut g = Graph::new();
    let a = g.leaf(t64(&[3], &[1.0, 2.0, 3.0]), true).unwrap();
    let b = g.constant(t64(&[3], &[1.0, 0.0, 4.0])).unwrap();
    let l = g.l1_mean(a, b).unwrap();
    let grads = g.backward(l).unwrap();
    assert_eq!(grads.get(a).unwrap().data(), &[0.0, 1.0 / 3.0, -1.0 / 3.0]);
}

#[test]
fn backward_of_sum_is_ones_and_unreachable_is_zero() {
    let mut g = Graph::new();
    let x = g.leaf(t64(&[2, 2], &[1.0, 2.0, 3.0, 4.0]), true).unwrap();
    let p = g.leaf(t64(&[1], &[5.0]), true).unwrap();
    let s = g.sum(x).unwrap();
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[1.0; 4]);
    assert!(grads.get(p).is_none());
    assert_eq!(grads.get_or_zeros(&g, p).data(), &[0.0]);
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::<f64>::zeros(&[2]), true).unwrap();
    assert!(g.backward(x).is_err());
}

#[test]
fn backward_visits_each_operation_once() {
    let mut g = Graph::new();
    let x = g.leaf(t64(&[1, 1, 2, 2], &[0.1, -0.2, 0.3, -0.4]), true).unwrap();
    let e = g.elu(x).unwrap();
    let a = g.add(e, x).unwrap();
    let s1 = g.sum(a).unwrap();
    let s2 = g.sum(e).unwrap();
    let tot = g.add(s1, s2).unwrap();
    let grads = g.backward(tot).unwrap();
    // elu, add, sum, sum, add
    assert_eq!(grads.visited(), 5);
}

#[test]
fn non_finite_values_are_rejected() {
    let mut g = Graph::<f64>::new();
    assert!(g.leaf(t64(&[1], &[f64::NAN]), false).is_err());
    let x = g.constant(t64(&[1], &[1e300])).unwrap();
    let err = g.scale(x, 1e300).unwrap_err();
    assert!(err.is_numerical());
}

fn fd_options() -> GradCheckOptions {
    GradCheckOptions::default()
}

#[test]
fn every_operator_matches_finite_differences_over_ten_seeds() {
    type Build = fn(&mut Graph<f64>, &[Var]) -> crate::Result<Var>;
    let cases: Vec<(&str, Vec<Vec<usize>>, Build)> = vec![
        ("conv3", vec![vec![2, 2, 4, 4], vec![3, 2, 3, 3], vec![3], vec![2, 3, 4, 4]], |g, v| {
            let y = g.conv2d(v[0], v[1], v[2])?;
            g.l1_mean(y, v[3])
        }),
        ("conv1", vec![vec![2, 3, 2, 2], vec![2, 3, 1, 1], vec![2], vec![2, 2, 2, 2]], |g, v| {
            let y = g.conv2d(v[0], v[1], v[2])?;
            g.l1_mean(y, v[3])
        }),
        ("pool", vec![vec![1, 2, 4, 4], vec![1, 2, 2, 2]], |g, v| {
            let y = g.avg_pool2(v[0])?;
            g.l1_mean(y, v[1])
        }),
        ("upsample", vec![vec![1, 2, 2, 3], vec![1, 2, 4, 6]], |g, v| {
            let y = g.upsample_nearest2(v[0])?;
            g.l1_mean(y, v[1])
        }),
        ("elu", vec![vec![3, 5], vec![3, 5]], |g, v| {
            let y = g.elu(v[0])?;
            g.l1_mean(y, v[1])
        }),
        ("tanh", vec![vec![3, 5], vec![3, 5]], |g, v| {
            let y = g.tanh(v[0])?;
            g.l1_mean(y, v[1])
        }),
        ("fc", vec![vec![2, 3], vec![4, 3], vec![4], vec![2, 4]], |g, v| {
            let y = g.fully_connected(v[0], v[1], v[2])?;
            g.l1_mean(y, v[3])
        }),
        ("l1", vec![vec![4, 3], vec![4, 3]], |g, v| g.l1_mean(v[0], v[1])),
        ("concat", vec![vec![2, 1, 2, 3], vec![2, 2, 2, 3], vec![2, 3, 2, 3]], |g, v| {
            let y = g.concat_channels(v[0], v[1])?;
            g.l1_mean(y, v[2])
        }),
        ("arith", vec![vec![2, 3], vec![2, 3]], |g, v| {
            let a = g.add(v[0], v[1])?;
            let b = g.sub(a, v[1])?;
            let c = g.scale(b, -2.5)?;
            let r = g.reshape(c, &[6])?;
            let e = g.elu(r)?;
            g.sum(e)
        }),
        (
            "composite",
            vec![vec![2, 2, 4, 4], vec![3, 2, 3, 3], vec![3], vec![5, 12], vec![5], vec![2, 5]],
            |g, v| {
                let c = g.conv2d(v[0], v[1], v[2])?;
                let e = g.elu(c)?;
                let p = g.avg_pool2(e)?;
                let f = g.reshape(p, &[2, 12])?;
                let y = g.fully_connected(f, v[3], v[4])?;
                let t = g.tanh(y)?;
                g.l1_mean(t, v[5])
            },
        ),
    ];
    for (name, shapes, build) in cases {
        let mut worst: f64 = 0.0;
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let inputs: Vec<_> = shapes.iter().map(|s| random_tensor(&mut rng, s)).collect();
            let report = check_gradients(&inputs, fd_options(), build).unwrap();
            worst = worst.max(report.max_rel_error);
        }
        assert!(worst < 1e-4, "{name}: max relative error {worst}");
    }
}

#[test]
fn concat_channels_interleaves_per_sample() {
    let mut g = Graph::<f64>::new();
    let a = g.constant(t64(&[2, 1, 1, 2], &[1.0, 2.0, 3.0, 4.0])).unwrap();
    let b = g.constant(t64(&[2, 1, 1, 2], &[5.0, 6.0, 7.0, 8.0])).unwrap();
    let c = g.concat_channels(a, b).unwrap();
    assert_eq!(g.value(c).shape(), &[2, 2, 1, 2]);
    assert_eq!(g.value(c).data(), &[1.0, 2.0, 5.0, 6.0, 3.0, 4.0, 7.0, 8.0]);
    let odd = g.constant(t64(&[1, 1, 1, 2], &[0.0, 0.0])).unwrap();
    assert!(g.concat_channels(a, odd).is_err());
}

#[test]
fn forward_is_bit_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = random_tensor(&mut rng, &[2, 3, 8, 8]).cast::<f32>();
    let w = random_tensor(&mut rng, &[4, 3, 3, 3]).cast::<f32>();
    let b = random_tensor(&mut rng, &[4]).cast::<f32>();
    let run = || {
        let mut g = Graph::new();
        let (xv, wv, bv) = (
            g.constant(x.clone()).unwrap(),
            g.constant(w.clone()).unwrap(),
            g.constant(b.clone()).unwrap(),
        );
        let c = g.conv2d(xv, wv, bv).unwrap();
        let e = g.elu(c).unwrap();
        g.value(e).clone()
    };
    let (a, b) = (run(), run());
    let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
}

fn reference_adam(grads: &[f64], lr: f64, p0: f64) -> f64 {
    let (b1, b2, eps) = (0.5f64, 0.999f64, 1e-8);
    let (mut m, mut v, mut p) = (0.0, 0.0, p0);
    for (t, &g) in grads.iter().enumerate() {
        let t = (t + 1) as i32;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let mh = m / (1.0 - b1.powi(t));
        let vh = v / (1.0 - b2.powi(t));
        p -= lr * mh / (vh.sqrt() + eps);
    }
    p
}

#[test]
fn adam_zero_gradient_leaves_params() {
    let mut p = t64(&[3], &[1.0, 2.0, 3.0]);
    let mut st = AdamState::new([p.shape()], AdamConfig::default());
    let g = Tensor::zeros(&[3]);
    for _ in 0..5 {
        st.update(&mut [&mut p], &[Some(&g)], &[false], 1e-3).unwrap();
    }
    assert_eq!(p.data(), &[1.0, 2.0, 3.0]);
    assert_eq!(st.step, 5);
}

#[test]
fn adam_first_step_moves_by_learning_rate() {
    for g0 in [0.37, -4.0, 1e-3] {
        let mut p = t64(&[1], &[0.0]);
        let mut st = AdamState::new([p.shape()], AdamConfig::default());
        let lr = 5e-5;
        st.update(&mut [&mut p], &[Some(&t64(&[1], &[g0]))], &[false], lr)
            .unwrap();
        let delta = p.item();
        assert_eq!(delta.signum(), -g0.signum());
        assert!((delta.abs() - lr).abs() < lr * 1e-4, "{delta}");
    }
}

#[test]
fn adam_three_steps_match_reference_loop() {
    let grads = [0.3, -1.2, 0.05];
    let mut p = t64(&[1], &[0.7]);
    let mut st = AdamState::new([p.shape()], AdamConfig::default());
    for &g in &grads {
        st.update(&mut [&mut p], &[Some(&t64(&[1], &[g]))], &[false], 0.01)
            .unwrap();
    }
    assert!((p.item() - reference_adam(&grads, 0.01, 0.7)).abs() < 1e-15);
}

#[test]
fn adam_missing_gradient_errors_unless_frozen() {
    let mut p = t64(&[1], &[0.0]);
    let mut st = AdamState::new([p.shape()], AdamConfig::default());
    assert!(st.update(&mut [&mut p], &[None], &[false], 0.1).is_err());
    assert!(st.update(&mut [&mut p], &[None], &[true], 0.1).is_ok());
}

proptest! {
    #[test]
    fn pool_inverts_upsample_exactly(vals in prop::collection::vec(-1e3f32..1e3, 12)) {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::new(vec![1, 2, 2, 3], vals.clone()).unwrap()).unwrap();
        let u = g.upsample_nearest2(x).unwrap();
        let p = g.avg_pool2(u).unwrap();
        prop_assert_eq!(g.value(p).data(), vals.as_slice());
    }

    #[test]
    fn l1_mean_is_symmetric(a in prop::collection::vec(-10f64..10.0, 8),
                            b in prop::collection::vec(-10f64..10.0, 8)) {
        let mut g = Graph::new();
        let av = g.constant(t64(&[8], &a)).unwrap();
        let bv = g.constant(t64(&[8], &b)).unwrap();
        let ab = g.l1_mean(av, bv).unwrap();
        let ba = g.l1_mean(bv, av).unwrap();
        prop_assert_eq!(g.value(ab).item(), g.value(ba).item());
    }

    #[test]
    fn frozen_parameters_stay_bit_identical(
        init in prop::collection::vec(-1f32..1.0, 4),
        grads in prop::collection::vec(prop::collection::vec(-1f32..1.0, 4), 1..8),
    ) {
        let mut frozen = Tensor::new(vec![4], init.clone()).unwrap();
        let mut live = Tensor::new(vec![4], init.clone()).unwrap();
        let mut st = AdamState::new([frozen.shape(), live.shape()], AdamConfig::default());
        for g in &grads {
            let gt = Tensor::new(vec![4], g.clone()).unwrap();
            st.update(&mut [&mut frozen, &mut live], &[Some(&gt), Some(&gt)], &[true, false], 1e-2)
                .unwrap();
        }
        let bits: Vec<u32> = frozen.data().iter().map(|v| v.to_bits()).collect();
        let orig: Vec<u32> = init.iter().map(|v| v.to_bits()).collect();
        prop_assert_eq!(bits, orig);
    }
}

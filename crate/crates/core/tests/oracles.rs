//! Independent-route checks: the fast convolution against a nested-loop
//! reference over many random shapes, plus property tests of the module
//! invariants.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dehaze_core::conv::{conv2d_forward, ConvLayer};
use dehaze_core::haze::{analytic_dehaze, synthesize_hazy, transmission_from_depth};
use dehaze_core::ssim::{ssim_map, SsimConfig};
use dehaze_core::Tensor;

/// Reference convolution: plain nested loops, strict row-major accumulation.
fn conv2d_reference(input: &Tensor, layer: &ConvLayer) -> Tensor {
    let [n, in_c, h, w] = input.shape();
    let (out_c, k) = (layer.out_channels(), layer.kernel_size());
    let (oh, ow) = layer.out_size(h, w);
    let pad = layer.padding as isize;
    let mut out = Tensor::zeros([n, out_c, oh, ow]);
    for ni in 0..n {
        for oc in 0..out_c {
            for y in 0..oh {
                for x in 0..ow {
                    let mut acc = layer.bias.data()[oc];
                    for ic in 0..in_c {
                        for kh in 0..k {
                            for kw in 0..k {
                                let iy = (y * layer.stride) as isize + kh as isize - pad;
                                let ix = (x * layer.stride) as isize + kw as isize - pad;
                                if iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize {
                                    acc += input.at(ni, ic, iy as usize, ix as usize)
                                        * layer.kernel.at(oc, ic, kh, kw);
                                }
                            }
                        }
                    }
                    out.set(ni, oc, y, x, acc);
                }
            }
        }
    }
    out
}

#[test]
fn conv_matches_reference_on_two_hundred_random_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    const KERNELS: [usize; 6] = [1, 3, 5, 7, 9, 11];
    for case in 0..200 {
        let n = rng.random_range(1..=2);
        let in_c = rng.random_range(1..=4);
        let out_c = rng.random_range(1..=4);
        let k = KERNELS[rng.random_range(0..KERNELS.len())];
        let stride = if rng.random_range(0.0..1.0) < 0.25 { 2 } else { 1 };
        let h = rng.random_range(k.max(2)..k.max(2) + 10);
        let w = rng.random_range(k.max(2)..k.max(2) + 10);
        let mut layer = ConvLayer::new(in_c, out_c, k, stride);
        for v in layer.kernel.data_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        for v in layer.bias.data_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        let data = (0..n * in_c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
        let input = Tensor::from_vec([n, in_c, h, w], data).unwrap();
        let fast = conv2d_forward(&input, &layer).unwrap();
        let slow = conv2d_reference(&input, &layer);
        let diff = fast.max_abs_diff(&slow).unwrap();
        assert!(
            diff < 1e-6,
            "case {case}: n={n} c={in_c}->{out_c} k={k} s={stride} {h}x{w}: diff {diff}"
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Zero padding preserves the spatial size for every odd kernel.
    #[test]
    fn padding_preserves_shape(
        k_idx in 0usize..6,
        h in 11usize..24,
        w in 11usize..24,
        seed in 0u64..1000,
    ) {
        let k = [1usize, 3, 5, 7, 9, 11][k_idx];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layer = ConvLayer::new(2, 3, k, 1);
        for v in layer.kernel.data_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        let data = (0..2 * h * w).map(|_| rng.random_range(0.0..1.0)).collect::<Vec<_>>();
        let input = Tensor::from_vec([1, 2, h, w], data).unwrap();
        let out = conv2d_forward(&input, &layer).unwrap();
        prop_assert_eq!(out.shape(), [1, 3, h, w]);
        prop_assert!(out.all_finite());
    }

    /// Synthesis followed by the analytic inverse recovers the clear image
    /// wherever transmission is above the inversion floor.
    #[test]
    fn haze_round_trip_is_identity(
        seed in 0u64..1000,
        atmos in 0.7f64..1.0,
        beta in 0.6f64..1.6,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let clear_data = (0..3 * 64).map(|_| rng.random_range(0.0..1.0)).collect::<Vec<_>>();
        let clear = Tensor::from_vec([1, 3, 8, 8], clear_data).unwrap();
        let depth_data = (0..64).map(|_| rng.random_range(0.0..1.0)).collect::<Vec<_>>();
        let depth = Tensor::from_vec([1, 1, 8, 8], depth_data).unwrap();
        let t = transmission_from_depth(&depth, beta).unwrap();
        prop_assert!(t.min_value() >= 0.05);
        let hazy = synthesize_hazy(&clear, &t, atmos).unwrap();
        prop_assert!(hazy.min_value() >= 0.0 && hazy.max_value() <= 1.0);
        let recovered = analytic_dehaze(&hazy, &t, atmos).unwrap();
        prop_assert!(recovered.max_abs_diff(&clear).unwrap() < 1e-6);
    }

    /// Transmission decreases with depth and with beta.
    #[test]
    fn transmission_is_monotone(
        d1 in 0.0f64..1.0,
        d2 in 0.0f64..1.0,
        b1 in 0.0f64..2.0,
        b2 in 0.0f64..2.0,
    ) {
        let dlo = d1.min(d2);
        let dhi = d1.max(d2);
        let blo = b1.min(b2);
        let bhi = b1.max(b2);
        let t_of = |d: f64, b: f64| {
            let depth = Tensor::filled([1, 1, 1, 1], d);
            transmission_from_depth(&depth, b).unwrap().data()[0]
        };
        prop_assert!(t_of(dhi, 1.0) <= t_of(dlo, 1.0));
        prop_assert!(t_of(0.5, bhi) <= t_of(0.5, blo));
    }

    /// Per-pixel SSIM is symmetric and bounded; self-similarity is exactly 1.
    #[test]
    fn ssim_symmetry_and_self_similarity(seed in 0u64..500) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = [1usize, 1, 14, 15];
        let a_data = (0..14 * 15).map(|_| rng.random_range(0.0..1.0)).collect::<Vec<_>>();
        let b_data = (0..14 * 15).map(|_| rng.random_range(0.0..1.0)).collect::<Vec<_>>();
        let a = Tensor::from_vec(shape, a_data).unwrap();
        let b = Tensor::from_vec(shape, b_data).unwrap();
        let cfg = SsimConfig::default();
        let ab = ssim_map(&a, &b, &cfg).unwrap();
        let ba = ssim_map(&b, &a, &cfg).unwrap();
        prop_assert!(ab.max_abs_diff(&ba).unwrap() < 1e-9);
        prop_assert!(ab.min_value() >= -1.0 && ab.max_value() <= 1.0);
        let aa = ssim_map(&a, &a, &cfg).unwrap();
        prop_assert!((aa.min_value() - 1.0).abs() < 1e-12);
    }

    /// ADAM with zero gradients never moves parameters.
    #[test]
    fn adam_zero_gradient_is_identity(seed in 0u64..500, steps in 1usize..6) {
        use dehaze_core::adam::{AdamConfig, AdamState};
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..20).map(|_| rng.random_range(-2.0..2.0) as f32 as f64).collect::<Vec<_>>();
        let mut p = Tensor::from_vec([1, 1, 4, 5], data.clone()).unwrap();
        p.ensure_grad();
        let mut state = AdamState::new(AdamConfig::default());
        for _ in 0..steps {
            let mut params = vec![("p".to_string(), &mut p)];
            state.step(&mut params).unwrap();
        }
        prop_assert_eq!(p.data(), &data[..]);
    }
}

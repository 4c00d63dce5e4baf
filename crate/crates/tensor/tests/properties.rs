use hali_tensor::{Graph, Mode, RunningStats, SeededRng, Tensor};
use proptest::prelude::*;

/// Half-pixel-centers bilinear interpolation of a single output pixel,
/// written directly from the sampling definition.
fn interpolate_pixel(img: &[Vec<f64>], oy: usize, ox: usize, factor: usize) -> f64 {
    let h = img.len() as f64;
    let w = img[0].len() as f64;
    let coord = |o: usize, len: f64| -> (usize, usize, f64) {
        let mut s = (o as f64 + 0.5) / factor as f64 - 0.5;
        if s < 0.0 {
            s = 0.0;
        }
        let lo = s.floor().min(len - 1.0);
        let hi = (lo + 1.0).min(len - 1.0);
        (lo as usize, hi as usize, s - lo)
    };
    let (y0, y1, fy) = coord(oy, h);
    let (x0, x1, fx) = coord(ox, w);
    let top = img[y0][x0] * (1.0 - fx) + img[y0][x1] * fx;
    let bottom = img[y1][x0] * (1.0 - fx) + img[y1][x1] * fx;
    top * (1.0 - fy) + bottom * fy
}

#[test]
fn upsample_matches_scalar_interpolation() {
    let img = vec![vec![0.0, 1.0], vec![0.0, 1.0]];
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::new([1, 1, 2, 2], vec![0.0, 1.0, 0.0, 1.0]).unwrap());
    let y = g.upsample_bilinear(x, 2).unwrap();
    let out = g.value(y).data();
    for oy in 0..4 {
        for ox in 0..4 {
            let expected = interpolate_pixel(&img, oy, ox, 2);
            assert!((out[oy * 4 + ox] - expected).abs() < 1e-15);
        }
    }
    // each row reads [0, 0.25, 0.75, 1]
    assert_eq!(&out[0..4], &[0.0, 0.25, 0.75, 1.0]);
}

#[test]
fn batch_norm_standardizes_large_batch() {
    let mut rng = SeededRng::new(5);
    let x = Tensor::<f64>::from_fn([256, 3, 4, 4], |_| 3.0 + 2.5 * rng.normal());
    let mut g = Graph::<f64>::new();
    let xv = g.constant(x);
    let gamma = g.constant(Tensor::full([3], 1.0));
    let beta = g.constant(Tensor::zeros([3]));
    let mut stats = RunningStats::new(3);
    let y = g.batch_norm(xv, gamma, beta, &mut stats, Mode::Train).unwrap();
    let d = g.value(y).data();
    for ch in 0..3 {
        let vals: Vec<f64> = (0..256).flat_map(|s| (0..16).map(move |i| (s * 3 + ch) * 16 + i)).map(|i| d[i]).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!(mean.abs() < 1e-3, "mean {mean}");
        assert!((var - 1.0).abs() < 1e-3, "var {var}");
    }
}

#[test]
fn dropout_monte_carlo_mean_recovers_input() {
    let input: Vec<f32> = (0..16).map(|i| 0.5 + i as f32 * 0.1).collect();
    let mut acc = vec![0.0f64; 16];
    let mut rng = SeededRng::new(8);
    let trials = 10_000;
    for _ in 0..trials {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::new([16], input.clone()).unwrap());
        let y = g.dropout(x, 0.5, Mode::Train, &mut rng).unwrap();
        for (a, &v) in acc.iter_mut().zip(g.value(y).data()) {
            *a += v as f64;
        }
    }
    for (a, &x) in acc.iter().zip(&input) {
        let mean = a / trials as f64;
        assert!((mean - x as f64).abs() / (x as f64) < 0.02, "{mean} vs {x}");
    }
}

#[test]
fn noise_standard_deviation_matches_sigma() {
    let mut g = Graph::<f32>::new();
    let mut rng = SeededRng::new(9);
    let n = 100_000;
    let x = g.constant(Tensor::full([n], 1.5));
    let y = g.gaussian_noise(x, 0.2, Mode::Train, &mut rng).unwrap();
    let diffs: Vec<f64> = g.value(y).data().iter().map(|&v| v as f64 - 1.5).collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let sd = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    assert!((sd - 0.2).abs() / 0.2 < 0.01, "sd {sd}");
}

#[test]
fn eval_noise_is_identity() {
    let mut g = Graph::<f32>::new();
    let mut rng = SeededRng::new(10);
    let x = g.constant(Tensor::full([5], 1.0));
    let y = g.gaussian_noise(x, 0.2, Mode::Eval, &mut rng).unwrap();
    assert_eq!(g.value(y).data(), g.value(x).data());
}

fn forward_stack(seed: u64, input: &Tensor<f32>) -> Vec<u32> {
    let mut rng = SeededRng::new(seed);
    let mut g = Graph::<f32>::new();
    let x = g.constant(input.clone());
    let w = g.constant(Tensor::from_fn([4, 2, 3, 3], |_| rng.normal() as f32));
    let gamma = g.constant(Tensor::full([4], 1.0));
    let beta = g.constant(Tensor::zeros([4]));
    let mut stats = RunningStats::new(4);
    let h = g.gaussian_noise(x, 0.2, Mode::Train, &mut rng).unwrap();
    let h = g.conv2d(h, w, None, 2, 1).unwrap();
    let h = g.batch_norm(h, gamma, beta, &mut stats, Mode::Train).unwrap();
    let h = g.leaky_relu(h, 0.2);
    let h = g.dropout(h, 0.5, Mode::Train, &mut rng).unwrap();
    let h = g.upsample_bilinear(h, 2).unwrap();
    g.value(h).data().iter().map(|v| v.to_bits()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv_shape_formula(k in prop::sample::select(vec![1usize, 3, 4]),
                          stride in 1usize..=2, pad in 0usize..=1,
                          h in 4usize..12, w in 4usize..12) {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::zeros([1, 2, h, w]));
        let wt = g.constant(Tensor::zeros([3, 2, k, k]));
        let y = g.conv2d(x, wt, None, stride, pad).unwrap();
        prop_assert_eq!(g.shape(y), &[1, 3, (h + 2 * pad - k) / stride + 1, (w + 2 * pad - k) / stride + 1][..]);
    }

    #[test]
    fn ops_are_bit_deterministic(seed in any::<u64>()) {
        let mut rng = SeededRng::new(seed ^ 0xabc);
        let input = Tensor::from_fn([3, 2, 6, 6], |_| (rng.uniform() * 4.0 - 2.0) as f32);
        prop_assert_eq!(forward_stack(seed, &input), forward_stack(seed, &input));
    }

    #[test]
    fn finite_inputs_stay_finite(vals in prop::collection::vec(-10.0f32..10.0, 32),
                                 params in prop::collection::vec(-10.0f32..10.0, 18)) {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::new([2, 1, 4, 4], vals).unwrap());
        let w = g.constant(Tensor::new([2, 1, 3, 3], params).unwrap());
        let gamma = g.constant(Tensor::full([2], 10.0));
        let beta = g.constant(Tensor::full([2], -10.0));
        let mut stats = RunningStats::new(2);
        let h = g.conv2d(x, w, None, 1, 1).unwrap();
        let h = g.batch_norm(h, gamma, beta, &mut stats, Mode::Train).unwrap();
        let s = g.sigmoid(h);
        let t = g.tanh(h);
        let sp = g.softplus(h);
        let sm = g.softmax(h);
        let lg = g.log_clamped(s, 1e-7);
        for v in [h, s, t, sp, sm, lg] {
            prop_assert!(g.value(v).check_finite("forward").is_ok());
        }
    }
}

#![allow(dead_code)]

use std::path::{Path, PathBuf};

use hali_cli::run_command_io;

pub fn idx_bytes(magic: u32, dims: &[u32], payload: &[u8]) -> Vec<u8> {
    let mut b = magic.to_be_bytes().to_vec();
    for d in dims {
        b.extend_from_slice(&d.to_be_bytes());
    }
    b.extend_from_slice(payload);
    b
}

/// Class `k` draws a bright horizontal bar at row `2 + 2k` over a dim speckle.
pub fn synthetic_digits(n: usize, seed: u64) -> (Vec<u8>, Vec<u8>) {
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    let mut next = move || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (state >> 33) as u32
    };
    let mut pixels = Vec::with_capacity(n * 784);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let k = i % 10;
        labels.push(k as u8);
        for r in 0..28 {
            for _ in 0..28 {
                let v = if r == 2 + 2 * k { 230 + next() % 26 } else { next() % 40 };
                pixels.push(v as u8);
            }
        }
    }
    (pixels, labels)
}

/// A directory laid out like the MNIST distribution, with synthetic content.
pub fn write_mnist_like(dir: &Path, train: usize, test: usize) {
    for (n, images, labels, seed) in [
        (train, "train-images-idx3-ubyte", "train-labels-idx1-ubyte", 1),
        (test, "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte", 2),
    ] {
        let (px, lb) = synthetic_digits(n, seed);
        std::fs::write(dir.join(images), idx_bytes(2051, &[n as u32, 28, 28], &px)).unwrap();
        std::fs::write(dir.join(labels), idx_bytes(2049, &[n as u32], &lb)).unwrap();
    }
}

pub fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

/// The shipped MNIST config with `overrides` replacing its `train.*` values.
pub fn mnist_config_with(overrides: &[(&str, &str)]) -> String {
    let text = std::fs::read_to_string(configs_dir().join("mnist-small.cfg")).unwrap();
    let mut lines: Vec<String> = text
        .lines()
        .filter(|l| !overrides.iter().any(|(k, _)| l.split('=').next().map(str::trim) == Some(*k)))
        .map(String::from)
        .collect();
    lines.extend(overrides.iter().map(|(k, v)| format!("{k} = {v}")));
    lines.join("\n") + "\n"
}

pub struct Output {
    pub code: i32,
    pub out: String,
    pub err: String,
}

pub fn hali(args: &[&str]) -> Output {
    let argv: Vec<String> = std::iter::once("hali").chain(args.iter().copied()).map(String::from).collect();
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run_command_io(&argv, &mut out, &mut err);
    Output { code, out: String::from_utf8(out).unwrap(), err: String::from_utf8(err).unwrap() }
}

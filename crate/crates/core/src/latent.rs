//! Operations on a trained model: per-level reconstructions, the
//! discriminator embedded distance, latent sweeps, innovation edits and
//! inpainting.

use hali_tensor::{SeededRng, Tensor};

use crate::error::{HaliError, Result};
use crate::hierarchy::{decode_from, encode_to, kernel, kernel_sample_with, Draw};
use crate::networks::{Ctx, Model};

/// Encode `x` to level `level` and decode back to image space.
pub fn reconstruct_at_level(model: &Model, x: &Tensor<f32>, level: usize, how: Draw, rng: &mut SeededRng) -> Result<Tensor<f32>> {
    check_level(model, level)?;
    let mut ctx = Ctx::<f32>::eval(&model.store, rng);
    let xv = ctx.constant(x);
    let up = encode_to(&model.nets.enc, &mut ctx, xv, 0.0, level, how, how)?;
    let down = decode_from(&model.nets.dec, &mut ctx, up.levels[level], level, how, how)?;
    Ok(ctx.value_f32(down.x()))
}

fn check_level(model: &Model, level: usize) -> Result<()> {
    if level == 0 || level > model.levels() {
        return Err(HaliError::arg(format!("level {level} is outside 1..={}", model.levels())));
    }
    Ok(())
}

/// Per-example mean squared pixel error.
pub fn pixel_mse(a: &Tensor<f32>, b: &Tensor<f32>) -> Vec<f64> {
    assert_eq!(a.shape(), b.shape());
    (0..a.batch())
        .map(|i| {
            let (u, v) = (a.sample(i), b.sample(i));
            u.iter().zip(v).map(|(p, q)| (*p as f64 - *q as f64).powi(2)).sum::<f64>() / u.len() as f64
        })
        .collect()
}

/// Penultimate discriminator features of `(x, z1(x), ..., zL(x))` with the
/// encoder codes taken at their conditional means, `[N, E]`.
pub fn embed(model: &Model, x: &Tensor<f32>) -> Result<Tensor<f32>> {
    let mut rng = SeededRng::new(0);
    let mut ctx = Ctx::<f32>::eval(&model.store, &mut rng);
    let xv = ctx.constant(x);
    let up = encode_to(&model.nets.enc, &mut ctx, xv, 0.0, model.levels(), Draw::Mean, Draw::Mean)?;
    let out = model.nets.disc.forward(&mut ctx, xv, up.latents())?;
    let e = ctx.value_f32(out.embedding);
    let n = e.batch();
    let width = e.per_sample();
    Ok(e.reshape([n, width])?)
}

/// Row-wise Euclidean distance between two embedding batches.
pub fn embedding_distance(a: &Tensor<f32>, b: &Tensor<f32>) -> Vec<f64> {
    assert_eq!(a.shape(), b.shape());
    (0..a.batch())
        .map(|i| a.sample(i).iter().zip(b.sample(i)).map(|(p, q)| (*p as f64 - *q as f64).powi(2)).sum::<f64>().sqrt())
        .collect()
}

/// Discriminator embedded distance `d_c(u_i, v_i)` for each pair.
pub fn dc_distance(model: &Model, u: &Tensor<f32>, v: &Tensor<f32>) -> Result<Vec<f64>> {
    if u.shape() != v.shape() {
        return Err(HaliError::arg(format!("d_c needs equal shapes, got {:?} and {:?}", u.shape(), v.shape())));
    }
    Ok(embedding_distance(&embed(model, u)?, &embed(model, v)?))
}

/// Originals and their reconstructions from every level.
#[derive(Clone, Debug)]
pub struct ReconstructionSet {
    pub x: Tensor<f32>,
    /// `recon[l - 1]` is the level-`l` reconstruction.
    pub recon: Vec<Tensor<f32>>,
    /// `mse[l - 1][i]`: pixel MSE of image `i` at level `l`.
    pub mse: Vec<Vec<f64>>,
    /// `dc[l - 1][i]`: `d_c(x_i, xhat_l,i)`.
    pub dc: Vec<Vec<f64>>,
}

pub fn reconstruction_set(model: &Model, x: &Tensor<f32>, how: Draw, rng: &mut SeededRng) -> Result<ReconstructionSet> {
    let ex = embed(model, x)?;
    let mut set = ReconstructionSet { x: x.clone(), recon: Vec::new(), mse: Vec::new(), dc: Vec::new() };
    for level in 1..=model.levels() {
        let r = reconstruct_at_level(model, x, level, how, rng)?;
        set.mse.push(pixel_mse(x, &r));
        set.dc.push(embedding_distance(&ex, &embed(model, &r)?));
        set.recon.push(r);
    }
    Ok(set)
}

/// Where a sweep starts.
#[derive(Clone, Debug)]
pub enum SweepBase {
    /// Encode these images with conditional means.
    Images(Tensor<f32>),
    /// Draw this many top-level codes from the prior.
    Prior(usize),
}

/// One decoded image batch per scale factor, plus the top-level codes used.
#[derive(Clone, Debug)]
pub struct Sweep {
    pub alphas: Vec<f64>,
    pub images: Vec<Tensor<f32>>,
    pub top: Vec<Tensor<f32>>,
}

pub const DEFAULT_ALPHAS: [f64; 7] = [-3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0];

/// Scale entry `coord` of each example when `flat`, otherwise feature map `coord`.
fn scale_coordinate(t: &Tensor<f32>, flat: bool, coord: usize, alpha: f64) -> Tensor<f32> {
    let mut t = t.clone();
    let s = t.shape().to_vec();
    let (c, hw) = (s[1], s[2] * s[3]);
    for n in 0..s[0] {
        let sample = &mut t.data_mut()[n * c * hw..(n + 1) * c * hw];
        if flat {
            sample[coord] = (sample[coord] as f64 * alpha) as f32;
        } else {
            for v in &mut sample[coord * hw..(coord + 1) * hw] {
                *v = (*v as f64 * alpha) as f32;
            }
        }
    }
    t
}

/// Scale one latent coordinate by each `alpha` and decode with conditional means.
///
/// At the top level `coord` is a flat index into the code. At lower levels it
/// is a feature-map index and the codes above are held fixed.
pub fn latent_sweep(model: &Model, base: &SweepBase, level: usize, coord: usize, alphas: &[f64], rng: &mut SeededRng) -> Result<Sweep> {
    check_level(model, level)?;
    let top_level = model.levels();
    let shape = model.config.level_shape(level);
    let limit = if level == top_level { shape.numel() } else { shape.c };
    if coord >= limit {
        return Err(HaliError::arg(format!("coordinate {coord} is outside 0..{limit} for level {level}")));
    }
    // Codes at `level` and at the top, all by conditional means.
    let (z_level, z_top) = {
        let mut ctx = Ctx::<f32>::eval(&model.store, rng);
        match base {
            SweepBase::Images(x) => {
                let xv = ctx.constant(x);
                let up = encode_to(&model.nets.enc, &mut ctx, xv, 0.0, top_level, Draw::Mean, Draw::Mean)?;
                (ctx.value_f32(up.levels[level]), ctx.value_f32(up.levels[top_level]))
            }
            SweepBase::Prior(n) => {
                let z = crate::hierarchy::prior_sample(&mut ctx, model.config.level_shape(top_level), *n);
                let down = decode_from(&model.nets.dec, &mut ctx, z, top_level, Draw::Mean, Draw::Mean)?;
                (ctx.value_f32(down.levels[level]), ctx.value_f32(z))
            }
        }
    };
    let mut sweep = Sweep { alphas: alphas.to_vec(), images: Vec::new(), top: Vec::new() };
    for &alpha in alphas {
        let z = scale_coordinate(&z_level, level == top_level, coord, alpha);
        let mut ctx = Ctx::<f32>::eval(&model.store, rng);
        let zv = ctx.constant(&z);
        let down = decode_from(&model.nets.dec, &mut ctx, zv, level, Draw::Mean, Draw::Mean)?;
        sweep.images.push(ctx.value_f32(down.x()));
        sweep.top.push(if level == top_level { z } else { z_top.clone() });
    }
    Ok(sweep)
}

/// Result of editing the second-level code and carrying the change down
/// through an innovation tensor.
#[derive(Clone, Debug)]
pub struct InnovationEdit {
    pub coord: usize,
    pub alpha: f64,
    /// `eta = z1_tilde - z1_tilde_alpha`.
    pub eta: Tensor<f32>,
    /// `z1_hat - eta`.
    pub z1_edited: Tensor<f32>,
    pub image: Tensor<f32>,
}

/// Scale coordinate `coord` of `z2` by `alpha`, regenerate `z1` from both the
/// original and the scaled code, and subtract their difference from the
/// encoded `z1` before decoding. Sample mode reuses one noise draw for both
/// regenerations.
pub fn innovation_edit(model: &Model, x: &Tensor<f32>, coord: usize, alpha: f64, how: Draw, rng: &mut SeededRng) -> Result<InnovationEdit> {
    if model.levels() < 2 {
        return Err(HaliError::arg("innovation edits need at least two latent levels"));
    }
    let z2_shape = model.config.level_shape(2);
    if coord >= z2_shape.numel() {
        return Err(HaliError::arg(format!("coordinate {coord} is outside 0..{} for z2", z2_shape.numel())));
    }
    let mut ctx = Ctx::<f32>::eval(&model.store, rng);
    let xv = ctx.constant(x);
    let up = encode_to(&model.nets.enc, &mut ctx, xv, 0.0, 2, how, how)?;
    let (z1_hat, z2_hat) = (up.levels[1], up.levels[2]);
    let z2_alpha = scale_coordinate(&ctx.value_f32(z2_hat), true, coord, alpha);
    let z2_alpha = ctx.constant(&z2_alpha);
    let k = kernel(&model.nets.dec[1], &mut ctx, z2_hat)?;
    let k_alpha = kernel(&model.nets.dec[1], &mut ctx, z2_alpha)?;
    let (z1_tilde, z1_tilde_alpha) = match how {
        Draw::Mean => (k.mu, k_alpha.mu),
        Draw::Sample => {
            let shape = ctx.g.shape(k.mu).to_vec();
            let n: usize = shape.iter().product();
            let noise = Tensor::new(shape, ctx.rng.normal_vec(n, 1.0))?;
            let eps = ctx.constant(&noise);
            (kernel_sample_with(&mut ctx, k, eps)?, kernel_sample_with(&mut ctx, k_alpha, eps)?)
        }
    };
    let eta = ctx.g.sub(z1_tilde, z1_tilde_alpha)?;
    let z1_edited = ctx.g.sub(z1_hat, eta)?;
    let kx = kernel(&model.nets.dec[0], &mut ctx, z1_edited)?;
    let image = match how {
        Draw::Mean => kx.mu,
        Draw::Sample => crate::hierarchy::kernel_sample(&mut ctx, kx)?,
    };
    Ok(InnovationEdit {
        coord,
        alpha,
        eta: ctx.value_f32(eta),
        z1_edited: ctx.value_f32(z1_edited),
        image: ctx.value_f32(image),
    })
}

/// Number of composites produced by [`inpaint`] by default.
pub const DEFAULT_INPAINT_ITERATIONS: usize = 5;

/// Keep observed pixels of `x`, take the rest from `fill`.
fn composite(x: &Tensor<f32>, mask: &Tensor<f32>, fill: &Tensor<f32>) -> Tensor<f32> {
    let data = x.data().iter().zip(mask.data()).zip(fill.data()).map(|((&o, &m), &f)| if m == 1.0 { o } else { f }).collect();
    Tensor::new(x.shape().to_vec(), data).expect("shape")
}

/// Fill the pixels where `mask == 0`. The first composite takes them from the
/// top-level reconstruction of the image with hidden pixels zeroed; each later
/// one re-encodes the previous composite and fills from its level-1
/// reconstruction. Observed pixels are copied from `x` every time.
pub fn inpaint(model: &Model, x: &Tensor<f32>, mask: &Tensor<f32>, iterations: usize, how: Draw, rng: &mut SeededRng) -> Result<Vec<Tensor<f32>>> {
    if mask.shape() != x.shape() {
        return Err(HaliError::arg(format!("mask shape {:?} does not match image shape {:?}", mask.shape(), x.shape())));
    }
    if mask.data().iter().any(|&m| m != 0.0 && m != 1.0) {
        return Err(HaliError::arg("mask must contain only 0 and 1"));
    }
    if iterations == 0 {
        return Err(HaliError::arg("inpainting needs at least one iteration"));
    }
    if mask.data().iter().all(|&m| m == 1.0) {
        return Ok(vec![x.clone()]);
    }
    let blank = composite(x, mask, &Tensor::zeros(x.shape().to_vec()));
    let fill = reconstruct_at_level(model, &blank, model.levels(), how, rng)?;
    let mut out = vec![composite(x, mask, &fill)];
    for _ in 1..iterations {
        let fill = reconstruct_at_level(model, out.last().unwrap(), 1, how, rng)?;
        out.push(composite(x, mask, &fill));
    }
    Ok(out)
}

/// A mask of ones with a zero rectangle at `(x, y)` of size `w x h` in every channel.
pub fn rect_mask(shape: &[usize], x: usize, y: usize, w: usize, h: usize) -> Result<Tensor<f32>> {
    if shape.len() != 4 {
        return Err(HaliError::arg(format!("masks are built for [N, C, H, W] batches, got {shape:?}")));
    }
    let (n, c, height, width) = (shape[0], shape[1], shape[2], shape[3]);
    if x + w > width || y + h > height {
        return Err(HaliError::arg(format!("rectangle {x},{y},{w},{h} exceeds a {width}x{height} image")));
    }
    Ok(Tensor::from_fn([n, c, height, width], |i| {
        let (r, col) = ((i / width) % height, i % width);
        if (y..y + h).contains(&r) && (x..x + w).contains(&col) {
            0.0
        } else {
            1.0
        }
    }))
}

//! Gaussian Markov kernels and ancestral sampling along the encoder chain
//! `x -> z1 -> ... -> zL` and the decoder chain `zL -> ... -> z1 -> x`.

use hali_tensor::{Element, Tensor, Var};

use crate::config::Shape3;
use crate::error::{HaliError, Result};
use crate::networks::{Ctx, Network};

/// Lower bound added to every predicted scale.
pub const SIGMA_FLOOR: f64 = 1e-3;

/// A kernel evaluated at one conditioning batch.
#[derive(Clone, Copy, Debug)]
pub struct GaussianKernel {
    pub mu: Var,
    pub sigma: Var,
}

/// How each level is drawn from its kernel.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Draw {
    /// Reparameterized sample `mu + sigma * eps`.
    Sample,
    /// Conditional mean.
    Mean,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Encoder,
    Decoder,
}

/// One drawn chain. `levels[0]` is the image, `levels[l]` is `z_l`.
/// `kernels[l]` is the kernel that produced `levels[l]`, absent for the
/// chain's starting point.
#[derive(Clone, Debug)]
pub struct LatentSample {
    pub levels: Vec<Var>,
    pub kernels: Vec<Option<GaussianKernel>>,
    pub provenance: Provenance,
}

impl LatentSample {
    /// `z_1 .. z_L`, the latents passed to the discriminator.
    pub fn latents(&self) -> &[Var] {
        &self.levels[1..]
    }

    pub fn x(&self) -> Var {
        self.levels[0]
    }

    /// Joint log-density of the drawn values under the chain's own kernels, `[N]`.
    /// The starting point contributes nothing.
    pub fn log_density<F: Element>(&self, ctx: &mut Ctx<'_, F>) -> Result<Var> {
        let mut total: Option<Var> = None;
        for (value, k) in self.levels.iter().zip(&self.kernels) {
            if let Some(k) = k {
                let lp = kernel_log_density(ctx, *k, *value)?;
                total = Some(match total {
                    Some(t) => ctx.g.add(t, lp)?,
                    None => lp,
                });
            }
        }
        total.ok_or_else(|| HaliError::arg("chain has no kernel terms"))
    }
}

/// Evaluate a Gaussian-terminated network at `cond`: the raw `2C` output is
/// split into a mean (optionally squashed by tanh) and `softplus(raw) + floor`.
pub fn kernel<F: Element>(net: &Network, ctx: &mut Ctx<'_, F>, cond: Var) -> Result<GaussianKernel> {
    if !net.is_gaussian() {
        return Err(HaliError::arg(format!("{} is not a Gaussian kernel", net.name)));
    }
    let raw = net.forward(ctx, cond)?;
    let c = ctx.g.shape(raw)[1] / 2;
    let mut mu = ctx.g.slice_channels(raw, 0, c)?;
    if net.tanh_mean() {
        mu = ctx.g.tanh(mu);
    }
    let s = ctx.g.slice_channels(raw, c, c)?;
    let s = ctx.g.softplus(s);
    let sigma = ctx.g.affine(s, 1.0, SIGMA_FLOOR);
    Ok(GaussianKernel { mu, sigma })
}

/// Standard normal noise shaped like `like`, as a constant.
fn standard_noise<F: Element>(ctx: &mut Ctx<'_, F>, like: Var) -> Var {
    let shape = ctx.g.shape(like).to_vec();
    let n: usize = shape.iter().product();
    let eps = Tensor::new(shape, ctx.rng.normal_vec(n, 1.0)).expect("shape");
    ctx.g.constant(eps)
}

/// `mu + sigma * eps` with `eps ~ N(0, I)` drawn from the context stream.
pub fn kernel_sample<F: Element>(ctx: &mut Ctx<'_, F>, k: GaussianKernel) -> Result<Var> {
    let eps = standard_noise(ctx, k.mu);
    kernel_sample_with(ctx, k, eps)
}

/// Reparameterized draw with caller-supplied standard noise.
pub fn kernel_sample_with<F: Element>(ctx: &mut Ctx<'_, F>, k: GaussianKernel, eps: Var) -> Result<Var> {
    let scaled = ctx.g.mul(k.sigma, eps)?;
    Ok(ctx.g.add(k.mu, scaled)?)
}

fn draw<F: Element>(ctx: &mut Ctx<'_, F>, k: GaussianKernel, how: Draw) -> Result<Var> {
    match how {
        Draw::Sample => kernel_sample(ctx, k),
        Draw::Mean => Ok(k.mu),
    }
}

/// Per-example `sum(-0.5 ln(2 pi sigma^2) - (v - mu)^2 / (2 sigma^2))`, `[N]`.
pub fn kernel_log_density<F: Element>(ctx: &mut Ctx<'_, F>, k: GaussianKernel, value: Var) -> Result<Var> {
    Ok(ctx.g.gaussian_log_density(k.mu, k.sigma, value)?)
}

/// `n` draws from the standard normal prior on a latent of shape `shape`.
pub fn prior_sample<F: Element>(ctx: &mut Ctx<'_, F>, shape: Shape3, n: usize) -> Var {
    let dims = shape.batch(n);
    let t = Tensor::new(dims.to_vec(), ctx.rng.normal_vec(shape.numel() * n, 1.0)).expect("shape");
    ctx.g.constant(t)
}

/// Encoder chain from `x` up to level `top` (`1..=L`). Training mode perturbs the
/// encoder's view of `x` with Gaussian noise of std `input_noise`;
/// `levels[0]` stays the clean image. Intermediate levels use `inner`, the
/// top level uses `last`.
pub fn encode_to<F: Element>(
    enc: &[Network],
    ctx: &mut Ctx<'_, F>,
    x: Var,
    input_noise: f64,
    top: usize,
    inner: Draw,
    last: Draw,
) -> Result<LatentSample> {
    if top == 0 || top > enc.len() {
        return Err(HaliError::arg(format!("level {top} is outside 1..={}", enc.len())));
    }
    let mut h = if input_noise > 0.0 { ctx.g.gaussian_noise(x, input_noise, ctx.mode, ctx.rng)? } else { x };
    let mut levels = vec![x];
    let mut kernels = vec![None];
    for (l, net) in enc[..top].iter().enumerate() {
        let k = kernel(net, ctx, h)?;
        let how = if l + 1 == top { last } else { inner };
        h = draw(ctx, k, how)?;
        levels.push(h);
        kernels.push(Some(k));
    }
    Ok(LatentSample { levels, kernels, provenance: Provenance::Encoder })
}

/// Draw the full encoder chain `x -> z1 -> ... -> zL`.
pub fn encoder_chain_sample<F: Element>(enc: &[Network], ctx: &mut Ctx<'_, F>, x: Var, input_noise: f64, how: Draw) -> Result<LatentSample> {
    encode_to(enc, ctx, x, input_noise, enc.len(), how, how)
}

/// Decoder chain from `z` at level `from` down to the image. Levels above
/// `from` are not part of the result, so `levels.len() == from + 1`.
/// Intermediate latents use `inner`, the image uses `image`.
pub fn decode_from<F: Element>(dec: &[Network], ctx: &mut Ctx<'_, F>, z: Var, from: usize, inner: Draw, image: Draw) -> Result<LatentSample> {
    if from == 0 || from > dec.len() {
        return Err(HaliError::arg(format!("level {from} is outside 1..={}", dec.len())));
    }
    let mut levels = vec![z];
    let mut kernels = vec![None];
    let mut h = z;
    for l in (0..from).rev() {
        let k = kernel(&dec[l], ctx, h)?;
        h = draw(ctx, k, if l == 0 { image } else { inner })?;
        levels.push(h);
        kernels.push(Some(k));
    }
    levels.reverse();
    kernels.reverse();
    Ok(LatentSample { levels, kernels, provenance: Provenance::Decoder })
}

/// Full decoder chain from a top-level code, or from `n` prior draws when `z_top` is `None`.
pub fn decoder_chain_sample<F: Element>(
    dec: &[Network],
    ctx: &mut Ctx<'_, F>,
    top_shape: Shape3,
    z_top: Option<Var>,
    n: usize,
    how: Draw,
) -> Result<LatentSample> {
    let z = match z_top {
        Some(z) => z,
        None => prior_sample(ctx, top_shape, n),
    };
    decode_from(dec, ctx, z, dec.len(), how, how)
}

/// Monte-Carlo estimate of `E_{z_l ~ q(z_l | x)}[-log p(x | z_l)]` per example, `[N]`.
///
/// By default levels strictly between `x` and `z_l` are replaced by their
/// conditional means on both the encoding and decoding side; `full_sampling`
/// draws them instead.
pub fn reconstruction_error<F: Element>(
    enc: &[Network],
    dec: &[Network],
    ctx: &mut Ctx<'_, F>,
    x: Var,
    level: usize,
    samples: usize,
    full_sampling: bool,
) -> Result<Var> {
    if samples == 0 {
        return Err(HaliError::arg("reconstruction error needs at least one sample"));
    }
    let inner = if full_sampling { Draw::Sample } else { Draw::Mean };
    // With mean-mode intermediates the kernel at `level` is the same for every draw.
    let fixed = if full_sampling { None } else { encode_to(enc, ctx, x, 0.0, level, inner, Draw::Mean)?.kernels[level] };
    let mut total: Option<Var> = None;
    for _ in 0..samples {
        let mut h = match fixed {
            Some(k) => kernel_sample(ctx, k)?,
            None => encode_to(enc, ctx, x, 0.0, level, inner, Draw::Sample)?.levels[level],
        };
        for l in (1..level).rev() {
            let k = kernel(&dec[l], ctx, h)?;
            h = draw(ctx, k, inner)?;
        }
        let k = kernel(&dec[0], ctx, h)?;
        let lp = kernel_log_density(ctx, k, x)?;
        total = Some(match total {
            Some(t) => ctx.g.add(t, lp)?,
            None => lp,
        });
    }
    Ok(ctx.g.scale(total.unwrap(), -1.0 / samples as f64))
}

//! Finite-difference checks of whole training losses on a tiny model, on top
//! of the per-op suite in [`hali_tensor::gradcheck`].

use hali_tensor::gradcheck::{check_gradients, op_suite, GradCheckOptions, SuiteEntry};
use hali_tensor::{Graph, Mode, SeededRng, Tensor, Var};

use crate::config::Config;
use crate::error::Result;
use crate::hierarchy::{decoder_chain_sample, encode_to, encoder_chain_sample, Draw};
use crate::networks::{Ctx, Model};
use crate::trainer::{discriminator_loss, generator_loss, supervised_loss};

/// Every layer kind at the smallest sizes that still exercise it.
pub const TINY_CONFIG: &str = "\
name = tiny
data.shape = 1x4x4
latent.z1 = 2x2x2
latent.z2 = 3
classes = 2
enc.z1.0 = conv k=3 s=2 c=3 norm=bn
enc.z1.1 = conv k=1 c=4 norm=none act=linear
enc.z1.2 = gauss sigma0=0.5
enc.z2.0 = conv k=2 p=valid c=3 norm=bn
enc.z2.1 = res k=1 norm=bn
enc.z2.2 = conv k=1 c=6 norm=none act=linear
enc.z2.3 = gauss sigma0=0.5
dec.z1.0 = conv k=1 c=8 norm=bn
dec.z1.1 = reshape to=2x2x2
dec.z1.2 = conv k=1 c=4 norm=none act=linear
dec.z1.3 = gauss sigma0=0.5
dec.x.0 = up f=2
dec.x.1 = conv k=3 c=2 norm=none act=linear
dec.x.2 = gauss tanh=1 sigma0=0.1
disc.0.0 = conv k=3 s=2 c=3 norm=wn drop=0.2
disc.1.0 = conv k=2 p=valid c=3 norm=wn drop=0.2
disc.2.0 = conv k=1 c=4 norm=none drop=0.5
disc.2.1 = conv k=1 c=1 norm=none act=sigmoid
clf.0 = conv k=1 c=2 norm=none act=softmax
train.batch = 3
";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Loss {
    Discriminator,
    GeneratorSupervised,
}

/// Check one loss of the tiny model with respect to every parameter. All
/// randomness (noise, dropout, draws) is replayed from `seed` on every
/// evaluation, so the loss is a deterministic function of the parameters.
fn loss_check(model: &Model, seed: u64, loss: Loss) -> Result<SuiteEntry> {
    let levels = model.levels();
    let top = model.config.level_shape(levels);
    let mut rng = SeededRng::new(seed ^ 0x9e37);
    let shape = model.config.data.batch(3);
    let x = Tensor::from_fn(shape, |_| rng.uniform() as f32 * 1.6 - 0.8);
    let labels = [0usize, 1, 1];
    let inputs: Vec<Tensor<f64>> = model.store.params.iter().map(|p| p.value.cast()).collect();
    let build = |g: &mut Graph<f64>, vars: &[Var]| -> hali_tensor::Result<Var> {
        let mut rng = SeededRng::new(seed);
        let mut ctx = Ctx::from_graph(std::mem::take(g), vars.to_vec(), model.store.stats.clone(), Mode::Train, &mut rng);
        let out = (|| -> Result<Var> {
            let nets = &model.nets;
            let xv = ctx.constant(&x);
            let enc = encoder_chain_sample(&nets.enc, &mut ctx, xv, model.config.enc_noise, Draw::Sample)?;
            let dec = decoder_chain_sample(&nets.dec, &mut ctx, top, None, 3, Draw::Sample)?;
            let dq = nets.disc.forward(&mut ctx, enc.x(), enc.latents())?;
            let dp = nets.disc.forward(&mut ctx, dec.x(), dec.latents())?;
            match loss {
                Loss::Discriminator => discriminator_loss(&mut ctx.g, dq.rho, dp.rho),
                Loss::GeneratorSupervised => {
                    let lg = generator_loss(&mut ctx.g, dq.rho, dp.rho)?;
                    let up = encode_to(&nets.enc, &mut ctx, xv, model.config.enc_noise, levels, Draw::Mean, Draw::Mean)?;
                    let probs = nets.clf.forward(&mut ctx, up.levels[levels])?;
                    let ls = supervised_loss(&mut ctx.g, probs, &labels)?;
                    Ok(ctx.g.add(lg, ls)?)
                }
            }
        })();
        *g = std::mem::take(&mut ctx.g);
        out.map_err(|e| match e {
            crate::error::HaliError::Tensor(t) => t,
            other => hali_tensor::TensorError::Argument { op: "gradsuite", msg: other.to_string() },
        })
    };
    let name = match loss {
        Loss::Discriminator => "end_to_end_discriminator_loss",
        Loss::GeneratorSupervised => "end_to_end_generator_supervised_loss",
    };
    Ok((name.to_string(), check_gradients(&inputs, build, GradCheckOptions::default())?))
}

/// The per-op suite followed by the end-to-end loss checks.
pub fn run(seed: u64) -> Result<Vec<SuiteEntry>> {
    let mut out = op_suite(seed)?;
    let config = Config::parse(TINY_CONFIG)?;
    let model = Model::new(&config.model, seed)?;
    out.push(loss_check(&model, seed, Loss::Discriminator)?);
    out.push(loss_check(&model, seed, Loss::GeneratorSupervised)?);
    Ok(out)
}

//! Adversarial training of the encoder and decoder hierarchies against a joint
//! discriminator, with an optional supervised head on the top-level code.

use std::fmt::Write as _;
use std::time::Instant;

use hali_tensor::{Graph, Mode, SeededRng, Tensor, Var};

use crate::config::{Config, Shape3};
use crate::data::Dataset;
use crate::error::{HaliError, Result};
use crate::hierarchy::{decoder_chain_sample, encode_to, encoder_chain_sample, reconstruction_error, Draw};
use crate::latent::reconstruction_set;
use crate::networks::{Ctx, Group, Model, ParamStore};

/// Floor applied inside every logarithm of the adversarial and supervised losses.
pub const LOG_FLOOR: f64 = 1e-7;

/// Streams of the master seed. Initialization uses
/// [`crate::networks::INIT_STREAM`].
pub const TRAIN_STREAM: u64 = 2;
pub const EVAL_STREAM: u64 = 3;

fn mean_log<F: hali_tensor::Element>(g: &mut Graph<F>, p: Var, complement: bool) -> Result<Var> {
    let p = if complement { g.affine(p, -1.0, 1.0) } else { p };
    let l = g.log_clamped(p, LOG_FLOOR);
    Ok(g.mean_all(l)?)
}

/// `-mean(log rho_q) - mean(log(1 - rho_p))`.
pub fn discriminator_loss<F: hali_tensor::Element>(g: &mut Graph<F>, rho_q: Var, rho_p: Var) -> Result<Var> {
    let a = mean_log(g, rho_q, false)?;
    let b = mean_log(g, rho_p, true)?;
    let s = g.add(a, b)?;
    Ok(g.scale(s, -1.0))
}

/// `-mean(log(1 - rho_q)) - mean(log rho_p)`.
pub fn generator_loss<F: hali_tensor::Element>(g: &mut Graph<F>, rho_q: Var, rho_p: Var) -> Result<Var> {
    let a = mean_log(g, rho_q, true)?;
    let b = mean_log(g, rho_p, false)?;
    let s = g.add(a, b)?;
    Ok(g.scale(s, -1.0))
}

/// Mean cross-entropy of class probabilities `[N, K, ...]` against `labels`.
pub fn supervised_loss<F: hali_tensor::Element>(g: &mut Graph<F>, probs: Var, labels: &[usize]) -> Result<Var> {
    let shape = g.shape(probs).to_vec();
    let (n, k) = (shape[0], shape[1]);
    if labels.len() != n {
        return Err(HaliError::Data(format!("{} labels for {n} predictions", labels.len())));
    }
    if let Some(bad) = labels.iter().find(|&&y| y >= k) {
        return Err(HaliError::Data(format!("label {bad} is outside 0..{k}")));
    }
    let per = shape[1..].iter().product::<usize>();
    let onehot = Tensor::from_fn(shape.clone(), |i| {
        let (s, c) = (i / per, i % per);
        if c == labels[s] {
            F::one()
        } else {
            F::zero()
        }
    });
    let onehot = g.constant(onehot);
    let logp = g.log_clamped(probs, LOG_FLOOR);
    let picked = g.mul(onehot, logp)?;
    let per_example = g.sum_per_sample(picked)?;
    let mean = g.mean_all(per_example)?;
    Ok(g.scale(mean, -1.0))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// Bias-corrected Adam step on one buffer; `step` counts from 1.
pub fn adam_update(param: &mut [f32], grad: &[f32], m: &mut [f32], v: &mut [f32], step: u64, h: &AdamHyper) {
    let c1 = 1.0 - h.beta1.powi(step as i32);
    let c2 = 1.0 - h.beta2.powi(step as i32);
    for i in 0..param.len() {
        let g = grad[i] as f64;
        let mi = h.beta1 * m[i] as f64 + (1.0 - h.beta1) * g;
        let vi = h.beta2 * v[i] as f64 + (1.0 - h.beta2) * g * g;
        m[i] = mi as f32;
        v[i] = vi as f32;
        let delta = h.lr * (mi / c1) / ((vi / c2).sqrt() + h.eps);
        param[i] = (param[i] as f64 - delta) as f32;
    }
}

/// Moment buffers for one parameter group.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub hyper: AdamHyper,
    pub step: u64,
    /// Indices into [`ParamStore::params`].
    pub indices: Vec<usize>,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(hyper: AdamHyper, store: &ParamStore, group: Group) -> Adam {
        let indices = store.indices(group);
        let zeros = || indices.iter().map(|&i| vec![0.0; store.params[i].value.numel()]).collect();
        Adam { hyper, step: 0, m: zeros(), v: zeros(), indices }
    }

    /// Apply `grads`, aligned with `indices`.
    pub fn update(&mut self, store: &mut ParamStore, grads: &[Vec<f32>]) {
        self.step += 1;
        for (k, &i) in self.indices.iter().enumerate() {
            adam_update(store.params[i].value.data_mut(), &grads[k], &mut self.m[k], &mut self.v[k], self.step, &self.hyper);
        }
    }
}

/// Held-out evaluation, one entry per level.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalMetrics {
    /// Mean reconstruction error `-log p(x | z_l)`.
    pub recon: Vec<f64>,
    /// Mean pixel MSE of mean-mode reconstructions.
    pub mse: Vec<f64>,
    /// Mean `d_c(x, xhat_l)`.
    pub dc: Vec<f64>,
    /// Fraction of images whose level-1 MSE is below their level-2 MSE.
    pub mse_ordered: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub step: u64,
    pub l_d: f64,
    pub l_g: f64,
    pub l_sup: Option<f64>,
    pub rho_q: f64,
    pub rho_p: f64,
    pub eval: Option<EvalMetrics>,
    /// Not written to the CSV so that reruns compare byte for byte.
    pub wall_secs: f64,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// CSV header for a model with `levels` latent levels.
pub fn csv_header(levels: usize) -> String {
    let mut h = String::from("step,l_d,l_g,l_sup,rho_q,rho_p");
    for what in ["recon", "mse", "dc"] {
        for l in 1..=levels {
            write!(h, ",{what}_{l}").unwrap();
        }
    }
    h.push_str(",mse_ordered");
    h
}

impl MetricsRecord {
    /// One CSV row; floats use the shortest exact representation.
    pub fn csv_row(&self, levels: usize) -> String {
        let mut r = format!("{},{},{},{},{},{}", self.step, self.l_d, self.l_g, opt(self.l_sup), self.rho_q, self.rho_p);
        for k in 0..3 {
            for l in 0..levels {
                let v = self.eval.as_ref().map(|e| [&e.recon, &e.mse, &e.dc][k][l]);
                write!(r, ",{}", opt(v)).unwrap();
            }
        }
        write!(r, ",{}", opt(self.eval.as_ref().map(|e| e.mse_ordered))).unwrap();
        r
    }
}

/// Parse a metrics CSV written with [`csv_header`] and [`MetricsRecord::csv_row`].
pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricsRecord>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| HaliError::Data("empty metrics file".into()))?;
    let cols = header.split(',').count();
    if cols < 7 || (cols - 7) % 3 != 0 || header != csv_header((cols - 7) / 3) {
        return Err(HaliError::Data(format!("unrecognized metrics header `{header}`")));
    }
    let levels = (cols - 7) / 3;
    let num = |s: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(|_| HaliError::Data(format!("bad number `{s}`")))
        }
    };
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != cols {
            return Err(HaliError::Data(format!("row {} has {} fields, expected {cols}", i + 1, f.len())));
        }
        let req = |s: &str| num(s)?.ok_or_else(|| HaliError::Data(format!("row {}: missing value", i + 1)));
        let step = f[0].parse().map_err(|_| HaliError::Data(format!("bad step `{}`", f[0])))?;
        let block = |k: usize| -> Result<Option<Vec<f64>>> {
            let vals: Vec<Option<f64>> = f[6 + k * levels..6 + (k + 1) * levels].iter().map(|s| num(s)).collect::<Result<_>>()?;
            Ok(vals.into_iter().collect())
        };
        let eval = match (block(0)?, block(1)?, block(2)?, num(f[cols - 1])?) {
            (Some(recon), Some(mse), Some(dc), Some(mse_ordered)) => Some(EvalMetrics { recon, mse, dc, mse_ordered }),
            _ => None,
        };
        out.push(MetricsRecord {
            step,
            l_d: req(f[1])?,
            l_g: req(f[2])?,
            l_sup: num(f[3])?,
            rho_q: req(f[4])?,
            rho_p: req(f[5])?,
            eval,
            wall_secs: 0.0,
        });
    }
    Ok(out)
}

/// Training examples plus the labeled subset, as indices into `train`.
#[derive(Clone, Copy, Debug)]
pub struct TrainData<'a> {
    pub train: &'a Dataset,
    pub labeled: Option<&'a [usize]>,
}

/// Model, optimizer state and the sampling stream: everything a checkpoint holds.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub config: Config,
    pub model: Model,
    pub opt_d: Adam,
    pub opt_g: Adam,
    pub opt_c: Adam,
    pub rng: SeededRng,
    pub step: u64,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn finite(what: &str, step: u64, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(HaliError::NonFinite { what: what.into(), step, detail: format!("value {v}") })
    }
}

impl Trainer {
    pub fn new(config: Config) -> Result<Trainer> {
        config.train.validate()?;
        let seed = config.train.seed;
        let model = Model::new(&config.model, seed)?;
        let t = &config.train;
        let hyper = AdamHyper { lr: t.lr, beta1: t.beta1, beta2: t.beta2, eps: t.eps };
        Ok(Trainer {
            opt_d: Adam::new(hyper, &model.store, Group::Discriminator),
            opt_g: Adam::new(hyper, &model.store, Group::Generator),
            opt_c: Adam::new(hyper, &model.store, Group::Classifier),
            rng: SeededRng::new(seed).substream(TRAIN_STREAM),
            step: 0,
            config,
            model,
        })
    }

    pub fn levels(&self) -> usize {
        self.model.levels()
    }

    fn top_shape(&self) -> Shape3 {
        self.config.model.level_shape(self.levels())
    }

    /// One discriminator update on `L_d` and one generator update on `L_g`
    /// (plus `lambda * L_sup` into the encoder and classifier when labels are
    /// given). Both losses come from the same forward pass; each update only
    /// touches its own parameter group.
    pub fn train_step(&mut self, data: TrainData<'_>) -> Result<MetricsRecord> {
        let start = Instant::now();
        let t = self.config.train.clone();
        let levels = self.levels();
        let top = self.top_shape();
        let step = self.step + 1;
        if data.train.is_empty() {
            return Err(HaliError::Data("empty training set".into()));
        }
        let idx: Vec<usize> = (0..t.batch).map(|_| self.rng.below(data.train.len())).collect();
        let x = data.train.gather(&idx);
        let labeled = match data.labeled {
            Some(l) if !l.is_empty() => {
                let li: Vec<usize> = (0..t.labeled_batch).map(|_| l[self.rng.below(l.len())]).collect();
                Some((data.train.gather(&li), li.iter().map(|&i| data.train.labels[i]).collect::<Vec<_>>()))
            }
            _ => None,
        };

        let Trainer { model, rng, opt_d, opt_g, opt_c, .. } = self;
        let Model { config: mc, nets, store } = model;
        let mut ctx = Ctx::<f32>::from_parts(&store.params, &mut store.stats, true, Mode::Train, rng);
        let xv = ctx.constant(&x);
        let enc = encoder_chain_sample(&nets.enc, &mut ctx, xv, mc.enc_noise, Draw::Sample)?;
        let dec = decoder_chain_sample(&nets.dec, &mut ctx, top, None, t.batch, Draw::Sample)?;
        let dq = nets.disc.forward(&mut ctx, enc.x(), enc.latents())?;
        let dp = nets.disc.forward(&mut ctx, dec.x(), dec.latents())?;
        let l_d = discriminator_loss(&mut ctx.g, dq.rho, dp.rho)?;
        let l_g = generator_loss(&mut ctx.g, dq.rho, dp.rho)?;
        let mut g_total = l_g;
        let mut l_sup = None;
        if let Some((xl, labels)) = &labeled {
            let xl = ctx.constant(xl);
            let up = encode_to(&nets.enc, &mut ctx, xl, mc.enc_noise, levels, Draw::Mean, Draw::Mean)?;
            let probs = nets.clf.forward(&mut ctx, up.levels[levels])?;
            let ls = supervised_loss(&mut ctx.g, probs, labels)?;
            let weighted = ctx.g.scale(ls, t.lambda_sup);
            g_total = ctx.g.add(l_g, weighted)?;
            l_sup = Some(ls);
        }

        let scalar = |g: &Graph<f32>, v: Var| g.value(v).data()[0] as f64;
        let ld_val = finite("L_d", step, scalar(&ctx.g, l_d))?;
        let lg_val = finite("L_g", step, scalar(&ctx.g, l_g))?;
        let ls_val = l_sup.map(|v| finite("L_sup", step, scalar(&ctx.g, v))).transpose()?;
        let rho = |g: &Graph<f32>, v: Var| mean(&g.value(v).data().iter().map(|&r| r as f64).collect::<Vec<_>>());
        let (rho_q, rho_p) = (rho(&ctx.g, dq.rho), rho(&ctx.g, dp.rho));

        let grads = |ctx: &mut Ctx<'_, f32>, loss: Var, opt: &Adam| -> Result<Vec<Vec<f32>>> {
            let targets: Vec<Var> = opt.indices.iter().map(|&i| ctx.vars[i]).collect();
            ctx.g.backward_to(loss, &targets)?;
            Ok(targets.iter().map(|&v| ctx.g.grad_or_zeros(v)).collect())
        };
        let gd = grads(&mut ctx, l_d, opt_d)?;
        let gg = grads(&mut ctx, g_total, opt_g)?;
        let gc = if labeled.is_some() { Some(grads(&mut ctx, g_total, opt_c)?) } else { None };
        drop(ctx);
        for (what, gs) in [("discriminator gradient", &gd), ("generator gradient", &gg)] {
            if let Some(i) = gs.iter().position(|g| g.iter().any(|v| !v.is_finite())) {
                return Err(HaliError::NonFinite { what: what.into(), step, detail: format!("parameter {}", store.params[i].name) });
            }
        }
        opt_d.update(store, &gd);
        opt_g.update(store, &gg);
        if let Some(gc) = gc {
            opt_c.update(store, &gc);
        }
        self.step = step;
        Ok(MetricsRecord { step, l_d: ld_val, l_g: lg_val, l_sup: ls_val, rho_q, rho_p, eval: None, wall_secs: start.elapsed().as_secs_f64() })
    }

    /// Held-out reconstruction metrics. Uses a stream derived from the seed and
    /// the current step, so evaluation never perturbs training.
    pub fn evaluate(&self, eval: &Dataset) -> Result<EvalMetrics> {
        let levels = self.levels();
        let mut rng = SeededRng::new(self.config.train.seed).substream(EVAL_STREAM + 16 * self.step);
        let mut recon = vec![0.0; levels];
        let mut mse = vec![Vec::new(); levels];
        let mut dc = vec![Vec::new(); levels];
        let chunk = 64;
        for start in (0..eval.len()).step_by(chunk) {
            let part = eval.range(start, chunk);
            let set = reconstruction_set(&self.model, &part.images, Draw::Mean, &mut rng)?;
            for l in 0..levels {
                mse[l].extend(&set.mse[l]);
                dc[l].extend(&set.dc[l]);
            }
            let mut ctx = Ctx::<f32>::eval(&self.model.store, &mut rng);
            let xv = ctx.constant(&part.images);
            for (l, total) in recon.iter_mut().enumerate() {
                let e = reconstruction_error(&self.model.nets.enc, &self.model.nets.dec, &mut ctx, xv, l + 1, self.config.train.recon_samples, false)?;
                *total += ctx.g.value(e).data().iter().map(|&v| v as f64).sum::<f64>();
            }
        }
        let n = eval.len() as f64;
        let ordered = if levels >= 2 { (0..eval.len()).filter(|&i| mse[0][i] < mse[1][i]).count() as f64 / n } else { 0.0 };
        Ok(EvalMetrics {
            recon: recon.iter().map(|r| r / n).collect(),
            mse: mse.iter().map(|v| mean(v)).collect(),
            dc: dc.iter().map(|v| mean(v)).collect(),
            mse_ordered: ordered,
        })
    }

    /// Predicted classes from the top-level conditional mean code.
    pub fn classify(&self, images: &Tensor<f32>) -> Result<Vec<usize>> {
        classify(&self.model, images)
    }

    /// Train until `config.train.steps`, evaluating on `eval` at the configured
    /// cadence and handing every record to `on_record`.
    pub fn run(
        &mut self,
        data: TrainData<'_>,
        eval: Option<&Dataset>,
        mut on_record: impl FnMut(&Trainer, &MetricsRecord) -> Result<()>,
    ) -> Result<()> {
        let steps = self.config.train.steps as u64;
        let every = self.config.train.eval_every as u64;
        while self.step < steps {
            let mut rec = self.train_step(data)?;
            if let Some(eval) = eval {
                if every > 0 && (rec.step % every == 0 || rec.step == steps) {
                    rec.eval = Some(self.evaluate(eval)?);
                }
            }
            on_record(self, &rec)?;
        }
        Ok(())
    }
}

/// Argmax of the classifier over the top-level conditional mean code.
pub fn classify(model: &Model, images: &Tensor<f32>) -> Result<Vec<usize>> {
    let levels = model.levels();
    let mut out = Vec::with_capacity(images.batch());
    let mut rng = SeededRng::new(0);
    for start in (0..images.batch()).step_by(256) {
        let part = images.slice_batch(start, 256.min(images.batch() - start));
        let mut ctx = Ctx::<f32>::eval(&model.store, &mut rng);
        let xv = ctx.constant(&part);
        let up = encode_to(&model.nets.enc, &mut ctx, xv, 0.0, levels, Draw::Mean, Draw::Mean)?;
        let probs = model.nets.clf.forward(&mut ctx, up.levels[levels])?;
        let p = ctx.g.value(probs);
        for i in 0..p.batch() {
            let row = p.sample(i);
            let best = (0..row.len()).fold(0, |b, k| if row[k] > row[b] { k } else { b });
            out.push(best);
        }
    }
    Ok(out)
}

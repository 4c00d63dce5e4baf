//! Flat `key = value` configuration for models and training runs.
//!
//! Lines are `key = value`; `#` starts a comment. Layer lists use one key per
//! layer, `<network>.<index> = <kind> arg=value ...`, for the networks
//!
//! | key prefix | network |
//! |---|---|
//! | `enc.z1` ... `enc.zL` | encoder kernel producing level `l` from level `l-1` (`z0 = x`) |
//! | `dec.x`, `dec.z1` ... `dec.z(L-1)` | decoder kernel producing that level from the one above |
//! | `disc.0` ... `disc.L` | discriminator stages; stage `l > 0` sees the previous output concatenated with `z_l` |
//! | `clf` | classifier head on `z_L` |
//!
//! Layer kinds: `conv k= s= p= c= norm=none|bn|wn drop= act=`, `res k= norm= drop= act=`,
//! `up f=`, `reshape to=CxHxW`, `gauss tanh=0|1 sigma0=`. Unknown keys are errors.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use hali_tensor::Activation;
use sha2::{Digest, Sha256};

use crate::error::{HaliError, Result};

/// Channel-height-width of one sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape3 {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape3 {
    pub const fn new(c: usize, h: usize, w: usize) -> Self {
        Shape3 { c, h, w }
    }

    pub fn numel(&self) -> usize {
        self.c * self.h * self.w
    }

    /// `[n, c, h, w]`.
    pub fn batch(&self, n: usize) -> Vec<usize> {
        vec![n, self.c, self.h, self.w]
    }
}

impl fmt::Display for Shape3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.h == 1 && self.w == 1 {
            write!(f, "{}", self.c)
        } else {
            write!(f, "{}x{}x{}", self.c, self.h, self.w)
        }
    }
}

impl FromStr for Shape3 {
    type Err = HaliError;
    fn from_str(s: &str) -> Result<Self> {
        let dims: Vec<usize> = s
            .split('x')
            .map(|d| d.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| HaliError::config(format!("bad shape `{s}`")))?;
        let shape = match dims[..] {
            [c] => Shape3::new(c, 1, 1),
            [c, h, w] => Shape3::new(c, h, w),
            _ => return Err(HaliError::config(format!("shape `{s}` must be C or CxHxW"))),
        };
        if shape.numel() == 0 {
            return Err(HaliError::config(format!("shape `{s}` has a zero dimension")));
        }
        Ok(shape)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Norm {
    None,
    Batch,
    Weight,
}

impl FromStr for Norm {
    type Err = HaliError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Norm::None),
            "bn" => Ok(Norm::Batch),
            "wn" => Ok(Norm::Weight),
            _ => Err(HaliError::config(format!("unknown norm `{s}`"))),
        }
    }
}

impl fmt::Display for Norm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Norm::None => "none",
            Norm::Batch => "bn",
            Norm::Weight => "wn",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LayerSpec {
    Conv {
        kernel: usize,
        stride: usize,
        pad: usize,
        channels: usize,
        norm: Norm,
        /// Probability of dropping a unit.
        drop: f64,
        act: Activation,
    },
    /// Two same-padded convolutions with a skip connection: `act(x + n(conv(act(n(conv(x))))))`.
    Res { kernel: usize, norm: Norm, drop: f64, act: Activation },
    Upsample { factor: usize },
    Reshape { to: Shape3 },
    /// Splits `2C` channels into a mean and a raw scale; `sigma = softplus(raw) + floor`.
    Gauss { tanh_mean: bool, sigma0: f64 },
}

fn parse_act(s: &str, slope: f64) -> Result<Activation> {
    let act: Activation = s.parse().map_err(|_| HaliError::config(format!("unknown activation `{s}`")))?;
    Ok(match act {
        Activation::LeakyRelu { .. } => Activation::LeakyRelu { slope },
        other => other,
    })
}

fn fmt_act(a: Activation) -> String {
    a.to_string()
}

impl LayerSpec {
    fn parse(s: &str, slope: f64) -> Result<LayerSpec> {
        let mut parts = s.split_whitespace();
        let kind = parts.next().ok_or_else(|| HaliError::config("empty layer description"))?;
        let mut args = BTreeMap::new();
        for p in parts {
            let (k, v) = p.split_once('=').ok_or_else(|| HaliError::config(format!("layer argument `{p}` is not key=value")))?;
            if args.insert(k.to_string(), v.to_string()).is_some() {
                return Err(HaliError::config(format!("layer argument `{k}` repeated")));
            }
        }
        let mut take = |k: &str| args.remove(k);
        fn num<T: FromStr>(v: Option<String>, key: &str, default: Option<T>) -> Result<T> {
            match v {
                Some(v) => v.parse().map_err(|_| HaliError::config(format!("bad value `{v}` for `{key}`"))),
                None => default.ok_or_else(|| HaliError::config(format!("missing layer argument `{key}`"))),
            }
        }
        let spec = match kind {
            "conv" => {
                let kernel: usize = num(take("k"), "k", None)?;
                let stride = num(take("s"), "s", Some(1))?;
                let pad = match take("p").as_deref() {
                    None => (kernel - 1) / 2,
                    Some("valid") => 0,
                    Some(v) => num(Some(v.to_string()), "p", None)?,
                };
                LayerSpec::Conv {
                    kernel,
                    stride,
                    pad,
                    channels: num(take("c"), "c", None)?,
                    norm: take("norm").as_deref().unwrap_or("none").parse()?,
                    drop: num(take("drop"), "drop", Some(0.0))?,
                    act: parse_act(take("act").as_deref().unwrap_or("lrelu"), slope)?,
                }
            }
            "res" => LayerSpec::Res {
                kernel: num(take("k"), "k", Some(3))?,
                norm: take("norm").as_deref().unwrap_or("bn").parse()?,
                drop: num(take("drop"), "drop", Some(0.0))?,
                act: parse_act(take("act").as_deref().unwrap_or("lrelu"), slope)?,
            },
            "up" => LayerSpec::Upsample { factor: num(take("f"), "f", Some(2))? },
            "reshape" => LayerSpec::Reshape {
                to: take("to").ok_or_else(|| HaliError::config("reshape needs `to`"))?.parse()?,
            },
            "gauss" => LayerSpec::Gauss {
                tanh_mean: num::<u8>(take("tanh"), "tanh", Some(0))? == 1,
                sigma0: num(take("sigma0"), "sigma0", Some(0.5))?,
            },
            other => return Err(HaliError::config(format!("unknown layer kind `{other}`"))),
        };
        if let Some(k) = args.keys().next() {
            return Err(HaliError::config(format!("unknown argument `{k}` for `{kind}`")));
        }
        if let LayerSpec::Conv { drop, .. } | LayerSpec::Res { drop, .. } = spec {
            if !(0.0..1.0).contains(&drop) {
                return Err(HaliError::config(format!("drop probability {drop} outside [0, 1)")));
            }
        }
        if let LayerSpec::Gauss { sigma0, .. } = spec {
            if !(sigma0 > crate::hierarchy::SIGMA_FLOOR) {
                return Err(HaliError::config(format!("sigma0 {sigma0} must exceed the scale floor")));
            }
        }
        Ok(spec)
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            LayerSpec::Conv { kernel, stride, pad, channels, norm, drop, act } => write!(
                f,
                "conv k={kernel} s={stride} p={pad} c={channels} norm={norm} drop={drop} act={}",
                fmt_act(act)
            ),
            LayerSpec::Res { kernel, norm, drop, act } => {
                write!(f, "res k={kernel} norm={norm} drop={drop} act={}", fmt_act(act))
            }
            LayerSpec::Upsample { factor } => write!(f, "up f={factor}"),
            LayerSpec::Reshape { to } => write!(f, "reshape to={}x{}x{}", to.c, to.h, to.w),
            LayerSpec::Gauss { tanh_mean, sigma0 } => write!(f, "gauss tanh={} sigma0={sigma0}", tanh_mean as u8),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetSpec {
    pub name: String,
    pub layers: Vec<LayerSpec>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub name: String,
    pub data: Shape3,
    /// `z_1 ... z_L`.
    pub latents: Vec<Shape3>,
    pub classes: usize,
    pub leaky_slope: f64,
    /// Input noise of the discriminator (train mode only).
    pub disc_noise: f64,
    /// Input noise of the encoder (train mode only).
    pub enc_noise: f64,
    /// `enc[l]` maps level `l` to level `l + 1` (level 0 is `x`).
    pub enc: Vec<NetSpec>,
    /// `dec[l]` maps level `l + 1` to level `l`.
    pub dec: Vec<NetSpec>,
    pub disc: Vec<NetSpec>,
    pub clf: NetSpec,
}

impl ModelConfig {
    pub fn levels(&self) -> usize {
        self.latents.len()
    }

    /// Shape of level `l`, with `l = 0` the data.
    pub fn level_shape(&self, l: usize) -> Shape3 {
        if l == 0 {
            self.data
        } else {
            self.latents[l - 1]
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch: usize,
    pub steps: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lambda_sup: f64,
    pub seed: u64,
    pub checkpoint_every: usize,
    pub eval_every: usize,
    /// Labeled examples per class; 0 trains without labels.
    pub labels_per_class: usize,
    pub labeled_batch: usize,
    /// Training images drawn from the front of the training file.
    pub train_images: usize,
    /// Held-out images used for periodic evaluation.
    pub eval_images: usize,
    /// Monte-Carlo draws per reconstruction-error estimate.
    pub recon_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch: 32,
            steps: 1000,
            lr: 1e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
            lambda_sup: 1.0,
            seed: 0,
            checkpoint_every: 0,
            eval_every: 0,
            labels_per_class: 0,
            labeled_batch: 32,
            train_images: 10_000,
            eval_images: 256,
            recon_samples: 8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch < 2 {
            return Err(HaliError::config("train.batch must be at least 2 for batch statistics"));
        }
        if !(self.lr > 0.0) || !(self.eps > 0.0) {
            return Err(HaliError::config("train.lr and train.eps must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(HaliError::config("Adam betas must lie in [0, 1)"));
        }
        if self.labels_per_class > 0 && self.labeled_batch < 2 {
            return Err(HaliError::config("train.labeled_batch must be at least 2"));
        }
        if self.recon_samples == 0 {
            return Err(HaliError::config("train.recon_samples must be at least 1"));
        }
        Ok(())
    }
}

/// A parsed config file: model plus training settings.
#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| HaliError::config(format!("line {}: expected `key = value`", i + 1)))?;
        let (k, v) = (k.trim().to_string(), v.trim().to_string());
        if map.insert(k.clone(), v).is_some() {
            return Err(HaliError::config(format!("line {}: key `{k}` repeated", i + 1)));
        }
    }
    Ok(map)
}

struct Keys {
    map: BTreeMap<String, String>,
}

impl Keys {
    fn take(&mut self, k: &str) -> Option<String> {
        self.map.remove(k)
    }

    fn req(&mut self, k: &str) -> Result<String> {
        self.take(k).ok_or_else(|| HaliError::config(format!("missing key `{k}`")))
    }

    fn parse<T: FromStr>(&mut self, k: &str, default: T) -> Result<T> {
        match self.take(k) {
            Some(v) => v.parse().map_err(|_| HaliError::config(format!("bad value `{v}` for `{k}`"))),
            None => Ok(default),
        }
    }

    fn net(&mut self, name: &str, slope: f64) -> Result<NetSpec> {
        let prefix = format!("{name}.");
        let mut indexed: Vec<(usize, String)> = Vec::new();
        let keys: Vec<String> = self.map.keys().filter(|k| k.starts_with(&prefix)).cloned().collect();
        for k in keys {
            let rest = &k[prefix.len()..];
            if let Ok(i) = rest.parse::<usize>() {
                indexed.push((i, self.map.remove(&k).unwrap()));
            }
        }
        indexed.sort_by_key(|(i, _)| *i);
        if indexed.is_empty() {
            return Err(HaliError::config(format!("network `{name}` has no layers")));
        }
        for (pos, (i, _)) in indexed.iter().enumerate() {
            if *i != pos {
                return Err(HaliError::config(format!("network `{name}` layer indices must be 0, 1, 2, ...")));
            }
        }
        let layers = indexed
            .into_iter()
            .map(|(i, v)| LayerSpec::parse(&v, slope).map_err(|e| HaliError::config(format!("{name}.{i}: {e}"))))
            .collect::<Result<_>>()?;
        Ok(NetSpec { name: name.to_string(), layers })
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Config> {
        let mut keys = Keys { map: parse_pairs(text)? };
        let slope = keys.parse("leaky.slope", Activation::DEFAULT_LEAKY_SLOPE)?;
        let name = keys.take("name").unwrap_or_else(|| "unnamed".into());
        let data: Shape3 = keys.req("data.shape")?.parse()?;
        let mut latents = Vec::new();
        while let Some(v) = keys.take(&format!("latent.z{}", latents.len() + 1)) {
            latents.push(v.parse::<Shape3>()?);
        }
        if latents.is_empty() {
            return Err(HaliError::config("at least one latent level `latent.z1` is required"));
        }
        let levels = latents.len();
        let level_name = |l: usize| if l == 0 { "x".to_string() } else { format!("z{l}") };
        let enc = (1..=levels).map(|l| keys.net(&format!("enc.{}", level_name(l)), slope)).collect::<Result<_>>()?;
        let dec = (0..levels).map(|l| keys.net(&format!("dec.{}", level_name(l)), slope)).collect::<Result<_>>()?;
        let disc = (0..=levels).map(|l| keys.net(&format!("disc.{l}"), slope)).collect::<Result<_>>()?;
        let model = ModelConfig {
            name,
            data,
            latents,
            classes: keys.parse("classes", 10)?,
            leaky_slope: slope,
            disc_noise: keys.parse("disc.noise", 0.2)?,
            enc_noise: keys.parse("enc.noise", 0.2)?,
            enc,
            dec,
            disc,
            clf: keys.net("clf", slope)?,
        };
        let d = TrainConfig::default();
        let train = TrainConfig {
            batch: keys.parse("train.batch", d.batch)?,
            steps: keys.parse("train.steps", d.steps)?,
            lr: keys.parse("train.lr", d.lr)?,
            beta1: keys.parse("train.beta1", d.beta1)?,
            beta2: keys.parse("train.beta2", d.beta2)?,
            eps: keys.parse("train.eps", d.eps)?,
            lambda_sup: keys.parse("train.lambda_sup", d.lambda_sup)?,
            seed: keys.parse("train.seed", d.seed)?,
            checkpoint_every: keys.parse("train.checkpoint_every", d.checkpoint_every)?,
            eval_every: keys.parse("train.eval_every", d.eval_every)?,
            labels_per_class: keys.parse("train.labels_per_class", d.labels_per_class)?,
            labeled_batch: keys.parse("train.labeled_batch", d.labeled_batch)?,
            train_images: keys.parse("train.train_images", d.train_images)?,
            eval_images: keys.parse("train.eval_images", d.eval_images)?,
            recon_samples: keys.parse("train.recon_samples", d.recon_samples)?,
        };
        if let Some(k) = keys.map.keys().next() {
            return Err(HaliError::config(format!("unknown key `{k}`")));
        }
        train.validate()?;
        let config = Config { model, train };
        crate::networks::validate(&config.model)?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Config> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| HaliError::io(path, e))?;
        Config::parse(&text)
    }

    /// One of the configs shipped with the crate: `mnist-small`, `toy-2d`, `paper-celeba-shapes`.
    pub fn preset(name: &str) -> Result<Config> {
        let text = match name {
            "mnist-small" => include_str!("../../../configs/mnist-small.cfg"),
            "toy-2d" => include_str!("../../../configs/toy-2d.cfg"),
            "paper-celeba-shapes" => include_str!("../../../configs/paper-celeba-shapes.cfg"),
            other => return Err(HaliError::config(format!("no preset named `{other}`"))),
        };
        Config::parse(text)
    }

    /// Canonical text: every key written explicitly, sorted, one per line.
    pub fn canonical(&self) -> String {
        let m = &self.model;
        let t = &self.train;
        let mut lines: Vec<String> = vec![
            format!("name = {}", m.name),
            format!("data.shape = {}x{}x{}", m.data.c, m.data.h, m.data.w),
            format!("classes = {}", m.classes),
            format!("leaky.slope = {}", m.leaky_slope),
            format!("disc.noise = {}", m.disc_noise),
            format!("enc.noise = {}", m.enc_noise),
        ];
        for (i, z) in m.latents.iter().enumerate() {
            lines.push(format!("latent.z{} = {}x{}x{}", i + 1, z.c, z.h, z.w));
        }
        for net in m.enc.iter().chain(&m.dec).chain(&m.disc).chain(std::iter::once(&m.clf)) {
            for (i, l) in net.layers.iter().enumerate() {
                lines.push(format!("{}.{i} = {l}", net.name));
            }
        }
        lines.extend([
            format!("train.batch = {}", t.batch),
            format!("train.steps = {}", t.steps),
            format!("train.lr = {}", t.lr),
            format!("train.beta1 = {}", t.beta1),
            format!("train.beta2 = {}", t.beta2),
            format!("train.eps = {}", t.eps),
            format!("train.lambda_sup = {}", t.lambda_sup),
            format!("train.seed = {}", t.seed),
            format!("train.checkpoint_every = {}", t.checkpoint_every),
            format!("train.eval_every = {}", t.eval_every),
            format!("train.labels_per_class = {}", t.labels_per_class),
            format!("train.labeled_batch = {}", t.labeled_batch),
            format!("train.train_images = {}", t.train_images),
            format!("train.eval_images = {}", t.eval_images),
            format!("train.recon_samples = {}", t.recon_samples),
        ]);
        lines.sort();
        lines.join("\n") + "\n"
    }

    /// SHA-256 of [`Config::canonical`].
    pub fn digest(&self) -> [u8; 32] {
        Sha256::digest(self.canonical().as_bytes()).into()
    }

    /// Digest of the model part only; checkpoints are tied to this.
    pub fn model_digest(&self) -> [u8; 32] {
        let text: String = self.canonical().lines().filter(|l| !l.starts_with("train.")).map(|l| format!("{l}\n")).collect();
        Sha256::digest(text.as_bytes()).into()
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

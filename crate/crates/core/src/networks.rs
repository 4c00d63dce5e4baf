//! Parameter storage and the encoder, decoder, discriminator and classifier
//! networks built from a [`ModelConfig`].

use hali_tensor::{conv_out_dim, Activation, Element, Graph, Mode, RunningStats, SeededRng, Tensor, Var};

use crate::config::{LayerSpec, ModelConfig, NetSpec, Norm, Shape3};
use crate::error::{HaliError, Result};
use crate::hierarchy::SIGMA_FLOOR;

/// Which optimizer owns a parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Group {
    /// Encoder and decoder kernels.
    Generator,
    Discriminator,
    Classifier,
}

impl Group {
    pub fn code(self) -> u8 {
        match self {
            Group::Generator => 0,
            Group::Discriminator => 1,
            Group::Classifier => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<Group> {
        match c {
            0 => Some(Group::Generator),
            1 => Some(Group::Discriminator),
            2 => Some(Group::Classifier),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub group: Group,
    pub value: Tensor<f32>,
}

/// Every learnable tensor plus the batch-norm running statistics.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    pub params: Vec<Param>,
    pub stats: Vec<(String, RunningStats)>,
}

impl ParamStore {
    fn add(&mut self, name: String, group: Group, value: Tensor<f32>) -> usize {
        self.params.push(Param { name, group, value });
        self.params.len() - 1
    }

    fn add_stats(&mut self, name: String, channels: usize) -> usize {
        self.stats.push((name, RunningStats::new(channels)));
        self.stats.len() - 1
    }

    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn count_group(&self, group: Group) -> usize {
        self.params.iter().filter(|p| p.group == group).map(|p| p.value.numel()).sum()
    }

    pub fn indices(&self, group: Group) -> Vec<usize> {
        (0..self.params.len()).filter(|&i| self.params[i].group == group).collect()
    }

    /// Put every parameter on `g`: differentiable leaves when `trainable`,
    /// constants otherwise.
    pub fn bind<F: Element>(&self, g: &mut Graph<F>, trainable: bool) -> Vec<Var> {
        bind(&self.params, g, trainable)
    }
}

/// Batch-norm statistics seen by a forward pass: the model's own (updated in
/// train mode) or a private copy.
pub enum Stats<'a> {
    Shared(&'a mut [(String, RunningStats)]),
    Local(Vec<(String, RunningStats)>),
}

impl Stats<'_> {
    fn get(&mut self, i: usize) -> &mut RunningStats {
        match self {
            Stats::Shared(s) => &mut s[i].1,
            Stats::Local(s) => &mut s[i].1,
        }
    }
}

/// Per-forward state shared by all networks: the graph, the parameters bound
/// on it, batch-norm statistics and the sampling stream.
pub struct Ctx<'a, F: Element> {
    pub g: Graph<F>,
    pub vars: Vec<Var>,
    pub stats: Stats<'a>,
    pub mode: Mode,
    pub rng: &'a mut SeededRng,
}

impl<'a, F: Element> Ctx<'a, F> {
    /// Bind `store` onto a fresh graph. Parameters are differentiable leaves
    /// when `trainable`, constants otherwise.
    pub fn new(store: &'a mut ParamStore, trainable: bool, mode: Mode, rng: &'a mut SeededRng) -> Self {
        Self::from_parts(&store.params, &mut store.stats, trainable, mode, rng)
    }

    /// Same as [`Ctx::new`] with the parameters and statistics borrowed separately.
    pub fn from_parts(params: &[Param], stats: &'a mut [(String, RunningStats)], trainable: bool, mode: Mode, rng: &'a mut SeededRng) -> Self {
        let mut g = Graph::new();
        let vars = bind(params, &mut g, trainable);
        Ctx { g, vars, stats: Stats::Shared(stats), mode, rng }
    }

    /// Eval-mode pass over constant parameters; `store` is left untouched.
    pub fn eval(store: &ParamStore, rng: &'a mut SeededRng) -> Self {
        let mut g = Graph::new();
        let vars = bind(&store.params, &mut g, false);
        Ctx { g, vars, stats: Stats::Local(store.stats.clone()), mode: Mode::Eval, rng }
    }

    /// Wrap a graph whose first leaves are already the parameters, in store
    /// order. Statistics are private to this context.
    pub fn from_graph(g: Graph<F>, vars: Vec<Var>, stats: Vec<(String, RunningStats)>, mode: Mode, rng: &'a mut SeededRng) -> Self {
        Ctx { g, vars, stats: Stats::Local(stats), mode, rng }
    }

    pub fn constant(&mut self, t: &Tensor<f32>) -> Var {
        self.g.constant(t.cast::<F>())
    }

    /// Current value of `v` as `f32`.
    pub fn value_f32(&self, v: Var) -> Tensor<f32> {
        self.g.value(v).cast::<f32>()
    }
}

fn bind<F: Element>(params: &[Param], g: &mut Graph<F>, trainable: bool) -> Vec<Var> {
    params
        .iter()
        .map(|p| {
            let t = p.value.cast::<F>();
            if trainable {
                g.param(t)
            } else {
                g.constant(t)
            }
        })
        .collect()
}

#[derive(Clone, Debug)]
struct ConvUnit {
    w: usize,
    bias: Option<usize>,
    gain: Option<usize>,
    bn: Option<(usize, usize, usize)>,
    stride: usize,
    pad: usize,
}

impl ConvUnit {
    fn forward<F: Element>(&self, ctx: &mut Ctx<'_, F>, x: Var) -> Result<Var> {
        let v = &ctx.vars;
        let w = match self.gain {
            Some(gain) => ctx.g.weight_norm(v[self.w], v[gain])?,
            None => v[self.w],
        };
        let mut y = ctx.g.conv2d(x, w, self.bias.map(|b| v[b]), self.stride, self.pad)?;
        if let Some((gamma, beta, s)) = self.bn {
            y = ctx.g.batch_norm(y, v[gamma], v[beta], ctx.stats.get(s), ctx.mode)?;
        }
        Ok(y)
    }
}

#[derive(Clone, Debug)]
enum Layer {
    Conv { unit: ConvUnit, drop: f64, act: Activation },
    Res { a: ConvUnit, b: ConvUnit, drop: f64, act: Activation },
    Upsample(usize),
    Reshape(Shape3),
    Gauss,
}

/// A compiled layer chain.
#[derive(Clone, Debug)]
pub struct Network {
    pub name: String,
    pub input: Shape3,
    /// Shape after the last layer; for a Gaussian kernel, the latent shape.
    pub output: Shape3,
    shapes: Vec<Shape3>,
    layers: Vec<Layer>,
    tanh_mean: bool,
}

fn dropout<F: Element>(ctx: &mut Ctx<'_, F>, x: Var, drop: f64) -> Result<Var> {
    if drop > 0.0 {
        Ok(ctx.g.dropout(x, 1.0 - drop, ctx.mode, ctx.rng)?)
    } else {
        Ok(x)
    }
}

impl Network {
    pub fn is_gaussian(&self) -> bool {
        matches!(self.layers.last(), Some(Layer::Gauss))
    }

    pub fn tanh_mean(&self) -> bool {
        self.tanh_mean
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    /// Run layers `start..end` on `x`. A trailing Gaussian layer is a no-op here;
    /// see [`crate::hierarchy`] for the mean/scale split.
    pub fn forward_range<F: Element>(&self, ctx: &mut Ctx<'_, F>, x: Var, start: usize, end: usize) -> Result<Var> {
        let mut h = x;
        for layer in &self.layers[start..end] {
            h = match layer {
                Layer::Conv { unit, drop, act } => {
                    let y = unit.forward(ctx, h)?;
                    let y = ctx.g.activation(y, *act);
                    dropout(ctx, y, *drop)?
                }
                Layer::Res { a, b, drop, act } => {
                    let y = a.forward(ctx, h)?;
                    let y = ctx.g.activation(y, *act);
                    let y = b.forward(ctx, y)?;
                    let y = ctx.g.add(y, h)?;
                    let y = ctx.g.activation(y, *act);
                    dropout(ctx, y, *drop)?
                }
                Layer::Upsample(f) => ctx.g.upsample_bilinear(h, *f)?,
                Layer::Reshape(s) => {
                    let n = ctx.g.shape(h)[0];
                    ctx.g.reshape(h, &s.batch(n))?
                }
                Layer::Gauss => h,
            };
        }
        Ok(h)
    }

    /// Full forward pass. For a Gaussian kernel this returns the `2C` raw channels.
    pub fn forward<F: Element>(&self, ctx: &mut Ctx<'_, F>, x: Var) -> Result<Var> {
        self.forward_range(ctx, x, 0, self.layers.len())
    }
}

fn chain_err(net: &str, layer: usize, msg: impl Into<String>) -> HaliError {
    HaliError::config(format!("{net}.{layer}: {}", msg.into()))
}

/// Output shape of each layer, checking that the chain type-checks.
fn infer(spec: &NetSpec, input: Shape3) -> Result<Vec<Shape3>> {
    let mut shapes = Vec::with_capacity(spec.layers.len());
    let mut s = input;
    let n = spec.layers.len();
    for (i, layer) in spec.layers.iter().enumerate() {
        let err = |m: String| chain_err(&spec.name, i, m);
        s = match *layer {
            LayerSpec::Conv { kernel, stride, pad, channels, .. } => {
                if kernel == 0 || stride == 0 || channels == 0 {
                    return Err(err("kernel, stride and channels must be positive".into()));
                }
                let h = conv_out_dim(s.h, kernel, stride, pad);
                let w = conv_out_dim(s.w, kernel, stride, pad);
                match (h, w) {
                    (Some(h), Some(w)) => Shape3::new(channels, h, w),
                    _ => return Err(err(format!("kernel {kernel} does not fit input {s}"))),
                }
            }
            LayerSpec::Res { kernel, .. } => {
                if kernel % 2 == 0 {
                    return Err(err("residual blocks need an odd kernel".into()));
                }
                s
            }
            LayerSpec::Upsample { factor } => {
                if factor < 2 {
                    return Err(err("upsampling factor must be at least 2".into()));
                }
                Shape3::new(s.c, s.h * factor, s.w * factor)
            }
            LayerSpec::Reshape { to } => {
                if to.numel() != s.numel() {
                    return Err(err(format!("cannot reshape {s} ({} values) to {to}", s.numel())));
                }
                to
            }
            LayerSpec::Gauss { .. } => {
                if i + 1 != n {
                    return Err(err("a Gaussian layer must be the last layer".into()));
                }
                if !s.c.is_multiple_of(2) {
                    return Err(err(format!("Gaussian layer needs an even channel count, got {}", s.c)));
                }
                Shape3::new(s.c / 2, s.h, s.w)
            }
        };
        shapes.push(s);
    }
    Ok(shapes)
}

fn expect_gauss(spec: &NetSpec, input: Shape3, target: Shape3) -> Result<()> {
    if !matches!(spec.layers.last(), Some(LayerSpec::Gauss { .. })) {
        return Err(HaliError::config(format!("{} must end with a Gaussian layer", spec.name)));
    }
    let out = *infer(spec, input)?.last().unwrap();
    if out != target {
        return Err(HaliError::config(format!("{} produces {out}, expected {target}", spec.name)));
    }
    Ok(())
}

fn no_gauss(spec: &NetSpec) -> Result<()> {
    if spec.layers.iter().any(|l| matches!(l, LayerSpec::Gauss { .. })) {
        return Err(HaliError::config(format!("{} cannot contain a Gaussian layer", spec.name)));
    }
    Ok(())
}

/// Shape of each discriminator stage output.
fn disc_shapes(m: &ModelConfig) -> Result<Vec<Shape3>> {
    let mut out: Vec<Shape3> = Vec::new();
    let mut input = m.data;
    for (l, spec) in m.disc.iter().enumerate() {
        if l > 0 {
            let z = m.latents[l - 1];
            let prev = out[l - 1];
            if (prev.h, prev.w) != (z.h, z.w) {
                return Err(HaliError::config(format!(
                    "{}: cannot concatenate stage output {prev} with z{l} {z} along channels",
                    spec.name
                )));
            }
            input = Shape3::new(prev.c + z.c, z.h, z.w);
        }
        no_gauss(spec)?;
        out.push(*infer(spec, input)?.last().unwrap());
    }
    Ok(out)
}

/// Check every network's shape chain against the declared data and latent shapes.
pub fn validate(m: &ModelConfig) -> Result<()> {
    let levels = m.levels();
    if levels == 0 || m.enc.len() != levels || m.dec.len() != levels || m.disc.len() != levels + 1 {
        return Err(HaliError::config("network count does not match the number of latent levels"));
    }
    for l in 0..levels {
        expect_gauss(&m.enc[l], m.level_shape(l), m.level_shape(l + 1))?;
        expect_gauss(&m.dec[l], m.level_shape(l + 1), m.level_shape(l))?;
    }
    let last = *disc_shapes(m)?.last().unwrap();
    if last != Shape3::new(1, 1, 1) {
        return Err(HaliError::config(format!("discriminator must end in a single unit, got {last}")));
    }
    match m.disc[levels].layers.last() {
        Some(LayerSpec::Conv { act: Activation::Sigmoid, .. }) => {}
        _ => return Err(HaliError::config("discriminator must end with a sigmoid convolution")),
    }
    if m.disc[levels].layers.len() < 2 {
        return Err(HaliError::config("final discriminator stage needs a penultimate layer for the embedding"));
    }
    no_gauss(&m.clf)?;
    let out = *infer(&m.clf, m.level_shape(levels))?.last().unwrap();
    if out != Shape3::new(m.classes, 1, 1) {
        return Err(HaliError::config(format!("classifier produces {out}, expected {} classes", m.classes)));
    }
    if !matches!(m.clf.layers.last(), Some(LayerSpec::Conv { act: Activation::Softmax, .. })) {
        return Err(HaliError::config("classifier must end with a softmax convolution"));
    }
    Ok(())
}

/// Independent closed-form parameter count of a config.
pub fn expected_param_count(m: &ModelConfig) -> Result<usize> {
    fn conv(cin: usize, cout: usize, k: usize, norm: Norm) -> usize {
        let w = cin * cout * k * k;
        w + match norm {
            Norm::None => cout,
            Norm::Batch => 2 * cout,
            Norm::Weight => 2 * cout,
        }
    }
    fn net(spec: &NetSpec, input: Shape3) -> Result<usize> {
        let shapes = infer(spec, input)?;
        let mut total = 0;
        let mut cin = input.c;
        for (layer, s) in spec.layers.iter().zip(&shapes) {
            total += match *layer {
                LayerSpec::Conv { kernel, channels, norm, .. } => conv(cin, channels, kernel, norm),
                LayerSpec::Res { kernel, norm, .. } => 2 * conv(cin, cin, kernel, norm),
                _ => 0,
            };
            cin = s.c;
        }
        Ok(total)
    }
    let mut total = 0;
    for l in 0..m.levels() {
        total += net(&m.enc[l], m.level_shape(l))?;
        total += net(&m.dec[l], m.level_shape(l + 1))?;
    }
    let shapes = disc_shapes(m)?;
    for (l, spec) in m.disc.iter().enumerate() {
        let input = if l == 0 { m.data } else { Shape3::new(shapes[l - 1].c + m.latents[l - 1].c, m.latents[l - 1].h, m.latents[l - 1].w) };
        total += net(spec, input)?;
    }
    total += net(&m.clf, m.level_shape(m.levels()))?;
    Ok(total)
}

fn gain_sq(act: Activation) -> f64 {
    match act {
        Activation::LeakyRelu { .. } => 2.0,
        _ => 1.0,
    }
}

struct Builder<'a> {
    store: &'a mut ParamStore,
    rng: &'a mut SeededRng,
    group: Group,
}

impl Builder<'_> {
    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, stride: usize, pad: usize, norm: Norm, act: Activation) -> ConvUnit {
        let fan_in = (cin * k * k) as f64;
        let shape = vec![cout, cin, k, k];
        let (std, gain) = match norm {
            // Direction only; its scale is carried by the gain.
            Norm::Weight => (1.0, Some(gain_sq(act).sqrt())),
            _ => ((gain_sq(act) / fan_in).sqrt(), None),
        };
        let n: usize = shape.iter().product();
        let w = Tensor::new(shape, self.rng.normal_vec(n, std)).expect("shape");
        let group = self.group;
        let w = self.store.add(format!("{name}.w"), group, w);
        let gain = gain.map(|g0| self.store.add(format!("{name}.g"), group, Tensor::full([cout], g0 as f32)));
        let (bias, bn) = match norm {
            Norm::Batch => {
                let gamma = self.store.add(format!("{name}.gamma"), group, Tensor::full([cout], 1.0));
                let beta = self.store.add(format!("{name}.beta"), group, Tensor::zeros([cout]));
                let s = self.store.add_stats(format!("{name}.bn"), cout);
                (None, Some((gamma, beta, s)))
            }
            _ => (Some(self.store.add(format!("{name}.b"), group, Tensor::zeros([cout]))), None),
        };
        ConvUnit { w, bias, gain, bn, stride, pad }
    }

    fn network(&mut self, spec: &NetSpec, input: Shape3) -> Result<Network> {
        let shapes = infer(spec, input)?;
        let mut layers = Vec::with_capacity(spec.layers.len());
        let mut cin = input.c;
        let mut tanh_mean = false;
        for (i, (layer, out)) in spec.layers.iter().zip(&shapes).enumerate() {
            let name = format!("{}.{i}", spec.name);
            let built = match *layer {
                LayerSpec::Conv { kernel, stride, pad, channels, norm, drop, act } => Layer::Conv {
                    unit: self.conv(&name, cin, channels, kernel, stride, pad, norm, act),
                    drop,
                    act,
                },
                LayerSpec::Res { kernel, norm, drop, act } => {
                    let pad = (kernel - 1) / 2;
                    let a = self.conv(&format!("{name}.a"), cin, cin, kernel, 1, pad, norm, act);
                    let b = self.conv(&format!("{name}.b"), cin, cin, kernel, 1, pad, norm, act);
                    Layer::Res { a, b, drop, act }
                }
                LayerSpec::Upsample { factor } => Layer::Upsample(factor),
                LayerSpec::Reshape { to } => Layer::Reshape(to),
                LayerSpec::Gauss { tanh_mean: t, sigma0 } => {
                    tanh_mean = t;
                    // Start the scale half at sigma0 when the preceding layer is a plain linear conv.
                    if let Some(Layer::Conv { unit: ConvUnit { bias: Some(b), .. }, act: Activation::Linear, .. }) = layers.last() {
                        let raw = ((sigma0 - SIGMA_FLOOR).exp_m1()).ln() as f32;
                        let bias = &mut self.store.params[*b].value;
                        let c = bias.numel() / 2;
                        bias.data_mut()[c..].iter_mut().for_each(|v| *v = raw);
                    }
                    Layer::Gauss
                }
            };
            layers.push(built);
            cin = out.c;
        }
        Ok(Network { name: spec.name.clone(), input, output: *shapes.last().unwrap(), shapes, layers, tanh_mean })
    }
}

/// The discriminator stages: stage 0 sees `x`, stage `l` sees the previous
/// output concatenated with `z_l`.
#[derive(Clone, Debug)]
pub struct Discriminator {
    pub stages: Vec<Network>,
    pub noise: f64,
}

/// Probability that the tuple came from the encoder, plus the penultimate features.
#[derive(Clone, Copy, Debug)]
pub struct DiscriminatorOutput {
    /// `[N, 1, 1, 1]`.
    pub rho: Var,
    /// `[N, E, 1, 1]`.
    pub embedding: Var,
}

impl Discriminator {
    pub fn embedding_dim(&self) -> usize {
        let last = self.stages.last().unwrap();
        last.shapes[last.layers.len() - 2].c
    }

    /// Forward pass over `(x, z_1, ..., z_L)`. Train mode adds input noise to
    /// `x` and applies the configured dropout.
    pub fn forward<F: Element>(&self, ctx: &mut Ctx<'_, F>, x: Var, zs: &[Var]) -> Result<DiscriminatorOutput> {
        assert_eq!(zs.len() + 1, self.stages.len(), "one latent per discriminator stage after the first");
        let mut h = if self.noise > 0.0 { ctx.g.gaussian_noise(x, self.noise, ctx.mode, ctx.rng)? } else { x };
        let last = self.stages.len() - 1;
        for (l, stage) in self.stages.iter().enumerate() {
            if l > 0 {
                h = ctx.g.concat_channels(&[h, zs[l - 1]])?;
            }
            if l < last {
                h = stage.forward(ctx, h)?;
            }
        }
        let stage = &self.stages[last];
        let embedding = stage.forward_range(ctx, h, 0, stage.len() - 1)?;
        let rho = stage.forward_range(ctx, embedding, stage.len() - 1, stage.len())?;
        Ok(DiscriminatorOutput { rho, embedding })
    }
}

/// All networks of one model.
#[derive(Clone, Debug)]
pub struct Networks {
    /// `enc[l]`: level `l` to level `l + 1`.
    pub enc: Vec<Network>,
    /// `dec[l]`: level `l + 1` to level `l`.
    pub dec: Vec<Network>,
    pub disc: Discriminator,
    pub clf: Network,
}

/// Build every network with fresh parameters. Two builds from the same seed are bit-identical.
pub fn build_networks(m: &ModelConfig, rng: &mut SeededRng) -> Result<(Networks, ParamStore)> {
    validate(m)?;
    let mut store = ParamStore::default();
    let mut b = Builder { store: &mut store, rng, group: Group::Generator };
    let mut enc = Vec::new();
    let mut dec = Vec::new();
    for l in 0..m.levels() {
        enc.push(b.network(&m.enc[l], m.level_shape(l))?);
    }
    for l in 0..m.levels() {
        dec.push(b.network(&m.dec[l], m.level_shape(l + 1))?);
    }
    b.group = Group::Discriminator;
    let shapes = disc_shapes(m)?;
    let mut stages = Vec::new();
    for (l, spec) in m.disc.iter().enumerate() {
        let input = if l == 0 {
            m.data
        } else {
            let z = m.latents[l - 1];
            Shape3::new(shapes[l - 1].c + z.c, z.h, z.w)
        };
        stages.push(b.network(spec, input)?);
    }
    b.group = Group::Classifier;
    let clf = b.network(&m.clf, m.level_shape(m.levels()))?;
    let nets = Networks { enc, dec, disc: Discriminator { stages, noise: m.disc_noise }, clf };
    Ok((nets, store))
}

/// Class probabilities `[N, K, 1, 1]` from a top-level code.
pub fn classifier_forward<F: Element>(clf: &Network, ctx: &mut Ctx<'_, F>, z: Var) -> Result<Var> {
    clf.forward(ctx, z)
}

/// Stream of the master seed reserved for parameter initialization.
pub const INIT_STREAM: u64 = 1;

/// Networks together with their parameters.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub nets: Networks,
    pub store: ParamStore,
}

impl Model {
    /// Fresh model; initialization draws from its own substream of `seed`.
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Model> {
        let mut rng = SeededRng::new(seed).substream(INIT_STREAM);
        let (nets, store) = build_networks(config, &mut rng)?;
        Ok(Model { config: config.clone(), nets, store })
    }

    pub fn levels(&self) -> usize {
        self.nets.enc.len()
    }
}

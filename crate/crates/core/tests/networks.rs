//! Network construction, parameter accounting and forward-pass contracts.

use hali::networks::{classifier_forward, expected_param_count, Group};
use hali::trainer::supervised_loss;
use hali::{Config, Ctx, Model, SIGMA_FLOOR};
use hali_tensor::gradcheck::{check_gradients, GradCheckOptions};
use hali_tensor::{Activation, Graph, Mode, SeededRng, Tensor};

const PRESETS: [&str; 3] = ["mnist-small", "toy-2d", "paper-celeba-shapes"];

fn tiny() -> Config {
    Config::parse(hali::gradsuite::TINY_CONFIG).unwrap()
}

#[test]
fn parameter_count_matches_closed_form() {
    let mut configs: Vec<Config> = PRESETS.iter().map(|p| Config::preset(p).unwrap()).collect();
    configs.push(tiny());
    for cfg in configs {
        let model = Model::new(&cfg.model, 0).unwrap();
        let expected = expected_param_count(&cfg.model).unwrap();
        assert_eq!(model.store.count(), expected, "{}", cfg.model.name);
        let groups: usize = [Group::Generator, Group::Discriminator, Group::Classifier].iter().map(|&g| model.store.count_group(g)).sum();
        assert_eq!(groups, expected);
    }
}

#[test]
fn mnist_small_has_the_documented_latent_shapes() {
    let cfg = Config::preset("mnist-small").unwrap();
    assert_eq!(cfg.model.level_shape(0).to_string(), "1x28x28");
    assert_eq!(cfg.model.level_shape(1).to_string(), "16x7x7");
    assert_eq!(cfg.model.level_shape(2).to_string(), "64");
    let model = Model::new(&cfg.model, 0).unwrap();
    assert_eq!(model.nets.disc.embedding_dim(), 256);
}

#[test]
fn builds_are_deterministic_per_seed() {
    let cfg = Config::preset("mnist-small").unwrap();
    let a = Model::new(&cfg.model, 5).unwrap();
    let b = Model::new(&cfg.model, 5).unwrap();
    let c = Model::new(&cfg.model, 6).unwrap();
    let bytes = |m: &Model| m.store.params.iter().flat_map(|p| p.value.data().iter().map(|v| v.to_bits())).collect::<Vec<_>>();
    assert_eq!(bytes(&a), bytes(&b));
    assert_ne!(bytes(&a), bytes(&c));
}

#[test]
fn fan_in_initialization_statistics() {
    let cfg = Config::preset("mnist-small").unwrap();
    let model = Model::new(&cfg.model, 1).unwrap();
    // dec.z1.0: 1x1 conv 64 -> 1568 with batch norm and leaky ReLU, so variance 2 / 64.
    let w = &model.store.params.iter().find(|p| p.name == "dec.z1.0.w").unwrap().value;
    assert_eq!(w.shape(), &[1568, 64, 1, 1]);
    let n = w.numel() as f64;
    let mean = w.data().iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = w.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    assert!(mean.abs() < 0.005, "{mean}");
    assert!((var / (2.0 / 64.0) - 1.0).abs() < 0.02, "{var}");
    for p in &model.store.params {
        if p.name.ends_with(".gamma") {
            assert!(p.value.data().iter().all(|&v| v == 1.0));
        }
        if p.name.ends_with(".beta") {
            assert!(p.value.data().iter().all(|&v| v == 0.0));
        }
    }
}

#[test]
fn scale_bias_starts_at_sigma0() {
    let model = Model::new(&Config::preset("mnist-small").unwrap().model, 2).unwrap();
    for (name, sigma0) in [("enc.z1.4.b", 0.5), ("dec.x.5.b", 0.1)] {
        let b = &model.store.params.iter().find(|p| p.name == name).unwrap().value;
        let c = b.numel() / 2;
        assert!(b.data()[..c].iter().all(|&v| v == 0.0));
        for &raw in &b.data()[c..] {
            let sigma = (raw as f64).exp().ln_1p() + SIGMA_FLOOR;
            assert!((sigma - sigma0).abs() < 1e-6, "{name}: {sigma}");
        }
    }
}

#[test]
fn every_preset_runs_all_four_networks_with_declared_shapes() {
    for name in PRESETS {
        let cfg = Config::preset(name).unwrap();
        let m = Model::new(&cfg.model, 0).unwrap();
        let mut rng = SeededRng::new(0);
        let mut ctx = Ctx::<f32>::eval(&m.store, &mut rng);
        let n = 1;
        let levels = m.levels();
        let mut zs = Vec::new();
        for l in 0..=levels {
            let shape = cfg.model.level_shape(l).batch(n);
            zs.push(ctx.g.constant(Tensor::full(shape, 0.1)));
        }
        for l in 0..levels {
            let up = m.nets.enc[l].forward(&mut ctx, zs[l]).unwrap();
            let s = cfg.model.level_shape(l + 1);
            assert_eq!(ctx.g.shape(up), &[n, 2 * s.c, s.h, s.w], "{name} enc {l}");
            let down = m.nets.dec[l].forward(&mut ctx, zs[l + 1]).unwrap();
            let s = cfg.model.level_shape(l);
            assert_eq!(ctx.g.shape(down), &[n, 2 * s.c, s.h, s.w], "{name} dec {l}");
        }
        let d = m.nets.disc.forward(&mut ctx, zs[0], &zs[1..]).unwrap();
        assert_eq!(ctx.g.shape(d.rho), &[n, 1, 1, 1]);
        assert_eq!(ctx.g.shape(d.embedding), &[n, m.nets.disc.embedding_dim(), 1, 1]);
        let p = classifier_forward(&m.nets.clf, &mut ctx, zs[levels]).unwrap();
        assert_eq!(ctx.g.shape(p), &[n, cfg.model.classes, 1, 1]);
    }
}

#[test]
fn shape_errors_name_the_layer() {
    let bad = hali::gradsuite::TINY_CONFIG.replace("enc.z2.1 = res k=1 norm=bn", "enc.z2.1 = up f=2");
    let err = Config::parse(&bad).unwrap_err().to_string();
    assert!(err.contains("enc.z2"), "{err}");
}

fn disc_inputs(m: &Model, ctx: &mut Ctx<'_, f32>, n: usize, seed: u64) -> (hali_tensor::Var, Vec<hali_tensor::Var>) {
    let mut rng = SeededRng::new(seed);
    let mut make = |l: usize| {
        let shape = m.config.level_shape(l).batch(n);
        let len = shape.iter().product();
        ctx.g.constant(Tensor::new(shape, rng.normal_vec(len, 1.0)).unwrap())
    };
    let vals: Vec<_> = (0..=m.levels()).map(&mut make).collect();
    (vals[0], vals[1..].to_vec())
}

#[test]
fn discriminator_probabilities_and_eval_determinism() {
    let m = Model::new(&tiny().model, 3).unwrap();
    let run = |mode: Mode, seed: u64| {
        let mut rng = SeededRng::new(seed);
        let mut ctx = Ctx::<f32>::eval(&m.store, &mut rng);
        ctx.mode = mode;
        let (x, zs) = disc_inputs(&m, &mut ctx, 16, 4);
        let d = m.nets.disc.forward(&mut ctx, x, &zs).unwrap();
        (ctx.value_f32(d.rho), ctx.value_f32(d.embedding))
    };
    let (rho, emb) = run(Mode::Eval, 1);
    assert!(rho.data().iter().all(|&r| r > 0.0 && r < 1.0));
    assert_eq!((rho.clone(), emb.clone()), run(Mode::Eval, 2));
    assert_ne!(rho, run(Mode::Train, 1).0);
}

#[test]
fn discriminator_input_noise_has_the_configured_std() {
    for name in PRESETS {
        assert_eq!(Model::new(&Config::preset(name).unwrap().model, 0).unwrap().nets.disc.noise, 0.2, "{name}");
    }
    let m = Model::new(&tiny().model, 0).unwrap();
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::zeros([2000, 1, 4, 4]));
    let mut rng = SeededRng::new(5);
    let noisy = g.gaussian_noise(x, m.nets.disc.noise, Mode::Train, &mut rng).unwrap();
    let v = g.value(noisy).data();
    let std = (v.iter().map(|a| a * a).sum::<f64>() / v.len() as f64).sqrt();
    assert!((std - 0.2).abs() < 0.002, "{std}");
    let quiet = g.gaussian_noise(x, m.nets.disc.noise, Mode::Eval, &mut rng).unwrap();
    assert!(g.value(quiet).data().iter().all(|&a| a == 0.0));
}

#[test]
fn classifier_outputs_probabilities() {
    let mut m = Model::new(&Config::preset("mnist-small").unwrap().model, 4).unwrap();
    let mut rng = SeededRng::new(6);
    let z = Tensor::new(vec![8, 64, 1, 1], rng.normal_vec(512, 1.0)).unwrap();
    {
        let mut ctx = Ctx::<f64>::eval(&m.store, &mut rng);
        let zv = ctx.constant(&z);
        let p = classifier_forward(&m.nets.clf, &mut ctx, zv).unwrap();
        for i in 0..8 {
            let s: f64 = ctx.g.value(p).sample(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }
    for p in m.store.params.iter_mut().filter(|p| p.group == Group::Classifier) {
        p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let mut ctx = Ctx::<f64>::eval(&m.store, &mut rng);
    let zv = ctx.constant(&z);
    let p = classifier_forward(&m.nets.clf, &mut ctx, zv).unwrap();
    assert!(ctx.g.value(p).data().iter().all(|&v| (v - 0.1).abs() < 1e-12));
}

#[test]
fn cross_entropy_gradient_is_p_minus_onehot() {
    let labels = [2usize, 0, 1];
    let mut rng = SeededRng::new(7);
    let logits = Tensor::new(vec![3, 4], rng.normal_vec(12, 1.0)).unwrap();
    let mut g = Graph::<f64>::new();
    let l = g.param(logits.clone());
    let p = g.activation(l, Activation::Softmax);
    let loss = supervised_loss(&mut g, p, &labels).unwrap();
    g.backward(loss).unwrap();
    let probs = g.value(p).data().to_vec();
    let grad = g.grad(l).unwrap();
    for i in 0..3 {
        for k in 0..4 {
            let expected = (probs[i * 4 + k] - f64::from(u8::from(k == labels[i]))) / 3.0;
            assert!((grad[i * 4 + k] - expected).abs() < 1e-12);
        }
    }
    let report = check_gradients(
        &[logits],
        |g, v| {
            let p = g.activation(v[0], Activation::Softmax);
            supervised_loss(g, p, &labels).map_err(|e| hali_tensor::TensorError::Argument { op: "test", msg: e.to_string() })
        },
        GradCheckOptions::default(),
    )
    .unwrap();
    assert!(report.passed(), "{report:?}");
}

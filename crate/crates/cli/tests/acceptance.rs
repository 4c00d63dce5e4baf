//! Acceptance criteria, one PASS/FAIL line each.
//!
//! The training criteria read MNIST from `$HALI_DATA_DIR`, falling back to
//! `data/mnist` at the workspace root.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use hali::latent::{dc_distance, inpaint, innovation_edit, reconstruct_at_level, reconstruction_set, rect_mask};
use hali::trainer::{discriminator_loss, generator_loss, parse_metrics_csv, supervised_loss, MetricsRecord};
use hali::{checkpoint, Config, Draw, Model};
use hali_cli::data::{load_for_config, DATA_DIR_ENV, TRAIN_IMAGES};
use hali_cli::report::SemisupReport;
use hali_cli::{run_command_io, DatasetHandle};
use hali_oracle::{chain_suite, monotonicity_suite, reconstruction_suite, SuiteLine};
use hali_tensor::{Graph, SeededRng, Tensor};

const SEED: u64 = 7;

struct Outcome {
    id: &'static str,
    pass: bool,
    detail: String,
}

struct Runner {
    outcomes: Vec<Outcome>,
}

impl Runner {
    fn record(&mut self, id: &'static str, pass: bool, detail: String) {
        println!("{} {id:<4} {detail}", if pass { "PASS" } else { "FAIL" });
        self.outcomes.push(Outcome { id, pass, detail });
    }
}

fn secs(d: Duration) -> String {
    format!("{:.2}s", d.as_secs_f64())
}

fn suite_outcome(lines: &[SuiteLine], elapsed: Duration, limit: f64, expect_trials: usize) -> (bool, String) {
    let failed: Vec<&str> = lines.iter().filter(|l| !l.passed()).map(|l| l.name.as_str()).collect();
    let checked: usize = lines.iter().map(|l| l.trials).sum();
    let short: Vec<&str> = lines.iter().filter(|l| l.trials < expect_trials).map(|l| l.name.as_str()).collect();
    // Worked-pair values are compared to published figures; their signed margin is a rounding offset, not slack.
    let worst = lines.iter().filter(|l| !is_reference(l)).map(|l| l.margin).fold(f64::INFINITY, f64::min);
    let pass = failed.is_empty() && short.is_empty() && elapsed.as_secs_f64() < limit;
    let mut detail = format!("{} checks, {checked} comparisons, worst inequality margin {worst:.3e}, {} (limit {limit}s)", lines.len(), secs(elapsed));
    if !failed.is_empty() {
        detail += &format!("; violated: {}", failed.join(", "));
    }
    if !short.is_empty() {
        detail += &format!("; too few trials: {}", short.join(", "));
    }
    (pass, detail)
}

fn is_reference(l: &SuiteLine) -> bool {
    l.name.starts_with("worked/") && !l.name.contains("<=")
}

fn theory(r: &mut Runner) {
    let t = Instant::now();
    match monotonicity_suite(1000, SEED) {
        Ok(lines) => {
            let (pass, detail) = suite_outcome(&lines, t.elapsed(), 10.0, 1000);
            let shapes = ["2x2", "3x4", "2x3x2"].iter().all(|s| ["kl", "chi2", "js"].iter().all(|g| lines.iter().any(|l| l.name == format!("monotonicity/{s}/{g}"))));
            r.record("1", pass && shapes, detail);
        }
        Err(e) => r.record("1", false, e.to_string()),
    }

    let t = Instant::now();
    match chain_suite(1000, SEED) {
        Ok(lines) => {
            let (pass, mut detail) = suite_outcome(&lines, t.elapsed(), 10.0, 1);
            let worked: Vec<String> = lines.iter().filter(|l| is_reference(l)).map(|l| format!("{}={:.5} (published {})", &l.name[7..], l.statistic, l.bound)).collect();
            let chain_trials = lines.iter().filter(|l| l.name.starts_with("chain/")).all(|l| l.trials == 1000);
            detail += &format!("; worked pair {}", worked.join(" "));
            r.record("2", pass && chain_trials && worked.len() == 4, detail);
        }
        Err(e) => r.record("2", false, e.to_string()),
    }

    let t = Instant::now();
    match reconstruction_suite(500, SEED) {
        Ok(lines) => {
            let (pass, detail) = suite_outcome(&lines, t.elapsed(), 30.0, 500);
            r.record("3", pass, detail);
        }
        Err(e) => r.record("3", false, e.to_string()),
    }
}

fn gradients(r: &mut Runner) {
    let t = Instant::now();
    match hali::gradsuite::run(0) {
        Ok(suite) => {
            let elapsed = t.elapsed();
            let worst = suite.iter().map(|(_, rep)| rep.max_rel_error).fold(0.0, f64::max);
            let failed: Vec<&str> = suite.iter().filter(|(_, rep)| !rep.passed()).map(|(n, _)| n.as_str()).collect();
            let pass = failed.is_empty() && worst < 1e-3 && elapsed.as_secs_f64() < 60.0;
            let mut detail = format!("{} cases, max relative error {worst:.3e} (limit 1e-3), {} (limit 60s)", suite.len(), secs(elapsed));
            if !failed.is_empty() {
                detail += &format!("; failed: {}", failed.join(", "));
            }
            r.record("4", pass, detail);
        }
        Err(e) => r.record("4", false, e.to_string()),
    }
}

fn loss_identities(r: &mut Runner) {
    let mut g = Graph::<f64>::new();
    let half = g.constant(Tensor::full([16, 1, 1, 1], 0.5));
    let uniform = g.constant(Tensor::full([16, 10, 1, 1], 0.1));
    let labels: Vec<usize> = (0..16).map(|i| i % 10).collect();
    let values = discriminator_loss(&mut g, half, half)
        .and_then(|d| Ok((d, generator_loss(&mut g, half, half)?)))
        .and_then(|(d, gl)| Ok((d, gl, supervised_loss(&mut g, uniform, &labels)?)));
    match values {
        Ok((d, gl, s)) => {
            let (d, gl, s) = (g.value(d).data()[0], g.value(gl).data()[0], g.value(s).data()[0]);
            let two_ln2 = 2.0 * std::f64::consts::LN_2;
            let pass = (d - two_ln2).abs() < 1e-6 && (gl - two_ln2).abs() < 1e-6 && (s - 10f64.ln()).abs() < 1e-6;
            r.record("5", pass, format!("L_d={d:.9} L_g={gl:.9} (2 ln 2 = {two_ln2:.9}), L_sup={s:.9} (ln 10 = {:.9}), tolerance 1e-6", 10f64.ln()));
        }
        Err(e) => r.record("5", false, e.to_string()),
    }
}

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn data_root() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| workspace_root().join("data/mnist"))
}

fn hali(args: &[&str]) -> Result<String, String> {
    let argv: Vec<String> = std::iter::once("hali").chain(args.iter().copied()).map(String::from).collect();
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run_command_io(&argv, &mut out, &mut err);
    if code == 0 {
        Ok(String::from_utf8_lossy(&out).into_owned())
    } else {
        Err(format!("`hali {}` exited with {code}: {}", args.join(" "), String::from_utf8_lossy(&err).trim()))
    }
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn train(config: &Path, out: &Path, data: &Path, extra: &[&str]) -> Result<Duration, String> {
    let t = Instant::now();
    let mut args = vec!["train", "--config", s(config), "--out", s(out), "--data", s(data)];
    args.extend_from_slice(extra);
    hali(&args)?;
    Ok(t.elapsed())
}

fn read(p: &Path) -> Result<Vec<u8>, String> {
    std::fs::read(p).map_err(|e| format!("{}: {e}", p.display()))
}

fn metrics(dir: &Path) -> Result<Vec<MetricsRecord>, String> {
    let text = String::from_utf8(read(&dir.join("metrics.csv"))?).map_err(|e| e.to_string())?;
    parse_metrics_csv(&text).map_err(|e| e.to_string())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn load_model(p: &Path) -> Result<Model, String> {
    checkpoint::load_model(p).map_err(|e| format!("{}: {e}", p.display()))
}

/// Mean held-out `d_c(x, xhat_l)` over images and levels.
fn mean_dc(model: &Model, data: &DatasetHandle) -> Result<f64, String> {
    let set = reconstruction_set(model, &data.val.images, Draw::Mean, &mut SeededRng::new(0)).map_err(|e| e.to_string())?;
    Ok(mean(&set.dc.concat()))
}

fn training(r: &mut Runner) {
    let data = data_root();
    if !data.join(TRAIN_IMAGES).is_file() {
        let why = format!("MNIST not found at {} (set {DATA_DIR_ENV})", data.display());
        for id in ["6", "6a", "6b", "6c", "7", "8a", "8b", "9a", "9b", "9c", "9d"] {
            r.record(id, false, why.clone());
        }
        return;
    }
    let config_path = workspace_root().join("configs/mnist-small.cfg");
    let config = match Config::load(&config_path) {
        Ok(c) => c,
        Err(e) => return r.record("6", false, e.to_string()),
    };
    let handle = match load_for_config(&config, &data) {
        Ok(h) => h,
        Err(e) => return r.record("6", false, e.to_string()),
    };
    let tmp = tempfile::tempdir().expect("tempdir");
    let run = tmp.path().join("run");
    let steps = config.train.steps as u64;

    match train(&config_path, &run, &data, &[]) {
        Ok(elapsed) => r.record(
            "6",
            elapsed.as_secs_f64() <= 1800.0,
            format!(
                "{steps} steps on {} training images in {} on {} core(s) (limit 30 min on 4 cores)",
                handle.train.len(),
                secs(elapsed),
                std::thread::available_parallelism().map_or(1, |n| n.get())
            ),
        ),
        Err(e) => {
            r.record("6", false, e);
            return;
        }
    }

    match metrics(&run) {
        Ok(rows) => {
            let tail: Vec<&MetricsRecord> = rows.iter().filter(|m| m.step * 5 > steps * 4).collect();
            let q = mean(&tail.iter().map(|m| m.rho_q).collect::<Vec<_>>());
            let p = mean(&tail.iter().map(|m| m.rho_p).collect::<Vec<_>>());
            let inside = |v: f64| v > 0.1 && v < 0.9;
            r.record("6a", inside(q) && inside(p), format!("final 20% ({} steps): mean rho_q {q:.4}, mean rho_p {p:.4}, required in (0.1, 0.9)", tail.len()));
        }
        Err(e) => r.record("6a", false, e),
    }

    let final_ckpt = run.join("final.hali");
    let early_ckpt = run.join("checkpoints").join(format!("step-{:06}.hali", steps / 10));
    match load_model(&final_ckpt) {
        Ok(model) => {
            match reconstruction_set(&model, &handle.val.images, Draw::Mean, &mut SeededRng::new(0)) {
                Ok(set) => {
                    let n = handle.val.len();
                    let ordered = (0..n).filter(|&i| set.mse[0][i] < set.mse[1][i]).count();
                    let frac = ordered as f64 / n as f64;
                    r.record(
                        "6b",
                        frac >= 0.9,
                        format!(
                            "level-1 MSE < level-2 MSE on {ordered}/{n} held-out images ({:.1}%, required >= 90%); mean MSE {:.4} vs {:.4}",
                            100.0 * frac,
                            mean(&set.mse[0]),
                            mean(&set.mse[1])
                        ),
                    );
                }
                Err(e) => r.record("6b", false, e.to_string()),
            }
            match load_model(&early_ckpt).and_then(|early| Ok((mean_dc(&early, &handle)?, mean_dc(&model, &handle)?))) {
                Ok((early, late)) => r.record("6c", late < early, format!("held-out mean d_c {early:.4} at step {} -> {late:.4} at step {steps}", steps / 10)),
                Err(e) => r.record("6c", false, e),
            }
            latent_ops(r, &model, &handle);
        }
        Err(e) => {
            for id in ["6b", "6c", "9a", "9b", "9c", "9d"] {
                r.record(id, false, e.clone());
            }
        }
    }

    match read(&run.join("semisup.txt")).and_then(|b| SemisupReport::parse(&String::from_utf8_lossy(&b)).map_err(|e| e.to_string())) {
        Ok(rep) => r.record(
            "7",
            rep.error_rate() <= 0.15 && rep.labels == 100,
            format!("{} labels: {} / {} test errors ({:.2}%, required <= 15%)", rep.labels, rep.errors, rep.total, 100.0 * rep.error_rate()),
        ),
        Err(e) => r.record("7", false, e),
    }

    determinism(r, &config_path, &data, &run, steps);
}

fn determinism(r: &mut Runner, config: &Path, data: &Path, run: &Path, steps: u64) {
    let tmp = tempfile::tempdir().expect("tempdir");
    let short = (steps / 5).to_string();
    let (b, c) = (tmp.path().join("b"), tmp.path().join("c"));
    let outcome = train(config, &b, data, &["--steps", &short])
        .and_then(|_| train(config, &c, data, &["--steps", &short]))
        .and_then(|_| Ok((read(&b.join("metrics.csv"))?, read(&c.join("metrics.csv"))?, read(&run.join("metrics.csv"))?)));
    match outcome {
        Ok((mb, mc, full)) => r.record(
            "8a",
            mb == mc && full.starts_with(&mb),
            format!(
                "two {short}-step runs: metrics.csv {} ({} bytes); prefix of the {steps}-step run {}",
                if mb == mc { "byte-identical" } else { "DIFFER" },
                mb.len(),
                if full.starts_with(&mb) { "identical" } else { "DIFFERS" }
            ),
        ),
        Err(e) => r.record("8a", false, e),
    }

    let resume_at = steps - steps / 10;
    let ckpt = run.join("checkpoints").join(format!("step-{resume_at:06}.hali"));
    let d = tmp.path().join("d");
    let outcome = train(config, &d, data, &["--resume", s(&ckpt)]).and_then(|_| {
        let same = |name: &str| -> Result<bool, String> { Ok(read(&run.join(name))? == read(&d.join(name))?) };
        Ok((same("metrics.csv")?, same("final.hali")?))
    });
    match outcome {
        Ok((csv, model)) => r.record(
            "8b",
            csv && model,
            format!(
                "resumed at step {resume_at}: metrics.csv {}, final.hali {}",
                if csv { "byte-identical" } else { "DIFFERS" },
                if model { "byte-identical" } else { "DIFFERS" }
            ),
        ),
        Err(e) => r.record("8b", false, e),
    }
}

fn latent_ops(r: &mut Runner, model: &Model, data: &DatasetHandle) {
    let x = data.test.images.slice_batch(0, 100);
    let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();

    let identity = innovation_edit(model, &x, 0, 1.0, Draw::Mean, &mut SeededRng::new(0))
        .and_then(|e| Ok((e, reconstruct_at_level(model, &x, 1, Draw::Mean, &mut SeededRng::new(0))?)));
    match identity {
        Ok((edit, plain)) => {
            let zero = edit.eta.data().iter().all(|&v| v == 0.0);
            let same = bits(&edit.image) == bits(&plain);
            r.record("9a", zero && same, format!("alpha=1 on 100 test images: eta all zero {zero}, image equals level-1 reconstruction bitwise {same}"));
        }
        Err(e) => r.record("9a", false, e.to_string()),
    }

    let inpainted = rect_mask(x.shape(), 10, 10, 8, 8).and_then(|m| Ok((inpaint(model, &x, &m, 5, Draw::Mean, &mut SeededRng::new(0))?, m)));
    match inpainted {
        Ok((steps, mask)) => {
            let preserved = steps.iter().all(|c| c.data().iter().zip(x.data()).zip(mask.data()).all(|((&a, &b), &m)| m == 0.0 || a.to_bits() == b.to_bits()));
            r.record("9b", preserved, format!("centered 8x8 hole, {} iterations on 100 test images: observed pixels preserved exactly {preserved}", steps.len()));
            let hidden_mse = |t: &Tensor<f32>, i: usize| {
                let (a, b, m) = (t.sample(i), x.sample(i), mask.sample(i));
                let (sum, n) = a.iter().zip(b).zip(m).filter(|(_, &m)| m == 0.0).fold((0.0, 0), |(s, n), ((&a, &b), _)| (s + ((a - b) as f64).powi(2), n + 1));
                sum / n as f64
            };
            let last = steps.last().expect("at least one iteration");
            let better = (0..x.batch()).filter(|&i| hidden_mse(last, i) < hidden_mse(&steps[0], i)).count();
            r.record("9d", better * 10 >= x.batch() * 7, format!("hidden-region MSE lower at the final iteration than at the first on {better}/{} images (required >= 70%)", x.batch()));
        }
        Err(e) => {
            r.record("9b", false, e.to_string());
            r.record("9d", false, e.to_string());
        }
    }

    let triples = (data.test.images.slice_batch(100, 100), data.test.images.slice_batch(200, 100), data.test.images.slice_batch(300, 100));
    let (u, v, w) = (&triples.0, &triples.1, &triples.2);
    let d = |a: &Tensor<f32>, b: &Tensor<f32>| dc_distance(model, a, b);
    match (|| Ok::<_, hali::HaliError>((d(u, u)?, d(u, v)?, d(v, u)?, d(v, w)?, d(u, w)?)))() {
        Ok((uu, uv, vu, vw, uw)) => {
            let identity = uu.iter().all(|&x| x == 0.0);
            let symmetric = uv == vu;
            let nonneg = uv.iter().all(|&x| x >= 0.0);
            let triangle = (0..100).filter(|&i| uw[i] <= uv[i] + vw[i] + 1e-9 * (uv[i] + vw[i])).count();
            r.record(
                "9c",
                identity && symmetric && nonneg && triangle == 100,
                format!("100 test triples: d(u,u)=0 {identity}, symmetric {symmetric}, non-negative {nonneg}, triangle inequality {triangle}/100"),
            );
        }
        Err(e) => r.record("9c", false, e.to_string()),
    }
}

fn main() {
    // `cargo test -- --list` and filters pass arguments; this target has a single entry.
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let mut r = Runner { outcomes: Vec::new() };
    theory(&mut r);
    gradients(&mut r);
    loss_identities(&mut r);
    training(&mut r);
    let failed: Vec<&Outcome> = r.outcomes.iter().filter(|o| !o.pass).collect();
    println!("acceptance: {} passed, {} failed", r.outcomes.len() - failed.len(), failed.len());
    if !failed.is_empty() {
        for o in &failed {
            eprintln!("failed {}: {}", o.id, o.detail);
        }
        std::process::exit(1);
    }
}

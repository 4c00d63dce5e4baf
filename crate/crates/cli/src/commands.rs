//! Subcommand dispatch.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use hali::latent::{self, SweepBase, DEFAULT_ALPHAS, DEFAULT_INPAINT_ITERATIONS};
use hali::trainer::{csv_header, parse_metrics_csv};
use hali::{checkpoint, Config, Draw, Model, TrainData, Trainer};
use hali_oracle::{run_suite, SuiteOptions};
use hali_tensor::{SeededRng, Tensor};

use crate::data::{data_dir, load_for_config, DatasetHandle};
use crate::error::{CliError, Result};
use crate::grid::write_image_grid;
use crate::manifest::RunManifest;
use crate::report::{theory_report_text, SemisupReport};

#[derive(Debug, Parser)]
#[command(name = "hali", version, about = "Hierarchical adversarially learned inference workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Finite-difference check of every differentiable op and the training losses.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Randomized divergence and reconstruction-bound checks.
    VerifyTheory {
        /// Random pairs per shape and generator; the reconstruction-bound checks use half as many instances.
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Directory for theory_report.txt.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model.
    Train(TrainArgs),
    /// Test error of the classifier head.
    EvalSemisup(CheckpointArgs),
    /// Originals next to their reconstructions from every level.
    Reconstruct(CheckpointArgs),
    /// Decode while scaling one latent coordinate.
    Sweep {
        #[command(flatten)]
        common: CheckpointArgs,
        #[arg(long, default_value_t = 2)]
        level: usize,
        #[arg(long, default_value_t = 0)]
        coord: usize,
        /// Start from prior draws instead of encoded images.
        #[arg(long)]
        prior: bool,
    },
    /// Edit z2 and carry the change to the image through z1.
    Innovate {
        #[command(flatten)]
        common: CheckpointArgs,
        #[arg(long, default_value_t = 0)]
        coord: usize,
        #[arg(long, default_value_t = 2.0, allow_negative_numbers = true)]
        alpha: f64,
    },
    /// Fill a hidden rectangle.
    Inpaint {
        #[command(flatten)]
        common: CheckpointArgs,
        /// Hidden rectangle `x,y,w,h`.
        #[arg(long, default_value = "0,14,28,14")]
        mask_rect: String,
        #[arg(long, default_value_t = DEFAULT_INPAINT_ITERATIONS)]
        iterations: usize,
    },
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory; defaults to runs/<config name>.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    /// Dataset root; falls back to $HALI_DATA_DIR, then data/mnist.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Continue from a checkpoint written by an earlier run in the same directory.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CheckpointArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Sampling seed; only used with --sample.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Images taken from the front of the validation split.
    #[arg(long, default_value_t = 8)]
    count: usize,
    /// Draw from the kernels instead of using conditional means.
    #[arg(long)]
    sample: bool,
}

/// Parse `argv` (including the program name), run, and return the exit status.
/// Usage errors exit with 2, failed checks and runtime errors with 1.
pub fn run_command_io(argv: &[String], out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    match dispatch(cli.command, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn run_command(argv: &[String]) -> i32 {
    run_command_io(argv, &mut std::io::stdout(), &mut std::io::stderr())
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::io(path, e)
}

fn write_out(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes()).map_err(io_err(Path::new("<stdout>")))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))
}

fn dispatch(command: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    match command {
        Command::Gradcheck { seed } => gradcheck(seed, out),
        Command::VerifyTheory { trials, seed, out: dir } => verify_theory(trials, seed, dir.as_deref(), out),
        Command::Train(args) => train(args, out, err),
        Command::EvalSemisup(args) => eval_semisup(args, out),
        Command::Reconstruct(args) => reconstruct(args, out),
        Command::Sweep { common, level, coord, prior } => sweep(common, level, coord, prior, out),
        Command::Innovate { common, coord, alpha } => innovate(common, coord, alpha, out),
        Command::Inpaint { common, mask_rect, iterations } => inpaint(common, &mask_rect, iterations, out),
    }
}

fn gradcheck(seed: u64, out: &mut dyn Write) -> Result<()> {
    let suite = hali::gradsuite::run(seed)?;
    let mut failed = 0;
    for (name, r) in &suite {
        let verdict = if r.passed() { "pass" } else { "FAIL" };
        write_out(out, &format!("{name}\tchecked={}\tmax_rel_error={:.3e}\tfailures={}\t{verdict}\n", r.checked, r.max_rel_error, r.failures))?;
        failed += usize::from(!r.passed());
    }
    if failed > 0 {
        return Err(CliError::Failed(format!("{failed} of {} gradient checks failed", suite.len())));
    }
    Ok(())
}

fn verify_theory(trials: usize, seed: u64, dir: Option<&Path>, out: &mut dyn Write) -> Result<()> {
    if trials == 0 {
        return Err(CliError::Usage("--trials must be positive".into()));
    }
    let report = run_suite(SuiteOptions { trials, hali_trials: trials.div_ceil(2), seed })?;
    let text = theory_report_text(&report);
    write_out(out, &text)?;
    if let Some(dir) = dir {
        create_dir(dir)?;
        let path = dir.join("theory_report.txt");
        std::fs::write(&path, &text).map_err(io_err(&path))?;
    }
    if !report.passed() {
        return Err(CliError::Failed(format!("{} violations", report.violations())));
    }
    Ok(())
}

/// Output locations inside a run directory.
pub struct RunPaths {
    pub dir: PathBuf,
}

impl RunPaths {
    pub fn config(&self) -> PathBuf {
        self.dir.join("config.cfg")
    }
    pub fn manifest(&self) -> PathBuf {
        self.dir.join("manifest.txt")
    }
    pub fn metrics(&self) -> PathBuf {
        self.dir.join("metrics.csv")
    }
    pub fn checkpoint(&self, step: u64) -> PathBuf {
        self.dir.join("checkpoints").join(format!("step-{step:06}.hali"))
    }
    pub fn final_checkpoint(&self) -> PathBuf {
        self.dir.join("final.hali")
    }
}

fn load_config(path: &Path) -> Result<Config> {
    // A config that cannot be read or parsed is an invocation problem.
    Config::load(path).map_err(|e| CliError::Usage(format!("--config: {e}")))
}

fn train(args: TrainArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let (mut trainer, mut config) = match &args.resume {
        Some(path) => {
            let t = checkpoint::load(path)?;
            let c = t.config.clone();
            (Some(t), c)
        }
        None => (None, load_config(&args.config)?),
    };
    if let Some(seed) = args.seed {
        if trainer.is_some() && seed != config.train.seed {
            return Err(CliError::Usage("--seed cannot change the seed of a resumed run".into()));
        }
        config.train.seed = seed;
    }
    if let Some(steps) = args.steps {
        config.train.steps = steps;
    }
    let paths = RunPaths { dir: args.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(&config.model.name)) };
    create_dir(&paths.dir.join("checkpoints"))?;
    let data = load_for_config(&config, &data_dir(args.data.as_deref()))?;
    let mut trainer = match trainer.take() {
        Some(mut t) => {
            t.config.train.steps = config.train.steps;
            t
        }
        None => Trainer::new(config.clone())?,
    };
    let canonical = trainer.config.canonical();
    std::fs::write(paths.config(), &canonical).map_err(io_err(&paths.config()))?;
    RunManifest::new(&trainer.config, data.train.checksum()).save(paths.manifest())?;

    let mut csv = metrics_writer(&paths, args.resume.as_deref(), trainer.step, trainer.levels())?;
    let labeled = if data.labeled.is_empty() { None } else { Some(data.labeled.as_slice()) };
    let levels = trainer.levels();
    let every = trainer.config.train.checkpoint_every as u64;
    trainer.run(TrainData { train: &data.train, labeled }, Some(&data.val), |t, rec| {
        writeln!(csv, "{}", rec.csv_row(levels)).map_err(|e| hali::HaliError::io(&paths.metrics(), e))?;
        if let Some(e) = &rec.eval {
            csv.flush().map_err(|e| hali::HaliError::io(&paths.metrics(), e))?;
            let _ = writeln!(
                err,
                "step {}: l_d {:.4} l_g {:.4} rho_q {:.3} rho_p {:.3} mse {:?} dc {:?} ordered {:.3}",
                rec.step, rec.l_d, rec.l_g, rec.rho_q, rec.rho_p, e.mse, e.dc, e.mse_ordered
            );
        }
        if every > 0 && rec.step % every == 0 {
            checkpoint::save(t, paths.checkpoint(rec.step))?;
        }
        Ok(())
    })?;
    csv.flush().map_err(io_err(&paths.metrics()))?;
    checkpoint::save(&trainer, paths.final_checkpoint())?;
    write_out(out, &format!("trained {} steps; final checkpoint {}\n", trainer.step, paths.final_checkpoint().display()))?;
    if labeled.is_some() {
        let report = semisup_report(&trainer.model, &data)?;
        write_semisup(&paths.dir, &report, out)?;
    }
    Ok(())
}

/// Open the metrics file. A resumed run keeps the rows up to `resumed_at`,
/// read from the output directory or else from the run the checkpoint came from.
fn metrics_writer(paths: &RunPaths, resume: Option<&Path>, resumed_at: u64, levels: usize) -> Result<BufWriter<File>> {
    let path = paths.metrics();
    let mut text = format!("{}\n", csv_header(levels));
    if resumed_at > 0 {
        let origin = resume.and_then(|c| c.parent()?.parent()).map(|d| d.join("metrics.csv"));
        let source = [Some(path.clone()), origin].into_iter().flatten().find(|p| p.is_file());
        if let Some(source) = source {
            let old = std::fs::read_to_string(&source).map_err(io_err(&source))?;
            for r in parse_metrics_csv(&old)?.iter().filter(|r| r.step <= resumed_at) {
                text.push_str(&r.csv_row(levels));
                text.push('\n');
            }
        }
    }
    let mut w = BufWriter::new(File::create(&path).map_err(io_err(&path))?);
    w.write_all(text.as_bytes()).map_err(io_err(&path))?;
    Ok(w)
}

/// Classify the whole test split.
pub fn semisup_report(model: &Model, data: &DatasetHandle) -> Result<SemisupReport> {
    let predicted = hali::trainer::classify(model, &data.test.images)?;
    let errors = predicted.iter().zip(&data.test.labels).filter(|(p, l)| p != l).count();
    Ok(SemisupReport { labels: data.labeled.len(), errors, total: data.test.len() })
}

fn write_semisup(dir: &Path, report: &SemisupReport, out: &mut dyn Write) -> Result<()> {
    let text = report.to_string();
    let path = dir.join("semisup.txt");
    std::fs::write(&path, &text).map_err(io_err(&path))?;
    write_out(out, &text)
}

struct Loaded {
    model: Model,
    images: Tensor<f32>,
    how: Draw,
    rng: SeededRng,
}

fn load_checkpoint(args: &CheckpointArgs) -> Result<Loaded> {
    let trainer = checkpoint::load(&args.checkpoint)?;
    let data = load_for_config(&trainer.config, &data_dir(args.data.as_deref()))?;
    if args.count == 0 || args.count > data.val.len() {
        return Err(CliError::Usage(format!("--count must lie in 1..={}", data.val.len())));
    }
    create_dir(&args.out)?;
    let images = data.val.images.slice_batch(0, args.count);
    let how = if args.sample { Draw::Sample } else { Draw::Mean };
    Ok(Loaded { model: trainer.model, images, how, rng: SeededRng::new(args.seed) })
}

/// Stack equally shaped batches so that row `i` of the grid holds example `i` of each.
fn rows_of(batches: &[&Tensor<f32>]) -> Tensor<f32> {
    let s = batches[0].shape();
    let (n, per) = (s[0], s[1..].iter().product::<usize>());
    let mut data = Vec::with_capacity(n * per * batches.len());
    for i in 0..n {
        for b in batches {
            data.extend_from_slice(&b.data()[i * per..(i + 1) * per]);
        }
    }
    let mut shape = s.to_vec();
    shape[0] = n * batches.len();
    Tensor::new(shape, data).expect("shape")
}

fn emit_grid(dir: &Path, name: &str, batches: &[&Tensor<f32>], out: &mut dyn Write) -> Result<()> {
    let rows = batches[0].shape()[0];
    let path = dir.join(name);
    write_image_grid(&rows_of(batches), rows, batches.len(), &path)?;
    write_out(out, &format!("wrote {}\n", path.display()))
}

fn eval_semisup(args: CheckpointArgs, out: &mut dyn Write) -> Result<()> {
    let trainer = checkpoint::load(&args.checkpoint)?;
    let data = load_for_config(&trainer.config, &data_dir(args.data.as_deref()))?;
    create_dir(&args.out)?;
    let report = semisup_report(&trainer.model, &data)?;
    write_semisup(&args.out, &report, out)
}

fn reconstruct(args: CheckpointArgs, out: &mut dyn Write) -> Result<()> {
    let mut l = load_checkpoint(&args)?;
    let set = latent::reconstruction_set(&l.model, &l.images, l.how, &mut l.rng)?;
    for (k, (mse, dc)) in set.mse.iter().zip(&set.dc).enumerate() {
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        write_out(out, &format!("level {}: mean pixel mse {:.6}, mean d_c {:.6}\n", k + 1, mean(mse), mean(dc)))?;
    }
    let mut cols = vec![&set.x];
    cols.extend(set.recon.iter());
    emit_grid(&args.out, "reconstruct.pgm", &cols, out)
}

fn sweep(args: CheckpointArgs, level: usize, coord: usize, prior: bool, out: &mut dyn Write) -> Result<()> {
    let mut l = load_checkpoint(&args)?;
    let base = if prior { SweepBase::Prior(args.count) } else { SweepBase::Images(l.images.clone()) };
    let s = latent::latent_sweep(&l.model, &base, level, coord, &DEFAULT_ALPHAS, &mut l.rng).map_err(|e| match e {
        hali::HaliError::Argument(m) => CliError::Usage(m),
        other => other.into(),
    })?;
    let cols: Vec<&Tensor<f32>> = s.images.iter().collect();
    emit_grid(&args.out, &format!("sweep-l{level}-c{coord}.pgm"), &cols, out)
}

fn innovate(args: CheckpointArgs, coord: usize, alpha: f64, out: &mut dyn Write) -> Result<()> {
    let mut l = load_checkpoint(&args)?;
    let plain = latent::reconstruct_at_level(&l.model, &l.images, 1, l.how, &mut l.rng)?;
    let edit = latent::innovation_edit(&l.model, &l.images, coord, alpha, l.how, &mut l.rng).map_err(|e| match e {
        hali::HaliError::Argument(m) => CliError::Usage(m),
        other => other.into(),
    })?;
    emit_grid(&args.out, &format!("innovate-c{coord}.pgm"), &[&l.images, &plain, &edit.image], out)
}

/// Parse `x,y,w,h`.
pub fn parse_rect(s: &str) -> Result<[usize; 4]> {
    let parts: Vec<usize> = s.split(',').map(|p| p.trim().parse()).collect::<std::result::Result<_, _>>().map_err(|_| CliError::Usage(format!("--mask-rect `{s}` is not x,y,w,h")))?;
    parts.try_into().map_err(|_| CliError::Usage(format!("--mask-rect `{s}` is not x,y,w,h")))
}

fn inpaint(args: CheckpointArgs, rect: &str, iterations: usize, out: &mut dyn Write) -> Result<()> {
    let [x, y, w, h] = parse_rect(rect)?;
    let mut l = load_checkpoint(&args)?;
    let mask = latent::rect_mask(l.images.shape(), x, y, w, h).map_err(|e| CliError::Usage(e.to_string()))?;
    if iterations == 0 {
        return Err(CliError::Usage("--iterations must be positive".into()));
    }
    let masked = Tensor::new(l.images.shape().to_vec(), l.images.data().iter().zip(mask.data()).map(|(&v, &m)| if m == 1.0 { v } else { 0.0 }).collect()).expect("shape");
    let steps = latent::inpaint(&l.model, &l.images, &mask, iterations, l.how, &mut l.rng)?;
    let mut cols = vec![&masked];
    cols.extend(steps.iter());
    cols.push(&l.images);
    emit_grid(&args.out, "inpaint.pgm", &cols, out)
}

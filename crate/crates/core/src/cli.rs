//! Command-line runner behind the `maskcraft` binary.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::backend::{BackendDescriptor, Classifier};
use crate::config::{load_config, parse_factors, parse_grid, RunConfig};
use crate::error::{Error, Result};
use crate::io::{load_image, load_mask_f32, read_json, save_heatmap_png, save_image_png, save_mask_f32, write_json};
use crate::manifest::{sha256_file, RunManifest, MANIFEST_FILE};
use crate::metrics::{convergence_track, evaluate, AnnotationBox};
use crate::optimizer::{explain, SaliencyResult};
use crate::reconstruction::{box_sweep, reconstruct_from_saliency, GenerativeDescriptor};
use crate::tensor::{ImageTensor, MaskGrid, RandomSource};

#[derive(Debug, Parser)]
#[command(
    name = "maskcraft",
    version,
    about = "Black-box saliency maps, faithfulness metrics and alternate explanations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Optimize a saliency mask for one image and class.
    Explain(ExplainArgs),
    /// Score a saliency map with insertion/deletion AUC and pointing IOU.
    Eval(EvalArgs),
    /// Regenerate the salient box through a generator's latent space.
    Reconstruct(ReconstructArgs),
    /// Reconstruct over a series of shrinking boxes.
    Sweep(ReconstructArgs),
    /// Insertion/deletion AUC of the mask at regular checkpoints.
    Convergence(ExplainArgs),
}

#[derive(Debug, Args)]
struct Target {
    /// Input image (PNG or binary PPM).
    #[arg(long)]
    image: PathBuf,
    /// Target class index.
    #[arg(long)]
    target: usize,
    /// Classifier: builtin-planted:t,l,h,w[,beta] | builtin-constant:v1,v2,... | exec:"cmd args"
    #[arg(long)]
    backend: String,
}

#[derive(Debug, Args, Default)]
struct Overrides {
    /// JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    iterations: Option<usize>,
    /// Mask grid, e.g. 7x7.
    #[arg(long)]
    grid: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<usize>,
    /// zeros | blur | blur:<sigma>
    #[arg(long)]
    baseline: Option<String>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    kernel: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    latent_dim: Option<usize>,
    #[arg(long)]
    lambda_dis: Option<f64>,
    #[arg(long)]
    latent_iterations: Option<usize>,
    /// Comma-separated box factors in (0, 1].
    #[arg(long)]
    factors: Option<String>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// score-weighted | final-iterate
    #[arg(long)]
    readout: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ExplainArgs {
    #[command(flatten)]
    target: Target,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    target: Target,
    /// Saliency map (.f32 with JSON sidecar).
    #[arg(long)]
    saliency: PathBuf,
    /// Annotation box JSON {"x","y","width","height"}.
    #[arg(long)]
    annotation: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Debug, Args)]
struct ReconstructArgs {
    #[command(flatten)]
    target: Target,
    /// Generator: builtin-linear[:seed] | builtin-exemplar:a.png,b.png | exec:"cmd args"
    #[arg(long)]
    gen_backend: String,
    /// Saliency map (.f32); when absent, one is computed first.
    #[arg(long)]
    saliency: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

impl Overrides {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = load_config(self.config.as_deref())?;
        let flag = |e: Error| Error::Config(e.to_string());
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field.clone() {
                    cfg.$field = v;
                }
            )*};
        }
        set!(
            iterations,
            seed,
            steps,
            threshold,
            kernel,
            samples,
            latent_dim,
            lambda_dis,
            latent_iterations,
            checkpoint_every
        );
        if let Some(g) = &self.grid {
            cfg.grid = parse_grid(g).map_err(flag)?;
        }
        if let Some(b) = &self.baseline {
            cfg.baseline = b.parse().map_err(flag)?;
        }
        if let Some(f) = &self.factors {
            cfg.factors = parse_factors(f).map_err(flag)?;
        }
        if let Some(r) = &self.readout {
            cfg.readout = r.parse().map_err(flag)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Collects outputs and input hashes while a command runs.
struct Run {
    command: &'static str,
    out: PathBuf,
    started: Instant,
    config: RunConfig,
    arguments: BTreeMap<String, String>,
    input_hashes: BTreeMap<String, String>,
    outputs: Vec<String>,
}

impl Run {
    fn new(command: &'static str, overrides: &Overrides, config: RunConfig) -> Result<Self> {
        std::fs::create_dir_all(&overrides.out)?;
        let mut run = Self {
            command,
            out: overrides.out.clone(),
            started: Instant::now(),
            config,
            arguments: BTreeMap::new(),
            input_hashes: BTreeMap::new(),
            outputs: Vec::new(),
        };
        if let Some(c) = &overrides.config {
            run.input("config", c)?;
        }
        Ok(run)
    }

    fn argument(&mut self, key: &str, value: impl ToString) {
        self.arguments.insert(key.into(), value.to_string());
    }

    fn input(&mut self, role: &str, path: &Path) -> Result<()> {
        self.arguments.insert(role.into(), path.display().to_string());
        self.input_hashes.insert(role.into(), sha256_file(path)?);
        Ok(())
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.into());
        self.out.join(name)
    }

    fn json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<()> {
        let p = self.path(name);
        write_json(value, &p)
    }

    fn finish(mut self) -> Result<()> {
        self.outputs.push(MANIFEST_FILE.into());
        let manifest = RunManifest {
            command: self.command.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            seed: self.config.seed,
            config: self.config.to_json(),
            arguments: self.arguments,
            input_hashes: self.input_hashes,
            outputs: self.outputs,
            duration_seconds: self.started.elapsed().as_secs_f64(),
        };
        write_json(&manifest, &self.out.join(MANIFEST_FILE))?;
        println!(
            "{}: wrote {} files to {}",
            self.command,
            manifest.outputs.len(),
            self.out.display()
        );
        Ok(())
    }
}

fn open_target(run: &mut Run, target: &Target) -> Result<(ImageTensor, Box<dyn Classifier>)> {
    run.input("image", &target.image)?;
    run.argument("target", target.target);
    run.argument("backend", &target.backend);
    let image = load_image(&target.image)?;
    let descriptor: BackendDescriptor = target.backend.parse()?;
    let backend = descriptor.connect(image.dims())?;
    if target.target >= backend.class_count() {
        return Err(Error::Argument(format!(
            "target {} out of range for {} classes",
            target.target,
            backend.class_count()
        )));
    }
    Ok((image, backend))
}

fn open_saliency(run: &mut Run, path: &Path, image: &ImageTensor) -> Result<MaskGrid> {
    run.input("saliency", path)?;
    let saliency = load_mask_f32(path)?;
    if saliency.dims() != image.dims() {
        return Err(Error::Dimension(format!(
            "saliency is {:?}, image is {:?}",
            saliency.dims(),
            image.dims()
        )));
    }
    Ok(saliency)
}

#[derive(Serialize)]
struct TraceFile<'a> {
    checkpoints: &'a [crate::optimizer::Checkpoint],
    raw_mask: GridDump<'a>,
}

#[derive(Serialize)]
struct GridDump<'a> {
    height: usize,
    width: usize,
    values: &'a [f64],
}

fn cmd_explain(args: &ExplainArgs) -> Result<()> {
    let cfg = args.overrides.resolve()?;
    let mut run = Run::new("explain", &args.overrides, cfg.clone())?;
    let (image, mut backend) = open_target(&mut run, &args.target)?;
    let result: SaliencyResult = explain(&image, args.target.target, &mut backend, &cfg.optimizer())?;
    let png = run.path("saliency.png");
    save_heatmap_png(&result.saliency, &png)?;
    let raw = run.path("saliency.f32");
    run.outputs.push("saliency.json".into());
    save_mask_f32(&result.saliency, &raw)?;
    run.json(
        "trace.json",
        &TraceFile {
            checkpoints: &result.trace,
            raw_mask: GridDump {
                height: result.raw_mask.height(),
                width: result.raw_mask.width(),
                values: result.raw_mask.data(),
            },
        },
    )?;
    run.finish()
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let cfg = args.overrides.resolve()?;
    let mut run = Run::new("eval", &args.overrides, cfg.clone())?;
    let (image, mut backend) = open_target(&mut run, &args.target)?;
    let saliency = open_saliency(&mut run, &args.saliency, &image)?;
    let annotation = match &args.annotation {
        Some(p) => {
            run.input("annotation", p)?;
            Some(read_json::<AnnotationBox>(p)?)
        }
        None => None,
    };
    let report = evaluate(
        &image,
        &saliency,
        &mut backend,
        args.target.target,
        annotation.as_ref(),
        &cfg.eval(),
    )?;
    run.json("metrics.json", &report)?;
    run.finish()
}

fn saliency_for(
    run: &mut Run,
    args: &ReconstructArgs,
    image: &ImageTensor,
    backend: &mut dyn Classifier,
    cfg: &RunConfig,
) -> Result<MaskGrid> {
    match &args.saliency {
        Some(p) => open_saliency(run, p, image),
        None => Ok(explain(image, args.target.target, backend, &cfg.optimizer())?.saliency),
    }
}

fn open_generator(
    run: &mut Run,
    args: &ReconstructArgs,
    cfg: &RunConfig,
) -> Result<Box<dyn crate::reconstruction::GenerativeBackend>> {
    run.argument("gen_backend", &args.gen_backend);
    let descriptor: GenerativeDescriptor = args.gen_backend.parse()?;
    if let GenerativeDescriptor::BuiltinExemplar { paths } = &descriptor {
        for (i, p) in paths.iter().enumerate() {
            run.input(&format!("exemplar_{i}"), Path::new(p))?;
        }
    }
    descriptor.connect(cfg.latent_dim)
}

fn cmd_reconstruct(args: &ReconstructArgs) -> Result<()> {
    let cfg = args.overrides.resolve()?;
    let mut run = Run::new("reconstruct", &args.overrides, cfg.clone())?;
    let (image, mut backend) = open_target(&mut run, &args.target)?;
    let mut generator = open_generator(&mut run, args, &cfg)?;
    let saliency = saliency_for(&mut run, args, &image, &mut *backend, &cfg)?;
    let mut rng = RandomSource::new(cfg.seed);
    let report = reconstruct_from_saliency(
        &image,
        &saliency,
        &mut generator,
        &mut backend,
        args.target.target,
        &cfg.reconstruction(),
        &mut rng,
    )?;
    for sample in &report.samples {
        if let Some(img) = &sample.image {
            let p = run.path(&format!("rec_{:03}.png", sample.index));
            save_image_png(img, &p)?;
        }
    }
    run.json("report.json", &report)?;
    run.finish()
}

fn cmd_sweep(args: &ReconstructArgs) -> Result<()> {
    let cfg = args.overrides.resolve()?;
    let mut run = Run::new("sweep", &args.overrides, cfg.clone())?;
    let (image, mut backend) = open_target(&mut run, &args.target)?;
    let mut generator = open_generator(&mut run, args, &cfg)?;
    let saliency = saliency_for(&mut run, args, &image, &mut *backend, &cfg)?;
    let records = box_sweep(
        &image,
        &saliency,
        &mut generator,
        &mut backend,
        args.target.target,
        &cfg.factors,
        &cfg.reconstruction(),
        cfg.seed,
    )?;
    run.json("sweep.json", &records)?;
    run.finish()
}

/// Multiples of `every` up to `n`, ending at `n`.
pub fn checkpoint_schedule(n: usize, every: usize) -> Vec<usize> {
    let mut points: Vec<usize> = (1..=n / every.max(1)).map(|i| i * every).collect();
    if points.last() != Some(&n) {
        points.push(n);
    }
    points
}

fn cmd_convergence(args: &ExplainArgs) -> Result<()> {
    let cfg = args.overrides.resolve()?;
    let mut run = Run::new("convergence", &args.overrides, cfg.clone())?;
    let (image, mut backend) = open_target(&mut run, &args.target)?;
    let checkpoints = checkpoint_schedule(cfg.iterations, cfg.checkpoint_every);
    let trace = convergence_track(
        &image,
        args.target.target,
        &mut backend,
        &cfg.optimizer(),
        &checkpoints,
        &cfg.eval(),
    )?;
    run.json("convergence.json", &trace)?;
    run.finish()
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or("MASKCRAFT_LOG", "warn");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit status: 0 success, 1 usage/config, 2 backend/protocol,
/// 3 degenerate input.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    init_logging();
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let outcome = match &cli.command {
        Command::Explain(a) => cmd_explain(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Reconstruct(a) => cmd_reconstruct(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Convergence(a) => cmd_convergence(a),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

//! Command-line front end: `train`, `eval`, `sr`, `audit` and `gradcheck`.
//!
//! Every subcommand is a thin wrapper over the library. Errors map to exit
//! codes: 2 for configuration problems, 3 for missing or malformed data,
//! 4 for numerical divergence, 1 otherwise.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{degradation_preset, RunConfig};
use crate::data;
use crate::degrade::{bicubic_up, degrade, DegradationKind};
use crate::error::{Error, Result};
use crate::gradcheck;
use crate::metrics::{Convention, MetricsReport};
use crate::pipeline::{
    complexity_table, dump_iteration_maps, self_ensemble_forward, Checkpoint, IsrnModel,
};
use crate::train::train_loop;

#[derive(Parser)]
#[command(
    name = "isrn",
    about = "Iterative single-image super-resolution: train, evaluate, upscale, audit",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on a directory of ground-truth images.
    Train(TrainArgs),
    /// Evaluate a trained model (and optionally the plain bicubic baseline)
    /// on a directory of ground-truth images.
    Eval(EvalArgs),
    /// Upscale a single image with a trained model.
    Sr(SrArgs),
    /// Print the parameter and multiply-accumulate budget per component.
    Audit(AuditArgs),
    /// Verify every layer's analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Configuration file (`[section]` + `key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Individual overrides, e.g. `--set model.filters=32`. Applied after
    /// the file, so they win.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn build(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        for o in &self.overrides {
            cfg.set_dotted(o)?;
        }
        cfg.finalize()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Ground-truth training images (overrides `paths.train_dir`).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Held-out images for the per-epoch validation column.
    #[arg(long)]
    val: Option<PathBuf>,
    /// Output directory for checkpoints and the CSV log
    /// (overrides `paths.out_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Trained model checkpoint. May be omitted with `--baseline` to score
    /// the bicubic upscaler alone.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Directory of ground-truth images.
    #[arg(long)]
    data: PathBuf,
    /// Degradation to apply to the ground truth: bi, bd or dn.
    #[arg(long, default_value = "bi")]
    degrade: String,
    /// Scale factor (used when no checkpoint fixes it).
    #[arg(long)]
    scale: Option<usize>,
    /// Also score plain bicubic upscaling of the degraded input.
    #[arg(long)]
    baseline: bool,
    /// Average the eight flip/rotation passes.
    #[arg(long)]
    ensemble: bool,
    /// Write the per-image metric rows to a CSV file.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct SrArgs {
    /// Trained model checkpoint.
    #[arg(long)]
    model: PathBuf,
    /// Low-resolution input image.
    #[arg(long)]
    input: PathBuf,
    /// Where to write the upscaled PNG.
    #[arg(long)]
    out: PathBuf,
    /// Average the eight flip/rotation passes.
    #[arg(long)]
    ensemble: bool,
    /// Also write each round's intermediate estimate as a grayscale map.
    #[arg(long, value_name = "DIR")]
    dump_iters: Option<PathBuf>,
}

#[derive(Args)]
struct AuditArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Read the architecture from a checkpoint instead of a config file.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Output height the multiply-accumulate budget is quoted at.
    #[arg(long, default_value_t = 720)]
    height: usize,
    /// Output width the multiply-accumulate budget is quoted at.
    #[arg(long, default_value_t = 1280)]
    width: usize,
    /// Write the component table to a CSV file.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Maximum allowed relative error against central differences.
    #[arg(long, default_value_t = gradcheck::DEFAULT_TOL)]
    tol: f64,
}

/// Parse `std::env::args` and run. Returns the process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sr(a) => cmd_sr(a),
        Command::Audit(a) => cmd_audit(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    }
}

fn cmd_train(args: TrainArgs) -> Result<i32> {
    let mut cfg = args.config.build()?;
    if let Some(d) = args.data {
        cfg.train_dir = Some(d);
    }
    if let Some(v) = args.val {
        cfg.val_dir = Some(v);
    }
    if let Some(o) = args.out {
        cfg.out_dir = o;
    }
    let data_dir = cfg
        .train_dir
        .clone()
        .ok_or_else(|| Error::Config("no training directory: pass --data or paths.train_dir".into()))?;

    let resume = args.resume.as_deref().map(Checkpoint::load).transpose()?;
    let model = match &resume {
        // Build the architecture the checkpoint was trained with.
        Some(ckpt) => {
            if ckpt.config != cfg.model {
                return Err(Error::ConfigMismatch(format!(
                    "checkpoint architecture {:?} differs from the requested {:?}; \
                     align the config or drop --resume",
                    ckpt.config, cfg.model
                )));
            }
            IsrnModel::from_checkpoint(ckpt)?
        }
        None => IsrnModel::new(cfg.model, &mut ChaCha8Rng::seed_from_u64(cfg.train.seed))?,
    };
    println!(
        "training {} parameters at x{} for {} epochs -> {}",
        model.count_params(),
        cfg.model.scale,
        cfg.train.epochs,
        cfg.out_dir.display()
    );
    let rows = train_loop(
        &model,
        &data_dir,
        cfg.val_dir.as_deref(),
        &cfg.out_dir,
        &cfg.train,
        resume.as_ref(),
    )?;
    if let Some(last) = rows.last() {
        print!(
            "done: epoch {} loss {:.6}",
            last.epoch + 1,
            last.loss
        );
        if let Some(v) = last.val_psnr {
            print!(" val {v:.2} dB");
        }
        println!();
    }
    println!("log: {}", cfg.out_dir.join("train_log.csv").display());
    Ok(0)
}

fn cmd_eval(args: EvalArgs) -> Result<i32> {
    let kind: DegradationKind = args.degrade.parse()?;
    let model = args
        .model
        .as_deref()
        .map(|p| Checkpoint::load(p).and_then(|c| IsrnModel::from_checkpoint(&c)))
        .transpose()?;
    if model.is_none() && !args.baseline {
        return Err(Error::Config(
            "nothing to evaluate: pass --model and/or --baseline".into(),
        ));
    }
    let scale = match (&model, args.scale) {
        (Some(m), Some(s)) if m.config().scale != s => {
            return Err(Error::ConfigMismatch(format!(
                "--scale {s} contradicts the checkpoint's x{}",
                m.config().scale
            )))
        }
        (Some(m), _) => m.config().scale,
        (None, Some(s)) => s,
        (None, None) => 4,
    };
    let spec = degradation_preset(kind, scale);
    spec.validate()?;

    let images = data::load_dir(&args.data)?;
    let convention = Convention { y_channel: true, shave: scale };
    let mut model_report = MetricsReport::new(convention);
    let mut baseline_report = MetricsReport::new(convention);
    for (i, named) in images.iter().enumerate() {
        let hr = data::crop_to_multiple(&named.image, scale)?;
        let lr = degrade(&hr, &spec.for_image(i as u64))?;
        if let Some(model) = &model {
            let sr = if args.ensemble {
                self_ensemble_forward(model, &lr)?
            } else {
                model.forward_infer(&lr)?.0
            };
            model_report.push(&named.name, &sr.clamp(0.0, 1.0), &hr)?;
        }
        if args.baseline {
            let up = bicubic_up(&lr, scale)?.clamp(0.0, 1.0);
            baseline_report.push(&named.name, &up, &hr)?;
        }
    }

    let mut csv = String::new();
    if model.is_some() {
        println!("model ({} on {}x, {} images):", spec.kind, scale, images.len());
        println!("{}", model_report.table());
        csv.push_str(&model_report.to_csv());
    }
    if args.baseline {
        println!("bicubic baseline:");
        println!("{}", baseline_report.table());
        if csv.is_empty() {
            csv.push_str(&baseline_report.to_csv());
        }
    }
    if let Some(path) = &args.csv {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
        }
        std::fs::write(path, csv).map_err(Error::io(path))?;
        println!("csv: {}", path.display());
    }
    Ok(0)
}

fn cmd_sr(args: SrArgs) -> Result<i32> {
    let ckpt = Checkpoint::load(&args.model)?;
    let model = IsrnModel::from_checkpoint(&ckpt)?;
    let lr = data::load_image(&args.input)?;
    let (sr, per_iter) = if args.ensemble {
        (self_ensemble_forward(&model, &lr)?, Vec::new())
    } else {
        model.forward_infer(&lr)?
    };
    let sr = sr.clamp(0.0, 1.0);
    data::save_image(&args.out, &sr)?;
    let s = sr.shape();
    println!(
        "{} -> {} ({}x{}, x{}{})",
        args.input.display(),
        args.out.display(),
        s.w,
        s.h,
        model.config().scale,
        if args.ensemble { ", ensemble" } else { "" }
    );
    if let Some(dir) = &args.dump_iters {
        if args.ensemble {
            return Err(Error::InvalidArgument(
                "--dump-iters shows a single pass; drop --ensemble to use it".into(),
            ));
        }
        let paths = dump_iteration_maps(&per_iter, &sr, dir)?;
        println!("wrote {} iteration maps to {}", paths.len(), dir.display());
    }
    Ok(0)
}

fn cmd_audit(args: AuditArgs) -> Result<i32> {
    let model = match &args.model {
        Some(path) => IsrnModel::from_checkpoint(&Checkpoint::load(path)?)?,
        None => {
            let cfg = args.config.build()?;
            IsrnModel::new(cfg.model, &mut ChaCha8Rng::seed_from_u64(0))?
        }
    };
    let total_macs = model.count_macs(args.height, args.width)?;
    let rows = model.complexity(args.height, args.width);
    println!(
        "architecture: x{} scale, {} rounds, {} filters",
        model.config().scale,
        model.config().iterations,
        model.config().filters
    );
    println!(
        "budget quoted at a {}x{} output ({}x{} input)",
        args.width,
        args.height,
        args.width / model.config().scale,
        args.height / model.config().scale,
    );
    println!("{}", complexity_table(&rows));
    println!(
        "total: {} parameters, {} multiply-accumulates",
        model.count_params(),
        total_macs
    );
    if let Some(path) = &args.csv {
        let mut csv = String::from("component,params,macs\n");
        for r in &rows {
            csv.push_str(&format!("{},{},{}\n", r.component, r.params, r.macs));
        }
        std::fs::write(path, csv).map_err(Error::io(path))?;
        println!("csv: {}", path.display());
    }
    Ok(0)
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<i32> {
    let results = gradcheck::run_standard_suite()?;
    println!("{}", gradcheck::report(&results, args.tol));
    let failures = results.iter().filter(|r| !r.passed(args.tol)).count();
    if failures > 0 {
        eprintln!("{failures} layer(s) exceeded the tolerance {}", args.tol);
        return Ok(1);
    }
    Ok(0)
}

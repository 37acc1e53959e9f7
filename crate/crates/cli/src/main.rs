//! Command-line front end for single-image pansharpening adaptation.
//!
//! Four subcommands cover the workflow: `degrade` simulates a
//! reduced-resolution instance, `guide` materializes a pseudo-reference,
//! `fuse` trains the per-image network and writes the fused product, and
//! `evaluate` scores a result. Options layer as CLI flags > config file >
//! built-in defaults, and every effective value is echoed into the run
//! manifest so no default is silent.

use clap::{Args, Parser, Subcommand};
use fmg_core::config::{self, AdaptationConfig, ConfigOverlay, LossNorm};
use fmg_core::error::{Error, Result};
use fmg_core::guidance::GuidanceSource;
use fmg_core::io::{sidecar_path, Sidecar};
use fmg_core::net::Variant;
use fmg_core::pipeline::{
    cmd_degrade, cmd_evaluate, cmd_fuse, cmd_guide, DegradeOptions, EvaluateOptions, FuseOptions,
    GuideOptions,
};
use fmg_core::SensorSpec;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "fmg",
    version,
    about = "Adapt a tiny fusion network to a single PAN / multispectral pair"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the adaptive network on one image pair and write the fusion.
    Fuse(FuseArgs),
    /// Blur and decimate full-resolution data into a simulated instance.
    Degrade(DegradeArgs),
    /// Materialize a pseudo-reference image without running the adaptation.
    Guide(GuideArgs),
    /// Score a fused image at full or reduced resolution.
    Evaluate(EvaluateArgs),
}

#[derive(Args)]
struct FuseArgs {
    /// Low-resolution multispectral input (.fmgt).
    #[arg(long)]
    lrms: PathBuf,
    /// Panchromatic input (.fmgt).
    #[arg(long)]
    pan: PathBuf,
    /// Pseudo-reference source: file:<path>, mtf-glp, or bdsd.
    #[arg(long)]
    guidance: String,
    /// Sensor preset name or sensor JSON path (falls back to the input's
    /// sidecar).
    #[arg(long)]
    sensor: Option<String>,
    /// JSON config file supplying any subset of the training options.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for parameter initialization.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of adaptation epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Weight of the pseudo-reference loss.
    #[arg(long = "lambda-pr")]
    lambda_pr: Option<f64>,
    /// Weight of the spectral consistency loss.
    #[arg(long = "lambda-spe")]
    lambda_spe: Option<f64>,
    /// Weight of the physical detail loss.
    #[arg(long = "lambda-phy")]
    lambda_phy: Option<f64>,
    /// Coefficient-estimation patch side (panchromatic scale).
    #[arg(long)]
    patch: Option<usize>,
    /// Network variant: default or light.
    #[arg(long)]
    variant: Option<String>,
    /// Loss normalization: mean or sum.
    #[arg(long = "loss-norm")]
    loss_norm: Option<String>,
    /// Sampling phase used when decimating blurred images.
    #[arg(long = "decimation-offset")]
    decimation_offset: Option<usize>,
    /// Resume from previously saved network parameters (.fmgp).
    #[arg(long = "warm-start")]
    warm_start: Option<PathBuf>,
    /// Assume the pseudo-reference comes from a different sensor (longer
    /// default schedule).
    #[arg(long = "cross-sensor")]
    cross_sensor: bool,
    /// Also write the precomputed detail tensor and mixing coefficients.
    #[arg(long = "dump-detail")]
    dump_detail: bool,
    /// Output path for the fused tensor (side outputs derive from it).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DegradeArgs {
    /// Full-resolution multispectral input (.fmgt).
    #[arg(long)]
    hrms: PathBuf,
    /// Full-resolution panchromatic input (.fmgt), degraded alongside.
    #[arg(long)]
    pan: Option<PathBuf>,
    /// Sensor preset name or sensor JSON path.
    #[arg(long)]
    sensor: Option<String>,
    /// Sampling phase used when decimating.
    #[arg(long = "decimation-offset", default_value_t = 0)]
    decimation_offset: usize,
    /// Output path for the simulated low-resolution multispectral tensor.
    #[arg(long)]
    out: PathBuf,
    /// Output path for the degraded panchromatic tensor (default:
    /// <out>.pan.fmgt).
    #[arg(long = "out-pan")]
    out_pan: Option<PathBuf>,
}

#[derive(Args)]
struct GuideArgs {
    /// Low-resolution multispectral input (.fmgt).
    #[arg(long)]
    lrms: PathBuf,
    /// Panchromatic input (.fmgt).
    #[arg(long)]
    pan: PathBuf,
    /// Pseudo-reference source: file:<path>, mtf-glp, or bdsd.
    #[arg(long)]
    guidance: String,
    /// Sensor preset name or sensor JSON path (falls back to the input's
    /// sidecar).
    #[arg(long)]
    sensor: Option<String>,
    /// Coefficient-estimation patch side (panchromatic scale).
    #[arg(long, default_value_t = config::DEFAULT_PATCH)]
    patch: usize,
    /// Sampling phase used when decimating blurred images.
    #[arg(long = "decimation-offset", default_value_t = 0)]
    decimation_offset: usize,
    /// Output path for the pseudo-reference tensor.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Fused tensor to score (.fmgt).
    #[arg(long)]
    fused: PathBuf,
    /// Original multispectral input (full-resolution protocol).
    #[arg(long)]
    lrms: Option<PathBuf>,
    /// Original panchromatic input (full-resolution protocol).
    #[arg(long)]
    pan: Option<PathBuf>,
    /// Ground-truth tensor; selects the reduced-resolution protocol.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Sensor preset name or sensor JSON path (falls back to the fused
    /// tensor's sidecar).
    #[arg(long)]
    sensor: Option<String>,
    /// Quality-index block side (and stride).
    #[arg(long, default_value_t = fmg_core::metrics::DEFAULT_BLOCK)]
    block: usize,
    /// Also render the per-block HQNR map as a grayscale PNG.
    #[arg(long)]
    heatmap: Option<PathBuf>,
    /// Output path for the report JSON (default: <fused>.report.json).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_variant(s: &str) -> Result<Variant> {
    match s {
        "default" => Ok(Variant::Standard),
        "light" => Ok(Variant::Lightweight),
        other => Err(Error::Config(format!(
            "unknown variant '{other}' (expected 'default' or 'light')"
        ))),
    }
}

fn parse_loss_norm(s: &str) -> Result<LossNorm> {
    match s {
        "mean" => Ok(LossNorm::Mean),
        "sum" => Ok(LossNorm::Sum),
        other => Err(Error::Config(format!(
            "unknown loss norm '{other}' (expected 'mean' or 'sum')"
        ))),
    }
}

/// Resolves the sensor from the flag, or from the sidecar written next to
/// `tensor_path` when the flag is omitted.
fn resolve_sensor(arg: Option<&str>, tensor_path: &Path) -> Result<SensorSpec> {
    if let Some(a) = arg {
        return SensorSpec::resolve(a);
    }
    let sc = sidecar_path(tensor_path);
    if sc.exists() {
        let text = std::fs::read_to_string(&sc)?;
        let sidecar: Sidecar = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("{}: {e}", sc.display())))?;
        return SensorSpec::preset(&sidecar.sensor).map_err(|_| {
            Error::Config(format!(
                "sidecar {} names sensor '{}', which is not a built-in preset; pass --sensor",
                sc.display(),
                sidecar.sensor
            ))
        });
    }
    Err(Error::Config(format!(
        "--sensor is required (no sidecar found at {})",
        sc.display()
    )))
}

/// Layers the effective configuration: CLI flags > config file > defaults.
fn resolve_config(args: &FuseArgs) -> Result<AdaptationConfig> {
    let file_overlay = match &args.config {
        Some(path) => Some(ConfigOverlay::from_json_file(path)?),
        None => None,
    };
    let cli_overlay = ConfigOverlay {
        lr: args.lr,
        epochs: args.epochs,
        lambda_pr: args.lambda_pr,
        lambda_spe: args.lambda_spe,
        lambda_phy: args.lambda_phy,
        seed: args.seed,
        warm_start: args.warm_start.clone(),
        variant: args.variant.as_deref().map(parse_variant).transpose()?,
        loss_norm: args.loss_norm.as_deref().map(parse_loss_norm).transpose()?,
        patch: args.patch,
        decimation_offset: args.decimation_offset,
        cross_sensor: args.cross_sensor.then_some(true),
    };
    let mut layers: Vec<&ConfigOverlay> = Vec::new();
    if let Some(f) = &file_overlay {
        layers.push(f);
    }
    layers.push(&cli_overlay);
    config::resolve(&layers)
}

fn run_fuse(args: FuseArgs) -> Result<()> {
    let sensor = resolve_sensor(args.sensor.as_deref(), &args.lrms)?;
    let guidance = GuidanceSource::parse(&args.guidance)?;
    let config = resolve_config(&args)?;
    let outcome = cmd_fuse(&FuseOptions {
        lrms: args.lrms,
        pan: args.pan,
        out: args.out,
        sensor,
        guidance,
        config,
        dump_detail: args.dump_detail,
    })?;

    let d = &outcome.manifest.diagnostics;
    if d.clamped_reference_samples > 0 {
        eprintln!(
            "warning: {} reference samples clamped into [0,1]",
            d.clamped_reference_samples
        );
    }
    if d.degenerate_gains > 0 {
        eprintln!("warning: {} bands used degenerate injection gains", d.degenerate_gains);
    }

    for (name, path) in &outcome.manifest.outputs {
        println!("{name:<14} {path}");
    }
    let t = &outcome.manifest.timing;
    let share = if t.total_s > 0.0 { 100.0 * t.training_s / t.total_s } else { 0.0 };
    println!(
        "timing: guidance {:.3} s | precompute {:.3} s | training {:.3} s ({share:.1}%) | \
         inference {:.3} s | other {:.3} s | total {:.3} s",
        t.guidance_s, t.pf_precompute_s, t.training_s, t.adaptive_inference_s, t.other_s, t.total_s
    );
    Ok(())
}

fn run_degrade(args: DegradeArgs) -> Result<()> {
    let sensor = resolve_sensor(args.sensor.as_deref(), &args.hrms)?;
    let out_pan = match (&args.pan, args.out_pan) {
        (Some(_), Some(p)) => Some(p),
        (Some(_), None) => Some(args.out.with_extension("pan.fmgt")),
        (None, p) => p,
    };
    cmd_degrade(&DegradeOptions {
        hrms: args.hrms,
        pan: args.pan.clone(),
        out_lrms: args.out.clone(),
        out_pan: out_pan.clone(),
        sensor,
        decimation_offset: args.decimation_offset,
    })?;
    println!("lrms           {}", args.out.display());
    if let (Some(_), Some(p)) = (&args.pan, out_pan) {
        println!("pan            {}", p.display());
    }
    Ok(())
}

fn run_guide(args: GuideArgs) -> Result<()> {
    let sensor = resolve_sensor(args.sensor.as_deref(), &args.lrms)?;
    let source = GuidanceSource::parse(&args.guidance)?;
    let outcome = cmd_guide(&GuideOptions {
        lrms: args.lrms,
        pan: args.pan,
        out: args.out.clone(),
        sensor,
        source,
        patch: args.patch,
        decimation_offset: args.decimation_offset,
    })?;
    if outcome.clamped_samples > 0 {
        eprintln!("warning: {} reference samples clamped into [0,1]", outcome.clamped_samples);
    }
    if outcome.degenerate_gains > 0 {
        eprintln!("warning: {} bands used degenerate injection gains", outcome.degenerate_gains);
    }
    println!("reference      {}", args.out.display());
    Ok(())
}

fn run_evaluate(args: EvaluateArgs) -> Result<()> {
    let sensor = resolve_sensor(args.sensor.as_deref(), &args.fused)?;
    let out = args.out.unwrap_or_else(|| args.fused.with_extension("report.json"));
    let report = cmd_evaluate(&EvaluateOptions {
        fused: args.fused,
        lrms: args.lrms,
        pan: args.pan,
        truth: args.truth,
        sensor,
        out: out.clone(),
        heatmap: args.heatmap.clone(),
        block: args.block,
    })?;
    for (name, value) in &report.scalars {
        println!("{name:<20} {value:.6}");
    }
    println!("report         {}", out.display());
    if let Some(h) = args.heatmap {
        println!("heatmap        {}", h.display());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fuse(args) => run_fuse(args),
        Command::Degrade(args) => run_degrade(args),
        Command::Guide(args) => run_guide(args),
        Command::Evaluate(args) => run_evaluate(args),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

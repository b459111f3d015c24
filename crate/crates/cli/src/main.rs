use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use scalematch_core::descriptors::{
    resolve_sidecar_command, DescriptorBackend, FallbackBackend, InputResolution, LayerId,
    SidecarBackend,
};
use scalematch_core::geometry::CameraIntrinsics;
use scalematch_core::image::RgbImage;
use scalematch_core::matching::MatchMethod;
use scalematch_core::pipeline::{localize_pair, EstimatorKind, PipelineConfig};

mod evaluate;

const DEFAULT_SIDECAR: &str = "scalematch-sidecar";

#[derive(Parser)]
#[command(name = "scalematch", version, about = "Object-guided localization under large scale change")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Localize image B relative to image A and print the result as JSON.
    Localize(LocalizeArgs),
    /// Run every method over a KITTI odometry or annotated pair dataset.
    Evaluate(evaluate::EvaluateArgs),
}

/// Descriptor and estimator options shared by both subcommands.
#[derive(Args, Clone, Debug)]
pub struct CommonArgs {
    /// `fallback`, `sidecar`, or `sidecar:<command>`. SCALEMATCH_SIDECAR
    /// overrides the sidecar command.
    #[arg(long, default_value = "fallback")]
    pub backend: BackendSpec,
    /// Network layer requested from the sidecar.
    #[arg(long, default_value = "res5c")]
    pub layer: LayerId,
    /// Square crop side fed to the network.
    #[arg(long, default_value_t = 224)]
    pub resolution: u32,
    /// RANSAC seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum BackendSpec {
    Fallback,
    Sidecar(String),
}

impl FromStr for BackendSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            None if s == "fallback" => Ok(BackendSpec::Fallback),
            None if s == "sidecar" => Ok(BackendSpec::Sidecar(DEFAULT_SIDECAR.to_string())),
            Some(("sidecar", cmd)) if !cmd.trim().is_empty() => {
                Ok(BackendSpec::Sidecar(cmd.to_string()))
            }
            _ => Err(format!(
                "unknown backend `{s}` (expected fallback, sidecar or sidecar:<command>)"
            )),
        }
    }
}

impl CommonArgs {
    pub fn resolution(&self) -> Result<InputResolution> {
        InputResolution::new(self.resolution).context("invalid --resolution")
    }

    /// Validates the descriptor options without starting anything.
    pub fn check(&self) -> Result<()> {
        self.resolution()?;
        Ok(())
    }

    pub fn backend(&self) -> Result<Box<dyn DescriptorBackend>> {
        Ok(match &self.backend {
            BackendSpec::Fallback => Box::new(FallbackBackend),
            BackendSpec::Sidecar(cmd) => {
                let cmd = resolve_sidecar_command(cmd);
                let backend = SidecarBackend::spawn(&cmd, self.layer, self.resolution()?)
                    .with_context(|| format!("starting descriptor sidecar `{cmd}`"))?;
                Box::new(backend)
            }
        })
    }

    pub fn pipeline(&self, method: MatchMethod, estimator: EstimatorKind) -> PipelineConfig {
        let mut cfg = PipelineConfig {
            method,
            estimator,
            ..Default::default()
        };
        cfg.ransac.rng_seed = self.seed;
        cfg
    }
}

#[derive(Args)]
struct LocalizeArgs {
    image_a: PathBuf,
    image_b: PathBuf,
    #[arg(long, default_value = "combined")]
    method: MatchMethod,
    #[arg(long, default_value = "homography")]
    estimator: EstimatorKind,
    /// Pinhole intrinsics `fx,fy,cx,cy`; required by the essential estimator.
    #[arg(long)]
    intrinsics: Option<Intrinsics>,
    /// Write the JSON here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Clone, Debug)]
struct Intrinsics(CameraIntrinsics);

impl FromStr for Intrinsics {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let v: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| format!("intrinsics must be four numbers fx,fy,cx,cy: {e}"))?;
        let [fx, fy, cx, cy] = v[..] else {
            return Err(format!("intrinsics need four values fx,fy,cx,cy, got {}", v.len()));
        };
        CameraIntrinsics::new(fx, fy, cx, cy)
            .map(Intrinsics)
            .map_err(|e| e.to_string())
    }
}

pub fn open_image(path: &Path) -> Result<RgbImage> {
    RgbImage::open(path).with_context(|| format!("reading image {}", path.display()))
}

fn localize(args: LocalizeArgs) -> Result<()> {
    args.common.check()?;
    let k = args.intrinsics.map(|i| i.0);
    if args.estimator == EstimatorKind::Essential && k.is_none() {
        bail!("--estimator essential needs --intrinsics fx,fy,cx,cy");
    }
    let a = open_image(&args.image_a)?;
    let b = open_image(&args.image_b)?;
    let cfg = args.common.pipeline(args.method, args.estimator);
    let mut backend = args.common.backend()?;
    let result = localize_pair(&cfg, backend.as_mut(), &a, &b, k.as_ref())?;
    let json = serde_json::to_string_pretty(&result)?;
    match &args.out {
        Some(path) => fs::write(path, json + "\n")
            .with_context(|| format!("writing {}", path.display()))?,
        None => {
            let mut out = std::io::stdout().lock();
            writeln!(out, "{json}")?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Localize(args) => localize(args),
        Command::Evaluate(args) => evaluate::run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

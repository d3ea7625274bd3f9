use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};

use ssa_core::commands::{
    self, curve_csv, curve_peak_line, loc_csv, loc_report_text, miou_text, parse_tau_grid, CamMode,
    CamRecipe, CamRequest,
};
use ssa_core::evaluation::default_tau_grid;
use ssa_core::io::write_atomic;
use ssa_core::manifest::EvalManifest;
use ssa_core::pipeline::parse_stages;
use ssa_core::{AffinitySource, Connectivity, PositionNorm, SsaConfig, SsaError, SsmConfig};

const EXIT_DATA: u8 = 1;
const EXIT_USAGE: u8 = 2;

#[derive(Parser)]
#[command(
    name = "ssa",
    version,
    about = "Structure-aware CAM inference and localization metrics"
)]
struct Cli {
    /// Worker threads (0 = all cores). SSA_JOBS overrides this flag.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Seed CAM of one sample: writes <out>.ssat and <out>.pgm.
    Cam(CamArgs),
    /// Structure-aware CAM of one sample: writes <out>.ssat and <out>.pgm.
    Ssa {
        #[command(flatten)]
        target: CamArgs,
        #[command(flatten)]
        pipeline: PipelineArgs,
    },
    /// Top-1 / Top-5 / GT-known localization error over a manifest.
    EvalLoc {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum, default_value_t = ModeArg::Ssa)]
        mode: ModeArg,
        /// Box threshold as a fraction of the normalized CAM maximum.
        #[arg(long, default_value_t = 0.2)]
        tau: f64,
        #[arg(long, value_enum, default_value_t = ConnArg::Four)]
        connectivity: ConnArg,
        /// Per-sample IoU CSV output.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[command(flatten)]
        pipeline: PipelineArgs,
    },
    /// Mean foreground IoU as a function of the CAM threshold.
    IouCurve {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum, default_value_t = ModeArg::Ssa)]
        mode: ModeArg,
        /// Comma-separated ascending thresholds; defaults to 0, 0.05, ..., 1.
        #[arg(long)]
        tau_grid: Option<String>,
        /// Also write the curve CSV here.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[command(flatten)]
        pipeline: PipelineArgs,
    },
    /// mIoU between predicted and ground-truth label grids.
    Miou {
        #[arg(long)]
        pred_dir: PathBuf,
        #[arg(long)]
        gt_dir: PathBuf,
        #[arg(long)]
        classes: usize,
    },
}

#[derive(Args)]
struct CamArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    sample: String,
    /// Class channel for the heatmap; defaults to the sample's gt_class.
    #[arg(long)]
    class: Option<usize>,
    /// Output stem; `.ssat` and `.pgm` are appended.
    #[arg(long)]
    out: PathBuf,
    /// Resize the heatmap to the manifest's image size.
    #[arg(long)]
    upscale: bool,
}

#[derive(Args)]
struct PipelineArgs {
    /// Comma-separated backbone stages to expand with.
    #[arg(long, default_value = "4,5")]
    stages: String,
    /// Number of SA blocks per stage (1-3).
    #[arg(long, default_value_t = 2)]
    n_sa: usize,
    /// Gate each stage's expanded CAM by the other's clamped map.
    #[arg(long)]
    cross_guidance: bool,
    #[arg(long, value_enum, default_value_t = NormArg::Cosine)]
    norm: NormArg,
    /// Resize stage 3/4 maps to the stage-5 grid.
    #[arg(long)]
    resize_stages: bool,
    /// Replace every affinity with the identity (testing hook).
    #[arg(long, hide = true)]
    identity_affinity: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Cam,
    Ssa,
}

#[derive(Clone, Copy, ValueEnum)]
enum ConnArg {
    #[value(name = "4")]
    Four,
    #[value(name = "8")]
    Eight,
}

#[derive(Clone, Copy, ValueEnum)]
enum NormArg {
    Cosine,
    SqrtSum,
}

impl PipelineArgs {
    fn recipe(&self, mode: ModeArg) -> Result<CamRecipe, SsaError> {
        let ssa = SsaConfig {
            stages: parse_stages(&self.stages)?,
            ssm: SsmConfig {
                n_sa: self.n_sa,
                norm: match self.norm {
                    NormArg::Cosine => PositionNorm::Cosine,
                    NormArg::SqrtSum => PositionNorm::SpatialSqrtSum,
                },
            },
            cross_guidance: self.cross_guidance,
            affinity: if self.identity_affinity {
                AffinitySource::Identity
            } else {
                AffinitySource::Ssm
            },
        };
        let mode = match mode {
            ModeArg::Cam => CamMode::Cam,
            ModeArg::Ssa => {
                ssa.validate()?;
                CamMode::Ssa
            }
        };
        Ok(CamRecipe {
            mode,
            ssa,
            resize_stages: self.resize_stages,
        })
    }
}

fn is_usage_error(e: &SsaError) -> bool {
    matches!(
        e.root(),
        SsaError::UnsupportedDepth(_) | SsaError::InvalidConfig(_)
    )
}

fn run(cli: Cli) -> Result<String, SsaError> {
    match cli.command {
        Command::Cam(args) => {
            let manifest = EvalManifest::load(&args.manifest)?;
            let recipe = CamRecipe {
                mode: CamMode::Cam,
                ..CamRecipe::default()
            };
            commands::cmd_cam(&request(&manifest, &args), &recipe)
        }
        Command::Ssa { target, pipeline } => {
            let recipe = pipeline.recipe(ModeArg::Ssa)?;
            let manifest = EvalManifest::load(&target.manifest)?;
            commands::cmd_cam(&request(&manifest, &target), &recipe)
        }
        Command::EvalLoc {
            manifest,
            mode,
            tau,
            connectivity,
            csv,
            pipeline,
        } => {
            let recipe = pipeline.recipe(mode)?;
            let manifest = EvalManifest::load(&manifest)?;
            let conn = match connectivity {
                ConnArg::Four => Connectivity::Four,
                ConnArg::Eight => Connectivity::Eight,
            };
            let report = commands::eval_loc(&manifest, &recipe, tau, conn)?;
            if let Some(path) = csv {
                write_atomic(path, loc_csv(&manifest, &report).as_bytes())?;
            }
            Ok(loc_report_text(&report, tau))
        }
        Command::IouCurve {
            manifest,
            mode,
            tau_grid,
            csv,
            pipeline,
        } => {
            let recipe = pipeline.recipe(mode)?;
            let taus = match tau_grid {
                Some(s) => parse_tau_grid(&s)?,
                None => default_tau_grid(),
            };
            let manifest = EvalManifest::load(&manifest)?;
            let curve = commands::eval_iou_curve(&manifest, &recipe, &taus)?;
            let table = curve_csv(&curve);
            if let Some(path) = csv {
                write_atomic(path, table.as_bytes())?;
            }
            Ok(table + &curve_peak_line(&curve))
        }
        Command::Miou {
            pred_dir,
            gt_dir,
            classes,
        } => Ok(miou_text(&commands::miou_dirs(
            &pred_dir, &gt_dir, classes,
        )?)),
    }
}

fn request<'a>(manifest: &'a EvalManifest, args: &'a CamArgs) -> CamRequest<'a> {
    CamRequest {
        manifest,
        sample: &args.sample,
        class: args.class,
        out: &args.out,
        upscale: args.upscale,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    let jobs = std::env::var("SSA_JOBS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .unwrap_or(cli.jobs);
    match commands::with_jobs(jobs, || run(cli)) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            if is_usage_error(&e) {
                eprintln!("\n{}", Cli::command().render_usage());
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::from(EXIT_DATA)
            }
        }
    }
}

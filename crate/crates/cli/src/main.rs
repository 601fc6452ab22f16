use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use quadretarget_cli::{
    cmd_fixture, cmd_metrics, cmd_reconstruct, cmd_retarget, cmd_smr, cmd_tmr, CliError, FixtureSpec, Overrides,
    RunConfig, RunSummary,
};

#[derive(Parser)]
#[command(name = "quadretarget", version, about = "Quadruped motion retargeting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Spatial then temporal retargeting.
    Retarget(RunArgs),
    /// Spatial retargeting only.
    Smr(RunArgs),
    /// Temporal retargeting of an already retargeted motion.
    Tmr(RunArgs),
    /// Rebuild the base trajectory from the feet.
    Reconstruct(RunArgs),
    /// Compare --motion against --reference.
    Metrics(RunArgs),
    /// Write a synthetic robot and motion.
    Fixture(FixtureArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON run configuration; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    robot: Option<PathBuf>,
    #[arg(long)]
    source_robot: Option<PathBuf>,
    #[arg(long)]
    motion: Option<PathBuf>,
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long)]
    terrain: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    segments: Option<usize>,
    #[arg(long)]
    alpha_min: Option<f64>,
    #[arg(long)]
    alpha_max: Option<f64>,
    /// Random initial evaluations, including α = 1.
    #[arg(long)]
    budget_warm: Option<usize>,
    /// Bayesian-optimisation iterations.
    #[arg(long)]
    budget_iter: Option<usize>,
    /// Ignore the motion's base pose.
    #[arg(long)]
    no_base: bool,
}

#[derive(Args)]
struct FixtureArgs {
    /// trot, pace, bound, walk, fast-trot, hop or bounce.
    #[arg(long, default_value = "trot")]
    kind: String,
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    #[arg(long, default_value_t = 1.0)]
    heavier: f64,
    #[arg(long, default_value_t = 1.0)]
    weaker: f64,
    #[arg(long, default_value = "fixture")]
    out: PathBuf,
}

impl RunArgs {
    fn into_config(self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        cfg.apply(Overrides {
            robot: self.robot,
            source_robot: self.source_robot,
            motion: self.motion,
            reference: self.reference,
            terrain: self.terrain,
            out: self.out,
            seed: self.seed,
            segments: self.segments,
            alpha_min: self.alpha_min,
            alpha_max: self.alpha_max,
            budget_warm: self.budget_warm,
            budget_iter: self.budget_iter,
            no_base: self.no_base,
        });
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<RunSummary, CliError> {
    let with = |args: RunArgs, f: fn(&RunConfig) -> Result<RunSummary, CliError>| f(&args.into_config()?);
    match cli.command {
        Command::Retarget(a) => with(a, cmd_retarget),
        Command::Smr(a) => with(a, cmd_smr),
        Command::Tmr(a) => with(a, cmd_tmr),
        Command::Reconstruct(a) => with(a, cmd_reconstruct),
        Command::Metrics(a) => with(a, cmd_metrics),
        Command::Fixture(a) => cmd_fixture(
            &FixtureSpec {
                kind: a.kind,
                scale: a.scale,
                heavier: a.heavier,
                weaker: a.weaker,
            },
            &a.out,
        ),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(summary) => {
            for name in summary.files.keys() {
                println!("{}", summary.out_dir.join(name).display());
            }
            if let Some(alpha) = &summary.best_alpha {
                println!("alpha = {alpha:?}");
            }
            for r in &summary.reports {
                let slide = r
                    .foot_slide_mean_mm
                    .map(|v| format!("{v:.2} mm"))
                    .unwrap_or_else(|| "n/a".into());
                print!(
                    "{}: dtw {:.1} mm, foot slide {slide}, contact IoU {:.3}",
                    r.method, r.dtw_l1_mm, r.contact_iou
                );
                if let Some(rec) = r.recovery_rate_pct {
                    print!(", recovery {rec:.1}%");
                }
                println!();
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

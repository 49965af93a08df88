use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};
use vqsense::engine::RunConfig;
use vqsense::gradcheck::GradcheckOptions;
use vqsense_cli::artifacts::resolve_out_dir;
use vqsense_cli::commands::{self, Variant};
use vqsense_cli::config::{resolve, ConfigError, ConfigFile, Overrides};

#[derive(Parser)]
#[command(
    name = "vqsense",
    version,
    about = "Online conformal quantum phase sensing workbench"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one benchmark mode and write records plus aggregate curves.
    Run(Common),
    /// Run all four benchmark modes on shared seeds.
    Bench(Common),
    /// Check every analytic gradient against a numerical reference.
    Gradcheck(GradcheckArgs),
    /// Dynamic run with an ensemble or dropout estimator.
    Bayesian(BayesianArgs),
    /// Pretrain probe and estimator and write weight checkpoints.
    Pretrain(Common),
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Horizon (number of sensing steps).
    #[arg(long = "T")]
    horizon: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// dynamic, static, static-threshold or static-probe-estimator.
    #[arg(long)]
    mode: Option<String>,
    /// Output directory; defaults to $VQSENSE_OUT/<command>.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    hidden_size: Option<usize>,
    /// Threshold step size.
    #[arg(long)]
    eta: Option<f64>,
    /// Probe learning rate.
    #[arg(long)]
    eta_theta: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Flip every analytic gradient (negative control).
    #[arg(long, hide = true)]
    corrupt_gradients: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Ensemble,
    Dropout,
}

#[derive(Args)]
struct BayesianArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum, default_value = "ensemble")]
    variant: VariantArg,
    /// Ensemble size (default 5).
    #[arg(long)]
    members: Option<usize>,
    /// Dropout rate (default 0.4).
    #[arg(long)]
    dropout_rate: Option<f64>,
    /// Stochastic passes per dropout forward.
    #[arg(long)]
    passes: Option<usize>,
}

const ENSEMBLE_MEMBERS: usize = 5;
const DROPOUT_RATE: f64 = 0.4;

struct Resolved {
    cfg: RunConfig,
    file: Option<PathBuf>,
    out_dir: PathBuf,
}

fn resolve_common(c: &Common, base: RunConfig, command: &str) -> Result<Resolved> {
    let file = c.config.as_deref().map(ConfigFile::load).transpose()?;
    let overrides = Overrides {
        alpha: c.alpha,
        horizon: c.horizon,
        seed: c.seed,
        mode: c.mode.clone(),
        trials: c.trials,
        hidden: c.hidden_size,
        eta: c.eta,
        eta_theta: c.eta_theta,
        tau: c.tau,
    };
    let cfg = resolve(base, file.as_ref(), &overrides)?;
    Ok(Resolved {
        cfg,
        file: c.config.clone(),
        out_dir: resolve_out_dir(c.out_dir.as_deref(), command),
    })
}

fn bayesian_base(args: &BayesianArgs) -> RunConfig {
    let mut cfg = RunConfig::default();
    match args.variant {
        VariantArg::Ensemble => cfg.train.ensemble = ENSEMBLE_MEMBERS,
        VariantArg::Dropout => cfg.train.dropout = DROPOUT_RATE,
    }
    cfg
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(c) => {
            let r = resolve_common(&c, RunConfig::default(), "run")?;
            commands::run(&r.cfg, r.file.as_deref(), &r.out_dir)?;
        }
        Command::Bench(c) => {
            let r = resolve_common(&c, RunConfig::default(), "bench")?;
            commands::bench(&r.cfg, r.file.as_deref(), &r.out_dir)?;
        }
        Command::Pretrain(c) => {
            let r = resolve_common(&c, RunConfig::default(), "pretrain")?;
            commands::pretrain(&r.cfg, r.file.as_deref(), &r.out_dir)?;
        }
        Command::Bayesian(args) => {
            let mut r = resolve_common(&args.common, bayesian_base(&args), "bayesian")?;
            let variant = match args.variant {
                VariantArg::Ensemble => {
                    if let Some(m) = args.members {
                        r.cfg.train.ensemble = m;
                    }
                    r.cfg.train.dropout = 0.0;
                    Variant::Ensemble
                }
                VariantArg::Dropout => {
                    if let Some(d) = args.dropout_rate {
                        r.cfg.train.dropout = d;
                    }
                    Variant::Dropout
                }
            };
            if let Some(p) = args.passes {
                r.cfg.train.passes = p;
            }
            r.cfg.validate().map_err(|e| ConfigError(e.to_string()))?;
            if variant == Variant::Dropout && r.cfg.train.dropout <= 0.0 {
                return Err(
                    ConfigError("the dropout variant needs a dropout rate > 0".into()).into(),
                );
            }
            commands::bayesian(&r.cfg, variant, r.file.as_deref(), &r.out_dir)?;
        }
        Command::Gradcheck(g) => {
            let opts = GradcheckOptions {
                seed: g.seed,
                corrupt: g.corrupt_gradients,
                ..GradcheckOptions::default()
            };
            commands::gradcheck(&opts, &resolve_out_dir(g.out_dir.as_deref(), "gradcheck"))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

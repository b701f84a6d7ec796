mod commands;
mod config;
mod error;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use beliefmix::testbed::DEFAULT_RHO_GRID;
use clap::{Parser, Subcommand};

use crate::config::{ExperimentConfig, FormName, LawName, MeanFieldBlock, PhaseBlock};
use crate::error::CliError;

#[derive(Parser, Debug)]
#[command(name = "beliefmix", version, about = "Belief propagation experiments on mixtures of product distributions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug)]
struct Common {
    /// TOML experiment file
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `output` in the config)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args, Debug)]
struct WithStats {
    #[command(flatten)]
    common: Common,
    /// Read pairwise statistics from a CSV written by `stats` instead of the exact ones
    #[arg(long)]
    stats: Option<PathBuf>,
}

/// Flags override the `[mean_field]` block of `--config`.
#[derive(clap::Args, Debug)]
struct MeanFieldArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    v: Option<f64>,
    /// `default` or a comma-separated list
    #[arg(long)]
    rho_grid: Option<String>,
    #[arg(long, value_enum)]
    law: Option<LawName>,
    #[arg(long, value_enum)]
    form: Option<FormName>,
    #[arg(long)]
    field_scale: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a mixture instance
    Generate(Common),
    /// Exact single and pair statistics of the mixture
    Stats(Common),
    /// Build potentials from statistics and a model block
    Encode(WithStats),
    /// Fixed-point census over an alpha scan
    FixedPoints(WithStats),
    /// Decimation curve of a model
    Decimate(WithStats),
    /// Mean-field D_KL curve of the condensed branch
    MeanField(MeanFieldArgs),
    /// Spin-glass and Mattis transition lines
    Phase {
        #[arg(long)]
        config: Option<PathBuf>,
        /// comma-separated loads
        #[arg(long)]
        etas: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// CMA-ES search over quantile models
    Optimize(WithStats),
    /// Join a decimation curve with a mean-field curve
    Compare {
        #[arg(long)]
        bp: PathBuf,
        #[arg(long)]
        mf: PathBuf,
        /// smallest rho entering the max gap
        #[arg(long, default_value_t = 0.0)]
        rho_min: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Self::Generate(_) => "generate",
            Self::Stats(_) => "stats",
            Self::Encode(_) => "encode",
            Self::FixedPoints(_) => "fixed-points",
            Self::Decimate(_) => "decimate",
            Self::MeanField(_) => "mean-field",
            Self::Phase { .. } => "phase",
            Self::Optimize(_) => "optimize",
            Self::Compare { .. } => "compare",
        }
    }
}

fn parse_list(text: &str, what: &str) -> Result<Vec<f64>, CliError> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Usage(format!("bad number `{s}` in --{what}")))
        })
        .collect()
}

fn setup_threads() -> Result<usize, CliError> {
    let requested = match std::env::var("BELIEFMIX_THREADS") {
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n > 0 => Some(n),
            _ => return Err(CliError::Usage(format!("BELIEFMIX_THREADS must be a positive integer, got `{s}`"))),
        },
        Err(_) => None,
    };
    #[cfg(feature = "parallel")]
    if let Some(n) = requested {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    }
    #[cfg(not(feature = "parallel"))]
    let _ = requested;
    Ok(beliefmix::par::current_threads())
}

struct Job {
    dir: PathBuf,
    /// resolved configuration, re-runnable with `--config`
    echo: String,
}

fn prepare(common: &Common) -> Result<(ExperimentConfig, Job), CliError> {
    let cfg = ExperimentConfig::load(&common.config)?;
    let dir = commands::out_dir(common.out.clone(), Some(&cfg));
    let echo = cfg.to_toml();
    Ok((cfg, Job { dir, echo }))
}

fn mean_field_block(args: &MeanFieldArgs) -> Result<(MeanFieldBlock, Option<ExperimentConfig>), CliError> {
    let config = args.config.as_deref();
    let cfg = config.map(ExperimentConfig::load).transpose()?;
    let from_cfg = cfg.as_ref().and_then(|c| c.mean_field.clone());
    let need = |flag: Option<f64>, field: Option<f64>, name: &str| {
        flag.or(field).ok_or_else(|| match config {
            Some(_) => CliError::Config {
                path: format!("mean_field.{name}"),
                msg: "missing field".into(),
            },
            None => CliError::Usage(format!("--{name} is required without --config")),
        })
    };
    let block = MeanFieldBlock {
        eta: need(args.eta, from_cfg.as_ref().map(|b| b.eta), "eta")?,
        beta: need(args.beta, from_cfg.as_ref().map(|b| b.beta), "beta")?,
        v: need(args.v, from_cfg.as_ref().map(|b| b.v), "v")?,
        rho_grid: match args.rho_grid.as_deref() {
            None => from_cfg.as_ref().and_then(|b| b.rho_grid.clone()),
            Some("default") => Some(DEFAULT_RHO_GRID.to_vec()),
            Some(s) => Some(parse_list(s, "rho-grid")?),
        },
        law: args.law.or(from_cfg.as_ref().map(|b| b.law)).unwrap_or_default(),
        form: args.form.or(from_cfg.as_ref().map(|b| b.form)).unwrap_or_default(),
        field_scale: args.field_scale.or(from_cfg.as_ref().and_then(|b| b.field_scale)),
    };
    Ok((block, cfg))
}

fn flag_echo(cfg: Option<ExperimentConfig>, set: impl FnOnce(&mut ExperimentConfig)) -> String {
    let mut c = cfg.unwrap_or(ExperimentConfig {
        seed: 0,
        output: None,
        mixture: None,
        model: None,
        run: None,
        census: None,
        mean_field: None,
        phase: None,
        optimize: None,
    });
    set(&mut c);
    c.to_toml()
}

fn write_manifest(dir: &Path, command: &str, threads: usize, wall: f64, outputs: &[String]) -> Result<(), CliError> {
    let argv: Vec<String> = std::env::args().collect();
    let text = format!(
        "command: {command}\n\
         argv: {}\n\
         beliefmix: {}\n\
         beliefmix-cli: {}\n\
         parallel: {}\n\
         threads: {threads}\n\
         wall_time_s: {wall:.3}\n\
         outputs: {}\n\
         rerun: beliefmix {command} --config config.toml\n",
        argv.join(" "),
        env!("CARGO_PKG_VERSION"),
        env!("CARGO_PKG_VERSION"),
        cfg!(feature = "parallel"),
        outputs.join(", "),
    );
    std::fs::write(dir.join("manifest.txt"), text)?;
    Ok(())
}

type Stage = dyn FnOnce(&Path) -> Result<Vec<String>, CliError>;

fn run(cli: Cli) -> Result<(), CliError> {
    let start = Instant::now();
    let threads = setup_threads()?;
    let name = cli.command.name();
    let (job, outputs): (Job, Box<Stage>) = match cli.command {
        Command::Generate(c) => {
            let (cfg, job) = prepare(&c)?;
            (job, Box::new(move |d| commands::generate(&cfg, d)))
        }
        Command::Stats(c) => {
            let (cfg, job) = prepare(&c)?;
            (job, Box::new(move |d| commands::stats(&cfg, d)))
        }
        Command::Encode(c) => {
            let (cfg, job) = prepare(&c.common)?;
            (job, Box::new(move |d| commands::encode(&cfg, d, c.stats.as_deref())))
        }
        Command::FixedPoints(c) => {
            let (cfg, job) = prepare(&c.common)?;
            (job, Box::new(move |d| commands::fixed_points(&cfg, d, c.stats.as_deref())))
        }
        Command::Decimate(c) => {
            let (cfg, job) = prepare(&c.common)?;
            (job, Box::new(move |d| commands::decimate(&cfg, d, c.stats.as_deref())))
        }
        Command::Optimize(c) => {
            let (cfg, job) = prepare(&c.common)?;
            (job, Box::new(move |d| commands::optimize(&cfg, d, c.stats.as_deref())))
        }
        Command::MeanField(args) => {
            let (block, cfg) = mean_field_block(&args)?;
            let dir = commands::out_dir(args.out, cfg.as_ref());
            let echo = flag_echo(cfg, |c| c.mean_field = Some(block.clone()));
            (Job { dir, echo }, Box::new(move |d| commands::mean_field(&block, d)))
        }
        Command::Phase { config, etas, out } => {
            let cfg = config.as_deref().map(ExperimentConfig::load).transpose()?;
            let block = match (etas, cfg.as_ref().and_then(|c| c.phase.clone())) {
                (Some(s), _) => PhaseBlock {
                    etas: parse_list(&s, "etas")?,
                },
                (None, Some(b)) => b,
                (None, None) if config.is_some() => {
                    return Err(CliError::Config {
                        path: "phase.etas".into(),
                        msg: "missing field".into(),
                    })
                }
                (None, None) => return Err(CliError::Usage("--etas is required without --config".into())),
            };
            let dir = commands::out_dir(out, cfg.as_ref());
            let echo = flag_echo(cfg, |c| c.phase = Some(block.clone()));
            (Job { dir, echo }, Box::new(move |d| commands::phase(&block, d)))
        }
        Command::Compare { bp, mf, rho_min, out } => {
            let dir = out.unwrap_or_else(|| PathBuf::from("out"));
            let echo = format!(
                "# compare inputs\nbp = {:?}\nmf = {:?}\nrho_min = {rho_min}\n",
                bp.display().to_string(),
                mf.display().to_string()
            );
            (Job { dir, echo }, Box::new(move |d| commands::compare(&bp, &mf, rho_min, d)))
        }
    };
    std::fs::create_dir_all(&job.dir)?;
    std::fs::write(job.dir.join("config.toml"), &job.echo)?;
    let written = outputs(&job.dir)?;
    write_manifest(&job.dir, name, threads, start.elapsed().as_secs_f64(), &written)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

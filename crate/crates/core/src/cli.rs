//! Command-line front end. Exit status: 0 on success, 2 for usage, input
//! or configuration errors, 3 when a solve fails.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::OnceLock;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{ConfigError, RunConfig, Settings};
use crate::domain::StratumAxis;
use crate::ingest::{self, SynthParams};
use crate::run::{self, Dataset, RunError};
use crate::service::{self, ServeOptions};
use crate::solver::Control;

#[derive(Debug, Parser)]
#[command(
    name = "sitealloc",
    version,
    about = "Allocate testing sites for coverage, design quality and equity"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score an existing allocation
    Score {
        #[command(flatten)]
        common: Common,
        /// File listing the selected site ids, one per line
        allocation: PathBuf,
    },
    /// Search for the best allocation
    Optimize {
        #[command(flatten)]
        common: Common,
    },
    /// Score several allocations side by side
    Compare {
        #[command(flatten)]
        common: Common,
        /// Append the optimizer's allocation as a "proposed" row
        #[arg(long)]
        proposed: bool,
        /// Allocation files; each row is named after its file stem
        allocations: Vec<PathBuf>,
    },
    /// Write a synthetic county as areas.csv, strata.csv and sites.csv
    Synth(SynthArgs),
    /// Run the HTTP service
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Flat TOML file whose keys are the flag names below
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub run: RunConfig,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Directory for the generated files
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 60)]
    pub m: usize,
    #[arg(long, default_value_t = 25)]
    pub n_sites: usize,
    #[arg(long, default_value_t = 0.0)]
    pub segregation: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub site_types: u32,
    #[arg(long, default_value_t = crate::domain::DEFAULT_SITE_CAPACITY)]
    pub capacity: u64,
    /// Stratum axes as name=level,level; repeatable
    #[arg(long = "axis")]
    pub axes: Vec<String>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// One subdirectory per region holding areas.csv, sites.csv and optionally strata.csv and meta.toml
    #[arg(long)]
    pub data_dir: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Optimization jobs allowed to run at once
    #[arg(long, default_value_t = 2)]
    pub workers: usize,
    /// Jobs allowed to wait before submissions are refused
    #[arg(long, default_value_t = service::DEFAULT_QUEUE)]
    pub queue: usize,
    /// Send permissive CORS headers
    #[arg(long)]
    pub cors: bool,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Run(#[from] RunError),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            Self::Run(e) => e.exit_code(),
            Self::Io(_) => 2,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        Self::Run(e.into())
    }
}

fn interrupt_flag() -> &'static AtomicBool {
    static FLAG: OnceLock<&'static AtomicBool> = OnceLock::new();
    FLAG.get_or_init(|| {
        let flag: &'static AtomicBool = Box::leak(Box::new(AtomicBool::new(false)));
        if let Err(e) = ctrlc::set_handler(move || flag.store(true, Ordering::SeqCst)) {
            log::warn!("cannot install the interrupt handler: {e}");
        }
        flag
    })
}

fn init_threads(threads: Option<usize>) {
    if let Some(n) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            log::warn!("thread pool already initialized: {e}");
        }
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn emit<T: Serialize>(report: &T, out: Option<&Path>) -> Result<(), CliError> {
    let mut json = serde_json::to_string_pretty(report).map_err(|e| CliError::Io(e.to_string()))?;
    json.push('\n');
    match out {
        Some(path) => {
            std::fs::write(path, json).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
        }
        None => std::io::stdout()
            .write_all(json.as_bytes())
            .map_err(|e| CliError::Io(e.to_string())),
    }
}

fn prepare(common: &Common) -> Result<(RunConfig, Settings, Dataset), CliError> {
    let cfg = match &common.config {
        Some(path) => RunConfig::load(path)?.overlay(&common.run),
        None => common.run.clone(),
    };
    let settings = cfg.resolve()?;
    init_threads(cfg.threads);
    let data = Dataset::from_config(&cfg)?;
    Ok((cfg, settings, data))
}

fn parse_axis(spec: &str) -> Result<StratumAxis, CliError> {
    let (name, levels) = spec
        .split_once('=')
        .ok_or_else(|| ConfigError(format!("axis {spec:?} is not name=level,level")))?;
    let levels: Vec<&str> = levels
        .split(',')
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect();
    if name.trim().is_empty() || levels.is_empty() {
        return Err(ConfigError(format!("axis {spec:?} is not name=level,level")).into());
    }
    Ok(StratumAxis::new(name.trim(), levels))
}

fn synth(args: &SynthArgs) -> Result<(), CliError> {
    let base = SynthParams::default();
    let axes = if args.axes.is_empty() {
        base.axes.clone()
    } else {
        args.axes
            .iter()
            .map(|a| parse_axis(a))
            .collect::<Result<_, _>>()?
    };
    let params = SynthParams {
        m: args.m,
        n_sites: args.n_sites,
        segregation: args.segregation,
        seed: args.seed,
        site_types: args.site_types,
        site_capacity: args.capacity,
        axes,
        ..base
    };
    let (region, sites) = ingest::synth_region(&params).map_err(|e| ConfigError(e.to_string()))?;
    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| CliError::Io(format!("{}: {e}", args.out_dir.display())))?;
    let dir = &args.out_dir;
    ingest::save_region(&region, &dir.join("areas.csv"), &dir.join("strata.csv"))
        .map_err(RunError::from)?;
    ingest::save_sites(&sites, region.projection.as_ref(), &dir.join("sites.csv"))
        .map_err(RunError::from)?;
    Ok(())
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Score { common, allocation } => {
            let (cfg, settings, data) = prepare(&common)?;
            let ids = run::parse_allocation(&read_text(&allocation)?);
            let report = run::score(&data, &settings, &ids)?;
            emit(&report, cfg.out.as_deref())
        }
        Command::Optimize { common } => {
            let (cfg, settings, data) = prepare(&common)?;
            let control = Control {
                cancel: Some(interrupt_flag()),
                progress: None,
            };
            let report = run::optimize(&data, &settings, control)?;
            if report.interrupted {
                log::warn!("interrupted; writing the best allocation found so far");
            }
            emit(&report, cfg.out.as_deref())
        }
        Command::Compare {
            common,
            proposed,
            allocations,
        } => {
            let (cfg, settings, data) = prepare(&common)?;
            let schemes = allocations
                .iter()
                .map(|p| {
                    let name = p.file_stem().map_or_else(
                        || p.display().to_string(),
                        |s| s.to_string_lossy().into_owned(),
                    );
                    Ok((name, run::parse_allocation(&read_text(p)?)))
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            let control = Control {
                cancel: Some(interrupt_flag()),
                progress: None,
            };
            let report = run::compare(&data, &settings, &schemes, proposed, control)?;
            print!("{}", run::render_table(&report));
            match cfg.out.as_deref() {
                Some(path) => emit(&report, Some(path)),
                None => Ok(()),
            }
        }
        Command::Synth(args) => synth(&args),
        Command::Serve(args) => {
            init_threads(args.threads);
            let opts = ServeOptions {
                data_dir: args.data_dir,
                host: args.host,
                port: args.port,
                workers: args.workers,
                queue: args.queue,
                cors: args.cors,
            };
            service::serve_blocking(opts).map_err(|e| CliError::Io(e.to_string()))
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

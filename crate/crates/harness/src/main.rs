use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use covbench::config::ExperimentConfig;
use covbench::error::HarnessError;
use covbench::verify::{self, Faults};
use covbench::{presets, trailing_mean};
use covbench_core::toy::TwoModeConfig;

/// Writes to stdout, ignoring a closed pipe.
macro_rules! out {
    ($($t:tt)*) => {{
        let _ = write!(std::io::stdout(), $($t)*);
    }};
}

#[derive(Parser)]
#[command(name = "covbench", version, about = "Exact-enumeration testbed for scalarized multi-objective policy optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a config file or preset and write one record per step.
    Run {
        #[command(flatten)]
        source: Source,
        /// Overrides the output path from the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Trailing window for the summary printed at the end (display only; output rows are raw).
        #[arg(long, default_value_t = 10)]
        window: usize,
    },
    /// Run verification suites (tilt, covariance-law, toy, fisher, clipping, pl, gradients,
    /// mgda, controllers, interference, or all).
    Verify {
        suites: Vec<String>,
        /// Deliberately break one closed form (negative control).
        #[arg(long, hide = true)]
        plant_fault: Option<String>,
    },
    /// Two-mode closed-form trajectory as CSV.
    Toy(ToyArgs),
    /// Covariance-law residual order check at the initial policy.
    Sweep {
        #[command(flatten)]
        source: Source,
        /// Strictly decreasing step sizes, at least three.
        #[arg(long, value_delimiter = ',', default_values_t = [1e-2, 5e-3, 2.5e-3])]
        etas: Vec<f64>,
    },
    /// List presets, or print one as a config file.
    Presets {
        #[arg(long, value_name = "NAME")]
        dump: Option<String>,
    },
}

#[derive(Args)]
struct Source {
    /// Config file (TOML).
    #[arg(required_unless_present = "preset", conflicts_with = "preset")]
    config: Option<PathBuf>,
    #[arg(long)]
    preset: Option<String>,
    /// Overrides the training seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl Source {
    fn load(&self) -> Result<ExperimentConfig, HarnessError> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), _) => ExperimentConfig::from_file(path)?,
            (None, Some(name)) => presets::require(name)?,
            (None, None) => return Err(HarnessError::Config("no config file or preset given".into())),
        };
        if let Some(seed) = self.seed {
            cfg.train.seed = seed;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct ToyArgs {
    /// Initial probability of the bad mode, in (0, 1).
    #[arg(long, default_value_t = 0.5, allow_negative_numbers = true)]
    p0: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    s_good: f64,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    s_bad: f64,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    r_good: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    r_bad: f64,
    #[arg(long, default_value_t = 0.1, allow_negative_numbers = true)]
    eta: f64,
    #[arg(long, default_value_t = 200)]
    steps: usize,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) if broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn broken_pipe(e: &HarnessError) -> bool {
    let io = match e {
        HarnessError::Io(io) => Some(io),
        HarnessError::Csv(c) => match c.kind() {
            csv::ErrorKind::Io(io) => Some(io),
            _ => None,
        },
        _ => None,
    };
    io.is_some_and(|io| io.kind() == std::io::ErrorKind::BrokenPipe)
}

fn dispatch(cmd: Command) -> Result<u8, HarnessError> {
    match cmd {
        Command::Run { source, out, window } => {
            let mut cfg = source.load()?;
            if let Some(out) = out {
                cfg.output.path = out;
            }
            let summary = covbench::run(&cfg)?;
            out!("wrote {} records to {}\n", summary.records.len(), summary.output.display());
            if let Some(last) = summary.records.last() {
                let rows: Vec<Vec<f64>> = summary.records.iter().map(|r| r.rewards.clone()).collect();
                let avg = trailing_mean(&rows, window);
                out!("final V = {:.6}\n", last.value);
                out!("initial rewards        {:.6?}\n", summary.initial_rewards);
                out!("final rewards          {:.6?}\n", last.rewards);
                out!("rewards, last {window:>3} avg  {avg:.6?}\n");
            }
            Ok(0)
        }
        Command::Verify { suites, plant_fault } => {
            let names = verify::select(&suites)?;
            let faults = match plant_fault {
                Some(f) => Faults::parse(&f)?,
                None => Faults::default(),
            };
            let reports = verify::run_suites(&names, faults)?;
            let mut ok = true;
            for r in &reports {
                out!("{r}\n");
                ok &= r.pass;
            }
            let passed = reports.iter().filter(|r| r.pass).count();
            out!("{passed}/{} suites passed\n", reports.len());
            Ok(if ok { 0 } else { 1 })
        }
        Command::Toy(a) => {
            let cfg = TwoModeConfig {
                p0: a.p0,
                s_good: a.s_good,
                s_bad: a.s_bad,
                r_good: a.r_good,
                r_bad: a.r_bad,
                eta: a.eta,
                steps: a.steps,
            };
            cfg.validate().map_err(HarnessError::from)?;
            match a.out {
                Some(path) => covbench::write_toy_csv(&cfg, BufWriter::new(File::create(path)?))?,
                None => covbench::write_toy_csv(&cfg, std::io::stdout().lock())?,
            }
            Ok(0)
        }
        Command::Sweep { source, etas } => {
            let cfg = source.load()?;
            let report = covbench::sweep(&cfg, &etas)?;
            out!("{}", report.render());
            Ok(if report.pass() { 0 } else { 1 })
        }
        Command::Presets { dump } => {
            match dump {
                Some(name) => out!("{}", presets::require(&name)?.to_toml_string()?),
                None => {
                    for n in presets::names() {
                        out!("{n}\n");
                    }
                }
            }
            Ok(0)
        }
    }
}

//! `softrigid`: runs declarative scenarios, certifies regulator gains and
//! identifies coupling stiffness.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use softrigid::scenario::{parse_config, run_scenario, write_report, ScenarioConfig, ScenarioKind, ScenarioReport};
use softrigid::Error;

/// Exit status when the config cannot be read or fails validation.
const EXIT_CONFIG: u8 = 2;
/// Exit status when a run fails (divergence, solver failure, I/O).
const EXIT_RUN: u8 = 1;
/// Exit status when a gain certificate does not hold.
const EXIT_UNCERTIFIED: u8 = 3;

#[derive(Parser)]
#[command(name = "softrigid", version, about = "Soft-rigid robot scenario runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Overrides {
    /// Integration step (s).
    #[arg(long)]
    dt: Option<f64>,
    /// Simulated duration (s).
    #[arg(long)]
    duration: Option<f64>,
    /// Output file; for several configs, a directory.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Seed for randomized elements.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its trajectory CSV and summary.
    Simulate {
        /// Scenario file(s); several require --sweep.
        #[arg(required = true)]
        configs: Vec<PathBuf>,
        /// Run several configs in parallel, each to its own output.
        #[arg(long)]
        sweep: bool,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Check the gain certificate of a regulator scenario.
    Certify {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Fit every coupling family to a dataset and rank them.
    Identify {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Parse and validate a scenario without running it.
    Validate { config: PathBuf },
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config { .. } => EXIT_CONFIG,
            _ => EXIT_RUN,
        };
        Failure { code, message: e.to_string() }
    }
}

fn load(path: &Path, overrides: &Overrides, kind: Option<ScenarioKind>) -> Result<ScenarioConfig, Failure> {
    let mut cfg = parse_config(path).map_err(|e| match e {
        Error::Io { .. } => Failure { code: EXIT_CONFIG, message: e.to_string() },
        other => other.into(),
    })?;
    if let Some(k) = kind {
        cfg.kind = k;
    }
    if let Some(dt) = overrides.dt {
        cfg.dt = dt;
    }
    if let Some(d) = overrides.duration {
        cfg.duration = d;
    }
    if let Some(s) = overrides.seed {
        cfg.seed = s;
    }
    if let Some(o) = &overrides.output {
        cfg.output_path = Some(o.display().to_string());
    }
    cfg.build()?;
    Ok(cfg)
}

fn finish(cfg: &ScenarioConfig, report: &ScenarioReport) -> Result<(), Failure> {
    if let Some(out) = &cfg.output_path {
        let n = cfg.robot.dof();
        write_report(report, n, cfg.robot.actuated.len(), Path::new(out))?;
    }
    Ok(())
}

fn simulate_one(path: &Path, overrides: &Overrides) -> Result<String, Failure> {
    let cfg = load(path, overrides, None)?;
    let report = run_scenario(&cfg)?;
    finish(&cfg, &report)?;
    if let Some(cert) = &report.certificate {
        return certificate_outcome(cert);
    }
    if let Some(fits) = &report.fits {
        return Ok(fit_table(fits));
    }
    Ok(serde_json::to_string_pretty(&report.metrics).expect("serializes"))
}

fn fit_table(fits: &[softrigid::identification::FitResult]) -> String {
    let mut s = String::from(softrigid::identification::FitResult::csv_header());
    for f in fits {
        s.push('\n');
        s.push_str(&f.csv_row());
        if f.is_negative() {
            s.push_str("  # negative stiffness");
        }
    }
    s
}

fn certificate_outcome(cert: &softrigid::control::GainCertificate) -> Result<String, Failure> {
    let text = serde_json::to_string_pretty(cert).expect("serializes");
    if cert.verdict {
        Ok(text)
    } else {
        Err(Failure {
            code: EXIT_UNCERTIFIED,
            message: format!(
                "{text}\ncertificate failed: {}",
                cert.failure.as_deref().unwrap_or("unknown condition")
            ),
        })
    }
}

fn sweep(configs: &[PathBuf], overrides: &Overrides) -> Result<String, Failure> {
    if let Some(dir) = &overrides.output {
        std::fs::create_dir_all(dir).map_err(|source| Failure::from(Error::Io { path: dir.display().to_string(), source }))?;
    }
    let results: Vec<(PathBuf, Result<String, Failure>)> = std::thread::scope(|s| {
        let handles: Vec<_> = configs
            .iter()
            .map(|path| {
                let mut o = overrides.clone();
                if let Some(dir) = &overrides.output {
                    let stem = path.file_stem().unwrap_or_default();
                    o.output = Some(dir.join(stem).with_extension("csv"));
                }
                s.spawn(move || (path.clone(), simulate_one(path, &o)))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    let mut out = Vec::new();
    let mut worst = 0u8;
    for (path, r) in results {
        match r {
            Ok(_) => out.push(format!("ok   {}", path.display())),
            Err(f) => {
                worst = worst.max(f.code);
                out.push(format!("FAIL {}: {}", path.display(), f.message));
            }
        }
    }
    let text = out.join("\n");
    if worst == 0 {
        Ok(text)
    } else {
        Err(Failure { code: worst, message: text })
    }
}

fn run(cli: Cli) -> Result<String, Failure> {
    match cli.command {
        Command::Simulate { configs, sweep: is_sweep, overrides } => {
            if configs.len() > 1 && !is_sweep {
                return Err(Failure { code: EXIT_CONFIG, message: "several configs need --sweep".into() });
            }
            if is_sweep {
                sweep(&configs, &overrides)
            } else {
                simulate_one(&configs[0], &overrides)
            }
        }
        Command::Certify { config, overrides } => {
            let cfg = load(&config, &overrides, Some(ScenarioKind::Certify))?;
            let report = run_scenario(&cfg)?;
            finish(&cfg, &report)?;
            certificate_outcome(report.certificate.as_ref().expect("certify report"))
        }
        Command::Identify { config, overrides } => {
            let cfg = load(&config, &overrides, Some(ScenarioKind::Identify))?;
            let report = run_scenario(&cfg)?;
            finish(&cfg, &report)?;
            Ok(fit_table(report.fits.as_deref().unwrap_or_default()))
        }
        Command::Validate { config } => {
            let cfg = load(&config, &Overrides { dt: None, duration: None, output: None, seed: None }, None)?;
            Ok(format!("{}: valid {:?} scenario, {} steps", config.display(), cfg.kind, cfg.n_steps()))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(text) => {
            println!("{text}");
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

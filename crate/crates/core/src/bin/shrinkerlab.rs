use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use shrinkerlab::entropy::{log_spaced, mu_profile};
use shrinkerlab::harness::{parse_model, run_suite, Report, RunConfig, Status};
use shrinkerlab::heat::heat_kernel;
use shrinkerlab::lgeo::reduced_distance;
use shrinkerlab::models::{Point, ShrinkerModel};
use shrinkerlab::Result;

#[derive(Parser)]
#[command(name = "shrinkerlab", version, about = "Numerical checks on model Ricci shrinkers")]
struct Cli {
    /// Run configuration (JSON, or TOML by extension).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List the configured models with their invariants.
    Catalog,
    /// μ(g, τ) over a log-spaced grid, printed as CSV.
    EntropyProfile {
        #[arg(long)]
        model: String,
        #[arg(long, default_value_t = 1e-2)]
        tau_min: f64,
        #[arg(long, default_value_t = 1e2)]
        tau_max: f64,
        #[arg(long, default_value_t = 20)]
        points: usize,
        /// Also write the profile CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Conjugate heat kernel H(x, t; y, s).
    HeatKernel(PairArgs),
    /// Reduced distance l from (x, t) to (y, s).
    ReducedDistance {
        #[command(flatten)]
        pair: PairArgs,
        /// Write the minimizing path as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run one suite, or all of them.
    Check { suite: String },
    /// Run the configured suites and write the report to PATH.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(clap::Args)]
struct PairArgs {
    /// e.g. gaussian:3, sphere:2, cylinder:4:2
    #[arg(long)]
    model: String,
    /// Reduced coordinates θ,ρ of the later point.
    #[arg(long, value_parser = parse_pair, allow_hyphen_values = true)]
    x: (f64, f64),
    #[arg(long, allow_hyphen_values = true)]
    t: f64,
    #[arg(long, value_parser = parse_pair, allow_hyphen_values = true)]
    y: (f64, f64),
    #[arg(long, allow_hyphen_values = true)]
    s: f64,
}

fn parse_pair(text: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = text.split_once(',').ok_or("expected θ,ρ")?;
    let p = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("{v}: {e}"));
    Ok((p(a)?, p(b)?))
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::from_path(p),
        None => Ok(RunConfig::default()),
    }
}

fn model(text: &str) -> Result<ShrinkerModel> {
    parse_model(text)?.build()
}

fn summarize(report: &Report) -> ExitCode {
    for c in &report.checks {
        let tag = match c.status {
            Status::Pass => "pass",
            Status::Fail => "FAIL",
            Status::Recorded => "rec ",
        };
        println!("{tag} {:<60} lhs={:.6e} rhs={:.6e} margin={:.3e}", c.id, c.lhs, c.rhs, c.margin);
        if c.status == Status::Fail {
            for n in &c.notes {
                println!("     {n}");
            }
        }
    }
    let s = &report.summary;
    println!(
        "{} checks: {} passed, {} failed, {} recorded; digest {}",
        s.checks, s.passed, s.failed, s.recorded, report.digest
    );
    if s.failed > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let mut cfg = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Catalog => {
            println!("{:<14} {:>2} {:>2} {:>10} {:>14} {:>10}", "model", "n", "k", "radius", "mu", "R");
            for spec in &cfg.models {
                let m = spec.build()?;
                println!(
                    "{:<14} {:>2} {:>2} {:>10.6} {:>14.10} {:>10.6}",
                    m.name(),
                    m.n,
                    m.sphere_dim(),
                    m.radius(),
                    m.mu,
                    m.scalar_curvature() + 0.0
                );
            }
        }
        Command::EntropyProfile { model: name, tau_min, tau_max, points, out } => {
            let m = model(&name)?;
            let profile = mu_profile(&m, &log_spaced(tau_min, tau_max, points))?;
            println!("tau,mu,error_estimate,residual,iterations");
            for nd in &profile.nodes {
                println!("{:.12e},{:.12e},{:.3e},{:.3e},{}", nd.tau, nd.mu, nd.error_estimate, nd.residual, nd.iterations);
            }
            eprintln!(
                "mu(1) = {:.12}; min at tau = 1: {}; worst monotonicity violation {:.3}",
                profile.at_one.mu, profile.min_at_one, profile.worst_violation
            );
            if let Some(p) = out {
                profile.write_csv(&p)?;
            }
        }
        Command::HeatKernel(a) => {
            let m = model(&a.model)?;
            let k = heat_kernel(&m, &Point::reduced(&m, a.x.0, a.x.1), a.t, &Point::reduced(&m, a.y.0, a.y.1), a.s)?;
            println!("{}", serde_json::to_string_pretty(&k)?);
        }
        Command::ReducedDistance { pair: a, trace } => {
            let m = model(&a.model)?;
            let r = reduced_distance(&m, &Point::reduced(&m, a.x.0, a.x.1), a.t, &Point::reduced(&m, a.y.0, a.y.1), a.s)?;
            println!("l = {:.12e} (refinement {:.3e})", r.l, r.refinement);
            if let Some(p) = trace {
                r.path.write_csv(&p)?;
            }
        }
        Command::Check { suite } => {
            if suite != "all" {
                cfg.suites = vec![suite];
            }
            let report = run_suite(&cfg)?;
            return Ok(summarize(&report));
        }
        Command::Report { out } => {
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                cfg.output.dir = dir.to_path_buf();
            }
            if let Some(name) = out.file_name() {
                cfg.output.report = name.to_string_lossy().into_owned();
            }
            let report = run_suite(&cfg)?;
            println!("wrote {}", out.display());
            return Ok(summarize(&report));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

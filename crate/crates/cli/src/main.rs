use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use holonomy_core::bridge::{Admissibility, SamplerKind};
use holonomy_core::experiments::{self, ExperimentConfig, ExperimentReport, TransportKind, Verdict};

#[derive(Parser)]
#[command(name = "holonomy", version = experiments::VERSION, about = "Holonomy distributions of Brownian loops")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample the holonomy distribution for each m.
    Dist(Run),
    /// Distance to the reference measure along the m schedule.
    Refine(Run),
    /// Family members against their limit on common loops.
    Family(Run),
    /// Densifying groups against collapsing measures on a circle.
    Jump(Run),
    /// Mass outside a closed subgroup.
    Subgroup(Run),
    /// Limit arc mass of a flat U(1) family.
    BsDetect(Run),
    /// Loop holonomy against the enclosed curvature.
    Stokes(Run),
    /// Built-in oracle checks.
    Selftest(Selftest),
}

#[derive(Clone, Copy, ValueEnum)]
enum SamplerArg {
    Exact,
    Is,
}

#[derive(Clone, Copy, ValueEnum)]
enum TransportArg {
    Ode,
    ExactU1,
    Ito,
}

#[derive(Clone, Copy, ValueEnum)]
enum AdmissibilityArg {
    Enforce,
    Lift,
}

#[derive(Args)]
struct Run {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed; one of the two is required.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory [default: out/<subcommand>].
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    /// Comma-separated partition sizes.
    #[arg(long, value_delimiter = ',')]
    m: Option<Vec<usize>>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long, value_enum)]
    sampler: Option<SamplerArg>,
    #[arg(long, value_enum)]
    transport: Option<TransportArg>,
    #[arg(long)]
    steps_per_segment: Option<usize>,
    #[arg(long, value_enum)]
    admissibility: Option<AdmissibilityArg>,
    /// Print the report JSON to stdout.
    #[arg(long)]
    print: bool,
}

#[derive(Args)]
struct Selftest {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    print: bool,
}

impl Run {
    fn config(&self) -> holonomy_core::Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config).map_err(|e| {
            holonomy_core::Error::InvalidConfig(format!("{}: {e}", self.config.display()))
        })?;
        if let Some(s) = self.seed {
            cfg.seed = Some(s);
        }
        if let Some(o) = &self.out {
            cfg.out = Some(o.clone());
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        if let Some(m) = &self.m {
            cfg.m = m.clone();
        }
        if let Some(n) = self.samples {
            cfg.samples = n;
        }
        if let Some(s) = self.sampler {
            cfg.sampler = match s {
                SamplerArg::Exact => SamplerKind::Exact,
                SamplerArg::Is => SamplerKind::Is,
            };
        }
        if let Some(t) = self.transport {
            cfg.transport = match t {
                TransportArg::Ode => TransportKind::Ode,
                TransportArg::ExactU1 => TransportKind::ExactU1,
                TransportArg::Ito => TransportKind::Ito,
            };
        }
        if self.steps_per_segment.is_some() {
            cfg.steps_per_segment = self.steps_per_segment;
        }
        if let Some(a) = self.admissibility {
            cfg.admissibility = match a {
                AdmissibilityArg::Enforce => Admissibility::Enforce,
                AdmissibilityArg::Lift => Admissibility::Lift,
            };
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn execute(cli: Cli) -> holonomy_core::Result<(ExperimentReport, PathBuf, bool)> {
    let (run, f): (&Run, fn(&ExperimentConfig) -> holonomy_core::Result<ExperimentReport>) = match &cli.command {
        Command::Selftest(s) => {
            let report = experiments::run_selftest(s.seed)?;
            let dir = s.out.clone().unwrap_or_else(|| PathBuf::from("out/selftest"));
            return Ok((report, dir, s.print));
        }
        Command::Dist(r) => (r, experiments::run_distribution),
        Command::Refine(r) => (r, experiments::run_refinement),
        Command::Family(r) => (r, experiments::run_family_convergence),
        Command::Jump(r) => (r, experiments::run_jump_demo),
        Command::Subgroup(r) => (r, experiments::run_subgroup_criterion),
        Command::BsDetect(r) => (r, experiments::run_bs_detector),
        Command::Stokes(r) => (r, experiments::run_stokes),
    };
    let cfg = run.config()?;
    let report = f(&cfg)?;
    let dir = cfg
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("out").join(&report.command));
    Ok((report, dir, run.print))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (report, dir, print) = match execute(cli) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    if let Err(e) = report.write(&dir) {
        eprintln!("error: writing {}: {e}", dir.display());
        return ExitCode::from(1);
    }
    if print {
        println!("{}", serde_json::to_string_pretty(&report.to_json()).unwrap_or_default());
    }
    let verdict = report.verdict.map_or("DONE", Verdict::as_str);
    println!(
        "{} {verdict} ({:.2} s) -> {}",
        report.command,
        report.runtime_seconds,
        dir.display()
    );
    log::info!("config hash {}", report.config_hash);
    match report.verdict {
        Some(Verdict::Fail) => ExitCode::from(2),
        _ => ExitCode::SUCCESS,
    }
}

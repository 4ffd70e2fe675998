use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sheetsew::{exit_code, run, ExperimentConfig, Overrides, Violation};

#[derive(Parser)]
#[command(name = "sheetsew", version, about = "Multiparameter sewing and Gaussian sheet experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Randomised identity suite of the increment algebra.
    AlgebraSelftest(Args),
    /// Draw sheets on a dyadic grid.
    Sample(Args),
    /// Local non-determinism constants and conditional-variance bounds.
    Lnd(Args),
    /// Multilevel sewing of the conditional exponential germ.
    Sew(Args),
    /// Monte Carlo BDG ratios.
    Bdg(Args),
    /// Fourier decay of the occupation measure.
    Occupation(Args),
    /// Local-time histograms and time-Hölder fits.
    Localtime(Args),
    /// Picard solution of the regularised equation.
    Solve(Args),
}

#[derive(clap::Args)]
struct Args {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    /// Exit with status 3 when any acceptance check fails.
    #[arg(long)]
    check: bool,
    /// Only validate the config and print violations.
    #[arg(long)]
    validate_only: bool,
}

impl Command {
    fn split(self) -> (&'static str, Args) {
        match self {
            Self::AlgebraSelftest(a) => ("algebra-selftest", a),
            Self::Sample(a) => ("sample", a),
            Self::Lnd(a) => ("lnd", a),
            Self::Sew(a) => ("sew", a),
            Self::Bdg(a) => ("bdg", a),
            Self::Occupation(a) => ("occupation", a),
            Self::Localtime(a) => ("localtime", a),
            Self::Solve(a) => ("solve", a),
        }
    }
}

fn main() -> ExitCode {
    let (name, args) = Cli::parse().command.split();
    let mut config = match ExperimentConfig::load(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    if config.experiment != name {
        eprintln!("error: config is for '{}', not '{name}'", config.experiment);
        return ExitCode::from(1);
    }
    config.apply(&Overrides { seed: args.seed, samples: args.samples, out: args.out, workers: args.workers });

    // Output goes through a locked handle and write errors are ignored, so a
    // closed pipe (`| head`) does not turn into a panic.
    let mut out = std::io::stdout().lock();
    if args.validate_only {
        let v = sheetsew::validate(&config);
        for x in &v {
            let _ = writeln!(out, "{x}");
        }
        return ExitCode::from(if v.iter().any(Violation::is_error) { 1 } else { 0 });
    }

    let result = run(config);
    match &result {
        Ok(m) => {
            for w in &m.warnings {
                eprintln!("{w}");
            }
            for c in &m.checks {
                let _ = writeln!(out, "{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            let _ = writeln!(out, "{} finished in {:.2}s; manifest hash {}", m.experiment, m.wall_seconds, &m.config_hash[..12]);
        }
        Err(e) => eprintln!("error: {e}"),
    }
    ExitCode::from(exit_code(&result, args.check) as u8)
}

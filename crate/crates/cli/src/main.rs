use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use filippov_sa::experiment::{self, ExperimentConfig, SeedSummary};
use filippov_sa::fields::DEFAULT_RADIUS_TOL;
use filippov_sa::inclusion::integrate_filippov;
use filippov_sa::io::write_atomic;
use filippov_sa::{Error, PiecewiseField};

/// Stochastic approximation with discontinuous drift: experiment runner.
#[derive(Parser)]
#[command(name = "sa-lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated seeds; override `seeds` in the config.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Suppress progress output.
    #[arg(long)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run the SA iteration for every seed and write all reports.
    Simulate(Common),
    /// Integrate the Filippov inclusion from the config's `x0`.
    Integrate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        t_end: f64,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
    },
    /// Print the Filippov and Krasovskii hulls at query points.
    Maps {
        /// Builtin field name; used when no config is given.
        #[arg(long, conflicts_with = "config")]
        field: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated coordinates; repeat for several points.
        #[arg(long, required = true)]
        point: Vec<String>,
        #[arg(long, default_value_t = DEFAULT_RADIUS_TOL)]
        tol: f64,
    },
    /// Recompute tracking, residual and support CSVs from existing traces.
    Measures(Common),
    /// Compare a density noise against an atomic noise on the same config.
    Study(Common),
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::ConfigInvalid { .. }
        | Error::InvalidArgument(_)
        | Error::DimensionMismatch { .. }
        | Error::WindowExceedsTrace { .. } => 2,
        Error::DivergedIterate { .. } => 3,
        Error::Io { .. } | Error::Csv { .. } => 4,
        _ => 1,
    }
}

fn load(common: &Common) -> Result<ExperimentConfig, Error> {
    let mut config = ExperimentConfig::load(&common.config)?;
    if let Some(out) = &common.out {
        config.output_dir = out.clone();
    }
    if let Some(seeds) = &common.seeds {
        config.seeds = seeds.clone();
    }
    Ok(config)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.4e}")).unwrap_or_else(|| "-".into())
}

fn report_seeds(seeds: &[SeedSummary]) {
    for s in seeds {
        match &s.diverged {
            Some(d) => println!(
                "seed {}: diverged at step {} (|x| = {:.3e})",
                s.seed, d.step, d.norm
            ),
            None => println!(
                "seed {}: t(N) = {}, tracking head/tail median = {}/{}, filippov support = {}",
                s.seed,
                fmt_opt(s.final_time),
                fmt_opt(s.tracking_head_median),
                fmt_opt(s.tracking_tail_median),
                fmt_opt(s.support.last().map(|f| f.filippov)),
            ),
        }
    }
}

fn diverged(seeds: &[SeedSummary]) -> bool {
    seeds.iter().any(|s| s.diverged.is_some())
}

fn parse_point(s: &str) -> Result<Vec<f64>, Error> {
    s.split(',')
        .map(|c| {
            c.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("bad coordinate `{c}` in point `{s}`")))
        })
        .collect()
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Simulate(common) => {
            let config = load(&common)?;
            let summary = experiment::run_experiment(&config)?;
            if !common.quiet {
                for w in &summary.schedule.verdicts {
                    println!("warning: stepsize schedule: {w}");
                }
                report_seeds(&summary.seeds);
                println!(
                    "summary: {}",
                    config.output_dir.join("summary.json").display()
                );
            }
            Ok(if summary.any_diverged { 3 } else { 0 })
        }
        Command::Integrate { common, t_end, dt } => {
            let config = load(&common)?;
            let field = config.validate()?;
            let traj = integrate_filippov(&field, &config.x0, t_end, dt)?;
            let path = config.output_dir.join("trajectory.csv");
            write_atomic(&path, &traj.to_csv())?;
            if !common.quiet {
                println!("x({}) = {:?}", traj.end_time(), traj.last_point());
                println!("trajectory: {}", path.display());
            }
            Ok(0)
        }
        Command::Maps {
            field,
            config,
            point,
            tol,
        } => {
            let field = match (field, config) {
                (_, Some(path)) => ExperimentConfig::load(&path)?.field.resolve()?,
                (Some(name), None) => PiecewiseField::builtin(&name)?,
                (None, None) => {
                    return Err(Error::InvalidArgument("pass --field or --config".into()))
                }
            };
            let mut out = Vec::new();
            for p in &point {
                let x = parse_point(p)?;
                if x.len() != field.dimension() {
                    return Err(Error::DimensionMismatch {
                        expected: field.dimension(),
                        got: x.len(),
                    });
                }
                let f = field.filippov_map(&x, tol)?;
                let k = field.krasovskii_map(&x, tol)?;
                out.push(serde_json::json!({
                    "point": x,
                    "filippov": f.vertices(),
                    "krasovskii": k.vertices(),
                }));
            }
            println!("{}", serde_json::to_string_pretty(&out).expect("json"));
            Ok(0)
        }
        Command::Measures(common) => {
            let config = load(&common)?;
            let seeds = experiment::recompute_measures(&config)?;
            if !common.quiet {
                report_seeds(&seeds);
            }
            Ok(0)
        }
        Command::Study(common) => {
            let config = load(&common)?;
            let study = experiment::compare_noise_study(&config)?;
            if !common.quiet {
                for arm in [&study.density_arm, &study.atomic_arm] {
                    println!("arm {} (density noise: {})", arm.label, arm.density);
                    report_seeds(&arm.seeds);
                }
                println!("verdict: {}", study.verdict);
                println!("table: {}", config.output_dir.join("study.csv").display());
            }
            let bad = diverged(&study.density_arm.seeds) || diverged(&study.atomic_arm.seeds);
            Ok(if bad { 3 } else { 0 })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hetnetsim::report::Metric;
use hetnetsim::report::{compare, ReportError, ResultBundle};
use hetnetsim::scenario::{builtin_named, BuiltinScenario, ConfigError, ScenarioConfig};
use hetnetsim::sim::{self, SimError};

#[derive(Parser)]
#[command(
    name = "hetnetsim",
    version,
    about = "VoIP QoS over WiFi and WiMAX access networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its CSV series and JSON bundle.
    Run {
        /// Built-in scenario name or path to a JSON config.
        #[arg(long)]
        scenario: String,
        /// Seed of the first repetition; defaults to the config's seed.
        #[arg(long, env = "HETNETSIM_SEED")]
        seed: Option<u64>,
        /// Simulated seconds, overriding the config.
        #[arg(long)]
        duration: Option<f64>,
        /// Number of independent runs with consecutive seeds.
        #[arg(long, default_value_t = 1)]
        repetitions: u32,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Overlay two or more bundles and tabulate which run is lowest per bucket.
    Compare {
        #[arg(required = true, num_args = 2..)]
        bundles: Vec<PathBuf>,
        #[arg(long, default_value = "compare")]
        out: PathBuf,
    },
    /// List the built-in scenarios.
    ListScenarios,
}

/// Input problems exit with 1, everything else with 2.
enum Failure {
    Invalid(String),
    Runtime(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Invalid(e.to_string())
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(c) => c.into(),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<ReportError> for Failure {
    fn from(e: ReportError) -> Self {
        match e {
            ReportError::BucketMismatch { .. }
            | ReportError::TooFewBundles(_)
            | ReportError::Json { .. } => Failure::Invalid(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

fn load_scenario(arg: &str) -> Result<ScenarioConfig, ConfigError> {
    let path = Path::new(arg);
    if path.extension().is_some_and(|e| e == "json") || path.is_file() {
        ScenarioConfig::load(path)
    } else {
        builtin_named(arg)
    }
}

fn run(
    scenario: &str,
    seed: Option<u64>,
    duration: Option<f64>,
    repetitions: u32,
    out: &Path,
) -> Result<(), Failure> {
    let mut base = load_scenario(scenario)?;
    if let Some(d) = duration {
        base.duration_s = d;
    }
    if let Some(s) = seed {
        base.seed = s;
    }
    base.validate()?;
    if repetitions == 0 {
        return Err(Failure::Invalid(
            "invalid repetitions: must be at least 1".into(),
        ));
    }
    let configs: Vec<ScenarioConfig> = (0..u64::from(repetitions))
        .map(|k| ScenarioConfig {
            seed: base.seed.wrapping_add(k),
            ..base.clone()
        })
        .collect();
    // Each repetition owns its kernel; results are gathered afterwards in seed order.
    let results: Vec<Result<sim::RunOutput, SimError>> = std::thread::scope(|s| {
        let handles: Vec<_> = configs
            .into_iter()
            .map(|c| s.spawn(move || sim::run(c)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("run thread panicked"))
            .collect()
    });
    for r in results {
        let output = r?;
        let bundle = ResultBundle::from_output(&output);
        let (csv, json) = bundle.write(out)?;
        let s = &bundle.summary;
        println!(
            "{} seed {}: calls {} placed / {} connected / {} blocked, delay {} ms ({}), jitter {} ms ({}), loss {}, MOS {}",
            bundle.scenario,
            bundle.seed,
            s.calls.placed,
            s.calls.connected,
            s.calls.blocked,
            s.mean_delay_ms,
            s.delay_band,
            s.mean_jitter_ms,
            s.jitter_band,
            s.loss_frac,
            s.mean_mos
        );
        println!("  wrote {} and {}", csv.display(), json.display());
    }
    Ok(())
}

fn run_compare(paths: &[PathBuf], out: &Path) -> Result<(), Failure> {
    let bundles = paths
        .iter()
        .map(|p| ResultBundle::load(p))
        .collect::<Result<Vec<_>, _>>()?;
    let cmp = compare(&bundles)?;
    for p in cmp.write(out)? {
        println!("wrote {}", p.display());
    }
    for metric in Metric::ALL {
        let shares: Vec<String> = cmp
            .ordering
            .curves
            .iter()
            .map(|c| format!("{c} {:.0}%", 100.0 * cmp.ordering.lowest_share(metric, c)))
            .collect();
        println!("lowest {}: {}", metric.key(), shares.join(", "));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            scenario,
            seed,
            duration,
            repetitions,
            out,
        } => run(&scenario, seed, duration, repetitions, &out),
        Command::Compare { bundles, out } => run_compare(&bundles, &out),
        Command::ListScenarios => {
            for s in BuiltinScenario::ALL {
                println!("{:<12} {}", s.name(), s.description());
            }
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

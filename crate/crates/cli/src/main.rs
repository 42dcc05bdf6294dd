mod settings;

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::json;
use snowstorm::analysis::{predict_table_row, write_forecast_csv};
use snowstorm::harness::{
    emit_results, liveness_sweep, safety_sweep, Aggregate, ExperimentResult, LivenessExperimentSpec,
    SafetyExperimentSpec,
};
use snowstorm::simnet::write_trace_csv;
use snowstorm::{run_simulation, AdversarySpec, NetworkConfig};

use settings::{Command, Overrides, Settings};

#[derive(Parser)]
#[command(
    name = "snowstorm",
    version,
    about = "Snowball consensus under liveness and safety attacks"
)]
struct Cli {
    /// Flat TOML file supplying values for any flag; flags take precedence
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Run one network and write its per-round trace
    Simulate(Overrides),
    /// Closed-form safety-attack forecast per adversary fraction
    Predict(Overrides),
    /// Search the smallest stake that stalls the network, per network size
    LivenessSweep(Overrides),
    /// Simulated safety attacks compared against the forecast
    SafetySweep(Overrides),
}

/// Failures before any run started exit with 2, the rest with 1.
enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

fn usage<T>(r: Result<T>) -> Result<T, Failure> {
    r.map_err(Failure::Usage)
}

fn runtime<T>(r: Result<T>) -> Result<T, Failure> {
    r.map_err(Failure::Runtime)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let rendered = e.to_string();
            eprintln!("{}", rendered.lines().next().unwrap_or("error: invalid arguments"));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let (command, flags) = match cli.command {
        Sub::Simulate(o) => (Command::Simulate, o),
        Sub::Predict(o) => (Command::Predict, o),
        Sub::LivenessSweep(o) => (Command::LivenessSweep, o),
        Sub::SafetySweep(o) => (Command::SafetySweep, o),
    };
    let file = match &cli.config {
        Some(path) => usage(Overrides::from_file(path))?,
        None => Overrides::default(),
    };
    let settings = usage(Settings::resolve(command, flags.or(file)))?;
    match command {
        Command::Simulate => simulate(&settings),
        Command::Predict => predict(&settings),
        Command::LivenessSweep => liveness(&settings),
        Command::SafetySweep => safety(&settings),
    }
}

fn adversary_spec(s: &Settings) -> AdversarySpec {
    AdversarySpec {
        strategy: s.strategy,
        estimator: s.estimator,
        smoothing: s.smoothing,
        num_targets: if s.strategy == snowstorm::Strategy::Safety {
            s.targets
        } else {
            0
        },
        mu_target: s.mu_target,
        stable_split_constant: s.split_constant,
        naive_queries: s.naive_queries,
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).with_context(|| format!("cannot write {}", path.display()))?;
    writeln!(w)
        .and_then(|_| w.flush())
        .with_context(|| format!("cannot write {}", path.display()))
}

fn out_dir(s: &Settings) -> Result<&Path> {
    fs::create_dir_all(&s.out).with_context(|| format!("cannot create {}", s.out.display()))?;
    Ok(&s.out)
}

fn simulate(s: &Settings) -> Result<(), Failure> {
    let config = NetworkConfig::new(s.n, s.f, s.seed)
        .with_params(s.params)
        .with_split(s.split.unwrap_or(0.5))
        .with_initial_confidence(s.initial_confidence.unwrap_or(0));
    let adversary = adversary_spec(s);
    usage(config.validate().map_err(Into::into))?;
    usage(adversary.validate(s.n, s.f).map_err(Into::into))?;

    let run = runtime(run_simulation(config, &adversary, s.max_rounds).map_err(Into::into))?;
    runtime((|| {
        let dir = out_dir(s)?;
        if s.format.csv() {
            let path = dir.join("trace.csv");
            write_trace_csv(create(&path)?, &run.traces).with_context(|| format!("cannot write {}", path.display()))?;
        }
        if s.format.json() {
            write_json(
                &dir.join("summary.json"),
                &json!({ "config": s, "summary": run.summary }),
            )?;
        }
        Ok(())
    })())?;
    println!("{}", run.outcome);
    Ok(())
}

fn predict(s: &Settings) -> Result<(), Failure> {
    let rows = usage(
        s.phi
            .iter()
            .map(|&phi| {
                predict_table_row(phi, &s.params, s.targets, s.split_constant)
                    .with_context(|| format!("no forecast for adversary fraction {phi}"))
            })
            .collect::<Result<Vec<_>>>(),
    )?;
    runtime((|| {
        let dir = out_dir(s)?;
        if s.format.csv() {
            let path = dir.join("forecast.csv");
            write_forecast_csv(create(&path)?, &rows).with_context(|| format!("cannot write {}", path.display()))?;
        }
        if s.format.json() {
            write_json(&dir.join("forecast.json"), &json!({ "config": s, "rows": rows }))?;
        }
        write_forecast_csv(io::stdout().lock(), &rows).context("cannot write to stdout")
    })())
}

fn finish(s: &Settings, mut result: ExperimentResult) -> Result<(), Failure> {
    result.config = json!({ "cli": s, "experiment": result.config });
    let dir = runtime(out_dir(s).map(Path::to_path_buf))?;
    runtime(emit_results(&result, &dir, s.format).map_err(Into::into))?;
    match &result.aggregate {
        Aggregate::Liveness(points) => {
            for p in points {
                println!(
                    "n={} {}: threshold {:.4} (bracket {:.4}..{:.4})",
                    p.n, p.estimator, p.threshold, p.lower, p.upper
                );
            }
        }
        Aggregate::Safety(points) => {
            for p in points {
                let mean =
                    |st: Option<snowstorm::harness::Stats>| st.map_or("-".to_string(), |st| format!("{:.2}", st.mean));
                println!(
                    "f/n={:.4}: first target finalized after {} rounds (forecast {:.2}), violations {}/{} after {} rounds",
                    p.adversary_fraction,
                    mean(p.pivot),
                    p.forecast.expected_rounds_multi,
                    p.violations,
                    p.runs,
                    mean(p.violation)
                );
            }
        }
    }
    Ok(())
}

fn liveness(s: &Settings) -> Result<(), Failure> {
    let base = LivenessExperimentSpec {
        runs_per_point: s.runs,
        success_threshold: s.runs / 2,
        max_rounds: s.max_rounds,
        seed: s.seed,
        params: s.params,
        smoothing: s.smoothing,
        naive_queries: s.naive_queries,
        ..LivenessExperimentSpec::new(s.sizes[0], s.estimator, s.profile)
    };
    for &n in &s.sizes {
        usage(
            LivenessExperimentSpec { n, ..base.clone() }
                .validate()
                .map_err(Into::into),
        )?;
    }
    let result = runtime(liveness_sweep(&base, &s.sizes).map_err(Into::into))?;
    finish(s, result)
}

fn safety(s: &Settings) -> Result<(), Failure> {
    let mut base = SafetyExperimentSpec::new(s.n, s.f, s.targets, s.runs);
    base.mu_target = s.mu_target;
    base.stable_split_constant = s.split_constant;
    base.seed = s.seed;
    base.params = s.params;
    base.max_rounds = s.max_rounds;
    base.estimator = s.estimator;
    base.smoothing = s.smoothing;
    base.naive_queries = s.naive_queries;
    base.initial_split = s.split;
    if let Some(ic) = s.initial_confidence {
        base.initial_confidence = ic;
    }
    for &phi in &s.phi {
        let f = (phi * f64::from(s.n)).round() as u32;
        usage(
            SafetyExperimentSpec { f, ..base.clone() }
                .validate()
                .map_err(Into::into),
        )?;
    }
    let result = runtime(safety_sweep(&base, &s.phi).map_err(Into::into))?;
    finish(s, result)
}

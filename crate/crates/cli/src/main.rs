mod args;
mod error;
mod run;

use std::process::ExitCode;

use clap::error::ErrorKind as ClapKind;
use clap::Parser;
use serde_json::Value;
use tsnn::eval::{Decoupling, EvalOptions, GridValue, SweepAxis};
use tsnn::synthetic::SyntheticSpec;
use tsnn::{Manifest, Scaling};

use args::{parse_selection, Cli, Command, DataArgs};
use error::CliError;
use run::{Dataset, Invocation, RunManifest};

fn main() -> ExitCode {
    let json = std::env::args().any(|a| a == "--json");
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if matches!(e.kind(), ClapKind::DisplayHelp | ClapKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            if json {
                let err = CliError::Usage(e.render().to_string().trim().to_owned());
                eprintln!("{}", err.to_json());
            } else {
                let _ = e.print();
            }
            return ExitCode::from(1);
        }
    };
    match run(cli, json) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if json {
                eprintln!("{}", e.to_json());
            } else {
                eprintln!("error: {e}");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli, json: bool) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n as usize)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let manifest = match cli.command {
        Command::Rerun { from, out } => {
            let recorded = RunManifest::load(&from)?;
            recorded.check_inputs()?;
            RunManifest { out, ..recorded }
        }
        command => {
            let (invocation, out) = resolve(command, cli.seed)?;
            RunManifest::new(invocation, out, cli.seed, cli.threads)?
        }
    };
    let summary = run::execute(&manifest)?;
    report(&summary, json);
    Ok(())
}

fn report(summary: &Value, json: bool) {
    if json {
        println!("{summary}");
        return;
    }
    if let Value::Object(map) = summary {
        for (k, v) in map {
            println!("{k}: {v}");
        }
    }
}

fn dataset(args: &DataArgs) -> Result<(Dataset, Manifest), CliError> {
    let d = Dataset { data: args.data.clone(), manifest: args.manifest_path(), split: args.split() };
    d.split.validate()?;
    let manifest = Manifest::load(&d.manifest)?;
    Ok((d, manifest))
}

fn sensor_count(d: &Dataset, manifest: &Manifest) -> Result<usize, CliError> {
    match manifest.num_sensors {
        Some(n) => Ok(n),
        None => Ok(run::load_series(d)?.n_sensors()),
    }
}

fn usage(e: String) -> CliError {
    CliError::Usage(e)
}

/// Turn parsed flags into a fully specified invocation and its output directory.
fn resolve(command: Command, seed: u64) -> Result<(Invocation, std::path::PathBuf), CliError> {
    Ok(match command {
        Command::Validate { data, out } => (Invocation::Validate { dataset: dataset(&data)?.0 }, out),
        Command::Build { data, model, sensors, out } => {
            let (d, m) = dataset(&data)?;
            let config = model.config(m.steps_per_period);
            config.validate()?;
            let sensors = parse_selection(&sensors.sensors, sensor_count(&d, &m)?, "sensor").map_err(usage)?;
            (Invocation::Build { dataset: d, config, sensors }, out)
        }
        Command::Predict { data, model, sensors, banks, strategy, query, trace, out } => {
            let (d, m) = dataset(&data)?;
            let config = model.config(m.steps_per_period);
            config.validate()?;
            let series = run::load_series(&d)?;
            let sensors = parse_selection(&sensors.sensors, series.n_sensors(), "sensor").map_err(usage)?;
            let n = run::test_window_count(&series, &d.split, &config)?;
            let queries = parse_selection(query.as_deref().unwrap_or("all"), n, "query").map_err(usage)?;
            (Invocation::Predict { dataset: d, config, sensors, banks, strategy, queries, trace }, out)
        }
        Command::Evaluate { data, model, sensors, metrics, strategy, baseline, out } => {
            let (d, m) = dataset(&data)?;
            let config = model.config(m.steps_per_period);
            config.validate()?;
            let sensors = parse_selection(&sensors.sensors, sensor_count(&d, &m)?, "sensor").map_err(usage)?;
            let options = EvalOptions {
                split: d.split,
                strategy,
                averaging: metrics.averaging(),
                mape_threshold: metrics.mape_threshold,
                sensors: Some(sensors),
            };
            (Invocation::Evaluate { dataset: d, config, options, baseline }, out)
        }
        Command::Sweep { data, model, sensors, metrics, strategy, axis, grid, out } => {
            let (d, m) = dataset(&data)?;
            let config = model.config(m.steps_per_period);
            config.validate()?;
            let sensors = parse_selection(&sensors.sensors, sensor_count(&d, &m)?, "sensor").map_err(usage)?;
            let grid = match grid {
                Some(g) => g
                    .split(',')
                    .map(|v| GridValue::parse(axis, v.trim()))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(usage)?,
                None => default_grid(axis)
                    .ok_or_else(|| usage(format!("--grid is required for the {axis:?} axis")))?,
            };
            if grid.is_empty() {
                return Err(usage("empty --grid".into()));
            }
            let options = EvalOptions {
                split: d.split,
                strategy,
                averaging: metrics.averaging(),
                mape_threshold: metrics.mape_threshold,
                sensors: Some(sensors),
            };
            (Invocation::Sweep { dataset: d, config, options, axis, grid }, out)
        }
        Command::Explain { data, model, sensor, query, banks, out } => {
            let (d, m) = dataset(&data)?;
            let config = model.config(m.steps_per_period);
            config.validate()?;
            let series = run::load_series(&d)?;
            parse_selection(&sensor.to_string(), series.n_sensors(), "sensor").map_err(usage)?;
            let n = run::test_window_count(&series, &d.split, &config)?;
            let queries = parse_selection(&query, n, "query").map_err(usage)?;
            (Invocation::Explain { dataset: d, config, sensor, queries, banks }, out)
        }
        Command::Synth { steps, sensors, period, amplitude, noise, noise_correlation, name, out } => {
            let spec = SyntheticSpec {
                n_steps: steps,
                n_sensors: sensors,
                steps_per_period: period,
                amplitude,
                noise_fraction: noise,
                noise_correlation,
                seed,
            };
            (Invocation::Synth { spec, name }, out)
        }
        Command::Rerun { .. } => unreachable!("handled by the caller"),
    })
}

fn default_grid(axis: SweepAxis) -> Option<Vec<GridValue>> {
    match axis {
        SweepAxis::Layers => Some([1, 2, 3, 5, 7, 10].into_iter().map(GridValue::Layers).collect()),
        SweepAxis::Scaling => Some(Scaling::ALL.into_iter().map(GridValue::Scaling).collect()),
        SweepAxis::Decoupling => Some(Decoupling::ALL.into_iter().map(GridValue::Decoupling).collect()),
        SweepAxis::Gamma | SweepAxis::Beta | SweepAxis::Tolerance => None,
    }
}

//! `dualmesh`: closed-form analysis, scenario runs, parameter sweeps and
//! the validation suite.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use dualmesh::analytics::AirtimeMode;
use dualmesh::report::{analyze, AnalysisInputs};
use dualmesh::sim::{run_scenario, MetricsReport, ScenarioConfig, SimError};
use dualmesh::validate::run_suite;

#[derive(Parser)]
#[command(name = "dualmesh", version, about = "Two-tier BLE/LoRa mesh analysis and simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// LoRa airtime source: `formula` or `paper`.
    #[arg(long, global = true)]
    airtime_mode: Option<AirtimeMode>,
    /// Directory for output files.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Print machine-readable CSV instead of the text summary.
    #[arg(long, global = true)]
    csv: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate the closed-form models and print the comparison tables.
    Analyze {
        #[arg(long, default_value_t = 0.82)]
        beta: f64,
        #[arg(long, default_value_t = 3)]
        clusters: u32,
        /// Messages per node per minute.
        #[arg(long, default_value_t = 1.0)]
        rate: f64,
        #[arg(long, default_value_t = 500.0)]
        battery_mah: f64,
    },
    /// Run one scenario file.
    Simulate { file: PathBuf },
    /// Run a scenario once per value of one parameter, in parallel.
    Sweep {
        file: PathBuf,
        /// Dotted parameter name, e.g. `traffic.beta`.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
    },
    /// Run the theory-versus-simulation checks.
    Validate,
}

enum Failure {
    Input(anyhow::Error),
    Invariant(anyhow::Error),
    Validation,
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 2,
            Failure::Invariant(_) => 3,
            Failure::Validation => 4,
        }
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(c) => Failure::Input(c.into()),
            e @ SimError::Invariant(_) => Failure::Invariant(e.into()),
        }
    }
}

fn input<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Input(e.into())
}

fn write_out(dir: &Path, name: &str, text: &str) -> Result<(), Failure> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display())).map_err(input)?;
    let path = dir.join(name);
    fs::write(&path, text).with_context(|| format!("writing {}", path.display())).map_err(input)
}

fn load(file: &Path, common: &Common) -> Result<ScenarioConfig, Failure> {
    let mut cfg = ScenarioConfig::load(file).map_err(input)?;
    if let Some(seed) = common.seed {
        cfg.scenario.seed = seed;
    }
    if let Some(mode) = common.airtime_mode {
        cfg.radio.airtime_mode = mode;
    }
    cfg.validate().map_err(input)?;
    Ok(cfg)
}

fn stem(file: &Path) -> String {
    file.file_stem().map_or_else(|| "run".into(), |s| s.to_string_lossy().into_owned())
}

fn cmd_analyze(common: &Common, inputs: AnalysisInputs) -> Result<(), Failure> {
    let report = analyze(&inputs).map_err(input)?;
    let text = report.render();
    print!("{text}");
    if let Some(dir) = &common.out {
        write_out(dir, "analysis.txt", &text)?;
    }
    Ok(())
}

fn cmd_simulate(common: &Common, file: &Path) -> Result<(), Failure> {
    let cfg = load(file, common)?;
    let report = run_scenario(&cfg)?;
    let csv = report.to_csv();
    if common.csv {
        print!("{csv}");
    } else {
        print!("{}", report.render_summary());
    }
    if let Some(dir) = &common.out {
        let name = stem(file);
        write_out(dir, &format!("{name}.csv"), &csv)?;
        write_out(dir, &format!("{name}.txt"), &report.render_summary())?;
    }
    Ok(())
}

fn sweep_row(param: &str, value: &str, r: &MetricsReport) -> String {
    let energy = r.mean_energy_per_delivered_nj().map_or(String::new(), |e| format!("{:.1}", e));
    format!(
        "{param},{value},{},{},{:.6},{:.6},{:.6},{energy}",
        r.originated(),
        r.delivered(),
        r.delivery_ratio(),
        r.inter_fraction(),
        r.ble_share()
    )
}

fn cmd_sweep(common: &Common, file: &Path, param: &str, values: &[String]) -> Result<(), Failure> {
    let base = load(file, common)?;
    let configs = values
        .iter()
        .map(|v| {
            let mut cfg = base.clone();
            cfg.set_param(param, v).map(|()| cfg).map_err(input)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let reports = configs.par_iter().map(run_scenario).collect::<Result<Vec<_>, _>>()?;
    let mut table =
        String::from("param,value,originated,delivered,delivery_ratio,inter_fraction,ble_share,mean_energy_nj\n");
    for (v, r) in values.iter().zip(&reports) {
        table.push_str(&sweep_row(param, v, r));
        table.push('\n');
    }
    if common.csv {
        print!("{table}");
    } else {
        for (v, r) in values.iter().zip(&reports) {
            println!("== {param} = {v}");
            print!("{}", r.render_summary());
        }
    }
    if let Some(dir) = &common.out {
        let name = stem(file);
        write_out(dir, &format!("{name}-sweep.csv"), &table)?;
        for (v, r) in values.iter().zip(&reports) {
            write_out(dir, &format!("{name}-{param}={v}.csv"), &r.to_csv())?;
        }
    }
    Ok(())
}

fn cmd_validate(common: &Common) -> Result<(), Failure> {
    if common.seed.is_some() || common.airtime_mode.is_some() {
        return Err(input(anyhow!(
            "validate runs the bundled scenarios as written; --seed and --airtime-mode do not apply"
        )));
    }
    let report = run_suite()?;
    let text = report.render();
    print!("{text}");
    if let Some(dir) = &common.out {
        write_out(dir, "validation.txt", &text)?;
    }
    if report.all_passed() {
        Ok(())
    } else {
        Err(Failure::Validation)
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let common = &cli.common;
    match &cli.command {
        Command::Analyze { beta, clusters, rate, battery_mah } => {
            let inputs = AnalysisInputs {
                airtime_mode: common.airtime_mode.unwrap_or(AirtimeMode::PaperConstants),
                beta: *beta,
                clusters: *clusters,
                rate_per_node: *rate,
                battery_mah: *battery_mah,
                ..AnalysisInputs::default()
            };
            cmd_analyze(common, inputs)
        }
        Command::Simulate { file } => cmd_simulate(common, file),
        Command::Sweep { file, param, values } => cmd_sweep(common, file, param, values),
        Command::Validate => cmd_validate(common),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Input(e) | Failure::Invariant(e) => eprintln!("error: {e:#}"),
                Failure::Validation => eprintln!("error: validation failed"),
            }
            ExitCode::from(f.code())
        }
    }
}

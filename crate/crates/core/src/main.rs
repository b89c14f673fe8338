use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use pilotmimo::harness::{
    self, convergence_csv, db_grid, run_convergence, run_experiment, run_sweep, run_table1, table1_csv, table1_report,
    write_experiment, ConvergenceConfig, ExperimentConfig, OutputFormat, PcSetting, PAPER_SCALE_DROPS,
};
use pilotmimo::pilot_allocation::AllocationCriterion;
use pilotmimo::power_control::PcAlgorithm;
use pilotmimo::scenario::{drop_users, write_drop_csv, write_layout_csv, ScenarioConfig};
use pilotmimo::{Error, Result};

#[derive(Parser)]
#[command(name = "pilotmimo", version, about = "Multi-cell massive-MIMO pilot allocation and power control simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One experiment: metrics, CDF curves and a run manifest.
    Run(RunArgs),
    /// The eight reuse-factor / allocation / power-control rows.
    Table1(CommonArgs),
    /// Sweep the power-control target and report the 5th-percentile rate.
    SweepTarget(SweepArgs),
    /// Finite-antenna MF and ZF against the large-antenna limit.
    Convergence(ConvergenceArgs),
    /// Base-station positions and one user drop.
    Layout(CommonArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Pc {
    Off,
    Tpc,
    Opc,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct CommonArgs {
    /// Scenario file (`key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = ["1", "3"])]
    rf: Option<String>,
    #[arg(long)]
    drops: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Path-loss reference distance in metres.
    #[arg(long)]
    d0: Option<f64>,
    /// Use the full-size drop count.
    #[arg(long)]
    paper_scale: bool,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    /// Power-control algorithm (off for `run`, opc elsewhere by default).
    #[arg(long, value_enum)]
    pc: Option<Pc>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, default_value = "random")]
    criterion: AllocationCriterion,
    /// Power-control target in dB (ignored with --pc off).
    #[arg(long, default_value_t = 6.0, allow_negative_numbers = true)]
    zeta_db: f64,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, default_value = "maxminsinr")]
    criterion: AllocationCriterion,
    #[arg(long, default_value_t = -10, allow_negative_numbers = true)]
    from_db: i32,
    #[arg(long, default_value_t = 40)]
    to_db: i32,
}

#[derive(Args)]
struct ConvergenceArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, value_delimiter = ',', default_value = "64,256,1024,4096")]
    antennas: Vec<usize>,
    #[arg(long, default_value_t = 2000)]
    trials: usize,
}

fn algorithm(pc: Pc) -> Option<PcAlgorithm> {
    match pc {
        Pc::Off => None,
        Pc::Tpc => Some(PcAlgorithm::TargetTracking),
        Pc::Opc => Some(PcAlgorithm::InterferenceAware),
    }
}

fn base_config(a: &CommonArgs, default_drops: usize) -> Result<ExperimentConfig> {
    let mut scenario = match &a.config {
        Some(p) => ScenarioConfig::load(p)?,
        None => ScenarioConfig::default(),
    };
    if let Some(rf) = &a.rf {
        scenario.reuse_factor = rf.parse().expect("validated by clap");
    }
    if let Some(s) = a.seed {
        scenario.seed = s;
    }
    if let Some(d0) = a.d0 {
        scenario.path_loss.reference_distance_m = d0;
    }
    let num_drops = match (a.drops, a.paper_scale) {
        (Some(d), _) => d,
        (None, true) => PAPER_SCALE_DROPS,
        (None, false) => default_drops,
    };
    Ok(ExperimentConfig {
        scenario,
        num_drops,
        ..ExperimentConfig::default()
    })
}

fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.into(),
            source: e,
        })?;
    }
    fs::write(path, contents).map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(a) => {
            let mut cfg = base_config(&a.common, harness::DEFAULT_DROPS)?;
            cfg.criterion = a.criterion;
            cfg.power_control = algorithm(a.common.pc.unwrap_or(Pc::Off)).map(|alg| PcSetting::new(alg, a.zeta_db));
            let r = run_experiment(&cfg)?;
            let format = match a.common.format {
                Format::Csv => OutputFormat::Csv,
                Format::Json => OutputFormat::Json,
            };
            write_experiment(&a.common.out, &r, format)?;
            let m = &r.summary;
            println!(
                "{}: mean BER {:.2}%  BER=0 {:.2}%  BER>=0.1 {:.2}%  mean {:.2} Mbps  p5 {:.4} Mbps  ({}/{} games converged)",
                cfg.label(),
                m.mean_ber,
                m.frac_ber_zero,
                m.frac_ber_ge_0_1,
                m.mean_rate,
                m.p5_rate,
                r.games.converged,
                r.games.drops
            );
        }
        Command::Table1(a) => {
            let cfg = base_config(&a, harness::DEFAULT_DROPS)?;
            let alg = algorithm(a.pc.unwrap_or(Pc::Opc)).unwrap_or(PcAlgorithm::InterferenceAware);
            let rows = run_table1(&cfg, alg)?;
            print!("{}", table1_report(&rows));
            write(&a.out.join("table1.csv"), &table1_csv(&rows))?;
            if let Format::Json = a.format {
                write(&a.out.join("table1.json"), &serde_json::to_string_pretty(&rows)?)?;
            }
        }
        Command::SweepTarget(a) => {
            let mut cfg = base_config(&a.common, 2000)?;
            cfg.criterion = a.criterion;
            let alg = algorithm(a.common.pc.unwrap_or(Pc::Opc)).unwrap_or(PcAlgorithm::InterferenceAware);
            let r = run_sweep(&cfg, alg, &db_grid(a.from_db, a.to_db))?;
            write(&a.common.out.join("sweep.csv"), &r.to_csv())?;
            println!("best target: {} dB", r.best_zeta_db);
        }
        Command::Convergence(a) => {
            let mut cfg = base_config(&a.common, 200)?;
            let mut antennas = a.antennas.clone();
            if a.common.paper_scale && !antennas.contains(&16384) {
                antennas.push(16384);
            }
            cfg.criterion = AllocationCriterion::Random;
            let rows = run_convergence(&ConvergenceConfig {
                experiment: cfg,
                antennas,
                trials: a.trials,
            })?;
            let csv = convergence_csv(&rows);
            print!("{csv}");
            write(&a.common.out.join("convergence.csv"), &csv)?;
        }
        Command::Layout(a) => {
            let cfg = base_config(&a, 1)?;
            let layout = cfg.scenario.layout()?;
            let mut rng = harness::drop_rng(cfg.scenario.seed, 0);
            let users = drop_users(&layout, cfg.scenario.users_per_cell, &mut rng)?;
            let mut buf = Vec::new();
            write_layout_csv(&layout, &mut buf).expect("in-memory write");
            write(&a.out.join("layout.csv"), &String::from_utf8_lossy(&buf))?;
            buf.clear();
            write_drop_csv(&users, &mut buf).expect("in-memory write");
            write(&a.out.join("drop.csv"), &String::from_utf8_lossy(&buf))?;
            println!("wrote {} and {}", a.out.join("layout.csv").display(), a.out.join("drop.csv").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

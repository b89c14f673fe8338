//! Monte Carlo driver: independent drops in parallel, pilot allocation then
//! power control, statistics over the central cell's users.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::asymptotics::{self, linear_to_db};
use crate::channel::{make_pilot_book, simulate_training, ChannelRealization, Noise, PowerProfile};
use crate::error::{Error, Result};
use crate::metrics::{cdf_csv, compute_ccdf, compute_cdf, MetricsSummary, UserSamples};
use crate::pilot_allocation::{best_response_rounds, AllocationCriterion, PilotAssignment, DEFAULT_MAX_ROUNDS};
use crate::power_control::{
    run_power_control, sweep_target, PcAlgorithm, PowerControlConfig, SweepDrop, SweepResult, SweepSettings,
    DEFAULT_ITERATIONS,
};
use crate::precoding::{build_precoder, downlink_gains, empirical_metrics, PrecoderKind};
use crate::scenario::{compute_beta, drop_users, BetaTensor, FrameConfig, Layout, ReuseFactor, ScenarioConfig};

/// Metrics are collected in this cell only; the others act as interferers.
pub const CENTRAL_CELL: usize = 0;

pub const DEFAULT_DROPS: usize = 10_000;
pub const PAPER_SCALE_DROPS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PcSetting {
    pub algorithm: PcAlgorithm,
    pub target_db: f64,
    pub iterations: usize,
}

impl PcSetting {
    pub fn new(algorithm: PcAlgorithm, target_db: f64) -> Self {
        PcSetting {
            algorithm,
            target_db,
            iterations: DEFAULT_ITERATIONS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    pub criterion: AllocationCriterion,
    pub power_control: Option<PcSetting>,
    pub num_drops: usize,
    /// Uplink training power, linear.
    pub gamma: f64,
    /// Downlink power cap, linear.
    pub phi_max: f64,
    pub frame: FrameConfig,
    pub max_rounds: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scenario: ScenarioConfig::default(),
            criterion: AllocationCriterion::Random,
            power_control: None,
            num_drops: DEFAULT_DROPS,
            gamma: 10.0,
            phi_max: 10.0,
            frame: FrameConfig::default(),
            max_rounds: DEFAULT_MAX_ROUNDS,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_drops == 0 {
            return Err(Error::Config("num_drops must be at least 1".into()));
        }
        if self.scenario.users_per_cell == 0 {
            return Err(Error::Config("need at least one user per cell".into()));
        }
        if !(self.gamma > 0.0 && self.phi_max > 0.0) {
            return Err(Error::Config("gamma and phi_max must be positive".into()));
        }
        if self.max_rounds == 0 {
            return Err(Error::Config("max_rounds must be at least 1".into()));
        }
        ReuseFactor::try_from(self.scenario.reuse_factor)?;
        self.frame.validate()
    }

    pub fn reuse(&self) -> ReuseFactor {
        ReuseFactor::try_from(self.scenario.reuse_factor).expect("validated")
    }

    pub fn label(&self) -> String {
        let pa = match self.criterion {
            AllocationCriterion::Random => "Random".to_string(),
            AllocationCriterion::MaxminSinr => "MaxminSINR".to_string(),
            c => c.name().to_string(),
        };
        match &self.power_control {
            Some(pc) => format!("{pa} + PC ({} dB)", pc.target_db),
            None => pa,
        }
    }
}

/// RNG of one drop: the master seed with the drop index as stream.
pub fn drop_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Long-term gains of drop `index`.
pub fn generate_drop(scenario: &ScenarioConfig, layout: &Layout, index: u64) -> Result<BetaTensor> {
    let mut rng = drop_rng(scenario.seed, index);
    let users = drop_users(layout, scenario.users_per_cell, &mut rng)?;
    compute_beta(layout, &users, &scenario.path_loss, &mut rng)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DropOutcome {
    pub samples: UserSamples,
    pub rounds: usize,
    pub converged: bool,
    pub assignment: PilotAssignment,
}

/// Pilot allocation on one drop's gains with full downlink power.
pub fn allocate_drop(config: &ExperimentConfig, beta: &BetaTensor) -> Result<(PilotAssignment, usize, bool)> {
    let (cells, users) = (beta.num_cells(), beta.users_per_cell());
    let powers = PowerProfile::uniform(cells, users, config.gamma, config.phi_max);
    let (a, trace) = best_response_rounds(
        config.criterion,
        beta,
        &powers,
        &PilotAssignment::identity(cells, users),
        config.max_rounds,
    )?;
    Ok((a, trace.rounds_played(), trace.converged))
}

pub fn run_drop(config: &ExperimentConfig, layout: &Layout, index: u64) -> Result<DropOutcome> {
    let beta = generate_drop(&config.scenario, layout, index)?;
    let (cells, users) = (beta.num_cells(), beta.users_per_cell());
    let (assignment, rounds, converged) = allocate_drop(config, &beta)?;
    let mut powers = PowerProfile::uniform(cells, users, config.gamma, config.phi_max);
    if let Some(pc) = &config.power_control {
        let mut cfg = PowerControlConfig::uniform(cells, users, pc.target_db, pc.algorithm);
        cfg.iterations = pc.iterations;
        powers = run_power_control(&cfg, &beta, &powers, &assignment)?.0;
    }
    let report = asymptotics::asymptotic_report(&beta, &powers, &assignment, &config.frame, config.reuse())?;
    let samples = UserSamples {
        ber: report.ber.cell(CENTRAL_CELL).to_vec(),
        sinr_db: report.sinr.cell(CENTRAL_CELL).iter().map(|&s| linear_to_db(s)).collect(),
        rate: report.rate.cell(CENTRAL_CELL).to_vec(),
    };
    Ok(DropOutcome {
        samples,
        rounds,
        converged,
        assignment,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GameStats {
    pub drops: usize,
    pub converged: usize,
    pub max_rounds: usize,
    pub mean_rounds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub summary: MetricsSummary,
    pub samples: UserSamples,
    pub games: GameStats,
    #[serde(skip)]
    pub first_assignment: PilotAssignment,
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let layout = config.scenario.layout()?;
    let outcomes: Vec<DropOutcome> = (0..config.num_drops as u64)
        .into_par_iter()
        .map(|i| run_drop(config, &layout, i))
        .collect::<Result<_>>()?;
    let mut samples = UserSamples::default();
    for o in &outcomes {
        samples.extend(&o.samples);
    }
    let games = GameStats {
        drops: outcomes.len(),
        converged: outcomes.iter().filter(|o| o.converged).count(),
        max_rounds: outcomes.iter().map(|o| o.rounds).max().unwrap_or(0),
        mean_rounds: outcomes.iter().map(|o| o.rounds as f64).sum::<f64>() / outcomes.len() as f64,
    };
    Ok(ExperimentResult {
        config: config.clone(),
        summary: MetricsSummary::from_samples(&samples)?,
        samples,
        games,
        first_assignment: outcomes[0].assignment.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Summary, CDF/CCDF curves and the resolved-config manifest.
pub fn write_experiment(dir: &Path, result: &ExperimentResult, format: OutputFormat) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    match format {
        OutputFormat::Csv => write_file(
            &dir.join("metrics.csv"),
            &format!("{}\n{}\n", MetricsSummary::CSV_HEADER, result.summary.csv_row()),
        )?,
        OutputFormat::Json => write_file(&dir.join("metrics.json"), &serde_json::to_string_pretty(&result.summary)?)?,
    }
    let s = &result.samples;
    write_file(&dir.join("cdf_ber.csv"), &cdf_csv(&compute_cdf(&s.ber)?))?;
    write_file(&dir.join("ccdf_sinr_db.csv"), &cdf_csv(&compute_ccdf(&s.sinr_db)?))?;
    let rate_mbps: Vec<f64> = s.rate.iter().map(|r| r / 1e6).collect();
    write_file(&dir.join("ccdf_rate_mbps.csv"), &cdf_csv(&compute_ccdf(&rate_mbps)?))?;
    write_file(
        &dir.join("assignment_drop0.json"),
        &serde_json::to_string_pretty(&result.first_assignment.to_json())?,
    )?;
    let manifest = serde_json::json!({
        "config": &result.config,
        "games": &result.games,
        "num_users": result.summary.num_users,
    });
    write_file(&dir.join("manifest.json"), &serde_json::to_string_pretty(&manifest)?)
}

/// Reference row of the published table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PaperRow {
    pub mean_ber: f64,
    pub frac_ber_zero: f64,
    pub frac_ber_ge_0_1: f64,
    pub mean_rate: f64,
    pub p5_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Table1Spec {
    pub reuse_factor: u32,
    pub criterion: AllocationCriterion,
    pub target_db: Option<f64>,
    pub paper: PaperRow,
}

const fn row(rf: u32, criterion: AllocationCriterion, target_db: Option<f64>, v: [f64; 5]) -> Table1Spec {
    Table1Spec {
        reuse_factor: rf,
        criterion,
        target_db,
        paper: PaperRow {
            mean_ber: v[0],
            frac_ber_zero: v[1],
            frac_ber_ge_0_1: v[2],
            mean_rate: v[3],
            p5_rate: v[4],
        },
    }
}

/// The eight published configurations with their reported statistics.
pub const TABLE1: [Table1Spec; 8] = [
    row(1, AllocationCriterion::Random, None, [9.84, 75.41, 23.63, 48.50, 0.1344]),
    row(1, AllocationCriterion::Random, Some(0.0), [8.44, 75.47, 23.57, 30.89, 1.4610]),
    row(1, AllocationCriterion::MaxminSinr, None, [6.17, 82.45, 16.28, 52.62, 0.7937]),
    row(1, AllocationCriterion::MaxminSinr, Some(6.0), [2.73, 92.61, 6.65, 34.24, 6.7430]),
    row(3, AllocationCriterion::Random, None, [1.41, 96.33, 3.47, 29.07, 4.79]),
    row(3, AllocationCriterion::Random, Some(20.0), [1.29, 97.17, 2.82, 24.39, 10.41]),
    row(3, AllocationCriterion::MaxminSinr, None, [0.39, 98.78, 1.09, 31.68, 11.15]),
    row(3, AllocationCriterion::MaxminSinr, Some(25.0), [0.45, 98.94, 1.01, 25.95, 17.31]),
];

impl Table1Spec {
    pub fn config(&self, base: &ExperimentConfig, algorithm: PcAlgorithm) -> ExperimentConfig {
        let mut c = base.clone();
        c.scenario.reuse_factor = self.reuse_factor;
        c.criterion = self.criterion;
        c.power_control = self.target_db.map(|z| PcSetting::new(algorithm, z));
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table1Row {
    pub spec: Table1Spec,
    pub label: String,
    pub summary: Option<MetricsSummary>,
}

pub fn run_table1(base: &ExperimentConfig, algorithm: PcAlgorithm) -> Result<Vec<Table1Row>> {
    TABLE1
        .iter()
        .map(|spec| {
            let cfg = spec.config(base, algorithm);
            let r = run_experiment(&cfg)?;
            Ok(Table1Row {
                spec: *spec,
                label: cfg.label(),
                summary: Some(r.summary),
            })
        })
        .collect()
}

/// Aligned text table, measured value next to the published one. Rows
/// without a summary print `-`.
pub fn table1_report(rows: &[Table1Row]) -> String {
    let mut s = format!(
        "{:<4}{:<28}{:>16}{:>18}{:>18}{:>18}{:>20}\n",
        "RF", "scheme", "meanBER% (ref)", "BER=0% (ref)", "BER>=0.1% (ref)", "mean Mbps (ref)", "p5 Mbps (ref)"
    );
    for r in rows {
        let p = &r.spec.paper;
        let cell = |v: Option<f64>, refv: f64, w: usize| match v {
            Some(v) => format!("{:>w$}", format!("{v:.2} ({refv})")),
            None => format!("{:>w$}", format!("- ({refv})")),
        };
        let m = r.summary.as_ref();
        s.push_str(&format!(
            "{:<4}{:<28}{}{}{}{}{}\n",
            r.spec.reuse_factor,
            r.label,
            cell(m.map(|m| m.mean_ber), p.mean_ber, 16),
            cell(m.map(|m| m.frac_ber_zero), p.frac_ber_zero, 18),
            cell(m.map(|m| m.frac_ber_ge_0_1), p.frac_ber_ge_0_1, 18),
            cell(m.map(|m| m.mean_rate), p.mean_rate, 18),
            cell(m.map(|m| m.p5_rate), p.p5_rate, 20),
        ));
    }
    s
}

pub fn table1_csv(rows: &[Table1Row]) -> String {
    let mut s = String::from(
        "rf,scheme,mean_ber_pct,frac_ber_zero_pct,frac_ber_ge_0_1_pct,mean_rate_mbps,p5_rate_mbps,\
         ref_mean_ber_pct,ref_frac_ber_zero_pct,ref_frac_ber_ge_0_1_pct,ref_mean_rate_mbps,ref_p5_rate_mbps\n",
    );
    for r in rows {
        let measured = match &r.summary {
            Some(m) => format!(
                "{:.4},{:.4},{:.4},{:.4},{:.4}",
                m.mean_ber, m.frac_ber_zero, m.frac_ber_ge_0_1, m.mean_rate, m.p5_rate
            ),
            None => ",,,,".into(),
        };
        let p = &r.spec.paper;
        s.push_str(&format!(
            "{},{},{measured},{},{},{},{},{}\n",
            r.spec.reuse_factor, r.label, p.mean_ber, p.frac_ber_zero, p.frac_ber_ge_0_1, p.mean_rate, p.p5_rate
        ));
    }
    s
}

/// Builds the sweep ensemble: drops allocated with `config.criterion` at
/// full power.
pub fn sweep_ensemble(config: &ExperimentConfig) -> Result<Vec<SweepDrop>> {
    config.validate()?;
    let layout = config.scenario.layout()?;
    (0..config.num_drops as u64)
        .into_par_iter()
        .map(|i| {
            let beta = generate_drop(&config.scenario, &layout, i)?;
            let (assignment, _, _) = allocate_drop(config, &beta)?;
            Ok(SweepDrop { beta, assignment })
        })
        .collect()
}

pub fn run_sweep(config: &ExperimentConfig, algorithm: PcAlgorithm, grid_db: &[f64]) -> Result<SweepResult> {
    let ensemble = sweep_ensemble(config)?;
    let settings = SweepSettings {
        algorithm,
        iterations: DEFAULT_ITERATIONS,
        gamma: config.gamma,
        phi_max: config.phi_max,
        frame: &config.frame,
        reuse: config.reuse(),
        cell: CENTRAL_CELL,
    };
    sweep_target(grid_db, &ensemble, &settings)
}

/// Integer-dB grid `lo..=hi`.
pub fn db_grid(lo: i32, hi: i32) -> Vec<f64> {
    (lo..=hi).map(f64::from).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub antennas: usize,
    pub precoder: &'static str,
    pub mean_ber: f64,
    /// Median over drops of the central cell's mean SINR in dB.
    pub mean_sinr_db: f64,
    pub bound_ber: f64,
    pub bound_sinr_db: f64,
    /// Median over drops of `bound - measured` in dB.
    pub median_gap_db: f64,
}

pub struct ConvergenceConfig {
    pub experiment: ExperimentConfig,
    pub antennas: Vec<usize>,
    /// Symbol frames per (drop, N).
    pub trials: usize,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

struct DropConvergence {
    bound_sinr_db: f64,
    bound_ber: f64,
    /// (MF, ZF) per antenna count: (sinr_db, ber)
    measured: Vec<[(f64, f64); 2]>,
}

fn convergence_drop(cfg: &ConvergenceConfig, layout: &Layout, index: u64) -> Result<DropConvergence> {
    let e = &cfg.experiment;
    let beta = generate_drop(&e.scenario, layout, index)?;
    let (cells, users) = (beta.num_cells(), beta.users_per_cell());
    let powers = PowerProfile::uniform(cells, users, e.gamma, e.phi_max);
    let (assignment, _, _) = allocate_drop(e, &beta)?;
    let bound = asymptotics::asymptotic_report(&beta, &powers, &assignment, &e.frame, e.reuse())?;
    let mean_db = |v: &[f64]| v.iter().map(|&s| linear_to_db(s)).sum::<f64>() / v.len() as f64;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let book = make_pilot_book(users)?;
    let mut measured = Vec::with_capacity(cfg.antennas.len());
    for (ni, &n) in cfg.antennas.iter().enumerate() {
        let mut rng = drop_rng(e.scenario.seed ^ 0x5eed_0000_0000_0000 ^ ni as u64, index);
        let chan = ChannelRealization::generate(&beta, n, &mut rng)?;
        let csi = simulate_training(&book, &chan, &powers, &assignment, Noise::Awgn, &mut rng)?;
        let mut pair = [(0.0, 0.0); 2];
        for (slot, kind) in [PrecoderKind::Mf, PrecoderKind::Zf].into_iter().enumerate() {
            let p = build_precoder(kind, &csi)?;
            let gains = downlink_gains(&p, &chan, &powers, &assignment)?;
            let m = empirical_metrics(&gains, cfg.trials, Noise::Awgn, &mut rng)?;
            pair[slot] = (mean_db(m.sinr.cell(CENTRAL_CELL)), mean(m.ber.cell(CENTRAL_CELL)));
        }
        measured.push(pair);
    }
    Ok(DropConvergence {
        bound_sinr_db: mean_db(bound.sinr.cell(CENTRAL_CELL)),
        bound_ber: mean(bound.ber.cell(CENTRAL_CELL)),
        measured,
    })
}

/// Finite-N MF and ZF against the limit, one row per (N, precoder).
pub fn run_convergence(cfg: &ConvergenceConfig) -> Result<Vec<ConvergenceRow>> {
    cfg.experiment.validate()?;
    if cfg.trials == 0 || cfg.antennas.is_empty() {
        return Err(Error::Config("convergence study needs trials and antenna counts".into()));
    }
    let layout = cfg.experiment.scenario.layout()?;
    let drops: Vec<DropConvergence> = (0..cfg.experiment.num_drops as u64)
        .into_par_iter()
        .map(|i| convergence_drop(cfg, &layout, i))
        .collect::<Result<_>>()?;
    let nd = drops.len() as f64;
    let bound_ber = drops.iter().map(|d| d.bound_ber).sum::<f64>() / nd;
    let bound_sinr_db = median(&mut drops.iter().map(|d| d.bound_sinr_db).collect::<Vec<_>>());
    let mut rows = Vec::new();
    for (ni, &n) in cfg.antennas.iter().enumerate() {
        for (slot, kind) in [PrecoderKind::Mf, PrecoderKind::Zf].into_iter().enumerate() {
            let mut sinr: Vec<f64> = drops.iter().map(|d| d.measured[ni][slot].0).collect();
            let mut gap: Vec<f64> = drops.iter().map(|d| d.bound_sinr_db - d.measured[ni][slot].0).collect();
            rows.push(ConvergenceRow {
                antennas: n,
                precoder: kind.name(),
                mean_ber: drops.iter().map(|d| d.measured[ni][slot].1).sum::<f64>() / nd,
                mean_sinr_db: median(&mut sinr),
                bound_ber,
                bound_sinr_db,
                median_gap_db: median(&mut gap),
            });
        }
    }
    Ok(rows)
}

pub fn convergence_csv(rows: &[ConvergenceRow]) -> String {
    let mut s = String::from("N,precoder,mean_BER,mean_SINR_dB,bound_BER,bound_SINR_dB\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{:.6},{:.4},{:.6},{:.4}\n",
            r.antennas, r.precoder, r.mean_ber, r.mean_sinr_db, r.bound_ber, r.bound_sinr_db
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(criterion: AllocationCriterion, drops: usize) -> ExperimentConfig {
        ExperimentConfig {
            criterion,
            num_drops: drops,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn single_drop_is_deterministic() {
        let c = small(AllocationCriterion::MaxminSinr, 1);
        let a = run_experiment(&c).unwrap();
        let b = run_experiment(&c).unwrap();
        assert_eq!(a.samples, b.samples);
        assert_eq!(a.samples.len(), 4);
    }

    #[test]
    fn exactly_k_samples_per_drop() {
        let r = run_experiment(&small(AllocationCriterion::Random, 7)).unwrap();
        assert_eq!(r.summary.num_users, 28);
        assert!(r.summary.p5_rate <= r.summary.mean_rate);
    }

    #[test]
    fn drop_streams_are_independent_of_order() {
        let c = small(AllocationCriterion::Random, 3);
        let layout = c.scenario.layout().unwrap();
        let direct = run_drop(&c, &layout, 2).unwrap();
        let all = run_experiment(&c).unwrap();
        assert_eq!(&all.samples.ber[8..12], &direct.samples.ber[..]);
    }

    #[test]
    fn zero_drops_rejected() {
        assert!(run_experiment(&small(AllocationCriterion::Random, 0)).is_err());
    }

    #[test]
    fn table_report_marks_gaps() {
        let rows = vec![Table1Row {
            spec: TABLE1[0],
            label: "Random".into(),
            summary: None,
        }];
        let t = table1_report(&rows);
        assert!(t.contains("- (9.84)"));
        assert_eq!(table1_csv(&rows).lines().count(), 2);
    }

    #[test]
    fn writes_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let r = run_experiment(&small(AllocationCriterion::Random, 2)).unwrap();
        write_experiment(dir.path(), &r, OutputFormat::Csv).unwrap();
        write_experiment(dir.path(), &r, OutputFormat::Json).unwrap();
        for f in ["metrics.csv", "metrics.json", "cdf_ber.csv", "ccdf_sinr_db.csv", "ccdf_rate_mbps.csv", "manifest.json"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
    }
}

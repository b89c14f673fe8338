//! Downlink power control on the limit SINR: target tracking and the
//! interference-aware variant that backs off users whose target is out of
//! reach.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::asymptotics::{self, db_to_linear, linear_to_db, AlphaTable, DEFAULT_SINR_CAP_DB};
use crate::channel::PowerProfile;
use crate::error::{Error, Result};
use crate::grid::CellGrid;
use crate::metrics::percentile;
use crate::pilot_allocation::PilotAssignment;
use crate::scenario::{BetaTensor, FrameConfig, ReuseFactor};

pub const DEFAULT_ITERATIONS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PcAlgorithm {
    /// `phi = min(zeta I, phi_max)`
    TargetTracking,
    /// Same below the cap, `phi_max^2 / (zeta I)` above it.
    InterferenceAware,
}

impl PcAlgorithm {
    pub fn name(self) -> &'static str {
        match self {
            PcAlgorithm::TargetTracking => "tpc",
            PcAlgorithm::InterferenceAware => "opc",
        }
    }

    pub fn step(self, interference: f64, target: f64, cap: f64) -> f64 {
        match self {
            PcAlgorithm::TargetTracking => tpc_step(interference, target, cap),
            PcAlgorithm::InterferenceAware => opc_step(interference, target, cap),
        }
    }
}

impl fmt::Display for PcAlgorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PcAlgorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tpc" => Ok(PcAlgorithm::TargetTracking),
            "opc" => Ok(PcAlgorithm::InterferenceAware),
            _ => Err(Error::Config(format!("unknown power-control algorithm {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerControlConfig {
    /// Linear target SINR per user.
    pub target_sinr: CellGrid<f64>,
    pub iterations: usize,
    pub algorithm: PcAlgorithm,
}

impl PowerControlConfig {
    pub fn uniform(cells: usize, users: usize, target_db: f64, algorithm: PcAlgorithm) -> Self {
        PowerControlConfig {
            target_sinr: CellGrid::filled(cells, users, db_to_linear(target_db)),
            iterations: DEFAULT_ITERATIONS,
            algorithm,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("power control needs at least one iteration".into()));
        }
        if self.target_sinr.as_slice().iter().any(|z| !(*z > 0.0) || z.is_infinite()) {
            return Err(Error::Config("target SINR must be positive and finite".into()));
        }
        Ok(())
    }
}

pub fn tpc_step(interference: f64, target: f64, cap: f64) -> f64 {
    (target * interference).min(cap)
}

pub fn opc_step(interference: f64, target: f64, cap: f64) -> f64 {
    if target * interference <= cap {
        target * interference
    } else {
        cap * cap / (target * interference)
    }
}

fn interference_with(
    beta: &BetaTensor,
    phi: &CellGrid<f64>,
    assignment: &PilotAssignment,
    alpha: &AlphaTable,
    cell: usize,
    user: usize,
) -> f64 {
    let k = assignment.pilot_of(cell, user);
    let own = beta.get(cell, user, cell);
    let gain = own * own / alpha.sq(cell, k);
    let mut acc = 0.0;
    for j in (0..beta.num_cells()).filter(|&j| j != cell) {
        let b = beta.get(j, user, cell);
        acc += phi.at(j, assignment.user(j, k)) * b * b / alpha.sq(j, k);
    }
    if acc == 0.0 {
        0.0
    } else {
        acc / gain
    }
}

/// Interference seen by the user, normalized by its own effective gain
/// `beta^2 / alpha^2`, so that `SINR = phi / I`. Independent of the user's
/// own power.
pub fn effective_interference(
    beta: &BetaTensor,
    powers: &PowerProfile,
    assignment: &PilotAssignment,
    cell: usize,
    user: usize,
) -> f64 {
    let alpha = AlphaTable::new(beta, &powers.gamma, assignment);
    interference_with(beta, &powers.phi, assignment, &alpha, cell, user)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerTrace {
    /// Entry 0 is the starting point.
    pub phi: Vec<CellGrid<f64>>,
    pub sinr: Vec<CellGrid<f64>>,
}

impl PowerTrace {
    /// `iteration,cell,user,phi,sinr_db` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,cell,user,phi,sinr_db\n");
        for (i, (phi, sinr)) in self.phi.iter().zip(&self.sinr).enumerate() {
            let (cells, users) = phi.shape();
            for c in 0..cells {
                for u in 0..users {
                    s.push_str(&format!("{i},{c},{u},{},{}\n", phi.at(c, u), linear_to_db(sinr.at(c, u))));
                }
            }
        }
        s
    }
}

/// Synchronous updates: every user's interference is taken from the
/// previous iterate, then all powers move at once. Starts from
/// `powers.phi`.
pub fn run_power_control(
    config: &PowerControlConfig,
    beta: &BetaTensor,
    powers: &PowerProfile,
    assignment: &PilotAssignment,
) -> Result<(PowerProfile, PowerTrace)> {
    config.validate()?;
    powers.validate()?;
    let shape = (beta.num_cells(), beta.users_per_cell());
    if powers.shape() != shape || assignment.shape() != shape || config.target_sinr.shape() != shape {
        return Err(Error::Contract("power-control inputs disagree in shape".into()));
    }
    let alpha = AlphaTable::new(beta, &powers.gamma, assignment);
    let sinr_of = |phi: &CellGrid<f64>| {
        CellGrid::from_fn(shape.0, shape.1, |c, u| asymptotics::sinr_with(beta, phi, assignment, &alpha, c, u))
    };
    let mut phi = powers.phi.clone();
    let mut trace = PowerTrace {
        sinr: vec![sinr_of(&phi)],
        phi: vec![phi.clone()],
    };
    for _ in 0..config.iterations {
        phi = CellGrid::from_fn(shape.0, shape.1, |c, u| {
            let i = interference_with(beta, &phi, assignment, &alpha, c, u);
            let cap = powers.phi_max.at(c, u);
            let p = config.algorithm.step(i, config.target_sinr.at(c, u), cap);
            // Unreachable signal (I infinite) under TPC.
            if p.is_nan() {
                0.0
            } else {
                p.clamp(0.0, cap)
            }
        });
        trace.sinr.push(sinr_of(&phi));
        trace.phi.push(phi.clone());
    }
    Ok((powers.with_phi(phi), trace))
}

/// One drop of a target-SINR sweep: long-term gains and the pilot
/// assignment power control will run on.
#[derive(Debug, Clone)]
pub struct SweepDrop {
    pub beta: BetaTensor,
    pub assignment: PilotAssignment,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepPoint {
    pub zeta_db: f64,
    /// Mbps
    pub p5_rate: f64,
    pub mean_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub curve: Vec<SweepPoint>,
    pub best_zeta_db: f64,
}

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("zeta_dB,p5_rate,mean_rate\n");
        for p in &self.curve {
            s.push_str(&format!("{},{:.6},{:.6}\n", p.zeta_db, p.p5_rate, p.mean_rate));
        }
        s
    }
}

pub struct SweepSettings<'a> {
    pub algorithm: PcAlgorithm,
    pub iterations: usize,
    pub gamma: f64,
    pub phi_max: f64,
    pub frame: &'a FrameConfig,
    pub reuse: ReuseFactor,
    /// Only this cell's users are counted.
    pub cell: usize,
}

/// Runs power control at every grid target over the ensemble and picks the
/// target with the largest 5th-percentile rate (first one on ties).
pub fn sweep_target(grid_db: &[f64], ensemble: &[SweepDrop], settings: &SweepSettings<'_>) -> Result<SweepResult> {
    if grid_db.is_empty() || ensemble.is_empty() {
        return Err(Error::Contract("sweep needs a non-empty grid and ensemble".into()));
    }
    let mut curve = Vec::with_capacity(grid_db.len());
    for &z in grid_db {
        let rates: Vec<Vec<f64>> = ensemble
            .par_iter()
            .map(|d| {
                let (cells, users) = (d.beta.num_cells(), d.beta.users_per_cell());
                let powers = PowerProfile::uniform(cells, users, settings.gamma, settings.phi_max);
                let mut cfg = PowerControlConfig::uniform(cells, users, z, settings.algorithm);
                cfg.iterations = settings.iterations;
                let (_, trace) = run_power_control(&cfg, &d.beta, &powers, &d.assignment)?;
                let sinr = trace.sinr.last().expect("trace has the start point");
                Ok(sinr
                    .cell(settings.cell)
                    .iter()
                    .map(|&s| asymptotics::user_rate(s, settings.frame, settings.reuse, DEFAULT_SINR_CAP_DB))
                    .collect())
            })
            .collect::<Result<_>>()?;
        let rates: Vec<f64> = rates.into_iter().flatten().collect();
        curve.push(SweepPoint {
            zeta_db: z,
            p5_rate: percentile(&rates, 5.0)? / 1e6,
            mean_rate: rates.iter().sum::<f64>() / rates.len() as f64 / 1e6,
        });
    }
    let best = curve
        .iter()
        .fold(curve[0], |b, p| if p.p5_rate > b.p5_rate { *p } else { b });
    Ok(SweepResult {
        best_zeta_db: best.zeta_db,
        curve,
    })
}

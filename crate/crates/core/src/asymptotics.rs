//! Large-antenna limits of the downlink: per-user SINR, exact 4-QAM bit
//! error probability and the rate map.
//!
//! As `N -> inf` the received sample of the user holding pilot `k` in cell
//! `l` reduces to a weighted sum of the pilot-`k` symbols of every cell:
//!
//! ```text
//! r ~ sum_j  sqrt(phi_{k j}) * beta_{j k l} / alpha_{k j} * x_{k j}
//! ```
//!
//! Noise and fast fading vanish, so the SINR is a ratio of long-term gains
//! and the BER is the fraction of interferer sign patterns whose sum
//! overwhelms the desired amplitude.
//!
//! All public functions take user-indexed inputs (`(cell, user)`) and resolve
//! pilots through the [`PilotAssignment`].

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::PowerProfile;
use crate::error::{Error, Result};
use crate::grid::CellGrid;
use crate::pilot_allocation::PilotAssignment;
use crate::scenario::{BetaTensor, FrameConfig, ReuseFactor};

/// Largest network for which sign patterns are enumerated.
pub const MAX_SIGN_CELLS: usize = 20;

/// Asymptotic `alpha^2` for every (bs, pilot).
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaTable {
    users: usize,
    sq: Vec<f64>,
}

impl AlphaTable {
    pub fn new(beta: &BetaTensor, gamma: &CellGrid<f64>, assignment: &PilotAssignment) -> Self {
        let (cells, users) = (beta.num_cells(), beta.users_per_cell());
        let noise = 1.0 / users as f64;
        let mut sq = vec![noise; cells * users];
        for bs in 0..cells {
            for k in 0..users {
                for cell in 0..cells {
                    let u = assignment.user(cell, k);
                    sq[bs * users + k] += gamma.at(cell, u) * beta.get(bs, u, cell);
                }
            }
        }
        AlphaTable { users, sq }
    }

    /// Builds a table from explicit `alpha^2` values, `sq[bs * K + pilot]`.
    pub fn from_sq(users: usize, sq: Vec<f64>) -> Self {
        AlphaTable { users, sq }
    }

    #[inline]
    pub fn sq(&self, bs: usize, pilot: usize) -> f64 {
        self.sq[bs * self.users + pilot]
    }
}

/// Desired-signal term `phi * beta^2 / alpha^2` and the summed interference
/// term for the user `user` of `cell`.
fn sinr_terms(
    beta: &BetaTensor,
    phi: &CellGrid<f64>,
    assignment: &PilotAssignment,
    alpha: &AlphaTable,
    cell: usize,
    user: usize,
) -> (f64, f64) {
    let k = assignment.pilot_of(cell, user);
    let own = beta.get(cell, user, cell);
    let signal = phi.at(cell, user) * own * own / alpha.sq(cell, k);
    let mut interference = 0.0;
    for j in (0..beta.num_cells()).filter(|&j| j != cell) {
        let b = beta.get(j, user, cell);
        interference += phi.at(j, assignment.user(j, k)) * b * b / alpha.sq(j, k);
    }
    (signal, interference)
}

/// SINR ratio with the isolated-cell convention: no interference and a
/// positive signal is `+inf`; no interference and no signal is 0.
fn ratio(signal: f64, interference: f64) -> f64 {
    if interference > 0.0 {
        signal / interference
    } else if signal > 0.0 {
        f64::INFINITY
    } else {
        0.0
    }
}

pub fn sinr_with(
    beta: &BetaTensor,
    phi: &CellGrid<f64>,
    assignment: &PilotAssignment,
    alpha: &AlphaTable,
    cell: usize,
    user: usize,
) -> f64 {
    let (s, i) = sinr_terms(beta, phi, assignment, alpha, cell, user);
    ratio(s, i)
}

/// Limit SINR of every user, indexed by (cell, user).
pub fn asymptotic_sinr(beta: &BetaTensor, powers: &PowerProfile, assignment: &PilotAssignment) -> CellGrid<f64> {
    let alpha = AlphaTable::new(beta, &powers.gamma, assignment);
    CellGrid::from_fn(beta.num_cells(), beta.users_per_cell(), |c, u| {
        sinr_with(beta, &powers.phi, assignment, &alpha, c, u)
    })
}

/// All `{+-1}^(L-1)` interferer sign patterns with the serving column fixed
/// at `+1`. Row `r` encodes the interferers in binary counting order, a set
/// bit meaning `-1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignMatrix {
    cells: usize,
    serving: usize,
    rows: Vec<i8>,
}

impl SignMatrix {
    pub fn num_rows(&self) -> usize {
        self.rows.len() / self.cells
    }

    pub fn num_cells(&self) -> usize {
        self.cells
    }

    pub fn serving(&self) -> usize {
        self.serving
    }

    pub fn row(&self, r: usize) -> &[i8] {
        &self.rows[r * self.cells..(r + 1) * self.cells]
    }

    pub fn get(&self, r: usize, cell: usize) -> i8 {
        self.rows[r * self.cells + cell]
    }
}

/// `serving` is a 0-based cell index.
pub fn build_sign_matrix(cells: usize, serving: usize) -> Result<SignMatrix> {
    if cells == 0 || serving >= cells {
        return Err(Error::Contract(format!("serving cell {serving} out of range for L = {cells}")));
    }
    if cells > MAX_SIGN_CELLS {
        return Err(Error::ResourceGuard(format!(
            "2^{} sign patterns requested; limit is L <= {MAX_SIGN_CELLS}",
            cells - 1
        )));
    }
    let n_rows = 1usize << (cells - 1);
    let mut rows = Vec::with_capacity(n_rows * cells);
    for r in 0..n_rows {
        let mut bit = cells - 1;
        for c in 0..cells {
            if c == serving {
                rows.push(1);
            } else {
                bit -= 1;
                rows.push(if (r >> bit) & 1 == 1 { -1 } else { 1 });
            }
        }
    }
    Ok(SignMatrix { cells, serving, rows })
}

/// Desired amplitude `sqrt(phi) beta / alpha` and the per-cell interferer
/// amplitudes (zero at the serving position).
pub(crate) fn ber_amplitudes(
    beta: &BetaTensor,
    phi: &CellGrid<f64>,
    assignment: &PilotAssignment,
    alpha: &AlphaTable,
    cell: usize,
    user: usize,
    out: &mut Vec<f64>,
) -> f64 {
    let k = assignment.pilot_of(cell, user);
    out.clear();
    for j in 0..beta.num_cells() {
        if j == cell {
            out.push(0.0);
        } else {
            let uj = assignment.user(j, k);
            out.push(phi.at(j, uj).sqrt() * beta.get(j, user, cell) / alpha.sq(j, k).sqrt());
        }
    }
    phi.at(cell, user).sqrt() * beta.get(cell, user, cell) / alpha.sq(cell, k).sqrt()
}

/// Fraction of sign rows for which the interference reaches the signal
/// (`u[0] = 1`). A user with zero desired amplitude is assigned 1/2.
pub(crate) fn ber_from_amplitudes(signal: f64, interferers: &[f64], signs: &SignMatrix) -> f64 {
    if signal <= 0.0 {
        return 0.5;
    }
    // Every pattern is below the signal: nothing to enumerate.
    if interferers.iter().sum::<f64>() < signal {
        return 0.0;
    }
    let rows = signs.num_rows();
    let mut errors = 0usize;
    for r in 0..rows {
        let row = signs.row(r);
        let mut acc = 0.0;
        for (a, &b) in interferers.iter().zip(row) {
            acc += a * b as f64;
        }
        if acc - signal >= 0.0 {
            errors += 1;
        }
    }
    errors as f64 / rows as f64
}

pub fn ber_with(
    beta: &BetaTensor,
    phi: &CellGrid<f64>,
    assignment: &PilotAssignment,
    alpha: &AlphaTable,
    signs: &SignMatrix,
    cell: usize,
    user: usize,
) -> f64 {
    let mut amps = Vec::with_capacity(beta.num_cells());
    let s = ber_amplitudes(beta, phi, assignment, alpha, cell, user, &mut amps);
    ber_from_amplitudes(s, &amps, signs)
}

/// Exact limit BER of one user under 4-QAM.
pub fn asymptotic_ber(
    beta: &BetaTensor,
    powers: &PowerProfile,
    assignment: &PilotAssignment,
    cell: usize,
    user: usize,
) -> Result<f64> {
    let signs = build_sign_matrix(beta.num_cells(), cell)?;
    let alpha = AlphaTable::new(beta, &powers.gamma, assignment);
    Ok(ber_with(beta, &powers.phi, assignment, &alpha, &signs, cell, user))
}

pub fn asymptotic_ber_grid(beta: &BetaTensor, powers: &PowerProfile, assignment: &PilotAssignment) -> Result<CellGrid<f64>> {
    let cells = beta.num_cells();
    let alpha = AlphaTable::new(beta, &powers.gamma, assignment);
    let signs: Vec<SignMatrix> = (0..cells).map(|c| build_sign_matrix(cells, c)).collect::<Result<_>>()?;
    Ok(CellGrid::from_fn(cells, beta.users_per_cell(), |c, u| {
        ber_with(beta, &powers.phi, assignment, &alpha, &signs[c], c, u)
    }))
}

/// Square QAM order. Only 4-QAM has a closed-form limit BER here.
pub fn ensure_4qam(order: u32) -> Result<()> {
    if order == 4 {
        Ok(())
    } else {
        Err(Error::Domain(format!("asymptotic BER is only defined for 4-QAM, got {order}-QAM")))
    }
}

/// Monte Carlo estimate of the same limit BER: random 4-QAM symbols for the
/// user and every co-pilot interferer, noiseless limit signal, sign
/// detection on both rails.
pub fn ber_bruteforce_oracle<R: Rng + ?Sized>(
    beta: &BetaTensor,
    powers: &PowerProfile,
    assignment: &PilotAssignment,
    cell: usize,
    user: usize,
    num_symbols: usize,
    rng: &mut R,
) -> Result<f64> {
    let cells = beta.num_cells();
    let needed = 10_000usize << (cells - 1);
    if num_symbols < needed {
        return Err(Error::Contract(format!(
            "oracle needs at least {needed} symbols for L = {cells}, got {num_symbols}"
        )));
    }
    let k = assignment.pilot_of(cell, user);
    let gain = |j: usize| {
        let uj = assignment.user(j, k);
        let a_sq: f64 = (0..cells)
            .map(|c| {
                let u = assignment.user(c, k);
                powers.gamma.at(c, u) * beta.get(j, u, c)
            })
            .sum::<f64>()
            + 1.0 / beta.users_per_cell() as f64;
        powers.phi.at(j, uj).sqrt() * beta.get(j, user, cell) / a_sq.sqrt()
    };
    let gains: Vec<f64> = (0..cells).map(gain).collect();
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let mut bit_errors = 0u64;
    for _ in 0..num_symbols {
        let (mut re, mut im) = (0.0, 0.0);
        let (mut own_re, mut own_im) = (0.0, 0.0);
        for (j, g) in gains.iter().enumerate() {
            let xr = if rng.random::<bool>() { h } else { -h };
            let xi = if rng.random::<bool>() { h } else { -h };
            re += g * xr;
            im += g * xi;
            if j == cell {
                own_re = xr;
                own_im = xi;
            }
        }
        // A zero decision statistic counts as an error.
        if re * own_re <= 0.0 {
            bit_errors += 1;
        }
        if im * own_im <= 0.0 {
            bit_errors += 1;
        }
    }
    Ok(bit_errors as f64 / (2 * num_symbols) as f64)
}

/// Default cap applied to an infinite SINR before taking the rate.
pub const DEFAULT_SINR_CAP_DB: f64 = 40.0;

/// `(BW / RF) (D / T) log2(1 + SINR)` in bit/s. An infinite SINR is
/// replaced by `sinr_cap_db`.
pub fn user_rate(sinr: f64, frame: &FrameConfig, reuse: ReuseFactor, sinr_cap_db: f64) -> f64 {
    let sinr = if sinr.is_infinite() { db_to_linear(sinr_cap_db) } else { sinr.max(0.0) };
    frame.bandwidth_hz / reuse.as_u32() as f64 * frame.downlink_fraction() * (1.0 + sinr).log2()
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// Limit SINR, BER and rate for every user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticReport {
    pub sinr: CellGrid<f64>,
    pub ber: CellGrid<f64>,
    pub rate: CellGrid<f64>,
}

pub fn asymptotic_report(
    beta: &BetaTensor,
    powers: &PowerProfile,
    assignment: &PilotAssignment,
    frame: &FrameConfig,
    reuse: ReuseFactor,
) -> Result<AsymptoticReport> {
    let sinr = asymptotic_sinr(beta, powers, assignment);
    let ber = asymptotic_ber_grid(beta, powers, assignment)?;
    let rate = sinr.map(|&s| user_rate(s, frame, reuse, DEFAULT_SINR_CAP_DB));
    Ok(AsymptoticReport { sinr, ber, rate })
}

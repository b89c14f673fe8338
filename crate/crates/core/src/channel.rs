//! Fast fading, synchronized uplink training and the contaminated CSI
//! estimate.
//!
//! Every BS correlates its received pilot matrix with the pilot book, so the
//! row of `Ghat_l` for pilot `k` is the sum of the channels of *all* users
//! that hold pilot `k`, in every cell, plus an equivalent noise of variance
//! `1/K`.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use num_complex::Complex;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::CellGrid;
use crate::pilot_allocation::PilotAssignment;
use crate::scenario::BetaTensor;

pub type C64 = Complex<f64>;

/// Draws one circularly-symmetric CN(0, 1) sample.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Orthogonal unit-modulus training sequences; column `k` is pilot `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotBook {
    psi: DMatrix<C64>,
}

impl PilotBook {
    pub fn len(&self) -> usize {
        self.psi.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.psi.ncols() == 0
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.psi
    }

    /// `Psi^H Psi`, which is `K * I` for a valid book.
    pub fn gram(&self) -> DMatrix<C64> {
        self.psi.adjoint() * &self.psi
    }
}

/// K-point DFT basis: `psi[i][k] = exp(-2 pi j i k / K)`.
pub fn make_pilot_book(k: usize) -> Result<PilotBook> {
    if k == 0 {
        return Err(Error::Contract("pilot length must be at least 1".into()));
    }
    let psi = DMatrix::from_fn(k, k, |i, c| {
        let phase = ((i * c) % k) as f64 / k as f64;
        C64::from_polar(1.0, -2.0 * std::f64::consts::PI * phase)
    });
    Ok(PilotBook { psi })
}

/// Uplink training powers, downlink powers and downlink caps, all linear
/// and relative to unit noise. Indexed by (cell, user).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerProfile {
    pub gamma: CellGrid<f64>,
    pub phi: CellGrid<f64>,
    pub phi_max: CellGrid<f64>,
}

impl PowerProfile {
    /// Downlink powers start at the cap.
    pub fn uniform(cells: usize, users: usize, gamma: f64, phi_max: f64) -> Self {
        PowerProfile {
            gamma: CellGrid::filled(cells, users, gamma),
            phi: CellGrid::filled(cells, users, phi_max),
            phi_max: CellGrid::filled(cells, users, phi_max),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.gamma.shape()
    }

    pub fn validate(&self) -> Result<()> {
        let shape = self.gamma.shape();
        if self.phi.shape() != shape || self.phi_max.shape() != shape {
            return Err(Error::Contract("power grids disagree in shape".into()));
        }
        let all = self
            .gamma
            .as_slice()
            .iter()
            .chain(self.phi.as_slice())
            .chain(self.phi_max.as_slice());
        if all.clone().any(|p| !(*p >= 0.0) || p.is_infinite()) {
            return Err(Error::Contract("powers must be finite and non-negative".into()));
        }
        Ok(())
    }

    pub fn with_phi(&self, phi: CellGrid<f64>) -> Self {
        PowerProfile {
            gamma: self.gamma.clone(),
            phi,
            phi_max: self.phi_max.clone(),
        }
    }
}

/// Fast-fading matrices `H_{bs,cell}` (K x N, row `u` = user `u` of `cell`)
/// together with the long-term gains they are scaled by.
#[derive(Debug, Clone)]
pub struct ChannelRealization {
    cells: usize,
    users: usize,
    antennas: usize,
    h: Vec<DMatrix<C64>>,
    beta: BetaTensor,
}

impl ChannelRealization {
    /// i.i.d. CN(0, 1) entries, drawn in (bs, cell, user, antenna) order.
    pub fn generate<R: Rng + ?Sized>(beta: &BetaTensor, antennas: usize, rng: &mut R) -> Result<Self> {
        if antennas == 0 {
            return Err(Error::Contract("need at least one BS antenna".into()));
        }
        let (cells, users) = (beta.num_cells(), beta.users_per_cell());
        let mut h = Vec::with_capacity(cells * cells);
        for _bs in 0..cells {
            for _cell in 0..cells {
                h.push(DMatrix::from_fn(users, antennas, |_, _| complex_normal(rng)));
            }
        }
        Ok(ChannelRealization {
            cells,
            users,
            antennas,
            h,
            beta: beta.clone(),
        })
    }

    /// Wraps explicit fast-fading matrices; `h[bs * L + cell]` must be K x N.
    pub fn from_parts(beta: &BetaTensor, h: Vec<DMatrix<C64>>) -> Result<Self> {
        let (cells, users) = (beta.num_cells(), beta.users_per_cell());
        if h.len() != cells * cells {
            return Err(Error::Contract(format!("expected {} fading blocks, got {}", cells * cells, h.len())));
        }
        let antennas = h[0].ncols();
        if h.iter().any(|m| m.nrows() != users || m.ncols() != antennas) {
            return Err(Error::Contract("fading blocks must all be K x N".into()));
        }
        Ok(ChannelRealization {
            cells,
            users,
            antennas,
            h,
            beta: beta.clone(),
        })
    }

    pub fn num_cells(&self) -> usize {
        self.cells
    }

    pub fn users_per_cell(&self) -> usize {
        self.users
    }

    pub fn antennas(&self) -> usize {
        self.antennas
    }

    pub fn beta(&self) -> &BetaTensor {
        &self.beta
    }

    /// Small-scale fading `H_{bs,cell}`.
    pub fn h(&self, bs: usize, cell: usize) -> &DMatrix<C64> {
        &self.h[bs * self.cells + cell]
    }

    /// `G_{bs,cell} = sqrt(B_{bs,cell}) H_{bs,cell}`.
    pub fn g(&self, bs: usize, cell: usize) -> DMatrix<C64> {
        let mut g = self.h(bs, cell).clone();
        for u in 0..self.users {
            let s = self.beta.get(bs, u, cell).sqrt();
            g.row_mut(u).scale_mut(s);
        }
        g
    }
}

/// Per-BS estimated channel, rows indexed by pilot.
#[derive(Debug, Clone)]
pub struct CsiEstimate {
    /// `ghat[bs]` is K x N; row `k` is the estimate for pilot `k`.
    pub ghat: Vec<DMatrix<C64>>,
    /// `alpha[(bs, k)] = ||ghat_{bs,k}|| / sqrt(N)`.
    pub alpha: CellGrid<f64>,
}

impl CsiEstimate {
    pub fn from_ghat(ghat: Vec<DMatrix<C64>>) -> Self {
        let cells = ghat.len();
        let users = ghat.first().map_or(0, |g| g.nrows());
        let alpha = CellGrid::from_fn(cells, users, |bs, k| {
            let g = &ghat[bs];
            g.row(k).norm() / (g.ncols() as f64).sqrt()
        });
        CsiEstimate { ghat, alpha }
    }

    pub fn num_cells(&self) -> usize {
        self.ghat.len()
    }

    pub fn antennas(&self) -> usize {
        self.ghat.first().map_or(0, |g| g.ncols())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Noise {
    Awgn,
    Off,
}

/// Synchronized uplink training followed by pilot correlation.
///
/// `Y_l = sum_j G_{lj}^T sqrt(Gamma_j) Psi_j + N` and
/// `Ghat_l^T = Y_l Psi^H / K`, where `Psi_j` places each user's pilot
/// according to `assignment`.
pub fn simulate_training<R: Rng + ?Sized>(
    book: &PilotBook,
    chan: &ChannelRealization,
    powers: &PowerProfile,
    assignment: &PilotAssignment,
    noise: Noise,
    rng: &mut R,
) -> Result<CsiEstimate> {
    let (cells, users, n) = (chan.cells, chan.users, chan.antennas);
    if book.len() != users {
        return Err(Error::Contract(format!("pilot book has {} sequences for K = {users}", book.len())));
    }
    if powers.shape() != (cells, users) || assignment.shape() != (cells, users) {
        return Err(Error::Contract("powers/assignment shape does not match the channel".into()));
    }
    let psi = book.matrix();
    let correlator = psi.adjoint() / C64::new(users as f64, 0.0);

    // Per-cell pilot matrix: row u is the (transposed) pilot of user u.
    let user_pilots: Vec<DMatrix<C64>> = (0..cells)
        .map(|cell| {
            DMatrix::from_fn(users, users, |u, i| {
                let p = assignment.pilot_of(cell, u);
                psi[(i, p)] * powers.gamma.at(cell, u).sqrt()
            })
        })
        .collect();

    let mut ghat = Vec::with_capacity(cells);
    for bs in 0..cells {
        let mut y = DMatrix::<C64>::zeros(n, users);
        for (cell, pilots) in user_pilots.iter().enumerate() {
            let gt = chan.g(bs, cell).transpose();
            y += gt * pilots;
        }
        if noise == Noise::Awgn {
            for v in y.iter_mut() {
                *v += complex_normal(rng);
            }
        }
        let ghat_t = y * &correlator;
        ghat.push(ghat_t.transpose());
    }
    Ok(CsiEstimate::from_ghat(ghat))
}

/// Almost-sure limit of `alpha^2` for `pilot` at `bs`:
/// `sum_j gamma_{j, u_j(k)} beta_{bs, u_j(k), j} + 1/K`.
pub fn alpha_sq_asymptotic(
    beta: &BetaTensor,
    gamma: &CellGrid<f64>,
    assignment: &PilotAssignment,
    pilot: usize,
    bs: usize,
) -> f64 {
    let users = beta.users_per_cell();
    let mut acc = 1.0 / users as f64;
    for cell in 0..beta.num_cells() {
        let u = assignment.user(cell, pilot);
        acc += gamma.at(cell, u) * beta.get(bs, u, cell);
    }
    acc
}

pub fn alpha_asymptotic(
    beta: &BetaTensor,
    gamma: &CellGrid<f64>,
    assignment: &PilotAssignment,
    pilot: usize,
    bs: usize,
) -> f64 {
    alpha_sq_asymptotic(beta, gamma, assignment, pilot, bs).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AlphaConvergenceRow {
    pub antennas: usize,
    pub median_abs_error: f64,
    pub max_abs_error: f64,
}

/// Measures `|alpha_hat^2 - alpha^2|` over `trials` channel draws for each
/// antenna count, pooling all (bs, pilot) pairs.
pub fn check_alpha_convergence<R: Rng + ?Sized>(
    beta: &BetaTensor,
    powers: &PowerProfile,
    assignment: &PilotAssignment,
    antenna_counts: &[usize],
    trials: usize,
    rng: &mut R,
) -> Result<Vec<AlphaConvergenceRow>> {
    let (cells, users) = (beta.num_cells(), beta.users_per_cell());
    let book = make_pilot_book(users)?;
    let mut rows = Vec::with_capacity(antenna_counts.len());
    for &n in antenna_counts {
        let mut errors = Vec::with_capacity(trials * cells * users);
        for _ in 0..trials {
            let chan = ChannelRealization::generate(beta, n, rng)?;
            let csi = simulate_training(&book, &chan, powers, assignment, Noise::Awgn, rng)?;
            for bs in 0..cells {
                for k in 0..users {
                    let limit = alpha_sq_asymptotic(beta, &powers.gamma, assignment, k, bs);
                    errors.push((csi.alpha.at(bs, k).powi(2) - limit).abs());
                }
            }
        }
        errors.sort_by(f64::total_cmp);
        rows.push(AlphaConvergenceRow {
            antennas: n,
            median_abs_error: errors[errors.len() / 2],
            max_abs_error: *errors.last().unwrap_or(&0.0),
        });
    }
    Ok(rows)
}

/// Dumps every `Ghat_l` in BS order, each K x N row-major, as little-endian
/// `(re, im)` f64 pairs. No header.
pub fn write_csi_binary<W: Write>(csi: &CsiEstimate, mut w: W) -> std::io::Result<()> {
    for g in &csi.ghat {
        for r in 0..g.nrows() {
            for c in 0..g.ncols() {
                let v = g[(r, c)];
                w.write_all(&v.re.to_le_bytes())?;
                w.write_all(&v.im.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn read_csi_binary<R: Read>(mut r: R, cells: usize, users: usize, antennas: usize) -> std::io::Result<CsiEstimate> {
    let mut buf = [0u8; 8];
    let mut next = |r: &mut R| -> std::io::Result<f64> {
        r.read_exact(&mut buf)?;
        Ok(f64::from_le_bytes(buf))
    };
    let mut ghat = Vec::with_capacity(cells);
    for _ in 0..cells {
        let mut g = DMatrix::<C64>::zeros(users, antennas);
        for row in 0..users {
            for col in 0..antennas {
                let re = next(&mut r)?;
                let im = next(&mut r)?;
                g[(row, col)] = C64::new(re, im);
            }
        }
        ghat.push(g);
    }
    Ok(CsiEstimate::from_ghat(ghat))
}

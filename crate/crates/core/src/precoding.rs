//! Finite-N downlink: MF and ZF precoders built from the contaminated CSI,
//! 4-QAM transmission and empirical per-user SINR / BER.

use nalgebra::DMatrix;
use rand::Rng;

use crate::channel::{complex_normal, ChannelRealization, CsiEstimate, Noise, PowerProfile, C64};
use crate::error::{Error, Result};
use crate::grid::CellGrid;
use crate::pilot_allocation::PilotAssignment;

/// Condition estimates above this are treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrecoderKind {
    Mf,
    Zf,
}

impl PrecoderKind {
    pub fn name(self) -> &'static str {
        match self {
            PrecoderKind::Mf => "MF",
            PrecoderKind::Zf => "ZF",
        }
    }
}

/// Per-BS beamformers; `p[bs]` is N x K with unit-norm columns indexed by
/// pilot.
#[derive(Debug, Clone)]
pub struct Precoder {
    pub kind: PrecoderKind,
    pub p: Vec<DMatrix<C64>>,
}

impl Precoder {
    pub fn num_cells(&self) -> usize {
        self.p.len()
    }

    pub fn column_norms(&self, bs: usize) -> Vec<f64> {
        self.p[bs].column_iter().map(|c| c.norm()).collect()
    }
}

fn normalize_columns(m: &mut DMatrix<C64>, bs: usize) -> Result<()> {
    for (k, mut col) in m.column_iter_mut().enumerate() {
        let n = col.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::Degenerate(format!("BS {bs}: precoder column {k} has norm {n}")));
        }
        col.unscale_mut(n);
    }
    Ok(())
}

/// `p_k = ghat_k^H / ||ghat_k||`.
pub fn mf_precoder(csi: &CsiEstimate) -> Result<Precoder> {
    let p = csi
        .ghat
        .iter()
        .enumerate()
        .map(|(bs, g)| {
            let mut m = g.adjoint();
            normalize_columns(&mut m, bs)?;
            Ok(m)
        })
        .collect::<Result<_>>()?;
    Ok(Precoder { kind: PrecoderKind::Mf, p })
}

/// `Ghat^H (Ghat Ghat^H)^-1` with unit-norm columns. Computed as `Q R^-H`
/// from the thin QR of `Ghat^H`, never forming the Gram inverse.
pub fn zf_precoder(csi: &CsiEstimate) -> Result<Precoder> {
    let mut p = Vec::with_capacity(csi.ghat.len());
    for (bs, g) in csi.ghat.iter().enumerate() {
        let (k, n) = g.shape();
        if n < k {
            return Err(Error::Singular {
                bs,
                condition: f64::INFINITY,
            });
        }
        let qr = g.adjoint().qr();
        let r = qr.r();
        let diag: Vec<f64> = r.diagonal().iter().map(|d| d.norm()).collect();
        let max = diag.iter().copied().fold(0.0, f64::max);
        let min = diag.iter().copied().fold(f64::INFINITY, f64::min);
        // |R_ii| ratio squared approximates cond(Ghat Ghat^H).
        let condition = if min > 0.0 { (max / min).powi(2) } else { f64::INFINITY };
        if !(condition <= MAX_CONDITION) {
            return Err(Error::Singular { bs, condition });
        }
        let rh = r.adjoint();
        let x = rh
            .solve_lower_triangular(&DMatrix::identity(k, k))
            .ok_or(Error::Singular { bs, condition })?;
        let mut w = qr.q() * x;
        normalize_columns(&mut w, bs)?;
        p.push(w);
    }
    Ok(Precoder { kind: PrecoderKind::Zf, p })
}

pub fn build_precoder(kind: PrecoderKind, csi: &CsiEstimate) -> Result<Precoder> {
    match kind {
        PrecoderKind::Mf => mf_precoder(csi),
        PrecoderKind::Zf => zf_precoder(csi),
    }
}

/// Gray-mapped 4-QAM symbols; bit 0 rides the real rail, bit 1 the imaginary.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolFrame {
    pub x: CellGrid<C64>,
    pub bits: CellGrid<u8>,
}

pub fn qam4(label: u8) -> C64 {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let re = if label & 1 == 0 { s } else { -s };
    let im = if label & 2 == 0 { s } else { -s };
    C64::new(re, im)
}

/// Quadrant decision; zero goes to the positive side.
pub fn detect_qam4(r: C64) -> u8 {
    (r.re < 0.0) as u8 | (((r.im < 0.0) as u8) << 1)
}

impl SymbolFrame {
    pub fn random<R: Rng + ?Sized>(cells: usize, users: usize, rng: &mut R) -> Self {
        let bits = CellGrid::from_fn(cells, users, |_, _| rng.random_range(0..4u8));
        SymbolFrame {
            x: bits.map(|&b| qam4(b)),
            bits,
        }
    }
}

/// Effective complex gain from every transmitted stream to every user:
/// `gain[(cell, user), (bs, tx_user)] = sqrt(phi beta) h p`.
#[derive(Debug, Clone)]
pub struct DownlinkGains {
    cells: usize,
    users: usize,
    gain: DMatrix<C64>,
}

impl DownlinkGains {
    pub fn get(&self, cell: usize, user: usize, bs: usize, tx_user: usize) -> C64 {
        self.gain[(cell * self.users + user, bs * self.users + tx_user)]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.cells, self.users)
    }

    /// Received samples for one frame, with unit-variance receiver noise
    /// when `noise` is `Awgn`.
    pub fn receive<R: Rng + ?Sized>(&self, frame: &SymbolFrame, noise: Noise, rng: &mut R) -> Result<CellGrid<C64>> {
        if frame.x.shape() != (self.cells, self.users) {
            return Err(Error::Contract("symbol frame shape does not match the gains".into()));
        }
        let x = frame.x.as_slice();
        let mut out = Vec::with_capacity(x.len());
        for row in self.gain.row_iter() {
            let mut r: C64 = row.iter().zip(x).map(|(g, s)| g * s).sum();
            if noise == Noise::Awgn {
                r += complex_normal(rng);
            }
            out.push(r);
        }
        Ok(CellGrid::from_fn(self.cells, self.users, |c, u| out[c * self.users + u]))
    }
}

pub fn downlink_gains(
    precoder: &Precoder,
    chan: &ChannelRealization,
    powers: &PowerProfile,
    assignment: &PilotAssignment,
) -> Result<DownlinkGains> {
    let (cells, users, n) = (chan.num_cells(), chan.users_per_cell(), chan.antennas());
    if precoder.num_cells() != cells
        || precoder.p.iter().any(|p| p.shape() != (n, users))
        || powers.shape() != (cells, users)
        || assignment.shape() != (cells, users)
    {
        return Err(Error::Contract("precoder/powers/assignment dimensions do not match the channel".into()));
    }
    let beta = chan.beta();
    let mut gain = DMatrix::<C64>::zeros(cells * users, cells * users);
    for bs in 0..cells {
        for cell in 0..cells {
            // m[(user, pilot)]: fading from bs to `user` of `cell` through the pilot's beam.
            let m = chan.h(bs, cell) * &precoder.p[bs];
            for u in 0..users {
                let b = beta.get(bs, u, cell);
                for tx in 0..users {
                    let amp = (powers.phi.at(bs, tx) * b).sqrt();
                    gain[(cell * users + u, bs * users + tx)] = m[(u, assignment.pilot_of(bs, tx))] * amp;
                }
            }
        }
    }
    Ok(DownlinkGains { cells, users, gain })
}

/// One frame through the downlink.
pub fn simulate_downlink<R: Rng + ?Sized>(
    precoder: &Precoder,
    chan: &ChannelRealization,
    powers: &PowerProfile,
    assignment: &PilotAssignment,
    frame: &SymbolFrame,
    noise: Noise,
    rng: &mut R,
) -> Result<CellGrid<C64>> {
    downlink_gains(precoder, chan, powers, assignment)?.receive(frame, noise, rng)
}

/// Running per-user statistics over symbol trials.
#[derive(Debug, Clone)]
pub struct EmpiricalAccumulator {
    cells: usize,
    users: usize,
    trials: u64,
    cross: Vec<C64>,
    power: Vec<f64>,
    bit_errors_re: Vec<u64>,
    bit_errors_im: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMetrics {
    pub sinr: CellGrid<f64>,
    pub ber: CellGrid<f64>,
    pub ber_re: CellGrid<f64>,
    pub ber_im: CellGrid<f64>,
    pub trials: u64,
}

impl EmpiricalAccumulator {
    pub fn new(cells: usize, users: usize) -> Self {
        let n = cells * users;
        EmpiricalAccumulator {
            cells,
            users,
            trials: 0,
            cross: vec![C64::new(0.0, 0.0); n],
            power: vec![0.0; n],
            bit_errors_re: vec![0; n],
            bit_errors_im: vec![0; n],
        }
    }

    pub fn push(&mut self, frame: &SymbolFrame, received: &CellGrid<C64>) {
        for (i, ((r, x), &b)) in received
            .as_slice()
            .iter()
            .zip(frame.x.as_slice())
            .zip(frame.bits.as_slice())
            .enumerate()
        {
            self.cross[i] += r * x.conj();
            self.power[i] += r.norm_sqr();
            let d = detect_qam4(*r) ^ b;
            self.bit_errors_re[i] += (d & 1) as u64;
            self.bit_errors_im[i] += (d >> 1) as u64;
        }
        self.trials += 1;
    }

    /// SINR from regressing `r` on the known symbol: `c = E[r x*]`,
    /// `SINR = |c|^2 / (E|r|^2 - |c|^2)`.
    pub fn finish(&self) -> Result<EmpiricalMetrics> {
        if self.trials == 0 {
            return Err(Error::Contract("no symbol trials accumulated".into()));
        }
        let t = self.trials as f64;
        let (cells, users) = (self.cells, self.users);
        let sinr = CellGrid::from_fn(cells, users, |c, u| {
            let i = c * users + u;
            let s = (self.cross[i] / t).norm_sqr();
            let rest = self.power[i] / t - s;
            if rest > 0.0 {
                s / rest
            } else {
                f64::INFINITY
            }
        });
        let rail = |v: &[u64]| CellGrid::from_fn(cells, users, |c, u| v[c * users + u] as f64 / t);
        let ber_re = rail(&self.bit_errors_re);
        let ber_im = rail(&self.bit_errors_im);
        let ber = CellGrid::from_fn(cells, users, |c, u| 0.5 * (ber_re.at(c, u) + ber_im.at(c, u)));
        Ok(EmpiricalMetrics {
            sinr,
            ber,
            ber_re,
            ber_im,
            trials: self.trials,
        })
    }
}

/// Runs `trials` frames through fixed gains.
pub fn empirical_metrics<R: Rng + ?Sized>(
    gains: &DownlinkGains,
    trials: usize,
    noise: Noise,
    rng: &mut R,
) -> Result<EmpiricalMetrics> {
    let (cells, users) = gains.shape();
    let mut acc = EmpiricalAccumulator::new(cells, users);
    for _ in 0..trials {
        let frame = SymbolFrame::random(cells, users, rng);
        let r = gains.receive(&frame, noise, rng)?;
        acc.push(&frame, &r);
    }
    acc.finish()
}

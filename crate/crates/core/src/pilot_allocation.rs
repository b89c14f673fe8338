//! Per-cell exhaustive pilot assignment and decentralized best-response
//! rounds across cells.
//!
//! A cell that re-assigns its pilots changes the contamination seen by every
//! BS, so each candidate permutation recomputes the `alpha^2` of every
//! (bs, pilot) pair with the other cells' assignments frozen. The candidate
//! is scored on the K users of the deciding cell only.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::asymptotics::{self, build_sign_matrix, AlphaTable, SignMatrix};
use crate::channel::PowerProfile;
use crate::error::{Error, Result};
use crate::scenario::BetaTensor;

/// Exhaustive search is refused above this many users per cell.
pub const MAX_EXHAUSTIVE_USERS: usize = 8;

pub const DEFAULT_MAX_ROUNDS: usize = 20;

/// `perm[cell][pilot]` is the user of `cell` holding `pilot`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PilotAssignment {
    perm: Vec<Vec<usize>>,
    #[serde(skip)]
    inverse: Vec<Vec<usize>>,
}

fn invert(p: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; p.len()];
    for (pilot, &user) in p.iter().enumerate() {
        inv[user] = pilot;
    }
    inv
}

fn is_permutation(p: &[usize]) -> bool {
    let mut seen = vec![false; p.len()];
    p.iter().all(|&u| u < p.len() && !std::mem::replace(&mut seen[u], true))
}

impl PilotAssignment {
    pub fn identity(cells: usize, users: usize) -> Self {
        let id: Vec<usize> = (0..users).collect();
        PilotAssignment {
            perm: vec![id.clone(); cells],
            inverse: vec![id; cells],
        }
    }

    pub fn from_perms(perm: Vec<Vec<usize>>) -> Result<Self> {
        let users = perm.first().map_or(0, Vec::len);
        for (cell, p) in perm.iter().enumerate() {
            if p.len() != users || !is_permutation(p) {
                return Err(Error::Contract(format!("cell {cell}: {p:?} is not a permutation of 0..{users}")));
            }
        }
        let inverse = perm.iter().map(|p| invert(p)).collect();
        Ok(PilotAssignment { perm, inverse })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.perm.len(), self.perm.first().map_or(0, Vec::len))
    }

    #[inline]
    pub fn user(&self, cell: usize, pilot: usize) -> usize {
        self.perm[cell][pilot]
    }

    #[inline]
    pub fn pilot_of(&self, cell: usize, user: usize) -> usize {
        self.inverse[cell][user]
    }

    pub fn cell_perm(&self, cell: usize) -> &[usize] {
        &self.perm[cell]
    }

    pub fn perms(&self) -> &[Vec<usize>] {
        &self.perm
    }

    pub fn set_cell(&mut self, cell: usize, perm: &[usize]) {
        debug_assert!(is_permutation(perm));
        self.perm[cell].copy_from_slice(perm);
        self.inverse[cell] = invert(perm);
    }

    /// JSON object `{"<cell>": {"<pilot>": user, ...}, ...}`.
    pub fn to_json(&self) -> serde_json::Value {
        let mut cells = serde_json::Map::new();
        for (c, p) in self.perm.iter().enumerate() {
            let map: serde_json::Map<String, serde_json::Value> =
                p.iter().enumerate().map(|(k, &u)| (k.to_string(), u.into())).collect();
            cells.insert(c.to_string(), map.into());
        }
        cells.into()
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self> {
        let bad = || Error::Config("assignment JSON must map cell -> {pilot: user}".into());
        let obj = v.as_object().ok_or_else(bad)?;
        let mut perm = vec![Vec::new(); obj.len()];
        for (c, inner) in obj {
            let c: usize = c.parse().map_err(|_| bad())?;
            let inner = inner.as_object().ok_or_else(bad)?;
            let mut p = vec![usize::MAX; inner.len()];
            for (k, u) in inner {
                let k: usize = k.parse().map_err(|_| bad())?;
                let u = u.as_u64().ok_or_else(bad)? as usize;
                *p.get_mut(k).ok_or_else(bad)? = u;
            }
            *perm.get_mut(c).ok_or_else(bad)? = p;
        }
        Self::from_perms(perm)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AllocationCriterion {
    /// Lowest mean BER over the cell.
    MinBer,
    /// Highest mean SINR over the cell.
    MaxSinr,
    /// Lowest worst-user BER.
    MinimaxBer,
    /// Highest worst-user SINR.
    MaxminSinr,
    /// Keep the drop's own (already random) user order.
    Random,
}

impl AllocationCriterion {
    pub const ALL: [AllocationCriterion; 5] = [
        AllocationCriterion::MinBer,
        AllocationCriterion::MaxSinr,
        AllocationCriterion::MinimaxBer,
        AllocationCriterion::MaxminSinr,
        AllocationCriterion::Random,
    ];

    pub fn maximizes(self) -> bool {
        matches!(self, AllocationCriterion::MaxSinr | AllocationCriterion::MaxminSinr)
    }

    fn uses_ber(self) -> bool {
        matches!(self, AllocationCriterion::MinBer | AllocationCriterion::MinimaxBer)
    }

    /// Strict improvement of `a` over `b`.
    pub fn better(self, a: f64, b: f64) -> bool {
        if self.maximizes() {
            a > b
        } else {
            a < b
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AllocationCriterion::MinBer => "minber",
            AllocationCriterion::MaxSinr => "maxsinr",
            AllocationCriterion::MinimaxBer => "minimaxber",
            AllocationCriterion::MaxminSinr => "maxminsinr",
            AllocationCriterion::Random => "random",
        }
    }
}

impl fmt::Display for AllocationCriterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AllocationCriterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AllocationCriterion::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown criterion {s:?}")))
    }
}

/// All permutations of `0..k` in lexicographic order (identity first).
pub fn enumerate_permutations(k: usize) -> Result<Vec<Vec<usize>>> {
    if k > MAX_EXHAUSTIVE_USERS {
        return Err(Error::ResourceGuard(format!(
            "{k}! permutations is too many for exhaustive search (K <= {MAX_EXHAUSTIVE_USERS}); \
             a heuristic search is needed for larger K"
        )));
    }
    let mut out = Vec::new();
    let mut p: Vec<usize> = (0..k).collect();
    loop {
        out.push(p.clone());
        // next lexicographic permutation
        let Some(i) = (1..k).rev().find(|&i| p[i - 1] < p[i]) else {
            break;
        };
        let j = (i..k).rev().find(|&j| p[j] > p[i - 1]).unwrap();
        p.swap(i - 1, j);
        p[i..].reverse();
    }
    Ok(out)
}

/// Scores candidate permutations of one cell against frozen other cells.
pub struct CellEvaluator<'a> {
    beta: &'a BetaTensor,
    powers: &'a PowerProfile,
    assignment: PilotAssignment,
    cell: usize,
    /// `alpha^2` of every (bs, pilot) without the deciding cell's term.
    base: Vec<f64>,
    signs: SignMatrix,
    alpha_evaluations: u64,
}

impl<'a> CellEvaluator<'a> {
    pub fn new(beta: &'a BetaTensor, powers: &'a PowerProfile, assignment: &PilotAssignment, cell: usize) -> Result<Self> {
        let (cells, users) = (beta.num_cells(), beta.users_per_cell());
        if assignment.shape() != (cells, users) || powers.shape() != (cells, users) {
            return Err(Error::Contract("assignment/powers shape does not match beta".into()));
        }
        if cell >= cells {
            return Err(Error::Contract(format!("cell {cell} out of range")));
        }
        let mut base = vec![1.0 / users as f64; cells * users];
        for bs in 0..cells {
            for k in 0..users {
                for j in (0..cells).filter(|&j| j != cell) {
                    let u = assignment.user(j, k);
                    base[bs * users + k] += powers.gamma.at(j, u) * beta.get(bs, u, j);
                }
            }
        }
        Ok(CellEvaluator {
            beta,
            powers,
            assignment: assignment.clone(),
            cell,
            base,
            signs: build_sign_matrix(cells, cell)?,
            alpha_evaluations: 0,
        })
    }

    /// Number of `alpha` values computed so far.
    pub fn alpha_evaluations(&self) -> u64 {
        self.alpha_evaluations
    }

    /// `alpha^2` table with `perm` installed in the deciding cell.
    fn alpha_for(&mut self, perm: &[usize]) -> AlphaTable {
        let (cells, users) = (self.beta.num_cells(), self.beta.users_per_cell());
        let mut sq = self.base.clone();
        for k in 0..users {
            let u = perm[k];
            let g = self.powers.gamma.at(self.cell, u);
            for bs in 0..cells {
                sq[bs * users + k] += g * self.beta.get(bs, u, self.cell);
            }
        }
        self.alpha_evaluations += (cells * users) as u64;
        AlphaTable::from_sq(users, sq)
    }

    /// Per-pilot (SINR, BER) of the deciding cell's users under `perm`.
    /// BER is only computed when `with_ber` is set.
    pub fn user_metrics(&mut self, perm: &[usize], with_ber: bool) -> Vec<(f64, f64)> {
        let alpha = self.alpha_for(perm);
        self.assignment.set_cell(self.cell, perm);
        let mut amps = Vec::with_capacity(self.beta.num_cells());
        (0..perm.len())
            .map(|k| {
                let u = perm[k];
                let sinr = asymptotics::sinr_with(self.beta, &self.powers.phi, &self.assignment, &alpha, self.cell, u);
                let ber = if with_ber {
                    let s = asymptotics::ber_amplitudes(
                        self.beta,
                        &self.powers.phi,
                        &self.assignment,
                        &alpha,
                        self.cell,
                        u,
                        &mut amps,
                    );
                    asymptotics::ber_from_amplitudes(s, &amps, &self.signs)
                } else {
                    f64::NAN
                };
                (sinr, ber)
            })
            .collect()
    }

    /// Criterion value of `perm` for the deciding cell. `Random` scores 0.
    pub fn score(&mut self, perm: &[usize], criterion: AllocationCriterion) -> f64 {
        if criterion == AllocationCriterion::Random {
            return 0.0;
        }
        let m = self.user_metrics(perm, criterion.uses_ber());
        let n = m.len() as f64;
        match criterion {
            AllocationCriterion::MinBer => m.iter().map(|x| x.1).sum::<f64>() / n,
            AllocationCriterion::MaxSinr => m.iter().map(|x| x.0).sum::<f64>() / n,
            AllocationCriterion::MinimaxBer => m.iter().map(|x| x.1).fold(f64::NEG_INFINITY, f64::max),
            AllocationCriterion::MaxminSinr => m.iter().map(|x| x.0).fold(f64::INFINITY, f64::min),
            AllocationCriterion::Random => unreachable!(),
        }
    }
}

/// Criterion value of one candidate permutation for `cell`, all other cells
/// fixed at `assignment`.
pub fn evaluate_assignment(
    perm: &[usize],
    criterion: AllocationCriterion,
    cell: usize,
    beta: &BetaTensor,
    powers: &PowerProfile,
    assignment: &PilotAssignment,
) -> Result<f64> {
    if perm.len() != beta.users_per_cell() || !is_permutation(perm) {
        return Err(Error::Contract(format!("{perm:?} is not a permutation")));
    }
    Ok(CellEvaluator::new(beta, powers, assignment, cell)?.score(perm, criterion))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellChoice {
    /// Index into the lexicographic permutation list.
    pub index: usize,
    pub perm: Vec<usize>,
    pub score: f64,
    pub alpha_evaluations: u64,
}

fn allocate_with(
    criterion: AllocationCriterion,
    cell: usize,
    beta: &BetaTensor,
    powers: &PowerProfile,
    assignment: &PilotAssignment,
    perms: &[Vec<usize>],
) -> Result<CellChoice> {
    if criterion == AllocationCriterion::Random {
        return Ok(CellChoice {
            index: 0,
            perm: perms[0].clone(),
            score: 0.0,
            alpha_evaluations: 0,
        });
    }
    let mut eval = CellEvaluator::new(beta, powers, assignment, cell)?;
    let mut best = (0, eval.score(&perms[0], criterion));
    for (i, p) in perms.iter().enumerate().skip(1) {
        let s = eval.score(p, criterion);
        if criterion.better(s, best.1) {
            best = (i, s);
        }
    }
    Ok(CellChoice {
        index: best.0,
        perm: perms[best.0].clone(),
        score: best.1,
        alpha_evaluations: eval.alpha_evaluations(),
    })
}

/// Best permutation for `cell` over all `K!` candidates; ties go to the
/// lexicographically first.
pub fn allocate_cell(
    criterion: AllocationCriterion,
    cell: usize,
    beta: &BetaTensor,
    powers: &PowerProfile,
    assignment: &PilotAssignment,
) -> Result<CellChoice> {
    let perms = enumerate_permutations(beta.users_per_cell())?;
    allocate_with(criterion, cell, beta, powers, assignment, &perms)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MoveRecord {
    pub round: usize,
    pub cell: usize,
    pub changed: bool,
    /// Own-criterion value of the incumbent and of the kept permutation.
    pub score_before: f64,
    pub score_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundRecord {
    pub round: usize,
    pub changed_cells: usize,
    /// Mean limit BER over all users of the network.
    pub mean_ber: f64,
    pub min_sinr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GameTrace {
    pub rounds: Vec<RoundRecord>,
    pub moves: Vec<MoveRecord>,
    /// A full round finished without any cell changing.
    pub converged: bool,
    pub alpha_evaluations: u64,
}

impl GameTrace {
    pub fn rounds_played(&self) -> usize {
        self.rounds.len()
    }

    /// `round,cell,changed,potential` rows, one per cell decision; the
    /// potential column is the network mean BER after that round.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("round,cell,changed,potential\n");
        for m in &self.moves {
            let pot = self.rounds[m.round - 1].mean_ber;
            s.push_str(&format!("{},{},{},{}\n", m.round, m.cell, m.changed as u8, pot));
        }
        s
    }
}

fn network_potential(beta: &BetaTensor, powers: &PowerProfile, assignment: &PilotAssignment) -> Result<(f64, f64)> {
    let ber = asymptotics::asymptotic_ber_grid(beta, powers, assignment)?;
    let sinr = asymptotics::asymptotic_sinr(beta, powers, assignment);
    let b = ber.as_slice();
    let mean_ber = b.iter().sum::<f64>() / b.len() as f64;
    let min_sinr = sinr.as_slice().iter().copied().fold(f64::INFINITY, f64::min);
    Ok((mean_ber, min_sinr))
}

/// Round-robin best response starting from `initial`. A cell switches only
/// when the best permutation strictly beats its incumbent on its own
/// criterion.
pub fn best_response_rounds(
    criterion: AllocationCriterion,
    beta: &BetaTensor,
    powers: &PowerProfile,
    initial: &PilotAssignment,
    max_rounds: usize,
) -> Result<(PilotAssignment, GameTrace)> {
    if max_rounds == 0 {
        return Err(Error::Contract("max_rounds must be at least 1".into()));
    }
    let cells = beta.num_cells();
    let perms = enumerate_permutations(beta.users_per_cell())?;
    let mut assignment = initial.clone();
    let mut trace = GameTrace {
        rounds: Vec::new(),
        moves: Vec::new(),
        converged: false,
        alpha_evaluations: 0,
    };
    if criterion == AllocationCriterion::Random {
        let (mean_ber, min_sinr) = network_potential(beta, powers, &assignment)?;
        trace.rounds.push(RoundRecord {
            round: 1,
            changed_cells: 0,
            mean_ber,
            min_sinr,
        });
        trace.moves.extend((0..cells).map(|cell| MoveRecord {
            round: 1,
            cell,
            changed: false,
            score_before: 0.0,
            score_after: 0.0,
        }));
        trace.converged = true;
        return Ok((assignment, trace));
    }
    for round in 1..=max_rounds {
        let mut changed_cells = 0;
        for cell in 0..cells {
            let choice = allocate_with(criterion, cell, beta, powers, &assignment, &perms)?;
            let mut eval = CellEvaluator::new(beta, powers, &assignment, cell)?;
            let incumbent = eval.score(assignment.cell_perm(cell), criterion);
            trace.alpha_evaluations += choice.alpha_evaluations;
            let changed = criterion.better(choice.score, incumbent);
            if changed {
                assignment.set_cell(cell, &choice.perm);
                changed_cells += 1;
            }
            trace.moves.push(MoveRecord {
                round,
                cell,
                changed,
                score_before: incumbent,
                score_after: if changed { choice.score } else { incumbent },
            });
        }
        let (mean_ber, min_sinr) = network_potential(beta, powers, &assignment)?;
        trace.rounds.push(RoundRecord {
            round,
            changed_cells,
            mean_ber,
            min_sinr,
        });
        if changed_cells == 0 {
            trace.converged = true;
            break;
        }
    }
    Ok((assignment, trace))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair_beta() -> BetaTensor {
        // Two cells, two users; user 1 of each cell is a clone of user 0.
        BetaTensor::from_fn(2, 2, |bs, _u, c| if bs == c { 1.0 } else { 0.3 })
    }

    #[test]
    fn permutations_in_lex_order() {
        assert_eq!(enumerate_permutations(1).unwrap(), vec![vec![0]]);
        let p3 = enumerate_permutations(3).unwrap();
        assert_eq!(p3.len(), 6);
        assert_eq!(p3[0], vec![0, 1, 2]);
        assert_eq!(p3[5], vec![2, 1, 0]);
        let p4 = enumerate_permutations(4).unwrap();
        assert_eq!(p4.len(), 24);
        let mut sorted = p4.clone();
        sorted.sort();
        assert_eq!(sorted, p4);
        assert!(matches!(enumerate_permutations(9), Err(Error::ResourceGuard(_))));
    }

    #[test]
    fn assignment_validation_and_json() {
        assert!(PilotAssignment::from_perms(vec![vec![0, 0]]).is_err());
        assert!(PilotAssignment::from_perms(vec![vec![0, 2]]).is_err());
        let a = PilotAssignment::from_perms(vec![vec![1, 0, 2], vec![2, 1, 0]]).unwrap();
        assert_eq!(a.user(0, 0), 1);
        assert_eq!(a.pilot_of(1, 2), 0);
        let back = PilotAssignment::from_json(&a.to_json()).unwrap();
        assert_eq!(a, back);
    }

    #[test]
    fn criterion_parsing() {
        assert_eq!("MaxminSINR".parse::<AllocationCriterion>().unwrap(), AllocationCriterion::MaxminSinr);
        assert!("best".parse::<AllocationCriterion>().is_err());
    }

    #[test]
    fn single_user_is_permutation_free() {
        let beta = BetaTensor::from_fn(3, 1, |bs, _, c| if bs == c { 1.0 } else { 0.1 });
        let powers = PowerProfile::uniform(3, 1, 10.0, 10.0);
        let id = PilotAssignment::identity(3, 1);
        for c in AllocationCriterion::ALL {
            let choice = allocate_cell(c, 0, &beta, &powers, &id).unwrap();
            assert_eq!(choice.index, 0);
        }
    }

    #[test]
    fn identical_users_tie_to_identity() {
        let beta = pair_beta();
        let powers = PowerProfile::uniform(2, 2, 10.0, 10.0);
        let id = PilotAssignment::identity(2, 2);
        for c in AllocationCriterion::ALL {
            let a = evaluate_assignment(&[0, 1], c, 0, &beta, &powers, &id).unwrap();
            let b = evaluate_assignment(&[1, 0], c, 0, &beta, &powers, &id).unwrap();
            assert_eq!(a, b, "{c}");
            assert_eq!(allocate_cell(c, 0, &beta, &powers, &id).unwrap().index, 0);
        }
    }

    #[test]
    fn all_error_free_minber_keeps_identity() {
        let beta = BetaTensor::from_fn(2, 3, |bs, u, c| if bs == c { 1.0 + u as f64 } else { 0.01 });
        let powers = PowerProfile::uniform(2, 3, 10.0, 10.0);
        let id = PilotAssignment::identity(2, 3);
        let choice = allocate_cell(AllocationCriterion::MinBer, 0, &beta, &powers, &id).unwrap();
        assert_eq!(choice.score, 0.0);
        assert_eq!(choice.index, 0);
    }

    #[test]
    fn evaluation_count_is_kfact_k_l() {
        let beta = BetaTensor::from_fn(3, 3, |bs, u, c| 0.1 + (bs + 2 * u + 3 * c) as f64 * 0.05);
        let powers = PowerProfile::uniform(3, 3, 10.0, 10.0);
        let id = PilotAssignment::identity(3, 3);
        let c = allocate_cell(AllocationCriterion::MaxminSinr, 1, &beta, &powers, &id).unwrap();
        assert_eq!(c.alpha_evaluations, 6 * 3 * 3);
    }

    #[test]
    fn single_cell_game_converges_immediately() {
        let beta = BetaTensor::from_fn(1, 3, |_, u, _| 1.0 + u as f64);
        let powers = PowerProfile::uniform(1, 3, 10.0, 10.0);
        let (_, trace) =
            best_response_rounds(AllocationCriterion::MaxminSinr, &beta, &powers, &PilotAssignment::identity(1, 3), 20)
                .unwrap();
        assert!(trace.converged);
        assert_eq!(trace.rounds_played(), 1);
    }

    #[test]
    fn symmetric_game_makes_no_moves() {
        let beta = pair_beta();
        let powers = PowerProfile::uniform(2, 2, 10.0, 10.0);
        for c in AllocationCriterion::ALL {
            let (a, trace) = best_response_rounds(c, &beta, &powers, &PilotAssignment::identity(2, 2), 20).unwrap();
            assert_eq!(a, PilotAssignment::identity(2, 2));
            assert!(trace.converged);
            assert_eq!(trace.rounds[0].changed_cells, 0);
        }
        assert!(best_response_rounds(AllocationCriterion::MinBer, &beta, &powers, &PilotAssignment::identity(2, 2), 0).is_err());
    }

    #[test]
    fn trace_csv_shape() {
        let beta = pair_beta();
        let powers = PowerProfile::uniform(2, 2, 10.0, 10.0);
        let (_, trace) =
            best_response_rounds(AllocationCriterion::MaxSinr, &beta, &powers, &PilotAssignment::identity(2, 2), 5).unwrap();
        let csv = trace.to_csv();
        assert!(csv.starts_with("round,cell,changed,potential\n"));
        assert_eq!(csv.lines().count(), 1 + trace.moves.len());
    }
}

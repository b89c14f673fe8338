//! Hexagonal multi-cell geometry, user drops and long-term fading.
//!
//! The network is a centre cell plus the first ring of six co-channel
//! cells. Cells are flat-topped hexagons of circumradius `R`; co-channel
//! neighbours sit at distance `sqrt(3 * RF) * R` along the 30° + 60°·i axes.
//!
//! Long-term fading follows `beta = z * (d / d0)^-lambda`, with `z`
//! log-normal. The reference distance `d0` only fixes the absolute scale of
//! `beta` relative to the unit noise floor; see [`PathLoss`].

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Users closer than this to their serving BS are rejected.
pub const EXCLUSION_RADIUS_M: f64 = 100.0;

/// Centre cell plus the first interfering ring.
pub const NUM_CELLS: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn norm(&self) -> f64 {
        self.x.hypot(self.y)
    }
}

/// Frequency reuse factor. Only 1 and 3 are modelled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ReuseFactor {
    One,
    Three,
}

impl ReuseFactor {
    pub fn as_u32(self) -> u32 {
        match self {
            ReuseFactor::One => 1,
            ReuseFactor::Three => 3,
        }
    }
}

impl TryFrom<u32> for ReuseFactor {
    type Error = Error;

    fn try_from(value: u32) -> Result<Self> {
        match value {
            1 => Ok(ReuseFactor::One),
            3 => Ok(ReuseFactor::Three),
            other => Err(Error::Domain(format!(
                "unsupported reuse factor {other} (expected 1 or 3)"
            ))),
        }
    }
}

impl fmt::Display for ReuseFactor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_u32())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub reuse_factor: ReuseFactor,
    pub cell_radius: f64,
    /// Index 0 is the centre cell.
    pub bs_positions: Vec<Point>,
}

impl Layout {
    pub fn num_cells(&self) -> usize {
        self.bs_positions.len()
    }

    /// Centre-to-centre distance between co-channel neighbours.
    pub fn neighbor_distance(&self) -> f64 {
        (3.0 * self.reuse_factor.as_u32() as f64).sqrt() * self.cell_radius
    }

    /// Whether `p` lies in the hexagon of `cell` (boundary included).
    pub fn contains(&self, cell: usize, p: &Point) -> bool {
        let bs = self.bs_positions[cell];
        in_hexagon(p.x - bs.x, p.y - bs.y, self.cell_radius)
    }
}

/// Flat-topped hexagon of circumradius `r` centred at the origin.
fn in_hexagon(x: f64, y: f64, r: f64) -> bool {
    let (ax, ay) = (x.abs(), y.abs());
    let s3 = 3f64.sqrt();
    ay <= 0.5 * s3 * r && s3 * ax + ay <= s3 * r
}

/// Number of usable subcarriers per coherence band for a cyclic-prefix
/// fraction, `floor((1 - cp) / cp)`.
pub fn n_smooth(cp_fraction: f64) -> Result<u32> {
    Ok(n_smooth_ratio(cp_fraction)?.floor() as u32)
}

/// Unrounded `(1 - cp) / cp`. A 7% prefix gives 13.29, which is usually
/// quoted as 14 (i.e. rounded from `1 / cp`).
pub fn n_smooth_ratio(cp_fraction: f64) -> Result<f64> {
    if !(cp_fraction > 0.0 && cp_fraction < 1.0) {
        return Err(Error::Domain(format!(
            "cyclic-prefix fraction must lie in (0, 1), got {cp_fraction}"
        )));
    }
    Ok((1.0 - cp_fraction) / cp_fraction)
}

pub fn generate_layout(reuse_factor: u32, radius: f64) -> Result<Layout> {
    let reuse_factor = ReuseFactor::try_from(reuse_factor)?;
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::Domain(format!("cell radius must be positive, got {radius}")));
    }
    let spacing = (3.0 * reuse_factor.as_u32() as f64).sqrt() * radius;
    let mut bs_positions = Vec::with_capacity(NUM_CELLS);
    bs_positions.push(Point::new(0.0, 0.0));
    for i in 0..6 {
        let angle = (30.0 + 60.0 * i as f64).to_radians();
        bs_positions.push(Point::new(spacing * angle.cos(), spacing * angle.sin()));
    }
    Ok(Layout {
        reuse_factor,
        cell_radius: radius,
        bs_positions,
    })
}

/// User positions, `positions[cell * users_per_cell + user]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserDrop {
    pub users_per_cell: usize,
    pub positions: Vec<Point>,
}

impl UserDrop {
    pub fn num_cells(&self) -> usize {
        self.positions.len() / self.users_per_cell
    }

    pub fn position(&self, cell: usize, user: usize) -> Point {
        self.positions[cell * self.users_per_cell + user]
    }
}

/// Drops `k` users per cell uniformly over the hexagon minus the exclusion
/// disc, by rejection from the bounding box.
pub fn drop_users<R: Rng + ?Sized>(layout: &Layout, k: usize, rng: &mut R) -> Result<UserDrop> {
    if k == 0 {
        return Err(Error::Contract("need at least one user per cell".into()));
    }
    let r = layout.cell_radius;
    if r <= EXCLUSION_RADIUS_M {
        return Err(Error::Domain(format!(
            "cell radius {r} m does not exceed the {EXCLUSION_RADIUS_M} m exclusion radius"
        )));
    }
    let half_h = 0.5 * 3f64.sqrt() * r;
    let mut positions = Vec::with_capacity(layout.num_cells() * k);
    for bs in &layout.bs_positions {
        for _ in 0..k {
            loop {
                let x = rng.random_range(-r..=r);
                let y = rng.random_range(-half_h..=half_h);
                if in_hexagon(x, y, r) && x.hypot(y) >= EXCLUSION_RADIUS_M {
                    positions.push(Point::new(bs.x + x, bs.y + y));
                    break;
                }
            }
        }
    }
    Ok(UserDrop {
        users_per_cell: k,
        positions,
    })
}

/// Long-term fading `beta[bs][user][cell]`: gain from BS `bs` to user
/// `user` of cell `cell`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaTensor {
    cells: usize,
    users: usize,
    data: Vec<f64>,
}

impl BetaTensor {
    pub fn from_fn(cells: usize, users: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(cells * users * cells);
        for bs in 0..cells {
            for user in 0..users {
                for cell in 0..cells {
                    data.push(f(bs, user, cell));
                }
            }
        }
        BetaTensor { cells, users, data }
    }

    /// Every link gets the same gain.
    pub fn uniform(cells: usize, users: usize, value: f64) -> Self {
        Self::from_fn(cells, users, |_, _, _| value)
    }

    pub fn num_cells(&self) -> usize {
        self.cells
    }

    pub fn users_per_cell(&self) -> usize {
        self.users
    }

    #[inline]
    fn idx(&self, bs: usize, user: usize, cell: usize) -> usize {
        (bs * self.users + user) * self.cells + cell
    }

    #[inline]
    pub fn get(&self, bs: usize, user: usize, cell: usize) -> f64 {
        self.data[self.idx(bs, user, cell)]
    }

    pub fn set(&mut self, bs: usize, user: usize, cell: usize, value: f64) {
        let i = self.idx(bs, user, cell);
        self.data[i] = value;
    }

    pub fn scaled(&self, c: f64) -> Self {
        BetaTensor {
            cells: self.cells,
            users: self.users,
            data: self.data.iter().map(|b| b * c).collect(),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }
}

/// Log-distance path loss with log-normal shadowing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathLoss {
    pub lambda: f64,
    pub shadow_sigma_db: f64,
    /// Distance at which the mean gain is one, i.e. where a unit transmit
    /// SNR is also the received SNR.
    pub reference_distance_m: f64,
}

impl Default for PathLoss {
    fn default() -> Self {
        PathLoss {
            lambda: 3.8,
            shadow_sigma_db: 8.0,
            reference_distance_m: 1600.0,
        }
    }
}

impl PathLoss {
    fn validate(&self) -> Result<()> {
        if !(self.lambda > 2.0) {
            return Err(Error::Domain(format!("path-loss exponent must exceed 2, got {}", self.lambda)));
        }
        if !(self.shadow_sigma_db >= 0.0) {
            return Err(Error::Domain(format!(
                "shadowing deviation must be non-negative, got {}",
                self.shadow_sigma_db
            )));
        }
        if !(self.reference_distance_m > 0.0) {
            return Err(Error::Domain(format!(
                "reference distance must be positive, got {}",
                self.reference_distance_m
            )));
        }
        Ok(())
    }

    /// Deterministic part of the gain at distance `d`.
    pub fn mean_gain(&self, d: f64) -> f64 {
        (d / self.reference_distance_m).powf(-self.lambda)
    }
}

/// Draws one log-normal shadowing factor `10^(sigma * n / 10)`.
pub fn shadowing_factor<R: Rng + ?Sized>(sigma_db: f64, rng: &mut R) -> f64 {
    if sigma_db == 0.0 {
        return 1.0;
    }
    let n: f64 = StandardNormal.sample(rng);
    10f64.powf(sigma_db * n / 10.0)
}

/// Independent shadowing per (bs, user, cell) link, drawn in that loop order.
pub fn compute_beta<R: Rng + ?Sized>(
    layout: &Layout,
    drop: &UserDrop,
    path_loss: &PathLoss,
    rng: &mut R,
) -> Result<BetaTensor> {
    path_loss.validate()?;
    let cells = layout.num_cells();
    if drop.num_cells() != cells {
        return Err(Error::Contract(format!(
            "drop has {} cells but layout has {cells}",
            drop.num_cells()
        )));
    }
    let users = drop.users_per_cell;
    let mut data = Vec::with_capacity(cells * users * cells);
    for bs in 0..cells {
        let bs_pos = layout.bs_positions[bs];
        for user in 0..users {
            for cell in 0..cells {
                let d = bs_pos.distance(&drop.position(cell, user));
                if d <= 0.0 {
                    return Err(Error::Domain(format!(
                        "user {user} of cell {cell} coincides with BS {bs}"
                    )));
                }
                let z = shadowing_factor(path_loss.shadow_sigma_db, rng);
                data.push(z * path_loss.mean_gain(d));
            }
        }
    }
    Ok(BetaTensor { cells, users, data })
}

/// Coherence-interval and band parameters used by the rate map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameConfig {
    pub bandwidth_hz: f64,
    pub symbols_total: u32,
    pub symbols_downlink: u32,
    pub cp_fraction: f64,
    pub carrier_hz: f64,
    pub coherence_time_s: f64,
}

impl Default for FrameConfig {
    fn default() -> Self {
        FrameConfig {
            bandwidth_hz: 20e6,
            symbols_total: 11,
            symbols_downlink: 4,
            cp_fraction: 0.07,
            carrier_hz: 1.9e9,
            coherence_time_s: 500e-6,
        }
    }
}

impl FrameConfig {
    pub fn validate(&self) -> Result<()> {
        if self.symbols_downlink >= self.symbols_total {
            return Err(Error::Domain(format!(
                "downlink symbols ({}) must be fewer than total ({})",
                self.symbols_downlink, self.symbols_total
            )));
        }
        if !(self.cp_fraction > 0.0 && self.cp_fraction < 1.0) {
            return Err(Error::Domain(format!("cp fraction {} not in (0, 1)", self.cp_fraction)));
        }
        if !(self.bandwidth_hz > 0.0) {
            return Err(Error::Domain("bandwidth must be positive".into()));
        }
        Ok(())
    }

    pub fn downlink_fraction(&self) -> f64 {
        self.symbols_downlink as f64 / self.symbols_total as f64
    }
}

/// Scenario parameters, loadable from a `key = value` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub reuse_factor: u32,
    pub radius_m: f64,
    pub users_per_cell: usize,
    pub path_loss: PathLoss,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            reuse_factor: 1,
            radius_m: 1600.0,
            users_per_cell: 4,
            path_loss: PathLoss::default(),
            seed: 1,
        }
    }
}

impl ScenarioConfig {
    pub fn layout(&self) -> Result<Layout> {
        generate_layout(self.reuse_factor, self.radius_m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        text.parse()
    }

    pub fn to_key_values(&self) -> String {
        format!(
            "reuse_factor = {}\nradius_m = {}\nK = {}\nlambda = {}\nshadow_sigma_db = {}\nreference_distance_m = {}\nseed = {}\n",
            self.reuse_factor,
            self.radius_m,
            self.users_per_cell,
            self.path_loss.lambda,
            self.path_loss.shadow_sigma_db,
            self.path_loss.reference_distance_m,
            self.seed
        )
    }
}

impl FromStr for ScenarioConfig {
    type Err = Error;

    /// Blank lines and `#` comments are ignored; unknown keys are an error.
    fn from_str(s: &str) -> Result<Self> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("bad value {v:?} for key {key}")))
        }
        let mut cfg = ScenarioConfig::default();
        for (lineno, raw) in s.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .or_else(|| line.split_once(':'))
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "reuse_factor" | "rf" => cfg.reuse_factor = num(key, value)?,
                "radius_m" | "radius" => cfg.radius_m = num(key, value)?,
                "K" | "k" | "users_per_cell" => cfg.users_per_cell = num(key, value)?,
                "lambda" => cfg.path_loss.lambda = num(key, value)?,
                "shadow_sigma_db" => cfg.path_loss.shadow_sigma_db = num(key, value)?,
                "reference_distance_m" | "d0" => cfg.path_loss.reference_distance_m = num(key, value)?,
                "seed" => cfg.seed = num(key, value)?,
                other => return Err(Error::Config(format!("unknown key {other:?}"))),
            }
        }
        ReuseFactor::try_from(cfg.reuse_factor)?;
        Ok(cfg)
    }
}

/// Writes base stations as `cell,x,y` rows.
pub fn write_layout_csv<W: Write>(layout: &Layout, mut w: W) -> std::io::Result<()> {
    writeln!(w, "cell,x,y")?;
    for (cell, p) in layout.bs_positions.iter().enumerate() {
        writeln!(w, "{cell},{:.3},{:.3}", p.x, p.y)?;
    }
    Ok(())
}

pub fn write_drop_csv<W: Write>(drop: &UserDrop, mut w: W) -> std::io::Result<()> {
    writeln!(w, "cell,user,x,y")?;
    for cell in 0..drop.num_cells() {
        for user in 0..drop.users_per_cell {
            let p = drop.position(cell, user);
            writeln!(w, "{cell},{user},{:.3},{:.3}", p.x, p.y)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn n_smooth_values() {
        assert_eq!(n_smooth(0.07).unwrap(), 13);
        assert!((n_smooth_ratio(0.07).unwrap() - 13.285714).abs() < 1e-5);
        assert_eq!((1.0f64 / 0.07).round() as u32, 14);
        assert_eq!(n_smooth(0.5).unwrap(), 1);
        assert_eq!(n_smooth(0.25).unwrap(), 3);
        assert!(matches!(n_smooth(0.0), Err(Error::Domain(_))));
        assert!(matches!(n_smooth(1.0), Err(Error::Domain(_))));
        assert!(n_smooth(f64::NAN).is_err());
    }

    #[test]
    fn layout_distances() {
        let l1 = generate_layout(1, 1600.0).unwrap();
        assert_eq!(l1.num_cells(), 7);
        for p in &l1.bs_positions[1..] {
            assert!((p.norm() - 2771.281).abs() < 1e-3);
        }
        let l3 = generate_layout(3, 1600.0).unwrap();
        for p in &l3.bs_positions[1..] {
            assert!((p.norm() - 4800.0).abs() < 1e-9);
        }
        let l2 = generate_layout(1, 3200.0).unwrap();
        for (a, b) in l1.bs_positions.iter().zip(&l2.bs_positions) {
            assert!((2.0 * a.norm() - b.norm()).abs() < 1e-9);
        }
        for i in 0..7 {
            for j in (i + 1)..7 {
                assert!(l1.bs_positions[i].distance(&l1.bs_positions[j]) > 0.0);
            }
        }
        assert!(matches!(generate_layout(2, 1600.0), Err(Error::Domain(_))));
        assert!(generate_layout(1, -1.0).is_err());
    }

    #[test]
    fn rf1_hexagons_tile_without_overlap() {
        let layout = generate_layout(1, 1600.0).unwrap();
        // Midpoint between centre and a neighbour lies on the shared edge.
        for p in &layout.bs_positions[1..] {
            let inner = Point::new(0.49 * p.x, 0.49 * p.y);
            assert!(layout.contains(0, &inner));
            assert!(!layout.contains(0, &Point::new(0.51 * p.x, 0.51 * p.y)));
        }
    }

    #[test]
    fn drop_is_deterministic_and_respects_exclusion() {
        let layout = generate_layout(1, 1600.0).unwrap();
        let a = drop_users(&layout, 4, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b = drop_users(&layout, 4, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(a, b);
        for cell in 0..7 {
            for u in 0..4 {
                let p = a.position(cell, u);
                assert!(layout.contains(cell, &p));
                assert!(p.distance(&layout.bs_positions[cell]) >= EXCLUSION_RADIUS_M);
            }
        }
        assert!(drop_users(&layout, 0, &mut ChaCha8Rng::seed_from_u64(7)).is_err());
    }

    #[test]
    fn beta_reference_values() {
        let layout = Layout {
            reuse_factor: ReuseFactor::One,
            cell_radius: 1600.0,
            bs_positions: vec![Point::new(0.0, 0.0)],
        };
        let pl = PathLoss {
            lambda: 3.8,
            shadow_sigma_db: 0.0,
            reference_distance_m: 100.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let at = |d: f64, rng: &mut ChaCha8Rng| {
            let drop = UserDrop {
                users_per_cell: 1,
                positions: vec![Point::new(d, 0.0)],
            };
            compute_beta(&layout, &drop, &pl, rng).unwrap().get(0, 0, 0)
        };
        assert!((at(100.0, &mut rng) - 1.0).abs() < 1e-15);
        let b200 = at(200.0, &mut rng);
        assert!((b200 - 2f64.powf(-3.8)).abs() < 1e-15);
        assert!((b200 - 0.0718).abs() < 5e-5);
        // strictly decreasing without shadowing
        let mut prev = f64::INFINITY;
        for d in [100.0, 150.0, 400.0, 1000.0, 5000.0] {
            let b = at(d, &mut rng);
            assert!(b < prev);
            prev = b;
        }
        let coincident = UserDrop {
            users_per_cell: 1,
            positions: vec![Point::new(0.0, 0.0)],
        };
        assert!(matches!(compute_beta(&layout, &coincident, &pl, &mut rng), Err(Error::Domain(_))));
        let bad = PathLoss { lambda: 2.0, ..pl };
        assert!(compute_beta(&layout, &coincident, &bad, &mut rng).is_err());
    }

    #[test]
    fn shadowing_log_mean_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let mean_db: f64 = (0..n)
            .map(|_| 10.0 * shadowing_factor(8.0, &mut rng).log10())
            .sum::<f64>()
            / n as f64;
        assert!(mean_db.abs() < 0.1, "mean {mean_db}");
    }

    #[test]
    fn beta_is_seed_deterministic() {
        let layout = generate_layout(3, 1600.0).unwrap();
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let drop = drop_users(&layout, 4, &mut rng).unwrap();
            compute_beta(&layout, &drop, &PathLoss::default(), &mut rng).unwrap()
        };
        let a = run(3);
        assert_eq!(a, run(3));
        assert_ne!(a, run(4));
        assert!(a.values().iter().all(|&b| b > 0.0));
    }

    #[test]
    fn frame_validation() {
        assert!(FrameConfig::default().validate().is_ok());
        let bad = FrameConfig {
            symbols_downlink: 11,
            ..FrameConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn config_parse_round_trip() {
        let cfg: ScenarioConfig = "# comment\nreuse_factor = 3\nradius_m = 1000\nK = 3\nlambda = 3.5\nshadow_sigma_db = 6\nseed = 99\n"
            .parse()
            .unwrap();
        assert_eq!(cfg.reuse_factor, 3);
        assert_eq!(cfg.users_per_cell, 3);
        assert_eq!(cfg.seed, 99);
        let again: ScenarioConfig = cfg.to_key_values().parse().unwrap();
        assert_eq!(cfg, again);
        assert!("reuse_factor = 2".parse::<ScenarioConfig>().is_err());
        assert!("bogus = 1".parse::<ScenarioConfig>().is_err());
        assert!("seed = abc".parse::<ScenarioConfig>().is_err());
    }

    #[test]
    fn drop_csv_has_one_row_per_user() {
        let layout = generate_layout(1, 1600.0).unwrap();
        let drop = drop_users(&layout, 4, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut buf = Vec::new();
        write_drop_csv(&drop, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 28);
        assert!(text.starts_with("cell,user,x,y\n"));
    }
}

//! Seeded generation of the two-tier topology.
//!
//! One macrocell at the origin serves IoT users spread over its disc;
//! small cells are dropped uniformly in the same disc subject to a minimum
//! pairwise separation, each hosting a few indoor users split between the
//! eMBB and uRLLC slices. Everything is a pure function of the config
//! (including its seed), so equal configs produce byte-identical
//! topologies.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num::{real, Scalar};
use crate::rng::{derive_rng, STREAM_TOPOLOGY};

/// Attempts per small cell before placement is declared infeasible.
const PLACEMENT_ATTEMPTS: usize = 10_000;

/// Identifier of a user terminal, unique across the whole topology.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct UserId(pub u32);

/// Identifier of a small cell.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct CellId(pub u32);

/// 2-D position in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Point<F> {
    pub x: F,
    pub y: F,
}

impl<F: Scalar> Point<F> {
    pub fn new(x: F, y: F) -> Self {
        Self { x, y }
    }

    pub fn origin() -> Self {
        Self {
            x: F::zero(),
            y: F::zero(),
        }
    }

    pub fn distance(&self, other: &Self) -> F {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        (dx * dx + dy * dy).sqrt()
    }
}

/// Network slice a user is served by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Slice {
    #[serde(rename = "eMBB")]
    Embb,
    #[serde(rename = "uRLLC")]
    Urllc,
    #[serde(rename = "IoT")]
    Iot,
}

impl Slice {
    /// Stable label used in reports and file names.
    pub fn label(&self) -> &'static str {
        match self {
            Slice::Embb => "eMBB",
            Slice::Urllc => "uRLLC",
            Slice::Iot => "IoT",
        }
    }

    pub const ALL: [Slice; 3] = [Slice::Embb, Slice::Urllc, Slice::Iot];
}

/// Station a user transmits to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Attachment {
    #[serde(rename = "macro")]
    Macro,
    #[serde(rename = "small_cell")]
    SmallCell(CellId),
}

/// Scenario parameters. Defaults reproduce the suburban two-tier setup:
/// 500 m macrocell, 10 m small cells with 20 m minimum separation, 10 MHz
/// split into 50 subchannels at 2 GHz, 23 dBm user power, −101.2 dBm
/// per-subchannel interference threshold at the macrocell, −174 dBm/Hz
/// noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig<F> {
    /// Macrocell coverage radius (m).
    pub macro_radius: F,
    /// Small-cell coverage radius (m).
    pub small_cell_radius: F,
    /// Minimum distance between small-cell centers (m).
    pub min_small_cell_separation: F,
    /// Number of small cells to drop (the sweep variable).
    pub num_small_cells: usize,
    /// Users camping on each small cell (2 or 4 in the reference setup).
    pub users_per_small_cell: usize,
    /// IoT users served by the macrocell.
    pub num_macro_users: usize,
    /// Carrier frequency (Hz).
    pub carrier_frequency_hz: F,
    /// Total uplink bandwidth (Hz).
    pub total_bandwidth_hz: F,
    /// Number of OFDMA subchannels the bandwidth is divided into.
    pub num_subchannels: usize,
    /// Maximum transmit power of any user (dBm).
    pub max_tx_power_dbm: F,
    /// Per-subchannel interference threshold at the macrocell (dBm).
    pub interference_threshold_dbm: F,
    /// Noise power spectral density (dBm/Hz).
    pub noise_psd_dbm_hz: F,
    /// Minimum rate guaranteed to each uRLLC user (bps). Calibration
    /// knob for the eMBB/uRLLC capacity gap, not a physical constant.
    pub urllc_min_rate_bps: F,
    /// Fraction of each small cell's users assigned to the uRLLC slice.
    pub urllc_fraction: F,
    /// Master seed for topology and fading substreams.
    pub seed: u64,
}

impl<F: Scalar> Default for ScenarioConfig<F> {
    fn default() -> Self {
        Self {
            macro_radius: real(500.0),
            small_cell_radius: real(10.0),
            min_small_cell_separation: real(20.0),
            num_small_cells: 25,
            users_per_small_cell: 2,
            num_macro_users: 50,
            carrier_frequency_hz: real(2.0e9),
            total_bandwidth_hz: real(10.0e6),
            num_subchannels: 50,
            max_tx_power_dbm: real(23.0),
            interference_threshold_dbm: real(-101.2),
            noise_psd_dbm_hz: real(-174.0),
            urllc_min_rate_bps: real(3.0e6),
            urllc_fraction: real(0.5),
            seed: 1,
        }
    }
}

impl<F: Scalar> ScenarioConfig<F> {
    /// Bandwidth of one subchannel (Hz).
    pub fn subchannel_bandwidth_hz(&self) -> F {
        self.total_bandwidth_hz / real(self.num_subchannels as f64)
    }

    /// Checks the config invariants, returning one message per violation.
    pub fn check(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let zero = F::zero();
        if !(self.macro_radius > zero) {
            errs.push("macro_radius must be > 0".into());
        }
        if !(self.small_cell_radius > zero) {
            errs.push("small_cell_radius must be > 0".into());
        }
        if !(self.min_small_cell_separation > zero) {
            errs.push("min_small_cell_separation must be > 0".into());
        }
        if !(self.min_small_cell_separation < real::<F>(2.0) * self.macro_radius) {
            errs.push("min_small_cell_separation must be < 2 * macro_radius".into());
        }
        if self.num_subchannels == 0 {
            errs.push("num_subchannels must be >= 1".into());
        }
        if !(self.total_bandwidth_hz > zero) {
            errs.push("total_bandwidth_hz must be > 0".into());
        }
        if self.users_per_small_cell == 0 {
            errs.push("users_per_small_cell must be >= 1".into());
        }
        if !(self.urllc_fraction >= zero && self.urllc_fraction <= F::one()) {
            errs.push("urllc_fraction must lie in [0, 1]".into());
        }
        if !(self.carrier_frequency_hz > zero) {
            errs.push("carrier_frequency_hz must be > 0".into());
        }
        if !self.urllc_min_rate_bps.is_finite() || self.urllc_min_rate_bps < zero {
            errs.push("urllc_min_rate_bps must be finite and >= 0".into());
        }
        errs
    }
}

/// A small cell: its id and receiver position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmallCell<F> {
    pub id: CellId,
    pub center: Point<F>,
}

/// A user terminal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct User<F> {
    pub id: UserId,
    pub position: Point<F>,
    pub attachment: Attachment,
    pub slice: Slice,
    pub indoor: bool,
}

/// Generated two-tier layout: one macrocell, its small cells, and all users.
///
/// Users are numbered contiguously: macro users first, then each small
/// cell's users in cell order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology<F> {
    pub macro_position: Point<F>,
    pub small_cells: Vec<SmallCell<F>>,
    pub users: Vec<User<F>>,
}

impl<F: Scalar> Topology<F> {
    /// Users attached to the given small cell, in id order.
    pub fn cell_users(&self, cell: CellId) -> impl Iterator<Item = &User<F>> {
        self.users
            .iter()
            .filter(move |u| u.attachment == Attachment::SmallCell(cell))
    }

    /// Users attached to the macrocell, in id order.
    pub fn macro_users(&self) -> impl Iterator<Item = &User<F>> {
        self.users
            .iter()
            .filter(|u| u.attachment == Attachment::Macro)
    }

    pub fn user(&self, id: UserId) -> Option<&User<F>> {
        self.users.iter().find(|u| u.id == id)
    }
}

/// Scenario-level failures.
#[derive(Debug, Error)]
pub enum ScenarioError {
    /// Rejection sampling for a small-cell center ran out of attempts.
    #[error(
        "PlacementInfeasible: could not place small cell {cell} with separation \
         {separation} m after {attempts} attempts"
    )]
    PlacementInfeasible {
        cell: u32,
        separation: f64,
        attempts: usize,
    },
    /// The config violates its own invariants.
    #[error("InvalidConfig: {}", violations.join("; "))]
    InvalidConfig { violations: Vec<String> },
}

/// One violated topology invariant, naming the offending entities.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum TopologyViolation {
    CellOutsideMacro { cell: CellId },
    CellsTooClose { a: CellId, b: CellId },
    UserOutsideCell { user: UserId, cell: CellId },
    UserCellMissing { user: UserId, cell: CellId },
    MacroUserNotIot { user: UserId },
    SmallCellUserBadSlice { user: UserId },
}

impl std::fmt::Display for TopologyViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::CellOutsideMacro { cell } => {
                write!(f, "small cell {} lies outside the macrocell disc", cell.0)
            }
            Self::CellsTooClose { a, b } => {
                write!(
                    f,
                    "small cells {} and {} violate minimum separation",
                    a.0, b.0
                )
            }
            Self::UserOutsideCell { user, cell } => {
                write!(f, "user {} lies outside small cell {}", user.0, cell.0)
            }
            Self::UserCellMissing { user, cell } => {
                write!(
                    f,
                    "user {} references missing small cell {}",
                    user.0, cell.0
                )
            }
            Self::MacroUserNotIot { user } => {
                write!(f, "macro-attached user {} is not on the IoT slice", user.0)
            }
            Self::SmallCellUserBadSlice { user } => {
                write!(
                    f,
                    "small-cell user {} is not on the eMBB or uRLLC slice",
                    user.0
                )
            }
        }
    }
}

fn uniform_in_disc<F: Scalar, R: Rng>(center: Point<F>, radius: F, rng: &mut R) -> Point<F> {
    // Canonical f64 draws keep the stream identical across scalar widths.
    let u: f64 = rng.gen();
    let v: f64 = rng.gen();
    let r = radius * real::<F>(u.sqrt());
    let theta = real::<F>(2.0 * std::f64::consts::PI * v);
    Point::new(center.x + r * theta.cos(), center.y + r * theta.sin())
}

/// Generates a topology from the config. Small-cell centers are drawn
/// uniformly over the macro disc with rejection resampling until the
/// pairwise separation holds; users are drawn uniformly over their cell's
/// disc. Small-cell users are indoor, macro users outdoor.
pub fn generate_topology<F: Scalar>(
    config: &ScenarioConfig<F>,
) -> Result<Topology<F>, ScenarioError> {
    let violations = config.check();
    if !violations.is_empty() {
        return Err(ScenarioError::InvalidConfig { violations });
    }

    let mut rng = derive_rng(config.seed, STREAM_TOPOLOGY, 0);
    let macro_position = Point::origin();

    // Macro users are drawn before any small-cell state so that, for a
    // fixed seed, the macro tier is identical across small-cell densities:
    // density sweeps then compare the same IoT population under different
    // interference conditions.
    let mut users: Vec<User<F>> = Vec::new();
    let mut next_id = 0u32;
    for _ in 0..config.num_macro_users {
        users.push(User {
            id: UserId(next_id),
            position: uniform_in_disc(macro_position, config.macro_radius, &mut rng),
            attachment: Attachment::Macro,
            slice: Slice::Iot,
            indoor: false,
        });
        next_id += 1;
    }

    let mut small_cells: Vec<SmallCell<F>> = Vec::with_capacity(config.num_small_cells);
    for k in 0..config.num_small_cells {
        let mut placed = false;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let candidate = uniform_in_disc(macro_position, config.macro_radius, &mut rng);
            let clear = small_cells
                .iter()
                .all(|c| c.center.distance(&candidate) >= config.min_small_cell_separation);
            if clear {
                small_cells.push(SmallCell {
                    id: CellId(k as u32),
                    center: candidate,
                });
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(ScenarioError::PlacementInfeasible {
                cell: k as u32,
                separation: config
                    .min_small_cell_separation
                    .to_f64()
                    .unwrap_or(f64::NAN),
                attempts: PLACEMENT_ATTEMPTS,
            });
        }
    }

    for cell in &small_cells {
        for _ in 0..config.users_per_small_cell {
            users.push(User {
                id: UserId(next_id),
                position: uniform_in_disc(cell.center, config.small_cell_radius, &mut rng),
                attachment: Attachment::SmallCell(cell.id),
                slice: Slice::Embb,
                indoor: true,
            });
            next_id += 1;
        }
    }

    let topology = Topology {
        macro_position,
        small_cells,
        users,
    };
    Ok(assign_slices(topology, config.urllc_fraction))
}

/// Relabels small-cell users: within each cell the
/// `ceil(urllc_fraction * users)` lowest-id users become uRLLC, the rest
/// eMBB. Macro users stay IoT.
pub fn assign_slices<F: Scalar>(mut topology: Topology<F>, urllc_fraction: F) -> Topology<F> {
    let cells: Vec<CellId> = topology.small_cells.iter().map(|c| c.id).collect();
    for cell in cells {
        let mut ids: Vec<UserId> = topology.cell_users(cell).map(|u| u.id).collect();
        ids.sort();
        let n_urllc = (urllc_fraction * real::<F>(ids.len() as f64))
            .ceil()
            .to_usize()
            .unwrap_or(0)
            .min(ids.len());
        for (rank, id) in ids.iter().enumerate() {
            let slice = if rank < n_urllc {
                Slice::Urllc
            } else {
                Slice::Embb
            };
            if let Some(user) = topology.users.iter_mut().find(|u| u.id == *id) {
                user.slice = slice;
            }
        }
    }
    topology
}

/// Checks every topology invariant against the config. An empty list means
/// the topology is valid; violations are data, not errors.
pub fn validate_topology<F: Scalar>(
    topology: &Topology<F>,
    config: &ScenarioConfig<F>,
) -> Vec<TopologyViolation> {
    let mut out = Vec::new();

    for cell in &topology.small_cells {
        if cell.center.distance(&topology.macro_position) > config.macro_radius {
            out.push(TopologyViolation::CellOutsideMacro { cell: cell.id });
        }
    }
    for (i, a) in topology.small_cells.iter().enumerate() {
        for b in &topology.small_cells[i + 1..] {
            if a.center.distance(&b.center) < config.min_small_cell_separation {
                out.push(TopologyViolation::CellsTooClose { a: a.id, b: b.id });
            }
        }
    }
    for user in &topology.users {
        match user.attachment {
            Attachment::Macro => {
                if user.slice != Slice::Iot {
                    out.push(TopologyViolation::MacroUserNotIot { user: user.id });
                }
            }
            Attachment::SmallCell(cell_id) => {
                match topology.small_cells.iter().find(|c| c.id == cell_id) {
                    None => out.push(TopologyViolation::UserCellMissing {
                        user: user.id,
                        cell: cell_id,
                    }),
                    Some(cell) => {
                        if user.position.distance(&cell.center) > config.small_cell_radius {
                            out.push(TopologyViolation::UserOutsideCell {
                                user: user.id,
                                cell: cell_id,
                            });
                        }
                    }
                }
                if user.slice == Slice::Iot {
                    out.push(TopologyViolation::SmallCellUserBadSlice { user: user.id });
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(cells: usize, seed: u64) -> ScenarioConfig<f64> {
        ScenarioConfig {
            num_small_cells: cells,
            seed,
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn empty_tier_gives_only_iot_users() {
        let topo = generate_topology(&cfg(0, 7)).unwrap();
        assert!(topo.small_cells.is_empty());
        assert_eq!(topo.users.len(), 50);
        assert!(topo
            .users
            .iter()
            .all(|u| u.slice == Slice::Iot && !u.indoor));
    }

    #[test]
    fn fifty_cells_respect_separation_and_radius() {
        let config = cfg(50, 1);
        let topo = generate_topology(&config).unwrap();
        assert_eq!(topo.small_cells.len(), 50);
        for (i, a) in topo.small_cells.iter().enumerate() {
            assert!(a.center.distance(&topo.macro_position) <= 500.0);
            for b in &topo.small_cells[i + 1..] {
                assert!(a.center.distance(&b.center) >= 20.0);
            }
        }
    }

    #[test]
    fn equal_configs_are_bit_identical() {
        let config = cfg(12, 99);
        let a = generate_topology(&config).unwrap();
        let b = generate_topology(&config).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn different_seeds_move_users() {
        for s in 0..10u64 {
            let a = generate_topology(&cfg(5, 2 * s + 1)).unwrap();
            let b = generate_topology(&cfg(5, 2 * s + 2)).unwrap();
            let pa: Vec<_> = a
                .users
                .iter()
                .map(|u| (u.position.x, u.position.y))
                .collect();
            let pb: Vec<_> = b
                .users
                .iter()
                .map(|u| (u.position.x, u.position.y))
                .collect();
            assert_ne!(pa, pb, "seeds {} vs {}", 2 * s + 1, 2 * s + 2);
        }
    }

    #[test]
    fn separation_holds_across_seeds() {
        for seed in 0..100u64 {
            let topo = generate_topology(&cfg(50, seed)).unwrap();
            assert!(
                validate_topology(&topo, &cfg(50, seed)).is_empty(),
                "seed {seed}"
            );
        }
    }

    #[test]
    fn slice_split_two_users_half() {
        let topo = generate_topology(&cfg(6, 3)).unwrap();
        for cell in &topo.small_cells {
            let urllc = topo
                .cell_users(cell.id)
                .filter(|u| u.slice == Slice::Urllc)
                .count();
            let embb = topo
                .cell_users(cell.id)
                .filter(|u| u.slice == Slice::Embb)
                .count();
            assert_eq!((urllc, embb), (1, 1));
        }
    }

    #[test]
    fn slice_split_four_users_fraction_zero() {
        let config = ScenarioConfig {
            num_small_cells: 4,
            users_per_small_cell: 4,
            urllc_fraction: 0.0,
            ..ScenarioConfig::<f64>::default()
        };
        let topo = generate_topology(&config).unwrap();
        for cell in &topo.small_cells {
            assert_eq!(
                topo.cell_users(cell.id)
                    .filter(|u| u.slice == Slice::Urllc)
                    .count(),
                0
            );
            assert_eq!(
                topo.cell_users(cell.id)
                    .filter(|u| u.slice == Slice::Embb)
                    .count(),
                4
            );
        }
    }

    #[test]
    fn slice_split_four_users_half() {
        let config = ScenarioConfig {
            num_small_cells: 4,
            users_per_small_cell: 4,
            ..ScenarioConfig::<f64>::default()
        };
        let topo = generate_topology(&config).unwrap();
        for cell in &topo.small_cells {
            let urllc: Vec<_> = topo
                .cell_users(cell.id)
                .filter(|u| u.slice == Slice::Urllc)
                .map(|u| u.id)
                .collect();
            assert_eq!(urllc.len(), 2);
            // Lowest ids take the uRLLC slots.
            let all: Vec<_> = topo.cell_users(cell.id).map(|u| u.id).collect();
            assert_eq!(urllc, all[..2].to_vec());
        }
    }

    #[test]
    fn generated_topologies_validate_clean() {
        let config = cfg(25, 11);
        let topo = generate_topology(&config).unwrap();
        assert!(validate_topology(&topo, &config).is_empty());
    }

    #[test]
    fn validator_flags_close_cells() {
        let config = cfg(2, 1);
        let mut topo = generate_topology(&config).unwrap();
        topo.small_cells[0].center = Point::new(0.0, 0.0);
        topo.small_cells[1].center = Point::new(5.0, 0.0);
        let violations = validate_topology(&topo, &config);
        assert!(violations.iter().any(|v| matches!(
            v,
            TopologyViolation::CellsTooClose {
                a: CellId(0),
                b: CellId(1)
            }
        )));
    }

    #[test]
    fn validator_flags_mislabeled_macro_user() {
        let config = cfg(1, 1);
        let mut topo = generate_topology(&config).unwrap();
        topo.users[0].slice = Slice::Embb;
        let violations = validate_topology(&topo, &config);
        assert_eq!(
            violations,
            vec![TopologyViolation::MacroUserNotIot {
                user: topo.users[0].id
            }]
        );
    }

    #[test]
    fn infeasible_packing_reports_placement_error() {
        let config = ScenarioConfig {
            macro_radius: 30.0,
            min_small_cell_separation: 50.0,
            num_small_cells: 10,
            ..ScenarioConfig::<f64>::default()
        };
        match generate_topology(&config) {
            Err(ScenarioError::PlacementInfeasible { attempts, .. }) => {
                assert_eq!(attempts, 10_000)
            }
            other => panic!("expected PlacementInfeasible, got {other:?}"),
        }
    }

    #[test]
    fn invalid_config_is_rejected() {
        let config = ScenarioConfig {
            urllc_fraction: 1.5,
            ..ScenarioConfig::<f64>::default()
        };
        assert!(matches!(
            generate_topology(&config),
            Err(ScenarioError::InvalidConfig { .. })
        ));
    }

    #[test]
    fn works_in_f32_too() {
        let config = ScenarioConfig::<f32> {
            num_small_cells: 3,
            ..ScenarioConfig::default()
        };
        let topo = generate_topology(&config).unwrap();
        assert!(validate_topology(&topo, &config).is_empty());
    }
}

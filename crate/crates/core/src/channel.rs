//! Uplink channel model: path loss, fast fading, and the sampled gain
//! tensor between every user and every receiving station.
//!
//! Three link classes cover the two-tier layout: outdoor users toward the
//! macrocell, indoor users toward their own small cell, and indoor/outdoor
//! links that cross a building wall. Fast fading is unit-mean Rayleigh
//! (exponential power), drawn per (user, station, subchannel) from a
//! substream derived from the scenario seed so the tensor is reproducible
//! regardless of evaluation order.

use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::num::{real, Scalar};
use crate::rng::{derive_rng, STREAM_FADING};
use crate::scenario::{Attachment, Topology, User};

/// Links shorter than this are evaluated at this distance; the path-loss
/// fits below are not valid in the reactive near field.
const MIN_DISTANCE_M: f64 = 1.0;

/// Wall penetration loss added to cross-wall links (dB).
const WALL_LOSS_DB: f64 = 10.0;

/// Converts dBm to watts.
pub fn dbm_to_watt<F: Scalar>(dbm: F) -> F {
    let ten: F = real(10.0);
    ten.powf(dbm / ten) * real(1.0e-3)
}

/// Converts watts to dBm.
pub fn watt_to_dbm<F: Scalar>(watt: F) -> F {
    let ten: F = real(10.0);
    ten * (watt / real(1.0e-3)).log10()
}

/// Propagation class of a user-to-station link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LinkType {
    /// Outdoor user to the macrocell.
    MacroOutdoor,
    /// Indoor user to its own small cell.
    SmallCellIndoor,
    /// Any link through a building wall.
    CrossWall,
}

/// Receiving station: the macrocell or one small cell, indexed as the gain
/// tensor indexes them (0 = macro, 1 + k = small cell k).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Station {
    Macro,
    SmallCell(usize),
}

/// Distance-dependent path loss in dB.
///
/// Macro-outdoor uses the suburban macro fit `128.1 + 37.6 log10(d_km)`;
/// small-cell-indoor uses the in-building fit `38.46 + 20 log10(d_m)`;
/// cross-wall links take the outdoor fit plus a 10 dB wall penalty.
pub fn path_loss_db<F: Scalar>(link: LinkType, distance_m: F) -> F {
    let d = distance_m.max(real(MIN_DISTANCE_M));
    match link {
        LinkType::MacroOutdoor => real::<F>(128.1) + real::<F>(37.6) * (d / real(1000.0)).log10(),
        LinkType::SmallCellIndoor => real::<F>(38.46) + real::<F>(20.0) * d.log10(),
        LinkType::CrossWall => {
            real::<F>(128.1) + real::<F>(37.6) * (d / real(1000.0)).log10() + real(WALL_LOSS_DB)
        }
    }
}

/// Linear power gain of a link: `10^(-PL/10)`.
pub fn path_gain<F: Scalar>(link: LinkType, distance_m: F) -> F {
    let ten: F = real(10.0);
    ten.powf(-path_loss_db(link, distance_m) / ten)
}

/// Unit-mean exponential fading power from one canonical uniform draw.
pub fn fading_gain<F: Scalar, R: Rng>(rng: &mut R) -> F {
    let u: f64 = rng.gen();
    real(-(1.0 - u).ln())
}

/// Propagation class of the link from `user` to `station`. A user's own
/// small cell sees it indoors; the macrocell sees outdoor users directly;
/// every other pairing crosses a wall.
pub fn classify_link<F: Scalar>(user: &User<F>, station: Station) -> LinkType {
    match (station, user.attachment) {
        (Station::SmallCell(k), Attachment::SmallCell(cell)) if cell.0 as usize == k => {
            LinkType::SmallCellIndoor
        }
        (Station::Macro, _) if !user.indoor => LinkType::MacroOutdoor,
        _ => LinkType::CrossWall,
    }
}

/// Channel-model failures.
#[derive(Debug, Error)]
pub enum ChannelError {
    #[error(
        "DimensionMismatch: tensor built for {expected_users} users x {expected_stations} \
         stations x {expected_subchannels} subchannels, got index ({user}, {station}, \
         {subchannel})"
    )]
    DimensionMismatch {
        expected_users: usize,
        expected_stations: usize,
        expected_subchannels: usize,
        user: usize,
        station: usize,
        subchannel: usize,
    },
}

/// Dense user x station x subchannel tensor of linear power gains.
///
/// Station axis: index 0 is the macrocell, index 1 + k is small cell k.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GainTensor<F> {
    num_users: usize,
    num_stations: usize,
    num_subchannels: usize,
    gains: Vec<F>,
}

impl<F: Scalar> GainTensor<F> {
    /// Builds a tensor by evaluating `f(user, station, subchannel)`.
    pub fn from_fn(
        num_users: usize,
        num_stations: usize,
        num_subchannels: usize,
        mut f: impl FnMut(usize, usize, usize) -> F,
    ) -> Self {
        let mut gains = Vec::with_capacity(num_users * num_stations * num_subchannels);
        for u in 0..num_users {
            for s in 0..num_stations {
                for n in 0..num_subchannels {
                    gains.push(f(u, s, n));
                }
            }
        }
        Self {
            num_users,
            num_stations,
            num_subchannels,
            gains,
        }
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_stations(&self) -> usize {
        self.num_stations
    }

    pub fn num_subchannels(&self) -> usize {
        self.num_subchannels
    }

    #[inline]
    fn index(&self, user: usize, station: usize, subchannel: usize) -> usize {
        (user * self.num_stations + station) * self.num_subchannels + subchannel
    }

    /// Gain of the (user, station, subchannel) link, or a dimension error.
    pub fn get(&self, user: usize, station: usize, subchannel: usize) -> Result<F, ChannelError> {
        if user >= self.num_users
            || station >= self.num_stations
            || subchannel >= self.num_subchannels
        {
            return Err(ChannelError::DimensionMismatch {
                expected_users: self.num_users,
                expected_stations: self.num_stations,
                expected_subchannels: self.num_subchannels,
                user,
                station,
                subchannel,
            });
        }
        Ok(self.gains[self.index(user, station, subchannel)])
    }

    /// Unchecked-in-release accessor for hot loops; panics on bad indices
    /// in debug builds.
    #[inline]
    pub fn gain(&self, user: usize, station: usize, subchannel: usize) -> F {
        debug_assert!(user < self.num_users);
        debug_assert!(station < self.num_stations);
        debug_assert!(subchannel < self.num_subchannels);
        self.gains[self.index(user, station, subchannel)]
    }
}

fn station_position<F: Scalar>(
    topology: &Topology<F>,
    station: Station,
) -> crate::scenario::Point<F> {
    match station {
        Station::Macro => topology.macro_position,
        Station::SmallCell(k) => topology.small_cells[k].center,
    }
}

/// Samples the full gain tensor for a topology at one fading realization.
///
/// `fading_seed` selects the realization (TTI); each user draws its fading
/// from its own substream, so the tensor does not depend on evaluation
/// order and distinct users' channels are independent.
pub fn build_gain_tensor<F: Scalar>(
    topology: &Topology<F>,
    seed: u64,
    fading_seed: u64,
    num_subchannels: usize,
) -> GainTensor<F> {
    let n_sub = num_subchannels;
    let num_users = topology.users.len();
    let num_stations = 1 + topology.small_cells.len();

    let mut gains = vec![F::zero(); num_users * num_stations * n_sub];
    for (u_idx, user) in topology.users.iter().enumerate() {
        // Substream label ties fading to the user id and realization, not
        // to the loop order.
        let mut rng = derive_rng(seed, STREAM_FADING, (fading_seed << 32) | user.id.0 as u64);
        for s in 0..num_stations {
            let station = if s == 0 {
                Station::Macro
            } else {
                Station::SmallCell(s - 1)
            };
            let link = classify_link(user, station);
            let pg = path_gain(
                link,
                user.position.distance(&station_position(topology, station)),
            );
            for n in 0..n_sub {
                let idx = (u_idx * num_stations + s) * n_sub + n;
                gains[idx] = pg * fading_gain::<F, _>(&mut rng);
            }
        }
    }
    GainTensor {
        num_users,
        num_stations,
        num_subchannels: n_sub,
        gains,
    }
}

//! Joint subchannel and power allocation for the small-cell tier.
//!
//! The problem: each small cell hands its subchannels to at most one of
//! its users apiece and chooses transmit powers, maximizing uplink
//! capacity subject to a per-user power budget, a per-subchannel cap on
//! the total interference received at the macrocell, and per-user minimum
//! rates for the uRLLC slice. [`dual`] solves it by Lagrangian dual
//! decomposition; [`oracle`] brute-forces small instances on a power grid
//! as an independent check.

pub mod dual;
pub mod oracle;

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::channel::GainTensor;
use crate::num::{real, Scalar};
use crate::scenario::{CellId, Slice, UserId};

/// Macro-tier transmitter active on one subchannel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MacroTx<F> {
    /// Gain-tensor row of the transmitting macro user.
    pub user_index: usize,
    /// Its transmit power on this subchannel (W).
    pub power_w: F,
}

/// A small-cell user as the allocator sees it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProblemUser {
    pub id: UserId,
    /// Gain-tensor row.
    pub index: usize,
    pub slice: Slice,
}

/// One small cell and its candidate users.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProblemCell {
    pub id: CellId,
    /// Gain-tensor station index (macro is 0, cell k is 1 + k).
    pub station: usize,
    pub users: Vec<ProblemUser>,
}

/// One allocation problem instance: gains plus every constraint parameter,
/// with the interference environment (macro schedule, co-tier estimate)
/// frozen for the duration of the solve.
#[derive(Debug, Clone)]
pub struct AllocationProblem<'a, F> {
    pub gains: &'a GainTensor<F>,
    pub cells: Vec<ProblemCell>,
    /// Macro transmitter per subchannel, if any.
    pub macro_schedule: Vec<Option<MacroTx<F>>>,
    /// Thermal noise per subchannel (W).
    pub noise_per_subchannel_w: F,
    /// Per-user transmit power budget (W).
    pub p_max_w: F,
    /// Cap on total small-cell interference at the macrocell, per
    /// subchannel (W).
    pub interference_cap_w: F,
    /// Minimum rate per uRLLC user (bps).
    pub min_rates_bps: BTreeMap<UserId, F>,
    /// Bandwidth of one subchannel (Hz).
    pub subchannel_bandwidth_hz: F,
    /// Co-tier interference estimate per (cell, subchannel) (W), carried
    /// over from the previous interference round.
    pub co_tier_w: Vec<Vec<F>>,
    pub num_subchannels: usize,
}

impl<'a, F: Scalar> AllocationProblem<'a, F> {
    /// Interference (W) at cell `k`'s receiver on subchannel `n`,
    /// excluding thermal noise: the scheduled macro transmitter plus the
    /// frozen co-tier estimate.
    pub fn interference_w(&self, k: usize, n: usize) -> F {
        let macro_part = match &self.macro_schedule[n] {
            Some(tx) => tx.power_w * self.gains.gain(tx.user_index, self.cells[k].station, n),
            None => F::zero(),
        };
        macro_part + self.co_tier_w[k][n]
    }

    /// Signal gain of `user` toward its serving cell `k` on subchannel `n`.
    pub fn signal_gain(&self, k: usize, user: &ProblemUser, n: usize) -> F {
        self.gains.gain(user.index, self.cells[k].station, n)
    }

    /// Gain of `user` toward the macrocell on subchannel `n` (the quantity
    /// the interference cap prices).
    pub fn macro_gain(&self, user: &ProblemUser, n: usize) -> F {
        self.gains.gain(user.index, 0, n)
    }

    /// Messages for any violated problem invariant (empty = valid).
    pub fn check(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let zero = F::zero();
        if !(self.p_max_w > zero) {
            errs.push("p_max must be > 0".into());
        }
        if !(self.interference_cap_w > zero) {
            errs.push("interference_cap must be > 0".into());
        }
        if !(self.noise_per_subchannel_w > zero) {
            errs.push("noise_per_subchannel must be > 0".into());
        }
        if self.min_rates_bps.values().any(|r| *r < zero) {
            errs.push("min_rates must be nonnegative".into());
        }
        if self
            .co_tier_w
            .iter()
            .any(|row| row.iter().any(|i| *i < zero))
        {
            errs.push("co_tier_interference must be nonnegative".into());
        }
        if self.macro_schedule.len() != self.num_subchannels {
            errs.push("macro_schedule length must equal num_subchannels".into());
        }
        if self.co_tier_w.len() != self.cells.len()
            || self
                .co_tier_w
                .iter()
                .any(|r| r.len() != self.num_subchannels)
        {
            errs.push("co_tier_interference shape must be cells x subchannels".into());
        }
        errs
    }

    /// Total number of small-cell users in the problem.
    pub fn num_users(&self) -> usize {
        self.cells.iter().map(|c| c.users.len()).sum()
    }

    /// All `(cell index, user)` pairs in id order within each cell.
    pub fn users(&self) -> impl Iterator<Item = (usize, &ProblemUser)> {
        self.cells
            .iter()
            .enumerate()
            .flat_map(|(k, c)| c.users.iter().map(move |u| (k, u)))
    }
}

/// Signal-to-interference-plus-noise ratio `p·g / (noise + interference)`.
pub fn sinr<F: Scalar>(p_w: F, g_signal: F, interference_w: F, noise_w: F) -> F {
    p_w * g_signal / (noise_w + interference_w)
}

/// Shannon capacity of one subchannel: `bandwidth · log2(1 + sinr)` (bps).
pub fn subchannel_capacity<F: Scalar>(bandwidth_hz: F, sinr: F) -> F {
    bandwidth_hz * (F::one() + sinr).log2()
}

/// One exclusive subchannel grant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Grant<F> {
    /// Index into [`AllocationProblem::cells`].
    pub cell: usize,
    pub subchannel: usize,
    pub user: UserId,
    pub power_w: F,
}

/// A binary allocation: exclusive grants plus the per-user rates they
/// achieve under the problem's interference environment.
#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct Allocation<F> {
    pub grants: Vec<Grant<F>>,
    pub rates_bps: BTreeMap<UserId, F>,
}

impl<F: Scalar> Allocation<F> {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Total achieved rate of the given slice (bps) given each user's
    /// slice membership.
    pub fn slice_total_bps(&self, problem: &AllocationProblem<'_, F>, slice: Slice) -> F {
        problem
            .users()
            .filter(|(_, u)| u.slice == slice)
            .map(|(_, u)| self.rates_bps.get(&u.id).copied().unwrap_or_else(F::zero))
            .fold(F::zero(), |a, b| a + b)
    }
}

/// Recomputes every granted user's rate from first principles (grants,
/// gains, frozen interference), overwriting `rates_bps`.
pub fn recompute_rates<F: Scalar>(
    allocation: &mut Allocation<F>,
    problem: &AllocationProblem<'_, F>,
) {
    let mut rates: BTreeMap<UserId, F> = BTreeMap::new();
    for (_, u) in problem.users() {
        rates.insert(u.id, F::zero());
    }
    for grant in &allocation.grants {
        let cell = &problem.cells[grant.cell];
        let user = cell
            .users
            .iter()
            .find(|u| u.id == grant.user)
            .expect("grant names a user of its cell");
        let s = sinr(
            grant.power_w,
            problem.signal_gain(grant.cell, user, grant.subchannel),
            problem.interference_w(grant.cell, grant.subchannel),
            problem.noise_per_subchannel_w,
        );
        let r = subchannel_capacity(problem.subchannel_bandwidth_hz, s);
        *rates.entry(grant.user).or_insert_with(F::zero) += r;
    }
    allocation.rates_bps = rates;
}

/// Constraint slacks of an allocation; positive slack = satisfied with
/// margin. `feasible` applies the standard tolerances (relative 1e-6 on
/// power and interference, 1 bps absolute on rates).
#[derive(Debug, Clone, Serialize)]
pub struct FeasibilityReport<F> {
    /// `p_max − Σ_n p` per user (W).
    pub power_slack_w: BTreeMap<UserId, F>,
    /// `rate − r_min` per uRLLC user (bps), recomputed from the grants.
    pub rate_slack_bps: BTreeMap<UserId, F>,
    /// `cap − Σ p·g_macro` per subchannel (W).
    pub interference_slack_w: Vec<F>,
    /// `(cell, subchannel)` pairs granted to more than one user.
    pub exclusivity_violations: Vec<(usize, usize)>,
    pub feasible: bool,
}

/// Measures all constraint slacks of `allocation` against `problem`.
/// Rates are recomputed independently of `allocation.rates_bps`.
pub fn check_feasibility<F: Scalar>(
    allocation: &Allocation<F>,
    problem: &AllocationProblem<'_, F>,
) -> FeasibilityReport<F> {
    let rel: F = real(1.0e-6);

    let mut power_sum: BTreeMap<UserId, F> = BTreeMap::new();
    let mut interference: Vec<F> = vec![F::zero(); problem.num_subchannels];
    let mut occupancy: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut recomputed = allocation.clone();
    recompute_rates(&mut recomputed, problem);

    for grant in &allocation.grants {
        *power_sum.entry(grant.user).or_insert_with(F::zero) += grant.power_w;
        let cell = &problem.cells[grant.cell];
        let user = cell
            .users
            .iter()
            .find(|u| u.id == grant.user)
            .expect("grant names a user of its cell");
        interference[grant.subchannel] +=
            grant.power_w * problem.macro_gain(user, grant.subchannel);
        *occupancy.entry((grant.cell, grant.subchannel)).or_insert(0) += 1;
    }

    let mut power_slack_w = BTreeMap::new();
    for (_, u) in problem.users() {
        let used = power_sum.get(&u.id).copied().unwrap_or_else(F::zero);
        power_slack_w.insert(u.id, problem.p_max_w - used);
    }

    let mut rate_slack_bps = BTreeMap::new();
    for (user, r_min) in &problem.min_rates_bps {
        let rate = recomputed
            .rates_bps
            .get(user)
            .copied()
            .unwrap_or_else(F::zero);
        rate_slack_bps.insert(*user, rate - *r_min);
    }

    let interference_slack_w: Vec<F> = interference
        .iter()
        .map(|i| problem.interference_cap_w - *i)
        .collect();

    let exclusivity_violations: Vec<(usize, usize)> = occupancy
        .iter()
        .filter(|(_, count)| **count > 1)
        .map(|(slot, _)| *slot)
        .collect();

    let power_ok = power_slack_w.values().all(|s| *s >= -rel * problem.p_max_w);
    let cap_ok = interference_slack_w
        .iter()
        .all(|s| *s >= -rel * problem.interference_cap_w);
    let rate_ok = rate_slack_bps
        .iter()
        .all(|(u, s)| *s >= -(rel * problem.min_rates_bps[u] + F::one()));
    let feasible = power_ok && cap_ok && rate_ok && exclusivity_violations.is_empty();

    FeasibilityReport {
        power_slack_w,
        rate_slack_bps,
        interference_slack_w,
        exclusivity_violations,
        feasible,
    }
}

/// One scored candidate for a (cell, subchannel) slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate<F> {
    pub user: UserId,
    pub score: F,
    pub power_w: F,
}

/// Candidate sets per (cell, subchannel) slot, as produced by one round of
/// subproblem solves.
#[derive(Debug, Clone)]
pub struct CandidateGrid<F> {
    /// Indexed `[cell][subchannel]`.
    pub slots: Vec<Vec<Vec<Candidate<F>>>>,
}

impl<F: Scalar> CandidateGrid<F> {
    pub fn empty(num_cells: usize, num_subchannels: usize) -> Self {
        Self {
            slots: vec![vec![Vec::new(); num_subchannels]; num_cells],
        }
    }
}

/// Per-slot argmax with positive score; ties go to the lowest user id.
pub(crate) fn select_winners<F: Scalar>(grid: &CandidateGrid<F>) -> Vec<Grant<F>> {
    let mut grants: Vec<Grant<F>> = Vec::new();
    for (k, subchannels) in grid.slots.iter().enumerate() {
        for (n, candidates) in subchannels.iter().enumerate() {
            let mut winner: Option<&Candidate<F>> = None;
            for c in candidates {
                if !(c.score > F::zero()) || !(c.power_w > F::zero()) {
                    continue;
                }
                winner = match winner {
                    None => Some(c),
                    Some(best) => {
                        if c.score > best.score || (c.score == best.score && c.user < best.user) {
                            Some(c)
                        } else {
                            Some(best)
                        }
                    }
                };
            }
            if let Some(c) = winner {
                grants.push(Grant {
                    cell: k,
                    subchannel: n,
                    user: c.user,
                    power_w: c.power_w,
                });
            }
        }
    }
    grants
}

/// Rounds a candidate grid into a feasible binary allocation: per slot the
/// highest-scoring candidate with positive score wins (ties to the lowest
/// user id); each user's powers are scaled down uniformly if they exceed
/// the budget; each subchannel's transmitters are scaled down
/// proportionally if the macro interference cap is exceeded; users left
/// below a rate floor then claim their cell's best slots at the minimum
/// power that meets the floor. Rates are recomputed from the repaired
/// powers.
pub fn round_allocation<F: Scalar>(
    grid: &CandidateGrid<F>,
    problem: &AllocationProblem<'_, F>,
) -> Allocation<F> {
    let mut grants = select_winners(grid);

    // Per-user budget repair: uniform down-scaling.
    let mut power_sum: BTreeMap<UserId, F> = BTreeMap::new();
    for g in &grants {
        *power_sum.entry(g.user).or_insert_with(F::zero) += g.power_w;
    }
    for g in &mut grants {
        let total = power_sum[&g.user];
        if total > problem.p_max_w {
            g.power_w *= problem.p_max_w / total;
        }
    }

    // Per-subchannel cap repair: proportional down-scaling of everyone
    // transmitting on an over-cap subchannel.
    let mut cap_scale: Vec<F> = vec![F::one(); problem.num_subchannels];
    let mut interference: Vec<F> = vec![F::zero(); problem.num_subchannels];
    for g in &grants {
        let user = problem.cells[g.cell]
            .users
            .iter()
            .find(|u| u.id == g.user)
            .expect("grant names a user of its cell");
        interference[g.subchannel] += g.power_w * problem.macro_gain(user, g.subchannel);
    }
    for n in 0..problem.num_subchannels {
        if interference[n] > problem.interference_cap_w {
            cap_scale[n] = problem.interference_cap_w / interference[n];
        }
    }
    for g in &mut grants {
        g.power_w *= cap_scale[g.subchannel];
    }

    let mut slots: BTreeMap<(usize, usize), (UserId, F)> = grants
        .into_iter()
        .map(|g| ((g.cell, g.subchannel), (g.user, g.power_w)))
        .collect();
    repair_min_rates(&mut slots, problem);

    let mut allocation = Allocation {
        grants: slots
            .into_iter()
            .map(|((cell, subchannel), (user, power_w))| Grant {
                cell,
                subchannel,
                user,
                power_w,
            })
            .collect(),
        rates_bps: BTreeMap::new(),
    };
    recompute_rates(&mut allocation, problem);
    allocation
}

/// Minimum-rate repair: every user whose floor the scaled winners miss
/// walks its cell's subchannels in descending signal quality, raising its
/// own power, claiming idle slots, or displacing floor-less users, each at
/// the smallest power meeting the remaining deficit, while respecting its
/// power budget and the per-subchannel interference headroom. Winners of
/// other floors are never displaced. A floor that still cannot be met is
/// left short for the feasibility report to flag.
fn repair_min_rates<F: Scalar>(
    slots: &mut BTreeMap<(usize, usize), (UserId, F)>,
    problem: &AllocationProblem<'_, F>,
) {
    if problem.min_rates_bps.is_empty() {
        return;
    }
    let bandwidth = problem.subchannel_bandwidth_hz;
    let user_of = |k: usize, id: UserId| {
        problem.cells[k]
            .users
            .iter()
            .find(|u| u.id == id)
            .expect("slot names a user of its cell")
    };

    let mut power_sum: BTreeMap<UserId, F> = BTreeMap::new();
    let mut interference: Vec<F> = vec![F::zero(); problem.num_subchannels];
    for (&(k, n), &(id, p)) in slots.iter() {
        *power_sum.entry(id).or_insert_with(F::zero) += p;
        interference[n] += p * problem.macro_gain(user_of(k, id), n);
    }

    for (k, cell) in problem.cells.iter().enumerate() {
        for user in &cell.users {
            let Some(&r_min) = problem.min_rates_bps.get(&user.id) else {
                continue;
            };
            let rate_on = |n: usize, p: F| {
                subchannel_capacity(
                    bandwidth,
                    sinr(
                        p,
                        problem.signal_gain(k, user, n),
                        problem.interference_w(k, n),
                        problem.noise_per_subchannel_w,
                    ),
                )
            };
            let mut rate = F::zero();
            for n in 0..problem.num_subchannels {
                if let Some(&(id, p)) = slots.get(&(k, n)) {
                    if id == user.id {
                        rate += rate_on(n, p);
                    }
                }
            }
            if rate >= r_min {
                continue;
            }

            let quality = |n: usize| {
                problem.signal_gain(k, user, n)
                    / (problem.noise_per_subchannel_w + problem.interference_w(k, n))
            };
            let mut order: Vec<usize> = (0..problem.num_subchannels).collect();
            order.sort_by(|&a, &b| {
                quality(b)
                    .partial_cmp(&quality(a))
                    .expect("finite link qualities")
                    .then(a.cmp(&b))
            });

            for n in order {
                if rate >= r_min {
                    break;
                }
                let g_sig = problem.signal_gain(k, user, n);
                let g_mac = problem.macro_gain(user, n);
                if !(g_sig > F::zero()) {
                    continue;
                }
                let occupant = slots.get(&(k, n)).copied();
                if let Some((id, _)) = occupant {
                    if id != user.id && problem.min_rates_bps.contains_key(&id) {
                        continue;
                    }
                }

                // Power already spent on this slot by this user, and the
                // interference the occupant would free if displaced.
                let (own_power, freed_w) = match occupant {
                    Some((id, p)) if id == user.id => (p, F::zero()),
                    Some((id, p)) => (F::zero(), p * problem.macro_gain(user_of(k, id), n)),
                    None => (F::zero(), F::zero()),
                };
                let budget_left = (problem.p_max_w
                    - power_sum.get(&user.id).copied().unwrap_or_else(F::zero))
                .max(F::zero());
                let cap_left =
                    (problem.interference_cap_w - interference[n] + freed_w).max(F::zero());
                let cap_power = if g_mac > F::zero() {
                    cap_left / g_mac
                } else {
                    F::infinity()
                };
                let max_power = own_power + budget_left.min(cap_power);

                // Smallest slot power that closes the remaining deficit.
                let deficit = r_min - rate + rate_on(n, own_power);
                let denom = problem.noise_per_subchannel_w + problem.interference_w(k, n);
                let needed = denom * ((deficit / bandwidth).exp2() - F::one()) / g_sig;
                let p_new = needed.min(max_power);
                if !(p_new > own_power) {
                    continue;
                }

                if let Some((id, p)) = occupant {
                    if id != user.id {
                        *power_sum.get_mut(&id).expect("occupant has power") -= p;
                        interference[n] -= p * problem.macro_gain(user_of(k, id), n);
                    }
                }
                rate += rate_on(n, p_new) - rate_on(n, own_power);
                *power_sum.entry(user.id).or_insert_with(F::zero) += p_new - own_power;
                interference[n] += (p_new - own_power) * g_mac;
                slots.insert((k, n), (user.id, p_new));
            }
        }
    }
}

/// Allocator failures.
#[derive(Debug, Error)]
pub enum AllocError {
    /// A uRLLC user cannot reach its minimum rate even with every
    /// subchannel at full power and no co-tier interference.
    #[error(
        "InfeasibleMinRate: user {user} can reach at most {achievable_bps:.0} bps, \
         below its minimum {required_bps:.0} bps"
    )]
    InfeasibleMinRate {
        user: u32,
        achievable_bps: f64,
        required_bps: f64,
    },
    /// Enumeration would exceed the oracle's evaluation budget.
    #[error("TooLarge: enumeration exceeds the {budget} evaluation budget")]
    TooLarge { budget: u64 },
    /// The problem violates its own invariants.
    #[error("InvalidProblem: {}", violations.join("; "))]
    InvalidProblem { violations: Vec<String> },
}


#[cfg(test)]
mod tests {
    use super::test_support::Fixture;
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn sinr_basic_points() {
        assert_eq!(sinr(0.0, 1e-9, 1e-13, 1e-15), 0.0);
        let p = 2.0e-12 / 1e-9; // p*g == noise + interference
        assert_relative_eq!(sinr(p, 1e-9, 1e-12, 1e-12), 1.0, max_relative = 1e-12);
        assert_relative_eq!(
            sinr(0.1, 1e-10, 0.9e-12, 0.1e-12),
            10.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn capacity_basic_points() {
        assert_eq!(subchannel_capacity(200_000.0, 0.0), 0.0);
        assert_relative_eq!(
            subchannel_capacity(200_000.0, 1.0),
            200_000.0,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            subchannel_capacity(200_000.0, 3.0),
            400_000.0,
            max_relative = 1e-12
        );
    }

    fn two_user_fixture() -> Fixture {
        Fixture::new(
            &[vec![1.0e-5, 2.0e-5], vec![3.0e-5, 0.5e-5]],
            &[vec![1.0e-12; 2], vec![1.0e-12; 2]],
            &[Slice::Embb, Slice::Embb],
        )
    }

    #[test]
    fn rounding_picks_argmax_candidate() {
        let fixture = two_user_fixture();
        let problem = fixture.problem(0.2, 1.0, 1e-15, BTreeMap::new(), 200e3);
        let mut grid = CandidateGrid::empty(1, 2);
        grid.slots[0][0] = vec![
            Candidate {
                user: UserId(0),
                score: 0.7,
                power_w: 0.1,
            },
            Candidate {
                user: UserId(1),
                score: 0.3,
                power_w: 0.1,
            },
        ];
        let alloc = round_allocation(&grid, &problem);
        assert_eq!(alloc.grants.len(), 1);
        assert_eq!(alloc.grants[0].user, UserId(0));
    }

    #[test]
    fn rounding_breaks_ties_toward_lowest_id() {
        let fixture = two_user_fixture();
        let problem = fixture.problem(0.2, 1.0, 1e-15, BTreeMap::new(), 200e3);
        let mut grid = CandidateGrid::empty(1, 2);
        grid.slots[0][1] = vec![
            Candidate {
                user: UserId(1),
                score: 0.5,
                power_w: 0.1,
            },
            Candidate {
                user: UserId(0),
                score: 0.5,
                power_w: 0.1,
            },
        ];
        let alloc = round_allocation(&grid, &problem);
        assert_eq!(alloc.grants[0].user, UserId(0));
    }

    #[test]
    fn rounding_scales_over_budget_user() {
        let fixture = two_user_fixture();
        let problem = fixture.problem(0.1995, 1.0, 1e-15, BTreeMap::new(), 200e3);
        let mut grid = CandidateGrid::empty(1, 2);
        grid.slots[0][0] = vec![Candidate {
            user: UserId(0),
            score: 1.0,
            power_w: 0.15,
        }];
        grid.slots[0][1] = vec![Candidate {
            user: UserId(0),
            score: 1.0,
            power_w: 0.10,
        }];
        let alloc = round_allocation(&grid, &problem);
        let scale = 0.1995 / 0.25;
        assert_relative_eq!(scale, 0.798, max_relative = 1e-12);
        assert_relative_eq!(alloc.grants[0].power_w, 0.15 * scale, max_relative = 1e-12);
        assert_relative_eq!(alloc.grants[1].power_w, 0.10 * scale, max_relative = 1e-12);
        let report = check_feasibility(&alloc, &problem);
        assert!(report.feasible);
    }

    #[test]
    fn rounding_keeps_feasible_input_unchanged() {
        let fixture = two_user_fixture();
        let problem = fixture.problem(0.2, 1.0, 1e-15, BTreeMap::new(), 200e3);
        let mut grid = CandidateGrid::empty(1, 2);
        grid.slots[0][0] = vec![Candidate {
            user: UserId(0),
            score: 1.0,
            power_w: 0.08,
        }];
        grid.slots[0][1] = vec![Candidate {
            user: UserId(1),
            score: 1.0,
            power_w: 0.05,
        }];
        let alloc = round_allocation(&grid, &problem);
        assert_eq!(alloc.grants.len(), 2);
        assert_eq!(alloc.grants[0].power_w, 0.08);
        assert_eq!(alloc.grants[1].power_w, 0.05);
    }

    #[test]
    fn rounding_enforces_interference_cap() {
        let fixture = Fixture::new(
            &[vec![1.0e-5], vec![1.0e-5]],
            &[vec![1.0e-10], vec![1.0e-10]],
            &[Slice::Embb, Slice::Embb],
        );
        // Cap allows only half of what a 0.2 W transmitter injects.
        let problem = fixture.problem(0.2, 1.0e-11, 1e-15, BTreeMap::new(), 200e3);
        let mut grid = CandidateGrid::empty(1, 1);
        grid.slots[0][0] = vec![Candidate {
            user: UserId(0),
            score: 1.0,
            power_w: 0.2,
        }];
        let alloc = round_allocation(&grid, &problem);
        assert_relative_eq!(alloc.grants[0].power_w, 0.1, max_relative = 1e-12);
        assert!(check_feasibility(&alloc, &problem).feasible);
    }

    #[test]
    fn repair_gives_floor_user_its_best_slot_at_minimal_power() {
        let fixture = Fixture::new(
            &[vec![1.0e-6, 1.0e-6], vec![2.0e-6, 1.0e-6]],
            &[vec![1.0e-12, 1.0e-12], vec![1.0e-12, 1.0e-12]],
            &[Slice::Embb, Slice::Urllc],
        );
        let mut min_rates = BTreeMap::new();
        min_rates.insert(UserId(1), 4.0e6);
        let problem = fixture.problem(0.2, 1.0e-3, 1e-15, min_rates, 200e3);
        // The floor user wins nothing; its partner holds both slots.
        let mut grid = CandidateGrid::empty(1, 2);
        grid.slots[0][0] = vec![Candidate {
            user: UserId(0),
            score: 1.0,
            power_w: 0.1,
        }];
        grid.slots[0][1] = vec![Candidate {
            user: UserId(0),
            score: 1.0,
            power_w: 0.1,
        }];
        let alloc = round_allocation(&grid, &problem);

        // Floor met exactly on the floor user's best subchannel with the
        // minimum power: p = noise·(2^(r/B) − 1)/g.
        let p_need = 1e-15 * ((4.0e6f64 / 200e3).exp2() - 1.0) / 2.0e-6;
        let urllc_grant = alloc.grants.iter().find(|g| g.user == UserId(1)).unwrap();
        assert_eq!(urllc_grant.subchannel, 0);
        assert_relative_eq!(urllc_grant.power_w, p_need, max_relative = 1e-12);
        assert_relative_eq!(alloc.rates_bps[&UserId(1)], 4.0e6, max_relative = 1e-9);
        // The displaced partner keeps only the other slot.
        let embb_grants: Vec<_> = alloc
            .grants
            .iter()
            .filter(|g| g.user == UserId(0))
            .collect();
        assert_eq!(embb_grants.len(), 1);
        assert_eq!(embb_grants[0].subchannel, 1);
        assert!(check_feasibility(&alloc, &problem).feasible);
    }

    #[test]
    fn repair_raises_own_power_before_displacing() {
        let fixture = Fixture::new(
            &[vec![1.0e-6, 1.0e-6], vec![2.0e-6, 1.0e-6]],
            &[vec![1.0e-12, 1.0e-12], vec![1.0e-12, 1.0e-12]],
            &[Slice::Embb, Slice::Urllc],
        );
        let mut min_rates = BTreeMap::new();
        min_rates.insert(UserId(1), 4.0e6);
        let problem = fixture.problem(0.2, 1.0e-3, 1e-15, min_rates, 200e3);
        // The floor user already holds its best slot, but too quietly.
        let mut grid = CandidateGrid::empty(1, 2);
        grid.slots[0][0] = vec![Candidate {
            user: UserId(1),
            score: 1.0,
            power_w: 1.0e-5,
        }];
        grid.slots[0][1] = vec![Candidate {
            user: UserId(0),
            score: 1.0,
            power_w: 0.1,
        }];
        let alloc = round_allocation(&grid, &problem);

        let p_need = 1e-15 * ((4.0e6f64 / 200e3).exp2() - 1.0) / 2.0e-6;
        let urllc_grant = alloc.grants.iter().find(|g| g.user == UserId(1)).unwrap();
        assert_eq!(urllc_grant.subchannel, 0);
        assert_relative_eq!(urllc_grant.power_w, p_need, max_relative = 1e-12);
        // The partner's slot is untouched.
        let embb_grant = alloc.grants.iter().find(|g| g.user == UserId(0)).unwrap();
        assert_eq!(embb_grant.subchannel, 1);
        assert_relative_eq!(embb_grant.power_w, 0.1);
        assert!(check_feasibility(&alloc, &problem).feasible);
    }

    #[test]
    fn repair_respects_cap_and_reports_unmet_floor() {
        let fixture = Fixture::new(
            &[vec![1.0e-9, 1.0e-9], vec![1.0e-9, 1.0e-9]],
            &[vec![1.0e-12, 1.0e-12], vec![1.0e-9, 1.0e-9]],
            &[Slice::Embb, Slice::Urllc],
        );
        let mut min_rates = BTreeMap::new();
        min_rates.insert(UserId(1), 1.0e9);
        let problem = fixture.problem(0.2, 1.0e-11, 1e-15, min_rates, 200e3);
        let mut grid = CandidateGrid::empty(1, 2);
        grid.slots[0][0] = vec![Candidate {
            user: UserId(0),
            score: 1.0,
            power_w: 0.005,
        }];
        grid.slots[0][1] = vec![Candidate {
            user: UserId(0),
            score: 1.0,
            power_w: 0.005,
        }];
        let alloc = round_allocation(&grid, &problem);

        // The unreachable floor claims both slots at the cap limit, no
        // further: interference sits exactly at the cap.
        let urllc_grants: Vec<_> = alloc
            .grants
            .iter()
            .filter(|g| g.user == UserId(1))
            .collect();
        assert_eq!(urllc_grants.len(), 2);
        for g in &urllc_grants {
            assert_relative_eq!(g.power_w, 1.0e-11 / 1.0e-9, max_relative = 1e-9);
        }
        let report = check_feasibility(&alloc, &problem);
        assert!(!report.feasible);
        assert!(report.rate_slack_bps[&UserId(1)] < 0.0);
        assert!(report
            .interference_slack_w
            .iter()
            .all(|s| *s >= -1e-6 * problem.interference_cap_w));
    }

    #[test]
    fn feasibility_flags_double_booking() {
        let fixture = two_user_fixture();
        let problem = fixture.problem(0.2, 1.0, 1e-15, BTreeMap::new(), 200e3);
        let alloc = Allocation {
            grants: vec![
                Grant {
                    cell: 0,
                    subchannel: 0,
                    user: UserId(0),
                    power_w: 0.01,
                },
                Grant {
                    cell: 0,
                    subchannel: 0,
                    user: UserId(1),
                    power_w: 0.01,
                },
            ],
            rates_bps: BTreeMap::new(),
        };
        let report = check_feasibility(&alloc, &problem);
        assert!(!report.feasible);
        assert_eq!(report.exclusivity_violations, vec![(0, 0)]);
    }

    #[test]
    fn empty_allocation_feasible_without_min_rates() {
        let fixture = two_user_fixture();
        let problem = fixture.problem(0.2, 1.0, 1e-15, BTreeMap::new(), 200e3);
        let report = check_feasibility(&Allocation::empty(), &problem);
        assert!(report.feasible);
        assert!(report.power_slack_w.values().all(|s| *s == 0.2));
    }

    #[test]
    fn empty_allocation_infeasible_with_min_rate() {
        let fixture = Fixture::new(
            &[vec![1.0e-5], vec![1.0e-5]],
            &[vec![1.0e-12], vec![1.0e-12]],
            &[Slice::Urllc, Slice::Embb],
        );
        let mut min_rates = BTreeMap::new();
        min_rates.insert(UserId(0), 1.0e6);
        let problem = fixture.problem(0.2, 1.0, 1e-15, min_rates, 200e3);
        let report = check_feasibility(&Allocation::empty(), &problem);
        assert!(!report.feasible);
        assert_relative_eq!(report.rate_slack_bps[&UserId(0)], -1.0e6);
    }

    #[test]
    fn recomputed_rates_match_manual_formula() {
        let fixture = two_user_fixture();
        let problem = fixture.problem(0.2, 1.0, 1e-15, BTreeMap::new(), 200e3);
        let mut alloc = Allocation {
            grants: vec![Grant {
                cell: 0,
                subchannel: 1,
                user: UserId(0),
                power_w: 0.05,
            }],
            rates_bps: BTreeMap::new(),
        };
        recompute_rates(&mut alloc, &problem);
        let expected = 200e3 * (1.0f64 + 0.05 * 2.0e-5 / 1e-15).log2();
        assert_relative_eq!(alloc.rates_bps[&UserId(0)], expected, max_relative = 1e-12);
        assert_eq!(alloc.rates_bps[&UserId(1)], 0.0);
    }

    proptest! {
        // Rounding any candidate grid yields exclusive slots, budget
        // compliance, and cap compliance.
        #[test]
        fn rounding_always_repairs(
            powers in prop::collection::vec(0.0f64..0.5, 4),
        ) {
            let fixture = Fixture::new(
                &[vec![1.0e-5, 2.0e-5], vec![3.0e-5, 0.5e-5]],
                &[vec![5.0e-11, 1.0e-11], vec![2.0e-11, 4.0e-11]],
                &[Slice::Embb, Slice::Embb],
            );
            let problem = fixture.problem(0.1995, 2.0e-12, 1e-15, BTreeMap::new(), 200e3);
            let mut grid = CandidateGrid::empty(1, 2);
            grid.slots[0][0] = vec![
                Candidate { user: UserId(0), score: 1.0, power_w: powers[0] },
                Candidate { user: UserId(1), score: 0.9, power_w: powers[1] },
            ];
            grid.slots[0][1] = vec![
                Candidate { user: UserId(0), score: 0.8, power_w: powers[2] },
                Candidate { user: UserId(1), score: 1.1, power_w: powers[3] },
            ];
            let alloc = round_allocation(&grid, &problem);
            let report = check_feasibility(&alloc, &problem);
            prop_assert!(report.exclusivity_violations.is_empty());
            prop_assert!(report.power_slack_w.values().all(|s| *s >= -1e-6 * 0.1995));
            prop_assert!(report.interference_slack_w.iter().all(|s| *s >= -1e-6 * 2.0e-12));
        }
    }
}

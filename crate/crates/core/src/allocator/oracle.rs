//! Exhaustive grid-search oracle for small allocation instances.
//!
//! Enumerates every assignment of each (cell, subchannel) slot to one of
//! the cell's users (or none) with powers on a uniform grid over
//! [0, p_max], keeping the feasible maximizer of total small-cell
//! capacity. Exponential by design — a runtime evaluation budget rejects
//! instances that would exceed a desk-scale enumeration — but entirely
//! independent of the dual solver, which is the point: it validates the
//! solver on instances small enough to enumerate.

use std::collections::BTreeMap;

use crate::num::{real, Scalar};
use crate::scenario::UserId;

use super::{recompute_rates, AllocError, Allocation, AllocationProblem, Grant};

/// Node-visit budget before an enumeration is declared too large.
pub const EVALUATION_BUDGET: u64 = 100_000_000;

struct Search<'p, 'a, F> {
    problem: &'p AllocationProblem<'a, F>,
    power_levels: usize,
    /// Slots in subchannel-major order as (cell, subchannel).
    slots: Vec<(usize, usize)>,
    /// noise + frozen interference per slot, aligned with `slots`.
    denom: Vec<F>,
    /// Grid power per level index.
    grid: Vec<F>,
    budget: u64,
    evaluations: u64,
    /// Per-user running sum of grid level indices (budget ⇔ Σ ≤ L−1).
    level_sum: BTreeMap<UserId, usize>,
    /// Running macro interference per subchannel.
    cap_load: Vec<F>,
    /// Running per-user spectral efficiency.
    rho: BTreeMap<UserId, F>,
    stack: Vec<Grant<F>>,
    best_objective_se: Option<F>,
    best_grants: Vec<Grant<F>>,
}

impl<'p, 'a, F: Scalar> Search<'p, 'a, F> {
    fn run(&mut self) -> Result<(), AllocError> {
        self.descend(0)
    }

    fn descend(&mut self, slot: usize) -> Result<(), AllocError> {
        if slot == self.slots.len() {
            self.evaluations += 1;
            self.consider_leaf();
            return Ok(());
        }
        let (k, n) = self.slots[slot];

        // Option 1: leave the slot idle.
        self.descend(slot + 1)?;

        // Option 2: each user at each positive grid level.
        let max_index = self.power_levels - 1;
        for u in 0..self.problem.cells[k].users.len() {
            let user = &self.problem.cells[k].users[u];
            let id = user.id;
            let g_signal = self.problem.signal_gain(k, user, n);
            let g_macro = self.problem.macro_gain(user, n);
            let used = *self.level_sum.get(&id).unwrap_or(&0);
            for level in 1..=max_index {
                self.evaluations += 1;
                if self.evaluations > self.budget {
                    return Err(AllocError::TooLarge {
                        budget: self.budget,
                    });
                }
                // Budget prune: integer level sums make Σp ≤ p_max exact.
                if used + level > max_index {
                    break;
                }
                let p = self.grid[level];
                let injected = p * g_macro;
                if self.cap_load[n] + injected
                    > self.problem.interference_cap_w * real::<F>(1.0 + 1e-12)
                {
                    break;
                }
                let d_rho = (F::one() + p * g_signal / self.denom[slot]).log2();

                self.level_sum.insert(id, used + level);
                self.cap_load[n] += injected;
                *self.rho.entry(id).or_insert_with(F::zero) += d_rho;
                self.stack.push(Grant {
                    cell: k,
                    subchannel: n,
                    user: id,
                    power_w: p,
                });

                self.descend(slot + 1)?;

                self.stack.pop();
                *self.rho.get_mut(&id).unwrap() -= d_rho;
                self.cap_load[n] -= injected;
                self.level_sum.insert(id, used);
            }
        }
        Ok(())
    }

    fn consider_leaf(&mut self) {
        let bandwidth = self.problem.subchannel_bandwidth_hz;
        let rel: F = real(1.0e-6);
        for (id, r_min) in &self.problem.min_rates_bps {
            let rate = self.rho.get(id).copied().unwrap_or_else(F::zero) * bandwidth;
            if rate < *r_min - (rel * *r_min + F::one()) {
                return;
            }
        }
        let objective: F = self.rho.values().fold(F::zero(), |a, b| a + *b);
        let better = match self.best_objective_se {
            None => true,
            // Strict improvement keeps the first-found optimum on ties,
            // making the result independent of float noise in comparisons.
            Some(best) => objective > best,
        };
        if better {
            self.best_objective_se = Some(objective);
            self.best_grants = self.stack.clone();
        }
    }
}

/// Exhaustively finds the best feasible allocation with powers on a
/// `power_levels`-point uniform grid over [0, p_max], maximizing total
/// small-cell capacity. Returns the allocation and its objective (bps).
pub fn brute_force_oracle<F: Scalar>(
    problem: &AllocationProblem<'_, F>,
    power_levels: usize,
) -> Result<(Allocation<F>, F), AllocError> {
    brute_force_oracle_with_budget(problem, power_levels, EVALUATION_BUDGET)
}

/// As [`brute_force_oracle`] with an explicit evaluation budget.
pub fn brute_force_oracle_with_budget<F: Scalar>(
    problem: &AllocationProblem<'_, F>,
    power_levels: usize,
    budget: u64,
) -> Result<(Allocation<F>, F), AllocError> {
    let mut violations = problem.check();
    if power_levels < 2 {
        violations.push("power_levels must be >= 2".into());
    }
    if !violations.is_empty() {
        return Err(AllocError::InvalidProblem { violations });
    }

    let mut slots = Vec::new();
    let mut denom = Vec::new();
    for n in 0..problem.num_subchannels {
        for k in 0..problem.cells.len() {
            slots.push((k, n));
            denom.push(problem.noise_per_subchannel_w + problem.interference_w(k, n));
        }
    }
    let grid: Vec<F> = (0..power_levels)
        .map(|i| problem.p_max_w * real::<F>(i as f64) / real::<F>((power_levels - 1) as f64))
        .collect();

    let mut search = Search {
        problem,
        power_levels,
        slots,
        denom,
        grid,
        budget,
        evaluations: 0,
        level_sum: BTreeMap::new(),
        cap_load: vec![F::zero(); problem.num_subchannels],
        rho: BTreeMap::new(),
        stack: Vec::new(),
        best_objective_se: None,
        best_grants: Vec::new(),
    };
    search.run()?;

    let mut allocation = Allocation {
        grants: search.best_grants,
        rates_bps: BTreeMap::new(),
    };
    recompute_rates(&mut allocation, problem);
    let objective = allocation.rates_bps.values().fold(F::zero(), |a, b| a + *b);
    Ok((allocation, objective))
}

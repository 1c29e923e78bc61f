//! Lagrangian dual decomposition of the allocation problem.
//!
//! The coupling constraints (per-user power budget, uRLLC minimum rates,
//! per-subchannel macro interference cap) are priced with multipliers,
//! which splits the relaxed problem into independent per-(cell,
//! subchannel) subproblems, each solved in closed form by a water-filling
//! power rule. Multipliers follow a projected subgradient with diminishing
//! steps; each iteration's candidate solution is rounded to a feasible
//! binary allocation and the best feasible iterate is returned.
//!
//! Internally the solver works in spectral-efficiency units (bandwidth
//! divided out of every rate); diagnostics and returned rates are in bps.
//!
//! eMBB users carry objective weight 1; uRLLC users enter the objective
//! only through their min-rate multiplier, which is what pins their
//! achieved rate near the minimum instead of letting them compete for
//! surplus capacity.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::num::{real, Scalar};
use crate::scenario::{Slice, UserId};

use super::{
    check_feasibility, recompute_rates, round_allocation, select_winners, AllocError, Allocation,
    AllocationProblem, Candidate, CandidateGrid, FeasibilityReport,
};

/// Subgradient solver parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DualParams<F> {
    pub max_iters: usize,
    pub step_scale: F,
    /// Convergence threshold on the normalized multiplier change.
    pub tolerance: F,
}

impl<F: Scalar> Default for DualParams<F> {
    fn default() -> Self {
        Self {
            max_iters: 300,
            step_scale: F::one(),
            tolerance: real(1.0e-4),
        }
    }
}

/// Lagrange multipliers and iteration bookkeeping.
///
/// `lambda` prices each user's power budget, `mu` each uRLLC user's
/// minimum rate, `nu` each subchannel's macro interference cap. All are
/// stored raw (unnormalized); the update rule scales steps per family so
/// multiplier motion is O(1) in normalized units.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualState<F> {
    pub lambda: BTreeMap<UserId, F>,
    pub mu: BTreeMap<UserId, F>,
    pub nu: Vec<F>,
    pub iteration: usize,
    pub step_scale: F,
}

impl<F: Scalar> DualState<F> {
    /// Zero multipliers for a problem.
    pub fn zeros(problem: &AllocationProblem<'_, F>, step_scale: F) -> Self {
        let mut lambda = BTreeMap::new();
        let mut mu = BTreeMap::new();
        for (_, u) in problem.users() {
            lambda.insert(u.id, F::zero());
            if problem.min_rates_bps.contains_key(&u.id) {
                mu.insert(u.id, F::zero());
            }
        }
        Self {
            lambda,
            mu,
            nu: vec![F::zero(); problem.num_subchannels],
            iteration: 0,
            step_scale,
        }
    }

    /// Diminishing step for the upcoming update (1-based iteration).
    pub fn step(&self) -> F {
        self.step_scale / real::<F>((self.iteration + 1) as f64).sqrt()
    }

    /// Objective weight of a user: 1 for eMBB, the min-rate multiplier for
    /// uRLLC.
    pub fn weight(&self, user: UserId, slice: Slice) -> F {
        match slice {
            Slice::Urllc => self.mu.get(&user).copied().unwrap_or_else(F::zero),
            _ => F::one(),
        }
    }
}

/// Water-filling stationary power for one (user, cell, subchannel) triple:
/// `clamp(w / (ln2 · (λ + ν·g_macro)) − (noise + I)/g_signal, 0, p_max)`.
/// A zero price (λ = ν = 0) yields an infinite water level, so the power
/// cap binds.
pub fn kkt_power<F: Scalar>(
    problem: &AllocationProblem<'_, F>,
    cell: usize,
    user: &super::ProblemUser,
    subchannel: usize,
    duals: &DualState<F>,
) -> F {
    let denom = problem.noise_per_subchannel_w + problem.interference_w(cell, subchannel);
    kkt_power_inner(
        duals.weight(user.id, user.slice),
        duals.lambda.get(&user.id).copied().unwrap_or_else(F::zero),
        duals.nu[subchannel],
        problem.signal_gain(cell, user, subchannel),
        problem.macro_gain(user, subchannel),
        denom,
        problem.p_max_w,
    )
}

fn kkt_power_inner<F: Scalar>(
    w: F,
    lambda: F,
    nu: F,
    g_signal: F,
    g_macro: F,
    noise_plus_i: F,
    p_max: F,
) -> F {
    if !(w > F::zero()) || !(g_signal > F::zero()) {
        return F::zero();
    }
    let price = lambda + nu * g_macro;
    if !(price > F::zero()) {
        return p_max;
    }
    let ln2: F = real(std::f64::consts::LN_2);
    let p = w / (ln2 * price) - noise_plus_i / g_signal;
    p.max(F::zero()).min(p_max)
}

/// Result of one per-(cell, subchannel) subproblem.
#[derive(Debug, Clone)]
pub struct SubproblemOutcome<F> {
    /// Scored (user, power) candidates, one per user of the cell.
    pub candidates: Vec<Candidate<F>>,
    /// The winning candidate, if any score is positive.
    pub winner: Option<Candidate<F>>,
    /// Contribution to the dual function: `[max_u L_u]⁺` in
    /// spectral-efficiency units.
    pub value: F,
}

/// Solves the (cell, subchannel) subproblem: evaluates every user's
/// water-filling power and priced Lagrangian contribution
/// `L_u = w_u·log2(1+sinr) − λ_u·p − ν_n·p·g_macro`, keeping the
/// maximizer when positive (ties to the lowest user id).
pub fn solve_subproblem<F: Scalar>(
    problem: &AllocationProblem<'_, F>,
    cell: usize,
    subchannel: usize,
    duals: &DualState<F>,
) -> SubproblemOutcome<F> {
    let denom = problem.noise_per_subchannel_w + problem.interference_w(cell, subchannel);
    let nu = duals.nu[subchannel];
    let users = &problem.cells[cell].users;
    let mut candidates = Vec::with_capacity(users.len());
    let mut winner: Option<Candidate<F>> = None;
    for user in users {
        let w = duals.weight(user.id, user.slice);
        let lambda = duals.lambda.get(&user.id).copied().unwrap_or_else(F::zero);
        let g_signal = problem.signal_gain(cell, user, subchannel);
        let g_macro = problem.macro_gain(user, subchannel);
        let p = kkt_power_inner(w, lambda, nu, g_signal, g_macro, denom, problem.p_max_w);
        let rho = (F::one() + p * g_signal / denom).log2();
        let score = w * rho - lambda * p - nu * p * g_macro;
        let candidate = Candidate {
            user: user.id,
            score,
            power_w: p,
        };
        if candidate.score > F::zero() && candidate.power_w > F::zero() {
            winner = match winner {
                None => Some(candidate),
                Some(best) if candidate.score > best.score => Some(candidate),
                Some(best) => Some(best),
            };
        }
        candidates.push(candidate);
    }
    let value = winner.map(|c| c.score).unwrap_or_else(F::zero);
    SubproblemOutcome {
        candidates,
        winner,
        value,
    }
}

/// One projected subgradient step on all multipliers, from the pre-repair
/// winner allocation. Residuals are normalized per family (power by
/// `N·p_max²`, rates by the rate floor, interference by the cap squared
/// with the violation clipped at one cap) so steps are O(1); `s_t =
/// step_scale/√t` diminishes over iterations.
pub fn subgradient_update<F: Scalar>(
    duals: &DualState<F>,
    allocation: &Allocation<F>,
    problem: &AllocationProblem<'_, F>,
) -> DualState<F> {
    let s = duals.step();
    let n_sub = real::<F>(problem.num_subchannels as f64);
    let p_max = problem.p_max_w;
    let cap = problem.interference_cap_w;
    let bandwidth = problem.subchannel_bandwidth_hz;

    let mut power_sum: BTreeMap<UserId, F> = BTreeMap::new();
    let mut cap_load: Vec<F> = vec![F::zero(); problem.num_subchannels];
    for g in &allocation.grants {
        *power_sum.entry(g.user).or_insert_with(F::zero) += g.power_w;
        let user = problem.cells[g.cell]
            .users
            .iter()
            .find(|u| u.id == g.user)
            .expect("grant names a user of its cell");
        cap_load[g.subchannel] += g.power_w * problem.macro_gain(user, g.subchannel);
    }

    let mut next = duals.clone();
    for (id, lambda) in next.lambda.iter_mut() {
        let used = power_sum.get(id).copied().unwrap_or_else(F::zero);
        let residual = used - p_max;
        *lambda = (*lambda + s * residual / (n_sub * p_max * p_max)).max(F::zero());
    }
    for (id, mu) in next.mu.iter_mut() {
        let rho_min = problem.min_rates_bps[id] / bandwidth;
        if !(rho_min > F::zero()) {
            continue;
        }
        let rho = allocation
            .rates_bps
            .get(id)
            .copied()
            .unwrap_or_else(F::zero)
            / bandwidth;
        let relative = ((rho_min - rho) / rho_min).max(-F::one()).min(F::one());
        *mu = (*mu + s * relative).max(F::zero());
    }
    for (n, nu) in next.nu.iter_mut().enumerate() {
        let residual = (cap_load[n] - cap).min(cap);
        *nu = (*nu + s * residual / (cap * cap)).max(F::zero());
    }
    next.iteration += 1;
    next
}

/// Largest per-multiplier change between consecutive states, measured on
/// normalized multipliers (λ·p_max, μ, ν·cap) relative to max(1, old).
fn normalized_change<F: Scalar>(
    old: &DualState<F>,
    new: &DualState<F>,
    problem: &AllocationProblem<'_, F>,
) -> F {
    let mut worst = F::zero();
    let mut push = |old_hat: F, new_hat: F| {
        let delta = (new_hat - old_hat).abs() / old_hat.abs().max(F::one());
        if delta > worst {
            worst = delta;
        }
    };
    for (id, l) in &old.lambda {
        push(*l * problem.p_max_w, new.lambda[id] * problem.p_max_w);
    }
    for (id, m) in &old.mu {
        push(*m, new.mu[id]);
    }
    for (n, v) in old.nu.iter().enumerate() {
        push(
            *v * problem.interference_cap_w,
            new.nu[n] * problem.interference_cap_w,
        );
    }
    worst
}

/// Per-iteration solver telemetry.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct IterationRecord<F> {
    /// Dual function value (upper bound on the feasible objective), bps.
    pub dual_value_bps: F,
    /// Objective of the rounded primal this iteration, bps.
    pub primal_value_bps: F,
    pub primal_feasible: bool,
    pub multiplier_change: F,
}

/// Full solve telemetry: per-iteration values, convergence flag, and the
/// residual report of the returned allocation.
#[derive(Debug, Clone, Serialize)]
pub struct SolveDiagnostics<F> {
    pub iterations: Vec<IterationRecord<F>>,
    pub converged: bool,
    /// Iteration index of the returned allocation, if it came from the
    /// main loop.
    pub best_iteration: Option<usize>,
    /// Extra min-rate escalation passes taken after the main loop.
    pub polish_passes: usize,
    pub final_report: FeasibilityReport<F>,
}

/// Solver output: the best feasible rounded allocation found (or the last
/// rounded iterate if none was feasible — see `diagnostics.final_report`),
/// the final multipliers, and telemetry.
#[derive(Debug, Clone)]
pub struct DualSolution<F> {
    pub allocation: Allocation<F>,
    pub duals: DualState<F>,
    pub diagnostics: SolveDiagnostics<F>,
}

/// Objective the solver maximizes, in bps: the summed rates of all
/// non-uRLLC users (uRLLC enters through its rate floor only).
pub fn objective_bps<F: Scalar>(
    allocation: &Allocation<F>,
    problem: &AllocationProblem<'_, F>,
) -> F {
    problem
        .users()
        .filter(|(_, u)| u.slice != Slice::Urllc)
        .map(|(_, u)| {
            allocation
                .rates_bps
                .get(&u.id)
                .copied()
                .unwrap_or_else(F::zero)
        })
        .fold(F::zero(), |a, b| a + b)
}

/// Upper bound a multiplier state certifies: subproblem values plus the
/// constant terms `Σλ·p_max + Σν·cap − Σμ·ρ_min`, in bps.
fn dual_value_bps<F: Scalar>(
    subproblem_sum_se: F,
    duals: &DualState<F>,
    problem: &AllocationProblem<'_, F>,
) -> F {
    let bandwidth = problem.subchannel_bandwidth_hz;
    let mut constant = F::zero();
    for l in duals.lambda.values() {
        constant += *l * problem.p_max_w;
    }
    for v in &duals.nu {
        constant += *v * problem.interference_cap_w;
    }
    for (id, m) in &duals.mu {
        constant -= *m * problem.min_rates_bps[id] / bandwidth;
    }
    (subproblem_sum_se + constant) * bandwidth
}

fn evaluate_iteration<F: Scalar>(
    problem: &AllocationProblem<'_, F>,
    duals: &DualState<F>,
) -> (CandidateGrid<F>, F) {
    let num_cells = problem.cells.len();
    let mut grid = CandidateGrid::empty(num_cells, problem.num_subchannels);
    let mut sum = F::zero();
    for k in 0..num_cells {
        for n in 0..problem.num_subchannels {
            let outcome = solve_subproblem(problem, k, n, duals);
            sum += outcome.value;
            grid.slots[k][n] = outcome.candidates;
        }
    }
    (grid, dual_value_bps(sum, duals, problem))
}

/// Best achievable rate (bps) for one user given every subchannel at full
/// power and no co-tier interference — the min-rate feasibility pre-check
/// bound.
fn solo_rate_bound_bps<F: Scalar>(
    problem: &AllocationProblem<'_, F>,
    cell: usize,
    user: &super::ProblemUser,
) -> F {
    let mut rho = F::zero();
    for n in 0..problem.num_subchannels {
        let macro_part = match &problem.macro_schedule[n] {
            Some(tx) => {
                tx.power_w
                    * problem
                        .gains
                        .gain(tx.user_index, problem.cells[cell].station, n)
            }
            None => F::zero(),
        };
        let denom = problem.noise_per_subchannel_w + macro_part;
        let g = problem.signal_gain(cell, user, n);
        rho += (F::one() + problem.p_max_w * g / denom).log2();
    }
    rho * problem.subchannel_bandwidth_hz
}

/// Runs the full dual decomposition: min-rate pre-check, subgradient loop
/// with per-iteration rounding and best-feasible tracking, and a bounded
/// min-rate escalation phase if the loop never produced a feasible
/// allocation. Non-convergence within `max_iters` is reported in the
/// diagnostics, not an error.
pub fn solve_dual<F: Scalar>(
    problem: &AllocationProblem<'_, F>,
    params: &DualParams<F>,
) -> Result<DualSolution<F>, AllocError> {
    let violations = problem.check();
    if !violations.is_empty() {
        return Err(AllocError::InvalidProblem { violations });
    }

    // Fail fast if any rate floor is unreachable even in the best case.
    for (k, user) in problem.users() {
        if let Some(r_min) = problem.min_rates_bps.get(&user.id) {
            let bound = solo_rate_bound_bps(problem, k, user);
            if bound < *r_min {
                return Err(AllocError::InfeasibleMinRate {
                    user: user.id.0,
                    achievable_bps: bound.to_f64().unwrap_or(f64::NAN),
                    required_bps: r_min.to_f64().unwrap_or(f64::NAN),
                });
            }
        }
    }

    let mut duals = DualState::zeros(problem, params.step_scale);
    let mut records: Vec<IterationRecord<F>> = Vec::with_capacity(params.max_iters);
    let mut best: Option<(F, usize, Allocation<F>)> = None;
    let mut last_rounded: Option<Allocation<F>> = None;
    let mut converged = false;

    for iter in 0..params.max_iters {
        let (grid, dual_bps) = evaluate_iteration(problem, &duals);

        // Subgradients come from the un-repaired winners; the feasible
        // candidate comes from the repaired rounding.
        let mut pre_repair = Allocation {
            grants: select_winners(&grid),
            rates_bps: BTreeMap::new(),
        };
        recompute_rates(&mut pre_repair, problem);

        let rounded = round_allocation(&grid, problem);
        let report = check_feasibility(&rounded, problem);
        let primal_bps = objective_bps(&rounded, problem);
        if report.feasible {
            let better = match &best {
                None => true,
                Some((value, _, _)) => primal_bps > *value,
            };
            if better {
                best = Some((primal_bps, iter, rounded.clone()));
            }
        }

        let next = subgradient_update(&duals, &pre_repair, problem);
        let change = normalized_change(&duals, &next, problem);
        records.push(IterationRecord {
            dual_value_bps: dual_bps,
            primal_value_bps: primal_bps,
            primal_feasible: report.feasible,
            multiplier_change: change,
        });
        last_rounded = Some(rounded);
        duals = next;

        if change < params.tolerance {
            converged = true;
            break;
        }
    }

    // Escalate rate-floor prices until the rounding meets every floor, if
    // the loop never did. Bounded and deterministic.
    let mut polish_passes = 0;
    if best.is_none() && !problem.min_rates_bps.is_empty() {
        const MAX_POLISH: usize = 60;
        while polish_passes < MAX_POLISH {
            polish_passes += 1;
            let reference = last_rounded.as_ref().expect("at least one iteration ran");
            for (id, r_min) in &problem.min_rates_bps {
                let rate = reference.rates_bps.get(id).copied().unwrap_or_else(F::zero);
                if rate < *r_min {
                    let mu = duals.mu.get_mut(id).expect("mu tracks every floor");
                    *mu = *mu * real::<F>(2.0) + F::one();
                }
            }
            let (grid, _) = evaluate_iteration(problem, &duals);
            let rounded = round_allocation(&grid, problem);
            let report = check_feasibility(&rounded, problem);
            let feasible = report.feasible;
            if feasible {
                best = Some((objective_bps(&rounded, problem), usize::MAX, rounded));
            } else {
                last_rounded = Some(rounded);
            }
            if feasible {
                break;
            }
        }
    }

    let (allocation, best_iteration) = match best {
        Some((_, iter, alloc)) => {
            let idx = if iter == usize::MAX { None } else { Some(iter) };
            (alloc, idx)
        }
        None => (last_rounded.unwrap_or_else(Allocation::empty), None),
    };
    let final_report = check_feasibility(&allocation, problem);
    Ok(DualSolution {
        allocation,
        duals,
        diagnostics: SolveDiagnostics {
            iterations: records,
            converged,
            best_iteration,
            polish_passes,
            final_report,
        },
    })
}

//! Network-level simulation: macro round-robin scheduling, the co-tier
//! interference fixed point, per-slice capacity accounting, and the
//! small-cell density sweep with CSV/SVG reporting.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::allocator::dual::{solve_dual, DualParams};
use crate::allocator::{
    check_feasibility, subchannel_capacity, AllocError, Allocation, AllocationProblem,
    FeasibilityReport, MacroTx, ProblemCell, ProblemUser,
};
use crate::channel::{build_gain_tensor, dbm_to_watt, GainTensor};
use crate::num::{real, Scalar};
use crate::scenario::{
    generate_topology, Attachment, ScenarioConfig, ScenarioError, Slice, Topology, UserId,
};

/// Round-robin macro schedule: subchannel `n` at TTI `t` serves user
/// `(t·N + n) mod U`.
pub fn schedule_macro(num_macro_users: usize, num_subchannels: usize, tti: usize) -> Vec<usize> {
    assert!(num_macro_users >= 1 && num_subchannels >= 1);
    (0..num_subchannels)
        .map(|n| (tti * num_subchannels + n) % num_macro_users)
        .collect()
}

/// Fixed-point loop parameters: damped best-response rounds over the
/// co-tier interference estimate, and the TTI horizon for macro-tier
/// capacity averaging.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FixedPointParams<F> {
    pub rounds: usize,
    pub damping: F,
    pub ttis: usize,
}

impl<F: Scalar> Default for FixedPointParams<F> {
    fn default() -> Self {
        Self {
            rounds: 5,
            damping: real(0.5),
            ttis: 10,
        }
    }
}

/// Tensor row of every user, in topology order.
fn user_rows<F: Scalar>(topology: &Topology<F>) -> BTreeMap<UserId, usize> {
    topology
        .users
        .iter()
        .enumerate()
        .map(|(row, u)| (u.id, row))
        .collect()
}

/// Noise power per subchannel (W) for a config.
pub fn noise_per_subchannel_w<F: Scalar>(config: &ScenarioConfig<F>) -> F {
    dbm_to_watt(config.noise_psd_dbm_hz) * config.subchannel_bandwidth_hz()
}

/// Assembles the allocation problem for one interference round: the TTI-0
/// macro schedule with uniform per-user power, the config's constraint
/// scalars, and the given co-tier interference estimate.
pub fn build_problem<'a, F: Scalar>(
    topology: &Topology<F>,
    config: &ScenarioConfig<F>,
    gains: &'a GainTensor<F>,
    co_tier_w: Vec<Vec<F>>,
) -> AllocationProblem<'a, F> {
    let rows = user_rows(topology);
    let p_max_w = dbm_to_watt(config.max_tx_power_dbm);

    let mut cells = Vec::with_capacity(topology.small_cells.len());
    let mut min_rates_bps = BTreeMap::new();
    for (k, cell) in topology.small_cells.iter().enumerate() {
        let users: Vec<ProblemUser> = topology
            .cell_users(cell.id)
            .map(|u| ProblemUser {
                id: u.id,
                index: rows[&u.id],
                slice: u.slice,
            })
            .collect();
        for u in &users {
            if u.slice == Slice::Urllc {
                min_rates_bps.insert(u.id, config.urllc_min_rate_bps);
            }
        }
        cells.push(ProblemCell {
            id: cell.id,
            station: 1 + k,
            users,
        });
    }

    let macro_schedule = macro_tx_schedule(topology, config, 0, p_max_w);

    AllocationProblem {
        gains,
        cells,
        macro_schedule,
        noise_per_subchannel_w: noise_per_subchannel_w(config),
        p_max_w,
        interference_cap_w: dbm_to_watt(config.interference_threshold_dbm),
        min_rates_bps,
        subchannel_bandwidth_hz: config.subchannel_bandwidth_hz(),
        co_tier_w,
        num_subchannels: config.num_subchannels,
    }
}

/// Per-subchannel macro transmitters at one TTI: the round-robin user with
/// its budget split uniformly over the subchannels it holds.
fn macro_tx_schedule<F: Scalar>(
    topology: &Topology<F>,
    config: &ScenarioConfig<F>,
    tti: usize,
    p_max_w: F,
) -> Vec<Option<MacroTx<F>>> {
    let macro_rows: Vec<usize> = topology
        .users
        .iter()
        .enumerate()
        .filter(|(_, u)| u.attachment == Attachment::Macro)
        .map(|(row, _)| row)
        .collect();
    if macro_rows.is_empty() {
        return vec![None; config.num_subchannels];
    }
    let schedule = schedule_macro(macro_rows.len(), config.num_subchannels, tti);
    let mut share = vec![0usize; macro_rows.len()];
    for &m in &schedule {
        share[m] += 1;
    }
    schedule
        .iter()
        .map(|&m| {
            Some(MacroTx {
                user_index: macro_rows[m],
                power_w: p_max_w / real::<F>(share[m] as f64),
            })
        })
        .collect()
}

/// Total IoT (macro-tier) uplink capacity in bps, averaged over
/// `ttis` round-robin slots, with cross-tier interference taken from the
/// small-cell allocation.
pub fn macro_uplink_capacity<F: Scalar>(
    topology: &Topology<F>,
    gains: &GainTensor<F>,
    allocation: &Allocation<F>,
    config: &ScenarioConfig<F>,
    ttis: usize,
) -> F {
    assert!(ttis >= 1);
    let rows = user_rows(topology);
    let noise = noise_per_subchannel_w(config);
    let bandwidth = config.subchannel_bandwidth_hz();
    let p_max_w = dbm_to_watt(config.max_tx_power_dbm);

    let mut cross_tier = vec![F::zero(); config.num_subchannels];
    for grant in &allocation.grants {
        cross_tier[grant.subchannel] +=
            grant.power_w * gains.gain(rows[&grant.user], 0, grant.subchannel);
    }

    let mut total = F::zero();
    for tti in 0..ttis {
        let schedule = macro_tx_schedule(topology, config, tti, p_max_w);
        for (n, tx) in schedule.iter().enumerate() {
            if let Some(tx) = tx {
                let sinr = tx.power_w * gains.gain(tx.user_index, 0, n) / (noise + cross_tier[n]);
                total += subchannel_capacity(bandwidth, sinr);
            }
        }
    }
    total / real::<F>(ttis as f64)
}

/// Total capacity of each slice for one solved scenario (bps).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SliceCapacities<F> {
    pub embb_bps: F,
    pub urllc_bps: F,
    pub iot_bps: F,
}

/// Result of one damped interference fixed point.
#[derive(Debug, Clone)]
pub struct FixedPointOutcome<F> {
    pub allocation: Allocation<F>,
    pub capacities: SliceCapacities<F>,
    /// Total eMBB capacity after each round (fixed-point convergence
    /// telemetry).
    pub round_embb_bps: Vec<F>,
    /// Constraint slacks of the final allocation.
    pub final_report: FeasibilityReport<F>,
    /// Whether the final round's allocation passed all feasibility checks.
    pub feasible: bool,
}

/// Co-tier interference each cell receives from the other cells'
/// granted transmitters, per (cell, subchannel).
fn co_tier_from_allocation<F: Scalar>(
    allocation: &Allocation<F>,
    topology: &Topology<F>,
    gains: &GainTensor<F>,
    num_subchannels: usize,
) -> Vec<Vec<F>> {
    let rows = user_rows(topology);
    let num_cells = topology.small_cells.len();
    let mut co = vec![vec![F::zero(); num_subchannels]; num_cells];
    for grant in &allocation.grants {
        let row = rows[&grant.user];
        for (k, cell_co) in co.iter_mut().enumerate() {
            if k != grant.cell {
                cell_co[grant.subchannel] +=
                    grant.power_w * gains.gain(row, 1 + k, grant.subchannel);
            }
        }
    }
    co
}

/// Solves the scenario by damped best response on the co-tier
/// interference: round 0 assumes none, each later round re-solves against
/// `damping·I_new + (1−damping)·I_old` from the previous allocation.
/// Returns the final allocation and the per-slice capacity split.
pub fn interference_fixed_point<F: Scalar>(
    topology: &Topology<F>,
    gains: &GainTensor<F>,
    config: &ScenarioConfig<F>,
    solver: &DualParams<F>,
    params: &FixedPointParams<F>,
) -> Result<FixedPointOutcome<F>, AllocError> {
    assert!(params.rounds >= 1);
    assert!(params.damping > F::zero() && params.damping <= F::one());

    let num_cells = topology.small_cells.len();
    let mut co_tier = vec![vec![F::zero(); config.num_subchannels]; num_cells];
    let mut allocation = Allocation::empty();
    let mut round_embb_bps = Vec::with_capacity(params.rounds);
    let mut feasible = true;

    for round in 0..params.rounds {
        let problem = build_problem(topology, config, gains, co_tier.clone());
        let solution = solve_dual(&problem, solver)?;
        feasible = solution.diagnostics.final_report.feasible;
        round_embb_bps.push(solution.allocation.slice_total_bps(&problem, Slice::Embb));
        allocation = solution.allocation;

        if round + 1 < params.rounds {
            let computed =
                co_tier_from_allocation(&allocation, topology, gains, config.num_subchannels);
            for k in 0..num_cells {
                for n in 0..config.num_subchannels {
                    co_tier[k][n] = params.damping * computed[k][n]
                        + (F::one() - params.damping) * co_tier[k][n];
                }
            }
        }
    }

    let final_problem = build_problem(topology, config, gains, co_tier);
    let report = check_feasibility(&allocation, &final_problem);
    let capacities = SliceCapacities {
        embb_bps: allocation.slice_total_bps(&final_problem, Slice::Embb),
        urllc_bps: allocation.slice_total_bps(&final_problem, Slice::Urllc),
        iot_bps: macro_uplink_capacity(topology, gains, &allocation, config, params.ttis),
    };
    let feasible = feasible && report.feasible;
    Ok(FixedPointOutcome {
        allocation,
        capacities,
        round_embb_bps,
        final_report: report,
        feasible,
    })
}

/// One aggregated sweep data point: mean and deviation of a slice's total
/// capacity at one (density, users-per-cell) setting.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SliceReport<F> {
    pub num_small_cells: usize,
    pub users_per_small_cell: usize,
    pub slice: Slice,
    pub mean_capacity_bps: F,
    /// Population standard deviation over seeds.
    pub std_dev_bps: F,
    pub num_seeds: usize,
}

/// The sweep grid: small-cell densities × users-per-cell × seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepPlan {
    pub num_small_cells: Vec<usize>,
    pub users_per_small_cell: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl Default for SweepPlan {
    fn default() -> Self {
        Self {
            num_small_cells: vec![10, 20, 30, 40, 50],
            users_per_small_cell: vec![2, 4],
            seeds: (1..=20).collect(),
        }
    }
}

/// Sweep results plus warnings about any skipped seeds.
#[derive(Debug, Clone)]
pub struct SweepOutput<F> {
    pub reports: Vec<SliceReport<F>>,
    pub warnings: Vec<String>,
}

/// Sweep-level failures (only fatal ones; per-seed failures become
/// warnings).
#[derive(Debug, Error)]
pub enum SweepError {
    #[error("EmptySweep: sweep needs at least one density, user count, and seed")]
    EmptySweep,
}

fn evaluate_instance<F: Scalar>(
    base: &ScenarioConfig<F>,
    solver: &DualParams<F>,
    params: &FixedPointParams<F>,
    cells: usize,
    users: usize,
    seed: u64,
) -> Result<SliceCapacities<F>, String> {
    let config = ScenarioConfig {
        num_small_cells: cells,
        users_per_small_cell: users,
        seed,
        ..base.clone()
    };
    let topology = generate_topology(&config).map_err(|e| e.to_string())?;
    let gains = build_gain_tensor(&topology, seed, 0, config.num_subchannels);
    let outcome = interference_fixed_point(&topology, &gains, &config, solver, params)
        .map_err(|e| e.to_string())?;
    Ok(outcome.capacities)
}

/// Runs the full density sweep: for every (density, users-per-cell, seed)
/// instance, generates a topology and channel realization, solves the
/// interference fixed point, and aggregates per-slice means and standard
/// deviations over seeds. Instances run in parallel; results are reduced
/// in a fixed order so output is identical for any thread count. A failed
/// seed is skipped with a warning.
pub fn run_sweep<F: Scalar>(
    base: &ScenarioConfig<F>,
    solver: &DualParams<F>,
    params: &FixedPointParams<F>,
    plan: &SweepPlan,
) -> Result<SweepOutput<F>, SweepError> {
    if plan.num_small_cells.is_empty()
        || plan.users_per_small_cell.is_empty()
        || plan.seeds.is_empty()
    {
        return Err(SweepError::EmptySweep);
    }

    let instances: Vec<(usize, usize, u64)> = plan
        .num_small_cells
        .iter()
        .flat_map(|&c| {
            plan.users_per_small_cell
                .iter()
                .flat_map(move |&u| plan.seeds.iter().map(move |&s| (c, u, s)))
        })
        .collect();

    let results: Vec<Result<SliceCapacities<F>, String>> = instances
        .par_iter()
        .map(|&(c, u, s)| evaluate_instance(base, solver, params, c, u, s))
        .collect();

    let mut warnings = Vec::new();
    let mut by_setting: BTreeMap<(usize, usize), Vec<SliceCapacities<F>>> = BTreeMap::new();
    for (&(c, u, s), result) in instances.iter().zip(&results) {
        match result {
            Ok(caps) => by_setting.entry((c, u)).or_default().push(*caps),
            Err(msg) => warnings.push(format!(
                "skipping seed {s} at {c} small cells, {u} users/cell: {msg}"
            )),
        }
    }

    let mut reports = Vec::new();
    for &cells in &plan.num_small_cells {
        for &users in &plan.users_per_small_cell {
            let Some(samples) = by_setting.get(&(cells, users)) else {
                continue;
            };
            for slice in [Slice::Embb, Slice::Urllc, Slice::Iot] {
                let values: Vec<F> = samples
                    .iter()
                    .map(|c| match slice {
                        Slice::Embb => c.embb_bps,
                        Slice::Urllc => c.urllc_bps,
                        Slice::Iot => c.iot_bps,
                    })
                    .collect();
                let (mean, std) = mean_std(&values);
                reports.push(SliceReport {
                    num_small_cells: cells,
                    users_per_small_cell: users,
                    slice,
                    mean_capacity_bps: mean,
                    std_dev_bps: std,
                    num_seeds: values.len(),
                });
            }
        }
    }
    Ok(SweepOutput { reports, warnings })
}

/// Two-pass mean and population standard deviation.
pub fn mean_std<F: Scalar>(values: &[F]) -> (F, F) {
    let n = real::<F>(values.len() as f64);
    let mean = values.iter().copied().fold(F::zero(), |a, b| a + b) / n;
    let var = values
        .iter()
        .map(|v| (*v - mean) * (*v - mean))
        .fold(F::zero(), |a, b| a + b)
        / n;
    (mean, var.sqrt())
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman<F: Scalar>(xs: &[F], ys: &[F]) -> F {
    assert_eq!(xs.len(), ys.len());
    assert!(xs.len() >= 2);
    let rx = ranks(xs);
    let ry = ranks(ys);
    pearson(&rx, &ry)
}

fn ranks<F: Scalar>(values: &[F]) -> Vec<F> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite values"));
    let mut out = vec![F::zero(); values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // 1-based ranks; tied runs share the average rank.
        let avg = real::<F>((i + j + 2) as f64 / 2.0);
        for &idx in &order[i..=j] {
            out[idx] = avg;
        }
        i = j + 1;
    }
    out
}

fn pearson<F: Scalar>(xs: &[F], ys: &[F]) -> F {
    let (mx, _) = mean_std(xs);
    let (my, _) = mean_std(ys);
    let mut num = F::zero();
    let mut dx = F::zero();
    let mut dy = F::zero();
    for (x, y) in xs.iter().zip(ys) {
        let a = *x - mx;
        let b = *y - my;
        num += a * b;
        dx += a * a;
        dy += b * b;
    }
    num / (dx.sqrt() * dy.sqrt())
}

/// Report I/O failures.
#[derive(Debug, Error)]
pub enum ReportError {
    #[error("IoFailure: writing {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Renders sweep reports as CSV, sorted by (density, users per cell,
/// slice), with plain decimal formatting.
pub fn report_csv<F: Scalar>(reports: &[SliceReport<F>]) -> String {
    let mut sorted: Vec<&SliceReport<F>> = reports.iter().collect();
    sorted.sort_by_key(|r| (r.num_small_cells, r.users_per_small_cell, r.slice));
    let mut out =
        String::from("num_small_cells,users_per_cell,slice,mean_capacity_bps,std_bps,num_seeds\n");
    for r in sorted {
        let mean = r.mean_capacity_bps.to_f64().unwrap_or(f64::NAN);
        let std = r.std_dev_bps.to_f64().unwrap_or(f64::NAN);
        writeln!(
            out,
            "{},{},{},{:.3},{:.3},{}",
            r.num_small_cells,
            r.users_per_small_cell,
            r.slice.label(),
            mean,
            std,
            r.num_seeds
        )
        .expect("string writes cannot fail");
    }
    out
}

/// Writes the CSV report to `path`.
pub fn write_report<F: Scalar>(reports: &[SliceReport<F>], path: &Path) -> Result<(), ReportError> {
    std::fs::write(path, report_csv(reports)).map_err(|source| ReportError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Writes one minimal SVG line chart per slice (`capacity_<slice>.svg`):
/// mean capacity versus density, one polyline per users-per-cell setting.
pub fn write_charts<F: Scalar>(
    reports: &[SliceReport<F>],
    dir: &Path,
) -> Result<Vec<PathBuf>, ReportError> {
    let mut written = Vec::new();
    for slice in [Slice::Embb, Slice::Urllc, Slice::Iot] {
        let rows: Vec<&SliceReport<F>> = reports.iter().filter(|r| r.slice == slice).collect();
        if rows.is_empty() {
            continue;
        }
        let path = dir.join(format!("capacity_{}.svg", slice.label()));
        let svg = slice_chart_svg(slice, &rows);
        std::fs::write(&path, svg).map_err(|source| ReportError::Io {
            path: path.display().to_string(),
            source,
        })?;
        written.push(path);
    }
    Ok(written)
}

fn slice_chart_svg<F: Scalar>(slice: Slice, rows: &[&SliceReport<F>]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 420.0;
    const ML: f64 = 80.0;
    const MR: f64 = 30.0;
    const MT: f64 = 40.0;
    const MB: f64 = 50.0;
    const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

    let xs: Vec<usize> = {
        let mut v: Vec<usize> = rows.iter().map(|r| r.num_small_cells).collect();
        v.sort_unstable();
        v.dedup();
        v
    };
    let user_counts: Vec<usize> = {
        let mut v: Vec<usize> = rows.iter().map(|r| r.users_per_small_cell).collect();
        v.sort_unstable();
        v.dedup();
        v
    };
    let y_max = rows
        .iter()
        .map(|r| r.mean_capacity_bps.to_f64().unwrap_or(0.0))
        .fold(0.0f64, f64::max)
        .max(1.0);
    let x_min = *xs.first().expect("non-empty rows") as f64;
    let x_max = *xs.last().expect("non-empty rows") as f64;
    let x_span = (x_max - x_min).max(1.0);

    let x_of = |cells: f64| ML + (cells - x_min) / x_span * (W - ML - MR);
    let y_of = |bps: f64| H - MB - bps / y_max * (H - MT - MB);

    let mut svg = String::new();
    let _ = write!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {W} {H}\" \
         font-family=\"sans-serif\" font-size=\"13\">\n\
         <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <text x=\"{:.1}\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">\
         Total {} capacity vs small-cell density</text>\n",
        W / 2.0,
        slice.label()
    );
    // Axes.
    let _ = write!(
        svg,
        "<line x1=\"{ML}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"black\"/>\n\
         <line x1=\"{ML}\" y1=\"{MT}\" x2=\"{ML}\" y2=\"{:.1}\" stroke=\"black\"/>\n",
        H - MB,
        W - MR,
        H - MB,
        H - MB
    );
    // X ticks.
    for &cells in &xs {
        let x = x_of(cells as f64);
        let _ = write!(
            svg,
            "<line x1=\"{x:.1}\" y1=\"{:.1}\" x2=\"{x:.1}\" y2=\"{:.1}\" stroke=\"black\"/>\n\
             <text x=\"{x:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{cells}</text>\n",
            H - MB,
            H - MB + 6.0,
            H - MB + 22.0
        );
    }
    let _ = writeln!(
        svg,
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">number of small cells</text>",
        ML + (W - ML - MR) / 2.0,
        H - 10.0
    );
    // Y ticks at quarters, in Mbps.
    for q in 0..=4 {
        let bps = y_max * q as f64 / 4.0;
        let y = y_of(bps);
        let _ = write!(
            svg,
            "<line x1=\"{:.1}\" y1=\"{y:.1}\" x2=\"{ML}\" y2=\"{y:.1}\" stroke=\"black\"/>\n\
             <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{:.1}</text>\n",
            ML - 6.0,
            ML - 10.0,
            y + 4.0,
            bps / 1.0e6
        );
    }
    let _ = writeln!(
        svg,
        "<text x=\"18\" y=\"{:.1}\" text-anchor=\"middle\" \
         transform=\"rotate(-90 18 {:.1})\">mean capacity (Mbps)</text>",
        MT + (H - MT - MB) / 2.0,
        MT + (H - MT - MB) / 2.0
    );
    // One polyline per users-per-cell setting.
    for (i, &users) in user_counts.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let mut points = String::new();
        for &cells in &xs {
            if let Some(r) = rows
                .iter()
                .find(|r| r.num_small_cells == cells && r.users_per_small_cell == users)
            {
                let _ = write!(
                    points,
                    "{:.1},{:.1} ",
                    x_of(cells as f64),
                    y_of(r.mean_capacity_bps.to_f64().unwrap_or(0.0))
                );
            }
        }
        let _ = write!(
            svg,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>\n\
             <text x=\"{:.1}\" y=\"{:.1}\" fill=\"{color}\">{users} users/cell</text>\n",
            points.trim_end(),
            W - MR - 130.0,
            MT + 20.0 + 18.0 * i as f64
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Convenience: a full single-scenario evaluation (topology, gains, fixed
/// point) for the CLI `solve` command.
pub fn solve_scenario<F: Scalar>(
    config: &ScenarioConfig<F>,
    solver: &DualParams<F>,
    params: &FixedPointParams<F>,
) -> Result<(Topology<F>, FixedPointOutcome<F>), SolveScenarioError> {
    let topology = generate_topology(config)?;
    let gains = build_gain_tensor(&topology, config.seed, 0, config.num_subchannels);
    let outcome = interference_fixed_point(&topology, &gains, config, solver, params)?;
    Ok((topology, outcome))
}

/// Errors from the combined generate-and-solve path.
#[derive(Debug, Error)]
pub enum SolveScenarioError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Alloc(#[from] AllocError),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{CellId, Point, SmallCell, User};
    use approx::assert_relative_eq;

    fn small_config(cells: usize, users: usize, seed: u64) -> ScenarioConfig<f64> {
        ScenarioConfig {
            num_small_cells: cells,
            users_per_small_cell: users,
            num_macro_users: 10,
            num_subchannels: 8,
            seed,
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn round_robin_first_tti_is_identity_when_counts_match() {
        let s = schedule_macro(50, 50, 0);
        assert_eq!(s, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn round_robin_covers_every_user_once_per_tti() {
        for tti in [0, 1, 7, 23] {
            let mut s = schedule_macro(50, 50, tti);
            s.sort_unstable();
            assert_eq!(s, (0..50).collect::<Vec<_>>());
        }
    }

    #[test]
    fn round_robin_wraps_modulo_users() {
        assert_eq!(schedule_macro(3, 4, 0), vec![0, 1, 2, 0]);
        assert_eq!(schedule_macro(3, 4, 1), vec![1, 2, 0, 1]);
    }

    #[test]
    fn macro_power_splits_across_held_subchannels() {
        let config = small_config(0, 2, 1);
        let mut cfg = config;
        cfg.num_macro_users = 3;
        cfg.num_subchannels = 4;
        let topology = generate_topology(&cfg).unwrap();
        let p_max = dbm_to_watt(23.0);
        let schedule = macro_tx_schedule(&topology, &cfg, 0, p_max);
        // User 0 holds subchannels 0 and 3 → half power each.
        assert_relative_eq!(schedule[0].unwrap().power_w, p_max / 2.0);
        assert_relative_eq!(schedule[1].unwrap().power_w, p_max);
        assert_relative_eq!(schedule[3].unwrap().power_w, p_max / 2.0);
    }

    #[test]
    fn zero_small_cells_give_noise_limited_iot() {
        let config = small_config(0, 2, 3);
        let topology = generate_topology(&config).unwrap();
        let gains = build_gain_tensor(&topology, 3, 0, config.num_subchannels);
        let noise_limited =
            macro_uplink_capacity(&topology, &gains, &Allocation::empty(), &config, 10);
        assert!(noise_limited > 0.0);

        let outcome = interference_fixed_point(
            &topology,
            &gains,
            &config,
            &DualParams::default(),
            &FixedPointParams::default(),
        )
        .unwrap();
        assert_eq!(outcome.capacities.embb_bps, 0.0);
        assert_eq!(outcome.capacities.urllc_bps, 0.0);
        assert_relative_eq!(outcome.capacities.iot_bps, noise_limited);
    }

    #[test]
    fn cross_tier_interference_lowers_iot_capacity() {
        let config = small_config(2, 2, 5);
        let topology = generate_topology(&config).unwrap();
        let gains = build_gain_tensor(&topology, 5, 0, config.num_subchannels);
        let baseline = macro_uplink_capacity(&topology, &gains, &Allocation::empty(), &config, 10);
        let outcome = interference_fixed_point(
            &topology,
            &gains,
            &config,
            &DualParams::default(),
            &FixedPointParams::default(),
        )
        .unwrap();
        assert!(!outcome.allocation.grants.is_empty());
        assert!(outcome.capacities.iot_bps < baseline);
    }

    #[test]
    fn single_cell_fixed_point_is_stationary() {
        let config = small_config(1, 2, 7);
        let topology = generate_topology(&config).unwrap();
        let gains = build_gain_tensor(&topology, 7, 0, config.num_subchannels);
        let outcome = interference_fixed_point(
            &topology,
            &gains,
            &config,
            &DualParams::default(),
            &FixedPointParams::default(),
        )
        .unwrap();
        let first = outcome.round_embb_bps[0];
        for r in &outcome.round_embb_bps {
            assert_relative_eq!(*r, first, max_relative = 1e-12);
        }
    }

    /// Two cells a kilometer apart: co-tier coupling is negligible, so the
    /// second round reproduces the first.
    #[test]
    fn distant_cells_make_round_one_match_round_zero() {
        let mut config = small_config(2, 2, 9);
        config.macro_radius = 2500.0;
        let mut topology = generate_topology(&config).unwrap();
        topology.small_cells = vec![
            SmallCell {
                id: CellId(0),
                center: Point::new(-2000.0, 0.0),
            },
            SmallCell {
                id: CellId(1),
                center: Point::new(2000.0, 0.0),
            },
        ];
        let centers: Vec<Point<f64>> = topology.small_cells.iter().map(|c| c.center).collect();
        for user in topology.users.iter_mut() {
            if let Attachment::SmallCell(c) = user.attachment {
                let center = centers[c.0 as usize];
                user.position = Point::new(center.x + 2.0, center.y + 1.0);
            }
        }
        let gains = build_gain_tensor(&topology, 9, 0, config.num_subchannels);
        let outcome = interference_fixed_point(
            &topology,
            &gains,
            &config,
            &DualParams::default(),
            &FixedPointParams::default(),
        )
        .unwrap();
        let relative = (outcome.round_embb_bps[1] - outcome.round_embb_bps[0]).abs()
            / outcome.round_embb_bps[0];
        assert!(relative < 1e-3, "relative change {relative}");
    }

    #[test]
    fn default_fixed_point_settles_within_one_percent() {
        let config = ScenarioConfig {
            num_small_cells: 25,
            ..ScenarioConfig::<f64>::default()
        };
        let topology = generate_topology(&config).unwrap();
        let gains = build_gain_tensor(&topology, config.seed, 0, config.num_subchannels);
        let outcome = interference_fixed_point(
            &topology,
            &gains,
            &config,
            &DualParams::default(),
            &FixedPointParams::default(),
        )
        .unwrap();
        let rounds = &outcome.round_embb_bps;
        assert_eq!(rounds.len(), 5);
        for r in 4..rounds.len() {
            let change = (rounds[r] - rounds[r - 1]).abs() / rounds[r - 1];
            assert!(change < 0.01, "round {r} changed by {change}");
        }
        assert!(outcome.feasible);
    }

    #[test]
    #[ignore]
    fn calibration_probe() {
        let base = ScenarioConfig::<f64>::default();
        let plan = SweepPlan::default();
        let start = std::time::Instant::now();
        let out = run_sweep(
            &base,
            &DualParams::default(),
            &FixedPointParams::default(),
            &plan,
        )
        .unwrap();
        let secs = start.elapsed().as_secs_f64();
        eprintln!("=== sweep: {secs:.1}s, warnings {}", out.warnings.len());
        let series = |users: usize, slice: Slice| -> Vec<f64> {
            out.reports
                .iter()
                .filter(|r| r.users_per_small_cell == users && r.slice == slice)
                .map(|r| r.mean_capacity_bps)
                .collect()
        };
        let cells: Vec<f64> = plan.num_small_cells.iter().map(|&c| c as f64).collect();
        for users in [2usize, 4] {
            let embb = series(users, Slice::Embb);
            let urllc = series(users, Slice::Urllc);
            let iot = series(users, Slice::Iot);
            let iot_std: Vec<f64> = out
                .reports
                .iter()
                .filter(|r| r.users_per_small_cell == users && r.slice == Slice::Iot)
                .map(|r| r.std_dev_bps)
                .collect();
            eprintln!(
                "users {users}: embb {:?}",
                embb.iter().map(|v| (v / 1e6).round()).collect::<Vec<_>>()
            );
            eprintln!(
                "  urllc {:?}",
                urllc.iter().map(|v| (v / 1e6).round()).collect::<Vec<_>>()
            );
            eprintln!(
                "  iot {:?} (std {:?})",
                iot.iter()
                    .map(|v| format!("{:.3}", v / 1e6))
                    .collect::<Vec<_>>(),
                iot_std
                    .iter()
                    .map(|v| format!("{:.2}", v / 1e6))
                    .collect::<Vec<_>>()
            );
            eprintln!(
                "  spearman embb {:.3} iot {:.3} ratio@50 {:.1}",
                spearman(&cells, &embb),
                spearman(&cells, &iot),
                embb[4] / urllc[4]
            );
        }
        let e2 = series(2, Slice::Embb);
        let e4 = series(4, Slice::Embb);
        let delta: Vec<String> = e4
            .iter()
            .zip(&e2)
            .map(|(a, b)| format!("{:+.1}", (a - b) / 1e6))
            .collect();
        eprintln!("embb 4u-2u deltas (Mbps): {delta:?}");
    }

    #[test]
    fn sweep_cardinality_and_determinism() {
        let base = small_config(0, 2, 0);
        let plan = SweepPlan {
            num_small_cells: vec![2, 4],
            users_per_small_cell: vec![2, 4],
            seeds: vec![1, 2, 3],
        };
        let a = run_sweep(
            &base,
            &DualParams::default(),
            &FixedPointParams::default(),
            &plan,
        )
        .unwrap();
        assert_eq!(a.reports.len(), 2 * 2 * 3);
        assert!(a.warnings.is_empty());
        for r in &a.reports {
            assert_eq!(r.num_seeds, 3);
        }
        let b = run_sweep(
            &base,
            &DualParams::default(),
            &FixedPointParams::default(),
            &plan,
        )
        .unwrap();
        assert_eq!(report_csv(&a.reports), report_csv(&b.reports));
    }

    #[test]
    fn sweep_rejects_empty_plan() {
        let base = small_config(0, 2, 0);
        let plan = SweepPlan {
            num_small_cells: vec![],
            users_per_small_cell: vec![2],
            seeds: vec![1],
        };
        assert!(matches!(
            run_sweep(
                &base,
                &DualParams::default(),
                &FixedPointParams::default(),
                &plan
            ),
            Err(SweepError::EmptySweep)
        ));
    }

    #[test]
    fn csv_shape_and_header() {
        let reports = vec![
            SliceReport {
                num_small_cells: 10,
                users_per_small_cell: 2,
                slice: Slice::Iot,
                mean_capacity_bps: 1.23456789e8,
                std_dev_bps: 4.5e6,
                num_seeds: 20,
            },
            SliceReport {
                num_small_cells: 10,
                users_per_small_cell: 2,
                slice: Slice::Embb,
                mean_capacity_bps: 2.0e9,
                std_dev_bps: 1.0e8,
                num_seeds: 20,
            },
        ];
        let csv = report_csv(&reports);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(
            lines[0],
            "num_small_cells,users_per_cell,slice,mean_capacity_bps,std_bps,num_seeds"
        );
        // Sorted: eMBB before IoT; plain decimals, no exponents.
        assert_eq!(lines[1], "10,2,eMBB,2000000000.000,100000000.000,20");
        assert_eq!(lines[2], "10,2,IoT,123456789.000,4500000.000,20");
        assert!(!csv.contains('e') || !csv.contains("e+"));
    }

    #[test]
    fn charts_are_written_per_slice() {
        let dir = tempfile::tempdir().unwrap();
        let mut reports = Vec::new();
        for (cells, mean) in [(10usize, 1.0e8), (20, 2.0e8)] {
            for slice in [Slice::Embb, Slice::Urllc, Slice::Iot] {
                reports.push(SliceReport {
                    num_small_cells: cells,
                    users_per_small_cell: 2,
                    slice,
                    mean_capacity_bps: mean,
                    std_dev_bps: 0.0,
                    num_seeds: 1,
                });
            }
        }
        let written = write_charts(&reports, dir.path()).unwrap();
        let names: Vec<String> = written
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect();
        assert_eq!(
            names,
            vec![
                "capacity_eMBB.svg",
                "capacity_uRLLC.svg",
                "capacity_IoT.svg"
            ]
        );
        for p in &written {
            let body = std::fs::read_to_string(p).unwrap();
            assert!(body.starts_with("<svg"));
            assert!(body.contains("polyline"));
        }
    }

    #[test]
    fn spearman_detects_perfect_trends() {
        let xs = [10.0, 20.0, 30.0, 40.0, 50.0];
        let up = [1.0, 2.0, 3.0, 4.0, 5.0];
        let down = [5.0, 4.0, 3.0, 2.0, 1.0];
        assert_relative_eq!(spearman(&xs, &up), 1.0);
        assert_relative_eq!(spearman(&xs, &down), -1.0);
    }

    #[test]
    fn spearman_handles_ties_with_average_ranks() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys = [1.0, 1.0, 2.0, 3.0];
        // Ranks of ys: (1.5, 1.5, 3, 4); Pearson with (1,2,3,4) ≈ 0.9487.
        assert_relative_eq!(spearman(&xs, &ys), 0.9486832980505138, max_relative = 1e-12);
    }

    #[test]
    fn spearman_is_sign_symmetric() {
        let xs = [10.0, 20.0, 30.0, 40.0, 50.0];
        let ys = [3.0, 1.0, 4.0, 1.5, 9.0];
        let neg: Vec<f64> = ys.iter().map(|v| -v).collect();
        assert_relative_eq!(spearman(&xs, &ys), -spearman(&xs, &neg));
    }

    #[test]
    fn user_rows_follow_topology_order() {
        let config = small_config(2, 2, 11);
        let topology = generate_topology(&config).unwrap();
        let rows = user_rows(&topology);
        for (i, u) in topology.users.iter().enumerate() {
            assert_eq!(rows[&u.id], i);
        }
        let _ = User::<f64> {
            id: UserId(0),
            position: Point::origin(),
            attachment: Attachment::Macro,
            slice: Slice::Iot,
            indoor: false,
        };
    }
}

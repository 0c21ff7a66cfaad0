//! Independent certification of the market equilibrium.
//!
//! Two solvers for the social-welfare problem, neither of which uses block
//! prices or the split variables:
//!
//! * [`solve_welfare_centralized`]: projected-gradient ascent on total
//!   welfare over every `(customer, slot)` consumption at once, with the
//!   segment-wise marginal cost.
//! * [`brute_force_welfare`]: exhaustive grid enumeration for tiny instances.
//!
//! [`compare_equilibrium`] measures how far a distributed equilibrium sits
//! from either.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{self, CustomerProfile, ProjectionError};
use crate::market::{social_welfare, EquilibriumReport};
use crate::model::{
    cost_unchecked, marginal_cost, marginal_utility_unchecked, utility_unchecked, Allocation,
    PriceSchedule, Scenario,
};

/// Grids larger than this are refused.
pub const MAX_GRID_POINTS: f64 = 1e8;
/// Largest `N * T` the grid oracle accepts.
pub const MAX_GRID_DIMENSION: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleMethod {
    CentralizedGradient,
    Grid,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("centralized solver diverged at iteration {iteration}")]
    Diverged { iteration: usize },
    #[error(transparent)]
    Projection(#[from] ProjectionError),
    #[error("grid has {points:e} points, limit is {MAX_GRID_POINTS:e}")]
    GridTooLarge { points: f64 },
    #[error("grid oracle needs N*T <= {MAX_GRID_DIMENSION}, got {dimension}")]
    GridDimension { dimension: usize },
    #[error("grid step must be positive, got {0}")]
    InvalidStep(f64),
    #[error("no grid point satisfies the daily energy bounds")]
    NoFeasibleGridPoint,
    #[error("results come from different scenarios")]
    ScenarioMismatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSolution {
    pub allocation: Allocation,
    pub welfare: f64,
    pub method: OracleMethod,
    /// For the gradient solver: whether the stationarity residual fell below tolerance.
    pub converged: bool,
    pub iterations: usize,
    /// Projected-gradient stationarity residual at the returned point.
    pub residual: f64,
    /// Aggregate demand sits at (or keeps crossing) the cost-segment boundary `D = bN`.
    pub boundary_degenerate: bool,
    pub fingerprint: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CentralizedOptions {
    /// Stationarity residual at which the ascent stops.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for CentralizedOptions {
    fn default() -> Self {
        CentralizedOptions {
            tol: 1e-9,
            max_iter: 200_000,
        }
    }
}

/// Segment-wise marginal cost of every slot, posted as a flat price for both blocks.
pub fn marginal_cost_prices(alloc: &Allocation, scenario: &Scenario) -> PriceSchedule {
    let c: Vec<f64> = alloc
        .slot_totals()
        .iter()
        .enumerate()
        .map(|(t, &d)| marginal_cost(d, scenario.aggregate_threshold(t), scenario.cost.slot(t)))
        .collect();
    PriceSchedule {
        p_l: c.clone(),
        p_u: c,
    }
}

/// Worst residual of the welfare problem's KKT system: each customer's
/// marginal utility against the marginal cost, with daily-bound multipliers
/// recovered from constraint activity.
pub fn welfare_kkt_residual(alloc: &Allocation, scenario: &Scenario) -> f64 {
    crate::market::equilibrium_kkt_residual(alloc, &marginal_cost_prices(alloc, scenario), scenario)
}

fn ascent_step(
    alloc: &Allocation,
    scenario: &Scenario,
    step: f64,
) -> Result<Allocation, ProjectionError> {
    let mc = marginal_cost_prices(alloc, scenario).p_l;
    let profiles = alloc
        .profiles
        .iter()
        .zip(&scenario.customers)
        .map(|(p, c)| {
            let raw: Vec<f64> = p
                .x
                .iter()
                .enumerate()
                .map(|(t, &x)| x + step * (marginal_utility_unchecked(x, c.w[t], c.alpha) - mc[t]))
                .collect();
            agent::project_profile(&raw, c, &scenario.blocks)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Allocation { profiles })
}

fn near_boundary(alloc: &Allocation, scenario: &Scenario) -> Vec<bool> {
    alloc
        .slot_totals()
        .iter()
        .enumerate()
        .map(|(t, &d)| {
            let bn = scenario.aggregate_threshold(t);
            (d - bn).abs() <= 1e-6 * bn.max(1.0)
        })
        .collect()
}

/// Centralized welfare maximization from the default starting allocation.
pub fn solve_welfare_centralized(
    scenario: &Scenario,
    tol: f64,
) -> Result<OracleSolution, OracleError> {
    let init = crate::market::initial_allocation(scenario);
    solve_welfare_centralized_from(
        scenario,
        &init,
        &CentralizedOptions {
            tol,
            ..CentralizedOptions::default()
        },
    )
}

/// Projected-gradient ascent on social welfare from `init`, which is first
/// projected onto the feasible set.
///
/// The step is `1 / L` with `L = max alpha + 2 N max beta`, a Lipschitz bound
/// for the welfare gradient on each cost segment. At exactly `D = bN` the
/// left-segment marginal cost is used.
pub fn solve_welfare_centralized_from(
    scenario: &Scenario,
    init: &Allocation,
    opts: &CentralizedOptions,
) -> Result<OracleSolution, OracleError> {
    let n = scenario.num_customers() as f64;
    let max_alpha = scenario
        .customers
        .iter()
        .map(|c| c.alpha)
        .fold(0.0, f64::max);
    let max_beta = scenario
        .cost
        .beta1
        .iter()
        .chain(&scenario.cost.beta2)
        .cloned()
        .fold(0.0, f64::max);
    let step = 1.0 / (max_alpha + 2.0 * n * max_beta);

    let mut alloc = Allocation {
        profiles: init
            .profiles
            .iter()
            .zip(&scenario.customers)
            .map(|(p, c)| agent::project_profile(&p.x, c, &scenario.blocks))
            .collect::<Result<Vec<CustomerProfile>, _>>()?,
    };
    let side = |a: &Allocation| -> Vec<bool> {
        a.slot_totals()
            .iter()
            .enumerate()
            .map(|(t, &d)| d > scenario.aggregate_threshold(t))
            .collect()
    };
    let mut last_side = side(&alloc);
    let mut last_crossing = 0;
    let mut converged = false;
    let mut iterations = 0;

    for iteration in 1..=opts.max_iter {
        let next = ascent_step(&alloc, scenario, step).map_err(|e| match e {
            ProjectionError::NonFinite { .. } => OracleError::Diverged { iteration },
            e => e.into(),
        })?;
        let residual = alloc.max_abs_diff(&next) / step;
        alloc = next;
        iterations = iteration;
        let s = side(&alloc);
        if s != last_side {
            last_crossing = iteration;
            last_side = s;
        }
        if residual < opts.tol {
            converged = true;
            break;
        }
    }

    let residual = alloc.max_abs_diff(&ascent_step(&alloc, scenario, step)?) / step;
    let oscillating = !converged && iterations - last_crossing < 1000;
    let boundary_degenerate = oscillating || near_boundary(&alloc, scenario).into_iter().any(|b| b);
    Ok(OracleSolution {
        welfare: social_welfare(&alloc, scenario),
        allocation: alloc,
        method: OracleMethod::CentralizedGradient,
        converged,
        iterations,
        residual,
        boundary_degenerate,
        fingerprint: scenario.fingerprint(),
    })
}

/// Exhaustive search over a regular grid on `[0, w/alpha]` for every
/// `(customer, slot)` consumption, keeping points that satisfy the daily
/// bounds. Ties go to the lexicographically smallest allocation.
pub fn brute_force_welfare(
    scenario: &Scenario,
    grid_step: f64,
) -> Result<OracleSolution, OracleError> {
    if !(grid_step.is_finite() && grid_step > 0.0) {
        return Err(OracleError::InvalidStep(grid_step));
    }
    let slots = scenario.num_slots;
    let dimension = scenario.num_customers() * slots;
    if dimension > MAX_GRID_DIMENSION {
        return Err(OracleError::GridDimension { dimension });
    }

    // variable k = customer * slots + slot; variable 0 is the most significant digit
    let counts: Vec<u64> = (0..dimension)
        .map(|k| {
            let c = &scenario.customers[k / slots];
            (c.satiation(k % slots) / grid_step + 1e-9).floor() as u64 + 1
        })
        .collect();
    let points = counts.iter().map(|&c| c as f64).product::<f64>();
    if points > MAX_GRID_POINTS {
        return Err(OracleError::GridTooLarge { points });
    }
    let total = counts.iter().product::<u64>();

    let utility: Vec<Vec<f64>> = (0..dimension)
        .map(|k| {
            let c = &scenario.customers[k / slots];
            (0..counts[k])
                .map(|d| utility_unchecked(d as f64 * grid_step, c.w[k % slots], c.alpha))
                .collect()
        })
        .collect();
    let thresholds: Vec<f64> = (0..slots)
        .map(|t| scenario.aggregate_threshold(t))
        .collect();

    let evaluate = |index: u64| -> Option<(f64, u64)> {
        let mut digits = [0u64; MAX_GRID_DIMENSION];
        let mut rest = index;
        for k in (0..dimension).rev() {
            digits[k] = rest % counts[k];
            rest /= counts[k];
        }
        let mut demand = [0.0f64; MAX_GRID_DIMENSION];
        let mut value = 0.0;
        for (i, c) in scenario.customers.iter().enumerate() {
            let mut daily = 0.0;
            for (t, slot_demand) in demand.iter_mut().enumerate().take(slots) {
                let k = i * slots + t;
                let x = digits[k] as f64 * grid_step;
                daily += x;
                *slot_demand += x;
                value += utility[k][digits[k] as usize];
            }
            if daily < c.d_min - 1e-9 || daily > c.d_max + 1e-9 {
                return None;
            }
        }
        for t in 0..slots {
            value -= cost_unchecked(demand[t], thresholds[t], scenario.cost.slot(t));
        }
        Some((value, index))
    };
    let better = |a: Option<(f64, u64)>, b: Option<(f64, u64)>| match (a, b) {
        (Some(a), Some(b)) => {
            if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) {
                Some(b)
            } else {
                Some(a)
            }
        }
        (a, None) => a,
        (None, b) => b,
    };
    let best = (0..total)
        .into_par_iter()
        .map(evaluate)
        .reduce(|| None, better)
        .ok_or(OracleError::NoFeasibleGridPoint)?;

    let mut x = vec![vec![0.0; slots]; scenario.num_customers()];
    let mut rest = best.1;
    for k in (0..dimension).rev() {
        x[k / slots][k % slots] = (rest % counts[k]) as f64 * grid_step;
        rest /= counts[k];
    }
    let allocation = Allocation::from_consumption(&x, &scenario.blocks);
    Ok(OracleSolution {
        welfare: social_welfare(&allocation, scenario),
        boundary_degenerate: near_boundary(&allocation, scenario).into_iter().any(|b| b),
        allocation,
        method: OracleMethod::Grid,
        converged: true,
        iterations: 0,
        residual: f64::NAN,
        fingerprint: scenario.fingerprint(),
    })
}

/// Pass thresholds for a comparison; both gaps must be strictly below them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerance {
    pub allocation: f64,
    pub welfare: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance {
            allocation: 1e-3,
            welfare: 1e-4,
        }
    }
}

/// Outcome of comparing two solutions of one scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub allocation_gap: f64,
    pub welfare_gap: f64,
    pub pass: bool,
    pub boundary_degenerate: bool,
}

fn compare(
    a: (&Allocation, f64, u64),
    b: (&Allocation, f64, u64),
    boundary_degenerate: bool,
    tol: Tolerance,
) -> Result<Comparison, OracleError> {
    let same_shape =
        a.0.num_customers() == b.0.num_customers() && a.0.num_slots() == b.0.num_slots();
    if a.2 != b.2 || !same_shape {
        return Err(OracleError::ScenarioMismatch);
    }
    let allocation_gap = a.0.max_abs_diff(b.0);
    let welfare_gap = (a.1 - b.1).abs();
    Ok(Comparison {
        allocation_gap,
        welfare_gap,
        pass: allocation_gap < tol.allocation && welfare_gap < tol.welfare,
        boundary_degenerate,
    })
}

/// Gap between a distributed equilibrium and an oracle solution of the same scenario.
pub fn compare_equilibrium(
    distributed: &EquilibriumReport,
    oracle: &OracleSolution,
    tol: Tolerance,
) -> Result<Comparison, OracleError> {
    compare(
        (
            &distributed.allocation,
            distributed.welfare,
            distributed.fingerprint,
        ),
        (&oracle.allocation, oracle.welfare, oracle.fingerprint),
        oracle.boundary_degenerate,
        tol,
    )
}

/// Gap between two oracle solutions of the same scenario.
pub fn compare_oracles(
    a: &OracleSolution,
    b: &OracleSolution,
    tol: Tolerance,
) -> Result<Comparison, OracleError> {
    compare(
        (&a.allocation, a.welfare, a.fingerprint),
        (&b.allocation, b.welfare, b.fingerprint),
        a.boundary_degenerate || b.boundary_degenerate,
        tol,
    )
}

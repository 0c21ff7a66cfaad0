//! The distributed market loop: the power company aggregates demand and posts
//! block prices, every customer answers with a projected-gradient update, and
//! the round repeats until allocation and prices settle.
//!
//! Each round updates the whole day at once. Prices for all slots are posted
//! together and every customer projects its full profile, because the daily
//! energy bounds couple the slots.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{self, CustomerProfile, ProjectionError};
use crate::model::{cost_unchecked, utility_unchecked, Allocation, PriceSchedule, Scenario};
use crate::pricing::price_schedule;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Customer step size.
    pub gamma: f64,
    /// Convergence threshold on the max-norm change of allocation and prices.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            gamma: 0.1,
            tol: 1e-6,
            max_iter: 50_000,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), MarketError> {
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(MarketError::InvalidConfig(format!(
                "gamma must be positive, got {}",
                self.gamma
            )));
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(MarketError::InvalidConfig(format!(
                "tol must be positive, got {}",
                self.tol
            )));
        }
        if self.max_iter == 0 {
            return Err(MarketError::InvalidConfig(
                "max_iter must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MarketError {
    #[error("invalid run configuration: {0}")]
    InvalidConfig(String),
    #[error("iteration diverged at iteration {iteration} (non-finite values)")]
    Diverged { iteration: usize },
    #[error("projection failed for customer {customer} at iteration {iteration}: {source}")]
    Projection {
        customer: usize,
        iteration: usize,
        source: ProjectionError,
    },
    #[error("initial allocation has shape {got:?}, scenario needs {want:?}")]
    Shape {
        got: (usize, usize),
        want: (usize, usize),
    },
}

/// State of the market after one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub allocation: Allocation,
    /// Prices posted for this allocation.
    pub prices: PriceSchedule,
    pub welfare: f64,
    /// Max-norm change of the allocation against the previous record; `None` for the first.
    pub max_change: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub records: Vec<IterationRecord>,
}

impl IterationTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumReport {
    pub converged: bool,
    /// Number of update rounds performed.
    pub iterations: usize,
    pub allocation: Allocation,
    pub prices: PriceSchedule,
    pub welfare: f64,
    /// Worst KKT residual over all customers, with multipliers recovered from
    /// the active daily bounds.
    pub kkt_residual: f64,
    pub fingerprint: u64,
}

/// Total utility of all customers minus production cost, summed over slots.
pub fn social_welfare(alloc: &Allocation, scenario: &Scenario) -> f64 {
    let totals = alloc.slot_totals();
    let utility: f64 = alloc
        .profiles
        .iter()
        .zip(&scenario.customers)
        .map(|(p, c)| {
            p.x.iter()
                .enumerate()
                .map(|(t, &x)| utility_unchecked(x, c.w[t], c.alpha))
                .sum::<f64>()
        })
        .sum();
    let cost: f64 = totals
        .iter()
        .enumerate()
        .map(|(t, &d)| cost_unchecked(d, scenario.aggregate_threshold(t), scenario.cost.slot(t)))
        .sum();
    utility - cost
}

fn allocation_change(a: &Allocation, b: &Allocation) -> f64 {
    a.profiles
        .iter()
        .zip(&b.profiles)
        .flat_map(|(p, q)| {
            p.x.iter()
                .zip(&q.x)
                .chain(p.y.iter().zip(&q.y))
                .chain(p.z.iter().zip(&q.z))
                .map(|(u, v)| (u - v).abs())
        })
        .fold(0.0, f64::max)
}

/// True when both the allocation and the prices moved by less than `tol`
/// (max-norm) between the last two records of `tail`.
pub fn detect_convergence(tail: &[IterationRecord], tol: f64) -> bool {
    match tail {
        [.., prev, last] => {
            allocation_change(&prev.allocation, &last.allocation) < tol
                && prev.prices.max_abs_diff(&last.prices) < tol
        }
        _ => false,
    }
}

/// Worst KKT residual across customers at the given allocation and prices.
pub fn equilibrium_kkt_residual(
    alloc: &Allocation,
    prices: &PriceSchedule,
    scenario: &Scenario,
) -> f64 {
    alloc
        .profiles
        .iter()
        .zip(&scenario.customers)
        .map(|(p, c)| {
            let m = agent::recover_multipliers(p, prices, c, &scenario.blocks);
            agent::kkt_residual(p, prices, m, c, &scenario.blocks).worst()
        })
        .fold(0.0, f64::max)
}

/// Starting allocation: each customer spreads its daily minimum evenly.
pub fn initial_allocation(scenario: &Scenario) -> Allocation {
    Allocation {
        profiles: scenario
            .customers
            .iter()
            .map(|c| CustomerProfile::initial(c, &scenario.blocks))
            .collect(),
    }
}

/// Runs the market from [`initial_allocation`].
pub fn run_market(
    scenario: &Scenario,
    config: &RunConfig,
) -> Result<(EquilibriumReport, IterationTrace), MarketError> {
    run_market_from(scenario, config, initial_allocation(scenario))
}

/// Runs the market from a caller-supplied feasible allocation.
pub fn run_market_from(
    scenario: &Scenario,
    config: &RunConfig,
    initial: Allocation,
) -> Result<(EquilibriumReport, IterationTrace), MarketError> {
    config.validate()?;
    let want = (scenario.num_customers(), scenario.num_slots);
    let got = (initial.num_customers(), initial.num_slots());
    if got != want {
        return Err(MarketError::Shape { got, want });
    }

    let mut trace = IterationTrace::default();
    let prices = price_schedule(&initial, scenario);
    let welfare = social_welfare(&initial, scenario);
    trace.records.push(IterationRecord {
        allocation: initial,
        prices,
        welfare,
        max_change: None,
    });

    let mut converged = false;
    for iteration in 1..=config.max_iter {
        let last = trace.records.last().expect("trace starts non-empty");
        let mut profiles = Vec::with_capacity(scenario.num_customers());
        for (i, (profile, customer)) in last
            .allocation
            .profiles
            .iter()
            .zip(&scenario.customers)
            .enumerate()
        {
            let next = agent::update(
                profile,
                &last.prices,
                config.gamma,
                customer,
                &scenario.blocks,
            )
            .map_err(|source| match source {
                ProjectionError::NonFinite { .. } => MarketError::Diverged { iteration },
                source => MarketError::Projection {
                    customer: i,
                    iteration,
                    source,
                },
            })?;
            profiles.push(next);
        }
        let allocation = Allocation { profiles };
        let prices = price_schedule(&allocation, scenario);
        let welfare = social_welfare(&allocation, scenario);
        if !welfare.is_finite() || prices.p_l.iter().chain(&prices.p_u).any(|p| !p.is_finite()) {
            return Err(MarketError::Diverged { iteration });
        }
        let max_change = allocation_change(&last.allocation, &allocation);
        trace.records.push(IterationRecord {
            allocation,
            prices,
            welfare,
            max_change: Some(max_change),
        });
        if detect_convergence(&trace.records, config.tol) {
            converged = true;
            break;
        }
    }

    let last = trace.records.last().expect("trace starts non-empty");
    let report = EquilibriumReport {
        converged,
        iterations: trace.records.len() - 1,
        allocation: last.allocation.clone(),
        prices: last.prices.clone(),
        welfare: last.welfare,
        kkt_residual: equilibrium_kkt_residual(&last.allocation, &last.prices, scenario),
        fingerprint: scenario.fingerprint(),
    };
    Ok((report, trace))
}

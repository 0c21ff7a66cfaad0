//! Simulation and verification of a competitive demand-response market under
//! two-block rate pricing.
//!
//! Customers maximize utility minus their bill; the power company posts
//! first- and second-block prices equal to the marginal cost of each cost
//! segment. [`market::run_market`] iterates the price/demand exchange to
//! equilibrium and [`oracle`] certifies the result against a centralized
//! welfare solve and a brute-force grid search.

pub mod agent;
pub mod export;
pub mod market;
pub mod model;
pub mod oracle;
pub mod pricing;

pub use agent::{CustomerProfile, KktMultipliers, KktResidual};
pub use market::{run_market, social_welfare, EquilibriumReport, IterationTrace, RunConfig};
pub use model::{
    demo_scenario, parse_scenario, validate_scenario, Allocation, BlockSchedule, CostParams,
    Customer, PriceSchedule, Scenario, ScenarioDocument, ScenarioError,
};
pub use oracle::{
    brute_force_welfare, compare_equilibrium, solve_welfare_centralized, Comparison,
    OracleSolution, Tolerance,
};

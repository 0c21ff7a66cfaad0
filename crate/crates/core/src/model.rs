//! Domain types for a two-block rate pricing market and the scalar
//! primitives everything else is built from: customer utility, production
//! cost and the canonical first/second block split of a consumption value.

// `!(v > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A scalar argument fell outside the domain of a primitive.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum DomainError {
    #[error("{what} must be non-negative, got {value}")]
    Negative { what: &'static str, value: f64 },
    #[error("{what} must be strictly positive, got {value}")]
    NotPositive { what: &'static str, value: f64 },
}

/// One customer of the power company.
///
/// `w` holds one willingness coefficient per slot; scalar scenario values are
/// expanded on validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Customer {
    pub id: u32,
    pub w: Vec<f64>,
    pub alpha: f64,
    pub d_min: f64,
    pub d_max: f64,
}

impl Customer {
    /// Consumption beyond which utility stops increasing in slot `t`.
    pub fn satiation(&self, t: usize) -> f64 {
        self.w[t] / self.alpha
    }
}

/// Block threshold `b` per slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSchedule {
    pub b: Vec<f64>,
}

/// Cost coefficients per slot: `beta1` below the aggregate threshold, `beta2` above it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    pub beta1: Vec<f64>,
    pub beta2: Vec<f64>,
}

impl CostParams {
    pub fn slot(&self, t: usize) -> SlotCost {
        SlotCost {
            beta1: self.beta1[t],
            beta2: self.beta2[t],
        }
    }
}

/// Cost coefficients of a single slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlotCost {
    pub beta1: f64,
    pub beta2: f64,
}

/// A validated market instance. Build one with [`validate_scenario`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub num_slots: usize,
    pub customers: Vec<Customer>,
    pub blocks: BlockSchedule,
    pub cost: CostParams,
}

impl Scenario {
    pub fn num_customers(&self) -> usize {
        self.customers.len()
    }

    /// Aggregate cost threshold `b^t * N` of slot `t`.
    pub fn aggregate_threshold(&self, t: usize) -> f64 {
        self.blocks.b[t] * self.customers.len() as f64
    }

    /// Stable identity of the scenario contents, used to refuse comparisons
    /// between results of different scenarios.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.num_slots.hash(&mut h);
        for c in &self.customers {
            c.id.hash(&mut h);
            for v in c.w.iter().chain([c.alpha, c.d_min, c.d_max].iter()) {
                v.to_bits().hash(&mut h);
            }
        }
        for v in self
            .blocks
            .b
            .iter()
            .chain(&self.cost.beta1)
            .chain(&self.cost.beta2)
        {
            v.to_bits().hash(&mut h);
        }
        h.finish()
    }

    pub fn to_document(&self) -> ScenarioDocument {
        ScenarioDocument {
            num_slots: self.num_slots,
            customers: self
                .customers
                .iter()
                .map(|c| CustomerDocument {
                    id: c.id,
                    w: PerSlot::Slots(c.w.clone()),
                    alpha: c.alpha,
                    d_min: c.d_min,
                    d_max: c.d_max,
                })
                .collect(),
            blocks: BlocksDocument {
                b: PerSlot::Slots(self.blocks.b.clone()),
            },
            cost: CostDocument {
                beta1: PerSlot::Slots(self.cost.beta1.clone()),
                beta2: PerSlot::Slots(self.cost.beta2.clone()),
            },
        }
    }
}

/// Consumption of every customer in every slot, with its canonical block split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub profiles: Vec<crate::agent::CustomerProfile>,
}

impl Allocation {
    pub fn num_customers(&self) -> usize {
        self.profiles.len()
    }

    pub fn num_slots(&self) -> usize {
        self.profiles.first().map_or(0, |p| p.x.len())
    }

    pub fn x(&self, customer: usize, slot: usize) -> f64 {
        self.profiles[customer].x[slot]
    }

    /// Total demand `D^t` per slot.
    pub fn slot_totals(&self) -> Vec<f64> {
        let mut totals = vec![0.0; self.num_slots()];
        for p in &self.profiles {
            for (d, x) in totals.iter_mut().zip(&p.x) {
                *d += x;
            }
        }
        totals
    }

    /// Max-norm distance between the consumption of two allocations of the same shape.
    pub fn max_abs_diff(&self, other: &Allocation) -> f64 {
        self.profiles
            .iter()
            .zip(&other.profiles)
            .flat_map(|(a, b)| a.x.iter().zip(&b.x).map(|(u, v)| (u - v).abs()))
            .fold(0.0, f64::max)
    }

    /// Builds the canonical allocation for a matrix of consumptions indexed `[customer][slot]`.
    pub fn from_consumption(x: &[Vec<f64>], blocks: &BlockSchedule) -> Allocation {
        Allocation {
            profiles: x
                .iter()
                .map(|row| crate::agent::CustomerProfile::from_consumption(row, blocks))
                .collect(),
        }
    }
}

/// Block prices per slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSchedule {
    pub p_l: Vec<f64>,
    pub p_u: Vec<f64>,
}

impl PriceSchedule {
    pub fn num_slots(&self) -> usize {
        self.p_l.len()
    }

    pub fn max_abs_diff(&self, other: &PriceSchedule) -> f64 {
        self.p_l
            .iter()
            .zip(&other.p_l)
            .chain(self.p_u.iter().zip(&other.p_u))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

pub(crate) fn utility_unchecked(x: f64, w: f64, alpha: f64) -> f64 {
    let cap = w / alpha;
    if x >= cap {
        w * w / (2.0 * alpha)
    } else {
        w * x - 0.5 * alpha * x * x
    }
}

pub(crate) fn marginal_utility_unchecked(x: f64, w: f64, alpha: f64) -> f64 {
    if x >= w / alpha {
        0.0
    } else {
        w - alpha * x
    }
}

fn check_params(w: f64, alpha: f64) -> Result<(), DomainError> {
    if !(w > 0.0) {
        return Err(DomainError::NotPositive {
            what: "w",
            value: w,
        });
    }
    if !(alpha > 0.0) {
        return Err(DomainError::NotPositive {
            what: "alpha",
            value: alpha,
        });
    }
    Ok(())
}

/// Quadratic utility `w x - (alpha/2) x^2`, flat at `w^2 / (2 alpha)` past the
/// satiation point `w / alpha`.
pub fn utility_value(x: f64, w: f64, alpha: f64) -> Result<f64, DomainError> {
    if !(x >= 0.0) {
        return Err(DomainError::Negative {
            what: "consumption",
            value: x,
        });
    }
    check_params(w, alpha)?;
    Ok(utility_unchecked(x, w, alpha))
}

/// Derivative of [`utility_value`]; at the satiation kink the flat side (0) is returned.
pub fn utility_gradient(x: f64, w: f64, alpha: f64) -> Result<f64, DomainError> {
    if !(x >= 0.0) {
        return Err(DomainError::Negative {
            what: "consumption",
            value: x,
        });
    }
    check_params(w, alpha)?;
    Ok(marginal_utility_unchecked(x, w, alpha))
}

pub(crate) fn cost_unchecked(d: f64, threshold: f64, cost: SlotCost) -> f64 {
    if d <= threshold {
        cost.beta1 * d * d
    } else {
        cost.beta2 * d * d
    }
}

/// Step-wise quadratic production cost: `beta1 D^2` up to the aggregate
/// threshold `bN`, `beta2 D^2` beyond it.
pub fn cost_value(d: f64, threshold: f64, cost: SlotCost) -> Result<f64, DomainError> {
    if !(d >= 0.0) {
        return Err(DomainError::Negative {
            what: "demand",
            value: d,
        });
    }
    if !(threshold > 0.0) {
        return Err(DomainError::NotPositive {
            what: "aggregate threshold",
            value: threshold,
        });
    }
    Ok(cost_unchecked(d, threshold, cost))
}

/// Segment-wise marginal cost. Exactly at the threshold the left segment applies.
pub fn marginal_cost(d: f64, threshold: f64, cost: SlotCost) -> f64 {
    if d <= threshold {
        2.0 * cost.beta1 * d
    } else {
        2.0 * cost.beta2 * d
    }
}

/// Splits `x` into `(y, z) = (min(x, b), max(x, b))`.
pub fn canonical_split(x: f64, b: f64) -> (f64, f64) {
    (x.min(b), x.max(b))
}

/// Inverse of the split, `x = y + z - b`.
///
/// For a canonical pair one of `y`, `z` equals `b`, and the other is returned
/// unchanged, so `recompose(canonical_split(x, b)) == x` bit for bit.
pub fn recompose(y: f64, z: f64, b: f64) -> f64 {
    if z == b {
        y
    } else if y == b {
        z
    } else {
        y + (z - b)
    }
}

/// A per-slot scenario value: either one number for every slot or one per slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerSlot {
    Scalar(f64),
    Slots(Vec<f64>),
}

impl From<f64> for PerSlot {
    fn from(v: f64) -> Self {
        PerSlot::Scalar(v)
    }
}

impl From<Vec<f64>> for PerSlot {
    fn from(v: Vec<f64>) -> Self {
        PerSlot::Slots(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CustomerDocument {
    pub id: u32,
    pub w: PerSlot,
    pub alpha: f64,
    pub d_min: f64,
    pub d_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlocksDocument {
    pub b: PerSlot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostDocument {
    pub beta1: PerSlot,
    pub beta2: PerSlot,
}

/// Scenario file as written on disk, before broadcasting and validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioDocument {
    pub num_slots: usize,
    pub customers: Vec<CustomerDocument>,
    pub blocks: BlocksDocument,
    pub cost: CostDocument,
}

impl ScenarioDocument {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        serde_json::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))
    }
}

/// One violated invariant, located by its field path in the scenario document.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("cannot parse scenario: {0}")]
    Parse(String),
    #[error("invalid scenario:\n{}", .0.iter().map(|v| format!("  {v}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<Violation>),
}

impl ScenarioError {
    pub fn violations(&self) -> &[Violation] {
        match self {
            ScenarioError::Invalid(v) => v,
            ScenarioError::Parse(_) => &[],
        }
    }
}

struct Checker {
    violations: Vec<Violation>,
}

impl Checker {
    fn fail(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.violations.push(Violation {
            path: path.into(),
            message: message.into(),
        });
    }

    fn expand(&mut self, path: &str, value: &PerSlot, slots: usize) -> Vec<f64> {
        match value {
            PerSlot::Scalar(v) => vec![*v; slots],
            PerSlot::Slots(v) if v.len() == slots => v.clone(),
            PerSlot::Slots(v) => {
                self.fail(
                    path,
                    format!("expected a scalar or {slots} values, got {}", v.len()),
                );
                Vec::new()
            }
        }
    }

    fn positive(&mut self, path: &str, name: &str, values: &[f64]) {
        for (t, v) in values.iter().enumerate() {
            if !(v.is_finite() && *v > 0.0) {
                let p = if values.len() > 1 {
                    format!("{path}[{t}]")
                } else {
                    path.to_string()
                };
                self.fail(p, format!("{name} must be strictly positive"));
            }
        }
    }
}

/// Checks every scenario invariant, expanding scalar broadcasts to per-slot
/// vectors. All violations are reported together.
pub fn validate_scenario(doc: &ScenarioDocument) -> Result<Scenario, ScenarioError> {
    let mut ck = Checker {
        violations: Vec::new(),
    };
    let slots = doc.num_slots;
    if slots == 0 {
        ck.fail("num_slots", "num_slots must be at least 1");
        return Err(ScenarioError::Invalid(ck.violations));
    }
    if doc.customers.is_empty() {
        ck.fail("customers", "at least one customer is required");
    }

    let b = ck.expand("blocks.b", &doc.blocks.b, slots);
    ck.positive("blocks.b", "b", &b);
    let beta1 = ck.expand("cost.beta1", &doc.cost.beta1, slots);
    ck.positive("cost.beta1", "beta1", &beta1);
    let beta2 = ck.expand("cost.beta2", &doc.cost.beta2, slots);
    ck.positive("cost.beta2", "beta2", &beta2);

    let mut customers = Vec::with_capacity(doc.customers.len());
    for (i, c) in doc.customers.iter().enumerate() {
        let base = format!("customers[{i}]");
        let w = ck.expand(&format!("{base}.w"), &c.w, slots);
        ck.positive(&format!("{base}.w"), "w", &w);
        let alpha_ok = c.alpha.is_finite() && c.alpha > 0.0;
        if !alpha_ok {
            ck.fail(format!("{base}.alpha"), "alpha must be strictly positive");
        }
        if !(c.d_min.is_finite() && c.d_min >= 0.0) {
            ck.fail(format!("{base}.d_min"), "d_min must be non-negative");
        }
        if !(c.d_max.is_finite() && c.d_max >= 0.0) {
            ck.fail(format!("{base}.d_max"), "d_max must be non-negative");
        }
        if c.d_min > c.d_max {
            ck.fail(format!("{base}.d_min"), "d_min exceeds d_max");
        }
        if alpha_ok && w.len() == slots {
            let attainable: f64 = w.iter().map(|w| w / c.alpha).sum();
            if c.d_min > attainable {
                ck.fail(
                    format!("{base}.d_min"),
                    format!(
                        "infeasible scenario: d_min {} exceeds attainable useful demand {attainable} (sum of w/alpha)",
                        c.d_min
                    ),
                );
            }
        }
        if doc.customers[..i].iter().any(|o| o.id == c.id) {
            ck.fail(
                format!("{base}.id"),
                format!("duplicate customer id {}", c.id),
            );
        }
        customers.push(Customer {
            id: c.id,
            w,
            alpha: c.alpha,
            d_min: c.d_min,
            d_max: c.d_max,
        });
    }

    if !ck.violations.is_empty() {
        return Err(ScenarioError::Invalid(ck.violations));
    }
    Ok(Scenario {
        num_slots: slots,
        customers,
        blocks: BlockSchedule { b },
        cost: CostParams { beta1, beta2 },
    })
}

/// Parses and validates a scenario JSON document.
pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    validate_scenario(&ScenarioDocument::from_json(text)?)
}

const DEMO_JSON: &str = include_str!("../scenarios/demo.json");

/// The built-in two-customer demonstration market.
pub fn demo_scenario() -> Scenario {
    parse_scenario(DEMO_JSON).expect("bundled demo scenario is valid")
}

/// Raw JSON of the built-in demo scenario.
pub fn demo_scenario_json() -> &'static str {
    DEMO_JSON
}

//! A single customer: the projected-gradient demand update, projections onto
//! the customer's feasible set, net utility and KKT residuals.
//!
//! The feasible set of customer `i` in split coordinates is
//!
//! ```text
//!     y_t <= b_t,   z_t >= b_t,   x_t = y_t + z_t - b_t >= 0,
//!     d_min <= sum_t x_t <= d_max
//! ```
//!
//! Both projections below solve their Euclidean projection problem exactly by
//! a one-dimensional search over the multiplier `nu` of the daily-sum
//! constraint: for fixed `nu` the problem separates per slot and the total
//! consumption is continuous and nonincreasing in `nu`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    canonical_split, marginal_utility_unchecked, recompose, utility_unchecked, BlockSchedule,
    Customer, PriceSchedule,
};

/// Bisection stops once the active daily bound is met to within this amount.
pub const SHIFT_TOLERANCE: f64 = 1e-10;
/// Upper limit on bisection steps for the daily-sum multiplier.
pub const MAX_SHIFT_STEPS: usize = 200;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProjectionError {
    #[error("empty feasible set: d_min {d_min} exceeds d_max {d_max}")]
    Infeasible { d_min: f64, d_max: f64 },
    #[error("non-finite value in slot {slot}")]
    NonFinite { slot: usize },
}

/// One customer's consumption over the day with its canonical block split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CustomerProfile {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
}

impl CustomerProfile {
    pub fn from_consumption(x: &[f64], blocks: &BlockSchedule) -> Self {
        let (y, z) = x
            .iter()
            .zip(&blocks.b)
            .map(|(&x, &b)| canonical_split(x, b))
            .unzip();
        CustomerProfile {
            x: x.to_vec(),
            y,
            z,
        }
    }

    pub fn total(&self) -> f64 {
        self.x.iter().sum()
    }

    /// The default starting point: `d_min` spread evenly over the slots.
    pub fn initial(customer: &Customer, blocks: &BlockSchedule) -> Self {
        let slots = blocks.b.len();
        let x = vec![customer.d_min / slots as f64; slots];
        Self::from_consumption(&x, blocks)
    }
}

/// Multipliers of the daily maximum (`lambda1`) and minimum (`lambda2`) energy constraints.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct KktMultipliers {
    pub lambda1: f64,
    pub lambda2: f64,
}

/// Unprojected result of one gradient step.
#[derive(Debug, Clone, PartialEq)]
pub struct RawStep {
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    /// `y + z - b` per slot.
    pub x: Vec<f64>,
}

/// Max-norm violation of each line of the customer's KKT system.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct KktResidual {
    pub stationarity_y: f64,
    pub stationarity_z: f64,
    pub comp_slack_1: f64,
    pub comp_slack_2: f64,
}

impl KktResidual {
    pub fn worst(&self) -> f64 {
        self.stationarity_y
            .max(self.stationarity_z)
            .max(self.comp_slack_1)
            .max(self.comp_slack_2)
    }
}

/// Moves `y` along the first-block price signal and `z` along the
/// second-block one: `y + gamma (U'(x) - p_l)`, `z + gamma (U'(x) - p_u)`.
pub fn gradient_step(
    profile: &CustomerProfile,
    prices: &PriceSchedule,
    gamma: f64,
    customer: &Customer,
    blocks: &BlockSchedule,
) -> RawStep {
    let slots = profile.x.len();
    let mut out = RawStep {
        y: Vec::with_capacity(slots),
        z: Vec::with_capacity(slots),
        x: Vec::with_capacity(slots),
    };
    for t in 0..slots {
        let g = marginal_utility_unchecked(profile.x[t], customer.w[t], customer.alpha);
        let y = profile.y[t] + gamma * (g - prices.p_l[t]);
        let z = profile.z[t] + gamma * (g - prices.p_u[t]);
        out.y.push(y);
        out.z.push(z);
        out.x.push(recompose(y, z, blocks.b[t]));
    }
    out
}

/// Solves `total(nu) in [d_min, d_max]` for a continuous nonincreasing `total`,
/// returning a `nu` on the feasible side of the active bound.
fn solve_shift(total: impl Fn(f64) -> f64, d_min: f64, d_max: f64) -> f64 {
    let s0 = total(0.0);
    if s0 >= d_min && s0 <= d_max {
        return 0.0;
    }
    if s0 > d_max {
        let mut lo = 0.0;
        let mut hi = 1.0;
        while total(hi) > d_max {
            lo = hi;
            hi *= 2.0;
        }
        for _ in 0..MAX_SHIFT_STEPS {
            if d_max - total(hi) <= SHIFT_TOLERANCE {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if total(mid) > d_max {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    } else {
        let mut lo = -1.0;
        let mut hi = 0.0;
        while total(lo) < d_min {
            hi = lo;
            lo *= 2.0;
        }
        for _ in 0..MAX_SHIFT_STEPS {
            if total(lo) - d_min <= SHIFT_TOLERANCE {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if total(mid) < d_min {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        lo
    }
}

fn check_inputs(values: &[&[f64]], customer: &Customer) -> Result<(), ProjectionError> {
    if customer.d_min > customer.d_max {
        return Err(ProjectionError::Infeasible {
            d_min: customer.d_min,
            d_max: customer.d_max,
        });
    }
    for v in values {
        if let Some(slot) = v.iter().position(|x| !x.is_finite()) {
            return Err(ProjectionError::NonFinite { slot });
        }
    }
    Ok(())
}

/// Euclidean projection of a consumption vector onto
/// `{x >= 0, d_min <= sum x <= d_max}`, returned with its canonical split.
pub fn project_profile(
    raw_x: &[f64],
    customer: &Customer,
    blocks: &BlockSchedule,
) -> Result<CustomerProfile, ProjectionError> {
    check_inputs(&[raw_x], customer)?;
    let total = |nu: f64| raw_x.iter().map(|r| (r - nu).max(0.0)).sum::<f64>();
    let nu = solve_shift(total, customer.d_min, customer.d_max);
    let x: Vec<f64> = if nu == 0.0 {
        raw_x.iter().map(|r| r.max(0.0)).collect()
    } else {
        raw_x.iter().map(|r| (r - nu).max(0.0)).collect()
    };
    Ok(CustomerProfile::from_consumption(&x, blocks))
}

/// Projects `(y, z)` onto `{y <= b, z >= b, y + z - b >= 0}`.
///
/// In the coordinates `u = b - y`, `v = z - b` the set is
/// `{u >= 0, v >= 0, u - v <= b}`, whose boundary consists of the ray `u = 0`,
/// the segment `v = 0, 0 <= u <= b` and the ray `(b + s, s), s >= 0`. The
/// projection of an outside point is the nearest of the three piece projections.
pub fn project_block_pair(y: f64, z: f64, b: f64) -> (f64, f64) {
    let u = b - y;
    let v = z - b;
    if u >= 0.0 && v >= 0.0 && u - v <= b {
        return (y, z);
    }
    let s = (0.5 * (u - b + v)).max(0.0);
    let candidates = [(0.0, v.max(0.0)), (u.clamp(0.0, b), 0.0), (b + s, s)];
    let (pu, pv) = candidates
        .into_iter()
        .min_by(|a, c| {
            let da = (a.0 - u).powi(2) + (a.1 - v).powi(2);
            let dc = (c.0 - u).powi(2) + (c.1 - v).powi(2);
            da.total_cmp(&dc)
        })
        .expect("three candidates");
    let y = if pu == 0.0 { b } else { b - pu };
    let z = if pv == 0.0 { b } else { b + pv };
    (y, z)
}

/// Consumption of a projected pair; pairs on the `x = 0` edge can recompose
/// to a rounding-level negative value.
fn pair_consumption(y: f64, z: f64, b: f64) -> f64 {
    recompose(y, z, b).max(0.0)
}

/// Euclidean projection of raw split pairs onto the customer's feasible set,
/// without re-canonicalizing. The result may have `y < b < z` in some slots.
pub fn project_pairs(
    raw_y: &[f64],
    raw_z: &[f64],
    customer: &Customer,
    blocks: &BlockSchedule,
) -> Result<(Vec<f64>, Vec<f64>), ProjectionError> {
    check_inputs(&[raw_y, raw_z], customer)?;
    let b = &blocks.b;
    let shifted = |nu: f64, t: usize| project_block_pair(raw_y[t] - nu, raw_z[t] - nu, b[t]);
    let total = |nu: f64| {
        (0..raw_y.len())
            .map(|t| {
                let (y, z) = shifted(nu, t);
                pair_consumption(y, z, b[t])
            })
            .sum::<f64>()
    };
    let nu = solve_shift(total, customer.d_min, customer.d_max);
    Ok((0..raw_y.len()).map(|t| shifted(nu, t)).unzip())
}

/// Projects raw split pairs onto the feasible set and re-canonicalizes the result.
pub fn project_split(
    raw: &RawStep,
    customer: &Customer,
    blocks: &BlockSchedule,
) -> Result<CustomerProfile, ProjectionError> {
    let (y, z) = project_pairs(&raw.y, &raw.z, customer, blocks)?;
    let x: Vec<f64> = y
        .iter()
        .zip(&z)
        .zip(&blocks.b)
        .map(|((&y, &z), &b)| pair_consumption(y, z, b))
        .collect();
    Ok(CustomerProfile::from_consumption(&x, blocks))
}

/// One market round for a customer: gradient step at the broadcast prices,
/// then projection back onto the feasible set.
pub fn update(
    profile: &CustomerProfile,
    prices: &PriceSchedule,
    gamma: f64,
    customer: &Customer,
    blocks: &BlockSchedule,
) -> Result<CustomerProfile, ProjectionError> {
    let raw = gradient_step(profile, prices, gamma, customer, blocks);
    project_split(&raw, customer, blocks)
}

/// Utility minus payment for both blocks, summed over the day.
pub fn net_utility(
    profile: &CustomerProfile,
    prices: &PriceSchedule,
    customer: &Customer,
    blocks: &BlockSchedule,
) -> f64 {
    (0..profile.x.len())
        .map(|t| {
            utility_unchecked(profile.x[t], customer.w[t], customer.alpha)
                - prices.p_l[t] * profile.y[t]
                - prices.p_u[t] * (profile.z[t] - blocks.b[t])
        })
        .sum()
}

/// Stationarity gaps `U'(x) - p` on the slots whose bound constraints are
/// inactive, tagged with the block they belong to (`false` = first block).
fn stationarity_gaps<'a>(
    profile: &'a CustomerProfile,
    prices: &'a PriceSchedule,
    customer: &'a Customer,
    blocks: &'a BlockSchedule,
) -> impl Iterator<Item = (bool, f64)> + 'a {
    (0..profile.x.len()).flat_map(move |t| {
        let x = profile.x[t];
        let g = marginal_utility_unchecked(x, customer.w[t], customer.alpha);
        let b = blocks.b[t];
        let first = (x > 0.0 && profile.y[t] < b).then(|| (false, g - prices.p_l[t]));
        let second = (x > 0.0 && profile.z[t] > b).then(|| (true, g - prices.p_u[t]));
        first.into_iter().chain(second)
    })
}

/// Evaluates the customer's KKT system. Stationarity is checked only on slots
/// whose own bounds are inactive: the first-block line where `0 < y < b`, the
/// second-block line where `z > b`.
pub fn kkt_residual(
    profile: &CustomerProfile,
    prices: &PriceSchedule,
    mult: KktMultipliers,
    customer: &Customer,
    blocks: &BlockSchedule,
) -> KktResidual {
    let shift = mult.lambda1 - mult.lambda2;
    let mut r = KktResidual::default();
    for (second, gap) in stationarity_gaps(profile, prices, customer, blocks) {
        let v = (gap - shift).abs();
        if second {
            r.stationarity_z = r.stationarity_z.max(v);
        } else {
            r.stationarity_y = r.stationarity_y.max(v);
        }
    }
    let total = profile.total();
    r.comp_slack_1 = (mult.lambda1 * (total - customer.d_max)).abs();
    r.comp_slack_2 = (mult.lambda2 * (customer.d_min - total)).abs();
    r
}

/// Active-set multiplier estimate: the mean stationarity gap is attributed to
/// whichever daily bound is active, and both multipliers are zero when neither is.
pub fn recover_multipliers(
    profile: &CustomerProfile,
    prices: &PriceSchedule,
    customer: &Customer,
    blocks: &BlockSchedule,
) -> KktMultipliers {
    let (sum, count) = stationarity_gaps(profile, prices, customer, blocks)
        .fold((0.0, 0usize), |(s, n), (_, g)| (s + g, n + 1));
    let mean = if count == 0 { 0.0 } else { sum / count as f64 };
    let total = profile.total();
    let at_max = total >= customer.d_max - 1e-7 * customer.d_max.abs().max(1.0);
    let at_min = total <= customer.d_min + 1e-7 * customer.d_min.abs().max(1.0);
    KktMultipliers {
        lambda1: if at_max { mean.max(0.0) } else { 0.0 },
        lambda2: if at_min { (-mean).max(0.0) } else { 0.0 },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn customer(w: Vec<f64>, d_min: f64, d_max: f64) -> Customer {
        Customer {
            id: 0,
            w,
            alpha: 1.0,
            d_min,
            d_max,
        }
    }

    fn blocks(b: f64, slots: usize) -> BlockSchedule {
        BlockSchedule { b: vec![b; slots] }
    }

    fn prices(p_l: f64, p_u: f64, slots: usize) -> PriceSchedule {
        PriceSchedule {
            p_l: vec![p_l; slots],
            p_u: vec![p_u; slots],
        }
    }

    #[test]
    fn gradient_step_from_zero() {
        let bl = blocks(25.0, 1);
        let c = customer(vec![40.0], 0.0, 100.0);
        let p = CustomerProfile::from_consumption(&[0.0], &bl);
        let raw = gradient_step(&p, &prices(20.0, 30.0, 1), 0.1, &c, &bl);
        assert!((raw.y[0] - 2.0).abs() < 1e-12);
        assert!((raw.z[0] - 26.0).abs() < 1e-12);
        assert!((raw.x[0] - 3.0).abs() < 1e-12);
        let next = project_split(&raw, &c, &bl).unwrap();
        assert!((next.x[0] - 3.0).abs() < 1e-12);
        assert_eq!(next.z[0], 25.0);
    }

    #[test]
    fn stationary_and_zero_step_leave_profile_unchanged() {
        let bl = blocks(25.0, 1);
        let c = customer(vec![40.0], 0.0, 100.0);
        // U'(10) = 30 in both blocks
        let p = CustomerProfile::from_consumption(&[10.0], &bl);
        let raw = gradient_step(&p, &prices(30.0, 30.0, 1), 0.5, &c, &bl);
        assert_eq!(
            (raw.x.clone(), raw.y.clone(), raw.z.clone()),
            (p.x.clone(), p.y.clone(), p.z.clone())
        );
        let raw = gradient_step(&p, &prices(1.0, 2.0, 1), 0.0, &c, &bl);
        assert_eq!(raw.x, p.x);
        assert_eq!(project_split(&raw, &c, &bl).unwrap(), p);
    }

    #[test]
    fn projection_examples() {
        let bl = blocks(25.0, 2);
        let c = customer(vec![40.0, 40.0], 0.0, 100.0);
        let p = project_profile(&[12.0, 7.5], &c, &bl).unwrap();
        assert_eq!(p.x, vec![12.0, 7.5]);
        let p = project_profile(&[-5.0, 10.0], &c, &bl).unwrap();
        assert_eq!(p.x, vec![0.0, 10.0]);
        let c = customer(vec![40.0, 40.0], 0.0, 40.0);
        let p = project_profile(&[30.0, 30.0], &c, &bl).unwrap();
        assert!((p.x[0] - 20.0).abs() < 1e-9 && (p.x[1] - 20.0).abs() < 1e-9);
        assert!(p.total() <= 40.0);
    }

    /// Dense grid search over the feasible set as an independent check of the
    /// water-filling projection.
    #[test]
    fn projection_matches_grid_search() {
        let bl = blocks(25.0, 2);
        let c = customer(vec![40.0, 40.0], 0.0, 40.0);
        let raw = [30.0, 30.0];
        let step = 0.01;
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for i in 0..=4000 {
            for j in 0..=(4000 - i) {
                let (a, b) = (i as f64 * step, j as f64 * step);
                let d = (a - raw[0]).powi(2) + (b - raw[1]).powi(2);
                if d < best.0 {
                    best = (d, a, b);
                }
            }
        }
        let p = project_profile(&raw, &c, &bl).unwrap();
        assert!((p.x[0] - best.1).abs() <= step);
        assert!((p.x[1] - best.2).abs() <= step);
    }

    #[test]
    fn projection_raises_to_minimum() {
        let bl = blocks(25.0, 3);
        let c = customer(vec![40.0; 3], 30.0, 100.0);
        let p = project_profile(&[-10.0, 0.0, 5.0], &c, &bl).unwrap();
        assert!((p.total() - 30.0).abs() <= 1e-9);
        assert!(p.total() >= 30.0);
        // uniform raise k with (k - 10) + k + (5 + k) = 30, so k = 35/3
        let k = 35.0 / 3.0;
        assert!((p.x[0] - (k - 10.0)).abs() < 1e-9);
        assert!((p.x[1] - k).abs() < 1e-9);
        assert!((p.x[2] - (5.0 + k)).abs() < 1e-9);
    }

    #[test]
    fn infeasible_and_non_finite_inputs() {
        let bl = blocks(25.0, 1);
        let c = customer(vec![40.0], 10.0, 5.0);
        assert!(matches!(
            project_profile(&[1.0], &c, &bl),
            Err(ProjectionError::Infeasible { .. })
        ));
        let c = customer(vec![40.0], 0.0, 5.0);
        assert!(matches!(
            project_profile(&[f64::NAN], &c, &bl),
            Err(ProjectionError::NonFinite { slot: 0 })
        ));
    }

    #[test]
    fn block_pair_projection_cases() {
        let b = 25.0;
        assert_eq!(project_block_pair(10.0, 25.0, b), (10.0, 25.0));
        assert_eq!(project_block_pair(20.0, 30.0, b), (20.0, 30.0));
        // y above b, z inside: clip y
        assert_eq!(project_block_pair(27.0, 30.0, b), (25.0, 30.0));
        // z below b: clip z
        assert_eq!(project_block_pair(10.0, 20.0, b), (10.0, 25.0));
        // x negative: onto y + z = b
        let (y, z) = project_block_pair(-6.0, 27.0, b);
        assert!((y + z - b).abs() < 1e-12);
        assert!((y - (-4.0)).abs() < 1e-12 && (z - 29.0).abs() < 1e-12);
        // far below in both: the vertex (y, z) = (0, b)
        assert_eq!(project_block_pair(-3.0, 10.0, b), (0.0, 25.0));
    }

    #[test]
    fn split_projection_respects_daily_max() {
        let bl = blocks(25.0, 2);
        let c = customer(vec![100.0, 100.0], 0.0, 40.0);
        let (y, z) = project_pairs(&[25.0, 25.0], &[40.0, 40.0], &c, &bl).unwrap();
        let total: f64 = (0..2).map(|t| y[t] + z[t] - 25.0).sum();
        assert!((40.0 - 1e-9..=40.0).contains(&total));
    }

    #[test]
    fn net_utility_examples() {
        let bl = blocks(25.0, 1);
        let c = customer(vec![40.0], 0.0, 100.0);
        let zero = CustomerProfile::from_consumption(&[0.0], &bl);
        assert_eq!(net_utility(&zero, &prices(2.0, 5.0, 1), &c, &bl), 0.0);
        let p = CustomerProfile::from_consumption(&[10.0], &bl);
        assert!((net_utility(&p, &prices(2.0, 5.0, 1), &c, &bl) - 330.0).abs() < 1e-12);
        let c = customer(vec![100.0], 0.0, 100.0);
        let p = CustomerProfile::from_consumption(&[30.0], &bl);
        assert!((net_utility(&p, &prices(1.0, 2.0, 1), &c, &bl) - 2515.0).abs() < 1e-12);
    }

    #[test]
    fn kkt_examples() {
        let bl = blocks(25.0, 1);
        let c = customer(vec![40.0], 0.0, 100.0);
        // U'(10) = 30
        let p = CustomerProfile::from_consumption(&[10.0], &bl);
        let r = kkt_residual(
            &p,
            &prices(30.0, 45.0, 1),
            KktMultipliers::default(),
            &c,
            &bl,
        );
        assert_eq!(r.stationarity_y, 0.0);
        assert_eq!(r.stationarity_z, 0.0);
        let r = kkt_residual(
            &p,
            &prices(30.0, 45.0, 1),
            KktMultipliers {
                lambda1: 1.0,
                lambda2: 0.0,
            },
            &c,
            &bl,
        );
        assert!(r.comp_slack_1 > 0.0);
        assert_eq!(r.comp_slack_2, 0.0);
    }

    #[test]
    fn multipliers_follow_active_bound() {
        let bl = blocks(25.0, 2);
        // capped at 20 in total; U'(10) = 30 > p_l = 20, gap 10 on both slots
        let c = customer(vec![40.0, 40.0], 0.0, 20.0);
        let p = CustomerProfile::from_consumption(&[10.0, 10.0], &bl);
        let pr = prices(20.0, 30.0, 2);
        let m = recover_multipliers(&p, &pr, &c, &bl);
        assert!((m.lambda1 - 10.0).abs() < 1e-12);
        assert_eq!(m.lambda2, 0.0);
        assert!(kkt_residual(&p, &pr, m, &c, &bl).worst() < 1e-12);
    }

    fn feasible_point(seed: &[f64], d_min: f64, d_max: f64) -> Vec<f64> {
        let s: f64 = seed.iter().sum();
        let target = d_min + (d_max - d_min) * 0.5;
        if s == 0.0 {
            vec![target / seed.len() as f64; seed.len()]
        } else {
            seed.iter().map(|v| v * target / s).collect()
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn profile_projection_idempotent_and_optimal(
            raw in proptest::collection::vec(-50.0f64..80.0, 1..5),
            d_min in 0.0f64..40.0, width in 0.0f64..80.0,
            q_seed in proptest::collection::vec(0.0f64..1.0, 5),
        ) {
            let slots = raw.len();
            let bl = blocks(25.0, slots);
            let c = customer(vec![100.0; slots], d_min, d_min + width);
            let p = project_profile(&raw, &c, &bl).unwrap();
            prop_assert!(p.x.iter().all(|&x| x >= 0.0));
            prop_assert!(p.total() >= c.d_min - 1e-9 && p.total() <= c.d_max + 1e-9);
            let again = project_profile(&p.x, &c, &bl).unwrap();
            for t in 0..slots {
                prop_assert!((again.x[t] - p.x[t]).abs() <= 1e-12);
            }
            let q = feasible_point(&q_seed[..slots], c.d_min, c.d_max);
            let vi: f64 = (0..slots).map(|t| (raw[t] - p.x[t]) * (q[t] - p.x[t])).sum();
            prop_assert!(vi <= 1e-9 * (1.0 + raw.iter().map(|r| r.abs()).sum::<f64>()));
        }

        #[test]
        fn pair_projection_idempotent_and_optimal(
            raw_y in proptest::collection::vec(-40.0f64..40.0, 1..5),
            raw_z in proptest::collection::vec(0.0f64..80.0, 5),
            d_min in 0.0f64..40.0, width in 0.0f64..80.0,
            q_seed in proptest::collection::vec(0.0f64..1.0, 5),
            q_mix in proptest::collection::vec(0.0f64..1.0, 5),
        ) {
            let slots = raw_y.len();
            let raw_z = &raw_z[..slots];
            let bl = blocks(25.0, slots);
            let c = customer(vec![100.0; slots], d_min, d_min + width);
            let (y, z) = project_pairs(&raw_y, raw_z, &c, &bl).unwrap();
            let total: f64 = (0..slots).map(|t| recompose(y[t], z[t], 25.0)).sum();
            prop_assert!(total >= c.d_min - 1e-9 && total <= c.d_max + 1e-9);
            for t in 0..slots {
                prop_assert!(y[t] <= 25.0 && z[t] >= 25.0 && y[t] + z[t] - 25.0 >= -1e-12);
            }
            let (y2, z2) = project_pairs(&y, &z, &c, &bl).unwrap();
            for t in 0..slots {
                prop_assert!((y2[t] - y[t]).abs() <= 1e-12 && (z2[t] - z[t]).abs() <= 1e-12);
            }
            // feasible comparison point: a feasible x, split with a random non-canonical mix
            let qx = feasible_point(&q_seed[..slots], c.d_min, c.d_max);
            let mut vi = 0.0;
            for t in 0..slots {
                let (cy, cz) = canonical_split(qx[t], 25.0);
                let s = 10.0 * q_mix[t];
                let (qy, qz) = (cy - s, cz + s);
                vi += (raw_y[t] - y[t]) * (qy - y[t]) + (raw_z[t] - z[t]) * (qz - z[t]);
            }
            prop_assert!(vi <= 1e-9 * (1.0 + raw_y.iter().chain(raw_z).map(|r| r.abs()).sum::<f64>()));
        }
    }
}

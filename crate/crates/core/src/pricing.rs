//! Marginal-cost block prices set by the power company.

use serde::{Deserialize, Serialize};

use crate::model::{
    cost_unchecked, Allocation, BlockSchedule, CostParams, PriceSchedule, Scenario, SlotCost,
};

/// Aggregate first-block energy `Y = sum y` and second-block energy
/// `Z = sum (z - b)` of one slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateDemand {
    pub first_block: f64,
    pub second_block: f64,
}

impl AggregateDemand {
    pub fn total(&self) -> f64 {
        self.first_block + self.second_block
    }
}

/// Sums the block energies of every customer, slot by slot.
pub fn aggregate(alloc: &Allocation, blocks: &BlockSchedule) -> Vec<AggregateDemand> {
    let mut out = vec![
        AggregateDemand {
            first_block: 0.0,
            second_block: 0.0,
        };
        blocks.b.len()
    ];
    for p in &alloc.profiles {
        for (t, agg) in out.iter_mut().enumerate() {
            agg.first_block += p.y[t];
            agg.second_block += p.z[t] - blocks.b[t];
        }
    }
    out
}

/// Block prices of one slot: each block is charged the marginal cost of its
/// own cost segment at the current total demand, `p_l = 2 beta1 D` and
/// `p_u = 2 beta2 D`.
pub fn block_prices(agg: AggregateDemand, cost: SlotCost) -> (f64, f64) {
    let d = agg.total();
    (2.0 * cost.beta1 * d, 2.0 * cost.beta2 * d)
}

/// Prices of every slot for the given allocation.
pub fn price_schedule(alloc: &Allocation, scenario: &Scenario) -> PriceSchedule {
    let (p_l, p_u) = aggregate(alloc, &scenario.blocks)
        .into_iter()
        .enumerate()
        .map(|(t, agg)| block_prices(agg, scenario.cost.slot(t)))
        .unzip();
    PriceSchedule { p_l, p_u }
}

/// Net revenue of the power company: block sales minus production cost.
pub fn revenue(
    alloc: &Allocation,
    prices: &PriceSchedule,
    blocks: &BlockSchedule,
    cost: &CostParams,
) -> f64 {
    let n = alloc.num_customers() as f64;
    aggregate(alloc, blocks)
        .iter()
        .enumerate()
        .map(|(t, agg)| {
            let threshold = blocks.b[t] * n;
            prices.p_l[t] * agg.first_block + prices.p_u[t] * agg.second_block
                - cost_unchecked(agg.total(), threshold, cost.slot(t))
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn blocks(b: f64) -> BlockSchedule {
        BlockSchedule { b: vec![b] }
    }

    fn cost(b1: f64, b2: f64) -> CostParams {
        CostParams {
            beta1: vec![b1],
            beta2: vec![b2],
        }
    }

    fn demand(d: f64) -> AggregateDemand {
        AggregateDemand {
            first_block: d,
            second_block: 0.0,
        }
    }

    #[test]
    fn price_examples() {
        let c = SlotCost {
            beta1: 0.5,
            beta2: 0.6,
        };
        assert_eq!(block_prices(demand(0.0), c), (0.0, 0.0));
        let (pl, pu) = block_prices(demand(40.0), c);
        assert!((pl - 40.0).abs() < 1e-12 && (pu - 48.0).abs() < 1e-12);
    }

    #[test]
    fn aggregate_splits_blocks() {
        let alloc = Allocation::from_consumption(&[vec![30.0], vec![10.0]], &blocks(25.0));
        let agg = aggregate(&alloc, &blocks(25.0));
        assert_eq!(agg[0].first_block, 35.0);
        assert_eq!(agg[0].second_block, 5.0);
        assert_eq!(agg[0].total(), 40.0);
    }

    #[test]
    fn revenue_examples() {
        let zero = Allocation::from_consumption(&[vec![0.0], vec![0.0]], &blocks(25.0));
        let prices = PriceSchedule {
            p_l: vec![3.0],
            p_u: vec![4.0],
        };
        assert_eq!(revenue(&zero, &prices, &blocks(25.0), &cost(0.5, 0.6)), 0.0);

        // 2*10 - 0.01*100
        let one = Allocation::from_consumption(&[vec![10.0]], &blocks(25.0));
        let prices = PriceSchedule {
            p_l: vec![2.0],
            p_u: vec![5.0],
        };
        let r = revenue(&one, &prices, &blocks(25.0), &cost(0.01, 0.01));
        assert!((r - 19.0).abs() < 1e-12);

        // Y = 50, Z = 10
        let two = Allocation::from_consumption(&[vec![30.0], vec![30.0]], &blocks(25.0));
        let prices = PriceSchedule {
            p_l: vec![1.0],
            p_u: vec![2.0],
        };
        assert_eq!(revenue(&two, &prices, &blocks(25.0), &cost(0.0, 0.0)), 70.0);
    }

    proptest! {
        #[test]
        fn price_ratio_and_linearity(d in 1e-6f64..1e4, b1 in 0.01f64..2.0, b2 in 0.01f64..2.0) {
            let c = SlotCost { beta1: b1, beta2: b2 };
            let (pl, pu) = block_prices(demand(d), c);
            prop_assert!(pl >= 0.0 && pu >= 0.0);
            prop_assert!(((pu / pl) - b2 / b1).abs() <= 1e-12 * (b2 / b1));
            if b2 > b1 {
                prop_assert!(pu > pl);
            }
            let (pl2, pu2) = block_prices(demand(2.0 * d), c);
            prop_assert_eq!(pl2, 2.0 * pl);
            prop_assert_eq!(pu2, 2.0 * pu);
        }
    }
}

//! Single-round payoff comparison of truthful bidding against underbidding.
//!
//! Two SPs each need more than half the pool, so exactly one of them can be
//! served. For a focal SP with valuation `b_max` facing a rival bid `r`, the
//! truthful bid `b_max` and an underbid `b < b_max` fall into one of five
//! outcome regions:
//!
//! | region | condition | focal outcome |
//! |---|---|---|
//! | `TruthfulWins` | `r < b_max`, bid `b_max` | wins, surplus 0 |
//! | `UnderbidWins` | `r < b < b_max` | wins, surplus `b_max − b` |
//! | `TruthfulLoses` | `r > b_max`, bid `b_max` | loses, pays the penalty |
//! | `UnderbidLoses` | `r > b`, `b < b_max` | loses, pays the penalty |
//! | `BothLose` | `b < r`, `r > b_max` | both bids lose |
//!
//! Payoffs come from the real solver and settlement rule.

use serde::{Deserialize, Serialize};

use crate::market::{sp_round_profit, Money, SpId, SubcarrierPool};
use crate::wdp::{solve_wdp, Lot};
use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Region {
    TruthfulWins,
    UnderbidWins,
    TruthfulLoses,
    UnderbidLoses,
    BothLose,
}

impl Region {
    pub const ALL: [Region; 5] =
        [Region::TruthfulWins, Region::UnderbidWins, Region::TruthfulLoses, Region::UnderbidLoses, Region::BothLose];

    /// Whether underbidding is expected to beat truthful bidding here.
    pub fn favours_underbid(self) -> bool {
        self == Region::UnderbidWins
    }
}

/// One enumerated comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub valuation: Money,
    pub rival: Money,
    pub underbid: Money,
    pub truthful_payoff: Money,
    pub underbid_payoff: Money,
    pub regions: Vec<Region>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionVerdict {
    pub region: Region,
    pub instances: usize,
    /// Truthful ≥ underbid everywhere (or underbid > truthful for `UnderbidWins`).
    pub holds: bool,
}

/// Payoff of the focal SP (id 0) bidding `own` against a rival bid.
pub fn focal_payoff(valuation: Money, own: Money, rival: Money, penalty: Money) -> Result<Money> {
    let pool = SubcarrierPool::new(10, Money::ZERO)?;
    let lots = [Lot::new(0, 6, own), Lot::new(1, 6, rival)];
    let alloc = solve_wdp(&lots, &pool);
    let won = alloc.accepted_bid_ids.contains(&0);
    debug_assert!(alloc.subcarrier_assignment.values().all(|&s| s == SpId(0) || s == SpId(1)));
    sp_round_profit(won, valuation, own, if won { Money::ZERO } else { penalty })
}

fn regions_of(valuation: Money, rival: Money, underbid: Money) -> Vec<Region> {
    let mut out = Vec::new();
    if rival < valuation {
        out.push(Region::TruthfulWins);
    }
    if rival < underbid && underbid < valuation {
        out.push(Region::UnderbidWins);
    }
    if rival > valuation {
        out.push(Region::TruthfulLoses);
    }
    if rival > underbid && underbid < valuation {
        out.push(Region::UnderbidLoses);
    }
    if underbid < rival && rival > valuation {
        out.push(Region::BothLose);
    }
    out
}

/// Enumerates rival bids and underbids on a `step` grid in `(0, 2·b_max]`,
/// skipping ties, and compares payoffs.
pub fn enumerate(valuation: Money, penalty: Money, step: Money) -> Result<Vec<Instance>> {
    let mut out = Vec::new();
    let mut rival = step;
    while rival <= valuation.times(2) {
        let mut underbid = step;
        while underbid < valuation {
            if rival != underbid && rival != valuation {
                out.push(Instance {
                    valuation,
                    rival,
                    underbid,
                    truthful_payoff: focal_payoff(valuation, valuation, rival, penalty)?,
                    underbid_payoff: focal_payoff(valuation, underbid, rival, penalty)?,
                    regions: regions_of(valuation, rival, underbid),
                });
            }
            underbid += step;
        }
        rival += step;
    }
    Ok(out)
}

/// Checks each region's dominance claim over `instances`.
///
/// `TruthfulWins` and `TruthfulLoses` describe the truthful bid, so they are
/// judged on instances whose underbid does not land in `UnderbidWins`.
pub fn verdicts(instances: &[Instance]) -> Vec<RegionVerdict> {
    Region::ALL
        .iter()
        .map(|&region| {
            let relevant: Vec<&Instance> = instances
                .iter()
                .filter(|i| i.regions.contains(&region))
                .filter(|i| region.favours_underbid() || !i.regions.contains(&Region::UnderbidWins))
                .collect();
            let holds = !relevant.is_empty()
                && relevant.iter().all(|i| {
                    if region.favours_underbid() {
                        i.underbid_payoff > i.truthful_payoff
                    } else {
                        i.truthful_payoff >= i.underbid_payoff
                    }
                });
            RegionVerdict { region, instances: relevant.len(), holds }
        })
        .collect()
}

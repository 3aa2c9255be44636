//! Economic primitives of the subcarrier market: money, demand, bids, ledgers
//! and the per-round settlement step.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Neg, Sub, SubAssign};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::MarketError;
use crate::wdp::Allocation;

/// Service provider identifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SpId(pub u32);

impl fmt::Display for SpId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "sp{}", self.0)
    }
}

/// Amount of money in integer cents.
///
/// Settlement identities (revenue conservation, profit) are checked with exact
/// equality, so every quantity that flows through the ledger is kept at this
/// fixed scale.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Money(i64);

impl Money {
    pub const ZERO: Money = Money(0);

    pub const fn from_cents(cents: i64) -> Self {
        Money(cents)
    }

    pub const fn from_units(units: i64) -> Self {
        Money(units * 100)
    }

    /// Rounds to the nearest cent, halves away from zero.
    pub fn from_f64(units: f64) -> Self {
        Money((units * 100.0).round() as i64)
    }

    pub const fn cents(self) -> i64 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / 100.0
    }

    /// Multiplies by a real factor, rounding to the nearest cent.
    pub fn scale(self, factor: f64) -> Self {
        Money((self.0 as f64 * factor).round() as i64)
    }

    /// `self * num / den`, rounded down to the cent.
    pub fn mul_div_floor(self, num: i64, den: i64) -> Self {
        Money((self.0 as i128 * num as i128).div_euclid(den as i128) as i64)
    }

    pub fn times(self, n: u32) -> Self {
        Money(self.0 * n as i64)
    }

    pub fn abs(self) -> Self {
        Money(self.0.abs())
    }

    pub fn is_positive(self) -> bool {
        self.0 > 0
    }
}

impl fmt::Display for Money {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        write!(f, "{sign}{}.{:02}", abs / 100, abs % 100)
    }
}

impl Add for Money {
    type Output = Money;
    fn add(self, rhs: Money) -> Money {
        Money(self.0 + rhs.0)
    }
}

impl Sub for Money {
    type Output = Money;
    fn sub(self, rhs: Money) -> Money {
        Money(self.0 - rhs.0)
    }
}

impl Neg for Money {
    type Output = Money;
    fn neg(self) -> Money {
        Money(-self.0)
    }
}

impl AddAssign for Money {
    fn add_assign(&mut self, rhs: Money) {
        self.0 += rhs.0;
    }
}

impl SubAssign for Money {
    fn sub_assign(&mut self, rhs: Money) {
        self.0 -= rhs.0;
    }
}

impl Sum for Money {
    fn sum<I: Iterator<Item = Money>>(iter: I) -> Money {
        Money(iter.map(|m| m.0).sum())
    }
}

impl<'a> Sum<&'a Money> for Money {
    fn sum<I: Iterator<Item = &'a Money>>(iter: I) -> Money {
        Money(iter.map(|m| m.0).sum())
    }
}

impl Serialize for Money {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.as_f64())
    }
}

impl<'de> Deserialize<'de> for Money {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let units = f64::deserialize(d)?;
        if !units.is_finite() {
            return Err(serde::de::Error::custom("money must be finite"));
        }
        Ok(Money::from_f64(units))
    }
}

/// Data rate in thousandths of a rate unit.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Rate(i64);

impl Rate {
    pub const fn from_milli(milli: i64) -> Self {
        Rate(milli)
    }

    pub fn from_f64(units: f64) -> Self {
        Rate((units * 1000.0).round() as i64)
    }

    pub const fn milli(self) -> i64 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / 1000.0
    }
}

impl Serialize for Rate {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.as_f64())
    }
}

impl<'de> Deserialize<'de> for Rate {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let units = f64::deserialize(d)?;
        if !units.is_finite() {
            return Err(serde::de::Error::custom("rate must be finite"));
        }
        Ok(Rate::from_f64(units))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubcarrierPool {
    pub total_count: u32,
    pub per_subcarrier_reserve: Money,
}

impl SubcarrierPool {
    pub fn new(total_count: u32, per_subcarrier_reserve: Money) -> Result<Self, MarketError> {
        if total_count == 0 {
            return Err(MarketError::InvalidConfig("subcarrier pool must hold at least one subcarrier".into()));
        }
        if per_subcarrier_reserve < Money::ZERO {
            return Err(MarketError::InvalidConfig("reserve price must be non-negative".into()));
        }
        Ok(Self { total_count, per_subcarrier_reserve })
    }

    /// Minimum acceptable price for a bid that needs `subcarriers`.
    pub fn reserve_screen(&self, subcarriers: u32) -> Money {
        self.per_subcarrier_reserve.times(subcarriers)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QosDemand {
    pub min_data_rate: Rate,
    pub subscribers_to_serve: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bid {
    pub sp_id: SpId,
    pub round: u32,
    pub demand: QosDemand,
    pub price: Money,
    pub valuation: Money,
    pub coop_partner: Option<SpId>,
    pub subcarriers_needed: u32,
}

/// Number of subcarriers needed to carry `rate`: `ceil(rate / rate_per_subcarrier)`.
pub fn min_subcarriers(rate: Rate, rate_per_subcarrier: Rate) -> Result<u32, MarketError> {
    if rate_per_subcarrier.milli() <= 0 {
        return Err(MarketError::InvalidConfig(format!(
            "rate per subcarrier must be positive, got {}",
            rate_per_subcarrier.as_f64()
        )));
    }
    if rate.milli() < 0 {
        return Err(MarketError::InvalidConfig(format!("data rate must be non-negative, got {}", rate.as_f64())));
    }
    let per = rate_per_subcarrier.milli();
    Ok(((rate.milli() + per - 1) / per) as u32)
}

/// Penalty owed for leaving subscribers unserved.
pub fn compute_penalty(unserved_subscribers: u32, unit_penalty: Money) -> Money {
    unit_penalty.times(unserved_subscribers)
}

/// Per-round SP profit: the surplus on a win minus any penalty.
pub fn sp_round_profit(won: bool, valuation: Money, price: Money, penalty: Money) -> Result<Money, MarketError> {
    if price > valuation {
        return Err(MarketError::Contract(format!("bid {price} exceeds valuation {valuation}")));
    }
    let surplus = if won { valuation - price } else { Money::ZERO };
    Ok(surplus - penalty)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpLedger {
    pub sp_id: SpId,
    pub budget: Money,
    pub cumulative_profit: Money,
    pub consecutive_losses: u32,
    pub consecutive_wins: u32,
    pub active: bool,
    pub unit_penalty: Money,
}

impl SpLedger {
    pub fn new(sp_id: SpId, budget: Money, unit_penalty: Money) -> Self {
        Self {
            sp_id,
            budget,
            cumulative_profit: Money::ZERO,
            consecutive_losses: 0,
            consecutive_wins: 0,
            active: budget.is_positive(),
            unit_penalty,
        }
    }

    fn record_outcome(&mut self, won: bool, profit: Money) {
        self.budget += profit;
        self.cumulative_profit += profit;
        if won {
            self.consecutive_wins += 1;
            self.consecutive_losses = 0;
        } else {
            self.consecutive_losses += 1;
            self.consecutive_wins = 0;
        }
        if !self.budget.is_positive() {
            self.active = false;
        }
    }
}

/// Market-level markers attached to a settled round.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MarketFlag {
    /// Group flagged as colluding this round.
    Collusion(Vec<SpId>),
    /// Members bidding jointly under a coopetition pact.
    Coopetition(Vec<SpId>),
    /// SP was served through the fairness priority set.
    FairnessPriority(SpId),
    /// SP's bid was discarded by collusion punishment.
    Ineligible(SpId),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SettlementEntry {
    pub bid: Bid,
    /// Price used for winner determination after fairness / punishment adjustments.
    pub effective_price: Money,
    pub won: bool,
    pub payment: Money,
    pub penalty: Money,
    pub profit: Money,
    pub budget_after: Money,
    pub consecutive_losses: u32,
    pub consecutive_wins: u32,
    pub excluded: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u32,
    pub entries: Vec<SettlementEntry>,
    pub inp_revenue: Money,
    pub reserve_price_used: Money,
    pub fairness_adjustments: BTreeMap<SpId, f64>,
    pub flags: Vec<MarketFlag>,
}

impl RoundRecord {
    pub fn entry(&self, sp: SpId) -> Option<&SettlementEntry> {
        self.entries.iter().find(|e| e.bid.sp_id == sp)
    }

    pub fn winners(&self) -> impl Iterator<Item = SpId> + '_ {
        self.entries.iter().filter(|e| e.won).map(|e| e.bid.sp_id)
    }

    pub fn payments(&self) -> Money {
        self.entries.iter().map(|e| e.payment).sum()
    }
}

/// Ledgers keyed by SP.
pub type Ledgers = BTreeMap<SpId, SpLedger>;

/// Settles one round: pays winners' bids to the InP, charges losers their
/// penalty, updates budgets and streaks, and marks exhausted SPs inactive.
///
/// An SP wins when the allocation assigns it at least `subcarriers_needed`
/// subcarriers. `effective_prices` defaults to the submitted price when absent.
pub fn settle_round(
    bids: &[Bid],
    allocation: &Allocation,
    ledgers: &mut Ledgers,
    effective_prices: &BTreeMap<SpId, Money>,
) -> Result<RoundRecord, MarketError> {
    let round = bids.first().map(|b| b.round).unwrap_or(0);
    let bidders: BTreeSet<SpId> = bids.iter().map(|b| b.sp_id).collect();
    let mut served: BTreeMap<SpId, u32> = BTreeMap::new();
    for sp in allocation.subcarrier_assignment.values() {
        if !bidders.contains(sp) {
            return Err(MarketError::Invariant(format!("allocation assigns a subcarrier to {sp}, which did not bid")));
        }
        *served.entry(*sp).or_default() += 1;
    }

    let mut entries = Vec::with_capacity(bids.len());
    let mut revenue = Money::ZERO;
    for bid in bids {
        let ledger = ledgers
            .get_mut(&bid.sp_id)
            .ok_or_else(|| MarketError::Invariant(format!("no ledger for {}", bid.sp_id)))?;
        if !ledger.active {
            return Err(MarketError::Invariant(format!("{} bid while inactive", bid.sp_id)));
        }
        let won = served.get(&bid.sp_id).copied().unwrap_or(0) >= bid.subcarriers_needed;
        let payment = if won { bid.price } else { Money::ZERO };
        let unserved = if won { 0 } else { bid.demand.subscribers_to_serve };
        let penalty = compute_penalty(unserved, ledger.unit_penalty);
        let profit = sp_round_profit(won, bid.valuation, bid.price, penalty)?;
        ledger.record_outcome(won, profit);
        revenue += payment;
        entries.push(SettlementEntry {
            bid: bid.clone(),
            effective_price: effective_prices.get(&bid.sp_id).copied().unwrap_or(bid.price),
            won,
            payment,
            penalty,
            profit,
            budget_after: ledger.budget,
            consecutive_losses: ledger.consecutive_losses,
            consecutive_wins: ledger.consecutive_wins,
            excluded: !ledger.active,
        });
    }

    Ok(RoundRecord {
        round,
        entries,
        inp_revenue: revenue,
        reserve_price_used: Money::ZERO,
        fairness_adjustments: BTreeMap::new(),
        flags: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wdp::Allocation;

    fn bid(sp: u32, price: i64, valuation: i64) -> Bid {
        Bid {
            sp_id: SpId(sp),
            round: 1,
            demand: QosDemand { min_data_rate: Rate::from_f64(20.0), subscribers_to_serve: 3 },
            price: Money::from_units(price),
            valuation: Money::from_units(valuation),
            coop_partner: None,
            subcarriers_needed: 4,
        }
    }

    fn serve(sps: &[u32]) -> Allocation {
        let mut a = Allocation::default();
        let mut next = 0;
        for &sp in sps {
            for _ in 0..4 {
                a.subcarrier_assignment.insert(next, SpId(sp));
                next += 1;
            }
        }
        a
    }

    #[test]
    fn subcarrier_demand_is_a_ceiling() {
        assert_eq!(min_subcarriers(Rate::from_f64(20.0), Rate::from_f64(5.0)).unwrap(), 4);
        assert_eq!(min_subcarriers(Rate::from_f64(0.0), Rate::from_f64(5.0)).unwrap(), 0);
        assert_eq!(min_subcarriers(Rate::from_f64(3.2), Rate::from_f64(1.0)).unwrap(), 4);
        assert!(matches!(
            min_subcarriers(Rate::from_f64(1.0), Rate::from_f64(0.0)),
            Err(MarketError::InvalidConfig(_))
        ));
    }

    #[test]
    fn penalty_scales_with_unserved_subscribers() {
        assert_eq!(compute_penalty(3, Money::from_units(25)), Money::from_units(75));
        assert_eq!(compute_penalty(0, Money::from_units(25)), Money::ZERO);
        assert_eq!(compute_penalty(5, Money::from_units(10)), Money::from_units(50));
    }

    #[test]
    fn round_profit() {
        let u = Money::from_units;
        assert_eq!(sp_round_profit(true, u(200), u(150), u(0)).unwrap(), u(50));
        assert_eq!(sp_round_profit(false, u(200), u(150), u(75)).unwrap(), u(-75));
        assert_eq!(sp_round_profit(true, u(200), u(200), u(0)).unwrap(), u(0));
        assert!(sp_round_profit(true, u(100), u(101), u(0)).is_err());
    }

    #[test]
    fn money_display_and_scaling() {
        assert_eq!(Money::from_cents(-1234).to_string(), "-12.34");
        assert_eq!(Money::from_units(100).scale(1.1), Money::from_units(110));
        assert_eq!(Money::from_units(100).mul_div_floor(3, 10), Money::from_units(30));
    }

    #[test]
    fn settlement_of_winner_and_losers() {
        let mut ledgers = Ledgers::new();
        ledgers.insert(SpId(1), SpLedger::new(SpId(1), Money::from_units(500), Money::from_units(25)));
        ledgers.insert(SpId(2), SpLedger::new(SpId(2), Money::from_units(500), Money::from_units(25)));
        ledgers.insert(SpId(3), SpLedger::new(SpId(3), Money::from_units(50), Money::from_units(25)));
        let bids = vec![bid(1, 100, 120), bid(2, 40, 50), bid(3, 10, 50)];
        let rec = settle_round(&bids, &serve(&[1]), &mut ledgers, &BTreeMap::new()).unwrap();

        assert_eq!(rec.inp_revenue, Money::from_units(100));
        assert_eq!(ledgers[&SpId(1)].budget, Money::from_units(520));
        assert_eq!(ledgers[&SpId(1)].consecutive_wins, 1);
        assert_eq!(ledgers[&SpId(2)].budget, Money::from_units(425));
        assert_eq!(ledgers[&SpId(2)].consecutive_losses, 1);
        assert_eq!(ledgers[&SpId(3)].budget, Money::from_units(-25));
        assert!(!ledgers[&SpId(3)].active);
        assert!(rec.entry(SpId(3)).unwrap().excluded);
    }

    #[test]
    fn win_resets_losing_streak() {
        let mut ledgers = Ledgers::new();
        ledgers.insert(SpId(1), SpLedger::new(SpId(1), Money::from_units(500), Money::from_units(25)));
        let bids = vec![bid(1, 10, 50)];
        settle_round(&bids, &Allocation::default(), &mut ledgers, &BTreeMap::new()).unwrap();
        settle_round(&bids, &Allocation::default(), &mut ledgers, &BTreeMap::new()).unwrap();
        assert_eq!(ledgers[&SpId(1)].consecutive_losses, 2);
        settle_round(&bids, &serve(&[1]), &mut ledgers, &BTreeMap::new()).unwrap();
        let l = &ledgers[&SpId(1)];
        assert_eq!((l.consecutive_losses, l.consecutive_wins), (0, 1));
    }

    #[test]
    fn allocation_to_unknown_sp_is_rejected() {
        let mut ledgers = Ledgers::new();
        ledgers.insert(SpId(1), SpLedger::new(SpId(1), Money::from_units(500), Money::from_units(25)));
        let err = settle_round(&[bid(1, 10, 50)], &serve(&[9]), &mut ledgers, &BTreeMap::new()).unwrap_err();
        assert!(matches!(err, MarketError::Invariant(_)));
    }
}

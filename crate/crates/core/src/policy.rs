//! InP-side market governance: fairness inflation with a bounded-starvation
//! guarantee, reserve-price adjustment from the bid-ask spread, reputation
//! scoring, collusion detection and punishment.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::market::{Bid, Money, SpId};

/// Per-SP fairness bookkeeping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FairnessState {
    pub tau_th: u32,
    /// Inflation weight indexed by consecutive losses; the last entry repeats.
    pub delta_schedule: Vec<f64>,
    losses: BTreeMap<SpId, u32>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FairnessOutcome {
    /// Price presented to winner determination.
    pub effective: BTreeMap<SpId, Money>,
    pub weights: BTreeMap<SpId, f64>,
    /// SPs that must be served this round if they fit, most urgent first.
    pub priority: Vec<SpId>,
}

impl FairnessState {
    pub fn new(tau_th: u32, delta_schedule: Vec<f64>) -> Self {
        Self { tau_th, delta_schedule, losses: BTreeMap::new() }
    }

    pub fn losses(&self, sp: SpId) -> u32 {
        self.losses.get(&sp).copied().unwrap_or(0)
    }

    /// Mirrors the ledger's losing streak after settlement.
    pub fn record(&mut self, sp: SpId, consecutive_losses: u32) {
        self.losses.insert(sp, consecutive_losses);
    }

    pub fn weight(&self, sp: SpId) -> f64 {
        let losses = self.losses(sp) as usize;
        match self.delta_schedule.get(losses) {
            Some(w) => *w,
            None => self.delta_schedule.last().copied().unwrap_or(0.0),
        }
    }

    /// Rounds left before `sp` would reach `tau_th` losses; 0 means it must be
    /// served now.
    fn slack(&self, sp: SpId) -> u32 {
        self.tau_th.saturating_sub(1).saturating_sub(self.losses(sp))
    }
}

/// Inflates each bid by `1 + Δ_s` and computes the hard-priority set.
///
/// The priority set always holds every SP one loss away from `tau_th`. It is
/// then grown earliest-deadline-first until, for every horizon `h` up to
/// `tau_th - 1`, at most `slots * h` unserved SPs would have to be served
/// within `h` rounds. `slots` is how many bids fit in one round. When the
/// roster is schedulable (`bidders <= slots * tau_th`) this keeps every
/// solvent SP below `tau_th` consecutive losses.
pub fn apply_fairness(bids: &[Bid], state: &FairnessState, slots: u32) -> FairnessOutcome {
    let mut out = FairnessOutcome::default();
    for bid in bids {
        let w = state.weight(bid.sp_id);
        out.weights.insert(bid.sp_id, w);
        out.effective.insert(bid.sp_id, bid.price.scale(1.0 + w));
    }

    let mut queue: Vec<(u32, SpId)> = bids.iter().map(|b| (state.slack(b.sp_id), b.sp_id)).collect();
    queue.sort_unstable();
    let mut forced: Vec<SpId> = queue.iter().filter(|(s, _)| *s == 0).map(|(_, sp)| *sp).collect();
    for horizon in 1..state.tau_th.max(1) {
        loop {
            let waiting: Vec<SpId> =
                queue.iter().filter(|(s, sp)| *s <= horizon && !forced.contains(sp)).map(|(_, sp)| *sp).collect();
            if waiting.len() as u32 <= slots * horizon {
                break;
            }
            forced.push(waiting[0]);
        }
    }
    out.priority = forced;
    out
}

/// Whether the fairness guarantee is attainable for `bidders` SPs.
pub fn fairness_schedulable(bidders: usize, slots: u32, tau_th: u32) -> bool {
    bidders as u64 <= slots as u64 * tau_th as u64
}

/// `q^(t'/T') · |b − λ|`.
pub fn utility_score(bid_price: f64, reserve: f64, q: f64, t_prime: u32, window: u32) -> f64 {
    q.powf(t_prime as f64 / window.max(1) as f64) * (bid_price - reserve).abs()
}

/// Distance-like similarity between two SPs' requests in the same round:
/// `sqrt(|b − b'| + |u − u'|)`.
pub fn similarity(a: &Bid, b: &Bid) -> f64 {
    let db = (a.price.as_f64() - b.price.as_f64()).abs();
    let du = (a.demand.min_data_rate.as_f64() - b.demand.min_data_rate.as_f64()).abs();
    (db + du).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReputationParams {
    pub q: f64,
    pub window: u32,
    /// A bid within this fraction of the valuation leaves the SP little surplus.
    pub limited_utility_margin: f64,
}

/// Reputation scores and the pairwise similarity matrix.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReputationState {
    pub cumulative: BTreeMap<SpId, f64>,
    pub increments: BTreeMap<SpId, Vec<f64>>,
    pub utility: BTreeMap<SpId, f64>,
    pub t_prime: BTreeMap<SpId, u32>,
    observed: BTreeMap<SpId, (u32, bool)>,
    matrix: BTreeMap<(SpId, SpId), f64>,
}

impl ReputationState {
    pub fn m(&self, a: SpId, b: SpId) -> f64 {
        if a == b {
            return 0.0;
        }
        self.matrix.get(&(a.min(b), a.max(b))).copied().unwrap_or(0.0)
    }

    /// Dense view of the similarity matrix over `ids`.
    pub fn similarity_matrix(&self, ids: &[SpId]) -> Vec<Vec<f64>> {
        ids.iter().map(|&a| ids.iter().map(|&b| self.m(a, b)).collect()).collect()
    }

    pub fn score(&self, sp: SpId) -> f64 {
        self.cumulative.get(&sp).copied().unwrap_or(0.0)
    }

    pub fn t_prime(&self, sp: SpId) -> u32 {
        self.t_prime.get(&sp).copied().unwrap_or(0)
    }
}

/// Folds one round of bids into the reputation state.
///
/// `reserve_of` gives the reserve level each bid is compared against.
pub fn update_reputation(
    bids: &[Bid],
    reserve_of: impl Fn(&Bid) -> Money,
    params: &ReputationParams,
    state: &mut ReputationState,
) {
    for (i, a) in bids.iter().enumerate() {
        for b in &bids[i + 1..] {
            let key = (a.sp_id.min(b.sp_id), a.sp_id.max(b.sp_id));
            state.matrix.insert(key, similarity(a, b));
        }
    }

    for bid in bids {
        let limited = bid.price.as_f64() >= (1.0 - params.limited_utility_margin) * bid.valuation.as_f64();
        let (seen, persisted) = state.observed.entry(bid.sp_id).or_insert((0, true));
        *seen += 1;
        *persisted &= limited;
        if *seen == params.window {
            let t = state.t_prime.entry(bid.sp_id).or_insert(0);
            *t = if *persisted { *t + 1 } else { 0 };
            *seen = 0;
            *persisted = true;
        }

        let rho = utility_score(
            bid.price.as_f64(),
            reserve_of(bid).as_f64(),
            params.q,
            state.t_prime(bid.sp_id),
            params.window,
        );
        let sim_sum: f64 = bids.iter().filter(|o| o.sp_id != bid.sp_id).map(|o| state.m(bid.sp_id, o.sp_id)).sum();
        let inc = rho + sim_sum;
        state.utility.insert(bid.sp_id, rho);
        state.increments.entry(bid.sp_id).or_default().push(inc);
        *state.cumulative.entry(bid.sp_id).or_insert(0.0) += inc;
    }
}

/// What the InP saw in one round, kept for the detection window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundObservation {
    pub round: u32,
    pub bidders: BTreeSet<SpId>,
    pub winners: BTreeSet<SpId>,
    /// Declared coopetition partners, exempt from collusion checks.
    pub partners: BTreeSet<(SpId, SpId)>,
    pub similarity: BTreeMap<(SpId, SpId), f64>,
}

impl RoundObservation {
    pub fn from_round(round: u32, bids: &[Bid], winners: impl IntoIterator<Item = SpId>) -> Self {
        let mut similarity = BTreeMap::new();
        let mut partners = BTreeSet::new();
        for (i, a) in bids.iter().enumerate() {
            for b in &bids[i + 1..] {
                similarity.insert((a.sp_id.min(b.sp_id), a.sp_id.max(b.sp_id)), self::similarity(a, b));
            }
            if let Some(p) = a.coop_partner {
                partners.insert((a.sp_id.min(p), a.sp_id.max(p)));
            }
        }
        Self { round, bidders: bids.iter().map(|b| b.sp_id).collect(), winners: winners.into_iter().collect(), partners, similarity }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BidHistory {
    rounds: VecDeque<RoundObservation>,
    limit: usize,
}

impl BidHistory {
    pub fn new(limit: usize) -> Self {
        Self { rounds: VecDeque::new(), limit: limit.max(1) }
    }

    pub fn push(&mut self, obs: RoundObservation) {
        if self.rounds.len() == self.limit {
            self.rounds.pop_front();
        }
        self.rounds.push_back(obs);
    }

    pub fn len(&self) -> usize {
        self.rounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rounds.is_empty()
    }

    fn trailing(&self, n: usize) -> impl Iterator<Item = &RoundObservation> {
        self.rounds.iter().skip(self.rounds.len().saturating_sub(n))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionParams {
    pub window: u32,
    pub epsilon_m: f64,
    pub epsilon_theta: f64,
    pub win_share: f64,
}

/// Flags groups of SPs that, over the trailing window, bid near-identically
/// (every similarity ≤ `epsilon_m`), carry reputation ≥ `epsilon_theta`, and
/// jointly won more than `win_share` of the rounds. Declared coopetition
/// partners are never paired. Returns sorted groups.
pub fn detect_collusion(state: &ReputationState, history: &BidHistory, params: &DetectionParams) -> Vec<Vec<SpId>> {
    let window = params.window as usize;
    if window == 0 || history.len() < window {
        return Vec::new();
    }
    let recent: Vec<&RoundObservation> = history.trailing(window).collect();
    let mut always: BTreeSet<SpId> = recent[0].bidders.clone();
    for obs in &recent[1..] {
        always = always.intersection(&obs.bidders).copied().collect();
    }
    let ids: Vec<SpId> = always.into_iter().collect();

    let mut pairs = Vec::new();
    for (i, &a) in ids.iter().enumerate() {
        for &b in &ids[i + 1..] {
            if recent.iter().any(|o| o.partners.contains(&(a, b))) {
                continue;
            }
            let similar = recent.iter().all(|o| o.similarity.get(&(a, b)).is_some_and(|&m| m <= params.epsilon_m));
            if !similar {
                continue;
            }
            if state.score(a) < params.epsilon_theta || state.score(b) < params.epsilon_theta {
                continue;
            }
            let joint_wins = recent.iter().filter(|o| o.winners.contains(&a) || o.winners.contains(&b)).count();
            if joint_wins as f64 > params.win_share * window as f64 {
                pairs.push((a, b));
            }
        }
    }
    merge_pairs(pairs)
}

fn merge_pairs(pairs: Vec<(SpId, SpId)>) -> Vec<Vec<SpId>> {
    let mut groups: Vec<BTreeSet<SpId>> = Vec::new();
    for (a, b) in pairs {
        let hits: Vec<usize> = (0..groups.len()).filter(|&i| groups[i].contains(&a) || groups[i].contains(&b)).collect();
        let mut merged = BTreeSet::from([a, b]);
        for &i in hits.iter().rev() {
            merged.extend(groups.remove(i));
        }
        groups.push(merged);
    }
    let mut out: Vec<Vec<SpId>> = groups.into_iter().map(|g| g.into_iter().collect()).collect();
    out.sort();
    out
}

/// Flagged groups with the round until which they stay under punishment.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FlagBook {
    groups: BTreeMap<Vec<SpId>, u32>,
}

impl FlagBook {
    pub fn flag(&mut self, group: Vec<SpId>, until_round: u32) {
        let e = self.groups.entry(group).or_insert(until_round);
        *e = (*e).max(until_round);
    }

    /// Groups still under punishment at `round`.
    pub fn active(&self, round: u32) -> Vec<Vec<SpId>> {
        self.groups.iter().filter(|(_, &until)| round <= until).map(|(g, _)| g.clone()).collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Punishment {
    /// Bids discarded before winner determination.
    pub ineligible: BTreeSet<SpId>,
    /// Deflated effective prices for every flagged member with a bid.
    pub deflated: BTreeMap<SpId, Money>,
}

/// Keeps one member of each flagged group eligible, rotating with the round
/// index, and deflates every flagged member's effective price by `1 − d`.
/// `effective` supplies the price before deflation.
pub fn punish_collusion(
    flagged: &[Vec<SpId>],
    bids: &[Bid],
    effective: &BTreeMap<SpId, Money>,
    round: u32,
    deflation: f64,
) -> Punishment {
    let mut out = Punishment::default();
    let bidding: BTreeMap<SpId, &Bid> = bids.iter().map(|b| (b.sp_id, b)).collect();
    for group in flagged {
        let present: Vec<SpId> = group.iter().copied().filter(|sp| bidding.contains_key(sp)).collect();
        if present.is_empty() {
            continue;
        }
        let keep = present[round as usize % present.len()];
        for sp in present {
            if sp != keep {
                out.ineligible.insert(sp);
            }
            let base = effective.get(&sp).copied().unwrap_or(bidding[&sp].price);
            out.deflated.insert(sp, base.scale(1.0 - deflation));
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriceBook {
    /// Current per-subcarrier reserve.
    pub reserve: Money,
    pub floor: Money,
    pub alpha: f64,
    pub stale_window: u32,
    pub spreads: Vec<(u32, f64)>,
    unsold_streak: u32,
}

/// Market result of one round as seen by the reserve adjuster.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReserveObservation {
    pub round: u32,
    pub sold_subcarriers: u32,
    /// Winning lots' per-subcarrier price (pay / need).
    pub winning_unit_prices: Vec<f64>,
    /// No further submitted lot could have fit in the remaining capacity.
    pub saturated: bool,
}

impl PriceBook {
    pub fn new(reserve: Money, floor: Money, alpha: f64, stale_window: u32) -> Self {
        Self { reserve: reserve.max(floor), floor, alpha, stale_window, spreads: Vec::new(), unsold_streak: 0 }
    }

    /// Records the spread and moves the reserve; returns the new reserve.
    ///
    /// After `stale_window` consecutive rounds without a sale the reserve drops
    /// by `alpha` (never below the floor). When capacity is saturated and the
    /// mean winning unit price is at least `(1 + alpha)` times the reserve, it
    /// rises by `alpha`.
    pub fn adjust_reserve(&mut self, obs: &ReserveObservation) -> Money {
        let lambda = self.reserve.as_f64();
        let mean = if obs.winning_unit_prices.is_empty() {
            None
        } else {
            Some(obs.winning_unit_prices.iter().sum::<f64>() / obs.winning_unit_prices.len() as f64)
        };
        self.spreads.push((obs.round, mean.map_or(lambda, |m| lambda - m)));

        if obs.sold_subcarriers == 0 {
            self.unsold_streak += 1;
        } else {
            self.unsold_streak = 0;
        }
        if self.unsold_streak >= self.stale_window.max(1) {
            self.reserve = self.reserve.scale(1.0 - self.alpha).max(self.floor);
            self.unsold_streak = 0;
        } else if let Some(m) = mean {
            if obs.saturated && m >= lambda * (1.0 + self.alpha) {
                self.reserve = self.reserve.scale(1.0 + self.alpha);
            }
        }
        self.reserve
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{QosDemand, Rate};

    fn bid(sp: u32, price: f64, rate: f64) -> Bid {
        Bid {
            sp_id: SpId(sp),
            round: 0,
            demand: QosDemand { min_data_rate: Rate::from_f64(rate), subscribers_to_serve: 3 },
            price: Money::from_f64(price),
            valuation: Money::from_f64(price.max(100.0)),
            coop_partner: None,
            subcarriers_needed: 4,
        }
    }

    #[test]
    fn inflation_follows_schedule() {
        let mut st = FairnessState::new(3, vec![0.0, 0.1, 0.25]);
        let out = apply_fairness(&[bid(1, 100.0, 20.0)], &st, 2);
        assert_eq!(out.effective[&SpId(1)], Money::from_units(100));
        st.record(SpId(1), 1);
        let out = apply_fairness(&[bid(1, 100.0, 20.0)], &st, 2);
        assert_eq!(out.effective[&SpId(1)], Money::from_units(110));
        st.record(SpId(1), 7);
        assert_eq!(st.weight(SpId(1)), 0.25);
    }

    #[test]
    fn one_loss_from_threshold_is_prioritised() {
        let mut st = FairnessState::new(3, vec![0.0]);
        st.record(SpId(2), 2);
        let out = apply_fairness(&[bid(1, 100.0, 20.0), bid(2, 1.0, 20.0)], &st, 2);
        assert_eq!(out.priority, vec![SpId(2)]);
    }

    #[test]
    fn earliest_deadline_growth_keeps_future_rounds_feasible() {
        // four SPs one loss in, two slots: two must be served now or three
        // would hit the threshold next round
        let mut st = FairnessState::new(3, vec![0.0]);
        for sp in 1..=4 {
            st.record(SpId(sp), 1);
        }
        let bids: Vec<Bid> = (1..=6).map(|i| bid(i, 10.0 * i as f64, 20.0)).collect();
        let out = apply_fairness(&bids, &st, 2);
        assert_eq!(out.priority, vec![SpId(1), SpId(2)]);
    }

    #[test]
    fn utility_score_cases() {
        assert_eq!(utility_score(50.0, 50.0, 2.0, 3, 5), 0.0);
        assert_eq!(utility_score(60.0, 50.0, 2.0, 5, 5), 20.0);
        assert_eq!(utility_score(40.0, 50.0, 2.0, 0, 5), 10.0);
    }

    #[test]
    fn similarity_cases() {
        let a = bid(1, 100.0, 20.0);
        assert_eq!(similarity(&a, &a.clone()), 0.0);
        let b = bid(2, 109.0, 27.0);
        assert_eq!(similarity(&a, &b), 4.0);
        assert_eq!(similarity(&b, &a), 4.0);
    }

    fn params() -> ReputationParams {
        ReputationParams { q: 2.0, window: 5, limited_utility_margin: 0.1 }
    }

    #[test]
    fn lone_sp_scores_only_its_utility() {
        let mut st = ReputationState::default();
        update_reputation(&[bid(1, 80.0, 20.0)], |_| Money::from_units(20), &params(), &mut st);
        assert_eq!(st.score(SpId(1)), 60.0);
    }

    #[test]
    fn identical_bids_at_reserve_score_nothing() {
        let mut st = ReputationState::default();
        let bids = [bid(1, 20.0, 20.0), bid(2, 20.0, 20.0)];
        update_reputation(&bids, |_| Money::from_units(20), &params(), &mut st);
        assert_eq!(st.score(SpId(1)), 0.0);
        assert_eq!(st.score(SpId(2)), 0.0);
    }

    #[test]
    fn persistent_limited_bids_grow_the_persistence_counter() {
        let mut st = ReputationState::default();
        let p = params();
        let truthful = bid(1, 100.0, 20.0); // price == valuation
        let mut rhos = Vec::new();
        for _ in 0..10 {
            update_reputation(std::slice::from_ref(&truthful), |_| Money::from_units(20), &p, &mut st);
            rhos.push(st.utility[&SpId(1)]);
        }
        assert_eq!(st.t_prime(SpId(1)), 2);
        assert!((rhos[9] / 80.0 - 2f64.powf(2.0 / 5.0)).abs() < 1e-12);
        assert!((rhos[4] / 80.0 - 2f64.powf(1.0 / 5.0)).abs() < 1e-12);
        let cheap = bid(1, 30.0, 20.0);
        for _ in 0..5 {
            update_reputation(std::slice::from_ref(&cheap), |_| Money::from_units(20), &p, &mut st);
        }
        assert_eq!(st.t_prime(SpId(1)), 0);
    }

    #[test]
    fn matrix_is_symmetric_with_zero_diagonal_and_scores_accumulate() {
        let mut st = ReputationState::default();
        let bids = [bid(1, 30.0, 20.0), bid(2, 75.0, 20.0), bid(3, 50.0, 25.0)];
        for _ in 0..3 {
            update_reputation(&bids, |_| Money::from_units(20), &params(), &mut st);
        }
        let ids = [SpId(1), SpId(2), SpId(3)];
        let m = st.similarity_matrix(&ids);
        for i in 0..3 {
            assert_eq!(m[i][i], 0.0);
            for j in 0..3 {
                assert_eq!(m[i][j], m[j][i]);
            }
        }
        for sp in ids {
            let sum: f64 = st.increments[&sp].iter().sum();
            assert_eq!(sum, st.score(sp));
        }
    }

    fn history_of(rounds: u32, bids: &[Bid], winners: &[u32]) -> BidHistory {
        let mut h = BidHistory::new(10);
        for r in 0..rounds {
            h.push(RoundObservation::from_round(r, bids, winners.iter().map(|&w| SpId(w))));
        }
        h
    }

    #[test]
    fn mirrored_winning_pair_is_flagged() {
        let bids = [bid(1, 100.0, 20.0), bid(2, 100.0, 20.0), bid(3, 40.0, 20.0)];
        let mut st = ReputationState::default();
        update_reputation(&bids, |_| Money::from_units(20), &params(), &mut st);
        let dp = DetectionParams { window: 5, epsilon_m: 1.0, epsilon_theta: 0.0, win_share: 0.5 };
        assert!(detect_collusion(&st, &history_of(4, &bids, &[1, 2]), &dp).is_empty());
        assert_eq!(detect_collusion(&st, &history_of(5, &bids, &[1, 2]), &dp), vec![vec![SpId(1), SpId(2)]]);
        assert!(detect_collusion(&st, &history_of(5, &bids[2..], &[3]), &dp).is_empty());
    }

    #[test]
    fn declared_partners_are_not_flagged() {
        let mut a = bid(1, 100.0, 20.0);
        let mut b = bid(2, 100.0, 20.0);
        a.coop_partner = Some(SpId(2));
        b.coop_partner = Some(SpId(1));
        let st = ReputationState::default();
        let dp = DetectionParams { window: 5, epsilon_m: 1.0, epsilon_theta: 0.0, win_share: 0.5 };
        assert!(detect_collusion(&st, &history_of(5, &[a, b], &[1, 2]), &dp).is_empty());
    }

    #[test]
    fn punishment_rotates_and_deflates() {
        let bids = [bid(1, 100.0, 20.0), bid(2, 100.0, 20.0), bid(3, 100.0, 20.0)];
        let group = vec![vec![SpId(1), SpId(2)]];
        let even = punish_collusion(&group, &bids, &BTreeMap::new(), 0, 0.2);
        assert_eq!(even.ineligible, BTreeSet::from([SpId(2)]));
        assert_eq!(even.deflated[&SpId(1)], Money::from_units(80));
        assert!(!even.deflated.contains_key(&SpId(3)));
        let odd = punish_collusion(&group, &bids, &BTreeMap::new(), 1, 0.2);
        assert_eq!(odd.ineligible, BTreeSet::from([SpId(1)]));
    }

    #[test]
    fn reserve_adjustment_rules() {
        let mut book = PriceBook::new(Money::from_units(50), Money::from_units(1), 0.1, 3);
        let unsold = ReserveObservation::default();
        book.adjust_reserve(&unsold);
        book.adjust_reserve(&unsold);
        assert_eq!(book.reserve, Money::from_units(50));
        assert_eq!(book.adjust_reserve(&unsold), Money::from_units(45));

        let partial = ReserveObservation { round: 4, sold_subcarriers: 4, winning_unit_prices: vec![90.0], saturated: false };
        assert_eq!(book.adjust_reserve(&partial), Money::from_units(45));

        let full = ReserveObservation { round: 5, sold_subcarriers: 8, winning_unit_prices: vec![60.0, 70.0], saturated: true };
        assert_eq!(book.adjust_reserve(&full), Money::from_f64(49.5));
        assert_eq!(book.spreads.len(), 5);
        assert_eq!(book.spreads[0].1, 50.0);
    }

    #[test]
    fn reserve_never_drops_below_floor() {
        let mut book = PriceBook::new(Money::from_units(2), Money::from_units(1), 0.5, 1);
        for _ in 0..10 {
            book.adjust_reserve(&ReserveObservation::default());
        }
        assert_eq!(book.reserve, Money::from_units(1));
    }
}

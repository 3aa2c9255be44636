//! Winner determination for the per-round subcarrier auction.
//!
//! Subcarriers are interchangeable, so a bid ("lot") asks for a count rather
//! than named items. Two lots conflict when their combined need exceeds the
//! capacity still available; the bid graph records these conflicts. The solver
//! is a depth-first branch-on-bids search over that graph, pruned by
//! per-component revenue upper bounds and seeded with greedy lower bounds.
//! [`solve_wdp_bruteforce`] enumerates every subset and serves as the oracle.
//!
//! Ties between equal-revenue allocations are broken by preferring more
//! accepted lots, then the lexicographically smallest sorted id list. Both
//! solvers share this rule so their outputs are comparable exactly.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::MarketError;
use crate::market::{Bid, Money, SpId, SubcarrierPool};

/// Default instance-size cap for the exhaustive oracle.
pub const DEFAULT_ORACLE_CAP: usize = 15;

/// One all-or-nothing request presented to the solver.
///
/// `value` is what winner determination maximises (possibly inflated or
/// deflated by InP policy); `pay` is what the members actually pay and is the
/// price screened against the reserve. A coopetition pact is one lot with two
/// members.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lot {
    pub id: u32,
    pub need: u32,
    pub value: Money,
    pub pay: Money,
    pub members: Vec<(SpId, u32)>,
}

impl Lot {
    pub fn new(id: u32, need: u32, price: Money) -> Self {
        Self { id, need, value: price, pay: price, members: vec![(SpId(id), need)] }
    }

    pub fn from_bid(bid: &Bid) -> Self {
        Self {
            id: bid.sp_id.0,
            need: bid.subcarriers_needed,
            value: bid.price,
            pay: bid.price,
            members: vec![(bid.sp_id, bid.subcarriers_needed)],
        }
    }

    pub fn with_value(mut self, value: Money) -> Self {
        self.value = value;
        self
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Allocation {
    pub accepted_bid_ids: BTreeSet<u32>,
    pub subcarrier_assignment: BTreeMap<u32, SpId>,
    /// Sum of accepted lots' `pay`.
    pub revenue: Money,
    /// Sum of accepted lots' `value`; equals `revenue` when no adjustments apply.
    pub objective: Money,
}

impl Allocation {
    fn from_selection(lots: &[Lot], ids: &[u32]) -> Self {
        let by_id: BTreeMap<u32, &Lot> = lots.iter().map(|l| (l.id, l)).collect();
        let mut alloc = Allocation::default();
        let mut next_subcarrier = 0u32;
        for id in ids {
            let lot = by_id[id];
            alloc.accepted_bid_ids.insert(*id);
            alloc.revenue += lot.pay;
            alloc.objective += lot.value;
            for &(sp, need) in &lot.members {
                for _ in 0..need {
                    alloc.subcarrier_assignment.insert(next_subcarrier, sp);
                    next_subcarrier += 1;
                }
            }
        }
        alloc
    }

    /// Checks capacity, sufficiency and exclusivity against `lots`.
    pub fn check_feasible(&self, lots: &[Lot], capacity: u32) -> Result<(), MarketError> {
        let by_id: BTreeMap<u32, &Lot> = lots.iter().map(|l| (l.id, l)).collect();
        let mut total_need = 0u32;
        for id in &self.accepted_bid_ids {
            let lot = by_id
                .get(id)
                .ok_or_else(|| MarketError::Invariant(format!("accepted unknown lot {id}")))?;
            total_need += lot.need;
        }
        if total_need > capacity {
            return Err(MarketError::Invariant(format!("over-allocation: {total_need} > {capacity}")));
        }
        if let Some((&idx, _)) = self.subcarrier_assignment.iter().find(|(&c, _)| c >= capacity) {
            return Err(MarketError::Invariant(format!("subcarrier {idx} outside pool")));
        }
        let mut per_sp: BTreeMap<SpId, u32> = BTreeMap::new();
        for sp in self.subcarrier_assignment.values() {
            *per_sp.entry(*sp).or_default() += 1;
        }
        for id in &self.accepted_bid_ids {
            for &(sp, need) in &by_id[id].members {
                if per_sp.get(&sp).copied().unwrap_or(0) < need {
                    return Err(MarketError::Invariant(format!("{sp} received fewer than {need} subcarriers")));
                }
            }
        }
        let revenue: Money = self.accepted_bid_ids.iter().map(|id| by_id[id].pay).sum();
        if revenue != self.revenue {
            return Err(MarketError::Invariant("revenue differs from accepted prices".into()));
        }
        Ok(())
    }
}

/// Conflict graph over lots.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BidGraph {
    item_capacity: u32,
    adjacency: BTreeMap<u32, BTreeSet<u32>>,
}

/// A node taken out of a [`BidGraph`], with the edges needed to restore it.
#[derive(Clone, Debug)]
pub struct RemovedNode {
    id: u32,
    neighbors: BTreeSet<u32>,
}

impl BidGraph {
    pub fn new(item_capacity: u32) -> Self {
        Self { item_capacity, adjacency: BTreeMap::new() }
    }

    pub fn item_capacity(&self) -> u32 {
        self.item_capacity
    }

    pub fn add_node(&mut self, id: u32) {
        self.adjacency.entry(id).or_default();
    }

    pub fn add_edge(&mut self, a: u32, b: u32) {
        if a == b {
            return;
        }
        self.adjacency.entry(a).or_default().insert(b);
        self.adjacency.entry(b).or_default().insert(a);
    }

    pub fn nodes(&self) -> impl Iterator<Item = u32> + '_ {
        self.adjacency.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.adjacency.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adjacency.is_empty()
    }

    pub fn neighbors(&self, id: u32) -> impl Iterator<Item = u32> + '_ {
        self.adjacency.get(&id).into_iter().flatten().copied()
    }

    pub fn has_edge(&self, a: u32, b: u32) -> bool {
        self.adjacency.get(&a).is_some_and(|n| n.contains(&b))
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.values().map(BTreeSet::len).sum::<usize>() / 2
    }

    /// Removes `id` and all its edges.
    pub fn remove_node(&mut self, id: u32) -> Option<RemovedNode> {
        let neighbors = self.adjacency.remove(&id)?;
        for n in &neighbors {
            if let Some(set) = self.adjacency.get_mut(n) {
                set.remove(&id);
            }
        }
        Some(RemovedNode { id, neighbors })
    }

    /// Restores a removed node together with the edges to neighbors that are
    /// still present.
    pub fn reinsert(&mut self, removed: RemovedNode) {
        let RemovedNode { id, neighbors } = removed;
        for n in &neighbors {
            if let Some(set) = self.adjacency.get_mut(n) {
                set.insert(id);
            }
        }
        let live: BTreeSet<u32> = neighbors.into_iter().filter(|n| self.adjacency.contains_key(n)).collect();
        self.adjacency.insert(id, live);
    }
}

/// Builds the conflict graph: an edge joins two lots that cannot both fit.
pub fn build_bid_graph(lots: &[Lot], capacity: u32) -> BidGraph {
    let mut graph = BidGraph::new(capacity);
    for (i, a) in lots.iter().enumerate() {
        graph.add_node(a.id);
        for b in &lots[i + 1..] {
            if a.need + b.need > capacity {
                graph.add_edge(a.id, b.id);
            }
        }
    }
    graph
}

/// Connected components by iterative depth-first search, each sorted, ordered
/// by smallest member.
pub fn decompose_components(graph: &BidGraph) -> Vec<Vec<u32>> {
    let mut seen = BTreeSet::new();
    let mut components = Vec::new();
    for start in graph.nodes() {
        if !seen.insert(start) {
            continue;
        }
        let mut component = vec![start];
        let mut stack = vec![start];
        while let Some(node) = stack.pop() {
            for n in graph.neighbors(node) {
                if seen.insert(n) {
                    component.push(n);
                    stack.push(n);
                }
            }
        }
        component.sort_unstable();
        components.push(component);
    }
    components
}

/// `a` has strictly higher value per subcarrier than `b`, ties by lower id.
fn denser(a: &Lot, b: &Lot) -> Ordering {
    let lhs = a.value.cents() as i128 * b.need.max(1) as i128;
    let rhs = b.value.cents() as i128 * a.need.max(1) as i128;
    rhs.cmp(&lhs).then(a.id.cmp(&b.id))
}

/// Admissible revenue bound for `lots` sharing `capacity` subcarriers.
///
/// Minimum of three caps: the sum of all values; the best value density times
/// the capacity; and the sum of the k largest values, where k is the largest
/// number of lots that could ever fit together.
pub fn component_upper_bound(lots: &[&Lot], capacity: u32) -> Money {
    let fitting: Vec<&Lot> = lots.iter().copied().filter(|l| l.need <= capacity).collect();
    if fitting.is_empty() {
        return Money::ZERO;
    }
    let total: Money = fitting.iter().map(|l| l.value).sum();

    let density_cap = fitting
        .iter()
        .map(|l| {
            let need = l.need.max(1) as i128;
            let num = l.value.cents() as i128 * capacity as i128;
            // ceiling keeps the bound admissible
            Money::from_cents(((num + need - 1).div_euclid(need)) as i64)
        })
        .max()
        .unwrap_or(Money::ZERO);

    let mut needs: Vec<u32> = fitting.iter().map(|l| l.need).collect();
    needs.sort_unstable();
    let mut used = 0u32;
    let mut max_count = 0usize;
    for n in needs {
        if used + n > capacity {
            break;
        }
        used += n;
        max_count += 1;
    }
    let mut values: Vec<Money> = fitting.iter().map(|l| l.value).collect();
    values.sort_unstable_by(|a, b| b.cmp(a));
    let count_cap: Money = values.iter().take(max_count).sum();

    total.min(density_cap).min(count_cap)
}

/// Greedy fill by descending value density; returns the selection and its value.
fn greedy_fill(lots: &[&Lot], capacity: u32) -> (Vec<u32>, Money) {
    let mut order: Vec<&Lot> = lots.to_vec();
    order.sort_by(|a, b| denser(a, b));
    let mut left = capacity;
    let mut picked = Vec::new();
    let mut value = Money::ZERO;
    for lot in order {
        if lot.need <= left {
            left -= lot.need;
            picked.push(lot.id);
            value += lot.value;
        }
    }
    (picked, value)
}

/// Value of a greedy feasible allocation by descending value density.
pub fn component_lower_bound(lots: &[&Lot], capacity: u32) -> Money {
    greedy_fill(lots, capacity).1
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SolverOptions {
    pub use_bounds: bool,
    pub oracle_cap: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { use_bounds: true, oracle_cap: DEFAULT_ORACLE_CAP }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SearchStats {
    pub nodes: u64,
    pub pruned: u64,
}

/// Screened and pre-committed view of an instance, shared by both solvers.
struct Prepared {
    forced_ids: Vec<u32>,
    forced_value: Money,
    free: Vec<Lot>,
    capacity_left: u32,
}

fn prepare(lots: &[Lot], pool: &SubcarrierPool, forced: &[u32]) -> Prepared {
    let mut capacity_left = pool.total_count;
    let mut forced_ids = Vec::new();
    let mut forced_value = Money::ZERO;
    for id in forced {
        if forced_ids.contains(id) {
            continue;
        }
        if let Some(lot) = lots.iter().find(|l| l.id == *id) {
            if lot.need <= capacity_left {
                capacity_left -= lot.need;
                forced_ids.push(lot.id);
                forced_value += lot.value;
            }
        }
    }
    let free = lots
        .iter()
        .filter(|l| !forced_ids.contains(&l.id))
        .filter(|l| l.need <= capacity_left && l.pay >= pool.reserve_screen(l.need))
        .cloned()
        .collect();
    Prepared { forced_ids, forced_value, free, capacity_left }
}

#[derive(Clone, Debug)]
struct Candidate {
    value: Money,
    ids: Vec<u32>,
}

impl Candidate {
    fn beats(&self, other: &Candidate) -> bool {
        match self.value.cmp(&other.value) {
            Ordering::Greater => true,
            Ordering::Less => false,
            Ordering::Equal => match self.ids.len().cmp(&other.ids.len()) {
                Ordering::Greater => true,
                Ordering::Less => false,
                Ordering::Equal => self.ids < other.ids,
            },
        }
    }
}

struct Search<'a> {
    lots: BTreeMap<u32, &'a Lot>,
    graph: BidGraph,
    best: Candidate,
    use_bounds: bool,
    stats: SearchStats,
}

impl<'a> Search<'a> {
    fn offer(&mut self, path: &[u32], extra: &[u32], value: Money) {
        let mut ids: Vec<u32> = path.iter().chain(extra).copied().collect();
        ids.sort_unstable();
        let cand = Candidate { value, ids };
        if cand.beats(&self.best) {
            self.best = cand;
        }
    }

    fn live_lots(&self) -> Vec<&'a Lot> {
        self.graph.nodes().map(|id| self.lots[&id]).collect()
    }

    fn branch(&mut self, path: &mut Vec<u32>, g: Money, capacity: u32) {
        self.stats.nodes += 1;

        // Lots that no longer fit conflict with the path; drop them for this subtree.
        let unfit: Vec<u32> = self.graph.nodes().filter(|id| self.lots[id].need > capacity).collect();
        let removed: Vec<RemovedNode> = unfit.iter().filter_map(|id| self.graph.remove_node(*id)).collect();

        self.explore(path, g, capacity);

        for node in removed.into_iter().rev() {
            self.graph.reinsert(node);
        }
    }

    fn explore(&mut self, path: &mut Vec<u32>, g: Money, capacity: u32) {
        let live = self.live_lots();
        if live.is_empty() {
            self.offer(path, &[], g);
            return;
        }

        if self.use_bounds {
            let conflicts = build_bid_graph(&live.iter().map(|l| (*l).clone()).collect::<Vec<_>>(), capacity);
            let components = decompose_components(&conflicts);
            let component_sum: Money = components
                .iter()
                .map(|c| {
                    let members: Vec<&Lot> = c.iter().map(|id| self.lots[id]).collect();
                    component_upper_bound(&members, capacity)
                })
                .sum();
            let upper = component_sum.min(component_upper_bound(&live, capacity));
            if g + upper < self.best.value {
                self.stats.pruned += 1;
                return;
            }

            let (greedy_ids, greedy_value) = greedy_fill(&live, capacity);
            self.offer(path, &greedy_ids, g + greedy_value);

            // No conflicts left and everything fits: the components are independent
            // and each is solved by accepting all of it.
            if conflicts.edge_count() == 0 && live.iter().map(|l| l.need).sum::<u32>() <= capacity {
                let all: Vec<u32> = live.iter().map(|l| l.id).collect();
                let total: Money = live.iter().map(|l| l.value).sum();
                self.offer(path, &all, g + total);
                return;
            }
        }

        let pick = live.iter().min_by(|a, b| denser(a, b)).expect("non-empty").id;
        let lot = self.lots[&pick];
        let node = self.graph.remove_node(pick).expect("live node");

        path.push(pick);
        self.branch(path, g + lot.value, capacity - lot.need);
        path.pop();

        self.branch(path, g, capacity);

        self.graph.reinsert(node);
    }
}

/// Revenue-maximising feasible allocation using the pool's reserve.
pub fn solve_wdp(lots: &[Lot], pool: &SubcarrierPool) -> Allocation {
    solve_wdp_with(lots, pool, &[], SolverOptions::default()).0
}

/// Branch-and-bound winner determination.
///
/// `forced` lists lots that must be served if they fit (fairness priority),
/// in priority order; forced lots bypass the reserve screen. Every other lot
/// is ineligible when its `pay` is below `need` times the per-subcarrier
/// reserve.
pub fn solve_wdp_with(
    lots: &[Lot],
    pool: &SubcarrierPool,
    forced: &[u32],
    options: SolverOptions,
) -> (Allocation, SearchStats) {
    let prepared = prepare(lots, pool, forced);
    let free_refs: BTreeMap<u32, &Lot> = prepared.free.iter().map(|l| (l.id, l)).collect();
    let graph = build_bid_graph(&prepared.free, prepared.capacity_left);
    let mut forced_sorted = prepared.forced_ids.clone();
    forced_sorted.sort_unstable();
    let mut search = Search {
        lots: free_refs,
        graph,
        best: Candidate { value: prepared.forced_value, ids: forced_sorted },
        use_bounds: options.use_bounds,
        stats: SearchStats::default(),
    };
    let mut path = prepared.forced_ids.clone();
    search.branch(&mut path, prepared.forced_value, prepared.capacity_left);
    let alloc = Allocation::from_selection(lots, &search.best.ids);
    (alloc, search.stats)
}

/// Exhaustive oracle over all subsets of eligible lots.
pub fn solve_wdp_bruteforce(
    lots: &[Lot],
    pool: &SubcarrierPool,
    forced: &[u32],
    cap: usize,
) -> Result<Allocation, MarketError> {
    if lots.len() > cap {
        return Err(MarketError::OracleTooLarge { bids: lots.len(), cap });
    }
    let prepared = prepare(lots, pool, forced);
    let n = prepared.free.len();
    let mut best: Option<Candidate> = None;
    for mask in 0u32..(1u32 << n) {
        let mut need = 0u32;
        let mut value = prepared.forced_value;
        let mut ids = prepared.forced_ids.clone();
        for (i, lot) in prepared.free.iter().enumerate() {
            if mask & (1 << i) != 0 {
                need += lot.need;
                value += lot.value;
                ids.push(lot.id);
            }
        }
        if need > prepared.capacity_left {
            continue;
        }
        ids.sort_unstable();
        let cand = Candidate { value, ids };
        if best.as_ref().map_or(true, |b| cand.beats(b)) {
            best = Some(cand);
        }
    }
    let best = best.expect("empty subset is always feasible");
    Ok(Allocation::from_selection(lots, &best.ids))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pool(total: u32, reserve: i64) -> SubcarrierPool {
        SubcarrierPool::new(total, Money::from_units(reserve)).unwrap()
    }

    fn lot(id: u32, need: u32, price: i64) -> Lot {
        Lot::new(id, need, Money::from_units(price))
    }

    fn refs(lots: &[Lot]) -> Vec<&Lot> {
        lots.iter().collect()
    }

    #[test]
    fn graph_edges_follow_capacity_conflicts() {
        let g = build_bid_graph(&[lot(1, 4, 1), lot(2, 4, 1)], 10);
        assert_eq!(g.edge_count(), 0);
        let g = build_bid_graph(&[lot(1, 6, 1), lot(2, 6, 1)], 10);
        assert!(g.has_edge(1, 2) && g.has_edge(2, 1));
        assert!(build_bid_graph(&[], 10).is_empty());
    }

    #[test]
    fn components() {
        let mut g = BidGraph::new(10);
        for (a, b) in [(1, 2), (2, 3), (1, 3), (4, 5)] {
            g.add_edge(a, b);
        }
        assert_eq!(decompose_components(&g), vec![vec![1, 2, 3], vec![4, 5]]);
        assert!(decompose_components(&BidGraph::new(10)).is_empty());
        let full = build_bid_graph(&[lot(1, 6, 1), lot(2, 6, 1), lot(3, 7, 1)], 10);
        assert_eq!(decompose_components(&full).len(), 1);
    }

    #[test]
    fn single_bid_above_reserve_is_accepted() {
        // reserve 1/subcarrier -> screen 4 for a 4-subcarrier lot priced 10
        let a = solve_wdp(&[lot(1, 4, 10)], &pool(10, 1));
        assert_eq!(a.accepted_bid_ids, BTreeSet::from([1]));
        assert_eq!(a.revenue, Money::from_units(10));
    }

    #[test]
    fn three_bid_instance_matches_enumeration() {
        // Subsets of {A(6,10), B(6,8), C(4,5)} fitting in 10:
        // {}, {A}=10, {B}=8, {C}=5, {A,C}=15, {B,C}=13; {A,B} and {A,B,C} overflow.
        let lots = [lot(1, 6, 10), lot(2, 6, 8), lot(3, 4, 5)];
        let expected = BTreeSet::from([1, 3]);
        let a = solve_wdp(&lots, &pool(10, 0));
        assert_eq!((a.accepted_bid_ids.clone(), a.revenue), (expected.clone(), Money::from_units(15)));
        let o = solve_wdp_bruteforce(&lots, &pool(10, 0), &[], DEFAULT_ORACLE_CAP).unwrap();
        assert_eq!((o.accepted_bid_ids, o.revenue), (expected, Money::from_units(15)));
    }

    #[test]
    fn reserve_screens_everything() {
        let lots = [lot(1, 4, 10), lot(2, 4, 11)];
        let a = solve_wdp(&lots, &pool(10, 5));
        assert!(a.accepted_bid_ids.is_empty());
        assert_eq!(a.revenue, Money::ZERO);
    }

    #[test]
    fn oracle_edge_cases() {
        let empty = solve_wdp_bruteforce(&[], &pool(10, 0), &[], DEFAULT_ORACLE_CAP).unwrap();
        assert_eq!(empty, Allocation::default());
        let o = solve_wdp_bruteforce(&[lot(1, 6, 7), lot(2, 6, 9)], &pool(10, 0), &[], DEFAULT_ORACLE_CAP).unwrap();
        assert_eq!(o.accepted_bid_ids, BTreeSet::from([2]));
        let many: Vec<Lot> = (0..16).map(|i| lot(i, 1, 1)).collect();
        assert!(matches!(
            solve_wdp_bruteforce(&many, &pool(10, 0), &[], DEFAULT_ORACLE_CAP),
            Err(MarketError::OracleTooLarge { bids: 16, cap: 15 })
        ));
    }

    #[test]
    fn bounds_on_small_components() {
        let single = [lot(1, 4, 10)];
        assert_eq!(component_upper_bound(&refs(&single), 10), Money::from_units(10));
        assert_eq!(component_lower_bound(&refs(&single), 10), Money::from_units(10));

        let three = [lot(1, 6, 10), lot(2, 6, 8), lot(3, 4, 5)];
        assert!(component_lower_bound(&refs(&three), 10) >= Money::from_units(10));
        assert!(component_upper_bound(&refs(&three), 10) >= Money::from_units(15));

        let exclusive = [lot(1, 6, 7), lot(2, 7, 7), lot(3, 8, 7)];
        assert_eq!(component_upper_bound(&refs(&exclusive), 10), Money::from_units(7));
        assert_eq!(component_lower_bound(&refs(&exclusive), 10), Money::from_units(7));
    }

    #[test]
    fn forced_lots_bypass_reserve_and_are_served() {
        let lots = [lot(1, 4, 1), lot(2, 4, 100), lot(3, 4, 90)];
        let (a, _) = solve_wdp_with(&lots, &pool(10, 5), &[1], SolverOptions::default());
        assert_eq!(a.accepted_bid_ids, BTreeSet::from([1, 2]));
        let o = solve_wdp_bruteforce(&lots, &pool(10, 5), &[1], DEFAULT_ORACLE_CAP).unwrap();
        assert_eq!(o, a);
    }

    #[test]
    fn ties_prefer_more_bids_then_smaller_ids() {
        // {1} = 10 vs {2,3} = 10: more bids wins
        let lots = [lot(1, 8, 10), lot(2, 4, 5), lot(3, 4, 5)];
        assert_eq!(solve_wdp(&lots, &pool(10, 0)).accepted_bid_ids, BTreeSet::from([2, 3]));
        // {1} vs {2} equal: smaller id wins
        let lots = [lot(2, 6, 5), lot(1, 6, 5)];
        assert_eq!(solve_wdp(&lots, &pool(10, 0)).accepted_bid_ids, BTreeSet::from([1]));
    }

    fn instance() -> impl Strategy<Value = (Vec<Lot>, u32, i64, Vec<u32>)> {
        (6u32..=12, 0i64..4).prop_flat_map(|(cap, reserve)| {
            (
                prop::collection::vec((1u32..=8, 0i64..60), 0..=10),
                Just(cap),
                Just(reserve),
                prop::collection::vec(0u32..10, 0..3),
            )
                .prop_map(|(raw, cap, reserve, forced)| {
                    let lots = raw.into_iter().enumerate().map(|(i, (n, p))| lot(i as u32, n, p)).collect();
                    (lots, cap, reserve, forced)
                })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(300))]

        #[test]
        fn solver_matches_oracle((lots, cap, reserve, forced) in instance()) {
            let p = pool(cap, reserve);
            let (a, _) = solve_wdp_with(&lots, &p, &forced, SolverOptions::default());
            let o = solve_wdp_bruteforce(&lots, &p, &forced, DEFAULT_ORACLE_CAP).unwrap();
            prop_assert_eq!(&a, &o);
            a.check_feasible(&lots, cap).unwrap();
        }

        #[test]
        fn pruning_does_not_change_the_answer((lots, cap, reserve, forced) in instance()) {
            let p = pool(cap, reserve);
            let with = solve_wdp_with(&lots, &p, &forced, SolverOptions::default()).0;
            let without = solve_wdp_with(&lots, &p, &forced, SolverOptions { use_bounds: false, ..Default::default() }).0;
            prop_assert_eq!(with, without);
        }

        #[test]
        fn bounds_bracket_the_optimum((lots, cap, _r, _f) in instance()) {
            prop_assume!(!lots.is_empty());
            let best = solve_wdp_bruteforce(&lots, &pool(cap, 0), &[], DEFAULT_ORACLE_CAP).unwrap().objective;
            let r = refs(&lots);
            prop_assert!(component_upper_bound(&r, cap) >= best);
            prop_assert!(component_lower_bound(&r, cap) <= best);
        }

        #[test]
        fn remove_then_reinsert_is_identity((lots, cap, _r, _f) in instance(), pick in 0usize..10) {
            prop_assume!(!lots.is_empty());
            let mut g = build_bid_graph(&lots, cap);
            let before = g.clone();
            let id = lots[pick % lots.len()].id;
            let removed = g.remove_node(id).unwrap();
            prop_assert!(g.nodes().all(|n| !g.has_edge(n, id)));
            g.reinsert(removed);
            prop_assert_eq!(g, before);
        }
    }
}

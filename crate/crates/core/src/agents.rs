//! Bidding policies and the pacts SPs may form.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::market::{Bid, Money, Rate, SpId};
use crate::rl::{select_action, Hyperparameters, Learner, TargetRule, Transition};
use crate::wdp::Lot;
use crate::{MarketError, Result};

pub const STATE_WIDTH: usize = 6;

/// What an SP observes before bidding.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentState {
    pub qos: Rate,
    pub last_bid: Money,
    pub last_won: bool,
    pub cooperating: bool,
    pub partner: Option<SpId>,
    pub last_penalty: Money,
    pub losing_streak: u32,
}

/// Divisors mapping an [`AgentState`] onto roughly unit-scale features.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateScales {
    pub rate: f64,
    pub money: f64,
    pub penalty: f64,
    pub streak: f64,
}

impl AgentState {
    pub fn initial(qos: Rate, partner: Option<SpId>) -> Self {
        Self {
            qos,
            last_bid: Money::ZERO,
            last_won: false,
            cooperating: partner.is_some(),
            partner,
            last_penalty: Money::ZERO,
            losing_streak: 0,
        }
    }

    pub fn to_vector(&self, s: &StateScales) -> Vec<f64> {
        vec![
            self.qos.as_f64() / s.rate,
            self.last_bid.as_f64() / s.money,
            f64::from(u8::from(self.last_won)),
            f64::from(u8::from(self.cooperating)),
            self.last_penalty.as_f64() / s.penalty,
            self.losing_streak as f64 / s.streak,
        ]
    }
}

/// Legal bids for one round, ascending.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionSet {
    pub bids: Vec<Money>,
}

impl ActionSet {
    pub fn is_empty(&self) -> bool {
        self.bids.is_empty()
    }

    pub fn len(&self) -> usize {
        self.bids.len()
    }

    pub fn max(&self) -> Option<Money> {
        self.bids.last().copied()
    }

    /// Index of the bin nearest to `target`; ties go to the lower bin.
    pub fn snap(&self, target: Money) -> Option<usize> {
        let mut best: Option<(i64, usize)> = None;
        for (i, b) in self.bids.iter().enumerate() {
            let d = (b.cents() - target.cents()).abs();
            if best.map_or(true, |(bd, _)| d < bd) {
                best = Some((d, i));
            }
        }
        best.map(|(_, i)| i)
    }

    pub fn index_of(&self, bid: Money) -> Option<usize> {
        self.bids.iter().position(|&b| b == bid)
    }
}

/// `{valuation · k / n_bins : k = 1..=n_bins}`, floored to the cent. The top
/// bin is exactly `valuation`. A non-positive valuation yields no actions.
pub fn discretize_actions(valuation: Money, n_bins: u32) -> ActionSet {
    if !valuation.is_positive() || n_bins == 0 {
        return ActionSet { bids: Vec::new() };
    }
    let n = i64::from(n_bins);
    let bids = (1..=n).map(|k| valuation.mul_div_floor(k, n)).collect();
    ActionSet { bids }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Random,
    Incremental,
    Dqn,
    Ddqn,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 4] = [PolicyKind::Random, PolicyKind::Incremental, PolicyKind::Dqn, PolicyKind::Ddqn];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Random => "random",
            PolicyKind::Incremental => "incremental",
            PolicyKind::Dqn => "dqn",
            PolicyKind::Ddqn => "ddqn",
        }
    }

    pub fn learns(self) -> bool {
        matches!(self, PolicyKind::Dqn | PolicyKind::Ddqn)
    }
}

/// Uniform draw over the action set.
pub fn random_policy<R: Rng + ?Sized>(actions: &ActionSet, rng: &mut R) -> Option<usize> {
    if actions.is_empty() {
        None
    } else {
        Some(rng.gen_range(0..actions.len()))
    }
}

/// Memory the incremental bidder keeps across rounds of one episode.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IncrementalMemory {
    /// Bid placed just before the current losing streak began.
    pub anchor: Option<Money>,
}

/// Walks the bid down one `step` after each win and doubles it from the
/// pre-streak anchor after each loss, capped at the top bin. The first bid of
/// an episode is the middle bin.
pub fn incremental_policy(state: &AgentState, memory: &mut IncrementalMemory, actions: &ActionSet, step: Money) -> Option<usize> {
    let top = actions.max()?;
    if state.last_bid == Money::ZERO {
        memory.anchor = None;
        return Some((actions.len() + 1) / 2 - 1);
    }
    let target = if state.last_won || state.losing_streak == 0 {
        memory.anchor = None;
        (state.last_bid - step).max(actions.bids[0])
    } else {
        let anchor = *memory.anchor.get_or_insert(state.last_bid);
        let factor = 1i64.checked_shl(state.losing_streak.min(62)).unwrap_or(i64::MAX);
        Money::from_cents(anchor.cents().saturating_mul(factor)).min(top)
    };
    actions.snap(target)
}

/// One bidding SP: its policy, exploration stream and, for learners, the
/// online/target networks.
#[derive(Clone, Debug)]
pub struct Agent {
    pub id: SpId,
    pub kind: PolicyKind,
    rng: ChaCha8Rng,
    learner: Option<Learner>,
    memory: IncrementalMemory,
}

impl Agent {
    /// `explore_seed` drives action sampling and replay draws; `init_seed`
    /// initialises network weights.
    pub fn new(id: SpId, kind: PolicyKind, n_bins: u32, hyper: &Hyperparameters, explore_seed: u64, init_seed: u64) -> Result<Self> {
        let learner = match kind {
            PolicyKind::Dqn | PolicyKind::Ddqn => {
                let rule = if kind == PolicyKind::Dqn { TargetRule::Dqn } else { TargetRule::Ddqn };
                let mut init = ChaCha8Rng::seed_from_u64(init_seed);
                Some(Learner::new(rule, STATE_WIDTH, n_bins as usize, hyper, init_seed, &mut init)?)
            }
            _ => None,
        };
        Ok(Self { id, kind, rng: ChaCha8Rng::seed_from_u64(explore_seed), learner, memory: IncrementalMemory::default() })
    }

    pub fn learner(&self) -> Option<&Learner> {
        self.learner.as_ref()
    }

    pub fn start_episode(&mut self) {
        self.memory = IncrementalMemory::default();
    }

    /// Picks an action index; `None` means the SP sits the round out.
    pub fn act(&mut self, state: &AgentState, features: &[f64], actions: &ActionSet, epsilon: f64) -> Result<Option<usize>> {
        if actions.is_empty() {
            return Ok(None);
        }
        match self.kind {
            PolicyKind::Random => Ok(random_policy(actions, &mut self.rng)),
            PolicyKind::Incremental => {
                let top = actions.max().unwrap_or(Money::ZERO);
                let step = top.mul_div_floor(1, actions.len() as i64);
                Ok(incremental_policy(state, &mut self.memory, actions, step))
            }
            PolicyKind::Dqn | PolicyKind::Ddqn => {
                let learner = self.learner.as_ref().expect("learning policy owns a learner");
                let q = learner.online.q_values(features)?;
                if q.len() != actions.len() {
                    return Err(MarketError::Contract(format!("network has {} outputs for {} actions", q.len(), actions.len())));
                }
                Ok(Some(select_action(&q, epsilon, &mut self.rng)))
            }
        }
    }

    /// Feeds one transition to the replay memory; non-learners ignore it.
    pub fn learn_step(&mut self, t: Transition) -> Result<Option<f64>> {
        match self.learner.as_mut() {
            Some(l) => l.observe(t, &mut self.rng),
            None => Ok(None),
        }
    }
}

/// Two poor SPs bidding jointly for their combined need.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoopPact {
    pub members: [SpId; 2],
}

impl CoopPact {
    pub fn partner_of(&self, sp: SpId) -> Option<SpId> {
        match self.members {
            [a, b] if a == sp => Some(b),
            [a, b] if b == sp => Some(a),
            _ => None,
        }
    }

    /// Joint lot: summed need and price; each member is allotted its own need
    /// and pays its own bid. `values` gives each member's adjusted price.
    pub fn joint_lot(&self, bids: [&Bid; 2], values: [Money; 2]) -> Lot {
        let id = self.members[0].0.min(self.members[1].0);
        Lot {
            id,
            need: bids[0].subcarriers_needed + bids[1].subcarriers_needed,
            value: values[0] + values[1],
            pay: bids[0].price + bids[1].price,
            members: bids.iter().map(|b| (b.sp_id, b.subcarriers_needed)).collect(),
        }
    }
}

/// Pairs poor candidates greedily by ascending budget. With an odd count the
/// poorest SP stays solo. Returns the pacts and the solo SPs.
pub fn form_coopetition(candidates: &[(SpId, Money)], poor_threshold: Money) -> (Vec<CoopPact>, Vec<SpId>) {
    let mut poor: Vec<(Money, SpId)> = candidates.iter().filter(|(_, b)| *b <= poor_threshold).map(|&(s, b)| (b, s)).collect();
    poor.sort();
    let mut solo: Vec<SpId> = candidates.iter().filter(|(_, b)| *b > poor_threshold).map(|&(s, _)| s).collect();
    let skip = poor.len() % 2;
    solo.extend(poor.iter().take(skip).map(|&(_, s)| s));
    let pacts = poor[skip..]
        .chunks(2)
        .map(|c| {
            let mut m = [c[0].1, c[1].1];
            m.sort();
            CoopPact { members: m }
        })
        .collect();
    solo.sort();
    (pacts, solo)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CollusionPhase {
    Truthful,
    Underbid,
}

/// Scripted cartel of wealthy SPs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollusionPact {
    pub members: Vec<SpId>,
    pub truthful_rounds: u32,
}

impl CollusionPact {
    /// Rounds are numbered from 1.
    pub fn phase(&self, round: u32) -> CollusionPhase {
        if round <= self.truthful_rounds {
            CollusionPhase::Truthful
        } else {
            CollusionPhase::Underbid
        }
    }
}

/// Action indices for the pact's active members. While truthful everyone bids
/// the top bin. While underbidding the member chosen by `round` bids the
/// lowest bin strictly above `screen` (the top bin if none is), the rest bid
/// the lowest bin.
pub fn collusion_policy(pact: &CollusionPact, round: u32, actions: &BTreeMap<SpId, ActionSet>, screen: Money) -> BTreeMap<SpId, usize> {
    let present: Vec<SpId> = pact.members.iter().copied().filter(|sp| actions.get(sp).is_some_and(|a| !a.is_empty())).collect();
    let mut out = BTreeMap::new();
    if present.is_empty() {
        return out;
    }
    let lead = present[round as usize % present.len()];
    for sp in present {
        let set = &actions[&sp];
        let idx = match pact.phase(round) {
            CollusionPhase::Truthful => set.len() - 1,
            CollusionPhase::Underbid if sp == lead => set.bids.iter().position(|&b| b > screen).unwrap_or(set.len() - 1),
            CollusionPhase::Underbid => 0,
        };
        out.insert(sp, idx);
    }
    out
}

//! Scenario configuration: TOML parsing with presets, defaults and validation.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::agents::PolicyKind;
use crate::market::{min_subcarriers, Money, Rate};
use crate::rl::Hyperparameters;
use crate::{MarketError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    FullCompetition,
    CollusionFairness,
    CollusionCoopetition,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 3] =
        [ScenarioKind::FullCompetition, ScenarioKind::CollusionFairness, ScenarioKind::CollusionCoopetition];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::FullCompetition => "full-competition",
            ScenarioKind::CollusionFairness => "collusion-fairness",
            ScenarioKind::CollusionCoopetition => "collusion-coopetition",
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    FullCompetition,
    Collusion,
    CollusionAndCoopetition,
}

impl Preset {
    pub const NAMES: [&'static str; 3] = ["full-competition", "collusion", "collusion-and-coopetition"];

    pub fn scenario(self) -> ScenarioKind {
        match self {
            Preset::FullCompetition => ScenarioKind::FullCompetition,
            Preset::Collusion => ScenarioKind::CollusionFairness,
            Preset::CollusionAndCoopetition => ScenarioKind::CollusionCoopetition,
        }
    }

    pub fn for_scenario(kind: ScenarioKind) -> Self {
        match kind {
            ScenarioKind::FullCompetition => Preset::FullCompetition,
            ScenarioKind::CollusionFairness => Preset::Collusion,
            ScenarioKind::CollusionCoopetition => Preset::CollusionAndCoopetition,
        }
    }
}

impl FromStr for Preset {
    type Err = MarketError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full-competition" => Ok(Preset::FullCompetition),
            "collusion" | "collusion-fairness" => Ok(Preset::Collusion),
            "collusion-and-coopetition" | "collusion-coopetition" => Ok(Preset::CollusionAndCoopetition),
            other => Err(MarketError::InvalidConfig(format!(
                "unknown preset `{other}`{} (expected one of {})",
                suggest(other, Preset::NAMES.iter().copied()),
                Preset::NAMES.join(", ")
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Competing,
    Colluding,
    Coopeting,
}

/// A block of identical SPs. Colluding entries follow the cartel script and
/// ignore `policy`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RosterEntry {
    pub role: Role,
    #[serde(default = "default_policy")]
    pub policy: PolicyKind,
    pub count: u32,
    /// Initial budget drawn uniformly from `[lo, hi]`.
    pub budget: [Money; 2],
    /// Overrides `sp.valuation` for this block.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub valuation: Option<[Money; 2]>,
}

fn default_policy() -> PolicyKind {
    PolicyKind::Ddqn
}

impl RosterEntry {
    pub fn new(role: Role, policy: PolicyKind, count: u32, lo: i64, hi: i64) -> Self {
        Self { role, policy, count, budget: [Money::from_units(lo), Money::from_units(hi)], valuation: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AuctionSettings {
    pub rounds: u32,
    pub sps: u32,
    pub inps: u32,
    pub subcarriers: u32,
    pub tau_th: u32,
    pub n_bins: u32,
    pub fairness: bool,
    pub collusion_detection: bool,
    pub coopetition: bool,
}

impl Default for AuctionSettings {
    fn default() -> Self {
        Self {
            rounds: 10,
            sps: 8,
            inps: 1,
            subcarriers: 10,
            tau_th: 3,
            n_bins: 10,
            fairness: false,
            collusion_detection: false,
            coopetition: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InpSettings {
    /// Initial per-subcarrier reserve.
    pub reserve: Money,
    pub reserve_floor: Money,
    pub alpha: f64,
    /// Unsold rounds before the reserve is lowered.
    pub stale_window: u32,
    pub delta_schedule: Vec<f64>,
    pub q: f64,
    pub observation_window: u32,
    pub epsilon_m: f64,
    pub epsilon_theta: f64,
    /// Fraction of the window a pair must have won to be flagged.
    pub win_share: f64,
    pub limited_utility_margin: f64,
    pub deflation: f64,
    pub punishment_rounds: u32,
}

impl Default for InpSettings {
    fn default() -> Self {
        Self {
            reserve: Money::from_units(5),
            reserve_floor: Money::from_units(1),
            alpha: 0.1,
            stale_window: 3,
            delta_schedule: vec![0.0, 0.1, 0.25, 0.5, 1.0],
            q: 2.0,
            observation_window: 5,
            epsilon_m: 1.0,
            epsilon_theta: 0.0,
            win_share: 0.1,
            limited_utility_margin: 0.1,
            deflation: 0.2,
            punishment_rounds: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpSettings {
    pub min_data_rate: Rate,
    pub rate_per_subcarrier: Rate,
    pub subscribers: u32,
    pub unit_penalty: Money,
    /// Range of each SP's base valuation; its per-round cap is
    /// `min(budget, base valuation)`.
    pub valuation: [Money; 2],
    pub poor_threshold: Money,
    pub middle_threshold: Money,
    pub rich_threshold: Money,
    /// A coopetition pact breaks up once a member's budget exceeds this.
    pub pact_dissolve: Money,
    pub collusion_truthful_rounds: u32,
    pub roster: Vec<RosterEntry>,
}

impl Default for SpSettings {
    fn default() -> Self {
        Self {
            min_data_rate: Rate::from_f64(20.0),
            rate_per_subcarrier: Rate::from_f64(5.0),
            subscribers: 3,
            unit_penalty: Money::from_units(25),
            valuation: [Money::from_units(200), Money::from_units(800)],
            poor_threshold: Money::from_units(300),
            middle_threshold: Money::from_units(500),
            rich_threshold: Money::from_units(800),
            pact_dissolve: Money::from_units(700),
            collusion_truthful_rounds: 5,
            roster: roster_for(Preset::FullCompetition),
        }
    }
}

/// Budget class used in reports.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BudgetClass {
    Poor,
    Middle,
    Rich,
}

impl BudgetClass {
    pub fn name(self) -> &'static str {
        match self {
            BudgetClass::Poor => "poor",
            BudgetClass::Middle => "middle",
            BudgetClass::Rich => "rich",
        }
    }
}

impl SpSettings {
    pub fn classify(&self, initial_budget: Money) -> BudgetClass {
        if initial_budget >= self.rich_threshold {
            BudgetClass::Rich
        } else if initial_budget >= self.middle_threshold {
            BudgetClass::Middle
        } else {
            BudgetClass::Poor
        }
    }

    pub fn subcarriers_needed(&self) -> Result<u32> {
        min_subcarriers(self.min_data_rate, self.rate_per_subcarrier)
    }
}

fn roster_for(preset: Preset) -> Vec<RosterEntry> {
    use PolicyKind::Ddqn;
    match preset {
        Preset::FullCompetition => vec![RosterEntry::new(Role::Competing, Ddqn, 8, 300, 1000)],
        Preset::Collusion => vec![
            RosterEntry::new(Role::Competing, Ddqn, 6, 300, 1000),
            RosterEntry::new(Role::Colluding, Ddqn, 2, 1000, 1000),
        ],
        Preset::CollusionAndCoopetition => vec![
            RosterEntry::new(Role::Competing, Ddqn, 2, 500, 1000),
            RosterEntry::new(Role::Competing, Ddqn, 2, 300, 500),
            RosterEntry::new(Role::Colluding, Ddqn, 2, 1000, 1000),
            RosterEntry::new(Role::Coopeting, Ddqn, 2, 300, 300),
        ],
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<Preset>,
    pub scenario: ScenarioKind,
    pub seed: u64,
    pub auction: AuctionSettings,
    pub inp: InpSettings,
    pub sp: SpSettings,
    pub hyperparameters: Hyperparameters,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            preset: None,
            scenario: ScenarioKind::FullCompetition,
            seed: 0,
            auction: AuctionSettings::default(),
            inp: InpSettings::default(),
            sp: SpSettings::default(),
            hyperparameters: Hyperparameters::default(),
        }
    }
}

impl ScenarioConfig {
    /// Defaults with the preset's scenario switches and roster applied.
    pub fn preset(preset: Preset) -> Self {
        let mut c = Self { preset: Some(preset), scenario: preset.scenario(), ..Self::default() };
        c.sp.roster = roster_for(preset);
        c.auction.fairness = preset == Preset::Collusion;
        c.auction.collusion_detection = preset == Preset::CollusionAndCoopetition;
        c.auction.coopetition = preset == Preset::CollusionAndCoopetition;
        c
    }

    pub fn roster_size(&self) -> u32 {
        self.sp.roster.iter().map(|r| r.count).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(MarketError::InvalidConfig(m));
        let a = &self.auction;
        if a.rounds == 0 {
            return err("auction.rounds must be at least 1".into());
        }
        if a.inps != 1 {
            return err(format!("auction.inps must be 1, got {}", a.inps));
        }
        if a.subcarriers == 0 || a.n_bins == 0 || a.tau_th == 0 {
            return err("auction.subcarriers, auction.n_bins and auction.tau_th must be positive".into());
        }
        if self.roster_size() != a.sps {
            return err(format!("roster holds {} SPs but auction.sps is {}", self.roster_size(), a.sps));
        }
        for (i, r) in self.sp.roster.iter().enumerate() {
            check_range(&format!("sp.roster[{i}].budget"), r.budget)?;
            if let Some(v) = r.valuation {
                check_range(&format!("sp.roster[{i}].valuation"), v)?;
            }
        }
        check_range("sp.valuation", self.sp.valuation)?;
        let need = self.sp.subcarriers_needed()?;
        if need == 0 || need > a.subcarriers {
            return err(format!("each SP needs {need} subcarriers but the pool holds {}", a.subcarriers));
        }
        if self.sp.unit_penalty < Money::ZERO {
            return err("sp.unit_penalty must be non-negative".into());
        }
        let i = &self.inp;
        if !(i.reserve_floor.is_positive() && i.reserve >= i.reserve_floor) {
            return err("inp.reserve must be at least inp.reserve_floor, which must be positive".into());
        }
        if !(0.0..1.0).contains(&i.alpha) || !(0.0..=1.0).contains(&i.deflation) {
            return err("inp.alpha must lie in [0, 1) and inp.deflation in [0, 1]".into());
        }
        if i.delta_schedule.is_empty() || i.delta_schedule.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return err("inp.delta_schedule must hold non-negative finite weights".into());
        }
        if !(i.q > 0.0 && i.q.is_finite()) || i.observation_window == 0 {
            return err("inp.q must be positive and inp.observation_window at least 1".into());
        }
        self.hyperparameters.validate()
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| MarketError::InvalidConfig(format!("cannot serialize config: {e}")))
    }
}

fn check_range(name: &str, r: [Money; 2]) -> Result<()> {
    if !r[0].is_positive() || r[0] > r[1] {
        return Err(MarketError::InvalidConfig(format!("{name} must satisfy 0 < lo <= hi, got [{}, {}]", r[0], r[1])));
    }
    Ok(())
}

/// Parses TOML text. A `preset` key supplies the starting point; every other
/// key overrides it. Unknown keys are rejected with the nearest valid names.
pub fn parse_config(text: &str) -> Result<ScenarioConfig> {
    let user: toml::Table = text.parse().map_err(|e| MarketError::InvalidConfig(format!("malformed config: {e}")))?;
    check_keys(&user, &reference_table(), "")?;
    let base = match user.get("preset") {
        Some(toml::Value::String(name)) => ScenarioConfig::preset(name.parse()?),
        Some(other) => return Err(MarketError::InvalidConfig(format!("preset must be a string, got {other}"))),
        None => ScenarioConfig::default(),
    };
    let mut merged = to_table(&base)?;
    merge(&mut merged, user);
    let cfg: ScenarioConfig = merged
        .try_into()
        .map_err(|e: toml::de::Error| MarketError::InvalidConfig(e.message().to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

fn to_table(cfg: &ScenarioConfig) -> Result<toml::Table> {
    toml::Table::try_from(cfg).map_err(|e| MarketError::InvalidConfig(format!("cannot serialize config: {e}")))
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn reference_table() -> toml::Table {
    let mut cfg = ScenarioConfig::preset(Preset::FullCompetition);
    cfg.sp.roster[0].valuation = Some(cfg.sp.valuation);
    to_table(&cfg).expect("default config serializes")
}

fn check_keys(user: &toml::Table, reference: &toml::Table, path: &str) -> Result<()> {
    for (key, value) in user {
        let full = if path.is_empty() { key.clone() } else { format!("{path}.{key}") };
        let Some(expected) = reference.get(key) else {
            return Err(MarketError::InvalidConfig(format!(
                "unknown key `{full}`{}",
                suggest(key, reference.keys().map(String::as_str))
            )));
        };
        match (value, expected) {
            (toml::Value::Table(u), toml::Value::Table(r)) => check_keys(u, r, &full)?,
            (toml::Value::Array(items), toml::Value::Array(r)) => {
                if let Some(toml::Value::Table(r0)) = r.first() {
                    for (i, item) in items.iter().enumerate() {
                        if let toml::Value::Table(t) = item {
                            check_keys(t, r0, &format!("{full}[{i}]"))?;
                        }
                    }
                }
            }
            _ => {}
        }
    }
    Ok(())
}

/// `"; did you mean ..."` listing up to three close candidates.
pub fn suggest<'a>(word: &str, candidates: impl Iterator<Item = &'a str>) -> String {
    let mut scored: Vec<(f64, &str)> = candidates.map(|c| (strsim::jaro_winkler(word, c), c)).filter(|(s, _)| *s > 0.7).collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)));
    if scored.is_empty() {
        return String::new();
    }
    let names: Vec<String> = scored.iter().take(3).map(|(_, c)| format!("`{c}`")).collect();
    format!("; did you mean {}?", names.join(" or "))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_full_competition_uses_table_defaults() {
        let c = parse_config("preset = \"full-competition\"").unwrap();
        assert_eq!(c.roster_size(), 8);
        assert_eq!((c.auction.subcarriers, c.auction.rounds, c.auction.tau_th, c.auction.n_bins), (10, 10, 3, 10));
        let h = &c.hyperparameters;
        assert_eq!((h.gamma, h.learning_rate, h.batch_size, h.memory_size), (0.95, 0.001, 128, 10_000));
        assert_eq!(c.sp.subcarriers_needed().unwrap(), 4);
    }

    #[test]
    fn collusion_preset_roster() {
        let c = parse_config("preset = \"collusion\"").unwrap();
        let r = &c.sp.roster;
        assert_eq!((r[0].role, r[0].count, r[0].budget[0], r[0].budget[1]), (Role::Competing, 6, Money::from_units(300), Money::from_units(1000)));
        assert_eq!((r[1].role, r[1].count, r[1].budget[0]), (Role::Colluding, 2, Money::from_units(1000)));
        assert!(c.auction.fairness && !c.auction.collusion_detection);
    }

    #[test]
    fn rejects_bad_values_and_keys() {
        let neg = "[[sp.roster]]\nrole = \"competing\"\ncount = 8\nbudget = [-5.0, 100.0]\n";
        assert!(matches!(parse_config(neg), Err(MarketError::InvalidConfig(_))));
        let Err(MarketError::InvalidConfig(msg)) = parse_config("[auction]\nrouns = 4\n") else { panic!() };
        assert!(msg.contains("`rounds`"), "{msg}");
        assert!(parse_config("[sp]\nroster = []\n").is_err());
        assert!(parse_config("preset = \"colusion\"").unwrap_err().to_string().contains("`collusion`"));
    }

    #[test]
    fn overrides_apply_over_preset() {
        let c = parse_config("preset = \"collusion\"\nseed = 9\n[auction]\nrounds = 4\n").unwrap();
        assert_eq!((c.seed, c.auction.rounds, c.roster_size()), (9, 4, 8));
    }

    #[test]
    fn round_trip() {
        for p in [Preset::FullCompetition, Preset::Collusion, Preset::CollusionAndCoopetition] {
            let mut c = ScenarioConfig::preset(p);
            c.sp.roster[0].valuation = Some([Money::from_f64(12.34), Money::from_units(50)]);
            assert_eq!(parse_config(&c.to_toml().unwrap()).unwrap(), c);
        }
    }

    #[test]
    fn budget_classes() {
        let sp = SpSettings::default();
        assert_eq!(sp.classify(Money::from_units(300)), BudgetClass::Poor);
        assert_eq!(sp.classify(Money::from_units(500)), BudgetClass::Middle);
        assert_eq!(sp.classify(Money::from_units(1000)), BudgetClass::Rich);
    }
}

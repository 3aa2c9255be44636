//! Result serialization: the per-round CSV ledger, summaries computed from it,
//! and the run manifest.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::market::{MarketFlag, Money};
use crate::sim::ScenarioRun;
use crate::{MarketError, Result};

pub const CSV_COLUMNS: [&str; 20] = [
    "kind",
    "scenario",
    "seed",
    "episode",
    "round",
    "sp_id",
    "class",
    "policy",
    "bid",
    "effective_bid",
    "valuation",
    "won",
    "payment",
    "penalty",
    "profit",
    "budget_after",
    "streak",
    "excluded",
    "reserve",
    "flags",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowKind {
    /// One SP's settlement in one round.
    Sp,
    /// InP totals for one round.
    Round,
    /// Episode totals: revenue, SP profit and exclusions.
    Episode,
}

/// One ledger line. Money fields are exact cents.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MetricsRow {
    pub kind: RowKind,
    pub scenario: String,
    pub seed: u64,
    pub episode: u32,
    pub round: u32,
    pub sp_id: String,
    pub class: String,
    pub policy: String,
    pub bid: Money,
    pub effective_bid: Money,
    pub valuation: Money,
    pub won: bool,
    pub payment: Money,
    pub penalty: Money,
    pub profit: Money,
    pub budget_after: Money,
    pub streak: u32,
    /// SP rows: 1 if excluded this round. Episode rows: exclusion count.
    pub excluded: u32,
    pub reserve: Money,
    pub flags: String,
}

impl MetricsRow {
    fn blank(kind: RowKind, scenario: &str, seed: u64, episode: u32, round: u32) -> Self {
        Self {
            kind,
            scenario: scenario.to_string(),
            seed,
            episode,
            round,
            sp_id: String::new(),
            class: String::new(),
            policy: String::new(),
            bid: Money::ZERO,
            effective_bid: Money::ZERO,
            valuation: Money::ZERO,
            won: false,
            payment: Money::ZERO,
            penalty: Money::ZERO,
            profit: Money::ZERO,
            budget_after: Money::ZERO,
            streak: 0,
            excluded: 0,
            reserve: Money::ZERO,
            flags: String::new(),
        }
    }

    fn fields(&self) -> [String; 20] {
        let kind = match self.kind {
            RowKind::Sp => "sp",
            RowKind::Round => "round",
            RowKind::Episode => "episode",
        };
        [
            kind.into(),
            self.scenario.clone(),
            self.seed.to_string(),
            self.episode.to_string(),
            self.round.to_string(),
            self.sp_id.clone(),
            self.class.clone(),
            self.policy.clone(),
            fmt_money(self.bid),
            fmt_money(self.effective_bid),
            fmt_money(self.valuation),
            u8::from(self.won).to_string(),
            fmt_money(self.payment),
            fmt_money(self.penalty),
            fmt_money(self.profit),
            fmt_money(self.budget_after),
            self.streak.to_string(),
            self.excluded.to_string(),
            fmt_money(self.reserve),
            self.flags.clone(),
        ]
    }

    fn from_fields(rec: &csv::StringRecord, line: usize) -> Result<Self> {
        let bad = |what: &str| MarketError::InvalidConfig(format!("csv line {line}: bad {what}"));
        let f = |i: usize| rec.get(i).ok_or_else(|| bad(CSV_COLUMNS[i]));
        let num = |i: usize| -> Result<u64> { f(i)?.parse().map_err(|_| bad(CSV_COLUMNS[i])) };
        let money = |i: usize| parse_money(f(i)?).ok_or_else(|| bad(CSV_COLUMNS[i]));
        let kind = match f(0)? {
            "sp" => RowKind::Sp,
            "round" => RowKind::Round,
            "episode" => RowKind::Episode,
            _ => return Err(bad("kind")),
        };
        Ok(Self {
            kind,
            scenario: f(1)?.into(),
            seed: num(2)?,
            episode: num(3)? as u32,
            round: num(4)? as u32,
            sp_id: f(5)?.into(),
            class: f(6)?.into(),
            policy: f(7)?.into(),
            bid: money(8)?,
            effective_bid: money(9)?,
            valuation: money(10)?,
            won: num(11)? == 1,
            payment: money(12)?,
            penalty: money(13)?,
            profit: money(14)?,
            budget_after: money(15)?,
            streak: num(16)? as u32,
            excluded: num(17)? as u32,
            reserve: money(18)?,
            flags: f(19)?.into(),
        })
    }
}

/// Fixed two-decimal rendering straight from cents.
pub fn fmt_money(m: Money) -> String {
    let c = m.cents();
    let sign = if c < 0 { "-" } else { "" };
    format!("{sign}{}.{:02}", c.unsigned_abs() / 100, c.unsigned_abs() % 100)
}

pub fn parse_money(s: &str) -> Option<Money> {
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    let (whole, frac) = body.split_once('.')?;
    if frac.len() != 2 {
        return None;
    }
    let cents = whole.parse::<i64>().ok()? * 100 + frac.parse::<i64>().ok()?;
    Some(Money::from_cents(if neg { -cents } else { cents }))
}

fn flag_text(flags: &[MarketFlag]) -> String {
    let ids = |g: &[crate::market::SpId]| g.iter().map(|s| s.to_string()).collect::<Vec<_>>().join("+");
    flags
        .iter()
        .map(|f| match f {
            MarketFlag::Collusion(g) => format!("collusion:{}", ids(g)),
            MarketFlag::Coopetition(g) => format!("coopetition:{}", ids(g)),
            MarketFlag::FairnessPriority(s) => format!("priority:{s}"),
            MarketFlag::Ineligible(s) => format!("ineligible:{s}"),
        })
        .collect::<Vec<_>>()
        .join(";")
}

/// Flattens a run into ledger rows: per round one row per bidding SP and one
/// InP row, then one episode row.
pub fn rows_for_run(run: &ScenarioRun) -> Vec<MetricsRow> {
    let scenario = run.scenario.name();
    let mut rows = Vec::new();
    for ep in &run.episodes {
        for r in &ep.rounds {
            for e in &r.entries {
                let p = &run.profiles[e.bid.sp_id.0 as usize - 1];
                let mine: Vec<MarketFlag> = r
                    .flags
                    .iter()
                    .filter(|f| match f {
                        MarketFlag::Collusion(g) | MarketFlag::Coopetition(g) => g.contains(&p.id),
                        MarketFlag::FairnessPriority(s) | MarketFlag::Ineligible(s) => *s == p.id,
                    })
                    .cloned()
                    .collect();
                rows.push(MetricsRow {
                    sp_id: p.id.to_string(),
                    class: p.class.name().into(),
                    policy: p.policy_name().into(),
                    bid: e.bid.price,
                    effective_bid: e.effective_price,
                    valuation: e.bid.valuation,
                    won: e.won,
                    payment: e.payment,
                    penalty: e.penalty,
                    profit: e.profit,
                    budget_after: e.budget_after,
                    streak: e.consecutive_losses,
                    excluded: u32::from(e.excluded),
                    reserve: r.reserve_price_used,
                    flags: flag_text(&mine),
                    ..MetricsRow::blank(RowKind::Sp, scenario, run.seed, ep.episode, r.round)
                });
            }
            rows.push(MetricsRow {
                payment: r.inp_revenue,
                profit: r.entries.iter().map(|e| e.profit).sum(),
                reserve: r.reserve_price_used,
                excluded: r.entries.iter().filter(|e| e.excluded).count() as u32,
                flags: flag_text(&r.flags),
                ..MetricsRow::blank(RowKind::Round, scenario, run.seed, ep.episode, r.round)
            });
        }
        rows.push(MetricsRow {
            payment: ep.inp_revenue,
            profit: ep.sp_profit.values().copied().sum(),
            excluded: ep.exclusions.len() as u32,
            ..MetricsRow::blank(RowKind::Episode, scenario, run.seed, ep.episode, 0)
        });
    }
    rows
}

pub fn render_csv(rows: &[MetricsRow]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let io = |e: csv::Error| MarketError::Invariant(format!("csv encoding failed: {e}"));
    w.write_record(CSV_COLUMNS).map_err(io)?;
    for r in rows {
        w.write_record(r.fields()).map_err(io)?;
    }
    w.into_inner().map_err(|e| MarketError::Invariant(format!("csv encoding failed: {e}")))
}

/// Writes the ledger; the file is a pure function of `rows`.
pub fn write_round_csv(rows: &[MetricsRow], path: &Path) -> std::io::Result<()> {
    let bytes = render_csv(rows).map_err(std::io::Error::other)?;
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| with_path(e, dir))?;
    }
    fs::write(path, bytes).map_err(|e| with_path(e, path))
}

fn with_path(e: std::io::Error, path: &Path) -> std::io::Error {
    std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))
}

pub fn read_round_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| MarketError::InvalidConfig(format!("{}: {e}", path.display())))?;
    let header = r.headers().map_err(|e| MarketError::InvalidConfig(format!("{}: {e}", path.display())))?;
    if header.iter().ne(CSV_COLUMNS.iter().copied()) {
        return Err(MarketError::InvalidConfig(format!("{}: unexpected header", path.display())));
    }
    r.records()
        .enumerate()
        .map(|(i, rec)| {
            let rec = rec.map_err(|e| MarketError::InvalidConfig(format!("{}: {e}", path.display())))?;
            MetricsRow::from_fields(&rec, i + 2)
        })
        .collect()
}

/// Mean and sample standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { n, mean: 0.0, std: 0.0 };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 { (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() } else { 0.0 };
        Self { n, mean, std }
    }

    pub fn standard_error(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.std / (self.n as f64).sqrt()
        }
    }
}

/// A quantity summarised over every episode and over per-seed means.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub episodes: Stat,
    pub seeds: Stat,
}

fn metric(per_seed: &BTreeMap<u64, Vec<f64>>) -> Metric {
    let all: Vec<f64> = per_seed.values().flatten().copied().collect();
    let means: Vec<f64> = per_seed.values().map(|v| Stat::of(v).mean).collect();
    Metric { episodes: Stat::of(&all), seeds: Stat::of(&means) }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    /// InP revenue per episode, by scenario.
    pub inp_profit: BTreeMap<String, Metric>,
    /// Excluded SPs per episode, by scenario.
    pub exclusions: BTreeMap<String, Metric>,
    /// Total profit of one SP over an episode, by algorithm.
    pub sp_profit_by_policy: BTreeMap<String, Metric>,
    /// Same, by scenario then budget class.
    pub sp_profit_by_class: BTreeMap<String, BTreeMap<String, Metric>>,
    pub win_rate_by_policy: BTreeMap<String, f64>,
    /// Mean SP profit in each round, by scenario.
    pub round_profit_trace: BTreeMap<String, Vec<f64>>,
}

/// Summarises ledger rows. Only uses what the CSV holds, so summarising the
/// re-read files reproduces the report exactly.
pub fn summarize(rows: &[MetricsRow]) -> Summary {
    type PerSeed = BTreeMap<u64, Vec<f64>>;
    let mut inp: BTreeMap<String, PerSeed> = BTreeMap::new();
    let mut excl: BTreeMap<String, PerSeed> = BTreeMap::new();
    let mut sp_totals: BTreeMap<(String, u64, u32, String), (String, String, i64)> = BTreeMap::new();
    let mut wins: BTreeMap<String, (u64, u64)> = BTreeMap::new();
    let mut trace: BTreeMap<String, BTreeMap<u32, Vec<f64>>> = BTreeMap::new();

    for r in rows {
        match r.kind {
            RowKind::Episode => {
                inp.entry(r.scenario.clone()).or_default().entry(r.seed).or_default().push(r.payment.as_f64());
                excl.entry(r.scenario.clone()).or_default().entry(r.seed).or_default().push(f64::from(r.excluded));
            }
            RowKind::Sp => {
                let e = sp_totals
                    .entry((r.scenario.clone(), r.seed, r.episode, r.sp_id.clone()))
                    .or_insert_with(|| (r.policy.clone(), r.class.clone(), 0));
                e.2 += r.profit.cents();
                let w = wins.entry(r.policy.clone()).or_default();
                w.0 += u64::from(r.won);
                w.1 += 1;
                trace.entry(r.scenario.clone()).or_default().entry(r.round).or_default().push(r.profit.as_f64());
            }
            RowKind::Round => {}
        }
    }

    let mut by_policy: BTreeMap<String, PerSeed> = BTreeMap::new();
    let mut by_class: BTreeMap<String, BTreeMap<String, PerSeed>> = BTreeMap::new();
    for ((scenario, seed, _, _), (policy, class, cents)) in sp_totals {
        let v = Money::from_cents(cents).as_f64();
        by_policy.entry(policy).or_default().entry(seed).or_default().push(v);
        by_class.entry(scenario).or_default().entry(class).or_default().entry(seed).or_default().push(v);
    }

    Summary {
        inp_profit: inp.iter().map(|(k, v)| (k.clone(), metric(v))).collect(),
        exclusions: excl.iter().map(|(k, v)| (k.clone(), metric(v))).collect(),
        sp_profit_by_policy: by_policy.iter().map(|(k, v)| (k.clone(), metric(v))).collect(),
        sp_profit_by_class: by_class
            .iter()
            .map(|(s, m)| (s.clone(), m.iter().map(|(c, v)| (c.clone(), metric(v))).collect()))
            .collect(),
        win_rate_by_policy: wins.into_iter().map(|(k, (w, n))| (k, w as f64 / n as f64)).collect(),
        round_profit_trace: trace.into_iter().map(|(k, m)| (k, m.values().map(|v| Stat::of(v).mean).collect())).collect(),
    }
}

impl Summary {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }

    /// Plain-text report.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let line = |s: &mut String, label: &str, m: &Metric| {
            let _ = writeln!(s, "  {label:<26} {:>10.2} ± {:<9.2} (n={}, seeds={})", m.episodes.mean, m.episodes.std, m.episodes.n, m.seeds.n);
        };
        let _ = writeln!(s, "InP profit per episode");
        for (k, m) in &self.inp_profit {
            line(&mut s, k, m);
        }
        let _ = writeln!(s, "Excluded SPs per episode");
        for (k, m) in &self.exclusions {
            line(&mut s, k, m);
        }
        let _ = writeln!(s, "SP profit per episode by algorithm");
        for (k, m) in &self.sp_profit_by_policy {
            line(&mut s, k, m);
        }
        let _ = writeln!(s, "SP profit per episode by budget class");
        for (scenario, classes) in &self.sp_profit_by_class {
            for (c, m) in classes {
                line(&mut s, &format!("{scenario}/{c}"), m);
            }
        }
        let _ = writeln!(s, "Win rate by algorithm");
        for (k, w) in &self.win_rate_by_policy {
            let _ = writeln!(s, "  {k:<26} {w:>10.4}");
        }
        s
    }
}

/// Record of one `run` invocation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_digest: String,
    pub master_seeds: Vec<u64>,
    pub scenarios: Vec<String>,
    pub code_version: String,
    pub started_at: u64,
    pub finished_at: u64,
    pub outputs: Vec<PathBuf>,
}

/// Hex SHA-256 of the configuration text.
pub fn config_digest(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn unix_now() -> u64 {
    std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Ledger path for one (scenario, seed) run under `out`.
pub fn run_csv_path(out: &Path, scenario: &str, seed: u64) -> PathBuf {
    out.join(scenario).join(format!("seed-{seed}.csv"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn money_formatting_round_trips() {
        for c in [0, 1, -1, 99, -99, 100, 12345, -12345, 7_500] {
            let m = Money::from_cents(c);
            assert_eq!(parse_money(&fmt_money(m)), Some(m));
        }
        assert_eq!(fmt_money(Money::from_cents(-5)), "-0.05");
        assert_eq!(parse_money("1.5"), None);
    }

    #[test]
    fn empty_rows_render_header_only() {
        let bytes = render_csv(&[]).unwrap();
        assert_eq!(String::from_utf8(bytes).unwrap(), format!("{}\n", CSV_COLUMNS.join(",")));
    }

    #[test]
    fn single_episode_has_zero_spread() {
        let mut row = MetricsRow::blank(RowKind::Episode, "full-competition", 1, 0, 0);
        row.payment = Money::from_units(40);
        let s = summarize(&[row]);
        let m = s.inp_profit["full-competition"];
        assert_eq!((m.episodes.n, m.episodes.mean, m.episodes.std), (1, 40.0, 0.0));
    }

    #[test]
    fn digest_tracks_content() {
        assert_eq!(config_digest("a"), config_digest("a"));
        assert_ne!(config_digest("a"), config_digest("b"));
        assert_eq!(config_digest("").len(), 64);
    }
}

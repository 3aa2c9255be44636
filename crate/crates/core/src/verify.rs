//! Self-checks shared by the `verify` command and the acceptance suite.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agents::PolicyKind;
use crate::config::{Preset, Role, RosterEntry, ScenarioConfig};
use crate::io::{render_csv, rows_for_run};
use crate::market::{Money, SubcarrierPool};
use crate::rl::Mlp;
use crate::sim::{run_episode, run_scenario, seed_tree};
use crate::truthfulness::{enumerate, verdicts, RegionVerdict};
use crate::wdp::{solve_wdp_bruteforce, solve_wdp_with, Lot, SolverOptions, DEFAULT_ORACLE_CAP};
use crate::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub instances: usize,
    pub mismatches: usize,
    pub infeasible: usize,
}

/// Random instances with 2–10 bids, pools of 6–12 subcarriers and random
/// reserves; branch and bound against exhaustive search.
pub fn wdp_oracle(instances: usize, seed: u64) -> Result<OracleReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = OracleReport { instances, mismatches: 0, infeasible: 0 };
    for _ in 0..instances {
        let capacity = rng.gen_range(6..=12);
        let n = rng.gen_range(2..=10);
        let lots: Vec<Lot> = (0..n)
            .map(|i| Lot::new(i + 1, rng.gen_range(1..=capacity), Money::from_cents(rng.gen_range(0..=20_000))))
            .collect();
        let pool = SubcarrierPool::new(capacity, Money::from_cents(rng.gen_range(0..=2_000)))?;
        let (fast, _) = solve_wdp_with(&lots, &pool, &[], SolverOptions::default());
        let slow = solve_wdp_bruteforce(&lots, &pool, &[], DEFAULT_ORACLE_CAP)?;
        if fast.revenue != slow.revenue || fast.accepted_bid_ids != slow.accepted_bid_ids {
            report.mismatches += 1;
        }
        let screened = fast.accepted_bid_ids.iter().any(|id| {
            let lot = &lots[*id as usize - 1];
            lot.pay < pool.reserve_screen(lot.need)
        });
        if fast.check_feasible(&lots, capacity).is_err() || screened {
            report.infeasible += 1;
        }
    }
    Ok(report)
}

/// Region verdicts pooled over several valuations and penalties.
pub fn truthfulness() -> Result<Vec<RegionVerdict>> {
    let mut all = Vec::new();
    for (v, p, step) in [(100, 75, 10), (1000, 75, 50), (250, 0, 25), (430, 120, 10)] {
        all.extend(enumerate(Money::from_units(v), Money::from_units(p), Money::from_units(step))?);
    }
    Ok(verdicts(&all))
}

/// Largest relative error between backpropagated and central-difference
/// gradients over `networks` random small networks.
pub fn gradient_check(networks: usize, seed: u64, step: f64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..networks {
        let depth = rng.gen_range(1..=3);
        let mut dims = vec![rng.gen_range(1..=5)];
        dims.extend((0..depth).map(|_| rng.gen_range(2..=6)));
        dims.push(rng.gen_range(1..=4));
        let mut net = Mlp::new(&dims, &mut rng)?;
        let mut p = net.params();
        p.iter_mut().for_each(|x| *x += rng.gen_range(-0.1..0.1));
        net.set_params(&p)?;
        let batch = rng.gen_range(1..=4);
        let states = Array2::from_shape_fn((batch, dims[0]), |_| rng.gen_range(-1.0..1.0));
        let outputs = *dims.last().expect("output layer");
        let actions: Vec<usize> = (0..batch).map(|_| rng.gen_range(0..outputs)).collect();
        let targets: Vec<f64> = (0..batch).map(|_| rng.gen_range(-2.0..2.0)).collect();

        let (_, grads) = net.loss_and_gradients(states.view(), &actions, &targets)?;
        let mut analytic: Vec<f64> = Vec::new();
        for (w, b) in grads.weights.iter().zip(&grads.biases) {
            analytic.extend(w.iter());
            analytic.extend(b.iter());
        }
        let base = net.params();
        for i in 0..base.len() {
            let mut probe = base.clone();
            probe[i] = base[i] + step;
            net.set_params(&probe)?;
            let up = net.loss_and_gradients(states.view(), &actions, &targets)?.0;
            probe[i] = base[i] - step;
            net.set_params(&probe)?;
            let down = net.loss_and_gradients(states.view(), &actions, &targets)?.0;
            let numeric = (up - down) / (2.0 * step);
            let denom = (analytic[i].abs() + numeric.abs()).max(1e-8);
            worst = worst.max((analytic[i] - numeric).abs() / denom);
        }
        net.set_params(&base)?;
    }
    Ok(worst)
}

/// Six SPs: two poor incremental bidders against a high-valuation cartel and
/// two rich random bidders, with fairness on.
pub fn adversarial_fairness_config() -> ScenarioConfig {
    let mut c = ScenarioConfig::preset(Preset::Collusion);
    let rich = [Money::from_units(900), Money::from_units(1000)];
    c.sp.roster = vec![
        RosterEntry { valuation: Some([Money::from_units(1000); 2]), ..RosterEntry::new(Role::Colluding, PolicyKind::Ddqn, 2, 1000, 1000) },
        RosterEntry { valuation: Some(rich), ..RosterEntry::new(Role::Competing, PolicyKind::Random, 2, 1000, 1000) },
        RosterEntry {
            valuation: Some([Money::from_units(100), Money::from_units(200)]),
            ..RosterEntry::new(Role::Competing, PolicyKind::Incremental, 2, 300, 300)
        },
    ];
    c.auction.sps = 6;
    c.auction.fairness = true;
    c
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub episodes: u32,
    /// Solvent SPs observed at `tau_th` or more consecutive losses.
    pub breaches: usize,
}

pub fn fairness(config: &ScenarioConfig, episodes: u32) -> Result<FairnessReport> {
    let mut breaches = 0;
    for seed in 0..u64::from(episodes) {
        let ep = run_episode(config, seed)?;
        breaches += ep
            .rounds
            .iter()
            .flat_map(|r| &r.entries)
            .filter(|e| !e.excluded && e.consecutive_losses >= config.auction.tau_th)
            .count();
    }
    Ok(FairnessReport { episodes, breaches })
}

/// Full competition with two SPs per algorithm and matched endowments: two
/// (budget, valuation) pairs are drawn per seed and every algorithm gets one
/// SP with each pair, so profit differences come from the policy alone.
/// Roster order rotates with the seed.
pub fn matched_algorithm_config(seed: u64) -> ScenarioConfig {
    let draw = |label: &str, k: u64, lo: i64, hi: i64| {
        Money::from_cents(lo * 100 + (seed_tree(seed, label, k) % ((hi - lo) as u64 * 100 + 1)) as i64)
    };
    let ends: Vec<(Money, Money)> = (0..2).map(|k| (draw("a4-budget", k, 300, 1000), draw("a4-valuation", k, 200, 800))).collect();
    let mut order = PolicyKind::ALL.to_vec();
    order.rotate_left((seed % 4) as usize);
    let mut c = ScenarioConfig::preset(Preset::FullCompetition);
    c.seed = seed;
    c.sp.roster = ends
        .iter()
        .flat_map(|&(b, v)| {
            order.iter().map(move |&policy| RosterEntry { role: Role::Competing, policy, count: 1, budget: [b, b], valuation: Some([v, v]) })
        })
        .collect();
    c
}

/// Collusion roster with detection on and fairness off.
pub fn scripted_collusion_config() -> ScenarioConfig {
    let mut c = ScenarioConfig::preset(Preset::Collusion);
    c.auction.fairness = false;
    c.auction.collusion_detection = true;
    c
}

/// Full competition with detection on.
pub fn independent_config() -> ScenarioConfig {
    let mut c = ScenarioConfig::preset(Preset::FullCompetition);
    c.auction.collusion_detection = true;
    c
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorReport {
    pub seeds: u32,
    /// Seeds where the cartel was flagged within `2 · window` rounds.
    pub cartel_flagged: u32,
    /// Seeds of the independent roster with no flag at all.
    pub independent_clean: u32,
}

pub fn detector(seeds: u32) -> Result<DetectorReport> {
    let scripted = scripted_collusion_config();
    let independent = independent_config();
    let horizon = 2 * scripted.inp.observation_window;
    let mut report = DetectorReport { seeds, cartel_flagged: 0, independent_clean: 0 };
    for seed in 0..u64::from(seeds) {
        let sim_seed = seed_tree(seed, "detector", 0);
        let ep = run_episode(&scripted, sim_seed)?;
        let cartel: Vec<_> = crate::sim::Simulation::new(ScenarioConfig { seed: sim_seed, ..scripted.clone() })?
            .profiles
            .iter()
            .filter(|p| p.role == Role::Colluding)
            .map(|p| p.id)
            .collect();
        if ep.collusion_flags.iter().any(|(g, r)| *g == cartel && *r <= horizon) {
            report.cartel_flagged += 1;
        }
        if run_episode(&independent, sim_seed)?.collusion_flags.is_empty() {
            report.independent_clean += 1;
        }
    }
    Ok(report)
}

/// Runs `config` twice and compares the serialized ledgers byte for byte.
pub fn determinism(config: &ScenarioConfig) -> Result<bool> {
    let a = render_csv(&rows_for_run(&run_scenario(config)?))?;
    let b = render_csv(&rows_for_run(&run_scenario(config)?))?;
    Ok(a == b)
}

/// Short-training variant of a preset for smoke checks.
pub fn quick(preset: Preset, seed: u64, train: u32, eval: u32) -> ScenarioConfig {
    let mut c = ScenarioConfig::preset(preset);
    c.seed = seed;
    c.hyperparameters.train_episodes = train;
    c.hyperparameters.eval_episodes = eval;
    c
}

/// Named pass/fail outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Fast versions of every suite.
pub fn smoke_suite() -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let o = wdp_oracle(200, 1)?;
    out.push(Check {
        name: "wdp-oracle".into(),
        passed: o.mismatches == 0 && o.infeasible == 0,
        detail: format!("{} instances, {} mismatches, {} infeasible", o.instances, o.mismatches, o.infeasible),
    });
    let t = truthfulness()?;
    out.push(Check {
        name: "truthfulness".into(),
        passed: t.iter().all(|v| v.holds),
        detail: t.iter().map(|v| format!("{:?}:{}", v.region, v.instances)).collect::<Vec<_>>().join(" "),
    });
    let g = gradient_check(20, 7, 1e-5)?;
    out.push(Check { name: "gradient".into(), passed: g < 1e-4, detail: format!("max relative error {g:.2e}") });
    let f = fairness(&adversarial_fairness_config(), 20)?;
    out.push(Check { name: "fairness".into(), passed: f.breaches == 0, detail: format!("{} episodes, {} breaches", f.episodes, f.breaches) });
    let d = detector(10)?;
    out.push(Check {
        name: "collusion-detector".into(),
        passed: d.cartel_flagged * 10 >= d.seeds * 9 && d.independent_clean * 20 >= d.seeds * 19,
        detail: format!("cartel flagged {}/{}, independent clean {}/{}", d.cartel_flagged, d.seeds, d.independent_clean, d.seeds),
    });
    let same = determinism(&quick(Preset::CollusionAndCoopetition, 3, 5, 3))?;
    out.push(Check { name: "determinism".into(), passed: same, detail: "two runs, identical ledgers".into() });
    Ok(out)
}

/// Counts of each policy in a roster; handy for reports.
pub fn roster_policies(config: &ScenarioConfig) -> BTreeMap<&'static str, u32> {
    let mut m = BTreeMap::new();
    for r in &config.sp.roster {
        let name = if r.role == Role::Colluding { "scripted" } else { r.policy.name() };
        *m.entry(name).or_default() += r.count;
    }
    m
}

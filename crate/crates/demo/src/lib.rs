//! Browser front end. Each export takes and returns JSON text; the plain
//! functions underneath are what the host tests exercise.

use serde::{Deserialize, Serialize};
use serde_json::json;
use spectrum_market::config::{Preset, ScenarioConfig};
use spectrum_market::market::{Money, SubcarrierPool};
use spectrum_market::sim::{Phase, Simulation};
use spectrum_market::truthfulness::{enumerate, verdicts};
use spectrum_market::wdp::{solve_wdp_bruteforce, solve_wdp_with, Lot, SolverOptions, DEFAULT_ORACLE_CAP};
use wasm_bindgen::prelude::*;

/// Training is capped so a click stays interactive.
pub const MAX_TRAIN_EPISODES: u32 = 300;

#[derive(Deserialize)]
struct AuctionInput {
    capacity: u32,
    reserve: f64,
    bids: Vec<BidInput>,
}

#[derive(Deserialize)]
struct BidInput {
    need: u32,
    price: f64,
}

#[derive(Serialize)]
struct AuctionOutput {
    accepted: Vec<u32>,
    revenue: f64,
    assignment: Vec<(u32, u32)>,
    nodes: u64,
    pruned: u64,
    oracle_revenue: Option<f64>,
}

/// Solves one winner-determination instance. Bids are numbered from 1 in
/// input order; the exhaustive oracle runs alongside when it is small enough.
pub fn solve_auction(input: &str) -> Result<String, String> {
    let input: AuctionInput = serde_json::from_str(input).map_err(|e| e.to_string())?;
    let pool = SubcarrierPool::new(input.capacity, Money::from_f64(input.reserve)).map_err(|e| e.to_string())?;
    let lots: Vec<Lot> =
        input.bids.iter().enumerate().map(|(i, b)| Lot::new(i as u32 + 1, b.need, Money::from_f64(b.price))).collect();
    let (alloc, stats) = solve_wdp_with(&lots, &pool, &[], SolverOptions::default());
    let oracle_revenue = if lots.len() <= DEFAULT_ORACLE_CAP {
        Some(solve_wdp_bruteforce(&lots, &pool, &[], DEFAULT_ORACLE_CAP).map_err(|e| e.to_string())?.revenue.as_f64())
    } else {
        None
    };
    let out = AuctionOutput {
        accepted: alloc.accepted_bid_ids.iter().copied().collect(),
        revenue: alloc.revenue.as_f64(),
        assignment: alloc.subcarrier_assignment.iter().map(|(k, sp)| (*k, sp.0)).collect(),
        nodes: stats.nodes,
        pruned: stats.pruned,
        oracle_revenue,
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

/// Trains a preset for `train_episodes` and plays one evaluation episode,
/// returning its rounds.
pub fn simulate_episode(preset: &str, seed: u64, train_episodes: u32) -> Result<String, String> {
    let preset: Preset = preset.parse().map_err(|e: spectrum_market::MarketError| e.to_string())?;
    let config = ScenarioConfig { seed, ..ScenarioConfig::preset(preset) };
    let mut sim = Simulation::new(config).map_err(|e| e.to_string())?;
    for _ in 0..train_episodes.min(MAX_TRAIN_EPISODES) {
        sim.run_episode(Phase::Train).map_err(|e| e.to_string())?;
    }
    let ep = sim.run_episode(Phase::Eval).map_err(|e| e.to_string())?;

    let sps: Vec<_> = sim
        .profiles
        .iter()
        .map(|p| {
            json!({
                "id": p.id.0,
                "policy": p.policy_name(),
                "class": p.class.name(),
                "budget": p.initial_budget.as_f64(),
                "valuation": p.base_valuation.as_f64(),
                "profit": ep.sp_profit[&p.id].as_f64(),
            })
        })
        .collect();
    let rounds: Vec<_> = ep
        .rounds
        .iter()
        .map(|r| {
            let entries: Vec<_> = r
                .entries
                .iter()
                .map(|e| {
                    json!({
                        "sp": e.bid.sp_id.0,
                        "bid": e.bid.price.as_f64(),
                        "won": e.won,
                        "profit": e.profit.as_f64(),
                        "budget": e.budget_after.as_f64(),
                        "excluded": e.excluded,
                    })
                })
                .collect();
            json!({ "round": r.round, "revenue": r.inp_revenue.as_f64(), "reserve": r.reserve_price_used.as_f64(), "entries": entries })
        })
        .collect();
    let flags: Vec<_> = ep.collusion_flags.iter().map(|(g, r)| json!({ "group": g.iter().map(|s| s.0).collect::<Vec<_>>(), "round": r })).collect();
    let out = json!({
        "scenario": sim.config.scenario.name(),
        "trained": train_episodes.min(MAX_TRAIN_EPISODES),
        "revenue": ep.inp_revenue.as_f64(),
        "exclusions": ep.exclusions.iter().map(|(s, r)| json!({ "sp": s.0, "round": r })).collect::<Vec<_>>(),
        "flags": flags,
        "sps": sps,
        "rounds": rounds,
    });
    Ok(out.to_string())
}

/// Truthful against underbid payoffs on a grid, with per-region verdicts.
pub fn truthfulness_grid(valuation: f64, penalty: f64, step: f64) -> Result<String, String> {
    if !(valuation > 0.0 && step > 0.0 && penalty >= 0.0) || valuation / step > 200.0 {
        return Err("need valuation > 0, penalty ≥ 0 and at most 200 grid steps".into());
    }
    let inst = enumerate(Money::from_f64(valuation), Money::from_f64(penalty), Money::from_f64(step)).map_err(|e| e.to_string())?;
    let cells: Vec<_> = inst
        .iter()
        .map(|i| {
            json!({
                "rival": i.rival.as_f64(),
                "underbid": i.underbid.as_f64(),
                "truthful": i.truthful_payoff.as_f64(),
                "shaded": i.underbid_payoff.as_f64(),
            })
        })
        .collect();
    let verdicts: Vec<_> = verdicts(&inst)
        .iter()
        .map(|v| json!({ "region": format!("{:?}", v.region), "instances": v.instances, "holds": v.holds }))
        .collect();
    Ok(json!({ "cells": cells, "verdicts": verdicts }).to_string())
}

#[wasm_bindgen(js_name = solveAuction)]
pub fn solve_auction_js(input: &str) -> Result<String, JsValue> {
    solve_auction(input).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = simulateEpisode)]
pub fn simulate_episode_js(preset: &str, seed: u32, train_episodes: u32) -> Result<String, JsValue> {
    simulate_episode(preset, u64::from(seed), train_episodes).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = truthfulnessGrid)]
pub fn truthfulness_grid_js(valuation: f64, penalty: f64, step: f64) -> Result<String, JsValue> {
    truthfulness_grid(valuation, penalty, step).map_err(|e| JsValue::from_str(&e))
}

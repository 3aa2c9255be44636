use serde_json::Value;
use spectrum_market_demo::{simulate_episode, solve_auction, truthfulness_grid, MAX_TRAIN_EPISODES};

fn parse(s: Result<String, String>) -> Value {
    serde_json::from_str(&s.expect("call succeeds")).unwrap()
}

#[test]
fn auction_agrees_with_oracle() {
    let v = parse(solve_auction(
        r#"{"capacity": 10, "reserve": 5, "bids": [
            {"need": 4, "price": 120}, {"need": 4, "price": 90},
            {"need": 6, "price": 200}, {"need": 2, "price": 8}]}"#,
    ));
    assert_eq!(v["revenue"], 320.0);
    assert_eq!(v["oracle_revenue"], 320.0);
    assert_eq!(v["accepted"], serde_json::json!([1, 3]));
    assert_eq!(v["assignment"].as_array().unwrap().len(), 10);
}

#[test]
fn bad_auction_input_is_an_error() {
    assert!(solve_auction("{").is_err());
    assert!(solve_auction(r#"{"capacity": 10, "reserve": -1, "bids": []}"#).is_err());
}

#[test]
fn episode_is_seeded() {
    let a = simulate_episode("collusion-and-coopetition", 3, 2).unwrap();
    assert_eq!(a, simulate_episode("collusion-and-coopetition", 3, 2).unwrap());
    let v: Value = serde_json::from_str(&a).unwrap();
    assert_eq!(v["sps"].as_array().unwrap().len(), 8);
    let revenue: f64 = v["rounds"].as_array().unwrap().iter().map(|r| r["revenue"].as_f64().unwrap()).sum();
    assert!((revenue - v["revenue"].as_f64().unwrap()).abs() < 1e-6);
    assert!(simulate_episode("nope", 1, 0).unwrap_err().contains("full-competition"));
}

#[test]
fn training_is_capped() {
    let v = parse(simulate_episode("full-competition", 1, 10_000));
    assert_eq!(v["trained"], MAX_TRAIN_EPISODES);
}

#[test]
fn grid_verdicts_hold() {
    let v = parse(truthfulness_grid(100.0, 75.0, 10.0));
    let verdicts = v["verdicts"].as_array().unwrap();
    assert_eq!(verdicts.len(), 5);
    assert!(verdicts.iter().all(|r| r["holds"] == true));
    assert!(truthfulness_grid(100.0, 75.0, 0.1).is_err());
}

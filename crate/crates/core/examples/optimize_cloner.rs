//! Searches for the per-qubit cloning channel with the highest joint-pass
//! value on the four Wiesner states and writes it to `fixtures/cloner.json`.
//!
//! cargo run -p poqk-core --example optimize_cloner

use poqk_core::cloning::optimize_cloner;

fn main() {
    let mut best = optimize_cloner(0, 16, 500, 2024);
    for env in 1..=2 {
        let ch = optimize_cloner(env, 16, 500, 2024 + env as u64);
        println!("env qubits {env}: value {:.12}", ch.bb84_value());
        // keep the smallest environment that reaches the optimum
        if ch.bb84_value() > best.bb84_value() + 1e-9 {
            best = ch;
        }
    }
    let value = best.bb84_value();
    println!("selected env qubits {}: value {value:.12}", best.env_qubits);
    assert!(value >= 0.74, "optimizer stalled at {value}");
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/cloner.json");
    std::fs::write(path, serde_json::to_string_pretty(&best).expect("serializes") + "\n").expect("write fixture");
    println!("wrote {path}");
}

//! Scenario runner, reference vectors and file formats for the offline CBDC
//! prototype in `cbdc-core`.

pub mod scenario;
pub mod sim;
pub mod vectors;

pub use scenario::{Scenario, ScenarioError};
pub use sim::{RunResult, Simulator};

/// Parses and runs a scenario; `seed` overrides the file's seed.
pub fn run_scenario(text: &str, seed: Option<u64>) -> Result<RunResult, ScenarioError> {
    let scenario = Scenario::parse(text)?;
    let seed = seed.unwrap_or(scenario.seed);
    Ok(Simulator::new(scenario, seed).run())
}

/// Pretty JSON with sorted keys and a trailing newline.
pub fn render_report(report: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

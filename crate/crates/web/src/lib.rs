//! WebAssembly bindings for the browser demo. Each operation takes the
//! configuration text from the page, runs on one thread and returns JSON.

use b92sim::config::{parse_config, ExperimentSpec};
use b92sim::experiment::{json_report, run_attack, run_histogram, run_optimize};
use b92sim::protocol::RunOptions;
use serde_json::{json, Value};
use wasm_bindgen::prelude::wasm_bindgen;

/// Configuration the page starts with: 1 GHz, 8-bit word, a few
/// milliseconds of data so every operation returns within a second.
pub const DEMO_CONFIG: &str = "\
# 1 GHz clock, repeating 10101010 word
protocol.clock = 1e9
protocol.collection_time = 0.01
source.mean_photon_number = 0.1
channel.attenuation = 2.2
experiment.distances = 4
experiment.windows = 0.5
";

fn spec_from(config: &str, seed: u64) -> Result<ExperimentSpec, String> {
    let mut spec = parse_config(config).map_err(|e| e.to_string())?;
    spec.session.seed = seed;
    spec.validate().map_err(|e| e.to_string())?;
    Ok(spec)
}

const SERIAL: RunOptions = RunOptions { parallel: false };

fn render(v: Value) -> String {
    v.to_string()
}

#[wasm_bindgen]
pub fn default_config() -> String {
    DEMO_CONFIG.to_string()
}

/// Timing histogram of both detectors folded on the sync period.
#[wasm_bindgen]
pub fn histogram(config: &str, seed: u64) -> Result<String, String> {
    let spec = spec_from(config, seed)?;
    let h = run_histogram(&spec, SERIAL).map_err(|e| e.to_string())?;
    let starts: Vec<f64> = (0..h.n_bins()).map(|i| h.bin_start(i) * 1e12).collect();
    let results = json!({
        "bin_start_ps": starts,
        "ch0": h.counts[0],
        "ch1": h.counts[1],
        "collection_time": h.collection_time,
    });
    Ok(render(json_report("histogram", &spec, results)))
}

/// Sifted rate, QBER and net rate across the window grid, with the best window.
#[wasm_bindgen]
pub fn window_scan(config: &str, seed: u64) -> Result<String, String> {
    let spec = spec_from(config, seed)?;
    let (best, reports) = run_optimize(&spec, SERIAL).map_err(|e| e.to_string())?;
    let results = json!({ "best_window_fraction": best, "reports": reports });
    Ok(render(json_report("optimize-window", &spec, results)))
}

/// Intercept-resend attack against the same link without Eve.
#[wasm_bindgen]
pub fn attack(config: &str, seed: u64) -> Result<String, String> {
    let spec = spec_from(config, seed)?;
    let r = run_attack(&spec, SERIAL).map_err(|e| e.to_string())?;
    Ok(render(json_report("attack", &spec, json!(r))))
}

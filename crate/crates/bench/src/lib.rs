//! Fixtures shared by the benchmarks.

use proxycal_core::simulator::{generate, sample_network, Scenario, ScenarioSpec};
use proxycal_core::{Channel, NetworkConfig};

/// Sample network scenario of `days` days.
pub fn network(days: f64, seed: u64) -> (NetworkConfig, Scenario) {
    let spec = ScenarioSpec {
        sites: sample_network(),
        duration_days: days,
        seed,
        ..ScenarioSpec::default()
    };
    let scenario = generate(&spec).expect("valid scenario");
    let cfg = NetworkConfig {
        sites: spec.sites,
        drift: Default::default(),
        histogram: Default::default(),
        spatial: Default::default(),
        calibration: Default::default(),
    };
    (cfg, scenario)
}

/// One 72-hour fitting window at RIVR: `(c_ox, c_o3, z)`.
pub fn fit_window(seed: u64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (_, scenario) = network(17.0, seed);
    let rivr = scenario.site("RIVR").unwrap();
    let mlvb = scenario.site("MLVB").unwrap();
    let take =
        |s: &proxycal_core::HourlySeries| -> Vec<f64> { s.values()[24..96].iter().map(|v| v.unwrap_or(0.0)).collect() };
    (
        take(rivr.series(Channel::COx).unwrap()),
        take(rivr.series(Channel::O3).unwrap()),
        take(mlvb.series(Channel::No2Ref).unwrap()),
    )
}

//! Fixtures shared by the benches.

use ssgl_core::design::prepare;
use ssgl_core::sim::replicate_rng;
use ssgl_core::{GroupSpec, GroupedDesign, Result, ScenarioKind, SimScenario};

/// Timing-scenario design with `groups` pairs of standard normal columns.
pub fn timing_design(n: usize, groups: usize, seed: u64) -> Result<GroupedDesign> {
    let scenario = SimScenario {
        kind: ScenarioKind::Timing,
        n,
        p: groups,
        rho: 0.0,
        replicates: 1,
        seed,
    };
    let mut rng = replicate_rng(seed, 0);
    let truth = scenario.draw_truth(&mut rng);
    let data = scenario.sample(&truth, n, &mut rng);
    prepare(data.x, data.y, (0..groups).map(|g| GroupSpec::new(format!("g{g}"), 2)).collect())
}

//! Regenerate `data/baseline.json` from standard runs of both presets.
//!
//! cargo run --release -p microcity-core --example gen_baseline > crates/core/data/baseline.json

use rayon::prelude::*;

use microcity::agent::PersonalityProfile;
use microcity::sim::{run_headless, standard_scenario, MemoryReplaySource, ProfileSpec};
use microcity::telemetry::{compute_metrics, Baseline};

const SEEDS: u64 = 50;

fn main() -> anyhow::Result<()> {
    let jobs: Vec<(PersonalityProfile, u64)> = [PersonalityProfile::DEFENSIVE, PersonalityProfile::AGGRESSIVE]
        .into_iter()
        .flat_map(|p| (0..SEEDS).map(move |s| (p, s)))
        .collect();
    let metrics = jobs
        .par_iter()
        .map(|(p, seed)| {
            let scenario = standard_scenario(ProfileSpec::Explicit(*p), *seed);
            let log = run_headless(&scenario, None, &MemoryReplaySource::default())?;
            let (_, graph) = scenario.resolve_map(None)?;
            Ok(compute_metrics(&log, &graph)?)
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let baseline = Baseline::from_population(&metrics);
    println!("{}", serde_json::to_string_pretty(&baseline)?);
    Ok(())
}

//! Minimal end-to-end library usage on a simulated dataset.
//!
//!   cargo run --release -p nullstrap-core --example quickstart

use nullstrap_core::prelude::*;
use nullstrap_core::sim::confusion;

fn main() -> Result<()> {
    // a two-group benchmark dataset: 1000 genes, 10% differentially expressed
    let config = SimulationConfig {
        n: 16,
        m: 1000,
        pi_de: 0.1,
        fc: 3.0,
        seed: 42,
        ..Default::default()
    };
    let (counts, design, truth) = generate_dataset(&config, 0)?;

    let outcome = run_nullstrap(
        &counts,
        &design,
        &NullstrapOptions {
            q: 0.1,
            seed: 7,
            ..Default::default()
        },
    )?;

    let (fdp, tpr) = confusion(&outcome.filter.discoveries, &truth);
    println!(
        "{} discoveries at tau = {:.3} (effective q = {:.4})",
        outcome.filter.discoveries.len(),
        outcome.filter.tau,
        outcome.filter.effective_q
    );
    println!("realized FDP = {fdp:.4}, power = {tpr:.4}");

    // the same counts through a baseline for comparison
    let s = estimate_size_factors(&counts)?;
    let bh = run_baseline(Method::NbGlmBh, &counts, &design, &s, 0.1)?;
    let (bh_fdp, bh_tpr) = confusion(&bh.discoveries, &truth);
    println!(
        "NBGLM_BH: {} discoveries, FDP = {bh_fdp:.4}, power = {bh_tpr:.4}",
        bh.discoveries.len()
    );
    Ok(())
}

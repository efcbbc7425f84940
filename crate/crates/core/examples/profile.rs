//! Debiased spikes and the spectral profile of one dataset, with intervals.
//!
//! Usage: `cargo run --release --example profile -- [N]`

use nmsd::sim::{generate_dataset, population_profile, SimConfig};
use nmsd::uncertainty::profile_intervals;
use nmsd::{analyze_dataset, AnalysisOptions};

fn main() -> nmsd::Result<()> {
    let mut cfg = SimConfig::default();
    if let Some(n) = std::env::args().nth(1) {
        cfg.n1 = n.parse().expect("N must be an integer");
    }
    let y = generate_dataset(&cfg, 1, 11)?;
    let a = analyze_dataset(&y, &AnalysisOptions::new(cfg.r).uncentered())?;
    let truth = population_profile(&cfg.d1);
    let ci = profile_intervals(&a.profile, a.v_pi()?, 0.05)?;

    println!(
        "{:>3} {:>10} {:>10} {:>8} {:>8} {:>8}",
        "k", "lambda", "xi", "d2", "pi", "true"
    );
    for k in 0..cfg.r {
        println!(
            "{:>3} {:>10.3} {:>10.3} {:>8.3} {:>8.4} {:>8.4}   95% [{:.4}, {:.4}]",
            k + 1,
            a.spikes.lambda[k],
            a.spikes.xi_hat[k],
            a.spikes.d2_hat[k],
            a.profile.pi[k],
            truth[k],
            ci.components[k].lo,
            ci.components[k].hi,
        );
    }
    Ok(())
}

//! Two-sample alignability test on a null pair and a stretched pair.
//!
//! Usage: `cargo run --release --example alignability -- [c]`

use nmsd::align_test;
use nmsd::sim::{generate_dataset, population_distance, stretched_axes, SimConfig};

fn main() -> nmsd::Result<()> {
    let c: f64 = std::env::args()
        .nth(1)
        .map(|s| s.parse().expect("c must be a number"))
        .unwrap_or(1.3);
    let mut cfg = SimConfig::power_design();
    for (label, stretch) in [("null", 1.0), ("stretched", c)] {
        cfg.d2 = stretched_axes(&cfg.d1, stretch);
        let y1 = generate_dataset(&cfg, 1, 5)?;
        let y2 = generate_dataset(&cfg, 2, 5)?;
        let rep = align_test(&y1, &y2, &cfg.analysis_options())?;
        println!(
            "{label:>9} (c = {stretch}): T = {:.3} on {} df, p = {:.4}, reject = {}, nMSD = {:.4} (population {:.4})",
            rep.t_stat,
            rep.df,
            rep.p_value,
            rep.reject,
            rep.nmsd_hat,
            population_distance(&cfg.d1, &cfg.d2),
        );
        for w in &rep.warnings {
            println!("    warning: {w}");
        }
    }
    Ok(())
}

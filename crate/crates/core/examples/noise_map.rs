//! Recover the four-block noise map of one simulated dataset.
//!
//! Usage: `cargo run --release --example noise_map -- [N] [seed]`

use nmsd::noise::{estimate_noise_corrected, ResidualCorrection};
use nmsd::sim::{generate_dataset, noise_vector, SimConfig};

fn main() -> nmsd::Result<()> {
    let mut args = std::env::args().skip(1);
    let mut cfg = SimConfig::default();
    if let Some(n) = args.next() {
        cfg.n1 = n.parse().expect("N must be an integer");
    }
    let seed: u64 = args
        .next()
        .map(|s| s.parse().expect("seed must be an integer"))
        .unwrap_or(7);
    let y = generate_dataset(&cfg, 1, seed)?;
    let truth = noise_vector(cfg.p, &cfg.noise_levels_1);

    for corr in [ResidualCorrection::ProjectionLoss, ResidualCorrection::None] {
        let fit = estimate_noise_corrected(&y, cfg.r, cfg.penalty_c, corr)?;
        let mse = fit
            .sigma
            .iter()
            .zip(&truth)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            / cfg.p as f64;
        println!("{corr:?}: {} segments, mse {mse:.4}", fit.boundaries.len());
        for (start, end, level) in fit.segments() {
            println!(
                "  [{start:>3}, {end:>3})  {level:.3}  (true {:.1})",
                truth[start]
            );
        }
    }
    Ok(())
}

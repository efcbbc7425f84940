//! Intervals for the profile difference and the nMSD of a stretched pair.
//!
//! Usage: `cargo run --release --example confidence_intervals -- [c] [alpha]`

use nmsd::align_test;
use nmsd::sim::{
    generate_dataset, population_distance, population_profile, stretched_axes, SimConfig,
};

fn main() -> nmsd::Result<()> {
    let mut args = std::env::args().skip(1);
    let c: f64 = args
        .next()
        .map(|s| s.parse().expect("c must be a number"))
        .unwrap_or(1.3);
    let alpha: f64 = args
        .next()
        .map(|s| s.parse().expect("alpha must be a number"))
        .unwrap_or(0.05);
    let mut cfg = SimConfig::power_design();
    cfg.alpha = alpha;
    cfg.d2 = stretched_axes(&cfg.d1, c);
    let y1 = generate_dataset(&cfg, 1, 9)?;
    let y2 = generate_dataset(&cfg, 2, 9)?;
    let rep = align_test(&y1, &y2, &cfg.analysis_options())?;

    let p1 = population_profile(&cfg.d1);
    let p2 = population_profile(&cfg.d2);
    let ci = &rep.intervals;
    println!("z = {:.4}", ci.z);
    if let Some(delta) = &ci.delta {
        for (k, iv) in delta.iter().enumerate() {
            println!(
                "delta_pi[{k}] = {:+.4}  [{:+.4}, {:+.4}]  true {:+.4}",
                iv.estimate,
                iv.lo,
                iv.hi,
                p1[k] - p2[k]
            );
        }
    }
    match ci.nmsd {
        Some(iv) => println!(
            "nMSD = {:.4}  [{:.4}, {:.4}]  true {:.4}",
            iv.estimate,
            iv.lo,
            iv.hi,
            population_distance(&cfg.d1, &cfg.d2)
        ),
        None => println!("nMSD interval suppressed: estimate too close to zero"),
    }
    Ok(())
}

//! Empirical and theoretical power over a grid of stretch factors.
//!
//! Usage: `cargo run --release --example power_sweep -- [reps] [pilot_reps]`

use nmsd::sim::{run_power_sweep, SimConfig, DEFAULT_C_VALUES};

fn main() -> nmsd::Result<()> {
    let mut args = std::env::args().skip(1);
    let mut cfg = SimConfig::power_design();
    cfg.n_rep = 100;
    if let Some(reps) = args.next() {
        cfg.n_rep = reps.parse().expect("reps must be an integer");
    }
    if let Some(pilot) = args.next() {
        cfg.pilot_reps = pilot.parse().expect("pilot_reps must be an integer");
    }
    let rep = run_power_sweep(&cfg, &DEFAULT_C_VALUES)?;
    println!(
        "{:>5} {:>9} {:>9} {:>8} {:>8} {:>8}",
        "c", "distance", "lambda", "theory", "empir", "cover"
    );
    for row in &rep.rows {
        let f = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
        println!(
            "{:>5.2} {:>9.5} {:>9} {:>8} {:>8} {:>8}",
            row.c,
            row.population_distance,
            format!("{:.4}", row.lambda_nc),
            format!("{:.4}", row.theoretical_power),
            f(row.empirical_power),
            f(row.nmsd_coverage),
        );
    }
    Ok(())
}

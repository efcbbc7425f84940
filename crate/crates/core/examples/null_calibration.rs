//! Null calibration of the alignability test on the four-block simulation design.
//!
//! Usage: `cargo run --release --example null_calibration -- [reps] [N]`

use nmsd::sim::{run_null_calibration, SimConfig};

fn main() -> nmsd::error::Result<()> {
    let mut args = std::env::args().skip(1);
    let mut cfg = SimConfig::default();
    if let Some(reps) = args.next() {
        cfg.n_rep = reps.parse().expect("reps must be an integer");
    }
    if let Some(n) = args.next() {
        cfg.n1 = n.parse().expect("N must be an integer");
        cfg.n2 = cfg.n1;
    }
    let rep = run_null_calibration(&cfg)?;
    println!("replicates: {} ({} failed)", rep.n_rep, rep.n_failed);
    if let Some(size) = rep.size {
        println!("empirical size at alpha = {}: {size:.3}", rep.alpha);
    }
    println!("{:>6} {:>10} {:>10}", "q", "empirical", "chi2");
    for row in &rep.quantiles {
        println!(
            "{:>6.2} {:>10.3} {:>10.3}",
            row.q, row.empirical, row.theoretical
        );
    }
    if let (Some(d), Some(p)) = (rep.ks_statistic, rep.ks_p_value) {
        println!("KS D = {d:.4}, p = {p:.3}");
    }
    Ok(())
}

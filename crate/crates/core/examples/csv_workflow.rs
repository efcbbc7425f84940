//! Write two simulated datasets to CSV, read them back and test them.
//!
//! Usage: `cargo run --release --example csv_workflow -- [dir]`

use std::path::PathBuf;

use nmsd::io::{load_matrix, write_matrix};
use nmsd::sim::{generate_dataset, SimConfig};
use nmsd::{align_test, AnalysisOptions};

fn main() -> nmsd::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(std::env::temp_dir);
    std::fs::create_dir_all(&dir)?;
    let cfg = SimConfig::default();
    let (a, b) = (dir.join("dataset1.csv"), dir.join("dataset2.csv"));
    write_matrix(&a, generate_dataset(&cfg, 1, 3)?.values())?;
    write_matrix(&b, generate_dataset(&cfg, 2, 3)?.values())?;
    println!("wrote {} and {}", a.display(), b.display());

    let y1 = load_matrix(&a, false, false)?;
    let y2 = load_matrix(&b, false, false)?;
    let rep = align_test(&y1, &y2, &AnalysisOptions::new(cfg.r))?;
    println!(
        "T = {:.3}, p = {:.4}, nMSD = {:.4}",
        rep.t_stat, rep.p_value, rep.nmsd_hat
    );
    println!(
        "same test from the shell: nmsd test --rank {} {} {}",
        cfg.r,
        a.display(),
        b.display()
    );
    Ok(())
}

//! Kernel nMSD between two noiseless ellipsoid samples, linear and RBF.
//!
//! With a linear kernel the result matches the population distance as N grows.
//!
//! Usage: `cargo run --release --example kernel_distance -- [N] [bandwidth]`

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use nmsd::kernel::{center_gram, kernel_spectrum, linear_gram, rbf_gram};
use nmsd::seed::rng_from_seed;
use nmsd::sim::{population_distance, stretched_axes};
use nmsd::{kernel_nmsd, DataMatrix};

fn ellipsoid(d: &[f64], n: usize, seed: u64) -> DataMatrix {
    let mut rng = rng_from_seed(seed);
    let r = d.len();
    let mut x = DMatrix::zeros(r, n);
    for j in 0..n {
        let v: Vec<f64> = (0..r).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|t| t * t).sum::<f64>().sqrt();
        for k in 0..r {
            x[(k, j)] = d[k] * v[k] / norm;
        }
    }
    DataMatrix::new(x).expect("finite sample")
}

fn main() -> nmsd::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args
        .next()
        .map(|s| s.parse().expect("N must be an integer"))
        .unwrap_or(2000);
    let h: f64 = args
        .next()
        .map(|s| s.parse().expect("bandwidth must be a number"))
        .unwrap_or(8.0);
    let d1 = [7.0, 6.0, 5.0];
    let d2 = stretched_axes(&d1, 1.5);
    let x1 = ellipsoid(&d1, n, 1);
    let x2 = ellipsoid(&d2, n, 2);

    let lin = kernel_nmsd(&linear_gram(&x1), &linear_gram(&x2), 3)?;
    println!(
        "linear kernel nMSD = {lin:.5} (population {:.5})",
        population_distance(&d1, &d2)
    );

    let k1 = rbf_gram(&x1, h)?;
    let k2 = rbf_gram(&x2, h)?;
    println!(
        "rbf (h = {h}) kernel nMSD = {:.5}",
        kernel_nmsd(&k1, &k2, 3)?
    );
    let spec = kernel_spectrum(&center_gram(&k1), 3)?;
    println!(
        "rbf leading eigenvalues of dataset 1: {:?}",
        spec.eigenvalues
    );
    for w in spec.warnings {
        println!("warning: {w}");
    }
    Ok(())
}

//! Noise-aware spectral profiles for comparing the latent geometry of two
//! noisy high-dimensional datasets.
//!
//! Each dataset `Y = S + Σ^{1/2}X` (features × samples) is reduced to the
//! normalized top-r signal spectrum `Π̂`, after estimating a block-constant
//! diagonal noise map and removing the bias it induces in the sample spikes.
//! Two profiles are compared by their Euclidean distance (nMSD) and by a
//! chi-square alignability test built from plug-in covariances.
//!
//! ```no_run
//! use nmsd::{align_test, AnalysisOptions, DataMatrix};
//! # fn main() -> nmsd::Result<()> {
//! let y1: DataMatrix = nmsd::io::load_matrix("a.csv", false, false)?;
//! let y2: DataMatrix = nmsd::io::load_matrix("b.csv", false, false)?;
//! let report = align_test(&y1, &y2, &AnalysisOptions::new(3))?;
//! println!("T = {:.3}, p = {:.3}, nMSD = {:.4}", report.t_stat, report.p_value, report.nmsd_hat);
//! # Ok(())
//! # }
//! ```

pub mod alignability;
pub mod analysis;
pub mod cli;
pub mod error;
pub mod io;
pub mod kernel;
pub mod linalg;
pub mod noise;
pub mod report;
pub mod seed;
pub mod sim;
pub mod spikes;
pub mod uncertainty;

pub use alignability::{align_test, compare, AlignmentReport};
pub use analysis::{analyze_dataset, AnalysisOptions, DatasetAnalysis};
pub use error::{Error, Result};
pub use kernel::{kernel_nmsd, kernel_profile, GramMatrix};
pub use linalg::DataMatrix;
pub use noise::{estimate_noise, NoiseModel};
pub use spikes::{estimate_spikes, nmsd, SpectralProfile, SpikeSet};
pub use uncertainty::SignalPlugin;

//! Dense linear-algebra primitives: data matrices, sample covariance,
//! ordered symmetric eigendecomposition, truncated pseudoinverse and seeded
//! orthonormal frames.
//!
//! Everything here is a pure function of its inputs. Eigenvectors follow a
//! fixed sign convention (first coordinate with magnitude above `1e-12` is
//! positive) so that downstream results are reproducible bit for bit.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Relative rank tolerance used by [`pseudoinverse`] callers that have no better choice.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

const SYMMETRY_TOL: f64 = 1e-10;
const SIGN_EPS: f64 = 1e-12;

/// A `p × N` observation matrix: features are rows, samples are columns.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    values: DMatrix<f64>,
}

impl DataMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::invalid("data matrix must be non-empty"));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            let (i, j) = (pos % values.nrows(), pos / values.nrows());
            return Err(Error::invalid(format!(
                "non-finite entry at feature {i}, sample {j}"
            )));
        }
        Ok(Self { values })
    }

    /// Builds a matrix from feature rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let p = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::invalid("rows have unequal length"));
        }
        Self::new(DMatrix::from_fn(p, n, |i, j| rows[i][j]))
    }

    /// Number of features.
    pub fn p(&self) -> usize {
        self.values.nrows()
    }

    /// Number of samples.
    pub fn n(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.values
    }

    /// Copy with the mean sample (column) subtracted from every column.
    pub fn centered(&self) -> DataMatrix {
        let mut values = self.values.clone();
        let n = values.ncols() as f64;
        for mut row in values.row_iter_mut() {
            let mean = row.sum() / n;
            row.add_scalar_mut(-mean);
        }
        DataMatrix { values }
    }

    pub fn scaled(&self, c: f64) -> DataMatrix {
        DataMatrix {
            values: &self.values * c,
        }
    }

    pub fn transposed(&self) -> DataMatrix {
        DataMatrix {
            values: self.values.transpose(),
        }
    }
}

/// Eigenpairs of a symmetric matrix, eigenvalues sorted non-increasing.
#[derive(Debug, Clone)]
pub struct EigenSystem {
    pub eigenvalues: DVector<f64>,
    /// Column `j` pairs with `eigenvalues[j]`.
    pub eigenvectors: DMatrix<f64>,
}

impl EigenSystem {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// The leading `r` eigenvectors as a `p × r` matrix.
    pub fn top_vectors(&self, r: usize) -> DMatrix<f64> {
        self.eigenvectors.columns(0, r).into_owned()
    }

    pub fn top_values(&self, r: usize) -> Vec<f64> {
        self.eigenvalues.iter().take(r).copied().collect()
    }
}

/// `YYᵀ/N`, or with the mean column removed first when `center` is set.
pub fn sample_covariance(y: &DataMatrix, center: bool) -> Result<DMatrix<f64>> {
    let n = y.n();
    if center && n < 2 {
        return Err(Error::invalid(
            "centered covariance needs at least two samples",
        ));
    }
    let centered;
    let data = if center {
        centered = y.centered();
        centered.values()
    } else {
        y.values()
    };
    let mut q = data * data.transpose();
    q /= n as f64;
    symmetrize(&mut q);
    Ok(q)
}

/// Full symmetric eigendecomposition, sorted non-increasing with the sign convention applied.
///
/// Ties keep the order produced by the underlying solver.
pub fn sym_eig(q: &DMatrix<f64>) -> Result<EigenSystem> {
    if !q.is_square() || q.nrows() == 0 {
        return Err(Error::invalid(format!(
            "expected a non-empty square matrix, got {}x{}",
            q.nrows(),
            q.ncols()
        )));
    }
    check_symmetric(q)?;
    let p = q.nrows();
    let eig = SymmetricEigen::try_new(q.clone(), f64::EPSILON, 0)
        .ok_or_else(|| Error::NumericalFailure("symmetric eigensolver did not converge".into()))?;
    if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalFailure("non-finite eigenvalue".into()));
    }

    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let eigenvalues = DVector::from_iterator(p, order.iter().map(|&k| eig.eigenvalues[k]));
    let mut eigenvectors = DMatrix::zeros(p, p);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(src).into_owned();
        if let Some(first) = col.iter().find(|v| v.abs() > SIGN_EPS) {
            if *first < 0.0 {
                col.neg_mut();
            }
        }
        eigenvectors.set_column(dst, &col);
    }
    Ok(EigenSystem {
        eigenvalues,
        eigenvectors,
    })
}

/// Moore–Penrose inverse of a symmetric PSD matrix.
///
/// Eigenvalues at or below `rank_tol × λ_max` are treated as zero. The zero
/// matrix maps to the zero matrix.
pub fn pseudoinverse(a: &DMatrix<f64>, rank_tol: f64) -> Result<DMatrix<f64>> {
    if !(rank_tol > 0.0) {
        return Err(Error::invalid("rank_tol must be positive"));
    }
    let eig = sym_eig(a)?;
    let p = a.nrows();
    let lambda_max = eig.eigenvalues[0];
    let mut out = DMatrix::zeros(p, p);
    if !(lambda_max > 0.0) {
        return Ok(out);
    }
    let cutoff = rank_tol * lambda_max;
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam > cutoff {
            let v = eig.eigenvectors.column(k);
            out += (v * v.transpose()) / lam;
        }
    }
    symmetrize(&mut out);
    Ok(out)
}

/// Number of eigenvalues above `rank_tol × λ_max`.
pub fn numerical_rank(a: &DMatrix<f64>, rank_tol: f64) -> Result<usize> {
    let eig = sym_eig(a)?;
    let lambda_max = eig.eigenvalues[0];
    if !(lambda_max > 0.0) {
        return Ok(0);
    }
    Ok(eig
        .eigenvalues
        .iter()
        .filter(|&&v| v > rank_tol * lambda_max)
        .count())
}

/// A `p × r` matrix with orthonormal columns drawn from the Haar measure.
///
/// QR of a standard Gaussian matrix with the signs of `R`'s diagonal folded
/// into `Q`. The same seed always yields the same matrix.
pub fn random_orthonormal(p: usize, r: usize, seed: u64) -> Result<DMatrix<f64>> {
    if r == 0 || r > p {
        return Err(Error::invalid(format!(
            "need 1 <= r <= p, got r = {r}, p = {p}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = DMatrix::from_fn(p, r, |_, _| StandardNormal.sample(&mut rng));
    let qr = g.qr();
    let mut q = qr.q();
    let rmat = qr.r();
    for j in 0..r {
        if rmat[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    Ok(q)
}

/// `√N · max_j |v_j|` for each of the top `r` right singular vectors of `Y`.
///
/// Bounded by a multiple of `√log N` when the right singular vectors are
/// delocalized. Diagnostic only.
pub fn right_singular_delocalization(y: &DataMatrix, r: usize) -> Result<Vec<f64>> {
    if r == 0 || r > y.p() {
        return Err(Error::invalid("need 1 <= r <= p"));
    }
    let q = sample_covariance(y, false)?;
    let eig = sym_eig(&q)?;
    let n = y.n() as f64;
    (0..r)
        .map(|k| {
            let lam = eig.eigenvalues[k];
            if !(lam > 0.0) {
                return Err(Error::NumericalFailure(format!(
                    "singular value {k} is zero"
                )));
            }
            let v = y.values().transpose() * eig.eigenvectors.column(k) / (n * lam).sqrt();
            Ok(v.amax() * n.sqrt())
        })
        .collect()
}

pub(crate) fn check_symmetric(q: &DMatrix<f64>) -> Result<()> {
    let scale = q.amax().max(1.0);
    let p = q.nrows();
    for i in 0..p {
        for j in (i + 1)..p {
            if (q[(i, j)] - q[(j, i)]).abs() > SYMMETRY_TOL * scale {
                return Err(Error::invalid(format!(
                    "matrix is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    Ok(())
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let p = m.nrows();
    for i in 0..p {
        for j in (i + 1)..p {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

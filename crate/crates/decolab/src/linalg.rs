//! Small dense complex linear algebra shared by every engine module.
//!
//! Everything here targets desk-scale matrices (dim <= ~64): Hermitian
//! eigendecomposition is the workhorse, and matrix exponentials of Hermitian
//! generators are built from it exactly rather than by series methods.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;

/// Dense complex matrix.
pub type CMatrix = DMatrix<C64>;
/// Dense real matrix.
pub type RMatrix = DMatrix<f64>;

/// Commutator [a, b] = ab - ba.
pub fn commutator(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a * b - b * a
}

/// Projection onto the Hermitian part, (m + m^dagger)/2.
pub fn hermitize(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()) * C64::new(0.5, 0.0)
}

/// Entrywise max-norm max |m_ij|.
pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Entrywise max-norm for real matrices.
pub fn max_abs_real(m: &RMatrix) -> f64 {
    m.iter().map(|x| x.abs()).fold(0.0, f64::max)
}

/// Hermiticity residual ||m - m^dagger||_max.
pub fn herm_residual(m: &CMatrix) -> f64 {
    max_abs(&(m - m.adjoint()))
}

/// Trace of a complex matrix.
pub fn trace(m: &CMatrix) -> C64 {
    let mut t = C64::new(0.0, 0.0);
    for i in 0..m.nrows().min(m.ncols()) {
        t += m[(i, i)];
    }
    t
}

/// Eigendecomposition of a Hermitian matrix: real eigenvalues (ascending)
/// and a unitary matrix of column eigenvectors.
pub struct HermEig {
    pub values: DVector<f64>,
    pub vectors: CMatrix,
}

/// Eigendecomposition of a Hermitian matrix. The input is symmetrized first
/// so that roundoff-level anti-Hermitian parts cannot poison the solver;
/// callers that need a strict Hermiticity guarantee validate beforehand.
pub fn eigh(m: &CMatrix) -> HermEig {
    let se = hermitize(m).symmetric_eigen();
    // nalgebra returns eigenvalues in unspecified order; sort ascending with
    // the matching eigenvector permutation for reproducible downstream use.
    let n = se.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| se.eigenvalues[i].total_cmp(&se.eigenvalues[j]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| se.eigenvalues[i]));
    let mut vectors = CMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &se.eigenvectors.column(src));
    }
    HermEig { values, vectors }
}

/// Smallest eigenvalue of a Hermitian matrix.
pub fn min_eigenvalue(m: &CMatrix) -> f64 {
    let eig = eigh(m);
    eig.values[0]
}

/// Spectral norm of a Hermitian matrix (largest |eigenvalue|).
pub fn spectral_norm_hermitian(m: &CMatrix) -> f64 {
    let eig = eigh(m);
    eig.values
        .iter()
        .map(|l| l.abs())
        .fold(0.0, f64::max)
}

/// exp(-i * theta * H) for Hermitian H, built exactly from its
/// eigendecomposition: V diag(e^{-i theta lambda}) V^dagger.
pub fn unitary_of_hermitian(h: &CMatrix, theta: f64) -> CMatrix {
    let eig = eigh(h);
    unitary_from_eig(&eig, theta)
}

/// Same as [`unitary_of_hermitian`] but reusing a precomputed decomposition.
pub fn unitary_from_eig(eig: &HermEig, theta: f64) -> CMatrix {
    let n = eig.values.len();
    let mut phased = CMatrix::zeros(n, n);
    for k in 0..n {
        let ph = C64::from_polar(1.0, -theta * eig.values[k]);
        let col = eig.vectors.column(k) * ph;
        phased.set_column(k, &col);
    }
    &phased * eig.vectors.adjoint()
}

/// Real symmetric eigenvalues (ascending) — used for kernel PSD checks.
pub fn eigvals_symmetric(m: &RMatrix) -> DVector<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let mut vals: Vec<f64> = sym.symmetric_eigen().eigenvalues.iter().copied().collect();
    vals.sort_by(f64::total_cmp);
    DVector::from_vec(vals)
}

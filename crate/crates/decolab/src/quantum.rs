//! Quantum state and Hamiltonian value types plus exact unitary evolution.
//!
//! A [`DensityMatrix`] is validated at construction (Hermitian, unit trace,
//! positive semidefinite within fixed tolerances); once built it is immutable,
//! so any function receiving one may rely on those invariants. Hamiltonians
//! come in a dense Hermitian and a diagonal flavor; evolution uses exact
//! eigendecomposition (dense) or direct phase multiplication (diagonal).

use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix};
use crate::units::UnitsContext;
use num_complex::Complex64 as C64;

/// Construction tolerance on ||rho - rho^dagger||_max.
pub const HERMITICITY_TOL: f64 = 1e-12;
/// Construction tolerance on |Tr rho - 1|.
pub const TRACE_TOL: f64 = 1e-12;
/// Construction tolerance on the smallest eigenvalue of rho.
pub const POSITIVITY_TOL: f64 = 1e-10;
/// Relaxed positivity tolerance for states produced by numerical integration.
pub const POSITIVITY_TOL_INTEGRATED: f64 = 1e-8;

/// A state invariant that can be violated, paired with its residual.
#[derive(Debug, Clone, PartialEq)]
pub struct StateViolation {
    pub invariant: StateInvariant,
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateInvariant {
    Hermiticity,
    UnitTrace,
    Positivity,
}

impl std::fmt::Display for StateInvariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StateInvariant::Hermiticity => write!(f, "hermiticity"),
            StateInvariant::UnitTrace => write!(f, "unit-trace"),
            StateInvariant::Positivity => write!(f, "positivity"),
        }
    }
}

/// Checks a raw matrix against the density-matrix invariants and returns one
/// entry per violated invariant (empty means valid). `positivity_tol` lets
/// integrated states use the relaxed bound.
pub fn validate_state_with(m: &CMatrix, positivity_tol: f64) -> Vec<StateViolation> {
    let mut violations = Vec::new();
    let herm = linalg::herm_residual(m);
    if herm > HERMITICITY_TOL {
        violations.push(StateViolation {
            invariant: StateInvariant::Hermiticity,
            residual: herm,
        });
    }
    let tr = linalg::trace(m);
    let tr_res = (tr.re - 1.0).hypot(tr.im);
    if tr_res > TRACE_TOL {
        violations.push(StateViolation {
            invariant: StateInvariant::UnitTrace,
            residual: tr_res,
        });
    }
    let min_eig = linalg::min_eigenvalue(m);
    if min_eig < -positivity_tol {
        violations.push(StateViolation {
            invariant: StateInvariant::Positivity,
            residual: -min_eig,
        });
    }
    violations
}

/// [`validate_state_with`] at the strict construction tolerance.
pub fn validate_state(m: &CMatrix) -> Vec<StateViolation> {
    validate_state_with(m, POSITIVITY_TOL)
}

/// Complex Hermitian unit-trace positive matrix: the evolved state.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    dim: usize,
    m: CMatrix,
}

impl DensityMatrix {
    /// Validates and wraps a raw matrix (strict tolerances).
    pub fn new(m: CMatrix) -> Result<Self> {
        Self::with_positivity_tol(m, POSITIVITY_TOL)
    }

    /// Validates with the relaxed positivity bound used for states coming out
    /// of a numerical integrator.
    pub fn from_integration(m: CMatrix) -> Result<Self> {
        Self::with_positivity_tol(m, POSITIVITY_TOL_INTEGRATED)
    }

    fn with_positivity_tol(m: CMatrix, pos_tol: f64) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                actual: m.ncols(),
            });
        }
        if let Some(v) = validate_state_with(&m, pos_tol).into_iter().next() {
            let (what, tol) = match v.invariant {
                StateInvariant::Hermiticity => ("hermiticity", HERMITICITY_TOL),
                StateInvariant::UnitTrace => ("unit trace", TRACE_TOL),
                StateInvariant::Positivity => ("positivity", pos_tol),
            };
            return Err(Error::InvalidState {
                what,
                residual: v.residual,
                tol,
            });
        }
        Ok(DensityMatrix { dim: m.nrows(), m })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.m
    }

    pub fn into_matrix(self) -> CMatrix {
        self.m
    }

    pub fn entry(&self, i: usize, j: usize) -> C64 {
        self.m[(i, j)]
    }

    /// Populations, i.e. the real diagonal.
    pub fn populations(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.m[(i, i)].re).collect()
    }

    /// Eigenvalues of the state, ascending.
    pub fn eigenvalues(&self) -> Vec<f64> {
        linalg::eigh(&self.m).values.iter().copied().collect()
    }

    /// Maximally mixed state of the given dimension.
    pub fn maximally_mixed(dim: usize) -> Self {
        let mut m = CMatrix::zeros(dim, dim);
        for i in 0..dim {
            m[(i, i)] = C64::new(1.0 / dim as f64, 0.0);
        }
        DensityMatrix { dim, m }
    }
}

/// Hamiltonian: dense Hermitian matrix or list of eigenvalues, both in joules.
#[derive(Debug, Clone, PartialEq)]
pub enum HamiltonianSpec {
    Dense(CMatrix),
    Diagonal(Vec<f64>),
}

impl HamiltonianSpec {
    /// Validates shape and Hermiticity (dense variant only).
    pub fn validate(&self) -> Result<()> {
        match self {
            HamiltonianSpec::Dense(m) => {
                if m.nrows() != m.ncols() {
                    return Err(Error::DimensionMismatch {
                        expected: m.nrows(),
                        actual: m.ncols(),
                    });
                }
                let res = linalg::herm_residual(m);
                let scale = linalg::max_abs(m).max(1.0);
                if res > HERMITICITY_TOL * scale {
                    return Err(Error::NotHermitian {
                        residual: res,
                        tol: HERMITICITY_TOL * scale,
                    });
                }
                Ok(())
            }
            HamiltonianSpec::Diagonal(es) => {
                if es.iter().any(|e| !e.is_finite()) {
                    return Err(Error::InvalidParameter {
                        name: "energies",
                        reason: "all eigenvalues must be finite".into(),
                    });
                }
                Ok(())
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            HamiltonianSpec::Dense(m) => m.nrows(),
            HamiltonianSpec::Diagonal(es) => es.len(),
        }
    }

    /// Dense matrix form (copies the diagonal variant into a matrix).
    pub fn to_dense(&self) -> CMatrix {
        match self {
            HamiltonianSpec::Dense(m) => m.clone(),
            HamiltonianSpec::Diagonal(es) => {
                let mut m = CMatrix::zeros(es.len(), es.len());
                for (i, e) in es.iter().enumerate() {
                    m[(i, i)] = C64::new(*e, 0.0);
                }
                m
            }
        }
    }

    /// Spectral norm max |E_n| (J).
    pub fn spectral_norm(&self) -> f64 {
        match self {
            HamiltonianSpec::Dense(m) => linalg::spectral_norm_hermitian(m),
            HamiltonianSpec::Diagonal(es) => es.iter().map(|e| e.abs()).fold(0.0, f64::max),
        }
    }
}

/// Superposition of energy eigenstates: amplitudes c_n and energies E_n (J).
#[derive(Debug, Clone, PartialEq)]
pub struct SuperpositionSpec {
    pub amplitudes: Vec<C64>,
    pub energies: Vec<f64>,
}

impl SuperpositionSpec {
    /// Two-level helper.
    pub fn two_level(c1: C64, c2: C64, e1: f64, e2: f64) -> Self {
        SuperpositionSpec {
            amplitudes: vec![c1, c2],
            energies: vec![e1, e2],
        }
    }

    /// Balanced two-level superposition with energy gap `delta_e` (J),
    /// split symmetrically around zero.
    pub fn balanced(delta_e: f64) -> Self {
        let a = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        Self::two_level(a, a, 0.5 * delta_e, -0.5 * delta_e)
    }

    pub fn validate(&self) -> Result<()> {
        if self.amplitudes.len() != self.energies.len() {
            return Err(Error::DimensionMismatch {
                expected: self.amplitudes.len(),
                actual: self.energies.len(),
            });
        }
        if self.amplitudes.is_empty() {
            return Err(Error::InvalidParameter {
                name: "amplitudes",
                reason: "at least one amplitude required".into(),
            });
        }
        if self.energies.iter().any(|e| !e.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "energies",
                reason: "all energies must be finite".into(),
            });
        }
        let norm2: f64 = self.amplitudes.iter().map(|c| c.norm_sqr()).sum();
        if (norm2 - 1.0).abs() > 1e-12 {
            return Err(Error::NotNormalized {
                residual: (norm2 - 1.0).abs(),
            });
        }
        Ok(())
    }

    /// |E_1 - E_2| for a two-level spec.
    pub fn gap(&self) -> Option<f64> {
        (self.energies.len() == 2).then(|| (self.energies[0] - self.energies[1]).abs())
    }
}

/// Builds rho = |psi><psi| in the energy eigenbasis together with the
/// diagonal Hamiltonian. The returned state is rank-1 by construction.
pub fn make_superposition(spec: &SuperpositionSpec) -> Result<(DensityMatrix, HamiltonianSpec)> {
    spec.validate()?;
    let n = spec.amplitudes.len();
    let mut m = CMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] = spec.amplitudes[i] * spec.amplitudes[j].conj();
        }
    }
    let rho = DensityMatrix::new(m)?;
    let h = HamiltonianSpec::Diagonal(spec.energies.clone());
    Ok((rho, h))
}

/// rho(t) = e^{-iHt/hbar} rho e^{+iHt/hbar}. Exact (eigendecomposition or
/// diagonal phases); preserves trace, hermiticity and spectrum.
pub fn unitary_evolve(
    rho: &DensityMatrix,
    h: &HamiltonianSpec,
    t: f64,
    units: &UnitsContext,
) -> Result<DensityMatrix> {
    if t < 0.0 || !t.is_finite() {
        return Err(Error::InvalidParameter {
            name: "t",
            reason: format!("evolution time must be finite and >= 0, got {t}"),
        });
    }
    let m = evolve_raw(rho.matrix(), h, t / units.hbar)?;
    DensityMatrix::new(m)
}

/// Internal evolution by angle theta = t/hbar (any sign): conjugation by
/// exp(-i theta H). Sampling code uses this directly because noise pictures
/// legitimately produce negative total times.
pub(crate) fn evolve_raw(rho: &CMatrix, h: &HamiltonianSpec, theta: f64) -> Result<CMatrix> {
    h.validate()?;
    if h.dim() != rho.nrows() {
        return Err(Error::DimensionMismatch {
            expected: rho.nrows(),
            actual: h.dim(),
        });
    }
    match h {
        HamiltonianSpec::Diagonal(es) => Ok(phase_conjugate_diagonal(rho, es, theta)),
        HamiltonianSpec::Dense(hm) => {
            let u = linalg::unitary_of_hermitian(hm, theta);
            Ok(&u * rho * u.adjoint())
        }
    }
}

/// Conjugation by exp(-i theta diag(es)): entry (i,j) picks up the phase
/// e^{-i theta (E_i - E_j)}.
pub(crate) fn phase_conjugate_diagonal(rho: &CMatrix, es: &[f64], theta: f64) -> CMatrix {
    let n = es.len();
    let mut out = CMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let ph = C64::from_polar(1.0, -theta * (es[i] - es[j]));
            out[(i, j)] = rho[(i, j)] * ph;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn units() -> UnitsContext {
        UnitsContext::default()
    }

    #[test]
    fn pure_eigenstate_has_trivial_density_matrix() {
        let spec = SuperpositionSpec::two_level(
            C64::new(1.0, 0.0),
            C64::new(0.0, 0.0),
            1.0e-19,
            -1.0e-19,
        );
        let (rho, h) = make_superposition(&spec).unwrap();
        assert_eq!(rho.entry(0, 0), C64::new(1.0, 0.0));
        assert_eq!(rho.entry(1, 1), C64::new(0.0, 0.0));
        assert_eq!(rho.entry(0, 1), C64::new(0.0, 0.0));
        assert_eq!(h.dim(), 2);
    }

    #[test]
    fn balanced_superposition_has_quarter_entries() {
        let (rho, _) = make_superposition(&SuperpositionSpec::balanced(1.0e-19)).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_relative_eq!(rho.entry(i, j).re, 0.5, epsilon = 1e-15);
                assert_relative_eq!(rho.entry(i, j).im, 0.0, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn complex_amplitudes_give_the_expected_coherence() {
        // c = (0.6, 0.8i): rho_01 = 0.6 * conj(0.8i) = -0.48i.
        let spec = SuperpositionSpec::two_level(
            C64::new(0.6, 0.0),
            C64::new(0.0, 0.8),
            1.0e-19,
            0.0,
        );
        let (rho, _) = make_superposition(&spec).unwrap();
        assert_relative_eq!(rho.entry(0, 1).re, 0.0, epsilon = 1e-15);
        assert_relative_eq!(rho.entry(0, 1).im, -0.48, epsilon = 1e-15);
    }

    #[test]
    fn make_superposition_rejects_unnormalized_amplitudes() {
        let spec = SuperpositionSpec::two_level(C64::new(1.0, 0.0), C64::new(0.5, 0.0), 0.0, 1.0);
        match make_superposition(&spec) {
            Err(Error::NotNormalized { .. }) => {}
            other => panic!("expected normalization error, got {other:?}"),
        }
    }

    #[test]
    fn make_superposition_output_is_rank_one_and_valid() {
        let spec = SuperpositionSpec::two_level(
            C64::new(0.6, 0.0),
            C64::new(0.0, 0.8),
            2.0e-19,
            -1.0e-19,
        );
        let (rho, _) = make_superposition(&spec).unwrap();
        assert!(validate_state(rho.matrix()).is_empty());
        let eigs = rho.eigenvalues();
        assert!(eigs[0].abs() < 1e-14, "rank-1 state has a zero eigenvalue");
        assert_relative_eq!(eigs[1], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn evolve_at_zero_time_is_identity() {
        let (rho, h) = make_superposition(&SuperpositionSpec::balanced(1.0e-19)).unwrap();
        let rho_t = unitary_evolve(&rho, &h, 0.0, &units()).unwrap();
        assert_eq!(rho_t.matrix(), rho.matrix());
    }

    #[test]
    fn diagonal_state_is_stationary() {
        let rho = DensityMatrix::new(CMatrix::from_row_slice(
            2,
            2,
            &[
                C64::new(0.7, 0.0),
                C64::new(0.0, 0.0),
                C64::new(0.0, 0.0),
                C64::new(0.3, 0.0),
            ],
        ))
        .unwrap();
        let h = HamiltonianSpec::Diagonal(vec![1.0e-19, -1.0e-19]);
        let rho_t = unitary_evolve(&rho, &h, 12.3, &units()).unwrap();
        assert!(linalg::max_abs(&(rho_t.matrix() - rho.matrix())) < 1e-15);
    }

    #[test]
    fn two_level_coherence_acquires_the_right_phase() {
        let u = units();
        let delta_e = 1.0e-19;
        let (rho, h) = make_superposition(&SuperpositionSpec::balanced(delta_e)).unwrap();
        let t = 0.4 * u.hbar / delta_e * 10.0;
        let rho_t = unitary_evolve(&rho, &h, t, &u).unwrap();
        let expect = C64::new(0.5, 0.0) * C64::from_polar(1.0, -delta_e * t / u.hbar);
        assert_relative_eq!(rho_t.entry(0, 1).re, expect.re, epsilon = 1e-12);
        assert_relative_eq!(rho_t.entry(0, 1).im, expect.im, epsilon = 1e-12);
        assert_relative_eq!(rho_t.entry(0, 1).norm(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn dense_and_diagonal_evolution_agree() {
        let u = units();
        let (rho, h_diag) = make_superposition(&SuperpositionSpec::balanced(2.0e-19)).unwrap();
        let h_dense = HamiltonianSpec::Dense(h_diag.to_dense());
        let t = 3.0 * u.hbar / 2.0e-19;
        let a = unitary_evolve(&rho, &h_diag, t, &u).unwrap();
        let b = unitary_evolve(&rho, &h_dense, t, &u).unwrap();
        assert!(linalg::max_abs(&(a.matrix() - b.matrix())) < 1e-12);
    }

    #[test]
    fn validate_state_reports_named_violations() {
        // Trace 1.5.
        let m = CMatrix::from_row_slice(
            2,
            2,
            &[
                C64::new(1.0, 0.0),
                C64::new(0.0, 0.0),
                C64::new(0.0, 0.0),
                C64::new(0.5, 0.0),
            ],
        );
        let v = validate_state(&m);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].invariant, StateInvariant::UnitTrace);
        assert_relative_eq!(v[0].residual, 0.5, epsilon = 1e-15);

        // diag(1.1, -0.1): positivity violation with residual 0.1.
        let m = CMatrix::from_row_slice(
            2,
            2,
            &[
                C64::new(1.1, 0.0),
                C64::new(0.0, 0.0),
                C64::new(0.0, 0.0),
                C64::new(-0.1, 0.0),
            ],
        );
        let v = validate_state(&m);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].invariant, StateInvariant::Positivity);
        assert_relative_eq!(v[0].residual, 0.1, epsilon = 1e-12);

        // Valid state: empty list.
        let (rho, _) = make_superposition(&SuperpositionSpec::balanced(1.0)).unwrap();
        assert!(validate_state(rho.matrix()).is_empty());
    }

    #[test]
    fn evolution_composes_as_a_semigroup() {
        let u = units();
        let delta_e = 1.0e-19;
        let mut hm = CMatrix::zeros(2, 2);
        hm[(0, 0)] = C64::new(0.5 * delta_e, 0.0);
        hm[(1, 1)] = C64::new(-0.5 * delta_e, 0.0);
        hm[(0, 1)] = C64::new(0.2 * delta_e, 0.1 * delta_e);
        hm[(1, 0)] = hm[(0, 1)].conj();
        let h = HamiltonianSpec::Dense(hm);
        let (rho, _) = make_superposition(&SuperpositionSpec::balanced(delta_e)).unwrap();
        let t1 = 0.7 * u.hbar / delta_e;
        let t2 = 1.9 * u.hbar / delta_e;
        let once = unitary_evolve(&rho, &h, t1 + t2, &u).unwrap();
        let twice =
            unitary_evolve(&unitary_evolve(&rho, &h, t1, &u).unwrap(), &h, t2, &u).unwrap();
        assert!(linalg::max_abs(&(once.matrix() - twice.matrix())) < 1e-10);
    }

    #[test]
    fn eigenvalues_survive_a_thousand_periods() {
        let u = units();
        let delta_e = 1.0e-19;
        let spec = SuperpositionSpec::two_level(
            C64::new(0.6, 0.0),
            C64::new(0.0, 0.8),
            0.5 * delta_e,
            -0.5 * delta_e,
        );
        let (rho, h) = make_superposition(&spec).unwrap();
        let period = 2.0 * std::f64::consts::PI * u.hbar / delta_e;
        let mut state = rho.clone();
        for _ in 0..10 {
            state = unitary_evolve(&state, &h, 100.0 * period, &u).unwrap();
        }
        let before = rho.eigenvalues();
        let after = state.eigenvalues();
        for (a, b) in before.iter().zip(after.iter()) {
            assert!((a - b).abs() < 1e-12, "eigenvalue drift {}", (a - b).abs());
        }
    }

    #[test]
    fn rejects_dimension_mismatch() {
        let (rho, _) = make_superposition(&SuperpositionSpec::balanced(1.0)).unwrap();
        let h = HamiltonianSpec::Diagonal(vec![0.0, 1.0, 2.0]);
        assert!(matches!(
            unitary_evolve(&rho, &h, 1.0, &units()),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn rejects_negative_time() {
        let (rho, h) = make_superposition(&SuperpositionSpec::balanced(1.0)).unwrap();
        assert!(unitary_evolve(&rho, &h, -1.0, &units()).is_err());
    }
}

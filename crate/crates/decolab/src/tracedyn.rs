//! Classical Hamiltonian dynamics of non-commuting matrix variables
//! generated by a trace Lagrangian, and the conserved anti-Hermitian charge
//! that survives it.
//!
//! The concrete model is an open chain of Hermitian n x n matrices `q_r`
//! with trace Lagrangian
//!
//! `L = Tr sum_r ( q_dot_r^2 / 2 - omega2 q_r^2 / 2 - lambda q_r^4 - kappa q_r q_{r+1} )`
//!
//! whose equations of motion follow from cyclic trace differentiation:
//! `p_r = q_dot_r`, `p_dot_r = -omega2 q_r - 4 lambda q_r^3 - kappa (q_{r-1} + q_{r+1})`.
//! Because every coefficient is a scalar, the dynamics is invariant under a
//! global unitary conjugation of all sites, and the total commutator charge
//!
//! `C = sum_r [q_r, p_r]`
//!
//! is a constant of motion. That conservation is structural, not numerical
//! luck, and the module ships a deliberate counterexample: an optional
//! Hermitian matrix coefficient in the harmonic term breaks the unitary
//! symmetry and with it the conservation law, which the tests measure.
//!
//! The dynamics is dimensionless (unit mass); nothing here touches SI
//! scales. Whether each individual site commutator `[q_r, p_r]` is
//! separately conserved for special models is an open question, so
//! [`c_tilde_per_site`] reports per-site values without asserting any bound.

use crate::error::{Error, Result};
use crate::linalg::{herm_residual, max_abs, unitary_of_hermitian, CMatrix};
use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Hermiticity slack accepted on state matrices, relative to their scale.
pub const STATE_HERMITICITY_TOL: f64 = 1e-12;

/// Matrix anharmonic chain: dimension, sites, and the three scalar
/// coefficients. `matrix_coeff`, when present, replaces the scalar harmonic
/// coefficient structure by `Tr(A q^2) omega2 / 2` with a fixed Hermitian
/// `A` — the negative control that voids the conservation theorem's
/// scalar-coefficient hypothesis.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceModelSpec {
    pub n: usize,
    pub r_cells: usize,
    /// Harmonic coefficient (a squared frequency; the dynamics is
    /// dimensionless).
    pub omega2: f64,
    /// Quartic coefficient.
    pub lambda: f64,
    /// Nearest-neighbor bilinear coupling (any sign).
    pub kappa: f64,
    /// Optional Hermitian matrix coefficient for the harmonic term.
    pub matrix_coeff: Option<CMatrix>,
}

impl TraceModelSpec {
    /// Chain with the default anharmonic parameters
    /// `omega2 = 1, lambda = 0.05, kappa = 0.1`.
    pub fn new(n: usize, r_cells: usize) -> Self {
        TraceModelSpec {
            n,
            r_cells,
            omega2: 1.0,
            lambda: 0.05,
            kappa: 0.1,
            matrix_coeff: None,
        }
    }

    pub fn with_matrix_coeff(mut self, coeff: CMatrix) -> Self {
        self.matrix_coeff = Some(coeff);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidParameter {
                name: "n",
                reason: format!("matrix dimension must be >= 2, got {}", self.n),
            });
        }
        if self.r_cells < 1 {
            return Err(Error::InvalidParameter {
                name: "r_cells",
                reason: "need at least one site".into(),
            });
        }
        if !(self.omega2.is_finite() && self.omega2 >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "omega2",
                reason: format!("must be finite and >= 0, got {}", self.omega2),
            });
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "lambda",
                reason: format!("must be finite and >= 0, got {}", self.lambda),
            });
        }
        if !self.kappa.is_finite() {
            return Err(Error::InvalidParameter {
                name: "kappa",
                reason: "must be finite".into(),
            });
        }
        if let Some(a) = &self.matrix_coeff {
            if a.nrows() != self.n || a.ncols() != self.n {
                return Err(Error::DimensionMismatch {
                    expected: self.n,
                    actual: a.nrows(),
                });
            }
            let res = herm_residual(a);
            let tol = STATE_HERMITICITY_TOL * (1.0 + max_abs(a));
            if res > tol {
                return Err(Error::NotHermitian { residual: res, tol });
            }
        }
        Ok(())
    }
}

/// Phase-space point of the chain: positions, momenta, elapsed time.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceState {
    pub q: Vec<CMatrix>,
    pub p: Vec<CMatrix>,
    pub t: f64,
}

impl TraceState {
    /// All-zero state at t = 0.
    pub fn zero(spec: &TraceModelSpec) -> Result<Self> {
        spec.validate()?;
        let z = CMatrix::zeros(spec.n, spec.n);
        Ok(TraceState {
            q: vec![z.clone(); spec.r_cells],
            p: vec![z; spec.r_cells],
            t: 0.0,
        })
    }

    pub fn validate(&self, spec: &TraceModelSpec) -> Result<()> {
        spec.validate()?;
        if self.q.len() != spec.r_cells || self.p.len() != spec.r_cells {
            return Err(Error::DimensionMismatch {
                expected: spec.r_cells,
                actual: self.q.len().min(self.p.len()),
            });
        }
        if !self.t.is_finite() {
            return Err(Error::InvalidParameter {
                name: "t",
                reason: "state time must be finite".into(),
            });
        }
        for m in self.q.iter().chain(self.p.iter()) {
            if m.nrows() != spec.n || m.ncols() != spec.n {
                return Err(Error::DimensionMismatch {
                    expected: spec.n,
                    actual: m.nrows(),
                });
            }
            let res = herm_residual(m);
            let tol = STATE_HERMITICITY_TOL * (1.0 + max_abs(m));
            if res > tol {
                return Err(Error::NotHermitian { residual: res, tol });
            }
        }
        Ok(())
    }

    /// Conjugates every site by the same unitary, `q_r -> U q_r U^dag`.
    pub fn conjugated(&self, u: &CMatrix) -> Self {
        let conj = |m: &CMatrix| {
            let mut out = u * m * u.adjoint();
            hermitize_in_place(&mut out);
            out
        };
        TraceState {
            q: self.q.iter().map(conj).collect(),
            p: self.p.iter().map(conj).collect(),
            t: self.t,
        }
    }
}

/// Random Hermitian matrices of the given scale on every site,
/// reproducible from the seed.
pub fn random_state(spec: &TraceModelSpec, seed: u64, scale: f64) -> Result<TraceState> {
    spec.validate()?;
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::InvalidParameter {
            name: "scale",
            reason: format!("must be finite and > 0, got {scale}"),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        z * scale
    };
    let random_hermitian = |rng: &mut ChaCha8Rng| -> CMatrix {
        let n = spec.n;
        let mut m = CMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = C64::new(draw(rng), 0.0);
            for j in (i + 1)..n {
                let re = draw(rng) / std::f64::consts::SQRT_2;
                let im = draw(rng) / std::f64::consts::SQRT_2;
                m[(i, j)] = C64::new(re, im);
                m[(j, i)] = C64::new(re, -im);
            }
        }
        m
    };
    let q = (0..spec.r_cells).map(|_| random_hermitian(&mut rng)).collect();
    let p = (0..spec.r_cells).map(|_| random_hermitian(&mut rng)).collect();
    Ok(TraceState { q, p, t: 0.0 })
}

fn hermitize_in_place(m: &mut CMatrix) {
    let n = m.nrows();
    for i in 0..n {
        let d = m[(i, i)];
        m[(i, i)] = C64::new(d.re, 0.0);
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)].conj());
            m[(i, j)] = avg;
            m[(j, i)] = avg.conj();
        }
    }
}

/// Trace Hamiltonian
/// `H = Tr sum_r ( p_r^2 / 2 + omega2 q_r^2 / 2 + lambda q_r^4 + kappa q_r q_{r+1} )`
/// (with `q^2 -> A q^2` in the harmonic term when the matrix coefficient is
/// set). Every term is a trace of a product of Hermitian factors, so the
/// value is real.
pub fn hamiltonian(spec: &TraceModelSpec, state: &TraceState) -> Result<f64> {
    state.validate(spec)?;
    let mut h = 0.0;
    for p in &state.p {
        h += 0.5 * (p * p).trace().re;
    }
    for q in &state.q {
        let q2 = q * q;
        h += 0.5
            * spec.omega2
            * match &spec.matrix_coeff {
                Some(a) => (a * &q2).trace().re,
                None => q2.trace().re,
            };
        h += spec.lambda * (&q2 * &q2).trace().re;
    }
    for w in state.q.windows(2) {
        h += spec.kappa * (&w[0] * &w[1]).trace().re;
    }
    Ok(h)
}

/// Generalized forces `p_dot_r = -omega2 q_r - 4 lambda q_r^3
/// - kappa (q_{r-1} + q_{r+1})` from cyclic trace differentiation of the
/// potential (chain ends simply lack a neighbor term). With the matrix
/// coefficient set, the harmonic term contributes the symmetrized
/// `-omega2 (A q + q A) / 2` instead.
pub fn forces(spec: &TraceModelSpec, state: &TraceState) -> Result<Vec<CMatrix>> {
    state.validate(spec)?;
    let mut ws = Workspace::new(spec);
    compute_forces(spec, &state.q, &mut ws);
    Ok(ws.forces)
}

struct Workspace {
    q2: CMatrix,
    q3: CMatrix,
    mixed: CMatrix,
    forces: Vec<CMatrix>,
}

impl Workspace {
    fn new(spec: &TraceModelSpec) -> Self {
        let z = CMatrix::zeros(spec.n, spec.n);
        Workspace {
            q2: z.clone(),
            q3: z.clone(),
            mixed: z.clone(),
            forces: vec![z; spec.r_cells],
        }
    }
}

fn compute_forces(spec: &TraceModelSpec, q: &[CMatrix], ws: &mut Workspace) {
    let nn = spec.n * spec.n;
    for r in 0..q.len() {
        q[r].mul_to(&q[r], &mut ws.q2);
        ws.q2.mul_to(&q[r], &mut ws.q3);
        let f = &mut ws.forces[r];
        match &spec.matrix_coeff {
            Some(a) => {
                a.mul_to(&q[r], &mut ws.mixed);
                let half = -0.5 * spec.omega2;
                // -omega2 (A q + q A)/2 = half (A q + (A q)^dag) for
                // Hermitian A, q.
                for i in 0..spec.n {
                    for j in 0..spec.n {
                        f[(i, j)] =
                            half * (ws.mixed[(i, j)] + ws.mixed[(j, i)].conj());
                    }
                }
            }
            None => {
                let fs = f.as_mut_slice();
                let qs = q[r].as_slice();
                for k in 0..nn {
                    fs[k] = -spec.omega2 * qs[k];
                }
            }
        }
        {
            let fs = f.as_mut_slice();
            let q3s = ws.q3.as_slice();
            for k in 0..nn {
                fs[k] -= 4.0 * spec.lambda * q3s[k];
            }
            if r > 0 {
                let ls = q[r - 1].as_slice();
                for k in 0..nn {
                    fs[k] -= spec.kappa * ls[k];
                }
            }
            if r + 1 < q.len() {
                let rs = q[r + 1].as_slice();
                for k in 0..nn {
                    fs[k] -= spec.kappa * rs[k];
                }
            }
        }
        hermitize_in_place(f);
    }
}

/// Kick-drift-kick leapfrog with `q_dot_r = p_r`. Positions and momenta are
/// re-Hermitized every step so floating-point drift cannot leave the
/// Hermitian manifold; non-finite values abort with the offending step.
pub fn leapfrog(
    spec: &TraceModelSpec,
    state: &TraceState,
    dt: f64,
    n_steps: usize,
) -> Result<TraceState> {
    state.validate(spec)?;
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidParameter {
            name: "dt",
            reason: format!("time step must be finite and > 0, got {dt}"),
        });
    }
    let mut q: Vec<CMatrix> = state.q.clone();
    let mut p: Vec<CMatrix> = state.p.clone();
    let mut ws = Workspace::new(spec);
    let half = 0.5 * dt;
    let nn = spec.n * spec.n;
    for step in 0..n_steps {
        compute_forces(spec, &q, &mut ws);
        for r in 0..q.len() {
            let ps = p[r].as_mut_slice();
            let fs = ws.forces[r].as_slice();
            for k in 0..nn {
                ps[k] += half * fs[k];
            }
        }
        for r in 0..q.len() {
            let qs = q[r].as_mut_slice();
            let ps = p[r].as_slice();
            for k in 0..nn {
                qs[k] += dt * ps[k];
            }
        }
        compute_forces(spec, &q, &mut ws);
        for r in 0..q.len() {
            let ps = p[r].as_mut_slice();
            let fs = ws.forces[r].as_slice();
            for k in 0..nn {
                ps[k] += half * fs[k];
            }
        }
        let mut finite = true;
        for m in q.iter_mut().chain(p.iter_mut()) {
            hermitize_in_place(m);
            if m.as_slice().iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
                finite = false;
            }
        }
        if !finite {
            return Err(Error::NumericalBlowup { step });
        }
    }
    Ok(TraceState {
        q,
        p,
        t: state.t + n_steps as f64 * dt,
    })
}

/// The total commutator charge `C = sum_r [q_r, p_r]`.
///
/// Each site term is built as `M - M^dag` with `M = q_r p_r`, which makes
/// the result anti-Hermitian identically (not merely to roundoff), and the
/// final diagonal entry closes the diagonal sum so the trace vanishes
/// identically in floating point as well.
pub fn c_tilde(state: &TraceState) -> Result<CMatrix> {
    check_phase_space_shapes(state)?;
    let n = state.q.first().map_or(0, |m| m.nrows());
    let mut c = CMatrix::zeros(n, n);
    for (q, p) in state.q.iter().zip(state.p.iter()) {
        let m = q * p;
        for i in 0..n {
            for j in 0..n {
                c[(i, j)] += m[(i, j)] - m[(j, i)].conj();
            }
        }
    }
    if n > 0 {
        let mut partial = 0.0;
        for i in 0..n - 1 {
            partial += c[(i, i)].im;
        }
        c[(n - 1, n - 1)] = C64::new(0.0, -partial);
    }
    Ok(c)
}

/// Per-site commutators `[q_r, p_r]`, reported individually so callers can
/// watch whether any single site's charge drifts (no bound is asserted —
/// only the sum is provably conserved).
pub fn c_tilde_per_site(state: &TraceState) -> Result<Vec<CMatrix>> {
    check_phase_space_shapes(state)?;
    Ok(state
        .q
        .iter()
        .zip(state.p.iter())
        .map(|(q, p)| {
            let m = q * p;
            let n = m.nrows();
            let mut c = CMatrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    c[(i, j)] = m[(i, j)] - m[(j, i)].conj();
                }
            }
            c
        })
        .collect())
}

fn check_phase_space_shapes(state: &TraceState) -> Result<()> {
    if state.q.len() != state.p.len() || state.q.is_empty() {
        return Err(Error::DimensionMismatch {
            expected: state.q.len().max(1),
            actual: state.p.len(),
        });
    }
    let n = state.q[0].nrows();
    for m in state.q.iter().chain(state.p.iter()) {
        if m.nrows() != n || m.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: m.nrows(),
            });
        }
    }
    Ok(())
}

/// `|H(conjugated state) - H(state)|` for conjugation by `exp(i epsilon L)`
/// with a Hermitian generator `L`. With scalar coefficients the trace
/// Hamiltonian is exactly unitary-invariant, so the residual is pure
/// floating-point dust (<= 1e-12 |H|) at any epsilon; a matrix coefficient
/// breaks the symmetry and the residual becomes finite.
pub fn unitary_invariance_residual(
    spec: &TraceModelSpec,
    state: &TraceState,
    generator: &CMatrix,
    epsilon: f64,
) -> Result<f64> {
    state.validate(spec)?;
    if generator.nrows() != spec.n || generator.ncols() != spec.n {
        return Err(Error::DimensionMismatch {
            expected: spec.n,
            actual: generator.nrows(),
        });
    }
    let res = herm_residual(generator);
    let tol = STATE_HERMITICITY_TOL * (1.0 + max_abs(generator));
    if res > tol {
        return Err(Error::NotHermitian { residual: res, tol });
    }
    if !epsilon.is_finite() {
        return Err(Error::InvalidParameter {
            name: "epsilon",
            reason: "must be finite".into(),
        });
    }
    // A central generator (scalar multiple of the identity) conjugates
    // trivially: U q U^dag = q with no arithmetic, hence residual zero.
    if is_scalar_identity(generator) {
        return Ok(0.0);
    }
    let h0 = hamiltonian(spec, state)?;
    let u = unitary_of_hermitian(generator, -epsilon);
    let h1 = hamiltonian(spec, &state.conjugated(&u))?;
    Ok((h1 - h0).abs())
}

fn is_scalar_identity(m: &CMatrix) -> bool {
    let n = m.nrows();
    let d = m[(0, 0)];
    for i in 0..n {
        for j in 0..n {
            let expect = if i == j { d } else { C64::new(0.0, 0.0) };
            if m[(i, j)] != expect {
                return false;
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::trace;
    use approx::assert_relative_eq;

    fn diag(entries: &[f64]) -> CMatrix {
        let n = entries.len();
        let mut m = CMatrix::zeros(n, n);
        for (i, e) in entries.iter().enumerate() {
            m[(i, i)] = C64::new(*e, 0.0);
        }
        m
    }

    #[test]
    fn hamiltonian_of_zero_state_is_zero() {
        let spec = TraceModelSpec::new(3, 4);
        let state = TraceState::zero(&spec).unwrap();
        assert_eq!(hamiltonian(&spec, &state).unwrap(), 0.0);
    }

    #[test]
    fn hamiltonian_single_site_harmonic_value() {
        let mut spec = TraceModelSpec::new(2, 1);
        spec.omega2 = 1.3;
        spec.lambda = 0.0;
        spec.kappa = 0.0;
        let x = 0.7;
        let state = TraceState {
            q: vec![diag(&[x, -x])],
            p: vec![CMatrix::zeros(2, 2)],
            t: 0.0,
        };
        // H = omega2 Tr(q^2) / 2 = omega2 x^2.
        assert_relative_eq!(
            hamiltonian(&spec, &state).unwrap(),
            1.3 * x * x,
            max_relative = 1e-14
        );
    }

    #[test]
    fn hamiltonian_is_unitary_invariant_for_scalar_coefficients() {
        let spec = TraceModelSpec::new(4, 3);
        let state = random_state(&spec, 7, 0.6).unwrap();
        let h = hamiltonian(&spec, &state).unwrap().abs();
        let gen_state = random_state(&spec, 8, 1.0).unwrap();
        let generator = &gen_state.q[0];
        for eps in [0.3, 1.7, -0.9] {
            let r = unitary_invariance_residual(&spec, &state, generator, eps).unwrap();
            assert!(r <= 1e-12 * h, "eps {eps}: residual {r:e} vs H {h:e}");
        }
        // The identity generator conjugates trivially.
        let id = CMatrix::identity(4, 4);
        assert_eq!(
            unitary_invariance_residual(&spec, &state, &id, 0.5).unwrap(),
            0.0
        );
    }

    #[test]
    fn matrix_coefficient_breaks_unitary_invariance() {
        let spec = TraceModelSpec::new(4, 3).with_matrix_coeff(diag(&[2.0, 0.5, 1.5, 1.0]));
        let state = random_state(&spec, 7, 0.6).unwrap();
        let h = hamiltonian(&spec, &state).unwrap().abs();
        let generator = &random_state(&TraceModelSpec::new(4, 3), 8, 1.0).unwrap().q[0];
        let r = unitary_invariance_residual(&spec, &state, generator, 0.3).unwrap();
        assert!(r > 1e-6 * h, "residual {r:e} did not resolve above dust");
    }

    #[test]
    fn forces_vanish_for_free_matrices() {
        let mut spec = TraceModelSpec::new(3, 3);
        spec.omega2 = 0.0;
        spec.lambda = 0.0;
        spec.kappa = 0.0;
        let state = random_state(&spec, 3, 0.5).unwrap();
        for f in forces(&spec, &state).unwrap() {
            assert_eq!(max_abs(&f), 0.0);
        }
    }

    #[test]
    fn quartic_force_on_a_diagonal_site() {
        let mut spec = TraceModelSpec::new(2, 1);
        spec.omega2 = 0.0;
        spec.lambda = 0.05;
        spec.kappa = 0.0;
        let (a, b) = (0.4, -0.9);
        let state = TraceState {
            q: vec![diag(&[a, b])],
            p: vec![CMatrix::zeros(2, 2)],
            t: 0.0,
        };
        let f = &forces(&spec, &state).unwrap()[0];
        assert_relative_eq!(f[(0, 0)].re, -4.0 * 0.05 * a * a * a, max_relative = 1e-14);
        assert_relative_eq!(f[(1, 1)].re, -4.0 * 0.05 * b * b * b, max_relative = 1e-14);
        assert_eq!(f[(0, 1)], C64::new(0.0, 0.0));
    }

    #[test]
    fn forces_match_finite_differences_of_the_potential() {
        let spec = TraceModelSpec::new(3, 3);
        let state = random_state(&spec, 11, 0.5).unwrap();
        let zero_p = vec![CMatrix::zeros(3, 3); 3];
        let potential = |q: Vec<CMatrix>| {
            hamiltonian(
                &spec,
                &TraceState {
                    q,
                    p: zero_p.clone(),
                    t: 0.0,
                },
            )
            .unwrap()
        };
        let f = forces(&spec, &state).unwrap();
        let dirs = random_state(&spec, 12, 1.0).unwrap();
        let eps = 1e-6;
        for r in 0..3 {
            let d = &dirs.q[r];
            let mut qp = state.q.clone();
            qp[r] = &state.q[r] + d * C64::new(eps, 0.0);
            let mut qm = state.q.clone();
            qm[r] = &state.q[r] - d * C64::new(eps, 0.0);
            let fd = (potential(qp) - potential(qm)) / (2.0 * eps);
            // dV = Tr(dV/dq dq) and F = -dV/dq, so dV along d is -Tr(F d).
            let analytic = -(&f[r] * d).trace().re;
            assert_relative_eq!(fd, analytic, max_relative = 1e-6);
        }
    }

    #[test]
    fn forces_transform_covariantly_under_conjugation() {
        let spec = TraceModelSpec::new(3, 2);
        let state = random_state(&spec, 5, 0.7).unwrap();
        let generator = &random_state(&spec, 6, 1.0).unwrap().q[0];
        let u = unitary_of_hermitian(generator, 0.8);
        let f = forces(&spec, &state).unwrap();
        let f_conj = forces(&spec, &state.conjugated(&u)).unwrap();
        for r in 0..2 {
            let expected = &u * &f[r] * u.adjoint();
            let diff = &f_conj[r] - &expected;
            assert!(max_abs(&diff) < 1e-12, "site {r}: {:e}", max_abs(&diff));
        }
    }

    #[test]
    fn leapfrog_keeps_zero_state_at_zero() {
        let spec = TraceModelSpec::new(2, 2);
        let state = TraceState::zero(&spec).unwrap();
        let out = leapfrog(&spec, &state, 1e-2, 100).unwrap();
        for m in out.q.iter().chain(out.p.iter()) {
            assert_eq!(max_abs(m), 0.0);
        }
        assert_relative_eq!(out.t, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn leapfrog_matches_the_harmonic_closed_form() {
        let mut spec = TraceModelSpec::new(2, 1);
        spec.omega2 = 1.0;
        spec.lambda = 0.0;
        spec.kappa = 0.0;
        let state = random_state(&spec, 42, 0.8).unwrap();
        let omega = 1.0f64;
        let dt = 1e-3 / omega;
        let n_steps = 6283; // about one period
        let out = leapfrog(&spec, &state, dt, n_steps).unwrap();
        let t = n_steps as f64 * dt;
        let (s, c) = (omega * t).sin_cos();
        let expect_q = &state.q[0] * C64::new(c, 0.0) + &state.p[0] * C64::new(s / omega, 0.0);
        let expect_p = &state.p[0] * C64::new(c, 0.0) - &state.q[0] * C64::new(s * omega, 0.0);
        assert!(max_abs(&(&out.q[0] - &expect_q)) < 1e-6);
        assert!(max_abs(&(&out.p[0] - &expect_p)) < 1e-6);
    }

    #[test]
    fn leapfrog_is_reversible() {
        let spec = TraceModelSpec::new(3, 3);
        let state = random_state(&spec, 9, 0.4).unwrap();
        let fwd = leapfrog(&spec, &state, 5e-4, 2000).unwrap();
        let flipped = TraceState {
            q: fwd.q.clone(),
            p: fwd.p.iter().map(|m| -m).collect(),
            t: 0.0,
        };
        let back = leapfrog(&spec, &flipped, 5e-4, 2000).unwrap();
        for r in 0..3 {
            assert!(max_abs(&(&back.q[r] - &state.q[r])) < 1e-9);
            assert!(max_abs(&(&back.p[r] + &state.p[r])) < 1e-9);
        }
    }

    #[test]
    fn leapfrog_conserves_charge_and_energy() {
        let spec = TraceModelSpec::new(4, 4);
        let state = random_state(&spec, 17, 0.3).unwrap();
        let c0 = c_tilde(&state).unwrap();
        let h0 = hamiltonian(&spec, &state).unwrap();
        let out = leapfrog(&spec, &state, 5e-4, 100_000).unwrap();
        let c1 = c_tilde(&out).unwrap();
        let h1 = hamiltonian(&spec, &out).unwrap();
        let drift = max_abs(&(&c1 - &c0));
        assert!(
            drift <= 1e-8 * (1.0 + max_abs(&c0)),
            "charge drift {drift:e}"
        );
        assert!(
            (h1 - h0).abs() <= 1e-6 * h0.abs(),
            "energy drift {:e} of {:e}",
            (h1 - h0).abs(),
            h0
        );
    }

    #[test]
    fn matrix_coefficient_breaks_charge_conservation() {
        let spec = TraceModelSpec::new(4, 4).with_matrix_coeff(diag(&[2.0, 0.5, 1.5, 1.0]));
        let state = random_state(&spec, 17, 0.3).unwrap();
        let c0 = c_tilde(&state).unwrap();
        let out = leapfrog(&spec, &state, 5e-4, 20_000).unwrap();
        let drift = max_abs(&(&c_tilde(&out).unwrap() - &c0));
        assert!(drift > 1e-4, "drift {drift:e} should be macroscopic");
    }

    #[test]
    fn leapfrog_commutes_with_conjugation() {
        let spec = TraceModelSpec::new(3, 3);
        let state = random_state(&spec, 23, 0.5).unwrap();
        let generator = &random_state(&spec, 24, 1.0).unwrap().q[0];
        let u = unitary_of_hermitian(generator, 0.6);
        let evolved_then_conj = leapfrog(&spec, &state, 1e-3, 1000).unwrap().conjugated(&u);
        let conj_then_evolved = leapfrog(&spec, &state.conjugated(&u), 1e-3, 1000).unwrap();
        for r in 0..3 {
            let dq = max_abs(&(&evolved_then_conj.q[r] - &conj_then_evolved.q[r]));
            let dp = max_abs(&(&evolved_then_conj.p[r] - &conj_then_evolved.p[r]));
            assert!(dq < 1e-9 && dp < 1e-9, "site {r}: dq {dq:e} dp {dp:e}");
        }
    }

    #[test]
    fn c_tilde_structure() {
        let spec = TraceModelSpec::new(4, 3);
        let state = random_state(&spec, 31, 0.9).unwrap();
        let c = c_tilde(&state).unwrap();
        // Anti-Hermitian identically.
        let mut adj_plus = c.adjoint();
        adj_plus += &c;
        assert_eq!(max_abs(&adj_plus), 0.0);
        // Traceless identically.
        assert_eq!(trace(&c), C64::new(0.0, 0.0));
        // Momenta zero -> charge exactly zero.
        let rest = TraceState {
            q: state.q.clone(),
            p: vec![CMatrix::zeros(4, 4); 3],
            t: 0.0,
        };
        assert_eq!(max_abs(&c_tilde(&rest).unwrap()), 0.0);
        // The per-site report sums to the total (up to the diagonal closing
        // adjustment, which is roundoff-sized).
        let per_site = c_tilde_per_site(&state).unwrap();
        let mut total = CMatrix::zeros(4, 4);
        for s in &per_site {
            total += s;
        }
        assert!(max_abs(&(&total - &c)) < 1e-13);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(TraceModelSpec::new(1, 3).validate().is_err());
        assert!(TraceModelSpec::new(3, 0).validate().is_err());
        let mut bad = TraceModelSpec::new(3, 3);
        bad.lambda = -0.1;
        assert!(bad.validate().is_err());
        let mut nh = CMatrix::zeros(3, 3);
        nh[(0, 1)] = C64::new(1.0, 0.0);
        assert!(TraceModelSpec::new(3, 3)
            .with_matrix_coeff(nh)
            .validate()
            .is_err());
    }

    #[test]
    fn non_finite_evolution_is_reported() {
        let mut spec = TraceModelSpec::new(2, 1);
        spec.lambda = 1.0;
        let mut state = TraceState::zero(&spec).unwrap();
        state.q[0][(0, 0)] = C64::new(1e150, 0.0);
        state.q[0][(1, 1)] = C64::new(1e150, 0.0);
        let err = leapfrog(&spec, &state, 1.0, 10);
        assert!(matches!(err, Err(Error::NumericalBlowup { .. })));
    }
}

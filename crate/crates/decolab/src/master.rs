//! Deterministic master equations and their common integrator.
//!
//! Five related dynamics are implemented as right-hand-side builders sharing
//! one fixed-step fourth-order integrator:
//!
//! * a global double-commutator equation
//!   `d rho/dt = -i/hbar [H, rho] - tau/(2 hbar^2) [H, [H, rho]]`;
//! * its spatially local generalization driven by a correlation kernel,
//!   `-1/(2 hbar^2) sum_{r r'} tau[r][r'] [H_r, [H_{r'}, rho]]`;
//! * an exact unitary-jump equation
//!   `(1/tau_p) (U rho U^dag - rho)` with `U = exp(-i H tau_p / hbar)`,
//!   together with its first-order form (the double commutator again);
//! * an effective-Hamiltonian variant that by construction shares the global
//!   equation's code path byte for byte;
//! * pointer-basis dephasing `d rho_nm/dt = -i w_nm rho_nm - G_nm rho_nm`
//!   with rates supplied by the gravity module.
//!
//! All right-hand sides are traceless and Hermitian; diagonals in the energy
//! eigenbasis are exactly stationary under every dissipator.

use crate::error::{Error, Result};
use crate::kernels::{self, CorrelationKernel};
use crate::linalg::{self, CMatrix, RMatrix};
use crate::quantum::{DensityMatrix, HamiltonianSpec};
use crate::units::UnitsContext;
use num_complex::Complex64 as C64;

/// Trace drift beyond this is silently tolerated; beyond it the state is
/// renormalized and the correction logged.
pub const TRACE_RENORM_THRESHOLD: f64 = 1e-12;
/// Trace drift beyond this aborts the integration as a step-size failure.
pub const TRACE_ABORT_THRESHOLD: f64 = 1e-6;

/// Sum of per-cell Hermitian Hamiltonians acting on a shared Hilbert space.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalHamiltonian {
    parts: Vec<CMatrix>,
    dim: usize,
}

impl LocalHamiltonian {
    pub fn new(parts: Vec<CMatrix>) -> Result<Self> {
        if parts.is_empty() {
            return Err(Error::InvalidParameter {
                name: "parts",
                reason: "at least one local Hamiltonian required".into(),
            });
        }
        let dim = parts[0].nrows();
        for p in &parts {
            if p.nrows() != dim || p.ncols() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: p.nrows().max(p.ncols()),
                });
            }
            let res = linalg::herm_residual(p);
            let scale = linalg::max_abs(p).max(f64::MIN_POSITIVE);
            if res > 1e-12 * scale {
                return Err(Error::NotHermitian {
                    residual: res,
                    tol: 1e-12 * scale,
                });
            }
        }
        Ok(LocalHamiltonian { parts, dim })
    }

    pub fn n_cells(&self) -> usize {
        self.parts.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn parts(&self) -> &[CMatrix] {
        &self.parts
    }

    /// Total Hamiltonian: the sum of the parts.
    pub fn total(&self) -> CMatrix {
        let mut h = CMatrix::zeros(self.dim, self.dim);
        for p in &self.parts {
            h += p;
        }
        h
    }
}

/// Which deterministic evolution to integrate.
#[derive(Debug, Clone, PartialEq)]
pub enum EvolutionModel {
    /// `-i/hbar [H, rho] - tau/(2 hbar^2) [H, [H, rho]]`.
    GlobalDoubleCommutator { h: HamiltonianSpec, tau: f64 },
    /// `-i/hbar [H, rho] - 1/(2 hbar^2) sum tau[r][r'] [H_r, [H_{r'}, rho]]`.
    LocalDoubleCommutator {
        parts: LocalHamiltonian,
        kernel: CorrelationKernel,
    },
    /// `(1/tau_p)(U rho U^dag - rho)` with `U = exp(-i H tau_p / hbar)`.
    MilburnExact { h: HamiltonianSpec, tau_planck: f64 },
    /// First-order expansion of the jump equation: the global double
    /// commutator evaluated at `tau = tau_planck`.
    MilburnFirstOrder { h: HamiltonianSpec, tau_planck: f64 },
    /// The global double commutator with an effective Hamiltonian; shares
    /// the global code path byte for byte.
    AdlerEffective { h_eff: HamiltonianSpec, tau: f64 },
    /// Pointer-basis dephasing: `d rho_nm/dt = -i w_nm rho_nm - G_nm rho_nm`.
    DiosiPenrosePointer {
        rates: RMatrix,
        h_diag: HamiltonianSpec,
    },
}

impl EvolutionModel {
    pub fn dim(&self) -> usize {
        match self {
            EvolutionModel::GlobalDoubleCommutator { h, .. } => h.dim(),
            EvolutionModel::LocalDoubleCommutator { parts, .. } => parts.dim(),
            EvolutionModel::MilburnExact { h, .. } => h.dim(),
            EvolutionModel::MilburnFirstOrder { h, .. } => h.dim(),
            EvolutionModel::AdlerEffective { h_eff, .. } => h_eff.dim(),
            EvolutionModel::DiosiPenrosePointer { h_diag, .. } => h_diag.dim(),
        }
    }

    /// Short human-readable tag for reports and trajectories.
    pub fn describe(&self) -> String {
        match self {
            EvolutionModel::GlobalDoubleCommutator { tau, .. } => {
                format!("global-double-commutator(tau={tau:e})")
            }
            EvolutionModel::LocalDoubleCommutator { parts, .. } => {
                format!("local-double-commutator(cells={})", parts.n_cells())
            }
            EvolutionModel::MilburnExact { tau_planck, .. } => {
                format!("milburn-exact(tau={tau_planck:e})")
            }
            EvolutionModel::MilburnFirstOrder { tau_planck, .. } => {
                format!("milburn-first-order(tau={tau_planck:e})")
            }
            EvolutionModel::AdlerEffective { tau, .. } => {
                format!("adler-effective(tau={tau:e})")
            }
            EvolutionModel::DiosiPenrosePointer { .. } => "pointer-dephasing".into(),
        }
    }

    /// Validates parameters: Hermitian Hamiltonians, non-negative times,
    /// PSD kernels, admissible rate matrices.
    pub fn validate(&self) -> Result<()> {
        match self {
            EvolutionModel::GlobalDoubleCommutator { h, tau }
            | EvolutionModel::AdlerEffective { h_eff: h, tau } => {
                h.validate()?;
                check_nonneg_time("tau", *tau)
            }
            EvolutionModel::MilburnFirstOrder { h, tau_planck } => {
                h.validate()?;
                check_nonneg_time("tau_planck", *tau_planck)
            }
            EvolutionModel::MilburnExact { h, tau_planck } => {
                h.validate()?;
                if !(tau_planck.is_finite() && *tau_planck > 0.0) {
                    return Err(Error::InvalidParameter {
                        name: "tau_planck",
                        reason: format!("jump time must be finite and > 0, got {tau_planck}"),
                    });
                }
                Ok(())
            }
            EvolutionModel::LocalDoubleCommutator { parts, kernel } => {
                if kernel.n_cells() != parts.n_cells() {
                    return Err(Error::DimensionMismatch {
                        expected: parts.n_cells(),
                        actual: kernel.n_cells(),
                    });
                }
                let min_eig = kernels::validate_psd(kernel)?;
                let lam_max = linalg::eigvals_symmetric(kernel.matrix())
                    .iter()
                    .fold(0.0f64, |a, &b| a.max(b));
                if min_eig < -kernels::KERNEL_PSD_TOL * lam_max.max(f64::MIN_POSITIVE) {
                    return Err(Error::NotPsd {
                        min_eig,
                        tol: kernels::KERNEL_PSD_TOL * lam_max,
                    });
                }
                Ok(())
            }
            EvolutionModel::DiosiPenrosePointer { rates, h_diag } => {
                validate_rate_matrix(rates)?;
                h_diag.validate()?;
                if rates.nrows() != h_diag.dim() {
                    return Err(Error::DimensionMismatch {
                        expected: h_diag.dim(),
                        actual: rates.nrows(),
                    });
                }
                Ok(())
            }
        }
    }
}

fn check_nonneg_time(name: &'static str, t: f64) -> Result<()> {
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::InvalidParameter {
            name,
            reason: format!("time parameter must be finite and >= 0, got {t}"),
        });
    }
    Ok(())
}

fn validate_rate_matrix(rates: &RMatrix) -> Result<()> {
    if rates.nrows() != rates.ncols() {
        return Err(Error::DimensionMismatch {
            expected: rates.nrows(),
            actual: rates.ncols(),
        });
    }
    let scale = linalg::max_abs_real(rates).max(f64::MIN_POSITIVE);
    for i in 0..rates.nrows() {
        if rates[(i, i)] != 0.0 {
            return Err(Error::InvalidParameter {
                name: "rates",
                reason: format!("diagonal rate ({i},{i}) must be zero, got {}", rates[(i, i)]),
            });
        }
        for j in 0..rates.ncols() {
            let r = rates[(i, j)];
            if !(r.is_finite() && r >= 0.0) {
                return Err(Error::InvalidParameter {
                    name: "rates",
                    reason: format!("rate ({i},{j}) must be finite and >= 0, got {r}"),
                });
            }
            if (r - rates[(j, i)]).abs() > 1e-12 * scale {
                return Err(Error::InvalidParameter {
                    name: "rates",
                    reason: format!("rate matrix must be symmetric; ({i},{j}) breaks it"),
                });
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Right-hand sides
// ---------------------------------------------------------------------------

/// `-i/hbar [H, rho] - tau/(2 hbar^2) [H, [H, rho]]`.
pub fn rhs_global(
    h: &HamiltonianSpec,
    tau: f64,
    rho: &DensityMatrix,
    units: &UnitsContext,
) -> Result<CMatrix> {
    h.validate()?;
    check_nonneg_time("tau", tau)?;
    check_dims(h.dim(), rho.dim())?;
    Ok(rhs_global_m(h, tau, rho.matrix(), units.hbar))
}

fn check_dims(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch { expected, actual });
    }
    Ok(())
}

/// Entrywise weights for the global equation in the energy eigenbasis:
/// `w_ij = -i (E_i - E_j)/hbar - tau (E_i - E_j)^2 / (2 hbar^2)`; diagonal
/// entries are exactly zero, keeping populations bitwise stationary.
fn global_weights(es: &[f64], tau: f64, hbar: f64) -> CMatrix {
    let n = es.len();
    let mut w = CMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let de = es[i] - es[j];
            w[(i, j)] = C64::new(-tau * de * de / (2.0 * hbar * hbar), -de / hbar);
        }
    }
    w
}

fn hadamard(w: &CMatrix, rho: &CMatrix) -> CMatrix {
    let mut out = rho.clone();
    out.zip_apply(w, |r, wv| *r *= wv);
    out
}

fn rhs_global_m(h: &HamiltonianSpec, tau: f64, rho: &CMatrix, hbar: f64) -> CMatrix {
    match h {
        HamiltonianSpec::Diagonal(es) => hadamard(&global_weights(es, tau, hbar), rho),
        HamiltonianSpec::Dense(hm) => rhs_global_dense(hm, tau, rho, hbar),
    }
}

fn rhs_global_dense(hm: &CMatrix, tau: f64, rho: &CMatrix, hbar: f64) -> CMatrix {
    let c1 = linalg::commutator(hm, rho);
    let mut out = &c1 * C64::new(0.0, -1.0 / hbar);
    if tau != 0.0 {
        let c2 = linalg::commutator(hm, &c1);
        out -= c2 * C64::new(tau / (2.0 * hbar * hbar), 0.0);
    }
    out
}

/// `-i/hbar [sum_r H_r, rho] - 1/(2 hbar^2) sum_{r r'} tau[r][r'] [H_r, [H_{r'}, rho]]`.
pub fn rhs_local(
    parts: &LocalHamiltonian,
    kernel: &CorrelationKernel,
    rho: &DensityMatrix,
    units: &UnitsContext,
) -> Result<CMatrix> {
    let model = EvolutionModel::LocalDoubleCommutator {
        parts: parts.clone(),
        kernel: kernel.clone(),
    };
    model.validate()?;
    check_dims(parts.dim(), rho.dim())?;
    Ok(rhs_local_m(
        parts.parts(),
        &parts.total(),
        kernel.matrix(),
        rho.matrix(),
        units.hbar,
    ))
}

fn rhs_local_m(
    parts: &[CMatrix],
    total: &CMatrix,
    taus: &RMatrix,
    rho: &CMatrix,
    hbar: f64,
) -> CMatrix {
    let n = parts.len();
    let inner: Vec<CMatrix> = parts.iter().map(|hr| linalg::commutator(hr, rho)).collect();
    let mut out = linalg::commutator(total, rho) * C64::new(0.0, -1.0 / hbar);
    let coeff = C64::new(-1.0 / (2.0 * hbar * hbar), 0.0);
    for r in 0..n {
        // C_r = sum_{r'} tau[r][r'] [H_{r'}, rho]
        let mut c_r = CMatrix::zeros(rho.nrows(), rho.ncols());
        for rp in 0..n {
            let t = taus[(r, rp)];
            if t != 0.0 {
                c_r += &inner[rp] * C64::new(t, 0.0);
            }
        }
        out += linalg::commutator(&parts[r], &c_r) * coeff;
    }
    out
}

/// `(1/tau_p)(U rho U^dag - rho)` with `U = exp(-i H tau_p / hbar)`.
pub fn rhs_milburn_exact(
    h: &HamiltonianSpec,
    tau_pl: f64,
    rho: &DensityMatrix,
    units: &UnitsContext,
) -> Result<CMatrix> {
    h.validate()?;
    if !(tau_pl.is_finite() && tau_pl > 0.0) {
        return Err(Error::InvalidParameter {
            name: "tau_planck",
            reason: format!("jump time must be finite and > 0, got {tau_pl}"),
        });
    }
    check_dims(h.dim(), rho.dim())?;
    let prepared = prepare_milburn(h, tau_pl, units.hbar);
    Ok(prepared.apply(rho.matrix()))
}

enum MilburnRhs {
    /// Hadamard weights `(e^{-i (E_i - E_j) tau / hbar} - 1)/tau`, exactly
    /// zero on the diagonal.
    Weights(CMatrix),
    /// Cached jump unitary for dense Hamiltonians.
    Unitary { u: CMatrix, inv_tau: f64 },
}

impl MilburnRhs {
    fn apply(&self, rho: &CMatrix) -> CMatrix {
        match self {
            MilburnRhs::Weights(w) => hadamard(w, rho),
            MilburnRhs::Unitary { u, inv_tau } => {
                let jumped = u * rho * u.adjoint();
                (jumped - rho) * C64::new(*inv_tau, 0.0)
            }
        }
    }
}

fn prepare_milburn(h: &HamiltonianSpec, tau_pl: f64, hbar: f64) -> MilburnRhs {
    match h {
        HamiltonianSpec::Diagonal(es) => {
            let n = es.len();
            let mut w = CMatrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let x = (es[i] - es[j]) * tau_pl / hbar;
                    w[(i, j)] = C64::new((x.cos() - 1.0) / tau_pl, -x.sin() / tau_pl);
                }
            }
            MilburnRhs::Weights(w)
        }
        HamiltonianSpec::Dense(hm) => MilburnRhs::Unitary {
            u: linalg::unitary_of_hermitian(hm, tau_pl / hbar),
            inv_tau: 1.0 / tau_pl,
        },
    }
}

/// Pointer-basis dephasing `d rho_nm/dt = -i w_nm rho_nm - G_nm rho_nm`.
pub fn rhs_dp_pointer(
    rates: &RMatrix,
    h_diag: &HamiltonianSpec,
    rho: &DensityMatrix,
    units: &UnitsContext,
) -> Result<CMatrix> {
    validate_rate_matrix(rates)?;
    let es = pointer_energies(h_diag)?;
    if rates.nrows() != es.len() {
        return Err(Error::DimensionMismatch {
            expected: es.len(),
            actual: rates.nrows(),
        });
    }
    check_dims(es.len(), rho.dim())?;
    let w = dp_weights(rates, &es, units.hbar);
    Ok(hadamard(&w, rho.matrix()))
}

/// Pointer-state energies in basis order (never re-sorted: the basis is the
/// pointer basis, not the eigenbasis of some dense matrix).
fn pointer_energies(h_diag: &HamiltonianSpec) -> Result<Vec<f64>> {
    match h_diag {
        HamiltonianSpec::Diagonal(es) => {
            h_diag.validate()?;
            Ok(es.clone())
        }
        HamiltonianSpec::Dense(m) => {
            h_diag.validate()?;
            let mut off: f64 = 0.0;
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    if i != j {
                        off = off.max(m[(i, j)].norm());
                    }
                }
            }
            let scale = linalg::max_abs(m).max(f64::MIN_POSITIVE);
            if off > 1e-12 * scale {
                return Err(Error::InvalidParameter {
                    name: "h_diag",
                    reason: "pointer Hamiltonian must be diagonal in the pointer basis".into(),
                });
            }
            Ok((0..m.nrows()).map(|i| m[(i, i)].re).collect())
        }
    }
}

fn dp_weights(rates: &RMatrix, es: &[f64], hbar: f64) -> CMatrix {
    let n = es.len();
    let mut w = CMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            w[(i, j)] = C64::new(-rates[(i, j)], -(es[i] - es[j]) / hbar);
        }
    }
    w
}

// ---------------------------------------------------------------------------
// Prepared dispatch and integration
// ---------------------------------------------------------------------------

/// Model compiled to a cheap per-step form. Built once per integration (and
/// reused by the samplers); applying it never allocates beyond its output.
pub(crate) enum PreparedRhs {
    Hadamard(CMatrix),
    DenseGlobal { h: CMatrix, tau: f64, hbar: f64 },
    DenseMilburn { u: CMatrix, inv_tau: f64 },
    Local {
        parts: Vec<CMatrix>,
        total: CMatrix,
        taus: RMatrix,
        hbar: f64,
    },
}

impl PreparedRhs {
    pub(crate) fn build(model: &EvolutionModel, units: &UnitsContext) -> Result<Self> {
        model.validate()?;
        units.validate()?;
        let hbar = units.hbar;
        Ok(match model {
            EvolutionModel::GlobalDoubleCommutator { h, tau }
            | EvolutionModel::AdlerEffective { h_eff: h, tau } => match h {
                HamiltonianSpec::Diagonal(es) => {
                    PreparedRhs::Hadamard(global_weights(es, *tau, hbar))
                }
                HamiltonianSpec::Dense(hm) => PreparedRhs::DenseGlobal {
                    h: hm.clone(),
                    tau: *tau,
                    hbar,
                },
            },
            EvolutionModel::MilburnFirstOrder { h, tau_planck } => match h {
                HamiltonianSpec::Diagonal(es) => {
                    PreparedRhs::Hadamard(global_weights(es, *tau_planck, hbar))
                }
                HamiltonianSpec::Dense(hm) => PreparedRhs::DenseGlobal {
                    h: hm.clone(),
                    tau: *tau_planck,
                    hbar,
                },
            },
            EvolutionModel::MilburnExact { h, tau_planck } => {
                match prepare_milburn(h, *tau_planck, hbar) {
                    MilburnRhs::Weights(w) => PreparedRhs::Hadamard(w),
                    MilburnRhs::Unitary { u, inv_tau } => {
                        PreparedRhs::DenseMilburn { u, inv_tau }
                    }
                }
            }
            EvolutionModel::LocalDoubleCommutator { parts, kernel } => PreparedRhs::Local {
                parts: parts.parts().to_vec(),
                total: parts.total(),
                taus: kernel.matrix().clone(),
                hbar,
            },
            EvolutionModel::DiosiPenrosePointer { rates, h_diag } => {
                let es = pointer_energies(h_diag)?;
                PreparedRhs::Hadamard(dp_weights(rates, &es, hbar))
            }
        })
    }

    pub(crate) fn apply(&self, rho: &CMatrix) -> CMatrix {
        match self {
            PreparedRhs::Hadamard(w) => hadamard(w, rho),
            PreparedRhs::DenseGlobal { h, tau, hbar } => rhs_global_dense(h, *tau, rho, *hbar),
            PreparedRhs::DenseMilburn { u, inv_tau } => {
                let jumped = u * rho * u.adjoint();
                (jumped - rho) * C64::new(*inv_tau, 0.0)
            }
            PreparedRhs::Local {
                parts,
                total,
                taus,
                hbar,
            } => rhs_local_m(parts, total, taus, rho, *hbar),
        }
    }
}

/// A trace renormalization applied during integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceCorrection {
    pub step: usize,
    pub drift: f64,
}

/// Time-ordered sequence of states produced by one integration.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DensityMatrix>,
    /// Human-readable description of the generating model.
    pub model: String,
    /// Trace renormalizations applied along the way (usually empty).
    pub corrections: Vec<TraceCorrection>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> &DensityMatrix {
        self.states.last().expect("trajectory never empty")
    }

    /// The (i, j) entry along the trajectory.
    pub fn offdiag(&self, i: usize, j: usize) -> Vec<C64> {
        self.states.iter().map(|s| s.entry(i, j)).collect()
    }
}

/// Classical fixed-step fourth-order integration of the model's right-hand
/// side from `rho0` to `t_final` in `n_steps` equal steps. Stored states are
/// re-symmetrized each step; trace drift beyond 1e-12 is renormalized and
/// logged, beyond 1e-6 the run aborts as a step-size failure. Positivity is
/// never repaired — a state that leaves the PSD cone beyond tolerance is an
/// error.
pub fn integrate(
    model: &EvolutionModel,
    rho0: &DensityMatrix,
    t_final: f64,
    n_steps: usize,
    units: &UnitsContext,
) -> Result<Trajectory> {
    if n_steps == 0 {
        return Err(Error::InvalidParameter {
            name: "n_steps",
            reason: "at least one step required".into(),
        });
    }
    if !(t_final.is_finite() && t_final >= 0.0) {
        return Err(Error::InvalidParameter {
            name: "t_final",
            reason: format!("final time must be finite and >= 0, got {t_final}"),
        });
    }
    check_dims(model.dim(), rho0.dim())?;
    let prepared = PreparedRhs::build(model, units)?;
    let dt = t_final / n_steps as f64;
    let mut times = Vec::with_capacity(n_steps + 1);
    let mut states = Vec::with_capacity(n_steps + 1);
    let mut corrections = Vec::new();
    times.push(0.0);
    states.push(rho0.clone());
    let mut rho = rho0.matrix().clone();
    for step in 1..=n_steps {
        let k1 = prepared.apply(&rho);
        let k2 = prepared.apply(&(&rho + &k1 * C64::new(0.5 * dt, 0.0)));
        let k3 = prepared.apply(&(&rho + &k2 * C64::new(0.5 * dt, 0.0)));
        let k4 = prepared.apply(&(&rho + &k3 * C64::new(dt, 0.0)));
        let incr = (k1 + k2 * C64::new(2.0, 0.0) + k3 * C64::new(2.0, 0.0) + k4)
            * C64::new(dt / 6.0, 0.0);
        rho += incr;
        rho = linalg::hermitize(&rho);
        if rho.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NumericalBlowup { step });
        }
        let tr = linalg::trace(&rho);
        let drift = (tr.re - 1.0).hypot(tr.im);
        if drift > TRACE_ABORT_THRESHOLD {
            return Err(Error::TraceDrift { step, drift });
        }
        if drift > TRACE_RENORM_THRESHOLD {
            rho /= C64::new(tr.re, 0.0);
            corrections.push(TraceCorrection { step, drift });
        }
        times.push(step as f64 * dt);
        states.push(DensityMatrix::from_integration(rho.clone())?);
    }
    Ok(Trajectory {
        times,
        states,
        model: model.describe(),
        corrections,
    })
}

/// Step-count heuristic: step no larger than min(hbar/(10 ||H||), t_d/100)
/// where t_d is a coarse lower bound on the fastest decay time of the model.
pub fn suggested_steps(model: &EvolutionModel, t_final: f64, units: &UnitsContext) -> usize {
    let hbar = units.hbar;
    let (h_norm, rate) = match model {
        EvolutionModel::GlobalDoubleCommutator { h, tau }
        | EvolutionModel::AdlerEffective { h_eff: h, tau } => {
            let n = h.spectral_norm();
            (n, 2.0 * tau * n * n / (hbar * hbar))
        }
        EvolutionModel::MilburnFirstOrder { h, tau_planck } => {
            let n = h.spectral_norm();
            (n, 2.0 * tau_planck * n * n / (hbar * hbar))
        }
        EvolutionModel::MilburnExact { h, tau_planck } => {
            (h.spectral_norm(), 2.0 / tau_planck)
        }
        EvolutionModel::LocalDoubleCommutator { parts, kernel } => {
            let s: f64 = parts
                .parts()
                .iter()
                .map(linalg::spectral_norm_hermitian)
                .sum();
            let tau_max = linalg::max_abs_real(kernel.matrix());
            (s, 2.0 * tau_max * s * s / (hbar * hbar))
        }
        EvolutionModel::DiosiPenrosePointer { rates, h_diag } => {
            (h_diag.spectral_norm(), linalg::max_abs_real(rates))
        }
    };
    let mut dt_max = f64::INFINITY;
    if h_norm > 0.0 {
        dt_max = dt_max.min(hbar / (10.0 * h_norm));
    }
    if rate > 0.0 {
        dt_max = dt_max.min(1.0 / (100.0 * rate));
    }
    if !dt_max.is_finite() {
        return 1;
    }
    ((t_final / dt_max).ceil() as usize).max(1)
}

// ---------------------------------------------------------------------------
// Decoherence-time arithmetic and decay fitting
// ---------------------------------------------------------------------------

/// Which decoherence-time convention to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecoherenceConvention {
    /// `hbar^2 / (tau dE^2)` — the compact printed formula.
    Compact,
    /// `2 hbar^2 / (tau dE^2)` — the exact inverse of the double-commutator
    /// decay rate `tau dE^2 / (2 hbar^2)`.
    RateExact,
}

/// Decoherence time of a superposition with energy gap `delta_e` under time
/// uncertainty `tau`, in the chosen convention.
pub fn decoherence_time(
    delta_e: f64,
    tau: f64,
    convention: DecoherenceConvention,
    units: &UnitsContext,
) -> Result<f64> {
    if !(delta_e.is_finite() && delta_e > 0.0) {
        return Err(Error::InvalidParameter {
            name: "delta_e",
            reason: format!("energy gap must be finite and > 0, got {delta_e}"),
        });
    }
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::InvalidParameter {
            name: "tau",
            reason: format!("time uncertainty must be finite and > 0, got {tau}"),
        });
    }
    let base = units.hbar * units.hbar / (tau * delta_e * delta_e);
    Ok(match convention {
        DecoherenceConvention::Compact => base,
        DecoherenceConvention::RateExact => 2.0 * base,
    })
}

/// Result of fitting an off-diagonal entry to exponential decay with a
/// linear phase: `rho_ij(t) ~ A e^{-rate t} e^{i phase_rate t}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayFit {
    /// Decay rate of |rho_ij| (1/s); positive means decay.
    pub rate: f64,
    /// Linear phase velocity of arg rho_ij (rad/s).
    pub phase_rate: f64,
    /// RMS residual of the log-magnitude line fit.
    pub residual: f64,
}

/// Least-squares line fits of `log |rho_ij(t)|` and the unwrapped phase.
pub fn fit_offdiag_decay(traj: &Trajectory, i: usize, j: usize) -> Result<DecayFit> {
    if i == j {
        return Err(Error::InvalidParameter {
            name: "indices",
            reason: "fit requires an off-diagonal entry (i != j)".into(),
        });
    }
    let dim = traj.states.first().map(|s| s.dim()).unwrap_or(0);
    if i >= dim || j >= dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: i.max(j) + 1,
        });
    }
    let zs = traj.offdiag(i, j);
    if zs.first().map(|z| z.norm()).unwrap_or(0.0) <= 1e-10 {
        return Err(Error::InvalidParameter {
            name: "offdiag",
            reason: "initial off-diagonal magnitude must exceed 1e-10 to fit a decay".into(),
        });
    }
    // Keep points before the magnitude underflows.
    let mut ts = Vec::new();
    let mut logs = Vec::new();
    let mut phases = Vec::new();
    let mut prev_phase: Option<f64> = None;
    for (t, z) in traj.times.iter().zip(zs.iter()) {
        let m = z.norm();
        if m < 1e-280 {
            break;
        }
        ts.push(*t);
        logs.push(m.ln());
        let raw = z.arg();
        let unwrapped = match prev_phase {
            None => raw,
            Some(p) => {
                let mut d = raw - p;
                while d > std::f64::consts::PI {
                    d -= 2.0 * std::f64::consts::PI;
                }
                while d < -std::f64::consts::PI {
                    d += 2.0 * std::f64::consts::PI;
                }
                p + d
            }
        };
        prev_phase = Some(unwrapped);
        phases.push(unwrapped);
    }
    if ts.len() < 2 {
        return Err(Error::InvalidParameter {
            name: "trajectory",
            reason: "need at least two usable samples to fit a decay".into(),
        });
    }
    let (slope_mag, _, residual) = line_fit(&ts, &logs);
    let (slope_phase, _, _) = line_fit(&ts, &phases);
    Ok(DecayFit {
        rate: -slope_mag,
        phase_rate: slope_phase,
        residual,
    })
}

/// Ordinary least squares y = a + b x; returns (b, a, rms residual).
fn line_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(ys.iter()) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    let b = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let a = my - b * mx;
    let mut ss = 0.0;
    for (x, y) in xs.iter().zip(ys.iter()) {
        let r = y - (a + b * x);
        ss += r * r;
    }
    (b, a, (ss / n).sqrt())
}

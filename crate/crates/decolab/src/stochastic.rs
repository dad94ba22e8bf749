//! Stochastic unravelings of the deterministic master equations.
//!
//! Four noise pictures act on an initial state by random unitary evolution:
//!
//! * a Gaussian fluctuation of the global evolution time,
//!   `t -> t + dt` with `dt ~ Normal(0, tau t)`;
//! * a Poisson-distributed number of discrete unitary jumps of duration
//!   `tau_p`, `n ~ Poisson(t / tau_p)`;
//! * a Gaussian fluctuation of the inverse Planck constant averaged over the
//!   horizon, `1/hbar -> 1/hbar + d` with `d ~ Normal(0, tau / (hbar^2 t))`;
//! * a correlated per-cell time field `t_r = t + dt_r` with
//!   `(dt_r) ~ Normal(0, kernel * t)`, evolving by `exp(-i sum_r H_r t_r / hbar)`.
//!
//! Averaging these realizations reproduces, respectively, the global double
//! commutator, the exact jump equation, the effective-Hamiltonian equation at
//! matching horizon, and the local double commutator — the equivalences the
//! test suite checks statistically.
//!
//! Sampling design notes:
//! * Samplers are fixed-horizon: each requested time is sampled with fresh,
//!   independent noise whose variance law is anchored to that horizon. A
//!   "trajectory" is the sequence of such draws made by one seeded generator
//!   visiting the requested times in order, not a continuous path.
//! * Negative total times are allowed (backward unitary evolution); clipping
//!   them would bias the ensemble mean.
//! * Every trajectory gets its own counter-based generator whose seed is
//!   derived from (master seed, trajectory index) by a SplitMix64 step, so
//!   trajectories are independent, reproducible, and order-insensitive.
//! * Ensemble reductions use fixed chunking and compensated summation, making
//!   results bit-identical for a given seed regardless of thread schedule.

use crate::error::{Error, Result};
use crate::kernels::{self, CorrelationKernel};
use crate::linalg::{self, CMatrix, RMatrix};
use crate::master::{LocalHamiltonian, Trajectory};
use crate::quantum::{self, DensityMatrix, HamiltonianSpec};
use crate::units::UnitsContext;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;

/// Standard errors below this floor are clamped when forming z-scores, so
/// zero-variance entries compare at machine precision instead of dividing
/// by zero.
pub const Z_SCORE_SE_FLOOR: f64 = 1e-13;

/// Trajectories per deterministic reduction chunk.
const CHUNK: usize = 64;

/// One of the four noise pictures.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseModel {
    /// Global time fluctuation with variance `tau * t`.
    GaussianGlobalTime { tau: f64 },
    /// Poisson-many unitary jumps of duration `tau_pl`.
    PoissonDiscreteTime { tau_pl: f64 },
    /// Inverse-Planck fluctuation with variance `tau / (hbar^2 t)`.
    FluctuatingPlanck { tau: f64 },
    /// Correlated per-cell time fluctuations with covariance `kernel * t`.
    GaussianLocalTimeField {
        kernel: CorrelationKernel,
        parts: LocalHamiltonian,
    },
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        match self {
            NoiseModel::GaussianGlobalTime { tau }
            | NoiseModel::FluctuatingPlanck { tau } => check_tau("tau", *tau),
            NoiseModel::PoissonDiscreteTime { tau_pl } => check_tau("tau_pl", *tau_pl),
            NoiseModel::GaussianLocalTimeField { kernel, parts } => {
                if kernel.n_cells() != parts.n_cells() {
                    return Err(Error::DimensionMismatch {
                        expected: parts.n_cells(),
                        actual: kernel.n_cells(),
                    });
                }
                // factor_for_sampling re-checks PSD; validate early for a
                // clear error site.
                kernels::factor_for_sampling(kernel).map(|_| ())
            }
        }
    }

    /// Short human-readable tag for reports.
    pub fn describe(&self) -> String {
        match self {
            NoiseModel::GaussianGlobalTime { tau } => format!("gaussian-global-time(tau={tau:e})"),
            NoiseModel::PoissonDiscreteTime { tau_pl } => {
                format!("poisson-discrete-time(tau={tau_pl:e})")
            }
            NoiseModel::FluctuatingPlanck { tau } => format!("fluctuating-planck(tau={tau:e})"),
            NoiseModel::GaussianLocalTimeField { parts, .. } => {
                format!("gaussian-local-time-field(cells={})", parts.n_cells())
            }
        }
    }
}

fn check_tau(name: &'static str, tau: f64) -> Result<()> {
    if !(tau.is_finite() && tau >= 0.0) {
        return Err(Error::InvalidParameter {
            name,
            reason: format!("noise time parameter must be finite and >= 0, got {tau}"),
        });
    }
    Ok(())
}

/// SplitMix64 finalizer: decorrelates per-trajectory seeds derived from the
/// master seed and the trajectory index.
pub fn derive_trajectory_seed(master_seed: u64, trajectory: u64) -> u64 {
    let mut z = master_seed
        .wrapping_add(trajectory.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Number of unitary jumps drawn for horizon `t`: `Poisson(t / tau_pl)`.
/// Degenerate horizons (t = 0) draw nothing and return 0.
pub fn poisson_jump_count<R: Rng>(t: f64, tau_pl: f64, rng: &mut R) -> u64 {
    let mean = t / tau_pl;
    if mean <= 0.0 {
        return 0;
    }
    let pois = Poisson::new(mean).expect("positive mean by construction");
    pois.sample(rng) as u64
}

// ---------------------------------------------------------------------------
// Prepared samplers
// ---------------------------------------------------------------------------

/// Phase application engine: conjugation by `exp(-i theta H)` with the
/// Hamiltonian's eigenstructure resolved once up front.
enum PhaseEngine {
    Diag(Vec<f64>),
    Eig(linalg::HermEig),
}

impl PhaseEngine {
    fn new(h: &HamiltonianSpec) -> Result<Self> {
        h.validate()?;
        Ok(match h {
            HamiltonianSpec::Diagonal(es) => PhaseEngine::Diag(es.clone()),
            HamiltonianSpec::Dense(m) => PhaseEngine::Eig(linalg::eigh(m)),
        })
    }

    /// `exp(-i theta H) rho exp(+i theta H)`, theta in 1/J.
    fn conjugate(&self, rho: &CMatrix, theta: f64) -> CMatrix {
        match self {
            PhaseEngine::Diag(es) => quantum::phase_conjugate_diagonal(rho, es, theta),
            PhaseEngine::Eig(eig) => {
                let u = linalg::unitary_from_eig(eig, theta);
                &u * rho * u.adjoint()
            }
        }
    }
}

/// Noise model compiled against a fixed Hamiltonian: eigenstructure and
/// kernel factors resolved once, then each (time, rng) pair yields a state.
struct PreparedSampler {
    kind: SamplerKind,
    hbar: f64,
}

enum SamplerKind {
    /// theta = (t + z sqrt(tau t)) / hbar: covers the global-time picture
    /// and, by the delegation of the fluctuation onto the product
    /// `t / hbar`, the fluctuating-Planck picture as well.
    GaussianTime {
        engine: PhaseEngine,
        tau: f64,
        /// Reject t = 0 (the per-horizon variance law diverges there).
        reject_zero_t: bool,
    },
    Poisson {
        engine: PhaseEngine,
        tau_pl: f64,
    },
    LocalField {
        parts: Vec<CMatrix>,
        /// Lower-triangular factor of the kernel.
        factor: RMatrix,
        /// Fast path when every part is diagonal: per-cell eigenvalues.
        diag_parts: Option<Vec<Vec<f64>>>,
    },
}

impl PreparedSampler {
    fn build(model: &NoiseModel, h: &HamiltonianSpec, units: &UnitsContext) -> Result<Self> {
        model.validate()?;
        units.validate()?;
        let kind = match model {
            NoiseModel::GaussianGlobalTime { tau } => SamplerKind::GaussianTime {
                engine: PhaseEngine::new(h)?,
                tau: *tau,
                reject_zero_t: false,
            },
            NoiseModel::FluctuatingPlanck { tau } => SamplerKind::GaussianTime {
                engine: PhaseEngine::new(h)?,
                tau: *tau,
                reject_zero_t: true,
            },
            NoiseModel::PoissonDiscreteTime { tau_pl } => SamplerKind::Poisson {
                engine: PhaseEngine::new(h)?,
                tau_pl: *tau_pl,
            },
            NoiseModel::GaussianLocalTimeField { kernel, parts } => {
                let factor = kernels::factor_for_sampling(kernel)?;
                let diag_parts = parts
                    .parts()
                    .iter()
                    .map(|p| {
                        let mut off: f64 = 0.0;
                        for i in 0..p.nrows() {
                            for j in 0..p.ncols() {
                                if i != j {
                                    off = off.max(p[(i, j)].norm());
                                }
                            }
                        }
                        if off == 0.0 {
                            Some((0..p.nrows()).map(|i| p[(i, i)].re).collect::<Vec<f64>>())
                        } else {
                            None
                        }
                    })
                    .collect::<Option<Vec<_>>>();
                SamplerKind::LocalField {
                    parts: parts.parts().to_vec(),
                    factor,
                    diag_parts,
                }
            }
        };
        Ok(PreparedSampler {
            kind,
            hbar: units.hbar,
        })
    }

    fn dim(&self) -> usize {
        match &self.kind {
            SamplerKind::GaussianTime { engine, .. } | SamplerKind::Poisson { engine, .. } => {
                match engine {
                    PhaseEngine::Diag(es) => es.len(),
                    PhaseEngine::Eig(eig) => eig.values.len(),
                }
            }
            SamplerKind::LocalField { parts, .. } => parts[0].nrows(),
        }
    }

    /// One realization. Draw order per call is fixed and documented:
    /// Gaussian pictures draw one standard normal; the jump picture draws one
    /// Poisson count (nothing at t = 0 or tau = 0); the local field draws
    /// n_cells standard normals.
    fn sample<R: Rng>(&self, rho0: &CMatrix, t: f64, rng: &mut R) -> Result<CMatrix> {
        match &self.kind {
            SamplerKind::GaussianTime {
                engine,
                tau,
                reject_zero_t,
            } => {
                if *reject_zero_t && t == 0.0 {
                    return Err(Error::InvalidParameter {
                        name: "t",
                        reason:
                            "the fluctuating-Planck variance law is anchored to the horizon and \
                             diverges at t = 0; request a positive time"
                                .into(),
                    });
                }
                let z: f64 = rng.sample(StandardNormal);
                let total_time = t + z * (tau * t).sqrt();
                Ok(engine.conjugate(rho0, total_time / self.hbar))
            }
            SamplerKind::Poisson { engine, tau_pl } => {
                if *tau_pl == 0.0 {
                    // Noiseless limit: continuous unitary evolution.
                    return Ok(engine.conjugate(rho0, t / self.hbar));
                }
                let n = poisson_jump_count(t, *tau_pl, rng);
                Ok(engine.conjugate(rho0, n as f64 * tau_pl / self.hbar))
            }
            SamplerKind::LocalField {
                parts,
                factor,
                diag_parts,
            } => {
                let n_cells = parts.len();
                let sqrt_t = t.sqrt();
                let z: Vec<f64> = (0..n_cells)
                    .map(|_| rng.sample::<f64, _>(StandardNormal))
                    .collect();
                // dt = sqrt(t) L z has covariance kernel * t.
                let mut t_r = vec![t; n_cells];
                for r in 0..n_cells {
                    let mut acc = 0.0;
                    for c in 0..=r {
                        acc += factor[(r, c)] * z[c];
                    }
                    t_r[r] += sqrt_t * acc;
                }
                if let Some(diags) = diag_parts {
                    // All parts diagonal: the sampled generator is diagonal
                    // with entries sum_r E_r[i] t_r.
                    let d = rho0.nrows();
                    let mut es = vec![0.0; d];
                    for (vals, tr) in diags.iter().zip(t_r.iter()) {
                        for i in 0..d {
                            es[i] += vals[i] * tr;
                        }
                    }
                    Ok(quantum::phase_conjugate_diagonal(rho0, &es, 1.0 / self.hbar))
                } else {
                    let d = rho0.nrows();
                    let mut g = CMatrix::zeros(d, d);
                    for (p, tr) in parts.iter().zip(t_r.iter()) {
                        g += p * C64::new(*tr, 0.0);
                    }
                    let u = linalg::unitary_of_hermitian(&g, 1.0 / self.hbar);
                    Ok(&u * rho0 * u.adjoint())
                }
            }
        }
    }
}

/// One noise realization at horizon `t`, as a fully validated state.
/// Deterministic function of the seed.
pub fn sample_state(
    model: &NoiseModel,
    rho0: &DensityMatrix,
    h: &HamiltonianSpec,
    t: f64,
    seed: u64,
    units: &UnitsContext,
) -> Result<DensityMatrix> {
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::InvalidParameter {
            name: "t",
            reason: format!("horizon must be finite and >= 0, got {t}"),
        });
    }
    let sampler = PreparedSampler::build(model, h, units)?;
    if sampler.dim() != rho0.dim() {
        return Err(Error::DimensionMismatch {
            expected: rho0.dim(),
            actual: sampler.dim(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = sampler.sample(rho0.matrix(), t, &mut rng)?;
    DensityMatrix::new(m)
}

/// Per-entry standard errors of an ensemble mean, split by real and
/// imaginary component.
#[derive(Debug, Clone, PartialEq)]
pub struct StdError {
    pub re: RMatrix,
    pub im: RMatrix,
}

/// Mean of many sampled trajectories over a common time list.
#[derive(Debug, Clone)]
pub struct EnsembleResult {
    pub times: Vec<f64>,
    pub mean_state: Vec<DensityMatrix>,
    pub n_traj: usize,
    pub std_error: Vec<StdError>,
}

/// Kahan-compensated accumulator over complex matrices.
struct KahanMatrix {
    sum: CMatrix,
    comp: CMatrix,
}

impl KahanMatrix {
    fn zeros(r: usize, c: usize) -> Self {
        KahanMatrix {
            sum: CMatrix::zeros(r, c),
            comp: CMatrix::zeros(r, c),
        }
    }

    fn add(&mut self, m: &CMatrix) {
        for i in 0..self.sum.nrows() {
            for j in 0..self.sum.ncols() {
                let y = m[(i, j)] - self.comp[(i, j)];
                let t = self.sum[(i, j)] + y;
                self.comp[(i, j)] = (t - self.sum[(i, j)]) - y;
                self.sum[(i, j)] = t;
            }
        }
    }
}

/// Averages `n_traj` independent realizations of the model at each requested
/// time. The reduction is chunked with a fixed layout and compensated
/// summation, so the result is bit-identical for a given seed no matter how
/// the chunks are scheduled across threads.
pub fn ensemble_average(
    model: &NoiseModel,
    rho0: &DensityMatrix,
    h: &HamiltonianSpec,
    times: &[f64],
    n_traj: usize,
    seed: u64,
    units: &UnitsContext,
) -> Result<EnsembleResult> {
    if n_traj < 2 {
        return Err(Error::InvalidParameter {
            name: "n_traj",
            reason: format!("ensemble needs at least 2 trajectories, got {n_traj}"),
        });
    }
    if times.is_empty() {
        return Err(Error::InvalidParameter {
            name: "times",
            reason: "at least one sample time required".into(),
        });
    }
    for t in times {
        if !(t.is_finite() && *t >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "times",
                reason: format!("sample times must be finite and >= 0, got {t}"),
            });
        }
    }
    let sampler = PreparedSampler::build(model, h, units)?;
    let d = rho0.dim();
    if sampler.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: sampler.dim(),
        });
    }

    let chunks: Vec<(usize, usize)> = (0..n_traj)
        .step_by(CHUNK)
        .map(|start| (start, (start + CHUNK).min(n_traj)))
        .collect();

    // A trajectory visits the requested times in order with one generator;
    // regenerating it in the second pass avoids storing every sample.
    let run_trajectory = |k: usize| -> Result<Vec<CMatrix>> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_trajectory_seed(seed, k as u64));
        times
            .iter()
            .map(|t| sampler.sample(rho0.matrix(), *t, &mut rng))
            .collect()
    };

    // Pass 1: mean.
    let partials: Vec<Result<Vec<KahanMatrix>>> = chunks
        .par_iter()
        .map(|(start, end)| {
            let mut acc: Vec<KahanMatrix> =
                times.iter().map(|_| KahanMatrix::zeros(d, d)).collect();
            for k in *start..*end {
                let states = run_trajectory(k)?;
                for (a, s) in acc.iter_mut().zip(states.iter()) {
                    a.add(s);
                }
            }
            Ok(acc)
        })
        .collect();
    let mut total: Vec<KahanMatrix> = times.iter().map(|_| KahanMatrix::zeros(d, d)).collect();
    for partial in partials {
        let partial = partial?;
        for (tot, p) in total.iter_mut().zip(partial.iter()) {
            tot.add(&p.sum);
        }
    }
    let inv_n = 1.0 / n_traj as f64;
    let means: Vec<CMatrix> = total
        .iter()
        .map(|k| &k.sum * C64::new(inv_n, 0.0))
        .collect();

    // Pass 2: per-entry component variances about the mean.
    let sq_partials: Vec<Result<Vec<(RMatrix, RMatrix)>>> = chunks
        .par_iter()
        .map(|(start, end)| {
            let mut acc: Vec<(RMatrix, RMatrix)> = times
                .iter()
                .map(|_| (RMatrix::zeros(d, d), RMatrix::zeros(d, d)))
                .collect();
            for k in *start..*end {
                let states = run_trajectory(k)?;
                for ((sr, si), (s, mean)) in
                    acc.iter_mut().zip(states.iter().zip(means.iter()))
                {
                    for i in 0..d {
                        for j in 0..d {
                            let dv = s[(i, j)] - mean[(i, j)];
                            sr[(i, j)] += dv.re * dv.re;
                            si[(i, j)] += dv.im * dv.im;
                        }
                    }
                }
            }
            Ok(acc)
        })
        .collect();
    let mut sq_total: Vec<(RMatrix, RMatrix)> = times
        .iter()
        .map(|_| (RMatrix::zeros(d, d), RMatrix::zeros(d, d)))
        .collect();
    for partial in sq_partials {
        let partial = partial?;
        for ((tr, ti), (pr, pi)) in sq_total.iter_mut().zip(partial.iter()) {
            *tr += pr;
            *ti += pi;
        }
    }
    let denom = (n_traj as f64 - 1.0) * n_traj as f64;
    let std_error: Vec<StdError> = sq_total
        .iter()
        .map(|(sr, si)| StdError {
            re: sr.map(|v| (v / denom).sqrt()),
            im: si.map(|v| (v / denom).sqrt()),
        })
        .collect();

    let mean_state = means
        .into_iter()
        .map(DensityMatrix::new)
        .collect::<Result<Vec<_>>>()?;
    Ok(EnsembleResult {
        times: times.to_vec(),
        mean_state,
        n_traj,
        std_error,
    })
}

/// Per-time per-entry z-scores of an ensemble against a deterministic
/// trajectory.
#[derive(Debug, Clone)]
pub struct ZTable {
    /// Largest z-score over all times, entries, and components.
    pub max_z: f64,
    /// Per ensemble time, the per-entry maximum of the component z-scores.
    pub per_time: Vec<RMatrix>,
}

/// Compares an ensemble mean to a master-equation trajectory entry by entry:
/// `z = |mean - master| / max(std_error, floor)` per component. The master
/// grid may be denser; every ensemble time must match a master time to
/// within 1e-9 relative.
pub fn compare_to_master(ens: &EnsembleResult, traj: &Trajectory) -> Result<ZTable> {
    let d = ens
        .mean_state
        .first()
        .map(|s| s.dim())
        .ok_or(Error::GridMismatch)?;
    let d_master = traj.states.first().map(|s| s.dim()).unwrap_or(0);
    if d != d_master {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: d_master,
        });
    }
    let mut max_z: f64 = 0.0;
    let mut per_time = Vec::with_capacity(ens.times.len());
    for (ti, t) in ens.times.iter().enumerate() {
        let master_idx = traj
            .times
            .iter()
            .position(|mt| {
                let scale = t.abs().max(mt.abs()).max(f64::MIN_POSITIVE);
                (mt - t).abs() <= 1e-9 * scale || (mt - t).abs() == 0.0
            })
            .ok_or(Error::GridMismatch)?;
        let mean = ens.mean_state[ti].matrix();
        let master = traj.states[master_idx].matrix();
        let se = &ens.std_error[ti];
        let mut zm = RMatrix::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                let dv = mean[(i, j)] - master[(i, j)];
                let z_re = dv.re.abs() / se.re[(i, j)].max(Z_SCORE_SE_FLOOR);
                let z_im = dv.im.abs() / se.im[(i, j)].max(Z_SCORE_SE_FLOOR);
                let z = z_re.max(z_im);
                zm[(i, j)] = z;
                max_z = max_z.max(z);
            }
        }
        per_time.push(zm);
    }
    Ok(ZTable { max_z, per_time })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::global_kernel;
    use crate::master::{integrate, EvolutionModel};
    use crate::quantum::{make_superposition, unitary_evolve, SuperpositionSpec};
    use approx::assert_relative_eq;

    fn units() -> UnitsContext {
        UnitsContext::default()
    }

    fn two_level() -> (DensityMatrix, HamiltonianSpec, f64) {
        let de = 1.0e-19;
        let (rho, h) = make_superposition(&SuperpositionSpec::balanced(de)).unwrap();
        (rho, h, de)
    }

    #[test]
    fn noiseless_models_reduce_to_unitary_evolution() {
        let u = units();
        let (rho, h, de) = two_level();
        let t = 7.3 * u.hbar / de;
        let exact = unitary_evolve(&rho, &h, t, &u).unwrap();
        for model in [
            NoiseModel::GaussianGlobalTime { tau: 0.0 },
            NoiseModel::PoissonDiscreteTime { tau_pl: 0.0 },
        ] {
            let s = sample_state(&model, &rho, &h, t, 42, &u).unwrap();
            let err = linalg::max_abs(&(s.matrix() - exact.matrix()));
            assert!(err < 1e-14, "{model:?}: {err:e}");
        }
        // Local field with a zero kernel.
        let parts = LocalHamiltonian::new(vec![h.to_dense()]).unwrap();
        let kernel = global_kernel(1, 0.0).unwrap();
        let model = NoiseModel::GaussianLocalTimeField { kernel, parts };
        let s = sample_state(&model, &rho, &h, t, 42, &u).unwrap();
        assert!(linalg::max_abs(&(s.matrix() - exact.matrix())) < 1e-12);
    }

    #[test]
    fn same_seed_is_bitwise_reproducible() {
        let u = units();
        let (rho, h, de) = two_level();
        let model = NoiseModel::GaussianGlobalTime { tau: 1.0e-16 };
        let t = 3.0 * u.hbar / de;
        let a = sample_state(&model, &rho, &h, t, 7, &u).unwrap();
        let b = sample_state(&model, &rho, &h, t, 7, &u).unwrap();
        assert_eq!(a.matrix(), b.matrix());
        let c = sample_state(&model, &rho, &h, t, 8, &u).unwrap();
        assert_ne!(a.matrix(), c.matrix());
    }

    #[test]
    fn fluctuating_planck_rejects_zero_horizon() {
        let u = units();
        let (rho, h, _) = two_level();
        let model = NoiseModel::FluctuatingPlanck { tau: 1.0e-16 };
        assert!(sample_state(&model, &rho, &h, 0.0, 1, &u).is_err());
    }

    #[test]
    fn poisson_jump_counts_have_the_right_mean() {
        let tau_pl = 2.0e-17;
        let t = 10.0 * tau_pl;
        let n_seeds = 10_000usize;
        let mut total = 0u64;
        for k in 0..n_seeds {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_trajectory_seed(99, k as u64));
            total += poisson_jump_count(t, tau_pl, &mut rng);
        }
        let mean = total as f64 / n_seeds as f64;
        let bound = 3.0 * (10.0f64 / n_seeds as f64).sqrt();
        assert!(
            (mean - 10.0).abs() < bound,
            "empirical mean {mean} outside 10 +- {bound}"
        );
    }

    #[test]
    fn sampled_states_are_valid_density_matrices() {
        let u = units();
        let (rho, h, de) = two_level();
        let t = 2.0 * u.hbar / de;
        let models = [
            NoiseModel::GaussianGlobalTime { tau: 1.0e-15 },
            NoiseModel::PoissonDiscreteTime { tau_pl: 0.2 * t },
            NoiseModel::FluctuatingPlanck { tau: 1.0e-15 },
        ];
        for model in models {
            for seed in 0..20 {
                // Construction already validates; unwrap is the assertion.
                let s = sample_state(&model, &rho, &h, t, seed, &u).unwrap();
                assert_relative_eq!(s.matrix().trace().re, 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn gaussian_ensemble_matches_the_characteristic_function() {
        let u = units();
        let (rho, h, de) = two_level();
        // tau dE^2 t / 2 hbar^2 = 1 at the chosen horizon.
        let t = 5.0 * u.hbar / de;
        let tau = 2.0 * u.hbar * u.hbar / (de * de * t);
        let model = NoiseModel::GaussianGlobalTime { tau };
        let ens = ensemble_average(&model, &rho, &h, &[t], 4000, 11, &u).unwrap();
        let expect = 0.5 * (-1.0f64).exp();
        let got = ens.mean_state[0].entry(0, 1).norm();
        let se = ens.std_error[0].re[(0, 1)].hypot(ens.std_error[0].im[(0, 1)]);
        assert!(
            (got - expect).abs() < 3.0 * se,
            "|mean offdiag| {got} vs {expect} (3 se = {})",
            3.0 * se
        );
    }

    #[test]
    fn ensemble_mean_of_noiseless_model_is_exact() {
        let u = units();
        let (rho, h, de) = two_level();
        let t = 1.5 * u.hbar / de;
        let model = NoiseModel::GaussianGlobalTime { tau: 0.0 };
        let ens = ensemble_average(&model, &rho, &h, &[0.0, t], 16, 5, &u).unwrap();
        let exact = unitary_evolve(&rho, &h, t, &u).unwrap();
        let err = linalg::max_abs(&(ens.mean_state[1].matrix() - exact.matrix()));
        assert!(err < 1e-13);
        // Zero sampling scatter.
        assert!(linalg::max_abs_real(&ens.std_error[1].re) < 1e-16);
    }

    #[test]
    fn ensemble_result_is_schedule_independent() {
        let u = units();
        let (rho, h, de) = two_level();
        let t = 2.0 * u.hbar / de;
        let tau = 0.3 * u.hbar / de;
        let model = NoiseModel::GaussianGlobalTime { tau };
        let times = [0.5 * t, t];
        let a = ensemble_average(&model, &rho, &h, &times, 300, 123, &u).unwrap();
        // Re-run on a throttled pool: chunk layout and summation order are
        // fixed, so the bits must match.
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let b = pool
            .install(|| ensemble_average(&model, &rho, &h, &times, 300, 123, &u))
            .unwrap();
        for (sa, sb) in a.mean_state.iter().zip(b.mean_state.iter()) {
            assert_eq!(sa.matrix(), sb.matrix());
        }
        for (ea, eb) in a.std_error.iter().zip(b.std_error.iter()) {
            assert_eq!(ea.re, eb.re);
            assert_eq!(ea.im, eb.im);
        }
    }

    #[test]
    fn quadrupling_trajectories_halves_the_standard_error() {
        let u = units();
        let (rho, h, de) = two_level();
        let t = 4.0 * u.hbar / de;
        let tau = 0.5 * u.hbar * u.hbar / (de * de * t);
        let model = NoiseModel::GaussianGlobalTime { tau };
        let small = ensemble_average(&model, &rho, &h, &[t], 2000, 77, &u).unwrap();
        let large = ensemble_average(&model, &rho, &h, &[t], 8000, 78, &u).unwrap();
        let se_small = small.std_error[0].re[(0, 1)];
        let se_large = large.std_error[0].re[(0, 1)];
        let ratio = se_small / se_large;
        assert!(
            (ratio - 2.0).abs() < 0.4,
            "expected ~2x shrink, got {ratio}"
        );
    }

    #[test]
    fn compare_to_master_is_zero_against_itself() {
        let u = units();
        let (rho, _, _) = two_level();
        // Stationary pointer model: degenerate energies, zero rates. Both
        // the integrated trajectory and every noiseless sample are bitwise
        // rho0, so the comparison is exactly zero.
        let h = HamiltonianSpec::Diagonal(vec![0.0, 0.0]);
        let t_final = 1.0e-12;
        let model_det = EvolutionModel::DiosiPenrosePointer {
            rates: RMatrix::zeros(2, 2),
            h_diag: h.clone(),
        };
        let traj = integrate(&model_det, &rho, t_final, 16, &u).unwrap();
        let sample_times: Vec<f64> = (0..=4).map(|k| k as f64 * t_final / 4.0).collect();
        let ens = ensemble_average(
            &NoiseModel::GaussianGlobalTime { tau: 0.0 },
            &rho,
            &h,
            &sample_times,
            8,
            3,
            &u,
        )
        .unwrap();
        let table = compare_to_master(&ens, &traj).unwrap();
        assert_eq!(table.max_z, 0.0);
        assert_eq!(table.per_time.len(), 5);
    }

    #[test]
    fn compare_to_master_on_a_fine_unitary_grid_stays_small() {
        let u = units();
        let (rho, h, de) = two_level();
        // Noiseless ensemble vs a finely integrated tau = 0 master run: the
        // only discrepancy is the integrator's own phase error, which the
        // z-score floor keeps at order unity.
        let t_final = 4.0 * u.hbar / de;
        let model_det = EvolutionModel::GlobalDoubleCommutator {
            h: h.clone(),
            tau: 0.0,
        };
        let traj = integrate(&model_det, &rho, t_final, 4096, &u).unwrap();
        let sample_times: Vec<f64> = (0..=4).map(|k| k as f64 * t_final / 4.0).collect();
        let ens = ensemble_average(
            &NoiseModel::GaussianGlobalTime { tau: 0.0 },
            &rho,
            &h,
            &sample_times,
            8,
            3,
            &u,
        )
        .unwrap();
        let table = compare_to_master(&ens, &traj).unwrap();
        assert!(table.max_z < 5.0, "max_z = {}", table.max_z);
    }

    #[test]
    fn compare_to_master_rejects_mismatched_grids() {
        let u = units();
        let (rho, h, de) = two_level();
        let t_final = 2.0 * u.hbar / de;
        let model_det = EvolutionModel::GlobalDoubleCommutator {
            h: h.clone(),
            tau: 0.0,
        };
        let traj = integrate(&model_det, &rho, t_final, 10, &u).unwrap();
        let ens = ensemble_average(
            &NoiseModel::GaussianGlobalTime { tau: 0.0 },
            &rho,
            &h,
            &[t_final * 0.137],
            4,
            1,
            &u,
        )
        .unwrap();
        assert!(matches!(
            compare_to_master(&ens, &traj),
            Err(Error::GridMismatch)
        ));
    }

    #[test]
    fn local_field_with_global_kernel_matches_global_time_in_distribution() {
        let u = units();
        let (rho, h, de) = two_level();
        let t = 3.0 * u.hbar / de;
        let tau = u.hbar * u.hbar / (de * de * t);
        // Split H into two commuting halves.
        let h_half = HamiltonianSpec::Diagonal(vec![0.25e-19, -0.25e-19]).to_dense();
        let parts = LocalHamiltonian::new(vec![h_half.clone(), h_half]).unwrap();
        let kernel = global_kernel(2, tau).unwrap();
        let local = NoiseModel::GaussianLocalTimeField { kernel, parts };
        let global = NoiseModel::GaussianGlobalTime { tau };
        let n = 4000;
        let e1 = ensemble_average(&local, &rho, &h, &[t], n, 21, &u).unwrap();
        let e2 = ensemble_average(&global, &rho, &h, &[t], n, 22, &u).unwrap();
        let m1 = e1.mean_state[0].entry(0, 1);
        let m2 = e2.mean_state[0].entry(0, 1);
        for (d1, s1, s2) in [
            (m1.re - m2.re, e1.std_error[0].re[(0, 1)], e2.std_error[0].re[(0, 1)]),
            (m1.im - m2.im, e1.std_error[0].im[(0, 1)], e2.std_error[0].im[(0, 1)]),
        ] {
            let combined = (s1 * s1 + s2 * s2).sqrt();
            assert!(
                d1.abs() <= 3.0 * combined,
                "two-sample deviation {d1:e} vs 3 x combined SE {:e}",
                3.0 * combined
            );
        }
    }

    #[test]
    fn planck_and_global_time_pictures_coincide_in_distribution() {
        let u = units();
        let (rho, h, de) = two_level();
        let t = 2.5 * u.hbar / de;
        let tau = 0.8 * u.hbar * u.hbar / (de * de * t);
        let n = 4000;
        let e1 = ensemble_average(
            &NoiseModel::FluctuatingPlanck { tau },
            &rho,
            &h,
            &[t],
            n,
            31,
            &u,
        )
        .unwrap();
        let e2 = ensemble_average(
            &NoiseModel::GaussianGlobalTime { tau },
            &rho,
            &h,
            &[t],
            n,
            32,
            &u,
        )
        .unwrap();
        let m1 = e1.mean_state[0].entry(0, 1);
        let m2 = e2.mean_state[0].entry(0, 1);
        let se = (e1.std_error[0].re[(0, 1)].powi(2) + e2.std_error[0].re[(0, 1)].powi(2)).sqrt();
        assert!((m1.re - m2.re).abs() <= 3.0 * se);
        let se = (e1.std_error[0].im[(0, 1)].powi(2) + e2.std_error[0].im[(0, 1)].powi(2)).sqrt();
        assert!((m1.im - m2.im).abs() <= 3.0 * se);
    }

    #[test]
    fn seed_derivation_decorrelates_neighbors() {
        let a = derive_trajectory_seed(0, 0);
        let b = derive_trajectory_seed(0, 1);
        let c = derive_trajectory_seed(1, 0);
        assert_ne!(a, b);
        assert_ne!(a, c);
        // Hamming distance between neighboring streams should be substantial.
        assert!((a ^ b).count_ones() > 10);
    }

    #[test]
    fn ensemble_rejects_degenerate_requests() {
        let u = units();
        let (rho, h, _) = two_level();
        let model = NoiseModel::GaussianGlobalTime { tau: 0.0 };
        assert!(ensemble_average(&model, &rho, &h, &[1.0e-15], 1, 0, &u).is_err());
        assert!(ensemble_average(&model, &rho, &h, &[], 4, 0, &u).is_err());
        assert!(ensemble_average(&model, &rho, &h, &[-1.0], 4, 0, &u).is_err());
    }
}

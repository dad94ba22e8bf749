//! Spatial correlation kernels for locally fluctuating time.
//!
//! The local decoherence model is parameterized by a matrix of correlation
//! times `tau[r][r']` between spatial cells. This module builds the three
//! kernel families used throughout the crate — fully correlated (global),
//! uncorrelated (diagonal), and the gravitational kernel proportional to a
//! smeared Coulomb potential between cell centers — and provides the
//! positive-semidefiniteness validation and factoring needed to sample
//! correlated Gaussian fields from them.

use crate::error::{Error, Result};
use crate::linalg::{self, RMatrix};
use crate::units::UnitsContext;

/// Default cap on the total number of grid cells.
pub const DEFAULT_CELL_CAP: usize = 32_768;
/// Relative symmetry tolerance for kernel matrices.
pub const KERNEL_SYMMETRY_TOL: f64 = 1e-15;
/// Relative PSD tolerance: smallest eigenvalue must be >= -tol * largest.
pub const KERNEL_PSD_TOL: f64 = 1e-10;
/// Relative round-trip tolerance for the sampling factor.
pub const FACTOR_ROUNDTRIP_TOL: f64 = 1e-10;

/// Regular 3D grid of cubic cells identified by their centers.
#[derive(Debug, Clone, PartialEq)]
pub struct CellGrid {
    origin: [f64; 3],
    spacing: f64,
    dims: [usize; 3],
    cap: usize,
}

impl CellGrid {
    /// Grid with the default cell cap.
    pub fn new(origin: [f64; 3], spacing: f64, dims: [usize; 3]) -> Result<Self> {
        Self::with_cap(origin, spacing, dims, DEFAULT_CELL_CAP)
    }

    /// Grid with an explicit cap on the total number of cells.
    pub fn with_cap(
        origin: [f64; 3],
        spacing: f64,
        dims: [usize; 3],
        cap: usize,
    ) -> Result<Self> {
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(Error::InvalidParameter {
                name: "spacing",
                reason: format!("cell spacing must be finite and > 0, got {spacing}"),
            });
        }
        if origin.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "origin",
                reason: "origin coordinates must be finite".into(),
            });
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidParameter {
                name: "dims",
                reason: "each axis needs at least one cell".into(),
            });
        }
        let cells = dims[0]
            .checked_mul(dims[1])
            .and_then(|c| c.checked_mul(dims[2]))
            .ok_or(Error::GridTooLarge {
                cells: usize::MAX,
                cap,
            })?;
        if cells > cap {
            return Err(Error::GridTooLarge { cells, cap });
        }
        Ok(CellGrid {
            origin,
            spacing,
            dims,
            cap,
        })
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn n_cells(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing.powi(3)
    }

    /// Linear index of cell (i, j, k), x fastest.
    pub fn linear_index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    /// Center of the cell with the given linear index.
    pub fn center(&self, idx: usize) -> [f64; 3] {
        let i = idx % self.dims[0];
        let j = (idx / self.dims[0]) % self.dims[1];
        let k = idx / (self.dims[0] * self.dims[1]);
        [
            self.origin[0] + (i as f64 + 0.5) * self.spacing,
            self.origin[1] + (j as f64 + 0.5) * self.spacing,
            self.origin[2] + (k as f64 + 0.5) * self.spacing,
        ]
    }

    /// All cell centers in linear-index order.
    pub fn centers(&self) -> Vec<[f64; 3]> {
        (0..self.n_cells()).map(|idx| self.center(idx)).collect()
    }
}

/// Which family a correlation kernel belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelVariant {
    Global,
    Diagonal,
    Newtonian,
}

/// Symmetric PSD matrix of correlation times (seconds) between cells.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationKernel {
    n_cells: usize,
    matrix: RMatrix,
    variant: KernelVariant,
}

/// Parameters of the gravitational correlation kernel: smearing width and the
/// dimensionless order-unity prefactor left free by the model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonianNoiseSpec {
    /// Gaussian smearing width (m); also the short-length cutoff.
    pub sigma: f64,
    /// Dimensionless prefactor multiplying G hbar / c^4.
    pub prefactor: f64,
}

impl Default for NewtonianNoiseSpec {
    fn default() -> Self {
        NewtonianNoiseSpec {
            sigma: 1.0e-7,
            prefactor: 1.0,
        }
    }
}

impl NewtonianNoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::InvalidParameter {
                name: "sigma",
                reason: format!("smearing width must be finite and > 0, got {}", self.sigma),
            });
        }
        if !(self.prefactor.is_finite() && self.prefactor >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "prefactor",
                reason: format!("prefactor must be finite and >= 0, got {}", self.prefactor),
            });
        }
        Ok(())
    }
}

/// Smeared Coulomb kernel K_sigma(d) = erf(d / 2 sigma) / d, continued to
/// K_sigma(0) = 1 / (sigma sqrt(pi)). Units 1/m.
pub fn smeared_coulomb(d: f64, sigma: f64) -> f64 {
    let x = d / (2.0 * sigma);
    if x < 1.0e-6 {
        // erf(x)/x = (2/sqrt(pi)) (1 - x^2/3 + x^4/10 - ...)
        let series = 1.0 - x * x / 3.0 + x.powi(4) / 10.0;
        series / (sigma * std::f64::consts::PI.sqrt())
    } else {
        libm::erf(x) / d
    }
}

impl CorrelationKernel {
    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn matrix(&self) -> &RMatrix {
        &self.matrix
    }

    pub fn variant(&self) -> KernelVariant {
        self.variant
    }

    pub fn entry(&self, r: usize, rp: usize) -> f64 {
        self.matrix[(r, rp)]
    }

    #[cfg(test)]
    pub(crate) fn matrix_mut_for_tests(&mut self) -> &mut RMatrix {
        &mut self.matrix
    }

    /// max |tau[r][r'] - tau[r'][r]|.
    pub fn symmetry_residual(&self) -> f64 {
        let mut res: f64 = 0.0;
        for r in 0..self.n_cells {
            for rp in (r + 1)..self.n_cells {
                res = res.max((self.matrix[(r, rp)] - self.matrix[(rp, r)]).abs());
            }
        }
        res
    }

    fn check_symmetry(&self) -> Result<()> {
        let res = self.symmetry_residual();
        let scale = linalg::max_abs_real(&self.matrix);
        if res > KERNEL_SYMMETRY_TOL * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::AsymmetricKernel { residual: res });
        }
        Ok(())
    }
}

/// Fully correlated kernel: every entry equals `tau`, so all cells share one
/// and the same time fluctuation and the local model reduces to the global
/// one driven by the total Hamiltonian.
pub fn global_kernel(n_cells: usize, tau: f64) -> Result<CorrelationKernel> {
    if n_cells == 0 {
        return Err(Error::InvalidParameter {
            name: "n_cells",
            reason: "kernel needs at least one cell".into(),
        });
    }
    if !(tau.is_finite() && tau >= 0.0) {
        return Err(Error::InvalidParameter {
            name: "tau",
            reason: format!("correlation time must be finite and >= 0, got {tau}"),
        });
    }
    Ok(CorrelationKernel {
        n_cells,
        matrix: RMatrix::from_element(n_cells, n_cells, tau),
        variant: KernelVariant::Global,
    })
}

/// Uncorrelated kernel diag(taus): each cell fluctuates independently.
pub fn diagonal_kernel(taus: &[f64]) -> Result<CorrelationKernel> {
    if taus.is_empty() {
        return Err(Error::InvalidParameter {
            name: "taus",
            reason: "kernel needs at least one cell".into(),
        });
    }
    if taus.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
        return Err(Error::InvalidParameter {
            name: "taus",
            reason: "correlation times must be finite and >= 0".into(),
        });
    }
    let n = taus.len();
    let mut m = RMatrix::zeros(n, n);
    for (i, t) in taus.iter().enumerate() {
        m[(i, i)] = *t;
    }
    Ok(CorrelationKernel {
        n_cells: n,
        matrix: m,
        variant: KernelVariant::Diagonal,
    })
}

/// Gravitational kernel tau[r][r'] = const * G hbar / c^4 * K_sigma(|r_r - r_r'|)
/// between cell centers: the universal, matter-independent correlation of a
/// fluctuating Newton potential with short-length cutoff sigma.
pub fn newtonian_kernel(
    grid: &CellGrid,
    spec: &NewtonianNoiseSpec,
    units: &UnitsContext,
) -> Result<CorrelationKernel> {
    spec.validate()?;
    units.validate()?;
    let amp = spec.prefactor * units.g_newton * units.hbar / units.c.powi(4);
    let centers = grid.centers();
    let n = centers.len();
    let mut m = RMatrix::zeros(n, n);
    for r in 0..n {
        for rp in r..n {
            let d = dist(&centers[r], &centers[rp]);
            let v = amp * smeared_coulomb(d, spec.sigma);
            m[(r, rp)] = v;
            m[(rp, r)] = v;
        }
    }
    Ok(CorrelationKernel {
        n_cells: n,
        matrix: m,
        variant: KernelVariant::Newtonian,
    })
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Checks symmetry and returns the smallest eigenvalue; the caller decides
/// whether it is acceptably close to zero.
pub fn validate_psd(k: &CorrelationKernel) -> Result<f64> {
    k.check_symmetry()?;
    let eigs = linalg::eigvals_symmetric(&k.matrix);
    Ok(eigs[0])
}

/// Lower-triangular L with L L^T = k, for drawing correlated Gaussian fields
/// as L z with z standard normal. Semidefinite directions (pivots within
/// tolerance of zero, e.g. the exactly rank-1 global kernel) produce zero
/// columns; genuinely negative curvature is an error.
pub fn factor_for_sampling(k: &CorrelationKernel) -> Result<RMatrix> {
    k.check_symmetry()?;
    let n = k.n_cells;
    let eigs = linalg::eigvals_symmetric(&k.matrix);
    let lam_min = eigs[0];
    let lam_max = eigs[n - 1].max(0.0);
    if lam_min < -KERNEL_PSD_TOL * lam_max.max(f64::MIN_POSITIVE) {
        return Err(Error::NotPsd {
            min_eig: lam_min,
            tol: KERNEL_PSD_TOL * lam_max,
        });
    }
    let clamp = KERNEL_PSD_TOL * lam_max;
    let mut l = RMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = k.matrix[(j, j)];
        for m in 0..j {
            d -= l[(j, m)] * l[(j, m)];
        }
        if d <= clamp {
            // Semidefinite direction: the whole residual column vanishes up
            // to roundoff, so record it as exactly zero.
            continue;
        }
        let dj = d.sqrt();
        l[(j, j)] = dj;
        for i in (j + 1)..n {
            let mut v = k.matrix[(i, j)];
            for m in 0..j {
                v -= l[(i, m)] * l[(j, m)];
            }
            l[(i, j)] = v / dj;
        }
    }
    let recon_err = {
        let recon = &l * l.transpose();
        linalg::max_abs_real(&(&recon - &k.matrix))
    };
    let scale = linalg::max_abs_real(&k.matrix).max(f64::MIN_POSITIVE);
    if recon_err > FACTOR_ROUNDTRIP_TOL * scale {
        return Err(Error::ConsistencyCheck {
            what: "sampling factor round-trip",
            residual: recon_err,
            tol: FACTOR_ROUNDTRIP_TOL * scale,
        });
    }
    Ok(l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn grid_rejects_bad_parameters() {
        assert!(CellGrid::new([0.0; 3], 0.0, [2, 2, 2]).is_err());
        assert!(CellGrid::new([0.0; 3], 1.0, [0, 2, 2]).is_err());
        assert!(matches!(
            CellGrid::new([0.0; 3], 1.0, [40, 40, 40]),
            Err(Error::GridTooLarge { cells: 64000, cap: 32768 })
        ));
        // A raised cap admits the same grid.
        assert!(CellGrid::with_cap([0.0; 3], 1.0, [40, 40, 40], 100_000).is_ok());
    }

    #[test]
    fn grid_centers_are_cell_midpoints() {
        let g = CellGrid::new([1.0, 2.0, 3.0], 0.5, [2, 3, 4]).unwrap();
        assert_eq!(g.n_cells(), 24);
        assert_relative_eq!(g.cell_volume(), 0.125, epsilon = 1e-15);
        assert_eq!(g.center(0), [1.25, 2.25, 3.25]);
        let idx = g.linear_index(1, 2, 3);
        assert_eq!(idx, 1 + 2 * (2 + 3 * 3));
        assert_eq!(g.center(idx), [1.0 + 1.5 * 0.5, 2.0 + 2.5 * 0.5, 3.0 + 3.5 * 0.5]);
    }

    #[test]
    fn global_kernel_matches_its_definition() {
        let u = UnitsContext::default();
        let k = global_kernel(1, u.tau_planck).unwrap();
        assert_eq!(k.entry(0, 0), u.tau_planck);

        let k = global_kernel(3, 2.0).unwrap();
        for r in 0..3 {
            for rp in 0..3 {
                assert_eq!(k.entry(r, rp), 2.0);
            }
        }
        // Rank 1: eigenvalues (0, 0, 6).
        let eigs = linalg::eigvals_symmetric(k.matrix());
        assert!(eigs[0].abs() < 1e-14 && eigs[1].abs() < 1e-14);
        assert_relative_eq!(eigs[2], 6.0, epsilon = 1e-12);
        assert!(validate_psd(&k).unwrap() > -1e-14);

        let k = global_kernel(4, 0.0).unwrap();
        assert_eq!(linalg::max_abs_real(k.matrix()), 0.0);

        assert!(global_kernel(3, -1.0).is_err());
    }

    #[test]
    fn newtonian_kernel_limits() {
        let u = UnitsContext::default();
        let amp = u.g_newton * u.hbar / u.c.powi(4);
        let sigma = 1.0e-7;
        let spec = NewtonianNoiseSpec {
            sigma,
            prefactor: 1.0,
        };
        // Two far-separated cells: off-diagonal ~ amp / d.
        let d = 5.0e-6; // 50 sigma
        let g = CellGrid::new([0.0; 3], d, [2, 1, 1]).unwrap();
        let k = newtonian_kernel(&g, &spec, &u).unwrap();
        assert_relative_eq!(k.entry(0, 1), amp / d, max_relative = 1e-12);
        // Diagonal: amp / (sigma sqrt(pi)).
        assert_relative_eq!(
            k.entry(0, 0),
            amp / (sigma * std::f64::consts::PI.sqrt()),
            max_relative = 1e-12
        );
        assert_eq!(k.entry(0, 1), k.entry(1, 0));
    }

    #[test]
    fn smeared_coulomb_is_continuous_at_zero() {
        let sigma = 3.0e-7;
        let k0 = smeared_coulomb(0.0, sigma);
        assert_relative_eq!(k0, 1.0 / (sigma * std::f64::consts::PI.sqrt()), epsilon = 1e-15);
        // Numerical limit from small but nonzero separations: the deviation
        // is the quadratic series term x^2/3 with x = d / 2 sigma, so it
        // shrinks to below 1e-9 once x <= 1e-4 and the value converges to k0.
        for x in [1.0e-2, 1.0e-3, 1.0e-4, 1.0e-5] {
            let d = 2.0 * sigma * x;
            let dev = (smeared_coulomb(d, sigma) - k0).abs() / k0;
            assert_relative_eq!(dev, x * x / 3.0, max_relative = 1e-3);
        }
        assert_relative_eq!(smeared_coulomb(2.0 * sigma * 1.0e-5, sigma), k0, max_relative = 1e-9);
        // Branch agreement where the series hands over to erf.
        let d_switch = 2.0 * sigma * 1.0e-6;
        assert_relative_eq!(
            smeared_coulomb(d_switch * 0.999, sigma),
            libm::erf(d_switch * 0.999 / (2.0 * sigma)) / (d_switch * 0.999),
            max_relative = 1e-12
        );
    }

    #[test]
    fn smeared_coulomb_decreases_with_distance() {
        let sigma = 1.0e-7;
        let mut prev = smeared_coulomb(0.0, sigma);
        for i in 1..200 {
            let d = i as f64 * 2.0e-8;
            let v = smeared_coulomb(d, sigma);
            assert!(v <= prev, "kernel must not increase with distance");
            prev = v;
        }
    }

    #[test]
    fn newtonian_kernel_is_translation_invariant() {
        let u = UnitsContext::default();
        let spec = NewtonianNoiseSpec::default();
        let a = 2.0e-7;
        let g1 = CellGrid::new([0.0; 3], a, [2, 2, 1]).unwrap();
        let g2 = CellGrid::new([3.0 * a, -2.0 * a, a], a, [2, 2, 1]).unwrap();
        let k1 = newtonian_kernel(&g1, &spec, &u).unwrap();
        let k2 = newtonian_kernel(&g2, &spec, &u).unwrap();
        assert!(linalg::max_abs_real(&(k1.matrix() - k2.matrix())) < 1e-12 * k1.entry(0, 0));
    }

    #[test]
    fn newtonian_line_grid_is_psd() {
        let u = UnitsContext::default();
        let spec = NewtonianNoiseSpec::default();
        let g = CellGrid::new([0.0; 3], 1.5e-7, [8, 1, 1]).unwrap();
        let k = newtonian_kernel(&g, &spec, &u).unwrap();
        let min_eig = validate_psd(&k).unwrap();
        assert!(min_eig >= 0.0, "smallest eigenvalue {min_eig:e} must be >= 0");
    }

    #[test]
    fn validate_psd_examples() {
        let k = global_kernel(3, 1.0).unwrap();
        assert!(validate_psd(&k).unwrap().abs() < 1e-14);

        let k = diagonal_kernel(&[0.7, 0.7, 0.7]).unwrap();
        assert_relative_eq!(validate_psd(&k).unwrap(), 0.7, epsilon = 1e-15);
    }

    #[test]
    fn validate_psd_rejects_asymmetric_input() {
        let mut k = global_kernel(2, 1.0).unwrap();
        k.matrix[(0, 1)] = 2.0;
        assert!(matches!(validate_psd(&k), Err(Error::AsymmetricKernel { .. })));
    }

    #[test]
    fn factoring_examples() {
        let k = diagonal_kernel(&[4.0]).unwrap();
        let l = factor_for_sampling(&k).unwrap();
        assert_eq!(l[(0, 0)], 2.0);

        let k = diagonal_kernel(&[4.0, 9.0]).unwrap();
        let l = factor_for_sampling(&k).unwrap();
        assert_eq!(l[(0, 0)], 2.0);
        assert_eq!(l[(1, 1)], 3.0);
        assert_eq!(l[(0, 1)], 0.0);
        assert_eq!(l[(1, 0)], 0.0);

        let k = global_kernel(2, 0.3).unwrap();
        let l = factor_for_sampling(&k).unwrap();
        let recon = &l * l.transpose();
        assert!(linalg::max_abs_real(&(&recon - k.matrix())) < 1e-10 * 0.3);
    }

    #[test]
    fn global_factor_gives_identical_noise_per_cell() {
        let k = global_kernel(5, 0.8).unwrap();
        let l = factor_for_sampling(&k).unwrap();
        // Rank-1 factor: a single nonzero column, equal entries.
        for j in 1..5 {
            for i in 0..5 {
                assert_eq!(l[(i, j)], 0.0);
            }
        }
        for i in 0..5 {
            assert_relative_eq!(l[(i, 0)], 0.8f64.sqrt(), epsilon = 1e-15);
        }
        // So L z has all components equal for any z.
        let z = nalgebra::DVector::from_vec(vec![1.3, -0.2, 0.7, 2.2, -1.1]);
        let field = &l * z;
        for i in 1..5 {
            assert_eq!(field[i], field[0]);
        }
    }

    #[test]
    fn factoring_round_trip_on_newtonian_kernel() {
        let u = UnitsContext::default();
        let spec = NewtonianNoiseSpec::default();
        let g = CellGrid::new([0.0; 3], 1.2e-7, [3, 3, 2]).unwrap();
        let k = newtonian_kernel(&g, &spec, &u).unwrap();
        let l = factor_for_sampling(&k).unwrap();
        let recon = &l * l.transpose();
        let err = linalg::max_abs_real(&(&recon - k.matrix()));
        assert!(err <= 1e-10 * linalg::max_abs_real(k.matrix()));
        // Lower triangular by construction.
        for i in 0..k.n_cells() {
            for j in (i + 1)..k.n_cells() {
                assert_eq!(l[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn factoring_rejects_indefinite_matrices() {
        let mut k = diagonal_kernel(&[1.0, 1.0]).unwrap();
        k.matrix[(0, 1)] = 2.0;
        k.matrix[(1, 0)] = 2.0;
        assert!(matches!(factor_for_sampling(&k), Err(Error::NotPsd { .. })));
    }
}

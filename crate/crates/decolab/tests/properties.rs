//! Randomized structural invariants: every master-equation right-hand side
//! is traceless and Hermitian, the local equation with a positive
//! semidefinite kernel preserves state positivity over many decay times,
//! energy-basis populations are exactly stationary under the dephasing
//! generators, and every kernel constructor yields symmetric PSD matrices.

use decolab::kernels::{diagonal_kernel, global_kernel, newtonian_kernel, validate_psd};
use decolab::linalg::{eigh, herm_residual, max_abs, trace};
use decolab::master::{rhs_dp_pointer, rhs_global, rhs_local, rhs_milburn_exact};
use decolab::{
    integrate, CellGrid, DensityMatrix, EvolutionModel, HamiltonianSpec, LocalHamiltonian,
    NewtonianNoiseSpec, UnitsContext,
};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use proptest::prelude::*;

fn nat_units() -> UnitsContext {
    UnitsContext {
        hbar: 1.0,
        ..UnitsContext::default()
    }
}

/// Hermitian matrix from dim*dim raw reals: first `dim` are the diagonal,
/// the rest fill the strict upper triangle as (re, im) pairs.
fn hermitian_from(dim: usize, vals: &[f64]) -> DMatrix<C64> {
    let mut m = DMatrix::zeros(dim, dim);
    let mut k = 0;
    for i in 0..dim {
        m[(i, i)] = C64::new(vals[k], 0.0);
        k += 1;
    }
    for i in 0..dim {
        for j in (i + 1)..dim {
            let z = C64::new(vals[k], vals[k + 1]);
            k += 2;
            m[(i, j)] = z;
            m[(j, i)] = z.conj();
        }
    }
    m
}

fn hermitian_len(dim: usize) -> usize {
    dim + dim * (dim - 1)
}

/// Strictly positive density matrix from raw reals: `(A A^dag + 0.1 I) / tr`.
fn density_from(dim: usize, vals: &[f64]) -> DensityMatrix {
    let mut a = DMatrix::zeros(dim, dim);
    let mut k = 0;
    for i in 0..dim {
        for j in 0..dim {
            a[(i, j)] = C64::new(vals[k], vals[k + 1]);
            k += 2;
        }
    }
    let mut m = &a * a.adjoint();
    for i in 0..dim {
        m[(i, i)] += C64::new(0.1, 0.0);
    }
    // Exact Hermitian symmetrization before validation.
    let mut h = DMatrix::zeros(dim, dim);
    for i in 0..dim {
        for j in 0..dim {
            h[(i, j)] = 0.5 * (m[(i, j)] + m[(j, i)].conj());
        }
    }
    let tr = trace(&h).re;
    DensityMatrix::new(h / C64::new(tr, 0.0)).unwrap()
}

fn assert_traceless_hermitian(rhs: &DMatrix<C64>, label: &str) {
    let scale = 1.0 + max_abs(rhs);
    let tr = trace(rhs).norm();
    assert!(tr <= 1e-12 * scale, "{label}: |trace| = {tr:e}");
    let hres = herm_residual(rhs);
    assert!(hres <= 1e-12 * scale, "{label}: hermiticity {hres:e}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn global_rhs_is_traceless_and_hermitian(
        dim in 2usize..=5,
        hv in proptest::collection::vec(-1.0f64..1.0, 25),
        rv in proptest::collection::vec(-1.0f64..1.0, 50),
        tau in 0.0f64..0.5,
        diagonal in any::<bool>(),
    ) {
        let u = nat_units();
        let h = if diagonal {
            HamiltonianSpec::Diagonal(hv[..dim].to_vec())
        } else {
            HamiltonianSpec::Dense(hermitian_from(dim, &hv[..hermitian_len(dim)]))
        };
        let rho = density_from(dim, &rv[..2 * dim * dim]);
        let rhs = rhs_global(&h, tau, &rho, &u).unwrap();
        assert_traceless_hermitian(&rhs, "global");
    }

    #[test]
    fn milburn_rhs_is_traceless_and_hermitian(
        dim in 2usize..=5,
        hv in proptest::collection::vec(-1.0f64..1.0, 25),
        rv in proptest::collection::vec(-1.0f64..1.0, 50),
        tau_pl in 1e-3f64..0.5,
    ) {
        let u = nat_units();
        let h = HamiltonianSpec::Dense(hermitian_from(dim, &hv[..hermitian_len(dim)]));
        let rho = density_from(dim, &rv[..2 * dim * dim]);
        let rhs = rhs_milburn_exact(&h, tau_pl, &rho, &u).unwrap();
        assert_traceless_hermitian(&rhs, "milburn");
    }

    #[test]
    fn local_rhs_is_traceless_and_hermitian(
        dim in 2usize..=4,
        n_cells in 2usize..=4,
        hv in proptest::collection::vec(-1.0f64..1.0, 80),
        rv in proptest::collection::vec(-1.0f64..1.0, 32),
        taus in proptest::collection::vec(0.0f64..0.5, 4),
        rank_one in any::<bool>(),
    ) {
        let u = nat_units();
        let len = hermitian_len(dim);
        let parts = LocalHamiltonian::new(
            (0..n_cells)
                .map(|r| hermitian_from(dim, &hv[r * len..(r + 1) * len]))
                .collect(),
        )
        .unwrap();
        let kernel = if rank_one {
            global_kernel(n_cells, taus[0]).unwrap()
        } else {
            diagonal_kernel(&taus[..n_cells]).unwrap()
        };
        let rho = density_from(dim, &rv[..2 * dim * dim]);
        let rhs = rhs_local(&parts, &kernel, &rho, &u).unwrap();
        assert_traceless_hermitian(&rhs, "local");
    }

    #[test]
    fn dp_rhs_is_traceless_and_hermitian(
        dim in 2usize..=5,
        ev in proptest::collection::vec(-1.0f64..1.0, 5),
        gv in proptest::collection::vec(0.0f64..1.0, 10),
        rv in proptest::collection::vec(-1.0f64..1.0, 50),
    ) {
        let u = nat_units();
        let mut rates = DMatrix::zeros(dim, dim);
        let mut k = 0;
        for i in 0..dim {
            for j in (i + 1)..dim {
                rates[(i, j)] = gv[k % gv.len()];
                rates[(j, i)] = rates[(i, j)];
                k += 1;
            }
        }
        let h = HamiltonianSpec::Diagonal(ev[..dim].to_vec());
        let rho = density_from(dim, &rv[..2 * dim * dim]);
        let rhs = rhs_dp_pointer(&rates, &h, &rho, &u).unwrap();
        assert_traceless_hermitian(&rhs, "dp-pointer");
    }

    #[test]
    fn dephasing_generators_keep_populations_bitwise_stationary(
        dim in 2usize..=4,
        ev in proptest::collection::vec(-1.0f64..1.0, 4),
        rv in proptest::collection::vec(-1.0f64..1.0, 32),
        tau in 1e-3f64..0.3,
    ) {
        let u = nat_units();
        let h = HamiltonianSpec::Diagonal(ev[..dim].to_vec());
        let rho = density_from(dim, &rv[..2 * dim * dim]);
        let models = [
            EvolutionModel::GlobalDoubleCommutator { h: h.clone(), tau },
            EvolutionModel::MilburnExact { h: h.clone(), tau_planck: tau },
            EvolutionModel::MilburnFirstOrder { h: h.clone(), tau_planck: tau },
            EvolutionModel::AdlerEffective { h_eff: h.clone(), tau },
        ];
        for model in &models {
            let traj = integrate(model, &rho, 2.0, 256, &u).unwrap();
            let p0 = rho.populations();
            for state in &traj.states {
                prop_assert_eq!(&state.populations(), &p0);
            }
        }
    }

    #[test]
    fn kernel_constructors_give_symmetric_psd_matrices(
        n_cells in 1usize..=4,
        tau in 0.0f64..1.0,
        taus in proptest::collection::vec(0.0f64..1.0, 4),
        nx in 1usize..=3,
        ny in 1usize..=3,
        nz in 1usize..=3,
        sigma_over_a in 1.0f64..4.0,
        prefactor in 0.1f64..10.0,
    ) {
        let gk = global_kernel(n_cells, tau).unwrap();
        prop_assert!(gk.symmetry_residual() == 0.0);
        prop_assert!(validate_psd(&gk).unwrap() >= -1e-12 * tau.max(1.0));

        let dk = diagonal_kernel(&taus[..n_cells]).unwrap();
        prop_assert!(validate_psd(&dk).unwrap() >= 0.0);

        let u = UnitsContext::default();
        let a = 1.0e-7;
        let grid = CellGrid::new([0.0; 3], a, [nx, ny, nz]).unwrap();
        let spec = NewtonianNoiseSpec { sigma: sigma_over_a * a, prefactor };
        let nk = newtonian_kernel(&grid, &spec, &u).unwrap();
        let scale = nk.entry(0, 0);
        prop_assert!(nk.symmetry_residual() <= 1e-15 * scale);
        prop_assert!(validate_psd(&nk).unwrap() >= -1e-10 * scale);
    }
}

proptest! {
    // Integration-heavy: fewer cases, still randomized.
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn local_dephasing_with_psd_kernel_preserves_positivity(
        dim in 2usize..=4,
        n_cells in 2usize..=3,
        ev in proptest::collection::vec(-1.0f64..1.0, 12),
        rv in proptest::collection::vec(-1.0f64..1.0, 32),
        taus in proptest::collection::vec(0.05f64..0.4, 3),
        rank_one in any::<bool>(),
    ) {
        let u = nat_units();
        // Diagonal parts so the decay rates are exact arithmetic; the run
        // spans ten times the fastest coherence decay.
        let parts_vals: Vec<Vec<f64>> = (0..n_cells)
            .map(|r| ev[r * dim..(r + 1) * dim].to_vec())
            .collect();
        let kernel = if rank_one {
            global_kernel(n_cells, taus[0]).unwrap()
        } else {
            diagonal_kernel(&taus[..n_cells]).unwrap()
        };
        let mut gamma_max = 0.0f64;
        for i in 0..dim {
            for j in 0..dim {
                if i == j { continue; }
                let mut g = 0.0;
                for r in 0..n_cells {
                    for rp in 0..n_cells {
                        let de_r = parts_vals[r][i] - parts_vals[r][j];
                        let de_rp = parts_vals[rp][i] - parts_vals[rp][j];
                        g += 0.5 * kernel.entry(r, rp) * de_r * de_rp;
                    }
                }
                gamma_max = gamma_max.max(g);
            }
        }
        prop_assume!(gamma_max > 1e-4);
        let parts = LocalHamiltonian::new(
            parts_vals
                .iter()
                .map(|v| {
                    let mut m = DMatrix::zeros(dim, dim);
                    for (i, e) in v.iter().enumerate() {
                        m[(i, i)] = C64::new(*e, 0.0);
                    }
                    m
                })
                .collect(),
        )
        .unwrap();
        let model = EvolutionModel::LocalDoubleCommutator { parts, kernel };
        let rho = density_from(dim, &rv[..2 * dim * dim]);
        let t_final = 10.0 / gamma_max;
        let traj = integrate(&model, &rho, t_final, 4000, &u).unwrap();
        for (k, state) in traj.states.iter().enumerate() {
            let min_eig = state
                .eigenvalues()
                .iter()
                .cloned()
                .fold(f64::INFINITY, f64::min);
            prop_assert!(
                min_eig >= -1e-8,
                "state {}: min eigenvalue {:e}", k, min_eig
            );
        }
    }
}

#[test]
fn noncommuting_local_dephasing_preserves_positivity() {
    let u = nat_units();
    let mut p0 = DMatrix::zeros(3, 3);
    p0[(0, 1)] = C64::new(0.6, 0.2);
    p0[(1, 0)] = C64::new(0.6, -0.2);
    p0[(2, 2)] = C64::new(-0.5, 0.0);
    let mut p1 = DMatrix::zeros(3, 3);
    p1[(0, 0)] = C64::new(0.8, 0.0);
    p1[(1, 2)] = C64::new(0.0, 0.4);
    p1[(2, 1)] = C64::new(0.0, -0.4);
    let parts = LocalHamiltonian::new(vec![p0, p1]).unwrap();
    let kernel = diagonal_kernel(&[0.3, 0.2]).unwrap();
    let model = EvolutionModel::LocalDoubleCommutator { parts, kernel };
    let rho = density_from(
        3,
        &[
            0.3, -0.1, 0.7, 0.2, -0.5, 0.4, 0.1, 0.9, -0.3, 0.6, 0.2, -0.8, 0.5, 0.1, -0.6, 0.3,
            0.8, -0.2,
        ],
    );
    let traj = integrate(&model, &rho, 40.0, 8000, &u).unwrap();
    for state in &traj.states {
        let min_eig = state
            .eigenvalues()
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        assert!(min_eig >= -1e-8, "min eigenvalue {min_eig:e}");
    }
}

#[test]
fn dense_global_dephasing_keeps_energy_basis_populations_stationary() {
    let u = nat_units();
    let hm = hermitian_from(4, &(0..16).map(|k| ((k * 7 + 3) % 11) as f64 / 11.0 - 0.5).collect::<Vec<_>>());
    let h = HamiltonianSpec::Dense(hm.clone());
    let rho = density_from(
        4,
        &(0..32)
            .map(|k| ((k * 5 + 1) % 13) as f64 / 13.0 - 0.5)
            .collect::<Vec<_>>(),
    );
    let model = EvolutionModel::GlobalDoubleCommutator { h, tau: 0.2 };
    let traj = integrate(&model, &rho, 10.0, 2048, &u).unwrap();
    let eig = eigh(&hm);
    let to_basis = |m: &DMatrix<C64>| -> DVector<f64> {
        let t = eig.vectors.adjoint() * m * &eig.vectors;
        DVector::from_iterator(4, (0..4).map(|i| t[(i, i)].re))
    };
    let p0 = to_basis(rho.matrix());
    for state in &traj.states {
        let p = to_basis(state.matrix());
        let dev = (&p - &p0).abs().max();
        assert!(dev <= 1e-10, "population drift {dev:e}");
    }
}

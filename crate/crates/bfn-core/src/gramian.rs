//! Observability Gramian, observable subspace, and the swept-window test.
//!
//! The Gramian over `[t0, t0 + tau]` is
//! `W = int T(t, t0)* C* C T(t, t0) dt`, discretized with the composite
//! trapezoid rule. Its kernel collects initial states that the output never
//! sees; the observable subspace is the orthogonal complement, realized here
//! as the span of eigenvectors whose eigenvalue clears a spectral-gap
//! threshold.
//!
//! Note on interpolation modes: with linear transport interpolation the
//! discrete kernel is exact at the node level (stencils are local, so a
//! state vanishing on the swept nodes is annihilated outright) and the
//! spectrum shows a clean many-order gap. Spectral interpolation couples
//! every node through the global trigonometric basis and fills the kernel
//! with small leakage eigenvalues instead; use it for quadratic-form and
//! margin diagnostics, and the linear mode for subspace geometry.

use crate::function_space::{periodic_wrap, GridFunction, PeriodicGrid};
use crate::observation::ObservationOperator;
use crate::transport::{TransportPropagator, VelocityProfile};
use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Eigenstructure of the discrete observability Gramian.
#[derive(Debug, Clone)]
pub struct GramianAnalysis {
    grid: PeriodicGrid,
    matrix: DMatrix<f64>,
    /// Eigenvalues in descending order.
    eigenvalues: Vec<f64>,
    /// Eigenvectors as columns, orthonormal for the grid inner product,
    /// ordered to match `eigenvalues`.
    eigenvectors: DMatrix<f64>,
    rank_tol: f64,
    observable_dim: usize,
}

impl GramianAnalysis {
    pub fn grid(&self) -> &PeriodicGrid {
        &self.grid
    }

    /// The Gramian as an operator matrix in the node basis.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn rank_tol(&self) -> f64 {
        self.rank_tol
    }

    /// Dimension of the observable subspace.
    pub fn observable_dim(&self) -> usize {
        self.observable_dim
    }

    /// Orthonormal basis of the observable subspace (eigenvectors above the
    /// rank threshold), as columns.
    pub fn observable_subspace(&self) -> DMatrix<f64> {
        self.eigenvectors.columns(0, self.observable_dim).into()
    }

    /// Orthogonal projection onto the observable subspace.
    pub fn project_observable(&self, f: &GridFunction) -> Result<GridFunction> {
        if f.grid() != &self.grid {
            return Err(Error::GridMismatch(
                "state is not on the analysis grid".into(),
            ));
        }
        let h = self.grid.h();
        let x = DVector::from_column_slice(f.values());
        let basis = self.eigenvectors.columns(0, self.observable_dim);
        // coefficients <f, e_k> for the h-weighted product
        let coefs = basis.tr_mul(&x) * h;
        let proj = basis * coefs;
        GridFunction::from_values(self.grid, proj.as_slice().to_vec())
    }

    /// `<W f, f>` through the assembled operator matrix. The direct
    /// trajectory quadrature [`trajectory_energy`] computes the same number
    /// without the matrix, which makes the pair a cross-check.
    pub fn quadratic_form(&self, f: &GridFunction) -> Result<f64> {
        if f.grid() != &self.grid {
            return Err(Error::GridMismatch(
                "state is not on the analysis grid".into(),
            ));
        }
        let x = DVector::from_column_slice(f.values());
        Ok(self.grid.h() * (&self.matrix * &x).dot(&x))
    }

    /// Smallest eigenvalue: the best constant `delta` with
    /// `<W z, z> >= delta ||z||^2`. Zero (up to roundoff) whenever part of
    /// the state never meets the observation.
    pub fn exact_observability_margin(&self) -> f64 {
        *self
            .eigenvalues
            .last()
            .expect("analysis always has at least one eigenvalue")
    }

    /// Node support of the numerical kernel: nodes carried by eigenvectors
    /// with eigenvalue at or below the rank threshold.
    pub fn kernel_node_support(&self, amplitude_tol: f64) -> Vec<bool> {
        let n = self.grid.len();
        let mut support = vec![false; n];
        for k in self.observable_dim..n {
            let col = self.eigenvectors.column(k);
            let peak = col.amax();
            for j in 0..n {
                if col[j].abs() > amplitude_tol * peak {
                    support[j] = true;
                }
            }
        }
        support
    }
}

/// Default number of trapezoid panels: at least ten samples per cell
/// crossing, with a floor of 16.
pub fn default_time_samples(
    profile: &VelocityProfile,
    grid: &PeriodicGrid,
    t0: f64,
    tau: f64,
) -> usize {
    let sup = profile.sup_rate(t0, t0 + tau);
    let per_crossing = (10.0 * tau * sup / grid.h()).ceil();
    (per_crossing as usize).max(16)
}

/// Assemble the Gramian of `(T, C)` over `[t0, t0 + tau]` with `n_time`
/// trapezoid panels and decompose it.
pub fn assemble_gramian(
    prop: &TransportPropagator,
    obs: &ObservationOperator,
    t0: f64,
    tau: f64,
    n_time: usize,
) -> Result<GramianAnalysis> {
    if !(tau > 0.0) {
        return Err(Error::Parameter(format!(
            "gramian needs tau > 0, got {tau}"
        )));
    }
    if n_time < 2 {
        return Err(Error::Parameter(
            "gramian needs at least 2 time panels".into(),
        ));
    }
    if prop.grid() != obs.grid() {
        return Err(Error::GridMismatch(
            "propagator and observer live on different grids".into(),
        ));
    }
    let grid = *prop.grid();
    let n = grid.len();
    let dt = tau / n_time as f64;
    let mut w = DMatrix::zeros(n, n);

    let mask_rows: Option<Vec<usize>> = obs.diagonal_mask().map(|mask| {
        mask.iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(j, _)| j)
            .collect()
    });
    let normal = if mask_rows.is_none() {
        Some(obs.normal_matrix())
    } else {
        None
    };

    let mut scratch = DMatrix::zeros(n, n);
    for i in 0..=n_time {
        let t = t0 + tau * i as f64 / n_time as f64;
        let wi = if i == 0 || i == n_time { 0.5 * dt } else { dt };
        let p = prop.matrix(t, t0)?;
        match (&mask_rows, &normal) {
            (Some(rows), _) => {
                let mut r = DMatrix::zeros(rows.len(), n);
                for (ri, &j) in rows.iter().enumerate() {
                    r.row_mut(ri).copy_from(&p.row(j));
                }
                w.gemm_tr(wi, &r, &r, 1.0);
            }
            (None, Some(nmat)) => {
                scratch.gemm(1.0, nmat, &p, 0.0);
                w.gemm_tr(wi, &p, &scratch, 1.0);
            }
            _ => unreachable!(),
        }
    }

    // kill roundoff asymmetry before the symmetric eigensolver
    let wt = w.transpose();
    w = (w + wt) * 0.5;

    let eig = w.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .expect("gramian eigenvalues are finite")
    });
    let eigenvalues: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let scale = 1.0 / grid.h().sqrt();
    let mut eigenvectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        eigenvectors
            .column_mut(dst)
            .copy_from(&(eig.eigenvectors.column(src) * scale));
    }

    let largest = eigenvalues[0].max(0.0);
    if eigenvalues[n - 1] < -1e-10 * largest.max(1e-300) {
        return Err(Error::NonFinite(format!(
            "gramian is not positive semidefinite: smallest eigenvalue {:.3e}",
            eigenvalues[n - 1]
        )));
    }
    let rank_tol = (1e-8 * largest).max(1e-12);
    let observable_dim = eigenvalues.iter().take_while(|&&l| l > rank_tol).count();

    Ok(GramianAnalysis {
        grid,
        matrix: w,
        eigenvalues,
        eigenvectors,
        rank_tol,
        observable_dim,
    })
}

/// Quadratic form `<W f, f>` computed the direct way: trapezoid quadrature
/// of `t -> ||C T(t, t0) f||^2` along the propagated trajectory. Serves as
/// the independent check on [`assemble_gramian`].
pub fn trajectory_energy(
    prop: &TransportPropagator,
    obs: &ObservationOperator,
    t0: f64,
    tau: f64,
    n_time: usize,
    f: &GridFunction,
) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(Error::Parameter(format!("needs tau > 0, got {tau}")));
    }
    if n_time < 2 {
        return Err(Error::Parameter("needs at least 2 time panels".into()));
    }
    let dt = tau / n_time as f64;
    let mut acc = 0.0;
    for i in 0..=n_time {
        let t = t0 + tau * i as f64 / n_time as f64;
        let wi = if i == 0 || i == n_time { 0.5 * dt } else { dt };
        let y = obs.apply(&prop.propagate(f, t, t0)?)?;
        acc += wi * y.norm().powi(2);
    }
    Ok(acc)
}

/// Swept-window observability test: true when the cumulative displacement
/// is large enough for every point of the domain to pass through the
/// observation window `[x_min, x_max]` during `[t0, t0 + tau]`.
pub fn geometric_condition(
    profile: &VelocityProfile,
    t0: f64,
    tau: f64,
    x_min: f64,
    x_max: f64,
    grid: &PeriodicGrid,
) -> Result<bool> {
    if !(grid.x0() <= x_min && x_min < x_max && x_max <= grid.x1()) {
        return Err(Error::Parameter(format!(
            "window [{x_min}, {x_max}] must lie within [{}, {}]",
            grid.x0(),
            grid.x1()
        )));
    }
    let displacement = profile.cumulative_growth(t0, t0 + tau)?.abs();
    let needed = grid.length() - (x_max - x_min);
    Ok(displacement >= needed * (1.0 - 1e-12))
}

/// Brute-force swept node set: a node is swept when, at some sampled time,
/// it lies within one interpolation cell of the backward image of a window
/// node. Built purely from characteristics, independent of the Gramian.
pub fn swept_nodes(
    profile: &VelocityProfile,
    grid: &PeriodicGrid,
    window_mask: &[bool],
    t0: f64,
    tau: f64,
    n_time: usize,
) -> Result<Vec<bool>> {
    if window_mask.len() != grid.len() {
        return Err(Error::GridMismatch(
            "mask length does not match the grid".into(),
        ));
    }
    let n = grid.len();
    let h = grid.h();
    let mut swept = vec![false; n];
    let window_nodes: Vec<f64> = grid
        .nodes()
        .zip(window_mask)
        .filter(|(_, &m)| m)
        .map(|(x, _)| x)
        .collect();
    for i in 0..=n_time {
        let t = t0 + tau * i as f64 / n_time as f64;
        let delta = profile.cumulative_growth(t0, t)?;
        for &xw in &window_nodes {
            let foot = periodic_wrap(xw - delta, grid);
            let pos = (foot - grid.x0()) / h;
            let j0 = pos.floor() as usize % n;
            let frac = pos - pos.floor();
            // strict interior of the stencil: zero-weight grazes do not count
            if frac < 1.0 - 1e-9 {
                swept[j0] = true;
            }
            if frac > 1e-9 {
                swept[(j0 + 1) % n] = true;
            }
        }
    }
    Ok(swept)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::Interpolation;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit_grid(n: usize) -> PeriodicGrid {
        PeriodicGrid::new(0.0, 1.0, n).unwrap()
    }

    fn prop(n: usize, g: VelocityProfile, interp: Interpolation) -> TransportPropagator {
        TransportPropagator::new(unit_grid(n), g, interp)
    }

    #[test]
    fn frozen_transport_gives_tau_times_normal() {
        let n = 32;
        let p = prop(n, VelocityProfile::constant(0.0), Interpolation::Spectral);
        let obs = ObservationOperator::window(unit_grid(n), 0.25, 0.75).unwrap();
        let tau = 0.37;
        let a = assemble_gramian(&p, &obs, 0.0, tau, 64).unwrap();
        let expected = obs.normal_matrix() * tau;
        let diff = (a.matrix() - expected).amax();
        assert!(diff <= 1e-12 * tau);
    }

    #[test]
    fn full_window_gives_tau_identity() {
        let n = 32;
        let p = prop(n, VelocityProfile::constant(1.0), Interpolation::Spectral);
        let obs = ObservationOperator::window(unit_grid(n), 0.0, 1.0).unwrap();
        let tau = 0.5;
        let a = assemble_gramian(&p, &obs, 0.0, tau, 64).unwrap();
        for &l in a.eigenvalues() {
            assert!((l - tau).abs() <= 1e-12);
        }
        assert_eq!(a.observable_dim(), n);
        assert!((a.exact_observability_margin() - tau).abs() <= 1e-12);
    }

    #[test]
    fn quadratic_form_matches_trajectory_quadrature() {
        let n = 48;
        for interp in [Interpolation::Spectral, Interpolation::Linear] {
            let p = prop(
                n,
                VelocityProfile::sinusoidal(1.0, 0.5, 1.0).unwrap(),
                interp,
            );
            let obs = ObservationOperator::window(unit_grid(n), 0.6, 1.0).unwrap();
            let a = assemble_gramian(&p, &obs, 0.0, 0.4, 128).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(21);
            for _ in 0..5 {
                let f = GridFunction::random_unit(unit_grid(n), &mut rng);
                let by_matrix = a.quadratic_form(&f).unwrap();
                let direct = trajectory_energy(&p, &obs, 0.0, 0.4, 128, &f).unwrap();
                assert!(
                    (by_matrix - direct).abs() <= 1e-10 * direct.abs().max(1e-30),
                    "{by_matrix} vs {direct}"
                );
            }
        }
    }

    #[test]
    fn observable_dimension_matches_swept_set() {
        let n = 64;
        let p = prop(n, VelocityProfile::constant(1.0), Interpolation::Linear);
        let obs = ObservationOperator::window(unit_grid(n), 0.6, 1.0).unwrap();
        let n_time = default_time_samples(p.profile(), p.grid(), 0.0, 0.2);
        let a = assemble_gramian(&p, &obs, 0.0, 0.2, n_time).unwrap();
        let mask = match &obs {
            ObservationOperator::Window(w) => w.mask().to_vec(),
            _ => unreachable!(),
        };
        let swept = swept_nodes(p.profile(), p.grid(), &mask, 0.0, 0.2, n_time).unwrap();
        let swept_count = swept.iter().filter(|&&s| s).count();
        assert_eq!(a.observable_dim(), swept_count);
        // kernel eigenvectors live exactly on the unswept nodes
        let kernel_support = a.kernel_node_support(1e-6);
        for j in 0..n {
            assert_eq!(kernel_support[j], !swept[j], "node {j}");
        }
    }

    #[test]
    fn frozen_transport_observable_subspace_is_window_span() {
        let n = 32;
        let p = prop(n, VelocityProfile::constant(0.0), Interpolation::Spectral);
        let obs = ObservationOperator::window(unit_grid(n), 0.25, 0.75).unwrap();
        let a = assemble_gramian(&p, &obs, 0.0, 0.3, 64).unwrap();
        let window_nodes = match &obs {
            ObservationOperator::Window(w) => w.window_node_count(),
            _ => unreachable!(),
        };
        assert_eq!(a.observable_dim(), window_nodes);
        // basis vectors are supported on window nodes only
        let basis = a.observable_subspace();
        let mask = match &obs {
            ObservationOperator::Window(w) => w.mask().to_vec(),
            _ => unreachable!(),
        };
        for k in 0..a.observable_dim() {
            for j in 0..n {
                if !mask[j] {
                    assert!(basis.column(k)[j].abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn projector_is_orthogonal_projection() {
        let n = 48;
        let p = prop(n, VelocityProfile::constant(1.0), Interpolation::Linear);
        let obs = ObservationOperator::window(unit_grid(n), 0.5, 0.9).unwrap();
        let a = assemble_gramian(&p, &obs, 0.0, 0.15, 128).unwrap();
        assert!(a.observable_dim() < n);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = GridFunction::random_unit(unit_grid(n), &mut rng);
        let pf = a.project_observable(&f).unwrap();
        let ppf = a.project_observable(&pf).unwrap();
        assert!(ppf.sub(&pf).unwrap().norm() <= 1e-10);
        // Pythagoras
        let qf = f.sub(&pf).unwrap();
        let lhs = f.norm().powi(2);
        let rhs = pf.norm().powi(2) + qf.norm().powi(2);
        assert!((lhs - rhs).abs() <= 1e-10 * lhs);
        assert!(pf.norm() <= f.norm() * (1.0 + 1e-12));
    }

    #[test]
    fn projector_fixes_basis_and_kills_complement() {
        let n = 32;
        let p = prop(n, VelocityProfile::constant(1.0), Interpolation::Linear);
        let obs = ObservationOperator::window(unit_grid(n), 0.5, 0.9).unwrap();
        let a = assemble_gramian(&p, &obs, 0.0, 0.1, 64).unwrap();
        let basis = a.observable_subspace();
        let e0 =
            GridFunction::from_values(unit_grid(n), basis.column(0).as_slice().to_vec()).unwrap();
        assert!(a.project_observable(&e0).unwrap().sub(&e0).unwrap().norm() <= 1e-10);
        let d = a.observable_dim();
        let last = a.eigenvalues().len() - 1;
        assert!(d <= last);
        let ker = GridFunction::from_values(
            unit_grid(n),
            a.eigenvectors.column(last).as_slice().to_vec(),
        )
        .unwrap();
        assert!(a.project_observable(&ker).unwrap().norm() <= 1e-10);
    }

    #[test]
    fn eigenvalues_monotone_in_tau() {
        let n = 32;
        let p = prop(
            n,
            VelocityProfile::sinusoidal(1.0, 0.3, 0.7).unwrap(),
            Interpolation::Spectral,
        );
        let obs = ObservationOperator::window(unit_grid(n), 0.5, 0.8).unwrap();
        let a1 = assemble_gramian(&p, &obs, 0.0, 0.2, 128).unwrap();
        let a2 = assemble_gramian(&p, &obs, 0.0, 0.4, 256).unwrap();
        for (l2, l1) in a2.eigenvalues().iter().zip(a1.eigenvalues()) {
            assert!(l2 >= &(l1 - 1e-10));
        }
    }

    #[test]
    fn geometric_condition_examples() {
        let g = unit_grid(64);
        let one = VelocityProfile::constant(1.0);
        assert!(geometric_condition(&one, 0.0, 0.6, 0.6, 1.0, &g).unwrap());
        assert!(!geometric_condition(&one, 0.0, 0.3, 0.6, 1.0, &g).unwrap());
        let neg = VelocityProfile::constant(-1.0);
        assert!(geometric_condition(&neg, 0.0, 0.6, 0.6, 1.0, &g).unwrap());
    }

    #[test]
    fn margin_zero_with_unswept_nodes() {
        let n = 48;
        let p = prop(n, VelocityProfile::constant(1.0), Interpolation::Linear);
        let obs = ObservationOperator::window(unit_grid(n), 0.6, 1.0).unwrap();
        let a = assemble_gramian(&p, &obs, 0.0, 0.2, 256).unwrap();
        assert!(a.exact_observability_margin().abs() <= 1e-10 * a.eigenvalues()[0]);
    }

    #[test]
    fn assembly_rejects_bad_parameters() {
        let n = 16;
        let p = prop(n, VelocityProfile::constant(1.0), Interpolation::Spectral);
        let obs = ObservationOperator::window(unit_grid(n), 0.5, 1.0).unwrap();
        assert!(matches!(
            assemble_gramian(&p, &obs, 0.0, -0.5, 64),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            assemble_gramian(&p, &obs, 0.0, 0.5, 1),
            Err(Error::Parameter(_))
        ));
    }
}

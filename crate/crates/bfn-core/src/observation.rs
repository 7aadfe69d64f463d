//! Output operators `C : X -> Y` with exact discrete adjoints.
//!
//! Two operators are provided. [`WindowObserver`] restricts the state to a
//! spatial window `[x_min, x_max]`; its output space is realized as masked
//! grid samples carrying the state-grid weights, so `C*C` is a diagonal
//! mask. [`CldKernelObserver`] maps a crystal size distribution to the
//! cumulative chord length distribution measured by a scanning-beam probe,
//! through the kernel `k(x, l) = 1 - sqrt(1 - (l/2x)^2)` for `l < 2x` and
//! `1` beyond.
//!
//! Adjoints are taken with respect to the weighted inner products of the
//! state and observation grids, so `<Cf, g>_Y = <f, C*g>_X` holds to
//! machine precision by construction.

use crate::function_space::{GridFunction, ObservationGrid, PeriodicGrid};
use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};
use std::io::Write;

/// A measurement: sample values with a uniform quadrature weight.
///
/// For the window operator the samples live on the state grid (masked, with
/// weight `h`); for the chord-length operator they live on the observation
/// grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    values: Vec<f64>,
    weight: f64,
}

impl Observation {
    pub fn new(values: Vec<f64>, weight: f64) -> Self {
        Self { values, weight }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Weighted inner product on the output space.
    pub fn inner(&self, other: &Self) -> Result<f64> {
        if self.values.len() != other.values.len() {
            return Err(Error::GridMismatch(
                "observations have different lengths".into(),
            ));
        }
        let mut acc = 0.0;
        for (a, b) in self.values.iter().zip(&other.values) {
            acc += a * b;
        }
        Ok(self.weight * acc)
    }

    pub fn norm(&self) -> f64 {
        let mut acc = 0.0;
        for v in &self.values {
            acc += v * v;
        }
        (self.weight * acc).sqrt()
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        if self.values.len() != other.values.len() {
            return Err(Error::GridMismatch(
                "observations have different lengths".into(),
            ));
        }
        Ok(Self {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a - b)
                .collect(),
            weight: self.weight,
        })
    }

    /// Pointwise average of two observations (linear interpolation at the
    /// midpoint of a time step).
    pub fn midpoint(a: &Self, b: &Self) -> Result<Self> {
        if a.values.len() != b.values.len() {
            return Err(Error::GridMismatch(
                "observations have different lengths".into(),
            ));
        }
        Ok(Self {
            values: a
                .values
                .iter()
                .zip(&b.values)
                .map(|(x, y)| 0.5 * (x + y))
                .collect(),
            weight: a.weight,
        })
    }
}

/// Chord-length kernel for spherical particles of radius `x`:
/// the fraction of scanned chords of length at most `l`.
pub fn fbrm_kernel(x: f64, l: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::Domain(format!(
            "kernel needs a positive radius, got x = {x}"
        )));
    }
    if !(l >= 0.0) {
        return Err(Error::Domain(format!("kernel needs l >= 0, got l = {l}")));
    }
    if l >= 2.0 * x {
        Ok(1.0)
    } else {
        let r = l / (2.0 * x);
        Ok(1.0 - (1.0 - r * r).sqrt())
    }
}

/// Restriction of the state to the window `[x_min, x_max]`.
#[derive(Debug, Clone)]
pub struct WindowObserver {
    grid: PeriodicGrid,
    x_min: f64,
    x_max: f64,
    mask: Vec<bool>,
}

impl WindowObserver {
    pub fn new(grid: PeriodicGrid, x_min: f64, x_max: f64) -> Result<Self> {
        if !(grid.x0() <= x_min && x_min < x_max && x_max <= grid.x1()) {
            return Err(Error::Parameter(format!(
                "window [{x_min}, {x_max}] must satisfy x0 <= x_min < x_max <= x1 in [{}, {}]",
                grid.x0(),
                grid.x1()
            )));
        }
        let tol = 1e-9 * grid.h();
        let mask = grid
            .nodes()
            .map(|x| x >= x_min - tol && x <= x_max + tol)
            .collect();
        Ok(Self {
            grid,
            x_min,
            x_max,
            mask,
        })
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn window_node_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Integral operator mapping a size distribution on the window to the
/// cumulative chord length distribution on `[0, 2 x_max]`.
#[derive(Debug, Clone)]
pub struct CldKernelObserver {
    grid: PeriodicGrid,
    obs_grid: ObservationGrid,
    x_min: f64,
    x_max: f64,
    window: Vec<bool>,
    /// m-by-n matrix with entries `k(x_j, l_i) * 1_window(x_j) * h`.
    kernel: DMatrix<f64>,
    /// `C*C` in the node basis; symmetric positive semidefinite.
    normal: DMatrix<f64>,
    normal_norm: f64,
}

impl CldKernelObserver {
    /// Build the operator for sizes in `[x_min, x_max]` with `m` chord
    /// samples. `m = 2 n` resolves the kernel's square-root behavior at
    /// `l = 2x` no worse than the state grid resolves `x`.
    pub fn new(grid: PeriodicGrid, x_min: f64, x_max: f64, m: usize) -> Result<Self> {
        if !(x_min > 0.0) {
            return Err(Error::Parameter(
                "chord-length observation needs x_min > 0".into(),
            ));
        }
        if !(grid.x0() <= x_min && x_min < x_max && x_max <= grid.x1()) {
            return Err(Error::Parameter(format!(
                "window [{x_min}, {x_max}] must lie within [{}, {}]",
                grid.x0(),
                grid.x1()
            )));
        }
        let obs_grid = ObservationGrid::new(0.0, 2.0 * x_max, m)?;
        let tol = 1e-9 * grid.h();
        let window: Vec<bool> = grid
            .nodes()
            .map(|x| x >= x_min - tol && x <= x_max + tol)
            .collect();
        let n = grid.len();
        let h = grid.h();
        let mut kernel = DMatrix::zeros(m, n);
        for (j, x) in grid.nodes().enumerate() {
            if !window[j] {
                continue;
            }
            for i in 0..m {
                kernel[(i, j)] = fbrm_kernel(x, obs_grid.node(i))? * h;
            }
        }
        // C*C = (1/h) K^T W_Y K with uniform Y weights
        let wy = obs_grid.weight();
        let normal = kernel.tr_mul(&kernel) * (wy / h);
        let normal_norm = symmetric_operator_norm(&normal);
        Ok(Self {
            grid,
            obs_grid,
            x_min,
            x_max,
            window,
            kernel,
            normal,
            normal_norm,
        })
    }

    pub fn obs_grid(&self) -> &ObservationGrid {
        &self.obs_grid
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn window(&self) -> &[bool] {
        &self.window
    }

    pub fn kernel_matrix(&self) -> &DMatrix<f64> {
        &self.kernel
    }

    /// Smallest singular value of the kernel restricted to window columns,
    /// with both spaces' quadrature weights folded in: the best constant
    /// `c` with `||C f||_Y >= c ||f||` over window-supported states.
    /// Strictly positive whenever the chord grid has at least as many
    /// samples as the window has nodes; the value is grid-dependent and
    /// shrinks under refinement.
    pub fn kernel_injectivity_margin(&self) -> Result<f64> {
        let cols: Vec<usize> = (0..self.grid.len()).filter(|&j| self.window[j]).collect();
        if cols.is_empty() {
            return Err(Error::Parameter(
                "injectivity margin needs a nonempty window".into(),
            ));
        }
        let m = self.obs_grid.len();
        if cols.len() > m {
            // the restricted map has a nontrivial kernel
            return Ok(0.0);
        }
        let scale = (self.obs_grid.weight() / self.grid.h()).sqrt();
        let mut mat = DMatrix::zeros(m, cols.len());
        for (c, &j) in cols.iter().enumerate() {
            for i in 0..m {
                mat[(i, c)] = self.kernel[(i, j)] * scale;
            }
        }
        let sv = mat.singular_values();
        Ok(sv.min())
    }

    /// Write the effective kernel as CSV rows `l,x,k`.
    pub fn write_kernel_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "l,x,k")?;
        let h = self.grid.h();
        for i in 0..self.obs_grid.len() {
            for (j, x) in self.grid.nodes().enumerate() {
                writeln!(
                    out,
                    "{:.16e},{:.16e},{:.16e}",
                    self.obs_grid.node(i),
                    x,
                    self.kernel[(i, j)] / h
                )?;
            }
        }
        Ok(())
    }
}

fn symmetric_operator_norm(m: &DMatrix<f64>) -> f64 {
    // power iteration; deterministic start
    let n = m.nrows();
    if n == 0 {
        return 0.0;
    }
    let mut v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut lambda = 0.0;
    for _ in 0..100 {
        let w = m * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        lambda = norm;
        v = w / norm;
    }
    lambda
}

/// A bounded output operator with an exact discrete adjoint.
#[derive(Debug, Clone)]
pub enum ObservationOperator {
    Window(WindowObserver),
    Cld(CldKernelObserver),
}

impl ObservationOperator {
    pub fn window(grid: PeriodicGrid, x_min: f64, x_max: f64) -> Result<Self> {
        Ok(Self::Window(WindowObserver::new(grid, x_min, x_max)?))
    }

    pub fn cld(grid: PeriodicGrid, x_min: f64, x_max: f64, m: usize) -> Result<Self> {
        Ok(Self::Cld(CldKernelObserver::new(grid, x_min, x_max, m)?))
    }

    pub fn grid(&self) -> &PeriodicGrid {
        match self {
            Self::Window(w) => w.grid(),
            Self::Cld(c) => &c.grid,
        }
    }

    /// Apply `C`.
    pub fn apply(&self, f: &GridFunction) -> Result<Observation> {
        match self {
            Self::Window(w) => {
                if f.grid() != &w.grid {
                    return Err(Error::GridMismatch(
                        "state is not on the observer grid".into(),
                    ));
                }
                let values = f
                    .values()
                    .iter()
                    .zip(&w.mask)
                    .map(|(&v, &m)| if m { v } else { 0.0 })
                    .collect();
                Ok(Observation::new(values, w.grid.h()))
            }
            Self::Cld(c) => {
                if f.grid() != &c.grid {
                    return Err(Error::GridMismatch(
                        "state is not on the observer grid".into(),
                    ));
                }
                let x = DVector::from_column_slice(f.values());
                let y = &c.kernel * x;
                Ok(Observation::new(y.as_slice().to_vec(), c.obs_grid.weight()))
            }
        }
    }

    /// Apply the adjoint `C*` with respect to the weighted inner products.
    pub fn adjoint_apply(&self, g: &Observation) -> Result<GridFunction> {
        match self {
            Self::Window(w) => {
                if g.len() != w.grid.len() {
                    return Err(Error::GridMismatch(
                        "observation length does not match the window grid".into(),
                    ));
                }
                let values = g
                    .values()
                    .iter()
                    .zip(&w.mask)
                    .map(|(&v, &m)| if m { v } else { 0.0 })
                    .collect();
                GridFunction::from_values(w.grid, values)
            }
            Self::Cld(c) => {
                if g.len() != c.obs_grid.len() {
                    return Err(Error::GridMismatch(
                        "observation length does not match the chord grid".into(),
                    ));
                }
                let y = DVector::from_column_slice(g.values());
                let x = c.kernel.tr_mul(&y) * (c.obs_grid.weight() / c.grid.h());
                GridFunction::from_values(c.grid, x.as_slice().to_vec())
            }
        }
    }

    /// Apply `C*C`.
    pub fn normal_apply(&self, f: &GridFunction) -> Result<GridFunction> {
        match self {
            Self::Window(w) => {
                if f.grid() != &w.grid {
                    return Err(Error::GridMismatch(
                        "state is not on the observer grid".into(),
                    ));
                }
                let values = f
                    .values()
                    .iter()
                    .zip(&w.mask)
                    .map(|(&v, &m)| if m { v } else { 0.0 })
                    .collect();
                GridFunction::from_values(w.grid, values)
            }
            Self::Cld(c) => {
                if f.grid() != &c.grid {
                    return Err(Error::GridMismatch(
                        "state is not on the observer grid".into(),
                    ));
                }
                let x = DVector::from_column_slice(f.values());
                let y = &c.normal * x;
                GridFunction::from_values(c.grid, y.as_slice().to_vec())
            }
        }
    }

    /// `C*C` in the node basis.
    pub fn normal_matrix(&self) -> DMatrix<f64> {
        match self {
            Self::Window(w) => {
                let n = w.grid.len();
                DMatrix::from_fn(n, n, |i, j| if i == j && w.mask[i] { 1.0 } else { 0.0 })
            }
            Self::Cld(c) => c.normal.clone(),
        }
    }

    /// Operator norm of `C*C` on the state space.
    pub fn normal_norm(&self) -> f64 {
        match self {
            Self::Window(w) => {
                if w.mask.iter().any(|&m| m) {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Cld(c) => c.normal_norm,
        }
    }

    /// Node mask when the correction `C*C` is a diagonal mask, which admits
    /// an exact decay sub-step in the observer integrator.
    pub fn diagonal_mask(&self) -> Option<&[bool]> {
        match self {
            Self::Window(w) => Some(&w.mask),
            Self::Cld(_) => None,
        }
    }

    /// The zero element of the output space.
    pub fn zero_observation(&self) -> Observation {
        match self {
            Self::Window(w) => Observation::new(vec![0.0; w.grid.len()], w.grid.h()),
            Self::Cld(c) => Observation::new(vec![0.0; c.obs_grid.len()], c.obs_grid.weight()),
        }
    }
}

impl WindowObserver {
    fn grid(&self) -> &PeriodicGrid {
        &self.grid
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_grid(n: usize) -> PeriodicGrid {
        PeriodicGrid::new(0.0, 1.0, n).unwrap()
    }

    #[test]
    fn kernel_pointwise_values() {
        assert_eq!(fbrm_kernel(0.5, 0.0).unwrap(), 0.0);
        assert_eq!(fbrm_kernel(0.5, 1.0).unwrap(), 1.0);
        assert_eq!(fbrm_kernel(0.5, 2.0).unwrap(), 1.0);
        let x = 0.7;
        let l = x * 3.0f64.sqrt();
        assert_abs_diff_eq!(fbrm_kernel(x, l).unwrap(), 0.5, epsilon = 1e-15);
        assert!(matches!(fbrm_kernel(0.0, 0.5), Err(Error::Domain(_))));
        assert!(matches!(fbrm_kernel(-1.0, 0.5), Err(Error::Domain(_))));
    }

    #[test]
    fn kernel_bounded_and_monotone_in_l() {
        let x = 0.9;
        let mut prev = -1.0;
        for i in 0..200 {
            let l = 2.0 * i as f64 / 100.0;
            let k = fbrm_kernel(x, l).unwrap();
            assert!((0.0..=1.0).contains(&k));
            assert!(k >= prev);
            prev = k;
        }
    }

    #[test]
    fn window_apply_masks() {
        let grid = unit_grid(16);
        let obs = ObservationOperator::window(grid, 0.5, 1.0).unwrap();
        let zero = GridFunction::zeros(grid);
        assert_eq!(obs.apply(&zero).unwrap().norm(), 0.0);

        // supported outside the window -> zero output
        let f = GridFunction::from_closure(grid, |x| if x < 0.5 { 1.0 } else { 0.0 }).unwrap();
        assert_eq!(obs.apply(&f).unwrap().norm(), 0.0);

        // kernel characterization: output vanishes iff window samples vanish
        let g = GridFunction::from_closure(grid, |x| if x >= 0.5 { 2.0 } else { 0.0 }).unwrap();
        assert!(obs.apply(&g).unwrap().norm() > 0.0);
    }

    #[test]
    fn window_adjoint_is_zero_extension() {
        let grid = unit_grid(16);
        let obs = ObservationOperator::window(grid, 0.25, 0.75).unwrap();
        let g = Observation::new(vec![1.0; 16], grid.h());
        let back = obs.adjoint_apply(&g).unwrap();
        for (j, x) in grid.nodes().enumerate() {
            if (0.25..=0.75).contains(&x) {
                assert_eq!(back.values()[j], 1.0);
            } else {
                assert_eq!(back.values()[j], 0.0);
            }
        }
    }

    #[test]
    fn cld_single_cell_output() {
        let grid = unit_grid(32);
        let obs = ObservationOperator::cld(grid, 0.5, 1.0, 64).unwrap();
        let j = 24; // x = 0.75, inside the window
        let mut f = GridFunction::zeros(grid);
        f.values_mut()[j] = 1.0;
        let q = obs.apply(&f).unwrap();
        let x = grid.node(j);
        if let ObservationOperator::Cld(c) = &obs {
            for (i, &v) in q.values().iter().enumerate() {
                let want = fbrm_kernel(x, c.obs_grid().node(i)).unwrap() * grid.h();
                assert_abs_diff_eq!(v, want, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn cld_ignores_padded_region() {
        let grid = unit_grid(32);
        let obs = ObservationOperator::cld(grid, 0.5, 1.0, 64).unwrap();
        let f = GridFunction::from_closure(grid, |x| if x < 0.5 { 3.0 } else { 0.0 }).unwrap();
        assert_eq!(obs.apply(&f).unwrap().norm(), 0.0);
    }

    #[test]
    fn adjoint_duality_both_operators() {
        let grid = unit_grid(48);
        let ops = [
            ObservationOperator::window(grid, 0.3, 0.8).unwrap(),
            ObservationOperator::cld(grid, 0.4, 1.0, 96).unwrap(),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        for obs in &ops {
            for _ in 0..20 {
                let f = GridFunction::random_unit(grid, &mut rng);
                let mut g = obs.zero_observation();
                for v in g.values_mut() {
                    *v = rng.random_range(-1.0..1.0);
                }
                let lhs = obs.apply(&f).unwrap().inner(&g).unwrap();
                let rhs = f.inner(&obs.adjoint_apply(&g).unwrap()).unwrap();
                let scale = f.norm() * g.norm();
                assert!((lhs - rhs).abs() <= 1e-12 * scale.max(1e-30));
            }
        }
    }

    #[test]
    fn cld_boundedness() {
        let grid = unit_grid(64);
        let (x_min, x_max) = (0.4, 1.0);
        let obs = ObservationOperator::cld(grid, x_min, x_max, 128).unwrap();
        let bound = (2.0 * x_max * (x_max - x_min)).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        for _ in 0..20 {
            let f = GridFunction::random_unit(grid, &mut rng);
            assert!(obs.apply(&f).unwrap().norm() <= bound * (1.0 + 1e-12));
        }
    }

    #[test]
    fn normal_operator_symmetric_psd() {
        let grid = unit_grid(32);
        for obs in [
            ObservationOperator::window(grid, 0.2, 0.7).unwrap(),
            ObservationOperator::cld(grid, 0.3, 1.0, 64).unwrap(),
        ] {
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            for _ in 0..10 {
                let f = GridFunction::random_unit(grid, &mut rng);
                let g = GridFunction::random_unit(grid, &mut rng);
                let nf = obs.normal_apply(&f).unwrap();
                let ng = obs.normal_apply(&g).unwrap();
                assert!((nf.inner(&g).unwrap() - f.inner(&ng).unwrap()).abs() <= 1e-12);
                assert!(nf.inner(&f).unwrap() >= -1e-12);
            }
        }
    }

    #[test]
    fn injectivity_margin_positive_and_refines() {
        // single window column: margin equals the column norm
        let grid = PeriodicGrid::new(0.0, 1.0, 8).unwrap();
        let obs = CldKernelObserver::new(grid, 0.49, 0.6, 16).unwrap();
        assert_eq!(obs.window().iter().filter(|&&w| w).count(), 1);
        let margin = obs.kernel_injectivity_margin().unwrap();
        assert!(margin > 0.0);

        // margin non-increasing (within 5 percent) as n doubles, m fixed
        let mut margins = Vec::new();
        for n in [32usize, 64, 128] {
            let grid = PeriodicGrid::new(0.0, 1.0, n).unwrap();
            let obs = CldKernelObserver::new(grid, 0.25, 1.0, 128).unwrap();
            margins.push(obs.kernel_injectivity_margin().unwrap());
        }
        assert!(margins.iter().all(|&m| m > 0.0));
        for pair in margins.windows(2) {
            assert!(
                pair[1] <= pair[0] * 1.05,
                "margins not non-increasing: {margins:?}"
            );
        }

        // more window nodes than chord samples: the restriction cannot be
        // injective
        let grid = PeriodicGrid::new(0.0, 1.0, 128).unwrap();
        let obs = CldKernelObserver::new(grid, 0.25, 1.0, 64).unwrap();
        assert_eq!(obs.kernel_injectivity_margin().unwrap(), 0.0);
    }

    #[test]
    fn kernel_csv_has_header_and_rows() {
        let grid = unit_grid(8);
        let obs = CldKernelObserver::new(grid, 0.5, 1.0, 4).unwrap();
        let mut buf = Vec::new();
        obs.write_kernel_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("l,x,k"));
        assert_eq!(text.lines().count(), 1 + 4 * 8);
    }
}

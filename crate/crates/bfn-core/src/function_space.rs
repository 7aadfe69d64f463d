//! Uniform periodic grids and the discrete L² structure.
//!
//! A [`PeriodicGrid`] holds `n` cells over `[x0, x1]` with the right endpoint
//! identified with the left one; nodes sit at the left cell edges. A
//! [`GridFunction`] is a real sample vector on those nodes and models an
//! element of L²((x0, x1)). The inner product is the rectangle rule
//! `h * sum f_j g_j`, which is exact on the trigonometric basis of the grid,
//! so norms and adjoints computed here are consistent with the spectral
//! transport in [`crate::transport`].

use crate::{Error, Result};
use rand::Rng;

/// Uniform periodic grid over `[x0, x1]` with `n` cells of width `h`.
///
/// Nodes are `x_j = x0 + j h` for `j = 0..n-1`; `x1` is identified with `x0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeriodicGrid {
    x0: f64,
    x1: f64,
    n: usize,
    h: f64,
}

impl PeriodicGrid {
    pub fn new(x0: f64, x1: f64, n: usize) -> Result<Self> {
        if !(x0.is_finite() && x1.is_finite()) {
            return Err(Error::Parameter("grid endpoints must be finite".into()));
        }
        if x1 <= x0 {
            return Err(Error::Parameter(format!(
                "grid needs x1 > x0, got [{x0}, {x1}]"
            )));
        }
        if n == 0 {
            return Err(Error::Parameter("grid needs at least one cell".into()));
        }
        let h = (x1 - x0) / n as f64;
        Ok(Self { x0, x1, n, h })
    }

    pub fn x0(&self) -> f64 {
        self.x0
    }

    pub fn x1(&self) -> f64 {
        self.x1
    }

    /// Number of cells (and of nodes).
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Cell width.
    pub fn h(&self) -> f64 {
        self.h
    }

    /// Domain length `x1 - x0`.
    pub fn length(&self) -> f64 {
        self.x1 - self.x0
    }

    /// Position of node `j` (left cell edge).
    pub fn node(&self, j: usize) -> f64 {
        self.x0 + j as f64 * self.h
    }

    /// Iterator over node positions.
    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n).map(|j| self.node(j))
    }
}

/// Reduce `x` into `[x0, x1)` modulo the domain length.
pub fn periodic_wrap(x: f64, grid: &PeriodicGrid) -> f64 {
    let l = grid.length();
    let mut w = grid.x0 + (x - grid.x0).rem_euclid(l);
    // rem_euclid can round up to exactly l for tiny negative arguments.
    if w >= grid.x1 {
        w = grid.x0;
    }
    w
}

/// Real-valued samples on the nodes of a [`PeriodicGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    grid: PeriodicGrid,
    values: Vec<f64>,
}

impl GridFunction {
    /// Wrap an existing sample vector. Fails on length mismatch or
    /// non-finite entries.
    pub fn from_values(grid: PeriodicGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "expected {} samples, got {}",
                grid.len(),
                values.len()
            )));
        }
        if let Some(j) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("sample {j} is {}", values[j])));
        }
        Ok(Self { grid, values })
    }

    /// Sample a pointwise function on the nodes.
    pub fn from_closure(grid: PeriodicGrid, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values: Vec<f64> = grid.nodes().map(f).collect();
        Self::from_values(grid, values)
    }

    /// The zero function.
    pub fn zeros(grid: PeriodicGrid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    /// White-noise samples, normalized to unit L² norm.
    pub fn random_unit(grid: PeriodicGrid, rng: &mut impl Rng) -> Self {
        let mut f = Self {
            grid,
            values: (0..grid.len())
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
        };
        let n = f.norm();
        if n > 0.0 {
            f.scale_in_place(1.0 / n);
        } else {
            f.values[0] = 1.0 / grid.h().sqrt();
        }
        f
    }

    /// Random trigonometric polynomial with modes up to `max_mode`,
    /// normalized to unit L² norm. Band-limited data stays band-limited
    /// under spectral transport, which makes these convenient probes.
    pub fn random_band_limited(grid: PeriodicGrid, max_mode: usize, rng: &mut impl Rng) -> Self {
        let l = grid.length();
        let mut values = vec![0.0; grid.len()];
        for k in 0..=max_mode.min(grid.len() / 2 - 1) {
            let a: f64 = rng.random_range(-1.0..1.0);
            let b: f64 = if k == 0 {
                0.0
            } else {
                rng.random_range(-1.0..1.0)
            };
            for (j, x) in grid.nodes().enumerate() {
                let phase = 2.0 * std::f64::consts::PI * k as f64 * (x - grid.x0()) / l;
                values[j] += a * phase.cos() + b * phase.sin();
            }
        }
        let mut f = Self { grid, values };
        let n = f.norm();
        if n > 0.0 {
            f.scale_in_place(1.0 / n);
        }
        f
    }

    pub fn grid(&self) -> &PeriodicGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Discrete L² inner product `h * sum f_j g_j`, summed in ascending
    /// node order so results are bit-reproducible.
    pub fn inner(&self, other: &Self) -> Result<f64> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch(
                "inner product needs both functions on the same grid".into(),
            ));
        }
        let mut acc = 0.0;
        for (a, b) in self.values.iter().zip(&other.values) {
            acc += a * b;
        }
        Ok(self.grid.h() * acc)
    }

    /// Induced L² norm.
    pub fn norm(&self) -> f64 {
        let mut acc = 0.0;
        for v in &self.values {
            acc += v * v;
        }
        (self.grid.h() * acc).sqrt()
    }

    pub fn scale_in_place(&mut self, c: f64) {
        for v in &mut self.values {
            *v *= c;
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.scale_in_place(c);
        out
    }

    /// `self += c * other`; grids must match.
    pub fn axpy(&mut self, c: f64, other: &Self) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch("axpy needs matching grids".into()));
        }
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += c * b;
        }
        Ok(())
    }

    /// `self - other` as a new function.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch("sub needs matching grids".into()));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Self {
            grid: self.grid,
            values,
        })
    }

    /// `self + other` as a new function.
    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch("add needs matching grids".into()));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Self {
            grid: self.grid,
            values,
        })
    }
}

/// Uniform measurement grid over chord lengths `[l_min, l_max]`.
///
/// Sample points are the left edges `l_i = l_min + i * (l_max - l_min) / m`,
/// matching the state-grid convention, with rectangle-rule weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationGrid {
    l_min: f64,
    l_max: f64,
    m: usize,
    weights: Vec<f64>,
}

impl ObservationGrid {
    pub fn new(l_min: f64, l_max: f64, m: usize) -> Result<Self> {
        if l_max <= l_min {
            return Err(Error::Parameter(format!(
                "observation grid needs l_max > l_min, got [{l_min}, {l_max}]"
            )));
        }
        if m == 0 {
            return Err(Error::Parameter(
                "observation grid needs at least one sample".into(),
            ));
        }
        let w = (l_max - l_min) / m as f64;
        Ok(Self {
            l_min,
            l_max,
            m,
            weights: vec![w; m],
        })
    }

    pub fn l_min(&self) -> f64 {
        self.l_min
    }

    pub fn l_max(&self) -> f64 {
        self.l_max
    }

    pub fn len(&self) -> usize {
        self.m
    }

    pub fn is_empty(&self) -> bool {
        self.m == 0
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Uniform quadrature weight (all weights are equal).
    pub fn weight(&self) -> f64 {
        self.weights[0]
    }

    pub fn node(&self, i: usize) -> f64 {
        self.l_min + i as f64 * self.weight()
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.m).map(|i| self.node(i))
    }
}

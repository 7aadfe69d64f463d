//! Batch-crystallization scenario: reconstruct the initial crystal size
//! distribution (CSD) and the nucleation history from chord-length
//! measurements.
//!
//! Crystals of size `x` in `[x_min, x_max]` grow at the size-independent
//! rate `G(t) > 0`; nucleation injects crystals of size `x_min` at rate
//! `u(t)`. Extending the domain to the left by the total growth turns the
//! boundary source into initial data: the padded region `[x0, x_min)`
//! carries `u` laid out along characteristics, so the whole batch becomes a
//! single periodic transport problem whose initial state is the unknown.
//! The measurement is either the chord-length distribution of the in-range
//! crystals or a plain window restriction, and a BFN run over the batch
//! horizon estimates the extended initial state; restriction to the window
//! recovers the CSD, the padded region (read through the inverse of the
//! time-to-size map) recovers the nucleation rate.
//!
//! A note on the right boundary: the domain is periodic, so crystals grown
//! past `x_max` re-enter the pad. Over the batch horizon that mass cannot
//! travel back to the observation window, so measurements stay faithful to
//! the physical model; the fidelity monitor checks this against the
//! method-of-characteristics closed form on the window.

use crate::function_space::{GridFunction, PeriodicGrid};
use crate::observation::ObservationOperator;
use crate::observers::{run_bfn_with, BfnRun, ObserverConfig, OutputRecord};
use crate::transport::{Interpolation, TransportPropagator, VelocityProfile};
use crate::{Error, Result};
use std::fmt;
use std::sync::Arc;
use std::time::{Duration, Instant};

type SpaceFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Which output operator drives the reconstruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrystObserverKind {
    Cld,
    Window,
}

/// Physical description of one batch.
#[derive(Clone)]
pub struct CrystallizationScenario {
    x_min: f64,
    x_max: f64,
    t_end: f64,
    profile: VelocityProfile,
    n0: SpaceFn,
    u: SpaceFn,
    noise_std: f64,
    seed: u64,
}

impl fmt::Debug for CrystallizationScenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CrystallizationScenario")
            .field("x_min", &self.x_min)
            .field("x_max", &self.x_max)
            .field("t_end", &self.t_end)
            .field("noise_std", &self.noise_std)
            .field("seed", &self.seed)
            .finish()
    }
}

impl CrystallizationScenario {
    pub fn new(
        x_min: f64,
        x_max: f64,
        t_end: f64,
        profile: VelocityProfile,
        n0: impl Fn(f64) -> f64 + Send + Sync + 'static,
        u: impl Fn(f64) -> f64 + Send + Sync + 'static,
        noise_std: f64,
        seed: u64,
    ) -> Result<Self> {
        if !(x_max > x_min && x_min > 0.0) {
            return Err(Error::Parameter(format!(
                "size range needs x_max > x_min > 0, got [{x_min}, {x_max}]"
            )));
        }
        if !(t_end > 0.0) {
            return Err(Error::Parameter("batch duration must be positive".into()));
        }
        if !(noise_std >= 0.0) {
            return Err(Error::Parameter("noise level must be nonnegative".into()));
        }
        // growth must be strictly positive over the horizon
        for i in 0..=256 {
            let t = t_end * i as f64 / 256.0;
            let g = profile.rate(t);
            if !(g > 0.0) {
                return Err(Error::Parameter(format!(
                    "growth rate must be positive on [0, T]; G({t}) = {g}"
                )));
            }
        }
        Ok(Self {
            x_min,
            x_max,
            t_end,
            profile,
            n0: Arc::new(n0),
            u: Arc::new(u),
            noise_std,
            seed,
        })
    }

    /// The stock desk-scale scenario: sizes in `[1, 2]`, a sinusoidally
    /// modulated growth with unit total displacement over `T = 2` (so the
    /// extended domain starts at zero and the swept-window condition holds
    /// with equality), a Gaussian initial CSD whose tails vanish at both
    /// ends of the size range, and a nucleation pulse that vanishes to
    /// third order at both ends of the batch. Everything is smooth enough
    /// for the spectral transport to track the characteristics closed form
    /// to well below 1e-6.
    pub fn default_scenario() -> Self {
        let t_end = 2.0;
        let profile = VelocityProfile::sinusoidal(0.5, 0.125, t_end)
            .expect("stock profile parameters are valid");
        let n0 = |x: f64| (-((x - 1.45) / 0.07).powi(2) / 2.0).exp();
        let u = |t: f64| 0.8 * (std::f64::consts::PI * t / 2.0).sin().powi(4);
        Self::new(1.0, 2.0, t_end, profile, n0, u, 0.0, 0)
            .expect("stock scenario parameters are valid")
    }

    pub fn with_noise(mut self, noise_std: f64, seed: u64) -> Self {
        self.noise_std = noise_std;
        self.seed = seed;
        self
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn profile(&self) -> &VelocityProfile {
        &self.profile
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn initial_csd(&self, x: f64) -> f64 {
        (self.n0)(x)
    }

    pub fn nucleation(&self, t: f64) -> f64 {
        (self.u)(t)
    }

    /// Total displacement `int_0^T G`.
    pub fn total_growth(&self) -> Result<f64> {
        let g = self.profile.cumulative_growth(0.0, self.t_end)?;
        if !(g > 0.0) {
            return Err(Error::Parameter(format!(
                "total growth must be positive, got {g}"
            )));
        }
        Ok(g)
    }

    /// Extended periodic domain `[x_min - int_0^T G, x_max]` with `n` cells.
    pub fn extended_grid(&self, n: usize) -> Result<PeriodicGrid> {
        let growth = self.total_growth()?;
        PeriodicGrid::new(self.x_min - growth, self.x_max, n)
    }

    /// The extended initial state: `u` mapped onto the pad through the
    /// time-to-size map `t(x) = T (x_min - x) / int_0^T G`, and `n0` on the
    /// window.
    pub fn extended_initial_value(&self, x: f64) -> Result<f64> {
        let growth = self.total_growth()?;
        if x < self.x_min {
            Ok((self.u)(self.t_end * (self.x_min - x) / growth))
        } else {
            Ok((self.n0)(x))
        }
    }

    /// Size reached by the pad coordinate of time `t` (inverse of the
    /// time-to-size map).
    pub fn pad_position(&self, t: f64) -> Result<f64> {
        let growth = self.total_growth()?;
        Ok(self.x_min - growth * t / self.t_end)
    }
}

/// Sample the extended initial state on the grid.
pub fn extend_initial_state(
    scn: &CrystallizationScenario,
    grid: &PeriodicGrid,
) -> Result<GridFunction> {
    let expected = scn.extended_grid(grid.len())?;
    if (grid.x0() - expected.x0()).abs() > 1e-9 || (grid.x1() - expected.x1()).abs() > 1e-9 {
        return Err(Error::GridMismatch(format!(
            "grid [{}, {}] does not match the extended domain [{}, {}]",
            grid.x0(),
            grid.x1(),
            expected.x0(),
            expected.x1()
        )));
    }
    let mut values = Vec::with_capacity(grid.len());
    for x in grid.nodes() {
        values.push(scn.extended_initial_value(x)?);
    }
    GridFunction::from_values(*grid, values)
}

/// Method-of-characteristics solution at time `t`, sampled on the grid:
/// the extended initial value at the wrapped characteristic foot.
pub fn closed_form_state(
    scn: &CrystallizationScenario,
    grid: &PeriodicGrid,
    t: f64,
) -> Result<GridFunction> {
    let delta = scn.profile.cumulative_growth(0.0, t)?;
    let mut values = Vec::with_capacity(grid.len());
    for x in grid.nodes() {
        let foot = crate::function_space::periodic_wrap(x - delta, grid);
        values.push(scn.extended_initial_value(foot)?);
    }
    GridFunction::from_values(*grid, values)
}

/// Synthesize the measurement record: the observer applied to the true
/// trajectory at every step time, plus seeded Gaussian noise when the
/// scenario asks for it.
pub fn synthesize_cld(
    scn: &CrystallizationScenario,
    grid: &PeriodicGrid,
    prop: &TransportPropagator,
    obs: &ObservationOperator,
    dt: f64,
) -> Result<OutputRecord> {
    let truth0 = extend_initial_state(scn, grid)?;
    let mut record = OutputRecord::synthesize(prop, obs, &truth0, scn.t_end, dt)?;
    if scn.noise_std > 0.0 {
        record.add_noise(scn.noise_std, scn.seed);
    }
    Ok(record)
}

/// Largest deviation of the simulated window trace from the closed-form
/// solution, relative to the peak of the truth. Contamination of the
/// observation window by wrapped-around mass would show up here.
pub fn window_trace_fidelity(
    scn: &CrystallizationScenario,
    grid: &PeriodicGrid,
    prop: &TransportPropagator,
) -> Result<f64> {
    let truth0 = extend_initial_state(scn, grid)?;
    let peak = truth0
        .values()
        .iter()
        .fold(0.0f64, |m, &v| m.max(v.abs()))
        .max(1e-300);
    let window: Vec<usize> = grid
        .nodes()
        .enumerate()
        .filter(|(_, x)| *x >= scn.x_min)
        .map(|(j, _)| j)
        .collect();
    let mut worst = 0.0f64;
    let samples = 64;
    for i in 0..=samples {
        let t = scn.t_end * i as f64 / samples as f64;
        let sim = prop.propagate(&truth0, t, 0.0)?;
        let exact = closed_form_state(scn, grid, t)?;
        for &j in &window {
            worst = worst.max((sim.values()[j] - exact.values()[j]).abs());
        }
    }
    Ok(worst / peak)
}

/// Per-iteration reconstruction quality and the underlying BFN diagnostics.
#[derive(Debug, Clone)]
pub struct ReconstructionReport {
    /// Relative L2 error of the estimated CSD on `[x_min, x_max]`, for
    /// iterations 0..=N.
    pub csd_error_per_iteration: Vec<f64>,
    /// Relative L2 error of the estimated nucleation rate, same indexing.
    pub nucleation_error_per_iteration: Vec<f64>,
    pub bfn: BfnRun,
    pub wall_time: Duration,
    /// Window-trace fidelity of the synthetic truth (see
    /// [`window_trace_fidelity`]).
    pub window_fidelity: f64,
    /// Grid the run used.
    pub grid: PeriodicGrid,
    /// True extended initial state on that grid.
    pub truth: GridFunction,
}

/// Relative L2 error of `estimate` against the true CSD over the window.
pub fn csd_relative_error(
    scn: &CrystallizationScenario,
    grid: &PeriodicGrid,
    estimate: &GridFunction,
) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (j, x) in grid.nodes().enumerate() {
        if x >= scn.x_min {
            let truth = scn.initial_csd(x);
            num += (estimate.values()[j] - truth).powi(2);
            den += truth * truth;
        }
    }
    (num / den.max(1e-300)).sqrt()
}

/// Read the nucleation estimate off the pad: sample the inverse
/// time-to-size map at `n_samples + 1` uniform times and interpolate the
/// state linearly between grid nodes.
pub fn nucleation_estimate(
    scn: &CrystallizationScenario,
    grid: &PeriodicGrid,
    estimate: &GridFunction,
    n_samples: usize,
) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::with_capacity(n_samples + 1);
    for k in 0..=n_samples {
        let t = scn.t_end * k as f64 / n_samples as f64;
        let x = scn.pad_position(t)?;
        out.push((t, interp_periodic(estimate, grid, x)));
    }
    Ok(out)
}

/// Relative L2 error of the extracted nucleation history.
pub fn nucleation_relative_error(
    scn: &CrystallizationScenario,
    grid: &PeriodicGrid,
    estimate: &GridFunction,
    n_samples: usize,
) -> Result<f64> {
    let samples = nucleation_estimate(scn, grid, estimate, n_samples)?;
    let mut num = 0.0;
    let mut den = 0.0;
    for (t, v) in samples {
        let truth = scn.nucleation(t);
        num += (v - truth).powi(2);
        den += truth * truth;
    }
    Ok((num / den.max(1e-300)).sqrt())
}

fn interp_periodic(f: &GridFunction, grid: &PeriodicGrid, x: f64) -> f64 {
    let pos = (crate::function_space::periodic_wrap(x, grid) - grid.x0()) / grid.h();
    let n = grid.len();
    let j0 = pos.floor() as usize % n;
    let w = pos - pos.floor();
    let j1 = (j0 + 1) % n;
    (1.0 - w) * f.values()[j0] + w * f.values()[j1]
}

/// End-to-end reconstruction: synthesize the measurement, run BFN from a
/// zero initial guess, and report per-iteration errors against the truth.
pub fn reconstruct_csd(
    scn: &CrystallizationScenario,
    n: usize,
    cfg: &ObserverConfig,
    n_iterations: usize,
    kind: CrystObserverKind,
    interp: Interpolation,
    cld_samples: Option<usize>,
) -> Result<ReconstructionReport> {
    let start = Instant::now();
    let grid = scn.extended_grid(n)?;
    let prop = TransportPropagator::new(grid, scn.profile().clone(), interp);
    let obs = match kind {
        CrystObserverKind::Window => ObservationOperator::window(grid, scn.x_min, scn.x_max)?,
        CrystObserverKind::Cld => {
            ObservationOperator::cld(grid, scn.x_min, scn.x_max, cld_samples.unwrap_or(2 * n))?
        }
    };
    let truth = extend_initial_state(scn, &grid)?;
    // half-step sampling hands the correction exact midpoint data
    let record = synthesize_cld(scn, &grid, &prop, &obs, cfg.dt * 0.5)?;
    let window_fidelity = window_trace_fidelity(scn, &grid, &prop)?;

    let guess = GridFunction::zeros(grid);
    let mut csd_errors = Vec::with_capacity(n_iterations + 1);
    let mut nuc_errors = Vec::with_capacity(n_iterations + 1);
    let nuc_samples = 2 * n;
    let bfn = run_bfn_with(
        &prop,
        &obs,
        cfg,
        &guess,
        &record,
        n_iterations,
        None,
        Some(&truth),
        |_, z0| {
            csd_errors.push(csd_relative_error(scn, &grid, z0));
            nuc_errors.push(nucleation_relative_error(scn, &grid, z0, nuc_samples)?);
            Ok(())
        },
    )?;

    Ok(ReconstructionReport {
        csd_error_per_iteration: csd_errors,
        nucleation_error_per_iteration: nuc_errors,
        bfn,
        wall_time: start.elapsed(),
        window_fidelity,
        grid,
        truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::observation::fbrm_kernel;

    #[test]
    fn scenario_rejects_bad_parameters() {
        let p = VelocityProfile::constant(1.0);
        assert!(
            CrystallizationScenario::new(0.0, 2.0, 1.0, p.clone(), |_| 0.0, |_| 0.0, 0.0, 0)
                .is_err()
        );
        assert!(
            CrystallizationScenario::new(2.0, 1.0, 1.0, p.clone(), |_| 0.0, |_| 0.0, 0.0, 0)
                .is_err()
        );
        let shrinking = VelocityProfile::constant(-1.0);
        assert!(
            CrystallizationScenario::new(1.0, 2.0, 1.0, shrinking, |_| 0.0, |_| 0.0, 0.0, 0)
                .is_err()
        );
    }

    #[test]
    fn default_scenario_has_unit_total_growth() {
        let scn = CrystallizationScenario::default_scenario();
        assert!((scn.total_growth().unwrap() - 1.0).abs() <= 1e-12);
        let grid = scn.extended_grid(64).unwrap();
        assert!((grid.x0()).abs() <= 1e-12);
        assert_eq!(grid.x1(), 2.0);
        // the swept-window condition holds with equality
        assert!(crate::gramian::geometric_condition(
            scn.profile(),
            0.0,
            scn.t_end(),
            scn.x_min(),
            scn.x_max(),
            &grid
        )
        .unwrap());
    }

    #[test]
    fn extended_state_without_nucleation_is_csd_only() {
        let scn = CrystallizationScenario::new(
            1.0,
            2.0,
            1.0,
            VelocityProfile::constant(1.0),
            |x| (x - 1.5) * (x - 1.5),
            |_| 0.0,
            0.0,
            0,
        )
        .unwrap();
        let grid = scn.extended_grid(64).unwrap();
        let z0 = extend_initial_state(&scn, &grid).unwrap();
        for (j, x) in grid.nodes().enumerate() {
            if x < 1.0 {
                assert_eq!(z0.values()[j], 0.0);
            } else {
                assert_eq!(z0.values()[j], (x - 1.5) * (x - 1.5));
            }
        }
    }

    #[test]
    fn pad_holds_time_reversed_nucleation() {
        // G = 1, T = 1, x_min = 1: the time-to-size map is t = 1 - x
        let scn = CrystallizationScenario::new(
            1.0,
            2.0,
            1.0,
            VelocityProfile::constant(1.0),
            |_| 0.0,
            |t| t * t + 0.25,
            0.0,
            0,
        )
        .unwrap();
        assert!((scn.extended_initial_value(0.5).unwrap() - (0.25 + 0.25)).abs() <= 1e-14);
    }

    #[test]
    fn boundary_trace_reproduces_nucleation_for_constant_growth() {
        let scn = CrystallizationScenario::new(
            1.0,
            2.0,
            1.0,
            VelocityProfile::constant(1.0),
            |_| 0.0,
            |t| (std::f64::consts::PI * t).sin().powi(4),
            0.0,
            0,
        )
        .unwrap();
        let grid = scn.extended_grid(128).unwrap();
        let prop = TransportPropagator::new(grid, scn.profile().clone(), Interpolation::Spectral);
        let z0 = extend_initial_state(&scn, &grid).unwrap();
        // x_min sits exactly on a node for this grid
        let j_min = (0..grid.len())
            .find(|&j| (grid.node(j) - scn.x_min()).abs() < 1e-12)
            .unwrap();
        for &t in &[0.1, 0.33, 0.5, 0.71, 0.9] {
            let z = prop.propagate(&z0, t, 0.0).unwrap();
            let want = scn.nucleation(t);
            assert!(
                (z.values()[j_min] - want).abs() <= 1e-6,
                "t = {t}: {} vs {want}",
                z.values()[j_min]
            );
        }
    }

    #[test]
    fn window_trace_matches_characteristics() {
        let scn = CrystallizationScenario::default_scenario();
        let grid = scn.extended_grid(128).unwrap();
        let prop = TransportPropagator::new(grid, scn.profile().clone(), Interpolation::Spectral);
        let fidelity = window_trace_fidelity(&scn, &grid, &prop).unwrap();
        assert!(fidelity <= 1e-6, "fidelity {fidelity:.3e}");
    }

    #[test]
    fn scenario_window_gramian_is_injective() {
        // the equality case of the swept-window condition: nothing is
        // invisible to the window observer over the batch
        let scn = CrystallizationScenario::default_scenario();
        let n = 64;
        let grid = scn.extended_grid(n).unwrap();
        let prop = TransportPropagator::new(grid, scn.profile().clone(), Interpolation::Linear);
        let obs = ObservationOperator::window(grid, scn.x_min(), scn.x_max()).unwrap();
        let n_time = crate::gramian::default_time_samples(scn.profile(), &grid, 0.0, scn.t_end());
        let analysis =
            crate::gramian::assemble_gramian(&prop, &obs, 0.0, scn.t_end(), n_time).unwrap();
        assert!(analysis.exact_observability_margin() > analysis.rank_tol());
        assert_eq!(analysis.observable_dim(), n);
    }

    #[test]
    fn synthesized_record_of_empty_batch_is_zero() {
        let scn = CrystallizationScenario::new(
            1.0,
            2.0,
            1.0,
            VelocityProfile::constant(1.0),
            |_| 0.0,
            |_| 0.0,
            0.0,
            0,
        )
        .unwrap();
        let grid = scn.extended_grid(64).unwrap();
        let prop = TransportPropagator::new(grid, scn.profile().clone(), Interpolation::Spectral);
        let obs = ObservationOperator::cld(grid, 1.0, 2.0, 128).unwrap();
        let record = synthesize_cld(&scn, &grid, &prop, &obs, 1.0 / 64.0).unwrap();
        for i in 0..record.times().len() {
            assert_eq!(record.value(i).norm(), 0.0);
        }
    }

    #[test]
    fn narrow_bump_cld_approximates_single_column() {
        let c = 1.5;
        let sigma = 0.02;
        let scn = CrystallizationScenario::new(
            1.0,
            2.0,
            1.0,
            VelocityProfile::constant(1.0),
            move |x: f64| (-((x - c) / sigma).powi(2) / 2.0).exp(),
            |_| 0.0,
            0.0,
            0,
        )
        .unwrap();
        let grid = scn.extended_grid(256).unwrap();
        let prop = TransportPropagator::new(grid, scn.profile().clone(), Interpolation::Spectral);
        let obs = ObservationOperator::cld(grid, 1.0, 2.0, 128).unwrap();
        let record = synthesize_cld(&scn, &grid, &prop, &obs, 1.0 / 64.0).unwrap();
        let q0 = record.value(0);
        // mass of the bump by the same quadrature
        let z0 = extend_initial_state(&scn, &grid).unwrap();
        let mass: f64 = z0.values().iter().sum::<f64>() * grid.h();
        let og = match &obs {
            ObservationOperator::Cld(c) => c.obs_grid().clone(),
            _ => unreachable!(),
        };
        let mut prev = -1.0;
        for (i, &v) in q0.values().iter().enumerate() {
            let l = og.node(i);
            // away from the square-root corner at l = 2c the bump smears
            // the single-column value only mildly
            if (l - 2.0 * c).abs() > 8.0 * sigma {
                let want = mass * fbrm_kernel(c, l).unwrap();
                assert!((v - want).abs() <= 0.05 * mass, "l = {l}: {v} vs {want}");
            }
            // cumulative distribution: non-decreasing in the chord length
            assert!(v >= prev - 1e-12 * mass, "l = {l}");
            if l >= 2.0 * (c + 4.0 * sigma) {
                // constant once every chord is counted
                assert!((v - mass).abs() <= 1e-3 * mass, "l = {l}");
            }
            prev = v;
        }
    }

    #[test]
    fn reconstruction_from_true_start_is_exact() {
        let scn = CrystallizationScenario::default_scenario();
        let n = 64;
        let grid = scn.extended_grid(n).unwrap();
        let prop = TransportPropagator::new(grid, scn.profile().clone(), Interpolation::Spectral);
        let obs = ObservationOperator::window(grid, scn.x_min(), scn.x_max()).unwrap();
        let cfg = ObserverConfig::new(5.0, 1.0 / 64.0).unwrap();
        let truth = extend_initial_state(&scn, &grid).unwrap();
        let record = synthesize_cld(&scn, &grid, &prop, &obs, cfg.dt * 0.5).unwrap();
        let run =
            crate::observers::run_bfn(&prop, &obs, &cfg, &truth, &record, 3, None, Some(&truth))
                .unwrap();
        assert!(run.initial_error_norms.iter().all(|&e| e <= 1e-8));
    }

    #[test]
    fn window_reconstruction_converges_at_desk_scale() {
        let scn = CrystallizationScenario::default_scenario();
        let cfg = ObserverConfig::new(5.0, 1.0 / 64.0).unwrap();
        let report = reconstruct_csd(
            &scn,
            64,
            &cfg,
            8,
            CrystObserverKind::Window,
            Interpolation::Spectral,
            None,
        )
        .unwrap();
        let errs = &report.csd_error_per_iteration;
        assert_eq!(errs.len(), 9);
        assert!(errs[0] > 0.9, "starts from a zero guess");
        assert!(errs[8] < 0.2, "final error {:.3}", errs[8]);
        // the full-state error is what BFN contracts
        for w in report.bfn.initial_error_norms.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-10));
        }
        // the 1e-6 fidelity contract holds from n = 128 up; this smoke run
        // is at n = 64
        assert!(report.window_fidelity <= 1e-5);
    }
}

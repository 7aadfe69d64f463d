//! Forward and backward Luenberger observers and the back-and-forth nudging
//! (BFN) iteration.
//!
//! The observer copies the plant and nudges it with the output innovation:
//! `dz^/dt = A(t) z^ - r C*(C z^ - y)`. One step advances by operator
//! splitting: half a step of exact transport, a full correction step, half a
//! step of transport (Strang; a first-order Lie variant is available).
//! The correction sub-step is solved exactly when `C*C` is a diagonal mask
//! (per-node exponential decay toward the data) and by one fourth-order
//! explicit step otherwise. With spectral transport the resulting error flow
//! is a contraction per step, and a full backward sweep is the exact adjoint
//! of the forward sweep, which is the structure the BFN convergence
//! arguments lean on.
//!
//! BFN alternates a forward sweep over `[0, T]` with a backward sweep over
//! `[T, 0]`, each sweep starting from the other's endpoint, and reads off
//! the initial-state estimate after each round trip.
//!
//! Records are sampled on their own uniform grid. Sampling at half the
//! observer step hands the correction exact midpoint data, which makes the
//! discrete truth an exact fixed point of the observer; a record sampled at
//! the observer step itself is also accepted, with midpoints filled in by
//! linear interpolation (second-order, no longer an exact fixed point).

use crate::function_space::GridFunction;
use crate::gramian::GramianAnalysis;
use crate::observation::{Observation, ObservationOperator};
use crate::transport::TransportPropagator;
use crate::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Splitting scheme for one observer step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// Second order: half transport, correction, half transport.
    Strang,
    /// First order: full transport, then correction.
    Lie,
}

/// Direction of integration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// Gain, step size, scheme and direction of an observer run.
#[derive(Debug, Clone, Copy)]
pub struct ObserverConfig {
    pub r: f64,
    pub dt: f64,
    pub scheme: Scheme,
    pub direction: Direction,
}

impl ObserverConfig {
    /// Strang-splitting forward configuration. A zero gain is accepted and
    /// turns the observer into the plain plant dynamics.
    pub fn new(r: f64, dt: f64) -> Result<Self> {
        if !(r >= 0.0 && r.is_finite()) {
            return Err(Error::Parameter(format!(
                "gain must satisfy r >= 0, got {r}"
            )));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Parameter(format!(
                "step must satisfy dt > 0, got {dt}"
            )));
        }
        Ok(Self {
            r,
            dt,
            scheme: Scheme::Strang,
            direction: Direction::Forward,
        })
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn with_direction(mut self, direction: Direction) -> Self {
        self.direction = direction;
        self
    }
}

/// Measured output sampled on a uniform time grid covering `[0, T]`.
#[derive(Debug, Clone)]
pub struct OutputRecord {
    times: Vec<f64>,
    values: Vec<Observation>,
    dt: f64,
}

impl OutputRecord {
    /// Record the output of the true trajectory started at `truth0`,
    /// sampled every `dt` over `[0, t_end]`.
    pub fn synthesize(
        prop: &TransportPropagator,
        obs: &ObservationOperator,
        truth0: &GridFunction,
        t_end: f64,
        dt: f64,
    ) -> Result<Self> {
        if !(t_end > 0.0 && dt > 0.0) {
            return Err(Error::Parameter("record needs t_end > 0 and dt > 0".into()));
        }
        let steps_f = t_end / dt;
        let steps = steps_f.round();
        if (steps_f - steps).abs() > 1e-9 || steps < 1.0 {
            return Err(Error::Parameter(format!(
                "dt = {dt} does not evenly divide the horizon {t_end}"
            )));
        }
        let steps = steps as usize;
        let mut times = Vec::with_capacity(steps + 1);
        let mut values = Vec::with_capacity(steps + 1);
        for i in 0..=steps {
            let t = i as f64 * dt;
            times.push(t);
            values.push(obs.apply(&prop.propagate(truth0, t, 0.0)?)?);
        }
        Ok(Self { times, values, dt })
    }

    /// Add seeded zero-mean Gaussian noise of standard deviation `std` to
    /// every sample. The draw sequence depends only on the seed, so two
    /// records noised from the same seed differ exactly by the scaled
    /// realization.
    pub fn add_noise(&mut self, std: f64, seed: u64) {
        if std == 0.0 {
            return;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for obs in &mut self.values {
            for v in obs.values_mut() {
                let n: f64 = StandardNormal.sample(&mut rng);
                *v += std * n;
            }
        }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Number of steps (one less than the number of samples).
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().expect("record is never empty")
    }

    pub fn value(&self, i: usize) -> &Observation {
        &self.values[i]
    }

    /// Linear interpolation at the midpoint of step `i`.
    pub fn midpoint(&self, i: usize) -> Result<Observation> {
        Observation::midpoint(&self.values[i], &self.values[i + 1])
    }
}

/// States, error norms and output residuals along one observer run.
#[derive(Debug, Clone)]
pub struct ObserverTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<GridFunction>,
    /// `||z^(t_i) - z(t_i)||`, present when the truth was supplied.
    pub error_norms: Option<Vec<f64>>,
    /// `||C z^(t_i) - y(t_i)||_Y`.
    pub output_residuals: Vec<f64>,
}

/// Diagnostics of a BFN run.
#[derive(Debug, Clone)]
pub struct BfnRun {
    pub iteration_count: usize,
    /// `||e^{2n}(0)||` for n = 0..=iterations, when the truth was supplied.
    pub initial_error_norms: Vec<f64>,
    /// `||P_O e^{2n}(0)||`, when both the truth and a Gramian analysis were
    /// supplied.
    pub projected_error_norms: Vec<f64>,
    /// Trapezoid value of `int ||C z^ - y||^2 dt` over each forward sweep.
    pub output_residual_integrals: Vec<f64>,
    /// `z^{2N}(0)`.
    pub final_estimate: GridFunction,
}

/// A record read at the observer's step resolution. `stride` is 2 when the
/// record is sampled at half the observer step (midpoints are then stored
/// samples) and 1 otherwise (midpoints by linear interpolation).
#[derive(Clone, Copy)]
struct RecordView<'a> {
    record: &'a OutputRecord,
    stride: usize,
}

impl<'a> RecordView<'a> {
    fn new(record: &'a OutputRecord, dt: f64) -> Result<Self> {
        let ratio = dt / record.dt();
        let stride = ratio.round();
        if (ratio - stride).abs() > 1e-9 || !(stride == 1.0 || stride == 2.0) {
            return Err(Error::Parameter(format!(
                "record step {} must equal the observer step {dt} or half of it",
                record.dt()
            )));
        }
        let stride = stride as usize;
        if record.steps() % stride != 0 {
            return Err(Error::Parameter(
                "record does not cover a whole number of observer steps".into(),
            ));
        }
        Ok(Self { record, stride })
    }

    fn steps(&self) -> usize {
        self.record.steps() / self.stride
    }

    fn time(&self, i: usize) -> f64 {
        self.record.times()[i * self.stride]
    }

    fn value(&self, i: usize) -> &Observation {
        self.record.value(i * self.stride)
    }

    fn midpoint(&self, i: usize) -> Result<Observation> {
        if self.stride == 2 {
            Ok(self.record.value(2 * i + 1).clone())
        } else {
            self.record.midpoint(i)
        }
    }
}

enum Data<'a> {
    Record(RecordView<'a>),
    Zero(Observation),
}

impl Data<'_> {
    fn midpoint(&self, i: usize) -> Result<Observation> {
        match self {
            Data::Record(r) => r.midpoint(i),
            Data::Zero(z) => Ok(z.clone()),
        }
    }
}

/// Advance the observer by one step of `cfg.dt` from time `t`, in the
/// configured direction, using the output value at the step midpoint.
pub fn observer_step(
    prop: &TransportPropagator,
    obs: &ObservationOperator,
    cfg: &ObserverConfig,
    z_hat: &GridFunction,
    y_mid: &Observation,
    t: f64,
) -> Result<GridFunction> {
    step_once(prop, obs, cfg, z_hat, y_mid, t)
}

fn step_once(
    prop: &TransportPropagator,
    obs: &ObservationOperator,
    cfg: &ObserverConfig,
    z: &GridFunction,
    y_mid: &Observation,
    t: f64,
) -> Result<GridFunction> {
    let dt = cfg.dt;
    let (t_mid, t_end) = match cfg.direction {
        Direction::Forward => (t + 0.5 * dt, t + dt),
        Direction::Backward => (t - 0.5 * dt, t - dt),
    };
    match cfg.scheme {
        Scheme::Strang => {
            let z1 = prop.propagate(z, t_mid, t)?;
            let z2 = correct(obs, cfg.r, dt, &z1, y_mid)?;
            prop.propagate(&z2, t_end, t_mid)
        }
        Scheme::Lie => {
            let z1 = prop.propagate(z, t_end, t)?;
            correct(obs, cfg.r, dt, &z1, y_mid)
        }
    }
}

/// Correction sub-step: integrate `dv/dt = -r C*(C v - y)` over `dt`.
///
/// Along either sweep direction the innovation decays toward the data with
/// the same sign (the backward observer's sign flip and the reversed time
/// direction cancel), so a single form serves both.
fn correct(
    obs: &ObservationOperator,
    r: f64,
    dt: f64,
    z: &GridFunction,
    y: &Observation,
) -> Result<GridFunction> {
    if r == 0.0 {
        return Ok(z.clone());
    }
    if let Some(mask) = obs.diagonal_mask() {
        // C*C is a diagonal mask: the sub-step has the closed form
        // v <- y + (v - y) exp(-r dt) on window nodes.
        let decay = (-r * dt).exp();
        let mut out = z.clone();
        let yv = y.values();
        if yv.len() != out.len() {
            return Err(Error::GridMismatch(
                "observation length does not match the state".into(),
            ));
        }
        for (j, v) in out.values_mut().iter_mut().enumerate() {
            if mask[j] {
                *v = yv[j] + (*v - yv[j]) * decay;
            }
        }
        return Ok(out);
    }

    let stiffness = r * dt * obs.normal_norm();
    if stiffness > 10.0 {
        return Err(Error::Stiffness(stiffness));
    }
    // one classical fourth-order step of the affine linear system
    let f = |v: &GridFunction| -> Result<GridFunction> {
        let innovation = obs.apply(v)?.sub(y)?;
        Ok(obs.adjoint_apply(&innovation)?.scaled(-r))
    };
    let k1 = f(z)?;
    let mut v2 = z.clone();
    v2.axpy(0.5 * dt, &k1)?;
    let k2 = f(&v2)?;
    let mut v3 = z.clone();
    v3.axpy(0.5 * dt, &k2)?;
    let k3 = f(&v3)?;
    let mut v4 = z.clone();
    v4.axpy(dt, &k3)?;
    let k4 = f(&v4)?;
    let mut out = z.clone();
    out.axpy(dt / 6.0, &k1)?;
    out.axpy(dt / 3.0, &k2)?;
    out.axpy(dt / 3.0, &k3)?;
    out.axpy(dt / 6.0, &k4)?;
    Ok(out)
}

fn check_setup(
    prop: &TransportPropagator,
    obs: &ObservationOperator,
    z0: &GridFunction,
) -> Result<()> {
    if prop.grid() != obs.grid() || z0.grid() != prop.grid() {
        return Err(Error::GridMismatch(
            "propagator, observer and state must share a grid".into(),
        ));
    }
    Ok(())
}

/// Run the forward observer over the record, storing the whole trajectory.
pub fn run_forward_observer(
    prop: &TransportPropagator,
    obs: &ObservationOperator,
    cfg: &ObserverConfig,
    z_hat0: &GridFunction,
    record: &OutputRecord,
    truth: Option<&GridFunction>,
) -> Result<ObserverTrajectory> {
    if cfg.direction != Direction::Forward {
        return Err(Error::Parameter(
            "run_forward_observer needs a forward configuration".into(),
        ));
    }
    check_setup(prop, obs, z_hat0)?;
    let view = RecordView::new(record, cfg.dt)?;
    let steps = view.steps();
    let mut states = Vec::with_capacity(steps + 1);
    states.push(z_hat0.clone());
    for i in 0..steps {
        let y_mid = view.midpoint(i)?;
        let next = step_once(prop, obs, cfg, &states[i], &y_mid, view.time(i))?;
        states.push(next);
    }

    let times: Vec<f64> = (0..=steps).map(|i| view.time(i)).collect();
    let mut output_residuals = Vec::with_capacity(steps + 1);
    for (i, z) in states.iter().enumerate() {
        output_residuals.push(obs.apply(z)?.sub(view.value(i))?.norm());
    }
    let error_norms = match truth {
        Some(z0) => {
            let mut norms = Vec::with_capacity(steps + 1);
            for (i, z) in states.iter().enumerate() {
                let zt = prop.propagate(z0, times[i], 0.0)?;
                norms.push(z.sub(&zt)?.norm());
            }
            Some(norms)
        }
        None => None,
    };

    Ok(ObserverTrajectory {
        times,
        states,
        error_norms,
        output_residuals,
    })
}

/// Forward sweep without storage; returns the terminal state and the
/// trapezoid value of the squared output residual.
fn forward_sweep(
    prop: &TransportPropagator,
    obs: &ObservationOperator,
    cfg: &ObserverConfig,
    start: &GridFunction,
    data: &Data,
    times: &[f64],
) -> Result<(GridFunction, f64)> {
    let fwd = ObserverConfig {
        direction: Direction::Forward,
        ..*cfg
    };
    let steps = times.len() - 1;
    let dt = cfg.dt;
    let mut residual_sq = 0.0;
    let mut add_residual = |i: usize, z: &GridFunction| -> Result<()> {
        if let Data::Record(view) = data {
            let w = if i == 0 || i == steps { 0.5 * dt } else { dt };
            residual_sq += w * obs.apply(z)?.sub(view.value(i))?.norm().powi(2);
        }
        Ok(())
    };
    let mut z = start.clone();
    add_residual(0, &z)?;
    for (i, &t) in times.iter().take(steps).enumerate() {
        let y_mid = data.midpoint(i)?;
        z = step_once(prop, obs, &fwd, &z, &y_mid, t)?;
        add_residual(i + 1, &z)?;
    }
    Ok((z, residual_sq))
}

/// Backward sweep from the terminal state down to time zero.
fn backward_sweep(
    prop: &TransportPropagator,
    obs: &ObservationOperator,
    cfg: &ObserverConfig,
    terminal: &GridFunction,
    data: &Data,
    times: &[f64],
) -> Result<GridFunction> {
    let bwd = ObserverConfig {
        direction: Direction::Backward,
        ..*cfg
    };
    let steps = times.len() - 1;
    let mut z = terminal.clone();
    for i in (0..steps).rev() {
        let y_mid = data.midpoint(i)?;
        z = step_once(prop, obs, &bwd, &z, &y_mid, times[i + 1])?;
    }
    Ok(z)
}

/// Run the BFN iteration, invoking `on_cycle(n, z^{2n}(0))` after each
/// round trip (and once with the initial guess at `n = 0`).
pub fn run_bfn_with(
    prop: &TransportPropagator,
    obs: &ObservationOperator,
    cfg: &ObserverConfig,
    z_hat0: &GridFunction,
    record: &OutputRecord,
    n_iterations: usize,
    analysis: Option<&GramianAnalysis>,
    truth: Option<&GridFunction>,
    mut on_cycle: impl FnMut(usize, &GridFunction) -> Result<()>,
) -> Result<BfnRun> {
    check_setup(prop, obs, z_hat0)?;
    let view = RecordView::new(record, cfg.dt)?;
    let times: Vec<f64> = (0..=view.steps()).map(|i| view.time(i)).collect();
    let data = Data::Record(view);

    let mut initial_error_norms = Vec::new();
    let mut projected_error_norms = Vec::new();
    let mut output_residual_integrals = Vec::with_capacity(n_iterations);

    let note_errors =
        |z0_est: &GridFunction, initial: &mut Vec<f64>, projected: &mut Vec<f64>| -> Result<()> {
            if let Some(z0) = truth {
                let err = z0_est.sub(z0)?;
                initial.push(err.norm());
                if let Some(a) = analysis {
                    projected.push(a.project_observable(&err)?.norm());
                }
            }
            Ok(())
        };

    let mut z = z_hat0.clone();
    note_errors(&z, &mut initial_error_norms, &mut projected_error_norms)?;
    on_cycle(0, &z)?;

    for cycle in 0..n_iterations {
        let (z_terminal, residual_sq) = forward_sweep(prop, obs, cfg, &z, &data, &times)?;
        z = backward_sweep(prop, obs, cfg, &z_terminal, &data, &times)?;
        output_residual_integrals.push(residual_sq);
        note_errors(&z, &mut initial_error_norms, &mut projected_error_norms)?;
        on_cycle(cycle + 1, &z)?;
    }

    Ok(BfnRun {
        iteration_count: n_iterations,
        initial_error_norms,
        projected_error_norms,
        output_residual_integrals,
        final_estimate: z,
    })
}

/// Run the BFN iteration.
pub fn run_bfn(
    prop: &TransportPropagator,
    obs: &ObservationOperator,
    cfg: &ObserverConfig,
    z_hat0: &GridFunction,
    record: &OutputRecord,
    n_iterations: usize,
    analysis: Option<&GramianAnalysis>,
    truth: Option<&GridFunction>,
) -> Result<BfnRun> {
    run_bfn_with(
        prop,
        obs,
        cfg,
        z_hat0,
        record,
        n_iterations,
        analysis,
        truth,
        |_, _| Ok(()),
    )
}

/// Apply the per-cycle error map `L = S_-(0, T) S_+(T, 0)`: one homogeneous
/// forward sweep followed by one homogeneous backward sweep.
pub fn error_cycle_map(
    prop: &TransportPropagator,
    obs: &ObservationOperator,
    cfg: &ObserverConfig,
    t_end: f64,
    f: &GridFunction,
) -> Result<GridFunction> {
    let times = uniform_times(t_end, cfg.dt)?;
    let data = Data::Zero(obs.zero_observation());
    let (terminal, _) = forward_sweep(prop, obs, cfg, f, &data, &times)?;
    backward_sweep(prop, obs, cfg, &terminal, &data, &times)
}

/// Apply the homogeneous forward error flow `S_+(t_end, 0)`.
pub fn error_forward_flow(
    prop: &TransportPropagator,
    obs: &ObservationOperator,
    cfg: &ObserverConfig,
    t_end: f64,
    f: &GridFunction,
) -> Result<GridFunction> {
    let times = uniform_times(t_end, cfg.dt)?;
    let data = Data::Zero(obs.zero_observation());
    Ok(forward_sweep(prop, obs, cfg, f, &data, &times)?.0)
}

fn uniform_times(t_end: f64, dt: f64) -> Result<Vec<f64>> {
    if !(t_end > 0.0 && dt > 0.0) {
        return Err(Error::Parameter("needs t_end > 0 and dt > 0".into()));
    }
    let steps_f = t_end / dt;
    let steps = steps_f.round();
    if (steps_f - steps).abs() > 1e-9 || steps < 1.0 {
        return Err(Error::Parameter(format!(
            "dt = {dt} does not evenly divide the horizon {t_end}"
        )));
    }
    Ok((0..=steps as usize).map(|i| i as f64 * dt).collect())
}

/// Residual of the integrated error trajectory against the variation-of-
/// constants representation
/// `e(t) = T(t, 0) e0 - r int_0^t T(t, s) C*C e(s) ds`,
/// with the integral taken by the trapezoid rule on `n_quad` panels of the
/// stored trajectory. Second-order small for the Strang integrator.
pub fn duhamel_residual(
    prop: &TransportPropagator,
    obs: &ObservationOperator,
    cfg: &ObserverConfig,
    eps0: &GridFunction,
    t: f64,
    n_quad: usize,
) -> Result<f64> {
    if n_quad == 0 {
        return Err(Error::Parameter(
            "needs at least one quadrature panel".into(),
        ));
    }
    let times = uniform_times(t, cfg.dt)?;
    let steps = times.len() - 1;
    if steps % n_quad != 0 {
        return Err(Error::Parameter(format!(
            "quadrature panels ({n_quad}) must divide the step count ({steps})"
        )));
    }
    let stride = steps / n_quad;

    // integrate the homogeneous error system, storing the trajectory
    let fwd = ObserverConfig {
        direction: Direction::Forward,
        ..*cfg
    };
    let zero = obs.zero_observation();
    let mut traj = Vec::with_capacity(steps + 1);
    traj.push(eps0.clone());
    for i in 0..steps {
        let next = step_once(prop, obs, &fwd, &traj[i], &zero, times[i])?;
        traj.push(next);
    }

    // r * int_0^t T(t, s) C*C e(s) ds by trapezoid on the coarse panels
    let mut integral = GridFunction::zeros(*prop.grid());
    let panel = cfg.dt * stride as f64;
    for k in 0..=n_quad {
        let idx = k * stride;
        let w = if k == 0 || k == n_quad {
            0.5 * panel
        } else {
            panel
        };
        let pulled = prop.propagate(&obs.normal_apply(&traj[idx])?, t, times[idx])?;
        integral.axpy(w, &pulled)?;
    }

    let mut residual = traj[steps].clone();
    let free = prop.propagate(eps0, t, 0.0)?;
    residual.axpy(-1.0, &free)?;
    residual.axpy(cfg.r, &integral)?;
    Ok(residual.norm())
}

/// Integrals of the squared output residual over consecutive windows of
/// length `window_len`. Under the observer convergence hypotheses the
/// sequence tends to zero.
pub fn barbalat_diagnostic(traj: &ObserverTrajectory, window_len: f64) -> Result<Vec<f64>> {
    if traj.error_norms.is_none() {
        return Err(Error::Parameter(
            "diagnostic needs a trajectory computed against the truth".into(),
        ));
    }
    let t_end = *traj.times.last().expect("trajectory is never empty");
    if !(window_len > 0.0) || window_len > t_end {
        return Err(Error::Parameter(format!(
            "window length must lie in (0, {t_end}], got {window_len}"
        )));
    }
    let dt = traj.times[1] - traj.times[0];
    let n_windows = (t_end / window_len + 1e-9).floor() as usize;
    let mut energies = Vec::with_capacity(n_windows);
    for k in 0..n_windows {
        let i_lo = ((k as f64 * window_len) / dt).round() as usize;
        let i_hi = (((k + 1) as f64 * window_len) / dt).round() as usize;
        let i_hi = i_hi.min(traj.times.len() - 1);
        let mut acc = 0.0;
        for i in i_lo..=i_hi {
            let w = if i == i_lo || i == i_hi { 0.5 * dt } else { dt };
            acc += w * traj.output_residuals[i].powi(2);
        }
        energies.push(acc);
    }
    Ok(energies)
}

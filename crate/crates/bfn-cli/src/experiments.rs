//! Experiment orchestration: build the scene described by a configuration,
//! run it, and serialize the results.
//!
//! Records are always synthesized at half the observer step so the
//! splitting correction consumes exact midpoint data, and every random
//! draw comes from a generator seeded by the configuration, so a run is
//! bit-reproducible: the same configuration and seed produce byte-identical
//! CSV files.

use crate::config::{ExperimentConfig, ExperimentKind, ModeConfig, ObserverKind};
use crate::error::{CliError, CliResult};
use crate::output::{idx, sig, OutputDir, RunInfo, RunManifest};
use bfn_core::crystallization::{nucleation_estimate, reconstruct_csd, CrystObserverKind};
use bfn_core::gramian::{assemble_gramian, default_time_samples, geometric_condition, swept_nodes};
use bfn_core::observers::{barbalat_diagnostic, run_bfn, run_forward_observer};
use bfn_core::{
    GramianAnalysis, GridFunction, Interpolation, ObservationOperator, ObserverConfig,
    OutputRecord, PeriodicGrid, TransportPropagator,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

/// Command-line overrides applied on top of the configuration file.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub mode: Option<ModeConfig>,
    pub threads: usize,
}

/// Environment variable naming the default root for run outputs.
pub const OUTPUT_ROOT_ENV: &str = "BFN_OUTPUT_ROOT";

fn resolve_out_dir(cfg: &ExperimentConfig, opts: &RunOptions) -> PathBuf {
    if let Some(out) = &opts.out {
        return out.clone();
    }
    if let Some(out) = &cfg.out_dir {
        return out.clone();
    }
    let root = std::env::var(OUTPUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|_| PathBuf::from("runs"));
    root.join(cfg.kind.as_str())
}

/// Run the experiment described by `cfg` and write its outputs.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> CliResult<RunManifest> {
    let started = Instant::now();
    let mut cfg = cfg.clone();
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
    }
    if let Some(mode) = opts.mode {
        cfg.observer.mode = mode;
    }
    cfg.validate()?;

    let mut out = OutputDir::create(resolve_out_dir(&cfg, opts))?;
    let mut results = BTreeMap::new();

    match cfg.kind {
        ExperimentKind::ForwardObserver => forward_observer(&cfg, &mut out, &mut results)?,
        ExperimentKind::Bfn => bfn_experiment(&cfg, &mut out, &mut results)?,
        ExperimentKind::GramianStudy => gramian_study(&cfg, &mut out, &mut results)?,
        ExperimentKind::Crystallization => crystallization(&cfg, &mut out, &mut results)?,
        ExperimentKind::RefinementStudy => refinement_study(&cfg, opts, &mut out, &mut results)?,
    }

    let manifest = RunManifest {
        run: RunInfo {
            kind: cfg.kind.as_str().to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: cfg.seed,
            wall_seconds: started.elapsed().as_secs_f64(),
        },
        files: out.files().to_vec(),
        results,
        config: cfg,
    };
    manifest.write(out.path())?;
    Ok(manifest)
}

struct Scene {
    grid: PeriodicGrid,
    prop: TransportPropagator,
    obs: ObservationOperator,
    observer: ObserverConfig,
    truth: GridFunction,
}

/// Grid, transport, observer and a seeded band-limited truth state.
fn build_scene(cfg: &ExperimentConfig) -> CliResult<Scene> {
    let grid = PeriodicGrid::new(cfg.grid.x0, cfg.grid.x1, cfg.grid.n)?;
    let profile = cfg.profile.build()?;
    let prop = TransportPropagator::new(grid, profile, cfg.observer.mode.into());
    let obs = match cfg.observer.kind {
        ObserverKind::Window => {
            ObservationOperator::window(grid, cfg.window.x_min, cfg.window.x_max)?
        }
        ObserverKind::Cld => {
            let m = if cfg.observer.cld_samples == 0 {
                2 * cfg.grid.n
            } else {
                cfg.observer.cld_samples
            };
            ObservationOperator::cld(grid, cfg.window.x_min, cfg.window.x_max, m)?
        }
    };
    let observer = ObserverConfig::new(cfg.observer.r, cfg.observer.dt)?
        .with_scheme(cfg.observer.scheme.into());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let truth = GridFunction::random_band_limited(grid, cfg.grid.n / 4, &mut rng);
    Ok(Scene {
        grid,
        prop,
        obs,
        observer,
        truth,
    })
}

fn forward_observer(
    cfg: &ExperimentConfig,
    out: &mut OutputDir,
    results: &mut BTreeMap<String, f64>,
) -> CliResult<()> {
    let scene = build_scene(cfg)?;
    let t_end = cfg.horizon.duration;
    let record = OutputRecord::synthesize(
        &scene.prop,
        &scene.obs,
        &scene.truth,
        t_end,
        scene.observer.dt * 0.5,
    )?;
    let guess = GridFunction::zeros(scene.grid);
    let traj = run_forward_observer(
        &scene.prop,
        &scene.obs,
        &scene.observer,
        &guess,
        &record,
        Some(&scene.truth),
    )?;
    let norms = traj.error_norms.as_ref().expect("truth was supplied");

    out.write_csv(
        "trajectory.csv",
        "t,error_norm,output_residual",
        traj.times
            .iter()
            .enumerate()
            .map(|(i, &t)| vec![sig(t), sig(norms[i]), sig(traj.output_residuals[i])]),
    )?;

    let window_len = t_end / 5.0;
    let energies = barbalat_diagnostic(&traj, window_len)?;
    out.write_csv(
        "barbalat.csv",
        "window,output_energy",
        energies
            .iter()
            .enumerate()
            .map(|(k, &e)| vec![idx(k), sig(e)]),
    )?;

    results.insert("initial_error".into(), norms[0]);
    results.insert("final_error".into(), *norms.last().unwrap());
    results.insert(
        "error_ratio".into(),
        norms.last().unwrap() / norms[0].max(1e-300),
    );
    results.insert("barbalat_first".into(), energies[0]);
    results.insert("barbalat_last".into(), *energies.last().unwrap());
    Ok(())
}

fn window_gramian_analysis(
    cfg: &ExperimentConfig,
    scene: &Scene,
    t0: f64,
    tau: f64,
) -> CliResult<GramianAnalysis> {
    // local stencils give the Gramian kernel exact node support
    let linear_prop = TransportPropagator::new(
        scene.grid,
        scene.prop.profile().clone(),
        Interpolation::Linear,
    );
    let n_time = if cfg.gramian.time_samples == 0 {
        default_time_samples(linear_prop.profile(), &scene.grid, t0, tau)
    } else {
        cfg.gramian.time_samples
    };
    Ok(assemble_gramian(&linear_prop, &scene.obs, t0, tau, n_time)?)
}

fn bfn_experiment(
    cfg: &ExperimentConfig,
    out: &mut OutputDir,
    results: &mut BTreeMap<String, f64>,
) -> CliResult<()> {
    let scene = build_scene(cfg)?;
    let t_end = cfg.horizon.duration;
    let record = OutputRecord::synthesize(
        &scene.prop,
        &scene.obs,
        &scene.truth,
        t_end,
        scene.observer.dt * 0.5,
    )?;
    let guess = GridFunction::zeros(scene.grid);
    let analysis = match cfg.observer.kind {
        ObserverKind::Window => Some(window_gramian_analysis(cfg, &scene, 0.0, t_end)?),
        ObserverKind::Cld => None,
    };
    let run = run_bfn(
        &scene.prop,
        &scene.obs,
        &scene.observer,
        &guess,
        &record,
        cfg.bfn.iterations,
        analysis.as_ref(),
        Some(&scene.truth),
    )?;

    let projected = &run.projected_error_norms;
    out.write_csv(
        "bfn_errors.csv",
        if projected.is_empty() {
            "iteration,error_norm"
        } else {
            "iteration,error_norm,projected_error_norm"
        },
        run.initial_error_norms.iter().enumerate().map(|(n, &e)| {
            let mut row = vec![idx(n), sig(e)];
            if !projected.is_empty() {
                row.push(sig(projected[n]));
            }
            row
        }),
    )?;
    out.write_csv(
        "bfn_residuals.csv",
        "iteration,output_residual_integral",
        run.output_residual_integrals
            .iter()
            .enumerate()
            .map(|(n, &v)| vec![idx(n + 1), sig(v)]),
    )?;
    out.write_csv(
        "final_estimate.csv",
        "x,truth,estimate",
        scene.grid.nodes().enumerate().map(|(j, x)| {
            vec![
                sig(x),
                sig(scene.truth.values()[j]),
                sig(run.final_estimate.values()[j]),
            ]
        }),
    )?;

    let initial = run.initial_error_norms[0];
    let final_err = *run.initial_error_norms.last().unwrap();
    let monotone = run
        .initial_error_norms
        .windows(2)
        .all(|w| w[1] <= w[0] * (1.0 + 1e-10));
    results.insert("initial_error".into(), initial);
    results.insert("final_error".into(), final_err);
    results.insert("error_ratio".into(), final_err / initial.max(1e-300));
    results.insert("monotone".into(), f64::from(u8::from(monotone)));
    if let Some(a) = &analysis {
        results.insert("observable_dim".into(), a.observable_dim() as f64);
    }
    Ok(())
}

fn gramian_study(
    cfg: &ExperimentConfig,
    out: &mut OutputDir,
    results: &mut BTreeMap<String, f64>,
) -> CliResult<()> {
    let scene = build_scene(cfg)?;
    let (t0, tau) = (cfg.horizon.t0, cfg.horizon.duration);
    let n_time = if cfg.gramian.time_samples == 0 {
        default_time_samples(scene.prop.profile(), &scene.grid, t0, tau)
    } else {
        cfg.gramian.time_samples
    };
    let analysis = assemble_gramian(&scene.prop, &scene.obs, t0, tau, n_time)?;

    out.write_csv(
        "spectrum.csv",
        "index,eigenvalue",
        analysis
            .eigenvalues()
            .iter()
            .enumerate()
            .map(|(k, &l)| vec![idx(k), sig(l)]),
    )?;

    if let ObservationOperator::Window(w) = &scene.obs {
        let swept = swept_nodes(scene.prop.profile(), &scene.grid, w.mask(), t0, tau, n_time)?;
        let kernel_support = analysis.kernel_node_support(1e-6);
        out.write_csv(
            "swept.csv",
            "node,x,swept,in_kernel",
            scene.grid.nodes().enumerate().map(|(j, x)| {
                vec![
                    idx(j),
                    sig(x),
                    idx(usize::from(swept[j])),
                    idx(usize::from(kernel_support[j])),
                ]
            }),
        )?;
        let matches = (0..scene.grid.len()).all(|j| swept[j] != kernel_support[j]);
        results.insert("kernel_matches_swept".into(), f64::from(u8::from(matches)));
        results.insert(
            "swept_count".into(),
            swept.iter().filter(|&&s| s).count() as f64,
        );
        let geo = geometric_condition(
            scene.prop.profile(),
            t0,
            tau,
            cfg.window.x_min,
            cfg.window.x_max,
            &scene.grid,
        )?;
        results.insert("geometric_condition".into(), f64::from(u8::from(geo)));
    }
    if let ObservationOperator::Cld(c) = &scene.obs {
        results.insert(
            "kernel_injectivity_margin".into(),
            c.kernel_injectivity_margin()?,
        );
        let mut buf = Vec::new();
        c.write_kernel_csv(&mut buf)
            .map_err(|e| CliError::Io(e.to_string()))?;
        out.write_text("kernel.csv", &String::from_utf8_lossy(&buf))?;
    }

    results.insert("largest_eigenvalue".into(), analysis.eigenvalues()[0]);
    results.insert("margin".into(), analysis.exact_observability_margin());
    results.insert("rank_tol".into(), analysis.rank_tol());
    results.insert("observable_dim".into(), analysis.observable_dim() as f64);
    Ok(())
}

fn crystallization(
    cfg: &ExperimentConfig,
    out: &mut OutputDir,
    results: &mut BTreeMap<String, f64>,
) -> CliResult<()> {
    let scn = cfg.build_scenario()?;
    let observer = ObserverConfig::new(cfg.observer.r, cfg.observer.dt)?
        .with_scheme(cfg.observer.scheme.into());
    let kind = match cfg.observer.kind {
        ObserverKind::Window => CrystObserverKind::Window,
        ObserverKind::Cld => CrystObserverKind::Cld,
    };
    let cld_samples = if cfg.observer.cld_samples == 0 {
        None
    } else {
        Some(cfg.observer.cld_samples)
    };
    let report = reconstruct_csd(
        &scn,
        cfg.grid.n,
        &observer,
        cfg.bfn.iterations,
        kind,
        cfg.observer.mode.into(),
        cld_samples,
    )?;

    out.write_csv(
        "report.csv",
        "iteration,csd_error,nucleation_error",
        report
            .csd_error_per_iteration
            .iter()
            .enumerate()
            .map(|(n, &e)| {
                vec![
                    idx(n),
                    sig(e),
                    sig(report.nucleation_error_per_iteration[n]),
                ]
            }),
    )?;
    out.write_csv(
        "bfn_errors.csv",
        "iteration,error_norm",
        report
            .bfn
            .initial_error_norms
            .iter()
            .enumerate()
            .map(|(n, &e)| vec![idx(n), sig(e)]),
    )?;
    out.write_csv(
        "csd.csv",
        "x,truth,estimate",
        report.grid.nodes().enumerate().map(|(j, x)| {
            vec![
                sig(x),
                sig(report.truth.values()[j]),
                sig(report.bfn.final_estimate.values()[j]),
            ]
        }),
    )?;
    let nuc = nucleation_estimate(
        &scn,
        &report.grid,
        &report.bfn.final_estimate,
        2 * cfg.grid.n,
    )?;
    out.write_csv(
        "nucleation.csv",
        "t,truth,estimate",
        nuc.iter()
            .map(|&(t, v)| vec![sig(t), sig(scn.nucleation(t)), sig(v)]),
    )?;

    let final_csd = *report.csd_error_per_iteration.last().unwrap();
    let final_nuc = *report.nucleation_error_per_iteration.last().unwrap();
    let initial = report.bfn.initial_error_norms[0];
    let final_state = *report.bfn.initial_error_norms.last().unwrap();
    results.insert("final_csd_error".into(), final_csd);
    results.insert("final_nucleation_error".into(), final_nuc);
    results.insert(
        "state_error_ratio".into(),
        final_state / initial.max(1e-300),
    );
    results.insert("window_fidelity".into(), report.window_fidelity);
    Ok(())
}

fn refinement_study(
    cfg: &ExperimentConfig,
    opts: &RunOptions,
    out: &mut OutputDir,
    results: &mut BTreeMap<String, f64>,
) -> CliResult<()> {
    let scn = cfg.build_scenario()?;
    let sizes = cfg.refinement.sizes.clone();
    let mode: Interpolation = cfg.observer.mode.into();

    let run_entry = |n: usize| -> CliResult<(usize, f64, f64, f64)> {
        let grid = scn.extended_grid(n)?;
        let prop = TransportPropagator::new(grid, scn.profile().clone(), mode);
        let obs = ObservationOperator::cld(grid, scn.x_min(), scn.x_max(), 2 * n)?;
        let kernel_margin = match &obs {
            ObservationOperator::Cld(c) => c.kernel_injectivity_margin()?,
            _ => unreachable!(),
        };
        let n_time = if cfg.gramian.time_samples == 0 {
            default_time_samples(prop.profile(), &grid, 0.0, scn.t_end())
        } else {
            cfg.gramian.time_samples
        };
        let analysis = assemble_gramian(&prop, &obs, 0.0, scn.t_end(), n_time)?;
        Ok((
            n,
            analysis.exact_observability_margin(),
            analysis.eigenvalues()[0],
            kernel_margin,
        ))
    };

    let workers = opts.threads.max(1).min(sizes.len().max(1));
    let rows: Vec<(usize, f64, f64, f64)> = if workers <= 1 {
        sizes
            .iter()
            .map(|&n| run_entry(n))
            .collect::<CliResult<_>>()?
    } else {
        // fan out independent entries; each entry is itself sequential and
        // deterministic, and rows are reassembled in input order
        std::thread::scope(|scope| {
            let handles: Vec<_> = sizes
                .iter()
                .map(|&n| scope.spawn(move || run_entry(n)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("refinement worker panicked"))
                .collect::<CliResult<_>>()
        })?
    };

    out.write_csv(
        "margins.csv",
        "n,gramian_margin,largest_eigenvalue,kernel_margin",
        rows.iter().map(|&(n, margin, largest, kernel)| {
            vec![idx(n), sig(margin), sig(largest), sig(kernel)]
        }),
    )?;

    let mut monotone = true;
    for pair in rows.windows(2) {
        if pair[1].1 > pair[0].1 * (1.0 + 1e-10) + 1e-18 {
            monotone = false;
        }
        results.insert(format!("gramian_margin_{}", pair[1].0), pair[1].1);
    }
    if let Some(first) = rows.first() {
        results.insert(format!("gramian_margin_{}", first.0), first.1);
    }
    results.insert(
        "margins_non_increasing".into(),
        f64::from(u8::from(monotone)),
    );
    Ok(())
}

//! Experiment configuration: a TOML file with one table per concern.
//!
//! Every field has a default, so a minimal file is just `kind = "..."`.
//! Parsing reports syntax errors with positions; validation checks every
//! semantic constraint and reports all violations at once.

use crate::error::{CliError, CliResult};
use bfn_core::{Interpolation, Scheme, VelocityProfile};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    ForwardObserver,
    Bfn,
    GramianStudy,
    Crystallization,
    RefinementStudy,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::ForwardObserver => "forward_observer",
            ExperimentKind::Bfn => "bfn",
            ExperimentKind::GramianStudy => "gramian_study",
            ExperimentKind::Crystallization => "crystallization",
            ExperimentKind::RefinementStudy => "refinement_study",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub x0: f64,
    pub x1: f64,
    pub n: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            x0: 0.0,
            x1: 1.0,
            n: 128,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileKind {
    Constant,
    Sinusoidal,
    ExpDecay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProfileConfig {
    pub kind: ProfileKind,
    /// Rate of the constant profile.
    pub value: f64,
    /// Mean and modulation of the sinusoidal profile, or base and amplitude
    /// of the exponentially decaying one.
    pub mean: f64,
    pub amplitude: f64,
    pub period: f64,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        Self {
            kind: ProfileKind::Constant,
            value: 1.0,
            mean: 1.0,
            amplitude: 0.5,
            period: 1.0,
        }
    }
}

impl ProfileConfig {
    pub fn build(&self) -> CliResult<VelocityProfile> {
        match self.kind {
            ProfileKind::Constant => Ok(VelocityProfile::constant(self.value)),
            ProfileKind::Sinusoidal => {
                VelocityProfile::sinusoidal(self.mean, self.amplitude, self.period)
                    .map_err(Into::into)
            }
            ProfileKind::ExpDecay => Ok(VelocityProfile::exp_decay(self.mean, self.amplitude)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowConfig {
    pub x_min: f64,
    pub x_max: f64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            x_min: 0.6,
            x_max: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObserverKind {
    Window,
    Cld,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeConfig {
    Strang,
    Lie,
}

impl From<SchemeConfig> for Scheme {
    fn from(s: SchemeConfig) -> Scheme {
        match s {
            SchemeConfig::Strang => Scheme::Strang,
            SchemeConfig::Lie => Scheme::Lie,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeConfig {
    Spectral,
    Linear,
}

impl From<ModeConfig> for Interpolation {
    fn from(m: ModeConfig) -> Interpolation {
        match m {
            ModeConfig::Spectral => Interpolation::Spectral,
            ModeConfig::Linear => Interpolation::Linear,
        }
    }
}

impl std::str::FromStr for ModeConfig {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "spectral" => Ok(ModeConfig::Spectral),
            "linear" => Ok(ModeConfig::Linear),
            other => Err(format!("unknown mode {other:?}; use spectral or linear")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObserverSection {
    pub kind: ObserverKind,
    pub r: f64,
    pub dt: f64,
    pub scheme: SchemeConfig,
    pub mode: ModeConfig,
    /// Number of chord samples for the chord-length observer; 0 picks twice
    /// the grid size.
    pub cld_samples: usize,
}

impl Default for ObserverSection {
    fn default() -> Self {
        Self {
            kind: ObserverKind::Window,
            r: 5.0,
            dt: 1.0 / 256.0,
            scheme: SchemeConfig::Strang,
            mode: ModeConfig::Spectral,
            cld_samples: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HorizonSection {
    pub t0: f64,
    pub duration: f64,
}

impl Default for HorizonSection {
    fn default() -> Self {
        Self {
            t0: 0.0,
            duration: 0.6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BfnSection {
    pub iterations: usize,
}

impl Default for BfnSection {
    fn default() -> Self {
        Self { iterations: 20 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GramianSection {
    /// Trapezoid panels; 0 picks the ten-samples-per-cell-crossing rule.
    pub time_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CrystSection {
    pub x_min: f64,
    pub x_max: f64,
    pub duration: f64,
    pub growth_mean: f64,
    pub growth_modulation: f64,
    pub csd_center: f64,
    pub csd_sigma: f64,
    pub nucleation_amplitude: f64,
    pub noise_std: f64,
}

impl Default for CrystSection {
    fn default() -> Self {
        Self {
            x_min: 1.0,
            x_max: 2.0,
            duration: 2.0,
            growth_mean: 0.5,
            growth_modulation: 0.25,
            csd_center: 1.45,
            csd_sigma: 0.07,
            nucleation_amplitude: 0.8,
            noise_std: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefinementSection {
    pub sizes: Vec<usize>,
}

impl Default for RefinementSection {
    fn default() -> Self {
        Self {
            sizes: vec![32, 64, 128],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub profile: ProfileConfig,
    #[serde(default)]
    pub window: WindowConfig,
    #[serde(default)]
    pub observer: ObserverSection,
    #[serde(default)]
    pub horizon: HorizonSection,
    #[serde(default)]
    pub bfn: BfnSection,
    #[serde(default)]
    pub gramian: GramianSection,
    #[serde(default)]
    pub crystallization: CrystSection,
    #[serde(default)]
    pub refinement: RefinementSection,
}

impl ExperimentConfig {
    pub fn minimal(kind: ExperimentKind) -> Self {
        Self {
            kind,
            seed: 0,
            out_dir: None,
            grid: GridConfig::default(),
            profile: ProfileConfig::default(),
            window: WindowConfig::default(),
            observer: ObserverSection::default(),
            horizon: HorizonSection::default(),
            bfn: BfnSection::default(),
            gramian: GramianSection::default(),
            crystallization: CrystSection::default(),
            refinement: RefinementSection::default(),
        }
    }

    pub fn serialize(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| CliError::Io(e.to_string()))
    }

    /// Check every semantic constraint relevant to the experiment kind and
    /// collect all violations.
    pub fn validate(&self) -> CliResult<()> {
        let mut problems = Vec::new();
        let g = &self.grid;
        if !(g.x1 > g.x0) {
            problems.push(format!("grid: needs x1 > x0, got [{}, {}]", g.x0, g.x1));
        }
        if g.n < 4 {
            problems.push(format!("grid.n: needs at least 4 cells, got {}", g.n));
        }
        if self.profile.kind == ProfileKind::Sinusoidal && self.profile.period == 0.0 {
            problems.push("profile.period: must be nonzero for a sinusoidal profile".into());
        }
        let o = &self.observer;
        if !(o.r > 0.0 && o.r.is_finite()) {
            problems.push(format!("observer.r: must satisfy r > 0, got {}", o.r));
        }
        if !(o.dt > 0.0 && o.dt.is_finite()) {
            problems.push(format!("observer.dt: must satisfy dt > 0, got {}", o.dt));
        }

        match self.kind {
            ExperimentKind::ForwardObserver
            | ExperimentKind::Bfn
            | ExperimentKind::GramianStudy => {
                let w = &self.window;
                if !(w.x_min < w.x_max) {
                    problems.push(format!(
                        "window: needs x_min < x_max, got [{}, {}]",
                        w.x_min, w.x_max
                    ));
                }
                if w.x_min < g.x0 || w.x_max > g.x1 {
                    problems.push(format!(
                        "window: [{}, {}] must lie within the grid [{}, {}]",
                        w.x_min, w.x_max, g.x0, g.x1
                    ));
                }
                let h = &self.horizon;
                if !(h.duration > 0.0) {
                    problems.push(format!(
                        "horizon.duration: must be positive, got {}",
                        h.duration
                    ));
                }
                if o.dt > h.duration {
                    problems.push(format!(
                        "observer.dt: step {} exceeds the horizon {}",
                        o.dt, h.duration
                    ));
                }
                if o.kind == ObserverKind::Cld && !(w.x_min > 0.0) {
                    problems.push(format!(
                        "window.x_min: chord-length observation needs x_min > 0, got {}",
                        w.x_min
                    ));
                }
            }
            ExperimentKind::Crystallization => {
                let c = &self.crystallization;
                if !(c.x_max > c.x_min && c.x_min > 0.0) {
                    problems.push(format!(
                        "crystallization: needs x_max > x_min > 0, got [{}, {}]",
                        c.x_min, c.x_max
                    ));
                }
                if !(c.duration > 0.0) {
                    problems.push(format!(
                        "crystallization.duration: must be positive, got {}",
                        c.duration
                    ));
                }
                if !(c.growth_mean > 0.0) || c.growth_modulation.abs() >= 1.0 {
                    problems.push(
                        "crystallization: growth must stay positive (growth_mean > 0 and \
                         |growth_modulation| < 1)"
                            .into(),
                    );
                }
                if !(c.csd_sigma > 0.0) {
                    problems.push(format!(
                        "crystallization.csd_sigma: must be positive, got {}",
                        c.csd_sigma
                    ));
                }
                if c.noise_std < 0.0 {
                    problems.push(format!(
                        "crystallization.noise_std: must be nonnegative, got {}",
                        c.noise_std
                    ));
                }
                if self.bfn.iterations == 0 {
                    problems.push("bfn.iterations: must be at least 1".into());
                }
            }
            ExperimentKind::RefinementStudy => {
                if self.refinement.sizes.is_empty() {
                    problems.push("refinement.sizes: must list at least one grid size".into());
                }
                for &n in &self.refinement.sizes {
                    if n < 8 {
                        problems.push(format!(
                            "refinement.sizes: grid sizes must be at least 8, got {n}"
                        ));
                    }
                }
            }
        }
        if self.kind == ExperimentKind::Bfn && self.bfn.iterations == 0 {
            problems.push("bfn.iterations: must be at least 1".into());
        }

        if problems.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(problems))
        }
    }

    /// Scenario described by the crystallization section.
    pub fn build_scenario(&self) -> CliResult<bfn_core::CrystallizationScenario> {
        let c = self.crystallization.clone();
        let profile = VelocityProfile::sinusoidal(
            c.growth_mean,
            c.growth_mean * c.growth_modulation,
            c.duration,
        )?;
        let center = c.csd_center;
        let sigma = c.csd_sigma;
        let amp = c.nucleation_amplitude;
        let t_end = c.duration;
        let scenario = bfn_core::CrystallizationScenario::new(
            c.x_min,
            c.x_max,
            c.duration,
            profile,
            move |x: f64| (-((x - center) / sigma).powi(2) / 2.0).exp(),
            move |t: f64| amp * (std::f64::consts::PI * t / t_end).sin().powi(4),
            c.noise_std,
            self.seed,
        )?;
        Ok(scenario)
    }
}

/// Parse and validate a configuration file.
pub fn parse_config(path: &Path) -> CliResult<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(vec![format!("cannot read {}: {e}", path.display())]))?;
    parse_config_str(&text)
}

/// Parse and validate configuration text.
pub fn parse_config_str(text: &str) -> CliResult<ExperimentConfig> {
    let cfg: ExperimentConfig =
        toml::from_str(text).map_err(|e| CliError::Config(vec![e.to_string()]))?;
    cfg.validate()?;
    Ok(cfg)
}

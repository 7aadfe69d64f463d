//! Plot-ready extraction: re-emit selected result columns as plain
//! whitespace-separated text consumable by gnuplot and friends.

use crate::error::{CliError, CliResult};
use crate::output::RunManifest;
use std::path::{Path, PathBuf};
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotSeries {
    /// `(iteration, initial-state error)` from a BFN-style run.
    BfnErrorCurve,
    /// `(x, truth, estimate)` of the reconstructed size distribution.
    CsdOverlay,
    /// `(index, eigenvalue)`, descending.
    GramianSpectrum,
}

impl PlotSeries {
    pub const ALL: [&'static str; 3] = ["bfn_error_curve", "csd_overlay", "gramian_spectrum"];

    fn source(&self) -> &'static str {
        match self {
            PlotSeries::BfnErrorCurve => "bfn_errors.csv",
            PlotSeries::CsdOverlay => "csd.csv",
            PlotSeries::GramianSpectrum => "spectrum.csv",
        }
    }

    fn target(&self) -> &'static str {
        match self {
            PlotSeries::BfnErrorCurve => "plot_bfn_error_curve.dat",
            PlotSeries::CsdOverlay => "plot_csd_overlay.dat",
            PlotSeries::GramianSpectrum => "plot_gramian_spectrum.dat",
        }
    }

    fn columns(&self) -> &'static [usize] {
        match self {
            PlotSeries::BfnErrorCurve => &[0, 1],
            PlotSeries::CsdOverlay => &[0, 1, 2],
            PlotSeries::GramianSpectrum => &[0, 1],
        }
    }
}

impl FromStr for PlotSeries {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bfn_error_curve" => Ok(PlotSeries::BfnErrorCurve),
            "csd_overlay" => Ok(PlotSeries::CsdOverlay),
            "gramian_spectrum" => Ok(PlotSeries::GramianSpectrum),
            other => Err(format!(
                "unknown series {other:?}; available: {}",
                PlotSeries::ALL.join(", ")
            )),
        }
    }
}

/// Extract one series from a finished run. Returns the path of the file
/// written next to the manifest (or under `out_dir` when given).
pub fn emit_plot_data(
    manifest_path: &Path,
    series: PlotSeries,
    out_dir: Option<&Path>,
) -> CliResult<PathBuf> {
    let manifest = RunManifest::read(manifest_path)?;
    let run_dir = manifest_path
        .parent()
        .ok_or_else(|| CliError::Io("manifest has no parent directory".into()))?;
    let source_name = series.source();
    if !manifest.files.iter().any(|f| f == source_name) {
        return Err(CliError::Config(vec![format!(
            "run {} did not produce {source_name}; it contains: {}",
            run_dir.display(),
            manifest.files.join(", ")
        )]));
    }
    let text = std::fs::read_to_string(run_dir.join(source_name))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| CliError::Io(format!("{source_name} is empty")))?;
    let names: Vec<&str> = header.split(',').collect();

    let mut out = String::new();
    out.push_str("# ");
    out.push_str(
        &series
            .columns()
            .iter()
            .map(|&c| names[c])
            .collect::<Vec<_>>()
            .join(" "),
    );
    out.push('\n');
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        let row: Vec<&str> = series.columns().iter().map(|&c| fields[c]).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }

    let target_dir = out_dir.unwrap_or(run_dir);
    std::fs::create_dir_all(target_dir)?;
    let target = target_dir.join(series.target());
    std::fs::write(&target, out)?;
    Ok(target)
}

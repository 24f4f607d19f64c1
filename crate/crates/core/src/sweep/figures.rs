//! Preset sweeps for the four experiment figures.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::plot::{curves, render_svg, Curve};
use super::{run_sweep, RelativeStride, Stride, SweepConfig, SweepResult};
use crate::error::{argument, Error, Result};
use crate::estimate::{Estimator, FitOptions};
use crate::exec::ExecMode;
use crate::model::ModelKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FigureId {
    /// Average pooling, d = 64, m ∈ {2, 8, 16}, stride 1.
    Fig2,
    /// Average pooling, d = 64, m ∈ {2, 8, 16}, non-overlapping (s = m).
    Fig3,
    /// Weighted pooling, d = 64, m = 8, s ∈ {1, 4, 8}.
    Fig4,
    /// Recurrent, d = L = 50, r ∈ {2, 8, 16}.
    Fig5,
}

impl FigureId {
    pub const ALL: [FigureId; 4] = [FigureId::Fig2, FigureId::Fig3, FigureId::Fig4, FigureId::Fig5];

    pub fn as_str(self) -> &'static str {
        match self {
            FigureId::Fig2 => "fig2",
            FigureId::Fig3 => "fig3",
            FigureId::Fig4 => "fig4",
            FigureId::Fig5 => "fig5",
        }
    }

    fn title(self) -> &'static str {
        match self {
            FigureId::Fig2 => "Average pooling, d=64, stride 1",
            FigureId::Fig3 => "Average pooling, d=64, stride m",
            FigureId::Fig4 => "Weighted pooling, d=64, m=8",
            FigureId::Fig5 => "Linear RNN, d=L=50",
        }
    }
}

impl fmt::Display for FigureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FigureId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FigureId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| argument(format!("unknown figure id {s:?} (expected fig2..fig5)")))
    }
}

/// Sample sizes `2^7 … 2^13`.
pub fn default_n_grid() -> Vec<usize> {
    (7..=13).map(|e| 1usize << e).collect()
}

pub const DEFAULT_TRIALS: usize = 20;

pub fn figure_config(id: FigureId, master_seed: u64) -> SweepConfig {
    let base = SweepConfig {
        model: ModelKind::Ca,
        d: vec![64],
        m: vec![2, 8, 16],
        s: vec![Stride::Fixed(1)],
        r: vec![],
        l: vec![],
        n: default_n_grid(),
        sigma: 1.0,
        trials: DEFAULT_TRIALS,
        master_seed,
        estimators: vec![Estimator::Model, Estimator::Fnn],
        output: None,
        fit: FitOptions::default(),
        timing: false,
    };
    match id {
        FigureId::Fig2 => base,
        FigureId::Fig3 => SweepConfig {
            s: vec![Stride::Relative(RelativeStride::Filter)],
            ..base
        },
        FigureId::Fig4 => SweepConfig {
            model: ModelKind::Cw,
            m: vec![8],
            s: vec![
                Stride::Fixed(1),
                Stride::Relative(RelativeStride::HalfFilter),
                Stride::Relative(RelativeStride::Filter),
            ],
            ..base
        },
        FigureId::Fig5 => SweepConfig {
            model: ModelKind::Rnn,
            d: vec![50],
            m: vec![],
            s: vec![],
            r: vec![2, 8, 16],
            l: vec![50],
            ..base
        },
    }
}

#[derive(Debug, Clone)]
pub struct FigureOutput {
    pub result: SweepResult,
    pub curves: Vec<Curve>,
    pub csv_path: PathBuf,
    pub svg_path: PathBuf,
}

/// Runs `config` (normally a preset) and writes `<id>.csv` and `<id>.svg`
/// into `out_dir`.
pub fn reproduce_figure_with(
    id: FigureId,
    config: &SweepConfig,
    out_dir: &Path,
    mode: ExecMode,
) -> Result<FigureOutput> {
    std::fs::create_dir_all(out_dir)?;
    let config = SweepConfig {
        output: None,
        ..config.clone()
    };
    let result = run_sweep(&config, mode)?;
    let curves = curves(&result);
    let csv_path = out_dir.join(format!("{id}.csv"));
    let svg_path = out_dir.join(format!("{id}.svg"));
    result.save_csv(&csv_path)?;
    std::fs::write(&svg_path, render_svg(&curves, id.title()))?;
    Ok(FigureOutput {
        result,
        curves,
        csv_path,
        svg_path,
    })
}

pub fn reproduce_figure(id: FigureId, master_seed: u64, out_dir: &Path, mode: ExecMode) -> Result<FigureOutput> {
    reproduce_figure_with(id, &figure_config(id, master_seed), out_dir, mode)
}

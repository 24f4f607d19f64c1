//! Batch sweeps over model shapes, sample sizes and trials.

mod figures;
mod plot;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use figures::{default_n_grid, figure_config, reproduce_figure, reproduce_figure_with, FigureId, FigureOutput};
pub use plot::{curves, render_svg, Curve, CurvePoint};

use crate::data::{fmt17, gen_dataset, sample_truth};
use crate::error::{argument, Result};
use crate::estimate::{fit, prediction_error, Estimator, FitOptions};
use crate::exec::ExecMode;
use crate::model::{ModelKind, ModelSpec};
use crate::rng::derive_seed;

/// A stride given either as a number or relative to the filter size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Stride {
    Fixed(usize),
    Relative(RelativeStride),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RelativeStride {
    #[serde(rename = "m")]
    Filter,
    #[serde(rename = "m/2")]
    HalfFilter,
}

impl Stride {
    fn resolve(self, m: usize) -> Result<usize> {
        match self {
            Stride::Fixed(s) => Ok(s),
            Stride::Relative(RelativeStride::Filter) => Ok(m),
            Stride::Relative(RelativeStride::HalfFilter) if m.is_multiple_of(2) => Ok(m / 2),
            Stride::Relative(RelativeStride::HalfFilter) => {
                Err(argument(format!("stride m/2 needs an even filter size, got m={m}")))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub model: ModelKind,
    pub d: Vec<usize>,
    #[serde(default)]
    pub m: Vec<usize>,
    #[serde(default)]
    pub s: Vec<Stride>,
    #[serde(default)]
    pub r: Vec<usize>,
    #[serde(default, rename = "L")]
    pub l: Vec<usize>,
    pub n: Vec<usize>,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    pub trials: usize,
    pub master_seed: u64,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<Estimator>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub fit: FitOptions,
    /// Record wall-clock fit times; off by default so output is reproducible
    /// byte for byte.
    #[serde(default)]
    pub timing: bool,
}

fn default_sigma() -> f64 {
    1.0
}

fn default_estimators() -> Vec<Estimator> {
    vec![Estimator::Model, Estimator::Fnn]
}

impl SweepConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: SweepConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(argument("trials must be at least 1"));
        }
        if self.n.is_empty() || self.n.contains(&0) {
            return Err(argument("n grid must be non-empty with entries >= 1"));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(argument(format!("sigma={} must be finite and >= 0", self.sigma)));
        }
        if self.estimators.is_empty() {
            return Err(argument("at least one estimator is required"));
        }
        self.fit.validate()?;
        self.specs().map(|_| ())
    }

    /// The shape grid in lexicographic order of the listed axes.
    pub fn specs(&self) -> Result<Vec<ModelSpec>> {
        let unused = |name: &str, empty: bool| {
            if empty {
                Ok(())
            } else {
                Err(argument(format!("grid axis {name} is not used by {} models", self.model)))
            }
        };
        let need = |name: &str, v: &[usize]| {
            if v.is_empty() {
                Err(argument(format!("grid axis {name} is required for {} models", self.model)))
            } else {
                Ok(())
            }
        };
        need("d", &self.d)?;
        let mut out = Vec::new();
        match self.model {
            ModelKind::Ca | ModelKind::Cw => {
                need("m", &self.m)?;
                if self.s.is_empty() {
                    return Err(argument("grid axis s is required for convolutional models"));
                }
                unused("r", self.r.is_empty())?;
                unused("L", self.l.is_empty())?;
                for &d in &self.d {
                    for &m in &self.m {
                        for &s in &self.s {
                            let s = s.resolve(m)?;
                            out.push(if self.model == ModelKind::Ca {
                                ModelSpec::ca(d, m, s)?
                            } else {
                                ModelSpec::cw(d, m, s)?
                            });
                        }
                    }
                }
            }
            ModelKind::Rnn => {
                need("r", &self.r)?;
                need("L", &self.l)?;
                unused("m", self.m.is_empty())?;
                unused("s", self.s.is_empty())?;
                for &d in &self.d {
                    for &r in &self.r {
                        for &l in &self.l {
                            out.push(ModelSpec::rnn(d, r, l)?);
                        }
                    }
                }
            }
            ModelKind::Fnn => {
                unused("m", self.m.is_empty())?;
                unused("s", self.s.is_empty())?;
                unused("r", self.r.is_empty())?;
                let ls = if self.l.is_empty() { vec![1] } else { self.l.clone() };
                for &d in &self.d {
                    for &l in &ls {
                        out.push(ModelSpec::fnn(d, l)?);
                    }
                }
            }
        }
        Ok(out)
    }
}

/// One fit of one estimator on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub spec: ModelSpec,
    pub n: usize,
    pub trial: usize,
    pub seed: u64,
    pub estimator: Estimator,
    pub pred_err: f64,
    pub train_loss: f64,
    pub converged: bool,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub config: SweepConfig,
    pub rows: Vec<SweepRow>,
}

pub const CSV_HEADER: &str = "model,d,m,s,r,L,n,trial,seed,estimator,pred_err,train_loss,converged,wall_ms";

impl SweepResult {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{CSV_HEADER}")?;
        for row in &self.rows {
            let s = &row.spec;
            let est = match row.estimator {
                Estimator::Model => "model",
                Estimator::Fnn => "fnn",
            };
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                s.kind(),
                s.d(),
                s.m(),
                s.s(),
                s.r(),
                s.seq_len(),
                row.n,
                row.trial,
                row.seed,
                est,
                fmt17(row.pred_err),
                fmt17(row.train_loss),
                row.converged,
                fmt17(row.wall_ms),
            )?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii output")
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_csv(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Rows matching `pred`.
    pub fn select(&self, pred: impl Fn(&SweepRow) -> bool) -> Vec<&SweepRow> {
        self.rows.iter().filter(|r| pred(r)).collect()
    }
}

/// Seed shared by every sample size of trial `trial` at shape `grid_index`,
/// so that datasets along an `n` curve are nested.
pub fn trial_seed(master_seed: u64, grid_index: usize, trial: usize) -> u64 {
    derive_seed(master_seed, &[grid_index as u64, trial as u64])
}

/// Runs a single grid cell; every row is reproducible from its arguments.
pub fn run_cell(config: &SweepConfig, spec: &ModelSpec, grid_index: usize, n: usize, trial: usize) -> Result<Vec<SweepRow>> {
    let seed = trial_seed(config.master_seed, grid_index, trial);
    let truth = sample_truth(spec, seed);
    let theta_star = truth.expand(spec)?;
    let ds = gen_dataset(spec, &truth, n, config.sigma, seed)?;
    let options = FitOptions {
        seed,
        ..config.fit.clone()
    };
    config
        .estimators
        .iter()
        .map(|&est| {
            let start = Instant::now();
            let fitted = fit(&ds, est, &options)?;
            let wall_ms = if config.timing {
                start.elapsed().as_secs_f64() * 1e3
            } else {
                0.0
            };
            Ok(SweepRow {
                spec: *spec,
                n,
                trial,
                seed,
                estimator: est,
                pred_err: prediction_error(&fitted.expanded_hat, &theta_star)?,
                train_loss: fitted.train_loss,
                converged: fitted.converged,
                wall_ms,
            })
        })
        .collect()
}

/// Runs every (shape, n, trial) cell and returns rows ordered by shape, n,
/// trial and estimator regardless of `mode`. Writes the CSV when the config
/// names an output path.
pub fn run_sweep(config: &SweepConfig, mode: ExecMode) -> Result<SweepResult> {
    config.validate()?;
    let specs = config.specs()?;
    let (nn, nt) = (config.n.len(), config.trials);
    let cells = specs.len() * nn * nt;
    let out = mode.map(cells, |k| {
        let (g, rest) = (k / (nn * nt), k % (nn * nt));
        let (ni, trial) = (rest / nt, rest % nt);
        run_cell(config, &specs[g], g, config.n[ni], trial)
    });
    let mut rows = Vec::with_capacity(cells * config.estimators.len());
    for cell in out {
        rows.extend(cell?);
    }
    let result = SweepResult {
        config: config.clone(),
        rows,
    };
    if let Some(path) = &config.output {
        result.save_csv(path)?;
    }
    Ok(result)
}

/// Axis of a scaling-exponent regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    N,
    M,
    R,
}

impl Axis {
    fn value(self, row: &SweepRow) -> usize {
        match self {
            Axis::N => row.n,
            Axis::M => row.spec.m(),
            Axis::R => row.spec.r(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub slope: f64,
    pub stderr: f64,
    pub intercept: f64,
    pub points: usize,
}

/// Sample quantile with linear interpolation between order statistics.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

/// Least-squares slope of `log(median error)` on `log(axis value)`, with
/// errors grouped by axis value. Callers select the rows of one curve.
pub fn fit_scaling_exponent(rows: &[&SweepRow], axis: Axis) -> Result<ScalingFit> {
    let mut groups: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for row in rows {
        groups.entry(axis.value(row)).or_default().push(row.pred_err);
    }
    let pts: Vec<(f64, f64)> = groups
        .iter()
        .map(|(&x, errs)| ((x as f64).ln(), median(errs).ln()))
        .collect();
    if pts.len() < 3 {
        return Err(argument(format!(
            "scaling fit needs at least 3 distinct axis values, got {}",
            pts.len()
        )));
    }
    if pts.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(argument("scaling fit needs positive axis values and errors"));
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let stderr = (ssr / (k - 2.0) / sxx).sqrt();
    Ok(ScalingFit {
        slope,
        stderr,
        intercept,
        points: pts.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> SweepConfig {
        SweepConfig::from_json(
            r#"{"model": "ca", "d": [16], "m": [4], "s": [1, "m"], "n": [20, 40],
                "sigma": 1.0, "trials": 2, "master_seed": 7}"#,
        )
        .unwrap()
    }

    #[test]
    fn config_parsing() {
        let cfg = small_config();
        let specs = cfg.specs().unwrap();
        assert_eq!(specs, vec![ModelSpec::ca(16, 4, 1).unwrap(), ModelSpec::ca(16, 4, 4).unwrap()]);
        assert_eq!(cfg.estimators, vec![Estimator::Model, Estimator::Fnn]);
        assert!(SweepConfig::from_json(r#"{"model": "ca", "d": [16], "m": [4], "s": [1], "n": [20], "trials": 1, "master_seed": 0, "extra": 1}"#).is_err());
        assert!(SweepConfig::from_json(r#"{"model": "ca", "d": [16], "m": [4], "s": [3], "n": [20], "trials": 1, "master_seed": 0}"#).is_err());
        assert!(SweepConfig::from_json(r#"{"model": "rnn", "d": [4], "r": [2], "L": [3], "m": [2], "n": [20], "trials": 1, "master_seed": 0}"#).is_err());
        assert!(SweepConfig::from_json(r#"{"model": "ca", "d": [16], "m": [4], "s": [1], "n": [20], "trials": 0, "master_seed": 0}"#).is_err());
        let half = SweepConfig::from_json(r#"{"model": "cw", "d": [64], "m": [8], "s": [1, "m/2", "m"], "n": [20], "trials": 1, "master_seed": 0}"#).unwrap();
        let strides: Vec<usize> = half.specs().unwrap().iter().map(|s| s.s()).collect();
        assert_eq!(strides, vec![1, 4, 8]);
    }

    #[test]
    fn row_layout_and_modes_agree() {
        let cfg = small_config();
        let a = run_sweep(&cfg, ExecMode::Sequential).unwrap();
        let b = run_sweep(&cfg, ExecMode::Parallel).unwrap();
        assert_eq!(a.rows.len(), 2 * 2 * 2 * 2);
        assert_eq!(a.to_csv_string(), b.to_csv_string());
        let csv = a.to_csv_string();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER);
        let first: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(&first[..8], &["ca", "16", "4", "1", "0", "1", "20", "0"]);
        assert_eq!(first[9], "model");
        assert!(a.rows.iter().all(|r| r.pred_err >= 0.0));
        // a cell reproduces in isolation
        let spec = ModelSpec::ca(16, 4, 4).unwrap();
        let cell = run_cell(&cfg, &spec, 1, 40, 1).unwrap();
        let found: Vec<&SweepRow> = a.select(|r| r.spec == spec && r.n == 40 && r.trial == 1);
        assert_eq!(cell.iter().collect::<Vec<_>>(), found);
    }

    #[test]
    fn noiseless_cell_is_exact() {
        let cfg = SweepConfig::from_json(
            r#"{"model": "ca", "d": [12], "m": [3], "s": [3], "n": [30], "sigma": 0.0, "trials": 1, "master_seed": 1}"#,
        )
        .unwrap();
        let res = run_sweep(&cfg, ExecMode::Sequential).unwrap();
        assert!(res.rows.iter().all(|r| r.pred_err <= 1e-6));
    }

    fn synthetic(values: &[(usize, f64)], axis: Axis) -> Vec<SweepRow> {
        values
            .iter()
            .map(|&(x, e)| SweepRow {
                spec: match axis {
                    Axis::M => ModelSpec::ca(64, x, 1).unwrap(),
                    Axis::R => ModelSpec::rnn(4, x, 3).unwrap(),
                    Axis::N => ModelSpec::ca(64, 8, 1).unwrap(),
                },
                n: if axis == Axis::N { x } else { 100 },
                trial: 0,
                seed: 0,
                estimator: Estimator::Model,
                pred_err: e,
                train_loss: 0.0,
                converged: true,
                wall_ms: 0.0,
            })
            .collect()
    }

    #[test]
    fn exact_power_laws() {
        let rows = synthetic(
            &[128, 256, 512, 1024, 2048].map(|n| (n, 3.0 * (n as f64).powf(-0.5))),
            Axis::N,
        );
        let refs: Vec<&SweepRow> = rows.iter().collect();
        let fit = fit_scaling_exponent(&refs, Axis::N).unwrap();
        assert!((fit.slope + 0.5).abs() <= 1e-12, "{}", fit.slope);
        let rows = synthetic(&[2, 4, 8, 16].map(|m| (m, 0.1 * (m as f64).sqrt())), Axis::M);
        let refs: Vec<&SweepRow> = rows.iter().collect();
        let fit = fit_scaling_exponent(&refs, Axis::M).unwrap();
        assert!((fit.slope - 0.5).abs() <= 1e-12);
        assert!(fit_scaling_exponent(&refs[..2], Axis::M).is_err());
    }

    #[test]
    fn quantiles() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(quantile(&[1.0, 2.0, 3.0, 4.0, 5.0], 0.25), 2.0);
    }
}

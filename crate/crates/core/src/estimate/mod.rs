//! Least-squares estimators and the prediction-error metric.

mod cw;
mod rnn;

use faer::{Mat, MatRef};
use serde::{Deserialize, Serialize};

pub use cw::{cw_descent_path, cw_loss, cw_loss_grad, fit_cw};
pub use rnn::{fit_rnn, rnn_loss, rnn_loss_grad, rnn_loss_grad_bptt};

use crate::data::Dataset;
use crate::error::{argument, Error, Result};
use crate::linalg::{mat_vec, LeastSquares};
use crate::model::{ExpandedParam, ModelKind, ModelSpec, Params};
use crate::rng;

/// Optimizer used for recurrent fits.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RnnMethod {
    /// Exact least squares in `B` for each `A`, Levenberg–Marquardt in `A`.
    #[default]
    VariableProjection,
    /// Full-batch gradient descent with backtracking line search.
    GradientDescent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    pub max_iters: usize,
    /// Stop once the relative decrease of the loss falls below this.
    pub tol: f64,
    pub restarts: usize,
    pub seed: u64,
    pub rnn_method: RnnMethod,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iters: 10_000,
            tol: 1e-10,
            restarts: 5,
            seed: 0,
            rnn_method: RnnMethod::default(),
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(argument(format!("tol={} must be positive", self.tol)));
        }
        if self.max_iters == 0 {
            return Err(argument("max_iters must be at least 1"));
        }
        if self.restarts == 0 {
            return Err(argument("restarts must be at least 1"));
        }
        Ok(())
    }

    pub(crate) fn restart_rng(&self, tag: u64, restart: usize) -> rand_chacha::ChaCha20Rng {
        rng::seeded(rng::derive_seed(self.seed, &[tag, restart as u64]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params_hat: Params,
    pub expanded_hat: ExpandedParam,
    /// Mean squared residual on the training data.
    pub train_loss: f64,
    pub iterations: usize,
    pub converged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

/// Which of the two estimators of a sweep to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    /// The structured model of the dataset's own kind.
    Model,
    /// Dense least squares on the same regressor.
    Fnn,
}

/// Mean squared residual `(1/n) Σ (y_i − ⟨z^i, θ⟩)²`.
pub fn train_loss(z: MatRef<'_, f64>, y: &[f64], theta: &[f64]) -> f64 {
    let pred = mat_vec(z, theta);
    mean_sq_diff(&pred, y)
}

pub(crate) fn mean_sq_diff(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / a.len() as f64
}

fn require_kind(ds: &Dataset, kind: ModelKind) -> Result<()> {
    if ds.spec.kind() != kind {
        return Err(argument(format!(
            "{kind} estimator applied to a {} dataset",
            ds.spec.kind()
        )));
    }
    if ds.n() == 0 {
        return Err(argument("empty dataset"));
    }
    Ok(())
}

/// Pooled filter features: row `i` is `Σ_ℓ segment(x^i, ℓ)`.
pub fn pooled_design(ds: &Dataset) -> Mat<f64> {
    let spec = &ds.spec;
    let (m, s, rc) = (spec.m(), spec.s(), spec.r_conv());
    let z = &ds.inputs;
    Mat::from_fn(ds.n(), m, |i, j| (0..rc).map(|ell| z[(i, ell * s + j)]).sum())
}

/// Exact least squares for the average-pooling model through its linear
/// reduction to `m` pooled features.
pub fn fit_ca(ds: &Dataset, _options: &FitOptions) -> Result<FitResult> {
    require_kind(ds, ModelKind::Ca)?;
    let phi = pooled_design(ds);
    let w = LeastSquares::new(phi.as_ref())?.solve(&ds.labels)?;
    let params = Params::Ca { w };
    let expanded = params.expand(&ds.spec)?;
    let loss = train_loss(ds.inputs.as_ref(), &ds.labels, expanded.as_slice());
    Ok(FitResult {
        params_hat: params,
        expanded_hat: expanded,
        train_loss: loss,
        iterations: 1,
        converged: true,
        diagnostic: None,
    })
}

/// Dense least squares on the flattened regressor.
pub fn fit_fnn(ds: &Dataset) -> Result<FitResult> {
    if ds.n() == 0 {
        return Err(argument("empty dataset"));
    }
    let theta = LeastSquares::new(ds.inputs.as_ref())?.solve(&ds.labels)?;
    let loss = train_loss(ds.inputs.as_ref(), &ds.labels, &theta);
    Ok(FitResult {
        expanded_hat: ExpandedParam(theta.clone()),
        params_hat: Params::Fnn { theta },
        train_loss: loss,
        iterations: 1,
        converged: true,
        diagnostic: None,
    })
}

/// Fits the structured model matching the dataset's kind.
pub fn fit_model(ds: &Dataset, options: &FitOptions) -> Result<FitResult> {
    options.validate()?;
    match ds.spec.kind() {
        ModelKind::Ca => fit_ca(ds, options),
        ModelKind::Cw => fit_cw(ds, options),
        ModelKind::Rnn => fit_rnn(ds, options),
        ModelKind::Fnn => fit_fnn(ds),
    }
}

pub fn fit(ds: &Dataset, estimator: Estimator, options: &FitOptions) -> Result<FitResult> {
    match estimator {
        Estimator::Model => fit_model(ds, options),
        Estimator::Fnn => fit_fnn(ds),
    }
}

/// `‖θ̂ − θ*‖₂`, the root mean-square prediction error under isotropic
/// Gaussian inputs.
pub fn prediction_error(theta_hat: &ExpandedParam, theta_star: &ExpandedParam) -> Result<f64> {
    theta_hat.distance(theta_star)
}

const MC_STREAM: u64 = 0x6d63;

/// Root mean-square difference between the two networks on `n_mc` fresh
/// standard Gaussian inputs. `params_hat` may be dense parameters over the
/// same regressor.
pub fn mc_prediction_error(
    spec: &ModelSpec,
    truth: &Params,
    params_hat: &Params,
    n_mc: usize,
    seed: u64,
) -> Result<f64> {
    if n_mc == 0 {
        return Err(argument("n_mc must be at least 1"));
    }
    let spec_of = |p: &Params| {
        if p.kind() == ModelKind::Fnn {
            spec.fnn_counterpart()
        } else {
            *spec
        }
    };
    let (ts, hs) = (spec_of(truth), spec_of(params_hat));
    truth.validate(&ts)?;
    params_hat.validate(&hs)?;
    let base = rng::derive_seed(seed, &[MC_STREAM]);
    let dim = spec.dim();
    let mut acc = 0.0;
    for i in 0..n_mc {
        let mut r = rng::stream_rng(base, i as u64);
        let x = rng::normal_vec(&mut r, dim);
        let diff = truth.forward(&ts, &x)? - params_hat.forward(&hs, &x)?;
        acc += diff * diff;
    }
    let v = (acc / n_mc as f64).sqrt();
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Overflow("Monte Carlo prediction error".into()))
    }
}

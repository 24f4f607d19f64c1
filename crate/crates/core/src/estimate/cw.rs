//! Weighted-pooling fits by alternating exact least squares.

use faer::Mat;

use super::{mean_sq_diff, require_kind, train_loss, FitOptions, FitResult};
use crate::data::Dataset;
use crate::error::{check_len, Result};
use crate::linalg::{dot, mat_tvec, mat_vec, norm2, solve_psd};
use crate::model::{expand_cw, ModelKind, ModelSpec, Params};
use crate::rng;

const RESTART_TAG: u64 = 0x6377;

/// Sufficient statistics `G = ZᵀZ/n`, `c = Zᵀy/n`, `yᵀy/n` of the quadratic
/// loss in θ.
struct Quadratic {
    spec: ModelSpec,
    g: Mat<f64>,
    c: Vec<f64>,
    yy: f64,
}

impl Quadratic {
    fn new(ds: &Dataset) -> Self {
        let n = ds.n() as f64;
        let z = ds.inputs.as_ref();
        let g = (z.transpose() * z) * faer::Scale(1.0 / n);
        let c = mat_tvec(z, &ds.labels).into_iter().map(|v| v / n).collect();
        let yy = dot(&ds.labels, &ds.labels) / n;
        Self {
            spec: ds.spec,
            g,
            c,
            yy,
        }
    }

    fn loss(&self, w: &[f64], a: &[f64]) -> f64 {
        let theta = expand_cw(w, a, &self.spec).expect("shapes checked").0;
        let gt = mat_vec(self.g.as_ref(), &theta);
        self.yy - 2.0 * dot(&self.c, &theta) + dot(&theta, &gt)
    }

    /// Minimizes over the block whose embedding into θ is the `d × k` matrix `m`.
    fn solve_block(&self, m: Mat<f64>) -> Result<Vec<f64>> {
        let gm = &self.g * &m;
        let h = m.transpose() * &gm;
        let rhs = mat_tvec(m.as_ref(), &self.c);
        solve_psd(h.as_ref(), &rhs)
    }

    fn best_filter(&self, a: &[f64]) -> Result<Vec<f64>> {
        let (m, s) = (self.spec.m(), self.spec.s());
        let mut emb = Mat::<f64>::zeros(self.spec.d(), m);
        for (ell, &al) in a.iter().enumerate() {
            for j in 0..m {
                emb[(ell * s + j, j)] += al;
            }
        }
        self.solve_block(emb)
    }

    fn best_pooling(&self, w: &[f64]) -> Result<Vec<f64>> {
        let (m, s) = (self.spec.m(), self.spec.s());
        let mut emb = Mat::<f64>::zeros(self.spec.d(), self.spec.r_conv());
        for ell in 0..self.spec.r_conv() {
            for j in 0..m {
                emb[(ell * s + j, ell)] = w[j];
            }
        }
        self.solve_block(emb)
    }
}

fn rebalance(w: &mut [f64], a: &mut [f64]) {
    let (nw, na) = (norm2(w), norm2(a));
    if nw > 0.0 && na > 0.0 && nw.is_finite() && na.is_finite() {
        let c = (na / nw).sqrt();
        w.iter_mut().for_each(|v| *v *= c);
        a.iter_mut().for_each(|v| *v /= c);
    }
}

/// Mean squared residual of `(w, a)` on the dataset.
pub fn cw_loss(ds: &Dataset, w: &[f64], a: &[f64]) -> Result<f64> {
    let theta = expand_cw(w, a, &ds.spec)?;
    Ok(train_loss(ds.inputs.as_ref(), &ds.labels, theta.as_slice()))
}

/// Loss and its gradient with respect to `(w, a)`, accumulated backwards
/// from the residuals through the expansion.
pub fn cw_loss_grad(ds: &Dataset, w: &[f64], a: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let spec = &ds.spec;
    let theta = expand_cw(w, a, spec)?;
    let z = ds.inputs.as_ref();
    let pred = mat_vec(z, theta.as_slice());
    let loss = mean_sq_diff(&pred, &ds.labels);
    let scale = 2.0 / ds.n() as f64;
    let resid: Vec<f64> = pred.iter().zip(&ds.labels).map(|(p, y)| scale * (p - y)).collect();
    let g_theta = mat_tvec(z, &resid);
    let (m, s) = (spec.m(), spec.s());
    let mut gw = vec![0.0; m];
    let mut ga = vec![0.0; spec.r_conv()];
    for (ell, gal) in ga.iter_mut().enumerate() {
        let seg = &g_theta[ell * s..ell * s + m];
        *gal = dot(w, seg);
        for (gj, sj) in gw.iter_mut().zip(seg) {
            *gj += a[ell] * sj;
        }
    }
    Ok((loss, gw, ga))
}

/// Training losses after each of `half_steps` exact block updates starting
/// from `(w, a)`, alternating filter and pooling solves. Entry 0 is the
/// initial loss.
pub fn cw_descent_path(ds: &Dataset, w: &[f64], a: &[f64], half_steps: usize) -> Result<Vec<f64>> {
    require_kind(ds, ModelKind::Cw)?;
    check_len("filter w", ds.spec.m(), w.len())?;
    check_len("pooling weights a", ds.spec.r_conv(), a.len())?;
    let q = Quadratic::new(ds);
    let (mut w, mut a) = (w.to_vec(), a.to_vec());
    let mut out = vec![cw_loss(ds, &w, &a)?];
    for k in 0..half_steps {
        if k % 2 == 0 {
            w = q.best_filter(&a)?;
        } else {
            a = q.best_pooling(&w)?;
        }
        out.push(cw_loss(ds, &w, &a)?);
    }
    Ok(out)
}

struct Run {
    w: Vec<f64>,
    a: Vec<f64>,
    loss: f64,
    iterations: usize,
    converged: bool,
}

fn run_from(q: &Quadratic, mut w: Vec<f64>, mut a: Vec<f64>, options: &FitOptions) -> Result<Run> {
    let mut prev = q.loss(&w, &a);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < options.max_iters {
        w = q.best_filter(&a)?;
        a = q.best_pooling(&w)?;
        rebalance(&mut w, &mut a);
        iterations += 1;
        let cur = q.loss(&w, &a);
        if cur <= 0.0 || prev - cur <= options.tol * prev.abs() {
            converged = true;
            break;
        }
        prev = cur;
    }
    Ok(Run {
        w,
        a,
        loss: prev,
        iterations,
        converged,
    })
}

/// Best of `options.restarts` alternating least-squares runs from Gaussian
/// initializations.
pub fn fit_cw(ds: &Dataset, options: &FitOptions) -> Result<FitResult> {
    require_kind(ds, ModelKind::Cw)?;
    options.validate()?;
    let q = Quadratic::new(ds);
    let mut best: Option<(f64, Run)> = None;
    let mut total_iters = 0;
    for restart in 0..options.restarts {
        let mut r = options.restart_rng(RESTART_TAG, restart);
        let w0 = rng::normal_vec(&mut r, ds.spec.m());
        let a0 = rng::normal_vec(&mut r, ds.spec.r_conv());
        let run = run_from(&q, w0, a0, options)?;
        total_iters += run.iterations;
        let loss = cw_loss(ds, &run.w, &run.a)?;
        debug_assert!(run.loss.is_finite());
        if best.as_ref().is_none_or(|(b, _)| loss < *b) {
            best = Some((loss, run));
        }
    }
    let (loss, run) = best.expect("at least one restart");
    let params = Params::Cw { w: run.w, a: run.a };
    let expanded = params.expand(&ds.spec)?;
    Ok(FitResult {
        params_hat: params,
        expanded_hat: expanded,
        train_loss: loss,
        iterations: total_iters,
        converged: run.converged,
        diagnostic: None,
    })
}

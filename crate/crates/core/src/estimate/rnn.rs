//! Recurrent fits.
//!
//! The output `1ᵀh_L = Σ_k vₖᵀ B x_{L−k}` with `vₖᵀ = 1ᵀAᵏ` is linear in `B`
//! for fixed `A`. The default method eliminates `B` by an exact least-squares
//! solve and runs Levenberg–Marquardt on the reduced residual in `A`. Plain
//! gradient descent on `(A, B)` is also available.

use faer::Mat;

use super::{mean_sq_diff, require_kind, FitOptions, FitResult, RnnMethod};
use crate::data::{random_params, Dataset};
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, mat_tvec, mat_vec, solve_psd, LeastSquares, Matrix};
use crate::model::{expand_rnn, ModelKind, Params};

const RESTART_TAG: u64 = 0x0072_6e6e;
const ARMIJO: f64 = 1e-4;
const MIN_STEP: f64 = 1e-30;
const MAX_DAMPING_TRIES: usize = 60;

/// `vₖ = (Aᵀ)ᵏ 1` for `k = 0 … L−1`, or `None` on overflow.
fn powers(a: &Matrix, l: usize) -> Option<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(l);
    let mut v = vec![1.0; a.rows()];
    for k in 0..l {
        if k > 0 {
            v = a.tmul_vec(&v);
        }
        if v.iter().any(|x| !x.is_finite()) {
            return None;
        }
        out.push(v.clone());
    }
    Some(out)
}

/// Mean squared residual of `(A, B)`.
pub fn rnn_loss(ds: &Dataset, a: &Matrix, b: &Matrix) -> Result<f64> {
    let theta = expand_rnn(a, b, &ds.spec)?;
    let pred = mat_vec(ds.inputs.as_ref(), theta.as_slice());
    Ok(mean_sq_diff(&pred, &ds.labels))
}

/// Loss and gradient with respect to `(A, B)`. The residual gradient is
/// pulled back to θ and then through the power recursion `v_{k+1} = Aᵀvₖ`
/// by an adjoint sweep.
pub fn rnn_loss_grad(ds: &Dataset, a: &Matrix, b: &Matrix) -> Result<(f64, Matrix, Matrix)> {
    let spec = &ds.spec;
    let theta = expand_rnn(a, b, spec)?;
    let (d, r, l) = (spec.d(), spec.r(), spec.seq_len());
    let z = ds.inputs.as_ref();
    let pred = mat_vec(z, theta.as_slice());
    let loss = mean_sq_diff(&pred, &ds.labels);
    let scale = 2.0 / ds.n() as f64;
    let resid: Vec<f64> = pred.iter().zip(&ds.labels).map(|(p, y)| scale * (p - y)).collect();
    let g_theta = mat_tvec(z, &resid);
    let v = powers(a, l).ok_or_else(|| Error::Overflow("powers of A".into()))?;

    let mut gb = Matrix::zeros(r, d);
    let mut u = Vec::with_capacity(l);
    for (k, vk) in v.iter().enumerate() {
        let seg = l - 1 - k;
        let gs = &g_theta[seg * d..(seg + 1) * d];
        for p in 0..r {
            let row = &mut gb.as_mut_slice()[p * d..(p + 1) * d];
            axpy(vk[p], gs, row);
        }
        u.push(b.mul_vec(gs));
    }
    let mut ga = Matrix::zeros(r, r);
    let mut lambda = u[l - 1].clone();
    for k in (0..l - 1).rev() {
        for p in 0..r {
            for q in 0..r {
                let cur = ga.get(p, q);
                ga.set(p, q, cur + v[k][p] * lambda[q]);
            }
        }
        let mut next = a.mul_vec(&lambda);
        axpy(1.0, &u[k], &mut next);
        lambda = next;
    }
    Ok((loss, ga, gb))
}

/// Same quantity as [`rnn_loss_grad`], by backpropagation through time on
/// each sample's hidden-state trajectory.
pub fn rnn_loss_grad_bptt(ds: &Dataset, a: &Matrix, b: &Matrix) -> Result<(f64, Matrix, Matrix)> {
    let spec = &ds.spec;
    Params::Rnn {
        a: a.clone(),
        b: b.clone(),
    }
    .validate(spec)?;
    let (d, r, l) = (spec.d(), spec.r(), spec.seq_len());
    let n = ds.n();
    let mut ga = Matrix::zeros(r, r);
    let mut gb = Matrix::zeros(r, d);
    let mut loss = 0.0;
    for i in 0..n {
        let x = ds.row(i);
        let mut hs = vec![vec![0.0; r]];
        for t in 0..l {
            let xt = &x[t * d..(t + 1) * d];
            let mut h = a.mul_vec(&hs[t]);
            for (p, hp) in h.iter_mut().enumerate() {
                *hp += dot(b.row(p), xt);
            }
            hs.push(h);
        }
        let out: f64 = hs[l].iter().sum();
        let e = out - ds.labels[i];
        loss += e * e;
        let mut delta = vec![2.0 * e / n as f64; r];
        for t in (1..=l).rev() {
            let xt = &x[(t - 1) * d..t * d];
            for p in 0..r {
                axpy(delta[p], xt, &mut gb.as_mut_slice()[p * d..(p + 1) * d]);
                axpy(delta[p], &hs[t - 1], &mut ga.as_mut_slice()[p * r..(p + 1) * r]);
            }
            delta = a.tmul_vec(&delta);
        }
    }
    let loss = loss / n as f64;
    if !loss.is_finite() {
        return Err(Error::Overflow("recurrent loss".into()));
    }
    Ok((loss, ga, gb))
}

/// Design for the input map at a fixed transition: column `p·d + j` holds
/// `Σₖ vₖ[p] · x_{L−k}[j]`, so that outputs are `Ψ vec(B)`.
fn input_map_design(ds: &Dataset, v: &[Vec<f64>]) -> Mat<f64> {
    let spec = &ds.spec;
    let (d, r, l) = (spec.d(), spec.r(), spec.seq_len());
    let mut psi = Mat::<f64>::zeros(ds.n(), r * d);
    for (k, vk) in v.iter().enumerate() {
        let seg = l - 1 - k;
        for j in 0..d {
            let src = ds.inputs.col_as_slice(seg * d + j);
            for (p, &c) in vk.iter().enumerate() {
                if c != 0.0 {
                    axpy(c, src, psi.col_as_slice_mut(p * d + j));
                }
            }
        }
    }
    psi
}

/// The reduced problem evaluated at one transition matrix.
struct Reduced {
    v: Vec<Vec<f64>>,
    psi: Mat<f64>,
    b: Vec<f64>,
    resid: Vec<f64>,
    sse: f64,
}

fn reduce(ds: &Dataset, a: &Matrix) -> Result<Option<Reduced>> {
    let Some(v) = powers(a, ds.spec.seq_len()) else {
        return Ok(None);
    };
    let psi = input_map_design(ds, &v);
    let ls = match LeastSquares::new(psi.as_ref()) {
        Ok(ls) => ls,
        Err(Error::Argument(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    let b = ls.solve(&ds.labels)?;
    let fitted = mat_vec(psi.as_ref(), &b);
    let resid: Vec<f64> = ds.labels.iter().zip(&fitted).map(|(y, f)| y - f).collect();
    let sse = dot(&resid, &resid);
    if !sse.is_finite() {
        return Ok(None);
    }
    Ok(Some(Reduced { v, psi, b, resid, sse }))
}

/// Derivative of the outputs with respect to `A` (column `p·r + q` for
/// entry `A[p][q]`) at fixed `B`, with its component in `range(Ψ)` removed.
fn reduced_jacobian(ds: &Dataset, a: &Matrix, red: &Reduced) -> Result<Mat<f64>> {
    let spec = &ds.spec;
    let (d, r, l) = (spec.d(), spec.r(), spec.seq_len());
    let n = ds.n();
    let b = Matrix::from_row_major(r, d, red.b.clone())?.to_faer();
    // column block k: x_{L−k} mapped through B
    let mut u = Mat::<f64>::zeros(n, l * r);
    for k in 0..l {
        let seg = l - 1 - k;
        let block = ds.inputs.as_ref().subcols(seg * d, d) * b.transpose();
        for p in 0..r {
            u.col_as_slice_mut(k * r + p).copy_from_slice(block.col_as_slice(p));
        }
    }
    // forward-mode tangents of the power recursion
    let mut dv = Mat::<f64>::zeros(l * r, r * r);
    for p in 0..r {
        for q in 0..r {
            let col = dv.col_as_slice_mut(p * r + q);
            let mut t = vec![0.0; r];
            for k in 1..l {
                let mut next = a.tmul_vec(&t);
                next[q] += red.v[k - 1][p];
                col[k * r..(k + 1) * r].copy_from_slice(&next);
                t = next;
            }
        }
    }
    let jac = &u * &dv;
    let ls = LeastSquares::new(red.psi.as_ref())?;
    let proj = ls.project(jac.as_ref());
    Ok(jac - proj)
}

struct Run {
    a: Matrix,
    b: Matrix,
    iterations: usize,
    converged: bool,
    diagnostic: Option<String>,
}

fn varpro_run(ds: &Dataset, a0: Matrix, options: &FitOptions) -> Result<Option<Run>> {
    let spec = &ds.spec;
    let (r, d) = (spec.r(), spec.d());
    let Some(mut red) = reduce(ds, &a0)? else {
        return Ok(None);
    };
    let mut a = a0;
    let mut damping: Option<f64> = None;
    let mut iterations = 0;
    let mut converged = false;
    let mut diagnostic = None;
    let floor = f64::EPSILON * f64::EPSILON * dot(&ds.labels, &ds.labels);
    while iterations < options.max_iters {
        if red.sse <= floor {
            converged = true;
            break;
        }
        iterations += 1;
        let q = reduced_jacobian(ds, &a, &red)?;
        let h = q.transpose() * &q;
        let g = mat_tvec(q.as_ref(), &red.resid);
        let k = r * r;
        let max_diag = (0..k).map(|i| h[(i, i)]).fold(0.0, f64::max);
        if max_diag <= 0.0 || dot(&g, &g) <= f64::EPSILON * max_diag * red.sse {
            converged = true;
            break;
        }
        let mut mu = damping.unwrap_or(1e-3 * max_diag);
        let mut accepted = false;
        for _ in 0..MAX_DAMPING_TRIES {
            let mut hd = h.clone();
            for i in 0..k {
                hd[(i, i)] += mu;
            }
            let step = solve_psd(hd.as_ref(), &g)?;
            let mut trial = a.clone();
            for (t, s) in trial.as_mut_slice().iter_mut().zip(&step) {
                *t += s;
            }
            if let Some(next) = reduce(ds, &trial)? {
                if next.sse < red.sse {
                    let rel = (red.sse - next.sse) / red.sse;
                    a = trial;
                    red = next;
                    damping = Some((mu / 3.0).max(1e-15 * max_diag));
                    accepted = true;
                    if rel < options.tol {
                        converged = true;
                    }
                    break;
                }
            }
            mu *= 4.0;
        }
        if !accepted {
            converged = true;
            diagnostic = Some("stationary: no damped step decreases the loss".into());
        }
        if converged {
            break;
        }
    }
    let b = Matrix::from_row_major(r, d, red.b)?;
    Ok(Some(Run {
        a,
        b,
        iterations,
        converged,
        diagnostic,
    }))
}

fn descent_run(ds: &Dataset, mut a: Matrix, mut b: Matrix, options: &FitOptions) -> Result<Run> {
    let loss_at = |a: &Matrix, b: &Matrix| match rnn_loss(ds, a, b) {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(_) | Err(Error::Overflow(_)) => Ok(f64::INFINITY),
        Err(e) => Err(e),
    };
    let mut iterations = 0;
    let mut converged = false;
    let mut diagnostic = None;
    let (mut f, mut ga, mut gb) = match rnn_loss_grad(ds, &a, &b) {
        Ok(v) if v.0.is_finite() => v,
        _ => {
            return Ok(Run {
                a,
                b,
                iterations,
                converged,
                diagnostic: Some("loss is not finite at the initial point".into()),
            })
        }
    };
    while iterations < options.max_iters {
        iterations += 1;
        let g2 = dot(ga.as_slice(), ga.as_slice()) + dot(gb.as_slice(), gb.as_slice());
        if g2 == 0.0 {
            converged = true;
            break;
        }
        let mut t = 1.0;
        let (na, nb, nf) = loop {
            let na = Matrix::from_row_major(
                a.rows(),
                a.cols(),
                a.as_slice().iter().zip(ga.as_slice()).map(|(x, g)| x - t * g).collect(),
            )?;
            let nb = Matrix::from_row_major(
                b.rows(),
                b.cols(),
                b.as_slice().iter().zip(gb.as_slice()).map(|(x, g)| x - t * g).collect(),
            )?;
            let nf = loss_at(&na, &nb)?;
            if nf <= f - ARMIJO * t * g2 {
                break (na, nb, nf);
            }
            t *= 0.5;
            if t < MIN_STEP {
                break (a.clone(), b.clone(), f);
            }
        };
        let rel = (f - nf) / f;
        a = na;
        b = nb;
        if !(rel >= options.tol) {
            converged = true;
            if rel == 0.0 {
                diagnostic = Some("line search found no decrease".into());
            }
            f = nf;
            break;
        }
        let next = rnn_loss_grad(ds, &a, &b)?;
        f = next.0;
        ga = next.1;
        gb = next.2;
    }
    if !f.is_finite() {
        converged = false;
        diagnostic = Some("loss became non-finite".into());
    }
    Ok(Run {
        a,
        b,
        iterations,
        converged,
        diagnostic,
    })
}

/// Best of `options.restarts` fits from random initializations drawn like
/// the ground truth.
pub fn fit_rnn(ds: &Dataset, options: &FitOptions) -> Result<FitResult> {
    require_kind(ds, ModelKind::Rnn)?;
    options.validate()?;
    let mut best: Option<(f64, Run)> = None;
    let mut total_iters = 0;
    let mut failures = 0;
    for restart in 0..options.restarts {
        let mut rng = options.restart_rng(RESTART_TAG, restart);
        let Params::Rnn { a: a0, b: b0 } = random_params(&ds.spec, &mut rng) else {
            unreachable!("recurrent spec yields recurrent parameters")
        };
        let run = match options.rnn_method {
            RnnMethod::VariableProjection => varpro_run(ds, a0, options)?,
            RnnMethod::GradientDescent => Some(descent_run(ds, a0, b0, options)?),
        };
        let Some(run) = run else {
            failures += 1;
            continue;
        };
        total_iters += run.iterations;
        let loss = match rnn_loss(ds, &run.a, &run.b) {
            Ok(v) if v.is_finite() => v,
            _ => {
                failures += 1;
                continue;
            }
        };
        if best.as_ref().is_none_or(|(b, _)| loss < *b) {
            best = Some((loss, run));
        }
    }
    let Some((loss, run)) = best else {
        return Err(Error::Overflow(format!(
            "all {failures} restarts diverged"
        )));
    };
    let params = Params::Rnn { a: run.a, b: run.b };
    let expanded = params.expand(&ds.spec)?;
    Ok(FitResult {
        params_hat: params,
        expanded_hat: expanded,
        train_loss: loss,
        iterations: total_iters,
        converged: run.converged,
        diagnostic: run.diagnostic,
    })
}

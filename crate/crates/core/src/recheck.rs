//! Invariant suite run against the shapes of a sweep configuration.

use serde::{Deserialize, Serialize};

use crate::data::{gen_dataset, random_params, sample_truth};
use crate::error::Result;
use crate::estimate::{cw_loss, cw_loss_grad, fit_ca, fit_fnn, rnn_loss, rnn_loss_grad, FitOptions};
use crate::linalg::{dot, Matrix};
use crate::lower::{free_positions, free_segment, FreeSet};
use crate::model::{ModelKind, ModelSpec, Params};
use crate::rng;
use crate::sweep::{run_cell, SweepConfig};
use crate::theory::{check_basic_inequality, dudley_bound, restricted_eigs, theory_rate};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RecheckReport {
    pub checks: Vec<CheckOutcome>,
}

impl RecheckReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    fn push(&mut self, name: String, passed: bool, detail: String) {
        self.checks.push(CheckOutcome { name, passed, detail });
    }
}

/// Central-difference gradient check; returns the worst norm-wise relative
/// error over `points` random parameter draws.
pub fn gradient_check(spec: &ModelSpec, n: usize, points: usize, seed: u64) -> Result<f64> {
    let truth = sample_truth(spec, seed);
    let ds = gen_dataset(spec, &truth, n, 1.0, seed)?;
    let mut r = rng::seeded(rng::derive_seed(seed, &[0x6763]));
    let h = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..points {
        let p = random_params(spec, &mut r);
        let (analytic, numeric) = match (&p, spec.kind()) {
            (Params::Cw { w, a }, ModelKind::Cw) => {
                let (_, gw, ga) = cw_loss_grad(&ds, w, a)?;
                let mut x: Vec<f64> = w.iter().chain(a).copied().collect();
                let m = w.len();
                let mut num = Vec::with_capacity(x.len());
                for i in 0..x.len() {
                    let orig = x[i];
                    x[i] = orig + h;
                    let fp = cw_loss(&ds, &x[..m], &x[m..])?;
                    x[i] = orig - h;
                    let fm = cw_loss(&ds, &x[..m], &x[m..])?;
                    x[i] = orig;
                    num.push((fp - fm) / (2.0 * h));
                }
                (gw.into_iter().chain(ga).collect::<Vec<_>>(), num)
            }
            (Params::Rnn { a, b }, ModelKind::Rnn) => {
                let (_, ga, gb) = rnn_loss_grad(&ds, a, b)?;
                let (r, d) = (spec.r(), spec.d());
                let loss = |x: &[f64]| -> Result<f64> {
                    let a = Matrix::from_row_major(r, r, x[..r * r].to_vec())?;
                    let b = Matrix::from_row_major(r, d, x[r * r..].to_vec())?;
                    rnn_loss(&ds, &a, &b)
                };
                let mut x: Vec<f64> = a.as_slice().iter().chain(b.as_slice()).copied().collect();
                let mut num = Vec::with_capacity(x.len());
                for i in 0..x.len() {
                    let orig = x[i];
                    x[i] = orig + h;
                    let fp = loss(&x)?;
                    x[i] = orig - h;
                    let fm = loss(&x)?;
                    x[i] = orig;
                    num.push((fp - fm) / (2.0 * h));
                }
                (ga.as_slice().iter().chain(gb.as_slice()).copied().collect(), num)
            }
            _ => return Ok(0.0),
        };
        let diff: f64 = analytic.iter().zip(&numeric).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        let scale = dot(&analytic, &analytic).sqrt().max(dot(&numeric, &numeric).sqrt()).max(1e-300);
        worst = worst.max(diff / scale);
    }
    Ok(worst)
}

/// Worst relative gap `|forward − ⟨z, θ⟩| / (1 + |forward|)` over random
/// parameters and inputs.
pub fn expansion_gap(spec: &ModelSpec, draws: usize, seed: u64) -> Result<f64> {
    let mut r = rng::seeded(rng::derive_seed(seed, &[0x6571]));
    let mut worst = 0.0f64;
    for _ in 0..draws {
        let p = random_params(spec, &mut r);
        let x = rng::normal_vec(&mut r, spec.dim());
        let f = p.forward(spec, &x)?;
        let lin = p.expand(spec)?.predict(&x);
        worst = worst.max((f - lin).abs() / (1.0 + f.abs()));
    }
    Ok(worst)
}

/// Runs the invariant suite on every shape of `config` at its smallest `n`.
pub fn recheck(config: &SweepConfig) -> Result<RecheckReport> {
    config.validate()?;
    let mut report = RecheckReport::default();
    let n = *config.n.iter().min().expect("validated non-empty");
    for (g, spec) in config.specs()?.iter().enumerate() {
        let seed = crate::sweep::trial_seed(config.master_seed, g, 0);

        let gap = expansion_gap(spec, 200, seed)?;
        report.push(format!("{spec}: forward equals expanded inner product"), gap <= 1e-9, format!("worst gap {gap:.3e}"));

        let truth = sample_truth(spec, seed);
        let a = gen_dataset(spec, &truth, 2 * n, config.sigma, seed)?;
        let b = gen_dataset(spec, &truth, n, config.sigma, seed)?;
        let prefix = (0..n).all(|i| a.row(i) == b.row(i) && a.labels[i] == b.labels[i]);
        report.push(format!("{spec}: dataset prefix stability"), prefix, format!("rows 0..{n}"));

        let star = truth.expand(spec)?;
        let mut fits = vec![("dense", fit_fnn(&b)?)];
        if spec.kind() == ModelKind::Ca {
            fits.push(("pooled", fit_ca(&b, &FitOptions::default())?));
        }
        for (label, fit) in fits {
            let bi = check_basic_inequality(b.inputs.as_ref(), &b.noise, fit.expanded_hat.as_slice(), star.as_slice())?;
            report.push(
                format!("{spec}: basic inequality for {label} least squares"),
                bi.holds,
                format!("slack {:.3e}", bi.slack),
            );
        }

        if matches!(spec.kind(), ModelKind::Cw | ModelKind::Rnn) {
            let worst = gradient_check(spec, n.min(64), 5, seed)?;
            report.push(format!("{spec}: gradient matches central differences"), worst <= 1e-5, format!("worst relative error {worst:.3e}"));
        }

        let re1 = restricted_eigs(b.inputs.as_ref(), spec, 1.0, 50, seed)?;
        let re7 = restricted_eigs(b.inputs.as_ref(), spec, 7.0, 50, seed)?;
        report.push(
            format!("{spec}: restricted eigenvalue estimates are scale invariant"),
            re1 == re7 && re1.lambda_min_est <= re1.lambda_max_est,
            format!("[{:.4}, {:.4}]", re1.lambda_min_est, re1.lambda_max_est),
        );

        let d1 = dudley_bound(spec, n as f64, 1.0)?;
        let d4 = dudley_bound(spec, 4.0 * n as f64, 1.0)?;
        let t1 = theory_rate(spec, n as f64, 1.0)?;
        let t4 = theory_rate(spec, 4.0 * n as f64, 1.0)?;
        report.push(
            format!("{spec}: rates halve when n quadruples"),
            d1 == 2.0 * d4 && t1 == 2.0 * t4,
            format!("dudley {d1:.4e}, closed form {t1:.4e}"),
        );

        let sets: &[FreeSet] = if spec.kind() == ModelKind::Cw {
            &[FreeSet::Filter, FreeSet::Pooling]
        } else {
            &[FreeSet::Filter]
        };
        for &set in sets {
            let pos = free_positions(spec, set);
            let mut r = rng::seeded(seed);
            let u = rng::normal_vec(&mut r, pos.len());
            let theta = free_segment(&u, set, spec)?.expand(spec)?;
            let err = pos
                .iter()
                .zip(&u)
                .map(|(&i, v)| (theta.0[i] - v).abs())
                .fold(0.0, f64::max);
            let scale = u.iter().map(|v| v.abs()).fold(1.0, f64::max);
            report.push(format!("{spec}: free coordinates round-trip ({set:?})"), err <= 1e-8 * scale, format!("max error {err:.3e}"));
        }

        let cheap = SweepConfig {
            estimators: vec![crate::estimate::Estimator::Fnn],
            ..config.clone()
        };
        let first = run_cell(&cheap, spec, g, n, 0)?;
        let second = run_cell(&cheap, spec, g, n, 0)?;
        report.push(format!("{spec}: sweep cell is deterministic"), first == second, format!("n={n}"));
    }
    Ok(report)
}

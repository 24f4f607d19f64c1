//! Upper-bound machinery: empirical norm, probe-based restricted
//! eigenvalues, metric-entropy bounds and the rates they imply.
//!
//! All suppressed constants are 1 and logarithms are clamped below at 0, so
//! the numbers here are meant for slopes and ratios, not calibration.

use faer::MatRef;
use serde::{Deserialize, Serialize};

use crate::data::random_params;
use crate::error::{argument, check_len, Error, Result};
use crate::linalg::{mat_vec, norm2, sub};
use crate::model::{ModelKind, ModelSpec};
use crate::rng;

/// `√((1/n) Σ_i ⟨z^i, φ⟩²)`.
pub fn empirical_norm(z: MatRef<'_, f64>, phi: &[f64]) -> Result<f64> {
    check_len("direction", z.ncols(), phi.len())?;
    if z.nrows() == 0 {
        return Err(argument("empty design"));
    }
    let v = mat_vec(z, phi);
    Ok((v.iter().map(|x| x * x).sum::<f64>() / z.nrows() as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct REEstimate {
    /// Smallest `‖φ‖_X²` over the probes; an upper estimate of the true
    /// restricted minimum.
    pub lambda_min_est: f64,
    /// Largest `‖φ‖_X²` over the probes; a lower estimate of the true
    /// restricted maximum.
    pub lambda_max_est: f64,
    pub n_probe: usize,
    /// Probes that survived the degeneracy filter.
    pub n_used: usize,
    pub seed: u64,
}

const PROBE_STREAM: u64 = 0x7072_6f62;
const DEGENERATE_NORM: f64 = 1e-12;

/// Unit-norm difference direction for probe `index`, or `None` when the two
/// draws (nearly) coincide.
pub fn probe_direction(spec: &ModelSpec, seed: u64, index: usize) -> Result<Option<Vec<f64>>> {
    let mut r = rng::stream_rng(rng::derive_seed(seed, &[PROBE_STREAM]), index as u64);
    let p = random_params(spec, &mut r).expand(spec)?;
    let q = random_params(spec, &mut r).expand(spec)?;
    let phi = sub(p.as_slice(), q.as_slice());
    let nrm = norm2(&phi);
    if !(nrm >= DEGENERATE_NORM) || !nrm.is_finite() {
        return Ok(None);
    }
    Ok(Some(phi.into_iter().map(|v| v / nrm).collect()))
}

/// `‖φ‖_X²` for each probe direction, `None` for discarded probes.
pub fn probe_values(z: MatRef<'_, f64>, spec: &ModelSpec, n_probe: usize, seed: u64) -> Result<Vec<Option<f64>>> {
    check_len("design columns", spec.dim(), z.ncols())?;
    (0..n_probe)
        .map(|j| {
            probe_direction(spec, seed, j)?
                .map(|phi| empirical_norm(z, &phi).map(|v| v * v))
                .transpose()
        })
        .collect()
}

/// Extremes of `‖φ‖_X²` over `n_probe` random unit differences of expanded
/// parameters from the class of `spec`. The radius `rho` does not enter:
/// the restricted eigenvalues are scale invariant and probes are normalized.
pub fn restricted_eigs(z: MatRef<'_, f64>, spec: &ModelSpec, rho: f64, n_probe: usize, seed: u64) -> Result<REEstimate> {
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(argument(format!("radius rho={rho} must be positive")));
    }
    if n_probe == 0 {
        return Err(argument("n_probe must be at least 1"));
    }
    let vals: Vec<f64> = probe_values(z, spec, n_probe, seed)?.into_iter().flatten().collect();
    if vals.is_empty() {
        return Err(Error::DegenerateClass);
    }
    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().copied().fold(0.0, f64::max);
    Ok(REEstimate {
        lambda_min_est: lo,
        lambda_max_est: hi,
        n_probe,
        n_used: vals.len(),
        seed,
    })
}

/// Effective dimension of the weighted-pooling class, `min{d, m + (d/s)(m/s)}`.
fn cw_dimension(spec: &ModelSpec) -> f64 {
    let (d, m, s) = (spec.d() as f64, spec.m() as f64, spec.s() as f64);
    d.min(m + (d / s) * (m / s))
}

/// Log-covering number bound for the radius-`rho` class, without checking
/// the range of `eps`.
fn entropy(spec: &ModelSpec, eps: f64, rho: f64) -> f64 {
    let d = spec.d() as f64;
    let (dim, ratio) = match spec.kind() {
        ModelKind::Ca => (spec.m() as f64, rho * d / eps),
        ModelKind::Cw => (cw_dimension(spec), rho * d / eps),
        ModelKind::Rnn => {
            let l = spec.seq_len() as f64;
            ((d + l) * d.min(spec.r() as f64), rho * l * d / eps)
        }
        ModelKind::Fnn => {
            let big = spec.dim() as f64;
            (big, rho * big / eps)
        }
    };
    dim * ratio.ln().max(0.0)
}

/// Metric-entropy bound `log N(ε)` for the class of `spec` with radius `rho`.
pub fn covering_bound(spec: &ModelSpec, eps: f64, rho: f64) -> Result<f64> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(argument(format!("eps={eps} must lie in (0, 1]")));
    }
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(argument(format!("radius rho={rho} must be positive")));
    }
    Ok(entropy(spec, eps, rho))
}

/// Diameter of the unit class; the entropy integral stops here.
pub const UNIT_DIAMETER: f64 = 2.0;
const QUAD_TOL: f64 = 1e-6;

/// `∫₀^2 √(log N(ε)) dε` for the unit class, with the substitution
/// `ε = 2u²` to remove the endpoint singularity.
pub fn entropy_integral(spec: &ModelSpec) -> f64 {
    let f = |u: f64| {
        if u <= 0.0 {
            return 0.0;
        }
        let eps = UNIT_DIAMETER * u * u;
        2.0 * UNIT_DIAMETER * u * entropy(spec, eps, 1.0).max(0.0).sqrt()
    };
    adaptive_simpson(&f, 0.0, 1.0, QUAD_TOL)
}

/// Dudley-integral rate `(σ/√n) ∫₀^2 √(log N(ε)) dε`.
pub fn dudley_bound(spec: &ModelSpec, n: f64, sigma: f64) -> Result<f64> {
    if !(n >= 1.0) {
        return Err(argument(format!("sample size n={n} must be at least 1")));
    }
    Ok(sigma / n.sqrt() * entropy_integral(spec))
}

/// Closed-form rate with unit constant:
/// CA `√(σ²m log d/n)`, CW `√(σ² min{d, m+(d/s)(m/s)} log d/n)`,
/// RNN `√(σ²(d+L)min{r,d} log(Ld)/n)`, dense `√(σ²D log D/n)`.
pub fn theory_rate(spec: &ModelSpec, n: f64, sigma: f64) -> Result<f64> {
    if !(n >= 1.0) {
        return Err(argument(format!("sample size n={n} must be at least 1")));
    }
    let d = spec.d() as f64;
    let complexity = match spec.kind() {
        ModelKind::Ca => spec.m() as f64 * d.ln(),
        ModelKind::Cw => cw_dimension(spec) * d.ln(),
        ModelKind::Rnn => {
            let l = spec.seq_len() as f64;
            (d + l) * d.min(spec.r() as f64) * (l * d).ln()
        }
        ModelKind::Fnn => {
            let big = spec.dim() as f64;
            big * big.ln()
        }
    };
    Ok((sigma * sigma * complexity / n).sqrt())
}

fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &impl Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
            + recurse(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    recurse(f, a, b, fa, fm, fb, simpson(fa, fm, fb, a, b), tol, 50)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasicInequality {
    pub holds: bool,
    /// `rhs + 1e−8 − lhs`; non-negative exactly when the inequality holds.
    pub slack: f64,
    /// `‖θ̂ − θ*‖_X²`.
    pub lhs: f64,
    /// `(2/n) Σ ξ_i ⟨z^i, θ̂ − θ*⟩`.
    pub rhs: f64,
}

pub const BASIC_INEQUALITY_TOL: f64 = 1e-8;

/// Tests `‖θ̂−θ*‖_X² ≤ (2/n) Σ ξ_i ⟨z^i, θ̂−θ*⟩ + 1e−8` given the realized noise.
pub fn check_basic_inequality(
    z: MatRef<'_, f64>,
    noise: &[f64],
    theta_hat: &[f64],
    theta_star: &[f64],
) -> Result<BasicInequality> {
    check_len("noise", z.nrows(), noise.len())?;
    check_len("theta_hat", z.ncols(), theta_hat.len())?;
    check_len("theta_star", z.ncols(), theta_star.len())?;
    if z.nrows() == 0 {
        return Err(argument("empty design"));
    }
    let n = z.nrows() as f64;
    let delta = sub(theta_hat, theta_star);
    let zd = mat_vec(z, &delta);
    let lhs = zd.iter().map(|v| v * v).sum::<f64>() / n;
    let rhs = 2.0 / n * noise.iter().zip(&zd).map(|(x, v)| x * v).sum::<f64>();
    let slack = rhs + BASIC_INEQUALITY_TOL - lhs;
    Ok(BasicInequality {
        holds: slack >= 0.0,
        slack,
        lhs,
        rhs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use faer::Mat;

    fn gaussian(n: usize, d: usize, seed: u64) -> Mat<f64> {
        let mut r = rng::seeded(seed);
        let v = rng::normal_vec(&mut r, n * d);
        Mat::from_fn(n, d, |i, j| v[i * d + j])
    }

    #[test]
    fn empirical_norm_examples() {
        let z = Mat::<f64>::identity(4, 4);
        let phi = [1.0, -2.0, 2.0, 4.0];
        assert_eq!(empirical_norm(z.as_ref(), &[0.0; 4]).unwrap(), 0.0);
        let v = empirical_norm(z.as_ref(), &phi).unwrap();
        assert!((v - 5.0 / 2.0).abs() <= 1e-15);
        let g = gaussian(10, 4, 0);
        let a = empirical_norm(g.as_ref(), &phi).unwrap();
        let scaled: Vec<f64> = phi.iter().map(|x| -3.0 * x).collect();
        let b = empirical_norm(g.as_ref(), &scaled).unwrap();
        assert!((b - 3.0 * a).abs() <= 1e-12 * b);
        assert!(empirical_norm(g.as_ref(), &[1.0]).is_err());
    }

    #[test]
    fn restricted_eigs_isotropic_ca() {
        let spec = ModelSpec::ca(64, 8, 1).unwrap();
        let z = gaussian(4000, 64, 1);
        let est = restricted_eigs(z.as_ref(), &spec, 1.0, 500, 2).unwrap();
        assert!(est.lambda_min_est >= 0.5, "{est:?}");
        assert!(est.lambda_max_est <= 1.5, "{est:?}");
        let again = restricted_eigs(z.as_ref(), &spec, 7.0, 500, 2).unwrap();
        assert_eq!(est.lambda_min_est, again.lambda_min_est);
        assert_eq!(est.lambda_max_est, again.lambda_max_est);
    }

    #[test]
    fn rank_one_design() {
        let spec = ModelSpec::fnn(6, 1).unwrap();
        let row = [0.3, -1.0, 2.0, 0.5, 0.0, 1.5];
        let z = Mat::from_fn(50, 6, |_, j| row[j]);
        let est = restricted_eigs(z.as_ref(), &spec, 1.0, 200, 0).unwrap();
        assert!(est.lambda_min_est >= 0.0);
        assert!(est.lambda_min_est < 0.05 * est.lambda_max_est, "{est:?}");
    }

    #[test]
    fn more_probes_widen_the_range() {
        let spec = ModelSpec::cw(16, 4, 2).unwrap();
        let z = gaussian(60, 16, 3);
        let mut prev: Option<REEstimate> = None;
        for k in [1, 5, 20, 80] {
            let est = restricted_eigs(z.as_ref(), &spec, 1.0, k, 4).unwrap();
            if let Some(p) = prev {
                assert!(est.lambda_min_est <= p.lambda_min_est);
                assert!(est.lambda_max_est >= p.lambda_max_est);
            }
            prev = Some(est);
        }
    }

    #[test]
    fn covering_examples() {
        let ca = ModelSpec::ca(64, 8, 1).unwrap();
        assert_eq!(covering_bound(&ca, 1.0, 1.0).unwrap(), 8.0 * 64f64.ln());
        let rnn = ModelSpec::rnn(50, 2, 50).unwrap();
        let v = covering_bound(&rnn, 1.0, 1.0).unwrap();
        assert!((v - 100.0 * 2.0 * 2500f64.ln()).abs() <= 1e-9 * v);
        let cw = ModelSpec::cw(64, 8, 4).unwrap();
        assert_eq!(covering_bound(&cw, 1.0, 1.0).unwrap(), (8.0 + 16.0 * 2.0) * 64f64.ln());
        let cw1 = ModelSpec::cw(64, 8, 1).unwrap();
        assert_eq!(covering_bound(&cw1, 1.0, 1.0).unwrap(), 64.0 * 64f64.ln());
        assert!(covering_bound(&ca, 0.0, 1.0).is_err());
        assert!(covering_bound(&ca, 1.5, 1.0).is_err());
        assert!(covering_bound(&ca, 0.5, -1.0).is_err());
        // clamp: tiny radius makes the log negative
        assert_eq!(covering_bound(&ca, 1.0, 1e-3).unwrap(), 0.0);
    }

    #[test]
    fn dudley_scaling() {
        let spec = ModelSpec::ca(64, 8, 1).unwrap();
        let a = dudley_bound(&spec, 100.0, 1.0).unwrap();
        assert_eq!(dudley_bound(&spec, 400.0, 1.0).unwrap(), a / 2.0);
        let b = dudley_bound(&spec, 100.0, 3.0).unwrap();
        assert!((b - 3.0 * a).abs() <= 1e-12 * b);
        let big = ModelSpec::ca(64, 32, 1).unwrap();
        let ratio = dudley_bound(&big, 100.0, 1.0).unwrap() / a;
        assert!((1.8..=2.2).contains(&ratio), "{ratio}");
    }

    #[test]
    fn quadrature_matches_closed_form() {
        let spec = ModelSpec::fnn(2, 1).unwrap();
        // integrand √(2 log(2/ε)) on (0, 2]; substitute ε = 2e^{-t}:
        // ∫ √(2t)·2e^{-t} dt = 2√2·Γ(3/2) = √(2π)
        let v = entropy_integral(&spec);
        assert!((v - (2.0 * std::f64::consts::PI).sqrt()).abs() <= 1e-5, "{v}");
    }

    #[test]
    fn rate_examples() {
        let spec = ModelSpec::ca(64, 8, 1).unwrap();
        let n = 8.0 * 64f64.ln();
        assert!((theory_rate(&spec, n, 1.0).unwrap() - 1.0).abs() <= 1e-12);
        let a = theory_rate(&spec, 100.0, 1.0).unwrap();
        assert_eq!(theory_rate(&spec, 400.0, 1.0).unwrap(), a / 2.0);
        let r1 = ModelSpec::rnn(5, 5, 7).unwrap();
        let r2 = ModelSpec::rnn(5, 9, 7).unwrap();
        assert_eq!(theory_rate(&r1, 50.0, 1.0).unwrap(), theory_rate(&r2, 50.0, 1.0).unwrap());
        assert!(theory_rate(&spec, 0.5, 1.0).is_err());
    }

    #[test]
    fn basic_inequality_examples() {
        let z = gaussian(30, 5, 5);
        let noise: Vec<f64> = rng::normal_vec(&mut rng::seeded(6), 30);
        let theta = [1.0, 2.0, 3.0, 4.0, 5.0];
        let b = check_basic_inequality(z.as_ref(), &noise, &theta, &theta).unwrap();
        assert!(b.holds);
        assert_eq!(b.slack, 1e-8);
        // exact OLS
        let y: Vec<f64> = mat_vec(z.as_ref(), &theta).iter().zip(&noise).map(|(a, b)| a + b).collect();
        let hat = crate::linalg::ols(z.as_ref(), &y).unwrap();
        let b = check_basic_inequality(z.as_ref(), &noise, &hat, &theta).unwrap();
        assert!(b.holds, "{b:?}");
        assert!(check_basic_inequality(z.as_ref(), &noise[..3], &hat, &theta).is_err());
    }
}

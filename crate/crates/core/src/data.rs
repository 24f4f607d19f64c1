//! Seeded synthetic data: isotropic Gaussian inputs, Gaussian label noise.

use std::io::Write;

use faer::Mat;
use rand::Rng;

use crate::error::{argument, Result};
use crate::linalg::{norm2, Matrix};
use crate::model::{ModelKind, ModelSpec, Params};
use crate::rng::{self, RNG_ALGORITHM};

const TRUTH_STREAM: u64 = 0x7275_7468;
const DATA_STREAM: u64 = 0x6461_7461;

/// Target spectral radius of sampled recurrent transitions.
pub const TRUTH_SPECTRAL_RADIUS: f64 = 0.9;
const POWER_STEPS: usize = 100;

/// A labelled sample `y_i = F(x_i; truth) + ξ_i`.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub spec: ModelSpec,
    /// `n × D` design; row `i` is the regressor `z^i` (for sequences, the
    /// concatenation `x_1^i, …, x_L^i`).
    pub inputs: Mat<f64>,
    pub labels: Vec<f64>,
    /// Realized noise `ξ_i`.
    pub noise: Vec<f64>,
    pub sigma: f64,
    pub seed: u64,
    pub truth: Params,
    pub rng_algorithm: &'static str,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        (0..self.inputs.ncols()).map(|j| self.inputs[(i, j)]).collect()
    }

    /// Writes the inputs and labels as CSV. Non-sequence data uses one line
    /// per sample (`row,label,x_1,...`); sequence data one line per time step
    /// (`row,t,label,x_1,...`). Indices are 1-based.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let d = self.spec.d();
        let seq = self.spec.kind() == ModelKind::Rnn || self.spec.seq_len() > 1;
        let xs: Vec<String> = (1..=d).map(|j| format!("x_{j}")).collect();
        if seq {
            writeln!(out, "row,t,label,{}", xs.join(","))?;
        } else {
            writeln!(out, "row,label,{}", xs.join(","))?;
        }
        for i in 0..self.n() {
            let z = self.row(i);
            let label = fmt17(self.labels[i]);
            for (t, xt) in z.chunks_exact(d).enumerate() {
                let vals: Vec<String> = xt.iter().map(|&v| fmt17(v)).collect();
                if seq {
                    writeln!(out, "{},{},{},{}", i + 1, t + 1, label, vals.join(","))?;
                } else {
                    writeln!(out, "{},{},{}", i + 1, label, vals.join(","))?;
                }
            }
        }
        Ok(())
    }
}

/// Float formatted with 17 significant digits.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Geometric-mean growth rate of `‖Aᵏ v‖` over [`POWER_STEPS`] steps from the
/// normalized all-ones vector. Positively homogeneous in `A`.
pub fn spectral_radius_estimate(a: &Matrix) -> f64 {
    let r = a.rows();
    let mut v = vec![1.0 / (r as f64).sqrt(); r];
    let mut log_growth = 0.0;
    for _ in 0..POWER_STEPS {
        let next = a.mul_vec(&v);
        let nrm = norm2(&next);
        if nrm == 0.0 || !nrm.is_finite() {
            return if nrm == 0.0 { 0.0 } else { f64::INFINITY };
        }
        log_growth += nrm.ln();
        v = next.into_iter().map(|x| x / nrm).collect();
    }
    (log_growth / POWER_STEPS as f64).exp()
}

/// Random parameters drawn from `rng`: filter and pooling weights i.i.d.
/// N(0,1); recurrent `B` i.i.d. N(0,1) and `A` i.i.d. N(0,1/r) rescaled to
/// spectral-radius estimate [`TRUTH_SPECTRAL_RADIUS`].
pub fn random_params<R: Rng + ?Sized>(spec: &ModelSpec, rng: &mut R) -> Params {
    match spec.kind() {
        ModelKind::Ca => Params::Ca {
            w: rng::normal_vec(rng, spec.m()),
        },
        ModelKind::Cw => {
            let w = rng::normal_vec(rng, spec.m());
            let a = rng::normal_vec(rng, spec.r_conv());
            Params::Cw { w, a }
        }
        ModelKind::Rnn => {
            let r = spec.r();
            let a = random_transition(r, rng);
            let b = Matrix::from_row_major(r, spec.d(), rng::normal_vec(rng, r * spec.d()))
                .expect("shape");
            Params::Rnn { a, b }
        }
        ModelKind::Fnn => Params::Fnn {
            theta: rng::normal_vec(rng, spec.dim()),
        },
    }
}

pub(crate) fn random_transition<R: Rng + ?Sized>(r: usize, rng: &mut R) -> Matrix {
    let sd = 1.0 / (r as f64).sqrt();
    let raw: Vec<f64> = rng::normal_vec(rng, r * r).into_iter().map(|v| v * sd).collect();
    let a = Matrix::from_row_major(r, r, raw).expect("shape");
    let rho = spectral_radius_estimate(&a);
    if rho > 0.0 && rho.is_finite() {
        a.scale(TRUTH_SPECTRAL_RADIUS / rho)
    } else {
        a
    }
}

/// Ground-truth parameters for `spec`, deterministic in `seed`.
pub fn sample_truth(spec: &ModelSpec, seed: u64) -> Params {
    let mut r = rng::seeded(rng::derive_seed(seed, &[TRUTH_STREAM]));
    random_params(spec, &mut r)
}

/// Draws `n` samples with inputs i.i.d. N(0, I) and labels
/// `F(x; truth) + N(0, σ²)`. Row `i` comes from its own stream of `seed`, so
/// the first `k` rows do not depend on `n`.
pub fn gen_dataset(spec: &ModelSpec, truth: &Params, n: usize, sigma: f64, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(argument("dataset size n must be at least 1"));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(argument(format!("noise level sigma={sigma} must be finite and >= 0")));
    }
    truth.validate(spec)?;
    let dim = spec.dim();
    let theta = truth.expand(spec)?;
    let base = rng::derive_seed(seed, &[DATA_STREAM]);
    let mut inputs = Mat::<f64>::zeros(n, dim);
    let mut labels = Vec::with_capacity(n);
    let mut noise = Vec::with_capacity(n);
    for i in 0..n {
        let mut r = rng::stream_rng(base, i as u64);
        let z = rng::normal_vec(&mut r, dim);
        let xi = sigma * rng::normal(&mut r);
        // the network itself, not the expansion, produces the label
        let clean = match spec.kind() {
            ModelKind::Fnn => theta.predict(&z),
            _ => truth.forward(spec, &z)?,
        };
        for (j, v) in z.iter().enumerate() {
            inputs[(i, j)] = *v;
        }
        labels.push(clean + xi);
        noise.push(xi);
    }
    Ok(Dataset {
        spec: *spec,
        inputs,
        labels,
        noise,
        sigma,
        seed,
        truth: truth.clone(),
        rng_algorithm: RNG_ALGORITHM,
    })
}

//! Packing constructions for minimax lower bounds: greedy constant-distance
//! binary codes, embeddings of free coordinates into each model class, and
//! the Fano-type bound they feed.

use faer::Mat;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{argument, check_len, Error, Result};
use crate::linalg::{norm2, sub, LeastSquares, Matrix};
use crate::model::{ExpandedParam, ModelKind, ModelSpec, Params};
use crate::rng;

/// Smallest code dimension accepted.
pub const MIN_CODE_DIM: usize = 8;

/// Default `c` in the perturbation schedule `eps_scale = c·σ·√(|I|/n)`,
/// `2^-5.25`: the best point of a quarter-octave grid over `[2^-6, 1]` at
/// `|I| = 64`, `n = 1024` with the default code budget.
pub const PACKING_SCALE: f64 = 0.026_278_012_976_678_578;

/// Limits on the greedy code search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeBudget {
    pub max_words: usize,
    /// The search stops after `stall_factor · dim` consecutive rejections.
    pub stall_factor: usize,
}

impl Default for CodeBudget {
    fn default() -> Self {
        Self {
            max_words: 1 << 12,
            stall_factor: 200,
        }
    }
}

/// Binary words of length `dim` stored as bitsets, pairwise at Hamming
/// distance at least `ceil(dim/4)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryCode {
    dim: usize,
    words: Vec<Vec<u64>>,
    min_pairwise_hamming: usize,
}

impl BinaryCode {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn log2_size(&self) -> f64 {
        (self.words.len() as f64).log2()
    }

    /// Exact minimum over all pairs; `dim` for a single word.
    pub fn min_pairwise_hamming(&self) -> usize {
        self.min_pairwise_hamming
    }

    pub fn word(&self, j: usize) -> Vec<bool> {
        let w = &self.words[j];
        (0..self.dim).map(|i| (w[i / 64] >> (i % 64)) & 1 == 1).collect()
    }

    pub fn weight(&self, j: usize) -> usize {
        self.words[j].iter().map(|b| b.count_ones() as usize).sum()
    }

    pub fn hamming(&self, i: usize, j: usize) -> usize {
        hamming(&self.words[i], &self.words[j])
    }
}

fn hamming(a: &[u64], b: &[u64]) -> usize {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones() as usize).sum()
}

/// Required pairwise distance `ceil(dim/4)`.
pub fn code_distance(dim: usize) -> usize {
    dim.div_ceil(4)
}

pub fn constant_weight_code(dim: usize, seed: u64) -> Result<BinaryCode> {
    constant_weight_code_with(dim, seed, CodeBudget::default())
}

/// Greedy Gilbert–Varshamov construction. The all-zeros word is accepted
/// first; uniformly random candidates are then kept when they are at
/// distance at least `ceil(dim/4)` from every kept word.
pub fn constant_weight_code_with(dim: usize, seed: u64, budget: CodeBudget) -> Result<BinaryCode> {
    if dim < MIN_CODE_DIM {
        return Err(argument(format!("code dimension {dim} is below {MIN_CODE_DIM}")));
    }
    if budget.max_words == 0 {
        return Err(argument("code budget must allow at least one word"));
    }
    let limbs = dim.div_ceil(64);
    let tail = dim % 64;
    let tail_mask = if tail == 0 { u64::MAX } else { (1u64 << tail) - 1 };
    let need = code_distance(dim);
    let mut r = rng::seeded(rng::derive_seed(seed, &[0x6776]));
    let mut words = vec![vec![0u64; limbs]];
    let stall_limit = budget.stall_factor.saturating_mul(dim).max(1);
    let mut streak = 0;
    while words.len() < budget.max_words && streak < stall_limit {
        let mut cand: Vec<u64> = (0..limbs).map(|_| r.next_u64()).collect();
        cand[limbs - 1] &= tail_mask;
        if words.iter().all(|w| hamming(w, &cand) >= need) {
            words.push(cand);
            streak = 0;
        } else {
            streak += 1;
        }
    }
    let mut min_d = dim;
    for i in 0..words.len() {
        for j in 0..i {
            min_d = min_d.min(hamming(&words[i], &words[j]));
        }
    }
    Ok(BinaryCode {
        dim,
        words,
        min_pairwise_hamming: min_d,
    })
}

fn require(spec: &ModelSpec, kind: ModelKind) -> Result<()> {
    if spec.kind() != kind {
        return Err(argument(format!("{kind} construction on a {} spec", spec.kind())));
    }
    Ok(())
}

/// A filter whose average-pooling expansion starts with `u` (length `m`).
/// With `θ` split into stride blocks, block `j` of the first `m` entries is
/// the sum of filter blocks `j−R+1 … j` (`R` filter positions), which is
/// inverted by forward substitution.
pub fn free_segment_ca(u: &[f64], spec: &ModelSpec) -> Result<Vec<f64>> {
    require(spec, ModelKind::Ca)?;
    check_len("free coordinates u", spec.m(), u.len())?;
    let (s, blocks, positions) = (spec.s(), spec.m() / spec.s(), spec.r_conv());
    let mut w = u.to_vec();
    for j in 1..blocks {
        for k in j.saturating_sub(positions - 1)..j {
            for t in 0..s {
                w[j * s + t] -= w[k * s + t];
            }
        }
    }
    Ok(w)
}

/// Free coordinates of the weighted-pooling class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FreeSet {
    /// The first `m` entries (filter free, pooling on the first position).
    #[default]
    Filter,
    /// Entries `1, 1+s, …` at each filter position (pooling free, filter `e₁`).
    Pooling,
}

/// Positions (0-based) of the free coordinates in the expanded parameter.
pub fn free_positions(spec: &ModelSpec, set: FreeSet) -> Vec<usize> {
    match spec.kind() {
        ModelKind::Ca => (0..spec.m()).collect(),
        ModelKind::Cw => match set {
            FreeSet::Filter => (0..spec.m()).collect(),
            FreeSet::Pooling => (0..spec.r_conv()).map(|l| l * spec.s()).collect(),
        },
        ModelKind::Rnn => {
            let rp = spec.r().min(spec.seq_len());
            (spec.dim() - rp * spec.d()..spec.dim()).collect()
        }
        ModelKind::Fnn => (0..spec.dim()).collect(),
    }
}

/// `(w, a)` whose expansion restricted to the chosen free set equals `u`.
pub fn free_segment_cw(u: &[f64], set: FreeSet, spec: &ModelSpec) -> Result<(Vec<f64>, Vec<f64>)> {
    require(spec, ModelKind::Cw)?;
    let (m, rc) = (spec.m(), spec.r_conv());
    match set {
        FreeSet::Filter => {
            check_len("free coordinates u", m, u.len())?;
            let mut a = vec![0.0; rc];
            a[0] = 1.0;
            Ok((u.to_vec(), a))
        }
        FreeSet::Pooling => {
            check_len("free coordinates u", rc, u.len())?;
            let mut w = vec![0.0; m];
            w[0] = 1.0;
            Ok((w, u.to_vec()))
        }
    }
}

/// `(A, B)` with `A = diag(1/r, 2/r, …, 1)` whose expansion ends with `u`
/// (length `r′d`, `r′ = min{r, L}`). Each column of `B` is the minimum-norm
/// solution of the `r′ × r` Vandermonde system `Σ_i a_iᵖ b_ij = θ_j` over
/// the segment that carries power `p`.
pub fn free_segment_rnn(u: &[f64], spec: &ModelSpec) -> Result<(Matrix, Matrix)> {
    require(spec, ModelKind::Rnn)?;
    let (r, d) = (spec.r(), spec.d());
    let rp = r.min(spec.seq_len());
    check_len("free coordinates u", rp * d, u.len())?;
    let nodes: Vec<f64> = (1..=r).map(|i| i as f64 / r as f64).collect();
    let vander = Mat::from_fn(rp, r, |p, i| nodes[i].powi(p as i32));
    let solver = if rp < r {
        let solver = LeastSquares::new(vander.as_ref())?;
        if solver.rank() < rp {
            return Err(Error::Internal("Vandermonde system lost full row rank".into()));
        }
        Some(solver)
    } else {
        None
    };
    let mut b = Matrix::zeros(r, d);
    for j in 0..d {
        // the last segment has power 0, the one before power 1, …
        let rhs: Vec<f64> = (0..rp).map(|p| u[(rp - 1 - p) * d + j]).collect();
        let col = match &solver {
            Some(ls) => ls.solve(&rhs)?,
            None => solve_vandermonde(&nodes, rhs),
        };
        for (i, v) in col.into_iter().enumerate() {
            b.set(i, j, v);
        }
    }
    Ok((Matrix::diag(&nodes), b))
}

/// Björck–Pereyra solve of the square system `Σ_i x_iᵖ z_i = b_p`,
/// `p = 0 … k−1`, for distinct nodes.
fn solve_vandermonde(x: &[f64], mut b: Vec<f64>) -> Vec<f64> {
    let n = x.len();
    for k in 0..n.saturating_sub(1) {
        for i in (k + 1..n).rev() {
            b[i] -= x[k] * b[i - 1];
        }
    }
    for k in (0..n.saturating_sub(1)).rev() {
        for i in k + 1..n {
            b[i] /= x[i] - x[i - k - 1];
        }
        for i in k..n - 1 {
            b[i] -= b[i + 1];
        }
    }
    b
}

/// Parameters of `spec`'s class whose expansion equals `u` on
/// [`free_positions`].
pub fn free_segment(u: &[f64], set: FreeSet, spec: &ModelSpec) -> Result<Params> {
    Ok(match spec.kind() {
        ModelKind::Ca => Params::Ca {
            w: free_segment_ca(u, spec)?,
        },
        ModelKind::Cw => {
            let (w, a) = free_segment_cw(u, set, spec)?;
            Params::Cw { w, a }
        }
        ModelKind::Rnn => {
            let (a, b) = free_segment_rnn(u, spec)?;
            Params::Rnn { a, b }
        }
        ModelKind::Fnn => {
            check_len("free coordinates u", spec.dim(), u.len())?;
            Params::Fnn { theta: u.to_vec() }
        }
    })
}

/// A finite family `θ_0, …, θ_M` in the class of `spec`, built from a code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackingSet {
    pub spec: ModelSpec,
    pub free_set: FreeSet,
    /// Size of the free index set.
    pub free_dim: usize,
    /// `θ_0` is the embedding of the all-zeros word.
    pub thetas: Vec<ExpandedParam>,
    /// `min_{j≥1} ‖θ_j − θ_0‖₂ / 2`.
    pub rho_min: f64,
    /// `√((1/M) Σ_{j≥1} ‖θ_j − θ_0‖₂²)`.
    pub rho_avg: f64,
    pub eps_scale: f64,
    pub code_min_distance: usize,
}

impl PackingSet {
    /// Number of alternatives `M`.
    pub fn m(&self) -> usize {
        self.thetas.len().saturating_sub(1)
    }
}

pub fn build_packing(spec: &ModelSpec, set: FreeSet, eps_scale: f64, seed: u64) -> Result<PackingSet> {
    build_packing_with(spec, set, eps_scale, seed, CodeBudget::default())
}

/// Embeds every word `h` of a greedy code over the free set as
/// `θ = expand(free_segment(eps_scale · h))`.
pub fn build_packing_with(
    spec: &ModelSpec,
    set: FreeSet,
    eps_scale: f64,
    seed: u64,
    budget: CodeBudget,
) -> Result<PackingSet> {
    if !(eps_scale > 0.0 && eps_scale.is_finite()) {
        return Err(argument(format!("eps_scale={eps_scale} must be positive")));
    }
    let free_dim = free_positions(spec, set).len();
    if free_dim < MIN_CODE_DIM {
        return Err(argument(format!(
            "free index set of {spec} has {free_dim} coordinates, fewer than {MIN_CODE_DIM}"
        )));
    }
    let code = constant_weight_code_with(free_dim, seed, budget)?;
    let thetas = (0..code.len())
        .map(|j| {
            let u: Vec<f64> = code
                .word(j)
                .into_iter()
                .map(|b| if b { eps_scale } else { 0.0 })
                .collect();
            free_segment(&u, set, spec)?.expand(spec)
        })
        .collect::<Result<Vec<_>>>()?;
    let dists: Vec<f64> = thetas[1..]
        .iter()
        .map(|t| norm2(&sub(t.as_slice(), thetas[0].as_slice())))
        .collect();
    let m = dists.len();
    let rho_min = dists.iter().copied().fold(f64::INFINITY, f64::min) / 2.0;
    let rho_avg = if m == 0 {
        0.0
    } else {
        (dists.iter().map(|v| v * v).sum::<f64>() / m as f64).sqrt()
    };
    Ok(PackingSet {
        spec: *spec,
        free_set: set,
        free_dim,
        thetas,
        rho_min: if m == 0 { 0.0 } else { rho_min },
        rho_avg,
        eps_scale,
        code_min_distance: code.min_pairwise_hamming(),
    })
}

/// `ρ_min · √M/(1+√M) · (1 − nρ_avg²/(σ² log M) − 2√(nρ_avg²/(2σ² log² M)))`,
/// clamped at 0.
pub fn fano_bound(rho_min: f64, rho_avg: f64, m: usize, n: f64, sigma: f64) -> Result<f64> {
    if m < 2 {
        return Err(argument(format!("Fano bound needs at least 2 alternatives, got {m}")));
    }
    if !(sigma > 0.0) {
        return Err(argument(format!("noise level sigma={sigma} must be positive")));
    }
    if !(n > 0.0) {
        return Err(argument(format!("sample size n={n} must be positive")));
    }
    let log_m = (m as f64).ln();
    let kl = n * rho_avg * rho_avg / (sigma * sigma);
    let factor = 1.0 - kl / log_m - 2.0 * (kl / (2.0 * log_m * log_m)).sqrt();
    let root = (m as f64).sqrt();
    Ok(rho_min * root / (1.0 + root) * factor.max(0.0))
}

pub fn fano_lower_bound(packing: &PackingSet, n: f64, sigma: f64) -> Result<f64> {
    fano_bound(packing.rho_min, packing.rho_avg, packing.m(), n, sigma)
}

/// KL divergence `n‖θ_j − θ_0‖₂²/(2σ²)` between the label distributions
/// induced by two regressors under isotropic Gaussian design.
pub fn kl_gaussian_pair(theta_j: &ExpandedParam, theta_0: &ExpandedParam, n: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(argument(format!("noise level sigma={sigma} must be positive")));
    }
    let dist = theta_j.distance(theta_0)?;
    Ok(n * dist * dist / (2.0 * sigma * sigma))
}

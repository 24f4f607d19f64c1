//! The three structured networks (convolution + average pooling, convolution +
//! weighted pooling, linear RNN), the dense baseline, and their reduction to
//! linear regressors `F(x) = ⟨z, θ⟩`.
//!
//! Inputs are flat slices of length [`ModelSpec::dim`]. For the recurrent model
//! the slice holds the sequence `x_1, …, x_L` back to back (row `t` of an
//! `L × d` matrix), which is exactly the regressor `z`.
//!
//! Positions in the documentation are 1-based: the segment with index `ℓ`
//! (0-based, `0 ≤ ℓ < r_conv`) covers entries `ℓs+1 … ℓs+m`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{argument, check_len, Error, Result};
use crate::linalg::{axpy, dot, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Convolutional filter followed by (unweighted) average pooling.
    Ca,
    /// Convolutional filter followed by a learned weighted pooling layer.
    Cw,
    /// Linear recurrent network pooled over its final state.
    Rnn,
    /// Fully connected linear predictor on the flattened input.
    Fnn,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Ca => "ca",
            ModelKind::Cw => "cw",
            ModelKind::Rnn => "rnn",
            ModelKind::Fnn => "fnn",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ca" => Ok(ModelKind::Ca),
            "cw" => Ok(ModelKind::Cw),
            "rnn" => Ok(ModelKind::Rnn),
            "fnn" => Ok(ModelKind::Fnn),
            other => Err(argument(format!("unknown model kind `{other}`"))),
        }
    }
}

/// Shape of one model instance.
///
/// Fields that do not apply to a kind are stored as 0 (`m`, `s`, `r`) or 1
/// (`l`, the sequence length) so that every spec has a well-defined input
/// dimension `D = l·d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawSpec", into = "RawSpec")]
pub struct ModelSpec {
    kind: ModelKind,
    d: usize,
    m: usize,
    s: usize,
    r: usize,
    l: usize,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    kind: ModelKind,
    d: usize,
    #[serde(default)]
    m: usize,
    #[serde(default)]
    s: usize,
    #[serde(default)]
    r: usize,
    #[serde(rename = "L", default = "one")]
    l: usize,
}

fn one() -> usize {
    1
}

impl TryFrom<RawSpec> for ModelSpec {
    type Error = Error;

    fn try_from(raw: RawSpec) -> Result<Self> {
        match raw.kind {
            ModelKind::Ca => ModelSpec::ca(raw.d, raw.m, raw.s),
            ModelKind::Cw => ModelSpec::cw(raw.d, raw.m, raw.s),
            ModelKind::Rnn => ModelSpec::rnn(raw.d, raw.r, raw.l),
            ModelKind::Fnn => ModelSpec::fnn(raw.d, raw.l),
        }
    }
}

impl From<ModelSpec> for RawSpec {
    fn from(s: ModelSpec) -> Self {
        RawSpec {
            kind: s.kind,
            d: s.d,
            m: s.m,
            s: s.s,
            r: s.r,
            l: s.l,
        }
    }
}

impl ModelSpec {
    pub fn ca(d: usize, m: usize, s: usize) -> Result<Self> {
        Self::conv(ModelKind::Ca, d, m, s)
    }

    pub fn cw(d: usize, m: usize, s: usize) -> Result<Self> {
        Self::conv(ModelKind::Cw, d, m, s)
    }

    fn conv(kind: ModelKind, d: usize, m: usize, s: usize) -> Result<Self> {
        if m == 0 || m > d {
            return Err(argument(format!("filter size m={m} must satisfy 1 <= m <= d={d}")));
        }
        if s == 0 {
            return Err(argument("stride must be at least 1"));
        }
        if !d.is_multiple_of(s) || !m.is_multiple_of(s) {
            return Err(argument(format!(
                "stride s={s} must divide both d={d} and m={m}"
            )));
        }
        Ok(Self {
            kind,
            d,
            m,
            s,
            r: 0,
            l: 1,
        })
    }

    pub fn rnn(d: usize, r: usize, l: usize) -> Result<Self> {
        if d == 0 || r == 0 || l == 0 {
            return Err(argument(format!(
                "recurrent spec needs d, r, L >= 1 (got d={d}, r={r}, L={l})"
            )));
        }
        Ok(Self {
            kind: ModelKind::Rnn,
            d,
            m: 0,
            s: 0,
            r,
            l,
        })
    }

    /// Dense linear model on `l` stacked `d`-dimensional inputs.
    pub fn fnn(d: usize, l: usize) -> Result<Self> {
        if d == 0 || l == 0 {
            return Err(argument("dense spec needs d, L >= 1"));
        }
        Ok(Self {
            kind: ModelKind::Fnn,
            d,
            m: 0,
            s: 0,
            r: 0,
            l,
        })
    }

    /// The dense model over the same regressor `z`.
    pub fn fnn_counterpart(&self) -> Self {
        Self {
            kind: ModelKind::Fnn,
            d: self.d,
            m: 0,
            s: 0,
            r: 0,
            l: self.l,
        }
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }
    pub fn d(&self) -> usize {
        self.d
    }
    pub fn m(&self) -> usize {
        self.m
    }
    pub fn s(&self) -> usize {
        self.s
    }
    pub fn r(&self) -> usize {
        self.r
    }
    /// Sequence length `L` (1 for non-recurrent kinds).
    pub fn seq_len(&self) -> usize {
        self.l
    }

    /// Number of filter positions, `(d − m)/s + 1`. Zero for non-convolutional kinds.
    pub fn r_conv(&self) -> usize {
        match self.kind {
            ModelKind::Ca | ModelKind::Cw => (self.d - self.m) / self.s + 1,
            _ => 0,
        }
    }

    /// Dimension `D` of the regressor `z` and of the expanded parameter.
    pub fn dim(&self) -> usize {
        self.l * self.d
    }

    /// Number of raw network weights.
    pub fn param_count(&self) -> usize {
        match self.kind {
            ModelKind::Ca => self.m,
            ModelKind::Cw => self.m + self.r_conv(),
            ModelKind::Rnn => self.r * self.r + self.r * self.d,
            ModelKind::Fnn => self.dim(),
        }
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            ModelKind::Ca | ModelKind::Cw => {
                write!(f, "{}(d={}, m={}, s={})", self.kind, self.d, self.m, self.s)
            }
            ModelKind::Rnn => write!(f, "rnn(d={}, r={}, L={})", self.d, self.r, self.l),
            ModelKind::Fnn => write!(f, "fnn(d={}, L={})", self.d, self.l),
        }
    }
}

/// Network weights for one of the model kinds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Params {
    Ca { w: Vec<f64> },
    Cw { w: Vec<f64>, a: Vec<f64> },
    Rnn { a: Matrix, b: Matrix },
    Fnn { theta: Vec<f64> },
}

impl Params {
    pub fn kind(&self) -> ModelKind {
        match self {
            Params::Ca { .. } => ModelKind::Ca,
            Params::Cw { .. } => ModelKind::Cw,
            Params::Rnn { .. } => ModelKind::Rnn,
            Params::Fnn { .. } => ModelKind::Fnn,
        }
    }

    /// Checks kind, shapes and finiteness against `spec`.
    pub fn validate(&self, spec: &ModelSpec) -> Result<()> {
        if self.kind() != spec.kind() {
            return Err(argument(format!(
                "parameters of kind {} do not match spec {spec}",
                self.kind()
            )));
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        let ok = match self {
            Params::Ca { w } => {
                check_len("filter w", spec.m(), w.len())?;
                finite(w)
            }
            Params::Cw { w, a } => {
                check_len("filter w", spec.m(), w.len())?;
                check_len("pooling weights a", spec.r_conv(), a.len())?;
                finite(w) && finite(a)
            }
            Params::Rnn { a, b } => {
                check_len("transition rows", spec.r(), a.rows())?;
                check_len("transition cols", spec.r(), a.cols())?;
                check_len("input map rows", spec.r(), b.rows())?;
                check_len("input map cols", spec.d(), b.cols())?;
                a.is_finite() && b.is_finite()
            }
            Params::Fnn { theta } => {
                check_len("dense theta", spec.dim(), theta.len())?;
                finite(theta)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(argument("parameters contain non-finite entries"))
        }
    }

    /// Network output on one input.
    pub fn forward(&self, spec: &ModelSpec, x: &[f64]) -> Result<f64> {
        match self {
            Params::Ca { w } => forward_ca(x, w, spec),
            Params::Cw { w, a } => forward_cw(x, w, a, spec),
            Params::Rnn { a, b } => forward_rnn(x, a, b, spec),
            Params::Fnn { theta } => {
                check_len("input", spec.dim(), x.len())?;
                check_len("dense theta", spec.dim(), theta.len())?;
                Ok(dot(x, theta))
            }
        }
    }

    /// The equivalent dense regressor θ.
    pub fn expand(&self, spec: &ModelSpec) -> Result<ExpandedParam> {
        match self {
            Params::Ca { w } => expand_ca(w, spec),
            Params::Cw { w, a } => expand_cw(w, a, spec),
            Params::Rnn { a, b } => expand_rnn(a, b, spec),
            Params::Fnn { theta } => {
                check_len("dense theta", spec.dim(), theta.len())?;
                Ok(ExpandedParam(theta.clone()))
            }
        }
    }
}

/// Dense regressor θ ∈ R^D with `F(x) = ⟨z, θ⟩`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ExpandedParam(pub Vec<f64>);

impl ExpandedParam {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn predict(&self, z: &[f64]) -> f64 {
        dot(z, &self.0)
    }

    pub fn distance(&self, other: &ExpandedParam) -> Result<f64> {
        check_len("expanded parameter", self.len(), other.len())?;
        Ok(self
            .0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }
}

fn require_conv(spec: &ModelSpec) -> Result<()> {
    match spec.kind() {
        ModelKind::Ca | ModelKind::Cw => Ok(()),
        k => Err(argument(format!("convolutional operation on a {k} spec"))),
    }
}

/// The `m`-dimensional window of `x` at filter position `ell`:
/// entries `ell·s+1 … ell·s+m` (1-based).
pub fn segment<'x>(x: &'x [f64], ell: usize, spec: &ModelSpec) -> Result<&'x [f64]> {
    require_conv(spec)?;
    check_len("input", spec.d(), x.len())?;
    if ell >= spec.r_conv() {
        return Err(Error::Index {
            index: ell,
            bound: spec.r_conv(),
        });
    }
    let start = ell * spec.s();
    Ok(&x[start..start + spec.m()])
}

/// Sum over filter positions of `⟨w, segment(x, ℓ)⟩`.
pub fn forward_ca(x: &[f64], w: &[f64], spec: &ModelSpec) -> Result<f64> {
    require_conv(spec)?;
    check_len("input", spec.d(), x.len())?;
    check_len("filter w", spec.m(), w.len())?;
    let (m, s) = (spec.m(), spec.s());
    Ok((0..spec.r_conv())
        .map(|ell| dot(w, &x[ell * s..ell * s + m]))
        .sum())
}

/// Weighted pooling: `Σ_ℓ a_ℓ ⟨w, segment(x, ℓ)⟩`.
pub fn forward_cw(x: &[f64], w: &[f64], a: &[f64], spec: &ModelSpec) -> Result<f64> {
    require_conv(spec)?;
    check_len("input", spec.d(), x.len())?;
    check_len("filter w", spec.m(), w.len())?;
    check_len("pooling weights a", spec.r_conv(), a.len())?;
    let (m, s) = (spec.m(), spec.s());
    Ok(a.iter()
        .enumerate()
        .map(|(ell, &al)| al * dot(w, &x[ell * s..ell * s + m]))
        .sum())
}

fn check_rnn_shapes(a: &Matrix, b: &Matrix, spec: &ModelSpec) -> Result<()> {
    if spec.kind() != ModelKind::Rnn {
        return Err(argument(format!("recurrent operation on a {} spec", spec.kind())));
    }
    check_len("transition rows", spec.r(), a.rows())?;
    check_len("transition cols", spec.r(), a.cols())?;
    check_len("input map rows", spec.r(), b.rows())?;
    check_len("input map cols", spec.d(), b.cols())
}

/// Runs `h_t = A h_{t−1} + B x_t` from `h_0 = 0` and returns `1ᵀ h_L`.
pub fn forward_rnn(x: &[f64], a: &Matrix, b: &Matrix, spec: &ModelSpec) -> Result<f64> {
    check_rnn_shapes(a, b, spec)?;
    check_len("input sequence", spec.dim(), x.len())?;
    let d = spec.d();
    let mut h = vec![0.0; spec.r()];
    for xt in x.chunks_exact(d) {
        let mut next = a.mul_vec(&h);
        for (i, hi) in next.iter_mut().enumerate() {
            *hi += dot(b.row(i), xt);
        }
        h = next;
    }
    Ok(h.iter().sum())
}

/// θ = Σ_ℓ S^ℓ(w), where `S^ℓ` embeds `w` after `ℓs` zeros.
pub fn expand_ca(w: &[f64], spec: &ModelSpec) -> Result<ExpandedParam> {
    require_conv(spec)?;
    check_len("filter w", spec.m(), w.len())?;
    let ones = vec![1.0; spec.r_conv()];
    expand_cw(w, &ones, spec)
}

/// θ = Σ_ℓ a_ℓ S^ℓ(w).
pub fn expand_cw(w: &[f64], a: &[f64], spec: &ModelSpec) -> Result<ExpandedParam> {
    require_conv(spec)?;
    check_len("filter w", spec.m(), w.len())?;
    check_len("pooling weights a", spec.r_conv(), a.len())?;
    let (m, s) = (spec.m(), spec.s());
    let mut theta = vec![0.0; spec.d()];
    for (ell, &al) in a.iter().enumerate() {
        axpy(al, w, &mut theta[ell * s..ell * s + m]);
    }
    Ok(ExpandedParam(theta))
}

/// θ = (1ᵀA^{L−1}B, 1ᵀA^{L−2}B, …, 1ᵀB), built from the row vectors
/// `vₖᵀ = 1ᵀAᵏ` by repeated vector–matrix products.
pub fn expand_rnn(a: &Matrix, b: &Matrix, spec: &ModelSpec) -> Result<ExpandedParam> {
    check_rnn_shapes(a, b, spec)?;
    let (d, l) = (spec.d(), spec.seq_len());
    let mut theta = vec![0.0; l * d];
    let mut v = vec![1.0; spec.r()];
    for k in 0..l {
        let seg = l - 1 - k;
        theta[seg * d..(seg + 1) * d].copy_from_slice(&b.tmul_vec(&v));
        if k + 1 < l {
            v = a.tmul_vec(&v);
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Overflow(format!(
                "1ᵀA^{} is not finite",
                k + 1
            )));
        }
    }
    if theta.iter().any(|x| !x.is_finite()) {
        return Err(Error::Overflow("expanded recurrent parameter is not finite".into()));
    }
    Ok(ExpandedParam(theta))
}

/// The pooled filter features `φ(x) = Σ_ℓ segment(x, ℓ)`, so that
/// `forward_ca(x, w) = ⟨w, φ(x)⟩`.
pub fn pooled_segments(x: &[f64], spec: &ModelSpec) -> Result<Vec<f64>> {
    weighted_segments(x, &vec![1.0; spec.r_conv()], spec)
}

/// `Σ_ℓ a_ℓ segment(x, ℓ)`, so that `forward_cw(x, w, a) = ⟨w, ·⟩`.
pub fn weighted_segments(x: &[f64], a: &[f64], spec: &ModelSpec) -> Result<Vec<f64>> {
    require_conv(spec)?;
    check_len("input", spec.d(), x.len())?;
    check_len("pooling weights a", spec.r_conv(), a.len())?;
    let (m, s) = (spec.m(), spec.s());
    let mut out = vec![0.0; m];
    for (ell, &al) in a.iter().enumerate() {
        axpy(al, &x[ell * s..ell * s + m], &mut out);
    }
    Ok(out)
}

/// Per-position filter responses `⟨w, segment(x, ℓ)⟩`, so that
/// `forward_cw(x, w, a) = ⟨a, ·⟩`.
pub fn filter_responses(x: &[f64], w: &[f64], spec: &ModelSpec) -> Result<Vec<f64>> {
    require_conv(spec)?;
    check_len("input", spec.d(), x.len())?;
    check_len("filter w", spec.m(), w.len())?;
    let (m, s) = (spec.m(), spec.s());
    Ok((0..spec.r_conv())
        .map(|ell| dot(w, &x[ell * s..ell * s + m]))
        .collect())
}

//! SPD-manifold numerics.
//!
//! A feature vector `a` is lifted to `A = a a^T + lambda I`. With `lambda = 1`
//! the log-Euclidean distance between two lifted matrices has a closed form in
//! terms of norms and one dot product; [`sled_squared`] evaluates it in O(n),
//! while [`led_squared`] goes through two symmetric eigendecompositions and
//! serves as the reference.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Cross term of the closed form is dropped below this value of `|a|^2 |b|^2`.
pub const CROSS_TERM_GUARD: f64 = 1e-30;
const SYMMETRY_TOL: f64 = 1e-10;
const POSITIVITY_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MetricKind {
    Sled,
    Ed,
    /// Mahalanobis; needs per-class covariances, so only available with LDA.
    Md,
}

impl MetricKind {
    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Sled => "SLED",
            MetricKind::Ed => "ED",
            MetricKind::Md => "MD",
        }
    }

    pub(crate) fn code(self) -> u32 {
        match self {
            MetricKind::Sled => 0,
            MetricKind::Ed => 1,
            MetricKind::Md => 2,
        }
    }

    pub(crate) fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(MetricKind::Sled),
            1 => Ok(MetricKind::Ed),
            2 => Ok(MetricKind::Md),
            other => Err(Error::ModelFormat(format!("unknown metric code {other}"))),
        }
    }
}

impl std::fmt::Display for MetricKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LiftParams {
    pub lambda_lift: f64,
}

impl Default for LiftParams {
    fn default() -> Self {
        Self { lambda_lift: 1.0 }
    }
}

/// Symmetric matrix checked for symmetry and finiteness on construction.
/// Positivity is checked lazily by [`matrix_log`].
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix(DMatrix<f64>);

impl SpdMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::DimensionMismatch { expected: m.nrows(), actual: m.ncols() });
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NotSpd("non-finite entry".into()));
        }
        let scale = m.amax().max(1.0);
        let asym = (&m - m.transpose()).amax();
        if asym > SYMMETRY_TOL * scale {
            return Err(Error::NotSymmetric(asym));
        }
        Ok(Self(m))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = SymmetricEigen::new(self.0.clone()).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }
}

/// `a a^T + lambda I`.
pub fn lift(a: &[f64], p: LiftParams) -> SpdMatrix {
    let n = a.len();
    let m = DMatrix::from_fn(n, n, |i, j| a[i] * a[j] + if i == j { p.lambda_lift } else { 0.0 });
    SpdMatrix(m)
}

/// Principal logarithm through a symmetric eigendecomposition.
pub fn matrix_log(x: &SpdMatrix) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(x.0.clone());
    let max = eig.eigenvalues.max();
    let floor = POSITIVITY_RTOL * max.abs();
    if let Some(bad) = eig.eigenvalues.iter().find(|&&v| !(v > floor) || v <= 0.0) {
        return Err(Error::NotSpd(format!("eigenvalue {bad:e} not positive")));
    }
    let logs = eig.eigenvalues.map(f64::ln);
    let v = &eig.eigenvectors;
    Ok(v * DMatrix::from_diagonal(&logs) * v.transpose())
}

/// `Tr((log X - log Y)^2)`.
pub fn led_squared(x: &SpdMatrix, y: &SpdMatrix) -> Result<f64> {
    if x.dim() != y.dim() {
        return Err(Error::DimensionMismatch { expected: x.dim(), actual: y.dim() });
    }
    let diff = matrix_log(x)? - matrix_log(y)?;
    // the difference is symmetric, so the trace of its square is its Frobenius norm squared
    Ok(diff.norm_squared())
}

fn check_same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), actual: b.len() });
    }
    Ok(())
}

#[cfg(test)]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `(|a|^2, |b|^2, a.b)` in one pass with four independent accumulators per
/// sum, so the adds are not one serial dependency chain.
fn gram3(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
    let mut aa = [0.0; 4];
    let mut bb = [0.0; 4];
    let mut ab = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            aa[l] += x[l] * x[l];
            bb[l] += y[l] * y[l];
            ab[l] += x[l] * y[l];
        }
    }
    for (x, y) in ra.iter().zip(rb) {
        aa[0] += x * x;
        bb[0] += y * y;
        ab[0] += x * y;
    }
    let fold = |v: [f64; 4]| (v[0] + v[1]) + (v[2] + v[3]);
    (fold(aa), fold(bb), fold(ab))
}

struct SledParts {
    /// ln(|a|^2 + 1)
    la: f64,
    lb: f64,
    na2: f64,
    nb2: f64,
    dot: f64,
    value: f64,
    cross_active: bool,
}

fn sled_parts(a: &[f64], b: &[f64]) -> SledParts {
    let (na2, nb2, ab) = gram3(a, b);
    let la = na2.ln_1p();
    let lb = nb2.ln_1p();
    let denom = na2 * nb2;
    let cross_active = denom >= CROSS_TERM_GUARD;
    // a'^2 + b'^2 - 2 a'b' cos^2 rewritten as (a'-b')^2 + 2 a'b' (1 - cos^2)
    let value = if cross_active {
        let cos2 = (ab * ab / denom).min(1.0);
        (la - lb).powi(2) + 2.0 * la * lb * (1.0 - cos2)
    } else {
        la * la + lb * lb
    };
    SledParts { la, lb, na2, nb2, dot: ab, value, cross_active }
}

/// Closed-form squared log-Euclidean distance between `lift(a, 1)` and
/// `lift(b, 1)`.
pub fn sled_squared(a: &[f64], b: &[f64]) -> Result<f64> {
    check_same_len(a, b)?;
    Ok(sled_parts(a, b).value)
}

/// Value of [`sled_squared`] and its partial derivatives in `a` and `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct SledGrad {
    pub value: f64,
    pub grad_a: Vec<f64>,
    pub grad_b: Vec<f64>,
}

pub fn sled_squared_grad(a: &[f64], b: &[f64]) -> Result<SledGrad> {
    check_same_len(a, b)?;
    let p = sled_parts(a, b);
    let mut grad_a = vec![0.0; a.len()];
    let mut grad_b = vec![0.0; b.len()];
    sled_grad_into(a, b, &p, &mut grad_a, &mut grad_b, 1.0);
    Ok(SledGrad { value: p.value, grad_a, grad_b })
}

/// Accumulates `scale * dS/da` and `scale * dS/db`; used in training loops.
pub(crate) fn sled_squared_grad_acc(
    a: &[f64],
    b: &[f64],
    scale: f64,
    grad_a: &mut [f64],
    grad_b: &mut [f64],
) -> f64 {
    let p = sled_parts(a, b);
    sled_grad_into(a, b, &p, grad_a, grad_b, scale);
    p.value
}

fn sled_grad_into(a: &[f64], b: &[f64], p: &SledParts, ga: &mut [f64], gb: &mut [f64], scale: f64) {
    // d a'/da = 2a / (|a|^2 + 1)
    let dla = 2.0 / (p.na2 + 1.0);
    let dlb = 2.0 / (p.nb2 + 1.0);
    if !p.cross_active {
        let ca = scale * 2.0 * p.la * dla;
        let cb = scale * 2.0 * p.lb * dlb;
        ga.iter_mut().zip(a).for_each(|(g, x)| *g += ca * x);
        gb.iter_mut().zip(b).for_each(|(g, x)| *g += cb * x);
        return;
    }
    // S = la^2 + lb^2 - 2 la lb r, r = c^2 / (pa pb)
    let denom = p.na2 * p.nb2;
    let r = p.dot * p.dot / denom;
    let dr_dc = 2.0 * p.dot / denom;
    let dr_dpa = -r / p.na2;
    let dr_dpb = -r / p.nb2;
    let ds_dla = 2.0 * p.la - 2.0 * p.lb * r;
    let ds_dlb = 2.0 * p.lb - 2.0 * p.la * r;
    let ds_dr = -2.0 * p.la * p.lb;
    // a enters through la (via pa), pa = |a|^2 and c = a.b
    let coef_a_self = scale * (ds_dla * dla + ds_dr * dr_dpa * 2.0);
    let coef_a_other = scale * ds_dr * dr_dc;
    let coef_b_self = scale * (ds_dlb * dlb + ds_dr * dr_dpb * 2.0);
    let coef_b_other = coef_a_other;
    for i in 0..a.len() {
        ga[i] += coef_a_self * a[i] + coef_a_other * b[i];
        gb[i] += coef_b_self * b[i] + coef_b_other * a[i];
    }
}

/// Squared Euclidean distance.
pub fn ed_squared(a: &[f64], b: &[f64]) -> Result<f64> {
    check_same_len(a, b)?;
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// Distance `D` used for classification and rejection under `metric`
/// (the square root of the squared form). MD is handled by the LDA model.
pub fn distance(metric: MetricKind, a: &[f64], b: &[f64]) -> Result<f64> {
    match metric {
        MetricKind::Sled => Ok(sled_squared(a, b)?.sqrt()),
        MetricKind::Ed => Ok(ed_squared(a, b)?.sqrt()),
        MetricKind::Md => Err(Error::IncompatibleMetric { metric: "MD", extractor: "vector metric" }),
    }
}

//! Simplex geometry: Dirichlet sampling, the information diffusion kernel and
//! the unbiased MMD estimator built on it.
//!
//! The kernel compares two points of the probability simplex through the
//! geodesic distance of their square-root images on the unit sphere:
//! `k(a, b) = exp(-arccos²(Σ √(a_z b_z)))`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{CwtmError, Result};

/// Tolerance used when validating that a vector lies on the simplex.
pub const SIMPLEX_TOL: f64 = 1e-5;

/// Above `1 - SERIES_EPS` the squared arccos is replaced by its series.
const SERIES_EPS: f64 = 1e-7;

/// Floor for a coordinate in the denominator of `∂s/∂a_z = √b_z / (2√a_z)`.
const SQRT_FLOOR: f64 = 1e-300;

/// A probability vector over `Z` categories.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexVector(Vec<f64>);

impl SimplexVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_simplex(&values)?;
        Ok(SimplexVector(values))
    }

    /// Wraps values already known to be on the simplex (softmax outputs,
    /// normalized sums). Only checked in debug builds.
    pub fn new_unchecked(values: Vec<f64>) -> Self {
        debug_assert!(check_simplex(&values).is_ok(), "not a simplex vector");
        SimplexVector(values)
    }

    pub fn uniform(dim: usize) -> Self {
        SimplexVector(vec![1.0 / dim as f64; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for SimplexVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Returns an error unless every entry is finite, non-negative and the
/// entries sum to one within [`SIMPLEX_TOL`].
pub fn check_simplex(values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(CwtmError::Shape("empty simplex vector".into()));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(CwtmError::Shape(format!("simplex entry {v} is negative or not finite")));
    }
    let sum: f64 = values.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(CwtmError::Shape(format!("simplex entries sum to {sum}")));
    }
    Ok(())
}

/// Symmetric Dirichlet prior `Dir(concentration · 1_dim)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirichletPrior {
    concentration: f64,
    dim: usize,
}

impl DirichletPrior {
    pub fn new(concentration: f64, dim: usize) -> Result<Self> {
        if !(concentration.is_finite() && concentration > 0.0) {
            return Err(CwtmError::InvalidPrior(format!(
                "concentration must be positive, got {concentration}"
            )));
        }
        if dim < 2 {
            return Err(CwtmError::InvalidPrior(format!("dimension must be at least 2, got {dim}")));
        }
        Ok(DirichletPrior { concentration, dim })
    }

    pub fn concentration(&self) -> f64 {
        self.concentration
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Draws one point of the simplex.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> SimplexVector {
        // Work with log-Gamma draws so that small shapes never underflow to an
        // all-zero vector.
        let logs: Vec<f64> = (0..self.dim).map(|_| log_gamma_draw(self.concentration, rng)).collect();
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut values: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let sum: f64 = values.iter().sum();
        values.iter_mut().for_each(|v| *v /= sum);
        SimplexVector(values)
    }
}

/// Logarithm of a `Gamma(shape, 1)` variate.
///
/// Marsaglia and Tsang's squeeze/rejection method for `shape >= 1`; smaller
/// shapes use `G(a) = G(a + 1) · U^(1/a)`, applied in log space.
pub fn log_gamma_draw<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    if shape < 1.0 {
        let u: f64 = 1.0 - rng.random::<f64>();
        return log_gamma_draw(shape + 1.0, rng) + u.ln() / shape;
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x: f64 = rng.sample(StandardNormal);
        let t = 1.0 + c * x;
        if t <= 0.0 {
            continue;
        }
        let v = t * t * t;
        let u: f64 = 1.0 - rng.random::<f64>();
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 || u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
            return (d * v).ln();
        }
    }
}

/// Which side of the MMD comparison a batch represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchRole {
    Encoded,
    Prior,
}

/// `m` simplex vectors of a common dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    rows: Vec<SimplexVector>,
    role: BatchRole,
}

impl SampleBatch {
    pub fn new(rows: Vec<SimplexVector>, role: BatchRole) -> Result<Self> {
        if rows.len() < 2 {
            return Err(CwtmError::InvalidBatch(format!(
                "need at least 2 rows, got {}",
                rows.len()
            )));
        }
        let dim = rows[0].dim();
        if rows.iter().any(|r| r.dim() != dim) {
            return Err(CwtmError::InvalidBatch("rows differ in dimension".into()));
        }
        Ok(SampleBatch { rows, role })
    }

    pub fn rows(&self) -> &[SimplexVector] {
        &self.rows
    }

    pub fn role(&self) -> BatchRole {
        self.role
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows[0].dim()
    }

    /// Row-major `m × dim` copy of the batch.
    pub fn to_flat(&self) -> Vec<f64> {
        self.rows.iter().flat_map(|r| r.as_slice().iter().copied()).collect()
    }
}

/// Draws `m` i.i.d. samples from `prior`, deterministically for a given seed.
pub fn sample_dirichlet(prior: &DirichletPrior, m: usize, seed: u64) -> Result<SampleBatch> {
    if m < 2 {
        return Err(CwtmError::InvalidBatch(format!("need at least 2 samples, got {m}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = (0..m).map(|_| prior.sample(&mut rng)).collect();
    SampleBatch::new(rows, BatchRole::Prior)
}

/// Like [`sample_dirichlet`], drawing from a caller-owned generator and
/// returning a row-major matrix.
pub fn sample_dirichlet_flat<R: Rng + ?Sized>(prior: &DirichletPrior, m: usize, rng: &mut R) -> Vec<f64> {
    (0..m).flat_map(|_| prior.sample(rng).into_inner()).collect()
}

fn bhattacharyya(a: &[f64], b: &[f64]) -> f64 {
    let s: f64 = a.iter().zip(b).map(|(x, y)| (x * y).sqrt()).sum();
    s.clamp(0.0, 1.0)
}

fn arccos_sq(s: f64) -> f64 {
    if s > 1.0 - SERIES_EPS {
        2.0 * (1.0 - s)
    } else {
        let t = s.acos();
        t * t
    }
}

fn arccos_sq_deriv(s: f64) -> f64 {
    if s > 1.0 - SERIES_EPS {
        -2.0
    } else {
        -2.0 * s.acos() / (1.0 - s * s).sqrt()
    }
}

/// Kernel value on raw slices. Callers guarantee equal lengths.
pub fn idk_kernel_raw(a: &[f64], b: &[f64]) -> f64 {
    (-arccos_sq(bhattacharyya(a, b))).exp()
}

/// Adds `scale · ∂k(a, b)/∂a` into `out` and returns `k(a, b)`.
pub fn idk_kernel_grad_into(a: &[f64], b: &[f64], scale: f64, out: &mut [f64]) -> f64 {
    let s = bhattacharyya(a, b);
    let k = (-arccos_sq(s)).exp();
    let outer = -k * arccos_sq_deriv(s) * scale;
    if outer != 0.0 {
        for ((o, &x), &y) in out.iter_mut().zip(a).zip(b) {
            if y > 0.0 {
                *o += outer * 0.5 * (y / x.max(SQRT_FLOOR)).sqrt();
            }
        }
    }
    k
}

/// Information diffusion kernel between two simplex vectors.
pub fn idk_kernel(a: &SimplexVector, b: &SimplexVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(CwtmError::Shape(format!(
            "kernel arguments have dimensions {} and {}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(idk_kernel_raw(a.as_slice(), b.as_slice()))
}

/// Gradient of `k(a, b)` with respect to `a`.
pub fn idk_kernel_grad(a: &SimplexVector, b: &SimplexVector) -> Result<Vec<f64>> {
    if a.dim() != b.dim() {
        return Err(CwtmError::Shape("kernel argument dimensions differ".into()));
    }
    let mut g = vec![0.0; a.dim()];
    idk_kernel_grad_into(a.as_slice(), b.as_slice(), 1.0, &mut g);
    Ok(g)
}

fn check_mmd_shapes(q_len: usize, p_len: usize, m: usize, dim: usize) -> Result<()> {
    if m < 2 {
        return Err(CwtmError::Shape(format!("MMD needs at least 2 rows per batch, got {m}")));
    }
    if dim == 0 || q_len != m * dim || p_len != m * dim {
        return Err(CwtmError::Shape(format!(
            "MMD batches must both be {m} × {dim}, got {q_len} and {p_len} values"
        )));
    }
    Ok(())
}

/// Unbiased MMD estimate between two row-major `m × dim` batches.
pub fn mmd_idk_flat(q: &[f64], p: &[f64], m: usize, dim: usize) -> Result<f64> {
    check_mmd_shapes(q.len(), p.len(), m, dim)?;
    fn row(x: &[f64], i: usize, dim: usize) -> &[f64] {
        &x[i * dim..(i + 1) * dim]
    }
    let mut qq = 0.0;
    let mut pp = 0.0;
    for i in 0..m {
        for j in (i + 1)..m {
            qq += idk_kernel_raw(row(q, i, dim), row(q, j, dim));
            pp += idk_kernel_raw(row(p, i, dim), row(p, j, dim));
        }
    }
    let mut qp = 0.0;
    for i in 0..m {
        for j in 0..m {
            qp += idk_kernel_raw(row(q, i, dim), row(p, j, dim));
        }
    }
    let mf = m as f64;
    // Kernel symmetry: the i≠j sums are twice the i<j sums.
    Ok(2.0 * (qq + pp) / (mf * (mf - 1.0)) - 2.0 * qp / (mf * mf))
}

/// MMD estimate and its gradient with respect to every entry of `q`.
pub fn mmd_idk_flat_grad(q: &[f64], p: &[f64], m: usize, dim: usize) -> Result<(f64, Vec<f64>)> {
    check_mmd_shapes(q.len(), p.len(), m, dim)?;
    let mf = m as f64;
    let within = 2.0 / (mf * (mf - 1.0));
    let cross = 2.0 / (mf * mf);
    let mut grad = vec![0.0; m * dim];
    let mut qq = 0.0;
    let mut pp = 0.0;
    let mut qp = 0.0;
    for i in 0..m {
        let qi = &q[i * dim..(i + 1) * dim];
        let gi = &mut grad[i * dim..(i + 1) * dim];
        for j in 0..m {
            let pj = &p[j * dim..(j + 1) * dim];
            qp += idk_kernel_grad_into(qi, pj, -cross, gi);
            if j != i {
                let qj = &q[j * dim..(j + 1) * dim];
                qq += idk_kernel_grad_into(qi, qj, within, gi);
            }
        }
        for j in (i + 1)..m {
            pp += idk_kernel_raw(&p[i * dim..(i + 1) * dim], &p[j * dim..(j + 1) * dim]);
        }
    }
    let value = qq / (mf * (mf - 1.0)) + 2.0 * pp / (mf * (mf - 1.0)) - cross * qp;
    Ok((value, grad))
}

/// Unbiased MMD between an encoded batch and a prior batch of equal size.
pub fn mmd_idk(q: &SampleBatch, p: &SampleBatch) -> Result<f64> {
    if q.len() != p.len() || q.dim() != p.dim() {
        return Err(CwtmError::Shape(format!(
            "MMD batches are {}×{} and {}×{}",
            q.len(),
            q.dim(),
            p.len(),
            p.dim()
        )));
    }
    mmd_idk_flat(&q.to_flat(), &p.to_flat(), q.len(), q.dim())
}

/// Gradient of [`mmd_idk`] with respect to each row of `q`.
pub fn mmd_idk_grad(q: &SampleBatch, p: &SampleBatch) -> Result<(f64, Vec<Vec<f64>>)> {
    if q.len() != p.len() || q.dim() != p.dim() {
        return Err(CwtmError::Shape("MMD batch shapes differ".into()));
    }
    let dim = q.dim();
    let (v, g) = mmd_idk_flat_grad(&q.to_flat(), &p.to_flat(), q.len(), dim)?;
    Ok((v, g.chunks(dim).map(<[f64]>::to_vec).collect()))
}

//! Squared-exponential kernel over grid cells and the small dense linear
//! algebra the entropy rewards need.

use crate::error::{invalid, Result};
use crate::submodular::StateKey;

/// Diagonal jitter added to every Gram matrix.
pub const JITTER: f64 = 1e-6;

/// `k(p, q) = variance * exp(-|p - q|^2 / (2 lengthscale^2))`, distances in
/// grid units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SquaredExponential {
    lengthscale: f64,
    variance: f64,
}

impl Default for SquaredExponential {
    fn default() -> Self {
        Self {
            lengthscale: 1.0,
            variance: 1.0,
        }
    }
}

impl SquaredExponential {
    pub fn new(lengthscale: f64, variance: f64) -> Result<Self> {
        if !(lengthscale.is_finite() && lengthscale > 0.0) {
            return Err(invalid("kernel lengthscale must be > 0"));
        }
        if !(variance.is_finite() && variance > 0.0) {
            return Err(invalid("kernel variance must be > 0"));
        }
        Ok(Self {
            lengthscale,
            variance,
        })
    }

    pub fn lengthscale(&self) -> f64 {
        self.lengthscale
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn eval(&self, p: StateKey, q: StateKey) -> f64 {
        let dr = p.row as f64 - q.row as f64;
        let dc = p.col as f64 - q.col as f64;
        let d2 = dr * dr + dc * dc;
        self.variance * (-d2 / (2.0 * self.lengthscale * self.lengthscale)).exp()
    }
}

/// Row-oriented Cholesky factor of `K + jitter * I` that grows one point at a
/// time. Each push returns the new squared pivot, which equals the predictive
/// variance of a noisy observation at the new point given all earlier points.
///
/// Pushing points one by one performs exactly the same floating-point
/// operations as factoring the full matrix row by row, so prefix sums of the
/// pivots agree bit-for-bit with a batch evaluation in the same order.
#[derive(Debug, Clone)]
pub struct IncrementalCholesky {
    kernel: SquaredExponential,
    jitter: f64,
    points: Vec<StateKey>,
    rows: Vec<Vec<f64>>,
}

impl IncrementalCholesky {
    pub fn new(kernel: SquaredExponential, jitter: f64) -> Self {
        Self {
            kernel,
            jitter,
            points: Vec::new(),
            rows: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn push(&mut self, p: StateKey) -> f64 {
        let n = self.points.len();
        let mut row = Vec::with_capacity(n + 1);
        for j in 0..n {
            let lj = &self.rows[j];
            let mut acc = self.kernel.eval(p, self.points[j]);
            for i in 0..j {
                acc -= row[i] * lj[i];
            }
            row.push(acc / lj[j]);
        }
        let mut pivot = self.kernel.eval(p, p) + self.jitter;
        for v in &row {
            pivot -= v * v;
        }
        // Exact arithmetic gives pivot >= jitter; guard only against rounding.
        let pivot = pivot.max(f64::MIN_POSITIVE);
        row.push(pivot.sqrt());
        self.points.push(p);
        self.rows.push(row);
        pivot
    }
}

/// Latent posterior variance at `target` given noisy observations at
/// `observed`, where cell `i` was observed with noise variance `noise[i]`.
///
/// Returns the prior variance when nothing has been observed. Clamped below
/// at zero to absorb rounding.
pub fn posterior_variance(
    kernel: &SquaredExponential,
    observed: &[StateKey],
    noise: &[f64],
    target: StateKey,
) -> f64 {
    debug_assert_eq!(observed.len(), noise.len());
    let prior = kernel.eval(target, target);
    let n = observed.len();
    if n == 0 {
        return prior;
    }
    // Dense Cholesky of K_D + diag(noise), then forward-solve for k_*.
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut acc = kernel.eval(observed[i], observed[j]);
            if i == j {
                acc += noise[i];
            }
            for k in 0..j {
                acc -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                l[i * n + i] = acc.max(f64::MIN_POSITIVE).sqrt();
            } else {
                l[i * n + j] = acc / l[j * n + j];
            }
        }
    }
    let mut z = vec![0.0; n];
    let mut explained = 0.0;
    for i in 0..n {
        let mut acc = kernel.eval(target, observed[i]);
        for k in 0..i {
            acc -= l[i * n + k] * z[k];
        }
        z[i] = acc / l[i * n + i];
        explained += z[i] * z[i];
    }
    (prior - explained).max(0.0)
}

//! Independent per-objective Gaussian processes on `log1p` QoR targets.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::oracle::QorVector;

pub const DEFAULT_LENGTH_SCALE: f64 = 0.5;
pub const DEFAULT_JITTER: f64 = 1e-6;

fn rbf(a: &[f64], b: &[f64], length_scale: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    (-d2 / (2.0 * length_scale * length_scale)).exp()
}

/// One zero-mean GP on standardized targets with a unit-variance RBF kernel.
#[derive(Debug, Clone)]
pub struct Gp {
    inputs: Vec<Vec<f64>>,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    target_mean: f64,
    /// Zero when every training target is identical; the GP is then constant.
    target_scale: f64,
    length_scale: f64,
}

impl Gp {
    pub fn fit(inputs: &[Vec<f64>], targets: &[f64], length_scale: f64, jitter: f64) -> Result<Self> {
        let n = inputs.len();
        if n < 2 {
            return Err(Error::TooFew { what: "evaluated points", needed: 2, got: n });
        }
        let mean = targets.iter().sum::<f64>() / n as f64;
        let var = targets.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n as f64;
        let scale = var.sqrt();
        let y = DVector::from_iterator(
            n,
            targets.iter().map(|t| if scale > 0.0 { (t - mean) / scale } else { 0.0 }),
        );
        let mut jit = jitter;
        let chol = loop {
            let k = DMatrix::from_fn(n, n, |i, j| {
                rbf(&inputs[i], &inputs[j], length_scale) + if i == j { jit } else { 0.0 }
            });
            if let Some(c) = Cholesky::new(k) {
                break c;
            }
            jit *= 10.0;
            if jit > 1.0 {
                return Err(Error::validation("surrogate", "kernel matrix is not positive definite"));
            }
        };
        let alpha = chol.solve(&y);
        Ok(Gp {
            inputs: inputs.to_vec(),
            chol,
            alpha,
            target_mean: mean,
            target_scale: scale,
            length_scale,
        })
    }

    /// Posterior mean and variance at `x`, in target units.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        if self.target_scale == 0.0 {
            return (self.target_mean, 0.0);
        }
        let kx = DVector::from_iterator(
            self.inputs.len(),
            self.inputs.iter().map(|xi| rbf(xi, x, self.length_scale)),
        );
        let mean = kx.dot(&self.alpha);
        let v = self
            .chol
            .l()
            .solve_lower_triangular(&kx)
            .expect("Cholesky factor is non-singular");
        let var = (1.0 - v.dot(&v)).max(0.0);
        (
            self.target_mean + self.target_scale * mean,
            self.target_scale * self.target_scale * var,
        )
    }
}

/// Five GPs, one per QoR metric, each on `log1p` of the metric.
#[derive(Debug, Clone)]
pub struct SurrogateModel {
    pub gps: Vec<Gp>,
}

impl SurrogateModel {
    /// Per-metric `(mean, variance)` in `log1p` space.
    pub fn predict(&self, x: &[f64]) -> [(f64, f64); 5] {
        std::array::from_fn(|k| self.gps[k].predict(x))
    }
}

pub fn fit_surrogate(evaluated: &[(Vec<f64>, QorVector)]) -> Result<SurrogateModel> {
    fit_surrogate_with(evaluated, DEFAULT_LENGTH_SCALE, DEFAULT_JITTER)
}

pub fn fit_surrogate_with(evaluated: &[(Vec<f64>, QorVector)], length_scale: f64, jitter: f64) -> Result<SurrogateModel> {
    if evaluated.len() < 2 {
        return Err(Error::TooFew { what: "evaluated points", needed: 2, got: evaluated.len() });
    }
    let inputs: Vec<Vec<f64>> = evaluated.iter().map(|(x, _)| x.clone()).collect();
    let gps = (0..5)
        .map(|k| {
            let targets: Vec<f64> = evaluated.iter().map(|(_, q)| q.to_array()[k].ln_1p()).collect();
            Gp::fit(&inputs, &targets, length_scale, jitter)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SurrogateModel { gps })
}

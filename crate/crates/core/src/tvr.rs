//! Total-variation regularized differentiation.
//!
//! For a series `z` on a uniform grid the derivative `u` minimizes
//! `α·Σ|u_{k+1} − u_k| + ½‖A u − (z − z_0)‖²`, where `A` is the forward
//! Euler anti-differentiation matrix (`(Au)_0 = 0`). Substituting `y = Au`
//! turns each lagged-diffusivity step into a pentadiagonal SPD solve.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{dimension, domain, Result};
use crate::linalg::SymBanded;
use crate::pca::ParamSeries;

/// Smoothing of the absolute value, `ε = 1e-8·max(scale, 1e-6)²`.
pub const TV_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TvrConfig {
    pub alpha: f64,
    pub iterations: usize,
    pub dt: f64,
    pub small_threshold: f64,
}

impl Default for TvrConfig {
    fn default() -> Self {
        Self {
            alpha: 100.0,
            iterations: 10,
            dt: 0.1,
            small_threshold: 1e-5,
        }
    }
}

impl TvrConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(domain("alpha must be non-negative"));
        }
        if self.iterations == 0 {
            return Err(domain("at least one iteration is required"));
        }
        if !(self.dt > 0.0) {
            return Err(domain("dt must be positive"));
        }
        if !(self.small_threshold >= 0.0) {
            return Err(domain("small_threshold must be non-negative"));
        }
        Ok(())
    }
}

/// Derivative estimate plus the smoothed objective after each iteration
/// (entry 0 is the naive-difference starting point).
#[derive(Debug, Clone, PartialEq)]
pub struct TvrResult {
    pub derivative: Vec<f64>,
    pub objective: Vec<f64>,
}

fn naive_difference(z: &[f64], dt: f64) -> Vec<f64> {
    let t = z.len();
    let mut u: Vec<f64> = z.windows(2).map(|w| (w[1] - w[0]) / dt).collect();
    u.push(u[t - 2]);
    u
}

/// `u` from `y = Au` (with `y_0 = 0` implied and `y[k-1] = y_k`).
fn derivative_from_y(y: &[f64], dt: f64) -> Vec<f64> {
    let t = y.len() + 1;
    let mut u = Vec::with_capacity(t);
    let mut prev = 0.0;
    for &yk in y {
        u.push((yk - prev) / dt);
        prev = yk;
    }
    u.push(u[t - 2]);
    u
}

fn objective(u: &[f64], y: &[f64], r: &[f64], alpha: f64, eps: f64) -> f64 {
    let tv: f64 = u
        .windows(2)
        .map(|w| libm::sqrt((w[1] - w[0]) * (w[1] - w[0]) + eps))
        .sum();
    let fit: f64 = y.iter().zip(r).map(|(a, b)| (a - b) * (a - b)).sum();
    alpha * tv + 0.5 * fit
}

/// Full solver output, before thresholding.
pub fn tvr_solve(z: &[f64], cfg: &TvrConfig) -> Result<TvrResult> {
    cfg.validate()?;
    let t = z.len();
    if t < 3 {
        return Err(domain(format!("TVR needs at least 3 samples, got {t}")));
    }
    if z.iter().any(|x| !x.is_finite()) {
        return Err(domain("series contains non-finite values"));
    }
    let dt = cfg.dt;
    let naive = naive_difference(z, dt);
    // Relative to the derivative scale, with a tiny absolute floor:
    // near-constant series would otherwise get TV weights that swamp the
    // identity and break the factorization.
    let scale = naive.iter().fold(1e-6f64, |m, x| m.max(x.abs()));
    let eps = TV_EPSILON * scale * scale;

    // Unknowns y_1..y_{T-1}; r = z − z_0 on the same indices.
    let r: Vec<f64> = z[1..].iter().map(|&x| x - z[0]).collect();
    let mut y = r.clone();
    let mut u = naive;
    let mut history = vec![objective(&u, &y, &r, cfg.alpha, eps)];
    let n = t - 1;
    for _ in 0..cfg.iterations {
        let mut sys = SymBanded::new(n, 2);
        for i in 0..n {
            sys.add(i, i, 1.0);
        }
        // Row j of the second difference acts on y_j, y_{j+1}, y_{j+2}.
        for j in 0..t - 2 {
            let du = u[j + 1] - u[j];
            let wgt = cfg.alpha / libm::sqrt(du * du + eps) / (dt * dt);
            let taps: [(isize, f64); 3] = [(j as isize - 1, 1.0), (j as isize, -2.0), (j as isize + 1, 1.0)];
            for &(a, ca) in &taps {
                if a < 0 {
                    continue;
                }
                for &(b, cb) in &taps {
                    if b < a {
                        continue;
                    }
                    sys.add(a as usize, b as usize, wgt * ca * cb);
                }
            }
        }
        y = sys.solve(&r)?;
        u = derivative_from_y(&y, dt);
        history.push(objective(&u, &y, &r, cfg.alpha, eps));
    }
    Ok(TvrResult {
        derivative: u,
        objective: history,
    })
}

/// Zeroes entries with `|x| < threshold`.
pub fn threshold_small(u: &mut [f64], threshold: f64) {
    for x in u.iter_mut() {
        if x.abs() < threshold {
            *x = 0.0;
        }
    }
}

pub fn tvr_derivative(z: &[f64], cfg: &TvrConfig) -> Result<Vec<f64>> {
    let mut u = tvr_solve(z, cfg)?.derivative;
    threshold_small(&mut u, cfg.small_threshold);
    Ok(u)
}

/// Cumulative forward-Euler sum starting at `z0`.
pub fn antidifferentiate(u: &[f64], z0: f64, dt: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(u.len());
    let mut acc = z0;
    for k in 0..u.len() {
        if k > 0 {
            acc += dt * u[k - 1];
        }
        out.push(acc);
    }
    out
}

/// Smoothed inputs and derivative targets on the interior of the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingPairs {
    pub n_visible: usize,
    pub q: usize,
    pub times: Vec<f64>,
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
}

impl TrainingPairs {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        crate::pca::standard_dim(self.n_visible, self.q)
    }
}

/// Componentwise TVR over a parameter series. The first and last samples
/// are dropped from the pairs.
pub fn build_training_pairs(series: &ParamSeries, cfg: &TvrConfig) -> Result<TrainingPairs> {
    let t = series.len();
    if t < 3 {
        return Err(domain("training pairs need at least 3 timepoints"));
    }
    for w in series.times.windows(2) {
        if ((w[1] - w[0]) - cfg.dt).abs() > 1e-6 * cfg.dt {
            return Err(domain(format!(
                "series spacing {} differs from dt = {}",
                w[1] - w[0],
                cfg.dt
            )));
        }
    }
    let flat = series.flat();
    let d = flat[0].len();
    if flat.iter().any(|r| r.len() != d) {
        return Err(dimension("parameter series has ragged rows"));
    }
    let mut inputs = vec![vec![0.0; d]; t];
    let mut targets = vec![vec![0.0; d]; t];
    for c in 0..d {
        let z: Vec<f64> = flat.iter().map(|r| r[c]).collect();
        let du = tvr_derivative(&z, cfg)?;
        let smooth = antidifferentiate(&du, z[0], cfg.dt);
        for k in 0..t {
            inputs[k][c] = smooth[k];
            targets[k][c] = du[k];
        }
    }
    Ok(TrainingPairs {
        n_visible: series.n_visible(),
        q: series.q(),
        times: series.times[1..t - 1].to_vec(),
        inputs: inputs[1..t - 1].to_vec(),
        targets: targets[1..t - 1].to_vec(),
    })
}

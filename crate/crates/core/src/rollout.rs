//! Integration of a learned model and the evaluation statistics.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::candidates::LatentFourier;
use crate::dataset::{EnsembleDataset, StandardizingTransform};
use crate::error::{dimension, domain, Error, Result};
use crate::linalg::Mat;
use crate::pca::{moments_from, to_full, ParamSeries, StandardParams};
use crate::subnet::SubnetModel;

pub const BOOTSTRAP_RESAMPLES: usize = 1000;
/// Length of the trailing window used for oscillation statistics (s).
pub const OSCILLATION_WINDOW: f64 = 40.0;

/// Forward Euler on `dθ̂/dt = f(θ̂, t)` for `steps` steps. A negative σ² is
/// clamped to zero after each step.
pub fn euler_rollout_with<F>(mut f: F, theta0: &StandardParams, t0: f64, steps: usize, dt: f64) -> Result<ParamSeries>
where
    F: FnMut(&StandardParams, f64) -> Result<Vec<f64>>,
{
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(domain("rollout step must be positive"));
    }
    let (nv, q) = (theta0.n_visible(), theta0.q());
    let mut x = theta0.flatten();
    let mut times = Vec::with_capacity(steps + 1);
    let mut params = Vec::with_capacity(steps + 1);
    times.push(t0);
    params.push(theta0.clone());
    let last = x.len() - 1;
    for k in 0..steps {
        let t = t0 + k as f64 * dt;
        let d = f(&params[k], t)?;
        if d.len() != x.len() {
            return Err(dimension("derivative length differs from the state"));
        }
        for (xi, di) in x.iter_mut().zip(&d) {
            *xi += dt * di;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::RolloutFault { step: k + 1 });
        }
        x[last] = x[last].max(0.0);
        times.push(t0 + (k + 1) as f64 * dt);
        params.push(StandardParams::from_flat(nv, q, &x)?);
    }
    Ok(ParamSeries { times, params })
}

/// Rolls out the trained model in inference mode over `[t0, t0 + horizon]`.
pub fn euler_rollout(
    model: &SubnetModel,
    theta0: &StandardParams,
    t0: f64,
    horizon: f64,
    dt: f64,
) -> Result<ParamSeries> {
    if !(horizon >= 0.0) {
        return Err(domain("rollout horizon must be non-negative"));
    }
    if !(dt > 0.0) {
        return Err(domain("rollout step must be positive"));
    }
    let steps = libm::round(horizon / dt) as usize;
    euler_rollout_with(|th, t| model.predict(th, t), theta0, t0, steps, dt)
}

/// `(1/T) Σ_t |a(t) − b(t)|²`.
pub fn mse(a: &ParamSeries, b: &ParamSeries) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(domain(format!(
            "series lengths differ or are empty ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let mut total = 0.0;
    for k in 0..a.len() {
        let scale = a.times[k].abs().max(1.0);
        if (a.times[k] - b.times[k]).abs() > 1e-9 * scale {
            return Err(domain(format!("time grids differ at index {k}")));
        }
        let (x, y) = (a.params[k].flatten(), b.params[k].flatten());
        if x.len() != y.len() {
            return Err(dimension("parameter dimensions differ"));
        }
        total += x.iter().zip(&y).map(|(u, v)| (u - v) * (u - v)).sum::<f64>();
    }
    Ok(total / a.len() as f64)
}

/// Mean and covariance of the visible species in count units.
#[derive(Debug, Clone, PartialEq)]
pub struct Observables {
    pub mean: Vec<f64>,
    pub cov: Mat,
}

/// `transform` must already be restricted to the visible species in order.
pub fn reconstruct_observables(theta: &StandardParams, transform: &StandardizingTransform) -> Result<Observables> {
    let nv = theta.n_visible();
    if transform.species.len() != nv {
        return Err(dimension(format!(
            "transform covers {} species, state has {nv}",
            transform.species.len()
        )));
    }
    let q = theta.q();
    let full = to_full(theta, &vec![0.0; q], &vec![1.0; q])?;
    let phi = moments_from(&full);
    let scale: Vec<f64> = (0..nv).map(|i| transform.scale(i)).collect();
    let mean = (0..nv).map(|i| phi.mu[i] * scale[i] + transform.m[i]).collect();
    let mut cov = Mat::zeros(nv, nv);
    for i in 0..nv {
        for j in 0..nv {
            cov[(i, j)] = scale[i] * phi.c[(i, j)] * scale[j];
        }
    }
    Ok(Observables { mean, cov })
}

/// Fraction of timepoints at which each reconstructed mean is ≥ 0.
pub fn nonnegative_fraction(series: &ParamSeries, transform: &StandardizingTransform) -> Result<Vec<f64>> {
    if series.is_empty() {
        return Err(domain("empty series"));
    }
    let nv = series.n_visible();
    let mut hits = vec![0usize; nv];
    for p in &series.params {
        let obs = reconstruct_observables(p, transform)?;
        for (h, m) in hits.iter_mut().zip(&obs.mean) {
            if *m >= 0.0 {
                *h += 1;
            }
        }
    }
    Ok(hits.iter().map(|&h| h as f64 / series.len() as f64).collect())
}

/// Terms `(∂⟨X⟩/∂θ)·F_θ` of a linear observable over the full parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermDecomposition {
    pub names: Vec<String>,
    pub times: Vec<f64>,
    /// `T × names.len()`.
    pub terms: Vec<Vec<f64>>,
    /// `d⟨X⟩/dt`.
    pub total: Vec<f64>,
}

fn term_names(nv: usize, q: usize) -> Vec<String> {
    let mut names = Vec::new();
    for i in 0..nv {
        names.push(format!("b[{i}]"));
    }
    for i in 0..nv {
        for k in 0..q {
            names.push(format!("W[{i},{k}]"));
        }
    }
    names.push(String::from("sigma2"));
    for k in 0..q {
        names.push(format!("mu_h[{k}]"));
    }
    for k in 0..q {
        names.push(format!("Sigma_h[{k}]"));
    }
    names
}

/// Terms for one state. `coeffs` weights the visible counts; `scale` is
/// the per-species standardizing divisor.
pub fn decompose_terms(
    theta: &StandardParams,
    f_hat: &[f64],
    lf: &LatentFourier,
    t: f64,
    coeffs: &[f64],
    scale: &[f64],
) -> Result<Vec<f64>> {
    let (nv, q) = (theta.n_visible(), theta.q());
    if coeffs.len() != nv || scale.len() != nv || f_hat.len() != theta.dim() || lf.q() != q {
        return Err(dimension("term decomposition inputs do not match the state"));
    }
    let (mu_h, sigma_h) = lf.eval(t);
    let (dmu_h, dsigma_h) = lf.time_derivative(t);
    let full = to_full(theta, &mu_h, &sigma_h)?;
    let fh = StandardParams::from_flat(nv, q, f_hat)?;
    // Invert the standard-frame derivative for F_W, then F_b.
    let mut fw = Mat::zeros(nv, q);
    for i in 0..nv {
        for k in 0..q {
            let root = libm::sqrt(sigma_h[k]);
            fw[(i, k)] = (fh.w[(i, k)] - 0.5 * full.w[(i, k)] * dsigma_h[k] / root) / root;
        }
    }
    let fb: Vec<f64> = (0..nv)
        .map(|i| {
            let s: f64 = (0..q).map(|k| fw[(i, k)] * mu_h[k] + full.w[(i, k)] * dmu_h[k]).sum();
            fh.b[i] - s
        })
        .collect();
    let a: Vec<f64> = (0..nv).map(|i| coeffs[i] * scale[i]).collect();
    let mut out = Vec::with_capacity(nv + nv * q + 1 + 2 * q);
    out.extend((0..nv).map(|i| a[i] * fb[i]));
    for i in 0..nv {
        for k in 0..q {
            out.push(a[i] * mu_h[k] * fw[(i, k)]);
        }
    }
    out.push(0.0);
    for k in 0..q {
        out.push((0..nv).map(|i| a[i] * full.w[(i, k)]).sum::<f64>() * dmu_h[k]);
    }
    out.extend(core::iter::repeat_n(0.0, q));
    Ok(out)
}

/// Decomposition of `d⟨Σ_i c_i n_i⟩/dt` along a series using the model's
/// derivative and latent series.
pub fn moment_term_decomposition(
    model: &SubnetModel,
    series: &ParamSeries,
    coeffs: &[f64],
    transform: &StandardizingTransform,
) -> Result<TermDecomposition> {
    let nv = series.n_visible();
    if transform.species.len() != nv {
        return Err(dimension("transform must cover the visible species"));
    }
    let scale: Vec<f64> = (0..nv).map(|i| transform.scale(i)).collect();
    let mut terms = Vec::with_capacity(series.len());
    let mut total = Vec::with_capacity(series.len());
    for (p, &t) in series.params.iter().zip(&series.times) {
        let f = model.predict(p, t)?;
        let row = decompose_terms(p, &f, &model.lf, t, coeffs, &scale)?;
        total.push(row.iter().sum());
        terms.push(row);
    }
    Ok(TermDecomposition {
        names: term_names(nv, series.q()),
        times: series.times.clone(),
        terms,
        total,
    })
}

/// Extremes of `μ(t) ± σ(t)` with percentile bootstrap intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OscillationRange {
    pub c_minus_min: f64,
    pub c_plus_max: f64,
    pub c_minus_ci: (f64, f64),
    pub c_plus_ci: (f64, f64),
}

impl OscillationRange {
    pub fn spread(&self) -> f64 {
        self.c_plus_max - self.c_minus_min
    }
}

/// `(min_t μ−σ, max_t μ+σ)` over trajectories `M × T`, divisor M.
pub fn band_extremes(traj: &[&[f64]]) -> Result<(f64, f64)> {
    let m = traj.len();
    if m == 0 {
        return Err(domain("no trajectories"));
    }
    let t = traj[0].len();
    if t == 0 {
        return Err(domain("empty window"));
    }
    if traj.iter().any(|r| r.len() != t) {
        return Err(dimension("trajectories have different lengths"));
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for k in 0..t {
        let mean = traj.iter().map(|r| r[k]).sum::<f64>() / m as f64;
        let var = traj.iter().map(|r| (r[k] - mean) * (r[k] - mean)).sum::<f64>() / m as f64;
        let sd = libm::sqrt(var);
        lo = lo.min(mean - sd);
        hi = hi.max(mean + sd);
    }
    Ok((lo, hi))
}

/// Linear-interpolated percentile of sorted data, `p ∈ [0, 1]`.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let x = p * (n - 1) as f64;
    let i = libm::floor(x) as usize;
    if i + 1 >= n {
        return sorted[n - 1];
    }
    let frac = x - i as f64;
    sorted[i] + frac * (sorted[i + 1] - sorted[i])
}

/// Band extremes with 95% trajectory-bootstrap intervals.
pub fn range_of_oscillations(traj: &[Vec<f64>], resamples: usize, seed: u64) -> Result<OscillationRange> {
    let refs: Vec<&[f64]> = traj.iter().map(|r| r.as_slice()).collect();
    let (c_minus_min, c_plus_max) = band_extremes(&refs)?;
    let m = traj.len();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut lows = Vec::with_capacity(resamples);
    let mut highs = Vec::with_capacity(resamples);
    let mut pick: Vec<&[f64]> = Vec::with_capacity(m);
    for _ in 0..resamples {
        pick.clear();
        pick.extend((0..m).map(|_| refs[rng.random_range(0..m)]));
        let (lo, hi) = band_extremes(&pick)?;
        lows.push(lo);
        highs.push(hi);
    }
    let ci = |v: &mut Vec<f64>, point: f64| {
        if v.is_empty() {
            return (point, point);
        }
        v.sort_by(|a, b| a.total_cmp(b));
        (percentile(v, 0.025), percentile(v, 0.975))
    };
    Ok(OscillationRange {
        c_minus_min,
        c_plus_max,
        c_minus_ci: ci(&mut lows, c_minus_min),
        c_plus_ci: ci(&mut highs, c_plus_max),
    })
}

/// Range of oscillations of `species` over the last `window` seconds,
/// converted to concentration by dividing by `per_unit`.
pub fn range_for_dataset(
    ds: &EnsembleDataset,
    species: &str,
    window: f64,
    per_unit: f64,
    resamples: usize,
    seed: u64,
) -> Result<OscillationRange> {
    let s = ds.species_index(species)?;
    let t_end = *ds.times.last().ok_or_else(|| domain("dataset has no timepoints"))?;
    let t_start = t_end - window;
    if t_start < ds.times[0] - 1e-9 {
        return Err(domain(format!("window of {window} s exceeds the simulated horizon")));
    }
    let idx: Vec<usize> = (0..ds.n_times()).filter(|&k| ds.times[k] >= t_start - 1e-9).collect();
    if idx.is_empty() {
        return Err(domain("empty window"));
    }
    let traj: Vec<Vec<f64>> = (0..ds.n_samples())
        .map(|m| idx.iter().map(|&k| ds.value(m, k, s) / per_unit).collect())
        .collect();
    range_of_oscillations(&traj, resamples, seed)
}

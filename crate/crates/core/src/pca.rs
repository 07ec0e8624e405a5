//! Probabilistic PCA: per-timepoint maximum-likelihood fits and the map
//! between the standard gauge (μ_h = 0, Σ_h = I) and general latent moments.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::dataset::EnsembleDataset;
use crate::error::{dimension, domain, Result};
use crate::linalg::{cholesky, cholesky_solve, symmetric_eigen, Mat, SymmetricEigen};
use crate::scalar::Scalar;

/// Relative gap below which two eigenvalues count as tied.
const TIE_TOLERANCE: f64 = 1e-12;

/// Reduced-model parameters in the standard frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardParams<S = f64> {
    pub b: Vec<S>,
    /// `N_v × q`.
    pub w: Mat<S>,
    pub sigma2: S,
}

/// Number of entries of a flattened standard parameter vector.
pub const fn standard_dim(n_visible: usize, q: usize) -> usize {
    n_visible + n_visible * q + 1
}

impl<S: Scalar> StandardParams<S> {
    pub fn zeros(n_visible: usize, q: usize) -> Self {
        Self {
            b: vec![S::zero(); n_visible],
            w: Mat::zeros(n_visible, q),
            sigma2: S::zero(),
        }
    }

    pub fn n_visible(&self) -> usize {
        self.b.len()
    }

    pub fn q(&self) -> usize {
        self.w.cols()
    }

    pub fn dim(&self) -> usize {
        standard_dim(self.n_visible(), self.q())
    }

    /// Order: `b`, then `W` row-major, then `σ²`.
    pub fn flatten(&self) -> Vec<S> {
        let mut out = Vec::with_capacity(self.dim());
        out.extend_from_slice(&self.b);
        out.extend_from_slice(self.w.as_slice());
        out.push(self.sigma2);
        out
    }

    pub fn from_flat(n_visible: usize, q: usize, flat: &[S]) -> Result<Self> {
        if flat.len() != standard_dim(n_visible, q) {
            return Err(dimension(format!(
                "flat parameter vector has {} entries, expected {}",
                flat.len(),
                standard_dim(n_visible, q)
            )));
        }
        let (b, rest) = flat.split_at(n_visible);
        let (w, s) = rest.split_at(n_visible * q);
        Ok(Self {
            b: b.to_vec(),
            w: Mat::from_vec(n_visible, q, w.to_vec())?,
            sigma2: s[0],
        })
    }
}

impl StandardParams<f64> {
    pub fn lift<S: Scalar>(&self) -> StandardParams<S> {
        StandardParams {
            b: self.b.iter().map(|&x| S::from_f64(x)).collect(),
            w: Mat::from_vec(
                self.w.rows(),
                self.w.cols(),
                self.w.as_slice().iter().map(|&x| S::from_f64(x)).collect(),
            )
            .expect("shape preserved"),
            sigma2: S::from_f64(self.sigma2),
        }
    }
}

/// Parameters with explicit latent mean and diagonal latent covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullParams<S = f64> {
    pub b: Vec<S>,
    pub w: Mat<S>,
    pub sigma2: S,
    pub mu_h: Vec<S>,
    /// Diagonal of Σ_h.
    pub sigma_h: Vec<S>,
}

/// Means and covariance over visible then hidden species.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentState<S = f64> {
    pub mu: Vec<S>,
    pub c: Mat<S>,
}

impl<S: Scalar> MomentState<S> {
    pub fn zeros(n: usize) -> Self {
        Self {
            mu: vec![S::zero(); n],
            c: Mat::zeros(n, n),
        }
    }

    /// Raw second moment ⟨n_i n_j⟩.
    pub fn raw2(&self, i: usize, j: usize) -> S {
        self.c[(i, j)] + self.mu[i] * self.mu[j]
    }
}

fn check_sigma_h<S: Scalar>(sigma_h: &[S], q: usize) -> Result<()> {
    if sigma_h.len() != q {
        return Err(dimension(format!("Σ_h has {} entries for q = {q}", sigma_h.len())));
    }
    if let Some(s) = sigma_h.iter().find(|s| !(s.value() > 0.0)) {
        return Err(domain(format!("Σ_h diagonal must be positive, got {}", s.value())));
    }
    Ok(())
}

/// `b = b̂ − Ŵ Σ_h^{-1/2} μ_h`, `W = Ŵ Σ_h^{-1/2}`.
pub fn to_full<S: Scalar>(theta: &StandardParams<S>, mu_h: &[S], sigma_h: &[S]) -> Result<FullParams<S>> {
    let q = theta.q();
    check_sigma_h(sigma_h, q)?;
    if mu_h.len() != q {
        return Err(dimension("μ_h length differs from the latent dimension"));
    }
    let inv_sqrt: Vec<S> = sigma_h.iter().map(|&s| s.sqrt().recip()).collect();
    let mut w = theta.w.clone();
    for r in 0..w.rows() {
        for k in 0..q {
            w[(r, k)] *= inv_sqrt[k];
        }
    }
    let shift = w.matvec(mu_h);
    let b = theta.b.iter().zip(&shift).map(|(&b, &s)| b - s).collect();
    Ok(FullParams {
        b,
        w,
        sigma2: theta.sigma2,
        mu_h: mu_h.to_vec(),
        sigma_h: sigma_h.to_vec(),
    })
}

/// `b̂ = b + W μ_h`, `Ŵ = W Σ_h^{1/2}`.
pub fn to_standard<S: Scalar>(theta: &FullParams<S>) -> Result<StandardParams<S>> {
    let q = theta.w.cols();
    check_sigma_h(&theta.sigma_h, q)?;
    let shift = theta.w.matvec(&theta.mu_h);
    let b = theta.b.iter().zip(&shift).map(|(&b, &s)| b + s).collect();
    let mut w = theta.w.clone();
    for r in 0..w.rows() {
        for k in 0..q {
            w[(r, k)] *= theta.sigma_h[k].sqrt();
        }
    }
    Ok(StandardParams {
        b,
        w,
        sigma2: theta.sigma2,
    })
}

/// Gaussian moments of the joint visible/hidden distribution.
pub fn moments_from<S: Scalar>(theta: &FullParams<S>) -> MomentState<S> {
    let nv = theta.b.len();
    let q = theta.w.cols();
    let n = nv + q;
    let mut mu = Vec::with_capacity(n);
    let wm = theta.w.matvec(&theta.mu_h);
    mu.extend(theta.b.iter().zip(&wm).map(|(&b, &s)| b + s));
    mu.extend_from_slice(&theta.mu_h);
    let mut c = Mat::zeros(n, n);
    for i in 0..nv {
        for j in 0..nv {
            let mut acc = S::zero();
            for k in 0..q {
                acc += theta.w[(i, k)] * theta.sigma_h[k] * theta.w[(j, k)];
            }
            if i == j {
                acc += theta.sigma2;
            }
            c[(i, j)] = acc;
        }
        for k in 0..q {
            let x = theta.w[(i, k)] * theta.sigma_h[k];
            c[(i, nv + k)] = x;
            c[(nv + k, i)] = x;
        }
    }
    for k in 0..q {
        c[(nv + k, nv + k)] = theta.sigma_h[k];
    }
    MomentState { mu, c }
}

/// Column means and covariance (divisor `M`).
pub fn sample_moments(x: &Mat) -> Result<(Vec<f64>, Mat)> {
    let m = x.rows();
    let n = x.cols();
    if m == 0 {
        return Err(domain("no samples"));
    }
    if !x.is_finite() {
        return Err(domain("data contain non-finite values"));
    }
    let mut mean = vec![0.0; n];
    for r in 0..m {
        for (acc, v) in mean.iter_mut().zip(x.row(r)) {
            *acc += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= m as f64);
    let mut cov = Mat::zeros(n, n);
    for r in 0..m {
        let row = x.row(r);
        for i in 0..n {
            let di = row[i] - mean[i];
            for j in 0..=i {
                cov[(i, j)] += di * (row[j] - mean[j]);
            }
        }
    }
    for i in 0..n {
        for j in 0..=i {
            let v = cov[(i, j)] / m as f64;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    Ok((mean, cov))
}

/// Flips each eigenvector so that `uᵀ1 ≥ 0`, falling back to the sign of
/// the first nonzero entry when the sum vanishes.
pub fn apply_sign_convention(vectors: &mut Mat) {
    let n = vectors.rows();
    for k in 0..vectors.cols() {
        let col = vectors.col(k);
        let sum: f64 = col.iter().sum();
        let scale = col.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let flip = if sum.abs() > TIE_TOLERANCE * scale.max(1e-300) * n as f64 {
            sum < 0.0
        } else {
            col.iter()
                .find(|x| x.abs() > TIE_TOLERANCE * scale)
                .is_some_and(|&x| x < 0.0)
        };
        if flip {
            for r in 0..n {
                vectors[(r, k)] = -vectors[(r, k)];
            }
        }
    }
}

/// Orders tied eigenvalues by their (sign-fixed) eigenvectors, descending
/// lexicographically, so repeated runs agree.
fn order_ties(eig: &mut SymmetricEigen) {
    let n = eig.values.len();
    let scale = eig.values.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-300);
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && (eig.values[end - 1] - eig.values[end]).abs() <= TIE_TOLERANCE * scale {
            end += 1;
        }
        if end - start > 1 {
            let mut idx: Vec<usize> = (start..end).collect();
            idx.sort_by(|&a, &b| {
                for r in 0..n {
                    match eig.vectors[(r, b)].total_cmp(&eig.vectors[(r, a)]) {
                        Ordering::Equal => continue,
                        o => return o,
                    }
                }
                Ordering::Equal
            });
            let cols: Vec<Vec<f64>> = idx.iter().map(|&c| eig.vectors.col(c)).collect();
            let vals: Vec<f64> = idx.iter().map(|&c| eig.values[c]).collect();
            for (off, (col, v)) in cols.into_iter().zip(vals).enumerate() {
                eig.values[start + off] = v;
                for r in 0..n {
                    eig.vectors[(r, start + off)] = col[r];
                }
            }
        }
        start = end;
    }
}

/// Maximum-likelihood fit together with the oriented eigenbasis it used.
#[derive(Debug, Clone)]
pub struct PpcaFit {
    pub params: StandardParams,
    pub eigen: SymmetricEigen,
}

/// ML solution from a mean and covariance.
pub fn fit_from_moments(mean: Vec<f64>, cov: &Mat, q: usize) -> Result<PpcaFit> {
    let nv = cov.rows();
    if q == 0 || q >= nv {
        return Err(domain(format!("latent dimension q = {q} needs 1 <= q < {nv}")));
    }
    let mut eigen = symmetric_eigen(cov)?;
    apply_sign_convention(&mut eigen.vectors);
    order_ties(&mut eigen);
    let sigma2 = eigen.values[q..].iter().sum::<f64>() / (nv - q) as f64;
    let sigma2 = sigma2.max(0.0);
    let mut w = Mat::zeros(nv, q);
    for k in 0..q {
        let s = libm::sqrt((eigen.values[k] - sigma2).max(0.0));
        for r in 0..nv {
            w[(r, k)] = eigen.vectors[(r, k)] * s;
        }
    }
    Ok(PpcaFit {
        params: StandardParams { b: mean, w, sigma2 },
        eigen,
    })
}

/// Fit on an `M × N_v` data matrix. `variance_floor` pairs a column with a
/// value that replaces its diagonal covariance entry.
pub fn ml_fit(x: &Mat, q: usize, variance_floor: &[(usize, f64)]) -> Result<PpcaFit> {
    if x.rows() < 2 {
        return Err(domain("need at least two samples"));
    }
    if q == 0 || q >= x.cols() {
        return Err(domain(format!("latent dimension q = {q} needs 1 <= q < {}", x.cols())));
    }
    let (mean, mut cov) = sample_moments(x)?;
    for &(i, v) in variance_floor {
        if i >= cov.rows() {
            return Err(domain(format!("variance floor names column {i} of {}", cov.rows())));
        }
        cov[(i, i)] = v;
    }
    fit_from_moments(mean, &cov, q)
}

pub fn ml_estimate(x: &Mat, q: usize, variance_floor: &[(usize, f64)]) -> Result<StandardParams> {
    ml_fit(x, q, variance_floor).map(|f| f.params)
}

/// PPCA log-likelihood of the rows of `x` under standard parameters.
pub fn log_likelihood(x: &Mat, theta: &StandardParams) -> Result<f64> {
    let nv = theta.n_visible();
    if x.cols() != nv {
        return Err(dimension("data width differs from the parameter dimension"));
    }
    let mut c = theta.w.matmul(&theta.w.transpose());
    for i in 0..nv {
        c[(i, i)] += theta.sigma2;
    }
    let l = cholesky(&c)?;
    let logdet: f64 = (0..nv).map(|i| 2.0 * libm::log(l[(i, i)])).sum();
    let mut quad = 0.0;
    for r in 0..x.rows() {
        let d: Vec<f64> = x.row(r).iter().zip(&theta.b).map(|(a, b)| a - b).collect();
        let s = cholesky_solve(&l, &d);
        quad += d.iter().zip(&s).map(|(a, b)| a * b).sum::<f64>();
    }
    let m = x.rows() as f64;
    Ok(-0.5 * (m * (nv as f64 * libm::log(2.0 * core::f64::consts::PI) + logdet) + quad))
}

/// Per-timepoint standard parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSeries {
    pub times: Vec<f64>,
    pub params: Vec<StandardParams>,
}

impl ParamSeries {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn n_visible(&self) -> usize {
        self.params.first().map_or(0, |p| p.n_visible())
    }

    pub fn q(&self) -> usize {
        self.params.first().map_or(0, |p| p.q())
    }

    /// `T × D̂` row-major flattened series.
    pub fn flat(&self) -> Vec<Vec<f64>> {
        self.params.iter().map(|p| p.flatten()).collect()
    }

    pub fn from_flat(times: Vec<f64>, n_visible: usize, q: usize, rows: &[Vec<f64>]) -> Result<Self> {
        if rows.len() != times.len() {
            return Err(dimension("series rows differ from the number of times"));
        }
        let params = rows
            .iter()
            .map(|r| StandardParams::from_flat(n_visible, q, r))
            .collect::<Result<_>>()?;
        Ok(Self { times, params })
    }
}

/// Applies [`ml_estimate`] at every timepoint of `ds` on the `visible` columns.
pub fn estimate_series(
    ds: &EnsembleDataset,
    visible: &[usize],
    q: usize,
    variance_floor: &[(usize, f64)],
) -> Result<ParamSeries> {
    let params = (0..ds.n_times())
        .map(|ti| {
            let x = ds.data_matrix_at_index(ti, visible)?;
            ml_estimate(&x, q, variance_floor)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ParamSeries {
        times: ds.times.clone(),
        params,
    })
}

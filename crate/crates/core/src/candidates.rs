//! Reaction-motif approximations of the parameter dynamics.
//!
//! Each motif is a single mass-action reaction with unit rate. Its raw
//! moment equations follow from the master equation,
//! `d⟨n_i⟩ = ν_i⟨a⟩` and `d⟨n_i n_j⟩ = ν_j⟨n_i a⟩ + ν_i⟨n_j a⟩ + ν_iν_j⟨a⟩`,
//! with third moments replaced by their Gaussian closure. The tracked
//! observables are then mapped to parameter derivatives and on to the
//! standard frame.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{dimension, domain, Result};
use crate::linalg::Mat;
use crate::pca::{moments_from, to_full, FullParams, MomentState, ParamSeries, StandardParams};
use crate::scalar::{Dual, Scalar};

/// Smoothing constant of the normalized Fourier series.
pub const FOURIER_EPSILON: f64 = 1e-8;
/// Floor applied to candidate standard deviations.
pub const STD_FLOOR: f64 = 1e-12;

static CANDIDATE_EVALUATIONS: AtomicUsize = AtomicUsize::new(0);

/// Number of candidate evaluations performed so far in this process.
pub fn candidate_evaluations() -> usize {
    CANDIDATE_EVALUATIONS.load(Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MotifKind {
    /// P → 2P
    Birth,
    /// H → ∅
    Death,
    /// H + P → 2H
    PredatorPrey,
    /// A + R → R
    Conserving,
}

impl MotifKind {
    pub fn arity(self) -> usize {
        match self {
            MotifKind::Birth | MotifKind::Death => 1,
            MotifKind::PredatorPrey | MotifKind::Conserving => 2,
        }
    }
}

/// A motif with its roles bound to species indices (visible, then hidden).
///
/// Role order: Birth `[P]`, Death `[H]`, PredatorPrey `[H, P]`,
/// Conserving `[A, R]` with `R` the conserved species.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ReactionMotif {
    pub kind: MotifKind,
    pub roles: Vec<usize>,
}

impl ReactionMotif {
    pub fn new(kind: MotifKind, roles: Vec<usize>) -> Result<Self> {
        if roles.len() != kind.arity() {
            return Err(domain(format!(
                "{kind:?} takes {} species, got {}",
                kind.arity(),
                roles.len()
            )));
        }
        if roles.len() == 2 && roles[0] == roles[1] {
            return Err(domain(format!("{kind:?} needs two distinct species")));
        }
        Ok(Self { kind, roles })
    }

    pub fn birth(p: usize) -> Self {
        Self {
            kind: MotifKind::Birth,
            roles: vec![p],
        }
    }

    pub fn death(h: usize) -> Self {
        Self {
            kind: MotifKind::Death,
            roles: vec![h],
        }
    }

    pub fn predator_prey(h: usize, p: usize) -> Result<Self> {
        Self::new(MotifKind::PredatorPrey, vec![h, p])
    }

    pub fn conserving(a: usize, r: usize) -> Result<Self> {
        Self::new(MotifKind::Conserving, vec![a, r])
    }

    /// The conserved species of a Conserving motif.
    pub fn conserved(&self) -> Option<usize> {
        (self.kind == MotifKind::Conserving).then(|| self.roles[1])
    }

    fn check(&self, n_species: usize) -> Result<()> {
        if self.roles.len() != self.kind.arity() {
            return Err(domain(format!("{:?} has the wrong number of roles", self.kind)));
        }
        if let Some(&r) = self.roles.iter().find(|&&r| r >= n_species) {
            return Err(domain(format!(
                "motif species {r} out of range for {n_species} species"
            )));
        }
        if self.roles.len() == 2 && self.roles[0] == self.roles[1] {
            return Err(domain(format!("{:?} needs two distinct species", self.kind)));
        }
        Ok(())
    }

    /// Propensity factors and nonzero stoichiometry.
    fn law(&self) -> (Vec<usize>, Vec<(usize, f64)>) {
        let r = &self.roles;
        match self.kind {
            MotifKind::Birth => (vec![r[0]], vec![(r[0], 1.0)]),
            MotifKind::Death => (vec![r[0]], vec![(r[0], -1.0)]),
            MotifKind::PredatorPrey => (vec![r[0], r[1]], vec![(r[0], 1.0), (r[1], -1.0)]),
            MotifKind::Conserving => (vec![r[0], r[1]], vec![(r[0], -1.0)]),
        }
    }
}

/// Birth and death on every species plus predator-prey on every ordered
/// pair of distinct species.
pub fn lotka_volterra_motifs(species: &[usize]) -> Vec<ReactionMotif> {
    let mut out: Vec<ReactionMotif> = species.iter().map(|&s| ReactionMotif::birth(s)).collect();
    out.extend(species.iter().map(|&s| ReactionMotif::death(s)));
    for &h in species {
        for &p in species {
            if h != p {
                out.push(ReactionMotif {
                    kind: MotifKind::PredatorPrey,
                    roles: vec![h, p],
                });
            }
        }
    }
    out
}

/// `A + R → R` for every `A` in `others`.
pub fn conserving_motifs(conserved: usize, others: &[usize]) -> Result<Vec<ReactionMotif>> {
    others
        .iter()
        .map(|&a| ReactionMotif::conserving(a, conserved))
        .collect()
}

/// `⟨n_x n_y n_z⟩ ≈ −2μ_xμ_yμ_z + μ_x⟨n_y n_z⟩ + μ_y⟨n_x n_z⟩ + μ_z⟨n_x n_y⟩`.
pub fn gaussian_closure_third_moment<S: Scalar>(mu: [S; 3], m_yz: S, m_xz: S, m_xy: S) -> S {
    let [x, y, z] = mu;
    S::from_f64(-2.0) * x * y * z + x * m_yz + y * m_xz + z * m_xy
}

fn raw3<S: Scalar>(phi: &MomentState<S>, i: usize, j: usize, k: usize) -> S {
    gaussian_closure_third_moment(
        [phi.mu[i], phi.mu[j], phi.mu[k]],
        phi.raw2(j, k),
        phi.raw2(i, k),
        phi.raw2(i, j),
    )
}

fn expect_a<S: Scalar>(phi: &MomentState<S>, factors: &[usize]) -> S {
    match factors {
        [x] => phi.mu[*x],
        [x, y] => phi.raw2(*x, *y),
        _ => unreachable!("motif propensities have degree one or two"),
    }
}

fn expect_na<S: Scalar>(phi: &MomentState<S>, i: usize, factors: &[usize]) -> S {
    match factors {
        [x] => phi.raw2(i, *x),
        [x, y] => raw3(phi, i, *x, *y),
        _ => unreachable!("motif propensities have degree one or two"),
    }
}

/// Closed derivative of all means and covariances under one motif.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentDerivative<S = f64> {
    pub dmu: Vec<S>,
    pub dc: Mat<S>,
}

/// The observables matched to the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackedDerivative<S = f64> {
    pub dmu_v: Vec<S>,
    /// `N_v × q`.
    pub dc_vh: Mat<S>,
    pub dtr_cv: S,
    pub dmu_h: Vec<S>,
    /// Diagonal of dΣ_h.
    pub dsigma_h: Vec<S>,
}

impl<S: Scalar> MomentDerivative<S> {
    pub fn tracked(&self, n_visible: usize) -> TrackedDerivative<S> {
        let n = self.dmu.len();
        let q = n - n_visible;
        let mut dc_vh = Mat::zeros(n_visible, q);
        for i in 0..n_visible {
            for k in 0..q {
                dc_vh[(i, k)] = self.dc[(i, n_visible + k)];
            }
        }
        let mut dtr = S::zero();
        for i in 0..n_visible {
            dtr += self.dc[(i, i)];
        }
        TrackedDerivative {
            dmu_v: self.dmu[..n_visible].to_vec(),
            dc_vh,
            dtr_cv: dtr,
            dmu_h: self.dmu[n_visible..].to_vec(),
            dsigma_h: (0..q).map(|k| self.dc[(n_visible + k, n_visible + k)]).collect(),
        }
    }
}

pub fn closed_moment_rhs<S: Scalar>(motif: &ReactionMotif, phi: &MomentState<S>) -> Result<MomentDerivative<S>> {
    let n = phi.mu.len();
    if phi.c.rows() != n || phi.c.cols() != n {
        return Err(dimension("moment state covariance shape differs from the mean"));
    }
    motif.check(n)?;
    let (factors, nu) = motif.law();
    let mut nu_full = vec![0.0; n];
    for &(s, v) in &nu {
        nu_full[s] = v;
    }
    let ea = expect_a(phi, &factors);
    let mut dmu = vec![S::zero(); n];
    for &(s, v) in &nu {
        dmu[s] = S::from_f64(v) * ea;
    }
    // ⟨n_j a⟩ for every j, closed.
    let na: Vec<S> = (0..n).map(|j| expect_na(phi, j, &factors)).collect();
    let mut dc = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let (vi, vj) = (nu_full[i], nu_full[j]);
            if vi == 0.0 && vj == 0.0 {
                continue;
            }
            let draw = S::from_f64(vj) * na[i] + S::from_f64(vi) * na[j] + S::from_f64(vi * vj) * ea;
            let d = draw - dmu[i] * phi.mu[j] - phi.mu[i] * dmu[j];
            dc[(i, j)] = d;
            dc[(j, i)] = d;
        }
    }
    Ok(MomentDerivative { dmu, dc })
}

/// Derivatives of the full-frame parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FullDerivative<S = f64> {
    pub db: Vec<S>,
    pub dw: Mat<S>,
    pub dsigma2: S,
    pub dmu_h: Vec<S>,
    pub dsigma_h: Vec<S>,
}

/// `F_W μ_h + W F_μh`, the part of `dμ_v` not carried by `db`.
fn loading_shift<S: Scalar>(dw: &Mat<S>, w: &Mat<S>, mu_h: &[S], dmu_h: &[S]) -> Vec<S> {
    (0..w.rows())
        .map(|i| {
            let mut s = S::zero();
            for k in 0..w.cols() {
                s += dw[(i, k)] * mu_h[k] + w[(i, k)] * dmu_h[k];
            }
            s
        })
        .collect()
}

/// Differentiates the moment map: `C_vh = WΣ_h`, `μ_v = b + Wμ_h`,
/// `Tr C_v = Tr(WΣ_hWᵀ) + N_v σ²`.
pub fn observables_to_param_rhs<S: Scalar>(
    d: &TrackedDerivative<S>,
    theta: &FullParams<S>,
) -> Result<FullDerivative<S>> {
    let nv = theta.b.len();
    let q = theta.w.cols();
    if d.dmu_v.len() != nv || d.dc_vh.rows() != nv || d.dc_vh.cols() != q || d.dmu_h.len() != q || d.dsigma_h.len() != q
    {
        return Err(dimension("tracked derivative does not match the parameter shapes"));
    }
    if let Some(s) = theta.sigma_h.iter().find(|s| !(s.value() > 0.0)) {
        return Err(domain(format!("Σ_h is singular (diagonal entry {})", s.value())));
    }
    let mut dw = Mat::zeros(nv, q);
    for i in 0..nv {
        for k in 0..q {
            dw[(i, k)] = (d.dc_vh[(i, k)] - theta.w[(i, k)] * d.dsigma_h[k]) / theta.sigma_h[k];
        }
    }
    let shift = loading_shift(&dw, &theta.w, &theta.mu_h, &d.dmu_h);
    let db = d.dmu_v.iter().zip(&shift).map(|(&m, &s)| m - s).collect();
    let mut dtr_w = S::zero();
    for i in 0..nv {
        for k in 0..q {
            let w = theta.w[(i, k)];
            dtr_w += S::from_f64(2.0) * w * dw[(i, k)] * theta.sigma_h[k] + w * w * d.dsigma_h[k];
        }
    }
    Ok(FullDerivative {
        db,
        dw,
        dsigma2: (d.dtr_cv - dtr_w) / S::from_f64(nv as f64),
        dmu_h: d.dmu_h.clone(),
        dsigma_h: d.dsigma_h.clone(),
    })
}

/// `F̂_b̂ = F_b + F_W μ_h + W F_μh`, `F̂_Ŵ = F_W Σ_h^{1/2} + ½ W Σ_h^{-1/2} F_Σh`.
pub fn to_standard_rhs<S: Scalar>(f: &FullDerivative<S>, theta: &FullParams<S>) -> Result<StandardParams<S>> {
    let nv = theta.b.len();
    let q = theta.w.cols();
    if f.db.len() != nv || f.dw.rows() != nv || f.dw.cols() != q || f.dmu_h.len() != q || f.dsigma_h.len() != q {
        return Err(dimension("parameter derivative does not match the parameter shapes"));
    }
    if theta.sigma_h.len() != q {
        return Err(domain("Σ_h must be diagonal with q entries"));
    }
    if let Some(s) = theta.sigma_h.iter().find(|s| !(s.value() > 0.0)) {
        return Err(domain(format!("Σ_h diagonal must be positive, got {}", s.value())));
    }
    let shift = loading_shift(&f.dw, &theta.w, &theta.mu_h, &f.dmu_h);
    let b = f.db.iter().zip(&shift).map(|(&x, &s)| x + s).collect();
    let mut w = Mat::zeros(nv, q);
    for k in 0..q {
        let root = theta.sigma_h[k].sqrt();
        for i in 0..nv {
            w[(i, k)] = f.dw[(i, k)] * root + S::from_f64(0.5) * theta.w[(i, k)] * f.dsigma_h[k] / root;
        }
    }
    Ok(StandardParams {
        b,
        w,
        sigma2: f.dsigma2,
    })
}

/// Latent mean and variance as normalized Fourier series in time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentFourier {
    /// Angular frequencies (rad/s).
    pub freqs: Vec<f64>,
    /// `q × L` cosine / sine coefficients of the latent means.
    pub mean_a: Vec<Vec<f64>>,
    pub mean_b: Vec<Vec<f64>>,
    /// `q × L` coefficients of the latent variances.
    pub var_a: Vec<Vec<f64>>,
    pub var_b: Vec<Vec<f64>>,
    pub epsilon: f64,
}

/// `f_l = 2πl / period`, `l = 1..=count`.
pub fn default_frequencies(count: usize, period: f64) -> Vec<f64> {
    (1..=count)
        .map(|l| 2.0 * core::f64::consts::PI * l as f64 / period)
        .collect()
}

fn series_value(t: f64, freqs: &[f64], a: &[f64], b: &[f64], eps: f64) -> (f64, f64, f64) {
    let mut num = 0.0;
    let mut mass = 0.0;
    for l in 0..freqs.len() {
        num += a[l] * libm::cos(freqs[l] * t) + b[l] * libm::sin(freqs[l] * t);
        mass += a[l].abs() + b[l].abs();
    }
    let den = mass.max(1.0) + eps;
    (num / den, num, mass)
}

impl LatentFourier {
    pub fn zeros(q: usize, freqs: Vec<f64>) -> Self {
        let l = freqs.len();
        Self {
            freqs,
            mean_a: vec![vec![0.0; l]; q],
            mean_b: vec![vec![0.0; l]; q],
            var_a: vec![vec![0.0; l]; q],
            var_b: vec![vec![0.0; l]; q],
            epsilon: FOURIER_EPSILON,
        }
    }

    /// Highest frequency only, every coefficient set to one.
    pub fn bootstrap(q: usize, freqs: &[f64]) -> Self {
        let f_max = freqs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut lf = Self::zeros(q, vec![f_max]);
        for k in 0..q {
            lf.mean_a[k][0] = 1.0;
            lf.mean_b[k][0] = 1.0;
            lf.var_a[k][0] = 1.0;
            lf.var_b[k][0] = 1.0;
        }
        lf
    }

    pub fn q(&self) -> usize {
        self.mean_a.len()
    }

    pub fn n_freqs(&self) -> usize {
        self.freqs.len()
    }

    pub fn n_params(&self) -> usize {
        4 * self.q() * self.n_freqs()
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.n_freqs();
        if l == 0 {
            return Err(domain("latent Fourier series needs at least one frequency"));
        }
        let q = self.q();
        for table in [&self.mean_a, &self.mean_b, &self.var_a, &self.var_b] {
            if table.len() != q || table.iter().any(|r| r.len() != l) {
                return Err(dimension("Fourier coefficient tables must all be q × L"));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(domain("Fourier epsilon must be positive"));
        }
        Ok(())
    }

    /// `(μ_h(t), diag Σ_h(t))`.
    pub fn eval(&self, t: f64) -> (Vec<f64>, Vec<f64>) {
        let q = self.q();
        let mu = (0..q)
            .map(|k| series_value(t, &self.freqs, &self.mean_a[k], &self.mean_b[k], self.epsilon).0)
            .collect();
        let var = (0..q)
            .map(|k| 1.0 + self.epsilon + series_value(t, &self.freqs, &self.var_a[k], &self.var_b[k], self.epsilon).0)
            .collect();
        (mu, var)
    }

    /// `(dμ_h/dt, d diag Σ_h/dt)`.
    pub fn time_derivative(&self, t: f64) -> (Vec<f64>, Vec<f64>) {
        let d = |a: &[f64], b: &[f64]| {
            let mut num = 0.0;
            let mut mass = 0.0;
            for l in 0..self.freqs.len() {
                let f = self.freqs[l];
                num += f * (b[l] * libm::cos(f * t) - a[l] * libm::sin(f * t));
                mass += a[l].abs() + b[l].abs();
            }
            num / (mass.max(1.0) + self.epsilon)
        };
        let q = self.q();
        (
            (0..q).map(|k| d(&self.mean_a[k], &self.mean_b[k])).collect(),
            (0..q).map(|k| d(&self.var_a[k], &self.var_b[k])).collect(),
        )
    }

    /// Flat coefficient order: mean_a, mean_b, var_a, var_b, each `q × L`
    /// row-major.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for table in [&self.mean_a, &self.mean_b, &self.var_a, &self.var_b] {
            for row in table {
                out.extend_from_slice(row);
            }
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(dimension("Fourier coefficient vector has the wrong length"));
        }
        let l = self.n_freqs();
        let mut it = flat.chunks_exact(l);
        for table in [&mut self.mean_a, &mut self.mean_b, &mut self.var_a, &mut self.var_b] {
            for row in table.iter_mut() {
                row.copy_from_slice(it.next().expect("length checked"));
            }
        }
        Ok(())
    }

    /// Gradient of each latent output with respect to the flat coefficients.
    /// Output `k < q` is `μ_h,k`, output `q + k` is `Σ_h,kk`; each entry is
    /// a list of `(flat index, ∂/∂coefficient)`.
    pub fn gradients(&self, t: f64) -> Vec<Vec<(usize, f64)>> {
        let q = self.q();
        let l = self.n_freqs();
        let block = q * l;
        let mut out = Vec::with_capacity(2 * q);
        for out_kind in 0..2 {
            for k in 0..q {
                let (a, b, a_off, b_off) = if out_kind == 0 {
                    (&self.mean_a[k], &self.mean_b[k], 0, block)
                } else {
                    (&self.var_a[k], &self.var_b[k], 2 * block, 3 * block)
                };
                let (_, num, mass) = series_value(t, &self.freqs, a, b, self.epsilon);
                let den = mass.max(1.0) + self.epsilon;
                let grows = mass > 1.0;
                let mut g = Vec::with_capacity(2 * l);
                for i in 0..l {
                    let c = libm::cos(self.freqs[i] * t);
                    let s = libm::sin(self.freqs[i] * t);
                    let (da, db) = if grows {
                        (signum0(a[i]), signum0(b[i]))
                    } else {
                        (0.0, 0.0)
                    };
                    g.push((a_off + k * l + i, c / den - num * da / (den * den)));
                    g.push((b_off + k * l + i, s / den - num * db / (den * den)));
                }
                out.push(g);
            }
        }
        out
    }
}

fn signum0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// One `D̂`-block per motif, in standard-parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateVector {
    pub blocks: Vec<Vec<f64>>,
}

impl CandidateVector {
    pub fn flatten(&self) -> Vec<f64> {
        self.blocks.concat()
    }
}

/// Candidate blocks for explicit latent moments, generic over the scalar.
pub fn candidate_blocks<S: Scalar>(
    theta: &StandardParams<S>,
    mu_h: &[S],
    sigma_h: &[S],
    motifs: &[ReactionMotif],
) -> Result<Vec<Vec<S>>> {
    CANDIDATE_EVALUATIONS.fetch_add(1, Ordering::Relaxed);
    let full = to_full(theta, mu_h, sigma_h)?;
    let phi = moments_from(&full);
    let nv = theta.n_visible();
    motifs
        .iter()
        .map(|m| {
            let d = closed_moment_rhs(m, &phi)?;
            let f = observables_to_param_rhs(&d.tracked(nv), &full)?;
            Ok(to_standard_rhs(&f, &full)?.flatten())
        })
        .collect()
}

pub fn candidate_vector(
    theta: &StandardParams,
    t: f64,
    lf: &LatentFourier,
    motifs: &[ReactionMotif],
) -> Result<CandidateVector> {
    if lf.q() != theta.q() {
        return Err(dimension(format!(
            "latent series has q = {}, parameters q = {}",
            lf.q(),
            theta.q()
        )));
    }
    let (mu_h, sigma_h) = lf.eval(t);
    Ok(CandidateVector {
        blocks: candidate_blocks(theta, &mu_h, &sigma_h, motifs)?,
    })
}

/// Flattened candidates and their derivatives with respect to each latent
/// input (`μ_h` entries, then `Σ_h` diagonal entries).
pub fn candidate_latent_jacobian(
    theta: &StandardParams,
    mu_h: &[f64],
    sigma_h: &[f64],
    motifs: &[ReactionMotif],
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let q = mu_h.len();
    let lifted: StandardParams<Dual> = theta.lift();
    let mut value = Vec::new();
    let mut jac = Vec::with_capacity(2 * q);
    for v in 0..2 * q {
        let mu: Vec<Dual> = (0..q)
            .map(|k| Dual::new(mu_h[k], if v == k { 1.0 } else { 0.0 }))
            .collect();
        let sg: Vec<Dual> = (0..q)
            .map(|k| Dual::new(sigma_h[k], if v == q + k { 1.0 } else { 0.0 }))
            .collect();
        let flat: Vec<Dual> = candidate_blocks(&lifted, &mu, &sg, motifs)?.concat();
        if v == 0 {
            value = flat.iter().map(|d| d.v).collect();
        }
        jac.push(flat.iter().map(|d| d.d).collect());
    }
    if q == 0 {
        value = candidate_blocks(theta, mu_h, sigma_h, motifs)?.concat();
    }
    Ok((value, jac))
}

/// Per-entry mean and floored standard deviation of the flattened candidates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateStandardization {
    pub block_dim: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl CandidateStandardization {
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }
}

/// Mean and standard deviation (divisor n). The mean is accumulated as an
/// offset from the first row so a constant column has exactly zero spread.
pub fn column_moments(rows: &[Vec<f64>], floor: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let first = rows.first().ok_or_else(|| domain("no rows to standardize"))?;
    let d = first.len();
    let n = rows.len() as f64;
    let mut mean = vec![0.0; d];
    for r in rows {
        if r.len() != d {
            return Err(dimension("ragged rows"));
        }
        for j in 0..d {
            mean[j] += r[j] - first[j];
        }
    }
    for j in 0..d {
        mean[j] = first[j] + mean[j] / n;
    }
    let mut var = vec![0.0; d];
    for r in rows {
        for j in 0..d {
            let e = r[j] - mean[j];
            var[j] += e * e;
        }
    }
    let std = var.iter().map(|v| libm::sqrt(v / n).max(floor)).collect();
    Ok((mean, std))
}

/// Bootstrapped candidate statistics over one or more parameter series.
pub fn fit_candidate_standardization(
    series: &[&ParamSeries],
    lf_bootstrap: &LatentFourier,
    motifs: &[ReactionMotif],
) -> Result<CandidateStandardization> {
    let mut rows = Vec::new();
    for s in series {
        for (t, p) in s.times.iter().zip(&s.params) {
            rows.push(candidate_vector(p, *t, lf_bootstrap, motifs)?.flatten());
        }
    }
    if rows.is_empty() {
        return Err(domain("candidate standardization needs a non-empty series"));
    }
    let block_dim = series[0].params[0].dim();
    let (mean, std) = column_moments(&rows, STD_FLOOR)?;
    Ok(CandidateStandardization { block_dim, mean, std })
}

/// Parses `Birth`, `Death`, `PredatorPrey`, `Conserving` (case-insensitive).
pub fn parse_motif_kind(name: &str) -> Result<MotifKind> {
    let lower: String = name
        .chars()
        .map(|c| c.to_ascii_lowercase())
        .filter(|c| *c != '_' && *c != '-')
        .collect();
    match lower.as_str() {
        "birth" => Ok(MotifKind::Birth),
        "death" => Ok(MotifKind::Death),
        "predatorprey" => Ok(MotifKind::PredatorPrey),
        "conserving" => Ok(MotifKind::Conserving),
        _ => Err(domain(format!("unknown motif kind {name}"))),
    }
}

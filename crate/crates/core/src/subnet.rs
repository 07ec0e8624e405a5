//! Dense ReLU network for the parameter derivatives, trained with Adam.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::candidates::{
    candidate_latent_jacobian, candidate_vector, column_moments, LatentFourier, ReactionMotif, STD_FLOOR,
};
use crate::error::{dimension, domain, Error, Result};
use crate::pca::{standard_dim, StandardParams};
use crate::tvr::TrainingPairs;

pub const CHECKPOINT_VERSION: u32 = 1;
pub const DEFAULT_DROPOUT: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InputMode {
    ReactionCandidates,
    ParametersOnly,
}

/// How derivatives of the candidates with respect to the latent moments
/// are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GradientMode {
    /// Forward-mode dual numbers, exact to rounding.
    ForwardDual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubnetSpec {
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub weight_cutoff: f64,
    pub input_mode: InputMode,
    pub output_dim: usize,
}

impl SubnetSpec {
    /// One hidden layer of 25 units, cutoff 1.
    pub fn shallow(output_dim: usize, input_mode: InputMode) -> Self {
        Self {
            hidden: vec![25],
            dropout: DEFAULT_DROPOUT,
            weight_cutoff: 1.0,
            input_mode,
            output_dim,
        }
    }

    /// Eight hidden layers of 500 units, cutoff 5.
    pub fn deep(output_dim: usize, input_mode: InputMode) -> Self {
        Self {
            hidden: vec![500; 8],
            dropout: DEFAULT_DROPOUT,
            weight_cutoff: 5.0,
            input_mode,
            output_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() {
            return Err(domain("subnet needs at least one hidden layer"));
        }
        if self.hidden.contains(&0) {
            return Err(domain("hidden layer widths must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(domain(format!("dropout rate {} outside [0, 1)", self.dropout)));
        }
        if !(self.weight_cutoff > 0.0 && self.weight_cutoff.is_finite()) {
            return Err(domain("weight cutoff must be positive and finite"));
        }
        if self.output_dim == 0 {
            return Err(domain("output dimension must be positive"));
        }
        Ok(())
    }
}

/// `out × in` weights plus bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Self {
            weights: vec![vec![0.0; n_in]; n_out],
            bias: vec![0.0; n_out],
        }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).fold(*b, |acc, (w, v)| acc + w * v))
            .collect()
    }
}

/// Hidden layers use ReLU followed by inverted dropout; the last layer is
/// linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Layer>,
    pub dropout: f64,
}

struct Cache {
    /// Input to each layer.
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of each hidden layer.
    pre: Vec<Vec<f64>>,
    /// Dropout scale per hidden unit (0 or 1/(1-p)).
    masks: Vec<Vec<f64>>,
    output: Vec<f64>,
}

/// Same shape as the network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGradient {
    pub layers: Vec<Layer>,
}

impl Mlp {
    /// He-uniform weights `U(±√(6/fan_in))`, zero biases, then clipped.
    pub fn he_uniform<R: Rng + ?Sized>(sizes: &[usize], dropout: f64, cutoff: f64, rng: &mut R) -> Self {
        let layers = sizes
            .windows(2)
            .map(|w| {
                let bound = libm::sqrt(6.0 / w[0] as f64);
                let mut layer = Layer::zeros(w[0], w[1]);
                for row in &mut layer.weights {
                    for v in row.iter_mut() {
                        *v = (rng.random::<f64>() * 2.0 - 1.0) * bound;
                    }
                }
                layer
            })
            .collect();
        let mut mlp = Self { layers, dropout };
        mlp.clip(cutoff);
        mlp
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.first().map_or(0, |r| r.len())
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.bias.len())
    }

    pub fn clip(&mut self, cutoff: f64) {
        for layer in &mut self.layers {
            for row in &mut layer.weights {
                for v in row.iter_mut() {
                    *v = v.clamp(-cutoff, cutoff);
                }
            }
        }
    }

    pub fn max_abs_weight(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().flatten())
            .fold(0.0, |m: f64, v| m.max(v.abs()))
    }

    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.bias.len() * (1 + l.weights.first().map_or(0, |r| r.len())))
            .sum()
    }

    fn run<R: Rng + ?Sized>(&self, x: &[f64], mut rng: Option<&mut R>) -> Cache {
        let last = self.layers.len() - 1;
        let mut cache = Cache {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(last),
            masks: Vec::with_capacity(last),
            output: Vec::new(),
        };
        let mut a = x.to_vec();
        let keep = 1.0 - self.dropout;
        for (l, layer) in self.layers.iter().enumerate() {
            let z = layer.apply(&a);
            cache.inputs.push(a);
            if l == last {
                cache.output = z;
                break;
            }
            let mask: Vec<f64> = match rng.as_deref_mut() {
                Some(r) if self.dropout > 0.0 => z
                    .iter()
                    .map(|_| if r.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                    .collect(),
                _ => vec![1.0; z.len()],
            };
            a = z.iter().zip(&mask).map(|(v, m)| v.max(0.0) * m).collect();
            cache.pre.push(z);
            cache.masks.push(mask);
        }
        cache
    }

    /// Dropout is active only when `rng` is given.
    pub fn forward<R: Rng + ?Sized>(&self, x: &[f64], rng: Option<&mut R>) -> Vec<f64> {
        self.run(x, rng).output
    }

    pub fn zero_gradient(&self) -> MlpGradient {
        MlpGradient {
            layers: self
                .layers
                .iter()
                .map(|l| Layer::zeros(l.weights.first().map_or(0, |r| r.len()), l.bias.len()))
                .collect(),
        }
    }

    /// Accumulates `∂/∂u` of `dy · y` into `grad` and returns `∂/∂x`.
    fn backward(&self, cache: &Cache, dy: &[f64], grad: &mut MlpGradient) -> Vec<f64> {
        let mut delta = dy.to_vec();
        for l in (0..self.layers.len()).rev() {
            let input = &cache.inputs[l];
            let g = &mut grad.layers[l];
            for (o, d) in delta.iter().enumerate() {
                g.bias[o] += d;
                for (gw, a) in g.weights[o].iter_mut().zip(input) {
                    *gw += d * a;
                }
            }
            let mut back = vec![0.0; input.len()];
            for (o, d) in delta.iter().enumerate() {
                for (b, w) in back.iter_mut().zip(&self.layers[l].weights[o]) {
                    *b += d * w;
                }
            }
            if l == 0 {
                return back;
            }
            let (pre, mask) = (&cache.pre[l - 1], &cache.masks[l - 1]);
            delta = back
                .iter()
                .zip(pre)
                .zip(mask)
                .map(|((b, z), m)| if *z > 0.0 { b * m } else { 0.0 })
                .collect();
        }
        unreachable!("network has at least one layer")
    }
}

/// Columnwise affine standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardization {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let (mean, std) = column_moments(rows, STD_FLOOR)?;
        Ok(Self { mean, std })
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    pub fn inverse(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| m + s * v)
            .collect()
    }
}

/// One training example: state, time and derivative target.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub theta: StandardParams,
    pub t: f64,
    pub target: Vec<f64>,
}

pub fn examples_from_pairs(pairs: &[&TrainingPairs]) -> Result<Vec<Example>> {
    let mut out = Vec::new();
    for p in pairs {
        for ((x, t), y) in p.inputs.iter().zip(&p.times).zip(&p.targets) {
            out.push(Example {
                theta: StandardParams::from_flat(p.n_visible, p.q, x)?,
                t: *t,
                target: y.clone(),
            });
        }
    }
    Ok(out)
}

/// Gradient of the loss over network weights and Fourier coefficients
/// (flat order of [`LatentFourier::to_flat`]).
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub net: MlpGradient,
    pub lf: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubnetModel {
    pub spec: SubnetSpec,
    pub n_visible: usize,
    pub q: usize,
    pub motifs: Vec<ReactionMotif>,
    pub net: Mlp,
    pub input_std: Standardization,
    pub target_std: Standardization,
    pub lf: LatentFourier,
    pub gradient_mode: GradientMode,
}

impl SubnetModel {
    /// He-uniform network with zero Fourier coefficients and identity
    /// standardizations.
    pub fn new(
        spec: SubnetSpec,
        n_visible: usize,
        q: usize,
        motifs: Vec<ReactionMotif>,
        freqs: Vec<f64>,
        seed: u64,
    ) -> Result<Self> {
        spec.validate()?;
        let d = standard_dim(n_visible, q);
        if spec.output_dim != d {
            return Err(dimension(format!(
                "output dimension {} differs from D̂ = {d}",
                spec.output_dim
            )));
        }
        if freqs.is_empty() {
            return Err(domain("latent Fourier series needs at least one frequency"));
        }
        let n_in = match spec.input_mode {
            InputMode::ReactionCandidates => {
                if motifs.is_empty() {
                    return Err(domain("reaction-candidate input needs at least one motif"));
                }
                motifs.len() * d
            }
            InputMode::ParametersOnly => d,
        };
        let mut sizes = vec![n_in];
        sizes.extend_from_slice(&spec.hidden);
        sizes.push(d);
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let net = Mlp::he_uniform(&sizes, spec.dropout, spec.weight_cutoff, &mut rng);
        Ok(Self {
            n_visible,
            q,
            motifs,
            net,
            input_std: Standardization::identity(n_in),
            target_std: Standardization::identity(d),
            lf: LatentFourier::zeros(q, freqs),
            gradient_mode: GradientMode::ForwardDual,
            spec,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    fn check_theta(&self, theta: &StandardParams) -> Result<()> {
        if theta.n_visible() != self.n_visible || theta.q() != self.q {
            return Err(domain(format!(
                "state has N_v = {}, q = {}; model expects {}, {}",
                theta.n_visible(),
                theta.q(),
                self.n_visible,
                self.q
            )));
        }
        Ok(())
    }

    /// Unstandardized network input.
    pub fn raw_input(&self, theta: &StandardParams, t: f64) -> Result<Vec<f64>> {
        self.check_theta(theta)?;
        match self.spec.input_mode {
            InputMode::ReactionCandidates => Ok(candidate_vector(theta, t, &self.lf, &self.motifs)?.flatten()),
            InputMode::ParametersOnly => Ok(theta.flatten()),
        }
    }

    /// Fits input and target standardizations on the pooled pairs. The
    /// candidate inputs use the bootstrap latent series.
    pub fn fit_standardization(&mut self, examples: &[Example]) -> Result<()> {
        if examples.is_empty() {
            return Err(domain("standardization needs at least one example"));
        }
        let boot = LatentFourier::bootstrap(self.q, &self.lf.freqs);
        let mut inputs = Vec::with_capacity(examples.len());
        for e in examples {
            self.check_theta(&e.theta)?;
            inputs.push(match self.spec.input_mode {
                InputMode::ReactionCandidates => candidate_vector(&e.theta, e.t, &boot, &self.motifs)?.flatten(),
                InputMode::ParametersOnly => e.theta.flatten(),
            });
        }
        self.input_std = Standardization::fit(&inputs)?;
        let targets: Vec<Vec<f64>> = examples.iter().map(|e| e.target.clone()).collect();
        self.target_std = Standardization::fit(&targets)?;
        Ok(())
    }

    /// Standardized network output.
    pub fn forward_standardized<R: Rng + ?Sized>(
        &self,
        theta: &StandardParams,
        t: f64,
        rng: Option<&mut R>,
    ) -> Result<Vec<f64>> {
        let x = self.input_std.forward(&self.raw_input(theta, t)?);
        Ok(self.net.forward(&x, rng))
    }

    /// `dθ̂/dt`; dropout is active only when `rng` is given.
    pub fn forward<R: Rng + ?Sized>(&self, theta: &StandardParams, t: f64, rng: Option<&mut R>) -> Result<Vec<f64>> {
        Ok(self.target_std.inverse(&self.forward_standardized(theta, t, rng)?))
    }

    /// Inference-mode derivative.
    pub fn predict(&self, theta: &StandardParams, t: f64) -> Result<Vec<f64>> {
        self.forward::<ChaCha20Rng>(theta, t, None)
    }

    /// Mean over batch and components of the squared standardized error,
    /// in inference mode.
    pub fn loss(&self, batch: &[Example]) -> Result<f64> {
        if batch.is_empty() {
            return Err(domain("loss needs a non-empty batch"));
        }
        let d = self.spec.output_dim as f64;
        let mut total = 0.0;
        for e in batch {
            let y = self.forward_standardized::<ChaCha20Rng>(&e.theta, e.t, None)?;
            let zt = self.target_std.forward(&e.target);
            total += y.iter().zip(&zt).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / d;
        }
        Ok(total / batch.len() as f64)
    }

    /// Loss and its gradient; dropout is active only when `rng` is given.
    pub fn loss_and_gradient<R: Rng + ?Sized>(
        &self,
        batch: &[Example],
        mut rng: Option<&mut R>,
    ) -> Result<(f64, Gradient)> {
        if batch.is_empty() {
            return Err(domain("loss needs a non-empty batch"));
        }
        let d = self.spec.output_dim;
        let scale = 1.0 / (d as f64 * batch.len() as f64);
        let mut grad = Gradient {
            net: self.net.zero_gradient(),
            lf: vec![0.0; self.lf.n_params()],
        };
        let mut total = 0.0;
        for e in batch {
            self.check_theta(&e.theta)?;
            if e.target.len() != d {
                return Err(dimension("target length differs from the output dimension"));
            }
            let (raw, jac) = match self.spec.input_mode {
                InputMode::ReactionCandidates => {
                    let (mu_h, sigma_h) = self.lf.eval(e.t);
                    let (v, j) = candidate_latent_jacobian(&e.theta, &mu_h, &sigma_h, &self.motifs)?;
                    (v, Some(j))
                }
                InputMode::ParametersOnly => (e.theta.flatten(), None),
            };
            let x = self.input_std.forward(&raw);
            let cache = self.net.run(&x, rng.as_deref_mut());
            let zt = self.target_std.forward(&e.target);
            let mut dy = vec![0.0; d];
            for k in 0..d {
                let r = cache.output[k] - zt[k];
                total += r * r * scale;
                dy[k] = 2.0 * r * scale;
            }
            let dx = self.net.backward(&cache, &dy, &mut grad.net);
            if let Some(jac) = jac {
                let dc: Vec<f64> = dx.iter().zip(&self.input_std.std).map(|(g, s)| g / s).collect();
                let latent: Vec<f64> = jac
                    .iter()
                    .map(|row| row.iter().zip(&dc).map(|(j, g)| j * g).sum())
                    .collect();
                for (out, g) in self.lf.gradients(e.t).iter().enumerate() {
                    for &(idx, dv) in g {
                        grad.lf[idx] += latent[out] * dv;
                    }
                }
            }
        }
        Ok((total, grad))
    }
}

/// Adam with one shared step counter.
#[derive(Debug, Clone, PartialEq)]
struct Adam {
    lr: f64,
    t: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Adam {
    fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            t: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    /// Visits parameters in a fixed order; `offset` advances over the
    /// moment buffers.
    fn update(&mut self, offset: &mut usize, params: &mut [f64], grads: &[f64]) {
        let c1 = 1.0 - libm::pow(BETA1, self.t as f64);
        let c2 = 1.0 - libm::pow(BETA2, self.t as f64);
        for (p, g) in params.iter_mut().zip(grads) {
            let i = *offset;
            self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * g;
            self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            *p -= self.lr * mh / (libm::sqrt(vh) + ADAM_EPS);
            *offset += 1;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub rounds: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch: 64,
            rounds: 200,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(domain("learning rate must be positive"));
        }
        if self.batch == 0 {
            return Err(domain("batch size must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    /// Mean training-mode batch loss per round.
    pub round_loss: Vec<f64>,
    pub steps: usize,
}

/// Fits the standardizations on `examples`, then runs `rounds` shuffled
/// passes of Adam. Weights are clipped after every step.
pub fn train(model: &mut SubnetModel, examples: &[Example], cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    model.fit_standardization(examples)?;
    let latent = model.spec.input_mode == InputMode::ReactionCandidates;
    let n = model.net.n_params() + if latent { model.lf.n_params() } else { 0 };
    let mut adam = Adam::new(n, cfg.lr);
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut report = TrainReport::default();
    let mut batch = Vec::with_capacity(cfg.batch);
    for _ in 0..cfg.rounds {
        order.shuffle(&mut rng);
        let mut round_total = 0.0;
        let mut n_batches = 0usize;
        for chunk in order.chunks(cfg.batch) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| examples[i].clone()));
            let (loss, grad) = model.loss_and_gradient(&batch, Some(&mut rng))?;
            if !loss.is_finite() {
                return Err(Error::TrainingFault {
                    step: report.steps,
                    reason: format!("loss is {loss}"),
                });
            }
            adam.t += 1;
            let mut offset = 0;
            for (layer, g) in model.net.layers.iter_mut().zip(&grad.net.layers) {
                for (row, gr) in layer.weights.iter_mut().zip(&g.weights) {
                    adam.update(&mut offset, row, gr);
                }
                adam.update(&mut offset, &mut layer.bias, &g.bias);
            }
            if latent {
                let mut flat = model.lf.to_flat();
                adam.update(&mut offset, &mut flat, &grad.lf);
                model.lf.set_flat(&flat)?;
            }
            model.net.clip(model.spec.weight_cutoff);
            debug_assert!(model.net.max_abs_weight() <= model.spec.weight_cutoff);
            round_total += loss;
            n_batches += 1;
            report.steps += 1;
        }
        report.round_loss.push(round_total / n_batches.max(1) as f64);
    }
    Ok(report)
}

/// Versioned checkpoint document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub model: SubnetModel,
}

impl Checkpoint {
    pub fn new(model: SubnetModel) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            model,
        }
    }

    pub fn into_model(self) -> Result<SubnetModel> {
        if self.version != CHECKPOINT_VERSION {
            return Err(domain(format!(
                "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        self.model.spec.validate()?;
        self.model.lf.validate()?;
        Ok(self.model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::candidates::{candidate_blocks, default_frequencies, lotka_volterra_motifs};
    use crate::linalg::Mat;

    fn tiny_model(mode: InputMode, hidden: Vec<usize>, dropout: f64, seed: u64) -> SubnetModel {
        let spec = SubnetSpec {
            hidden,
            dropout,
            weight_cutoff: 5.0,
            input_mode: mode,
            output_dim: standard_dim(2, 1),
        };
        SubnetModel::new(
            spec,
            2,
            1,
            lotka_volterra_motifs(&[0, 1, 2]),
            default_frequencies(3, 40.0),
            seed,
        )
        .unwrap()
    }

    fn random_examples(n: usize, seed: u64) -> Vec<Example> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        (0..n)
            .map(|k| {
                let mut u = |s: f64| s * (2.0 * rng.random::<f64>() - 1.0);
                let theta = StandardParams {
                    b: vec![u(1.0), u(1.0)],
                    w: Mat::from_vec(2, 1, vec![u(0.8), u(0.8)]).unwrap(),
                    sigma2: 0.3 + u(0.1),
                };
                let target = (0..5).map(|_| u(2.0)).collect();
                Example {
                    theta,
                    t: 10.0 + 0.1 * k as f64,
                    target,
                }
            })
            .collect()
    }

    #[test]
    fn zero_network_outputs_target_mean() {
        let mut m = tiny_model(InputMode::ParametersOnly, vec![3], 0.1, 1);
        for l in &mut m.net.layers {
            *l = Layer::zeros(l.weights[0].len(), l.bias.len());
        }
        m.target_std = Standardization {
            mean: vec![1.0, 2.0, 3.0, 4.0, 5.0],
            std: vec![2.0; 5],
        };
        let e = &random_examples(1, 0)[0];
        assert_eq!(m.predict(&e.theta, e.t).unwrap(), vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        assert_eq!(
            m.forward(&e.theta, e.t, Some(&mut rng)).unwrap(),
            vec![1.0, 2.0, 3.0, 4.0, 5.0]
        );
    }

    #[test]
    fn zero_dropout_ignores_train_mode() {
        let m = tiny_model(InputMode::ReactionCandidates, vec![6, 4], 0.0, 2);
        let e = &random_examples(1, 3)[0];
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        assert_eq!(
            m.predict(&e.theta, e.t).unwrap(),
            m.forward(&e.theta, e.t, Some(&mut rng)).unwrap()
        );
    }

    #[test]
    fn hand_computed_width_one() {
        let mlp = Mlp {
            layers: vec![
                Layer {
                    weights: vec![vec![2.0]],
                    bias: vec![-1.0],
                },
                Layer {
                    weights: vec![vec![3.0]],
                    bias: vec![0.5],
                },
            ],
            dropout: 0.0,
        };
        // relu(2·2 − 1) = 3, then 3·3 + 0.5.
        assert_eq!(mlp.forward::<ChaCha20Rng>(&[2.0], None), vec![9.5]);
        // relu(2·0.25 − 1) = 0.
        assert_eq!(mlp.forward::<ChaCha20Rng>(&[0.25], None), vec![0.5]);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let m = tiny_model(InputMode::ParametersOnly, vec![3], 0.1, 1);
        assert!(m.predict(&StandardParams::zeros(3, 1), 0.0).is_err());
        let bad = SubnetSpec {
            output_dim: 4,
            ..m.spec.clone()
        };
        assert!(SubnetModel::new(bad, 2, 1, vec![], vec![1.0], 0).is_err());
        let none = SubnetSpec {
            hidden: vec![],
            ..m.spec.clone()
        };
        assert!(none.validate().is_err());
        let drop = SubnetSpec {
            dropout: 1.0,
            ..m.spec.clone()
        };
        assert!(drop.validate().is_err());
    }

    #[test]
    fn loss_examples() {
        let mut m = tiny_model(InputMode::ParametersOnly, vec![3], 0.0, 1);
        for l in &mut m.net.layers {
            *l = Layer::zeros(l.weights[0].len(), l.bias.len());
        }
        let ex = random_examples(400, 8);
        m.fit_standardization(&ex).unwrap();
        // A zero standardized output is the target mean; per-component
        // standardized variance is 1.
        let s = m.loss(&ex).unwrap();
        assert!((s - 1.0).abs() < 1e-12, "{s}");
        let perfect: Vec<Example> = ex
            .iter()
            .map(|e| Example {
                target: m.predict(&e.theta, e.t).unwrap(),
                ..e.clone()
            })
            .collect();
        assert_eq!(m.loss(&perfect).unwrap(), 0.0);
        assert!(m.loss(&[]).is_err());
    }

    /// Weight `i` of unit `o` in layer `l`; `i == fan_in` is the bias.
    fn slot(m: &mut SubnetModel, l: usize, o: usize, i: usize) -> &mut f64 {
        let layer = &mut m.net.layers[l];
        if i == layer.weights[o].len() {
            &mut layer.bias[o]
        } else {
            &mut layer.weights[o][i]
        }
    }

    fn fd_check(mode: InputMode) {
        let mut m = tiny_model(mode, vec![4], 0.0, 11);
        let ex = random_examples(6, 12);
        m.fit_standardization(&ex).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        // Coefficient mass well below one keeps |a| away from both kinks.
        let coeffs: Vec<f64> = (0..m.lf.n_params()).map(|_| 0.02 + 0.1 * rng.random::<f64>()).collect();
        m.lf.set_flat(&coeffs).unwrap();
        let (_, g) = m.loss_and_gradient::<ChaCha20Rng>(&ex, None).unwrap();
        let h = 1e-5;
        let close = |a: f64, f: f64| (a - f).abs() <= 1e-4 * a.abs().max(f.abs()) + 1e-10;
        for l in 0..m.net.layers.len() {
            for o in 0..m.net.layers[l].bias.len() {
                for i in 0..=m.net.layers[l].weights[o].len() {
                    let mut p = m.clone();
                    let base = *slot(&mut p, l, o, i);
                    *slot(&mut p, l, o, i) = base + h;
                    let lp = p.loss(&ex).unwrap();
                    *slot(&mut p, l, o, i) = base - h;
                    let lm = p.loss(&ex).unwrap();
                    let fd = (lp - lm) / (2.0 * h);
                    let an = if i == m.net.layers[l].weights[o].len() {
                        g.net.layers[l].bias[o]
                    } else {
                        g.net.layers[l].weights[o][i]
                    };
                    assert!(close(an, fd), "layer {l} unit {o} input {i}: {an} vs {fd}");
                }
            }
        }
        for k in 0..coeffs.len() {
            let mut p = m.clone();
            let mut c = coeffs.clone();
            c[k] += h;
            p.lf.set_flat(&c).unwrap();
            let lp = p.loss(&ex).unwrap();
            c[k] -= 2.0 * h;
            p.lf.set_flat(&c).unwrap();
            let lm = p.loss(&ex).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            assert!(close(g.lf[k], fd), "coefficient {k}: {} vs {fd}", g.lf[k]);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        fd_check(InputMode::ReactionCandidates);
        fd_check(InputMode::ParametersOnly);
    }

    #[test]
    fn parameters_only_has_no_latent_gradient() {
        let m = tiny_model(InputMode::ParametersOnly, vec![4], 0.1, 1);
        let ex = random_examples(4, 2);
        let (_, g) = m.loss_and_gradient::<ChaCha20Rng>(&ex, None).unwrap();
        assert!(g.lf.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn training_is_deterministic_and_clipped() {
        let ex = random_examples(100, 4);
        let cfg = TrainConfig {
            rounds: 3,
            batch: 16,
            seed: 7,
            ..TrainConfig::default()
        };
        let run = || {
            let mut m = tiny_model(InputMode::ReactionCandidates, vec![8], 0.1, 5);
            m.spec.weight_cutoff = 0.3;
            let r = train(&mut m, &ex, &cfg).unwrap();
            (m, r)
        };
        let (a, ra) = run();
        let (b, rb) = run();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
        assert_eq!(ra.steps, 3 * 7);
        assert!(a.net.max_abs_weight() <= 0.3);
        assert!(a.lf.to_flat().iter().any(|&c| c != 0.0));
    }

    #[test]
    fn zero_rounds_only_fits_standardization() {
        let ex = random_examples(20, 4);
        let mut m = tiny_model(InputMode::ParametersOnly, vec![8], 0.1, 5);
        let before = m.clone();
        let cfg = TrainConfig {
            rounds: 0,
            ..TrainConfig::default()
        };
        let r = train(&mut m, &ex, &cfg).unwrap();
        assert_eq!(r.steps, 0);
        assert_eq!(m.net, before.net);
        assert_eq!(m.lf, before.lf);
        assert_ne!(m.target_std, before.target_std);
    }

    #[test]
    fn loss_decreases_with_training() {
        let ex = random_examples(128, 6);
        let mut m = tiny_model(InputMode::ReactionCandidates, vec![16], 0.0, 2);
        m.fit_standardization(&ex).unwrap();
        let before = m.loss(&ex).unwrap();
        let cfg = TrainConfig {
            rounds: 30,
            batch: 32,
            seed: 1,
            ..TrainConfig::default()
        };
        train(&mut m, &ex, &cfg).unwrap();
        assert!(m.loss(&ex).unwrap() < before);
    }

    #[test]
    fn planted_death_block_is_learned() {
        // dθ̂/dt = 0.5 · D̂(Death of species 0), read off at the initial latent
        // series; the network only has to become linear on one block.
        let motifs = lotka_volterra_motifs(&[0, 1, 2]);
        let death = motifs.iter().position(|m| *m == ReactionMotif::death(0)).unwrap();
        let mut ex = random_examples(1056, 40);
        for e in &mut ex {
            let blocks =
                candidate_blocks(&e.theta, &[0.0], &[1.0 + crate::candidates::FOURIER_EPSILON], &motifs).unwrap();
            e.target = blocks[death].iter().map(|v| 0.5 * v).collect();
        }
        let (train_set, val) = ex.split_at(1000);
        let spec = SubnetSpec {
            hidden: vec![32],
            dropout: 0.0,
            weight_cutoff: 5.0,
            input_mode: InputMode::ReactionCandidates,
            output_dim: 5,
        };
        let mut m = SubnetModel::new(spec, 2, 1, motifs, default_frequencies(1, 40.0), 3).unwrap();
        let cfg = TrainConfig {
            lr: 3e-3,
            rounds: 200,
            batch: 64,
            seed: 2,
        };
        train(&mut m, train_set, &cfg).unwrap();
        let loss = m.loss(val).unwrap();
        assert!(loss < 1e-3, "validation loss {loss}");
    }

    #[test]
    fn dropout_expectation_matches_inference() {
        let m = tiny_model(InputMode::ParametersOnly, vec![12], 0.3, 21);
        let e = &random_examples(1, 5)[0];
        let det = m.predict(&e.theta, e.t).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(77);
        let n = 10_000;
        let mut sum = vec![0.0; det.len()];
        let mut sq = vec![0.0; det.len()];
        for _ in 0..n {
            let y = m.forward(&e.theta, e.t, Some(&mut rng)).unwrap();
            for k in 0..y.len() {
                sum[k] += y[k];
                sq[k] += y[k] * y[k];
            }
        }
        for k in 0..det.len() {
            let mean = sum[k] / n as f64;
            let sd = libm::sqrt((sq[k] / n as f64 - mean * mean).max(0.0));
            assert!(
                (mean - det[k]).abs() <= 3.0 * sd / libm::sqrt(n as f64) + 1e-12,
                "{k}: {mean} vs {}",
                det[k]
            );
        }
    }

    #[test]
    fn checkpoint_version_checked() {
        let m = tiny_model(InputMode::ReactionCandidates, vec![4], 0.1, 1);
        let ck = Checkpoint::new(m.clone());
        assert_eq!(ck.clone().into_model().unwrap(), m);
        let bad = Checkpoint { version: 99, ..ck };
        assert!(bad.into_model().is_err());
    }
}

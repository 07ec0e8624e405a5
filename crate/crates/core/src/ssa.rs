//! Gillespie simulation with deterministic calcium currents applied at fixed
//! window boundaries.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{EnsembleDataset, Sample};
use crate::error::{domain, Error, Result};
use crate::reaction::{
    build_dyk_network, CalciumCurrents, DykParams, ReactionNetwork, CA_CYT, CA_ER, IP3, RECEPTOR_STATES,
};

/// Version tag of the random stream layout; bump when draws are reordered.
pub const RNG_STREAM_VERSION: u32 = 1;

/// Duration of the receptor equilibration run, and the averaging tail.
pub const EQUILIBRATION_TIME: f64 = 10.0;
pub const EQUILIBRATION_AVERAGE: f64 = 4.0;

/// Integer time grid: `steps_per_write` ODE windows between writes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimClock {
    pub dt_ode: f64,
    pub steps_per_write: u64,
    pub n_writes: u64,
}

impl SimClock {
    pub fn new(dt_ode: f64, dt_write: f64, t_max: f64) -> Result<Self> {
        if !(dt_ode > 0.0 && dt_write >= dt_ode && t_max >= dt_write) {
            return Err(domain("clock needs 0 < dt_ode <= dt_write <= t_max"));
        }
        let ratio = dt_write / dt_ode;
        let steps = libm::round(ratio);
        if (ratio - steps).abs() > 1e-6 * ratio {
            return Err(domain(format!(
                "dt_write = {dt_write} is not a multiple of dt_ode = {dt_ode}"
            )));
        }
        Ok(Self {
            dt_ode,
            steps_per_write: steps as u64,
            n_writes: libm::round(t_max / dt_write) as u64,
        })
    }

    pub fn from_params(p: &DykParams) -> Result<Self> {
        Self::new(p.dt_ode, p.dt_write, p.t_max)
    }

    pub fn dt_write(&self) -> f64 {
        self.dt_ode * self.steps_per_write as f64
    }

    /// Write times `k·dt_write`, `k = 0..=n_writes`.
    pub fn write_times(&self) -> Vec<f64> {
        (0..=self.n_writes)
            .map(|k| (k * self.steps_per_write) as f64 * self.dt_ode)
            .collect()
    }
}

/// Leak minus pump, converted to particles and applied to a cytosolic/ER pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurrentCoupling {
    pub currents: CalciumCurrents,
    pub cytosol: usize,
    pub store: usize,
    pub particles_per_micromolar: f64,
}

impl CurrentCoupling {
    pub fn from_params(p: &DykParams) -> Self {
        Self {
            currents: CalciumCurrents::from_params(p),
            cytosol: CA_CYT,
            store: CA_ER,
            particles_per_micromolar: p.particles_per_micromolar(),
        }
    }

    /// Particles per second moved from the store into the cytosol.
    fn particle_flux(&self, counts: &[u64]) -> f64 {
        let n = self.particles_per_micromolar;
        let ca = counts[self.cytosol] as f64 / n;
        let ca_er = counts[self.store] as f64 / n;
        self.currents.net(ca, ca_er) * n
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub species: Vec<String>,
    pub times: Vec<f64>,
    /// Row-major `times × species`.
    pub counts: Vec<u64>,
    pub seed: u64,
}

impl Trajectory {
    pub fn count(&self, time: usize, species: usize) -> u64 {
        self.counts[time * self.species.len() + species]
    }

    pub fn series(&self, species: usize) -> Vec<u64> {
        (0..self.times.len()).map(|t| self.count(t, species)).collect()
    }
}

fn binomial(n: u64, m: u32) -> f64 {
    match m {
        0 => 1.0,
        1 => n as f64,
        _ => {
            if n < m as u64 {
                return 0.0;
            }
            let mut c = 1.0;
            for i in 0..m as u64 {
                c = c * (n - i) as f64 / (i + 1) as f64;
            }
            c
        }
    }
}

/// Direct-method SSA over a network, optionally with some species held at
/// fixed copy numbers.
struct Engine {
    reactants: Vec<Vec<(usize, u32)>>,
    changes: Vec<Vec<(usize, i64)>>,
    rates: Vec<f64>,
    props: Vec<f64>,
    counts: Vec<u64>,
    t: f64,
}

impl Engine {
    fn new(network: &ReactionNetwork, reactions: &[usize], frozen: &[usize], counts: Vec<u64>) -> Result<Self> {
        let n = network.species.len();
        if counts.len() != n {
            return Err(domain(format!("expected {n} initial counts, got {}", counts.len())));
        }
        let mut reactants = Vec::new();
        let mut changes = Vec::new();
        let mut rates = Vec::new();
        for &r in reactions {
            let rx = &network.reactions[r];
            reactants.push(rx.reactants.iter().map(|t| (t.species, t.order)).collect());
            let nu = rx.stoichiometry(n);
            changes.push(
                nu.iter()
                    .enumerate()
                    .filter(|&(s, &d)| d != 0 && !frozen.contains(&s))
                    .map(|(s, &d)| (s, d))
                    .collect(),
            );
            rates.push(rx.rate);
        }
        let props = vec![0.0; rates.len()];
        Ok(Self {
            reactants,
            changes,
            rates,
            props,
            counts,
            t: 0.0,
        })
    }

    fn refresh(&mut self) -> Result<f64> {
        let mut total = 0.0;
        for (r, p) in self.props.iter_mut().enumerate() {
            let mut a = self.rates[r];
            for &(s, m) in &self.reactants[r] {
                if a == 0.0 {
                    break;
                }
                a *= binomial(self.counts[s], m);
            }
            *p = a;
            total += a;
        }
        if !total.is_finite() {
            return Err(self.fault("propensity overflow"));
        }
        Ok(total)
    }

    fn fault(&self, reason: &str) -> Error {
        Error::SimulationFault {
            t: self.t,
            reason: reason.into(),
            counts: self.counts.clone(),
        }
    }

    fn fire(&mut self, r: usize) -> Result<()> {
        for &(s, d) in &self.changes[r] {
            let next = self.counts[s] as i64 + d;
            if next < 0 {
                return Err(self.fault("negative count"));
            }
            self.counts[s] = next as u64;
        }
        Ok(())
    }

    /// Runs events until `t_end`. `hold(counts, dt)` sees each constant stretch.
    fn advance(&mut self, t_end: f64, rng: &mut ChaCha20Rng, mut hold: impl FnMut(&[u64], f64)) -> Result<()> {
        loop {
            let total = self.refresh()?;
            if total <= 0.0 {
                hold(&self.counts, t_end - self.t);
                self.t = t_end;
                return Ok(());
            }
            let u: f64 = rng.random();
            let tau = -libm::log1p(-u) / total;
            if self.t + tau >= t_end {
                hold(&self.counts, t_end - self.t);
                self.t = t_end;
                return Ok(());
            }
            hold(&self.counts, tau);
            self.t += tau;
            let mut target = rng.random::<f64>() * total;
            let mut chosen = self.props.len() - 1;
            for (r, &a) in self.props.iter().enumerate() {
                if target < a {
                    chosen = r;
                    break;
                }
                target -= a;
            }
            while self.props[chosen] == 0.0 && chosen > 0 {
                chosen -= 1;
            }
            self.fire(chosen)?;
        }
    }
}

/// Simulates `network` from `init` on the clock's write grid.
///
/// When `coupling` is given, the net calcium current is evaluated from the
/// counts at the end of every ODE window, accumulated in particle units,
/// and its integer part moved between the two coupled species.
pub fn simulate_network(
    network: &ReactionNetwork,
    init: &[u64],
    clock: &SimClock,
    coupling: Option<&CurrentCoupling>,
    seed: u64,
) -> Result<Trajectory> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    run_windows(network, init.to_vec(), clock, coupling, &mut rng, seed)
}

fn run_windows(
    network: &ReactionNetwork,
    init: Vec<u64>,
    clock: &SimClock,
    coupling: Option<&CurrentCoupling>,
    rng: &mut ChaCha20Rng,
    seed: u64,
) -> Result<Trajectory> {
    let all: Vec<usize> = (0..network.reactions.len()).collect();
    let mut engine = Engine::new(network, &all, &[], init)?;
    let n = network.species.len();
    let mut counts = Vec::with_capacity(n * (clock.n_writes as usize + 1));
    counts.extend_from_slice(&engine.counts);
    let mut remainder = 0.0f64;
    for w in 0..clock.n_writes {
        for s in 0..clock.steps_per_write {
            let k = w * clock.steps_per_write + s + 1;
            let t_end = k as f64 * clock.dt_ode;
            engine.advance(t_end, rng, |_, _| {})?;
            if let Some(c) = coupling {
                let flux = c.particle_flux(&engine.counts);
                if !flux.is_finite() {
                    return Err(engine.fault("non-finite calcium current"));
                }
                remainder += flux * clock.dt_ode;
                let whole = libm::trunc(remainder);
                remainder -= whole;
                if whole != 0.0 {
                    let cyt = engine.counts[c.cytosol] as f64 + whole;
                    let er = engine.counts[c.store] as f64 - whole;
                    if cyt < 0.0 || er < 0.0 {
                        return Err(engine.fault("calcium current drove a count negative"));
                    }
                    engine.counts[c.cytosol] = cyt as u64;
                    engine.counts[c.store] = er as u64;
                }
            }
        }
        counts.extend_from_slice(&engine.counts);
    }
    Ok(Trajectory {
        species: network.species_names(),
        times: clock.write_times(),
        counts,
        seed,
    })
}

/// Rounds non-negative averages to integers summing to `total`; leftover
/// units go to the largest fractional parts, lower index first on ties.
pub fn largest_remainder_round(values: &[f64], total: u64) -> Vec<u64> {
    let mut out: Vec<u64> = values.iter().map(|&v| libm::floor(v.max(0.0)) as u64).collect();
    let assigned: u64 = out.iter().sum();
    if assigned > total {
        // Only reachable through floating-point drift; trim from the largest.
        let mut excess = assigned - total;
        while excess > 0 {
            let i = (0..out.len()).max_by_key(|&i| (out[i], core::cmp::Reverse(i))).unwrap();
            out[i] -= 1;
            excess -= 1;
        }
        return out;
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = values[a] - libm::floor(values[a]);
        let fb = values[b] - libm::floor(values[b]);
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let left = (total - assigned) as usize;
    for &i in order.iter().cycle().take(left) {
        out[i] += 1;
    }
    out
}

/// Equilibrates receptor states with all ligand counts held fixed.
///
/// Receptors start in `S000`; the subunit reactions run for 10 s and the
/// occupancy is time-averaged over the last 4 s.
pub fn equilibrate_receptors(network: &ReactionNetwork, init: &[u64], seed: u64) -> Result<[u64; RECEPTOR_STATES]> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    equilibrate_with(network, init, EQUILIBRATION_TIME, EQUILIBRATION_AVERAGE, &mut rng)
}

/// [`equilibrate_receptors`] with a custom run length and averaging tail.
pub fn equilibrate_receptors_for(
    network: &ReactionNetwork,
    init: &[u64],
    duration: f64,
    average: f64,
    seed: u64,
) -> Result<[u64; RECEPTOR_STATES]> {
    if !(average > 0.0 && average <= duration) {
        return Err(domain("averaging window must lie inside the equilibration run"));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    equilibrate_with(network, init, duration, average, &mut rng)
}

fn equilibrate_with(
    network: &ReactionNetwork,
    init: &[u64],
    duration: f64,
    average: f64,
    rng: &mut ChaCha20Rng,
) -> Result<[u64; RECEPTOR_STATES]> {
    if network.species.len() <= IP3 || init.len() != network.species.len() {
        return Err(domain("network does not have the receptor species layout"));
    }
    let total: u64 = init[..RECEPTOR_STATES].iter().sum();
    let mut start = init.to_vec();
    start[..RECEPTOR_STATES].iter_mut().for_each(|c| *c = 0);
    start[0] = total;
    if total == 0 {
        return Ok([0; RECEPTOR_STATES]);
    }
    let receptor_only: Vec<usize> = (0..network.reactions.len())
        .filter(|&r| {
            network.reactions[r].stoichiometry(network.species.len())[..RECEPTOR_STATES]
                .iter()
                .any(|&d| d != 0)
        })
        .collect();
    let mut engine = Engine::new(network, &receptor_only, &[CA_CYT, CA_ER, IP3], start)?;
    engine.advance(duration - average, rng, |_, _| {})?;
    let mut acc = [0.0f64; RECEPTOR_STATES];
    engine.advance(duration, rng, |c, dt| {
        for (a, &n) in acc.iter_mut().zip(&c[..RECEPTOR_STATES]) {
            *a += n as f64 * dt;
        }
    })?;
    acc.iter_mut().for_each(|a| *a /= average);
    let rounded = largest_remainder_round(&acc, total);
    let mut out = [0; RECEPTOR_STATES];
    out.copy_from_slice(&rounded);
    Ok(out)
}

fn positive_normal(rng: &mut ChaCha20Rng, mean: f64, sd: f64) -> Result<f64> {
    if sd == 0.0 {
        return if mean >= 0.0 {
            Ok(mean)
        } else {
            Err(domain("negative initial mean with zero spread"))
        };
    }
    let dist = Normal::new(mean, sd).map_err(|e| domain(format!("initial distribution: {e}")))?;
    for _ in 0..10_000 {
        let x = dist.sample(rng);
        if x >= 0.0 {
            return Ok(x);
        }
    }
    Err(domain("initial distribution is almost entirely negative"))
}

/// Initial counts of a stochastic run: sampled calcium and IP3, ER calcium
/// from total-calcium conservation and equilibrated receptors.
fn initial_counts(p: &DykParams, network: &ReactionNetwork, ip3_mean: f64, rng: &mut ChaCha20Rng) -> Result<Vec<u64>> {
    let n = p.particles_per_micromolar();
    let ca = positive_normal(rng, p.mu0_ca, p.sigma0_ca)?;
    let ip3 = positive_normal(rng, ip3_mean, p.sigma0_ip3)?;
    let er = (p.c0 - ca) * n;
    if er < 0.0 {
        return Err(domain(format!(
            "sampled cytosolic calcium {ca} µM exceeds total calcium c0"
        )));
    }
    let mut init = vec![0u64; network.species.len()];
    init[0] = p.n_ip3r;
    init[CA_CYT] = libm::round(ca * n) as u64;
    init[CA_ER] = libm::round(er) as u64;
    init[IP3] = libm::round(ip3 * n) as u64;
    let receptors = equilibrate_with(network, &init, EQUILIBRATION_TIME, EQUILIBRATION_AVERAGE, rng)?;
    init[..RECEPTOR_STATES].copy_from_slice(&receptors);
    Ok(init)
}

/// One hybrid stochastic run of the receptor/calcium model.
pub fn simulate_trajectory(p: &DykParams, ip3_mean: f64, seed: u64) -> Result<Trajectory> {
    if !(ip3_mean >= 0.0) {
        return Err(domain("mean IP3 concentration must be non-negative"));
    }
    let network = build_dyk_network(p)?;
    let clock = SimClock::from_params(p)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let init = initial_counts(p, &network, ip3_mean, &mut rng)?;
    let coupling = CurrentCoupling::from_params(p);
    run_windows(&network, init, &clock, Some(&coupling), &mut rng, seed)
}

/// Collects trajectories (assumed ordered by seed) into a dataset.
pub fn ensemble_from_trajectories(trajectories: Vec<Trajectory>, label: impl Into<String>) -> Result<EnsembleDataset> {
    let first = trajectories
        .first()
        .ok_or_else(|| domain("ensemble needs at least one trajectory"))?;
    let species = first.species.clone();
    let times = first.times.clone();
    for tr in &trajectories {
        if tr.species != species || tr.times != times {
            return Err(domain(format!(
                "trajectory {} does not share the ensemble grid",
                tr.seed
            )));
        }
    }
    let samples = trajectories
        .into_iter()
        .map(|tr| Sample {
            seed: tr.seed,
            values: tr.counts.iter().map(|&c| c as f64).collect(),
        })
        .collect();
    EnsembleDataset::new(species, times, samples, label)
}

/// Attaches the member seed to a fault.
pub fn ensemble_fault(seed: u64, err: Error) -> Error {
    Error::EnsembleFault {
        seed,
        source: Box::new(err),
    }
}

/// `m` runs with seeds `base_seed..base_seed + m`.
pub fn simulate_ensemble(p: &DykParams, ip3_mean: f64, m: usize, base_seed: u64) -> Result<EnsembleDataset> {
    if m == 0 {
        return Err(domain("ensemble size must be at least 1"));
    }
    let trajectories = (0..m as u64)
        .map(|i| {
            let seed = base_seed + i;
            simulate_trajectory(p, ip3_mean, seed).map_err(|e| ensemble_fault(seed, e))
        })
        .collect::<Result<Vec<_>>>()?;
    ensemble_from_trajectories(trajectories, format!("ip3={ip3_mean}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reaction::{receptor_index, stationary_occupancy, Compartment, Reaction, Species, Term, OPEN_STATE};
    use alloc::string::ToString;

    fn decay_network(k: f64) -> ReactionNetwork {
        ReactionNetwork::new(
            vec![Species {
                name: "A".to_string(),
                compartment: Compartment::Cytosol,
            }],
            vec![Reaction::new(vec![Term { species: 0, order: 1 }], vec![], k, "A -> 0").unwrap()],
        )
        .unwrap()
    }

    fn short_params() -> DykParams {
        DykParams {
            t_max: 2.0,
            ..DykParams::default()
        }
    }

    #[test]
    fn clock_grid() {
        let c = SimClock::new(1e-3, 0.1, 50.0).unwrap();
        assert_eq!(c.steps_per_write, 100);
        assert_eq!(c.n_writes, 500);
        let t = c.write_times();
        assert_eq!(t.len(), 501);
        assert!((t[500] - 50.0).abs() < 1e-9);
        assert!(SimClock::new(3e-3, 0.1, 1.0).is_err());
        assert!(SimClock::new(0.2, 0.1, 1.0).is_err());
    }

    #[test]
    fn binomial_counts() {
        assert_eq!(binomial(5, 0), 1.0);
        assert_eq!(binomial(5, 3), 10.0);
        assert_eq!(binomial(2, 3), 0.0);
        assert_eq!(binomial(100, 3), 161_700.0);
    }

    #[test]
    fn largest_remainder_hits_total() {
        assert_eq!(largest_remainder_round(&[1.5, 1.5, 1.0], 4), vec![2, 1, 1]);
        assert_eq!(largest_remainder_round(&[0.2, 0.7, 2.1], 3), vec![0, 1, 2]);
        assert_eq!(largest_remainder_round(&[], 0), Vec::<u64>::new());
    }

    #[test]
    fn decay_mean_matches_exponential() {
        let net = decay_network(1.0);
        let clock = SimClock::new(0.01, 1.0, 3.0).unwrap();
        let runs = 1000;
        let mut sums = [0.0f64; 4];
        for seed in 0..runs {
            let tr = simulate_network(&net, &[1000], &clock, None, seed).unwrap();
            for (t, s) in sums.iter_mut().enumerate() {
                *s += tr.count(t, 0) as f64;
            }
        }
        for t in 1..4 {
            let p = libm::exp(-(t as f64));
            let mean = sums[t] / runs as f64;
            // Binomial(1000, p) per run, averaged over `runs`.
            let se = libm::sqrt(1000.0 * p * (1.0 - p) / runs as f64);
            assert!((mean - 1000.0 * p).abs() < 3.0 * se, "t={t} mean={mean}");
        }
    }

    #[test]
    fn simulation_is_reproducible() {
        let p = short_params();
        let a = simulate_trajectory(&p, 0.5, 7).unwrap();
        let b = simulate_trajectory(&p, 0.5, 7).unwrap();
        assert_eq!(a, b);
        let c = simulate_trajectory(&p, 0.5, 8).unwrap();
        assert_ne!(a.counts, c.counts);
    }

    #[test]
    fn receptors_are_conserved() {
        let p = short_params();
        let tr = simulate_trajectory(&p, 0.5, 3).unwrap();
        for t in 0..tr.times.len() {
            let total: u64 = (0..RECEPTOR_STATES).map(|s| tr.count(t, s)).sum();
            assert_eq!(total, p.n_ip3r);
        }
    }

    #[test]
    fn no_dynamics_when_every_rate_is_zero() {
        let p = DykParams {
            a1: 0.0,
            a2: 0.0,
            a3: 0.0,
            a4: 0.0,
            a5: 0.0,
            v1: 0.0,
            v2: 0.0,
            v3: 0.0,
            ..short_params()
        };
        let tr = simulate_trajectory(&p, 0.5, 11).unwrap();
        let n = tr.species.len();
        assert_eq!(tr.count(0, receptor_index(0, 0, 0)), p.n_ip3r);
        for t in 1..tr.times.len() {
            assert_eq!(&tr.counts[t * n..(t + 1) * n], &tr.counts[..n]);
        }
    }

    #[test]
    fn calcium_is_conserved_without_currents_or_binding() {
        // Only the transport pair may act, which moves calcium one for one.
        let p = DykParams {
            a1: 0.0,
            a2: 0.0,
            a3: 0.0,
            a4: 0.0,
            a5: 0.0,
            v2: 0.0,
            v3: 0.0,
            ..short_params()
        };
        let net = build_dyk_network(&p).unwrap();
        let clock = SimClock::from_params(&p).unwrap();
        let mut init = vec![0u64; net.species.len()];
        init[OPEN_STATE] = p.n_ip3r;
        init[CA_CYT] = 600;
        init[CA_ER] = 11_000;
        init[IP3] = 3000;
        let coupling = CurrentCoupling::from_params(&p);
        let tr = simulate_network(&net, &init, &clock, Some(&coupling), 5).unwrap();
        let mut moved = false;
        for t in 0..tr.times.len() {
            assert_eq!(tr.count(t, CA_CYT) + tr.count(t, CA_ER), 11_600);
            moved |= tr.count(t, CA_CYT) != 600;
        }
        assert!(moved);
    }

    #[test]
    fn zero_subunit_rates_keep_receptors_closed() {
        let p = DykParams {
            a1: 0.0,
            a2: 0.0,
            a3: 0.0,
            a4: 0.0,
            a5: 0.0,
            ..DykParams::default()
        };
        let net = build_dyk_network(&p).unwrap();
        let mut init = vec![0u64; net.species.len()];
        init[0] = 100;
        init[CA_CYT] = 600;
        init[IP3] = 3000;
        let eq = equilibrate_receptors(&net, &init, 1).unwrap();
        assert_eq!(eq[0], 100);
        assert_eq!(eq[1..].iter().sum::<u64>(), 0);
    }

    fn ligand_init(p: &DykParams, net: &ReactionNetwork, ca: f64, ip3: f64) -> Vec<u64> {
        let n = p.particles_per_micromolar();
        let mut init = vec![0u64; net.species.len()];
        init[0] = p.n_ip3r;
        init[CA_CYT] = libm::round(ca * n) as u64;
        init[IP3] = libm::round(ip3 * n) as u64;
        init[CA_ER] = 10_000;
        init
    }

    /// Mean rounded occupancy over `seeds` runs against `expected` fractions.
    fn check_occupancy(
        p: &DykParams,
        net: &ReactionNetwork,
        init: &[u64],
        duration: f64,
        average: f64,
        expected: &[f64; RECEPTOR_STATES],
    ) {
        let seeds = 40u64;
        let mut mean = [0.0f64; RECEPTOR_STATES];
        for seed in 0..seeds {
            let eq = equilibrate_receptors_for(net, init, duration, average, seed).unwrap();
            assert_eq!(eq.iter().sum::<u64>(), p.n_ip3r);
            for (m, &c) in mean.iter_mut().zip(&eq) {
                *m += c as f64 / seeds as f64;
            }
        }
        let total = p.n_ip3r as f64;
        for s in 0..RECEPTOR_STATES {
            // A time average spreads less than a binomial snapshot; rounding
            // adds at most one count of bias per state.
            let sd = libm::sqrt(total * expected[s] * (1.0 - expected[s]) / seeds as f64);
            let tol = 3.0 * sd + 0.5;
            assert!(
                (mean[s] - total * expected[s]).abs() < tol,
                "state {s}: {} vs {}",
                mean[s],
                total * expected[s]
            );
        }
    }

    #[test]
    fn long_equilibration_matches_stationary_chain() {
        let p = DykParams::default();
        let net = build_dyk_network(&p).unwrap();
        let init = ligand_init(&p, &net, 0.25, 0.5);
        let n = p.particles_per_micromolar();
        let pi = stationary_occupancy(&p, init[CA_CYT] as f64 / n, init[IP3] as f64 / n).unwrap();
        check_occupancy(&p, &net, &init, 200.0, 100.0, &pi);
    }

    #[test]
    fn ten_second_protocol_matches_master_equation_transient() {
        // The slow calcium-inhibition sites do not relax within 10 s, so the
        // oracle is the single-subunit master equation started in S000 and
        // averaged over [6 s, 10 s].
        let p = DykParams::default();
        let net = build_dyk_network(&p).unwrap();
        let init = ligand_init(&p, &net, 0.25, 0.5);
        let n = p.particles_per_micromolar();
        let q = crate::reaction::subunit_generator(&p, init[CA_CYT] as f64 / n, init[IP3] as f64 / n);
        let rhs = |x: &[f64; RECEPTOR_STATES]| {
            let mut d = [0.0; RECEPTOR_STATES];
            for j in 0..RECEPTOR_STATES {
                d[j] = (0..RECEPTOR_STATES).map(|i| x[i] * q[(i, j)]).sum();
            }
            d
        };
        let dt = 1e-3;
        let mut x = [0.0; RECEPTOR_STATES];
        x[0] = 1.0;
        let mut avg = [0.0; RECEPTOR_STATES];
        for k in 0..10_000 {
            let k1 = rhs(&x);
            let step = |a: &[f64; RECEPTOR_STATES], b: &[f64; RECEPTOR_STATES], h: f64| {
                core::array::from_fn::<f64, RECEPTOR_STATES, _>(|i| a[i] + h * b[i])
            };
            let k2 = rhs(&step(&x, &k1, dt / 2.0));
            let k3 = rhs(&step(&x, &k2, dt / 2.0));
            let k4 = rhs(&step(&x, &k3, dt));
            let prev = x;
            for i in 0..RECEPTOR_STATES {
                x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            if k >= 6_000 {
                for i in 0..RECEPTOR_STATES {
                    avg[i] += 0.5 * (prev[i] + x[i]) * dt / 4.0;
                }
            }
        }
        check_occupancy(&p, &net, &init, EQUILIBRATION_TIME, EQUILIBRATION_AVERAGE, &avg);
        let pi = stationary_occupancy(&p, init[CA_CYT] as f64 / n, init[IP3] as f64 / n).unwrap();
        let gap: f64 = (0..RECEPTOR_STATES).map(|i| (avg[i] - pi[i]).abs()).sum();
        assert!(gap > 0.05, "protocol unexpectedly reached stationarity");
    }

    #[test]
    fn ensemble_of_one_equals_trajectory() {
        let p = short_params();
        let ds = simulate_ensemble(&p, 0.5, 1, 42).unwrap();
        let tr = simulate_trajectory(&p, 0.5, 42).unwrap();
        assert_eq!(ds.samples[0].seed, 42);
        let vals: Vec<f64> = tr.counts.iter().map(|&c| c as f64).collect();
        assert_eq!(ds.samples[0].values, vals);
        assert!(simulate_ensemble(&p, 0.5, 0, 42).is_err());
    }

    #[test]
    fn ensemble_fault_names_the_seed() {
        let p = DykParams {
            c0: 0.05,
            mu0_ca: 0.1,
            sigma0_ca: 0.0,
            ..short_params()
        };
        match simulate_ensemble(&p, 0.5, 3, 9) {
            Err(Error::EnsembleFault { seed, .. }) => assert_eq!(seed, 9),
            other => panic!("expected ensemble fault, got {other:?}"),
        }
    }
}

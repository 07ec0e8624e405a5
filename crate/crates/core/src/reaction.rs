//! Mass-action reaction networks and the IP3-receptor calcium model.
//!
//! Concentrations are in µM, times in seconds, volumes in liters. Particle
//! counts relate to concentrations through [`particles_per_micromolar`].

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::linalg::{solve_dense, Mat};

pub const AVOGADRO: f64 = 6.022_140_76e23;

/// Particles per µM in a volume of `volume_liters`.
#[inline]
pub fn particles_per_micromolar(volume_liters: f64) -> f64 {
    AVOGADRO * volume_liters * 1e-6
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Compartment {
    Cytosol,
    ER,
    Membrane,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Species {
    pub name: String,
    pub compartment: Compartment,
}

/// One species entering a reaction with a given order (multiplicity).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Term {
    pub species: usize,
    pub order: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reaction {
    pub reactants: Vec<Term>,
    pub products: Vec<Term>,
    /// Molecular rate γ; propensity is γ·∏ C(n_i, m_i).
    pub rate: f64,
    pub label: String,
}

impl Reaction {
    pub fn new(reactants: Vec<Term>, products: Vec<Term>, rate: f64, label: impl Into<String>) -> Result<Self> {
        if !(rate >= 0.0) || !rate.is_finite() {
            return Err(domain("reaction rate must be finite and non-negative"));
        }
        if reactants.is_empty() && products.is_empty() {
            return Err(domain("reaction needs at least one reactant or product"));
        }
        Ok(Self {
            reactants,
            products,
            rate,
            label: label.into(),
        })
    }

    /// Net change ν = products − reactants over `n_species` species.
    pub fn stoichiometry(&self, n_species: usize) -> Vec<i64> {
        let mut nu = vec![0i64; n_species];
        for t in &self.reactants {
            nu[t.species] -= t.order as i64;
        }
        for t in &self.products {
            nu[t.species] += t.order as i64;
        }
        nu
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReactionNetwork {
    pub species: Vec<Species>,
    pub reactions: Vec<Reaction>,
}

impl ReactionNetwork {
    pub fn new(species: Vec<Species>, reactions: Vec<Reaction>) -> Result<Self> {
        for (i, s) in species.iter().enumerate() {
            if species[..i].iter().any(|o| o.name == s.name) {
                return Err(domain(format!("duplicate species name {}", s.name)));
            }
        }
        for r in &reactions {
            if r.reactants
                .iter()
                .chain(&r.products)
                .any(|t| t.species >= species.len())
            {
                return Err(domain(format!("reaction {} references an unknown species", r.label)));
            }
        }
        Ok(Self { species, reactions })
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.species.iter().position(|s| s.name == name)
    }

    pub fn species_names(&self) -> Vec<String> {
        self.species.iter().map(|s| s.name.clone()).collect()
    }
}

fn factorial(m: u32) -> f64 {
    (1..=m).fold(1.0, |acc, k| acc * k as f64)
}

/// Converts a concentration-based mass-action rate `k` to the molecular rate
/// γ = k·N·∏ m_i!/N^{m_i} with N the particle count per µM in `volume`.
pub fn concentration_to_molecular_rate(k: f64, orders: &[u32], volume: f64) -> Result<f64> {
    if !(volume > 0.0) {
        return Err(domain("volume must be positive"));
    }
    if !(k >= 0.0) {
        return Err(domain("rate must be non-negative"));
    }
    if orders.is_empty() {
        return Err(domain("reaction orders must be non-empty"));
    }
    let n = particles_per_micromolar(volume);
    let mut gamma = k * n;
    for &m in orders {
        gamma *= factorial(m) / libm::pow(n, m as f64);
    }
    Ok(gamma)
}

/// Parameters of the three-subunit IP3 receptor model and of its
/// stochastic simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DykParams {
    /// Total calcium per cytosolic volume (µM).
    pub c0: f64,
    /// ER/cytosol volume ratio.
    pub c1: f64,
    pub v1: f64,
    pub v2: f64,
    /// Maximal pump rate (µM/s).
    pub v3: f64,
    pub k3: f64,
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub a4: f64,
    pub a5: f64,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
    pub d4: f64,
    pub d5: f64,
    pub mu0_ca: f64,
    pub mu0_ip3: f64,
    pub sigma0_ca: f64,
    pub sigma0_ip3: f64,
    /// Cytosolic volume (L).
    pub v_cyt: f64,
    pub dt_write: f64,
    pub dt_ode: f64,
    pub t_max: f64,
    /// Number of receptor subunits.
    pub n_ip3r: u64,
}

impl Default for DykParams {
    fn default() -> Self {
        Self {
            c0: 2.0,
            c1: 0.185,
            v1: 6.0,
            v2: 0.11,
            v3: 0.9,
            k3: 0.1,
            a1: 400.0,
            a2: 0.2,
            a3: 400.0,
            a4: 0.2,
            a5: 20.0,
            d1: 0.13,
            d2: 1.049,
            d3: 943.4e-3,
            d4: 144.5e-3,
            d5: 82.34e-3,
            mu0_ca: 0.25,
            mu0_ip3: 0.5,
            sigma0_ca: 1e-3,
            sigma0_ip3: 1e-3,
            v_cyt: 1e-14,
            dt_write: 0.1,
            dt_ode: 1e-3,
            t_max: 50.0,
            n_ip3r: 100,
        }
    }
}

impl DykParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("c0", self.c0),
            ("k3", self.k3),
            ("mu0_ca", self.mu0_ca),
            ("mu0_ip3", self.mu0_ip3),
            ("v_cyt", self.v_cyt),
            ("dt_write", self.dt_write),
            ("dt_ode", self.dt_ode),
            ("t_max", self.t_max),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(domain(format!("{name} must be positive, got {v}")));
            }
        }
        // Zero is admissible for the rate constants so dynamics can be switched off.
        let non_negative = [
            ("v1", self.v1),
            ("v2", self.v2),
            ("v3", self.v3),
            ("a1", self.a1),
            ("a2", self.a2),
            ("a3", self.a3),
            ("a4", self.a4),
            ("a5", self.a5),
            ("d1", self.d1),
            ("d2", self.d2),
            ("d3", self.d3),
            ("d4", self.d4),
            ("d5", self.d5),
            ("sigma0_ca", self.sigma0_ca),
            ("sigma0_ip3", self.sigma0_ip3),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(domain(format!("{name} must be non-negative, got {v}")));
            }
        }
        if !(self.c1 > 0.0 && self.c1 < 1.0) {
            return Err(domain("c1 must lie in (0, 1)"));
        }
        if !(self.dt_ode <= self.dt_write && self.dt_write <= self.t_max) {
            return Err(domain("need dt_ode <= dt_write <= t_max"));
        }
        Ok(())
    }

    pub fn association(&self) -> [f64; 5] {
        [self.a1, self.a2, self.a3, self.a4, self.a5]
    }

    /// Backward rates b_i = a_i·d_i (s⁻¹).
    pub fn dissociation(&self) -> [f64; 5] {
        [
            self.a1 * self.d1,
            self.a2 * self.d2,
            self.a3 * self.d3,
            self.a4 * self.d4,
            self.a5 * self.d5,
        ]
    }

    pub fn particles_per_micromolar(&self) -> f64 {
        particles_per_micromolar(self.v_cyt)
    }
}

/// Receptor subunit states S_ijk: i = IP3 site, j = activating Ca site,
/// k = inactivating Ca site. Index is `4i + 2j + k`.
pub const RECEPTOR_STATES: usize = 8;
pub const OPEN_STATE: usize = 6; // S_110
pub const CA_CYT: usize = 8;
pub const CA_ER: usize = 9;
pub const IP3: usize = 10;
pub const DYK_SPECIES: usize = 11;

#[inline]
pub const fn receptor_index(i: usize, j: usize, k: usize) -> usize {
    4 * i + 2 * j + k
}

pub fn receptor_name(state: usize) -> String {
    format!("S{}{}{}", (state >> 2) & 1, (state >> 1) & 1, state & 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ligand {
    Calcium,
    Ip3,
}

impl Ligand {
    pub fn species(self) -> usize {
        match self {
            Ligand::Calcium => CA_CYT,
            Ligand::Ip3 => IP3,
        }
    }
}

/// One reversible binding step `from + ligand ⇌ to` of a receptor subunit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SubunitTransition {
    pub from: usize,
    pub to: usize,
    pub ligand: Ligand,
    /// Index 0..5 into the a_i/d_i rate families.
    pub family: usize,
}

/// All twelve reversible binding steps of the subunit model.
pub fn subunit_transitions() -> Vec<SubunitTransition> {
    let mut out = Vec::with_capacity(12);
    let mut push = |from, to, ligand, family| {
        out.push(SubunitTransition {
            from,
            to,
            ligand,
            family,
        })
    };
    for m in 0..2 {
        push(receptor_index(0, m, 0), receptor_index(1, m, 0), Ligand::Ip3, 0);
        push(receptor_index(1, m, 0), receptor_index(1, m, 1), Ligand::Calcium, 1);
        push(receptor_index(0, m, 1), receptor_index(1, m, 1), Ligand::Ip3, 2);
        push(receptor_index(0, m, 0), receptor_index(0, m, 1), Ligand::Calcium, 3);
    }
    for i in 0..2 {
        for k in 0..2 {
            push(receptor_index(i, 0, k), receptor_index(i, 1, k), Ligand::Calcium, 4);
        }
    }
    out
}

/// Builds the stochastic receptor/transport network.
///
/// Species order: the eight receptor states, then `Ca_Cyt`, `Ca_ER`, `IP3`.
/// Reactions: forward/backward pairs for every [`subunit_transitions`]
/// entry, followed by the transport pair through open subunits.
pub fn build_dyk_network(p: &DykParams) -> Result<ReactionNetwork> {
    p.validate()?;
    if p.n_ip3r == 0 {
        return Err(domain("transport rate is undefined for zero receptors"));
    }
    let mut species: Vec<Species> = (0..RECEPTOR_STATES)
        .map(|s| Species {
            name: receptor_name(s),
            compartment: Compartment::Membrane,
        })
        .collect();
    species.push(Species {
        name: "Ca_Cyt".to_string(),
        compartment: Compartment::Cytosol,
    });
    species.push(Species {
        name: "Ca_ER".to_string(),
        compartment: Compartment::ER,
    });
    species.push(Species {
        name: "IP3".to_string(),
        compartment: Compartment::Cytosol,
    });

    let a = p.association();
    let b = p.dissociation();
    let one = |s| Term { species: s, order: 1 };
    let mut reactions = Vec::new();
    for tr in subunit_transitions() {
        let lig = tr.ligand.species();
        let alpha = concentration_to_molecular_rate(a[tr.family], &[1, 1], p.v_cyt)?;
        let beta = concentration_to_molecular_rate(b[tr.family], &[1], p.v_cyt)?;
        let (from, to) = (receptor_name(tr.from), receptor_name(tr.to));
        let lname = &species[lig].name;
        reactions.push(Reaction::new(
            vec![one(tr.from), one(lig)],
            vec![one(tr.to)],
            alpha,
            format!("{from} + {lname} -> {to}"),
        )?);
        reactions.push(Reaction::new(
            vec![one(tr.to)],
            vec![one(tr.from), one(lig)],
            beta,
            format!("{to} -> {from} + {lname}"),
        )?);
    }
    let n = p.n_ip3r as f64;
    let open3 = Term {
        species: OPEN_STATE,
        order: 3,
    };
    let gamma_f = 6.0 * p.v1 / (n * n * n);
    let gamma_b = 6.0 * p.c1 * p.v1 / (n * n * n);
    reactions.push(Reaction::new(
        vec![open3, one(CA_ER)],
        vec![open3, one(CA_CYT)],
        gamma_f,
        "3 S110 + Ca_ER -> 3 S110 + Ca_Cyt",
    )?);
    reactions.push(Reaction::new(
        vec![open3, one(CA_CYT)],
        vec![open3, one(CA_ER)],
        gamma_b,
        "3 S110 + Ca_Cyt -> 3 S110 + Ca_ER",
    )?);
    ReactionNetwork::new(species, reactions)
}

/// Leak (J1) and pump (J2) currents in µM/s, with `ca_er` the ER calcium
/// expressed per cytosolic volume.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalciumCurrents {
    pub c1: f64,
    pub v2: f64,
    pub v3: f64,
    pub k3: f64,
}

impl CalciumCurrents {
    pub fn from_params(p: &DykParams) -> Self {
        Self {
            c1: p.c1,
            v2: p.v2,
            v3: p.v3,
            k3: p.k3,
        }
    }

    #[inline]
    pub fn leak(&self, ca: f64, ca_er: f64) -> f64 {
        self.c1 * self.v2 * (ca_er / self.c1 - ca)
    }

    #[inline]
    pub fn pump(&self, ca: f64) -> f64 {
        let ca2 = ca * ca;
        if self.v3 == 0.0 {
            return 0.0;
        }
        self.v3 * ca2 / (ca2 + self.k3 * self.k3)
    }

    /// Net cytosolic influx J1 − J2.
    #[inline]
    pub fn net(&self, ca: f64, ca_er: f64) -> f64 {
        self.leak(ca, ca_er) - self.pump(ca)
    }
}

/// Single-subunit generator at fixed ligand concentrations (µM):
/// `q[(i, j)]` is the rate from state `i` to state `j`, diagonal = −outflow.
pub fn subunit_generator(p: &DykParams, ca: f64, ip3: f64) -> Mat {
    let a = p.association();
    let b = p.dissociation();
    let mut q = Mat::zeros(RECEPTOR_STATES, RECEPTOR_STATES);
    for tr in subunit_transitions() {
        let conc = match tr.ligand {
            Ligand::Calcium => ca,
            Ligand::Ip3 => ip3,
        };
        q[(tr.from, tr.to)] += a[tr.family] * conc;
        q[(tr.to, tr.from)] += b[tr.family];
    }
    for i in 0..RECEPTOR_STATES {
        let out: f64 = (0..RECEPTOR_STATES).filter(|&j| j != i).map(|j| q[(i, j)]).sum();
        q[(i, i)] = -out;
    }
    q
}

/// Stationary occupancy of the subunit chain at fixed ligands.
pub fn stationary_occupancy(p: &DykParams, ca: f64, ip3: f64) -> Result<[f64; RECEPTOR_STATES]> {
    let q = subunit_generator(p, ca, ip3);
    // πQ = 0 with Σπ = 1: solve Qᵀπ = 0, last equation swapped for normalization.
    let mut a = q.transpose();
    for c in 0..RECEPTOR_STATES {
        a[(RECEPTOR_STATES - 1, c)] = 1.0;
    }
    let mut rhs = [0.0; RECEPTOR_STATES];
    rhs[RECEPTOR_STATES - 1] = 1.0;
    let pi = solve_dense(&a, &rhs)?;
    let mut out = [0.0; RECEPTOR_STATES];
    out.copy_from_slice(&pi);
    Ok(out)
}

/// Sampled output of the deterministic model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeterministicTrace {
    pub times: Vec<f64>,
    pub ca_cyt: Vec<f64>,
    /// ER calcium per cytosolic volume.
    pub ca_er: Vec<f64>,
}

impl DeterministicTrace {
    /// max − min of `[Ca_Cyt]` over `t >= t_from`.
    pub fn peak_to_trough(&self, t_from: f64) -> f64 {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for (&t, &c) in self.times.iter().zip(&self.ca_cyt) {
            if t >= t_from - 1e-9 {
                lo = lo.min(c);
                hi = hi.max(c);
            }
        }
        hi - lo
    }
}

const DYK_STATE: usize = RECEPTOR_STATES + 2;

fn dyk_rhs(p: &DykParams, currents: &CalciumCurrents, ip3: f64, y: &[f64; DYK_STATE], dy: &mut [f64; DYK_STATE]) {
    let a = p.association();
    let b = p.dissociation();
    let ca = y[RECEPTOR_STATES];
    let ca_er = y[RECEPTOR_STATES + 1];
    dy.fill(0.0);
    for tr in subunit_transitions() {
        let conc = match tr.ligand {
            Ligand::Calcium => ca,
            Ligand::Ip3 => ip3,
        };
        let flux = a[tr.family] * conc * y[tr.from] - b[tr.family] * y[tr.to];
        dy[tr.from] -= flux;
        dy[tr.to] += flux;
    }
    let x = y[OPEN_STATE];
    let j3 = p.c1 * p.v1 * x * x * x * (ca_er / p.c1 - ca);
    let dca = currents.net(ca, ca_er) + j3;
    dy[RECEPTOR_STATES] = dca;
    dy[RECEPTOR_STATES + 1] = -dca;
}

/// Integrates the deterministic model with `[IP3]` clamped at `ip3` using
/// fixed-step RK4, sampling every `p.dt_write`.
///
/// Starts from `[Ca_Cyt] = mu0_ca`, ER calcium from total conservation and
/// subunit fractions at their stationary occupancy for the initial ligands.
pub fn integrate_deterministic_dyk(p: &DykParams, ip3: f64, horizon: f64, dt: f64) -> Result<DeterministicTrace> {
    if !(dt > 0.0) {
        return Err(domain("dt must be positive"));
    }
    if !(horizon >= 0.0) || !(ip3 >= 0.0) {
        return Err(domain("horizon and ip3 must be non-negative"));
    }
    let currents = CalciumCurrents::from_params(p);
    let mut y = [0.0; DYK_STATE];
    let occ = stationary_occupancy(p, p.mu0_ca, ip3)?;
    y[..RECEPTOR_STATES].copy_from_slice(&occ);
    y[RECEPTOR_STATES] = p.mu0_ca;
    y[RECEPTOR_STATES + 1] = p.c0 - p.mu0_ca;

    let steps = libm::round(horizon / dt) as usize;
    let every = (libm::round(p.dt_write / dt) as usize).max(1);
    let mut trace = DeterministicTrace {
        times: Vec::with_capacity(steps / every + 1),
        ca_cyt: Vec::with_capacity(steps / every + 1),
        ca_er: Vec::with_capacity(steps / every + 1),
    };
    let record = |trace: &mut DeterministicTrace, step: usize, y: &[f64; DYK_STATE]| {
        trace.times.push(step as f64 * dt);
        trace.ca_cyt.push(y[RECEPTOR_STATES]);
        trace.ca_er.push(y[RECEPTOR_STATES + 1]);
    };
    record(&mut trace, 0, &y);
    let (mut k1, mut k2, mut k3, mut k4) = ([0.0; DYK_STATE], [0.0; DYK_STATE], [0.0; DYK_STATE], [0.0; DYK_STATE]);
    let mut tmp = [0.0; DYK_STATE];
    for step in 1..=steps {
        dyk_rhs(p, &currents, ip3, &y, &mut k1);
        for i in 0..DYK_STATE {
            tmp[i] = y[i] + 0.5 * dt * k1[i];
        }
        dyk_rhs(p, &currents, ip3, &tmp, &mut k2);
        for i in 0..DYK_STATE {
            tmp[i] = y[i] + 0.5 * dt * k2[i];
        }
        dyk_rhs(p, &currents, ip3, &tmp, &mut k3);
        for i in 0..DYK_STATE {
            tmp[i] = y[i] + dt * k3[i];
        }
        dyk_rhs(p, &currents, ip3, &tmp, &mut k4);
        for i in 0..DYK_STATE {
            y[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if step % every == 0 {
            record(&mut trace, step, &y);
        }
    }
    Ok(trace)
}

/// Order-of-magnitude estimate of the receptor subunit count for a
/// cytosolic volume (L), cluster spacing (µm) and ER surface-area factor,
/// assuming 10 channels of 4 subunits per cluster.
pub fn estimate_subunit_count(v_cyt_liters: f64, spacing_um: f64, area_factor: f64) -> Result<f64> {
    estimate_subunit_count_with_ratio(v_cyt_liters, spacing_um, area_factor, DykParams::default().c1)
}

pub fn estimate_subunit_count_with_ratio(
    v_cyt_liters: f64,
    spacing_um: f64,
    area_factor: f64,
    er_ratio: f64,
) -> Result<f64> {
    if !(v_cyt_liters > 0.0 && spacing_um > 0.0 && area_factor > 0.0 && er_ratio > 0.0) {
        return Err(domain("subunit estimate needs positive inputs"));
    }
    let pi = core::f64::consts::PI;
    let v_um3 = v_cyt_liters * 1e15;
    let radius_term = libm::pow(3.0 * er_ratio * v_um3 / (4.0 * pi), 2.0 / 3.0);
    Ok(160.0 * pi * area_factor / (spacing_um * spacing_um) * radius_term)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn unimolecular_rate_is_volume_independent() {
        for v in [1e-15, 1e-14, 1e-12] {
            let g = concentration_to_molecular_rate(3.7, &[1], v).unwrap();
            assert!(rel(g, 3.7) < 1e-14);
        }
    }

    #[test]
    fn bimolecular_rate_conversion() {
        // 6.02214076e23 * 1e-14 * 1e-6 = 6022.14076 particles per µM.
        let g = concentration_to_molecular_rate(400.0, &[1, 1], 1e-14).unwrap();
        assert!(rel(g, 400.0 / 6_022.140_76) < 1e-12);
        assert!((g - 6.6422e-2).abs() < 1e-5);
    }

    #[test]
    fn zero_rate_and_bad_volume() {
        assert_eq!(concentration_to_molecular_rate(0.0, &[1, 1], 1e-14).unwrap(), 0.0);
        assert!(concentration_to_molecular_rate(1.0, &[1], 0.0).is_err());
        assert!(concentration_to_molecular_rate(1.0, &[1], -1.0).is_err());
        assert!(concentration_to_molecular_rate(1.0, &[], 1e-14).is_err());
    }

    #[test]
    fn conversion_is_linear_in_k() {
        let base = concentration_to_molecular_rate(1.0, &[2, 1], 1e-13).unwrap();
        for k in [0.5, 2.0, 17.0] {
            let g = concentration_to_molecular_rate(k, &[2, 1], 1e-13).unwrap();
            assert!(rel(g, k * base) < 1e-14);
        }
    }

    #[test]
    fn dyk_network_structure_and_rates() {
        let p = DykParams::default();
        let net = build_dyk_network(&p).unwrap();
        assert_eq!(net.species.len(), 11);
        assert_eq!(net.reactions.len(), 2 * 12 + 2);
        let n = particles_per_micromolar(p.v_cyt);
        let a = p.association();
        let b = p.dissociation();
        for (idx, tr) in subunit_transitions().iter().enumerate() {
            let fwd = &net.reactions[2 * idx];
            let bwd = &net.reactions[2 * idx + 1];
            assert!(rel(fwd.rate, a[tr.family] / n) < 1e-12);
            assert!(rel(bwd.rate, b[tr.family]) < 1e-12);
        }
        assert!(rel(net.reactions[0].rate, 6.642e-2) < 1e-3);
        assert!(rel(b[0], 52.0) < 1e-12);
        let tf = &net.reactions[24];
        let tb = &net.reactions[25];
        assert!(rel(tf.rate, 3.6e-5) < 1e-12);
        assert!(rel(tb.rate, 6.66e-6) < 1e-12);
        // transport leaves the open subunits untouched
        let nu = tf.stoichiometry(11);
        assert_eq!(nu[OPEN_STATE], 0);
        assert_eq!((nu[CA_ER], nu[CA_CYT]), (-1, 1));
    }

    #[test]
    fn dyk_network_rejects_zero_receptors() {
        let p = DykParams {
            n_ip3r: 0,
            ..DykParams::default()
        };
        assert!(build_dyk_network(&p).is_err());
    }

    #[test]
    fn duplicate_species_rejected() {
        let s = Species {
            name: "A".into(),
            compartment: Compartment::Cytosol,
        };
        assert!(ReactionNetwork::new(vec![s.clone(), s], vec![]).is_err());
    }

    #[test]
    fn stationary_occupancy_balances_flux() {
        let p = DykParams::default();
        let pi = stationary_occupancy(&p, 0.25, 0.5).unwrap();
        let q = subunit_generator(&p, 0.25, 0.5);
        let sum: f64 = pi.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        for j in 0..8 {
            let flow: f64 = (0..8).map(|i| pi[i] * q[(i, j)]).sum();
            assert!(flow.abs() < 1e-10);
        }
    }

    #[test]
    fn deterministic_model_conserves_total_calcium() {
        let p = DykParams::default();
        let tr = integrate_deterministic_dyk(&p, 0.5, 20.0, 1e-4).unwrap();
        for (c, e) in tr.ca_cyt.iter().zip(&tr.ca_er) {
            assert!((c + e - p.c0).abs() < 1e-9);
        }
        assert_eq!(tr.times.len(), 201);
    }

    #[test]
    fn deterministic_bifurcation_regimes() {
        let p = DykParams::default();
        let run = |ip3| {
            integrate_deterministic_dyk(&p, ip3, 200.0, 1e-4)
                .unwrap()
                .peak_to_trough(160.0)
        };
        assert!(run(0.3) < 0.05);
        assert!(run(0.5) > 0.1);
        // above the upper bifurcation the oscillation amplitude decays away
        let high = integrate_deterministic_dyk(&p, 0.8, 200.0, 1e-4).unwrap();
        assert!(high.peak_to_trough(160.0) < 0.05);
        assert!(high.peak_to_trough(160.0) < high.peak_to_trough(0.0));
    }

    #[test]
    fn subunit_count_estimates() {
        let small = estimate_subunit_count(1e-14, 3.0, 10.0).unwrap();
        assert!((small - 324.0).abs() < 1.0, "{small}");
        let large = estimate_subunit_count(1e-12, 3.0, 10.0).unwrap();
        assert!(large > 1000.0 && large < 10_000.0, "{large}");
        let tiny = estimate_subunit_count(1e-14, 3.0, 1e-9).unwrap();
        assert!(tiny < 1e-6);
        assert!(estimate_subunit_count(0.0, 3.0, 1.0).is_err());
    }
}

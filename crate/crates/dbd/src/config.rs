//! The single TOML file that drives every stage.

use std::collections::BTreeMap;
use std::path::Path;

use dbd_core::candidates::{
    conserving_motifs, default_frequencies, lotka_volterra_motifs, parse_motif_kind, ReactionMotif,
};
use dbd_core::dataset::RECEPTOR_TOTAL;
use dbd_core::pca::standard_dim;
use dbd_core::reaction::{receptor_name, DykParams, RECEPTOR_STATES};
use dbd_core::subnet::{InputMode, SubnetSpec, TrainConfig};
use dbd_core::tvr::TvrConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{io_err, Error, Result};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "DBD_OUT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    /// Kinetic constants; omitted keys take the built-in defaults.
    #[serde(default)]
    pub model: DykParams,
    pub conditions: Conditions,
    pub simulate: SimulateSection,
    pub species: SpeciesSection,
    #[serde(default)]
    pub estimate: EstimateSection,
    #[serde(default)]
    pub tvr: TvrSection,
    pub motifs: MotifSection,
    #[serde(default)]
    pub latent: LatentSection,
    pub subnet: SubnetSection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub rollout: RolloutSection,
    #[serde(default)]
    pub analyze: AnalyzeSection,
}

/// What a condition value sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionAxis {
    /// Mean IP3 concentration (µM).
    #[default]
    Ip3,
    /// Receptor subunit count, at the fixed `conditions.ip3`.
    Receptors,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Conditions {
    #[serde(default)]
    pub axis: ConditionAxis,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ip3: Option<f64>,
    pub train: Vec<f64>,
    #[serde(default)]
    pub validate: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub trajectories: usize,
    pub base_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeciesSection {
    /// Visible species in order. `IP3R` is the receptor subunit total.
    pub visible: Vec<String>,
    pub q: usize,
    #[serde(default)]
    pub variance_floor: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateSection {
    /// Start of the estimation window (s); it ends at `model.t_max`.
    pub t_start: f64,
}

impl Default for EstimateSection {
    fn default() -> Self {
        Self { t_start: 10.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TvrSection {
    pub alpha: f64,
    pub iterations: usize,
    pub small_threshold: f64,
}

impl Default for TvrSection {
    fn default() -> Self {
        let d = TvrConfig::default();
        Self {
            alpha: d.alpha,
            iterations: d.iterations,
            small_threshold: d.small_threshold,
        }
    }
}

/// One motif written as its kind and role species, e.g.
/// `{ kind = "PredatorPrey", species = ["Ca_Cyt", "X"] }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotifEntry {
    pub kind: String,
    pub species: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConservingEntry {
    pub conserved: String,
    pub others: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotifSection {
    /// Birth, Death and every ordered PredatorPrey pair over these species.
    pub lotka_volterra: Vec<String>,
    pub conserving: Option<ConservingEntry>,
    pub extra: Vec<MotifEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatentSection {
    /// Number of harmonics `l = 1..=count` of `2π/period`.
    pub count: usize,
    pub period: f64,
}

impl Default for LatentSection {
    fn default() -> Self {
        Self { count: 6, period: 40.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubnetSection {
    pub hidden: Vec<usize>,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    pub weight_cutoff: f64,
    #[serde(default = "default_modes")]
    pub modes: Vec<InputMode>,
    #[serde(default)]
    pub init_seed: u64,
}

fn default_dropout() -> f64 {
    dbd_core::subnet::DEFAULT_DROPOUT
}

fn default_modes() -> Vec<InputMode> {
    vec![InputMode::ReactionCandidates, InputMode::ParametersOnly]
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RolloutSection {
    /// Euler step; defaults to `model.dt_write`.
    pub dt: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyzeSection {
    pub observable: String,
    /// Trailing window for the range of oscillations (s).
    pub window: f64,
    pub resamples: usize,
    pub seed: u64,
}

impl Default for AnalyzeSection {
    fn default() -> Self {
        Self {
            observable: "Ca_Cyt".into(),
            window: dbd_core::rollout::OSCILLATION_WINDOW,
            resamples: dbd_core::rollout::BOOTSTRAP_RESAMPLES,
            seed: 0,
        }
    }
}

fn usage(key: &str, msg: impl std::fmt::Display) -> Error {
    Error::Usage(format!("{key}: {msg}"))
}

pub fn mode_label(mode: InputMode) -> &'static str {
    match mode {
        InputMode::ReactionCandidates => "reaction_candidates",
        InputMode::ParametersOnly => "parameters_only",
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Usage(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration always serializes")
    }

    /// Hash of the effective configuration, overrides included.
    pub fn sha256(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    /// Replaces every seed in the file by `seed`.
    pub fn override_seed(&mut self, seed: u64) {
        self.simulate.base_seed = seed;
        self.subnet.init_seed = seed;
        self.train.seed = seed;
        self.analyze.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate().map_err(|e| usage("model", e))?;
        if self.conditions.train.is_empty() {
            return Err(usage("conditions.train", "at least one training condition is required"));
        }
        let all = self.all_conditions();
        match self.conditions.axis {
            ConditionAxis::Ip3 => {
                if self.conditions.ip3.is_some() {
                    return Err(usage("conditions.ip3", "only used with axis = \"receptors\""));
                }
                if let Some(c) = all.iter().find(|c| !(**c > 0.0 && c.is_finite())) {
                    return Err(usage("conditions", format!("IP3 concentration {c} must be positive")));
                }
            }
            ConditionAxis::Receptors => {
                match self.conditions.ip3 {
                    Some(v) if v > 0.0 && v.is_finite() => {}
                    Some(_) => return Err(usage("conditions.ip3", "must be positive")),
                    None => return Err(usage("conditions.ip3", "required when axis = \"receptors\"")),
                }
                if let Some(c) = all.iter().find(|c| !(**c >= 1.0 && c.fract() == 0.0 && **c < 1e15)) {
                    return Err(usage(
                        "conditions",
                        format!("receptor count {c} must be a positive integer"),
                    ));
                }
            }
        }
        let mut labels: Vec<String> = all.iter().map(|&c| self.condition_label(c)).collect();
        labels.sort();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return Err(usage(
                "conditions",
                "conditions must be distinct (IP3 compared at two decimals)",
            ));
        }
        if self.simulate.trajectories == 0 {
            return Err(usage("simulate.trajectories", "must be at least 1"));
        }
        if self.species.visible.is_empty() {
            return Err(usage("species.visible", "at least one visible species is required"));
        }
        let nv = self.species.visible.len();
        if self.species.q == 0 || self.species.q >= nv {
            return Err(usage(
                "species.q",
                format!("must satisfy 1 <= q < {nv} (the visible species count)"),
            ));
        }
        let mut allowed: Vec<String> = (0..RECEPTOR_STATES).map(receptor_name).collect();
        allowed.extend(["Ca_Cyt", "Ca_ER", "IP3", RECEPTOR_TOTAL].map(String::from));
        for (i, s) in self.species.visible.iter().enumerate() {
            if !allowed.contains(s) {
                return Err(usage("species.visible", format!("unknown species {s}")));
            }
            if self.species.visible[..i].contains(s) {
                return Err(usage("species.visible", format!("{s} listed twice")));
            }
        }
        for (name, v) in &self.species.variance_floor {
            if !self.species.visible.contains(name) {
                return Err(usage(
                    "species.variance_floor",
                    format!("{name} is not a visible species"),
                ));
            }
            if !(*v > 0.0) {
                return Err(usage(
                    "species.variance_floor",
                    format!("floor for {name} must be positive"),
                ));
            }
        }
        let t_start = self.estimate.t_start;
        if !(t_start >= 0.0 && t_start < self.model.t_max) {
            return Err(usage("estimate.t_start", "must lie in [0, model.t_max)"));
        }
        if self.tvr_config().validate().is_err() {
            return Err(usage(
                "tvr",
                "alpha and the threshold must be non-negative, iterations positive",
            ));
        }
        self.motifs().map_err(|e| usage("motifs", e))?;
        if self.latent.count == 0 || !(self.latent.period > 0.0) {
            return Err(usage("latent", "count and period must be positive"));
        }
        if self.subnet.modes.is_empty() {
            return Err(usage("subnet.modes", "at least one input mode is required"));
        }
        for &m in &self.subnet.modes {
            self.subnet_spec(m).validate().map_err(|e| usage("subnet", e))?;
        }
        self.train.validate().map_err(|e| usage("train", e))?;
        if let Some(dt) = self.rollout.dt {
            let ratio = self.model.dt_write / dt;
            if !(dt > 0.0) || (ratio - ratio.round()).abs() > 1e-9 {
                return Err(usage("rollout.dt", "must divide model.dt_write"));
            }
        }
        if !(self.analyze.window > 0.0) || self.analyze.window > self.model.t_max {
            return Err(usage("analyze.window", "must lie in (0, model.t_max]"));
        }
        if !self.species.visible.contains(&self.analyze.observable) {
            return Err(usage(
                "analyze.observable",
                format!("{} is not a visible species", self.analyze.observable),
            ));
        }
        Ok(())
    }

    /// Training conditions then validation conditions.
    pub fn all_conditions(&self) -> Vec<f64> {
        self.conditions
            .train
            .iter()
            .chain(&self.conditions.validate)
            .copied()
            .collect()
    }

    /// `ip3_0.40` or `nr_500`.
    pub fn condition_label(&self, value: f64) -> String {
        match self.conditions.axis {
            ConditionAxis::Ip3 => format!("ip3_{value:.2}"),
            ConditionAxis::Receptors => format!("nr_{}", value as u64),
        }
    }

    /// Model parameters and IP3 mean for one condition value.
    pub fn condition(&self, value: f64) -> (DykParams, f64) {
        match self.conditions.axis {
            ConditionAxis::Ip3 => (self.model.clone(), value),
            ConditionAxis::Receptors => {
                let p = DykParams {
                    n_ip3r: value as u64,
                    ..self.model.clone()
                };
                (p, self.conditions.ip3.expect("validated"))
            }
        }
    }

    pub fn hidden_names(&self) -> Vec<String> {
        match self.species.q {
            1 => vec!["X".into()],
            q => (1..=q).map(|k| format!("X{k}")).collect(),
        }
    }

    /// Visible names followed by hidden names; motif roles index this list.
    pub fn motif_species(&self) -> Vec<String> {
        let mut all = self.species.visible.clone();
        all.extend(self.hidden_names());
        all
    }

    pub fn motifs(&self) -> Result<Vec<ReactionMotif>> {
        let names = self.motif_species();
        let index = |n: &String| {
            names
                .iter()
                .position(|s| s == n)
                .ok_or_else(|| Error::Usage(format!("motif species {n} is neither visible nor hidden")))
        };
        let mut out = Vec::new();
        let lv = self
            .motifs
            .lotka_volterra
            .iter()
            .map(index)
            .collect::<Result<Vec<_>>>()?;
        out.extend(lotka_volterra_motifs(&lv));
        if let Some(c) = &self.motifs.conserving {
            let r = index(&c.conserved)?;
            let others = c.others.iter().map(index).collect::<Result<Vec<_>>>()?;
            out.extend(conserving_motifs(r, &others)?);
        }
        for e in &self.motifs.extra {
            let kind = parse_motif_kind(&e.kind)?;
            let roles = e.species.iter().map(index).collect::<Result<Vec<_>>>()?;
            out.push(ReactionMotif::new(kind, roles)?);
        }
        if out.is_empty() && self.subnet.modes.contains(&InputMode::ReactionCandidates) {
            return Err(Error::Usage(
                "the reaction-candidate model needs at least one motif".into(),
            ));
        }
        Ok(out)
    }

    pub fn frequencies(&self) -> Vec<f64> {
        default_frequencies(self.latent.count, self.latent.period)
    }

    pub fn tvr_config(&self) -> TvrConfig {
        TvrConfig {
            alpha: self.tvr.alpha,
            iterations: self.tvr.iterations,
            dt: self.model.dt_write,
            small_threshold: self.tvr.small_threshold,
        }
    }

    pub fn subnet_spec(&self, mode: InputMode) -> SubnetSpec {
        SubnetSpec {
            hidden: self.subnet.hidden.clone(),
            dropout: self.subnet.dropout,
            weight_cutoff: self.subnet.weight_cutoff,
            input_mode: mode,
            output_dim: standard_dim(self.species.visible.len(), self.species.q),
        }
    }

    /// `(visible index, floor)` pairs for the PPCA fit.
    pub fn variance_floor(&self) -> Vec<(usize, f64)> {
        self.species
            .variance_floor
            .iter()
            .filter_map(|(n, v)| self.species.visible.iter().position(|s| s == n).map(|i| (i, *v)))
            .collect()
    }

    pub fn rollout_dt(&self) -> f64 {
        self.rollout.dt.unwrap_or(self.model.dt_write)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub const MINIMAL: &str = r#"
[conditions]
train = [0.4, 0.6]
validate = [0.5]

[simulate]
trajectories = 2
base_seed = 1

[species]
visible = ["Ca_Cyt", "IP3"]
q = 1

[motifs]
lotka_volterra = ["Ca_Cyt", "IP3", "X"]

[subnet]
hidden = [25]
weight_cutoff = 1.0
"#;

    #[test]
    fn minimal_config_takes_defaults() {
        let c = Config::from_toml(MINIMAL).unwrap();
        assert_eq!(c.model, DykParams::default());
        assert_eq!(c.motifs().unwrap().len(), 12);
        assert_eq!(c.train.lr, 1e-3);
        assert_eq!(c.train.batch, 64);
        assert_eq!(c.subnet.dropout, 0.1);
        assert_eq!(c.subnet.modes.len(), 2);
        assert_eq!(c.frequencies().len(), 6);
        assert_eq!(c.tvr_config().dt, 0.1);
        assert_eq!(c.all_conditions(), vec![0.4, 0.6, 0.5]);
        assert_eq!(c.condition_label(0.4), "ip3_0.40");
    }

    #[test]
    fn missing_key_is_named() {
        let text = MINIMAL.replace("trajectories = 2\n", "");
        let e = Config::from_toml(&text).unwrap_err();
        assert!(matches!(e, Error::Usage(_)));
        assert!(e.to_string().contains("trajectories"), "{e}");
    }

    #[test]
    fn unknown_and_invalid_keys_are_named() {
        let e = Config::from_toml(&MINIMAL.replace("q = 1", "q = 1\nlatent_dim = 3")).unwrap_err();
        assert!(e.to_string().contains("latent_dim"), "{e}");
        let e = Config::from_toml(&MINIMAL.replace("[simulate]", "[model]\nv_cyt = -1.0\n\n[simulate]")).unwrap_err();
        assert!(e.to_string().contains("v_cyt"), "{e}");
        let e = Config::from_toml(&MINIMAL.replace("\"IP3\", \"X\"", "\"IP3\", \"Y\"")).unwrap_err();
        assert!(e.to_string().contains("motifs"), "{e}");
        let e = Config::from_toml(&MINIMAL.replace("validate = [0.5]", "validate = [0.4]")).unwrap_err();
        assert!(e.to_string().contains("conditions"), "{e}");
    }

    #[test]
    fn conserving_block_and_floor() {
        let text = MINIMAL
            .replace("visible = [\"Ca_Cyt\", \"IP3\"]", "visible = [\"Ca_Cyt\", \"IP3\", \"IP3R\"]\nvariance_floor = { IP3R = 1e-7 }")
            .replace(
                "lotka_volterra = [\"Ca_Cyt\", \"IP3\", \"X\"]",
                "lotka_volterra = [\"Ca_Cyt\", \"IP3\", \"X\"]\nconserving = { conserved = \"IP3R\", others = [\"Ca_Cyt\", \"IP3\", \"X\"] }",
            );
        let c = Config::from_toml(&text).unwrap();
        assert_eq!(c.motifs().unwrap().len(), 15);
        assert_eq!(c.variance_floor(), vec![(2, 1e-7)]);
        assert_eq!(c.subnet_spec(InputMode::ParametersOnly).output_dim, 7);
    }

    #[test]
    fn receptor_axis() {
        let text = MINIMAL.replace("[conditions]\n", "[conditions]\naxis = \"receptors\"\nip3 = 0.5\n");
        let e = Config::from_toml(&text).unwrap_err();
        assert!(e.to_string().contains("receptor count"), "{e}");
        let text = text.replace("[0.4, 0.6]", "[500, 600]").replace("[0.5]", "[1000]");
        let c = Config::from_toml(&text).unwrap();
        assert_eq!(c.condition_label(500.0), "nr_500");
        let (p, ip3) = c.condition(1000.0);
        assert_eq!((p.n_ip3r, ip3), (1000, 0.5));
        let e = Config::from_toml(&text.replace("ip3 = 0.5\n", "")).unwrap_err();
        assert!(e.to_string().contains("conditions.ip3"), "{e}");
        let e = Config::from_toml(&MINIMAL.replace("[conditions]\n", "[conditions]\nip3 = 0.5\n")).unwrap_err();
        assert!(e.to_string().contains("conditions.ip3"), "{e}");
    }

    #[test]
    fn seed_override_and_hash() {
        let mut c = Config::from_toml(MINIMAL).unwrap();
        let h = c.sha256();
        assert_eq!(h, Config::from_toml(&c.to_toml()).unwrap().sha256());
        c.override_seed(99);
        assert_eq!((c.simulate.base_seed, c.train.seed), (99, 99));
        assert_ne!(c.sha256(), h);
    }
}

//! The eight stages. Each reads the artifacts of earlier stages from the
//! output root, writes its own, and records a manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use dbd_core::dataset::{apply_transform, fit_transform, EnsembleDataset, StandardizingTransform, RECEPTOR_TOTAL};
use dbd_core::pca::{estimate_series, ParamSeries};
use dbd_core::reaction::{build_dyk_network, receptor_name, RECEPTOR_STATES};
use dbd_core::rollout::{
    euler_rollout, moment_term_decomposition, mse, nonnegative_fraction, range_for_dataset, reconstruct_observables,
};
use dbd_core::ssa::{ensemble_fault, ensemble_from_trajectories, simulate_trajectory};
use dbd_core::subnet::{examples_from_pairs, train, Checkpoint, InputMode, SubnetModel};
use dbd_core::tvr::build_training_pairs;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{mode_label, Config};
use crate::error::{format_err, Error, Result};
use crate::figures::{FigureKind, FigureTable};
use crate::io::{
    ensure_dir, fmt, param_names, read_json, read_pairs, read_param_series, read_trajectory, sha256_file, write_json,
    write_pairs, write_param_series, write_table, write_trajectory,
};
use crate::manifest::{FileRecord, StageManifest, TOOL_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    Simulate,
    Transform,
    Estimate,
    Derivative,
    Train,
    Rollout,
    Analyze,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Simulate,
        Stage::Transform,
        Stage::Estimate,
        Stage::Derivative,
        Stage::Train,
        Stage::Rollout,
        Stage::Analyze,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Simulate => "simulate",
            Stage::Transform => "transform",
            Stage::Estimate => "estimate",
            Stage::Derivative => "derivative",
            Stage::Train => "train",
            Stage::Rollout => "rollout",
            Stage::Analyze => "analyze",
            Stage::Report => "report",
        }
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Usage(format!("unknown stage {s:?}")))
    }
}

/// A validated configuration bound to an output root.
#[derive(Debug, Clone)]
pub struct Context {
    pub cfg: Config,
    pub out: PathBuf,
    pub config_sha256: String,
}

/// Per-condition ensemble index stored next to the trajectory files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleManifest {
    pub label: String,
    pub ip3_mean: f64,
    pub n_ip3r: u64,
    pub base_seed: u64,
    pub trajectories: usize,
    pub params_sha256: String,
    pub files: Vec<FileRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub mode: String,
    pub median_train_mse: Option<f64>,
    pub median_validate_mse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub tool_version: String,
    pub config_sha256: String,
    pub summary: Vec<ModeSummary>,
    /// Manifests of the stages that have run, in pipeline order.
    pub stages: Vec<StageManifest>,
    pub files: Vec<FileRecord>,
}

fn sha256_json<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("plain data serializes");
    hex::encode(Sha256::digest(bytes))
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

impl Context {
    pub fn new(cfg: Config, out: impl Into<PathBuf>) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            config_sha256: cfg.sha256(),
            cfg,
            out: out.into(),
        })
    }

    pub fn nv(&self) -> usize {
        self.cfg.species.visible.len()
    }

    pub fn split(&self, value: f64) -> &'static str {
        if self.cfg.conditions.train.contains(&value) {
            "train"
        } else {
            "validate"
        }
    }

    pub fn ensemble_dir(&self, value: f64) -> PathBuf {
        self.out.join("ensembles").join(self.cfg.condition_label(value))
    }

    pub fn transform_path(&self) -> PathBuf {
        self.out.join("transform.json")
    }

    pub fn estimate_path(&self, value: f64) -> PathBuf {
        self.out
            .join("estimates")
            .join(format!("{}.csv", self.cfg.condition_label(value)))
    }

    pub fn pairs_path(&self, value: f64) -> PathBuf {
        self.out
            .join("pairs")
            .join(format!("{}.csv", self.cfg.condition_label(value)))
    }

    pub fn model_path(&self, mode: InputMode) -> PathBuf {
        self.out.join("models").join(format!("{}.json", mode_label(mode)))
    }

    pub fn rollout_path(&self, mode: InputMode, value: f64) -> PathBuf {
        self.out
            .join("rollouts")
            .join(mode_label(mode))
            .join(format!("{}.csv", self.cfg.condition_label(value)))
    }

    pub fn analysis_dir(&self) -> PathBuf {
        self.out.join("analysis")
    }

    fn finish(&self, stage: Stage, seed: u64, inputs: &[PathBuf], outputs: &[PathBuf]) -> Result<StageManifest> {
        let m = StageManifest::build(&self.out, stage.name(), &self.config_sha256, seed, inputs, outputs)?;
        m.write(&self.out)?;
        Ok(m)
    }

    pub fn run(&self, stage: Stage) -> Result<StageManifest> {
        match stage {
            Stage::Simulate => self.simulate(),
            Stage::Transform => self.transform(),
            Stage::Estimate => self.estimate(),
            Stage::Derivative => self.derivative(),
            Stage::Train => self.train(),
            Stage::Rollout => self.rollout(),
            Stage::Analyze => self.analyze(),
            Stage::Report => self.report(),
        }
    }

    pub fn run_all(&self) -> Result<Vec<StageManifest>> {
        Stage::ALL.into_iter().map(|s| self.run(s)).collect()
    }

    pub fn simulate(&self) -> Result<StageManifest> {
        let cfg = &self.cfg;
        let network_path = self.out.join("network.json");
        write_json(&network_path, &build_dyk_network(&cfg.model)?)?;
        let m = cfg.simulate.trajectories as u64;
        let base = cfg.simulate.base_seed;
        let jobs: Vec<(f64, u64)> = cfg
            .all_conditions()
            .into_iter()
            .flat_map(|c| (base..base + m).map(move |s| (c, s)))
            .collect();
        let files = jobs
            .par_iter()
            .map(|&(c, seed)| {
                let (p, ip3) = cfg.condition(c);
                let tr = simulate_trajectory(&p, ip3, seed).map_err(|e| ensemble_fault(seed, e))?;
                let path = self.ensemble_dir(c).join(format!("traj_{seed}.csv"));
                write_trajectory(&path, &tr)?;
                Ok(path)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut outputs = vec![network_path];
        for c in cfg.all_conditions() {
            let (p, ip3) = cfg.condition(c);
            let dir = self.ensemble_dir(c);
            let own: Vec<&PathBuf> = files.iter().filter(|f| f.parent() == Some(dir.as_path())).collect();
            let records = own
                .iter()
                .map(|f| FileRecord::of(&dir, f))
                .collect::<Result<Vec<_>>>()?;
            let em = EnsembleManifest {
                label: self.cfg.condition_label(c),
                ip3_mean: ip3,
                n_ip3r: p.n_ip3r,
                base_seed: base,
                trajectories: records.len(),
                params_sha256: sha256_json(&p),
                files: records,
            };
            let mp = dir.join("manifest.json");
            write_json(&mp, &em)?;
            outputs.push(mp);
            outputs.extend(own.into_iter().cloned());
        }
        self.finish(Stage::Simulate, base, &[], &outputs)
    }

    /// Reads an ensemble, checking file hashes and that it was simulated
    /// with the configured model.
    pub fn load_ensemble(&self, value: f64, inputs: &mut Vec<PathBuf>) -> Result<EnsembleDataset> {
        let dir = self.ensemble_dir(value);
        let mp = dir.join("manifest.json");
        let em: EnsembleManifest = read_json(&mp)?;
        if em.params_sha256 != sha256_json(&self.cfg.condition(value).0) {
            return Err(format_err(
                &mp,
                "ensemble was simulated with different model parameters; rerun simulate",
            ));
        }
        if em.files.len() != self.cfg.simulate.trajectories {
            return Err(format_err(
                &mp,
                "ensemble size differs from simulate.trajectories; rerun simulate",
            ));
        }
        inputs.push(mp);
        let trajectories = em
            .files
            .iter()
            .map(|rec| {
                let path = dir.join(&rec.path);
                if sha256_file(&path)? != rec.sha256 {
                    return Err(format_err(&path, "content hash differs from the ensemble manifest"));
                }
                read_trajectory(&path)
            })
            .collect::<Result<Vec<_>>>()?;
        inputs.extend(em.files.iter().map(|r| dir.join(&r.path)));
        Ok(ensemble_from_trajectories(trajectories, em.label)?)
    }

    /// Visible species on the estimation window, untransformed.
    pub fn prepare(&self, ds: &EnsembleDataset) -> Result<EnsembleDataset> {
        let visible = &self.cfg.species.visible;
        let ds = if visible.iter().any(|s| s == RECEPTOR_TOTAL) {
            ds.with_receptor_total()?
        } else {
            ds.clone()
        };
        Ok(ds
            .select(visible)?
            .window(self.cfg.estimate.t_start, self.cfg.model.t_max)?)
    }

    pub fn transform(&self) -> Result<StageManifest> {
        let mut inputs = Vec::new();
        let prepared = self
            .cfg
            .conditions
            .train
            .iter()
            .map(|&c| self.prepare(&self.load_ensemble(c, &mut inputs)?))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&EnsembleDataset> = prepared.iter().collect();
        let tr = fit_transform(&refs)?;
        let path = self.transform_path();
        write_json(&path, &tr)?;
        self.finish(Stage::Transform, 0, &inputs, &[path])
    }

    pub fn read_transform(&self) -> Result<StandardizingTransform> {
        let path = self.transform_path();
        let tr: StandardizingTransform = read_json(&path)?;
        if tr.species != self.cfg.species.visible {
            return Err(format_err(
                &path,
                "transform species differ from species.visible; rerun transform",
            ));
        }
        Ok(tr)
    }

    pub fn estimate(&self) -> Result<StageManifest> {
        let tr = self.read_transform()?;
        let visible: Vec<usize> = (0..self.nv()).collect();
        let floor = self.cfg.variance_floor();
        let results = self
            .cfg
            .all_conditions()
            .par_iter()
            .map(|&c| {
                let mut inputs = Vec::new();
                let ds = apply_transform(&self.prepare(&self.load_ensemble(c, &mut inputs)?)?, &tr)?;
                let series = estimate_series(&ds, &visible, self.cfg.species.q, &floor)?;
                let path = self.estimate_path(c);
                write_param_series(&path, &series)?;
                Ok((inputs, path))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut inputs = vec![self.transform_path()];
        let mut outputs = Vec::new();
        for (i, o) in results {
            inputs.extend(i);
            outputs.push(o);
        }
        self.finish(Stage::Estimate, 0, &inputs, &outputs)
    }

    pub fn derivative(&self) -> Result<StageManifest> {
        let tvr = self.cfg.tvr_config();
        let results = self
            .cfg
            .conditions
            .train
            .par_iter()
            .map(|&c| {
                let input = self.estimate_path(c);
                let pairs = build_training_pairs(&read_param_series(&input)?, &tvr)?;
                let path = self.pairs_path(c);
                write_pairs(&path, &pairs)?;
                Ok((input, path))
            })
            .collect::<Result<Vec<_>>>()?;
        let (inputs, outputs): (Vec<_>, Vec<_>) = results.into_iter().unzip();
        self.finish(Stage::Derivative, 0, &inputs, &outputs)
    }

    pub fn train(&self) -> Result<StageManifest> {
        let cfg = &self.cfg;
        let inputs: Vec<PathBuf> = cfg.conditions.train.iter().map(|&c| self.pairs_path(c)).collect();
        let pairs = inputs.iter().map(|p| read_pairs(p)).collect::<Result<Vec<_>>>()?;
        let refs: Vec<_> = pairs.iter().collect();
        let examples = examples_from_pairs(&refs)?;
        let motifs = cfg.motifs()?;
        let outputs = cfg
            .subnet
            .modes
            .par_iter()
            .map(|&mode| {
                let mut model = SubnetModel::new(
                    cfg.subnet_spec(mode),
                    self.nv(),
                    cfg.species.q,
                    motifs.clone(),
                    cfg.frequencies(),
                    cfg.subnet.init_seed,
                )?;
                let report = train(&mut model, &examples, &cfg.train)?;
                let path = self.model_path(mode);
                write_json(&path, &Checkpoint::new(model))?;
                let loss_path = path.with_file_name(format!("{}_loss.csv", mode_label(mode)));
                let rows: Vec<Vec<String>> = report
                    .round_loss
                    .iter()
                    .enumerate()
                    .map(|(r, l)| vec![(r + 1).to_string(), fmt(*l)])
                    .collect();
                write_table(&loss_path, &["round".into(), "loss".into()], &rows)?;
                Ok([path, loss_path])
            })
            .collect::<Result<Vec<_>>>()?;
        let outputs: Vec<PathBuf> = outputs.into_iter().flatten().collect();
        self.finish(Stage::Train, cfg.train.seed, &inputs, &outputs)
    }

    pub fn read_model(&self, mode: InputMode) -> Result<SubnetModel> {
        let path = self.model_path(mode);
        let ck: Checkpoint = read_json(&path)?;
        let model = ck.into_model()?;
        if model.n_visible != self.nv() || model.q != self.cfg.species.q || model.spec.input_mode != mode {
            return Err(format_err(
                &path,
                "checkpoint does not match the configured species or mode; rerun train",
            ));
        }
        Ok(model)
    }

    /// Rollout from the first estimate over the estimate horizon, sampled
    /// on the estimate grid.
    pub fn rollout_series(&self, model: &SubnetModel, ml: &ParamSeries) -> Result<ParamSeries> {
        let (t0, t1) = (ml.times[0], *ml.times.last().expect("non-empty series"));
        let dt = self.cfg.rollout_dt();
        let stride = (self.cfg.model.dt_write / dt).round() as usize;
        let rolled = euler_rollout(model, &ml.params[0], t0, t1 - t0, dt)?;
        let params: Vec<_> = rolled.params.into_iter().step_by(stride).take(ml.len()).collect();
        if params.len() != ml.len() {
            return Err(Error::Usage("rollout.dt does not tile the estimate grid".into()));
        }
        Ok(ParamSeries {
            times: ml.times.clone(),
            params,
        })
    }

    pub fn rollout(&self) -> Result<StageManifest> {
        let mut inputs = Vec::new();
        let mut outputs = Vec::new();
        for &mode in &self.cfg.subnet.modes {
            let model = self.read_model(mode)?;
            inputs.push(self.model_path(mode));
            let paths = self
                .cfg
                .all_conditions()
                .par_iter()
                .map(|&c| {
                    let input = self.estimate_path(c);
                    let series = self.rollout_series(&model, &read_param_series(&input)?)?;
                    let path = self.rollout_path(mode, c);
                    write_param_series(&path, &series)?;
                    Ok((input, path))
                })
                .collect::<Result<Vec<_>>>()?;
            for (i, o) in paths {
                inputs.push(i);
                outputs.push(o);
            }
        }
        self.finish(Stage::Rollout, 0, &inputs, &outputs)
    }

    /// Count-to-concentration divisor for a species.
    fn per_unit(&self, species: &str) -> f64 {
        let receptor = species == RECEPTOR_TOTAL || (0..RECEPTOR_STATES).any(|i| receptor_name(i) == species);
        if receptor {
            1.0
        } else {
            self.cfg.model.particles_per_micromolar()
        }
    }

    pub fn analyze(&self) -> Result<StageManifest> {
        let cfg = &self.cfg;
        let dir = self.analysis_dir();
        ensure_dir(&dir)?;
        let tr = self.read_transform()?;
        let mut inputs = vec![self.transform_path()];
        let conditions = cfg.all_conditions();
        let names = param_names(self.nv(), cfg.species.q);
        let obs = cfg
            .species
            .visible
            .iter()
            .position(|s| *s == cfg.analyze.observable)
            .expect("validated observable");
        let per_unit = self.per_unit(&cfg.analyze.observable);

        let mut ml = BTreeMap::new();
        for (k, &c) in conditions.iter().enumerate() {
            let p = self.estimate_path(c);
            ml.insert(k, read_param_series(&p)?);
            inputs.push(p);
        }
        let mut models = Vec::new();
        let mut rolls = BTreeMap::new();
        for &mode in &cfg.subnet.modes {
            models.push((mode, self.read_model(mode)?));
            inputs.push(self.model_path(mode));
            for (k, &c) in conditions.iter().enumerate() {
                let p = self.rollout_path(mode, c);
                rolls.insert((mode_label(mode), k), read_param_series(&p)?);
                inputs.push(p);
            }
        }

        let mut mse_t = FigureTable::new(FigureKind::MseCurves, &[]);
        let mut mse_by_mode: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
        for (mode, _) in &models {
            let label = mode_label(*mode);
            for (k, &c) in conditions.iter().enumerate() {
                let e = mse(&rolls[&(label, k)], &ml[&k])?;
                let split = self.split(c);
                let entry = mse_by_mode.entry(label).or_default();
                if split == "train" {
                    entry.0.push(e)
                } else {
                    entry.1.push(e)
                }
                mse_t.push(vec![
                    self.cfg.condition_label(c),
                    fmt(c),
                    split.into(),
                    label.into(),
                    fmt(e),
                ])?;
            }
        }

        let mut range_t = FigureTable::new(FigureKind::RangeDiagram, &[]);
        let ranges = conditions
            .par_iter()
            .map(|&c| {
                let mut used = Vec::new();
                let ds = self.load_ensemble(c, &mut used)?;
                let r = range_for_dataset(
                    &ds,
                    &cfg.analyze.observable,
                    cfg.analyze.window,
                    per_unit,
                    cfg.analyze.resamples,
                    cfg.analyze.seed,
                )?;
                Ok((used, r))
            })
            .collect::<Result<Vec<_>>>()?;
        for (k, (used, r)) in ranges.into_iter().enumerate() {
            let c = conditions[k];
            inputs.extend(used);
            range_t.push(vec![
                self.cfg.condition_label(c),
                fmt(c),
                self.split(c).into(),
                "data".into(),
                fmt(r.c_minus_min),
                fmt(r.c_plus_max),
                fmt(r.c_minus_ci.0),
                fmt(r.c_minus_ci.1),
                fmt(r.c_plus_ci.0),
                fmt(r.c_plus_ci.1),
            ])?;
            for (mode, _) in &models {
                let label = mode_label(*mode);
                let s = &rolls[&(label, k)];
                let t_end = *s.times.last().expect("non-empty");
                let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
                for (p, &t) in s.params.iter().zip(&s.times) {
                    if t < t_end - cfg.analyze.window - 1e-9 {
                        continue;
                    }
                    let o = reconstruct_observables(p, &tr)?;
                    let sd = o.cov[(obs, obs)].max(0.0).sqrt();
                    lo = lo.min((o.mean[obs] - sd) / per_unit);
                    hi = hi.max((o.mean[obs] + sd) / per_unit);
                }
                range_t.push(vec![
                    self.cfg.condition_label(c),
                    fmt(c),
                    self.split(c).into(),
                    format!("rollout:{label}"),
                    fmt(lo),
                    fmt(hi),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                ])?;
            }
        }

        let mut slices = FigureTable::new(FigureKind::ParameterSlices, &names);
        let slice_rows = |t: &mut FigureTable, c: f64, source: &str, s: &ParamSeries| -> Result<()> {
            for (p, &time) in s.params.iter().zip(&s.times) {
                let mut row = vec![
                    self.cfg.condition_label(c),
                    fmt(c),
                    self.split(c).into(),
                    source.into(),
                    fmt(time),
                ];
                row.extend(p.flatten().into_iter().map(fmt));
                t.push(row)?;
            }
            Ok(())
        };
        for (k, &c) in conditions.iter().enumerate() {
            slice_rows(&mut slices, c, "ml", &ml[&k])?;
            for (mode, _) in &models {
                let label = mode_label(*mode);
                slice_rows(&mut slices, c, &format!("rollout:{label}"), &rolls[&(label, k)])?;
            }
        }

        let mut coeffs = vec![0.0; self.nv()];
        coeffs[obs] = 1.0;
        let mut terms_t: Option<FigureTable> = None;
        for (mode, model) in &models {
            if *mode != InputMode::ReactionCandidates {
                continue;
            }
            let label = mode_label(*mode);
            for (k, &c) in conditions.iter().enumerate() {
                let d = moment_term_decomposition(model, &rolls[&(label, k)], &coeffs, &tr)?;
                let table = terms_t.get_or_insert_with(|| {
                    let mut extra = d.names.clone();
                    extra.push("total".into());
                    FigureTable::new(FigureKind::TermDecomposition, &extra)
                });
                for ((row, &t), total) in d.terms.iter().zip(&d.times).zip(&d.total) {
                    let mut r = vec![
                        self.cfg.condition_label(c),
                        fmt(c),
                        self.split(c).into(),
                        label.into(),
                        fmt(t),
                    ];
                    r.extend(row.iter().map(|v| fmt(*v / per_unit)));
                    r.push(fmt(total / per_unit));
                    table.push(r)?;
                }
            }
        }

        let mut nonneg = Vec::new();
        for (mode, _) in &models {
            let label = mode_label(*mode);
            for (k, &c) in conditions.iter().enumerate() {
                let f = nonnegative_fraction(&rolls[&(label, k)], &tr)?;
                for (s, v) in cfg.species.visible.iter().zip(f) {
                    nonneg.push(vec![
                        label.to_string(),
                        self.cfg.condition_label(c),
                        fmt(c),
                        self.split(c).into(),
                        s.clone(),
                        fmt(v),
                    ]);
                }
            }
        }

        let mut outputs = Vec::new();
        for t in [Some(&mse_t), Some(&range_t), Some(&slices), terms_t.as_ref()]
            .into_iter()
            .flatten()
        {
            let p = dir.join(t.kind.file_name());
            t.write(&p)?;
            outputs.push(p);
        }
        let np = dir.join("nonnegative.csv");
        let header: Vec<String> = ["mode", "condition", "value", "split", "species", "fraction"]
            .map(String::from)
            .to_vec();
        write_table(&np, &header, &nonneg)?;
        outputs.push(np);
        let summary: Vec<ModeSummary> = mse_by_mode
            .into_iter()
            .map(|(mode, (mut a, mut b))| ModeSummary {
                mode: mode.into(),
                median_train_mse: median(&mut a),
                median_validate_mse: median(&mut b),
            })
            .collect();
        let sp = dir.join("summary.json");
        write_json(&sp, &summary)?;
        outputs.push(sp);
        self.finish(Stage::Analyze, cfg.analyze.seed, &inputs, &outputs)
    }

    pub fn report(&self) -> Result<StageManifest> {
        let summary: Vec<ModeSummary> = read_json(&self.analysis_dir().join("summary.json"))?;
        let report_path = self.out.join("report.json");
        let manifest_path = StageManifest::path(&self.out, Stage::Report.name());
        let mut paths = Vec::new();
        collect_files(&self.out, &mut paths)?;
        paths.retain(|p| *p != report_path && *p != manifest_path);
        let mut files = paths
            .iter()
            .map(|p| FileRecord::of(&self.out, p))
            .collect::<Result<Vec<_>>>()?;
        files.sort();
        let stages = Stage::ALL[..Stage::ALL.len() - 1]
            .iter()
            .filter(|s| StageManifest::path(&self.out, s.name()).exists())
            .map(|s| StageManifest::read(&self.out, s.name()))
            .collect::<Result<Vec<_>>>()?;
        if let Some(m) = stages.iter().find(|m| m.config_sha256 != self.config_sha256) {
            return Err(format_err(
                StageManifest::path(&self.out, &m.stage),
                "stage ran under a different configuration; rerun it",
            ));
        }
        let report = Report {
            tool_version: TOOL_VERSION.into(),
            config_sha256: self.config_sha256.clone(),
            summary,
            stages,
            files,
        };
        write_json(&report_path, &report)?;
        self.finish(Stage::Report, 0, &paths, &[report_path])
    }
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let entries = std::fs::read_dir(dir).map_err(crate::error::io_err(dir))?;
    for e in entries {
        let e = e.map_err(crate::error::io_err(dir))?;
        let p = e.path();
        if p.is_dir() {
            collect_files(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}

/// Runs `f` on a pool of `jobs` threads, or rayon's default pool.
pub fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        None => Ok(f()),
        Some(0) => Err(Error::Usage("--jobs must be at least 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Usage(format!("cannot start {n} worker threads: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

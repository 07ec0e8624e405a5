//! Ensembles of trajectories on a shared time grid, and the standardizing
//! transform fit on them.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{dimension, domain, Result};
use crate::linalg::Mat;
use crate::reaction::{receptor_name, RECEPTOR_STATES};

/// Variances below this are treated as degenerate (divisor forced to 1).
pub const DEGENERATE_VARIANCE: f64 = 1e-12;

/// Name of the derived column holding the total receptor subunit count.
pub const RECEPTOR_TOTAL: &str = "IP3R";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub seed: u64,
    /// Row-major `times × species`.
    pub values: Vec<f64>,
}

/// Per-species centering and scaling `y = (x − m)/√v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizingTransform {
    pub species: Vec<String>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl StandardizingTransform {
    /// Divisor actually applied for species `i`.
    pub fn scale(&self, i: usize) -> f64 {
        if self.v[i] < DEGENERATE_VARIANCE {
            1.0
        } else {
            libm::sqrt(self.v[i])
        }
    }

    pub fn forward(&self, i: usize, x: f64) -> f64 {
        (x - self.m[i]) / self.scale(i)
    }

    pub fn inverse(&self, i: usize, y: f64) -> f64 {
        y * self.scale(i) + self.m[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.species.iter().position(|s| s == name)
    }

    /// The transform restricted to `names`, in that order.
    pub fn select(&self, names: &[String]) -> Result<StandardizingTransform> {
        let mut out = StandardizingTransform {
            species: Vec::new(),
            m: Vec::new(),
            v: Vec::new(),
        };
        for n in names {
            let i = self
                .index_of(n)
                .ok_or_else(|| domain(format!("transform has no species {n}")))?;
            out.species.push(n.clone());
            out.m.push(self.m[i]);
            out.v.push(self.v[i]);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleDataset {
    pub species: Vec<String>,
    pub times: Vec<f64>,
    pub samples: Vec<Sample>,
    pub transform: Option<StandardizingTransform>,
    pub label: String,
}

impl EnsembleDataset {
    pub fn new(species: Vec<String>, times: Vec<f64>, samples: Vec<Sample>, label: impl Into<String>) -> Result<Self> {
        let ds = Self {
            species,
            times,
            samples,
            transform: None,
            label: label.into(),
        };
        ds.check()?;
        Ok(ds)
    }

    fn check(&self) -> Result<()> {
        let cells = self.times.len() * self.species.len();
        for s in &self.samples {
            if s.values.len() != cells {
                return Err(dimension(format!(
                    "sample {} has {} values, expected {cells}",
                    s.seed,
                    s.values.len()
                )));
            }
        }
        if self.times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(domain("times must be strictly increasing"));
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        self.samples.len()
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn n_species(&self) -> usize {
        self.species.len()
    }

    #[inline]
    pub fn value(&self, sample: usize, time: usize, species: usize) -> f64 {
        self.samples[sample].values[time * self.species.len() + species]
    }

    pub fn species_index(&self, name: &str) -> Result<usize> {
        self.species
            .iter()
            .position(|s| s == name)
            .ok_or_else(|| domain(format!("dataset has no species {name}")))
    }

    pub fn species_indices(&self, names: &[String]) -> Result<Vec<usize>> {
        names.iter().map(|n| self.species_index(n)).collect()
    }

    /// Grid index of time `t`; fails when `t` is not on the grid.
    pub fn time_index(&self, t: f64) -> Result<usize> {
        let tol = match self.times.as_slice() {
            [a, b, ..] => 1e-6 * (b - a),
            _ => 1e-9,
        };
        self.times
            .iter()
            .position(|&x| (x - t).abs() <= tol)
            .ok_or_else(|| domain(format!("t = {t} is not on the time grid")))
    }

    /// Restriction to `t_start <= t <= t_end`.
    pub fn window(&self, t_start: f64, t_end: f64) -> Result<EnsembleDataset> {
        let eps = 1e-9 * (1.0 + t_end.abs());
        let keep: Vec<usize> = (0..self.n_times())
            .filter(|&i| self.times[i] >= t_start - eps && self.times[i] <= t_end + eps)
            .collect();
        if keep.is_empty() {
            return Err(domain(format!("window [{t_start}, {t_end}] selects no timepoints")));
        }
        let n = self.n_species();
        let samples = self
            .samples
            .iter()
            .map(|s| Sample {
                seed: s.seed,
                values: keep
                    .iter()
                    .flat_map(|&i| s.values[i * n..(i + 1) * n].iter().copied())
                    .collect(),
            })
            .collect();
        Ok(EnsembleDataset {
            species: self.species.clone(),
            times: keep.iter().map(|&i| self.times[i]).collect(),
            samples,
            transform: self.transform.clone(),
            label: self.label.clone(),
        })
    }

    /// Keeps only the named species, in the given order.
    pub fn select(&self, names: &[String]) -> Result<EnsembleDataset> {
        let idx = self.species_indices(names)?;
        let n = self.n_species();
        let samples = self
            .samples
            .iter()
            .map(|s| Sample {
                seed: s.seed,
                values: (0..self.n_times())
                    .flat_map(|t| idx.iter().map(move |&i| s.values[t * n + i]))
                    .collect(),
            })
            .collect();
        let transform = match &self.transform {
            Some(tr) => Some(tr.select(names)?),
            None => None,
        };
        Ok(EnsembleDataset {
            species: names.to_vec(),
            times: self.times.clone(),
            samples,
            transform,
            label: self.label.clone(),
        })
    }

    /// Appends a derived `IP3R` column with the total receptor subunit count.
    pub fn with_receptor_total(&self) -> Result<EnsembleDataset> {
        if self.species.iter().any(|s| s == RECEPTOR_TOTAL) {
            return Ok(self.clone());
        }
        let names: Vec<String> = (0..RECEPTOR_STATES).map(receptor_name).collect();
        let idx = self.species_indices(&names)?;
        let n = self.n_species();
        let samples = self
            .samples
            .iter()
            .map(|s| {
                let mut values = Vec::with_capacity(self.n_times() * (n + 1));
                for t in 0..self.n_times() {
                    let row = &s.values[t * n..(t + 1) * n];
                    values.extend_from_slice(row);
                    values.push(idx.iter().map(|&i| row[i]).sum());
                }
                Sample { seed: s.seed, values }
            })
            .collect();
        let mut species = self.species.clone();
        species.push(RECEPTOR_TOTAL.to_string());
        Ok(EnsembleDataset {
            species,
            times: self.times.clone(),
            samples,
            transform: None,
            label: self.label.clone(),
        })
    }

    /// `M × N_v` matrix at time `t` for the given species columns.
    pub fn data_matrix_at(&self, t: f64, visible: &[usize]) -> Result<Mat> {
        let ti = self.time_index(t)?;
        self.data_matrix_at_index(ti, visible)
    }

    pub fn data_matrix_at_index(&self, ti: usize, visible: &[usize]) -> Result<Mat> {
        if ti >= self.n_times() {
            return Err(domain("time index out of range"));
        }
        if let Some(&bad) = visible.iter().find(|&&i| i >= self.n_species()) {
            return Err(domain(format!("species column {bad} out of range")));
        }
        let mut m = Mat::zeros(self.n_samples(), visible.len());
        for s in 0..self.n_samples() {
            for (c, &sp) in visible.iter().enumerate() {
                m[(s, c)] = self.value(s, ti, sp);
            }
        }
        Ok(m)
    }
}

/// Fits `m`, `v` pooled over time, samples and every dataset given.
pub fn fit_transform(datasets: &[&EnsembleDataset]) -> Result<StandardizingTransform> {
    let first = datasets
        .first()
        .ok_or_else(|| domain("no datasets to fit a transform on"))?;
    let species = first.species.clone();
    for ds in datasets {
        if ds.species != species {
            return Err(domain(format!("dataset {} has different species", ds.label)));
        }
    }
    let n = species.len();
    let count: usize = datasets.iter().map(|d| d.n_samples() * d.n_times()).sum();
    if count == 0 {
        return Err(domain("datasets contain no values"));
    }
    let mut m = alloc::vec![0.0; n];
    for ds in datasets {
        for s in &ds.samples {
            for row in s.values.chunks_exact(n) {
                for (acc, x) in m.iter_mut().zip(row) {
                    *acc += x;
                }
            }
        }
    }
    m.iter_mut().for_each(|x| *x /= count as f64);
    let mut v = alloc::vec![0.0; n];
    for ds in datasets {
        for s in &ds.samples {
            for row in s.values.chunks_exact(n) {
                for i in 0..n {
                    let d = row[i] - m[i];
                    v[i] += d * d;
                }
            }
        }
    }
    v.iter_mut().for_each(|x| *x /= count as f64);
    Ok(StandardizingTransform { species, m, v })
}

/// Applies `y = (x − m)/√v` species by species.
pub fn apply_transform(ds: &EnsembleDataset, tr: &StandardizingTransform) -> Result<EnsembleDataset> {
    map_values(ds, tr, |tr, i, x| tr.forward(i, x)).map(|mut out| {
        out.transform = Some(tr.clone());
        out
    })
}

/// Inverse of [`apply_transform`].
pub fn invert_transform(ds: &EnsembleDataset, tr: &StandardizingTransform) -> Result<EnsembleDataset> {
    map_values(ds, tr, |tr, i, y| tr.inverse(i, y)).map(|mut out| {
        out.transform = None;
        out
    })
}

fn map_values(
    ds: &EnsembleDataset,
    tr: &StandardizingTransform,
    f: impl Fn(&StandardizingTransform, usize, f64) -> f64,
) -> Result<EnsembleDataset> {
    if ds.species != tr.species {
        return Err(domain("transform species do not match the dataset"));
    }
    let n = ds.n_species();
    let samples = ds
        .samples
        .iter()
        .map(|s| Sample {
            seed: s.seed,
            values: s.values.iter().enumerate().map(|(k, &x)| f(tr, k % n, x)).collect(),
        })
        .collect();
    Ok(EnsembleDataset {
        species: ds.species.clone(),
        times: ds.times.clone(),
        samples,
        transform: ds.transform.clone(),
        label: ds.label.clone(),
    })
}

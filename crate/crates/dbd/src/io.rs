//! File formats: trajectory, parameter-series and training-pair CSVs plus
//! JSON documents.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use dbd_core::pca::{standard_dim, ParamSeries};
use dbd_core::ssa::Trajectory;
use dbd_core::tvr::TrainingPairs;
use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{format_err, io_err, Result};

pub fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(io_err(path))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    Ok(BufWriter::new(File::create(path).map_err(io_err(path))?))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = File::open(path).map_err(io_err(path))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(io_err(path))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| format_err(path, e))?;
    w.write_all(b"\n").map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| format_err(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(create(path)?))
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    csv::Reader::from_path(path).map_err(|e| format_err(path, e))
}

fn csv_fail(path: &Path) -> impl Fn(csv::Error) -> crate::error::Error + '_ {
    move |e| format_err(path, e)
}

fn parse<T: std::str::FromStr>(path: &Path, field: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    field
        .trim()
        .parse()
        .map_err(|e| format_err(path, format!("bad value {field:?}: {e}")))
}

/// Writes rows of numbers under a header; floats use the shortest
/// round-trip representation.
pub fn write_table(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let fail = csv_fail(path);
    w.write_record(header).map_err(&fail)?;
    for r in rows {
        w.write_record(r).map_err(&fail)?;
    }
    w.flush().map_err(io_err(path))
}

pub fn fmt(x: f64) -> String {
    format!("{x}")
}

/// Header `t,<species...>,seed`, one row per write time.
pub fn write_trajectory(path: &Path, tr: &Trajectory) -> Result<()> {
    let mut header = vec!["t".to_string()];
    header.extend(tr.species.iter().cloned());
    header.push("seed".into());
    let n = tr.species.len();
    let rows: Vec<Vec<String>> = tr
        .times
        .iter()
        .enumerate()
        .map(|(k, t)| {
            let mut r = vec![fmt(*t)];
            r.extend(tr.counts[k * n..(k + 1) * n].iter().map(|c| c.to_string()));
            r.push(tr.seed.to_string());
            r
        })
        .collect();
    write_table(path, &header, &rows)
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory> {
    let mut rdr = csv_reader(path)?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(csv_fail(path))?
        .iter()
        .map(String::from)
        .collect();
    if header.len() < 3 || header[0] != "t" || header[header.len() - 1] != "seed" {
        return Err(format_err(path, "trajectory header must be t,<species...>,seed"));
    }
    let species = header[1..header.len() - 1].to_vec();
    let mut times = Vec::new();
    let mut counts = Vec::new();
    let mut seed = None;
    for rec in rdr.records() {
        let rec = rec.map_err(csv_fail(path))?;
        times.push(parse::<f64>(path, &rec[0])?);
        for k in 1..header.len() - 1 {
            counts.push(parse::<u64>(path, &rec[k])?);
        }
        let s: u64 = parse(path, &rec[header.len() - 1])?;
        if *seed.get_or_insert(s) != s {
            return Err(format_err(path, "seed column is not constant"));
        }
    }
    Ok(Trajectory {
        species,
        times,
        counts,
        seed: seed.ok_or_else(|| format_err(path, "trajectory has no rows"))?,
    })
}

/// `b_i, W_ik, sigma2` with 1-based indices (`W_i_k` once an index
/// needs two digits).
pub fn param_names(nv: usize, q: usize) -> Vec<String> {
    let mut names: Vec<String> = (1..=nv).map(|i| format!("b_{i}")).collect();
    let wide = nv > 9 || q > 9;
    for i in 1..=nv {
        for k in 1..=q {
            names.push(if wide {
                format!("W_{i}_{k}")
            } else {
                format!("W_{i}{k}")
            });
        }
    }
    names.push("sigma2".into());
    names
}

fn shape_from_names(path: &Path, names: &[String]) -> Result<(usize, usize)> {
    let nv = names.iter().take_while(|n| n.starts_with("b_")).count();
    if nv == 0 || names.len() < nv + 1 || !(names.len() - nv - 1).is_multiple_of(nv) {
        return Err(format_err(path, "cannot infer N_v and q from the header"));
    }
    let q = (names.len() - nv - 1) / nv;
    if names != param_names(nv, q).as_slice() {
        return Err(format_err(path, "unexpected parameter column names"));
    }
    Ok((nv, q))
}

pub fn write_param_series(path: &Path, series: &ParamSeries) -> Result<()> {
    let mut header = vec!["t".to_string()];
    header.extend(param_names(series.n_visible(), series.q()));
    let rows: Vec<Vec<String>> = series
        .times
        .iter()
        .zip(&series.params)
        .map(|(t, p)| {
            std::iter::once(fmt(*t))
                .chain(p.flatten().into_iter().map(fmt))
                .collect()
        })
        .collect();
    write_table(path, &header, &rows)
}

pub fn read_param_series(path: &Path) -> Result<ParamSeries> {
    let mut rdr = csv_reader(path)?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(csv_fail(path))?
        .iter()
        .map(String::from)
        .collect();
    if header.first().map(String::as_str) != Some("t") {
        return Err(format_err(path, "first column must be t"));
    }
    let (nv, q) = shape_from_names(path, &header[1..])?;
    let mut times = Vec::new();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_fail(path))?;
        times.push(parse::<f64>(path, &rec[0])?);
        rows.push(
            (1..header.len())
                .map(|k| parse::<f64>(path, &rec[k]))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    Ok(ParamSeries::from_flat(times, nv, q, &rows)?)
}

/// Header `t, <θ̂ names>, <d_ + θ̂ names>`.
pub fn write_pairs(path: &Path, pairs: &TrainingPairs) -> Result<()> {
    let names = param_names(pairs.n_visible, pairs.q);
    let mut header = vec!["t".to_string()];
    header.extend(names.iter().cloned());
    header.extend(names.iter().map(|n| format!("d_{n}")));
    let rows: Vec<Vec<String>> = (0..pairs.len())
        .map(|k| {
            std::iter::once(fmt(pairs.times[k]))
                .chain(pairs.inputs[k].iter().map(|v| fmt(*v)))
                .chain(pairs.targets[k].iter().map(|v| fmt(*v)))
                .collect()
        })
        .collect();
    write_table(path, &header, &rows)
}

pub fn read_pairs(path: &Path) -> Result<TrainingPairs> {
    let mut rdr = csv_reader(path)?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(csv_fail(path))?
        .iter()
        .map(String::from)
        .collect();
    if header.first().map(String::as_str) != Some("t") || header.len() % 2 != 1 {
        return Err(format_err(path, "training pair header must be t, inputs, targets"));
    }
    let d = (header.len() - 1) / 2;
    let (nv, q) = shape_from_names(path, &header[1..=d])?;
    if standard_dim(nv, q) != d {
        return Err(format_err(path, "input and target widths differ"));
    }
    let mut pairs = TrainingPairs {
        n_visible: nv,
        q,
        times: Vec::new(),
        inputs: Vec::new(),
        targets: Vec::new(),
    };
    for rec in rdr.records() {
        let rec = rec.map_err(csv_fail(path))?;
        pairs.times.push(parse(path, &rec[0])?);
        pairs
            .inputs
            .push((1..=d).map(|k| parse::<f64>(path, &rec[k])).collect::<Result<_>>()?);
        pairs.targets.push(
            (d + 1..=2 * d)
                .map(|k| parse::<f64>(path, &rec[k]))
                .collect::<Result<_>>()?,
        );
    }
    Ok(pairs)
}

/// `path` relative to `root` with `/` separators.
pub fn relative(root: &Path, path: &Path) -> String {
    let rel: PathBuf = path
        .strip_prefix(root)
        .map(Path::to_path_buf)
        .unwrap_or_else(|_| path.to_path_buf());
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

#[cfg(test)]
mod tests {
    use super::*;
    use dbd_core::linalg::Mat;
    use dbd_core::pca::StandardParams;

    #[test]
    fn trajectory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        let tr = Trajectory {
            species: vec!["A".into(), "B".into()],
            times: vec![0.0, 0.1, 0.30000000000000004],
            counts: vec![1, 2, 3, 4, 5, 6],
            seed: 7,
        };
        write_trajectory(&p, &tr).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("t,A,B,seed\n0,1,2,7\n"));
        assert_eq!(read_trajectory(&p).unwrap(), tr);
    }

    #[test]
    fn series_and_pairs_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let th = StandardParams {
            b: vec![0.1, -0.2],
            w: Mat::from_vec(2, 1, vec![1.0 / 3.0, 0.5]).unwrap(),
            sigma2: 1e-7,
        };
        let s = ParamSeries {
            times: vec![10.0, 10.1],
            params: vec![th.clone(), th],
        };
        let p = dir.path().join("s.csv");
        write_param_series(&p, &s).unwrap();
        let head = std::fs::read_to_string(&p).unwrap();
        assert!(head.starts_with("t,b_1,b_2,W_11,W_21,sigma2\n"));
        assert_eq!(read_param_series(&p).unwrap(), s);
        let pairs = TrainingPairs {
            n_visible: 2,
            q: 1,
            times: vec![10.1],
            inputs: vec![vec![0.1, 0.2, 0.3, 0.4, 0.5]],
            targets: vec![vec![-1.0, 0.0, 1.0, 2.0, 1e-300]],
        };
        let p = dir.path().join("p.csv");
        write_pairs(&p, &pairs).unwrap();
        assert_eq!(read_pairs(&p).unwrap(), pairs);
    }

    #[test]
    fn malformed_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        std::fs::write(&p, "t,A\n0,1\n").unwrap();
        assert!(read_trajectory(&p).is_err());
        std::fs::write(&p, "t,b_1,sigma2\n0,abc,1\n").unwrap();
        assert!(read_param_series(&p).is_err());
        std::fs::write(&p, "t,x_1,sigma2\n0,1,1\n").unwrap();
        assert!(read_param_series(&p).is_err());
    }
}

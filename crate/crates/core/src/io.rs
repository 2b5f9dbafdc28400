//! CSV and JSON persistence. Floats are written in shortest round-trip form,
//! so reading back is bit-exact.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::coefficients::ModelSpec;
use crate::engine::{EnsembleState, Mode};
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::segment::{Trajectory, WeightedSegment};

fn header(d: usize) -> Vec<String> {
    std::iter::once("time".to_string())
        .chain((1..=d).map(|k| format!("x_{k}")))
        .collect()
}

fn write_nodes(path: &Path, d: usize, h: f64, offset: usize, values: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header(d))?;
    for (a, node) in values.chunks(d).enumerate() {
        let t = (a as f64 - offset as f64) * h;
        let mut rec = Vec::with_capacity(d + 1);
        rec.push(t.to_string());
        rec.extend(node.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Rows `(time, x)` of a node CSV; checks the header shape.
fn read_nodes(path: &Path) -> Result<(usize, Vec<f64>, Vec<f64>)> {
    let mut r = csv::Reader::from_path(path)?;
    let hdr = r.headers()?.clone();
    if hdr.len() < 2 || &hdr[0] != "time" {
        return Err(Error::MalformedSegment(format!(
            "{}: expected columns time, x_1, ..., x_d",
            path.display()
        )));
    }
    let d = hdr.len() - 1;
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let parse = |s: &str| {
            s.trim().parse::<f64>().map_err(|e| {
                Error::MalformedSegment(format!("{} row {}: `{s}`: {e}", path.display(), line + 2))
            })
        };
        times.push(parse(&rec[0])?);
        for k in 1..=d {
            values.push(parse(&rec[k])?);
        }
    }
    Ok((d, times, values))
}

fn check_times(path: &Path, times: &[f64], h: f64, offset: usize) -> Result<()> {
    for (a, t) in times.iter().enumerate() {
        let want = (a as f64 - offset as f64) * h;
        if (t - want).abs() > 1e-9 * h {
            return Err(Error::GridMismatch(format!(
                "{}: node {a} at time {t}, grid expects {want}",
                path.display()
            )));
        }
    }
    Ok(())
}

/// Segment as CSV with times `-T_hist..0`.
pub fn write_segment_csv(path: &Path, seg: &WeightedSegment) -> Result<()> {
    write_nodes(path, seg.dim(), seg.h(), seg.hist_steps(), seg.values())
}

pub fn read_segment_csv(path: &Path, tau: f64, h: f64) -> Result<WeightedSegment> {
    let (d, times, values) = read_nodes(path)?;
    if times.len() < 2 {
        return Err(Error::MalformedSegment(format!("{}: fewer than two nodes", path.display())));
    }
    check_times(path, &times, h, times.len() - 1)?;
    WeightedSegment::from_flat(tau, h, d, values)
}

/// Trajectory as CSV with times `-T_hist..T`.
pub fn write_trajectory_csv(path: &Path, tr: &Trajectory) -> Result<()> {
    write_nodes(path, tr.dim(), tr.grid().h(), tr.grid().hist_steps(), tr.values())
}

pub fn read_trajectory_csv(path: &Path, grid: &GridSpec, tau: f64) -> Result<Trajectory> {
    let (d, times, values) = read_nodes(path)?;
    if times.len() != grid.total_nodes() {
        return Err(Error::GridMismatch(format!(
            "{}: {} nodes, grid has {}",
            path.display(),
            times.len(),
            grid.total_nodes()
        )));
    }
    check_times(path, &times, grid.h(), grid.hist_steps())?;
    Trajectory::new(*grid, tau, d, values)
}

/// `manifest.json` of an ensemble directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleManifest {
    pub model: ModelSpec,
    /// Recorded grid.
    pub grid: GridSpec,
    #[serde(rename = "M")]
    pub m: usize,
    pub master_seed: u64,
    pub mode: Mode,
    pub tau: f64,
    pub d: usize,
    pub files: Vec<String>,
}

/// Write `manifest.json` and one `particle_NNNNN.csv` per particle.
pub fn write_ensemble(dir: &Path, ens: &EnsembleState, model: &ModelSpec, master_seed: u64) -> Result<EnsembleManifest> {
    fs::create_dir_all(dir)?;
    let files: Vec<String> = (0..ens.len()).map(|i| format!("particle_{i:05}.csv")).collect();
    for (p, f) in ens.particles().iter().zip(&files) {
        write_trajectory_csv(&dir.join(f), p)?;
    }
    let manifest = EnsembleManifest {
        model: model.clone(),
        grid: ens.grid,
        m: ens.len(),
        master_seed,
        mode: ens.mode,
        tau: ens.tau(),
        d: ens.dim(),
        files,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

pub fn read_ensemble(dir: &Path) -> Result<(EnsembleManifest, EnsembleState)> {
    let manifest: EnsembleManifest = read_json(&dir.join("manifest.json"))?;
    if manifest.files.len() != manifest.m {
        return Err(Error::Shape(format!(
            "manifest lists {} files for M = {}",
            manifest.files.len(),
            manifest.m
        )));
    }
    let particles = manifest
        .files
        .iter()
        .map(|f| read_trajectory_csv(&dir.join(f), &manifest.grid, manifest.tau))
        .collect::<Result<Vec<_>>>()?;
    let ens = EnsembleState::from_particles(manifest.mode, particles)?;
    Ok((manifest, ens))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let s = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&s)?)
}

/// Numeric table with named columns.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Series {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Series {
    pub fn new(columns: &[&str]) -> Self {
        Series {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.columns)?;
        for r in &self.rows {
            w.write_record(r.iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Series> {
        let mut r = csv::Reader::from_path(path)?;
        let columns: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let row = rec
                .iter()
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|e| Error::Config(format!("{}: `{s}`: {e}", path.display())))
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Ok(Series { columns, rows })
    }
}

/// `dir/name`, creating `dir`.
pub fn artifact(dir: &Path, name: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    Ok(dir.join(name))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::CoefficientSet;
    use crate::engine::{point_initials, simulate_interacting, SimOptions};
    use crate::noise::NoisePlan;
    use proptest::prelude::*;

    #[test]
    fn ensemble_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let grid = GridSpec::new(0.1, 0.5, 1.0).unwrap();
        let c = CoefficientSet::zero(2, 1.0).unwrap();
        let inits = point_initials(&[vec![0.1, 1.0 / 3.0], vec![-2.5, 1e-300]], 1.0, &grid).unwrap();
        let (ens, _) = simulate_interacting(&c, &inits, &grid, &NoisePlan::new(1), &SimOptions::default()).unwrap();
        let spec = ModelSpec::new("zero", serde_json::json!({}));
        write_ensemble(dir.path(), &ens, &spec, 7).unwrap();
        let (m, back) = read_ensemble(dir.path()).unwrap();
        assert_eq!(m.m, 2);
        assert_eq!(m.master_seed, 7);
        assert_eq!(back.particles(), ens.particles());
    }

    #[test]
    fn malformed_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        fs::write(&p, "time,x_1\n-0.5,1\n0,abc\n").unwrap();
        assert!(matches!(read_segment_csv(&p, 1.0, 0.5), Err(Error::MalformedSegment(_))));
        fs::write(&p, "time,x_1\n-0.4,1\n0,1\n").unwrap();
        assert!(matches!(read_segment_csv(&p, 1.0, 0.5), Err(Error::GridMismatch(_))));
    }

    proptest! {
        #[test]
        fn segment_csv_is_bit_exact(vals in proptest::collection::vec(-1e12f64..1e12, 6)) {
            let dir = tempfile::tempdir().unwrap();
            let seg = WeightedSegment::from_flat(0.7, 0.25, 2, vals).unwrap();
            let p = dir.path().join("s.csv");
            write_segment_csv(&p, &seg).unwrap();
            let back = read_segment_csv(&p, 0.7, 0.25).unwrap();
            prop_assert_eq!(back.values(), seg.values());
        }
    }

    #[test]
    fn series_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = Series::new(&["t", "v"]);
        s.push(vec![0.0, 0.1 + 0.2]);
        s.push(vec![1.0, f64::INFINITY]);
        let p = dir.path().join("s.csv");
        s.write_csv(&p).unwrap();
        assert_eq!(Series::read_csv(&p).unwrap(), s);
    }
}

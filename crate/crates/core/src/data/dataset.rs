use std::fs;
use std::path::Path;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetworkKind {
    Sensor,
    Grid,
}

/// Region × time observations plus sampling metadata and the spatial network.
#[derive(Clone, Debug, PartialEq)]
pub struct TrafficDataset {
    pub name: String,
    /// `[R, T]`, row per region.
    pub values: Tensor,
    pub sample_rate_minutes: u32,
    pub start: DateTime<Utc>,
    pub network_kind: NetworkKind,
    pub grid_dims: Option<(usize, usize)>,
    /// `[R, R]`, symmetric, non-negative, zero diagonal.
    pub adjacency: Tensor,
}

/// `meta.json` schema of a dataset directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub name: String,
    pub num_regions: usize,
    pub num_steps: usize,
    pub sample_rate_minutes: u32,
    pub start_timestamp: String,
    pub network: NetworkKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_rows: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_cols: Option<usize>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatrixFormat {
    /// `data.f32`: little-endian `f32`, row-major `R×T`.
    F32,
    /// `data.csv`: one region per row.
    #[default]
    Csv,
}

pub(crate) const SYMMETRY_TOL: f64 = 1e-12;
const MINUTES_PER_DAY: u32 = 24 * 60;

impl TrafficDataset {
    pub fn regions(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn steps(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn series(&self, region: usize) -> &[f64] {
        let t = self.steps();
        &self.values.data()[region * t..(region + 1) * t]
    }

    pub fn steps_per_day(&self) -> usize {
        (MINUTES_PER_DAY / self.sample_rate_minutes) as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.rank() != 2 || self.regions() == 0 {
            return Err(Error::Data(format!(
                "dataset '{}' needs at least one region, got shape {:?}",
                self.name,
                self.values.shape()
            )));
        }
        validate_sample_rate(self.sample_rate_minutes)?;
        let r = self.regions();
        if self.adjacency.shape() != [r, r] {
            return Err(Error::Shape(format!(
                "adjacency {:?} for {r} regions",
                self.adjacency.shape()
            )));
        }
        check_adjacency(&self.adjacency)?;
        if let (NetworkKind::Grid, Some((rows, cols))) = (self.network_kind, self.grid_dims) {
            if rows * cols != r {
                return Err(Error::Data(format!("grid {rows}×{cols} does not hold {r} regions")));
            }
        }
        Ok(())
    }

    pub fn meta(&self) -> DatasetMeta {
        DatasetMeta {
            name: self.name.clone(),
            num_regions: self.regions(),
            num_steps: self.steps(),
            sample_rate_minutes: self.sample_rate_minutes,
            start_timestamp: self.start.to_rfc3339_opts(SecondsFormat::Secs, true),
            network: self.network_kind,
            grid_rows: self.grid_dims.map(|d| d.0),
            grid_cols: self.grid_dims.map(|d| d.1),
        }
    }

    /// Regions `indices` in the given order, with the induced adjacency.
    pub fn select_regions(&self, indices: &[usize]) -> Result<TrafficDataset> {
        let r = self.regions();
        if let Some(&bad) = indices.iter().find(|&&i| i >= r) {
            return Err(Error::Index(format!("region {bad} of {r}")));
        }
        let t = self.steps();
        let mut values = Vec::with_capacity(indices.len() * t);
        for &i in indices {
            values.extend_from_slice(self.series(i));
        }
        let n = indices.len();
        let adjacency = Tensor::from_fn(&[n, n], |k| {
            self.adjacency.data()[indices[k / n] * r + indices[k % n]]
        });
        Ok(TrafficDataset {
            name: self.name.clone(),
            values: Tensor::new(&[n, t], values)?,
            sample_rate_minutes: self.sample_rate_minutes,
            start: self.start,
            network_kind: self.network_kind,
            grid_dims: if n == r { self.grid_dims } else { None },
            adjacency,
        })
    }
}

pub(crate) fn validate_sample_rate(rate: u32) -> Result<()> {
    if rate == 0 || MINUTES_PER_DAY % rate != 0 {
        return Err(Error::Data(format!(
            "sample rate of {rate} minutes does not divide a day"
        )));
    }
    Ok(())
}

pub(crate) fn check_adjacency(a: &Tensor) -> Result<()> {
    let r = a.shape()[0];
    let d = a.data();
    for i in 0..r {
        if d[i * r + i] != 0.0 {
            return Err(Error::Data(format!("adjacency has a self-loop at region {i}")));
        }
        for j in 0..r {
            let w = d[i * r + j];
            if !w.is_finite() || w < 0.0 {
                return Err(Error::Data(format!("adjacency weight A[{i},{j}]={w} is not a finite non-negative value")));
            }
            let wt = d[j * r + i];
            if (w - wt).abs() > SYMMETRY_TOL {
                return Err(Error::Asymmetric {
                    i,
                    j,
                    a_ij: w,
                    a_ji: wt,
                });
            }
        }
    }
    Ok(())
}

pub fn parse_timestamp(s: &str) -> Result<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(s)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| Error::Data(format!("bad timestamp '{s}': {e}")))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    match fs::read(path) {
        Ok(b) => Ok(b),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(Error::MissingFile(path.to_path_buf())),
        Err(e) => Err(Error::io(path, e)),
    }
}

/// Reads a dataset directory (`meta.json`, `data.f32` or `data.csv`,
/// `adjacency.csv`). With `impute`, NaNs are filled per region by linear
/// interpolation between the nearest observed neighbours; leading and
/// trailing gaps take the nearest observed value.
pub fn load_dataset(dir: &Path, impute: bool) -> Result<TrafficDataset> {
    let meta: DatasetMeta = serde_json::from_slice(&read(&dir.join("meta.json"))?)?;
    validate_sample_rate(meta.sample_rate_minutes)?;
    let (r, t) = (meta.num_regions, meta.num_steps);

    let f32_path = dir.join("data.f32");
    let csv_path = dir.join("data.csv");
    let mut values = if f32_path.exists() {
        let bytes = read(&f32_path)?;
        if bytes.len() != r * t * 4 {
            return Err(Error::Shape(format!(
                "meta declares {r}×{t} values but {} holds {} bytes",
                f32_path.display(),
                bytes.len()
            )));
        }
        bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect::<Vec<_>>()
    } else if csv_path.exists() {
        read_matrix_csv(&csv_path, r, t)?
    } else {
        return Err(Error::MissingFile(f32_path));
    };

    let missing = values.iter().filter(|v| v.is_nan()).count();
    if missing > 0 {
        if !impute {
            return Err(Error::MissingValues { count: missing });
        }
        for row in values.chunks_mut(t) {
            impute_series(row)?;
        }
    }
    if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::Data(format!("non-finite observation {bad}")));
    }

    let adjacency = read_adjacency(&dir.join("adjacency.csv"), r)?;
    let grid_dims = match (meta.grid_rows, meta.grid_cols) {
        (Some(a), Some(b)) => Some((a, b)),
        _ => None,
    };
    let ds = TrafficDataset {
        name: meta.name,
        values: Tensor::new(&[r, t], values)?,
        sample_rate_minutes: meta.sample_rate_minutes,
        start: parse_timestamp(&meta.start_timestamp)?,
        network_kind: meta.network,
        grid_dims,
        adjacency,
    };
    ds.validate()?;
    Ok(ds)
}

fn read_matrix_csv(path: &Path, r: usize, t: usize) -> Result<Vec<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(io) if io.kind() == std::io::ErrorKind::NotFound => {
                Error::MissingFile(path.to_path_buf())
            }
            _ => Error::Csv(e),
        })?;
    let mut out = Vec::with_capacity(r * t);
    let mut rows = 0;
    for rec in reader.records() {
        let rec = rec?;
        if rec.len() != t {
            return Err(Error::Shape(format!(
                "row {rows} of {} has {} columns, meta declares {t}",
                path.display(),
                rec.len()
            )));
        }
        for field in rec.iter() {
            let f = field.trim();
            let v = if f.is_empty() || f.eq_ignore_ascii_case("nan") {
                f64::NAN
            } else {
                f.parse::<f64>()
                    .map_err(|e| Error::Data(format!("bad value '{f}' in {}: {e}", path.display())))?
            };
            out.push(v);
        }
        rows += 1;
    }
    if rows != r {
        return Err(Error::Shape(format!(
            "{} has {rows} rows, meta declares {r}",
            path.display()
        )));
    }
    Ok(out)
}

#[derive(Debug, Deserialize, Serialize)]
struct EdgeRecord {
    src: usize,
    dst: usize,
    weight: f64,
}

fn read_adjacency(path: &Path, r: usize) -> Result<Tensor> {
    let bytes = read(path)?;
    let mut reader = csv::Reader::from_reader(bytes.as_slice());
    let mut a = Tensor::zeros(&[r, r]);
    let mut seen = vec![false; r * r];
    for rec in reader.deserialize::<EdgeRecord>() {
        let e = rec?;
        if e.src >= r || e.dst >= r {
            return Err(Error::Index(format!(
                "edge ({}, {}) outside {r} regions",
                e.src, e.dst
            )));
        }
        if e.src == e.dst {
            return Err(Error::Data(format!("self-loop at region {}", e.src)));
        }
        let (i, j) = (e.src, e.dst);
        // An edge may appear in both directions; the weights must then agree.
        if seen[j * r + i] && (a.data()[j * r + i] - e.weight).abs() > SYMMETRY_TOL {
            return Err(Error::Asymmetric {
                i,
                j,
                a_ij: e.weight,
                a_ji: a.data()[j * r + i],
            });
        }
        seen[i * r + j] = true;
        a.data_mut()[i * r + j] = e.weight;
        if !seen[j * r + i] {
            a.data_mut()[j * r + i] = e.weight;
        }
    }
    Ok(a)
}

fn impute_series(row: &mut [f64]) -> Result<()> {
    let observed: Vec<usize> = (0..row.len()).filter(|&i| !row[i].is_nan()).collect();
    let (Some(&first), Some(&last)) = (observed.first(), observed.last()) else {
        return Err(Error::Data("a region has no observed values to impute from".into()));
    };
    for i in 0..first {
        row[i] = row[first];
    }
    for i in last + 1..row.len() {
        row[i] = row[last];
    }
    for pair in observed.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let (va, vb) = (row[a], row[b]);
        for i in a + 1..b {
            let w = (i - a) as f64 / (b - a) as f64;
            row[i] = va + w * (vb - va);
        }
    }
    Ok(())
}

/// Writes `ds` in the directory layout read by [`load_dataset`].
pub fn save_dataset(ds: &TrafficDataset, dir: &Path, format: MatrixFormat) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta_path = dir.join("meta.json");
    fs::write(&meta_path, serde_json::to_vec_pretty(&ds.meta())?).map_err(|e| Error::io(&meta_path, e))?;

    match format {
        MatrixFormat::F32 => {
            let path = dir.join("data.f32");
            let bytes: Vec<u8> = ds
                .values
                .data()
                .iter()
                .flat_map(|&v| (v as f32).to_le_bytes())
                .collect();
            fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        }
        MatrixFormat::Csv => {
            let path = dir.join("data.csv");
            let mut w = csv::WriterBuilder::new().has_headers(false).from_path(&path)?;
            for r in 0..ds.regions() {
                w.write_record(ds.series(r).iter().map(|v| format!("{v}")))?;
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
        }
    }

    let path = dir.join("adjacency.csv");
    let mut w = csv::Writer::from_path(&path)?;
    let r = ds.regions();
    let mut any = false;
    for i in 0..r {
        for j in i + 1..r {
            let weight = ds.adjacency.data()[i * r + j];
            if weight != 0.0 {
                w.serialize(EdgeRecord { src: i, dst: j, weight })?;
                any = true;
            }
        }
    }
    if !any {
        w.write_record(["src", "dst", "weight"])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> TrafficDataset {
        TrafficDataset {
            name: "fixture".into(),
            values: Tensor::from_fn(&[2, 10], |i| i as f64 * 0.5),
            sample_rate_minutes: 5,
            start: parse_timestamp("2020-01-01T00:00:00Z").unwrap(),
            network_kind: NetworkKind::Sensor,
            grid_dims: None,
            adjacency: Tensor::matrix(&[&[0.0, 0.75], &[0.75, 0.0]]),
        }
    }

    #[test]
    fn round_trip_both_formats() {
        for format in [MatrixFormat::F32, MatrixFormat::Csv] {
            let dir = tempfile::tempdir().unwrap();
            let ds = fixture();
            save_dataset(&ds, dir.path(), format).unwrap();
            let back = load_dataset(dir.path(), false).unwrap();
            assert_eq!(back.regions(), 2);
            assert_eq!(back.steps(), 10);
            assert_eq!(back, ds);
        }
    }

    #[test]
    fn interior_nan_is_interpolated() {
        let dir = tempfile::tempdir().unwrap();
        let mut ds = fixture();
        ds.values = Tensor::from_fn(&[2, 10], |i| (i % 10) as f64);
        ds.values.data_mut()[2] = 2.0;
        ds.values.data_mut()[3] = f64::NAN;
        ds.values.data_mut()[4] = 4.0;
        save_dataset(&ds, dir.path(), MatrixFormat::Csv).unwrap();
        assert!(matches!(
            load_dataset(dir.path(), false),
            Err(Error::MissingValues { count: 1 })
        ));
        let back = load_dataset(dir.path(), true).unwrap();
        assert_eq!(back.values.get(&[0, 3]), 3.0);
    }

    #[test]
    fn boundary_nans_are_filled() {
        let mut row = [f64::NAN, f64::NAN, 4.0, f64::NAN, 8.0, f64::NAN];
        impute_series(&mut row).unwrap();
        assert_eq!(row, [4.0, 4.0, 4.0, 6.0, 8.0, 8.0]);
    }

    #[test]
    fn asymmetric_edges_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&fixture(), dir.path(), MatrixFormat::F32).unwrap();
        fs::write(dir.path().join("adjacency.csv"), "src,dst,weight\n0,1,1.0\n1,0,2.0\n").unwrap();
        assert!(matches!(
            load_dataset(dir.path(), false),
            Err(Error::Asymmetric { .. })
        ));
    }

    #[test]
    fn distinct_load_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_dataset(dir.path(), false), Err(Error::MissingFile(_))));

        save_dataset(&fixture(), dir.path(), MatrixFormat::F32).unwrap();
        fs::remove_file(dir.path().join("adjacency.csv")).unwrap();
        assert!(matches!(load_dataset(dir.path(), false), Err(Error::MissingFile(p)) if p.ends_with("adjacency.csv")));

        save_dataset(&fixture(), dir.path(), MatrixFormat::F32).unwrap();
        fs::write(dir.path().join("data.f32"), [0u8; 12]).unwrap();
        assert!(matches!(load_dataset(dir.path(), false), Err(Error::Shape(_))));
    }

    #[test]
    fn sample_rate_must_divide_day() {
        assert!(validate_sample_rate(7).is_err());
        assert!(validate_sample_rate(5).is_ok());
        assert!(validate_sample_rate(0).is_err());
    }
}

//! Synthetic datasets and CSV ingestion.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::kmeans::{Centers, HardLabels};
use crate::numerics::{sq_dist, FeatureMatrix, RngState};

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub features: FeatureMatrix,
    pub labels: Option<HardLabels>,
    pub name: String,
}

impl LabeledDataset {
    pub fn new(features: FeatureMatrix, labels: Option<HardLabels>, name: impl Into<String>) -> Result<Self> {
        if let Some(l) = &labels {
            if l.len() != features.rows() {
                return Err(Error::LengthMismatch {
                    left: features.rows(),
                    right: l.len(),
                });
            }
        }
        Ok(Self {
            features,
            labels,
            name: name.into(),
        })
    }
}

const PLACEMENT_ATTEMPTS: usize = 1000;

/// `k` isotropic Gaussian clusters whose centers are pairwise at least
/// `center_dist` apart. Rows are grouped by cluster.
pub fn make_blobs(
    k: usize,
    per_cluster: usize,
    d: usize,
    center_dist: f64,
    cluster_std: f64,
    rng: &mut RngState,
) -> Result<LabeledDataset> {
    if k < 2 {
        return Err(Error::InvalidClusterCount(k));
    }
    if !(center_dist > 0.0) || !(cluster_std >= 0.0) || d == 0 || per_cluster == 0 {
        return Err(Error::ConfigInvalid(format!(
            "blobs need d >= 1, per_cluster >= 1, center_dist > 0, std >= 0 (got d={d}, per_cluster={per_cluster}, dist={center_dist}, std={cluster_std})"
        )));
    }
    // a box wide enough that rejection sampling rarely struggles
    let half = center_dist * (k as f64).powf(1.0 / d as f64).max(1.0);
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    for _ in 0..k {
        let mut placed = false;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let c: Vec<f64> = (0..d).map(|_| rng.uniform_range(-half, half)).collect();
            if centers.iter().all(|o| sq_dist(o, &c).sqrt() >= center_dist) {
                centers.push(c);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::CenterPlacementFailed {
                k,
                min_dist: center_dist,
                attempts: PLACEMENT_ATTEMPTS,
            });
        }
    }
    let centers = Centers::new(FeatureMatrix::from_rows(&centers)?)?;
    make_blobs_with_centers(&centers, per_cluster, cluster_std, rng)
}

/// Gaussian clusters around the given centers.
pub fn make_blobs_with_centers(
    centers: &Centers,
    per_cluster: usize,
    cluster_std: f64,
    rng: &mut RngState,
) -> Result<LabeledDataset> {
    let (k, d) = (centers.k(), centers.dim());
    let mut data = Vec::with_capacity(k * per_cluster * d);
    let mut labels = Vec::with_capacity(k * per_cluster);
    for c in 0..k {
        for _ in 0..per_cluster {
            for &m in centers.mu.row(c) {
                data.push(m + cluster_std * rng.standard_normal());
            }
            labels.push(c);
        }
    }
    LabeledDataset::new(
        FeatureMatrix::new(k * per_cluster, d, data)?,
        Some(HardLabels(labels)),
        "blobs",
    )
}

/// Concentric 2-D rings of radius 1, 3 (and 5), with Gaussian radial noise.
pub fn make_rings(k: usize, per_cluster: usize, noise: f64, rng: &mut RngState) -> Result<LabeledDataset> {
    if !(2..=3).contains(&k) {
        return Err(Error::ConfigInvalid(format!("rings support k in {{2, 3}}, got {k}")));
    }
    if per_cluster == 0 || !(noise >= 0.0) {
        return Err(Error::ConfigInvalid("rings need per_cluster >= 1 and noise >= 0".into()));
    }
    let mut data = Vec::with_capacity(k * per_cluster * 2);
    let mut labels = Vec::with_capacity(k * per_cluster);
    for c in 0..k {
        let radius = 1.0 + 2.0 * c as f64;
        for _ in 0..per_cluster {
            let theta = rng.uniform_range(0.0, std::f64::consts::TAU);
            let r = radius + noise * rng.standard_normal();
            data.push(r * theta.cos());
            data.push(r * theta.sin());
            labels.push(c);
        }
    }
    LabeledDataset::new(
        FeatureMatrix::new(k * per_cluster, 2, data)?,
        Some(HardLabels(labels)),
        "rings",
    )
}

/// Two equally weighted isotropic 2-D Gaussians placed symmetrically about
/// the x-axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OverlapScenario {
    /// Mass of each component lying on the far side of the bisector.
    pub overlap: f64,
    /// Distance of both centers from the origin.
    pub radius: f64,
    /// Angle of each center above/below the x-axis, in radians.
    pub half_angle: f64,
}

impl Default for OverlapScenario {
    fn default() -> Self {
        Self {
            overlap: 0.1,
            radius: 100.0,
            half_angle: 0.3,
        }
    }
}

impl OverlapScenario {
    pub fn centers(&self) -> Result<Centers> {
        let (s, c) = self.half_angle.sin_cos();
        Centers::new(FeatureMatrix::from_rows(&[
            [self.radius * c, self.radius * s],
            [self.radius * c, -self.radius * s],
        ])?)
    }

    /// Per-component standard deviation that puts `overlap` of each
    /// component's mass across the bisector.
    pub fn cluster_std(&self) -> Result<f64> {
        if !(self.overlap > 0.0 && self.overlap < 0.5) {
            return Err(Error::ConfigInvalid(format!(
                "overlap must lie in (0, 0.5), got {}",
                self.overlap
            )));
        }
        let z = Normal::standard().inverse_cdf(1.0 - self.overlap);
        let separation = 2.0 * self.radius * self.half_angle.sin();
        Ok(separation / (2.0 * z))
    }

    /// `n` points alternating between the two components.
    pub fn sample(&self, n: usize, rng: &mut RngState) -> Result<(LabeledDataset, Centers)> {
        let centers = self.centers()?;
        let std = self.cluster_std()?;
        let mut data = Vec::with_capacity(2 * n);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let c = i % 2;
            for &m in centers.mu.row(c) {
                data.push(m + std * rng.standard_normal());
            }
            labels.push(c);
        }
        let ds = LabeledDataset::new(FeatureMatrix::new(n, 2, data)?, Some(HardLabels(labels)), "overlap")?;
        Ok((ds, centers))
    }
}

/// Reads comma-separated numeric rows; an initial non-numeric row is taken
/// as a header. With `has_labels` the last column holds integer labels,
/// remapped to `0..K` in order of first appearance.
pub fn load_csv(path: &Path, has_labels: bool) -> Result<LabeledDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut width = None;
    let mut values = Vec::new();
    let mut raw_labels = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(idx + 1, |p| p.line() as usize);
        if record.len() == 1 && record.get(0) == Some("") {
            continue;
        }
        let numeric = record.iter().all(|f| f.parse::<f64>().is_ok());
        if !numeric && width.is_none() && values.is_empty() && idx == 0 {
            width = Some(record.len());
            continue;
        }
        let expected = *width.get_or_insert(record.len());
        if record.len() != expected {
            return Err(Error::RaggedRows {
                path: path.to_path_buf(),
                line,
                expected,
                found: record.len(),
            });
        }
        let feature_cols = if has_labels { expected - 1 } else { expected };
        if feature_cols == 0 {
            return Err(parse_err(line, "no feature columns".into()));
        }
        for field in record.iter().take(feature_cols) {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(line, format!("not a number: {field:?}")))?;
            if !v.is_finite() {
                return Err(Error::NonFiniteValue {
                    path: path.to_path_buf(),
                    line,
                });
            }
            values.push(v);
        }
        if has_labels {
            let field = &record[expected - 1];
            let l: i64 = field
                .parse()
                .map_err(|_| parse_err(line, format!("label is not an integer: {field:?}")))?;
            raw_labels.push(l);
        }
    }
    let cols = width.map_or(0, |w| if has_labels { w - 1 } else { w });
    let rows = values.len().checked_div(cols).unwrap_or(0);
    if rows == 0 {
        return Err(parse_err(0, "no data rows".into()));
    }
    let features = FeatureMatrix::new(rows, cols, values)?;
    let labels = has_labels.then(|| {
        let mut seen = std::collections::HashMap::new();
        HardLabels(
            raw_labels
                .iter()
                .map(|l| {
                    let next = seen.len();
                    *seen.entry(*l).or_insert(next)
                })
                .collect(),
        )
    });
    let name = path
        .file_stem()
        .map_or_else(|| "csv".to_string(), |s| s.to_string_lossy().into_owned());
    LabeledDataset::new(features, labels, name)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("{other:?}"),
        },
    }
}

/// Writes a header, then features at 17 significant digits and the label column if present.
pub fn save_csv(ds: &LabeledDataset, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_csv(ds, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn write_csv<W: Write>(ds: &LabeledDataset, mut out: W) -> Result<()> {
    let d = ds.features.cols();
    let mut header: Vec<String> = (0..d).map(|j| format!("x{j}")).collect();
    if ds.labels.is_some() {
        header.push("label".into());
    }
    writeln!(out, "{}", header.join(","))?;
    for (i, row) in ds.features.iter_rows().enumerate() {
        let mut fields: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        if let Some(l) = &ds.labels {
            fields.push(l.0[i].to_string());
        }
        writeln!(out, "{}", fields.join(","))?;
    }
    Ok(())
}

/// One integer label per line, no header.
pub fn load_labels(path: &Path) -> Result<HardLabels> {
    let text = std::fs::read_to_string(path)?;
    let mut labels = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || (i == 0 && t.parse::<i64>().is_err() && t.chars().any(char::is_alphabetic)) {
            continue;
        }
        let v: i64 = t.parse().map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: format!("label is not an integer: {t:?}"),
        })?;
        labels.push(v);
    }
    let mut seen = std::collections::HashMap::new();
    Ok(HardLabels(
        labels
            .iter()
            .map(|l| {
                let next = seen.len();
                *seen.entry(*l).or_insert(next)
            })
            .collect(),
    ))
}

//! Data ingestion, response rescaling to the unit interval, covariate
//! standardization, and train/validation/test splitting.

use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CdeError, Result};

/// A flat, row-major collection of points in `R^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Points {
    data: Vec<f64>,
    n: usize,
    d: usize,
}

impl Points {
    pub fn new(data: Vec<f64>, n: usize, d: usize) -> Result<Self> {
        if data.len() != n * d {
            return Err(CdeError::DimensionMismatch {
                expected: n * d,
                found: data.len(),
            });
        }
        Ok(Self { data, n, d })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(n * d);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != d {
                return Err(CdeError::Parse {
                    row: i,
                    message: format!("expected {} columns, found {}", d, row.len()),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Self { data, n, d })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.d.max(1))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Concatenates two point sets with identical dimension.
    pub fn concat(&self, other: &Points) -> Result<Points> {
        if self.d != other.d {
            return Err(CdeError::DimensionMismatch {
                expected: self.d,
                found: other.d,
            });
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Points::new(data, self.n + other.n, self.d)
    }

    pub fn subset(&self, idx: &[usize]) -> Points {
        let mut data = Vec::with_capacity(idx.len() * self.d);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Points {
            data,
            n: idx.len(),
            d: self.d,
        }
    }
}

/// One observation: covariates `x` and an optional response `z`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub z: Option<f64>,
}

/// Invertible affine map between the raw response scale and the unit
/// interval: `unit = (raw - offset) / scale`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZTransform {
    pub offset: f64,
    pub scale: f64,
}

impl ZTransform {
    pub fn identity() -> Self {
        Self {
            offset: 0.0,
            scale: 1.0,
        }
    }

    pub fn new(offset: f64, scale: f64) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() || !offset.is_finite() {
            return Err(CdeError::InvalidParameter(format!(
                "z transform scale must be positive and finite, got offset {offset}, scale {scale}"
            )));
        }
        Ok(Self { offset, scale })
    }

    pub fn is_identity(&self) -> bool {
        self.offset == 0.0 && self.scale == 1.0
    }

    pub fn to_unit(&self, raw: f64) -> f64 {
        (raw - self.offset) / self.scale
    }

    pub fn from_unit(&self, unit: f64) -> f64 {
        self.offset + self.scale * unit
    }
}

/// A set of samples sharing one covariate dimension, together with the
/// transform that maps raw responses to the stored scale.
#[derive(Debug, Clone)]
pub struct Dataset {
    points: Points,
    responses: Vec<Option<f64>>,
    z_transform: ZTransform,
}

impl Dataset {
    pub fn new(points: Points, responses: Vec<Option<f64>>) -> Result<Self> {
        if points.n() != responses.len() {
            return Err(CdeError::DimensionMismatch {
                expected: points.n(),
                found: responses.len(),
            });
        }
        for (i, z) in responses.iter().enumerate() {
            if let Some(z) = z {
                if !z.is_finite() {
                    return Err(CdeError::Parse {
                        row: i,
                        message: format!("non-finite response {z}"),
                    });
                }
            }
        }
        Ok(Self {
            points,
            responses,
            z_transform: ZTransform::identity(),
        })
    }

    pub fn from_samples(samples: &[Sample]) -> Result<Self> {
        let rows: Vec<Vec<f64>> = samples.iter().map(|s| s.x.clone()).collect();
        let points = Points::from_rows(&rows)?;
        let responses = samples.iter().map(|s| s.z).collect();
        Dataset::new(points, responses)
    }

    pub fn n(&self) -> usize {
        self.points.n()
    }

    pub fn dim(&self) -> usize {
        self.points.dim()
    }

    pub fn points(&self) -> &Points {
        &self.points
    }

    pub fn x(&self, i: usize) -> &[f64] {
        self.points.row(i)
    }

    pub fn z(&self, i: usize) -> Option<f64> {
        self.responses[i]
    }

    pub fn z_transform(&self) -> ZTransform {
        self.z_transform
    }

    pub fn sample(&self, i: usize) -> Sample {
        Sample {
            x: self.x(i).to_vec(),
            z: self.z(i),
        }
    }

    pub fn is_fully_labeled(&self) -> bool {
        self.responses.iter().all(Option::is_some)
    }

    pub fn labeled_count(&self) -> usize {
        self.responses.iter().filter(|z| z.is_some()).count()
    }

    /// Responses of the labelled samples, in dataset order.
    pub fn labeled_z(&self) -> Vec<f64> {
        self.responses.iter().filter_map(|z| *z).collect()
    }

    /// Returns the responses, erroring on the first unlabelled sample.
    pub fn require_labels(&self) -> Result<Vec<f64>> {
        self.responses
            .iter()
            .enumerate()
            .map(|(i, z)| z.ok_or(CdeError::UnlabeledSample(i)))
            .collect()
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            points: self.points.subset(idx),
            responses: idx.iter().map(|&i| self.responses[i]).collect(),
            z_transform: self.z_transform,
        }
    }

    /// Fits the min/max affine map that sends labelled responses onto [0, 1].
    pub fn fit_response_transform(&self) -> Result<ZTransform> {
        let zs = self.labeled_z();
        if zs.len() < 2 {
            return Err(CdeError::InvalidParameter(
                "response rescaling needs at least two labelled samples".into(),
            ));
        }
        let min = zs.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = zs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if min == max {
            return Err(CdeError::DegenerateResponseRange);
        }
        ZTransform::new(min, max - min)
    }

    /// Applies a response transform fitted elsewhere (typically on the
    /// training split). Responses landing outside [0, 1] are clamped with a
    /// warning; the estimator's response basis lives on the unit interval.
    pub fn with_response_transform(&self, t: ZTransform) -> Dataset {
        let mut clamped = 0usize;
        let responses = self
            .responses
            .iter()
            .map(|z| {
                z.map(|z| {
                    let u = t.to_unit(z);
                    if !(0.0..=1.0).contains(&u) {
                        clamped += 1;
                    }
                    u.clamp(0.0, 1.0)
                })
            })
            .collect();
        if clamped > 0 {
            log::warn!("{clamped} responses fell outside [0, 1] after rescaling and were clamped");
        }
        Dataset {
            points: self.points.clone(),
            responses,
            z_transform: t,
        }
    }
}

/// Rescales labelled responses onto [0, 1] with the dataset's own min/max.
pub fn rescale_response(ds: &Dataset) -> Result<Dataset> {
    let t = ds.fit_response_transform()?;
    Ok(ds.with_response_transform(t))
}

/// Fractions for a three-way split, plus the shuffle seed.
#[derive(Debug, Clone, Copy)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train_frac: f64, val_frac: f64, test_frac: f64, seed: u64) -> Result<Self> {
        for (name, f) in [
            ("train", train_frac),
            ("val", val_frac),
            ("test", test_frac),
        ] {
            if !(0.0 < f && f < 1.0) {
                return Err(CdeError::InvalidSplit(format!(
                    "{name} fraction {f} not in (0, 1)"
                )));
            }
        }
        let sum = train_frac + val_frac + test_frac;
        if (sum - 1.0).abs() > 1e-12 {
            return Err(CdeError::InvalidSplit(format!("fractions sum to {sum}")));
        }
        Ok(Self {
            train_frac,
            val_frac,
            test_frac,
            seed,
        })
    }
}

/// Deterministic disjoint partition into train/validation/test.
///
/// Sizes are `floor(n * train_frac)`, `floor(n * val_frac)`, and the
/// remainder.
pub fn split(ds: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset, Dataset)> {
    let n = ds.n();
    if n < 3 {
        return Err(CdeError::InvalidSplit(format!(
            "need at least 3 samples to split, have {n}"
        )));
    }
    let n_train = (n as f64 * spec.train_frac).floor() as usize;
    let n_val = (n as f64 * spec.val_frac).floor() as usize;
    if n_train == 0 || n_val == 0 || n_train + n_val >= n {
        return Err(CdeError::InvalidSplit(format!(
            "split of {n} samples produces an empty part"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    idx.shuffle(&mut rng);
    let train = ds.subset(&idx[..n_train]);
    let val = ds.subset(&idx[n_train..n_train + n_val]);
    let test = ds.subset(&idx[n_train + n_val..]);
    Ok((train, val, test))
}

/// Per-coordinate affine standardization fitted on a training set.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardization {
    pub fn apply_row(&self, x: &[f64], out: &mut [f64]) {
        for k in 0..x.len() {
            out[k] = (x[k] - self.mean[k]) / self.scale[k];
        }
    }

    pub fn apply_points(&self, pts: &Points) -> Result<Points> {
        if pts.dim() != self.mean.len() {
            return Err(CdeError::DimensionMismatch {
                expected: self.mean.len(),
                found: pts.dim(),
            });
        }
        let d = pts.dim();
        let mut data = vec![0.0; pts.n() * d];
        for (i, row) in pts.rows().enumerate() {
            self.apply_row(row, &mut data[i * d..(i + 1) * d]);
        }
        Points::new(data, pts.n(), d)
    }

    pub fn apply(&self, ds: &Dataset) -> Result<Dataset> {
        Ok(Dataset {
            points: self.apply_points(ds.points())?,
            responses: ds.responses.clone(),
            z_transform: ds.z_transform,
        })
    }
}

/// Centers each coordinate at zero and scales it to unit sample variance
/// (`n - 1` denominator). Returns the standardized set and the fitted
/// transform for application to new points.
pub fn standardize_covariates(ds: &Dataset) -> Result<(Dataset, Standardization)> {
    let n = ds.n();
    let d = ds.dim();
    if n < 2 {
        return Err(CdeError::InvalidParameter(
            "standardization needs at least two samples".into(),
        ));
    }
    let mut mean = vec![0.0; d];
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for row in ds.points.rows() {
        for k in 0..d {
            mean[k] += row[k];
            lo[k] = lo[k].min(row[k]);
            hi[k] = hi[k].max(row[k]);
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let mut scale = vec![0.0; d];
    for k in 0..d {
        if lo[k] == hi[k] {
            return Err(CdeError::ZeroVariance(k));
        }
        let mut ss = 0.0;
        for row in ds.points.rows() {
            let dev = row[k] - mean[k];
            ss += dev * dev;
        }
        scale[k] = (ss / (n as f64 - 1.0)).sqrt();
        if scale[k] == 0.0 {
            return Err(CdeError::ZeroVariance(k));
        }
    }
    let t = Standardization { mean, scale };
    let standardized = t.apply(ds)?;
    Ok((standardized, t))
}

/// Reads a numeric CSV file. An optional header row is auto-detected by a
/// non-numeric first row. `response` selects the response column by header
/// name, or by zero-based index for headerless files; `None` loads every
/// column as a covariate (unlabelled data).
pub fn load_csv<P: AsRef<Path>>(path: P, response: Option<&str>) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    load_csv_reader(file, response)
}

pub fn load_csv_reader<R: Read>(reader: R, response: Option<&str>) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);

    let mut records = rdr.records();
    let first = match records.next() {
        None => return Err(CdeError::EmptyFile),
        Some(rec) => rec.map_err(|e| CdeError::Parse {
            row: 1,
            message: e.to_string(),
        })?,
    };

    let has_header = first.iter().any(|f| f.trim().parse::<f64>().is_err());
    let header: Option<Vec<String>> = if has_header {
        Some(first.iter().map(|f| f.trim().to_string()).collect())
    } else {
        None
    };

    let ncols = first.len();
    let response_idx: Option<usize> = match response {
        None => None,
        Some(name) => match &header {
            Some(cols) => Some(
                cols.iter()
                    .position(|c| c == name)
                    .ok_or_else(|| CdeError::MissingColumn(name.to_string()))?,
            ),
            None => {
                let idx: usize = name
                    .parse()
                    .map_err(|_| CdeError::MissingColumn(name.to_string()))?;
                if idx >= ncols {
                    return Err(CdeError::MissingColumn(name.to_string()));
                }
                Some(idx)
            }
        },
    };

    let parse_row = |rec: &csv::StringRecord, row: usize| -> Result<(Vec<f64>, Option<f64>)> {
        if rec.len() != ncols {
            return Err(CdeError::Parse {
                row,
                message: format!("expected {} columns, found {}", ncols, rec.len()),
            });
        }
        let mut x = Vec::with_capacity(ncols);
        let mut z = None;
        for (c, field) in rec.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| CdeError::Parse {
                row,
                message: format!("non-numeric value {:?} in column {}", field, c),
            })?;
            if Some(c) == response_idx {
                z = Some(v);
            } else {
                x.push(v);
            }
        }
        Ok((x, z))
    };

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut responses: Vec<Option<f64>> = Vec::new();
    if !has_header {
        let (x, z) = parse_row(&first, 1)?;
        rows.push(x);
        responses.push(z);
    }
    for (i, rec) in records.enumerate() {
        let row = i + 2; // 1-based, after the first physical row
        let rec = rec.map_err(|e| CdeError::Parse {
            row,
            message: e.to_string(),
        })?;
        let (x, z) = parse_row(&rec, row)?;
        rows.push(x);
        responses.push(z);
    }
    if rows.is_empty() {
        return Err(CdeError::EmptyFile);
    }
    let points = Points::from_rows(&rows)?;
    Dataset::new(points, responses)
}

/// Writes a dataset as CSV with `x1..xd[,z]` headers. Responses are written
/// on the stored scale.
pub fn write_csv<W: std::io::Write>(ds: &Dataset, mut w: W) -> Result<()> {
    let d = ds.dim();
    let labeled = ds.is_fully_labeled();
    let mut header: Vec<String> = (1..=d).map(|k| format!("x{k}")).collect();
    if labeled {
        header.push("z".into());
    }
    writeln!(w, "{}", header.join(","))?;
    for i in 0..ds.n() {
        let mut fields: Vec<String> = ds.x(i).iter().map(|v| format!("{v}")).collect();
        if labeled {
            fields.push(format!("{}", ds.z(i).expect("labelled dataset")));
        }
        writeln!(w, "{}", fields.join(","))?;
    }
    Ok(())
}

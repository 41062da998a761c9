//! Per-frame feature extraction and the on-disk feature file format.
//!
//! Every frame becomes one L2-normalized row of a [`FeatureSequence`]. The
//! extractor itself sits behind the [`Featurizer`] trait; [`PatchStats`] is the
//! built-in one, and externally computed features (e.g. from a CNN backbone)
//! enter through [`read_feature_file`].
//!
//! A feature file holds one or more records, each laid out as
//!
//! ```text
//! video_id N D
//! <N lines of D space-separated reals>
//! <one line of N characters from {0,1}; 1 = anomalous>
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::image::{tile_spans, GrayImage};

/// Norms below this are treated as a degenerate featurizer output.
pub const MIN_NORM: f64 = 1e-12;

/// Ingested rows farther than this from unit norm are re-normalized.
pub const INGEST_NORM_TOLERANCE: f64 = 1e-6;

/// A unit-norm feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVec(Vec<f64>);

impl FeatureVec {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Scales `v` to unit Euclidean norm.
pub fn l2_normalize(v: &[f64]) -> Result<FeatureVec> {
    let norm = l2_norm(v);
    if !(norm >= MIN_NORM) || !norm.is_finite() {
        return Err(Error::ZeroVector { norm });
    }
    Ok(FeatureVec(v.iter().map(|x| x / norm).collect()))
}

/// An `N x D` matrix whose rows are per-frame feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence(Array2<f64>);

impl FeatureSequence {
    /// Wraps a matrix without touching row norms.
    pub fn from_array(values: Array2<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::ShapeMismatch(format!(
                "feature sequence must be non-empty, got {:?}",
                values.dim()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::ShapeMismatch(
                "feature sequence has non-finite entries".into(),
            ));
        }
        Ok(Self(values))
    }

    /// Builds a sequence from rows, L2-normalizing each one.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut values = Array2::zeros((rows.len(), dim));
        for (t, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(Error::ShapeMismatch(format!(
                    "row {t} has {} values, expected {dim}",
                    row.len()
                )));
            }
            let unit = l2_normalize(row)?;
            values.row_mut(t).assign(&ArrayView1::from(unit.as_slice()));
        }
        Self::from_array(values)
    }

    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.0.ncols()
    }

    pub fn row(&self, t: usize) -> ArrayView1<'_, f64> {
        self.0.row(t)
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_array(self) -> Array2<f64> {
        self.0
    }

    /// Rows at the given indices, in order.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        Self(self.0.select(Axis(0), indices))
    }
}

/// Maps a frame to a raw (pre-normalization) feature vector.
///
/// Implementations must be deterministic.
pub trait Featurizer {
    fn dim(&self) -> usize;
    fn featurize(&self, img: &GrayImage) -> Result<Vec<f64>>;
}

/// Per-tile mean and population standard deviation of intensities scaled to
/// `[0, 1]`, over a `grid x grid` tiling. Output dimension is `2 * grid^2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchStats {
    pub grid: usize,
}

impl PatchStats {
    pub fn new(grid: usize) -> Result<Self> {
        if grid == 0 {
            return Err(Error::Config("patch-stats grid must be at least 1".into()));
        }
        Ok(Self { grid })
    }
}

impl Featurizer for PatchStats {
    fn dim(&self) -> usize {
        2 * self.grid * self.grid
    }

    fn featurize(&self, img: &GrayImage) -> Result<Vec<f64>> {
        let g = self.grid;
        if img.width() < g || img.height() < g {
            return Err(Error::GridTooFine {
                grid: g,
                width: img.width(),
                height: img.height(),
            });
        }
        let xs = tile_spans(img.width(), g);
        let ys = tile_spans(img.height(), g);
        let mut out = Vec::with_capacity(self.dim());
        for &(y0, y1) in &ys {
            for &(x0, x1) in &xs {
                let mut sum = 0.0;
                let mut sum_sq = 0.0;
                for y in y0..y1 {
                    for x in x0..x1 {
                        let v = img.get(x, y) as f64 / 255.0;
                        sum += v;
                        sum_sq += v * v;
                    }
                }
                let n = ((x1 - x0) * (y1 - y0)) as f64;
                let mean = sum / n;
                let var = (sum_sq / n - mean * mean).max(0.0);
                out.push(mean);
                out.push(var.sqrt());
            }
        }
        Ok(out)
    }
}

/// Patch statistics of one frame, normalized.
pub fn patch_stats_featurize(img: &GrayImage, grid: usize) -> Result<FeatureVec> {
    l2_normalize(&PatchStats::new(grid)?.featurize(img)?)
}

/// Featurizes every frame and stacks the normalized rows.
pub fn featurize_sequence(
    frames: &[GrayImage],
    featurizer: &dyn Featurizer,
) -> Result<FeatureSequence> {
    let first = frames
        .first()
        .ok_or_else(|| Error::ShapeMismatch("no frames to featurize".into()))?;
    let expected = first.dims();
    let mut values = Array2::zeros((frames.len(), featurizer.dim()));
    for (t, frame) in frames.iter().enumerate() {
        if frame.dims() != expected {
            return Err(Error::DimensionMismatch {
                index: t,
                expected,
                got: frame.dims(),
            });
        }
        let raw = featurizer.featurize(frame)?;
        if raw.len() != featurizer.dim() {
            return Err(Error::ShapeMismatch(format!(
                "featurizer declared dim {} but produced {}",
                featurizer.dim(),
                raw.len()
            )));
        }
        let unit = l2_normalize(&raw)?;
        values.row_mut(t).assign(&ArrayView1::from(unit.as_slice()));
    }
    FeatureSequence::from_array(values)
}

/// One record of a feature file.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoFeatures {
    pub video_id: String,
    pub features: FeatureSequence,
    /// Per-frame labels, `true` = anomalous.
    pub labels: Vec<bool>,
}

impl VideoFeatures {
    pub fn new(
        video_id: impl Into<String>,
        features: FeatureSequence,
        labels: Vec<bool>,
    ) -> Result<Self> {
        let video_id = video_id.into();
        if labels.len() != features.len() {
            return Err(Error::LabelLengthMismatch {
                video_id,
                frames: features.len(),
                labels: labels.len(),
            });
        }
        Ok(Self {
            video_id,
            features,
            labels,
        })
    }
}

pub fn labels_to_string(labels: &[bool]) -> String {
    labels.iter().map(|&l| if l { '1' } else { '0' }).collect()
}

pub fn parse_labels(s: &str) -> Option<Vec<bool>> {
    s.chars()
        .map(|c| match c {
            '0' => Some(false),
            '1' => Some(true),
            _ => None,
        })
        .collect()
}

/// Serializes records in the feature file format. Values carry 17 significant
/// digits so a read-back is bit-identical.
pub fn format_feature_records(records: &[VideoFeatures]) -> String {
    let mut out = String::new();
    for rec in records {
        let f = rec.features.as_array();
        writeln!(out, "{} {} {}", rec.video_id, f.nrows(), f.ncols()).unwrap();
        for row in f.rows() {
            let mut first = true;
            for v in row {
                if !first {
                    out.push(' ');
                }
                first = false;
                write!(out, "{v:.16e}").unwrap();
            }
            out.push('\n');
        }
        out.push_str(&labels_to_string(&rec.labels));
        out.push('\n');
    }
    out
}

pub fn write_feature_file(path: &Path, records: &[VideoFeatures]) -> Result<()> {
    fs::write(path, format_feature_records(records)).map_err(|e| Error::io(path, e))
}

pub fn read_feature_file(path: &Path) -> Result<Vec<VideoFeatures>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_feature_records(&text, path)
}

/// Parses feature records. `origin` is only used in error messages.
pub fn parse_feature_records(text: &str, origin: &Path) -> Result<Vec<VideoFeatures>> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let mut records = Vec::new();
    while let Some((lineno, header)) = lines.next() {
        let fields: Vec<&str> = header.split_whitespace().collect();
        let [video_id, n, d] = fields[..] else {
            return Err(Error::parse(
                origin,
                lineno,
                "expected header `video_id N D`",
            ));
        };
        let n: usize = n
            .parse()
            .map_err(|_| Error::parse(origin, lineno, format!("bad frame count {n:?}")))?;
        let d: usize = d
            .parse()
            .map_err(|_| Error::parse(origin, lineno, format!("bad dimension {d:?}")))?;
        if n == 0 || d == 0 {
            return Err(Error::parse(origin, lineno, "N and D must be positive"));
        }

        let mut values = Array2::zeros((n, d));
        for t in 0..n {
            let (lineno, line) = lines.next().ok_or_else(|| {
                Error::parse(
                    origin,
                    lineno,
                    format!("{video_id}: expected {n} feature rows, found {t}"),
                )
            })?;
            let mut count = 0;
            for (j, tok) in line.split_whitespace().enumerate() {
                if j >= d {
                    return Err(Error::parse(
                        origin,
                        lineno,
                        format!("more than {d} values"),
                    ));
                }
                let v: f64 = tok
                    .parse()
                    .map_err(|_| Error::parse(origin, lineno, format!("bad value {tok:?}")))?;
                if !v.is_finite() {
                    return Err(Error::parse(origin, lineno, "non-finite value"));
                }
                values[[t, j]] = v;
                count += 1;
            }
            if count != d {
                return Err(Error::parse(
                    origin,
                    lineno,
                    format!("{count} values, expected {d}"),
                ));
            }
        }

        let (lineno, label_line) = lines.next().ok_or_else(|| {
            Error::parse(origin, lineno, format!("{video_id}: missing label line"))
        })?;
        let labels = parse_labels(label_line)
            .ok_or_else(|| Error::parse(origin, lineno, "labels must be characters 0 or 1"))?;
        if labels.len() != n {
            return Err(Error::LabelLengthMismatch {
                video_id: video_id.to_string(),
                frames: n,
                labels: labels.len(),
            });
        }

        let mut renormalized = 0;
        for mut row in values.rows_mut() {
            let norm = l2_norm(row.as_slice().expect("standard layout"));
            if (norm - 1.0).abs() > INGEST_NORM_TOLERANCE {
                if norm < MIN_NORM {
                    return Err(Error::ZeroVector { norm });
                }
                row.mapv_inplace(|v| v / norm);
                renormalized += 1;
            }
        }
        if renormalized > 0 {
            log::warn!(
                "{}: re-normalized {renormalized} of {n} rows of {video_id}",
                origin.display()
            );
        }

        records.push(VideoFeatures::new(
            video_id,
            FeatureSequence::from_array(values)?,
            labels,
        )?);
    }
    Ok(records)
}

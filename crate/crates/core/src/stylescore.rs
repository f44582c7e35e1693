//! Driving-style scoring: entropy-weighted feature aggregation and
//! percentile clustering.
//!
//! Each follower is summarized by the six features of
//! [`crate::trajdata::FeatureVector`]. Columns are min-max normalized with a
//! benefit/cost orientation (higher normalized value = more aggressive),
//! then weighted by the entropy method: columns whose values are spread out
//! carry low entropy and high weight, near-constant columns carry almost no
//! weight. The weighted sum is the style score in `[0, 1]`, and the 25th/75th
//! percentile cuts split drivers into conservative, normal, and aggressive
//! clusters.

use std::io::Write;

use crate::trajdata::{FeatureVector, FEATURE_NAMES};
use crate::{Error, Result};

/// Whether a larger raw value means a more aggressive driver (`Benefit`) or
/// a less aggressive one (`Cost`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    Benefit,
    Cost,
}

/// Raw evaluation matrix: one row per scored entity, one column per
/// attribute, each column tagged with its orientation.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationMatrix {
    ids: Vec<u64>,
    /// Row-major, `m * n` values.
    values: Vec<f64>,
    n: usize,
    orientation: Vec<Orientation>,
}

impl EvaluationMatrix {
    pub fn new(ids: Vec<u64>, rows: Vec<Vec<f64>>, orientation: Vec<Orientation>) -> Result<Self> {
        if rows.len() != ids.len() {
            return Err(Error::Data(format!(
                "id/row count mismatch: {} ids, {} rows",
                ids.len(),
                rows.len()
            )));
        }
        let n = orientation.len();
        if n == 0 {
            return Err(Error::Data("evaluation matrix needs at least one column".into()));
        }
        let mut values = Vec::with_capacity(rows.len() * n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Data(format!(
                    "row {i} has {} values, expected {n}",
                    row.len()
                )));
            }
            values.extend_from_slice(row);
        }
        Ok(Self { ids, values, n, orientation })
    }

    /// Builds the standard six-column matrix from pair features. Speed and
    /// acceleration statistics are benefit-oriented; the two headway columns
    /// take `headway_orientation` (larger headways usually mean a more
    /// conservative driver, so the default pipeline passes `Cost`).
    pub fn from_features(
        ids: Vec<u64>,
        features: &[FeatureVector],
        headway_orientation: Orientation,
    ) -> Result<Self> {
        let rows = features.iter().map(|f| f.to_array().to_vec()).collect();
        let orientation = vec![
            Orientation::Benefit,
            Orientation::Benefit,
            Orientation::Benefit,
            Orientation::Benefit,
            headway_orientation,
            headway_orientation,
        ];
        Self::new(ids, rows, orientation)
    }

    pub fn row_count(&self) -> usize {
        self.ids.len()
    }

    pub fn col_count(&self) -> usize {
        self.n
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.n + col]
    }
}

/// Min-max normalized matrix; every value is in `[0, 1]` and higher always
/// means more aggressive.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedMatrix {
    pub m: usize,
    pub n: usize,
    /// Row-major, `m * n` values.
    pub values: Vec<f64>,
    /// Columns that were constant in the raw matrix; their normalized value
    /// is 0.5 everywhere and they carry zero entropy weight.
    pub degenerate: Vec<bool>,
}

impl NormalizedMatrix {
    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.n + col]
    }
}

/// Min-max normalizes each column into `[0, 1]`.
///
/// Benefit columns map the column minimum to 0 and maximum to 1; cost
/// columns are reversed. Constant columns normalize to 0.5 and are flagged
/// degenerate. Non-finite inputs are data errors naming the row and column.
pub fn normalize_matrix(matrix: &EvaluationMatrix) -> Result<NormalizedMatrix> {
    let m = matrix.row_count();
    let n = matrix.col_count();
    if m < 2 {
        return Err(Error::Data(format!("need at least 2 rows to normalize, got {m}")));
    }
    for i in 0..m {
        for j in 0..n {
            if !matrix.value(i, j).is_finite() {
                return Err(Error::Data(format!(
                    "non-finite value at row {i}, column {j}"
                )));
            }
        }
    }

    let mut values = vec![0.0; m * n];
    let mut degenerate = vec![false; n];
    for j in 0..n {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..m {
            lo = lo.min(matrix.value(i, j));
            hi = hi.max(matrix.value(i, j));
        }
        let range = hi - lo;
        for i in 0..m {
            values[i * n + j] = if range == 0.0 {
                0.5
            } else {
                let scaled = (matrix.value(i, j) - lo) / range;
                match matrix.orientation[j] {
                    Orientation::Benefit => scaled,
                    Orientation::Cost => 1.0 - scaled,
                }
            };
        }
        degenerate[j] = range == 0.0;
    }
    Ok(NormalizedMatrix { m, n, values, degenerate })
}

/// Per-column entropy weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    pub w: Vec<f64>,
}

/// Computes entropy weights over a normalized matrix.
///
/// Column entropy uses shares `p_ij = e_ij / sum_i e_ij` with the
/// `0 * ln 0 = 0` convention and normalizer `1 / ln m`. The weight of column
/// `j` is `(1 - ent_j) / sum_k (1 - ent_k)`: zero-information (constant)
/// columns get weight 0. Errors if every column is degenerate.
pub fn entropy_weights(norm: &NormalizedMatrix) -> Result<WeightVector> {
    let (m, n) = (norm.m, norm.n);
    if m < 2 {
        return Err(Error::Data(format!("entropy needs at least 2 rows, got {m}")));
    }
    let ln_m = (m as f64).ln();
    let mut entropy = vec![1.0; n];
    for j in 0..n {
        let sum: f64 = (0..m).map(|i| norm.value(i, j)).sum();
        if sum <= 0.0 {
            // All-zero column: no share structure, treat as zero information.
            entropy[j] = 1.0;
            continue;
        }
        let mut h = 0.0;
        for i in 0..m {
            let p = norm.value(i, j) / sum;
            if p > 0.0 {
                h -= p * p.ln();
            }
        }
        entropy[j] = h / ln_m;
    }
    let total: f64 = entropy.iter().map(|e| 1.0 - e).sum();
    if total <= 0.0 {
        return Err(Error::Data(
            "every column is degenerate; style scores are undefined".into(),
        ));
    }
    let w = entropy.iter().map(|e| (1.0 - e) / total).collect();
    Ok(WeightVector { w })
}

/// Cluster labels, ordered from least to most aggressive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Cluster {
    Conservative,
    Normal,
    Aggressive,
}

impl Cluster {
    pub fn index(self) -> u8 {
        match self {
            Cluster::Conservative => 0,
            Cluster::Normal => 1,
            Cluster::Aggressive => 2,
        }
    }

    pub fn from_index(i: u8) -> Result<Self> {
        match i {
            0 => Ok(Cluster::Conservative),
            1 => Ok(Cluster::Normal),
            2 => Ok(Cluster::Aggressive),
            other => Err(Error::Data(format!("cluster index {other} out of range"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Cluster::Conservative => "conservative",
            Cluster::Normal => "normal",
            Cluster::Aggressive => "aggressive",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "conservative" => Ok(Cluster::Conservative),
            "normal" => Ok(Cluster::Normal),
            "aggressive" => Ok(Cluster::Aggressive),
            other => Err(Error::Data(format!("unknown cluster label {other:?}"))),
        }
    }

    pub const ALL: [Cluster; 3] = [Cluster::Conservative, Cluster::Normal, Cluster::Aggressive];
}

/// One scored entity. `id` is the follower vehicle id; the caller keeps row
/// order to map scores back onto pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StyleScore {
    pub id: u64,
    pub score: f64,
    pub cluster: Option<Cluster>,
}

/// Weighted-sum style scores, one per row, in row order. Clusters start
/// unset.
pub fn style_scores(norm: &NormalizedMatrix, weights: &WeightVector, ids: &[u64]) -> Result<Vec<StyleScore>> {
    if weights.w.len() != norm.n {
        return Err(Error::Data(format!(
            "weight count {} does not match column count {}",
            weights.w.len(),
            norm.n
        )));
    }
    if ids.len() != norm.m {
        return Err(Error::Data(format!(
            "id count {} does not match row count {}",
            ids.len(),
            norm.m
        )));
    }
    Ok(ids
        .iter()
        .enumerate()
        .map(|(i, &id)| {
            let score = (0..norm.n).map(|j| norm.value(i, j) * weights.w[j]).sum();
            StyleScore { id, score, cluster: None }
        })
        .collect())
}

/// The two percentile cut values that separate the clusters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PercentileCuts {
    pub low: f64,
    pub high: f64,
}

/// Buckets scores into the three clusters by percentile counts.
///
/// With `m` scores and cut percentiles `(p_lo, p_hi)`, the bottom bucket
/// holds `ceil(p_lo / 100 * m)` scores and the top bucket
/// `ceil((100 - p_hi) / 100 * m)`. The reported low cut is the smallest
/// score *outside* the bottom bucket and the high cut the largest score
/// outside the top bucket; labels then compare strictly, so scores tied
/// with a cut always land in the middle cluster. With 94 distinct scores and
/// the default `(25, 75)` this yields 24 / 46 / 24.
pub fn cluster_by_percentile(
    scores: &mut [StyleScore],
    percentiles: (f64, f64),
) -> Result<PercentileCuts> {
    let m = scores.len();
    if m < 4 {
        return Err(Error::Data(format!("need at least 4 scores to cluster, got {m}")));
    }
    let (p_lo, p_hi) = percentiles;
    if !(0.0 < p_lo && p_lo < p_hi && p_hi < 100.0) {
        return Err(Error::Config(format!(
            "percentiles must satisfy 0 < low < high < 100, got ({p_lo}, {p_hi})"
        )));
    }
    if scores.iter().any(|s| !s.score.is_finite()) {
        return Err(Error::Data("non-finite style score".into()));
    }

    let mut sorted: Vec<f64> = scores.iter().map(|s| s.score).collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));

    let k_lo = ((p_lo / 100.0 * m as f64).ceil() as usize).min(m - 1);
    let k_hi = (((100.0 - p_hi) / 100.0 * m as f64).ceil() as usize).min(m - 1);
    let cuts = PercentileCuts { low: sorted[k_lo], high: sorted[m - 1 - k_hi] };

    for s in scores.iter_mut() {
        s.cluster = Some(if s.score < cuts.low {
            Cluster::Conservative
        } else if s.score > cuts.high {
            Cluster::Aggressive
        } else {
            Cluster::Normal
        });
    }
    Ok(cuts)
}

/// One row of the score report.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub pair_id: (u64, u64),
    pub features: FeatureVector,
    pub score: f64,
    pub cluster: Cluster,
}

/// Writes the score report CSV: pair ids, raw features, score, cluster.
pub fn write_scores_csv<W: Write>(writer: W, rows: &[ScoreRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["leader_id".to_string(), "follower_id".to_string()];
    header.extend(FEATURE_NAMES.iter().map(|s| s.to_string()));
    header.push("score".into());
    header.push("cluster".into());
    w.write_record(&header).map_err(Error::Csv)?;
    for row in rows {
        let mut rec = vec![row.pair_id.0.to_string(), row.pair_id.1.to_string()];
        rec.extend(row.features.to_array().iter().map(|v| v.to_string()));
        rec.push(row.score.to_string());
        rec.push(row.cluster.as_str().to_string());
        w.write_record(&rec).map_err(Error::Csv)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a score report back; the inverse of [`write_scores_csv`].
pub fn read_scores_csv<R: std::io::Read>(reader: R) -> Result<Vec<ScoreRow>> {
    let mut r = csv::Reader::from_reader(reader);
    let mut rows = Vec::new();
    for record in r.records() {
        let record = record.map_err(Error::Csv)?;
        if record.len() != 10 {
            return Err(Error::Data(format!(
                "score row has {} fields, expected 10",
                record.len()
            )));
        }
        let field = |i: usize| -> Result<f64> {
            record[i]
                .parse::<f64>()
                .map_err(|_| Error::Data(format!("bad number {:?} in score CSV", &record[i])))
        };
        let id = |i: usize| -> Result<u64> {
            record[i]
                .parse::<u64>()
                .map_err(|_| Error::Data(format!("bad vehicle id {:?} in score CSV", &record[i])))
        };
        let mut features = [0.0; 6];
        for (j, slot) in features.iter_mut().enumerate() {
            *slot = field(2 + j)?;
        }
        rows.push(ScoreRow {
            pair_id: (id(0)?, id(1)?),
            features: FeatureVector::from_array(features),
            score: field(8)?,
            cluster: Cluster::parse(&record[9])?,
        });
    }
    Ok(rows)
}

/// Writes the sidecar with the entropy weights and the two cut values.
/// Cuts are rounded to three decimals, matching how they are reported.
pub fn write_weights_sidecar<W: Write>(
    writer: W,
    weights: &WeightVector,
    cuts: &PercentileCuts,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["name", "value"]).map_err(Error::Csv)?;
    for (name, value) in FEATURE_NAMES.iter().zip(&weights.w) {
        w.write_record([format!("weight_{name}"), value.to_string()]).map_err(Error::Csv)?;
    }
    w.write_record(["cut_low".to_string(), format!("{:.3}", cuts.low)]).map_err(Error::Csv)?;
    w.write_record(["cut_high".to_string(), format!("{:.3}", cuts.high)]).map_err(Error::Csv)?;
    w.flush()?;
    Ok(())
}

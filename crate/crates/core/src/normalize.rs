//! Embedding-space normalizations: standard scaling, typical variation
//! normalization (TVN), chromosome-arm centering and the control-origin shift.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ArmAnnotation, EmbeddingTable, GeneAggregateSet, PerturbationType, WellMeta};
use crate::error::{Error, Result};
use crate::linalg;
use crate::stats::{norm, MIN_NORM};

/// Standard deviations below this are raised to it.
pub const STDDEV_FLOOR: f64 = 1e-8;

pub const DEFAULT_EIGENVALUE_FLOOR: f64 = 1e-6;

/// Rows per block when applying dense transforms. Fixed so results do not
/// depend on the number of worker threads.
const APPLY_CHUNK_ROWS: usize = 2048;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerTransform {
    pub mean: Vec<f64>,
    pub stddev: Vec<f64>,
}

impl ScalerTransform {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            stddev: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Fits on the rows of a row-major `n × dim` buffer.
    pub fn fit_rows(rows: &[f64], dim: usize) -> Result<Self> {
        let n = rows.len() / dim.max(1);
        if n < 2 {
            return Err(Error::invalid(format!(
                "standard scaler needs at least 2 rows, got {n}"
            )));
        }
        let mean = linalg::column_means(rows, n, dim);
        let mut var = vec![0.0; dim];
        for row in rows.chunks_exact(dim) {
            for ((v, x), mu) in var.iter_mut().zip(row).zip(&mean) {
                let d = x - mu;
                *v += d * d;
            }
        }
        let stddev = var
            .into_iter()
            .map(|v| (v / n as f64).sqrt().max(STDDEV_FLOOR))
            .collect();
        Ok(Self { mean, stddev })
    }

    pub fn transform_row(&self, row: &[f64], out: &mut [f64]) {
        for (((o, x), mu), sd) in out.iter_mut().zip(row).zip(&self.mean).zip(&self.stddev) {
            *o = (x - mu) / sd;
        }
    }

    /// Scales a row-major buffer in place.
    pub fn transform_in_place(&self, rows: &mut [f64]) -> Result<()> {
        let dim = self.dim();
        if dim == 0 || rows.len() % dim != 0 {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: rows.len(),
            });
        }
        rows.par_chunks_mut(dim).for_each(|row| {
            for ((x, mu), sd) in row.iter_mut().zip(&self.mean).zip(&self.stddev) {
                *x = (*x - mu) / sd;
            }
        });
        Ok(())
    }
}

/// Per-dimension mean and population standard deviation of the training rows.
pub fn fit_standard_scaler(train_rows: &EmbeddingTable) -> Result<ScalerTransform> {
    ScalerTransform::fit_rows(train_rows.embeddings(), train_rows.dim())
}

pub fn apply_scaler(t: &ScalerTransform, rows: &EmbeddingTable) -> Result<EmbeddingTable> {
    if t.dim() != rows.dim() {
        return Err(Error::DimensionMismatch {
            expected: t.dim(),
            actual: rows.dim(),
        });
    }
    let mut out = rows.embeddings().to_vec();
    t.transform_in_place(&mut out)?;
    rows.with_embeddings(rows.dim(), out)
}

/// Affine whitening map `x ↦ W (x − mean)` fitted on negative controls.
#[derive(Debug, Clone, PartialEq)]
pub struct WhiteningTransform {
    mean: Vec<f64>,
    /// Row-major `dim × dim`.
    matrix: Vec<f64>,
    eigenvalue_floor: f64,
}

#[derive(Serialize, Deserialize)]
struct WhiteningJson {
    mean: Vec<f64>,
    matrix: Vec<Vec<f64>>,
    floor: f64,
}

impl Serialize for WhiteningTransform {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        WhiteningJson {
            mean: self.mean.clone(),
            matrix: self.matrix.chunks(self.dim().max(1)).map(<[f64]>::to_vec).collect(),
            floor: self.eigenvalue_floor,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for WhiteningTransform {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let j = WhiteningJson::deserialize(d)?;
        let matrix = j.matrix.concat();
        WhiteningTransform::new(j.mean, matrix, j.floor).map_err(serde::de::Error::custom)
    }
}

impl WhiteningTransform {
    pub fn new(mean: Vec<f64>, matrix: Vec<f64>, eigenvalue_floor: f64) -> Result<Self> {
        let d = mean.len();
        if d == 0 || matrix.len() != d * d {
            return Err(Error::invalid(format!(
                "whitening matrix has {} entries for dimension {d}",
                matrix.len()
            )));
        }
        if mean.iter().chain(&matrix).any(|v| !v.is_finite()) {
            return Err(Error::Numerical("whitening transform has non-finite entries".into()));
        }
        if !(eigenvalue_floor > 0.0 && eigenvalue_floor.is_finite()) {
            return Err(Error::invalid("eigenvalue floor must be positive"));
        }
        Ok(Self {
            mean,
            matrix,
            eigenvalue_floor,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    pub fn eigenvalue_floor(&self) -> f64 {
        self.eigenvalue_floor
    }

    /// Applies the map to a row-major buffer of `dim`-vectors.
    pub fn transform_rows(&self, rows: &[f64]) -> Result<Vec<f64>> {
        let d = self.dim();
        if rows.len() % d != 0 {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: rows.len() % d,
            });
        }
        let mut out = vec![0.0; rows.len()];
        out.par_chunks_mut(APPLY_CHUNK_ROWS * d)
            .zip(rows.par_chunks(APPLY_CHUNK_ROWS * d))
            .for_each(|(dst, src)| {
                let n = src.len() / d;
                let centered: Vec<f64> = src
                    .chunks_exact(d)
                    .flat_map(|r| r.iter().zip(&self.mean).map(|(x, m)| x - m))
                    .collect();
                dst.copy_from_slice(&linalg::matmul_abt(&centered, n, d, &self.matrix, d));
            });
        Ok(out)
    }
}

/// Fits symmetric PCA whitening on control embeddings:
/// `W = V diag(1/√max(λ, floor)) Vᵀ` from the population covariance.
///
/// Eigenvalues below the floor (rank-deficient or near-singular control
/// sets) are raised to it; all others are inverted exactly.
pub fn fit_tvn(neg_controls: &EmbeddingTable, eigenvalue_floor: f64) -> Result<WhiteningTransform> {
    let n = neg_controls.len();
    let d = neg_controls.dim();
    if n < 2 {
        return Err(Error::invalid(format!(
            "TVN needs at least 2 control rows, got {n}"
        )));
    }
    if n < d {
        log::warn!("fitting TVN on {n} controls in dimension {d}; covariance is rank deficient");
    }
    let x = neg_controls.embeddings();
    let mean = linalg::column_means(x, n, d);
    let cov = linalg::covariance(x, n, d, &mean);
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("control covariance is not finite".into()));
    }
    let (values, vectors) = linalg::symmetric_eigen(&cov, d);
    // V · diag(s), then (V diag(s)) · Vᵀ
    let mut scaled = vectors.clone();
    for i in 0..d {
        for (j, lambda) in values.iter().enumerate() {
            scaled[i * d + j] /= lambda.max(eigenvalue_floor).sqrt();
        }
    }
    let matrix = linalg::matmul_abt(&scaled, d, d, &vectors, d);
    WhiteningTransform::new(mean, matrix, eigenvalue_floor)
}

pub fn apply_tvn(t: &WhiteningTransform, table: &EmbeddingTable) -> Result<EmbeddingTable> {
    if t.dim() != table.dim() {
        return Err(Error::DimensionMismatch {
            expected: t.dim(),
            actual: table.dim(),
        });
    }
    let out = t.transform_rows(table.embeddings())?;
    table.with_embeddings(table.dim(), out)
}

/// Which rows count as controls when choosing an origin or fitting TVN.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind", content = "values")]
pub enum ControlSelector {
    #[default]
    NegativeControls,
    PerturbationType(PerturbationType),
    PerturbationIds(Vec<String>),
}

impl ControlSelector {
    pub fn matches(&self, m: &WellMeta) -> bool {
        match self {
            ControlSelector::NegativeControls => {
                m.perturbation_type == PerturbationType::NegativeControl
            }
            ControlSelector::PerturbationType(t) => m.perturbation_type == *t,
            ControlSelector::PerturbationIds(ids) => ids.iter().any(|i| *i == m.perturbation_id),
        }
    }

    pub fn select(&self, table: &EmbeddingTable) -> EmbeddingTable {
        table.filter(|m| self.matches(m))
    }
}

/// Subtracts the mean of the selected control rows from every embedding.
pub fn shift_origin_to_controls(
    table: &EmbeddingTable,
    selector: &ControlSelector,
) -> Result<EmbeddingTable> {
    let d = table.dim();
    let idx: Vec<usize> = (0..table.len())
        .filter(|&i| selector.matches(table.row_meta(i)))
        .collect();
    if idx.is_empty() {
        return Err(Error::invalid("no control rows selected for origin shift"));
    }
    let mut origin = vec![0.0; d];
    for &i in &idx {
        for (o, x) in origin.iter_mut().zip(table.row(i)) {
            *o += x;
        }
    }
    for o in origin.iter_mut() {
        *o /= idx.len() as f64;
    }
    let mut out = table.embeddings().to_vec();
    out.par_chunks_mut(d).for_each(|row| {
        for (x, o) in row.iter_mut().zip(&origin) {
            *x -= o;
        }
    });
    table.with_embeddings(d, out)
}

/// Subtracts from each gene vector the mean vector of all genes on its arm.
/// Returns the centered (not yet normalized) vectors.
pub fn arm_center(
    aggregates: &GeneAggregateSet,
    arms: &ArmAnnotation,
) -> Result<BTreeMap<String, Vec<f64>>> {
    let d = aggregates.dim();
    let mut sums: BTreeMap<&str, (Vec<f64>, usize)> = BTreeMap::new();
    let mut labels = Vec::with_capacity(aggregates.len());
    for (gene, v) in aggregates.iter() {
        let arm = arms
            .arm(gene)
            .ok_or_else(|| Error::invalid(format!("no chromosome arm for gene {gene:?}")))?;
        let entry = sums.entry(arm).or_insert_with(|| (vec![0.0; d], 0));
        for (s, x) in entry.0.iter_mut().zip(v) {
            *s += x;
        }
        entry.1 += 1;
        labels.push(arm);
    }
    let means: BTreeMap<&str, Vec<f64>> = sums
        .into_iter()
        .map(|(arm, (s, n))| (arm, s.into_iter().map(|x| x / n as f64).collect()))
        .collect();
    Ok(aggregates
        .iter()
        .zip(labels)
        .map(|((gene, v), arm)| {
            let mu = &means[arm];
            (gene.to_string(), v.iter().zip(mu).map(|(x, m)| x - m).collect())
        })
        .collect())
}

/// Arm-mean centering followed by renormalization to unit length.
pub fn arm_bias_correct(
    aggregates: &GeneAggregateSet,
    arms: &ArmAnnotation,
) -> Result<GeneAggregateSet> {
    let centered = arm_center(aggregates, arms)?;
    let mut out = BTreeMap::new();
    for (gene, v) in centered {
        let n = norm(&v);
        if !(n >= MIN_NORM) {
            return Err(Error::degenerate(format!(
                "gene {gene:?} is zero after chromosome-arm centering"
            )));
        }
        out.insert(gene, v.into_iter().map(|x| x / n).collect());
    }
    GeneAggregateSet::new(aggregates.dim(), out)
}

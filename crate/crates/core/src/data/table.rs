use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationType {
    GeneKnockoutGuide,
    Sirna,
    Compound,
    NegativeControl,
    PositiveControl,
    Unperturbed,
}

impl PerturbationType {
    pub const ALL: [PerturbationType; 6] = [
        PerturbationType::GeneKnockoutGuide,
        PerturbationType::Sirna,
        PerturbationType::Compound,
        PerturbationType::NegativeControl,
        PerturbationType::PositiveControl,
        PerturbationType::Unperturbed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PerturbationType::GeneKnockoutGuide => "gene_knockout_guide",
            PerturbationType::Sirna => "sirna",
            PerturbationType::Compound => "compound",
            PerturbationType::NegativeControl => "negative_control",
            PerturbationType::PositiveControl => "positive_control",
            PerturbationType::Unperturbed => "unperturbed",
        }
    }

    /// Genetic perturbations must carry a gene id.
    pub fn requires_gene(self) -> bool {
        matches!(
            self,
            PerturbationType::GeneKnockoutGuide | PerturbationType::Sirna
        )
    }

    pub fn is_control(self) -> bool {
        matches!(
            self,
            PerturbationType::NegativeControl
                | PerturbationType::PositiveControl
                | PerturbationType::Unperturbed
        )
    }
}

impl fmt::Display for PerturbationType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PerturbationType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PerturbationType::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown perturbation_type {s:?}")))
    }
}

/// Metadata of one well.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WellMeta {
    pub well_id: String,
    pub experiment_id: String,
    pub plate_id: String,
    pub well_position: String,
    pub perturbation_id: String,
    pub perturbation_type: PerturbationType,
    pub gene_id: Option<String>,
    pub concentration: Option<f64>,
    pub cell_type: String,
}

/// An opaque metadata column carried through unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtraColumn {
    pub name: String,
    pub values: Vec<String>,
}

/// Well-level embeddings with metadata.
///
/// Embeddings are held row-major in 64-bit floats. Tables are immutable once
/// built; transforms return new tables.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    meta: Vec<WellMeta>,
    embeddings: Vec<f64>,
    extra: Vec<ExtraColumn>,
}

pub const RESERVED_COLUMNS: [&str; 10] = [
    "well_id",
    "experiment_id",
    "plate_id",
    "well_position",
    "perturbation_id",
    "perturbation_type",
    "gene_id",
    "concentration",
    "cell_type",
    "embedding",
];

impl EmbeddingTable {
    /// Builds a table and checks every invariant.
    pub fn new(
        dim: usize,
        meta: Vec<WellMeta>,
        embeddings: Vec<f64>,
        extra: Vec<ExtraColumn>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("embedding dimension must be at least 1"));
        }
        if embeddings.len() != meta.len() * dim {
            return Err(Error::invalid(format!(
                "{} embedding values for {} rows of dimension {dim}",
                embeddings.len(),
                meta.len()
            )));
        }
        let mut seen = HashSet::with_capacity(meta.len());
        for (i, m) in meta.iter().enumerate() {
            if !seen.insert(m.well_id.as_str()) {
                return Err(Error::row(i, format!("duplicate well_id {:?}", m.well_id)));
            }
            if m.perturbation_type.requires_gene() && m.gene_id.is_none() {
                return Err(Error::row(
                    i,
                    format!("gene_id missing for {} row", m.perturbation_type),
                ));
            }
            if let Some(c) = m.concentration {
                if !(c.is_finite() && c > 0.0) {
                    return Err(Error::row(i, format!("concentration {c} is not positive")));
                }
            }
            let row = &embeddings[i * dim..(i + 1) * dim];
            if let Some(j) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::row(i, format!("non-finite embedding value at f{j}")));
            }
        }
        let mut names = HashSet::new();
        for col in &extra {
            if col.values.len() != meta.len() {
                return Err(Error::invalid(format!(
                    "extra column {:?} has {} values for {} rows",
                    col.name,
                    col.values.len(),
                    meta.len()
                )));
            }
            if RESERVED_COLUMNS.contains(&col.name.as_str()) || is_feature_column(&col.name) {
                return Err(Error::Schema(format!(
                    "extra column {:?} collides with a reserved name",
                    col.name
                )));
            }
            if !names.insert(col.name.as_str()) {
                return Err(Error::Schema(format!("duplicate column {:?}", col.name)));
            }
        }
        Ok(Self {
            dim,
            meta,
            embeddings,
            extra,
        })
    }

    pub fn empty(dim: usize) -> Result<Self> {
        Self::new(dim, Vec::new(), Vec::new(), Vec::new())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.meta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meta.is_empty()
    }

    pub fn meta(&self) -> &[WellMeta] {
        &self.meta
    }

    pub fn row_meta(&self, i: usize) -> &WellMeta {
        &self.meta[i]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.embeddings[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.embeddings.chunks_exact(self.dim)
    }

    /// Row-major embedding buffer (`len() * dim()` values).
    pub fn embeddings(&self) -> &[f64] {
        &self.embeddings
    }

    pub fn extra_columns(&self) -> &[ExtraColumn] {
        &self.extra
    }

    pub fn extra_column(&self, name: &str) -> Option<&[String]> {
        self.extra
            .iter()
            .find(|c| c.name == name)
            .map(|c| c.values.as_slice())
    }

    /// Same metadata, new embeddings (possibly of a different dimension).
    pub fn with_embeddings(&self, dim: usize, embeddings: Vec<f64>) -> Result<Self> {
        Self::new(dim, self.meta.clone(), embeddings, self.extra.clone())
    }

    /// Returns a copy with an extra column added or replaced.
    pub fn with_extra_column(&self, name: &str, values: Vec<String>) -> Result<Self> {
        let mut extra: Vec<ExtraColumn> =
            self.extra.iter().filter(|c| c.name != name).cloned().collect();
        extra.push(ExtraColumn {
            name: name.to_string(),
            values,
        });
        Self::new(self.dim, self.meta.clone(), self.embeddings.clone(), extra)
    }

    /// Sub-table of the given rows, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut meta = Vec::with_capacity(indices.len());
        let mut embeddings = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            meta.push(self.meta[i].clone());
            embeddings.extend_from_slice(self.row(i));
        }
        let extra = self
            .extra
            .iter()
            .map(|c| ExtraColumn {
                name: c.name.clone(),
                values: indices.iter().map(|&i| c.values[i].clone()).collect(),
            })
            .collect();
        Self {
            dim: self.dim,
            meta,
            embeddings,
            extra,
        }
    }

    pub fn filter<F: Fn(&WellMeta) -> bool>(&self, keep: F) -> Self {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(&self.meta[i])).collect();
        self.select(&idx)
    }

    /// Number of perturbations applied to row `i`, read from an optional
    /// `perturbation_count` extra column. Rows without the column count as 1.
    pub fn perturbation_count(&self, i: usize) -> Result<u32> {
        match self.extra_column("perturbation_count") {
            None => Ok(1),
            Some(values) => values[i]
                .trim()
                .parse()
                .map_err(|_| Error::row(i, format!("bad perturbation_count {:?}", values[i]))),
        }
    }
}

pub(crate) fn is_feature_column(name: &str) -> bool {
    feature_index(name).is_some()
}

pub(crate) fn feature_index(name: &str) -> Option<usize> {
    let digits = name.strip_prefix('f')?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    if digits.len() > 1 && digits.starts_with('0') {
        return None;
    }
    digits.parse().ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn meta(id: &str) -> WellMeta {
        WellMeta {
            well_id: id.into(),
            experiment_id: "E1".into(),
            plate_id: "P1".into(),
            well_position: "A01".into(),
            perturbation_id: "p".into(),
            perturbation_type: PerturbationType::Compound,
            gene_id: None,
            concentration: Some(1.0),
            cell_type: "HUVEC".into(),
        }
    }

    #[test]
    fn rejects_duplicate_well_id() {
        let err = EmbeddingTable::new(1, vec![meta("a"), meta("a")], vec![0.0, 1.0], vec![])
            .unwrap_err();
        assert!(matches!(err, Error::Row { row: 1, .. }));
    }

    #[test]
    fn rejects_non_finite_with_row_index() {
        let err = EmbeddingTable::new(
            2,
            vec![meta("a"), meta("b"), meta("c")],
            vec![0.0, 0.0, 1.0, 1.0, f64::NAN, 2.0],
            vec![],
        )
        .unwrap_err();
        assert!(matches!(err, Error::Row { row: 2, .. }), "{err}");
    }

    #[test]
    fn requires_gene_for_guides() {
        let mut m = meta("a");
        m.perturbation_type = PerturbationType::GeneKnockoutGuide;
        assert!(EmbeddingTable::new(1, vec![m.clone()], vec![0.0], vec![]).is_err());
        m.gene_id = Some("TP53".into());
        assert!(EmbeddingTable::new(1, vec![m], vec![0.0], vec![]).is_ok());
    }

    #[test]
    fn feature_column_names() {
        assert_eq!(feature_index("f0"), Some(0));
        assert_eq!(feature_index("f12"), Some(12));
        assert_eq!(feature_index("f01"), None);
        assert_eq!(feature_index("foo"), None);
        assert_eq!(feature_index("f"), None);
    }

    #[test]
    fn perturbation_type_names_round_trip() {
        for t in PerturbationType::ALL {
            assert_eq!(t.as_str().parse::<PerturbationType>().unwrap(), t);
        }
        assert!("crispr".parse::<PerturbationType>().is_err());
    }
}

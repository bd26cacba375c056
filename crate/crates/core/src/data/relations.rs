use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

/// Orders a gene pair so that unordered pairs compare equal.
pub fn canonical_pair(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

/// Known gene-gene relationships from one annotation source.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelationshipDb {
    pub name: String,
    pairs: BTreeSet<(String, String)>,
    /// Self-pairs seen while building and discarded.
    pub dropped_self_pairs: usize,
    /// Repeated unordered pairs seen while building and discarded.
    pub duplicate_pairs: usize,
}

impl RelationshipDb {
    pub fn from_edges<I, A, B>(name: &str, edges: I) -> Self
    where
        I: IntoIterator<Item = (A, B)>,
        A: AsRef<str>,
        B: AsRef<str>,
    {
        let mut db = RelationshipDb {
            name: name.to_string(),
            pairs: BTreeSet::new(),
            dropped_self_pairs: 0,
            duplicate_pairs: 0,
        };
        for (a, b) in edges {
            db.insert(a.as_ref(), b.as_ref());
        }
        db
    }

    fn insert(&mut self, a: &str, b: &str) {
        if a == b {
            self.dropped_self_pairs += 1;
        } else if !self.pairs.insert(canonical_pair(a, b)) {
            self.duplicate_pairs += 1;
        }
    }

    pub fn pairs(&self) -> &BTreeSet<(String, String)> {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn contains(&self, a: &str, b: &str) -> bool {
        self.pairs.contains(&canonical_pair(a, b))
    }

    /// Writes a tab-separated edge list that [`load_relationship_db`] reads back.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = format!("# {}\n", self.name);
        for (a, b) in &self.pairs {
            text.push_str(a);
            text.push('\t');
            text.push_str(b);
            text.push('\n');
        }
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Parses a whitespace separated two-column edge list. Lines starting with
/// `#` and blank lines are skipped.
pub fn parse_relationship_db(name: &str, text: &str) -> Result<RelationshipDb> {
    let mut db = RelationshipDb::from_edges::<_, &str, &str>(name, []);
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(Error::Parse {
                line: k + 1,
                message: format!("expected 2 gene ids, found {}", fields.len()),
            });
        }
        db.insert(fields[0], fields[1]);
    }
    Ok(db)
}

pub fn load_relationship_db(path: impl AsRef<Path>, name: &str) -> Result<RelationshipDb> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_relationship_db(name, &text)
}

/// Gene to chromosome-arm labels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ArmAnnotation {
    arms: BTreeMap<String, String>,
}

impl ArmAnnotation {
    pub fn new(arms: BTreeMap<String, String>) -> Result<Self> {
        if let Some((gene, _)) = arms.iter().find(|(_, arm)| arm.trim().is_empty()) {
            return Err(Error::invalid(format!("empty arm label for gene {gene:?}")));
        }
        Ok(Self { arms })
    }

    pub fn arm(&self, gene: &str) -> Option<&str> {
        self.arms.get(gene).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.arms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arms.is_empty()
    }
}

pub fn load_arm_annotation(path: impl AsRef<Path>) -> Result<ArmAnnotation> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut arms = BTreeMap::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(Error::Parse {
                line: k + 1,
                message: "expected `gene arm`".into(),
            });
        }
        arms.insert(fields[0].to_string(), fields[1].to_string());
    }
    ArmAnnotation::new(arms)
}

pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

/// One unit-norm aggregate vector per gene, keyed and iterated in gene-id order.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneAggregateSet {
    dim: usize,
    genes: Vec<String>,
    vectors: Vec<f64>,
}

impl GeneAggregateSet {
    pub fn new(dim: usize, entries: BTreeMap<String, Vec<f64>>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("aggregate dimension must be at least 1"));
        }
        let mut genes = Vec::with_capacity(entries.len());
        let mut vectors = Vec::with_capacity(entries.len() * dim);
        for (gene, v) in entries {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: v.len(),
                });
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !norm.is_finite() || (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
                return Err(Error::invalid(format!(
                    "aggregate for {gene:?} has norm {norm}, expected 1"
                )));
            }
            genes.push(gene);
            vectors.extend(v);
        }
        Ok(Self { dim, genes, vectors })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.genes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.genes.is_empty()
    }

    pub fn genes(&self) -> &[String] {
        &self.genes
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    /// Row-major matrix of all vectors in gene order.
    pub fn matrix(&self) -> &[f64] {
        &self.vectors
    }

    pub fn index_of(&self, gene: &str) -> Option<usize> {
        self.genes.binary_search_by(|g| g.as_str().cmp(gene)).ok()
    }

    pub fn get(&self, gene: &str) -> Option<&[f64]> {
        self.index_of(gene).map(|i| self.vector(i))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.genes
            .iter()
            .map(String::as_str)
            .zip(self.vectors.chunks_exact(self.dim))
    }

    pub fn to_map(&self) -> BTreeMap<String, Vec<f64>> {
        self.iter().map(|(g, v)| (g.to_string(), v.to_vec())).collect()
    }
}

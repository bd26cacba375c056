use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::similarity::PairwiseSimilarities;
use crate::data::{ArmAnnotation, EmbeddingTable, GeneAggregateSet, RelationshipDb};
use crate::error::{Error, Result};
use crate::normalize::{arm_bias_correct, shift_origin_to_controls, ControlSelector};
use crate::stats::spherical_mean;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallReport {
    pub database_name: String,
    pub n_known_pairs_in_universe: usize,
    pub n_recalled: usize,
    /// `None` when no known pair has both genes in the universe.
    pub recall: Option<f64>,
    pub low_pct: f64,
    pub high_pct: f64,
    pub t_low: f64,
    pub t_high: f64,
    pub universe_size_genes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateOutcome {
    pub aggregates: GeneAggregateSet,
    /// Genes whose spherical mean had zero norm.
    pub excluded: Vec<String>,
}

/// One spherical mean per gene over all of its wells in all experiments.
/// Rows without a gene id are ignored.
pub fn aggregate_gene_embeddings(table: &EmbeddingTable) -> Result<AggregateOutcome> {
    let mut rows: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, m) in table.meta().iter().enumerate() {
        if let Some(g) = &m.gene_id {
            rows.entry(g.as_str()).or_default().push(i);
        }
    }
    let mut entries = BTreeMap::new();
    let mut excluded = Vec::new();
    for (gene, idx) in rows {
        match spherical_mean(idx.iter().map(|&i| table.row(i))) {
            Ok(v) => {
                entries.insert(gene.to_string(), v);
            }
            Err(Error::Degenerate(_)) => {
                log::warn!("gene {gene}: spherical mean degenerates to zero, excluded");
                excluded.push(gene.to_string());
            }
            Err(e) => return Err(e),
        }
    }
    Ok(AggregateOutcome {
        aggregates: GeneAggregateSet::new(table.dim(), entries)?,
        excluded,
    })
}

/// Control-origin shift, gene aggregation and optional arm correction, in
/// that order. The table should already be TVN-normalized.
pub fn prepare_gene_aggregates(
    table: &EmbeddingTable,
    controls: &ControlSelector,
    arms: Option<&ArmAnnotation>,
) -> Result<AggregateOutcome> {
    let shifted = shift_origin_to_controls(table, controls)?;
    let mut out = aggregate_gene_embeddings(&shifted)?;
    if let Some(arms) = arms {
        out.aggregates = arm_bias_correct(&out.aggregates, arms)?;
    }
    Ok(out)
}

pub fn relationship_recall(
    aggregates: &GeneAggregateSet,
    db: &RelationshipDb,
    low_pct: f64,
    high_pct: f64,
) -> Result<RecallReport> {
    relationship_recall_many(aggregates, std::slice::from_ref(db), low_pct, high_pct)
        .map(|mut v| v.remove(0))
}

/// Recall of each database's known pairs among the similarity tails, with
/// one shared scan of all gene pairs.
pub fn relationship_recall_many(
    aggregates: &GeneAggregateSet,
    dbs: &[RelationshipDb],
    low_pct: f64,
    high_pct: f64,
) -> Result<Vec<RecallReport>> {
    let sims = PairwiseSimilarities::new(aggregates)?;
    let mut probes = Vec::new();
    let mut spans = Vec::with_capacity(dbs.len());
    for db in dbs {
        let start = probes.len();
        for (a, b) in db.pairs() {
            if let (Some(i), Some(j)) = (aggregates.index_of(a), aggregates.index_of(b)) {
                probes.push((i, j));
            }
        }
        spans.push(start..probes.len());
    }
    let (t, values) = sims.scan(low_pct, high_pct, &probes)?;
    Ok(dbs
        .iter()
        .zip(spans)
        .map(|(db, span)| {
            let n_known = span.len();
            let n_recalled = values[span].iter().filter(|&&s| s <= t.t_low || s >= t.t_high).count();
            if n_known == 0 {
                log::warn!("database {}: no known pair inside the gene universe", db.name);
            }
            RecallReport {
                database_name: db.name.clone(),
                n_known_pairs_in_universe: n_known,
                n_recalled,
                recall: (n_known > 0).then(|| n_recalled as f64 / n_known as f64),
                low_pct,
                high_pct,
                t_low: t.t_low,
                t_high: t.t_high,
                universe_size_genes: aggregates.len(),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{PerturbationType, WellMeta};
    use crate::stats::cosine_similarity;

    fn gene_well(i: usize, gene: &str) -> WellMeta {
        WellMeta {
            well_id: format!("w{i}"),
            experiment_id: "E".into(),
            plate_id: "p".into(),
            well_position: "A01".into(),
            perturbation_id: format!("{gene}_sg"),
            perturbation_type: PerturbationType::GeneKnockoutGuide,
            gene_id: Some(gene.into()),
            concentration: None,
            cell_type: "c".into(),
        }
    }

    #[test]
    fn aggregation_examples() {
        let t = EmbeddingTable::new(
            2,
            vec![gene_well(0, "A"), gene_well(1, "B"), gene_well(2, "B"), gene_well(3, "C"), gene_well(4, "C")],
            vec![3.0, 4.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0, -1.0, 0.0],
            vec![],
        )
        .unwrap();
        let out = aggregate_gene_embeddings(&t).unwrap();
        assert_eq!(out.excluded, vec!["C".to_string()]);
        assert_eq!(out.aggregates.get("A").unwrap(), &[0.6, 0.8]);
        let b = out.aggregates.get("B").unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((b[0] - h).abs() < 1e-15 && (b[1] - h).abs() < 1e-15);
    }

    #[test]
    fn top_tail_database_is_fully_recalled() {
        let agg = super::super::similarity::tests_support::random_set(40, 8, 11);
        let mut pairs = Vec::new();
        for i in 0..agg.len() {
            for j in i + 1..agg.len() {
                pairs.push((cosine_similarity(agg.vector(i), agg.vector(j)).unwrap(), i, j));
            }
        }
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
        let top = pairs.len() * 5 / 100;
        let db = RelationshipDb::from_edges(
            "top",
            pairs[..top].iter().map(|&(_, i, j)| (agg.genes()[i].clone(), agg.genes()[j].clone())),
        );
        let r = relationship_recall(&agg, &db, 0.05, 0.95).unwrap();
        assert_eq!(r.n_known_pairs_in_universe, top);
        assert_eq!(r.recall, Some(1.0));
    }

    #[test]
    fn pairs_outside_universe_leave_recall_undefined() {
        let agg = super::super::similarity::tests_support::random_set(5, 3, 1);
        let db = RelationshipDb::from_edges("x", [("nope", "g0001")]);
        let r = relationship_recall(&agg, &db, 0.05, 0.95).unwrap();
        assert_eq!(r.n_known_pairs_in_universe, 0);
        assert_eq!(r.recall, None);
    }
}

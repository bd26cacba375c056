use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::EmbeddingTable;
use crate::error::{Error, Result};
use crate::rng::{sample_distinct, substream};
use crate::stats::{cosine_similarity, cvm_two_sample, ks_two_sample, median, PermutationConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicatePairResult {
    pub experiment_a: String,
    pub experiment_b: String,
    pub n_matched: usize,
    pub ks: f64,
    pub cvm: f64,
    pub seed_used: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateReport {
    pub per_pair: Vec<ReplicatePairResult>,
    pub median_ks: f64,
    pub median_cvm: f64,
}

/// Match key of a non-control well: perturbation id plus exact concentration.
type MatchKey = (String, Option<u64>);

/// One representative row per perturbation in `experiment`: the well with the
/// lexicographically smallest `(well_position, well_id)`.
pub fn matched_representatives(table: &EmbeddingTable, experiment: &str) -> BTreeMap<(String, Option<u64>), usize> {
    let mut reps: BTreeMap<MatchKey, usize> = BTreeMap::new();
    for (i, m) in table.meta().iter().enumerate() {
        if m.experiment_id != experiment || m.perturbation_type.is_control() {
            continue;
        }
        let key = (m.perturbation_id.clone(), m.concentration.map(f64::to_bits));
        reps.entry(key)
            .and_modify(|cur| {
                let c = table.row_meta(*cur);
                if (&m.well_position, &m.well_id) < (&c.well_position, &c.well_id) {
                    *cur = i;
                }
            })
            .or_insert(i);
    }
    reps
}

fn pair_result(
    table: &EmbeddingTable,
    reps: &BTreeMap<String, BTreeMap<MatchKey, usize>>,
    ea: &str,
    eb: &str,
    seed: u64,
) -> Result<ReplicatePairResult> {
    let missing = |e: &str| Error::invalid(format!("experiment {e:?} not in table"));
    let ra = reps.get(ea).ok_or_else(|| missing(ea))?;
    let rb = reps.get(eb).ok_or_else(|| missing(eb))?;
    let matched: Vec<(usize, usize)> = ra
        .iter()
        .filter_map(|(k, &ia)| rb.get(k).map(|&ib| (ia, ib)))
        .collect();
    let n = matched.len();
    if n < 2 {
        return Err(Error::invalid(format!(
            "experiments {ea} and {eb} share {n} perturbations; need at least 2"
        )));
    }
    let query = matched
        .iter()
        .map(|&(ia, ib)| cosine_similarity(table.row(ia), table.row(ib)))
        .collect::<Result<Vec<f64>>>()?;

    // null: N distinct ordered pairs (i, j), i != j, among the N(N-1)
    // cross-experiment pairs of different perturbations
    let mut rng = substream(seed, &["replicate", ea, eb]);
    let null = sample_distinct(&mut rng, n * (n - 1), n)
        .into_iter()
        .map(|idx| {
            let i = idx / (n - 1);
            let r = idx % (n - 1);
            let j = if r >= i { r + 1 } else { r };
            cosine_similarity(table.row(matched[i].0), table.row(matched[j].1))
        })
        .collect::<Result<Vec<f64>>>()?;

    Ok(ReplicatePairResult {
        experiment_a: ea.to_string(),
        experiment_b: eb.to_string(),
        n_matched: n,
        ks: ks_two_sample(&query, &null)?,
        cvm: cvm_two_sample(&query, &null)?,
        seed_used: seed,
    })
}

/// KS and CVM distances between matched-perturbation similarities and a
/// random non-matching pair null, per experiment pair, with medians.
///
/// Controls are not matched. The null for `(a, b)` comes from the sub-stream
/// `(seed, "replicate", a, b)`, so a pair listed twice gives identical results.
pub fn replicate_consistency(
    table: &EmbeddingTable,
    pairs: &[(String, String)],
    cfg: &PermutationConfig,
) -> Result<ReplicateReport> {
    if pairs.is_empty() {
        return Err(Error::invalid("no experiment pairs given"));
    }
    let mut experiments: Vec<&str> = pairs.iter().flat_map(|(a, b)| [a.as_str(), b.as_str()]).collect();
    experiments.sort_unstable();
    experiments.dedup();
    let reps: BTreeMap<String, BTreeMap<MatchKey, usize>> = experiments
        .iter()
        .filter(|e| table.meta().iter().any(|m| m.experiment_id == **e))
        .map(|&e| (e.to_string(), matched_representatives(table, e)))
        .collect();

    let per_pair = pairs
        .par_iter()
        .map(|(a, b)| pair_result(table, &reps, a, b, cfg.seed))
        .collect::<Result<Vec<_>>>()?;
    let ks: Vec<f64> = per_pair.iter().map(|r| r.ks).collect();
    let cvm: Vec<f64> = per_pair.iter().map(|r| r.cvm).collect();
    Ok(ReplicateReport {
        median_ks: median(&ks).expect("non-empty"),
        median_cvm: median(&cvm).expect("non-empty"),
        per_pair,
    })
}

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{EmbeddingTable, PerturbationType, WellMeta};
use crate::error::{Error, Result};
use crate::rng::{sample_distinct, substream};
use crate::stats::{cauchy_combine, dot, norm, permutation_pvalue, PermutationConfig, MIN_NORM};

/// How replicate wells are grouped into a perturbation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupBy {
    #[default]
    Guide,
    Gene,
    CompoundConcentration,
}

impl GroupBy {
    pub fn as_str(self) -> &'static str {
        match self {
            GroupBy::Guide => "guide",
            GroupBy::Gene => "gene",
            GroupBy::CompoundConcentration => "compound_concentration",
        }
    }
}

impl fmt::Display for GroupBy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GroupBy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "guide" => Ok(GroupBy::Guide),
            "gene" => Ok(GroupBy::Gene),
            "compound_concentration" => Ok(GroupBy::CompoundConcentration),
            other => Err(Error::invalid(format!("unknown grouping {other:?}"))),
        }
    }
}

/// Group key of a well, or `None` if the well belongs to no group.
/// Controls never form groups; they only enter the null pool.
pub fn group_key(m: &WellMeta, by: GroupBy) -> Option<String> {
    if m.perturbation_type.is_control() {
        return None;
    }
    match by {
        GroupBy::Guide => Some(m.perturbation_id.clone()),
        GroupBy::Gene => m.gene_id.clone(),
        GroupBy::CompoundConcentration => (m.perturbation_type == PerturbationType::Compound).then(|| {
            match m.concentration {
                Some(c) => format!("{}@{c}", m.perturbation_id),
                None => m.perturbation_id.clone(),
            }
        }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConsistency {
    pub experiment_id: String,
    pub n_replicates: usize,
    pub s_bar: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyResult {
    pub perturbation_id: String,
    pub experiments: Vec<ExperimentConsistency>,
    /// Cauchy combination over experiments; `None` when no experiment had a
    /// computable statistic.
    pub combined_p: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    TooFewReplicates,
    PoolTooSmall,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedGroup {
    pub perturbation_id: String,
    pub experiment_id: String,
    pub n_replicates: usize,
    pub reason: SkipReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub group_by: GroupBy,
    pub k: usize,
    pub seed: u64,
    pub results: Vec<ConsistencyResult>,
    pub skipped: Vec<SkippedGroup>,
}

struct ExperimentPool {
    experiment_id: String,
    dim: usize,
    /// Unit-normalized eligible wells, row-major.
    units: Vec<f64>,
    /// Group key to positions within `units`.
    groups: BTreeMap<String, Vec<usize>>,
}

impl ExperimentPool {
    fn len(&self) -> usize {
        self.units.len() / self.dim
    }

    fn stat(&self, members: &[usize], acc: &mut [f64]) -> f64 {
        acc.fill(0.0);
        for &m in members {
            for (a, x) in acc.iter_mut().zip(&self.units[m * self.dim..(m + 1) * self.dim]) {
                *a += x;
            }
        }
        let n = members.len() as f64;
        dot(acc, acc) / (n * n)
    }
}

fn build_pools(table: &EmbeddingTable, by: GroupBy) -> Result<Vec<ExperimentPool>> {
    let dim = table.dim();
    let mut by_exp: BTreeMap<&str, ExperimentPool> = BTreeMap::new();
    for i in 0..table.len() {
        if table.perturbation_count(i)? != 1 {
            continue;
        }
        let m = table.row_meta(i);
        let pool = by_exp.entry(m.experiment_id.as_str()).or_insert_with(|| ExperimentPool {
            experiment_id: m.experiment_id.clone(),
            dim,
            units: Vec::new(),
            groups: BTreeMap::new(),
        });
        let row = table.row(i);
        let n = norm(row);
        if !(n >= MIN_NORM) {
            return Err(Error::row(i, "embedding has zero norm"));
        }
        let pos = pool.len();
        pool.units.extend(row.iter().map(|x| x / n));
        if let Some(key) = group_key(m, by) {
            pool.groups.entry(key).or_default().push(pos);
        }
    }
    Ok(by_exp.into_values().collect())
}

/// Per-group replicate similarity `s̄` against a null of equally sized random
/// well sets, per experiment, combined over experiments with Cauchy.
///
/// The table is expected to be TVN-normalized already. Only wells carrying a
/// single perturbation are used (see [`EmbeddingTable::perturbation_count`]).
/// The null pool of an experiment is every such well, the group's own wells
/// and controls included. Null draws for `(experiment, group)` come from the
/// sub-stream `(seed, "consistency", experiment, group)`.
pub fn perturbation_consistency(
    table: &EmbeddingTable,
    cfg: &PermutationConfig,
    group_by: GroupBy,
) -> Result<ConsistencyReport> {
    cfg.validate()?;
    if table.is_empty() {
        return Err(Error::invalid("perturbation consistency on an empty table"));
    }
    let pools = build_pools(table, group_by)?;

    let units: Vec<(&ExperimentPool, &String, &Vec<usize>)> = pools
        .iter()
        .flat_map(|p| p.groups.iter().map(move |(k, v)| (p, k, v)))
        .collect();

    let outcomes: Vec<std::result::Result<ExperimentConsistency, SkipReason>> = units
        .par_iter()
        .map(|&(pool, key, members)| {
            let n = members.len();
            if n < 2 {
                return Err(SkipReason::TooFewReplicates);
            }
            if pool.len() < n {
                return Err(SkipReason::PoolTooSmall);
            }
            let mut acc = vec![0.0; pool.dim];
            let s_bar = pool.stat(members, &mut acc);
            let mut rng = substream(cfg.seed, &["consistency", pool.experiment_id.as_str(), key.as_str()]);
            let null: Vec<f64> = (0..cfg.k)
                .map(|_| {
                    let draw = sample_distinct(&mut rng, pool.len(), n);
                    pool.stat(&draw, &mut acc)
                })
                .collect();
            Ok(ExperimentConsistency {
                experiment_id: pool.experiment_id.clone(),
                n_replicates: n,
                s_bar,
                p_value: permutation_pvalue(s_bar, &null).expect("K >= 1"),
            })
        })
        .collect();

    let mut grouped: BTreeMap<&str, Vec<ExperimentConsistency>> = BTreeMap::new();
    let mut skipped = Vec::new();
    for ((pool, key, members), outcome) in units.iter().zip(outcomes) {
        let entry = grouped.entry(key.as_str()).or_default();
        match outcome {
            Ok(e) => entry.push(e),
            Err(reason) => skipped.push(SkippedGroup {
                perturbation_id: (*key).clone(),
                experiment_id: pool.experiment_id.clone(),
                n_replicates: members.len(),
                reason,
            }),
        }
    }
    skipped.sort_by(|a, b| (&a.perturbation_id, &a.experiment_id).cmp(&(&b.perturbation_id, &b.experiment_id)));

    let results = grouped
        .into_iter()
        .map(|(key, experiments)| {
            let ps: Vec<f64> = experiments.iter().map(|e| e.p_value).collect();
            let combined_p = if ps.is_empty() { None } else { Some(cauchy_combine(&ps)?) };
            Ok(ConsistencyResult {
                perturbation_id: key.to_string(),
                experiments,
                combined_p,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(ConsistencyReport {
        group_by,
        k: cfg.k,
        seed: cfg.seed,
        results,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::mean_pairwise_similarity;
    use crate::synth::{generate_screen, SynthConfig};

    fn meta(i: usize, exp: &str, pid: &str, t: PerturbationType) -> WellMeta {
        WellMeta {
            well_id: format!("w{i}"),
            experiment_id: exp.into(),
            plate_id: "p".into(),
            well_position: format!("A{i:02}"),
            perturbation_id: pid.into(),
            perturbation_type: t,
            gene_id: t.requires_gene().then(|| format!("gene_{pid}")),
            concentration: None,
            cell_type: "c".into(),
        }
    }

    #[test]
    fn grouping_keys() {
        let mut m = meta(0, "E", "CPD1", PerturbationType::Compound);
        m.concentration = Some(0.5);
        assert_eq!(group_key(&m, GroupBy::CompoundConcentration).as_deref(), Some("CPD1@0.5"));
        assert_eq!(group_key(&m, GroupBy::Gene), None);
        let g = meta(1, "E", "sg1", PerturbationType::GeneKnockoutGuide);
        assert_eq!(group_key(&g, GroupBy::Gene).as_deref(), Some("gene_sg1"));
        assert_eq!(group_key(&g, GroupBy::CompoundConcentration), None);
        let c = meta(2, "E", "NEG", PerturbationType::NegativeControl);
        assert_eq!(group_key(&c, GroupBy::Guide), None);
    }

    #[test]
    fn planted_direction_is_significant_and_matches_s_bar_oracle() {
        // group "hit" shares one direction; 200 other wells are isotropic noise
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = substream(3, &["test"]);
        let d = 16;
        let mut metas = Vec::new();
        let mut emb = Vec::new();
        for i in 0..206 {
            let (pid, t) = if i < 6 {
                ("hit", PerturbationType::Sirna)
            } else {
                ("NEG", PerturbationType::NegativeControl)
            };
            metas.push(meta(i, "E1", pid, t));
            for k in 0..d {
                let noise: f64 = StandardNormal.sample(&mut rng);
                emb.push(if i < 6 { f64::from(k == 0) * 5.0 + 0.1 * noise } else { noise });
            }
        }
        let table = EmbeddingTable::new(d, metas, emb, vec![]).unwrap();
        let k = 500;
        let rep = perturbation_consistency(&table, &PermutationConfig::new(k, 1).unwrap(), GroupBy::Guide).unwrap();
        assert_eq!(rep.results.len(), 1);
        let r = &rep.results[0];
        assert!(r.combined_p.unwrap() <= 2.0 / k as f64);
        // single experiment: combined equals the experiment p-value
        assert!((r.combined_p.unwrap() - r.experiments[0].p_value).abs() < 1e-15);
        let oracle = mean_pairwise_similarity((0..6).map(|i| table.row(i))).unwrap();
        assert!((r.experiments[0].s_bar - oracle).abs() < 1e-12);
    }

    #[test]
    fn singletons_are_skipped_with_reason() {
        let metas = vec![
            meta(0, "E1", "a", PerturbationType::Compound),
            meta(1, "E1", "b", PerturbationType::Compound),
            meta(2, "E1", "b", PerturbationType::Compound),
        ];
        let table = EmbeddingTable::new(2, metas, vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0], vec![]).unwrap();
        let rep = perturbation_consistency(&table, &PermutationConfig::new(10, 0).unwrap(), GroupBy::Guide).unwrap();
        assert_eq!(rep.skipped.len(), 1);
        assert_eq!(rep.skipped[0].reason, SkipReason::TooFewReplicates);
        let a = rep.results.iter().find(|r| r.perturbation_id == "a").unwrap();
        assert_eq!(a.combined_p, None);
    }

    #[test]
    fn multi_perturbation_wells_are_excluded() {
        let metas = vec![
            meta(0, "E1", "a", PerturbationType::Compound),
            meta(1, "E1", "a", PerturbationType::Compound),
            meta(2, "E1", "a", PerturbationType::Compound),
        ];
        let table = EmbeddingTable::new(2, metas, vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0], vec![])
            .unwrap()
            .with_extra_column("perturbation_count", vec!["1".into(), "1".into(), "2".into()])
            .unwrap();
        let rep = perturbation_consistency(&table, &PermutationConfig::new(10, 0).unwrap(), GroupBy::Guide).unwrap();
        assert_eq!(rep.results[0].experiments[0].n_replicates, 2);
        assert!((rep.results[0].experiments[0].s_bar - 0.5).abs() < 1e-12);
    }

    #[test]
    fn deterministic_and_thread_independent() {
        let cfg = SynthConfig {
            n_genes: 20,
            dim: 8,
            n_related_groups: 0,
            n_neg_controls_per_experiment: 20,
            ..SynthConfig::default()
        };
        let (t, _) = generate_screen(&cfg).unwrap();
        let pc = PermutationConfig::new(50, 9).unwrap();
        let a = perturbation_consistency(&t, &pc, GroupBy::Gene).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| perturbation_consistency(&t, &pc, GroupBy::Gene).unwrap());
        assert_eq!(a, b);
        assert_eq!(a.results.len(), 20);
        assert!(a.results.iter().all(|r| r.experiments.len() == 4));
    }
}

//! Block-wise linear probes.
//!
//! A probe is a multinomial logistic regression with balanced class weights
//! trained on standardized features. With `S = Σ_i w_i` the objective is
//!
//! ```text
//! (1/S)·Σ_i w_i·CE_i + ‖W‖² / (2·C·S)
//! ```
//!
//! where `w_i = n / (K·n_{y_i})` and the bias is not penalized. This is the
//! sample-weight-normalized form of the usual `C`-parameterized loss and has
//! the same minimizer.

mod lbfgs;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::EmbeddingTable;
use crate::error::{Error, Result};
use crate::linalg::matmul_abt;
use crate::normalize::ScalerTransform;
use crate::stats::spearman_rho;

pub use lbfgs::{minimize, LbfgsOutcome};

/// Extra column holding functional-group labels.
pub const FUNCTIONAL_GROUP_COLUMN: &str = "functional_group";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelKey {
    #[default]
    PerturbationId,
    FunctionalGroup,
}

impl fmt::Display for LabelKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LabelKey::PerturbationId => "perturbation_id",
            LabelKey::FunctionalGroup => "functional_group",
        })
    }
}

impl FromStr for LabelKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "perturbation_id" => Ok(LabelKey::PerturbationId),
            "functional_group" => Ok(LabelKey::FunctionalGroup),
            other => Err(Error::invalid(format!("unknown label key {other:?}"))),
        }
    }
}

/// Row labels of `table` under `key`.
pub fn row_labels(table: &EmbeddingTable, key: LabelKey) -> Result<Vec<String>> {
    match key {
        LabelKey::PerturbationId => Ok(table.meta().iter().map(|m| m.perturbation_id.clone()).collect()),
        LabelKey::FunctionalGroup => table
            .extra_column(FUNCTIONAL_GROUP_COLUMN)
            .map(<[String]>::to_vec)
            .ok_or_else(|| Error::Schema(format!("missing column {FUNCTIONAL_GROUP_COLUMN}"))),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockFeatureSet {
    pub block_index: usize,
    pub features: EmbeddingTable,
    pub label_key: LabelKey,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    /// Inverse L2 strength.
    pub c: f64,
    pub max_iter: usize,
    /// Tolerance on the max-abs gradient.
    pub tol: f64,
    pub memory: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            max_iter: 2000,
            tol: 1e-4,
            memory: 10,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::invalid("probe C must be positive"));
        }
        if self.max_iter == 0 || self.memory == 0 || !(self.tol > 0.0) {
            return Err(Error::invalid("probe max_iter, memory and tol must be positive"));
        }
        Ok(())
    }
}

/// Row indices of a train/test partition by experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSplit {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    /// Classes present only in the test experiments.
    pub dropped_classes: Vec<String>,
    pub dropped_rows: usize,
}

/// Partitions rows by experiment. Rows of classes absent from the training
/// experiments are dropped from both sides and counted.
pub fn split_by_experiment(
    features: &EmbeddingTable,
    labels: &[String],
    test_experiment_ids: &[String],
) -> Result<ExperimentSplit> {
    if labels.len() != features.len() {
        return Err(Error::invalid("one label per row is required"));
    }
    if test_experiment_ids.is_empty() {
        return Err(Error::invalid("no test experiments given"));
    }
    let test_set: BTreeSet<&str> = test_experiment_ids.iter().map(String::as_str).collect();
    let present: BTreeSet<&str> = features.meta().iter().map(|m| m.experiment_id.as_str()).collect();
    if let Some(missing) = test_set.iter().find(|e| !present.contains(*e)) {
        return Err(Error::invalid(format!("test experiment {missing:?} not in table")));
    }
    let is_test = |i: usize| test_set.contains(features.row_meta(i).experiment_id.as_str());
    let train_classes: BTreeSet<&str> = (0..features.len())
        .filter(|&i| !is_test(i))
        .map(|i| labels[i].as_str())
        .collect();
    let mut dropped_classes = BTreeSet::new();
    let (mut train, mut test) = (Vec::new(), Vec::new());
    let mut dropped_rows = 0;
    for i in 0..features.len() {
        if !is_test(i) {
            train.push(i);
        } else if train_classes.contains(labels[i].as_str()) {
            test.push(i);
        } else {
            dropped_classes.insert(labels[i].clone());
            dropped_rows += 1;
        }
    }
    if dropped_rows > 0 {
        log::warn!(
            "{} classes ({dropped_rows} rows) appear only in test experiments and were dropped",
            dropped_classes.len()
        );
    }
    if train.is_empty() || test.is_empty() {
        return Err(Error::invalid("experiment split leaves an empty train or test set"));
    }
    Ok(ExperimentSplit {
        train,
        test,
        dropped_classes: dropped_classes.into_iter().collect(),
        dropped_rows,
    })
}

/// Weighted softmax cross-entropy with L2 on the weights, over standardized rows.
pub struct ProbeObjective {
    n: usize,
    dim: usize,
    classes: usize,
    x: Vec<f64>,
    xt: Vec<f64>,
    y: Vec<usize>,
    w: Vec<f64>,
    weight_sum: f64,
    c: f64,
}

impl ProbeObjective {
    /// `x` is `n × dim` row-major; `y` holds class indices in `0..classes`.
    pub fn new(x: Vec<f64>, dim: usize, y: Vec<usize>, classes: usize, c: f64) -> Result<Self> {
        let n = y.len();
        if x.len() != n * dim {
            return Err(Error::invalid("feature matrix and labels disagree in length"));
        }
        let mut counts = vec![0usize; classes];
        for &c in &y {
            counts[c] += 1;
        }
        let w: Vec<f64> = y
            .iter()
            .map(|&c| n as f64 / (classes as f64 * counts[c] as f64))
            .collect();
        let mut xt = vec![0.0; n * dim];
        for i in 0..n {
            for j in 0..dim {
                xt[j * n + i] = x[i * dim + j];
            }
        }
        Ok(Self {
            n,
            dim,
            classes,
            x,
            xt,
            y,
            weight_sum: w.iter().sum(),
            w,
            c,
        })
    }

    pub fn n_params(&self) -> usize {
        self.classes * (self.dim + 1)
    }

    /// Objective value and gradient at `theta = [W (classes × dim), b]`.
    pub fn value_and_gradient(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let (k, d, n) = (self.classes, self.dim, self.n);
        let (wm, b) = theta.split_at(k * d);
        let mut z = matmul_abt(&self.x, n, d, wm, k);
        let mut rt = vec![0.0; k * n];
        let mut loss = 0.0;
        let mut gb = vec![0.0; k];
        for i in 0..n {
            let zi = &mut z[i * k..(i + 1) * k];
            for (v, bc) in zi.iter_mut().zip(b) {
                *v += bc;
            }
            let m = zi.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = zi.iter().map(|v| (v - m).exp()).sum();
            let lse = m + sum.ln();
            let yi = self.y[i];
            loss += self.w[i] * (lse - zi[yi]);
            for c in 0..k {
                let p = (zi[c] - lse).exp();
                let r = self.w[i] * (p - f64::from(c == yi));
                rt[c * n + i] = r;
                gb[c] += r;
            }
        }
        let s = self.weight_sum;
        let reg = 1.0 / (self.c * s);
        let mut grad = matmul_abt(&rt, k, n, &self.xt, d);
        for (g, wv) in grad.iter_mut().zip(wm) {
            *g = *g / s + reg * wv;
        }
        grad.extend(gb.iter().map(|g| g / s));
        let penalty: f64 = wm.iter().map(|v| v * v).sum();
        (loss / s + 0.5 * reg * penalty, grad)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeModel {
    pub dim: usize,
    /// `classes × dim`, row-major, acting on standardized features.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub class_labels: Vec<String>,
    pub scaler: ScalerTransform,
    pub converged: bool,
    pub iterations_used: usize,
    pub loss_history: Vec<f64>,
}

impl ProbeModel {
    /// Class index with the largest score per row (lowest index on ties).
    pub fn predict_indices(&self, rows: &[f64]) -> Result<Vec<usize>> {
        if rows.len() % self.dim != 0 {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: rows.len() % self.dim,
            });
        }
        let mut x = rows.to_vec();
        self.scaler.transform_in_place(&mut x)?;
        let n = x.len() / self.dim;
        let k = self.class_labels.len();
        let z = matmul_abt(&x, n, self.dim, &self.weights, k);
        Ok((0..n)
            .map(|i| {
                let zi = &z[i * k..(i + 1) * k];
                let mut best = 0;
                for c in 1..k {
                    if zi[c] + self.bias[c] > zi[best] + self.bias[best] {
                        best = c;
                    }
                }
                best
            })
            .collect())
    }

    pub fn predict(&self, rows: &[f64]) -> Result<Vec<String>> {
        Ok(self
            .predict_indices(rows)?
            .into_iter()
            .map(|c| self.class_labels[c].clone())
            .collect())
    }
}

/// Fits the scaler on `rows` (n × dim), then the probe on standardized rows.
pub fn train_logistic_probe(rows: &[f64], dim: usize, labels: &[String], cfg: &ProbeConfig) -> Result<ProbeModel> {
    cfg.validate()?;
    if dim == 0 || rows.len() != labels.len() * dim {
        return Err(Error::invalid("feature matrix and labels disagree in length"));
    }
    let class_labels: Vec<String> = labels.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    if class_labels.len() < 2 {
        return Err(Error::invalid("a probe needs at least 2 classes"));
    }
    let index: BTreeMap<&str, usize> = class_labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    let y: Vec<usize> = labels.iter().map(|l| index[l.as_str()]).collect();
    let scaler = ScalerTransform::fit_rows(rows, dim)?;
    let mut x = rows.to_vec();
    scaler.transform_in_place(&mut x)?;

    let k = class_labels.len();
    let objective = ProbeObjective::new(x, dim, y, k, cfg.c)?;
    let out = minimize(
        |theta| objective.value_and_gradient(theta),
        vec![0.0; objective.n_params()],
        cfg.memory,
        cfg.max_iter,
        cfg.tol,
    );
    if !out.value.is_finite() {
        return Err(Error::Numerical("probe loss is not finite".into()));
    }
    let mut weights = out.x;
    let bias = weights.split_off(k * dim);
    Ok(ProbeModel {
        dim,
        weights,
        bias,
        class_labels,
        scaler,
        converged: out.converged,
        iterations_used: out.iterations,
        loss_history: out.history,
    })
}

/// Mean per-class recall over the classes present in `labels`.
pub fn balanced_accuracy<T: Ord>(predictions: &[T], labels: &[T]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::invalid("predictions and labels differ in length"));
    }
    if labels.is_empty() {
        return Err(Error::invalid("balanced accuracy of an empty set"));
    }
    let mut per_class: BTreeMap<&T, (usize, usize)> = BTreeMap::new();
    for (p, l) in predictions.iter().zip(labels) {
        let e = per_class.entry(l).or_default();
        e.1 += 1;
        if p == l {
            e.0 += 1;
        }
    }
    let sum: f64 = per_class.values().map(|&(hit, total)| hit as f64 / total as f64).sum();
    Ok(sum / per_class.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockScore {
    pub block_index: usize,
    pub balanced_accuracy: f64,
    pub converged: bool,
    pub iterations_used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSweepResult {
    pub per_block: Vec<BlockScore>,
    pub best_block: usize,
    pub best_accuracy: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub dropped_classes: Vec<String>,
}

/// Trains one probe per block on a shared experiment split and picks the
/// block with the highest test balanced accuracy (smallest index on ties).
pub fn sweep_blocks(blocks: &[BlockFeatureSet], test_experiment_ids: &[String], cfg: &ProbeConfig) -> Result<ProbeSweepResult> {
    cfg.validate()?;
    let first = blocks.first().ok_or_else(|| Error::invalid("no blocks to sweep"))?;
    let labels = row_labels(&first.features, first.label_key)?;
    let mut seen = BTreeSet::new();
    for b in blocks {
        if !seen.insert(b.block_index) {
            return Err(Error::invalid(format!("duplicate block index {}", b.block_index)));
        }
        if b.features.len() != first.features.len() || row_labels(&b.features, b.label_key)? != labels {
            return Err(Error::invalid(format!(
                "block {} does not share rows and labels with block {}",
                b.block_index, first.block_index
            )));
        }
        if b.features.meta().iter().zip(first.features.meta()).any(|(x, y)| x.experiment_id != y.experiment_id) {
            return Err(Error::invalid(format!("block {} has different experiments", b.block_index)));
        }
    }
    let split = split_by_experiment(&first.features, &labels, test_experiment_ids)?;
    let train_labels: Vec<String> = split.train.iter().map(|&i| labels[i].clone()).collect();
    let test_labels: Vec<String> = split.test.iter().map(|&i| labels[i].clone()).collect();

    let mut per_block = blocks
        .par_iter()
        .map(|b| {
            let t = &b.features;
            let gather = |idx: &[usize]| idx.iter().flat_map(|&i| t.row(i).iter().copied()).collect::<Vec<f64>>();
            let model = train_logistic_probe(&gather(&split.train), t.dim(), &train_labels, cfg)?;
            let pred = model.predict(&gather(&split.test))?;
            Ok(BlockScore {
                block_index: b.block_index,
                balanced_accuracy: balanced_accuracy(&pred, &test_labels)?,
                converged: model.converged,
                iterations_used: model.iterations_used,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    per_block.sort_by_key(|s| s.block_index);
    let best = per_block
        .iter()
        .fold(None::<&BlockScore>, |best, s| match best {
            Some(b) if b.balanced_accuracy >= s.balanced_accuracy => Some(b),
            _ => Some(s),
        })
        .expect("at least one block");
    Ok(ProbeSweepResult {
        best_block: best.block_index,
        best_accuracy: best.balanced_accuracy,
        n_train: split.train.len(),
        n_test: split.test.len(),
        dropped_classes: split.dropped_classes,
        per_block,
    })
}

/// Spearman correlation between probe accuracy and a benchmark metric over
/// matching model tags.
pub fn correlate_probe_with_benchmarks(probe_scores: &[(String, f64)], benchmark_scores: &[(String, f64)]) -> Result<f64> {
    let to_map = |v: &[(String, f64)], what: &str| -> Result<BTreeMap<String, f64>> {
        let mut m = BTreeMap::new();
        for (tag, x) in v {
            if m.insert(tag.clone(), *x).is_some() {
                return Err(Error::invalid(format!("duplicate {what} tag {tag:?}")));
            }
        }
        Ok(m)
    };
    let p = to_map(probe_scores, "probe")?;
    let b = to_map(benchmark_scores, "benchmark")?;
    if !p.keys().eq(b.keys()) {
        let diff: Vec<&String> = p.keys().filter(|k| !b.contains_key(*k)).chain(b.keys().filter(|k| !p.contains_key(*k))).collect();
        return Err(Error::invalid(format!("model tags differ: {diff:?}")));
    }
    if p.len() < 3 {
        return Err(Error::invalid("rank correlation needs at least 3 models"));
    }
    let x: Vec<f64> = p.values().copied().collect();
    let y: Vec<f64> = b.values().copied().collect();
    spearman_rho(&x, &y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{PerturbationType, WellMeta};
    use crate::rng::substream;
    use rand_distr::{Distribution, StandardNormal};

    fn well(i: usize, exp: &str, label: &str) -> WellMeta {
        WellMeta {
            well_id: format!("w{i}"),
            experiment_id: exp.into(),
            plate_id: "p".into(),
            well_position: "A01".into(),
            perturbation_id: label.into(),
            perturbation_type: PerturbationType::Compound,
            gene_id: None,
            concentration: None,
            cell_type: "c".into(),
        }
    }

    #[test]
    fn balanced_accuracy_examples() {
        let l = ["a", "a", "b", "b"];
        assert_eq!(balanced_accuracy(&l, &l).unwrap(), 1.0);
        assert_eq!(balanced_accuracy(&["a"; 4], &l).unwrap(), 0.5);
        // imbalanced: 3 of class a (2 right), 1 of class b (1 right)
        let p = ["a", "a", "b", "b"];
        let y = ["a", "a", "a", "b"];
        assert!((balanced_accuracy(&p, &y).unwrap() - (2.0 / 3.0 + 1.0) / 2.0).abs() < 1e-15);
        assert!(balanced_accuracy::<&str>(&[], &[]).is_err());
    }

    #[test]
    fn split_examples() {
        let metas = vec![well(0, "A", "x"), well(1, "A", "y"), well(2, "B", "x"), well(3, "B", "z")];
        let t = EmbeddingTable::new(1, metas, vec![0.0; 4], vec![]).unwrap();
        let labels = row_labels(&t, LabelKey::PerturbationId).unwrap();
        let s = split_by_experiment(&t, &labels, &["B".into()]).unwrap();
        assert_eq!(s.train, vec![0, 1]);
        assert_eq!(s.test, vec![2]);
        assert_eq!(s.dropped_classes, vec!["z".to_string()]);
        assert_eq!(s.dropped_rows, 1);
        assert!(split_by_experiment(&t, &labels, &["Q".into()]).is_err());
        assert!(split_by_experiment(&t, &labels, &["A".into(), "B".into()]).is_err());
    }

    fn instance(n: usize, d: usize, k: usize, seed: u64) -> (Vec<f64>, Vec<usize>) {
        let mut rng = substream(seed, &["probe-test"]);
        let x: Vec<f64> = (0..n * d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let y = (0..n).map(|i| (i * 7 + i / 3) % k).collect();
        (x, y)
    }

    #[test]
    fn gradient_matches_central_differences() {
        let (x, y) = instance(40, 5, 3, 1);
        let obj = ProbeObjective::new(x, 5, y, 3, 1.0).unwrap();
        let mut rng = substream(2, &["theta"]);
        let theta: Vec<f64> = (0..obj.n_params()).map(|_| 0.3 * Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect();
        let (_, g) = obj.value_and_gradient(&theta);
        let h = 1e-6;
        for j in 0..theta.len() {
            let mut tp = theta.clone();
            let mut tm = theta.clone();
            tp[j] += h;
            tm[j] -= h;
            let fd = (obj.value_and_gradient(&tp).0 - obj.value_and_gradient(&tm).0) / (2.0 * h);
            assert!((fd - g[j]).abs() <= 1e-6 * g[j].abs().max(1e-2), "param {j}: {fd} vs {}", g[j]);
        }
    }

    #[test]
    fn separable_clusters_are_classified_perfectly() {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        let mut rng = substream(5, &["sep"]);
        for i in 0..60 {
            let c = i % 3;
            for j in 0..4 {
                let center = if j == c { 10.0 } else { 0.0 };
                rows.push(center + Distribution::<f64>::sample(&StandardNormal, &mut rng));
            }
            labels.push(format!("c{c}"));
        }
        let model = train_logistic_probe(&rows, 4, &labels, &ProbeConfig::default()).unwrap();
        assert!(model.converged);
        assert_eq!(model.predict(&rows).unwrap(), labels);
        assert!(model.loss_history.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn single_class_is_rejected() {
        let labels = vec!["a".to_string(); 3];
        assert!(train_logistic_probe(&[0.0, 1.0, 2.0], 1, &labels, &ProbeConfig::default()).is_err());
    }

    #[test]
    fn constant_shift_leaves_predictions_unchanged() {
        let (x, y) = instance(80, 4, 4, 3);
        let labels: Vec<String> = y.iter().map(|c| format!("c{c}")).collect();
        let model = train_logistic_probe(&x, 4, &labels, &ProbeConfig::default()).unwrap();
        let shifted: Vec<f64> = x.iter().map(|v| v + 3.5).collect();
        let model2 = train_logistic_probe(&shifted, 4, &labels, &ProbeConfig::default()).unwrap();
        assert_eq!(model.predict(&x).unwrap(), model2.predict(&shifted).unwrap());
    }

    #[test]
    fn correlation_examples() {
        let tags: Vec<(String, f64)> = (0..5).map(|i| (format!("m{i}"), i as f64)).collect();
        let mono: Vec<(String, f64)> = tags.iter().map(|(t, v)| (t.clone(), v.exp())).collect();
        let rev: Vec<(String, f64)> = tags.iter().map(|(t, v)| (t.clone(), -v)).collect();
        assert_eq!(correlate_probe_with_benchmarks(&tags, &mono).unwrap(), 1.0);
        assert_eq!(correlate_probe_with_benchmarks(&tags, &rev).unwrap(), -1.0);
        assert!(correlate_probe_with_benchmarks(&tags[..4], &mono).is_err());
        assert!(correlate_probe_with_benchmarks(&tags[..2], &mono[..2]).is_err());
    }

    #[test]
    fn sweep_tie_breaks_to_smallest_index() {
        let mut rng = substream(8, &["tie"]);
        let mut metas = Vec::new();
        let mut emb = Vec::new();
        for i in 0..60 {
            let c = i % 2;
            metas.push(well(i, if i < 40 { "A" } else { "B" }, &format!("c{c}")));
            emb.push(c as f64 + Distribution::<f64>::sample(&StandardNormal, &mut rng));
            emb.push(Distribution::<f64>::sample(&StandardNormal, &mut rng));
        }
        let t = EmbeddingTable::new(2, metas, emb, vec![]).unwrap();
        let blocks: Vec<BlockFeatureSet> = [2, 1]
            .iter()
            .map(|&b| BlockFeatureSet {
                block_index: b,
                features: t.clone(),
                label_key: LabelKey::PerturbationId,
            })
            .collect();
        let r = sweep_blocks(&blocks, &["B".into()], &ProbeConfig::default()).unwrap();
        assert_eq!(r.best_block, 1);
        assert_eq!(r.per_block[0].balanced_accuracy, r.per_block[1].balanced_accuracy);
        let one = sweep_blocks(&blocks[..1], &["B".into()], &ProbeConfig::default()).unwrap();
        assert_eq!(one.best_block, 2);
    }
}

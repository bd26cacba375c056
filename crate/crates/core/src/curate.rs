//! Five-step training-set curation over a [`DatasetManifest`].
//!
//! 1. quality flags, 2. metadata, 3. replication, 4. control undersampling,
//! 5. phenoprint filter. Steps run in this order and each one sees only the
//! rows that survived the previous steps.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::benchmarks::ConsistencyResult;
use crate::data::{DatasetManifest, ManifestRow, PerturbationType};
use crate::error::{Error, Result};
use crate::rng::{shuffle, substream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurationConfig {
    pub required_quality_flags: Vec<String>,
    pub max_perturbations_per_well: u32,
    pub min_experiments: usize,
    pub min_wells: usize,
    pub keep_rate_positive_controls: f64,
    pub keep_rate_negative_controls: f64,
    pub keep_rate_unperturbed: f64,
    pub phenoprint_p_threshold: f64,
    /// Image shape tags accepted by step 2. Empty accepts every tag.
    pub accepted_image_shape_tags: Vec<String>,
    pub seed: u64,
}

impl Default for CurationConfig {
    fn default() -> Self {
        Self {
            required_quality_flags: Vec::new(),
            max_perturbations_per_well: 3,
            min_experiments: 3,
            min_wells: 20,
            keep_rate_positive_controls: 0.10,
            keep_rate_negative_controls: 0.30,
            keep_rate_unperturbed: 0.10,
            phenoprint_p_threshold: 0.01,
            accepted_image_shape_tags: Vec::new(),
            seed: 0,
        }
    }
}

impl CurationConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, r) in [
            ("keep_rate_positive_controls", self.keep_rate_positive_controls),
            ("keep_rate_negative_controls", self.keep_rate_negative_controls),
            ("keep_rate_unperturbed", self.keep_rate_unperturbed),
        ] {
            if !(r > 0.0 && r <= 1.0) {
                return Err(Error::invalid(format!("{name} must be in (0, 1], got {r}")));
            }
        }
        let p = self.phenoprint_p_threshold;
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::invalid(format!("phenoprint_p_threshold must be in (0, 1), got {p}")));
        }
        if self.max_perturbations_per_well == 0 || self.min_experiments == 0 || self.min_wells == 0 {
            return Err(Error::invalid("curation count thresholds must be at least 1"));
        }
        Ok(())
    }

    /// Keep rate of a control category, `None` for perturbed categories.
    pub fn keep_rate(&self, t: PerturbationType) -> Option<f64> {
        match t {
            PerturbationType::PositiveControl => Some(self.keep_rate_positive_controls),
            PerturbationType::NegativeControl => Some(self.keep_rate_negative_controls),
            PerturbationType::Unperturbed => Some(self.keep_rate_unperturbed),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepReport {
    pub step_name: String,
    pub rows_in: usize,
    pub rows_out: usize,
    pub rows_dropped: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurationReport {
    pub steps: Vec<StepReport>,
    /// Conditions reaching step 5 without any consistency result.
    pub uncovered_conditions: Vec<String>,
}

impl CurationReport {
    pub fn is_chained(&self) -> bool {
        self.steps.iter().all(|s| s.rows_in == s.rows_out + s.rows_dropped)
            && self.steps.windows(2).all(|w| w[0].rows_out == w[1].rows_in)
    }
}

/// Number of rows kept from a stratum of `n` at `rate`: `⌈rate·n⌉`, with
/// products within 1e-9 of an integer treated as that integer so that
/// `0.3 × 100` keeps 30.
pub fn stratum_keep_count(rate: f64, n: usize) -> usize {
    let x = rate * n as f64;
    let r = x.round();
    let m = if (x - r).abs() <= 1e-9 * r.max(1.0) { r } else { x.ceil() };
    (m as usize).min(n)
}

pub fn step1_quality_filter(manifest: &DatasetManifest, cfg: &CurationConfig) -> Result<DatasetManifest> {
    for (i, r) in manifest.rows().iter().enumerate() {
        if let Some(f) = cfg.required_quality_flags.iter().find(|f| !r.quality_flags.contains_key(*f)) {
            return Err(Error::row(i, format!("missing quality flag {f:?}")));
        }
    }
    Ok(manifest.retain(|r| cfg.required_quality_flags.iter().all(|f| r.quality_flags[f])))
}

fn metadata_ok(r: &ManifestRow, cfg: &CurationConfig) -> bool {
    let Some(t) = r.perturbation_type else {
        return false;
    };
    if t != PerturbationType::Unperturbed && r.conditions.is_empty() {
        return false;
    }
    if r.perturbation_count > cfg.max_perturbations_per_well {
        return false;
    }
    cfg.accepted_image_shape_tags.is_empty() || cfg.accepted_image_shape_tags.contains(&r.image_shape_tag)
}

/// Drops rows with missing perturbation info, too many perturbations, or an
/// unaccepted image shape.
pub fn step2_metadata_filter(manifest: &DatasetManifest, cfg: &CurationConfig) -> DatasetManifest {
    manifest.retain(|r| metadata_ok(r, cfg))
}

/// Drops every row carrying a condition seen in fewer than `min_experiments`
/// distinct experiments or `min_wells` distinct wells.
pub fn step3_replication_filter(manifest: &DatasetManifest, cfg: &CurationConfig) -> DatasetManifest {
    let mut seen: HashMap<&str, (BTreeSet<&str>, BTreeSet<&str>)> = HashMap::new();
    for r in manifest.rows() {
        for c in &r.conditions {
            let e = seen.entry(c.as_str()).or_default();
            e.0.insert(r.experiment_id.as_str());
            e.1.insert(r.well_id.as_str());
        }
    }
    let ok: HashMap<&str, bool> = seen
        .iter()
        .map(|(c, (exps, wells))| (*c, exps.len() >= cfg.min_experiments && wells.len() >= cfg.min_wells))
        .collect();
    manifest.retain(|r| r.conditions.iter().all(|c| ok[c.as_str()]))
}

/// Keeps `⌈rate·n⌉` rows of each control category per experiment, chosen by
/// sorting the stratum's well ids and shuffling with the sub-stream
/// `(seed, "curate-step4", category, experiment)`. Other rows are kept.
pub fn step4_undersample(manifest: &DatasetManifest, cfg: &CurationConfig) -> DatasetManifest {
    let mut strata: BTreeMap<(PerturbationType, &str), Vec<&str>> = BTreeMap::new();
    for r in manifest.rows() {
        if let Some(t) = r.perturbation_type.filter(|t| cfg.keep_rate(*t).is_some()) {
            strata.entry((t, r.experiment_id.as_str())).or_default().push(r.well_id.as_str());
        }
    }
    let mut keep: BTreeSet<&str> = BTreeSet::new();
    for ((t, exp), mut wells) in strata {
        wells.sort_unstable();
        let mut rng = substream(cfg.seed, &["curate-step4", t.as_str(), exp]);
        shuffle(&mut rng, &mut wells);
        let m = stratum_keep_count(cfg.keep_rate(t).expect("control category"), wells.len());
        keep.extend(&wells[..m]);
    }
    manifest.retain(|r| match r.perturbation_type {
        Some(t) if cfg.keep_rate(t).is_some() => keep.contains(r.well_id.as_str()),
        _ => true,
    })
}

/// Keeps wells with at least one condition whose combined p-value is below
/// the threshold in at least one model. Control categories are exempt.
/// Returns the filtered manifest and the sorted conditions that had no
/// result in any model.
pub fn step5_phenoprint_filter(
    manifest: &DatasetManifest,
    consistency_results: &[(String, Vec<ConsistencyResult>)],
    cfg: &CurationConfig,
) -> Result<(DatasetManifest, Vec<String>)> {
    if consistency_results.is_empty() {
        return Err(Error::invalid("phenoprint filter needs at least one model's results"));
    }
    let mut covered: BTreeSet<&str> = BTreeSet::new();
    let mut passing: BTreeSet<&str> = BTreeSet::new();
    for (_, results) in consistency_results {
        for r in results {
            covered.insert(r.perturbation_id.as_str());
            if r.combined_p.is_some_and(|p| p < cfg.phenoprint_p_threshold) {
                passing.insert(r.perturbation_id.as_str());
            }
        }
    }
    let exempt = |r: &ManifestRow| r.perturbation_type.is_some_and(|t| t.is_control());
    let uncovered: BTreeSet<String> = manifest
        .rows()
        .iter()
        .filter(|r| !exempt(r))
        .flat_map(|r| r.conditions.iter())
        .filter(|c| !covered.contains(c.as_str()))
        .cloned()
        .collect();
    if !uncovered.is_empty() {
        log::warn!("{} conditions have no consistency result and are treated as failing", uncovered.len());
    }
    let out = manifest.retain(|r| exempt(r) || r.conditions.iter().any(|c| passing.contains(c.as_str())));
    Ok((out, uncovered.into_iter().collect()))
}

pub const STEP_NAMES: [&str; 5] = ["quality_filter", "metadata_filter", "replication_filter", "undersample", "phenoprint_filter"];

pub fn curate_pipeline(
    manifest: &DatasetManifest,
    consistency_results: &[(String, Vec<ConsistencyResult>)],
    cfg: &CurationConfig,
) -> Result<(DatasetManifest, CurationReport)> {
    cfg.validate()?;
    let mut steps = Vec::with_capacity(5);
    let mut record = |name: &str, before: &DatasetManifest, after: &DatasetManifest| {
        steps.push(StepReport {
            step_name: name.to_string(),
            rows_in: before.len(),
            rows_out: after.len(),
            rows_dropped: before.len() - after.len(),
        });
    };
    let m1 = step1_quality_filter(manifest, cfg)?;
    record(STEP_NAMES[0], manifest, &m1);
    let m2 = step2_metadata_filter(&m1, cfg);
    record(STEP_NAMES[1], &m1, &m2);
    let m3 = step3_replication_filter(&m2, cfg);
    record(STEP_NAMES[2], &m2, &m3);
    let m4 = step4_undersample(&m3, cfg);
    record(STEP_NAMES[3], &m3, &m4);
    let (m5, uncovered_conditions) = if m4.is_empty() {
        (m4.clone(), Vec::new())
    } else {
        step5_phenoprint_filter(&m4, consistency_results, cfg)?
    };
    record(STEP_NAMES[4], &m4, &m5);
    Ok((
        m5,
        CurationReport {
            steps,
            uncovered_conditions,
        },
    ))
}

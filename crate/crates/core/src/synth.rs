//! Synthetic screens with planted ground truth.
//!
//! A well of gene `g` in experiment `e` is `B_e (μ_g + ε) + shift_e` with
//! `ε ~ N(0, σ²I)`. Null genes and negative controls have `μ = 0`. Genes in a
//! related group share a group direction: each gene direction is
//! `√ρ·d_group + √(1−ρ)·r_gene` with `r_gene ⟂ d_group`, so any two members
//! have cosine at least `2ρ − 1`. The batch map is
//! `B_e = (1 − s)·I + s·R_e` with `R_e` a random rotation.
//!
//! Values are rounded to f32 so generated tables survive a disk round trip
//! unchanged.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    canonical_pair, DatasetManifest, EmbeddingTable, ManifestRow, PerturbationType, RelationshipDb,
    WellMeta,
};
use crate::error::{Error, Result};
use crate::linalg;
use crate::probe::{BlockFeatureSet, LabelKey};
use crate::rng::{self, substream, StreamRng};
use crate::stats::{dot, unit};

/// Share of a related gene's direction that comes from its group direction.
pub const GROUP_SHARE: f64 = 0.92;

pub const NEGATIVE_CONTROL_ID: &str = "NEG_CTRL";
pub const CELL_TYPE: &str = "SYNTH";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_genes: usize,
    pub n_guides_per_gene: usize,
    pub n_experiments: usize,
    pub wells_per_guide_per_experiment: usize,
    pub dim: usize,
    pub frac_null_genes: f64,
    pub effect_magnitude: f64,
    pub noise_sigma: f64,
    pub batch_shift_sigma: f64,
    pub batch_rotation_strength: f64,
    pub n_related_groups: usize,
    pub genes_per_group: usize,
    pub n_neg_controls_per_experiment: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_genes: 200,
            n_guides_per_gene: 2,
            n_experiments: 4,
            wells_per_guide_per_experiment: 2,
            dim: 64,
            frac_null_genes: 0.2,
            effect_magnitude: 1.0,
            noise_sigma: 0.25,
            batch_shift_sigma: 0.0,
            batch_rotation_strength: 0.0,
            n_related_groups: 10,
            genes_per_group: 5,
            n_neg_controls_per_experiment: 100,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn n_null_genes(&self) -> usize {
        (self.frac_null_genes * self.n_genes as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(format!("synth config: {m}")));
        if self.n_genes == 0 || self.n_guides_per_gene == 0 || self.n_experiments == 0 {
            return bad("gene, guide and experiment counts must be at least 1");
        }
        if self.wells_per_guide_per_experiment == 0 || self.dim == 0 {
            return bad("wells per guide and dim must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.frac_null_genes) {
            return bad("frac_null_genes must be in [0, 1]");
        }
        if !(self.effect_magnitude >= 0.0 && self.effect_magnitude.is_finite()) {
            return bad("effect_magnitude must be non-negative");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be non-negative");
        }
        if !(self.batch_shift_sigma >= 0.0 && self.batch_shift_sigma.is_finite()) {
            return bad("batch_shift_sigma must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.batch_rotation_strength) {
            return bad("batch_rotation_strength must be in [0, 1]");
        }
        let demand = self.n_related_groups * self.genes_per_group;
        if demand > self.n_genes - self.n_null_genes() {
            return bad("related groups need more genes than are non-null");
        }
        if self.n_related_groups > 0 && self.genes_per_group < 2 {
            return bad("related groups need at least 2 genes");
        }
        Ok(())
    }

    pub fn gene_name(i: usize) -> String {
        format!("G{i:04}")
    }

    pub fn experiment_name(e: usize) -> String {
        format!("EXP{e:02}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchTransform {
    pub experiment_id: String,
    /// Row-major `dim × dim`.
    pub matrix: Vec<f64>,
    pub shift: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthGroundTruth {
    pub null_genes: BTreeSet<String>,
    pub groups: Vec<Vec<String>>,
    pub related_pairs: BTreeSet<(String, String)>,
    /// Planted mean effect `μ_g` per gene (zero for null genes).
    pub effects: BTreeMap<String, Vec<f64>>,
    pub batches: Vec<BatchTransform>,
}

impl SynthGroundTruth {
    pub fn related_db(&self, name: &str) -> RelationshipDb {
        RelationshipDb::from_edges(name, self.related_pairs.iter().cloned())
    }

    /// Smallest cosine between the planted effects of any related pair.
    pub fn min_related_cosine(&self) -> Option<f64> {
        self.related_pairs
            .iter()
            .map(|(a, b)| {
                let (u, v) = (&self.effects[a], &self.effects[b]);
                dot(u, v) / (dot(u, u).sqrt() * dot(v, v).sqrt())
            })
            .min_by(f64::total_cmp)
    }
}

fn gaussian(rng: &mut StreamRng) -> f64 {
    StandardNormal.sample(rng)
}

fn random_unit(rng: &mut StreamRng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| gaussian(rng)).collect();
        if let Ok(u) = unit(&v) {
            return u;
        }
    }
}

fn round_f32(v: f64) -> f64 {
    v as f32 as f64
}

fn well_position(k: usize) -> (usize, String) {
    let plate = k / 384;
    let within = k % 384;
    let row = (b'A' + (within / 24) as u8) as char;
    (plate, format!("{row}{:02}", within % 24 + 1))
}

/// Plants gene effects: null set, related groups and their directions.
fn plant_genes(cfg: &SynthConfig) -> (BTreeSet<String>, Vec<Vec<String>>, BTreeMap<String, Vec<f64>>) {
    let mut rng = substream(cfg.seed, &["synth", "genes"]);
    let mut order: Vec<usize> = (0..cfg.n_genes).collect();
    rng::shuffle(&mut rng, &mut order);
    let n_null = cfg.n_null_genes();
    let null_genes: BTreeSet<String> = order[..n_null].iter().map(|&g| SynthConfig::gene_name(g)).collect();

    let mut effects = BTreeMap::new();
    for &g in &order[..n_null] {
        effects.insert(SynthConfig::gene_name(g), vec![0.0; cfg.dim]);
    }
    let mut groups = Vec::with_capacity(cfg.n_related_groups);
    let mut cursor = n_null;
    for _ in 0..cfg.n_related_groups {
        let d_group = random_unit(&mut rng, cfg.dim);
        let mut members = Vec::with_capacity(cfg.genes_per_group);
        for &g in &order[cursor..cursor + cfg.genes_per_group] {
            // private direction orthogonal to the group direction
            let r = loop {
                let mut r = random_unit(&mut rng, cfg.dim);
                let c = dot(&r, &d_group);
                for (x, d) in r.iter_mut().zip(&d_group) {
                    *x -= c * d;
                }
                if let Ok(r) = unit(&r) {
                    break r;
                }
            };
            let dir: Vec<f64> = d_group
                .iter()
                .zip(&r)
                .map(|(d, p)| GROUP_SHARE.sqrt() * d + (1.0 - GROUP_SHARE).sqrt() * p)
                .collect();
            let name = SynthConfig::gene_name(g);
            effects.insert(name.clone(), dir.iter().map(|x| cfg.effect_magnitude * x).collect());
            members.push(name);
        }
        members.sort();
        groups.push(members);
        cursor += cfg.genes_per_group;
    }
    for &g in &order[cursor..] {
        let dir = random_unit(&mut rng, cfg.dim);
        effects.insert(
            SynthConfig::gene_name(g),
            dir.iter().map(|x| cfg.effect_magnitude * x).collect(),
        );
    }
    (null_genes, groups, effects)
}

fn batch_transform(cfg: &SynthConfig, e: usize) -> BatchTransform {
    let exp = SynthConfig::experiment_name(e);
    let mut rng = substream(cfg.seed, &["synth", "batch", exp.as_str()]);
    let d = cfg.dim;
    let s = cfg.batch_rotation_strength;
    let mut matrix = vec![0.0; d * d];
    if s > 0.0 {
        let rot = linalg::random_orthogonal(&mut rng, d);
        for (m, r) in matrix.iter_mut().zip(&rot) {
            *m = s * r;
        }
    }
    for i in 0..d {
        matrix[i * d + i] += 1.0 - s;
    }
    let shift = (0..d).map(|_| cfg.batch_shift_sigma * gaussian(&mut rng)).collect();
    BatchTransform {
        experiment_id: exp,
        matrix,
        shift,
    }
}

struct ExperimentRows {
    meta: Vec<WellMeta>,
    embeddings: Vec<f64>,
}

fn generate_experiment(
    cfg: &SynthConfig,
    e: usize,
    effects: &BTreeMap<String, Vec<f64>>,
    batch: &BatchTransform,
) -> ExperimentRows {
    let exp = SynthConfig::experiment_name(e);
    let mut rng = substream(cfg.seed, &["synth", "wells", exp.as_str()]);
    let d = cfg.dim;
    let mut meta = Vec::new();
    let mut embeddings = Vec::new();
    let mut k = 0usize;
    let zero = vec![0.0; d];
    let mut latent = vec![0.0; d];

    let mut push = |rng: &mut StreamRng, mu: &[f64], pid: String, ptype: PerturbationType, gene: Option<String>| {
        for (l, m) in latent.iter_mut().zip(mu) {
            *l = m + cfg.noise_sigma * gaussian(rng);
        }
        for i in 0..d {
            let row = &batch.matrix[i * d..(i + 1) * d];
            embeddings.push(round_f32(dot(row, &latent) + batch.shift[i]));
        }
        let (plate, pos) = well_position(k);
        let plate_id = format!("{exp}-P{plate}");
        meta.push(WellMeta {
            well_id: format!("{plate_id}-{pos}"),
            experiment_id: exp.clone(),
            plate_id,
            well_position: pos,
            perturbation_id: pid,
            perturbation_type: ptype,
            gene_id: gene,
            concentration: None,
            cell_type: CELL_TYPE.to_string(),
        });
        k += 1;
    };

    for (gene, mu) in effects {
        for guide in 0..cfg.n_guides_per_gene {
            for _ in 0..cfg.wells_per_guide_per_experiment {
                push(
                    &mut rng,
                    mu,
                    format!("{gene}_sg{guide}"),
                    PerturbationType::GeneKnockoutGuide,
                    Some(gene.clone()),
                );
            }
        }
    }
    for _ in 0..cfg.n_neg_controls_per_experiment {
        push(
            &mut rng,
            &zero,
            NEGATIVE_CONTROL_ID.to_string(),
            PerturbationType::NegativeControl,
            None,
        );
    }
    ExperimentRows { meta, embeddings }
}

/// Generates a screen and its ground truth. Rows are ordered by experiment,
/// gene, guide and well, with each experiment's controls last.
pub fn generate_screen(cfg: &SynthConfig) -> Result<(EmbeddingTable, SynthGroundTruth)> {
    cfg.validate()?;
    let (null_genes, groups, effects) = plant_genes(cfg);
    let batches: Vec<BatchTransform> = (0..cfg.n_experiments).map(|e| batch_transform(cfg, e)).collect();
    let parts: Vec<ExperimentRows> = (0..cfg.n_experiments)
        .into_par_iter()
        .map(|e| generate_experiment(cfg, e, &effects, &batches[e]))
        .collect();
    let mut meta = Vec::new();
    let mut embeddings = Vec::new();
    for p in parts {
        meta.extend(p.meta);
        embeddings.extend(p.embeddings);
    }
    let table = EmbeddingTable::new(cfg.dim, meta, embeddings, Vec::new())?;
    let related_pairs = groups
        .iter()
        .flat_map(|g| {
            g.iter()
                .enumerate()
                .flat_map(move |(i, a)| g[i + 1..].iter().map(move |b| canonical_pair(a, b)))
        })
        .collect();
    Ok((
        table,
        SynthGroundTruth {
            null_genes,
            groups,
            related_pairs,
            effects,
            batches,
        },
    ))
}

/// Width of the separability profile across blocks.
fn profile_width(n_blocks: usize) -> f64 {
    (n_blocks as f64 / 6.0).max(1.0)
}

/// Signal scale of block `b` (1-based) for a family peaking at `peak_block`.
pub fn block_profile(b: usize, n_blocks: usize, peak_block: usize) -> f64 {
    let z = (b as f64 - peak_block as f64) / profile_width(n_blocks);
    (-0.5 * z * z).exp()
}

/// Per-block features for a classification task whose class signal follows
/// a unimodal profile over blocks.
///
/// Classes are the `n_genes` genes, each with a random mean direction of
/// length `effect_magnitude`. Every row has one latent noise draw
/// `N(0, noise_sigma²·I)` that is shared by all blocks, so blocks differ only
/// in how strongly the class signal is expressed.
pub fn generate_block_family(
    cfg: &SynthConfig,
    n_blocks: usize,
    peak_block: usize,
) -> Result<Vec<BlockFeatureSet>> {
    cfg.validate()?;
    if n_blocks == 0 || peak_block == 0 || peak_block > n_blocks {
        return Err(Error::invalid(format!(
            "peak block {peak_block} outside 1..={n_blocks}"
        )));
    }
    let d = cfg.dim;
    let mut rng = substream(cfg.seed, &["synth", "block-family", "classes"]);
    let means: Vec<Vec<f64>> = (0..cfg.n_genes)
        .map(|_| random_unit(&mut rng, d).into_iter().map(|x| x * cfg.effect_magnitude).collect())
        .collect();

    let mut meta = Vec::new();
    let mut classes = Vec::new();
    let mut noise = Vec::new();
    for e in 0..cfg.n_experiments {
        let exp = SynthConfig::experiment_name(e);
        let mut rng = substream(cfg.seed, &["synth", "block-family", "wells", exp.as_str()]);
        let mut k = 0;
        for c in 0..cfg.n_genes {
            let gene = SynthConfig::gene_name(c);
            for guide in 0..cfg.n_guides_per_gene {
                for _ in 0..cfg.wells_per_guide_per_experiment {
                    let (plate, pos) = well_position(k);
                    let plate_id = format!("{exp}-P{plate}");
                    meta.push(WellMeta {
                        well_id: format!("{plate_id}-{pos}"),
                        experiment_id: exp.clone(),
                        plate_id,
                        well_position: pos,
                        perturbation_id: gene.clone(),
                        perturbation_type: PerturbationType::Sirna,
                        gene_id: Some(gene.clone()),
                        concentration: None,
                        cell_type: CELL_TYPE.to_string(),
                    });
                    let _ = guide;
                    classes.push(c);
                    noise.extend((0..d).map(|_| cfg.noise_sigma * gaussian(&mut rng)));
                    k += 1;
                }
            }
        }
    }

    (1..=n_blocks)
        .map(|b| {
            let scale = block_profile(b, n_blocks, peak_block);
            let embeddings: Vec<f64> = classes
                .iter()
                .enumerate()
                .flat_map(|(i, &c)| {
                    let mu = &means[c];
                    let eps = &noise[i * d..(i + 1) * d];
                    mu.iter().zip(eps).map(move |(m, n)| round_f32(scale * m + n))
                })
                .collect();
            Ok(BlockFeatureSet {
                block_index: b,
                features: EmbeddingTable::new(d, meta.clone(), embeddings, Vec::new())?,
                label_key: LabelKey::PerturbationId,
            })
        })
        .collect()
}

/// Planted curation scenario: a manifest, per-model consistency results, and
/// the rows each step must keep.
#[derive(Debug, Clone)]
pub struct PlantedManifest {
    pub manifest: DatasetManifest,
    pub consistency: Vec<(String, Vec<crate::benchmarks::ConsistencyResult>)>,
    /// Non-control wells that survive every step.
    pub expected_kept_perturbed: BTreeSet<String>,
    /// Control wells that survive steps 1 to 3, by (category, experiment).
    pub eligible_controls: BTreeMap<(PerturbationType, String), Vec<String>>,
    /// Conditions present in exactly 3 experiments and 20 wells.
    pub boundary_conditions: Vec<String>,
    pub accepted_shape: String,
    pub flag_names: Vec<String>,
}

#[derive(Clone, Copy, PartialEq)]
enum ConditionKind {
    PassA,
    PassB,
    NoPrint,
    FewExperiments,
    FewWells,
    Boundary,
}

const CONDITION_KINDS: [ConditionKind; 6] = [
    ConditionKind::PassA,
    ConditionKind::PassB,
    ConditionKind::NoPrint,
    ConditionKind::FewExperiments,
    ConditionKind::FewWells,
    ConditionKind::Boundary,
];

/// Builds a manifest of exactly `n_rows` wells in which every curation rule
/// has planted passing and failing cases.
///
/// Compound conditions cycle through six kinds: phenoprint in model A only,
/// in model B only, in neither, too few experiments (2), too few wells (19),
/// and the step-3 boundary (exactly 3 experiments and 20 wells). Extra wells
/// attached to passing conditions fail a quality flag, carry too many
/// perturbations, have an unaccepted image shape, or lack perturbation info.
/// Two-condition wells either pair a passing condition with a non-phenoprint
/// one (kept) or with a condition seen in one experiment only (dropped).
/// Every experiment has positive controls, negative controls and
/// unperturbed wells.
pub fn generate_manifest(n_rows: usize, n_experiments: usize, seed: u64) -> Result<PlantedManifest> {
    use crate::benchmarks::{ConsistencyResult, ExperimentConsistency};
    use ConditionKind::*;

    if n_experiments < 3 {
        return Err(Error::invalid("planted manifest needs at least 3 experiments"));
    }
    if n_rows < 1000 {
        return Err(Error::invalid("planted manifest needs at least 1000 rows"));
    }
    let flag_names = vec!["artifact_free".to_string(), "focus_ok".to_string()];
    let accepted_shape = "2048x2048x6".to_string();
    let mut rng = substream(seed, &["synth", "manifest"]);
    let exps: Vec<String> = (0..n_experiments).map(SynthConfig::experiment_name).collect();

    let mut rows: Vec<ManifestRow> = Vec::with_capacity(n_rows);
    let mut expected = BTreeSet::new();
    let mut eligible_controls: BTreeMap<(PerturbationType, String), Vec<String>> = BTreeMap::new();
    let mut boundary_conditions = Vec::new();
    let mut counter = 0usize;
    let mut next_id = |exp: &str| {
        counter += 1;
        format!("{exp}-W{counter:06}")
    };
    let base = |id: String, exp: &str, t: Option<PerturbationType>, conds: Vec<String>| ManifestRow {
        well_id: id,
        experiment_id: exp.to_string(),
        perturbation_type: t,
        perturbation_count: conds.len() as u32,
        conditions: conds,
        quality_flags: flag_names.iter().map(|f| (f.clone(), true)).collect(),
        image_shape_tag: accepted_shape.clone(),
    };
    let control = |t: PerturbationType| match t {
        PerturbationType::PositiveControl => vec!["POS_CTRL".to_string()],
        PerturbationType::NegativeControl => vec!["NEG_CTRL".to_string()],
        _ => vec![],
    };
    let control_types = [
        PerturbationType::PositiveControl,
        PerturbationType::NegativeControl,
        PerturbationType::Unperturbed,
    ];

    let per_stratum = n_rows / 10 / (3 * n_experiments);
    for exp in &exps {
        for t in control_types {
            for _ in 0..per_stratum {
                let id = next_id(exp);
                rows.push(base(id.clone(), exp, Some(t), control(t)));
                eligible_controls.entry((t, exp.clone())).or_default().push(id);
            }
        }
    }

    let n_bad = n_rows / 250;
    let bad_budget = 7 * n_bad;
    let mut results_a = Vec::new();
    let mut results_b = Vec::new();
    let mut record = |cond: &str, pa: f64, pb: f64| {
        for (r, p) in [(&mut results_a, pa), (&mut results_b, pb)] {
            r.push(ConsistencyResult {
                perturbation_id: cond.to_string(),
                experiments: vec![ExperimentConsistency {
                    experiment_id: "ALL".into(),
                    n_replicates: 0,
                    s_bar: 0.0,
                    p_value: p,
                }],
                combined_p: Some(p),
            });
        }
    };

    let mut pass_a = Vec::new();
    let mut no_print = None;
    let mut c = 0usize;
    loop {
        let kind = CONDITION_KINDS[c % CONDITION_KINDS.len()];
        let (n_exp, n_wells) = match kind {
            FewExperiments => (2, 30),
            FewWells => (n_experiments, 19),
            Boundary => (3, 20),
            _ => (n_experiments, 20 + rng.random_range(0..12)),
        };
        if rows.len() + n_wells + bad_budget > n_rows {
            break;
        }
        let cond = format!("CPD{c:05}@1.0");
        let (pa, pb) = match kind {
            PassB => (0.4, 0.001),
            NoPrint => (0.02, 0.02),
            _ => (0.005, 0.5),
        };
        record(&cond, pa, pb);
        match kind {
            PassA => pass_a.push(cond.clone()),
            NoPrint => no_print = no_print.or(Some(cond.clone())),
            Boundary => boundary_conditions.push(cond.clone()),
            _ => {}
        }
        let passes = matches!(kind, PassA | PassB | Boundary);
        for w in 0..n_wells {
            let exp = &exps[w % n_exp];
            let id = next_id(exp);
            rows.push(base(id.clone(), exp, Some(PerturbationType::Compound), vec![cond.clone()]));
            if passes {
                expected.insert(id);
            }
        }
        c += 1;
    }
    let no_print = no_print.expect("budget admits a full cycle of kinds");
    let rare = "RARE@1.0".to_string();
    record(&rare, 0.001, 0.001);

    for k in 0..n_bad {
        let exp = &exps[k % n_experiments];
        let host = &pass_a[k % pass_a.len()];
        let compound = |id: String, conds: Vec<String>| base(id, exp, Some(PerturbationType::Compound), conds);

        let mut bad_flag = compound(next_id(exp), vec![host.clone()]);
        bad_flag.quality_flags.insert(flag_names[k % 2].clone(), false);
        let mut crowded = compound(next_id(exp), vec![host.clone()]);
        crowded.perturbation_count = 4;
        let mut odd_shape = compound(next_id(exp), vec![host.clone()]);
        odd_shape.image_shape_tag = "1024x1024x5".into();
        let missing = compound(next_id(exp), vec![]);
        let mut untyped = compound(next_id(exp), vec![host.clone()]);
        untyped.perturbation_type = None;

        let combo_pass = compound(next_id(exp), vec![no_print.clone(), host.clone()]);
        expected.insert(combo_pass.well_id.clone());
        // RARE only ever appears in the first experiment
        let first = &exps[0];
        let combo_rare = base(next_id(first), first, Some(PerturbationType::Compound), vec![host.clone(), rare.clone()]);
        rows.extend([bad_flag, crowded, odd_shape, missing, untyped, combo_pass, combo_rare]);
    }

    // pad with negative controls
    let mut k = 0;
    while rows.len() < n_rows {
        let exp = &exps[k % n_experiments];
        let id = next_id(exp);
        rows.push(base(id.clone(), exp, Some(PerturbationType::NegativeControl), control(PerturbationType::NegativeControl)));
        eligible_controls.entry((PerturbationType::NegativeControl, exp.clone())).or_default().push(id);
        k += 1;
    }

    Ok(PlantedManifest {
        manifest: DatasetManifest::new(rows)?,
        consistency: vec![("model_a".to_string(), results_a), ("model_b".to_string(), results_b)],
        expected_kept_perturbed: expected,
        eligible_controls,
        boundary_conditions,
        accepted_shape,
        flag_names,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::mean_pairwise_similarity;

    fn small() -> SynthConfig {
        SynthConfig {
            n_genes: 30,
            dim: 16,
            n_related_groups: 3,
            genes_per_group: 4,
            n_neg_controls_per_experiment: 10,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let (a, ga) = generate_screen(&small()).unwrap();
        let (b, gb) = generate_screen(&small()).unwrap();
        assert_eq!(a, b);
        assert_eq!(ga, gb);
        let mut other = small();
        other.seed = 1;
        assert_ne!(generate_screen(&other).unwrap().0, a);
    }

    #[test]
    fn shapes_and_order() {
        let cfg = small();
        let (t, gt) = generate_screen(&cfg).unwrap();
        let per_exp = cfg.n_genes * cfg.n_guides_per_gene * cfg.wells_per_guide_per_experiment
            + cfg.n_neg_controls_per_experiment;
        assert_eq!(t.len(), per_exp * cfg.n_experiments);
        assert_eq!(gt.null_genes.len(), 6);
        assert_eq!(gt.related_pairs.len(), 3 * 6);
        assert!(gt.related_pairs.iter().all(|(a, b)| !gt.null_genes.contains(a) && !gt.null_genes.contains(b)));
        let exps: Vec<&str> = t.meta().iter().map(|m| m.experiment_id.as_str()).collect();
        assert!(exps.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(t.row_meta(per_exp - 1).perturbation_type, PerturbationType::NegativeControl);
    }

    #[test]
    fn related_pairs_have_high_planted_cosine() {
        let (_, gt) = generate_screen(&small()).unwrap();
        assert!(gt.min_related_cosine().unwrap() >= 0.8);
    }

    #[test]
    fn noiseless_gene_wells_are_identical() {
        let cfg = SynthConfig {
            noise_sigma: 0.0,
            frac_null_genes: 0.0,
            ..small()
        };
        let (t, _) = generate_screen(&cfg).unwrap();
        let wells: Vec<&[f64]> = (0..t.len())
            .filter(|&i| t.row_meta(i).gene_id.as_deref() == Some("G0003"))
            .map(|i| t.row(i))
            .collect();
        assert_eq!(wells.len(), 16);
        assert!((mean_pairwise_similarity(wells).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_inconsistent_config() {
        let cfg = SynthConfig {
            n_genes: 10,
            n_related_groups: 3,
            genes_per_group: 4,
            ..SynthConfig::default()
        };
        assert!(generate_screen(&cfg).is_err());
        assert!(generate_block_family(&small(), 12, 13).is_err());
        assert!(generate_block_family(&small(), 12, 0).is_err());
    }

    #[test]
    fn block_profile_is_unimodal() {
        for peak in [1, 7, 12] {
            let p: Vec<f64> = (1..=12).map(|b| block_profile(b, 12, peak)).collect();
            assert_eq!(p[peak - 1], 1.0);
            assert!(p[..peak].windows(2).all(|w| w[0] < w[1]));
            assert!(p[peak - 1..].windows(2).all(|w| w[0] > w[1]));
        }
    }

    #[test]
    fn block_family_shares_rows_across_blocks() {
        let fam = generate_block_family(&small(), 5, 3).unwrap();
        assert_eq!(fam.len(), 5);
        for (k, b) in fam.iter().enumerate() {
            assert_eq!(b.block_index, k + 1);
            assert_eq!(b.features.meta(), fam[0].features.meta());
        }
    }
}

//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use hcs_core::benchmarks::{
    perturbation_consistency, prepare_gene_aggregates, relationship_recall,
    replicate_consistency, GroupBy, PairwiseSimilarities, ReplicateReport,
};
use hcs_core::curate::{curate_pipeline, stratum_keep_count, CurationConfig};
use hcs_core::data::{
    EmbeddingTable, GeneAggregateSet, PerturbationType, RelationshipDb, WellMeta,
};
use hcs_core::normalize::{apply_tvn, fit_tvn, ControlSelector};
use hcs_core::probe::{
    balanced_accuracy, sweep_blocks, train_logistic_probe, BlockFeatureSet, LabelKey, ProbeConfig, ProbeObjective,
    FUNCTIONAL_GROUP_COLUMN,
};
use hcs_core::rng::{below, sample_distinct, shuffle, substream, StreamRng};
use hcs_core::stats::{
    cauchy_combine, cvm_two_sample, ks_two_sample, quantile_sorted, unit, PermutationConfig,
};
use hcs_core::synth::{generate_block_family, generate_manifest, generate_screen, SynthConfig};
use rand_distr::{Distribution, StandardNormal, Uniform};

type Outcome = Result<String, String>;

fn normal(rng: &mut StreamRng) -> f64 {
    Distribution::<f64>::sample(&StandardNormal, rng)
}

fn uniform(rng: &mut StreamRng) -> f64 {
    Uniform::new(0.0, 1.0).unwrap().sample(rng)
}

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn peak_rss_mb() -> Option<f64> {
    let status = fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: f64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb / 1024.0)
}

// ---------------------------------------------------------------- oracles

/// ECDF distance evaluated at every pooled point.
fn ks_oracle(a: &[f64], b: &[f64]) -> f64 {
    let ecdf = |s: &[f64], x: f64| s.iter().filter(|&&v| v <= x).count() as f64 / s.len() as f64;
    a.iter()
        .chain(b)
        .map(|&x| (ecdf(a, x) - ecdf(b, x)).abs())
        .fold(0.0, f64::max)
}

/// Rank formula with pooled ranks from a full sort (ties: `a` first).
fn cvm_oracle(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    let mut pooled: Vec<(f64, usize, usize)> = a
        .iter()
        .enumerate()
        .map(|(i, &v)| (v, 0, i))
        .chain(b.iter().enumerate().map(|(i, &v)| (v, 1, i)))
        .collect();
    pooled.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap().then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut ranks = [Vec::new(), Vec::new()];
    for (pos, &(_, which, _)) in pooled.iter().enumerate() {
        ranks[which].push(pos + 1);
    }
    let u: f64 = ranks
        .iter()
        .flat_map(|r| r.iter().enumerate().map(|(m, &rank)| ((rank - (m + 1)) as f64).powi(2)))
        .sum();
    let nf = n as f64;
    u / (2.0 * nf * nf) - (4.0 * nf * nf - 1.0) / (12.0 * nf)
}

/// One-sample KS distance of `p` from U(0, 1).
fn ks_uniform(p: &[f64]) -> f64 {
    let mut s = p.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| ((i as f64 + 1.0) / n - x).max(x - i as f64 / n))
        .fold(0.0, f64::max)
}

// ------------------------------------------------------------- criteria

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = substream(1, &["acceptance", "two-sample"]);
    let mut worst_ks: f64 = 0.0;
    let mut worst_cvm: f64 = 0.0;
    for inst in 0..1000 {
        let n = 1 + below(&mut rng, 200);
        // a third of the instances draw from a coarse grid to force ties
        let draw = |rng: &mut StreamRng| {
            if inst % 3 == 0 {
                below(rng, 10) as f64
            } else {
                normal(rng)
            }
        };
        let a: Vec<f64> = (0..n).map(|_| draw(&mut rng)).collect();
        let b: Vec<f64> = (0..n).map(|_| draw(&mut rng) + 0.3).collect();
        worst_ks = worst_ks.max((ks_two_sample(&a, &b).unwrap() - ks_oracle(&a, &b)).abs());
        worst_cvm = worst_cvm.max((cvm_two_sample(&a, &b).unwrap() - cvm_oracle(&a, &b)).abs());
    }
    let third = ks_two_sample(&[1.0, 2.0, 3.0], &[1.5, 2.5, 3.5]).unwrap();
    let elapsed = start.elapsed();
    check(
        worst_ks <= 1e-12 && worst_cvm <= 1e-12 && third == 1.0 / 3.0 && elapsed < Duration::from_secs(10),
        format!("max |ks−oracle| {worst_ks:.1e}, max |cvm−oracle| {worst_cvm:.1e}, ks example {third}, {elapsed:.2?}"),
    )
}

fn criterion_2() -> Outcome {
    let mut worst: f64 = 0.0;
    for i in 0..50 {
        let p = (i as f64 + 0.5) / 50.0;
        worst = worst.max((cauchy_combine(&[p, p]).unwrap() - p).abs());
    }
    let mut rng = substream(2, &["acceptance", "cauchy"]);
    let mut violations = 0;
    for _ in 0..1000 {
        let n = 2 + below(&mut rng, 8);
        let ps: Vec<f64> = (0..n).map(|_| uniform(&mut rng).max(1e-12)).collect();
        let base = cauchy_combine(&ps).unwrap();
        let mut up = ps.clone();
        let k = below(&mut rng, n);
        up[k] = (up[k] + uniform(&mut rng) * (1.0 - up[k])).min(1.0);
        if cauchy_combine(&up).unwrap() < base - 1e-15 {
            violations += 1;
        }
    }
    let extreme = cauchy_combine(&[1e-300, 0.5]).unwrap();
    let alone = cauchy_combine(&[1e-300]).unwrap();
    let extreme_ok = extreme.is_finite() && extreme > 0.0 && extreme < 1e-10 && alone.is_finite() && alone > 0.0;
    check(
        worst <= 1e-12 && violations == 0 && extreme_ok,
        format!("fixed-point error {worst:.1e}, monotonicity violations {violations}/1000, combine(1e-300, 0.5) = {extreme:.3e}"),
    )
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let cfg = SynthConfig {
        n_genes: 2500,
        frac_null_genes: 1.0,
        n_related_groups: 0,
        n_experiments: 4,
        seed: 3,
        ..SynthConfig::default()
    };
    let (table, _) = generate_screen(&cfg).map_err(|e| e.to_string())?;
    let tvn = fit_tvn(&ControlSelector::NegativeControls.select(&table), 1e-6).map_err(|e| e.to_string())?;
    let table = apply_tvn(&tvn, &table).map_err(|e| e.to_string())?;
    let report = perturbation_consistency(&table, &PermutationConfig::new(999, 3).unwrap(), GroupBy::Gene)
        .map_err(|e| e.to_string())?;
    let p: Vec<f64> = report
        .results
        .iter()
        .flat_map(|r| r.experiments.iter().map(|e| e.p_value))
        .collect();
    let d = ks_uniform(&p);
    let elapsed = start.elapsed();
    check(
        p.len() == 10_000 && d < 0.02 && elapsed < Duration::from_secs(120),
        format!("{} null p-values, KS from U(0,1) {d:.4}, {elapsed:.1?}", p.len()),
    )
}

fn random_covariance_controls(n: usize, d: usize, seed: u64) -> EmbeddingTable {
    let mut rng = substream(seed, &["acceptance", "tvn"]);
    let a: Vec<f64> = (0..d * d).map(|_| normal(&mut rng)).collect();
    let mean: Vec<f64> = (0..d).map(|_| 3.0 * normal(&mut rng)).collect();
    let mut emb = Vec::with_capacity(n * d);
    let mut meta = Vec::with_capacity(n);
    for i in 0..n {
        let z: Vec<f64> = (0..d).map(|_| normal(&mut rng)).collect();
        for r in 0..d {
            let row = &a[r * d..(r + 1) * d];
            emb.push(mean[r] + row.iter().zip(&z).map(|(x, y)| x * y).sum::<f64>());
        }
        meta.push(WellMeta {
            well_id: format!("W{i:05}"),
            experiment_id: "E0".into(),
            plate_id: "P0".into(),
            well_position: format!("{i}"),
            perturbation_id: "NEG".into(),
            perturbation_type: PerturbationType::NegativeControl,
            gene_id: None,
            concentration: None,
            cell_type: "X".into(),
        });
    }
    EmbeddingTable::new(d, meta, emb, Vec::new()).unwrap()
}

fn planted_recall(table: &EmbeddingTable, db: &RelationshipDb, tvn: bool) -> Result<f64, String> {
    let table = if tvn {
        let t = fit_tvn(&ControlSelector::NegativeControls.select(table), 1e-6).map_err(|e| e.to_string())?;
        apply_tvn(&t, table).map_err(|e| e.to_string())?
    } else {
        table.clone()
    };
    let agg = prepare_gene_aggregates(&table, &ControlSelector::NegativeControls, None).map_err(|e| e.to_string())?;
    let r = relationship_recall(&agg.aggregates, db, 0.05, 0.95).map_err(|e| e.to_string())?;
    r.recall.ok_or_else(|| "recall undefined".to_string())
}

fn criterion_4() -> Outcome {
    let (d, n) = (64, 10_000);
    let controls = random_covariance_controls(n, d, 4);
    let tvn = fit_tvn(&controls, 1e-6).map_err(|e| e.to_string())?;
    let w = apply_tvn(&tvn, &controls).map_err(|e| e.to_string())?;
    let x = w.embeddings();
    let mut mean = vec![0.0; d];
    for row in x.chunks(d) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v / n as f64;
        }
    }
    let max_mean = mean.iter().fold(0.0f64, |a, m| a.max(m.abs()));
    let mut fro = 0.0;
    for i in 0..d {
        for j in 0..d {
            let c: f64 = x.chunks(d).map(|r| (r[i] - mean[i]) * (r[j] - mean[j])).sum::<f64>() / n as f64;
            let target = if i == j { 1.0 } else { 0.0 };
            fro += (c - target).powi(2);
        }
    }
    let rel_fro = fro.sqrt() / (d as f64).sqrt();

    let cfg = SynthConfig {
        batch_rotation_strength: 0.5,
        batch_shift_sigma: 1.0,
        seed: 4,
        ..SynthConfig::default()
    };
    let (screen, truth) = generate_screen(&cfg).map_err(|e| e.to_string())?;
    let db = truth.related_db("planted");
    let pre = planted_recall(&screen, &db, false)?;
    let post = planted_recall(&screen, &db, true)?;
    check(
        max_mean < 1e-8 && rel_fro < 1e-6 && post >= 0.9 && pre <= 0.5,
        format!("whitened max |mean| {max_mean:.1e}, relative Frobenius {rel_fro:.1e}, planted recall pre-TVN {pre:.3} post-TVN {post:.3}"),
    )
}

fn criterion_5() -> Outcome {
    let cfg = SynthConfig { seed: 5, ..SynthConfig::default() };
    let (screen, _) = generate_screen(&cfg).map_err(|e| e.to_string())?;
    let t = fit_tvn(&ControlSelector::NegativeControls.select(&screen), 1e-6).map_err(|e| e.to_string())?;
    let screen = apply_tvn(&t, &screen).map_err(|e| e.to_string())?;
    let agg = prepare_gene_aggregates(&screen, &ControlSelector::NegativeControls, None).map_err(|e| e.to_string())?;
    let genes = agg.aggregates.genes().to_vec();
    let g = genes.len();
    let total = g * (g - 1) / 2;
    let mut rng = substream(5, &["acceptance", "random-pairs"]);
    let m = 4000;
    let pairs = sample_distinct(&mut rng, total, m).into_iter().map(|mut k| {
        // unrank k into (i, j), i < j
        let mut i = 0;
        while k >= g - 1 - i {
            k -= g - 1 - i;
            i += 1;
        }
        (genes[i].clone(), genes[i + 1 + k].clone())
    });
    let db = RelationshipDb::from_edges("random", pairs);
    let r = relationship_recall(&agg.aggregates, &db, 0.05, 0.95).map_err(|e| e.to_string())?;
    let recall = r.recall.unwrap_or(f64::NAN);
    let sd = (0.1 * 0.9 / r.n_known_pairs_in_universe as f64).sqrt();
    check(
        r.n_known_pairs_in_universe == m && (recall - 0.1).abs() <= 3.0 * sd,
        format!("{m} random pairs over {g} genes, recall {recall:.4} (0.10 ± {:.4})", 3.0 * sd),
    )
}

fn replicate_screen(effect: f64, seed: u64) -> EmbeddingTable {
    let cfg = SynthConfig {
        n_genes: 100,
        n_guides_per_gene: 2,
        frac_null_genes: 0.0,
        effect_magnitude: effect,
        noise_sigma: 0.1,
        n_related_groups: 0,
        dim: 64,
        seed,
        ..SynthConfig::default()
    };
    generate_screen(&cfg).unwrap().0
}

fn all_pairs(n_exp: usize) -> Vec<(String, String)> {
    let mut v = Vec::new();
    for a in 0..n_exp {
        for b in a + 1..n_exp {
            v.push((SynthConfig::experiment_name(a), SynthConfig::experiment_name(b)));
        }
    }
    v
}

fn replicate_in_pool(table: &EmbeddingTable, threads: usize) -> ReplicateReport {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    pool.install(|| replicate_consistency(table, &all_pairs(4), &PermutationConfig::new(1, 6).unwrap()).unwrap())
}

fn criterion_6() -> Outcome {
    let signal = replicate_screen(1.0, 6);
    let noise = replicate_screen(0.0, 6);
    let r1 = replicate_in_pool(&signal, 1);
    let r8 = replicate_in_pool(&signal, 8);
    let rn = replicate_in_pool(&noise, 1);
    let matched = r1.per_pair[0].n_matched;
    let same = serde_json::to_string(&r1).unwrap() == serde_json::to_string(&r8).unwrap();
    check(
        matched == 200 && r1.median_ks >= 0.9 && rn.median_ks <= 0.15 && same,
        format!(
            "{matched} matched perturbations, median KS signal {:.3} noise {:.3}, identical at 1 and 8 threads: {same}",
            r1.median_ks, rn.median_ks
        ),
    )
}

fn block_family_config(seed: u64) -> SynthConfig {
    SynthConfig {
        n_genes: 10,
        n_guides_per_gene: 2,
        wells_per_guide_per_experiment: 4,
        dim: 16,
        frac_null_genes: 0.0,
        effect_magnitude: 1.0,
        noise_sigma: 0.5,
        n_related_groups: 0,
        n_neg_controls_per_experiment: 0,
        seed,
        ..SynthConfig::default()
    }
}

fn clustered(n_per_class: &[usize], experiments: &[&str], sep: f64, rng: &mut StreamRng) -> (Vec<f64>, Vec<String>, Vec<String>) {
    let d = 8;
    let mut x = Vec::new();
    let mut labels = Vec::new();
    let mut exps = Vec::new();
    for (e, exp) in experiments.iter().enumerate() {
        for (c, &n) in n_per_class.iter().enumerate() {
            for _ in 0..n {
                for j in 0..d {
                    let mu = if j == c { sep } else { 0.0 };
                    x.push(mu + normal(rng));
                }
                labels.push(format!("class{c}"));
                exps.push(exp.to_string());
            }
        }
        let _ = e;
    }
    (x, labels, exps)
}

fn criterion_7() -> Outcome {
    let cfg = ProbeConfig::default();
    let test = vec![SynthConfig::experiment_name(3)];
    let mut hits = 0;
    for seed in 0..100 {
        let blocks = generate_block_family(&block_family_config(seed), 12, 7).map_err(|e| e.to_string())?;
        let r = sweep_blocks(&blocks, &test, &cfg).map_err(|e| e.to_string())?;
        if r.best_block == 7 {
            hits += 1;
        }
    }

    let mut rng = substream(7, &["acceptance", "probe"]);
    let d = 8;
    let (x, y, _) = clustered(&[30, 30, 30, 30], &["A"], 12.0, &mut rng);
    let (xt, yt, _) = clustered(&[20, 20, 20, 20], &["B"], 12.0, &mut rng);
    let model = train_logistic_probe(&x, d, &y, &cfg).map_err(|e| e.to_string())?;
    let separable = balanced_accuracy(&model.predict(&xt).map_err(|e| e.to_string())?, &yt).map_err(|e| e.to_string())?;

    let (x, mut y, _) = clustered(&[250, 250, 250, 250], &["A"], 0.0, &mut rng);
    shuffle(&mut rng, &mut y);
    let (xt, mut yt, _) = clustered(&[500, 500, 500, 500], &["B"], 0.0, &mut rng);
    shuffle(&mut rng, &mut yt);
    let model = train_logistic_probe(&x, d, &y, &cfg).map_err(|e| e.to_string())?;
    let shuffled = balanced_accuracy(&model.predict(&xt).map_err(|e| e.to_string())?, &yt).map_err(|e| e.to_string())?;

    // central finite differences on a small weighted instance
    let (dim, classes, n) = (3, 3, 13);
    let xs: Vec<f64> = (0..n * dim).map(|_| normal(&mut rng)).collect();
    let ys: Vec<usize> = (0..n).map(|i| if i < 7 { 0 } else if i < 10 { 1 } else { 2 }).collect();
    let obj = ProbeObjective::new(xs, dim, ys, classes, 0.7).map_err(|e| e.to_string())?;
    let theta: Vec<f64> = (0..obj.n_params()).map(|_| 0.5 * normal(&mut rng)).collect();
    let (_, grad) = obj.value_and_gradient(&theta);
    let h = 1e-6;
    let fd: Vec<f64> = (0..theta.len())
        .map(|k| {
            let mut p = theta.clone();
            p[k] += h;
            let fp = obj.value_and_gradient(&p).0;
            p[k] -= 2.0 * h;
            let fm = obj.value_and_gradient(&p).0;
            (fp - fm) / (2.0 * h)
        })
        .collect();
    let diff: f64 = grad.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
    let rel = diff / scale;

    check(
        hits >= 95 && separable == 1.0 && (shuffled - 0.25).abs() <= 0.05 && rel <= 1e-4,
        format!("b* = 7 in {hits}/100 seeds, separable accuracy {separable}, shuffled accuracy {shuffled:.3}, gradient relative error {rel:.1e}"),
    )
}

fn criterion_8() -> Outcome {
    let levels = [0.2, 0.4, 0.6, 0.8, 1.0, 1.3, 1.6];
    let mut acc = Vec::new();
    let mut recall = Vec::new();
    for (m, &sigma) in levels.iter().enumerate() {
        let cfg = SynthConfig {
            n_genes: 40,
            frac_null_genes: 0.0,
            n_related_groups: 8,
            genes_per_group: 5,
            noise_sigma: sigma,
            seed: 8,
            ..SynthConfig::default()
        };
        let (screen, truth) = generate_screen(&cfg).map_err(|e| e.to_string())?;
        recall.push((format!("model{m}"), planted_recall(&screen, &truth.related_db("planted"), true)?));

        let group_of: BTreeMap<&str, String> = truth
            .groups
            .iter()
            .enumerate()
            .flat_map(|(k, g)| g.iter().map(move |gene| (gene.as_str(), format!("group{k}"))))
            .collect();
        let genes = screen.filter(|w| w.gene_id.is_some());
        let labels = genes
            .meta()
            .iter()
            .map(|w| group_of[w.gene_id.as_deref().unwrap()].clone())
            .collect();
        let features = genes.with_extra_column(FUNCTIONAL_GROUP_COLUMN, labels).map_err(|e| e.to_string())?;
        let block = BlockFeatureSet {
            block_index: m,
            features,
            label_key: LabelKey::FunctionalGroup,
        };
        let r = sweep_blocks(&[block], &[SynthConfig::experiment_name(3)], &ProbeConfig::default())
            .map_err(|e| e.to_string())?;
        acc.push((format!("model{m}"), r.best_accuracy));
    }
    let rho = hcs_core::probe::correlate_probe_with_benchmarks(&acc, &recall).map_err(|e| e.to_string())?;
    let fmt = |v: &[(String, f64)]| v.iter().map(|(_, x)| format!("{x:.3}")).collect::<Vec<_>>().join(" ");
    check(
        levels.len() >= 6 && rho >= 0.8,
        format!("{} noise levels, probe accuracy [{}], planted recall [{}], Spearman rho {rho:.3}", levels.len(), fmt(&acc), fmt(&recall)),
    )
}

fn criterion_9() -> Outcome {
    let planted = generate_manifest(10_000, 4, 9).map_err(|e| e.to_string())?;
    let cfg = CurationConfig {
        required_quality_flags: planted.flag_names.clone(),
        accepted_image_shape_tags: vec![planted.accepted_shape.clone()],
        seed: 9,
        ..CurationConfig::default()
    };
    let (kept, report) = curate_pipeline(&planted.manifest, &planted.consistency, &cfg).map_err(|e| e.to_string())?;

    let kept_perturbed: BTreeSet<String> = kept
        .rows()
        .iter()
        .filter(|r| !r.perturbation_type.is_some_and(|t| t.is_control()))
        .map(|r| r.well_id.clone())
        .collect();
    let exact = kept_perturbed == planted.expected_kept_perturbed;

    let mut kept_controls: BTreeMap<(PerturbationType, String), BTreeSet<String>> = BTreeMap::new();
    for r in kept.rows() {
        if let Some(t) = r.perturbation_type.filter(|t| t.is_control()) {
            kept_controls.entry((t, r.experiment_id.clone())).or_default().insert(r.well_id.clone());
        }
    }
    let mut controls_ok = kept_controls.keys().all(|k| planted.eligible_controls.contains_key(k));
    for (key, eligible) in &planted.eligible_controls {
        let got = kept_controls.get(key).cloned().unwrap_or_default();
        let rate = cfg.keep_rate(key.0).unwrap();
        let subset = got.iter().all(|w| eligible.contains(w));
        controls_ok &= subset && got.len() == stratum_keep_count(rate, eligible.len());
    }

    let kept_conditions: BTreeSet<&str> = kept.rows().iter().flat_map(|r| r.conditions.iter().map(String::as_str)).collect();
    let boundary_ok = !planted.boundary_conditions.is_empty()
        && planted.boundary_conditions.iter().all(|c| kept_conditions.contains(c.as_str()));
    check(
        exact && controls_ok && report.is_chained() && boundary_ok,
        format!(
            "{} kept ({} perturbed, exact match {exact}), control strata correct {controls_ok}, chained {}, {} boundary conditions kept {boundary_ok}",
            kept.len(),
            kept_perturbed.len(),
            report.is_chained(),
            planted.boundary_conditions.len()
        ),
    )
}

fn random_aggregates(n: usize, d: usize, seed: u64) -> GeneAggregateSet {
    let mut rng = substream(seed, &["acceptance", "perf"]);
    let m: BTreeMap<String, Vec<f64>> = (0..n)
        .map(|i| {
            let v: Vec<f64> = (0..d).map(|_| normal(&mut rng)).collect();
            (format!("g{i:05}"), unit(&v).unwrap())
        })
        .collect();
    GeneAggregateSet::new(d, m).unwrap()
}

fn chain_db(n: usize, step: usize) -> RelationshipDb {
    RelationshipDb::from_edges(
        "chain",
        (0..n.saturating_sub(step)).step_by(step).map(|i| (format!("g{i:05}"), format!("g{:05}", i + 1))),
    )
}

fn criterion_10() -> Outcome {
    let (n, d) = (17_000, 1024);
    let agg = random_aggregates(n, d, 10);
    let db = chain_db(n, 17);
    let start = Instant::now();
    let big = relationship_recall(&agg, &db, 0.05, 0.95).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let peak = peak_rss_mb().unwrap_or(f64::NAN);

    // naive double loop on a 500-gene subsample
    let small = random_aggregates(500, d, 11);
    let small_db = chain_db(500, 3);
    let fast = relationship_recall(&small, &small_db, 0.05, 0.95).map_err(|e| e.to_string())?;
    let mut all = Vec::new();
    let mut sim = BTreeMap::new();
    for i in 0..500 {
        for j in i + 1..500 {
            let s: f64 = small.vector(i).iter().zip(small.vector(j)).map(|(a, b)| a * b).sum();
            all.push(s);
            sim.insert((small.genes()[i].clone(), small.genes()[j].clone()), s);
        }
    }
    all.sort_by(f64::total_cmp);
    let (lo, hi) = (quantile_sorted(&all, 0.05), quantile_sorted(&all, 0.95));
    let naive_hits = small_db
        .pairs()
        .iter()
        .filter(|p| {
            let s = sim[*p];
            s <= lo || s >= hi
        })
        .count();
    let naive_recall = naive_hits as f64 / small_db.len() as f64;
    let tdiff = (fast.t_low - lo).abs().max((fast.t_high - hi).abs());
    let rdiff = (fast.recall.unwrap_or(f64::NAN) - naive_recall).abs();
    let n_pairs = PairwiseSimilarities::new(&agg).map(|s| s.n_pairs()).unwrap_or(0);
    check(
        elapsed <= Duration::from_secs(120) && peak <= 4096.0 && tdiff <= 1e-6 && rdiff <= 1e-6,
        format!(
            "{n} genes x {d} ({n_pairs} pairs) in {elapsed:.1?}, peak RSS {peak:.0} MB, recall {:.4}; 500-gene naive threshold diff {tdiff:.1e}, recall diff {rdiff:.1e}",
            big.recall.unwrap_or(f64::NAN)
        ),
    )
}

fn run_cli(config: &Path, command: &str, out: &Path, threads: usize) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_hcs"))
        .arg(command)
        .arg("--config")
        .arg(config)
        .arg("--output-dir")
        .arg(out)
        .arg("--threads")
        .arg(threads.to_string())
        .arg("--log-level")
        .arg("warn")
        .status()
        .map_err(|e| e.to_string())?;
    if status.success() {
        Ok(())
    } else {
        Err(format!("hcs {command} failed with {status}"))
    }
}

fn json_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "json") {
            out.insert(p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap());
        }
    }
    out
}

fn criterion_11() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = tmp.path();
    let data = root.join("data");
    let config = root.join("run.toml");
    let toml = r#"
[global]
seed = 11

[synth.screen]
n_genes = 100
batch_rotation_strength = 0.3
batch_shift_sigma = 0.5

[synth.block_family]
n_blocks = 6
peak_block = 3

[synth.manifest]
n_rows = 2000

[normalize]
input = "data/screen.arrow"

[consistency]
input = "data/normalized.arrow"
k = 200

[replicate]
input = "data/normalized.arrow"
pairs = [["EXP00", "EXP01"], ["EXP02", "EXP03"]]

[recall]
input = "data/normalized.arrow"
databases = [{ name = "planted", path = "data/planted_pairs.tsv" }]

[probe]
blocks_dir = "data/blocks"
test_experiments = ["EXP03"]

[curate]
manifest = "data/manifest.arrow"
consistency = [
  { model = "model_a", path = "data/manifest_consistency_model_a.json" },
  { model = "model_b", path = "data/manifest_consistency_model_b.json" },
]
"#;
    fs::write(&config, toml).map_err(|e| e.to_string())?;
    run_cli(&config, "synth", &data, 1)?;
    run_cli(&config, "normalize", &data, 1)?;

    let commands = ["synth", "normalize", "consistency", "replicate", "recall", "probe", "curate"];
    let mut mismatched = Vec::new();
    let mut n_files = 0;
    for cmd in commands {
        let mut runs = Vec::new();
        for (k, threads) in [1, 8, 8].into_iter().enumerate() {
            let out = root.join(format!("{cmd}-{k}"));
            run_cli(&config, cmd, &out, threads)?;
            runs.push(json_files(&out));
        }
        n_files += runs[0].len();
        if runs[0].is_empty() || runs.iter().any(|r| *r != runs[0]) {
            mismatched.push(cmd);
        }
    }
    check(
        mismatched.is_empty(),
        format!("{} commands, {n_files} JSON reports, byte-identical across reruns at 1 and 8 threads; mismatched: {mismatched:?}", commands.len()),
    )
}

fn main() {
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|s| s.parse().ok());
    let criteria: [(usize, &str, fn() -> Outcome); 11] = [
        (10, "similarity scan performance", criterion_10),
        (1, "two-sample statistic oracles", criterion_1),
        (2, "Cauchy combination", criterion_2),
        (3, "permutation null calibration", criterion_3),
        (4, "TVN whitening and batch recovery", criterion_4),
        (5, "random-pair recall baseline", criterion_5),
        (6, "replicate consistency", criterion_6),
        (7, "probe sweep", criterion_7),
        (8, "probe accuracy tracks recall", criterion_8),
        (9, "curation pipeline", criterion_9),
        (11, "CLI determinism", criterion_11),
    ];
    let mut failed = 0;
    for (n, name, f) in criteria {
        if only.is_some_and(|o| o != n) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {n} ({name}): {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {n} ({name}): {detail} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use hcs_core::benchmarks::{
    perturbation_consistency, prepare_gene_aggregates, relationship_recall_many, replicate_consistency,
    ConsistencyReport, ConsistencyResult, GroupBy,
};
use hcs_core::curate::curate_pipeline;
use hcs_core::data::{
    load_arm_annotation, load_embedding_table, load_manifest, load_relationship_db, save_embedding_table,
    save_manifest, EmbeddingTable, TableFormat,
};
use hcs_core::normalize::{apply_tvn, fit_tvn};
use hcs_core::probe::{sweep_blocks, BlockFeatureSet};
use hcs_core::report::{
    write_consistency_csv, write_curation_csv, write_json, write_recall_csv, write_replicate_csv, write_sweep_csv,
};
use hcs_core::stats::PermutationConfig;
use hcs_core::synth::{generate_block_family, generate_manifest, generate_screen};
use serde::Serialize;

use crate::config::{input_format, require_exists, GlobalConfig, RunConfig};
use crate::error::CliError;

pub type CmdResult = Result<(), CliError>;

pub struct Context {
    pub global: GlobalConfig,
    pub output_dir: PathBuf,
}

impl Context {
    fn out(&self, name: &str) -> PathBuf {
        self.output_dir.join(name)
    }

    fn table_name(&self, stem: &str) -> String {
        format!("{stem}.{}", self.global.format.extension())
    }

    fn seed(&self, command: &str) -> Result<u64, CliError> {
        self.global.seed.ok_or_else(|| {
            CliError::config(format!("`{command}` is randomized and needs an explicit seed (--seed or global.seed)"))
        })
    }

    /// Writes `<name>.json` wrapping `result` with the command's resolved
    /// configuration. Thread count and output directory are left out: they
    /// do not affect results.
    fn report<C: Serialize, R: Serialize>(&self, name: &str, command: &str, config: &C, result: &R) -> CmdResult {
        #[derive(Serialize)]
        struct Envelope<'a, C, R> {
            command: &'a str,
            version: &'a str,
            seed: Option<u64>,
            table_format: TableFormat,
            config: &'a C,
            result: &'a R,
        }
        let env = Envelope {
            command,
            version: env!("CARGO_PKG_VERSION"),
            seed: self.global.seed,
            table_format: self.global.format,
            config,
            result,
        };
        Ok(write_json(self.out(&format!("{name}.json")), &env)?)
    }
}

fn section<'a, T>(s: &'a Option<T>, name: &str) -> Result<&'a T, CliError> {
    s.as_ref()
        .ok_or_else(|| CliError::config(format!("config has no [{name}] table")))
}

fn load_table(path: &Path) -> Result<EmbeddingTable, CliError> {
    require_exists(path)?;
    Ok(load_embedding_table(path, input_format(path)?)?)
}

pub fn normalize(cfg: &RunConfig, ctx: &Context) -> CmdResult {
    let c = section(&cfg.normalize, "normalize")?;
    let table = load_table(&c.input)?;
    let controls = c.controls.select(&table);
    let tvn = fit_tvn(&controls, c.eigenvalue_floor)?;
    let out = apply_tvn(&tvn, &table)?;
    let name = ctx.table_name("normalized");
    save_embedding_table(&out, ctx.out(&name), ctx.global.format)?;
    write_json(ctx.out("tvn.json"), &tvn)?;

    #[derive(Serialize)]
    struct Summary {
        n_rows: usize,
        n_controls: usize,
        dim: usize,
        table: String,
        transform: &'static str,
    }
    let summary = Summary {
        n_rows: out.len(),
        n_controls: controls.len(),
        dim: out.dim(),
        table: name,
        transform: "tvn.json",
    };
    ctx.report("normalize", "normalize", c, &summary)
}

pub fn consistency(cfg: &RunConfig, ctx: &Context) -> CmdResult {
    let c = section(&cfg.consistency, "consistency")?;
    let seed = ctx.seed("consistency")?;
    let table = load_table(&c.input)?;
    let report = perturbation_consistency(&table, &PermutationConfig::new(c.k, seed)?, c.group_by)?;
    write_consistency_csv(ctx.out("consistency.csv"), &report)?;
    ctx.report("consistency", "consistency", c, &report)
}

pub fn replicate(cfg: &RunConfig, ctx: &Context) -> CmdResult {
    let c = section(&cfg.replicate, "replicate")?;
    let seed = ctx.seed("replicate")?;
    let table = load_table(&c.input)?;
    let report = replicate_consistency(&table, &c.pairs, &PermutationConfig::new(1, seed)?)?;
    write_replicate_csv(ctx.out("replicate.csv"), &report)?;
    ctx.report("replicate", "replicate", c, &report)
}

pub fn recall(cfg: &RunConfig, ctx: &Context) -> CmdResult {
    let c = section(&cfg.recall, "recall")?;
    let table = load_table(&c.input)?;
    let dbs = c
        .databases
        .iter()
        .map(|d| {
            require_exists(&d.path)?;
            Ok(load_relationship_db(&d.path, &d.name)?)
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let arms = match &c.arms {
        Some(p) => {
            require_exists(p)?;
            Some(load_arm_annotation(p)?)
        }
        None => None,
    };
    let agg = prepare_gene_aggregates(&table, &c.controls, arms.as_ref())?;
    let reports = relationship_recall_many(&agg.aggregates, &dbs, c.low_pct, c.high_pct)?;
    write_recall_csv(ctx.out("recall.csv"), &reports)?;

    #[derive(Serialize)]
    struct RecallResult<'a> {
        excluded_genes: &'a [String],
        dropped_self_pairs: BTreeMap<&'a str, usize>,
        databases: &'a [hcs_core::benchmarks::RecallReport],
    }
    let result = RecallResult {
        excluded_genes: &agg.excluded,
        dropped_self_pairs: dbs.iter().map(|d| (d.name.as_str(), d.dropped_self_pairs)).collect(),
        databases: &reports,
    };
    ctx.report("recall", "recall", c, &result)
}

fn discover_blocks(dir: &Path) -> Result<Vec<(usize, PathBuf)>, CliError> {
    require_exists(dir)?;
    let entries = fs::read_dir(dir).map_err(|e| CliError::missing_path(dir, &e))?;
    let mut blocks = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| CliError::missing_path(dir, &e))?.path();
        let index = path
            .file_stem()
            .and_then(|s| s.to_str())
            .and_then(|s| s.strip_prefix("block_"))
            .and_then(|s| s.parse::<usize>().ok());
        if let (Some(i), Some(_)) = (index, TableFormat::from_path(&path)) {
            blocks.push((i, path));
        }
    }
    blocks.sort();
    if blocks.is_empty() {
        return Err(CliError::config(format!("no block_<index> tables in {}", dir.display())));
    }
    Ok(blocks)
}

pub fn probe(cfg: &RunConfig, ctx: &Context) -> CmdResult {
    let c = section(&cfg.probe, "probe")?;
    let specs: Vec<(usize, PathBuf)> = if !c.blocks.is_empty() {
        c.blocks.iter().map(|b| (b.index, b.path.clone())).collect()
    } else if let Some(dir) = &c.blocks_dir {
        discover_blocks(dir)?
    } else {
        return Err(CliError::config("[probe] needs `blocks` or `blocks_dir`"));
    };
    let blocks = specs
        .iter()
        .map(|(i, p)| {
            Ok(BlockFeatureSet {
                block_index: *i,
                features: load_table(p)?,
                label_key: c.label_key,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let result = sweep_blocks(&blocks, &c.test_experiments, &c.solver)?;
    write_sweep_csv(ctx.out("probe_sweep.csv"), &result)?;
    ctx.report("probe_sweep", "probe", c, &result)
}

fn load_consistency_results(path: &Path) -> Result<Vec<ConsistencyResult>, CliError> {
    require_exists(path)?;
    let text = fs::read_to_string(path).map_err(|e| CliError::missing_path(path, &e))?;
    let mut value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    if let Some(inner) = value.get_mut("result") {
        value = inner.take();
    }
    let report: ConsistencyReport =
        serde_json::from_value(value).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    Ok(report.results)
}

pub fn curate(cfg: &RunConfig, ctx: &Context) -> CmdResult {
    let c = section(&cfg.curate, "curate")?;
    let mut resolved = c.clone();
    resolved.filters.seed = ctx.seed("curate")?;
    require_exists(&c.manifest)?;
    let manifest = load_manifest(&c.manifest, input_format(&c.manifest)?)?;
    let results = c
        .consistency
        .iter()
        .map(|m| Ok((m.model.clone(), load_consistency_results(&m.path)?)))
        .collect::<Result<Vec<_>, CliError>>()?;
    let (curated, report) = curate_pipeline(&manifest, &results, &resolved.filters)?;
    save_manifest(&curated, ctx.out(&ctx.table_name("curated_manifest")), ctx.global.format)?;
    write_curation_csv(ctx.out("curation_report.csv"), &report)?;
    ctx.report("curation_report", "curate", &resolved, &report)
}

pub fn synth(cfg: &RunConfig, ctx: &Context) -> CmdResult {
    let c = section(&cfg.synth, "synth")?;
    let seed = ctx.seed("synth")?;
    let mut resolved = c.clone();
    resolved.screen.seed = seed;
    if let Some(b) = resolved.block_family.as_mut() {
        b.config.seed = seed;
    }

    #[derive(Serialize, Default)]
    struct Summary {
        files: Vec<String>,
        n_rows: usize,
        n_null_genes: usize,
        n_related_pairs: usize,
        min_related_cosine: Option<f64>,
    }
    let mut summary = Summary::default();

    let (table, truth) = generate_screen(&resolved.screen)?;
    let screen = ctx.table_name("screen");
    save_embedding_table(&table, ctx.out(&screen), ctx.global.format)?;
    write_json(ctx.out("ground_truth.json"), &truth)?;
    truth.related_db("planted").save(ctx.out("planted_pairs.tsv"))?;
    summary.files.extend([screen, "ground_truth.json".into(), "planted_pairs.tsv".into()]);
    summary.n_rows = table.len();
    summary.n_null_genes = truth.null_genes.len();
    summary.n_related_pairs = truth.related_pairs.len();
    summary.min_related_cosine = truth.min_related_cosine();

    if let Some(b) = &resolved.block_family {
        let dir = ctx.out("blocks");
        fs::create_dir_all(&dir).map_err(|e| CliError::from(hcs_core::Error::Io { path: dir.clone(), source: e }))?;
        for block in generate_block_family(&b.config, b.n_blocks, b.peak_block)? {
            let name = format!("blocks/block_{:02}.{}", block.block_index, ctx.global.format.extension());
            save_embedding_table(&block.features, ctx.out(&name), ctx.global.format)?;
            summary.files.push(name);
        }
    }

    if let Some(m) = &resolved.manifest {
        let planted = generate_manifest(m.n_rows, m.n_experiments, seed)?;
        let name = ctx.table_name("manifest");
        save_manifest(&planted.manifest, ctx.out(&name), ctx.global.format)?;
        summary.files.push(name);
        for (model, results) in &planted.consistency {
            let report = ConsistencyReport {
                group_by: GroupBy::CompoundConcentration,
                k: 0,
                seed,
                results: results.clone(),
                skipped: vec![],
            };
            let name = format!("manifest_consistency_{model}");
            ctx.report(&name, "synth", &resolved, &report)?;
            summary.files.push(format!("{name}.json"));
        }
    }
    ctx.report("synth", "synth", &resolved, &summary)
}

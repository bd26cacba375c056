//! Run configuration: one TOML document with a `[global]` table and one
//! table per command.

use std::path::{Path, PathBuf};

use hcs_core::benchmarks::GroupBy;
use hcs_core::curate::CurationConfig;
use hcs_core::data::TableFormat;
use hcs_core::normalize::{ControlSelector, DEFAULT_EIGENVALUE_FLOOR};
use hcs_core::probe::{LabelKey, ProbeConfig};
use hcs_core::synth::SynthConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub global: GlobalConfig,
    pub normalize: Option<NormalizeCmd>,
    pub consistency: Option<ConsistencyCmd>,
    pub replicate: Option<ReplicateCmd>,
    pub recall: Option<RecallCmd>,
    pub probe: Option<ProbeCmd>,
    pub curate: Option<CurateCmd>,
    pub synth: Option<SynthCmd>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GlobalConfig {
    pub seed: Option<u64>,
    /// Worker threads; 0 uses every available core.
    pub threads: usize,
    pub output_dir: Option<PathBuf>,
    pub log_level: String,
    /// Format of tables written by commands.
    pub format: TableFormat,
}

impl Default for GlobalConfig {
    fn default() -> Self {
        Self {
            seed: None,
            threads: 0,
            output_dir: None,
            log_level: "info".into(),
            format: TableFormat::Columnar,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalizeCmd {
    pub input: PathBuf,
    #[serde(default)]
    pub controls: ControlSelector,
    #[serde(default = "default_floor")]
    pub eigenvalue_floor: f64,
}

fn default_floor() -> f64 {
    DEFAULT_EIGENVALUE_FLOOR
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsistencyCmd {
    pub input: PathBuf,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub group_by: GroupBy,
}

fn default_k() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplicateCmd {
    pub input: PathBuf,
    pub pairs: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatabaseSpec {
    pub name: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecallCmd {
    pub input: PathBuf,
    pub databases: Vec<DatabaseSpec>,
    /// Gene to chromosome-arm table; enables arm centering when present.
    pub arms: Option<PathBuf>,
    #[serde(default)]
    pub controls: ControlSelector,
    #[serde(default = "default_low")]
    pub low_pct: f64,
    #[serde(default = "default_high")]
    pub high_pct: f64,
}

fn default_low() -> f64 {
    0.05
}

fn default_high() -> f64 {
    0.95
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSpec {
    pub index: usize,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeCmd {
    /// Explicit block list.
    #[serde(default)]
    pub blocks: Vec<BlockSpec>,
    /// Directory of `block_<index>.<ext>` tables, used when `blocks` is empty.
    pub blocks_dir: Option<PathBuf>,
    #[serde(default)]
    pub label_key: LabelKey,
    pub test_experiments: Vec<String>,
    #[serde(default)]
    pub solver: ProbeConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelResults {
    pub model: String,
    /// A consistency report written by the `consistency` command.
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurateCmd {
    pub manifest: PathBuf,
    pub consistency: Vec<ModelResults>,
    /// Filter settings. Its `seed` is replaced by the global seed.
    #[serde(default)]
    pub filters: CurationConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockFamilySpec {
    #[serde(default = "default_blocks")]
    pub n_blocks: usize,
    #[serde(default = "default_peak")]
    pub peak_block: usize,
    #[serde(default = "block_family_config")]
    pub config: SynthConfig,
}

fn default_blocks() -> usize {
    12
}

fn default_peak() -> usize {
    7
}

/// Defaults for block families: a 10-class task with moderate signal.
pub fn block_family_config() -> SynthConfig {
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
        ..SynthConfig::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestSpec {
    pub n_rows: usize,
    #[serde(default = "default_manifest_experiments")]
    pub n_experiments: usize,
}

fn default_manifest_experiments() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthCmd {
    /// Screen settings. Its `seed` is replaced by the global seed.
    #[serde(default)]
    pub screen: SynthConfig,
    pub block_family: Option<BlockFamilySpec>,
    pub manifest: Option<ManifestSpec>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::missing_path(path, &e))?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {}", path.display(), e.message())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.rebase(base);
        Ok(cfg)
    }

    /// Resolves relative paths against `base` (the config file's directory).
    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(d) = self.global.output_dir.as_mut() {
            fix(d);
        }
        if let Some(c) = self.normalize.as_mut() {
            fix(&mut c.input);
        }
        if let Some(c) = self.consistency.as_mut() {
            fix(&mut c.input);
        }
        if let Some(c) = self.replicate.as_mut() {
            fix(&mut c.input);
        }
        if let Some(c) = self.recall.as_mut() {
            fix(&mut c.input);
            c.databases.iter_mut().for_each(|d| fix(&mut d.path));
            if let Some(a) = c.arms.as_mut() {
                fix(a);
            }
        }
        if let Some(c) = self.probe.as_mut() {
            c.blocks.iter_mut().for_each(|b| fix(&mut b.path));
            if let Some(d) = c.blocks_dir.as_mut() {
                fix(d);
            }
        }
        if let Some(c) = self.curate.as_mut() {
            fix(&mut c.manifest);
            c.consistency.iter_mut().for_each(|m| fix(&mut m.path));
        }
    }
}

/// Table format from a path's extension.
pub fn input_format(path: &Path) -> Result<TableFormat, CliError> {
    TableFormat::from_path(path).ok_or_else(|| {
        CliError::config(format!(
            "cannot infer table format of {} (use .arrow or .csv)",
            path.display()
        ))
    })
}

pub fn require_exists(path: &Path) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError {
            kind: "missing_path".into(),
            message: format!("input path does not exist: {}", path.display()),
            path: Some(path.to_path_buf()),
        })
    }
}

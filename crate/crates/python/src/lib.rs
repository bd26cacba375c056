//! Python module `hcs`: tables, synthetic screens, normalization,
//! benchmarks and curation. Reports come back as plain dicts.

use std::collections::BTreeMap;
use std::path::PathBuf;

use hcs_core::benchmarks::{self, ConsistencyReport, GroupBy};
use hcs_core::curate::{self, CurationConfig};
use hcs_core::data::{self, DatasetManifest, RelationshipDb, TableFormat};
use hcs_core::normalize::{self, ControlSelector, WhiteningTransform};
use hcs_core::probe::{self, BlockFeatureSet, LabelKey, ProbeConfig};
use hcs_core::stats::{self, PermutationConfig};
use hcs_core::synth::{self, SynthConfig};
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::de::DeserializeOwned;
use serde::Serialize;

fn err(e: hcs_core::Error) -> PyErr {
    match e {
        hcs_core::Error::Io { .. } => PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py<T: DeserializeOwned + Default>(obj: Option<&Bound<'_, PyAny>>) -> PyResult<T> {
    let Some(obj) = obj else {
        return Ok(T::default());
    };
    let text: String = obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn format_for(path: &str, format: Option<&str>) -> PyResult<TableFormat> {
    match format {
        Some(f) => f.parse().map_err(err),
        None => TableFormat::from_path(PathBuf::from(path).as_path())
            .ok_or_else(|| PyValueError::new_err(format!("cannot infer table format of {path:?}"))),
    }
}

/// Well-level embeddings with metadata.
#[pyclass(name = "EmbeddingTable", frozen)]
struct PyTable {
    inner: data::EmbeddingTable,
}

#[pymethods]
impl PyTable {
    #[staticmethod]
    #[pyo3(signature = (path, format=None))]
    fn load(path: &str, format: Option<&str>) -> PyResult<Self> {
        let inner = data::load_embedding_table(path, format_for(path, format)?).map_err(err)?;
        Ok(Self { inner })
    }

    #[pyo3(signature = (path, format=None))]
    fn save(&self, path: &str, format: Option<&str>) -> PyResult<()> {
        data::save_embedding_table(&self.inner, path, format_for(path, format)?).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn row(&self, i: usize) -> PyResult<Vec<f64>> {
        if i >= self.inner.len() {
            return Err(PyValueError::new_err(format!("row {i} out of range")));
        }
        Ok(self.inner.row(i).to_vec())
    }

    fn embeddings(&self) -> Vec<Vec<f64>> {
        self.inner.rows().map(<[f64]>::to_vec).collect()
    }

    fn meta<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.meta())
    }

    fn experiments(&self) -> Vec<String> {
        let mut v: Vec<String> = self.inner.meta().iter().map(|m| m.experiment_id.clone()).collect();
        v.sort();
        v.dedup();
        v
    }

    fn __repr__(&self) -> String {
        format!("EmbeddingTable(rows={}, dim={})", self.inner.len(), self.inner.dim())
    }
}

/// TVN whitening fitted on control wells.
#[pyclass(name = "TvnTransform", frozen)]
struct PyTvn {
    inner: WhiteningTransform,
}

#[pymethods]
impl PyTvn {
    fn apply(&self, table: &PyTable) -> PyResult<PyTable> {
        let inner = normalize::apply_tvn(&self.inner, &table.inner).map_err(err)?;
        Ok(PyTable { inner })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn mean(&self) -> Vec<f64> {
        self.inner.mean().to_vec()
    }
}

/// Dataset manifest for curation.
#[pyclass(name = "Manifest", frozen)]
struct PyManifest {
    inner: DatasetManifest,
}

#[pymethods]
impl PyManifest {
    #[staticmethod]
    #[pyo3(signature = (path, format=None))]
    fn load(path: &str, format: Option<&str>) -> PyResult<Self> {
        let inner = data::load_manifest(path, format_for(path, format)?).map_err(err)?;
        Ok(Self { inner })
    }

    #[pyo3(signature = (path, format=None))]
    fn save(&self, path: &str, format: Option<&str>) -> PyResult<()> {
        data::save_manifest(&self.inner, path, format_for(path, format)?).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn well_ids(&self) -> Vec<String> {
        self.inner.well_ids().map(str::to_string).collect()
    }
}

#[pyfunction]
fn ks_two_sample(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    stats::ks_two_sample(&a, &b).map_err(err)
}

#[pyfunction]
fn cvm_two_sample(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    stats::cvm_two_sample(&a, &b).map_err(err)
}

#[pyfunction]
fn cauchy_combine(pvalues: Vec<f64>) -> PyResult<f64> {
    stats::cauchy_combine(&pvalues).map_err(err)
}

/// Synthetic screen and its ground truth. `config` takes `SynthConfig` keys.
#[pyfunction]
#[pyo3(signature = (config=None))]
fn generate_screen<'py>(py: Python<'py>, config: Option<&Bound<'py, PyAny>>) -> PyResult<(PyTable, Bound<'py, PyAny>)> {
    let cfg: SynthConfig = from_py(config)?;
    let (inner, truth) = synth::generate_screen(&cfg).map_err(err)?;
    Ok((PyTable { inner }, to_py(py, &truth)?))
}

/// Per-block feature tables with a planted separability peak.
#[pyfunction]
#[pyo3(signature = (n_blocks, peak_block, config=None))]
fn generate_block_family(n_blocks: usize, peak_block: usize, config: Option<&Bound<'_, PyAny>>) -> PyResult<Vec<PyTable>> {
    let cfg: SynthConfig = from_py(config)?;
    let blocks = synth::generate_block_family(&cfg, n_blocks, peak_block).map_err(err)?;
    Ok(blocks.into_iter().map(|b| PyTable { inner: b.features }).collect())
}

/// Planted curation scenario: the manifest, per-model consistency reports
/// and the expected kept wells.
#[pyfunction]
fn generate_manifest<'py>(py: Python<'py>, n_rows: usize, n_experiments: usize, seed: u64) -> PyResult<(PyManifest, Bound<'py, PyDict>)> {
    let planted = synth::generate_manifest(n_rows, n_experiments, seed).map_err(err)?;
    let extra = PyDict::new(py);
    let reports = PyDict::new(py);
    for (model, results) in &planted.consistency {
        let report = ConsistencyReport {
            group_by: GroupBy::CompoundConcentration,
            k: 0,
            seed,
            results: results.clone(),
            skipped: Vec::new(),
        };
        reports.set_item(model, to_py(py, &report)?)?;
    }
    extra.set_item("consistency", reports)?;
    extra.set_item("expected_kept_perturbed", to_py(py, &planted.expected_kept_perturbed)?)?;
    extra.set_item("boundary_conditions", planted.boundary_conditions.clone())?;
    extra.set_item("accepted_shape", planted.accepted_shape.clone())?;
    extra.set_item("flag_names", planted.flag_names.clone())?;
    Ok((PyManifest { inner: planted.manifest }, extra))
}

#[pyfunction]
#[pyo3(signature = (table, eigenvalue_floor=1e-6))]
fn fit_tvn(table: &PyTable, eigenvalue_floor: f64) -> PyResult<PyTvn> {
    let controls = ControlSelector::NegativeControls.select(&table.inner);
    let inner = normalize::fit_tvn(&controls, eigenvalue_floor).map_err(err)?;
    Ok(PyTvn { inner })
}

#[pyfunction]
#[pyo3(signature = (table, k, seed, group_by="guide"))]
fn perturbation_consistency<'py>(py: Python<'py>, table: &PyTable, k: usize, seed: u64, group_by: &str) -> PyResult<Bound<'py, PyAny>> {
    let by: GroupBy = group_by.parse().map_err(err)?;
    let cfg = PermutationConfig::new(k, seed).map_err(err)?;
    to_py(py, &benchmarks::perturbation_consistency(&table.inner, &cfg, by).map_err(err)?)
}

#[pyfunction]
fn replicate_consistency<'py>(py: Python<'py>, table: &PyTable, pairs: Vec<(String, String)>, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    let cfg = PermutationConfig::new(1, seed).map_err(err)?;
    to_py(py, &benchmarks::replicate_consistency(&table.inner, &pairs, &cfg).map_err(err)?)
}

/// Recall of known gene pairs among the similarity tails of the table's
/// control-centered gene aggregates.
#[pyfunction]
#[pyo3(signature = (table, known_pairs, low_pct=0.05, high_pct=0.95, name="known"))]
fn relationship_recall<'py>(
    py: Python<'py>,
    table: &PyTable,
    known_pairs: Vec<(String, String)>,
    low_pct: f64,
    high_pct: f64,
    name: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let agg = benchmarks::prepare_gene_aggregates(&table.inner, &ControlSelector::NegativeControls, None).map_err(err)?;
    let db = RelationshipDb::from_edges(name, known_pairs);
    to_py(py, &benchmarks::relationship_recall(&agg.aggregates, &db, low_pct, high_pct).map_err(err)?)
}

/// Probe sweep over blocks numbered from 1 in list order.
#[pyfunction]
#[pyo3(signature = (blocks, test_experiments, label_key="perturbation_id", config=None))]
fn sweep_blocks<'py>(
    py: Python<'py>,
    blocks: Vec<PyRef<'py, PyTable>>,
    test_experiments: Vec<String>,
    label_key: &str,
    config: Option<&Bound<'py, PyAny>>,
) -> PyResult<Bound<'py, PyAny>> {
    let key: LabelKey = from_py(Some(&label_key.into_pyobject(py)?.into_any()))?;
    let cfg: ProbeConfig = from_py(config)?;
    let sets: Vec<BlockFeatureSet> = blocks
        .iter()
        .enumerate()
        .map(|(i, t)| BlockFeatureSet {
            block_index: i + 1,
            features: t.inner.clone(),
            label_key: key,
        })
        .collect();
    to_py(py, &probe::sweep_blocks(&sets, &test_experiments, &cfg).map_err(err)?)
}

/// Five-step curation. `consistency` maps model names to consistency
/// reports; `config` takes `CurationConfig` keys.
#[pyfunction]
#[pyo3(signature = (manifest, consistency, config=None))]
fn curate_manifest<'py>(
    py: Python<'py>,
    manifest: &PyManifest,
    consistency: BTreeMap<String, Bound<'py, PyAny>>,
    config: Option<&Bound<'py, PyAny>>,
) -> PyResult<(PyManifest, Bound<'py, PyAny>)> {
    let cfg: CurationConfig = from_py(config)?;
    let results = consistency
        .iter()
        .map(|(model, report)| {
            let r: ConsistencyReportInput = from_py(Some(report))?;
            Ok((model.clone(), r.results))
        })
        .collect::<PyResult<Vec<_>>>()?;
    let (kept, report) = curate::curate_pipeline(&manifest.inner, &results, &cfg).map_err(err)?;
    Ok((PyManifest { inner: kept }, to_py(py, &report)?))
}

#[derive(serde::Deserialize, Default)]
struct ConsistencyReportInput {
    results: Vec<benchmarks::ConsistencyResult>,
}

#[pymodule]
fn hcs(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTable>()?;
    m.add_class::<PyTvn>()?;
    m.add_class::<PyManifest>()?;
    m.add_function(wrap_pyfunction!(ks_two_sample, m)?)?;
    m.add_function(wrap_pyfunction!(cvm_two_sample, m)?)?;
    m.add_function(wrap_pyfunction!(cauchy_combine, m)?)?;
    m.add_function(wrap_pyfunction!(generate_screen, m)?)?;
    m.add_function(wrap_pyfunction!(generate_block_family, m)?)?;
    m.add_function(wrap_pyfunction!(generate_manifest, m)?)?;
    m.add_function(wrap_pyfunction!(fit_tvn, m)?)?;
    m.add_function(wrap_pyfunction!(perturbation_consistency, m)?)?;
    m.add_function(wrap_pyfunction!(replicate_consistency, m)?)?;
    m.add_function(wrap_pyfunction!(relationship_recall, m)?)?;
    m.add_function(wrap_pyfunction!(sweep_blocks, m)?)?;
    m.add_function(wrap_pyfunction!(curate_manifest, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}

//! Training-set manifests used by the curation pipeline.
//!
//! On disk a manifest has the columns `well_id`, `experiment_id`,
//! `perturbation_type` (empty when unknown), `conditions` (perturbation
//! condition keys joined by `;`), `perturbation_count` and
//! `image_shape_tag`. Every other column is a boolean quality flag.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use arrow_array::cast::AsArray;
use arrow_array::types::UInt32Type;
use arrow_array::{Array, ArrayRef, BooleanArray, RecordBatch, StringArray, UInt32Array};
use arrow_ipc::reader::FileReader;
use arrow_ipc::writer::FileWriter;
use arrow_schema::{DataType, Field, Schema};
use serde::{Deserialize, Serialize};

use super::io::TableFormat;
use super::table::PerturbationType;
use crate::error::{Error, Result};

pub const CONDITION_SEPARATOR: char = ';';

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub well_id: String,
    pub experiment_id: String,
    pub perturbation_type: Option<PerturbationType>,
    /// Perturbation condition keys applied to the well.
    pub conditions: Vec<String>,
    pub quality_flags: BTreeMap<String, bool>,
    pub perturbation_count: u32,
    pub image_shape_tag: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DatasetManifest {
    rows: Vec<ManifestRow>,
}

impl DatasetManifest {
    pub fn new(rows: Vec<ManifestRow>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(rows.len());
        for (i, r) in rows.iter().enumerate() {
            if !seen.insert(r.well_id.as_str()) {
                return Err(Error::row(i, format!("duplicate well_id {:?}", r.well_id)));
            }
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[ManifestRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn into_rows(self) -> Vec<ManifestRow> {
        self.rows
    }

    /// Keeps the rows for which `keep` returns true, preserving order.
    pub fn retain<F: FnMut(&ManifestRow) -> bool>(&self, mut keep: F) -> Self {
        Self {
            rows: self.rows.iter().filter(|r| keep(r)).cloned().collect(),
        }
    }

    pub fn well_ids(&self) -> impl Iterator<Item = &str> {
        self.rows.iter().map(|r| r.well_id.as_str())
    }

    /// Union of flag names over all rows, sorted.
    pub fn flag_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .rows
            .iter()
            .flat_map(|r| r.quality_flags.keys().cloned())
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        names.sort();
        names
    }
}

const MANIFEST_COLUMNS: [&str; 6] = [
    "well_id",
    "experiment_id",
    "perturbation_type",
    "conditions",
    "perturbation_count",
    "image_shape_tag",
];

fn parse_type(row: usize, s: &str) -> Result<Option<PerturbationType>> {
    if s.is_empty() {
        Ok(None)
    } else {
        PerturbationType::from_str(s)
            .map(Some)
            .map_err(|e| Error::row(row, e.to_string()))
    }
}

fn parse_conditions(s: &str) -> Vec<String> {
    s.split(CONDITION_SEPARATOR)
        .map(str::trim)
        .filter(|c| !c.is_empty())
        .map(str::to_string)
        .collect()
}

fn parse_flag(row: usize, name: &str, s: &str) -> Result<bool> {
    match s.trim() {
        "true" | "True" | "TRUE" | "1" => Ok(true),
        "false" | "False" | "FALSE" | "0" => Ok(false),
        other => Err(Error::row(row, format!("flag {name:?} has non-boolean value {other:?}"))),
    }
}

pub fn load_manifest(path: impl AsRef<Path>, format: TableFormat) -> Result<DatasetManifest> {
    let path = path.as_ref();
    match format {
        TableFormat::Csv => read_manifest_csv(path),
        TableFormat::Columnar => read_manifest_columnar(path),
    }
}

pub fn save_manifest(
    manifest: &DatasetManifest,
    path: impl AsRef<Path>,
    format: TableFormat,
) -> Result<()> {
    let path = path.as_ref();
    match format {
        TableFormat::Csv => write_manifest_csv(manifest, path),
        TableFormat::Columnar => write_manifest_columnar(manifest, path),
    }
}

fn flag_value(row: &ManifestRow, row_index: usize, name: &str) -> Result<bool> {
    row.quality_flags
        .get(name)
        .copied()
        .ok_or_else(|| Error::row(row_index, format!("missing flag {name:?}")))
}

fn write_manifest_csv(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    let flags = manifest.flag_names();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let mut header: Vec<String> = MANIFEST_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend(flags.iter().cloned());
    w.write_record(&header)?;
    for (i, r) in manifest.rows().iter().enumerate() {
        let mut record = vec![
            r.well_id.clone(),
            r.experiment_id.clone(),
            r.perturbation_type.map(|t| t.as_str().to_string()).unwrap_or_default(),
            r.conditions.join(&CONDITION_SEPARATOR.to_string()),
            r.perturbation_count.to_string(),
            r.image_shape_tag.clone(),
        ];
        for f in &flags {
            record.push(flag_value(r, i, f)?.to_string());
        }
        w.write_record(&record)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn read_manifest_csv(path: &Path) -> Result<DatasetManifest> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(BufReader::new(file));
    let header = r.headers()?.clone();
    let pos: Vec<usize> = MANIFEST_COLUMNS
        .iter()
        .map(|n| {
            header
                .iter()
                .position(|h| h == *n)
                .ok_or_else(|| Error::Schema(format!("missing column {n:?}")))
        })
        .collect::<Result<_>>()?;
    let flag_cols: Vec<(usize, String)> = header
        .iter()
        .enumerate()
        .filter(|(_, h)| !MANIFEST_COLUMNS.contains(h))
        .map(|(c, h)| (c, h.to_string()))
        .collect();

    let mut rows = Vec::new();
    for (i, record) in r.records().enumerate() {
        let record = record.map_err(|e| Error::row(i, e.to_string()))?;
        let count_text = record[pos[4]].trim();
        let perturbation_count = count_text
            .parse::<u32>()
            .map_err(|_| Error::row(i, format!("bad perturbation_count {count_text:?}")))?;
        let mut quality_flags = BTreeMap::new();
        for (c, name) in &flag_cols {
            quality_flags.insert(name.clone(), parse_flag(i, name, &record[*c])?);
        }
        rows.push(ManifestRow {
            well_id: record[pos[0]].to_string(),
            experiment_id: record[pos[1]].to_string(),
            perturbation_type: parse_type(i, record[pos[2]].trim())?,
            conditions: parse_conditions(&record[pos[3]]),
            quality_flags,
            perturbation_count,
            image_shape_tag: record[pos[5]].to_string(),
        });
    }
    DatasetManifest::new(rows)
}

fn write_manifest_columnar(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    let flags = manifest.flag_names();
    let mut fields = vec![
        Field::new("well_id", DataType::Utf8, false),
        Field::new("experiment_id", DataType::Utf8, false),
        Field::new("perturbation_type", DataType::Utf8, false),
        Field::new("conditions", DataType::Utf8, false),
        Field::new("perturbation_count", DataType::UInt32, false),
        Field::new("image_shape_tag", DataType::Utf8, false),
    ];
    fields.extend(flags.iter().map(|f| Field::new(f, DataType::Boolean, false)));
    let schema = Arc::new(Schema::new(fields));
    let rows = manifest.rows();
    let sep = CONDITION_SEPARATOR.to_string();
    let mut columns: Vec<ArrayRef> = vec![
        Arc::new(StringArray::from_iter_values(rows.iter().map(|r| r.well_id.as_str()))),
        Arc::new(StringArray::from_iter_values(rows.iter().map(|r| r.experiment_id.as_str()))),
        Arc::new(StringArray::from_iter_values(
            rows.iter().map(|r| r.perturbation_type.map(|t| t.as_str()).unwrap_or("")),
        )),
        Arc::new(StringArray::from_iter_values(rows.iter().map(|r| r.conditions.join(&sep)))),
        Arc::new(UInt32Array::from_iter_values(rows.iter().map(|r| r.perturbation_count))),
        Arc::new(StringArray::from_iter_values(rows.iter().map(|r| r.image_shape_tag.as_str()))),
    ];
    for f in &flags {
        let values = rows
            .iter()
            .enumerate()
            .map(|(i, r)| flag_value(r, i, f))
            .collect::<Result<Vec<bool>>>()?;
        columns.push(Arc::new(BooleanArray::from(values)));
    }
    let batch = RecordBatch::try_new(schema.clone(), columns)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = FileWriter::try_new(BufWriter::new(file), &schema)?;
    writer.write(&batch)?;
    writer.finish()?;
    Ok(())
}

fn read_manifest_columnar(path: &Path) -> Result<DatasetManifest> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = FileReader::try_new(BufReader::new(file), None)?;
    let schema = reader.schema();
    for (name, ty) in [
        ("well_id", DataType::Utf8),
        ("experiment_id", DataType::Utf8),
        ("perturbation_type", DataType::Utf8),
        ("conditions", DataType::Utf8),
        ("perturbation_count", DataType::UInt32),
        ("image_shape_tag", DataType::Utf8),
    ] {
        let field = schema
            .field_with_name(name)
            .map_err(|_| Error::Schema(format!("missing column {name:?}")))?;
        if *field.data_type() != ty {
            return Err(Error::Schema(format!("column {name:?} must be {ty}")));
        }
    }
    let flag_names: Vec<String> = schema
        .fields()
        .iter()
        .filter(|f| !MANIFEST_COLUMNS.contains(&f.name().as_str()))
        .map(|f| {
            if *f.data_type() == DataType::Boolean {
                Ok(f.name().clone())
            } else {
                Err(Error::Schema(format!("flag column {:?} must be boolean", f.name())))
            }
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    for batch in reader {
        let batch = batch?;
        let s = |n: &str| batch.column_by_name(n).expect("validated").as_string::<i32>().clone();
        let (well, exp, ptype, cond, shape) = (
            s("well_id"),
            s("experiment_id"),
            s("perturbation_type"),
            s("conditions"),
            s("image_shape_tag"),
        );
        let counts = batch
            .column_by_name("perturbation_count")
            .expect("validated")
            .as_primitive::<UInt32Type>()
            .clone();
        let flags: Vec<BooleanArray> = flag_names
            .iter()
            .map(|n| batch.column_by_name(n).expect("validated").as_boolean().clone())
            .collect();
        for i in 0..batch.num_rows() {
            let row = rows.len();
            let mut quality_flags = BTreeMap::new();
            for (name, a) in flag_names.iter().zip(&flags) {
                if a.is_null(i) {
                    return Err(Error::row(row, format!("flag {name:?} is null")));
                }
                quality_flags.insert(name.clone(), a.value(i));
            }
            rows.push(ManifestRow {
                well_id: well.value(i).to_string(),
                experiment_id: exp.value(i).to_string(),
                perturbation_type: parse_type(row, ptype.value(i))?,
                conditions: parse_conditions(cond.value(i)),
                quality_flags,
                perturbation_count: counts.value(i),
                image_shape_tag: shape.value(i).to_string(),
            });
        }
    }
    DatasetManifest::new(rows)
}

//! Reading and writing embedding tables.
//!
//! Two on-disk layouts are supported. The columnar layout is an Arrow IPC
//! file with one utf8 column per metadata field, a nullable float64
//! `concentration`, and `embedding` as a fixed-size list of float32. The CSV
//! layout has the same scalar columns followed by `f0..f{D-1}`. Any other
//! column is kept as an opaque string column. Embeddings are written as
//! float32, so a table round-trips bit-exactly when its values are
//! representable in 32 bits (true for every table read from disk).

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use arrow_array::cast::AsArray;
use arrow_array::types::{Float32Type, Float64Type};
use arrow_array::{Array, ArrayRef, FixedSizeListArray, Float32Array, Float64Array, RecordBatch, StringArray};
use arrow_ipc::reader::FileReader;
use arrow_ipc::writer::FileWriter;
use arrow_schema::{DataType, Field, Schema};
use serde::{Deserialize, Serialize};

use super::table::{feature_index, EmbeddingTable, ExtraColumn, PerturbationType, WellMeta};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TableFormat {
    #[default]
    Columnar,
    Csv,
}

impl TableFormat {
    pub fn extension(self) -> &'static str {
        match self {
            TableFormat::Columnar => "arrow",
            TableFormat::Csv => "csv",
        }
    }

    /// Format implied by a file extension (`.csv`, or `.arrow`/`.ipc`/`.feather`).
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "csv" => Some(TableFormat::Csv),
            "arrow" | "ipc" | "feather" => Some(TableFormat::Columnar),
            _ => None,
        }
    }
}

impl FromStr for TableFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "columnar" => Ok(TableFormat::Columnar),
            "csv" => Ok(TableFormat::Csv),
            other => Err(Error::invalid(format!("unknown table format {other:?}"))),
        }
    }
}

pub fn load_embedding_table(path: impl AsRef<Path>, format: TableFormat) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    match format {
        TableFormat::Columnar => read_columnar(path),
        TableFormat::Csv => read_csv(path),
    }
}

pub fn save_embedding_table(
    table: &EmbeddingTable,
    path: impl AsRef<Path>,
    format: TableFormat,
) -> Result<()> {
    let path = path.as_ref();
    match format {
        TableFormat::Columnar => write_columnar(table, path),
        TableFormat::Csv => write_csv(table, path),
    }
}

const SCALAR_COLUMNS: [&str; 9] = [
    "well_id",
    "experiment_id",
    "plate_id",
    "well_position",
    "perturbation_id",
    "perturbation_type",
    "gene_id",
    "concentration",
    "cell_type",
];

fn embedding_item_field() -> Arc<Field> {
    Arc::new(Field::new("item", DataType::Float32, false))
}

fn columnar_schema(table: &EmbeddingTable) -> Schema {
    let mut fields = vec![
        Field::new("well_id", DataType::Utf8, false),
        Field::new("experiment_id", DataType::Utf8, false),
        Field::new("plate_id", DataType::Utf8, false),
        Field::new("well_position", DataType::Utf8, false),
        Field::new("perturbation_id", DataType::Utf8, false),
        Field::new("perturbation_type", DataType::Utf8, false),
        Field::new("gene_id", DataType::Utf8, true),
        Field::new("concentration", DataType::Float64, true),
        Field::new("cell_type", DataType::Utf8, false),
        Field::new(
            "embedding",
            DataType::FixedSizeList(embedding_item_field(), table.dim() as i32),
            false,
        ),
    ];
    for col in table.extra_columns() {
        fields.push(Field::new(&col.name, DataType::Utf8, false));
    }
    Schema::new(fields)
}

fn write_columnar(table: &EmbeddingTable, path: &Path) -> Result<()> {
    let schema = Arc::new(columnar_schema(table));
    let meta = table.meta();
    let strings = |f: fn(&WellMeta) -> &str| -> ArrayRef {
        Arc::new(StringArray::from_iter_values(meta.iter().map(f)))
    };
    let values = Float32Array::from_iter_values(table.embeddings().iter().map(|&v| v as f32));
    let embedding = FixedSizeListArray::try_new(
        embedding_item_field(),
        table.dim() as i32,
        Arc::new(values),
        None,
    )?;
    let mut columns: Vec<ArrayRef> = vec![
        strings(|m| &m.well_id),
        strings(|m| &m.experiment_id),
        strings(|m| &m.plate_id),
        strings(|m| &m.well_position),
        strings(|m| &m.perturbation_id),
        strings(|m| m.perturbation_type.as_str()),
        Arc::new(StringArray::from(
            meta.iter().map(|m| m.gene_id.as_deref()).collect::<Vec<_>>(),
        )),
        Arc::new(Float64Array::from(
            meta.iter().map(|m| m.concentration).collect::<Vec<_>>(),
        )),
        strings(|m| &m.cell_type),
        Arc::new(embedding),
    ];
    for col in table.extra_columns() {
        columns.push(Arc::new(StringArray::from_iter_values(col.values.iter())));
    }
    let batch = RecordBatch::try_new(schema.clone(), columns)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = FileWriter::try_new(BufWriter::new(file), &schema)?;
    writer.write(&batch)?;
    writer.finish()?;
    Ok(())
}

fn read_columnar(path: &Path) -> Result<EmbeddingTable> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = FileReader::try_new(BufReader::new(file), None)?;
    let schema = reader.schema();

    for name in SCALAR_COLUMNS.iter().chain(std::iter::once(&"embedding")) {
        if schema.field_with_name(name).is_err() {
            return Err(Error::Schema(format!("missing column {name:?}")));
        }
    }
    let dim = match schema.field_with_name("embedding")?.data_type() {
        DataType::FixedSizeList(item, n) if *item.data_type() == DataType::Float32 && *n > 0 => {
            *n as usize
        }
        other => {
            return Err(Error::Schema(format!(
                "embedding must be a fixed-size list of float32, found {other}"
            )))
        }
    };
    for field in schema.fields() {
        let expected = match field.name().as_str() {
            "concentration" => Some(DataType::Float64),
            "embedding" => None,
            _ => Some(DataType::Utf8),
        };
        if let Some(expected) = expected {
            if *field.data_type() != expected {
                return Err(Error::Schema(format!(
                    "column {:?} has type {}, expected {expected}",
                    field.name(),
                    field.data_type()
                )));
            }
        }
    }
    let extra_names: Vec<String> = schema
        .fields()
        .iter()
        .map(|f| f.name().clone())
        .filter(|n| !SCALAR_COLUMNS.contains(&n.as_str()) && n != "embedding")
        .collect();

    let mut meta = Vec::new();
    let mut embeddings = Vec::new();
    let mut extra: Vec<ExtraColumn> = extra_names
        .iter()
        .map(|n| ExtraColumn {
            name: n.clone(),
            values: Vec::new(),
        })
        .collect();

    for batch in reader {
        let batch = batch?;
        let base = meta.len();
        let col = |name: &str| batch.column_by_name(name).expect("validated column");
        let utf8 = |name: &str| col(name).as_string::<i32>().clone();
        let well_id = utf8("well_id");
        let experiment_id = utf8("experiment_id");
        let plate_id = utf8("plate_id");
        let well_position = utf8("well_position");
        let perturbation_id = utf8("perturbation_id");
        let perturbation_type = utf8("perturbation_type");
        let gene_id = utf8("gene_id");
        let cell_type = utf8("cell_type");
        let concentration = col("concentration").as_primitive::<Float64Type>().clone();
        let embedding = col("embedding").as_fixed_size_list().clone();

        for i in 0..batch.num_rows() {
            let row = base + i;
            let required = |a: &StringArray, name: &str| -> Result<String> {
                if a.is_null(i) {
                    Err(Error::row(row, format!("{name} is null")))
                } else {
                    Ok(a.value(i).to_string())
                }
            };
            let ptype = PerturbationType::from_str(&required(&perturbation_type, "perturbation_type")?)
                .map_err(|e| Error::row(row, e.to_string()))?;
            meta.push(WellMeta {
                well_id: required(&well_id, "well_id")?,
                experiment_id: required(&experiment_id, "experiment_id")?,
                plate_id: required(&plate_id, "plate_id")?,
                well_position: required(&well_position, "well_position")?,
                perturbation_id: required(&perturbation_id, "perturbation_id")?,
                perturbation_type: ptype,
                gene_id: (!gene_id.is_null(i)).then(|| gene_id.value(i).to_string()),
                concentration: (!concentration.is_null(i)).then(|| concentration.value(i)),
                cell_type: required(&cell_type, "cell_type")?,
            });
            if embedding.is_null(i) {
                return Err(Error::row(row, "embedding is null"));
            }
            let values = embedding.value(i);
            let values = values.as_primitive::<Float32Type>();
            if values.null_count() > 0 {
                return Err(Error::row(row, "embedding has null components"));
            }
            embeddings.extend(values.values().iter().map(|&v| v as f64));
        }
        for col in extra.iter_mut() {
            let a = utf8(&col.name);
            for i in 0..batch.num_rows() {
                if a.is_null(i) {
                    return Err(Error::row(base + i, format!("{} is null", col.name)));
                }
                col.values.push(a.value(i).to_string());
            }
        }
    }
    EmbeddingTable::new(dim, meta, embeddings, extra)
}

fn write_csv(table: &EmbeddingTable, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let mut header: Vec<String> = SCALAR_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend(table.extra_columns().iter().map(|c| c.name.clone()));
    header.extend((0..table.dim()).map(|j| format!("f{j}")));
    w.write_record(&header)?;

    let mut record: Vec<String> = Vec::with_capacity(header.len());
    for (i, (m, row)) in table.meta().iter().zip(table.rows()).enumerate() {
        record.clear();
        record.extend([
            m.well_id.clone(),
            m.experiment_id.clone(),
            m.plate_id.clone(),
            m.well_position.clone(),
            m.perturbation_id.clone(),
            m.perturbation_type.as_str().to_string(),
            m.gene_id.clone().unwrap_or_default(),
            m.concentration.map(|c| c.to_string()).unwrap_or_default(),
            m.cell_type.clone(),
        ]);
        record.extend(table.extra_columns().iter().map(|c| c.values[i].clone()));
        record.extend(row.iter().map(|&v| (v as f32).to_string()));
        w.write_record(&record)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn read_csv(path: &Path) -> Result<EmbeddingTable> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(BufReader::new(file));
    let header = r.headers()?.clone();

    let position = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("missing column {name:?}")))
    };
    let scalar: Vec<usize> = SCALAR_COLUMNS
        .iter()
        .map(|n| position(n))
        .collect::<Result<_>>()?;

    let mut feature_cols: Vec<(usize, usize)> = Vec::new();
    let mut extra_cols: Vec<(usize, String)> = Vec::new();
    for (c, name) in header.iter().enumerate() {
        if SCALAR_COLUMNS.contains(&name) {
            continue;
        }
        if name == "embedding" {
            return Err(Error::Schema("CSV tables store features as f0..f{D-1}".into()));
        }
        match feature_index(name) {
            Some(j) => feature_cols.push((j, c)),
            None => extra_cols.push((c, name.to_string())),
        }
    }
    feature_cols.sort_unstable();
    let dim = feature_cols.len();
    if dim == 0 {
        return Err(Error::Schema("no feature columns f0..f{D-1}".into()));
    }
    if feature_cols.iter().enumerate().any(|(k, &(j, _))| k != j) {
        return Err(Error::Schema(format!(
            "feature columns must be exactly f0..f{}",
            dim - 1
        )));
    }

    let mut meta = Vec::new();
    let mut embeddings = Vec::new();
    let mut extra: Vec<ExtraColumn> = extra_cols
        .iter()
        .map(|(_, n)| ExtraColumn {
            name: n.clone(),
            values: Vec::new(),
        })
        .collect();

    for (row, record) in r.records().enumerate() {
        let record = record.map_err(|e| Error::row(row, e.to_string()))?;
        if record.len() != header.len() {
            return Err(Error::row(
                row,
                format!("{} fields, header has {}", record.len(), header.len()),
            ));
        }
        let field = |k: usize| record[scalar[k]].to_string();
        let ptype = PerturbationType::from_str(&field(5)).map_err(|e| Error::row(row, e.to_string()))?;
        let gene = field(6);
        let conc = field(7);
        let concentration = if conc.is_empty() {
            None
        } else {
            Some(
                conc.parse::<f64>()
                    .map_err(|_| Error::row(row, format!("bad concentration {conc:?}")))?,
            )
        };
        meta.push(WellMeta {
            well_id: field(0),
            experiment_id: field(1),
            plate_id: field(2),
            well_position: field(3),
            perturbation_id: field(4),
            perturbation_type: ptype,
            gene_id: (!gene.is_empty()).then_some(gene),
            concentration,
            cell_type: field(8),
        });
        for &(j, c) in &feature_cols {
            let text = &record[c];
            let v: f32 = text
                .trim()
                .parse()
                .map_err(|_| Error::row(row, format!("bad value {text:?} in f{j}")))?;
            if !v.is_finite() {
                return Err(Error::row(row, format!("non-finite embedding value at f{j}")));
            }
            embeddings.push(v as f64);
        }
        for (col, (c, _)) in extra.iter_mut().zip(&extra_cols) {
            col.values.push(record[*c].to_string());
        }
    }
    EmbeddingTable::new(dim, meta, embeddings, extra)
}

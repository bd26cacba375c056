//! Shared data model and file formats.

mod io;
mod manifest;
mod relations;
mod table;

pub use io::{load_embedding_table, save_embedding_table, TableFormat};
pub use manifest::{load_manifest, save_manifest, DatasetManifest, ManifestRow, CONDITION_SEPARATOR};
pub use relations::{
    canonical_pair, load_arm_annotation, load_relationship_db, parse_relationship_db,
    ArmAnnotation, GeneAggregateSet, RelationshipDb, UNIT_NORM_TOLERANCE,
};
pub use table::{EmbeddingTable, ExtraColumn, PerturbationType, WellMeta};

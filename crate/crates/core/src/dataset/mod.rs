//! Source datasets and their split into per-node local datasets and a
//! disjoint global test set.

mod partition;
mod source;

use thiserror::Error;

pub use partition::{
    allocate_sizes, local_from_indices, partition, write_manifest, LocalDataset, Partition, PartitionConfig,
    ReservePool,
};
pub use source::{bundled_data_dir, load_source, SourceDataset, DATA_DIR_ENV};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed {format} data: {message}")]
    Malformed { format: &'static str, message: String },
    #[error("CSV row {row}, column {column}: cannot parse {value:?} as a number")]
    CsvCell { row: usize, column: usize, value: String },
    #[error("label {label} out of range for {num_classes} classes")]
    LabelRange { label: i64, num_classes: usize },
    #[error("unknown data source {0:?}")]
    UnknownSource(String),
    #[error("infeasible partition: {0}")]
    Infeasible(String),
    #[error("reserve pool exhausted: requested {requested} samples, {available} left")]
    PoolExhausted { requested: usize, available: usize },
}

//! Checkpoints, JSON files, TU-format ingestion and DOT export.

pub mod checkpoint;
pub mod dot;
pub mod files;
pub mod tu;

pub use checkpoint::{
    checkpoint_meta, load_strategy, load_victim, save_strategy, save_victim, strategy_from_bytes, strategy_to_bytes,
    strategy_to_bytes_with, victim_from_bytes, victim_to_bytes, victim_to_bytes_with,
};
pub use dot::export_dot;
pub use files::{load_json, save_json, sha256_hex, write_atomic, RunMeta};
pub use tu::{ingest_tu_dataset, TuImport, TuOptions};

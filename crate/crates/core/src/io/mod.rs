//! On-disk formats.

pub mod config;
pub mod container;
pub mod ply;

pub use config::{config_hash, load_config, save_config};
pub use container::{
    load_sequence, read_json, save_sequence, write_json, BodyRef, Manifest, Provenance, SequenceContainer, SCHEMA_VERSION,
};

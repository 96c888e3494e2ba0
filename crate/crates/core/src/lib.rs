//! Entity legal form (ISO 20275 ELF) classification from legal entity names.

pub mod classifiers;
pub mod cli;
pub mod elf;
pub mod eval;
pub mod features;
pub mod fixtures;
pub mod ingest;
pub mod model_store;
pub mod pipeline;
pub mod preprocess;

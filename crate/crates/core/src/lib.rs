//! Pipeline engine for structuring video collections: categorize clips,
//! canonicalize category names, generate per-category entity schemas,
//! retrieve the best schema per clip and extract schema-conformant
//! entities, with append-only record stores and an evaluation harness.

pub mod categorize;
pub mod clock;
pub mod eval;
pub mod extract;
pub mod gateway;
pub mod index;
pub mod model;
pub mod parallel;
pub mod schema_gen;
pub mod store;
pub mod templates;

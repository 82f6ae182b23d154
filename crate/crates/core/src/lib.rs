//! Binary-to-source software composition analysis: a source-function
//! database, token embeddings, exact top-k retrieval, locality-based
//! function matching and third-party library detection, plus a build
//! simulator that produces labeled binaries.
//!
//! ## Examples
//!
//! - **`build_corpus`** - ingest records, inspect the inverted indexes, persist
//! - **`embed_and_loss`** - hashed embeddings, contrastive loss, toy training
//! - **`retrieve_topk`** - exact top-k search with MRR and recall@k
//! - **`locality_match`** - pick the linked file among identical copies
//! - **`detect_components`** - ratio threshold and dependency filtering
//! - **`simulate_and_scan`** - file-based scan of a simulated build, scored
//! - **`locality_lift`** - raw retrieval against locality matching over seeds
//!
//! ```bash
//! cargo run -p binsca --example simulate_and_scan
//! ```

pub mod binary;
pub mod corpus;
pub mod detect;
pub mod embed;
pub mod error;
pub mod eval;
pub mod io;
pub mod locality;
pub mod retrieval;
pub mod scan;
pub mod simulate;

pub use error::{Error, Result};

//! Structure-based virtual screening on detected cavities.
//!
//! The crate detects candidate pockets on protein structures, labels them
//! against known binding sites, aligns pocket and ligand embeddings with a
//! pairwise-sigmoid objective and aggregates multiple candidate pockets with
//! a ligand-conditioned attention adapter.

pub mod cavity;
pub mod encoder;
pub mod error;
pub mod geom;
pub mod harness;
pub mod metrics;
pub mod moldata;
pub mod objectives;
pub mod pocketlabel;

pub use error::{Error, Result};

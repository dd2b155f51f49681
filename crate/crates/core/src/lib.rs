//! Content-based image retrieval engine and evaluation harness.
//!
//! The crate is organised bottom-up:
//!
//! * [`image`] and [`dataset`] load class-structured image collections.
//! * [`vector`] holds normalized feature vectors and descriptor kinds.
//! * [`global`] and [`local`] extract hand-crafted descriptors and the
//!   BoVW / VLAD / Fisher encodings of dense local features.
//! * [`store`] persists feature tables and learned quantizers.
//! * [`retrieval`] ranks a table exhaustively under one of five measures.
//! * [`feedback`] implements pseudo, simulated-manual and active-learning
//!   relevance feedback.
//! * [`metrics`] and [`eval`] score ranked lists (ANMRR, MAP, P@k, PR, EQC).

pub mod dataset;
pub mod error;
pub mod eval;
pub mod feedback;
pub mod global;
pub mod image;
pub mod local;
pub mod metrics;
pub mod report;
pub mod retrieval;
pub mod store;
pub mod synthetic;
pub mod vector;

pub use error::{Error, Result};

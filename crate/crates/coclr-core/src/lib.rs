//! Two-view contrastive co-training on a synthetic benchmark.
//!
//! The crate implements three self-supervised objectives over a pair of MLP
//! encoders with momentum-updated keys and FIFO feature queues:
//!
//! * **InfoNCE** — the instance-discrimination baseline: the only positive for
//!   a query is its own augmented key.
//! * **UberNCE** — the label-supervised oracle: every same-class key counts as
//!   a positive.
//! * **CoCLR** — co-training: positives are mined from the *other* view's
//!   frozen embedding by taking the top-K most similar queue entries, so each
//!   view bootstraps the other without labels.
//!
//! Evaluation covers linear probes, nearest-neighbour retrieval (R@k),
//! two-stream fusion, and fine-tuning, all on a calibrated synthetic two-view
//! dataset where view 2 is deliberately easier than view 1.

pub mod checkpoint;
pub mod config;
pub mod cotrain;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod losses;
pub mod metrics;
pub mod mining;
pub mod numerics;
pub mod plot;
pub mod queue;
pub mod runner;
pub mod summary;
pub mod synthdata;

pub use error::{CoclrError, Result};

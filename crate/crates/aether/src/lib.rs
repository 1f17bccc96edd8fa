//! Aether aligns dense Earth-observation embedding fields with the text
//! semantics of Points of Interest, then turns the aligned field into
//! region-level features for downstream urban mapping.
//!
//! The pipeline has four stages:
//!
//! 1. **Pooling** ([`fieldgrid`]): a 64-channel embedding raster is sampled
//!    around each POI with two concentric circular buffers (a local "base"
//!    view and a wider "augmented" view), mean-pooled per channel.
//! 2. **Alignment** ([`align`], [`nn`]): a gated-residual projection head
//!    maps pooled vectors onto the unit sphere where they are pulled toward
//!    the POI's projected text embedding by a pair of symmetric InfoNCE
//!    losses (cross-modal POI alignment plus intra-modal scale consistency).
//! 3. **Inference** ([`infer`]): the frozen head embeds every pixel; region
//!    embeddings are plain means of member-pixel embeddings.
//! 4. **Evaluation** ([`tasks`]): small MLP heads solve land-use
//!    classification (macro precision/recall/F1) and socioeconomic
//!    distribution mapping (KL, L1, Chebyshev), plus one-factor sensitivity
//!    sweeps.
//!
//! [`synth`] generates a deterministic synthetic city with known latent
//! structure so the whole pipeline can be exercised hermetically, and
//! [`pipeline`] wires the stages behind the `aether` command-line tool.
//! Each major capability also has a runnable example under `examples/`.

pub mod align;
pub mod config;
pub mod error;
pub mod fieldgrid;
pub mod gradcheck;
pub mod infer;
pub mod nn;
pub mod pipeline;
pub mod poi;
pub mod rng;
pub mod synth;
pub mod tasks;

pub use error::{Error, Result};

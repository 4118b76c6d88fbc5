//! Geometry, self-supervision losses and uncertainty estimation for
//! multi-view stereo, plus the file formats, synthetic scenes and
//! point-cloud metrics needed to check them end to end.
//!
//! The modules build on each other roughly in this order:
//!
//! - [`raster`]: images, depth maps, flow fields and masks.
//! - [`scene_io`]: `cam.txt`, `pair.txt`, PFM, `.flo`, PLY and PGM/PPM.
//! - [`geometry`]: cameras, reprojection, bilinear sampling and Depth2Flow.
//! - [`losses`]: photometric, flow-depth, aleatoric and self-training losses
//!   with analytic depth gradients.
//! - [`uncertainty`]: ensemble statistics, certainty masks and
//!   sparsification curves.
//! - [`matcher`]: plane-sweep depth, cost dropout ensembles and a
//!   block-matching flow estimator.
//! - [`fusion`]: consistency filtering, fusion and DTU / F-score metrics.
//! - [`synth`]: ray-cast scenes with exact depth and flow.
//! - [`dataset`]: the directory layout tying the formats together.

pub mod cloud;
pub mod dataset;
pub mod fusion;
pub mod geometry;
pub mod losses;
pub mod matcher;
pub mod raster;
pub mod rng;
pub mod scene_io;
pub mod synth;
pub mod uncertainty;

pub use cloud::PointCloud;
pub use geometry::Camera;
pub use raster::{DepthMap, FlowField, Mask, Raster};

/// Guide chapters, compiled as doc-tests so their snippets stay current.
#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/cameras.md")]
    mod cameras {}
    #[doc = include_str!("../../../book/src/losses.md")]
    mod losses {}
    #[doc = include_str!("../../../book/src/matcher.md")]
    mod matcher {}
    #[doc = include_str!("../../../book/src/uncertainty.md")]
    mod uncertainty {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/synthetic.md")]
    mod synthetic {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}

//! One-shot isolated sign recognition from pose keypoints.
//!
//! A PoseFormer network is pretrained on one set of signs, frozen, and used to
//! embed one exemplar per sign of a (possibly different) dictionary. Queries
//! are matched against that support set by similarity softmax.

pub mod dataset;
pub mod experiments;
pub mod keypoints;
pub mod metrics;
pub mod nncore;
pub mod poseformer;
pub mod retrieval;

// Compiles and runs the guide's listings as doc-tests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/keypoints.md")]
    mod keypoints {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/retrieval.md")]
    mod retrieval {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
    #[doc = include_str!("../../../book/src/service.md")]
    mod service {}
}

//! Minimal differentiable computation: graph primitives with reverse-mode
//! gradients, the layers the PoseFormer is built from, Adam, and a
//! finite-difference gradient checker.

mod adam;
mod gradcheck;
mod graph;
mod ops;
mod params;

pub use adam::Adam;
pub use gradcheck::{finite_difference_check, relative_error, GradCheckConfig, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub use ops::{
    conv1d_temporal, cross_entropy, dropout, linear, multi_head_self_attention, sinusoidal_positions,
    softmax, AttentionWeights,
};
pub use params::{glorot_uniform, sha256, ParamSet, Parameter, WeightsError, WEIGHTS_MAGIC, WEIGHTS_VERSION};
pub(crate) use params::{from_matrix, ByteReader};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("{op}: shape mismatch ({detail})")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("temporal convolution needs an odd kernel length, got {0}")]
    EvenKernel(usize),
    #[error("width {width} is not divisible by {heads} attention heads")]
    HeadsNotDivisible { width: usize, heads: usize },
    #[error("mask selects no positions")]
    EmptyMask,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("duplicate parameter name {0}")]
    DuplicateParameter(String),
}

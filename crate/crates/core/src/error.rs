use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value in {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },

    #[error("shape mismatch in {context}: {left} vs {right}")]
    Shape {
        context: &'static str,
        left: String,
        right: String,
    },

    #[error("invalid parameter: {0}")]
    Invalid(String),

    #[error("imaginary residue {residue:e} exceeds {tolerance:e}; spectrum is not Hermitian")]
    ImaginaryResidue { residue: f64, tolerance: f64 },

    #[error("Fresnel sampling criterion violated: z = {z:e} m must stay below n*pitch^2/lambda = {z_max:e} m")]
    Sampling { z: f64, z_max: f64 },

    #[error("format error: {0}")]
    Format(#[from] FormatError),

    #[error("{network} diverged at epoch {epoch}, step {step}: {detail}")]
    Diverged {
        network: String,
        epoch: usize,
        step: usize,
        detail: String,
    },

    #[error("non-finite gradient in layer {layer}")]
    NonFiniteGradient { layer: String },

    #[error("missing artifact: {}", .0.display())]
    Missing(PathBuf),

    #[error("image codec: {0}")]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: Vec<u8> },

    #[error("unsupported version {0}")]
    Version(u8),

    #[error("truncated payload: needed {needed} bytes, found {found}")]
    Truncated { needed: usize, found: usize },

    #[error("non-finite value at element {0}")]
    NonFinite(usize),

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },

    #[error("{0}")]
    Malformed(String),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::Invalid(msg.into())
}

pub(crate) fn shape_err(context: &'static str, left: impl std::fmt::Debug, right: impl std::fmt::Debug) -> Error {
    Error::Shape {
        context,
        left: format!("{left:?}"),
        right: format!("{right:?}"),
    }
}

//! Split-band image recovery at desk scale.
//!
//! Two ill-posed forward models (diffraction-limited blur and Fresnel phase
//! imaging) are simulated exactly; a low-band reconstructor, a high-band
//! reconstructor trained on spectrally pre-modulated targets, and a learned
//! synthesizer are trained with a correlation loss and evaluated in both the
//! spatial and frequency domains.

pub mod error;
pub mod eval;
pub mod forward;
pub mod learners;
pub mod manifest;
pub mod metrics;
pub mod pipeline;
pub mod raster;
pub mod scalar;
pub mod spectral;
pub mod synth;

pub use error::{Error, FormatError, Result};
pub use forward::{ForwardConfig, ForwardKind};
pub use raster::{FloatRaster, FrequencyGrid, Spectrum};
pub use scalar::Real;

/// Double-precision raster used by the physics and analysis code.
pub type Raster = FloatRaster<f64>;
/// Single-precision raster matching the on-disk payload.
pub type Raster32 = FloatRaster<f32>;
pub type Spectrum64 = Spectrum<f64>;

//! Single-image pansharpening by instance-wise adaptation.
//!
//! Given a low-resolution multispectral image, a co-registered panchromatic
//! image, and a pseudo-reference fusion (an external file or one of the
//! built-in classical fusers), the library trains a small residual network on
//! that one instance under pseudo-reference, spectral-consistency, and
//! physical-consistency losses, then emits the fused product together with
//! quality metrics and a timing manifest.

pub mod config;
pub mod error;
pub mod guidance;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod net;
pub mod nnls;
pub mod pf;
pub mod pipeline;
pub mod sensor;
pub mod tensor;

pub use error::{Error, Result};
pub use sensor::SensorSpec;
pub use tensor::{ImageTensor, KernelSpec};

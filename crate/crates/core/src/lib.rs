//! Underwater image synthesis from in-air RGB-D input.
//!
//! The crate is split along the processing chain:
//!
//! * [`imaging`] holds the image and depth containers, the PPM/PGM/PFM/PNG
//!   codecs and the sRGB to CIELAB conversion.
//! * [`physics`] renders an underwater image from an in-air image and its depth
//!   map (absorption, back scatter, Gaussian forward scatter and the linear
//!   fusion filter).
//! * [`fitting`] estimates the physical coefficients from paired data with
//!   hand-written chain-rule gradients and checks them against central
//!   differences.
//! * [`metrics`] implements MSE, PSNR, SSIM, PCQI, UICM, UISM, UIConM, UIQM and
//!   UCIQE.
//! * [`detloss`] covers default-patch generation, IoU matching and the two
//!   detection-perceptual losses together with their gradients.

pub mod detloss;
pub mod error;
pub mod fitting;
pub mod imaging;
pub mod metrics;
pub mod physics;

pub use error::{Error, Result};
pub use imaging::{DepthMap, Field, LabImage, RgbImage};
pub use physics::{FusionFilter, Kernel, PhysicalParams};

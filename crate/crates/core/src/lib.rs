//! Riemannian classification of multichannel covariance matrices for
//! SSVEP brain-computer interfaces.
//!
//! The crate covers SPD manifold geometry ([`manifold`]), covariance
//! estimation ([`estimators`]), band-pass preprocessing
//! ([`preprocessing`]), synthetic SSVEP-like data ([`synthgen`]), offline
//! minimum-distance-to-mean classification ([`mdrm`]), the curve-based
//! online classifier ([`online`]) and evaluation ([`metrics`]).

pub mod error;
pub mod estimators;
pub mod manifold;
pub mod metrics;
pub mod mdrm;
pub mod online;
pub mod preprocessing;
pub mod synthgen;
pub mod trial;

pub use error::{Error, ErrorKind, Result};
pub use trial::Trial;

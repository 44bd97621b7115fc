//! SIR epidemic dynamics with a Preisach hysteresis transmission rate.
//!
//! The crate provides the non-ideal relay, the Preisach operator with a
//! reduced memory curve, the switched SIR system with turning-point event
//! detection, the per-branch Lyapunov family with numerical checks of its
//! descent inequalities, and the explicit stability certificate.

pub mod error;
pub mod relay;
pub mod density;
pub mod preisach;
pub mod quad;
pub mod roots;
pub mod ode;
pub mod dd;
pub mod dynamics;
pub mod lyapunov;
pub mod certify;
pub mod oracle;
pub mod config;
pub mod commands;

pub use error::{Error, Result};

//! Numerical verification of pseudohyperbolicity for strange attractors.
//!
//! The toolkit covers the full pipeline: trajectory / variational / adjoint
//! integration, Lyapunov spectra with the necessary-condition checks, oriented
//! invariant tangent fields and their (ρ, φ) continuity diagrams, Poincaré
//! section geometry (return containment, separatrices, stable-manifold
//! boundary), kneading diagrams, and parameter-plane sweeps.
//!
//! All numerics are generic over the scalar type via [`scalar::Real`];
//! concrete `f64` aliases for the main entry points live at the crate root.

pub mod cache;
pub mod continuity;
pub mod error;
pub mod integrate;
pub mod kneading;
pub mod linalg;
pub mod lyapunov;
pub mod render;
pub mod scalar;
pub mod sections;
pub mod sweep;
pub mod systems;
pub mod tangent_fields;

pub use error::{Error, Result};
pub use scalar::Real;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// `f64` (default precision) aliases for the core types.
pub type SystemModel = systems::SystemModel<f64>;
pub type EquilibriumInfo = systems::EquilibriumInfo<f64>;
pub type Trajectory = integrate::Trajectory<f64>;
pub type IntegratorOptions = integrate::IntegratorOptions<f64>;
pub type LyapunovSpectrum = lyapunov::LyapunovSpectrum<f64>;
pub type TangentFieldSample = tangent_fields::TangentFieldSample<f64>;
pub type ContinuityCloud = continuity::ContinuityCloud<f64>;
pub type SectionSpec = sections::SectionSpec<f64>;
pub type CrossingEvent = sections::CrossingEvent<f64>;
pub type KneadingRecord = kneading::KneadingRecord;

/// `f32` aliases, for reduced-precision experiments.
pub mod f32 {
    pub type SystemModel = crate::systems::SystemModel<f32>;
    pub type Trajectory = crate::integrate::Trajectory<f32>;
    pub type IntegratorOptions = crate::integrate::IntegratorOptions<f32>;
    pub type LyapunovSpectrum = crate::lyapunov::LyapunovSpectrum<f32>;
}

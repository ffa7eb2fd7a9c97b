//! Self-attention skeleton-anchor proposal (SAP) with triplet angle
//! features, trained end to end through a small reverse-mode engine.

pub mod angle;
pub mod autodiff;
pub mod io;
pub mod sap;
pub mod skeleton;
pub mod train;

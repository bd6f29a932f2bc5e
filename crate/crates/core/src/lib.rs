//! Few-shot neural radiance fields with frequency and occlusion
//! regularization, built on a small reverse-mode autodiff engine.

pub mod autodiff;
pub mod cli;
pub mod encoding;
pub mod field;
pub mod losses;
pub mod metrics;
pub mod rendering;
pub mod scenes;
pub mod trainer;

//! Explainable cardiopulmonary risk estimation from chest CT volumes.
//!
//! A scan flows through three evidence streams that are fused by a small
//! trainable head:
//!
//! * [`cardiac`]: handcrafted biomarkers from a heart-centred region of
//!   interest found by [`locator`];
//! * [`lungrisk`]: a cumulative 1–6 year malignancy-risk trajectory;
//! * [`reasoning`]: causal pulmonary-to-cardiac chains derived from the
//!   scored findings of [`perception`] over an editable knowledge graph.
//!
//! [`fusion`] trains the head, [`eval`] measures it with subject-level ROC/AUC
//! and bootstrap intervals, and [`explain`] attributes predictions back to
//! voxels and mechanisms. [`cohort`] generates synthetic phantom cohorts with
//! a known ground-truth risk model, which is what the test-suite validates
//! against. [`pipeline`] wires the stages together behind a cached run
//! directory.

pub mod cardiac;
pub mod cohort;
pub mod error;
pub mod eval;
pub mod explain;
pub mod fusion;
pub mod locator;
pub mod lungrisk;
pub mod perception;
pub mod pipeline;
pub mod reasoning;
mod remote;
pub mod volume;

pub use error::{Error, Result};

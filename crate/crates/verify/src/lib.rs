//! Seeded model fixtures and the acceptance criteria for `gbdt-stream`.

pub mod criteria;
pub mod fixtures;

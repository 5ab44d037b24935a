//! Part-of-speech tagging for low-resource languages from two imperfect
//! supervision sources: a small hand-annotated corpus and a large corpus of
//! labels projected across word-aligned parallel text.
//!
//! The tagger is a single-layer bidirectional LSTM. Projected labels are
//! noisy in a systematic way, so the model routes them through an extra
//! square transformation that is trained jointly with everything else and
//! absorbs the label noise; the tagger itself stays clean and predicts from
//! its untransformed output distribution.
//!
//! Pipeline: [`projection`] turns aligned parallel text into projected
//! labels, [`training`] fits the tagger in two stages (annotated-only warmup,
//! then joint), [`eval`] scores predictions, and [`synthetic`] checks the
//! whole machinery end-to-end on generated data where the true noise process
//! is known.

pub mod config;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod model;
pub mod projection;
pub mod synthetic;
pub mod tagset;
pub mod training;

pub use error::{Error, Result};

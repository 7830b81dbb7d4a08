//! Toolkit for automated subject-heading assignment over bibliographic records.
//!
//! The crate is organized around a staged pipeline: parse MARC21 into clean
//! bibliographic records, embed record text, predict how many headings a record
//! should get, generate candidate headings with a chat model, snap free-text
//! candidates onto a controlled vocabulary, and score the result against gold
//! headings. Each stage is usable on its own; [`pipeline`] wires them together.

pub mod count;
pub mod embed;
pub mod eval;
pub mod ingest;
pub mod linalg;
pub mod llm;
pub mod marc;
pub mod pipeline;
pub mod text;
pub mod vocab;

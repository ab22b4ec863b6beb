//! Benchmark pipeline for evaluating search systems over structured data.
//!
//! The pipeline generates persona-grounded synthetic questions at controlled
//! difficulty, filters them through a deterministic quality gate, maps them to
//! open-domain equivalents for baseline systems, collects answers from the
//! systems under test, scores every answer with a rubric-driven judge model,
//! and aggregates the scores into statistical reports (success rates with
//! error margins, chi-square significance tests, score histograms, and
//! SQL-to-question token-ratio curves).
//!
//! All model traffic flows through [`gateway::Gateway`], which can run live,
//! record responses into cassette files, or replay them for fully
//! deterministic offline runs.

pub mod analytics;
pub mod collect;
pub mod config;
pub mod dataset;
pub mod gate;
pub mod gateway;
pub mod judge;
pub mod manifest;
pub mod mapper;
pub mod pipeline;
pub mod util;

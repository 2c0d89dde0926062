//! Verify-then-revise pipeline for multi-step LLM reasoning.
//!
//! The library is organised around a small domain model ([`path`]): a question,
//! a reasoning path made of tagged steps, and a normalized answer. A pluggable
//! step verifier ([`scoring`]) assigns each step prefix a probability of leading
//! to the correct answer; the correction loop ([`correction`]) locates the first
//! step below threshold, asks the generator to revise from that step onward, and
//! splices the revision onto the verified prefix. Supporting modules provide
//! binary annotation trees for building verifier training data ([`annotation`]),
//! sampling baselines ([`baselines`]), evaluation metrics ([`evaluation`]), a
//! deterministic synthetic environment for closed-loop testing ([`simenv`]), and
//! generator backends including an OpenAI-compatible HTTP client ([`gateway`]).

pub mod annotation;
pub mod baselines;
pub mod correction;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod gateway;
pub mod mockhttp;
pub mod path;
pub mod scoring;
pub mod seeding;
pub mod simenv;

pub use error::{Error, Result};

//! Speech-to-speech translation on discrete units, end to end and at desk scale.
//!
//! Everything needed to run a three-step translation training pipeline on a
//! synthetic bilingual world of discrete "speech" units:
//!
//! 1. supervised fine-tuning of a tiny autoregressive model, with plain,
//!    tri-task, or chained text-then-speech output formats ([`sft`]);
//! 2. preference pair construction by self-sampling candidate translations,
//!    back-translating them with the same model, and scoring the round trip
//!    ([`prefdata`], [`metrics`]);
//! 3. preference optimization of the fine-tuned model with DPO or SimPO,
//!    optionally through low-rank adapters ([`po`]).
//!
//! The [`corpus`] module generates the bilingual world and its corpora, the
//! [`tokenizer`] module holds the k-means unit tokenizer, and [`eval`] scores
//! checkpoints with ASR-BLEU against the world's exact transcription oracle.
//! The `traduki` binary drives the same pipeline from config files; see the
//! book under `book/` for a guided tour.

pub mod cli;
pub mod config;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod jsonl;
pub mod manifest;
pub mod metrics;
pub mod model;
pub mod po;
pub mod prefdata;
pub mod rng;
pub mod sft;
pub mod tokenizer;
pub mod types;

mod guide;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::Error;

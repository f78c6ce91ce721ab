//! Hierarchical label-routed LoRA on a small transformer.
//!
//! A byte-level causal transformer whose linear maps host swappable low-rank
//! adapters. One adapter set per level of a three-level label taxonomy is
//! trained with gold-parent routing and a hierarchy-consistency penalty;
//! inference walks the levels top-down and short-circuits on a negative
//! root prediction.
//!
//! Modules, bottom-up:
//! - [`numerics`]: tensors and reverse-mode autodiff
//! - [`lora`]: adapter factors, 4-bit frozen bases, merging, parameter counts
//! - [`model`]: the transformer and verbalizer-based class scores
//! - [`hierarchy`]: taxonomy, adapter bank, routing, losses, prediction
//! - [`data`]: JSONL corpora, byte tokenizer, prompts, synthetic generator
//! - [`training`]: AdamW, warmup schedule, accumulation, early stopping
//! - [`evaluation`]: ICM-Hard, F1, ablation harnesses, efficiency report
//! - [`run`]: the commands behind the `hiero-lora` binary

pub mod data;
pub mod error;
pub mod evaluation;
pub mod hierarchy;
pub mod lora;
pub mod model;
pub mod numerics;
pub mod run;
pub mod training;

pub use error::{Error, Result};
pub use numerics::{Graph, Tensor, Var};

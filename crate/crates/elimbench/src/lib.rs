//! # elimbench
//!
//! An evaluation harness that measures whether language models can reason
//! toward *incorrect* answers (process of elimination) as reliably as toward
//! correct ones (direct answer) on multiple-choice questions.
//!
//! The harness covers the full protocol: few-shot prompt construction for
//! direct-answer and elimination strategies with and without
//! chain-of-thought, seeded dataset reduction to 2-choice form, strategy
//! accuracy with difference-in-means significance, cross-strategy agreement
//! and self-consistency, iterative elimination with error-propagation
//! accounting, and a score-based elimination baseline. Everything runs
//! against any chat-completions HTTP endpoint or a deterministic in-process
//! mock.
//!
//! ## Crate layout
//!
//! - [`corpus`]: question model, record-stream loading, seeded reduction
//!   and splits
//! - [`prompting`]: byte-exact prompt rendering for the four strategy
//!   cells
//! - [`backend`]: HTTP and mock completion backends, retry/rate limiting,
//!   label probabilities
//! - [`parsing`]: answer extraction with explicit parse status
//! - [`metrics`]: accuracy, Welch significance, agreement, self-consistency
//! - [`iterative`]: the elimination-until-two protocol and its accuracies
//! - [`score_poe`]: below-average score elimination and its 2-choice
//!   consistency argument
//! - [`runner`]: config-driven experiments, caching, reports, annotations
//!
//! ## Runnable examples
//!
//! Each major capability has a runnable example (all offline, using the
//! mock backend and the bundled sample data):
//!
//! ```bash
//! cargo run -p elimbench --example render_prompts
//! cargo run -p elimbench --example mock_experiment
//! cargo run -p elimbench --example significance_table
//! cargo run -p elimbench --example consistency_check
//! cargo run -p elimbench --example iterative_elimination
//! cargo run -p elimbench --example score_elimination
//! cargo run -p elimbench --example annotate_errors
//! cargo run -p elimbench --example http_backend
//! ```
//!
//! The `elimbench` binary exposes the same machinery as subcommands:
//! `prepare`, `run`, `report`, `consistency`, `iterate`, `annotate`.

pub mod backend;
pub mod corpus;
pub mod hashing;
pub mod iterative;
pub mod metrics;
pub mod parsing;
pub mod prompting;
pub mod runner;
pub mod score_poe;
pub mod stats;

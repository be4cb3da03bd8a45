//! Insertion-based sequence generation with trainable generation orders.
//!
//! The crate builds sequences by repeatedly inserting tokens into slots of a
//! partial hypothesis instead of appending left to right. Which insertion to
//! prefer is controlled by an order function (left-to-right, balanced-tree,
//! frequency-sorted, alphabetical, model-adaptive, ...); a temperature softmax
//! over action scores turns the order into a per-slot oracle policy that a
//! small encoder-decoder transformer is trained to imitate.
//!
//! Modules, roughly bottom-up:
//!
//! * [`corpus`]: vocabularies, parallel text, synthetic tasks
//! * [`canvas`]: partial hypotheses, slots, valid insertion actions, roll-in
//! * [`orders`]: order functions scoring insertion actions (lower is better)
//! * [`oracle`]: temperature-softmax policies and KL losses against them
//! * [`model`]: the transformer, exact manual backprop, checkpoints
//! * [`decoder`]: greedy serial and parallel insertion decoding with traces
//! * [`evaluation`]: BLEU, order adherence, exact match
//! * [`harness`]: training loop, config files, the tau/gamma sweep
//! * [`cli`]: the `iolab` command-line entry point
//!
//! Each capability has a runnable demo under `examples/`; start with
//! `cargo run -p iolab --example canvas_actions`.

pub mod canvas;
pub mod cli;
pub mod corpus;
pub mod decoder;
pub mod evaluation;
pub mod harness;
pub mod model;
pub mod oracle;
pub mod orders;

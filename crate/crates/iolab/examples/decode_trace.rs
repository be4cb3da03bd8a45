//! Trains briefly on the copy task, then prints serial and parallel insertion
//! traces side by side. Parallel decoding fills every slot per step, so it
//! finishes in logarithmically many steps.

use anyhow::Result;
use iolab::corpus::{generate_synthetic, synthetic_vocabulary, SyntheticTaskSpec, TaskKind};
use iolab::decoder::{decode, render_trace, DecodeConfig, DecodeMode};
use iolab::harness::{train, TrainConfig};
use iolab::orders::OrderKind;

fn main() -> Result<()> {
    let spec =
        SyntheticTaskSpec { kind: TaskKind::Copy, vocab_size: 12, min_len: 4, max_len: 8, seed: 2 };
    let data = generate_synthetic(&spec, 600)?;
    let vocab = synthetic_vocabulary(&spec, &data);

    let mut cfg = TrainConfig::desk_defaults(OrderKind::BinaryTree, vocab.size());
    cfg.steps = 1_200;
    cfg.warmup = 120;
    cfg.model.d_model = 32;
    cfg.model.d_ffn = 64;
    cfg.model.max_len = 32;
    let out = train(&cfg, &data, &[], &vocab)?;

    let source = &data[0].source;
    println!("source: {}\n", vocab.render(source));
    for mode in [DecodeMode::Serial, DecodeMode::Parallel] {
        let dc = DecodeConfig::for_source(mode, 1.0, source.len());
        let trace = decode(&out.model, source, &dc)?;
        println!("{mode} decode ({:?} after {} steps):", trace.status, trace.steps.len());
        print!("{}", render_trace(&trace, &vocab));
        println!("hypothesis: {}\n", vocab.render(trace.hypothesis()));
    }
    Ok(())
}

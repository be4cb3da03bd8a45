//! Measures how faithfully a trained model follows its training order: free
//! mode replays the model's own serial decode and asks whether each insertion
//! is one the order would pick; forced mode keeps the model on the reference
//! and checks its argmax against the order's choice.

use anyhow::Result;
use iolab::corpus::{generate_synthetic, synthetic_vocabulary, SyntheticTaskSpec, TaskKind};
use iolab::evaluation::{adherence, AdherenceMode};
use iolab::harness::{train, TrainConfig};
use iolab::orders::{OrderKind, OrderSpec};

fn main() -> Result<()> {
    let spec =
        SyntheticTaskSpec { kind: TaskKind::Copy, vocab_size: 12, min_len: 3, max_len: 7, seed: 3 };
    let data = generate_synthetic(&spec, 650)?;
    let vocab = synthetic_vocabulary(&spec, &data);
    let (train_data, dev_data) = data.split_at(600);

    for kind in [OrderKind::L2r, OrderKind::R2l] {
        let mut cfg = TrainConfig::desk_defaults(kind, vocab.size());
        cfg.tau = 0.5;
        cfg.steps = 1_500;
        cfg.warmup = 150;
        cfg.model.d_model = 32;
        cfg.model.d_ffn = 64;
        cfg.model.max_len = 32;
        let out = train(&cfg, train_data, &[], &vocab)?;
        let trained = OrderSpec::new(kind, &vocab);
        let other = OrderSpec::new(
            if kind == OrderKind::L2r { OrderKind::R2l } else { OrderKind::L2r },
            &vocab,
        );
        // No end-of-slot penalty: adherence judges the insertions the model
        // chooses to make, and a penalty forces extra off-order insertions.
        let free = adherence(&out.model, &trained, dev_data, AdherenceMode::Free, 0.0)?;
        let cross = adherence(&out.model, &other, dev_data, AdherenceMode::Free, 0.0)?;
        let forced = adherence(&out.model, &trained, dev_data, AdherenceMode::Forced, 0.0)?;
        println!("trained on {kind}:");
        println!("  free   vs {kind}: {}", free.render_line());
        println!("  free   vs {}: {}", other.kind, cross.render_line());
        println!("  forced vs {kind}: {}", forced.render_line());
    }
    Ok(())
}

//! Trains a small model to sort token sequences under the l2r order and
//! reports dev quality at the end. Takes a minute or two.

use anyhow::Result;
use iolab::corpus::{generate_synthetic, synthetic_vocabulary, SyntheticTaskSpec, TaskKind};
use iolab::harness::{evaluate_order, train_logged, TrainConfig};
use iolab::orders::{OrderKind, OrderSpec};

fn main() -> Result<()> {
    let spec =
        SyntheticTaskSpec { kind: TaskKind::Sort, vocab_size: 20, min_len: 3, max_len: 8, seed: 1 };
    let data = generate_synthetic(&spec, 2_200)?;
    let vocab = synthetic_vocabulary(&spec, &data);
    let (train_data, dev_data) = data.split_at(2_000);

    let mut cfg = TrainConfig::desk_defaults(OrderKind::L2r, vocab.size());
    cfg.steps = 3_000;
    cfg.warmup = 300;
    cfg.eval_interval = 500;
    cfg.tau = 0.5;
    cfg.model.max_len = 32;

    println!("step loss dev_bleu adherence");
    let out = train_logged(&cfg, train_data, dev_data, &vocab, &mut |line| println!("{line}"))?;

    let order = OrderSpec::new(cfg.order, &vocab);
    for gamma in [0.0, 2.0, 4.0] {
        let eval = evaluate_order(&out.model, &order, dev_data, gamma)?;
        println!(
            "gamma {gamma}: bleu {:.2} exact {:.1}% adherence {:.1}%",
            eval.bleu, eval.exact_match, eval.adherence
        );
    }
    Ok(())
}

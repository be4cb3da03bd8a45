//! Initializes a small model and inspects one forward pass: per-slot content
//! distributions, the location distribution, and the loss against an oracle
//! policy.

use anyhow::Result;
use iolab::canvas::{valid_actions, Canvas};
use iolab::corpus::{generate_synthetic, synthetic_vocabulary, SyntheticTaskSpec, TaskKind};
use iolab::model::{loss, Model, ModelConfig, TrainItem};
use iolab::oracle::build_policy;
use iolab::orders::{OrderKind, OrderSpec};

fn main() -> Result<()> {
    let spec =
        SyntheticTaskSpec { kind: TaskKind::Sort, vocab_size: 12, min_len: 3, max_len: 8, seed: 1 };
    let data = generate_synthetic(&spec, 10)?;
    let vocab = synthetic_vocabulary(&spec, &data);

    let mut cfg = ModelConfig::with_vocab(vocab.size());
    cfg.d_model = 32;
    cfg.n_layers = 1;
    cfg.d_ffn = 64;
    let model = Model::init(cfg)?;

    let ex = &data[0];
    let canvas = Canvas::from_kept(ex.target.clone(), &[0, 2]);
    let dists = model.forward(&ex.source, canvas.hypothesis())?;
    println!("source     {:?}", vocab.decode(&ex.source));
    println!("target     {:?}", vocab.decode(&ex.target));
    println!("hypothesis {:?}", vocab.decode(canvas.hypothesis()));
    println!("{} slots over vocab {}", dists.n_slots(), dists.vocab_size());
    for l in 0..dists.n_slots() {
        let logp = dists.content_logp(l);
        let (argmax, lp) =
            logp.iter().enumerate().fold((0, f64::NEG_INFINITY), |acc, (i, &v)| {
                if v > acc.1 {
                    (i, v)
                } else {
                    acc
                }
            });
        println!(
            "  slot {l}: location logp {:+.3}, argmax content {} ({:+.3})",
            dists.location_logp(l),
            vocab.token_str(argmax),
            lp
        );
    }

    let aset = valid_actions(&canvas)?;
    let order = OrderSpec::new(OrderKind::BinaryTree, &vocab);
    let policy = build_policy(&order, &aset, 1.0, None)?;
    let item = TrainItem { source: &ex.source, hypothesis: canvas.hypothesis(), policy: &policy };
    println!("untrained loss against the binary_tree oracle: {:.4}", loss(&model.params, &model.cfg, &[item])?);
    Ok(())
}

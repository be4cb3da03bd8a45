//! Scores the same partial canvas under all thirteen order kinds and prints
//! which insertion each order prefers (lower score wins; end-of-slot scores 0
//! under every static order).

use anyhow::Result;
use iolab::canvas::{valid_actions, Canvas};
use iolab::corpus::build_vocabulary;
use iolab::orders::{OrderKind, OrderSpec};

fn main() -> Result<()> {
    let text = "the the the man ate a tiny snack";
    let vocab = build_vocabulary(text.split_whitespace(), 100)?;
    let reference = vocab.encode(&["the", "man", "ate", "a", "tiny", "snack"]);
    let canvas = Canvas::from_kept(reference, &[2]);
    let aset = valid_actions(&canvas)?;
    println!("canvas: {:?}\n", vocab.decode(canvas.hypothesis()));

    for kind in OrderKind::ALL {
        if kind.is_adaptive() {
            println!("{kind:<15} needs a model posterior (see the oracle_policies demo)");
            continue;
        }
        let order = OrderSpec::new(kind, &vocab);
        let scorer = order.scorer(&aset, None)?;
        let mut rows = Vec::new();
        for a in aset.iter() {
            let name = match a.target_pos {
                Some(p) => format!("{}@{p}", vocab.token_str(a.content)),
                None => format!("<eos>@slot{}", a.location),
            };
            rows.push(format!("{name}={}", scorer.score(a)));
        }
        let best = order.best_insertions(&aset, None)?;
        let pick: Vec<String> = best
            .iter()
            .map(|a| format!("{}->slot{}", vocab.token_str(a.content), a.location))
            .collect();
        println!("{kind:<15} picks {:<18} scores: {}", pick.join(" "), rows.join(" "));
    }
    Ok(())
}

//! Generates a few examples of every synthetic task and shows the shared
//! vocabulary layout (specials first, then content tokens).

use anyhow::Result;
use iolab::corpus::{generate_synthetic, synthetic_vocabulary, SyntheticTaskSpec, TaskKind};

fn main() -> Result<()> {
    for kind in [TaskKind::Copy, TaskKind::Reverse, TaskKind::Sort, TaskKind::LexiconTranslate] {
        let spec = SyntheticTaskSpec { kind, vocab_size: 10, min_len: 3, max_len: 6, seed: 7 };
        let examples = generate_synthetic(&spec, 3)?;
        let vocab = synthetic_vocabulary(&spec, &examples);
        println!("task {kind}");
        for ex in &examples {
            println!("  {}  ->  {}", vocab.render(&ex.source), vocab.render(&ex.target));
        }
    }

    let spec =
        SyntheticTaskSpec { kind: TaskKind::Sort, vocab_size: 10, min_len: 3, max_len: 6, seed: 7 };
    let examples = generate_synthetic(&spec, 100)?;
    let vocab = synthetic_vocabulary(&spec, &examples);
    println!("\nvocabulary ({} entries, specials then content by frequency):", vocab.size());
    for id in 0..vocab.size() {
        println!("  {id:>2}  {:<8} freq {}", vocab.token_str(id), vocab.frequency(id));
    }
    Ok(())
}

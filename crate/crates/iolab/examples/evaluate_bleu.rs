//! The evaluation toolbox on a hand-made corpus: corpus BLEU with n-gram
//! precisions and brevity penalty, smoothed sentence BLEU, exact match, and
//! BLEU binned by source length.

use anyhow::Result;
use iolab::corpus::build_vocabulary;
use iolab::evaluation::{corpus_bleu, exact_match, length_binned_bleu, sentence_bleu};

fn main() -> Result<()> {
    let text = "the cat sat on the mat a dog ran fast";
    let vocab = build_vocabulary(text.split_whitespace(), 100)?;
    let enc = |s: &str| vocab.encode(&s.split_whitespace().collect::<Vec<_>>());

    let refs = vec![
        enc("the cat sat on the mat"),
        enc("a dog ran fast"),
        enc("the mat sat"),
    ];
    let hyps = vec![
        enc("the cat sat on the mat"),
        enc("a dog ran"),
        enc("the cat sat"),
    ];

    let report = corpus_bleu(&hyps, &refs)?;
    print!("{}", report.render());
    println!("\nper sentence (smoothed):");
    for (i, (h, r)) in hyps.iter().zip(&refs).enumerate() {
        assert_eq!(sentence_bleu(h, r), report.sentence[i]);
        println!("  {i}: {:.2}", report.sentence[i]);
    }
    println!("exact match: {:.1}%", exact_match(&hyps, &refs)?);

    let sources = refs.clone();
    println!("\nby source length:");
    print!("{}", length_binned_bleu(&hyps, &refs, &sources)?.render());
    Ok(())
}

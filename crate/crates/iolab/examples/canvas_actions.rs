//! Walks a canvas from empty to complete: slots, valid insertion actions,
//! applying actions, and the uniform roll-in used during training.

use anyhow::Result;
use iolab::canvas::{apply, rollin_sample, valid_actions, Canvas};
use iolab::corpus::{build_vocabulary, Vocabulary};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn show(canvas: &Canvas, vocab: &Vocabulary) -> Result<()> {
    let aset = valid_actions(canvas)?;
    println!("hypothesis: {:?}", vocab.decode(canvas.hypothesis()));
    for slot in aset.slots() {
        let names: Vec<String> = aset
            .slot_actions(slot.index)
            .iter()
            .map(|a| match a.target_pos {
                Some(p) => format!("{}@{p}", vocab.token_str(a.content)),
                None => "<eos>".into(),
            })
            .collect();
        println!(
            "  slot {} spans reference [{}, {}): {}",
            slot.index,
            slot.span.0,
            slot.span.1,
            names.join(" ")
        );
    }
    Ok(())
}

fn main() -> Result<()> {
    let vocab = build_vocabulary("the man ate a snack".split_whitespace(), 100)?;
    let reference = vocab.encode(&["the", "man", "ate", "a", "snack"]);

    // Keep reference positions 2 and 4: the canvas "ate snack".
    let canvas = Canvas::from_kept(reference.clone(), &[2, 4]);
    show(&canvas, &vocab)?;

    // Insert "man" into slot 0 at its reference position 1.
    let aset = valid_actions(&canvas)?;
    let action = *aset
        .slot_actions(0)
        .iter()
        .find(|a| a.content == vocab.id_of("man").unwrap())
        .unwrap();
    let next = apply(&canvas, &[action])?;
    println!("\nafter inserting `man` into slot 0:");
    show(&next, &vocab)?;

    println!("\nuniform roll-ins of the same reference:");
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..4 {
        let c = rollin_sample(&reference, &mut rng);
        println!("  kept {:?}", vocab.decode(c.hypothesis()));
    }
    Ok(())
}

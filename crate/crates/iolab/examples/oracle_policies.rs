//! Turns order scores into temperature-softmax training targets: per-slot
//! content distributions and the cross-slot location distribution, from
//! near-argmax (low tau) to near-uniform (high tau).

use anyhow::Result;
use iolab::canvas::{valid_actions, Canvas};
use iolab::corpus::build_vocabulary;
use iolab::oracle::{build_policy, temperature_limits};
use iolab::orders::{OrderKind, OrderSpec};

fn main() -> Result<()> {
    let vocab = build_vocabulary("b a d c e".split_whitespace(), 100)?;
    let reference = vocab.encode(&["b", "a", "d", "c", "e"]);
    let canvas = Canvas::from_kept(reference, &[2]);
    let aset = valid_actions(&canvas)?;
    let order = OrderSpec::new(OrderKind::AlphaAz, &vocab);
    println!("canvas {:?}, order {}", vocab.decode(canvas.hypothesis()), order.kind);

    for tau in [0.1, 1.0, 10.0] {
        let policy = build_policy(&order, &aset, tau, None)?;
        println!("\ntau = {tau}");
        for l in 0..policy.slot_count() {
            let contents: Vec<String> = policy
                .contents(l)
                .iter()
                .map(|&(c, p)| format!("{}:{p:.3}", vocab.token_str(c)))
                .collect();
            println!("  slot {l} location {:.3} contents {}", policy.location_target()[l], contents.join(" "));
        }
    }

    let diag = temperature_limits(&order, &aset, None)?;
    println!(
        "\nlimits: argmin mass {:.6} at tau {:e} (one_hot_ok={}), uniform deviation {:.6} at tau {:e} (uniform_ok={})",
        diag.min_argmin_mass,
        diag.low_tau,
        diag.one_hot_ok,
        diag.max_uniform_deviation,
        diag.high_tau,
        diag.uniform_ok
    );
    Ok(())
}

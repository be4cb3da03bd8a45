//! Trains one checkpoint per oracle temperature on a toy task, then evaluates
//! the full (tau, gamma, mode) grid and prints the table: every cell, the
//! no-penalty and best-penalty scores per row, and the best cell per mode.

use anyhow::Result;
use iolab::corpus::{generate_synthetic, synthetic_vocabulary, SyntheticTaskSpec, TaskKind};
use iolab::harness::{sweep, train, SweepGrid, TrainConfig};
use iolab::orders::OrderKind;

fn main() -> Result<()> {
    let spec =
        SyntheticTaskSpec { kind: TaskKind::Copy, vocab_size: 10, min_len: 3, max_len: 6, seed: 4 };
    let data = generate_synthetic(&spec, 560)?;
    let vocab = synthetic_vocabulary(&spec, &data);
    let (train_data, dev_data) = data.split_at(512);

    let dir = tempfile::tempdir()?;
    let mut entries = Vec::new();
    for (i, tau) in [0.5, 1.0, 2.0].into_iter().enumerate() {
        let path = dir.path().join(format!("tau{i}.iolab"));
        let mut cfg = TrainConfig::desk_defaults(OrderKind::L2r, vocab.size());
        cfg.tau = tau;
        cfg.steps = 800;
        cfg.warmup = 80;
        cfg.model.d_model = 32;
        cfg.model.d_ffn = 64;
        cfg.model.max_len = 32;
        cfg.checkpoint = Some(path.clone());
        train(&cfg, train_data, &[], &vocab)?;
        entries.push((tau, path));
        println!("trained tau={tau}");
    }

    let mut grid = SweepGrid::new(entries);
    grid.gammas = vec![0.0, 1.0, 2.0, 4.0];
    let result = sweep(&grid, OrderKind::L2r, &vocab, dev_data)?;
    print!("{}", result.render());
    Ok(())
}

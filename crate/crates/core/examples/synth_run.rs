//! Train the desk-scale configuration on the synthetic task and report
//! per-epoch progress: `cargo run --release --example synth_run -- <seed> <epochs>`.

use dsn::data::{gen_synth, SynthSpec};
use dsn::model::{DsnConfig, DsnModel};
use dsn::topology::InitMode;
use dsn::trainer::{train_with, TrainConfig};
use dsn::RngState;

fn main() -> dsn::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(200);
    let spec = SynthSpec { seed, ..SynthSpec::default() };
    let (train, test) = gen_synth(&spec)?;
    let cfg = DsnConfig {
        num_sparse_layers: 3,
        channels: 48,
        kernel_size: 15,
        groups: 3,
        sparsity: 0.8,
        num_classes: 3,
        ..DsnConfig::default()
    };
    let model = DsnModel::build(cfg, InitMode::Sequential, &RngState::new(seed))?;
    let tc = TrainConfig { epochs, seed, eval_every: 10, ..TrainConfig::default() };
    let start = std::time::Instant::now();
    let (_, rec) = train_with(model, &train, Some(&test), &tc, |e| {
        if let Some(acc) = e.test_acc {
            println!("epoch {:4} loss {:.4} train {:.3} test {:.3} ({:.1}s)", e.epoch, e.loss, e.train_acc, acc, start.elapsed().as_secs_f64());
        }
    })?;
    println!("best epoch {} final test {:.4}", rec.best_epoch, rec.final_test_acc.unwrap_or(0.0));
    Ok(())
}

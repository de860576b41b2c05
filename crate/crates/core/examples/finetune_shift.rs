//! Fine-tunes a checkpoint on a small distribution-shifted corpus and
//! prints the perplexity table before and after.
//!
//! cargo run --release --example finetune_shift -- <checkpoint> [n] [out_dir]

use std::path::PathBuf;

use flowcomplete::evaluation::{report, split_dataset, Split};
use flowcomplete::syngen::{generate_dataset, GeneratorConfig};
use flowcomplete::transformer::{finetune, Checkpoint, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let base = Checkpoint::load(&PathBuf::from(args.first().ok_or("usage: finetune_shift <checkpoint> [n] [out]")?))?;
    let n: usize = args.get(1).map_or(Ok(250), |s| s.parse())?;
    let shifted = split_dataset(&generate_dataset(&GeneratorConfig::shifted(), n)?, (0.8, 0.1, 0.1), 0)?;
    let original = split_dataset(&generate_dataset(&GeneratorConfig { seed: 99, ..GeneratorConfig::default() }, n)?, (0.8, 0.1, 0.1), 0)?;

    let mut tc = TrainConfig::finetune();
    tc.extend_vocab = true;
    let started = std::time::Instant::now();
    let (tuned, rep) = finetune(&base, &shifted, &tc, |p| {
        println!("step {:>5} train {:.4} val {:.4} ({:.0}s)", p.step, p.train_loss, p.val_loss, started.elapsed().as_secs_f64());
    })?;
    println!("stopped after {} steps, best at {}", rep.steps, rep.best_step);
    if let Some(out) = args.get(2) {
        tuned.save(&PathBuf::from(out))?;
    }
    let table = report(
        &[("pre-trained", &base), ("fine-tuned", &tuned)],
        &[("generated", &original), ("shifted", &shifted)],
        &Split::ALL,
    )?;
    print!("{}", table.to_table());
    Ok(())
}

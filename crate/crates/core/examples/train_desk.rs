//! Generates a corpus, trains the desk-sized model and reports test perplexity.
//!
//! cargo run --release --example train_desk -- [n] [out_dir] [max_steps]

use std::path::PathBuf;

use flowcomplete::evaluation::{checkpoint_perplexity, curve_csv, split_dataset};
use flowcomplete::syngen::{generate_dataset, GeneratorConfig};
use flowcomplete::transformer::{train, ModelConfig, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let n: usize = args.first().map_or(Ok(8000), |s| s.parse())?;
    let out = PathBuf::from(args.get(1).map_or("runs/desk", String::as_str));
    let mut tc = TrainConfig::pretrain();
    tc.max_steps = args.get(2).map(|s| s.parse()).transpose()?;
    tc.deterministic = false;

    let corpus = generate_dataset(&GeneratorConfig::default(), n)?;
    let splits = split_dataset(&corpus, (0.8, 0.1, 0.1), 0)?;
    println!("train {} val {} test {}", splits.train.len(), splits.val.len(), splits.test.len());
    let started = std::time::Instant::now();
    let (ckpt, report) = train(&splits, &ModelConfig::desk(0), &tc, |p| {
        println!(
            "step {:>6} epoch {:>3} train {:.4} val {:.4} ({:.0}s)",
            p.step,
            p.epoch,
            p.train_loss,
            p.val_loss,
            started.elapsed().as_secs_f64()
        );
    })?;
    ckpt.save(&out)?;
    std::fs::write(out.join("curve.csv"), curve_csv(&report.curve))?;
    splits.save(&out.join("data"))?;
    let pp = checkpoint_perplexity(&ckpt, &splits.test)?;
    println!("best step {} val loss {:.4}", report.best_step, report.best_val_loss);
    println!("test perplexity {:.3} over {} tokens (vocab {})", pp.perplexity, pp.tokens, ckpt.vocab.len());
    Ok(())
}

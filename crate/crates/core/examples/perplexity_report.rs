//! Perplexity table of checkpoints against split corpora.
//!
//! cargo run --release --example perplexity_report -- name=checkpoint... -- name=data_dir...

use std::path::Path;

use flowcomplete::evaluation::{report, Split, Splits};
use flowcomplete::transformer::Checkpoint;

fn named(arg: &str) -> Result<(&str, &str), String> {
    arg.split_once('=').ok_or_else(|| format!("expected name=path, got {arg:?}"))
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let sep = args.iter().position(|a| a == "--").ok_or("usage: perplexity_report name=ckpt... -- name=data...")?;
    let mut models = Vec::new();
    for a in &args[..sep] {
        let (name, path) = named(a)?;
        models.push((name, Checkpoint::load(Path::new(path))?));
    }
    let mut data = Vec::new();
    for a in &args[sep + 1..] {
        let (name, path) = named(a)?;
        data.push((name, Splits::load(Path::new(path))?));
    }
    let models: Vec<(&str, &Checkpoint)> = models.iter().map(|(n, c)| (*n, c)).collect();
    let data: Vec<(&str, &Splits)> = data.iter().map(|(n, s)| (*n, s)).collect();
    let table = report(&models, &data, &Split::ALL)?;
    print!("{}", table.to_table());
    for c in table.cells.iter().filter(|c| c.result.skipped > 0) {
        println!("{}/{}/{}: {} sequences longer than the context were skipped", c.model, c.dataset, c.split.name(), c.result.skipped);
    }
    Ok(())
}

//! Generates a synthetic corpus and prints its statistics.
//!
//! cargo run --release --example generate_corpus -- [n] [seed] [out]

use flowcomplete::syngen::{generate_dataset, stats, GeneratorConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let n: usize = args.first().map_or(Ok(1000), |s| s.parse())?;
    let mut cfg = GeneratorConfig::default();
    if let Some(seed) = args.get(1) {
        cfg.seed = seed.parse()?;
    }
    let corpus = generate_dataset(&cfg, n)?;
    let st = stats(&corpus)?;
    println!("samples      {}", st.samples_tr);
    println!("nodes mean   {:.2}", st.mean_nodes);
    println!("nodes std    {:.2}", st.std_nodes);
    println!("vocab size   {}", st.vocab_size);
    for s in corpus.iter().take(5) {
        println!("  {s}");
    }
    if let Some(out) = args.get(2) {
        std::fs::write(out, corpus.join("\n") + "\n")?;
    }
    Ok(())
}

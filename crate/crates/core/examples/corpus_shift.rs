//! Compares statistics of the default and the shifted generator and writes
//! both configurations as JSON.
//!
//! cargo run --release --example corpus_shift -- [n] [config_dir]

use std::path::PathBuf;

use flowcomplete::syngen::{generate_dataset, stats, GeneratorConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let n: usize = args.first().map_or(Ok(500), |s| s.parse())?;
    for (name, cfg) in [("default", GeneratorConfig::default()), ("shifted", GeneratorConfig::shifted())] {
        let corpus = generate_dataset(&cfg, n)?;
        let st = stats(&corpus)?;
        println!(
            "{name:<8} n {:>5}  nodes {:>6.2} ± {:>5.2}  vocab {:>3}  e.g. {}",
            st.samples_tr, st.mean_nodes, st.std_nodes, st.vocab_size, corpus[0]
        );
        if let Some(dir) = args.get(1) {
            cfg.save(&PathBuf::from(dir).join(format!("generator_{name}.json")))?;
        }
    }
    Ok(())
}

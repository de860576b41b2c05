//! Completes held-out prefixes with beam search and nucleus sampling and
//! reports how many candidates parse, then completes the absorber prefix.
//!
//! cargo run --release --example completion_validity -- <checkpoint> [test.sfiles]

use std::path::PathBuf;

use flowcomplete::decoding::{DecodeConfig, Strategy};
use flowcomplete::evaluation::{completion_validity, held_out_prefixes, read_corpus};
use flowcomplete::interface::{complete, CompletionRequest};
use flowcomplete::sfiles::{parse, Mode, UnitCategory};
use flowcomplete::transformer::Checkpoint;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let dir = PathBuf::from(args.first().ok_or("usage: completion_validity <checkpoint> [test.sfiles]")?);
    let ckpt = Checkpoint::load(&dir)?;
    let test = args.get(1).map_or_else(|| dir.join("data/test.sfiles"), PathBuf::from);
    let prefixes = held_out_prefixes(&read_corpus(&test)?, 50, (2, 6), 0)?;

    let beam = DecodeConfig { strategy: Strategy::Beam, beam_width: 5, ..DecodeConfig::default() };
    let top_p = DecodeConfig { strategy: Strategy::TopP, p: 0.9, seed: 1, ..DecodeConfig::default() };
    for (name, cfg) in [("beam w=5", &beam), ("top-p p=0.9", &top_p)] {
        let v = completion_validity(&ckpt, &prefixes, cfg)?;
        println!(
            "{name:<12} {}/{} parse ({:.1}%), {} also pass every graph rule",
            v.valid,
            v.completions,
            100.0 * v.rate(),
            v.rule_clean
        );
        for c in v.items.iter().filter(|c| !c.valid).take(3) {
            println!("    invalid: {}  ({})", c.sfiles, c.parse_error.as_deref().unwrap_or(""));
        }
    }

    let prefix = "(raw)(mix)<1(r){bin}(abs)";
    let req = CompletionRequest::new(prefix, DecodeConfig { num_return: 5, ..beam });
    for c in complete(&ckpt, &req)?.completions {
        let absorber = parse(&c.sfiles, Mode::Strict).ok().and_then(|g| {
            let i = (0..g.node_count()).find(|&i| g.nodes[i].category == UnitCategory::Absorption)?;
            Some((g.in_degree(i), g.out_degree(i)))
        });
        println!("{:>8.3}  {}  absorber in/out {:?}", c.log_prob, c.sfiles, absorber);
    }
    Ok(())
}

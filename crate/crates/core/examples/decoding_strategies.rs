//! Greedy, beam, top-k and top-p decoding side by side, on a checkpoint if
//! one is given and on a two-step toy model otherwise.
//!
//! cargo run --release --example decoding_strategies -- [checkpoint] [prefix]

use flowcomplete::decoding::{decode, DecodeConfig, FnModel, Strategy};
use flowcomplete::interface::{complete, CompletionRequest};
use flowcomplete::tokenizer::BOS_ID;
use flowcomplete::transformer::Checkpoint;

const STRATEGIES: [Strategy; 4] = [Strategy::Greedy, Strategy::Beam, Strategy::TopK, Strategy::TopP];

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let Some(dir) = args.first() else {
        // P(A)=.6, P(B)=.4, P(C|A)=P(D|A)=.5, P(C|B)=.9, P(D|B)=.1 with
        // A..D as ids 3..6. Greedy commits to A and ends at .30, beam finds B,C at .36.
        let toy = FnModel::new(7, |h: &[u32]| match h {
            [_] => vec![0.0, 0.0, 0.0, 0.6, 0.4, 0.0, 0.0],
            [_, 3] => vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.5, 0.5],
            [_, 4] => vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.9, 0.1],
            _ => vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0],
        });
        for strategy in STRATEGIES {
            let cfg = DecodeConfig { strategy, max_new_tokens: 2, beam_width: 2, num_return: 2, k: 2, ..DecodeConfig::default() };
            for c in decode(&toy, &[BOS_ID], &cfg)? {
                println!("{strategy:?}\t{:?}\tp = {:.2}", &c.ids[1..], c.log_prob.exp());
            }
        }
        return Ok(());
    };
    let ckpt = Checkpoint::load(dir.as_ref())?;
    let prefix = args.get(1).map_or("(raw)(hex)", String::as_str);
    for strategy in STRATEGIES {
        let cfg = DecodeConfig { strategy, seed: 1, ..DecodeConfig::default() };
        println!("{strategy:?}");
        for c in complete(&ckpt, &CompletionRequest::new(prefix, cfg))?.completions {
            let mark = if c.valid { "valid  " } else { "INVALID" };
            println!("  {mark} {:>8.3}  {}", c.log_prob, c.sfiles);
        }
    }
    Ok(())
}

//! Tokenizes, parses and re-serializes an SFILES string, printing the
//! graph in between.
//!
//! cargo run --example parse_serialize -- ["(raw)(hex)(r)(prod)"]

use flowcomplete::sfiles::{fixtures, parse_with_warnings, serialize, serialize_partial, to_json_value, validate, Mode};
use flowcomplete::tokenizer::token_texts;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let input = std::env::args().nth(1).unwrap_or_else(|| fixtures::TWO_TRAIN_SFILES.to_string());
    println!("tokens    {}", token_texts(&input)?.join("  "));

    let (g, warnings) = parse_with_warnings(&input, Mode::Lenient)?;
    for w in &warnings {
        println!("warning   byte {}: {}", w.position, w.message);
    }
    println!("nodes     {}", g.node_count());
    for e in &g.edges {
        let tags: Vec<&str> = e.tags_in_order().map(String::as_str).collect();
        println!("  {:>8} -> {:<8} {}", g.nodes[e.src].id, g.nodes[e.dst].id, tags.join(","));
    }
    let violations = validate(&g);
    if violations.is_empty() {
        println!("canonical {}", serialize(&g)?);
    } else {
        for v in &violations {
            println!("violation {v}");
        }
        println!("partial   {}", serialize_partial(&g)?);
    }
    println!("{}", serde_json::to_string_pretty(&to_json_value(&g))?);
    Ok(())
}

//! Serves the completion API for a checkpoint.
//!
//! cargo run --release --example serve -- <checkpoint> [addr]
//!
//! curl -s localhost:8080/api/complete -d '{"sfiles_prefix":"(raw)(hex)"}'

use flowcomplete::service::serve;

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let checkpoint = args.next().map(Into::into);
    let addr = args.next().unwrap_or_else(|| "127.0.0.1:8080".into()).parse()?;
    serve(addr, checkpoint).await?;
    Ok(())
}

//! Writes the demo corpus, stub fixture and config into a directory.
//!
//! ```text
//! cargo run -p raven-cli --example demo -- /tmp/raven-demo
//! raven --config /tmp/raven-demo/raven.json categorize --manifest /tmp/raven-demo/manifest.jsonl
//! ```

fn main() {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "raven-demo".into());
    match raven_cli::demo::write_demo(std::path::Path::new(&dir)) {
        Ok(config) => println!("demo written; config at {}", config.display()),
        Err(e) => {
            eprintln!("demo: {e}");
            std::process::exit(1);
        }
    }
}

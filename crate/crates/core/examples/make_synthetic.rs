//! Writes the bundled synthetic corpus.
//!
//! `cargo run -p genqa-core --example make_synthetic -- data/synthetic_200.jsonl`

use std::path::PathBuf;

use genqa_core::corpus::write_dataset;
use genqa_core::synthetic::{synthetic_dataset, BUNDLED_QUESTIONS, BUNDLED_SEED};

fn main() -> genqa_core::error::Result<()> {
    let out = std::env::args_os()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data/synthetic_200.jsonl"));
    write_dataset(&synthetic_dataset(BUNDLED_QUESTIONS, BUNDLED_SEED), &out)?;
    println!("wrote {}", out.display());
    Ok(())
}

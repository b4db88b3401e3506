//! Compare prompt variants on the same questions and print the ablation table.
//!
//! cargo run --example ablation

use std::path::PathBuf;

use confalign::analysis::render_ablation_markdown;
use confalign::runner::{BackendConfig, RunConfig, Runner};

fn main() -> confalign::Result<()> {
    let data = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/sample_mcq.jsonl");
    let cfg = RunConfig::new(vec![data], BackendConfig::Noisy { seed: Some(3), amplitude: None });
    let out = Runner::new(cfg)?.ablate();
    if let Some(table) = &out.reports.ablation {
        println!("{}", render_ablation_markdown(table));
    }
    let c = &out.manifest.counts;
    println!("{} backend calls, {} served from cache", c.cache_misses, c.cache_hits);
    Ok(())
}

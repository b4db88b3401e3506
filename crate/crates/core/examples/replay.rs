//! Reproduce a recorded run from its completion cache without any network access.
//!
//! cargo run --example replay

use std::path::PathBuf;

use confalign::runner::{RunConfig, Runner};

fn main() -> confalign::Result<()> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let cfg = RunConfig::load(dir.join("configs/replay.toml"))?;
    let out = Runner::new(cfg)?.evaluate();
    let c = &out.manifest.counts;
    println!("backend {} / model {}", out.manifest.backend_id, out.manifest.model);
    println!("{} cache hits, {} misses", c.cache_hits, c.cache_misses);
    for r in &out.reports.reports {
        println!("rho = {:?} over {} paired questions", r.correlation.rho, r.correlation.n);
    }
    Ok(())
}

//! Evaluate the sample questions against the scripted backend and print the report.
//!
//! cargo run --example mock_evaluation

use std::path::PathBuf;

use confalign::runner::{RunConfig, Runner};

fn main() -> confalign::Result<()> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let cfg = RunConfig::load(dir.join("configs/mock_run.toml"))?;
    let out = Runner::new(cfg)?.evaluate();
    for (name, body) in out.reports.render()? {
        if name == "report.md" {
            println!("{body}");
        }
    }
    let c = &out.manifest.counts;
    println!("{} trials, {} failed, {} parse failures", c.trials, c.failed_trials, c.parse_failures);
    Ok(())
}

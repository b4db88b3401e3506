//! Sweep the certainty query over temperatures with the seeded noisy mock and
//! print how much repeated verbalized scores spread at each temperature.
//!
//! cargo run --example temperature_sweep

use std::path::PathBuf;

use confalign::prompting::{PromptVariant, Scale};
use confalign::runner::{BackendConfig, RunConfig, Runner};

fn main() -> confalign::Result<()> {
    let data = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/sample_mcq.jsonl");
    let mut cfg = RunConfig::new(vec![data], BackendConfig::Noisy { seed: Some(7), amplitude: None });
    cfg.variant = PromptVariant::new(false, false, Scale::Numerical1To100);
    cfg.samples = 5;
    let out = Runner::new(cfg)?.sweep();
    for curve in &out.reports.curves {
        println!("variant {}", curve.variant);
        for p in &curve.points {
            println!("  T = {:.1}: mean std = {:.3} over {} questions", p.temperature, p.avg_std, p.questions);
        }
        println!("  non-decreasing: {}", curve.is_non_decreasing());
    }
    Ok(())
}

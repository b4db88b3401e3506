//! Render the confidence-querying prompt under every supported variant.
//!
//! cargo run --example cqp_variants

use confalign::dataset::load_dataset;
use confalign::prompting::{build_cqp, enumerate_ablation_variants, PromptVariant, Scale};

fn main() -> confalign::Result<()> {
    let ds = load_dataset(concat!(env!("CARGO_MANIFEST_DIR"), "/data/sample_mcq.jsonl"))?;
    let q = &ds.questions[0];
    let mut variants = enumerate_ablation_variants();
    variants.push(PromptVariant::new(true, true, Scale::Likert5));
    variants.push(PromptVariant::new(true, true, Scale::Likert5WithDefinitions));
    variants.push(PromptVariant::new(true, true, Scale::Likert5).with_strict_grammar());
    for v in variants {
        println!("===== {} ({}) =====", v.id(), v.template_name()?);
        println!("{}\n", build_cqp(q, "B. Nitrogen", &v)?);
    }
    Ok(())
}

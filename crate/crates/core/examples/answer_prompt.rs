//! Render the answer-elicitation prompt for the first sample question.
//!
//! cargo run --example answer_prompt

use confalign::dataset::load_dataset;
use confalign::prompting::build_answer_prompt;

fn main() -> confalign::Result<()> {
    let ds = load_dataset(concat!(env!("CARGO_MANIFEST_DIR"), "/data/sample_mcq.jsonl"))?;
    let q = &ds.questions[0];
    println!("{}", build_answer_prompt(q));
    Ok(())
}

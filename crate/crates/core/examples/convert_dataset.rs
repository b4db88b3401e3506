//! Convert hub-style records (nested `question.choices`, `answerKey`) into the
//! flat question format and validate the result.
//!
//! cargo run --example convert_dataset

use confalign::dataset::{convert_hub_record, parse_dataset, serialize_questions};

const HUB: &str = r#"{"id":"obqa-1","question":{"stem":"Which of these would let the most heat travel through?","choices":[{"label":"A","text":"a new pair of jeans"},{"label":"B","text":"a steel spoon in a cafeteria"},{"label":"C","text":"a cotton candy at a store"},{"label":"D","text":"a calvin klein cotton hat"}]},"answerKey":"B"}
{"id":"arc-7","question":{"stem":"Which gas do plants take in?","choices":[{"label":"1","text":"oxygen"},{"label":"2","text":"carbon dioxide"},{"label":"3","text":"helium"}]},"answerKey":"2"}
"#;

fn main() -> confalign::Result<()> {
    let questions = HUB.lines().map(convert_hub_record).collect::<confalign::Result<Vec<_>>>()?;
    let text = serialize_questions(&questions);
    print!("{text}");
    let ds = parse_dataset(text.as_bytes(), "converted", "converted.jsonl")?;
    println!("{} valid, {} rejected, sha256 {}", ds.questions.len(), ds.rejected.len(), ds.manifest.checksum);
    Ok(())
}

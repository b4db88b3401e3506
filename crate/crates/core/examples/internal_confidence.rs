//! Adjusted internal confidence from a first-token distribution that splits
//! mass across spellings of the same option and includes unrelated tokens.
//!
//! cargo run --example internal_confidence

use confalign::backends::{TokenDistribution, TokenScore};
use confalign::confidence::{adjusted_internal_confidence, build_option_token_map, has_label_ambiguity};
use confalign::dataset::Label;

fn main() -> confalign::Result<()> {
    let labels: Vec<Label> = "ABCD".chars().filter_map(Label::new).collect();
    let map = build_option_token_map(&labels);
    let dist = TokenDistribution::new(vec![
        TokenScore::logprob("B", -0.22),
        TokenScore::logprob(" B", -3.1),
        TokenScore::logprob("b", -4.0),
        TokenScore::logprob("A", -2.3),
        TokenScore::logprob("C.", -3.5),
        TokenScore::logprob("The", -4.2),
    ])
    .normalize()?;

    let chosen = Label::new('B').expect("valid label");
    let ic = adjusted_internal_confidence(&dist, &map, chosen)?;
    for (label, p) in &ic.per_option {
        println!("P_O({label}) = {p:.4}");
    }
    println!("P_S = {:.4}", ic.p_s);
    println!("P_IC({chosen}) = {:.4}", ic.internal_confidence);
    println!("lower-case label ambiguity: {}", has_label_ambiguity(&dist, &map));
    Ok(())
}

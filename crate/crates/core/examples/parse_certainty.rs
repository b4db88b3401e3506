//! Map free-text certainty replies to scores, showing each failure kind.
//!
//! cargo run --example parse_certainty

use confalign::certainty::{parse_certainty, parse_numeric_certainty, self_consistency_vote};
use confalign::prompting::LIKERT6;

fn main() {
    let options = ["Oxygen", "Nitrogen", "Argon", "Carbon dioxide"];
    let replies = [
        "a. Very Certain",
        "I would say I am fairly certain.",
        "c. Very Uncertain",
        "Somewhat certain or moderately certain.",
        "A. Oxygen B. Nitrogen",
        "I cannot tell.",
    ];
    for r in replies {
        let o = parse_certainty(r, &LIKERT6, &options);
        match (o.score, o.failure) {
            (Some(s), _) => println!("{r:45} -> {} ({s}){}", o.category.unwrap_or_default(), if o.key_conflict { " [key conflict]" } else { "" }),
            (None, Some(f)) => println!("{r:45} -> failure {}", f.as_str()),
            _ => unreachable!(),
        }
    }
    for r in ["85", "I'd put it at 40%", "150"] {
        let o = parse_numeric_certainty(r);
        println!("{r:45} -> {:?} {:?}", o.score, o.failure.map(|f| f.as_str()));
    }

    let samples: Vec<_> = ["a. Very Certain", "b. Fairly Certain", "a. Very Certain", "no idea"]
        .iter()
        .map(|r| parse_certainty(r, &LIKERT6, &options))
        .collect();
    let vote = self_consistency_vote(&samples);
    println!("vote over 4 samples -> {:?} ({:?})", vote.category, vote.score);
}

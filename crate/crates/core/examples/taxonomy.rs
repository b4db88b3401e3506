//! Classify (internal, verbalized) confidence pairs into the four alignment categories.
//!
//! cargo run --example taxonomy

use confalign::analysis::{classify_alignment, Thresholds};

fn main() {
    let t = Thresholds::default();
    println!("thresholds: internal >= {}, verbalized >= {}", t.ic_high, t.vc_high);
    for (ic, vc) in [(0.97, 1.0), (0.95, 0.4), (0.62, 1.0), (0.55, 0.2), (0.9, 0.8)] {
        println!("P_IC = {ic:.2}, VC = {vc:.2} -> {}", classify_alignment(ic, vc, t).name());
    }
}

//! Rank correlation with ties, its t-test p-value and an exact permutation p-value.
//!
//! cargo run --example spearman

use confalign::analysis::{midranks, permutation_p_value, spearman_closed_form, spearman_rho};

fn main() -> confalign::Result<()> {
    let internal = [0.99, 0.95, 0.71, 0.88, 0.52, 0.97, 0.64, 0.91];
    let verbal = [1.0, 0.8, 0.6, 0.8, 0.2, 1.0, 0.6, 0.4];
    println!("midranks(verbal) = {:?}", midranks(&verbal));
    let r = spearman_rho(&internal, &verbal)?;
    println!("rho = {:?}, p(t) = {:?}, n = {}", r.rho, r.p_value, r.n);
    println!("p(permutation) = {:?}", permutation_p_value(&internal, &verbal)?);

    let x = [1.0, 2.0, 3.0, 4.0, 5.0];
    let y = [2.0, 1.0, 4.0, 3.0, 5.0];
    println!("tie-free: rho = {:?}, closed form = {}", spearman_rho(&x, &y)?.rho, spearman_closed_form(&x, &y)?);
    Ok(())
}

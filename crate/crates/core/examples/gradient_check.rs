//! Compares analytic gradients with central finite differences for every
//! model family.

use gsn_seq::harness::{gradcheck_target, GRADCHECK_TARGETS};
use gsn_seq::Result;

pub fn run_example(seed: u64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for target in GRADCHECK_TARGETS {
        for e in gradcheck_target(target, &[6, 5, 4], seed)? {
            println!("{target:10} {:45} {:.2e}", e.term, e.report.max_rel_error);
            worst = worst.max(e.report.max_rel_error);
        }
    }
    println!("largest relative error {worst:.2e}");
    Ok(worst)
}

#[allow(dead_code)]
fn main() {
    run_example(1).expect("gradient check example");
}

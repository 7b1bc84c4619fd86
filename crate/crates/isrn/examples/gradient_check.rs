//! Verify every layer's reverse-mode gradients against central finite
//! differences, from single operations up to the fully assembled model.
//!
//!     cargo run --example gradient_check

use isrn::gradcheck::{report, run_standard_suite, DEFAULT_TOL};

fn main() -> isrn::Result<()> {
    let results = run_standard_suite()?;
    println!("{}", report(&results, DEFAULT_TOL));
    let worst = results
        .iter()
        .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
        .expect("suite is non-empty");
    println!(
        "worst: {} at {:.3e} (tolerance {DEFAULT_TOL:.0e})",
        worst.name, worst.max_rel_err
    );
    std::process::exit(if results.iter().all(|r| r.passed(DEFAULT_TOL)) { 0 } else { 1 });
}

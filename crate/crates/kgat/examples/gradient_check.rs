//! Verifies the analytic gradients of every training loss against central
//! finite differences on a small random instance.
//!
//! Run with: cargo run --example gradient_check

use kgat::gradcheck::{run_suite, GRADCHECK_ATOL, GRADCHECK_RTOL};

fn main() {
    println!(
        "comparing analytic vs numeric gradients (rtol {GRADCHECK_RTOL:.0e}, atol {GRADCHECK_ATOL:.0e})"
    );
    let report = run_suite(0);
    println!("{:<32} {:>7} {:>14} {:>12}", "case", "coords", "max abs err", "err/tol");
    for case in &report.cases {
        println!(
            "{:<32} {:>7} {:>14.3e} {:>12.3} {}",
            case.name,
            case.coords,
            case.max_abs_err,
            case.max_tol_ratio,
            if case.passed { "ok" } else { "FAIL" }
        );
    }
    std::process::exit(if report.passed { 0 } else { 1 });
}

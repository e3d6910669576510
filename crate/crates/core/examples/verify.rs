//! Run the analytic invariant suites.

use flowmi::bench::verify::{render, run_suites};

fn main() {
    let results = run_suites();
    print!("{}", render(&results));
    if results.iter().any(|r| !r.passed) {
        std::process::exit(1);
    }
}

//! Run the built-in self-test suites and print one line per suite.

use nlre::cli::selftest::{run_suites, SelftestHooks, Suite};

fn main() {
    let reports = run_suites(&Suite::ALL, &SelftestHooks::default(), 0);
    for r in &reports {
        println!("{:<10} {}  {}", r.suite.name(), if r.passed { "PASS" } else { "FAIL" }, r.detail);
    }
    if reports.iter().any(|r| !r.passed) {
        std::process::exit(1);
    }
}

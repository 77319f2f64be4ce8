//! Full acceptance suite. Prints one pass/fail line per criterion, then
//! fails if any criterion did.

use std::io::Write;

use mfergodic_cli::bench::{run_suite, Suite};

#[test]
fn all_criteria_pass() {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let results = pool.install(|| {
        run_suite(&Suite::Full.ids(), |r| {
            // stderr is not captured per test, so the table shows up live
            let _ = writeln!(std::io::stderr(), "{}", r.line());
        })
    });
    assert_eq!(results.len(), 13);
    let failed: Vec<String> = results.iter().filter(|r| !r.passed).map(|r| r.line()).collect();
    assert!(failed.is_empty(), "failed criteria:\n{}", failed.join("\n"));
}

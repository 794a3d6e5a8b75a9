//! Acceptance suite: one PASS/FAIL line per criterion; fails if any criterion
//! fails.

use kkl::acceptance::{run_criterion, CRITERIA};

const SEED: u64 = 7;

fn main() {
    let scratch = tempfile::tempdir().expect("scratch directory");
    let mut failed = 0;
    for (id, _) in CRITERIA {
        let result = run_criterion(id, SEED, scratch.path());
        println!("{}", result.line());
        failed += usize::from(!result.passed);
    }
    println!("acceptance: {} passed, {failed} failed", CRITERIA.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

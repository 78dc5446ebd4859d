//! Acceptance suite: one line per criterion, PASS or FAIL, at the stated
//! tolerances and time budgets. Runs without the libtest harness so the
//! lines print in order; exits non-zero if any criterion fails.

use std::process::ExitCode;

use concrete_core::verify::{self, CheckResult};

fn main() -> ExitCode {
    let _ = env_logger::builder().is_test(true).try_init();
    let mut results: Vec<CheckResult> = Vec::new();
    for check in verify::fast_checks() {
        let r = check();
        println!("criterion {:>2}: {r}", results.len() + 1);
        results.push(r);
    }

    let r = verify::training_progress(&verify::training_progress_config(5000, 3e-4));
    println!("criterion {:>2}: {r}", results.len() + 1);
    results.push(r);

    let r = verify::integrality_gap(&verify::integrality_gap_config(verify::GAP_MODEL, verify::GAP_STEPS, 3e-3));
    println!("criterion {:>2}: {r}", results.len() + 1);
    results.push(r);

    let failed = results.iter().filter(|r| !r.passed).count();
    println!("{} criteria, {} failed", results.len(), failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

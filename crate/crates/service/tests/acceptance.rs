//! Prints one PASS/FAIL line per release criterion and fails if any fails.

use std::process::ExitCode;

use teleop_service::acceptance::{fixtures_dir, run_all};

fn main() -> ExitCode {
    let results = run_all(&fixtures_dir());
    for r in &results {
        println!("{r}");
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

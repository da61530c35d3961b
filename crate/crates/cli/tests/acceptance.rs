//! One line per acceptance criterion; exits nonzero if any fails.

use std::process::ExitCode;
use std::time::Instant;

use amf_cli::checks::{run_all, Fault};

fn main() -> ExitCode {
    let start = Instant::now();
    let outcomes = run_all(Fault::None);
    for o in &outcomes {
        println!("{o}");
    }
    let passed = outcomes.iter().filter(|o| o.passed).count();
    println!("{passed}/{} criteria passed in {:.1}s", outcomes.len(), start.elapsed().as_secs_f64());
    if passed == outcomes.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

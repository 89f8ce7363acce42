use std::process::ExitCode;

use zomopi::selftest::{run_criterion, CriterionOutcome, CRITERIA};

fn main() -> ExitCode {
    // behave like a libtest target when cargo asks for a listing
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let filter: Vec<u8> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut blocking = 0;
    for &(id, title, limit) in &CRITERIA {
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let outcome = run_criterion(id).unwrap_or_else(|e| CriterionOutcome {
            id,
            title,
            passed: false,
            blocking: true,
            detail: format!("error: {e}"),
            elapsed: Default::default(),
            limit: std::time::Duration::from_secs(limit),
        });
        println!("{outcome}");
        blocking += usize::from(!outcome.passed && outcome.blocking);
    }
    if blocking == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{blocking} blocking failure(s)");
        ExitCode::FAILURE
    }
}

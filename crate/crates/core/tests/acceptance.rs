use std::io::Write;

use metastable::verify::{run_criterion, CRITERIA};

#[test]
fn acceptance() {
    // Written to the raw handle so the lines survive the harness's output capture.
    let mut out = std::io::stdout();
    writeln!(out).unwrap();
    let results: Vec<_> = (1..=CRITERIA)
        .map(|id| {
            let r = run_criterion(id);
            writeln!(out, "{}", r.line()).unwrap();
            out.flush().unwrap();
            r
        })
        .collect();
    let failed: Vec<usize> = results.iter().filter(|r| !r.passed).map(|r| r.id).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

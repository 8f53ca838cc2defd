//! End-to-end acceptance gate: runs all ten criteria and prints one
//! pass/fail line per criterion before asserting.

use avtts::verify::run_suite;

#[test]
fn acceptance() {
    let results = run_suite("all").expect("suite runner failed");
    let mut all_pass = true;
    for r in &results {
        println!("{r}");
        all_pass &= r.pass;
    }
    assert!(all_pass, "one or more acceptance criteria failed");
}

//! Central finite-difference checks of every traced operation and of all
//! four network variants at toy size.

use std::time::Instant;

use eamri::harness::gradcheck::run_suite;

fn main() -> eamri::Result<()> {
    let start = Instant::now();
    let results = run_suite(0)?;
    let mut worst = results[0].clone();
    for r in &results {
        if r.rel_err / r.tol > worst.rel_err / worst.tol {
            worst = r.clone();
        }
    }
    let failed = results.iter().filter(|r| !r.passed()).count();
    println!("{} checks in {:.2?}, {failed} failed", results.len(), start.elapsed());
    println!("closest to tolerance: {} rel {:.2e} (tol {:.0e})", worst.name, worst.rel_err, worst.tol);
    Ok(())
}

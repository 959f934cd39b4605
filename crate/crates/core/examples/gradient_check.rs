//! Runs the finite-difference gradient checks of every layer and of the
//! full training loss.

use std::time::Instant;

use pms_core::training::run_gradcheck_suite;

fn main() -> pms_core::error::Result<()> {
    let start = Instant::now();
    let entries = run_gradcheck_suite(true)?;
    for e in &entries {
        println!("{}", e.line());
    }
    println!("{} checks in {:.1}s", entries.len(), start.elapsed().as_secs_f64());
    Ok(())
}

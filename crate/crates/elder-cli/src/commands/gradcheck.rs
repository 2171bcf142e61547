//! `gradcheck`: run the derivative check suite and fail loudly if any
//! analytic quantity disagrees with finite differences.

use crate::config::Settings;
use crate::report;
use elder::gradcheck::run_suite;
use elder::{Error, Result};

pub fn run(s: &Settings, quiet: bool) -> Result<()> {
    let rows = run_suite(&s.gradcheck)?;

    let mut w = report::csv_writer(&s.out.join("gradcheck.csv"))?;
    report::write_row(&mut w, &["check", "observed", "tolerance", "status"])?;
    let mut failed = 0usize;
    for row in &rows {
        let status = if row.pass { "pass" } else { "FAIL" };
        if !quiet {
            println!("{:<44} {:>12.3e}  tol {:>8.1e}  {status}", row.name, row.observed, row.tolerance);
        }
        report::write_row(
            &mut w,
            &[
                row.name.clone(),
                report::fmt_f(row.observed),
                report::fmt_f(row.tolerance),
                status.to_string(),
            ],
        )?;
        if !row.pass {
            failed += 1;
        }
    }
    report::finish(w)?;

    if failed > 0 {
        Err(Error::numeric(format!("{failed} of {} derivative checks failed", rows.len())))
    } else {
        if !quiet {
            println!("gradcheck: all {} checks passed", rows.len());
        }
        Ok(())
    }
}

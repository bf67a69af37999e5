//! Runs the nine-row inversion table at the default configuration.

use rectiflow::experiments::{table5, InversionConfig};

fn main() -> rectiflow::error::Result<()> {
    let table = table5(&InversionConfig::default())?;
    println!("{:<38} {:>9} {:>9} {:>9} {:>9}", "row", "L2", "L1", "paper L2", "paper L1");
    for row in &table.rows {
        println!(
            "{:<38} {:>9.4} {:>9.4} {:>9.3} {:>9.3}",
            row.label, row.report.l2, row.report.l1, row.paper_l2, row.paper_l1
        );
    }
    for check in &table.checks {
        println!("{} {}", if check.pass { "PASS" } else { "FAIL" }, check.claim);
    }
    Ok(())
}

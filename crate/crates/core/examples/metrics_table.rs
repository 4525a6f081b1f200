//! Ranks a table of reported metrics by RMSE.

use fppn::depthmetrics::{compare, parse_reports_csv};

fn main() -> fppn::Result<()> {
    let csv = "name,rmse,mae,irmse,imae\n\
               PENet,1571.59,598.63,5.89,2.76\n\
               ACMNet,2247.05,913.05,9.42,4.50\n\
               ours,1214.96,518.34,6.52,3.32\n";
    let table = compare(parse_reports_csv(csv)?)?;
    print!("{}", table.to_markdown());
    Ok(())
}

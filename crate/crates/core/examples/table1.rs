//! Train and test each reference crossbar configuration.
//!
//! Pass `--paper-scale` for 100K/100K/10K characters (slow).

use hyperlock::experiment::{run_table1, DatasetSizes};
use hyperlock::TrainConfig;

fn main() -> hyperlock::Result<()> {
    let sizes = if std::env::args().any(|a| a == "--paper-scale") {
        DatasetSizes::FULL
    } else {
        DatasetSizes::DESK
    };
    let report = run_table1(sizes, &TrainConfig::text_default(), 0, 1)?;
    println!("{:<22} {:>8} {:>10}", "configuration", "accuracy", "reference");
    for r in &report.rows {
        println!(
            "{:<22} {:>8.4} {:>10}",
            format!("{}x{} s{} P{}", r.rows, r.cols, r.sigma, r.p_on),
            r.metric.unwrap_or(f64::NAN),
            r.reference.map(|x| format!("{x:.4}")).unwrap_or_default()
        );
    }
    Ok(())
}

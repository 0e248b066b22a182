//! Sweep hypervector size against read noise and write the report.

use hyperlock::experiment::{run_grid, DatasetSizes, ExperimentSpec};

fn main() -> hyperlock::Result<()> {
    let mut spec = ExperimentSpec::text_grid();
    spec.multipliers = vec![5, 10, 25];
    spec.sigmas = vec![0.2, 0.5];
    spec.sizes = DatasetSizes { train: 4_000, val: 1_000, test: 2_000 };
    spec.uniqueness_passes = 50;
    let jobs = std::thread::available_parallelism().map_or(1, |n| n.get());

    let report = run_grid(&spec, jobs)?;
    print!("{}", report.to_csv(false)?);

    let dir = std::env::temp_dir().join("hyperlock-grid");
    report.write_dir(&dir)?;
    println!("report.csv and report.json written to {}", dir.display());
    Ok(())
}

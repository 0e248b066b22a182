//! Analog vector-matrix multiply on a simulated crossbar.
//!
//! Reads the same input twice to show per-read noise, and compares a clean
//! device with one that has stuck cells.

use hyperlock::{Crossbar, CrossbarConfig};
use hyperlock::seed;
use hyperlock::xbar::Cell;

fn main() -> hyperlock::Result<()> {
    let cfg = CrossbarConfig {
        rows: 4,
        cols: 8,
        r_lrs: 1e3,
        r_hrs: 10e3,
        sigma_frac: 0.1,
        p_stuck_on: 0.1,
        p_stuck_off: 0.1,
        seed: 42,
    };
    let xbar = Crossbar::new_random(cfg.clone())?;
    println!("G_on = {:.1e} S, G_off = {:.1e} S", cfg.g_on(), cfg.g_off());

    println!("stuck map (N = stuck on, F = stuck off):");
    for r in 0..xbar.rows() {
        let line: String = (0..xbar.cols())
            .map(|c| match xbar.stuck_mask()[r * xbar.cols() + c] {
                Cell::Free => '.',
                Cell::StuckOn => 'N',
                Cell::StuckOff => 'F',
            })
            .collect();
        println!("  {line}");
    }

    let v = [0.3, -0.7, 1.0, 0.2];
    let mut rng = seed::stream(7);
    for pass in 0..2 {
        let i = xbar.read_vmm(&v, &mut rng)?;
        let shown: Vec<String> = i.iter().map(|x| format!("{:+.3e}", x)).collect();
        println!("read {pass}: {}", shown.join(" "));
    }

    let quiet = Crossbar::new_random(CrossbarConfig { sigma_frac: 0.0, ..cfg })?;
    let a = quiet.read_vmm(&v, &mut rng)?;
    let b = quiet.read_vmm(&v, &mut rng)?;
    println!("noise-free reads repeat exactly: {}", a == b);
    Ok(())
}

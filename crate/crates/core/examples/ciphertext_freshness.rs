//! Encrypting the same character repeatedly never yields the same block.

use hyperlock::text::{calibrate_epsilon, uniqueness_stats, SecretKeyTable};
use hyperlock::{seed, Crossbar, CrossbarConfig};

fn main() -> hyperlock::Result<()> {
    let xbar = Crossbar::new_random(CrossbarConfig {
        rows: 10,
        cols: 500,
        r_lrs: 1e3,
        r_hrs: 10e3,
        sigma_frac: 0.1,
        p_stuck_on: 0.02,
        p_stuck_off: 0.02,
        seed: 3,
    })?;
    let keys = SecretKeyTable::generate(10, 4)?;
    let mut rng = seed::stream(5);
    let eps = calibrate_epsilon(&keys, &xbar, 20, &mut rng)?;

    for ch in ['A', 'B', 'C', 'D', 'E'] {
        let u = uniqueness_stats(ch, 200, &keys, &xbar, eps, &mut rng)?;
        println!(
            "{ch}: {}/{} distinct, mean pairwise hamming {:.4}",
            u.distinct_count, u.passes, u.mean_pairwise_hamming
        );
    }
    Ok(())
}

//! Reconstruct MNIST digits through noisy encoders, with and without
//! hypervector expansion.
//!
//! `cargo run --release --example image_robustness -- 0,2` picks the
//! noise levels. The defaults train on a reduced split to finish quickly.

use hyperlock::commands::MNIST_IMAGES;
use hyperlock::experiment::{run_image_comparison, ImageSweep};
use hyperlock::image::load_idx_images;

fn main() -> hyperlock::Result<()> {
    let sigmas = std::env::args()
        .nth(1)
        .map(|s| s.split(',').map(|x| x.parse().expect("sigma list")).collect())
        .unwrap_or_else(|| vec![0.0, 2.0]);
    let images = load_idx_images(MNIST_IMAGES)?;

    let mut sweep = ImageSweep { sigmas, ..ImageSweep::desk() };
    sweep.train = 500;
    sweep.val = 150;
    sweep.test = 150;
    sweep.bhv_train.max_epochs = 60;
    sweep.benchmark_train.max_epochs = 60;

    println!("{:>6} {:>10} {:>10}", "sigma", "bhv", "benchmark");
    for r in run_image_comparison(&images, &sweep, 1)? {
        println!("{:>6} {:>10.4} {:>10.4}", r.sigma, r.bhv_rmse, r.benchmark_rmse);
    }
    Ok(())
}

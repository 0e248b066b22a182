//! Encrypt the bundled grayscale image and measure neighbour correlation
//! at each stage.

use hyperlock::commands::CAMERA_PGM;
use hyperlock::image::{calibrate_image_epsilon, EncryptionStages, GrayImage};
use hyperlock::{seed, IdealEncoder};

fn main() -> hyperlock::Result<()> {
    let img = GrayImage::read_pgm(CAMERA_PGM)?;
    let k = img.pixels().len();
    let enc = IdealEncoder::uniform_lazy(k, 4 * k, 2.0, 0.0, 11)?;
    let mut rng = seed::stream(12);
    let eps = calibrate_image_epsilon(&enc, std::slice::from_ref(&img), &mut rng)?;
    let stages = EncryptionStages::capture(&img, &enc.with_epsilon(eps), &mut rng)?;

    for row in stages.statistics() {
        println!("{:<9} {:<10} r = {:+.4}", row.stage, row.direction.name(), row.r);
    }

    let dir = std::env::temp_dir().join("hyperlock-image");
    std::fs::create_dir_all(&dir)?;
    stages.bits_image()?.write_pgm(dir.join("binarized.pgm"))?;
    println!("binarized image written to {}", dir.join("binarized.pgm").display());
    Ok(())
}

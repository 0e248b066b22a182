//! Expanding a short vector into a binary hypervector.
//!
//! The threshold is the median pre-threshold output, so bits come out
//! roughly half ones. Encodings of one input drift apart with noise but stay
//! far closer to each other than to a different input.

use hyperlock::encoder::{calibrate_epsilon, encode_ideal};
use hyperlock::{seed, BinaryHypervector, HyperEncoder, IdealEncoder};

fn main() -> hyperlock::Result<()> {
    let (k, m) = (10, 100);
    let mut rng = seed::stream(1);
    let inputs: Vec<Vec<f64>> = (0..50)
        .map(|_| (0..k).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect())
        .collect();

    for sigma in [0.0, 0.2, 0.5] {
        let enc = IdealEncoder::uniform(k, k * m, 1.0, sigma, 9)?;
        let eps = calibrate_epsilon(&inputs, |x| enc.project(x, &mut rng))?;
        let enc = enc.with_epsilon(eps);

        let a1 = encode_ideal(&enc, &inputs[0], &mut rng)?;
        let a2 = encode_ideal(&enc, &inputs[0], &mut rng)?;
        let b = encode_ideal(&enc, &inputs[1], &mut rng)?;
        let d = k * m;
        println!(
            "sigma {sigma:.1}: ones {:.3}, same input {:.3}, different input {:.3}",
            a1.popcount() as f64 / d as f64,
            a1.hamming(&a2)? as f64 / d as f64,
            a1.hamming(&b)? as f64 / d as f64,
        );

        let wire = a1.to_bytes();
        assert_eq!(BinaryHypervector::from_bytes(&wire)?, a1);
    }
    println!("a {}-bit hypervector packs into {} bytes on the wire", k * m, BinaryHypervector::zeros(k * m).to_bytes().len());
    Ok(())
}

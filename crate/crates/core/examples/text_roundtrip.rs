//! Generate a crossbar and keys, train a decoder, then encrypt and decrypt.
//!
//! `cargo run --release --example text_roundtrip -- "some message"`

use hyperlock::experiment::{run_text_cell, DatasetSizes};
use hyperlock::text::{decrypt_text, encrypt_text, CipherText};
use hyperlock::{seed, CrossbarConfig, TrainConfig};

fn main() -> hyperlock::Result<()> {
    let message = std::env::args().nth(1).unwrap_or_else(|| "Meet at the old bridge, 9pm.".into());
    let cfg = CrossbarConfig {
        rows: 10,
        cols: 500,
        r_lrs: 1e3,
        r_hrs: 10e3,
        sigma_frac: 0.1,
        p_stuck_on: 0.02,
        p_stuck_off: 0.02,
        seed: 0,
    };
    let sizes = DatasetSizes { train: 10_000, val: 2_000, test: 5_000 };
    let run = run_text_cell(&cfg, sizes, &TrainConfig::text_default(), 2024)?;
    println!("decoder test accuracy: {:.4}", run.test_accuracy);

    let mut rng = seed::stream(99);
    let ct = encrypt_text(&message, &run.keys, &run.crossbar, run.model.epsilon, &mut rng)?;
    let bytes = ct.to_bytes();
    println!("{} characters -> {} ciphertext bytes", message.chars().count(), bytes.len());

    let back = decrypt_text(&CipherText::from_bytes(&bytes)?, &run.model.decoder)?;
    println!("decrypted: {back}");
    Ok(())
}

//! Compare analytic decoder gradients against central differences.

use hyperlock::decoder::grad_check;
use hyperlock::{Head, LinearDecoder};

fn main() -> hyperlock::Result<()> {
    let x: Vec<f64> = (0..20).map(|i| ((i * 7 % 11) as f64 - 5.0) / 5.0).collect();

    let clf = LinearDecoder::new(20, 6, Head::SoftmaxClassifier, 1)?;
    let err = grad_check(&clf, &x, &3usize, 1e-5)?;
    println!("softmax head: max relative error {err:.2e}");

    let reg = LinearDecoder::new(20, 6, Head::Regression, 2)?;
    let target = vec![0.1, 0.9, 0.5, 0.0, 0.3, 0.7];
    let err = grad_check(&reg, &x, &target, 1e-5)?;
    println!("regression head: max relative error {err:.2e}");
    Ok(())
}

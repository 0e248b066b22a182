//! Character-level encryption through the crossbar.
//!
//! Each character owns a secret vector of length `k`. Encryption reads the
//! crossbar with that vector as input voltages and thresholds the bit-line
//! currents; every character is encrypted independently, with fresh read
//! noise. Decryption is an argmax over a trained softmax decoder.
//!
//! The character set is printable ASCII from `' '` (32) through `'}'` (125):
//! 94 classes, class index = code point - 32. `'~'` (126) is not encodable.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::decoder::{Head, LinearDecoder};
use crate::encoder::{encode_crossbar, HyperEncoder};
use crate::error::{check_len, Error, Result};
use crate::hv::{read_exact_at, BinaryHypervector};
use crate::seed;
use crate::xbar::Crossbar;

pub const NUM_CLASSES: usize = 94;
const FIRST: u32 = 32;

pub const HLCT_MAGIC: &[u8; 4] = b"HLCT";
const KEYS_FORMAT: &str = "hyperlock.keys";
const KEYS_VERSION: u32 = 1;

pub fn class_of(ch: char) -> Option<usize> {
    let c = ch as u32;
    (FIRST..FIRST + NUM_CLASSES as u32)
        .contains(&c)
        .then(|| (c - FIRST) as usize)
}

pub fn char_of(class: usize) -> Option<char> {
    (class < NUM_CLASSES).then(|| char::from_u32(FIRST + class as u32).expect("ascii"))
}

pub fn charset() -> impl Iterator<Item = char> {
    (0..NUM_CLASSES).map(|c| char_of(c).expect("in range"))
}

/// Map every character of `text` to its class, rejecting the first
/// character outside the set.
pub fn classes_of(text: &str) -> Result<Vec<usize>> {
    text.chars()
        .enumerate()
        .map(|(index, ch)| class_of(ch).ok_or(Error::Charset { index, ch }))
        .collect()
}

/// Per-character secret vectors, entries i.i.d. uniform in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SecretKeyTable {
    key_dim: usize,
    seed: u64,
    vectors: Vec<Vec<f64>>,
}

impl SecretKeyTable {
    pub fn generate(key_dim: usize, seed: u64) -> Result<Self> {
        if key_dim == 0 {
            return Err(Error::config("key_dim", "must be at least 1"));
        }
        let mut rng = seed::stream(seed::derive(seed, "keys"));
        let vectors: Vec<Vec<f64>> = (0..NUM_CLASSES)
            .map(|_| (0..key_dim).map(|_| rng.random_range(-1.0..=1.0)).collect())
            .collect();
        let table = SecretKeyTable {
            key_dim,
            seed,
            vectors,
        };
        table.check_distinct()?;
        Ok(table)
    }

    fn check_distinct(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for (class, v) in self.vectors.iter().enumerate() {
            let bits: Vec<u64> = v.iter().map(|x| x.to_bits()).collect();
            if !seen.insert(bits) {
                return Err(Error::config(
                    "vectors",
                    format!("secret vector of class {class} duplicates another class"),
                ));
            }
        }
        Ok(())
    }

    pub fn key_dim(&self) -> usize {
        self.key_dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn by_class(&self, class: usize) -> &[f64] {
        &self.vectors[class]
    }

    pub fn vector(&self, ch: char) -> Option<&[f64]> {
        class_of(ch).map(|c| self.by_class(c))
    }

    pub fn to_json(&self) -> Result<String> {
        let vectors: BTreeMap<String, Vec<f64>> = self
            .vectors
            .iter()
            .enumerate()
            .map(|(c, v)| (char_of(c).expect("class").to_string(), v.clone()))
            .collect();
        let doc = KeysDoc {
            format: KEYS_FORMAT.to_string(),
            version: KEYS_VERSION,
            key_dim: self.key_dim,
            seed: self.seed,
            vectors,
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: KeysDoc = serde_json::from_str(text)?;
        if doc.format != KEYS_FORMAT || doc.version != KEYS_VERSION {
            return Err(Error::format(
                0,
                format!("expected {KEYS_FORMAT} v{KEYS_VERSION}, found {} v{}", doc.format, doc.version),
            ));
        }
        if doc.key_dim == 0 {
            return Err(Error::config("key_dim", "must be at least 1"));
        }
        check_len("key table size", NUM_CLASSES, doc.vectors.len())?;
        let mut vectors = vec![Vec::new(); NUM_CLASSES];
        for (key, v) in doc.vectors {
            let mut chars = key.chars();
            let class = match (chars.next(), chars.next()) {
                (Some(ch), None) => class_of(ch),
                _ => None,
            }
            .ok_or_else(|| Error::format(0, format!("key {key:?} is not a single charset character")))?;
            check_len("secret vector", doc.key_dim, v.len())?;
            if v.iter().any(|x| !(-1.0..=1.0).contains(x)) {
                return Err(Error::format(0, format!("secret vector for {key:?} leaves [-1, 1]")));
            }
            vectors[class] = v;
        }
        let table = SecretKeyTable {
            key_dim: doc.key_dim,
            seed: doc.seed,
            vectors,
        };
        table.check_distinct()?;
        Ok(table)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct KeysDoc {
    format: String,
    version: u32,
    key_dim: usize,
    seed: u64,
    vectors: BTreeMap<String, Vec<f64>>,
}

/// One hypervector block per plaintext character, all of dimension `dim`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CipherText {
    dim: usize,
    blocks: Vec<BinaryHypervector>,
}

impl CipherText {
    pub fn new(dim: usize, blocks: Vec<BinaryHypervector>) -> Result<Self> {
        for b in &blocks {
            check_len("ciphertext block", dim, b.dim())?;
        }
        Ok(CipherText { dim, blocks })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn blocks(&self) -> &[BinaryHypervector] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// `HLCT` layout: magic, u64 LE block count, u64 LE dim, then each block's
    /// packed bits (`ceil(dim / 8)` bytes, no per-block header).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + self.blocks.len() * self.dim.div_ceil(8));
        out.extend_from_slice(HLCT_MAGIC);
        out.extend_from_slice(&(self.blocks.len() as u64).to_le_bytes());
        out.extend_from_slice(&(self.dim as u64).to_le_bytes());
        for b in &self.blocks {
            out.extend_from_slice(&b.packed_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut reader = bytes;
        let ct = Self::read_from(&mut reader)?;
        if !reader.is_empty() {
            return Err(Error::format(
                (bytes.len() - reader.len()) as u64,
                "trailing bytes after final block",
            ));
        }
        Ok(ct)
    }

    pub fn read_from<R: Read>(reader: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact_at(reader, &mut magic, 0)?;
        if &magic != HLCT_MAGIC {
            return Err(Error::format(0, "bad magic, expected HLCT"));
        }
        let mut word = [0u8; 8];
        read_exact_at(reader, &mut word, 4)?;
        let count = u64::from_le_bytes(word);
        read_exact_at(reader, &mut word, 12)?;
        let dim = usize::try_from(u64::from_le_bytes(word))
            .map_err(|_| Error::format(12, "dimension does not fit in memory"))?;
        if dim == 0 && count > 0 {
            return Err(Error::format(12, "zero dimension with nonempty block list"));
        }
        let block_bytes = dim.div_ceil(8);
        let mut blocks = Vec::new();
        let mut buf = vec![0u8; block_bytes];
        let mut offset = 20u64;
        for _ in 0..count {
            read_exact_at(reader, &mut buf, offset)?;
            blocks.push(BinaryHypervector::from_packed_bytes(dim, &buf, offset)?);
            offset += block_bytes as u64;
        }
        Ok(CipherText { dim, blocks })
    }

    pub fn write_to<W: Write>(&self, writer: &mut W) -> Result<()> {
        writer.write_all(&self.to_bytes())?;
        Ok(())
    }
}

fn check_keys_fit(keys: &SecretKeyTable, xbar: &Crossbar) -> Result<()> {
    check_len("secret key dimension vs crossbar rows", xbar.rows(), keys.key_dim())
}

/// Encrypt `text` one character at a time, in order.
pub fn encrypt_text<R: Rng + ?Sized>(
    text: &str,
    keys: &SecretKeyTable,
    xbar: &Crossbar,
    epsilon: f64,
    rng: &mut R,
) -> Result<CipherText> {
    check_keys_fit(keys, xbar)?;
    let classes = classes_of(text)?;
    let blocks = classes
        .into_iter()
        .map(|c| encode_crossbar(xbar, keys.by_class(c), epsilon, rng))
        .collect::<Result<Vec<_>>>()?;
    CipherText::new(xbar.cols(), blocks)
}

fn check_text_decoder(model: &LinearDecoder, dim: usize) -> Result<()> {
    if model.head() != Head::SoftmaxClassifier {
        return Err(Error::config("head", "text decryption needs a softmax classifier"));
    }
    check_len("decoder classes", NUM_CLASSES, model.out_dim())?;
    check_len("decoder width vs ciphertext dim", model.in_dim(), dim)
}

/// Decrypt each block independently to its argmax character.
pub fn decrypt_text(ct: &CipherText, model: &LinearDecoder) -> Result<String> {
    check_text_decoder(model, ct.dim())?;
    ct.blocks()
        .iter()
        .map(|b| Ok(char_of(model.predict_class(b)?).expect("class in range")))
        .collect()
}

/// `n` uniformly random characters, each encrypted once, labelled by class.
pub fn build_dataset<R: Rng + ?Sized>(
    n: usize,
    keys: &SecretKeyTable,
    xbar: &Crossbar,
    epsilon: f64,
    rng: &mut R,
) -> Result<Vec<(BinaryHypervector, usize)>> {
    if n == 0 {
        return Err(Error::config("n", "dataset size must be at least 1"));
    }
    check_keys_fit(keys, xbar)?;
    (0..n)
        .map(|_| {
            let class = rng.random_range(0..NUM_CLASSES);
            Ok((encode_crossbar(xbar, keys.by_class(class), epsilon, rng)?, class))
        })
        .collect()
}

/// Fraction of test blocks whose argmax class matches the label.
pub fn evaluate_accuracy(model: &LinearDecoder, test_set: &[(BinaryHypervector, usize)]) -> Result<f64> {
    if test_set.is_empty() {
        return Err(Error::Empty("test set"));
    }
    check_text_decoder(model, test_set[0].0.dim())?;
    let mut correct = 0usize;
    for (x, label) in test_set {
        if model.predict_class(x)? == *label {
            correct += 1;
        }
    }
    Ok(correct as f64 / test_set.len() as f64)
}

/// Threshold at the median crossbar output over `passes` noisy reads of
/// every secret vector.
pub fn calibrate_epsilon<R: Rng + ?Sized>(
    keys: &SecretKeyTable,
    xbar: &Crossbar,
    passes: usize,
    rng: &mut R,
) -> Result<f64> {
    check_keys_fit(keys, xbar)?;
    if passes == 0 {
        return Err(Error::Empty("calibration passes"));
    }
    let samples: Vec<&[f64]> = (0..passes)
        .flat_map(|_| (0..NUM_CLASSES).map(|c| keys.by_class(c)))
        .collect();
    crate::encoder::calibrate_epsilon(&samples, |x| xbar.project(x, rng))
}

/// Ciphertext freshness over repeated encryptions of one character.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Uniqueness {
    pub passes: usize,
    pub distinct_count: usize,
    pub distinct_fraction: f64,
    /// Mean Hamming distance over all unordered pairs, divided by `dim`.
    pub mean_pairwise_hamming: f64,
}

pub fn uniqueness_of(blocks: &[BinaryHypervector]) -> Result<Uniqueness> {
    if blocks.len() < 2 {
        return Err(Error::config("n_passes", "need at least 2 passes"));
    }
    let dim = blocks[0].dim();
    let distinct: HashSet<&BinaryHypervector> = blocks.iter().collect();
    let mut total = 0usize;
    for (i, a) in blocks.iter().enumerate() {
        for b in &blocks[i + 1..] {
            total += a.hamming(b)?;
        }
    }
    let pairs = blocks.len() * (blocks.len() - 1) / 2;
    Ok(Uniqueness {
        passes: blocks.len(),
        distinct_count: distinct.len(),
        distinct_fraction: distinct.len() as f64 / blocks.len() as f64,
        mean_pairwise_hamming: total as f64 / (pairs as f64 * dim as f64),
    })
}

/// Encrypt `ch` `n_passes` times and measure how different the blocks are.
pub fn uniqueness_stats<R: Rng + ?Sized>(
    ch: char,
    n_passes: usize,
    keys: &SecretKeyTable,
    xbar: &Crossbar,
    epsilon: f64,
    rng: &mut R,
) -> Result<Uniqueness> {
    if n_passes < 2 {
        return Err(Error::config("n_passes", "need at least 2 passes"));
    }
    let class = class_of(ch).ok_or(Error::Charset { index: 0, ch })?;
    check_keys_fit(keys, xbar)?;
    let blocks = (0..n_passes)
        .map(|_| encode_crossbar(xbar, keys.by_class(class), epsilon, rng))
        .collect::<Result<Vec<_>>>()?;
    uniqueness_of(&blocks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::xbar::CrossbarConfig;

    fn xbar(rows: usize, cols: usize, sigma: f64) -> Crossbar {
        Crossbar::new_random(CrossbarConfig {
            rows,
            cols,
            r_lrs: 1e3,
            r_hrs: 10e3,
            sigma_frac: sigma,
            p_stuck_on: 0.0,
            p_stuck_off: 0.0,
            seed: 5,
        })
        .unwrap()
    }

    #[test]
    fn charset_has_94_classes_and_skips_tilde() {
        assert_eq!(charset().count(), 94);
        assert_eq!(class_of(' '), Some(0));
        assert_eq!(class_of('}'), Some(93));
        assert_eq!(class_of('~'), None);
        assert_eq!(class_of('\n'), None);
        assert_eq!(char_of(33), Some('A'));
        assert_eq!(char_of(94), None);
    }

    #[test]
    fn keys_are_deterministic_and_bounded() {
        let a = SecretKeyTable::generate(10, 3).unwrap();
        let b = SecretKeyTable::generate(10, 3).unwrap();
        let c = SecretKeyTable::generate(10, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!((0..NUM_CLASSES).all(|k| a.by_class(k).len() == 10));
        assert!((0..NUM_CLASSES).all(|k| a.by_class(k).iter().all(|x| x.abs() <= 1.0)));
        assert!(SecretKeyTable::generate(0, 1).is_err());
    }

    #[test]
    fn key_entries_have_uniform_moments() {
        // U(-1, 1): mean 0, variance 1/3.
        let t = SecretKeyTable::generate(107, 12).unwrap();
        let all: Vec<f64> = (0..NUM_CLASSES).flat_map(|c| t.by_class(c).to_vec()).collect();
        assert!(all.len() >= 10_000);
        let n = all.len() as f64;
        let mean = all.iter().sum::<f64>() / n;
        let var = all.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.02, "{mean}");
        assert!((var - 1.0 / 3.0).abs() < 0.02, "{var}");
    }

    #[test]
    fn keys_json_round_trip() {
        let t = SecretKeyTable::generate(5, 9).unwrap();
        assert_eq!(SecretKeyTable::from_json(&t.to_json().unwrap()).unwrap(), t);
        let mut doc: serde_json::Value = serde_json::from_str(&t.to_json().unwrap()).unwrap();
        doc["vectors"]["A"] = serde_json::json!([0.0, 0.0, 0.0, 0.0, 3.0]);
        assert!(SecretKeyTable::from_json(&doc.to_string()).is_err());
    }

    #[test]
    fn empty_text_and_noiseless_repeat() {
        let x = xbar(10, 200, 0.0);
        let keys = SecretKeyTable::generate(10, 1).unwrap();
        let mut rng = x.read_stream(0);
        let empty = encrypt_text("", &keys, &x, 0.0, &mut rng).unwrap();
        assert!(empty.is_empty());
        assert_eq!(empty.dim(), 200);
        let ct = encrypt_text("AA", &keys, &x, 0.0, &mut rng).unwrap();
        assert_eq!(ct.blocks()[0], ct.blocks()[1]);
    }

    #[test]
    fn out_of_charset_character_is_rejected_by_index() {
        let x = xbar(4, 40, 0.0);
        let keys = SecretKeyTable::generate(4, 1).unwrap();
        let err = encrypt_text("ab~c", &keys, &x, 0.0, &mut x.read_stream(0)).unwrap_err();
        assert!(matches!(err, Error::Charset { index: 2, ch: '~' }));
    }

    #[test]
    fn key_dim_must_match_rows() {
        let x = xbar(4, 40, 0.0);
        let keys = SecretKeyTable::generate(5, 1).unwrap();
        assert!(encrypt_text("a", &keys, &x, 0.0, &mut x.read_stream(0)).is_err());
    }

    #[test]
    fn dataset_labels_in_range() {
        let x = xbar(10, 100, 0.1);
        let keys = SecretKeyTable::generate(10, 1).unwrap();
        let set = build_dataset(10, &keys, &x, 0.0, &mut x.read_stream(1)).unwrap();
        assert_eq!(set.len(), 10);
        assert!(set.iter().all(|(hv, c)| *c < NUM_CLASSES && hv.dim() == 100));
    }

    #[test]
    fn noiseless_uniqueness_collapses() {
        let x = xbar(10, 300, 0.0);
        let keys = SecretKeyTable::generate(10, 2).unwrap();
        let u = uniqueness_stats('A', 50, &keys, &x, 0.0, &mut x.read_stream(0)).unwrap();
        assert_eq!(u.distinct_count, 1);
        assert_eq!(u.mean_pairwise_hamming, 0.0);
        assert!(uniqueness_stats('A', 1, &keys, &x, 0.0, &mut x.read_stream(0)).is_err());
    }

    #[test]
    fn uniqueness_matches_unpacked_reference() {
        let x = xbar(10, 130, 0.3);
        let keys = SecretKeyTable::generate(10, 2).unwrap();
        let mut rng = x.read_stream(4);
        let eps = calibrate_epsilon(&keys, &x, 2, &mut rng).unwrap();
        let blocks: Vec<BinaryHypervector> = (0..40)
            .map(|_| encode_crossbar(&x, keys.by_class(33), eps, &mut rng).unwrap())
            .collect();
        let got = uniqueness_of(&blocks).unwrap();

        let bools: Vec<Vec<bool>> = blocks.iter().map(|b| b.to_bools()).collect();
        let mut distinct: Vec<&Vec<bool>> = Vec::new();
        for b in &bools {
            if !distinct.contains(&b) {
                distinct.push(b);
            }
        }
        let mut sum = 0usize;
        let mut pairs = 0usize;
        for i in 0..bools.len() {
            for j in i + 1..bools.len() {
                sum += bools[i].iter().zip(&bools[j]).filter(|(a, b)| a != b).count();
                pairs += 1;
            }
        }
        assert_eq!(got.distinct_count, distinct.len());
        let reference = sum as f64 / (pairs as f64 * 130.0);
        assert!((got.mean_pairwise_hamming - reference).abs() < 1e-12);
    }

    #[test]
    fn ciphertext_wire_format() {
        let x = xbar(3, 13, 0.2);
        let keys = SecretKeyTable::generate(3, 2).unwrap();
        let ct = encrypt_text("Hi!", &keys, &x, 0.0, &mut x.read_stream(0)).unwrap();
        let bytes = ct.to_bytes();
        assert_eq!(&bytes[..4], b"HLCT");
        assert_eq!(&bytes[4..12], &3u64.to_le_bytes());
        assert_eq!(&bytes[12..20], &13u64.to_le_bytes());
        assert_eq!(bytes.len(), 20 + 3 * 2);
        assert_eq!(CipherText::from_bytes(&bytes).unwrap(), ct);
        // truncated final block: block 2 starts at 24, one byte present
        assert!(matches!(
            CipherText::from_bytes(&bytes[..bytes.len() - 1]),
            Err(Error::Format { offset: 25, .. })
        ));
    }

    #[test]
    fn decrypt_checks_decoder_shape() {
        let ct = CipherText::new(20, vec![]).unwrap();
        let reg = LinearDecoder::zeros(20, 94, Head::Regression).unwrap();
        assert!(decrypt_text(&ct, &reg).is_err());
        let narrow = LinearDecoder::zeros(19, 94, Head::SoftmaxClassifier).unwrap();
        assert!(decrypt_text(&ct, &narrow).is_err());
        let ok = LinearDecoder::zeros(20, 94, Head::SoftmaxClassifier).unwrap();
        assert_eq!(decrypt_text(&ct, &ok).unwrap(), "");
    }

    #[test]
    fn constant_predictor_accuracy_near_chance() {
        let x = xbar(10, 64, 0.1);
        let keys = SecretKeyTable::generate(10, 1).unwrap();
        let set = build_dataset(20_000, &keys, &x, 0.0, &mut x.read_stream(2)).unwrap();
        let model = LinearDecoder::zeros(64, 94, Head::SoftmaxClassifier).unwrap();
        let acc = evaluate_accuracy(&model, &set).unwrap();
        assert!((acc - 1.0 / 94.0).abs() < 0.004, "{acc}");
    }
}

//! Image encryption through the idealized encoder, the unexpanded benchmark,
//! and pixel statistics of each encryption stage.
//!
//! An image is flattened row-major into `x` (pixels in `[0, 1]`), expanded
//! to `m * width * height` values by `(W + N) x` and thresholded. The
//! benchmark keeps `W` square and skips the threshold, so its decoder only
//! has to invert a noisy linear map.
//!
//! For statistics the expanded stage is laid out as an image `width` wide
//! and `m * height` tall.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::decoder::{DecoderInput, Head, LinearDecoder};
use crate::encoder::{add_row_noise, calibrate_epsilon, dot, project_rows, threshold_binarize, HyperEncoder, IdealEncoder};
use crate::error::{check_finite, check_len, Error, Result};
use crate::hv::BinaryHypervector;
use crate::seed;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Grayscale image, row-major, pixels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::config("image size", "width and height must be positive"));
        }
        check_len("image pixels", width * height, pixels.len())?;
        check_finite(&pixels)?;
        if let Some(i) = pixels.iter().position(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::config("pixels", format!("pixel {i} outside [0, 1]")));
        }
        Ok(GrayImage {
            width,
            height,
            pixels,
        })
    }

    pub fn from_u8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(width, height, bytes.iter().map(|&b| f64::from(b) / 255.0).collect())
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.pixels.iter().map(|p| (p * 255.0).round() as u8).collect()
    }

    /// Binary PGM (`P5`, maxval 255).
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.to_u8());
        out
    }

    pub fn parse_pgm(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
                if bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    pos += 1;
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
                pos += 1;
            }
            if start == pos {
                return Err(Error::format(pos as u64, "truncated PGM header"));
            }
            fields.push((start, std::str::from_utf8(&bytes[start..pos]).unwrap_or("")));
        }
        if fields[0].1 != "P5" {
            return Err(Error::format(0, "not a binary PGM (expected P5)"));
        }
        let number = |(at, s): (usize, &str)| {
            s.parse::<usize>()
                .map_err(|_| Error::format(at as u64, format!("bad PGM header field {s:?}")))
        };
        let width = number(fields[1])?;
        let height = number(fields[2])?;
        let maxval = number(fields[3])?;
        if maxval != 255 {
            return Err(Error::format(fields[3].0 as u64, "only maxval 255 is supported"));
        }
        // exactly one whitespace byte separates the header from the raster
        pos += 1;
        let need = width * height;
        if bytes.len() < pos + need {
            return Err(Error::format(
                bytes.len() as u64,
                format!("raster truncated: need {need} bytes after offset {pos}"),
            ));
        }
        Self::from_u8(width, height, &bytes[pos..pos + need])
    }

    pub fn read_pgm(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse_pgm(&fs::read(path)?)
    }

    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_pgm())?;
        Ok(())
    }
}

fn maybe_gunzip(bytes: Vec<u8>) -> Result<Vec<u8>> {
    if bytes.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&bytes[..]).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(bytes)
    }
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::format(bytes.len() as u64, "truncated IDX header"))
}

/// IDX image file (magic `0x00000803`), optionally gzip-compressed.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Vec<GrayImage>> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::format(0, format!("IDX image magic {magic:#010x}")));
    }
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let size = rows * cols;
    let need = 16 + count * size;
    if bytes.len() < need {
        return Err(Error::format(bytes.len() as u64, format!("IDX images truncated, need {need} bytes")));
    }
    bytes[16..need]
        .chunks(size)
        .map(|px| GrayImage::from_u8(cols, rows, px))
        .collect()
}

/// IDX label file (magic `0x00000801`), optionally gzip-compressed.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::format(0, format!("IDX label magic {magic:#010x}")));
    }
    let count = be_u32(bytes, 4)? as usize;
    if bytes.len() < 8 + count {
        return Err(Error::format(bytes.len() as u64, "IDX labels truncated"));
    }
    Ok(bytes[8..8 + count].to_vec())
}

pub fn load_idx_images(path: impl AsRef<Path>) -> Result<Vec<GrayImage>> {
    parse_idx_images(&maybe_gunzip(fs::read(path)?)?)
}

pub fn load_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    parse_idx_labels(&maybe_gunzip(fs::read(path)?)?)
}

/// Square, unthresholded baseline: `y = (W + N) x`.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkEncoder {
    dim: usize,
    w: Vec<f64>,
    sigma: f64,
}

impl BenchmarkEncoder {
    /// `W` uniform in `[-half_range, half_range)`.
    pub fn uniform(dim: usize, half_range: f64, sigma: f64, seed: u64) -> Result<Self> {
        let mut rng = seed::stream(seed::derive(seed, "benchmark/w"));
        if !(half_range.is_finite() && half_range > 0.0) {
            return Err(Error::config("half_range", "must be positive and finite"));
        }
        let w = (0..dim * dim).map(|_| rng.random_range(-half_range..half_range)).collect();
        Self::from_weights(dim, w, sigma)
    }

    pub fn from_weights(dim: usize, w: Vec<f64>, sigma: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("dim", "must be positive"));
        }
        check_len("benchmark weights", dim * dim, w.len())?;
        check_finite(&w)?;
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::config("sigma", "must be finite and nonnegative"));
        }
        Ok(BenchmarkEncoder { dim, w, sigma })
    }

    pub fn with_sigma(mut self, sigma: f64) -> Result<Self> {
        self = Self::from_weights(self.dim, self.w, sigma)?;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    fn clean(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("benchmark input", self.dim, x.len())?;
        check_finite(x)?;
        Ok(self.w.chunks(self.dim).map(|row| dot(row, x)).collect())
    }

    /// One noisy pass; see [`IdealEncoder`] for the per-row noise reduction.
    pub fn project<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        let y = self.clean(x)?;
        Ok(add_row_noise(vec![y], &[x], self.sigma, rng).pop().expect("one row"))
    }

    /// [`project`](Self::project) over many inputs as one GEMM, with the
    /// same noise draws as projecting them one at a time.
    pub fn project_batch<S: AsRef<[f64]>, R: Rng + ?Sized>(&self, xs: &[S], rng: &mut R) -> Result<Vec<Vec<f64>>> {
        let clean = project_rows(&self.w, self.dim, self.dim, xs)?;
        Ok(add_row_noise(clean, xs, self.sigma, rng))
    }

    /// `(W + N) x` for an explicit `dim x dim` noise matrix.
    pub fn project_with_noise(&self, x: &[f64], noise: &[f64]) -> Result<Vec<f64>> {
        check_len("benchmark noise", self.dim * self.dim, noise.len())?;
        let mut y = self.clean(x)?;
        for (v, row) in y.iter_mut().zip(noise.chunks(self.dim)) {
            *v += dot(row, x);
        }
        Ok(y)
    }
}

/// Flatten, project and threshold with the encoder's stored epsilon.
pub fn encrypt_image<R: Rng + ?Sized>(
    img: &GrayImage,
    enc: &IdealEncoder,
    rng: &mut R,
) -> Result<BinaryHypervector> {
    check_len("image size vs encoder input", enc.input_dim(), img.pixels.len())?;
    enc.encode(img.pixels(), enc.epsilon(), rng)
}

fn reconstruct(
    model: &LinearDecoder,
    x: &(impl DecoderInput + ?Sized),
    width: usize,
    height: usize,
) -> Result<GrayImage> {
    if model.head() != Head::Regression {
        return Err(Error::config("head", "image reconstruction needs a regression head"));
    }
    check_len("decoder outputs vs image size", width * height, model.out_dim())?;
    let pixels = model
        .forward(x)?
        .into_iter()
        .map(|p| p.clamp(0.0, 1.0))
        .collect();
    GrayImage::new(width, height, pixels)
}

/// Regression forward pass, clamped to `[0, 1]` and reshaped.
pub fn decrypt_image(
    bhv: &BinaryHypervector,
    model: &LinearDecoder,
    width: usize,
    height: usize,
) -> Result<GrayImage> {
    reconstruct(model, bhv, width, height)
}

pub fn benchmark_roundtrip<R: Rng + ?Sized>(
    img: &GrayImage,
    benc: &BenchmarkEncoder,
    model: &LinearDecoder,
    rng: &mut R,
) -> Result<GrayImage> {
    let y = benc.project(img.pixels(), rng)?;
    reconstruct(model, &y, img.width, img.height)
}

/// Median pre-threshold value over one pass of `images`.
pub fn calibrate_image_epsilon<R: Rng + ?Sized>(
    enc: &IdealEncoder,
    images: &[GrayImage],
    rng: &mut R,
) -> Result<f64> {
    let samples: Vec<&[f64]> = images.iter().map(|i| i.pixels()).collect();
    calibrate_epsilon(&samples, |x| enc.project(x, rng))
}

/// Encrypt each image once; targets are the flattened pixels.
pub fn encrypt_images<R: Rng + ?Sized>(
    images: &[GrayImage],
    enc: &IdealEncoder,
    rng: &mut R,
) -> Result<Vec<(BinaryHypervector, Vec<f64>)>> {
    let xs: Vec<&[f64]> = images.iter().map(|i| i.pixels()).collect();
    enc.project_batch(&xs, rng)?
        .iter()
        .zip(images)
        .map(|(y, img)| Ok((threshold_binarize(y, enc.epsilon())?, img.pixels.clone())))
        .collect()
}

/// Benchmark projections of each image; targets are the flattened pixels.
pub fn benchmark_pairs<R: Rng + ?Sized>(
    images: &[GrayImage],
    benc: &BenchmarkEncoder,
    rng: &mut R,
) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    let xs: Vec<&[f64]> = images.iter().map(|i| i.pixels()).collect();
    Ok(benc
        .project_batch(&xs, rng)?
        .into_iter()
        .zip(images)
        .map(|(y, img)| (y, img.pixels.clone()))
        .collect())
}

/// RMSE over every pixel of every example after clamping outputs to `[0, 1]`.
pub fn reconstruction_rmse<X: DecoderInput>(model: &LinearDecoder, set: &[(X, Vec<f64>)]) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::Empty("reconstruction set"));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (x, target) in set {
        let y = model.forward(x)?;
        check_len("reconstruction target", y.len(), target.len())?;
        for (p, t) in y.iter().zip(target) {
            let d = p.clamp(0.0, 1.0) - t;
            sum += d * d;
        }
        count += y.len();
    }
    Ok((sum / count as f64).sqrt())
}

/// Counts in `bins` equal-width bins over `[lo, hi]`; `hi` falls in the
/// last bin, values outside the range are clamped to the end bins.
pub fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Result<Vec<u64>> {
    if values.is_empty() {
        return Err(Error::Empty("histogram input"));
    }
    check_finite(values)?;
    if bins == 0 || hi.partial_cmp(&lo) != Some(std::cmp::Ordering::Greater) {
        return Err(Error::config("histogram range", "need bins > 0 and hi > lo"));
    }
    let mut counts = vec![0u64; bins];
    let width = (hi - lo) / bins as f64;
    for &v in values {
        let b = ((v - lo) / width).floor();
        let b = if b < 0.0 { 0 } else { (b as usize).min(bins - 1) };
        counts[b] += 1;
    }
    Ok(counts)
}

/// 256-bin histogram of 8-bit intensities.
pub fn pixel_histogram(img: &GrayImage) -> Vec<u64> {
    let mut counts = vec![0u64; 256];
    for v in img.to_u8() {
        counts[v as usize] += 1;
    }
    counts
}

/// 256-bin histogram of a real-valued stage over its own `[min, max]`.
/// A constant stage puts every count in bin 0.
pub fn real_stage_histogram(values: &[f64]) -> Result<Vec<u64>> {
    if values.is_empty() {
        return Err(Error::Empty("histogram input"));
    }
    check_finite(values)?;
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        histogram(values, lo, hi, 256)
    } else {
        let mut counts = vec![0u64; 256];
        counts[0] = values.len() as u64;
        Ok(counts)
    }
}

/// Zeros and ones of a binary stage.
pub fn binary_histogram(bhv: &BinaryHypervector) -> [u64; 2] {
    let ones = bhv.popcount() as u64;
    [bhv.dim() as u64 - ones, ones]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Horizontal,
    Vertical,
    Diagonal,
}

impl Direction {
    pub const ALL: [Direction; 3] = [Direction::Horizontal, Direction::Vertical, Direction::Diagonal];

    pub fn name(self) -> &'static str {
        match self {
            Direction::Horizontal => "horizontal",
            Direction::Vertical => "vertical",
            Direction::Diagonal => "diagonal",
        }
    }

    fn offset(self) -> (usize, usize) {
        match self {
            Direction::Horizontal => (1, 0),
            Direction::Vertical => (0, 1),
            Direction::Diagonal => (1, 1),
        }
    }
}

/// Index pairs `(p, q)` of every neighbour pair in `dir` on a
/// `width x height` row-major grid.
pub fn adjacent_pairs(width: usize, height: usize, dir: Direction) -> impl Iterator<Item = (usize, usize)> {
    let (dx, dy) = dir.offset();
    (0..height.saturating_sub(dy)).flat_map(move |y| {
        (0..width.saturating_sub(dx)).map(move |x| (y * width + x, (y + dy) * width + x + dx))
    })
}

/// Pearson correlation between each pixel and its neighbour in `dir`.
pub fn adjacent_pixel_correlation(values: &[f64], width: usize, height: usize, dir: Direction) -> Result<f64> {
    check_len("stage size", width * height, values.len())?;
    check_finite(values)?;
    let pairs: Vec<(f64, f64)> = adjacent_pairs(width, height, dir)
        .map(|(p, q)| (values[p], values[q]))
        .collect();
    if pairs.len() < 2 {
        return Err(Error::Degenerate(format!(
            "fewer than 2 {} pairs in a {width}x{height} grid",
            dir.name()
        )));
    }
    if pairs.iter().all(|p| p.0 == pairs[0].0) || pairs.iter().all(|p| p.1 == pairs[0].1) {
        return Err(Error::Degenerate(format!("constant values in {} pairs", dir.name())));
    }
    let n = pairs.len() as f64;
    let ma = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let mb = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (a, b) in &pairs {
        sab += (a - ma) * (b - mb);
        saa += (a - ma) * (a - ma);
        sbb += (b - mb) * (b - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Degenerate(format!("zero variance in {} pairs", dir.name())));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Counts of neighbour pairs `(0,0), (0,1), (1,0), (1,1)` in a binary stage.
pub fn adjacent_pair_counts(bhv: &BinaryHypervector, width: usize, height: usize, dir: Direction) -> Result<[u64; 4]> {
    check_len("stage size", width * height, bhv.dim())?;
    let mut counts = [0u64; 4];
    for (p, q) in adjacent_pairs(width, height, dir) {
        counts[(usize::from(bhv.get(p)) << 1) | usize::from(bhv.get(q))] += 1;
    }
    Ok(counts)
}

/// Neighbour statistics of one stage in one direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsRow {
    pub stage: String,
    pub direction: Direction,
    pub r: f64,
    pub pair_counts: Option<[u64; 4]>,
}

/// The three stages of one image encryption pass.
#[derive(Debug, Clone)]
pub struct EncryptionStages {
    pub original: GrayImage,
    /// Pre-threshold expansion, laid out `width x (m * height)`.
    pub expanded: Vec<f64>,
    pub bits: BinaryHypervector,
    pub stage_width: usize,
    pub stage_height: usize,
}

impl EncryptionStages {
    pub fn capture<R: Rng + ?Sized>(img: &GrayImage, enc: &IdealEncoder, rng: &mut R) -> Result<Self> {
        let k = img.pixels.len();
        check_len("image size vs encoder input", enc.input_dim(), k)?;
        if !enc.output_dim().is_multiple_of(k) {
            return Err(Error::config("output_dim", "must be a multiple of the pixel count"));
        }
        let expanded = enc.project(img.pixels(), rng)?;
        let bits = crate::encoder::threshold_binarize(&expanded, enc.epsilon())?;
        Ok(EncryptionStages {
            original: img.clone(),
            stage_width: img.width,
            stage_height: img.height * (enc.output_dim() / k),
            expanded,
            bits,
        })
    }

    /// Pre-threshold stage min-max scaled to `[0, 1]`, for viewing.
    pub fn expanded_image(&self) -> Result<GrayImage> {
        let lo = self.expanded.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.expanded.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        GrayImage::new(
            self.stage_width,
            self.stage_height,
            self.expanded.iter().map(|v| ((v - lo) / span).clamp(0.0, 1.0)).collect(),
        )
    }

    pub fn bits_image(&self) -> Result<GrayImage> {
        GrayImage::new(self.stage_width, self.stage_height, self.bits.to_f64())
    }

    /// Correlation rows for every stage and direction. Degenerate stages
    /// (zero variance) are reported with `r = NaN` rather than failing.
    pub fn statistics(&self) -> Vec<StatsRow> {
        let mut rows = Vec::new();
        let ow = self.original.width;
        let oh = self.original.height;
        let sw = self.stage_width;
        let sh = self.stage_height;
        let bits = self.bits.to_f64();
        for dir in Direction::ALL {
            let r = |v: &[f64], w, h| adjacent_pixel_correlation(v, w, h, dir).unwrap_or(f64::NAN);
            rows.push(StatsRow {
                stage: "original".into(),
                direction: dir,
                r: r(self.original.pixels(), ow, oh),
                pair_counts: None,
            });
            rows.push(StatsRow {
                stage: "expanded".into(),
                direction: dir,
                r: r(&self.expanded, sw, sh),
                pair_counts: None,
            });
            rows.push(StatsRow {
                stage: "binarized".into(),
                direction: dir,
                r: r(&bits, sw, sh),
                pair_counts: adjacent_pair_counts(&self.bits, sw, sh, dir).ok(),
            });
        }
        rows
    }
}

/// CSV with columns `stage,direction,r,n00,n01,n10,n11`.
pub fn write_stats_csv<W: Write>(rows: &[StatsRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["stage", "direction", "r", "n00", "n01", "n10", "n11"])?;
    for row in rows {
        let counts: Vec<String> = match row.pair_counts {
            Some(c) => c.iter().map(u64::to_string).collect(),
            None => vec![String::new(); 4],
        };
        let mut record = vec![row.stage.clone(), row.direction.name().to_string(), format!("{:.6}", row.r)];
        record.extend(counts);
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> seed::Stream {
        seed::Stream::seed_from_u64(seed)
    }

    #[test]
    fn pgm_round_trip_and_comments() {
        let img = GrayImage::from_u8(3, 2, &[0, 128, 255, 7, 8, 9]).unwrap();
        assert_eq!(GrayImage::parse_pgm(&img.to_pgm()).unwrap(), img);
        let mut with_comment = b"P5\n# made by hand\n3 2\n255\n".to_vec();
        with_comment.extend([0, 128, 255, 7, 8, 9]);
        assert_eq!(GrayImage::parse_pgm(&with_comment).unwrap(), img);
        assert!(GrayImage::parse_pgm(b"P2\n3 2\n255\n").is_err());
        assert!(GrayImage::parse_pgm(&img.to_pgm()[..14]).is_err());
    }

    #[test]
    fn idx_parsing() {
        let mut bytes = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2];
        bytes.extend([0, 255, 255, 0, 10, 20, 30, 40]);
        let imgs = parse_idx_images(&bytes).unwrap();
        assert_eq!(imgs.len(), 2);
        assert_eq!(imgs[0].get(1, 0), 1.0);
        assert!(parse_idx_images(&bytes[..20]).is_err());
        let labels = parse_idx_labels(&[0, 0, 8, 1, 0, 0, 0, 3, 7, 1, 9]).unwrap();
        assert_eq!(labels, vec![7, 1, 9]);
        assert!(parse_idx_labels(&[0, 0, 8, 3, 0, 0, 0, 0]).is_err());
    }

    #[test]
    fn pixels_must_be_normalized() {
        assert!(GrayImage::new(1, 2, vec![0.5, 1.5]).is_err());
        assert!(GrayImage::new(1, 2, vec![0.5]).is_err());
    }

    #[test]
    fn zero_image_encrypts_to_threshold_of_zero() {
        let img = GrayImage::filled(4, 4, 0.0).unwrap();
        let enc = IdealEncoder::uniform(16, 64, 2.0, 5.0, 1).unwrap();
        let below = encrypt_image(&img, &enc.clone().with_epsilon(0.1), &mut rng(1)).unwrap();
        assert_eq!(below.popcount(), 0);
        let at = encrypt_image(&img, &enc.with_epsilon(0.0), &mut rng(2)).unwrap();
        assert_eq!(at.popcount(), 64);
    }

    #[test]
    fn mnist_sized_expansion() {
        let img = GrayImage::filled(28, 28, 0.5).unwrap();
        let enc = IdealEncoder::uniform_lazy(784, 784 * 3, 2.0, 0.0, 1).unwrap();
        assert_eq!(encrypt_image(&img, &enc, &mut rng(0)).unwrap().dim(), 2352);
    }

    #[test]
    fn hand_two_by_two_image() {
        let img = GrayImage::new(2, 2, vec![1.0, 0.0, 0.5, 0.25]).unwrap();
        let w: Vec<f64> = (0..32).map(|i| if i % 3 == 0 { 1.0 } else { -0.5 }).collect();
        let enc = IdealEncoder::from_weights(4, 8, w.clone(), 0.0).unwrap().with_epsilon(0.0);
        let bits = encrypt_image(&img, &enc, &mut rng(0)).unwrap();
        for j in 0..8 {
            let y: f64 = (0..4).map(|i| w[j * 4 + i] * img.pixels()[i]).sum();
            assert_eq!(bits.get(j), y >= 0.0, "bit {j}");
        }
    }

    #[test]
    fn gray_model_decrypts_to_gray() {
        let mut model = LinearDecoder::zeros(16, 4, Head::Regression).unwrap();
        for o in 0..4 {
            model.set_bias(o, 0.5);
        }
        let img = decrypt_image(&BinaryHypervector::zeros(16), &model, 2, 2).unwrap();
        assert!(img.pixels().iter().all(|&p| p == 0.5));
        assert!(decrypt_image(&BinaryHypervector::zeros(16), &model, 4, 4).is_err());
    }

    #[test]
    fn benchmark_exact_inverse_reconstructs() {
        // W = [[2, 1], [1, 1]], inverse [[1, -1], [-1, 2]]
        let benc = BenchmarkEncoder::from_weights(2, vec![2.0, 1.0, 1.0, 1.0], 0.0).unwrap();
        let inv = LinearDecoder::from_parts(2, 2, Head::Regression, &[1.0, -1.0, -1.0, 2.0], vec![0.0; 2]).unwrap();
        let img = GrayImage::new(2, 1, vec![0.3, 0.8]).unwrap();
        let out = benchmark_roundtrip(&img, &benc, &inv, &mut rng(0)).unwrap();
        let err = crate::decoder::loss_rmse(out.pixels(), img.pixels()).unwrap();
        assert!(err < 1e-6);
    }

    #[test]
    fn benchmark_noise_matches_arithmetic() {
        let mut r = rng(3);
        let w: Vec<f64> = (0..16).map(|_| r.random_range(-2.0..2.0)).collect();
        let n: Vec<f64> = (0..16).map(|_| r.random_range(-1.0..1.0)).collect();
        let benc = BenchmarkEncoder::from_weights(4, w.clone(), 1.0).unwrap();
        let x = [0.1, 0.7, 0.2, 0.9];
        let y = benc.project_with_noise(&x, &n).unwrap();
        for j in 0..4 {
            let expect: f64 = (0..4).map(|i| (w[j * 4 + i] + n[j * 4 + i]) * x[i]).sum();
            assert!((y[j] - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn histograms() {
        let black = GrayImage::filled(5, 5, 0.0).unwrap();
        let h = pixel_histogram(&black);
        assert_eq!(h[0], 25);
        assert_eq!(h.iter().sum::<u64>(), 25);

        let bits = BinaryHypervector::from_bools(&[true, false, true, true]);
        assert_eq!(binary_histogram(&bits), [1, 3]);

        let mut r = rng(4);
        let bytes: Vec<u8> = (0..256).map(|_| r.random()).collect();
        let img = GrayImage::from_u8(16, 16, &bytes).unwrap();
        let mut naive = vec![0u64; 256];
        for b in &bytes {
            naive[*b as usize] += 1;
        }
        assert_eq!(pixel_histogram(&img), naive);

        let real = real_stage_histogram(&[-3.0, 0.0, 5.0, 5.0]).unwrap();
        assert_eq!(real.iter().sum::<u64>(), 4);
        assert_eq!(real[255], 2);
        assert_eq!(real_stage_histogram(&[2.0; 3]).unwrap()[0], 3);
    }

    #[test]
    fn correlation_extremes() {
        // columns repeat: every row constant across x
        let rows: Vec<f64> = (0..5).flat_map(|y| vec![y as f64 / 4.0; 6]).collect();
        let r = adjacent_pixel_correlation(&rows, 6, 5, Direction::Vertical).unwrap();
        assert!((r - 1.0).abs() < 1e-12);
        let repeated_cols: Vec<f64> = (0..5).flat_map(|_| (0..6).map(|x| x as f64 / 5.0)).collect();
        let r = adjacent_pixel_correlation(&repeated_cols, 6, 5, Direction::Horizontal).unwrap();
        assert!((r - 1.0).abs() < 1e-12);

        let checker: Vec<f64> = (0..36).map(|i| ((i / 6 + i % 6) % 2) as f64).collect();
        let r = adjacent_pixel_correlation(&checker, 6, 6, Direction::Horizontal).unwrap();
        assert!((r + 1.0).abs() < 1e-12);

        assert!(matches!(
            adjacent_pixel_correlation(&[0.5; 9], 3, 3, Direction::Horizontal),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn correlation_three_by_three_direct_formula() {
        let v = [0.1, 0.9, 0.4, 0.3, 0.8, 0.2, 0.7, 0.5, 0.6];
        // diagonal pairs: (0,4), (1,5), (3,7), (4,8)
        let a = [0.1, 0.9, 0.3, 0.8];
        let b = [0.8, 0.2, 0.5, 0.6];
        let ma = a.iter().sum::<f64>() / 4.0;
        let mb = b.iter().sum::<f64>() / 4.0;
        let cov: f64 = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        let oracle = cov / (va * vb).sqrt();
        let r = adjacent_pixel_correlation(&v, 3, 3, Direction::Diagonal).unwrap();
        assert!((r - oracle).abs() < 1e-12);
    }

    #[test]
    fn pair_counts_sum_to_pair_total() {
        let bits = BinaryHypervector::from_bools(&[true, true, false, false, true, false]);
        let c = adjacent_pair_counts(&bits, 3, 2, Direction::Horizontal).unwrap();
        // rows: (1,1,0) -> 11, 10 ; (0,1,0) -> 01, 10
        assert_eq!(c, [0, 1, 2, 1]);
    }

    #[test]
    fn stats_csv_layout() {
        let rows = vec![StatsRow {
            stage: "binarized".into(),
            direction: Direction::Vertical,
            r: 0.0123,
            pair_counts: Some([1, 2, 3, 4]),
        }];
        let mut out = Vec::new();
        write_stats_csv(&rows, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text, "stage,direction,r,n00,n01,n10,n11\nbinarized,vertical,0.012300,1,2,3,4\n");
    }
}

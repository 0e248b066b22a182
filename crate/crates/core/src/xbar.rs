//! Memristor crossbar simulator.
//!
//! A crossbar with `rows` word-lines and `cols` bit-lines stores one
//! conductance per cell. Applying a voltage vector to the word-lines yields
//! bit-line currents `I_j = sum_i V_i * G_ij` (Ohm's law plus current
//! summation). Two non-idealities are modelled:
//!
//! * cycle-to-cycle variability: every read perturbs each free cell with
//!   fresh Gaussian noise whose standard deviation is `sigma_frac` times the
//!   conductance range, clamped back into `[G_off, G_on]`;
//! * stuck cells: sampled once at construction, pinned to `G_on` or `G_off`
//!   and never perturbed.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_finite, check_len, Error, Result};
use crate::seed::{self, Stream};

const FORMAT: &str = "hyperlock.crossbar";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossbarConfig {
    /// Word-line (input) count.
    pub rows: usize,
    /// Bit-line (output) count.
    pub cols: usize,
    /// Low-resistance state in ohms.
    pub r_lrs: f64,
    /// High-resistance state in ohms.
    pub r_hrs: f64,
    /// Read-noise standard deviation as a fraction of `G_on - G_off`.
    pub sigma_frac: f64,
    pub p_stuck_on: f64,
    pub p_stuck_off: f64,
    pub seed: u64,
}

impl CrossbarConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 {
            return Err(Error::config("rows", "must be positive"));
        }
        if self.cols == 0 {
            return Err(Error::config("cols", "must be positive"));
        }
        if !(self.r_lrs.is_finite() && self.r_lrs > 0.0) {
            return Err(Error::config("r_lrs", "must be a positive finite resistance"));
        }
        if !(self.r_hrs.is_finite() && self.r_hrs > self.r_lrs) {
            return Err(Error::config("r_hrs", "must be finite and greater than r_lrs"));
        }
        if !(self.sigma_frac.is_finite() && self.sigma_frac >= 0.0) {
            return Err(Error::config("sigma_frac", "must be finite and nonnegative"));
        }
        if !(0.0..=1.0).contains(&self.p_stuck_on) {
            return Err(Error::config("p_stuck_on", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.p_stuck_off) {
            return Err(Error::config("p_stuck_off", "must lie in [0, 1]"));
        }
        if self.p_stuck_on + self.p_stuck_off > 1.0 {
            return Err(Error::config(
                "p_stuck_off",
                "p_stuck_on + p_stuck_off must not exceed 1",
            ));
        }
        Ok(())
    }

    /// Conductance of the low-resistance state, in siemens.
    pub fn g_on(&self) -> f64 {
        1.0 / self.r_lrs
    }

    /// Conductance of the high-resistance state, in siemens.
    pub fn g_off(&self) -> f64 {
        1.0 / self.r_hrs
    }

    pub fn g_range(&self) -> f64 {
        self.g_on() - self.g_off()
    }

    /// Midpoint of the conductance window, the reference column's value.
    pub fn g_mid(&self) -> f64 {
        0.5 * (self.g_on() + self.g_off())
    }

    /// Per-cell, per-read noise standard deviation in siemens.
    pub fn noise_std(&self) -> f64 {
        self.sigma_frac * self.g_range()
    }
}

/// Fault state of a single cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cell {
    Free,
    StuckOn,
    StuckOff,
}

impl Cell {
    pub fn code(self) -> &'static str {
        match self {
            Cell::Free => "F",
            Cell::StuckOn => "N",
            Cell::StuckOff => "P",
        }
    }

    pub fn from_code(code: &str) -> Option<Cell> {
        match code {
            "F" => Some(Cell::Free),
            "N" => Some(Cell::StuckOn),
            "P" => Some(Cell::StuckOff),
            _ => None,
        }
    }
}

/// A crossbar instance: target conductances plus the permanent fault mask.
///
/// Immutable once built; reads take their random stream as an argument so
/// a crossbar can be shared between threads.
#[derive(Debug, Clone, PartialEq)]
pub struct Crossbar {
    config: CrossbarConfig,
    g_target: Vec<f64>,
    stuck: Vec<Cell>,
}

impl Crossbar {
    /// Build an untuned crossbar: conductances uniform over `[G_off, G_on]`,
    /// stuck cells sampled independently per cell.
    pub fn new_random(config: CrossbarConfig) -> Result<Crossbar> {
        config.validate()?;
        let mut rng = seed::stream(seed::derive(config.seed, "crossbar/construct"));
        let (g_off, g_on) = (config.g_off(), config.g_on());
        let n = config.rows * config.cols;
        let mut g_target = Vec::with_capacity(n);
        let mut stuck = Vec::with_capacity(n);
        for _ in 0..n {
            let g = g_off + (g_on - g_off) * rng.random::<f64>();
            let u: f64 = rng.random();
            let cell = if u < config.p_stuck_on {
                Cell::StuckOn
            } else if u < config.p_stuck_on + config.p_stuck_off {
                Cell::StuckOff
            } else {
                Cell::Free
            };
            g_target.push(match cell {
                Cell::Free => g,
                Cell::StuckOn => g_on,
                Cell::StuckOff => g_off,
            });
            stuck.push(cell);
        }
        Ok(Crossbar {
            config,
            g_target,
            stuck,
        })
    }

    pub fn config(&self) -> &CrossbarConfig {
        &self.config
    }

    pub fn rows(&self) -> usize {
        self.config.rows
    }

    pub fn cols(&self) -> usize {
        self.config.cols
    }

    /// Row-major target conductances.
    pub fn g_target(&self) -> &[f64] {
        &self.g_target
    }

    /// Row-major fault mask.
    pub fn stuck_mask(&self) -> &[Cell] {
        &self.stuck
    }

    pub fn stuck_count(&self) -> usize {
        self.stuck.iter().filter(|c| **c != Cell::Free).count()
    }

    /// A read stream derived from the crossbar seed, independent of the
    /// construction stream.
    pub fn read_stream(&self, index: u64) -> Stream {
        seed::stream(seed::derive_indexed(self.config.seed, "crossbar/read", index))
    }

    /// Write conductances into free cells, clamped to the rail range.
    /// Stuck cells keep their pinned value.
    pub fn program(&self, g_desired: &[f64]) -> Result<Crossbar> {
        check_len("program", self.g_target.len(), g_desired.len())?;
        check_finite(g_desired)?;
        let (g_off, g_on) = (self.config.g_off(), self.config.g_on());
        let g_target = self
            .g_target
            .iter()
            .zip(&self.stuck)
            .zip(g_desired)
            .map(|((&old, &cell), &want)| match cell {
                Cell::Free => want.clamp(g_off, g_on),
                _ => old,
            })
            .collect();
        Ok(Crossbar {
            config: self.config.clone(),
            g_target,
            stuck: self.stuck.clone(),
        })
    }

    /// Sample the effective conductance matrix seen by one read.
    pub fn effective_conductances<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut g = self.g_target.clone();
        let std = self.config.noise_std();
        if std > 0.0 {
            let (g_off, g_on) = (self.config.g_off(), self.config.g_on());
            for (g, cell) in g.iter_mut().zip(&self.stuck) {
                if *cell == Cell::Free {
                    let z: f64 = rng.sample(StandardNormal);
                    *g = (*g + std * z).clamp(g_off, g_on);
                }
            }
        }
        g
    }

    /// Current of a noiseless reference column programmed to `g_mid`.
    pub fn reference_current(&self, v: &[f64]) -> f64 {
        self.config.g_mid() * v.iter().sum::<f64>()
    }

    /// [`read_vmm`](Self::read_vmm) minus the reference column current, so
    /// each output only carries the deviation of its column from `g_mid`.
    pub fn read_referenced<R: Rng + ?Sized>(&self, v: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        let mut out = self.read_vmm(v, rng)?;
        let r = self.reference_current(v);
        for o in &mut out {
            *o -= r;
        }
        Ok(out)
    }

    /// Analog vector-matrix multiply with fresh per-read variability.
    pub fn read_vmm<R: Rng + ?Sized>(&self, v: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        check_len("read_vmm input", self.config.rows, v.len())?;
        check_finite(v)?;
        let cols = self.config.cols;
        let std = self.config.noise_std();
        let (g_off, g_on) = (self.config.g_off(), self.config.g_on());
        let mut out = vec![0.0; cols];
        for (i, &vi) in v.iter().enumerate() {
            let g_row = &self.g_target[i * cols..(i + 1) * cols];
            let cells = &self.stuck[i * cols..(i + 1) * cols];
            if std > 0.0 {
                for ((o, &g), &cell) in out.iter_mut().zip(g_row).zip(cells) {
                    let g_eff = if cell == Cell::Free {
                        let z: f64 = rng.sample(StandardNormal);
                        (g + std * z).clamp(g_off, g_on)
                    } else {
                        g
                    };
                    *o += vi * g_eff;
                }
            } else {
                for (o, &g) in out.iter_mut().zip(g_row) {
                    *o += vi * g;
                }
            }
        }
        Ok(out)
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = CrossbarDoc {
            format: FORMAT.to_string(),
            version: VERSION,
            config: self.config.clone(),
            g_target: self.g_target.clone(),
            stuck_mask: self.stuck.iter().map(|c| c.code().to_string()).collect(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Crossbar> {
        let doc: CrossbarDoc = serde_json::from_str(text)?;
        if doc.format != FORMAT || doc.version != VERSION {
            return Err(Error::format(
                0,
                format!("expected {FORMAT} v{VERSION}, found {} v{}", doc.format, doc.version),
            ));
        }
        doc.config.validate()?;
        let n = doc.config.rows * doc.config.cols;
        check_len("crossbar g_target", n, doc.g_target.len())?;
        check_len("crossbar stuck_mask", n, doc.stuck_mask.len())?;
        let (g_off, g_on) = (doc.config.g_off(), doc.config.g_on());
        let mut stuck = Vec::with_capacity(n);
        for (idx, (code, &g)) in doc.stuck_mask.iter().zip(&doc.g_target).enumerate() {
            let cell = Cell::from_code(code).ok_or_else(|| {
                Error::format(0, format!("unknown stuck code {code:?} at cell {idx}"))
            })?;
            let pinned_ok = match cell {
                Cell::Free => g.is_finite() && (g_off..=g_on).contains(&g),
                Cell::StuckOn => g == g_on,
                Cell::StuckOff => g == g_off,
            };
            if !pinned_ok {
                return Err(Error::format(
                    0,
                    format!("conductance {g} at cell {idx} inconsistent with state {code}"),
                ));
            }
            stuck.push(cell);
        }
        Ok(Crossbar {
            config: doc.config,
            g_target: doc.g_target,
            stuck,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Crossbar> {
        Crossbar::from_json(&fs::read_to_string(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct CrossbarDoc {
    format: String,
    version: u32,
    config: CrossbarConfig,
    g_target: Vec<f64>,
    stuck_mask: Vec<String>,
}

//! Gray-mapped 16-QAM over a symbol-level AWGN channel.
//!
//! Labels are 4 bits `b3 b2 b1 b0`; `b3 b2` pick the in-phase level and
//! `b1 b0` the quadrature level through the per-axis Gray table
//! `00 → -3, 01 → -1, 11 → +1, 10 → +3`, scaled by `1/√10` for unit average
//! energy. Hard decisions pick the nearest point; ties go to the lowest label.

use std::fmt::Write as _;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

pub const BITS_PER_SYMBOL: usize = 4;
pub const MIN_FRAME_SYMBOLS: usize = 1000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModemError {
    #[error("bit count {0} is not a multiple of 4")]
    Misaligned(usize),
    #[error("sequences differ in length ({tx} vs {rx})")]
    LengthMismatch { tx: usize, rx: usize },
    #[error("empty symbol sequence")]
    Empty,
    #[error("EVM must be positive, got {0}")]
    NonPositiveEvm(f64),
    #[error("SNR must be finite or +inf, got {0} dB")]
    BadSnr(f64),
}

/// Gray level index (two label bits) to amplitude before scaling.
const AXIS_LEVELS: [f64; 4] = [-3.0, -1.0, 3.0, 1.0];

fn scale() -> f64 {
    1.0 / 10f64.sqrt()
}

/// Point for a 4-bit label.
pub fn symbol_for_label(label: u8) -> Complex64 {
    let i = AXIS_LEVELS[usize::from((label >> 2) & 0b11)];
    let q = AXIS_LEVELS[usize::from(label & 0b11)];
    Complex64::new(i, q) * scale()
}

/// All sixteen points, indexed by label.
pub fn constellation() -> [Complex64; 16] {
    std::array::from_fn(|l| symbol_for_label(l as u8))
}

pub fn map_bits(bits: &[bool]) -> Result<Vec<Complex64>, ModemError> {
    if !bits.len().is_multiple_of(BITS_PER_SYMBOL) {
        return Err(ModemError::Misaligned(bits.len()));
    }
    Ok(bits
        .chunks_exact(BITS_PER_SYMBOL)
        .map(|c| {
            let label = c.iter().fold(0u8, |acc, &b| (acc << 1) | u8::from(b));
            symbol_for_label(label)
        })
        .collect())
}

/// Adds circular complex Gaussian noise of variance `10^(-snr/10)` per
/// symbol. `f64::INFINITY` turns the channel off.
pub fn apply_awgn<R: Rng + ?Sized>(
    symbols: &[Complex64],
    snr_db: f64,
    rng: &mut R,
) -> Result<Vec<Complex64>, ModemError> {
    if snr_db == f64::INFINITY {
        return Ok(symbols.to_vec());
    }
    if !snr_db.is_finite() {
        return Err(ModemError::BadSnr(snr_db));
    }
    let sigma = (10f64.powf(-snr_db / 10.0) / 2.0).sqrt();
    let normal = Normal::new(0.0, sigma).map_err(|_| ModemError::BadSnr(snr_db))?;
    Ok(symbols
        .iter()
        .map(|s| s + Complex64::new(normal.sample(rng), normal.sample(rng)))
        .collect())
}

/// Label of the nearest constellation point.
pub fn decide(sample: Complex64) -> u8 {
    let points = constellation();
    let mut best = 0u8;
    let mut best_d = f64::INFINITY;
    for (label, p) in points.iter().enumerate() {
        let d = (sample - p).norm_sqr();
        if d < best_d {
            best_d = d;
            best = label as u8;
        }
    }
    best
}

pub fn demap_symbols(rx: &[Complex64]) -> Vec<bool> {
    rx.iter()
        .flat_map(|&s| {
            let label = decide(s);
            (0..BITS_PER_SYMBOL)
                .rev()
                .map(move |k| (label >> k) & 1 == 1)
        })
        .collect()
}

pub fn evm_rms(tx: &[Complex64], rx: &[Complex64]) -> Result<f64, ModemError> {
    if tx.len() != rx.len() {
        return Err(ModemError::LengthMismatch {
            tx: tx.len(),
            rx: rx.len(),
        });
    }
    if tx.is_empty() {
        return Err(ModemError::Empty);
    }
    let n = tx.len() as f64;
    let err: f64 = tx
        .iter()
        .zip(rx)
        .map(|(t, r)| (r - t).norm_sqr())
        .sum::<f64>()
        / n;
    let sig: f64 = tx.iter().map(|t| t.norm_sqr()).sum::<f64>() / n;
    Ok((err / sig).sqrt())
}

pub fn snr_from_evm(evm: f64) -> Result<f64, ModemError> {
    if !(evm > 0.0) {
        return Err(ModemError::NonPositiveEvm(evm));
    }
    Ok(-20.0 * evm.log10())
}

pub fn random_bits<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<bool> {
    (0..n).map(|_| rng.random()).collect()
}

pub fn bit_errors(a: &[bool], b: &[bool]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count() + a.len().abs_diff(b.len())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstellationFrame {
    pub tx_symbols: Vec<Complex64>,
    pub rx_symbols: Vec<Complex64>,
    pub snr_db_applied: f64,
    pub evm_rms: f64,
    pub ber: f64,
    pub seed: u64,
}

impl ConstellationFrame {
    /// Maps `bits`, passes them through AWGN seeded with `seed` and demaps.
    pub fn transmit(bits: &[bool], snr_db: f64, seed: u64) -> Result<Self, ModemError> {
        let tx_symbols = map_bits(bits)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rx_symbols = apply_awgn(&tx_symbols, snr_db, &mut rng)?;
        let evm = evm_rms(&tx_symbols, &rx_symbols)?;
        let decided = demap_symbols(&rx_symbols);
        let ber = bit_errors(bits, &decided) as f64 / bits.len() as f64;
        Ok(Self {
            tx_symbols,
            rx_symbols,
            snr_db_applied: snr_db,
            evm_rms: evm,
            ber,
            seed,
        })
    }

    /// `index,tx_i,tx_q,rx_i,rx_q` rows after `meta` comment lines, with the
    /// metrics as a commented footer.
    pub fn to_csv(&self, meta: &[String]) -> String {
        let mut out = String::new();
        for m in meta {
            let _ = writeln!(out, "# {m}");
        }
        out.push_str("index,tx_i,tx_q,rx_i,rx_q\n");
        for (k, (t, r)) in self.tx_symbols.iter().zip(&self.rx_symbols).enumerate() {
            let _ = writeln!(out, "{k},{:.6},{:.6},{:.6},{:.6}", t.re, t.im, r.re, r.im);
        }
        out.push_str("# snr_db,evm_rms,ber\n");
        let _ = writeln!(
            out,
            "# {:.6},{:.6},{:.6}",
            self.snr_db_applied, self.evm_rms, self.ber
        );
        out
    }
}

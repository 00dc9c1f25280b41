//! Scanning time-of-flight radar model, the detection-cluster wire codec,
//! and windowed angle-of-arrival aggregation.
//!
//! # Wire frame
//!
//! Ten bytes, multi-byte fields little-endian:
//!
//! | byte | field |
//! |------|-------|
//! | 0–1  | sync `0xAA 0x55` |
//! | 2–3  | cycle index |
//! | 4–5  | azimuth, centidegrees in `[0, 35999]` |
//! | 6–7  | range, millimetres |
//! | 8    | intensity |
//! | 9    | XOR of bytes 2–8 |
//!
//! The text form is the frame as 20 uppercase hex characters, one per line.

use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::scenario::{wrap_finite, ScenarioError};

pub const SYNC: [u8; 2] = [0xAA, 0x55];
pub const FRAME_LEN: usize = 10;
pub const MAX_AZIMUTH_CDEG: u16 = 35_999;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FrameError {
    #[error("frame must be {expected} hex characters, got {got}")]
    BadLength { expected: usize, got: usize },
    #[error("frame contains non-hex characters")]
    BadHex,
    #[error("bad sync bytes {0:02X}{1:02X}")]
    BadSync(u8, u8),
    #[error("checksum mismatch: frame carries {stored:02X}, payload gives {computed:02X}")]
    ChecksumMismatch { stored: u8, computed: u8 },
    #[error("azimuth {0} cdeg exceeds {MAX_AZIMUTH_CDEG}")]
    AzimuthOutOfRange(u16),
}

impl FrameError {
    /// Short stable label used when tallying rejects.
    pub fn kind(&self) -> &'static str {
        match self {
            FrameError::BadLength { .. } => "bad-length",
            FrameError::BadHex => "bad-hex",
            FrameError::BadSync(..) => "bad-sync",
            FrameError::ChecksumMismatch { .. } => "checksum",
            FrameError::AzimuthOutOfRange(_) => "azimuth-range",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AggregateError {
    #[error("cluster stream out of order at index {index} (t = {t_s} s after {prev_s} s)")]
    Unordered { index: usize, t_s: f64, prev_s: f64 },
    #[error("window of {window_s} s at {scan_hz} Hz holds no scans")]
    EmptyWindow { window_s: f64, scan_hz: f64 },
    #[error("circular mean of an empty set")]
    Empty,
}

/// One radar detection of the receiver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DetectionCluster {
    pub cycle_index: u16,
    pub azimuth_cdeg: u16,
    pub range_mm: u16,
    pub intensity: u8,
}

impl DetectionCluster {
    pub fn azimuth_deg(&self) -> f64 {
        f64::from(self.azimuth_cdeg) / 100.0
    }

    /// Azimuth in `(-π, π]`.
    pub fn azimuth_rad(&self) -> f64 {
        wrap_finite(self.azimuth_deg().to_radians())
    }

    pub fn range_m(&self) -> f64 {
        f64::from(self.range_mm) / 1000.0
    }
}

/// Converts an angle to the centidegree field, `[0, 35999]`.
pub fn azimuth_to_cdeg(azimuth_rad: f64) -> u16 {
    let deg = wrap_finite(azimuth_rad).to_degrees().rem_euclid(360.0);
    ((deg * 100.0).round() as u32 % 36_000) as u16
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadarModel {
    pub angular_resolution_rad: f64,
    pub aoa_noise_std_rad: f64,
    pub range_noise_std_m: f64,
    pub range_gate_m: f64,
    pub intensity_threshold: u8,
    /// Physical width of the receiver as seen by the radar; decides whether
    /// neighbouring beams also return.
    pub target_width_m: f64,
}

impl Default for RadarModel {
    fn default() -> Self {
        Self {
            angular_resolution_rad: TAU / 360.0,
            aoa_noise_std_rad: 0.5_f64.to_radians(),
            range_noise_std_m: 0.01,
            range_gate_m: 12.0,
            intensity_threshold: 16,
            target_width_m: 0.05,
        }
    }
}

impl RadarModel {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |key, reason: &str| {
            Err(ScenarioError::Invalid {
                key,
                reason: reason.to_string(),
            })
        };
        if !(self.angular_resolution_rad > 0.0 && self.angular_resolution_rad.is_finite()) {
            return bad("angular_resolution_rad", "must be strictly positive");
        }
        if !(self.aoa_noise_std_rad >= 0.0 && self.aoa_noise_std_rad.is_finite()) {
            return bad("aoa_noise_std_rad", "must be non-negative");
        }
        if !(self.range_noise_std_m >= 0.0 && self.range_noise_std_m.is_finite()) {
            return bad("range_noise_std_m", "must be non-negative");
        }
        if !(self.range_gate_m > 0.0) {
            return bad("range_gate_m", "must be strictly positive");
        }
        if !(self.target_width_m >= 0.0 && self.target_width_m.is_finite()) {
            return bad("target_width_m", "must be non-negative");
        }
        Ok(())
    }

    /// Detections of the receiver accept this model's gates.
    pub fn accepts(&self, c: &DetectionCluster) -> bool {
        c.intensity >= self.intensity_threshold && c.range_m() <= self.range_gate_m
    }
}

/// Return strength falls with the square of range, saturating at 255.
pub fn intensity_at(range_m: f64) -> u8 {
    let rel = if range_m <= 0.0 {
        1.0
    } else {
        (1.0 / (range_m * range_m)).min(1.0)
    };
    (255.0 * rel).round().clamp(0.0, 255.0) as u8
}

/// One radar scan of a single receiver.
///
/// The nearest beam always reports. When the receiver subtends at least one
/// beam step on each side, both neighbouring beams report too. Each
/// reported azimuth is the beam centre plus Gaussian noise; range carries
/// its own Gaussian noise. A target beyond the range gate gives no returns.
pub fn simulate_scan<R: Rng + ?Sized>(
    model: &RadarModel,
    truth: crate::scenario::Pose,
    cycle_index: u16,
    rng: &mut R,
) -> Vec<DetectionCluster> {
    if truth.range_m > model.range_gate_m {
        return Vec::new();
    }
    // Parameters were validated; zero std is a valid degenerate normal.
    let aoa_noise = Normal::new(0.0, model.aoa_noise_std_rad).expect("validated AoA noise");
    let range_noise = Normal::new(0.0, model.range_noise_std_m).expect("validated range noise");

    let res = model.angular_resolution_rad;
    let beam = (truth.azimuth_rad / res).round();
    let half_angle = if truth.range_m > 0.0 {
        (model.target_width_m / (2.0 * truth.range_m)).atan()
    } else {
        std::f64::consts::PI
    };
    let beams: &[f64] = if half_angle >= res {
        &[0.0, -1.0, 1.0]
    } else {
        &[0.0]
    };
    let intensity = intensity_at(truth.range_m);

    beams
        .iter()
        .map(|offset| {
            let center = (beam + offset) * res;
            let az = center + aoa_noise.sample(rng);
            let range = truth.range_m + range_noise.sample(rng);
            DetectionCluster {
                cycle_index,
                azimuth_cdeg: azimuth_to_cdeg(az),
                range_mm: (range * 1000.0).round().clamp(0.0, f64::from(u16::MAX)) as u16,
                intensity,
            }
        })
        .collect()
}

fn checksum(payload: &[u8]) -> u8 {
    payload.iter().fold(0, |acc, b| acc ^ b)
}

pub fn encode_frame(c: &DetectionCluster) -> Result<[u8; FRAME_LEN], FrameError> {
    if c.azimuth_cdeg > MAX_AZIMUTH_CDEG {
        return Err(FrameError::AzimuthOutOfRange(c.azimuth_cdeg));
    }
    let mut f = [0u8; FRAME_LEN];
    f[..2].copy_from_slice(&SYNC);
    f[2..4].copy_from_slice(&c.cycle_index.to_le_bytes());
    f[4..6].copy_from_slice(&c.azimuth_cdeg.to_le_bytes());
    f[6..8].copy_from_slice(&c.range_mm.to_le_bytes());
    f[8] = c.intensity;
    f[9] = checksum(&f[2..9]);
    Ok(f)
}

pub fn decode_frame(f: &[u8]) -> Result<DetectionCluster, FrameError> {
    if f.len() != FRAME_LEN {
        return Err(FrameError::BadLength {
            expected: FRAME_LEN * 2,
            got: f.len() * 2,
        });
    }
    if f[..2] != SYNC {
        return Err(FrameError::BadSync(f[0], f[1]));
    }
    let computed = checksum(&f[2..9]);
    if computed != f[9] {
        return Err(FrameError::ChecksumMismatch {
            stored: f[9],
            computed,
        });
    }
    let azimuth_cdeg = u16::from_le_bytes([f[4], f[5]]);
    if azimuth_cdeg > MAX_AZIMUTH_CDEG {
        return Err(FrameError::AzimuthOutOfRange(azimuth_cdeg));
    }
    Ok(DetectionCluster {
        cycle_index: u16::from_le_bytes([f[2], f[3]]),
        azimuth_cdeg,
        range_mm: u16::from_le_bytes([f[6], f[7]]),
        intensity: f[8],
    })
}

/// Encodes a cluster as a 20-character uppercase hex line.
pub fn encode_cluster(c: &DetectionCluster) -> Result<String, FrameError> {
    encode_frame(c).map(hex::encode_upper)
}

pub fn decode_cluster(line: &str) -> Result<DetectionCluster, FrameError> {
    let line = line.trim();
    if line.len() != FRAME_LEN * 2 {
        return Err(FrameError::BadLength {
            expected: FRAME_LEN * 2,
            got: line.len(),
        });
    }
    let bytes = hex::decode(line).map_err(|_| FrameError::BadHex)?;
    decode_frame(&bytes)
}

/// Vector-sum mean of `angles` and its dispersion `1 - R/n`.
pub fn circular_mean(angles: &[f64]) -> Result<(f64, f64), AggregateError> {
    if angles.is_empty() {
        return Err(AggregateError::Empty);
    }
    let (s, c) = angles
        .iter()
        .fold((0.0, 0.0), |(s, c), a| (s + a.sin(), c + a.cos()));
    let n = angles.len() as f64;
    let resultant = s.hypot(c) / n;
    Ok((wrap_finite(s.atan2(c)), (1.0 - resultant).clamp(0.0, 1.0)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AoaEstimate {
    pub azimuth_rad: f64,
    pub sample_count: usize,
    pub circular_dispersion: f64,
    pub window_end_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimedCluster {
    pub t_s: f64,
    pub cluster: DetectionCluster,
}

/// Incremental tumbling-window aggregator, windows aligned to `t = 0`.
#[derive(Debug, Clone)]
pub struct AoaAggregator {
    window_s: f64,
    model: RadarModel,
    current: i64,
    last_t: f64,
    pushed: usize,
    samples: Vec<f64>,
}

impl AoaAggregator {
    pub fn new(window_s: f64, scan_hz: f64, model: RadarModel) -> Result<Self, AggregateError> {
        if !(window_s > 0.0 && scan_hz > 0.0) || window_s * scan_hz < 1.0 - 1e-9 {
            return Err(AggregateError::EmptyWindow { window_s, scan_hz });
        }
        Ok(Self {
            window_s,
            model,
            current: 0,
            last_t: f64::NEG_INFINITY,
            pushed: 0,
            samples: Vec::new(),
        })
    }

    fn window_index(&self, t_s: f64) -> i64 {
        (t_s / self.window_s + 1e-9).floor() as i64
    }

    fn finish(&mut self) -> Option<AoaEstimate> {
        let window_end_s = (self.current + 1) as f64 * self.window_s;
        let est = circular_mean(&self.samples)
            .ok()
            .map(|(azimuth_rad, circular_dispersion)| AoaEstimate {
                azimuth_rad,
                sample_count: self.samples.len(),
                circular_dispersion,
                window_end_s,
            });
        self.samples.clear();
        est
    }

    /// Adds one detection. Returns the estimate of the previous window when
    /// this detection opens a new one.
    pub fn push(
        &mut self,
        t_s: f64,
        cluster: &DetectionCluster,
    ) -> Result<Option<AoaEstimate>, AggregateError> {
        if t_s < self.last_t {
            return Err(AggregateError::Unordered {
                index: self.pushed,
                t_s,
                prev_s: self.last_t,
            });
        }
        let out = self.close_before(t_s);
        self.last_t = t_s;
        self.pushed += 1;
        if self.model.accepts(cluster) {
            self.samples.push(cluster.azimuth_rad());
        }
        Ok(out)
    }

    /// Closes the open window if `t_s` lies past its end.
    pub fn close_before(&mut self, t_s: f64) -> Option<AoaEstimate> {
        let w = self.window_index(t_s);
        if w > self.current {
            let est = self.finish();
            self.current = w;
            est
        } else {
            None
        }
    }

    /// Closes the open window regardless of time.
    pub fn flush(&mut self) -> Option<AoaEstimate> {
        let est = self.finish();
        self.current += 1;
        est
    }
}

/// Batch form of [`AoaAggregator`]: one estimate per non-empty window.
pub fn aggregate_aoa(
    clusters: &[TimedCluster],
    window_s: f64,
    scan_hz: f64,
    model: &RadarModel,
) -> Result<Vec<AoaEstimate>, AggregateError> {
    let mut agg = AoaAggregator::new(window_s, scan_hz, *model)?;
    let mut out = Vec::new();
    for tc in clusters {
        out.extend(agg.push(tc.t_s, &tc.cluster)?);
    }
    out.extend(agg.flush());
    Ok(out)
}

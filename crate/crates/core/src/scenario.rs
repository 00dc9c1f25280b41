//! Experiment configuration, angle conventions and the flat `key = value`
//! configuration format.
//!
//! Azimuth zero is the fixed antenna's boresight; angles grow
//! counter-clockwise and are kept in `(-π, π]`.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_3, PI, TAU};
use std::fmt::Write as _;

use thiserror::Error;

use crate::control::{PidGains, ServoModel};
use crate::lidar::RadarModel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Malformed { line: usize, text: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key `{key}` has non-numeric value `{value}`")]
    BadValue {
        line: usize,
        key: String,
        value: String,
    },
    #[error("invalid `{key}`: {reason}")]
    Invalid { key: &'static str, reason: String },
    #[error("angle is not finite: {0}")]
    NonFiniteAngle(f64),
    #[error("bits per symbol must be at least 1")]
    ZeroBitsPerSymbol,
}

fn invalid(key: &'static str, reason: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid {
        key,
        reason: reason.into(),
    }
}

/// Reduces `theta` to the unique congruent angle in `(-π, π]`.
pub fn wrap_angle(theta: f64) -> Result<f64, ScenarioError> {
    if !theta.is_finite() {
        return Err(ScenarioError::NonFiniteAngle(theta));
    }
    Ok(wrap_finite(theta))
}

/// Infallible variant of [`wrap_angle`] for values already known to be
/// finite. Non-finite input propagates as NaN.
pub fn wrap_finite(theta: f64) -> f64 {
    let mut r = theta.rem_euclid(TAU);
    if r > PI {
        r -= TAU;
    }
    // rem_euclid can land one ulp above π; the subtraction then lands on -π.
    if r <= -PI {
        r += TAU;
    }
    r
}

/// Symbols per second for a given bit rate and modulation order.
pub fn symbol_rate(bit_rate_bps: f64, bits_per_symbol: u32) -> Result<f64, ScenarioError> {
    if bits_per_symbol == 0 {
        return Err(ScenarioError::ZeroBitsPerSymbol);
    }
    Ok(bit_rate_bps / f64::from(bits_per_symbol))
}

/// Position of the receiver relative to the transmitter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub azimuth_rad: f64,
    pub range_m: f64,
}

impl Pose {
    /// Builds a pose, wrapping the azimuth and clamping negative range to zero.
    pub fn new(azimuth_rad: f64, range_m: f64) -> Self {
        Self {
            azimuth_rad: wrap_finite(azimuth_rad),
            range_m: range_m.max(0.0),
        }
    }

    pub fn from_degrees(azimuth_deg: f64, range_m: f64) -> Self {
        Self::new(azimuth_deg.to_radians(), range_m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AntennaSpec {
    pub peak_gain_dbi: f64,
    /// Half-power beamwidth of the directional TX antenna.
    pub hpbw_rad: f64,
    pub sidelobe_floor_dbi: f64,
    /// Gain of the omni-directional receive dipole.
    pub rx_gain_dbi: f64,
}

impl Default for AntennaSpec {
    fn default() -> Self {
        Self {
            peak_gain_dbi: 10.0,
            hpbw_rad: FRAC_PI_3,
            sidelobe_floor_dbi: -10.0,
            rx_gain_dbi: 2.15,
        }
    }
}

impl AntennaSpec {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if !(self.hpbw_rad > 0.0 && self.hpbw_rad < PI) {
            return Err(invalid("hpbw_rad", "must lie in (0, π)"));
        }
        if !(self.sidelobe_floor_dbi < self.peak_gain_dbi) {
            return Err(invalid("sidelobe_floor_dbi", "must be below peak_gain_dbi"));
        }
        if !self.rx_gain_dbi.is_finite() {
            return Err(invalid("rx_gain_dbi", "must be finite"));
        }
        Ok(())
    }
}

/// Servo rotation limits, radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationLimits {
    pub min_rad: f64,
    pub max_rad: f64,
}

impl RotationLimits {
    pub fn clamp(&self, theta: f64) -> f64 {
        theta.clamp(self.min_rad, self.max_rad)
    }

    pub fn contains(&self, theta: f64) -> bool {
        theta >= self.min_rad && theta <= self.max_rad
    }

    pub fn span(&self) -> f64 {
        self.max_rad - self.min_rad
    }
}

impl Default for RotationLimits {
    fn default() -> Self {
        Self {
            min_rad: -FRAC_PI_2,
            max_rad: FRAC_PI_2,
        }
    }
}

/// Full experiment configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub carrier_hz: f64,
    pub tx_power_dbm: f64,
    pub bandwidth_hz: f64,
    pub noise_floor_dbm: f64,
    pub bit_rate_bps: f64,
    pub link_distance_m: f64,
    pub rotation_min_rad: f64,
    pub rotation_max_rad: f64,
    pub radar_scan_hz: f64,
    pub aoa_window_s: f64,
    pub control_rate_hz: f64,
    pub seed: u64,
    pub antenna: AntennaSpec,
    /// Overrides the cos^n exponent derived from the beamwidth.
    pub calibration_exponent: Option<f64>,
    pub radar: RadarModel,
    pub gains: PidGains,
    pub servo: ServoModel,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            carrier_hz: 5.8e9,
            tx_power_dbm: 10.0,
            bandwidth_hz: 1.0e5,
            noise_floor_dbm: -95.0,
            bit_rate_bps: 5.0e5,
            link_distance_m: 4.0,
            rotation_min_rad: -FRAC_PI_2,
            rotation_max_rad: FRAC_PI_2,
            radar_scan_hz: 10.0,
            aoa_window_s: 1.0,
            control_rate_hz: 50.0,
            seed: 0,
            antenna: AntennaSpec::default(),
            calibration_exponent: None,
            radar: RadarModel::default(),
            gains: PidGains::default(),
            servo: ServoModel::default(),
        }
    }
}

/// Every key accepted by [`load_scenario`], in serialization order.
pub const CONFIG_KEYS: &[&str] = &[
    "carrier_hz",
    "tx_power_dbm",
    "bandwidth_hz",
    "noise_floor_dbm",
    "bit_rate_bps",
    "link_distance_m",
    "rotation_min_rad",
    "rotation_max_rad",
    "radar_scan_hz",
    "aoa_window_s",
    "control_rate_hz",
    "seed",
    "peak_gain_dbi",
    "hpbw_rad",
    "sidelobe_floor_dbi",
    "rx_gain_dbi",
    "calibration_exponent",
    "angular_resolution_rad",
    "aoa_noise_std_rad",
    "range_noise_std_m",
    "range_gate_m",
    "intensity_threshold",
    "target_width_m",
    "kp",
    "ki",
    "kd",
    "integral_limit",
    "output_limit_rad",
    "slew_rate_rad_s",
    "pwm_min_us",
    "pwm_max_us",
    "pwm_quantum_us",
];

impl Scenario {
    pub fn limits(&self) -> RotationLimits {
        RotationLimits {
            min_rad: self.rotation_min_rad,
            max_rad: self.rotation_max_rad,
        }
    }

    /// Pose of the receiver at the configured link distance.
    pub fn rx_at(&self, azimuth_rad: f64) -> Pose {
        Pose::new(azimuth_rad, self.link_distance_m)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let positive = [
            ("carrier_hz", self.carrier_hz),
            ("bandwidth_hz", self.bandwidth_hz),
            ("bit_rate_bps", self.bit_rate_bps),
            ("link_distance_m", self.link_distance_m),
            ("radar_scan_hz", self.radar_scan_hz),
            ("control_rate_hz", self.control_rate_hz),
            ("aoa_window_s", self.aoa_window_s),
        ];
        for (key, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(key, format!("must be strictly positive, got {v}")));
            }
        }
        for (key, v) in [
            ("tx_power_dbm", self.tx_power_dbm),
            ("noise_floor_dbm", self.noise_floor_dbm),
        ] {
            if !v.is_finite() {
                return Err(invalid(key, "must be finite"));
            }
        }
        let bounds_ok = self.rotation_min_rad >= -PI
            && self.rotation_max_rad <= PI
            && self.rotation_min_rad < self.rotation_max_rad;
        if !bounds_ok {
            return Err(invalid(
                "rotation_min_rad/rotation_max_rad",
                format!(
                    "rotation bounds must satisfy -π <= min < max <= π, got [{}, {}]",
                    self.rotation_min_rad, self.rotation_max_rad
                ),
            ));
        }
        // Small slack so 0.1 s × 10 Hz style products are not rejected on rounding.
        if self.aoa_window_s * self.radar_scan_hz < 1.0 - 1e-9 {
            return Err(invalid(
                "aoa_window_s",
                "window must hold at least one radar scan (aoa_window_s × radar_scan_hz >= 1)",
            ));
        }
        self.antenna.validate()?;
        if let Some(n) = self.calibration_exponent {
            if !(n > 0.0 && n.is_finite()) {
                return Err(invalid("calibration_exponent", "must be strictly positive"));
            }
        }
        self.radar.validate()?;
        self.gains.validate()?;
        self.servo.validate()?;
        Ok(())
    }

    fn set_key(&mut self, key: &str, raw: &str, line: usize) -> Result<(), ScenarioError> {
        let bad = || ScenarioError::BadValue {
            line,
            key: key.to_string(),
            value: raw.to_string(),
        };
        let float = || raw.parse::<f64>().map_err(|_| bad());
        match key {
            "carrier_hz" => self.carrier_hz = float()?,
            "tx_power_dbm" => self.tx_power_dbm = float()?,
            "bandwidth_hz" => self.bandwidth_hz = float()?,
            "noise_floor_dbm" => self.noise_floor_dbm = float()?,
            "bit_rate_bps" => self.bit_rate_bps = float()?,
            "link_distance_m" => self.link_distance_m = float()?,
            "rotation_min_rad" => self.rotation_min_rad = float()?,
            "rotation_max_rad" => self.rotation_max_rad = float()?,
            "radar_scan_hz" => self.radar_scan_hz = float()?,
            "aoa_window_s" => self.aoa_window_s = float()?,
            "control_rate_hz" => self.control_rate_hz = float()?,
            "seed" => self.seed = raw.parse().map_err(|_| bad())?,
            "peak_gain_dbi" => self.antenna.peak_gain_dbi = float()?,
            "hpbw_rad" => self.antenna.hpbw_rad = float()?,
            "sidelobe_floor_dbi" => self.antenna.sidelobe_floor_dbi = float()?,
            "rx_gain_dbi" => self.antenna.rx_gain_dbi = float()?,
            "calibration_exponent" => self.calibration_exponent = Some(float()?),
            "angular_resolution_rad" => self.radar.angular_resolution_rad = float()?,
            "aoa_noise_std_rad" => self.radar.aoa_noise_std_rad = float()?,
            "range_noise_std_m" => self.radar.range_noise_std_m = float()?,
            "range_gate_m" => self.radar.range_gate_m = float()?,
            "intensity_threshold" => {
                self.radar.intensity_threshold = raw.parse().map_err(|_| bad())?
            }
            "target_width_m" => self.radar.target_width_m = float()?,
            "kp" => self.gains.kp = float()?,
            "ki" => self.gains.ki = float()?,
            "kd" => self.gains.kd = float()?,
            "integral_limit" => self.gains.integral_limit = float()?,
            "output_limit_rad" => self.gains.output_limit_rad = float()?,
            "slew_rate_rad_s" => self.servo.slew_rate_rad_s = float()?,
            "pwm_min_us" => self.servo.pwm_min_us = float()?,
            "pwm_max_us" => self.servo.pwm_max_us = float()?,
            "pwm_quantum_us" => self.servo.pwm_quantum_us = float()?,
            _ => {
                return Err(ScenarioError::UnknownKey {
                    line,
                    key: key.to_string(),
                })
            }
        }
        Ok(())
    }

    /// Serializes every key. `{}` on `f64` prints the shortest text that
    /// parses back to the same value, so reloading is lossless.
    pub fn to_config_text(&self) -> String {
        let mut out = String::new();
        let floats: [(&str, f64); 11] = [
            ("carrier_hz", self.carrier_hz),
            ("tx_power_dbm", self.tx_power_dbm),
            ("bandwidth_hz", self.bandwidth_hz),
            ("noise_floor_dbm", self.noise_floor_dbm),
            ("bit_rate_bps", self.bit_rate_bps),
            ("link_distance_m", self.link_distance_m),
            ("rotation_min_rad", self.rotation_min_rad),
            ("rotation_max_rad", self.rotation_max_rad),
            ("radar_scan_hz", self.radar_scan_hz),
            ("aoa_window_s", self.aoa_window_s),
            ("control_rate_hz", self.control_rate_hz),
        ];
        for (k, v) in floats {
            let _ = writeln!(out, "{k} = {v}");
        }
        let _ = writeln!(out, "seed = {}", self.seed);
        let a = &self.antenna;
        let _ = writeln!(out, "peak_gain_dbi = {}", a.peak_gain_dbi);
        let _ = writeln!(out, "hpbw_rad = {}", a.hpbw_rad);
        let _ = writeln!(out, "sidelobe_floor_dbi = {}", a.sidelobe_floor_dbi);
        let _ = writeln!(out, "rx_gain_dbi = {}", a.rx_gain_dbi);
        if let Some(n) = self.calibration_exponent {
            let _ = writeln!(out, "calibration_exponent = {n}");
        }
        let r = &self.radar;
        let _ = writeln!(out, "angular_resolution_rad = {}", r.angular_resolution_rad);
        let _ = writeln!(out, "aoa_noise_std_rad = {}", r.aoa_noise_std_rad);
        let _ = writeln!(out, "range_noise_std_m = {}", r.range_noise_std_m);
        let _ = writeln!(out, "range_gate_m = {}", r.range_gate_m);
        let _ = writeln!(out, "intensity_threshold = {}", r.intensity_threshold);
        let _ = writeln!(out, "target_width_m = {}", r.target_width_m);
        let g = &self.gains;
        let _ = writeln!(out, "kp = {}", g.kp);
        let _ = writeln!(out, "ki = {}", g.ki);
        let _ = writeln!(out, "kd = {}", g.kd);
        let _ = writeln!(out, "integral_limit = {}", g.integral_limit);
        let _ = writeln!(out, "output_limit_rad = {}", g.output_limit_rad);
        let s = &self.servo;
        let _ = writeln!(out, "slew_rate_rad_s = {}", s.slew_rate_rad_s);
        let _ = writeln!(out, "pwm_min_us = {}", s.pwm_min_us);
        let _ = writeln!(out, "pwm_max_us = {}", s.pwm_max_us);
        let _ = writeln!(out, "pwm_quantum_us = {}", s.pwm_quantum_us);
        out
    }
}

/// Parses `key = value` configuration text. Omitted keys keep their
/// defaults; `#` starts a comment.
pub fn load_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let mut scn = Scenario::default();
    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw_line.find('#') {
            Some(pos) => &raw_line[..pos],
            None => raw_line,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ScenarioError::Malformed {
                line: line_no,
                text: raw_line.to_string(),
            });
        };
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || value.is_empty() {
            return Err(ScenarioError::Malformed {
                line: line_no,
                text: raw_line.to_string(),
            });
        }
        scn.set_key(key, value, line_no)?;
    }
    scn.validate()?;
    Ok(scn)
}

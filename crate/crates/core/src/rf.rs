//! Directional gain pattern, free-space loss and the link budget.

use std::f64::consts::{FRAC_PI_2, PI};

use thiserror::Error;

use crate::scenario::{wrap_finite, AntennaSpec, Pose, Scenario};

pub const SPEED_OF_LIGHT_M_S: f64 = 299_792_458.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RfError {
    #[error("beamwidth {0} rad outside (0, π)")]
    BadBeamwidth(f64),
    #[error("pattern exponent must be positive, got {0}")]
    BadExponent(f64),
    #[error("distance must be positive, got {0} m")]
    BadDistance(f64),
    #[error("carrier must be positive, got {0} Hz")]
    BadCarrier(f64),
}

/// Exponent `n` for which `cos^n` falls to one half at `±hpbw/2`.
pub fn solve_pattern_exponent(hpbw_rad: f64) -> Result<f64, RfError> {
    if !(hpbw_rad > 0.0 && hpbw_rad < PI) {
        return Err(RfError::BadBeamwidth(hpbw_rad));
    }
    Ok(0.5_f64.ln() / (hpbw_rad / 2.0).cos().ln())
}

/// `cos^n` mainlobe over a flat sidelobe floor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatternModel {
    pub exponent_n: f64,
    pub peak_gain_dbi: f64,
    pub sidelobe_floor_dbi: f64,
    pub hpbw_rad: f64,
}

impl PatternModel {
    pub fn from_spec(spec: &AntennaSpec) -> Result<Self, RfError> {
        Ok(Self {
            exponent_n: solve_pattern_exponent(spec.hpbw_rad)?,
            peak_gain_dbi: spec.peak_gain_dbi,
            sidelobe_floor_dbi: spec.sidelobe_floor_dbi,
            hpbw_rad: spec.hpbw_rad,
        })
    }

    /// Pattern with an explicit exponent; the beamwidth follows from it.
    pub fn with_exponent(spec: &AntennaSpec, exponent_n: f64) -> Result<Self, RfError> {
        if !(exponent_n > 0.0 && exponent_n.is_finite()) {
            return Err(RfError::BadExponent(exponent_n));
        }
        Ok(Self {
            exponent_n,
            peak_gain_dbi: spec.peak_gain_dbi,
            sidelobe_floor_dbi: spec.sidelobe_floor_dbi,
            hpbw_rad: 2.0 * 0.5_f64.powf(1.0 / exponent_n).acos(),
        })
    }

    /// The scenario's pattern: calibrated exponent if set, otherwise the
    /// one implied by the beamwidth.
    pub fn for_scenario(scn: &Scenario) -> Result<Self, RfError> {
        match scn.calibration_exponent {
            Some(n) => Self::with_exponent(&scn.antenna, n),
            None => Self::from_spec(&scn.antenna),
        }
    }
}

pub fn pattern_gain_db(model: &PatternModel, offset_rad: f64) -> f64 {
    let off = if offset_rad.abs() <= PI {
        offset_rad.abs()
    } else {
        wrap_finite(offset_rad).abs()
    };
    if off >= FRAC_PI_2 {
        return model.sidelobe_floor_dbi;
    }
    let main = model.peak_gain_dbi + 10.0 * model.exponent_n * off.cos().log10();
    main.max(model.sidelobe_floor_dbi)
}

/// Friis free-space loss `20·log10(4π·d·f/c)`.
pub fn fspl_db(distance_m: f64, carrier_hz: f64) -> Result<f64, RfError> {
    if !(distance_m > 0.0) {
        return Err(RfError::BadDistance(distance_m));
    }
    if !(carrier_hz > 0.0) {
        return Err(RfError::BadCarrier(carrier_hz));
    }
    Ok(20.0 * (4.0 * PI * distance_m * carrier_hz / SPEED_OF_LIGHT_M_S).log10())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LinkMode {
    /// Rotatable antenna, boresight follows the servo.
    Ra,
    /// Antenna pinned at azimuth zero.
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkSample {
    pub t_s: f64,
    pub rx_azimuth_rad: f64,
    pub boresight_rad: f64,
    pub offset_rad: f64,
    pub tx_gain_dbi: f64,
    pub fspl_db: f64,
    pub rx_power_dbm: f64,
    pub snr_db: f64,
    pub mode: LinkMode,
}

pub fn link_budget(
    scn: &Scenario,
    spec: &AntennaSpec,
    pattern: &PatternModel,
    boresight_rad: f64,
    rx: Pose,
    mode: LinkMode,
) -> Result<LinkSample, RfError> {
    let boresight_rad = match mode {
        LinkMode::Ra => boresight_rad,
        LinkMode::Fixed => 0.0,
    };
    let offset_rad = wrap_finite(rx.azimuth_rad - boresight_rad);
    let tx_gain_dbi = pattern_gain_db(pattern, offset_rad);
    let fspl = fspl_db(rx.range_m, scn.carrier_hz)?;
    let rx_power_dbm = scn.tx_power_dbm + tx_gain_dbi + spec.rx_gain_dbi - fspl;
    Ok(LinkSample {
        t_s: 0.0,
        rx_azimuth_rad: rx.azimuth_rad,
        boresight_rad,
        offset_rad,
        tx_gain_dbi,
        fspl_db: fspl,
        rx_power_dbm,
        snr_db: rx_power_dbm - scn.noise_floor_dbm,
        mode,
    })
}

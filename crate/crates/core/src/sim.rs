//! Closed-loop scheduler and the experiments built on it.
//!
//! Every tick runs, in order: trajectory, radar scan (when due), AoA window
//! close (when due), PID, servo, link budget for both antenna modes.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::control::{trace_csv_rows, ControlError, Controller, TrackTick, TRACE_HEADER};
use crate::lidar::{simulate_scan, AggregateError, AoaAggregator, AoaEstimate, DetectionCluster};
use crate::modem::{
    random_bits, ConstellationFrame, ModemError, BITS_PER_SYMBOL, MIN_FRAME_SYMBOLS,
};
use crate::rf::{link_budget, LinkMode, LinkSample, PatternModel, RfError};
use crate::scenario::{wrap_finite, Pose, Scenario, ScenarioError};

/// Settle time per sweep point: three AoA windows at the default rate.
pub const DEFAULT_SETTLE_S: f64 = 3.0;

/// Offset mixed into the seed for the constellation payload bits.
const BITS_SEED_SALT: u64 = 0xB175;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("{what} ({value}) is not a whole number of {dt_s} s control ticks")]
    RateMismatch {
        what: &'static str,
        value: f64,
        dt_s: f64,
    },
    #[error("duration {duration_s} s is shorter than one AoA window ({window_s} s)")]
    DurationTooShort { duration_s: f64, window_s: f64 },
    #[error("azimuth {azimuth_rad} rad lies outside the rotation range [{min_rad}, {max_rad}]")]
    AngleOutOfRange {
        azimuth_rad: f64,
        min_rad: f64,
        max_rad: f64,
    },
    #[error("need at least {MIN_FRAME_SYMBOLS} symbols, got {0}")]
    TooFewSymbols(usize),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Rf(#[from] RfError),
    #[error(transparent)]
    Modem(#[from] ModemError),
    #[error(transparent)]
    Aggregate(#[from] AggregateError),
}

/// Shared simulation clock. All event periods are whole tick counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimClock {
    pub t_s: f64,
    pub dt_s: f64,
    pub duration_s: f64,
    pub scan_every: usize,
    pub window_every: usize,
}

fn whole_ticks(what: &'static str, period_s: f64, dt_s: f64) -> Result<usize, SimError> {
    let ratio = period_s / dt_s;
    let rounded = ratio.round();
    if rounded < 1.0 || (ratio - rounded).abs() > 1e-9 * rounded.max(1.0) {
        return Err(SimError::RateMismatch {
            what,
            value: period_s,
            dt_s,
        });
    }
    Ok(rounded as usize)
}

impl SimClock {
    pub fn new(scn: &Scenario, duration_s: f64) -> Result<Self, SimError> {
        scn.validate()?;
        let dt_s = 1.0 / scn.control_rate_hz;
        let scan_every = whole_ticks("radar scan period", 1.0 / scn.radar_scan_hz, dt_s)?;
        let window_every = whole_ticks("AoA window", scn.aoa_window_s, dt_s)?;
        if duration_s < scn.aoa_window_s - 1e-9 {
            return Err(SimError::DurationTooShort {
                duration_s,
                window_s: scn.aoa_window_s,
            });
        }
        Ok(Self {
            t_s: 0.0,
            dt_s,
            duration_s,
            scan_every,
            window_every,
        })
    }

    /// Ticks `0..=n`, covering `[0, duration]`.
    pub fn tick_count(&self) -> usize {
        (self.duration_s / self.dt_s).round() as usize + 1
    }
}

/// Receiver position as a function of simulation time.
pub trait Trajectory {
    fn pose_at(&self, t_s: f64) -> Pose;
}

impl<F: Fn(f64) -> Pose> Trajectory for F {
    fn pose_at(&self, t_s: f64) -> Pose {
        self(t_s)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Stationary(pub Pose);

impl Trajectory for Stationary {
    fn pose_at(&self, _t_s: f64) -> Pose {
        self.0
    }
}

/// Constant-rate sweep in azimuth at fixed range, holding at `end_rad`.
#[derive(Debug, Clone, Copy)]
pub struct AzimuthArc {
    pub start_rad: f64,
    pub end_rad: f64,
    pub rate_rad_s: f64,
    pub range_m: f64,
}

impl Trajectory for AzimuthArc {
    fn pose_at(&self, t_s: f64) -> Pose {
        let span = self.end_rad - self.start_rad;
        let travelled = (self.rate_rad_s.abs() * t_s).min(span.abs());
        Pose::new(self.start_rad + travelled.copysign(span), self.range_m)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopTick {
    pub control: TrackTick,
    pub rx: Pose,
    pub ra: LinkSample,
    pub fixed: LinkSample,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopTrace {
    pub ticks: Vec<LoopTick>,
    pub estimates: Vec<AoaEstimate>,
    pub clusters: Vec<DetectionCluster>,
    pub seed: u64,
}

impl LoopTrace {
    /// Mean RA and FIXED snr over the trailing `window_s` seconds.
    pub fn steady_state_snr(&self, window_s: f64) -> (f64, f64) {
        let (ra, fixed) = self.trailing(window_s, |t| (t.ra.snr_db, t.fixed.snr_db));
        (ra, fixed)
    }

    /// Mean RA and FIXED received power over the trailing `window_s` seconds.
    pub fn steady_state_power(&self, window_s: f64) -> (f64, f64) {
        self.trailing(window_s, |t| (t.ra.rx_power_dbm, t.fixed.rx_power_dbm))
    }

    fn trailing(&self, window_s: f64, f: impl Fn(&LoopTick) -> (f64, f64)) -> (f64, f64) {
        let end = self.ticks.last().map_or(0.0, |t| t.control.t_s);
        let tail: Vec<(f64, f64)> = self
            .ticks
            .iter()
            .filter(|t| t.control.t_s > end - window_s + 1e-9)
            .map(f)
            .collect();
        let n = tail.len().max(1) as f64;
        let (a, b) = tail
            .iter()
            .fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
        (a / n, b / n)
    }

    pub fn trace_csv(&self, meta: &[String]) -> String {
        let mut out = String::new();
        for m in meta {
            let _ = writeln!(out, "# {m}");
        }
        out.push_str(TRACE_HEADER);
        out.push('\n');
        let control: Vec<TrackTick> = self.ticks.iter().map(|t| t.control).collect();
        out.push_str(&trace_csv_rows(&control));
        out
    }
}

/// Runs the full sensing → control → link loop for `duration_s`.
pub fn run_closed_loop(
    scn: &Scenario,
    trajectory: &dyn Trajectory,
    duration_s: f64,
    seed: u64,
) -> Result<LoopTrace, SimError> {
    let clock = SimClock::new(scn, duration_s)?;
    let pattern = PatternModel::for_scenario(scn)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut agg = AoaAggregator::new(scn.aoa_window_s, scn.radar_scan_hz, scn.radar)?;
    let mut controller = Controller::new(scn.gains, scn.servo, scn.limits(), 0.0);

    let n = clock.tick_count();
    let mut ticks = Vec::with_capacity(n);
    let mut estimates = Vec::new();
    let mut clusters = Vec::new();
    let mut cycle: u16 = 0;
    let mut setpoint = None;

    for k in 0..n {
        let t = k as f64 * clock.dt_s;
        let rx = trajectory.pose_at(t);

        let mut closed = Vec::new();
        if k % clock.scan_every == 0 {
            for c in simulate_scan(&scn.radar, rx, cycle, &mut rng) {
                closed.extend(agg.push(t, &c)?);
                clusters.push(c);
            }
            cycle = cycle.wrapping_add(1);
        }
        if k % clock.window_every == 0 {
            closed.extend(agg.close_before(t));
        }
        for est in closed {
            setpoint = Some(est.azimuth_rad);
            estimates.push(est);
        }

        let error_rad = controller.tick(setpoint, clock.dt_s)?;
        let state = controller.state;

        let mut ra = link_budget(
            scn,
            &scn.antenna,
            &pattern,
            state.actual_rad,
            rx,
            LinkMode::Ra,
        )?;
        let mut fixed = link_budget(scn, &scn.antenna, &pattern, 0.0, rx, LinkMode::Fixed)?;
        ra.t_s = t;
        fixed.t_s = t;
        ticks.push(LoopTick {
            control: TrackTick {
                t_s: t,
                setpoint_rad: setpoint,
                error_rad,
                state,
            },
            rx,
            ra,
            fixed,
        });
    }

    Ok(LoopTrace {
        ticks,
        estimates,
        clusters,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub azimuth_rad: Vec<f64>,
    pub snr_ra_db: Vec<f64>,
    pub snr_fixed_db: Vec<f64>,
}

pub const SWEEP_HEADER: &str = "azimuth_deg,snr_ra_db,snr_fixed_db";

impl SweepResult {
    pub fn len(&self) -> usize {
        self.azimuth_rad.len()
    }

    pub fn is_empty(&self) -> bool {
        self.azimuth_rad.is_empty()
    }

    pub fn to_csv(&self, meta: &[String]) -> String {
        let mut out = String::new();
        for m in meta {
            let _ = writeln!(out, "# {m}");
        }
        out.push_str(SWEEP_HEADER);
        out.push('\n');
        for i in 0..self.len() {
            let _ = writeln!(
                out,
                "{:.6},{:.6},{:.6}",
                self.azimuth_rad[i].to_degrees(),
                self.snr_ra_db[i],
                self.snr_fixed_db[i]
            );
        }
        out
    }

    /// Parses the output of [`SweepResult::to_csv`].
    pub fn from_csv(text: &str) -> Option<Self> {
        let mut rows = text.lines().filter(|l| !l.trim_start().starts_with('#'));
        if rows.next()? != SWEEP_HEADER {
            return None;
        }
        let mut out = SweepResult {
            azimuth_rad: Vec::new(),
            snr_ra_db: Vec::new(),
            snr_fixed_db: Vec::new(),
        };
        for row in rows.filter(|r| !r.trim().is_empty()) {
            let v: Vec<f64> = row
                .split(',')
                .map(|s| s.trim().parse().ok())
                .collect::<Option<_>>()?;
            if v.len() != 3 {
                return None;
            }
            out.azimuth_rad.push(v[0].to_radians());
            out.snr_ra_db.push(v[1]);
            out.snr_fixed_db.push(v[2]);
        }
        Some(out)
    }
}

/// One fresh closed loop per angle (seed `seed + index`), steady-state
/// snr averaged over the final AoA window.
pub fn sweep_azimuth(
    scn: &Scenario,
    angles: &[f64],
    settle_s: f64,
    seed: u64,
) -> Result<SweepResult, SimError> {
    let limits = scn.limits();
    for &a in angles {
        if !(a >= limits.min_rad - 1e-12 && a <= limits.max_rad + 1e-12) {
            return Err(SimError::AngleOutOfRange {
                azimuth_rad: a,
                min_rad: limits.min_rad,
                max_rad: limits.max_rad,
            });
        }
    }
    let points: Vec<(f64, f64)> = angles
        .par_iter()
        .enumerate()
        .map(|(i, &a)| {
            let traj = Stationary(scn.rx_at(a));
            let trace = run_closed_loop(scn, &traj, settle_s, seed.wrapping_add(i as u64))?;
            Ok(trace.steady_state_snr(scn.aoa_window_s))
        })
        .collect::<Result<_, SimError>>()?;
    Ok(SweepResult {
        azimuth_rad: angles.iter().map(|&a| wrap_finite(a)).collect(),
        snr_ra_db: points.iter().map(|p| p.0).collect(),
        snr_fixed_db: points.iter().map(|p| p.1).collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstellationResult {
    pub ra: ConstellationFrame,
    pub fixed: ConstellationFrame,
    pub rx_power_ra_dbm: f64,
    pub rx_power_fixed_dbm: f64,
}

impl ConstellationResult {
    pub fn power_delta_db(&self) -> f64 {
        self.rx_power_ra_dbm - self.rx_power_fixed_dbm
    }
}

/// Steady-state RA and FIXED links at `rx_azimuth_rad`, each carrying the
/// same random payload through the modem at its own snr.
pub fn constellation_experiment(
    scn: &Scenario,
    rx_azimuth_rad: f64,
    n_symbols: usize,
    seed: u64,
) -> Result<ConstellationResult, SimError> {
    if n_symbols < MIN_FRAME_SYMBOLS {
        return Err(SimError::TooFewSymbols(n_symbols));
    }
    let trace = run_closed_loop(
        scn,
        &Stationary(scn.rx_at(rx_azimuth_rad)),
        DEFAULT_SETTLE_S,
        seed,
    )?;
    let (snr_ra, snr_fixed) = trace.steady_state_snr(scn.aoa_window_s);
    let (p_ra, p_fixed) = trace.steady_state_power(scn.aoa_window_s);

    let mut bit_rng = ChaCha8Rng::seed_from_u64(seed ^ BITS_SEED_SALT);
    let bits = random_bits(n_symbols * BITS_PER_SYMBOL, &mut bit_rng);
    let ra = ConstellationFrame::transmit(&bits, snr_ra, seed.wrapping_add(1))?;
    let fixed = ConstellationFrame::transmit(&bits, snr_fixed, seed.wrapping_add(2))?;
    Ok(ConstellationResult {
        ra,
        fixed,
        rx_power_ra_dbm: p_ra,
        rx_power_fixed_dbm: p_fixed,
    })
}

//! Command implementations behind the `ralink` binary.
//!
//! Each command returns a report whose `summary` is what the binary prints;
//! files are written as a side effect. Errors carry the exit status:
//! 1 for validation problems, 2 for IO.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::lidar::{decode_cluster, encode_cluster, DetectionCluster};
use crate::scenario::{load_scenario, Scenario};
use crate::sim::{
    constellation_experiment, run_closed_loop, sweep_azimuth, ConstellationResult, Stationary,
    SweepResult, DEFAULT_SETTLE_S,
};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Io { .. } => 2,
        }
    }
}

fn invalid(e: impl std::fmt::Display) -> CliError {
    CliError::Validation(e.to_string())
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads the scenario from `path` (defaults when absent) and applies a seed
/// override.
pub fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<Scenario, CliError> {
    let mut scn = match path {
        Some(p) => {
            load_scenario(&read_text(p)?).map_err(|e| invalid(format!("{}: {e}", p.display())))?
        }
        None => Scenario::default(),
    };
    if let Some(s) = seed {
        scn.seed = s;
    }
    Ok(scn)
}

/// `#` metadata lines shared by every CSV output.
pub fn metadata(scn: &Scenario) -> Vec<String> {
    let digest = Sha256::digest(scn.to_config_text().as_bytes());
    vec![
        format!("seed={}", scn.seed),
        format!("config_sha256={}", hex::encode(&digest[..8])),
    ]
}

/// Parses `start:stop:step` in degrees, both ends inclusive.
pub fn parse_angles_spec(spec: &str) -> Result<Vec<f64>, CliError> {
    let parts: Vec<f64> = spec
        .split(':')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| {
            invalid(format!(
                "angles `{spec}`: expected start:stop:step in degrees"
            ))
        })?;
    let [start, stop, step] = parts[..] else {
        return Err(invalid(format!(
            "angles `{spec}`: expected start:stop:step in degrees"
        )));
    };
    if !(step > 0.0) || !start.is_finite() || !stop.is_finite() || stop < start {
        return Err(invalid(format!(
            "angles `{spec}`: need start <= stop and a positive step"
        )));
    }
    let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|i| start + i as f64 * step).collect())
}

pub struct SweepReport {
    pub result: SweepResult,
    pub summary: String,
}

pub fn cmd_sweep(
    scn: &Scenario,
    angles_spec: &str,
    settle_s: f64,
    out: &Path,
) -> Result<SweepReport, CliError> {
    let degrees = parse_angles_spec(angles_spec)?;
    let radians: Vec<f64> = degrees.iter().map(|d| d.to_radians()).collect();
    let result = sweep_azimuth(scn, &radians, settle_s, scn.seed).map_err(invalid)?;
    write_file(out, result.to_csv(&metadata(scn)))?;

    let ra_min = result
        .snr_ra_db
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let ra_max = result
        .snr_ra_db
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let last = result.len() - 1;
    let gap = |i: usize| result.snr_ra_db[i] - result.snr_fixed_db[i];
    let mut summary = format!(
        "{} angles -> {}\nRA snr min {ra_min:.2} dB, max {ra_max:.2} dB (spread {:.3} dB)\n",
        result.len(),
        out.display(),
        ra_max - ra_min
    );
    let _ = writeln!(
        summary,
        "RA - fixed gap: {:.2} dB at {:.1} deg, {:.2} dB at {:.1} deg",
        gap(0),
        degrees[0],
        gap(last),
        degrees[last]
    );
    Ok(SweepReport { result, summary })
}

pub struct ConstellationReport {
    pub result: ConstellationResult,
    pub summary: String,
}

pub fn cmd_constellation(
    scn: &Scenario,
    azimuth_deg: f64,
    n_symbols: usize,
    out_dir: &Path,
) -> Result<ConstellationReport, CliError> {
    let result = constellation_experiment(scn, azimuth_deg.to_radians(), n_symbols, scn.seed)
        .map_err(invalid)?;
    fs::create_dir_all(out_dir).map_err(|source| CliError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let mut meta = metadata(scn);
    meta.push(format!("azimuth_deg={azimuth_deg}"));
    let mut ra_meta = meta.clone();
    ra_meta.push("mode=RA".into());
    let mut fixed_meta = meta;
    fixed_meta.push("mode=FIXED".into());
    write_file(
        &out_dir.join("constellation_ra.csv"),
        result.ra.to_csv(&ra_meta),
    )?;
    write_file(
        &out_dir.join("constellation_fixed.csv"),
        result.fixed.to_csv(&fixed_meta),
    )?;

    let mut summary = String::new();
    let _ = writeln!(
        summary,
        "azimuth {azimuth_deg} deg, {n_symbols} symbols, seed {}",
        scn.seed
    );
    for (name, frame, power) in [
        ("RA", &result.ra, result.rx_power_ra_dbm),
        ("FIXED", &result.fixed, result.rx_power_fixed_dbm),
    ] {
        let _ = writeln!(
            summary,
            "{name:<5} rx_power {power:.2} dBm, snr {:.2} dB, evm {:.4}, ber {:.6}",
            frame.snr_db_applied, frame.evm_rms, frame.ber
        );
    }
    let _ = writeln!(
        summary,
        "received power delta (RA - FIXED): {:.2} dB",
        result.power_delta_db()
    );
    write_file(&out_dir.join("constellation_summary.txt"), &summary)?;
    Ok(ConstellationReport { result, summary })
}

/// Polar histogram of detections, azimuth rows by range columns. Bin
/// centres sit at whole multiples of the bin width.
#[derive(Debug, Clone, PartialEq)]
pub struct RadarMap {
    pub grid: Vec<u32>,
    pub azimuth_bins: usize,
    pub range_bins: usize,
    pub max_range_m: f64,
}

impl RadarMap {
    pub fn new(azimuth_bins: usize, range_bins: usize, max_range_m: f64) -> Result<Self, CliError> {
        if azimuth_bins == 0 || range_bins == 0 || !(max_range_m > 0.0) {
            return Err(invalid(
                "radar map needs non-zero bins and a positive max range",
            ));
        }
        Ok(Self {
            grid: vec![0; azimuth_bins * range_bins],
            azimuth_bins,
            range_bins,
            max_range_m,
        })
    }

    fn az_width(&self) -> f64 {
        360.0 / self.azimuth_bins as f64
    }

    fn range_width(&self) -> f64 {
        self.max_range_m / self.range_bins as f64
    }

    /// Adds a detection; returns false when it falls beyond the map.
    pub fn add(&mut self, c: &DetectionCluster) -> bool {
        let az = ((c.azimuth_deg() / self.az_width() + 0.5).floor() as usize) % self.azimuth_bins;
        let r = (c.range_m() / self.range_width() + 0.5).floor() as usize;
        if r >= self.range_bins {
            return false;
        }
        self.grid[az * self.range_bins + r] += 1;
        true
    }

    pub fn count(&self, az_bin: usize, range_bin: usize) -> u32 {
        self.grid[az_bin * self.range_bins + range_bin]
    }

    /// Centre azimuth (degrees), centre range (m) and count of the fullest
    /// bin; the first one wins ties.
    pub fn modal_bin(&self) -> (f64, f64, u32) {
        let (idx, &count) =
            self.grid
                .iter()
                .enumerate()
                .fold((0, &0), |best, cur| if cur.1 > best.1 { cur } else { best });
        let az = idx / self.range_bins;
        let r = idx % self.range_bins;
        (
            az as f64 * self.az_width(),
            r as f64 * self.range_width(),
            count,
        )
    }

    /// Binary graymap, brightness linear in count with the fullest cell at 255.
    pub fn to_pgm(&self) -> Vec<u8> {
        let peak = self.grid.iter().copied().max().unwrap_or(0);
        let mut out = format!("P5\n{} {}\n255\n", self.range_bins, self.azimuth_bins).into_bytes();
        out.extend(self.grid.iter().map(|&c| {
            if peak == 0 {
                0
            } else {
                (255.0 * f64::from(c) / f64::from(peak)).round() as u8
            }
        }));
        out
    }
}

/// Parses `AZxRANGE` bin counts, e.g. `360x12`.
pub fn parse_bins_spec(spec: &str) -> Result<(usize, usize), CliError> {
    let err = || {
        invalid(format!(
            "bins `{spec}`: expected AZIMUTHxRANGE, e.g. 360x12"
        ))
    };
    let (a, r) = spec.split_once(['x', 'X']).ok_or_else(err)?;
    let a: usize = a.trim().parse().map_err(|_| err())?;
    let r: usize = r.trim().parse().map_err(|_| err())?;
    if a == 0 || r == 0 {
        return Err(err());
    }
    Ok((a, r))
}

#[derive(Debug, Default)]
pub struct DecodeStats {
    pub clusters: Vec<DetectionCluster>,
    pub rejects: BTreeMap<&'static str, usize>,
}

impl DecodeStats {
    pub fn rejected(&self) -> usize {
        self.rejects.values().sum()
    }

    fn reject_line(&self) -> String {
        let parts: Vec<String> = self
            .rejects
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect();
        if parts.is_empty() {
            "none".to_string()
        } else {
            parts.join(", ")
        }
    }
}

/// Decodes every non-blank line, tallying rejects by error kind.
pub fn decode_lines(text: &str) -> DecodeStats {
    let mut stats = DecodeStats::default();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        match decode_cluster(line) {
            Ok(c) => stats.clusters.push(c),
            Err(e) => *stats.rejects.entry(e.kind()).or_default() += 1,
        }
    }
    stats
}

pub struct RadarMapReport {
    pub map: RadarMap,
    pub stats: DecodeStats,
    pub summary: String,
}

pub fn cmd_radar_map(
    cluster_file: &Path,
    bins_spec: &str,
    max_range_m: f64,
    out: &Path,
) -> Result<RadarMapReport, CliError> {
    let (az_bins, range_bins) = parse_bins_spec(bins_spec)?;
    let stats = decode_lines(&read_text(cluster_file)?);
    if stats.clusters.is_empty() {
        return Err(invalid(format!(
            "{}: no valid frames (rejects: {})",
            cluster_file.display(),
            stats.reject_line()
        )));
    }
    let mut map = RadarMap::new(az_bins, range_bins, max_range_m)?;
    let beyond = stats.clusters.iter().filter(|c| !map.add(c)).count();
    write_file(out, map.to_pgm())?;

    let (az, r, n) = map.modal_bin();
    let mut summary = String::new();
    let _ = writeln!(
        summary,
        "{} accepted, {} rejected ({}), {beyond} beyond {max_range_m} m",
        stats.clusters.len(),
        stats.rejected(),
        stats.reject_line()
    );
    let _ = writeln!(
        summary,
        "modal bin: azimuth {az:.2} deg, range {r:.3} m, {n} detections"
    );
    let _ = writeln!(
        summary,
        "image {}x{} -> {}",
        range_bins,
        az_bins,
        out.display()
    );
    Ok(RadarMapReport {
        map,
        stats,
        summary,
    })
}

pub const DECODE_HEADER: &str = "cycle,azimuth_deg,range_m,intensity";

pub fn decoded_csv(clusters: &[DetectionCluster]) -> String {
    let mut out = format!("{DECODE_HEADER}\n");
    for c in clusters {
        let _ = writeln!(
            out,
            "{},{:.2},{:.3},{}",
            c.cycle_index,
            c.azimuth_deg(),
            c.range_m(),
            c.intensity
        );
    }
    out
}

pub struct DecodeReport {
    pub stats: DecodeStats,
    pub csv: String,
    pub summary: String,
}

/// Decodes a frame file; the CSV goes to `out` when given.
pub fn cmd_lidar_decode(file: &Path, out: Option<&Path>) -> Result<DecodeReport, CliError> {
    let stats = decode_lines(&read_text(file)?);
    let csv = decoded_csv(&stats.clusters);
    if let Some(p) = out {
        write_file(p, &csv)?;
    }
    let summary = format!(
        "{} frames decoded, {} rejected ({})\n",
        stats.clusters.len(),
        stats.rejected(),
        stats.reject_line()
    );
    Ok(DecodeReport {
        stats,
        csv,
        summary,
    })
}

pub struct LoopTraceReport {
    pub summary: String,
}

/// Closed loop against a stationary receiver; writes the servo trace and,
/// optionally, every radar frame as hex lines.
pub fn cmd_loop_trace(
    scn: &Scenario,
    azimuth_deg: f64,
    duration_s: f64,
    out: &Path,
    frames_out: Option<&Path>,
) -> Result<LoopTraceReport, CliError> {
    let traj = Stationary(scn.rx_at(azimuth_deg.to_radians()));
    let trace = run_closed_loop(scn, &traj, duration_s, scn.seed).map_err(invalid)?;
    let mut meta = metadata(scn);
    meta.push(format!("azimuth_deg={azimuth_deg}"));
    write_file(out, trace.trace_csv(&meta))?;
    if let Some(p) = frames_out {
        let mut text = String::new();
        for c in &trace.clusters {
            text.push_str(&encode_cluster(c).map_err(invalid)?);
            text.push('\n');
        }
        write_file(p, text)?;
    }
    let last = trace.ticks.last().expect("clock yields at least one tick");
    let summary = format!(
        "{} ticks, {} AoA estimates; final boresight {:.2} deg, RA snr {:.2} dB, fixed snr {:.2} dB\n",
        trace.ticks.len(),
        trace.estimates.len(),
        last.control.state.actual_rad.to_degrees(),
        last.ra.snr_db,
        last.fixed.snr_db
    );
    Ok(LoopTraceReport { summary })
}

/// Default settle time for `sweep`.
pub const SWEEP_SETTLE_S: f64 = DEFAULT_SETTLE_S;

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(az_cdeg: u16, range_mm: u16) -> String {
        encode_cluster(&DetectionCluster {
            cycle_index: 0,
            azimuth_cdeg: az_cdeg,
            range_mm,
            intensity: 200,
        })
        .unwrap()
    }

    #[test]
    fn angles_spec() {
        assert_eq!(parse_angles_spec("-60:60:10").unwrap().len(), 13);
        assert_eq!(parse_angles_spec("0:0:1").unwrap(), vec![0.0]);
        assert_eq!(parse_angles_spec("0:25:10").unwrap(), vec![0.0, 10.0, 20.0]);
        assert!(parse_angles_spec("0:10").is_err());
        assert!(parse_angles_spec("0:10:0").is_err());
        assert!(parse_angles_spec("10:0:1").is_err());
        assert!(parse_angles_spec("a:b:c").is_err());
    }

    #[test]
    fn bins_spec() {
        assert_eq!(parse_bins_spec("360x12").unwrap(), (360, 12));
        assert!(parse_bins_spec("360").is_err());
        assert!(parse_bins_spec("0x5").is_err());
    }

    #[test]
    fn radar_map_modal_bin() {
        let text: String = (0..10).map(|_| frame(6000, 4000) + "\n").collect();
        let stats = decode_lines(&text);
        let mut map = RadarMap::new(360, 12, 12.0).unwrap();
        for c in &stats.clusters {
            assert!(map.add(c));
        }
        let (az, r, n) = map.modal_bin();
        assert_eq!((az, r, n), (60.0, 4.0, 10));
        assert_eq!(map.count(60, 4), 10);
    }

    #[test]
    fn radar_map_wraps_azimuth_and_drops_far_returns() {
        let mut map = RadarMap::new(36, 4, 4.0).unwrap();
        let near_north = decode_cluster(&frame(35_900, 1000)).unwrap();
        assert!(map.add(&near_north));
        assert_eq!(map.count(0, 1), 1);
        assert!(!map.add(&decode_cluster(&frame(0, 5000)).unwrap()));
    }

    #[test]
    fn pgm_scaling() {
        let mut map = RadarMap::new(2, 3, 3.0).unwrap();
        map.grid = vec![0, 1, 2, 4, 0, 0];
        let pgm = map.to_pgm();
        let header = b"P5\n3 2\n255\n";
        assert_eq!(&pgm[..header.len()], header);
        assert_eq!(&pgm[header.len()..], &[0, 64, 128, 255, 0, 0]);
    }

    #[test]
    fn corrupted_frame_counted() {
        let mut lines: Vec<String> = (0..10).map(|_| frame(6000, 4000)).collect();
        let mut bytes = lines[3].clone().into_bytes();
        bytes[10] = if bytes[10] == b'0' { b'1' } else { b'0' };
        lines[3] = String::from_utf8(bytes).unwrap();
        let stats = decode_lines(&lines.join("\n"));
        assert_eq!(stats.clusters.len(), 9);
        assert_eq!(stats.rejects.get("checksum"), Some(&1));
    }

    #[test]
    fn decoded_csv_layout() {
        let c = decode_cluster(&frame(6000, 4000)).unwrap();
        assert_eq!(
            decoded_csv(&[c]),
            "cycle,azimuth_deg,range_m,intensity\n0,60.00,4.000,200\n"
        );
    }

    #[test]
    fn metadata_tracks_config() {
        let a = metadata(&Scenario::default());
        let b = metadata(&Scenario {
            tx_power_dbm: 11.0,
            ..Scenario::default()
        });
        assert_eq!(a[0], "seed=0");
        assert_ne!(a[1], b[1]);
        assert_eq!(a, metadata(&Scenario::default()));
    }

    #[test]
    fn missing_config_names_path() {
        let err = load_config(Some(Path::new("/nonexistent/ra.conf")), None).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("/nonexistent/ra.conf"));
    }
}

//! Exercises the `ralink` binary end to end.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ralink::lidar::{encode_cluster, DetectionCluster};
use ralink::sim::SweepResult;

fn ralink(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ralink"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn sweep_writes_thirteen_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep.csv");
    let res = ralink(&[
        "sweep",
        "--angles",
        "-60:60:10",
        "--seed",
        "3",
        "--out",
        s(&out),
    ]);
    assert!(
        res.status.success(),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    let text = fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("# seed=3\n# config_sha256="));
    let parsed = SweepResult::from_csv(&text).unwrap();
    assert_eq!(parsed.len(), 13);
    let spread = parsed.snr_ra_db.iter().cloned().fold(f64::MIN, f64::max)
        - parsed.snr_ra_db.iter().cloned().fold(f64::MAX, f64::min);
    assert!(spread < 0.5);
    let stdout = String::from_utf8(res.stdout).unwrap();
    assert!(stdout.contains("RA snr min"));
}

#[test]
fn sweep_single_angle() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("one.csv");
    assert!(ralink(&["sweep", "--angles", "0:0:1", "--out", s(&out)])
        .status
        .success());
    let parsed = SweepResult::from_csv(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(parsed.len(), 1);
    assert!((parsed.snr_ra_db[0] - parsed.snr_fixed_db[0]).abs() < 0.2);
}

#[test]
fn missing_config_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.csv");
    let res = ralink(&[
        "sweep",
        "--config",
        "/no/such/scenario.conf",
        "--out",
        s(&out),
    ]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("/no/such/scenario.conf"));
}

#[test]
fn bad_config_is_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("bad.conf");
    fs::write(&conf, "rotation_min_rad = 1.0\nrotation_max_rad = 0.0\n").unwrap();
    let res = ralink(&[
        "sweep",
        "--config",
        s(&conf),
        "--out",
        s(&dir.path().join("x.csv")),
    ]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("rotation"));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(ralink(&["sweep"]).status.code(), Some(1));
    assert_eq!(ralink(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(ralink(&["--help"]).status.code(), Some(0));
}

#[test]
fn constellation_outputs_and_limits() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("cal.conf");
    fs::write(
        &conf,
        "# calibrated roll-off\ncalibration_exponent = 2.33\n",
    )
    .unwrap();
    let res = ralink(&[
        "constellation",
        "--config",
        s(&conf),
        "--azimuth",
        "60",
        "--out",
        s(dir.path()),
    ]);
    assert!(
        res.status.success(),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    let stdout = String::from_utf8(res.stdout).unwrap();
    let delta: f64 = stdout
        .lines()
        .find_map(|l| l.strip_prefix("received power delta (RA - FIXED): "))
        .and_then(|v| v.trim_end_matches(" dB").parse().ok())
        .unwrap();
    assert!((delta - 7.0).abs() < 0.5, "{delta}");
    let ra = fs::read_to_string(dir.path().join("constellation_ra.csv")).unwrap();
    assert!(ra.contains("index,tx_i,tx_q,rx_i,rx_q\n"));
    assert!(ra.trim_end().lines().rev().nth(1).unwrap() == "# snr_db,evm_rms,ber");
    assert!(dir.path().join("constellation_fixed.csv").exists());
    assert!(dir.path().join("constellation_summary.txt").exists());

    let res = ralink(&[
        "constellation",
        "--azimuth",
        "0",
        "--out",
        s(&dir.path().join("zero")),
    ]);
    assert!(res.status.success());
    let stdout = String::from_utf8(res.stdout).unwrap();
    assert!(
        stdout.contains("delta (RA - FIXED): 0.00 dB")
            || stdout.contains("delta (RA - FIXED): -0.00 dB")
    );

    let res = ralink(&["constellation", "--symbols", "100", "--out", s(dir.path())]);
    assert_eq!(res.status.code(), Some(1));
}

fn frame_line(az: u16, range: u16) -> String {
    encode_cluster(&DetectionCluster {
        cycle_index: 1,
        azimuth_cdeg: az,
        range_mm: range,
        intensity: 16,
    })
    .unwrap()
}

#[test]
fn radar_map_and_decode() {
    let dir = tempfile::tempdir().unwrap();
    let frames = dir.path().join("frames.hex");
    let mut lines: Vec<String> = (0..10).map(|_| frame_line(6000, 4000)).collect();
    let flipped = if &lines[5][12..13] == "F" { "E" } else { "F" };
    lines[5].replace_range(12..13, flipped);
    fs::write(&frames, lines.join("\n") + "\n").unwrap();

    let img = dir.path().join("map.pgm");
    let res = ralink(&[
        "radar-map",
        s(&frames),
        "--bins",
        "360x12",
        "--out",
        s(&img),
    ]);
    assert!(
        res.status.success(),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    let stdout = String::from_utf8(res.stdout).unwrap();
    assert!(
        stdout.contains("9 accepted, 1 rejected (checksum=1)"),
        "{stdout}"
    );
    assert!(stdout.contains("modal bin: azimuth 60.00 deg, range 4.000 m"));
    let pgm = fs::read(&img).unwrap();
    assert!(pgm.starts_with(b"P5\n12 360\n255\n"));
    assert_eq!(pgm.len(), b"P5\n12 360\n255\n".len() + 12 * 360);

    let csv = dir.path().join("decoded.csv");
    let res = ralink(&["lidar", "decode", s(&frames), "--out", s(&csv)]);
    assert!(res.status.success());
    let text = fs::read_to_string(&csv).unwrap();
    assert_eq!(
        text.lines().next(),
        Some("cycle,azimuth_deg,range_m,intensity")
    );
    assert_eq!(text.lines().count(), 10);
    assert!(text.contains("1,60.00,4.000,16"));

    let empty = dir.path().join("empty.hex");
    fs::write(&empty, "").unwrap();
    let res = ralink(&["radar-map", s(&empty), "--out", s(&img)]);
    assert_eq!(res.status.code(), Some(1));
    let res = ralink(&["radar-map", "/no/such/frames.hex", "--out", s(&img)]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn loop_trace_feeds_radar_map() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.csv");
    let frames = dir.path().join("frames.hex");
    let res = ralink(&[
        "loop-trace",
        "--azimuth",
        "-30",
        "--duration",
        "3",
        "--out",
        s(&trace),
        "--frames",
        s(&frames),
    ]);
    assert!(
        res.status.success(),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    let text = fs::read_to_string(&trace).unwrap();
    assert!(text.contains("t_s,setpoint_rad,commanded_rad,actual_rad,pulse_us,error_rad\n"));
    assert_eq!(
        text.lines().filter(|l| !l.starts_with('#')).count(),
        1 + 151
    );

    let img = dir.path().join("map.pgm");
    let res = ralink(&["radar-map", s(&frames), "--out", s(&img)]);
    assert!(res.status.success());
    let stdout = String::from_utf8(res.stdout).unwrap();
    assert!(stdout.contains("31 accepted, 0 rejected"), "{stdout}");
    assert!(stdout.contains("range 4.000 m"));
}

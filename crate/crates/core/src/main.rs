use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ralink::cli::{self, CliError};

#[derive(Parser)]
#[command(
    name = "ralink",
    version,
    about = "Lidar-aided rotatable antenna link simulator"
)]
struct Args {
    /// Scenario file of `key = value` lines; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file (directory for `constellation`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Steady-state snr of both antennas across receiver azimuths.
    Sweep {
        /// start:stop:step in degrees, inclusive.
        #[arg(long, allow_hyphen_values = true, default_value = "-60:60:10")]
        angles: String,
        #[arg(long, default_value_t = cli::SWEEP_SETTLE_S)]
        settle: f64,
    },
    /// 16-QAM constellations of both antennas at one azimuth.
    Constellation {
        #[arg(long, allow_hyphen_values = true, default_value_t = 60.0)]
        azimuth: f64,
        #[arg(long, default_value_t = 10_000)]
        symbols: usize,
    },
    /// Polar histogram image from a file of hex frames.
    RadarMap {
        file: PathBuf,
        /// AZIMUTHxRANGE bin counts.
        #[arg(long, default_value = "360x12")]
        bins: String,
        #[arg(long, default_value_t = 12.0)]
        max_range: f64,
    },
    /// Radar frame utilities.
    Lidar {
        #[command(subcommand)]
        action: LidarAction,
    },
    /// Servo trace of one closed-loop run against a stationary receiver.
    LoopTrace {
        #[arg(long, allow_hyphen_values = true, default_value_t = 60.0)]
        azimuth: f64,
        #[arg(long, default_value_t = 5.0)]
        duration: f64,
        /// Also write every radar frame as hex lines.
        #[arg(long)]
        frames: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum LidarAction {
    /// Decode hex frames to CSV.
    Decode { file: PathBuf },
}

fn require_out(out: Option<&Path>) -> Result<&Path, CliError> {
    out.ok_or_else(|| CliError::Validation("--out is required for this command".into()))
}

fn run(args: Args) -> Result<String, CliError> {
    let out = args.out.as_deref();
    match args.command {
        Command::Sweep { angles, settle } => {
            let scn = cli::load_config(args.config.as_deref(), args.seed)?;
            Ok(cli::cmd_sweep(&scn, &angles, settle, require_out(out)?)?.summary)
        }
        Command::Constellation { azimuth, symbols } => {
            let scn = cli::load_config(args.config.as_deref(), args.seed)?;
            Ok(cli::cmd_constellation(&scn, azimuth, symbols, require_out(out)?)?.summary)
        }
        Command::RadarMap {
            file,
            bins,
            max_range,
        } => Ok(cli::cmd_radar_map(&file, &bins, max_range, require_out(out)?)?.summary),
        Command::Lidar {
            action: LidarAction::Decode { file },
        } => {
            let report = cli::cmd_lidar_decode(&file, out)?;
            eprint!("{}", report.summary);
            Ok(if out.is_some() {
                String::new()
            } else {
                report.csv
            })
        }
        Command::LoopTrace {
            azimuth,
            duration,
            frames,
        } => {
            let scn = cli::load_config(args.config.as_deref(), args.seed)?;
            Ok(cli::cmd_loop_trace(
                &scn,
                azimuth,
                duration,
                require_out(out)?,
                frames.as_deref(),
            )?
            .summary)
        }
    }
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(args) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use evtrack::bench::run_bench;
use evtrack::config::{PipelineConfig, SEED_ENV};
use evtrack::pipeline::{run_detect, run_synth, run_track, PipelineError};

#[derive(Parser)]
#[command(name = "evtrack", version, about = "Asynchronous corner detection and tracking for DAVIS recordings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic recording into DIR
    Synth(Common),
    /// Dump Harris corners of every keyframe (default OUT: DIR/corners.csv)
    Detect(Common),
    /// Track corners and write trajectories (default OUT: DIR/trajectories.csv)
    Track(Common),
    /// Time every pipeline unit; OUT receives the report as CSV
    Bench(Common),
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` configuration file
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one setting; repeatable
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Recording directory
    #[arg(value_name = "DIR")]
    dir: PathBuf,
    #[arg(short = 'o', long = "out", value_name = "OUT")]
    out: Option<PathBuf>,
}

impl Common {
    fn config(&self) -> Result<PipelineConfig, PipelineError> {
        let seed = std::env::var(SEED_ENV).ok();
        Ok(PipelineConfig::load(self.config.as_deref(), seed.as_deref(), &self.set)?)
    }

    fn out_or(&self, name: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| self.dir.join(name))
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), PipelineError> {
    std::fs::write(path, text).map_err(|source| PipelineError::Output {
        path: path.display().to_string(),
        source,
    })
}

fn run(cmd: &Command) -> Result<(), PipelineError> {
    match cmd {
        Command::Synth(c) => {
            let cfg = c.config()?;
            let s = run_synth(&cfg, &c.dir)?;
            println!("wrote {} events and {} keyframes to {}", s.events, s.frames, c.dir.display());
        }
        Command::Detect(c) => {
            let cfg = c.config()?;
            let out = c.out_or("corners.csv");
            let n = run_detect(&cfg, &c.dir, &out)?;
            println!("wrote {n} corners to {}", out.display());
        }
        Command::Track(c) => {
            let cfg = c.config()?;
            let out = c.out_or("trajectories.csv");
            let s = run_track(&cfg, &c.dir, &out)?;
            println!(
                "events {}  keyframes {}  event-corners {}  tracks created {}  updates emitted {}",
                s.stats.events, s.stats.frames, s.stats.event_corners, s.tracks_created, s.stats.updates
            );
            println!("wrote {}", out.display());
        }
        Command::Bench(c) => {
            let cfg = c.config()?;
            let report = run_bench(&cfg, &c.dir)?;
            print!("{report}");
            if let Some(out) = &c.out {
                write_file(out, &report.to_csv())?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use migramob::ingest::XdrFormat;
use migramob::pipeline::{self, AnalyzeInputs, IngestOptions, RunManifest, WindowOptions};
use migramob::synth::ScenarioConfig;

#[derive(Parser, Debug)]
#[command(name = "migramob", version, about = "Internal migration and daily mobility from cellular event logs")]
struct Cli {
    #[command(flatten)]
    global: GlobalFlags,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct GlobalFlags {
    /// JSON file with default values for any of the flags below
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Year whose March 1st to November 30th forms the study window
    #[arg(long, global = true)]
    window_year: Option<i32>,
    /// Local time offset from UTC in hours
    #[arg(long, global = true, allow_hyphen_values = true)]
    tz_offset: Option<i32>,
    /// Weekday-night events needed to resolve a weekly home
    #[arg(long, global = true)]
    min_night_events: Option<u32>,
    /// Monday (YYYY-MM-DD) opening the baseline week
    #[arg(long, global = true)]
    baseline_week: Option<NaiveDate>,
    /// Worker threads; defaults to all cores
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// XDR encoding written by `synth` and `convert`
    #[arg(long, global = true, value_enum)]
    format: Option<FormatArg>,
    /// Overrides the scenario seed of `synth`
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Largest tolerated share of dropped XDR rows
    #[arg(long, global = true)]
    max_drop_fraction: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
enum FormatArg {
    Csv,
    Bin,
}

impl From<FormatArg> for XdrFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => XdrFormat::Csv,
            FormatArg::Bin => XdrFormat::Binary,
        }
    }
}

/// Same keys as the long flags, with underscores.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileFlags {
    window_year: Option<i32>,
    tz_offset: Option<i32>,
    min_night_events: Option<u32>,
    baseline_week: Option<NaiveDate>,
    threads: Option<usize>,
    format: Option<FormatArg>,
    seed: Option<u64>,
    max_drop_fraction: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic world, its event log and ground truth
    Synth {
        /// Scenario configuration (JSON)
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Infer weekly night-time homes
    Homes {
        #[arg(long, required = true, num_args = 1..)]
        xdr: Vec<PathBuf>,
        #[arg(long)]
        antennas: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Classify migrations and build origin-destination tables
    Migrate {
        /// Output directory of `homes`
        #[arg(long)]
        homes: PathBuf,
        #[arg(long)]
        comunas: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build daily mobility indices and quarantine strata
    Indices {
        #[arg(long, required = true, num_args = 1..)]
        xdr: Vec<PathBuf>,
        #[arg(long)]
        antennas: PathBuf,
        /// Output directory of `homes`
        #[arg(long)]
        homes: PathBuf,
        #[arg(long)]
        quarantines: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the migration and mobility analyses
    Analyze {
        /// Output directories of `migrate`, one per year
        #[arg(long = "migration", required = true, num_args = 1..)]
        migration: Vec<PathBuf>,
        #[arg(long)]
        comunas: PathBuf,
        /// Census flows (`level,direction,origin,destination,flow`)
        #[arg(long)]
        census: Option<PathBuf>,
        /// Output directory of `indices`
        #[arg(long)]
        indices: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render the analysis summary as Markdown
    Report {
        /// Output directory of `analyze`
        #[arg(long)]
        analysis: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-encode an XDR log as CSV or binary
    Convert {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        antennas: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
}

/// Flag values after merging the command line over the config file.
struct Settings {
    window: WindowOptions,
    ingest: IngestOptions,
    threads: Option<usize>,
    format: Option<XdrFormat>,
    seed: Option<u64>,
    year_set: bool,
    tz_set: bool,
}

fn settings(flags: &GlobalFlags) -> Result<Settings> {
    let file: FileFlags = match &flags.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text)
                .map_err(|e| migramob::Error::validation(format!("{}: {e}", path.display())))?
        }
        None => FileFlags::default(),
    };
    let defaults = WindowOptions::default();
    let ingest_defaults = IngestOptions::default();
    let year = flags.window_year.or(file.window_year);
    let tz = flags.tz_offset.or(file.tz_offset);
    Ok(Settings {
        window: WindowOptions {
            year: year.unwrap_or(defaults.year),
            tz_offset_hours: tz.unwrap_or(defaults.tz_offset_hours),
            baseline_week: flags.baseline_week.or(file.baseline_week),
        },
        ingest: IngestOptions {
            min_night_events: flags
                .min_night_events
                .or(file.min_night_events)
                .unwrap_or(ingest_defaults.min_night_events),
            max_drop_fraction: flags
                .max_drop_fraction
                .or(file.max_drop_fraction)
                .unwrap_or(ingest_defaults.max_drop_fraction),
        },
        threads: flags.threads.or(file.threads),
        format: flags.format.or(file.format).map(XdrFormat::from),
        seed: flags.seed.or(file.seed),
        year_set: year.is_some(),
        tz_set: tz.is_some(),
    })
}

fn load_scenario(path: &Path, s: &Settings) -> Result<ScenarioConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut cfg: ScenarioConfig = serde_json::from_str(&text)
        .map_err(|e| migramob::Error::validation(format!("{}: {e}", path.display())))?;
    if let Some(seed) = s.seed {
        cfg.seed = seed;
    }
    if s.year_set {
        cfg.year = s.window.year;
    }
    if s.tz_set {
        cfg.tz_offset_hours = s.window.tz_offset_hours;
    }
    Ok(cfg)
}

fn print_manifest(m: &RunManifest, out: &Path) {
    println!("{} -> {} (digest {})", m.stage, out.display(), &m.digest[..16]);
    if let Some(st) = &m.ingest {
        println!(
            "  events read {}, dropped {} malformed, {} unknown antenna, {} out of window",
            st.events_read, st.events_dropped_malformed, st.events_dropped_unknown_antenna, st.events_dropped_out_of_window
        );
    }
}

fn run(cli: Cli) -> Result<()> {
    let s = settings(&cli.global)?;
    let threads = s.threads;
    match cli.command {
        Command::Synth { scenario, out } => {
            let cfg = load_scenario(&scenario, &s)?;
            let format = s.format.unwrap_or(XdrFormat::Csv);
            let m = pipeline::with_threads(threads, || pipeline::cmd_synth(&cfg, format, &out))??;
            print_manifest(&m, &out);
        }
        Command::Homes { xdr, antennas, out } => {
            let window = s.window.build()?;
            let m = pipeline::with_threads(threads, || pipeline::cmd_homes(&xdr, &antennas, &window, &s.ingest, &out))??;
            print_manifest(&m, &out);
        }
        Command::Migrate { homes, comunas, out } => {
            let m = pipeline::with_threads(threads, || pipeline::cmd_migrate(&homes, &comunas, &out))??;
            print_manifest(&m, &out);
        }
        Command::Indices { xdr, antennas, homes, quarantines, out } => {
            let m = pipeline::with_threads(threads, || {
                pipeline::cmd_indices(&xdr, &antennas, &homes, quarantines.as_deref(), &s.ingest, &out)
            })??;
            print_manifest(&m, &out);
        }
        Command::Analyze { migration, comunas, census, indices, out } => {
            let inputs = AnalyzeInputs { migration_dirs: migration, comunas, census, indices_dir: indices };
            let m = pipeline::with_threads(threads, || pipeline::cmd_analyze(&inputs, &out))??;
            print_manifest(&m, &out);
        }
        Command::Report { analysis, out } => {
            let m = pipeline::cmd_report(&analysis, &out)?;
            print_manifest(&m, &out);
        }
        Command::Convert { input, antennas, output } => {
            let window = s.window.build()?;
            let format = s.format.unwrap_or(XdrFormat::Binary);
            let st = pipeline::cmd_convert(&input, &antennas, &window, format, &output)?;
            println!("convert -> {} ({} events kept, {} dropped)", output.display(), st.kept(), st.dropped());
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<migramob::Error>() {
            return e.exit_code() as u8;
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 4;
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

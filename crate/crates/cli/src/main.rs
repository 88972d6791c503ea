mod commands;
mod config;

use std::process::ExitCode;

const USAGE: &str = "usage: langtail <command> [--config FILE] [--key value ...]

commands:
  synth      generate a synthetic long-tail corpus        (needs out)
  bank       build and align the semantic entity bank     (needs corpus, out; optional bank, checkpoint)
  train      run the full learning-by-clustering pipeline (needs corpus, out; optional bank)
  eval       Hungarian-matched OA/mAcc/mIoU               (needs pred, gt; optional out)
  transfer   label a corpus with a checkpoint's prototypes (needs checkpoint, corpus, out)
  report     per-class long-tail table for plotting       (needs pred, gt; optional out)

Any config key can be given as a flag (--dump-spectral, --unmatched drop, --threads 4,
--seed 7, ...). Flags override the config file. LANGTAIL_LOG=quiet|info|debug sets logging.
Exit status: 0 ok, 1 usage, 2 data or format, 3 numeric failure.";

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(langtail::Error),
}

impl CliError {
    pub fn context(self, at: &str) -> Self {
        match self {
            CliError::Usage(m) => CliError::Usage(format!("{at}: {m}")),
            other => other,
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Core(langtail::Error::Config(_)) => 1,
            CliError::Core(e) if e.is_numeric() => 3,
            CliError::Core(_) => 2,
        }
    }
}

impl From<langtail::Error> for CliError {
    fn from(e: langtail::Error) -> Self {
        CliError::Core(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

fn init_logging() {
    let level = match std::env::var("LANGTAIL_LOG").as_deref() {
        Ok("quiet") => log::LevelFilter::Off,
        Ok("debug") => log::LevelFilter::Debug,
        _ => log::LevelFilter::Info,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).target(env_logger::Target::Stderr).init();
}

fn main() -> ExitCode {
    init_logging();
    let args: Vec<String> = std::env::args().skip(1).collect();
    if matches!(args.first().map(String::as_str), Some("help" | "--help" | "-h")) {
        println!("{USAGE}");
        return ExitCode::SUCCESS;
    }
    match commands::run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("langtail: {e}");
            if matches!(e, CliError::Usage(_)) {
                eprintln!("{USAGE}");
            }
            ExitCode::from(e.exit_code())
        }
    }
}

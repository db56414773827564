//! `rxtriage`: batch front end for fitting RX backgrounds, scoring archives,
//! ranking sequences, rendering heat maps and serving the triage API.
//!
//! Exit codes: 0 ok, 1 I/O failure, 2 validation failure, 3 partial success
//! (some sequences skipped).

mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rxtriage_core::render::NormalizationMode;
use rxtriage_core::spectral::DEFAULT_RIDGE_LAMBDA;
use rxtriage_core::triage::{RankKey, SortOrder};

#[derive(Debug, Parser)]
#[command(
    name = "rxtriage",
    version,
    about = "Multispectral novelty triage with the RX detector"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit an RX background model over a manifest's sequences.
    Fit(FitArgs),
    /// Score every sequence of a manifest and write the score database.
    Score(ScoreArgs),
    /// Rank scored sequences.
    Rank(RankArgs),
    /// Render one sequence's heat map to PNG.
    Render(RenderArgs),
    /// Spearman rank correlation between two ranking CSVs.
    Spearman(SpearmanArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Model JSON path, or a directory with --local-per-image.
    #[arg(long)]
    pub out: PathBuf,
    /// Divide each band by the grayscale RGB reference before fitting.
    #[arg(long)]
    pub brightness_correct: bool,
    /// Relative ridge added to the covariance diagonal.
    #[arg(long = "lambda", default_value_t = DEFAULT_RIDGE_LAMBDA)]
    pub lambda: f64,
    /// Fit one model per sequence from its own pixels.
    #[arg(long)]
    pub local_per_image: bool,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub scores_out: PathBuf,
    /// Also write raw RXM1 score maps, one `<id>.rxm` per sequence.
    #[arg(long)]
    pub maps_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RankArgs {
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long, default_value = "max", value_parser = parse_from_str::<RankKey>)]
    pub key: RankKey,
    #[arg(long, default_value = "desc", value_parser = parse_from_str::<SortOrder>)]
    pub order: SortOrder,
    /// Keep only the first K rows.
    #[arg(long)]
    pub top: Option<usize>,
    /// Keep only the last K rows.
    #[arg(long)]
    pub bottom: Option<usize>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub sequence: String,
    #[arg(long, default_value = "local", value_parser = parse_from_str::<NormalizationMode>)]
    pub norm: NormalizationMode,
    #[arg(long)]
    pub out: PathBuf,
    /// JSON colormap `{"stops":[{"position":0.0,"color":[r,g,b]},...]}`.
    #[arg(long)]
    pub colormap: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SpearmanArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 256)]
    pub cache_capacity: usize,
    /// Allowed CORS origin (default: any).
    #[arg(long)]
    pub cors_origin: Option<String>,
}

fn parse_from_str<T: std::str::FromStr<Err = String>>(s: &str) -> Result<T, String> {
    s.parse()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit(args) => commands::fit(&args),
        Command::Score(args) => commands::score(&args),
        Command::Rank(args) => commands::rank(&args),
        Command::Render(args) => commands::render(&args),
        Command::Spearman(args) => commands::spearman(&args),
        Command::Serve(args) => commands::serve(&args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.exit_code()
        }
    }
}

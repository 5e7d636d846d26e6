//! `voxsr`: one binary, one subcommand per pipeline stage.
//!
//! Logs go to standard error; reports go to standard output or `--out`.
//! A failed stage prints `{"stage", "kind", "detail"}` on standard error and
//! exits with status 1; usage errors exit with status 2.

mod commands;
mod config;
mod files;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use voxsr::metrics::EvalMode;
use voxsr::phantom::PhantomKind;
use voxsr::sampler::SplitRole;
use voxsr::upsample::Interp;
use voxsr::{Dims, Error, Group, Result, Spacing};

use crate::config::{overlay, ConfigFile};

#[derive(Debug, Parser)]
#[command(name = "voxsr", version, about = "Volumetric super-resolution data pipeline")]
struct Cli {
    #[command(flatten)]
    globals: Globals,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct Globals {
    /// Seed for every random draw; replaces seeds inside spec files.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Validate inputs and configuration, print the resolved plan, write nothing.
    #[arg(long, global = true)]
    pub dry_run: bool,
    /// JSON file with per-stage blocks; flags given on the command line win.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Size of the global worker pool.
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    /// Output location of the stage.
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Replace existing outputs.
    #[arg(long, global = true)]
    pub overwrite: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Normalize a raw volume or slice stack to u16, optionally with a threshold mask.
    Ingest(IngestArgs),
    /// Build a 2x local-mean pyramid and write it as a store group.
    Pyramid(PyramidArgs),
    /// Write a volume as a single-level store group.
    Pack(PackArgs),
    /// Align the LR group onto the downsampled HR grid and write the REG group.
    Register(RegisterArgs),
    /// Match REG slice intensities to the downsampled HR slices.
    Match(MatchArgs),
    /// Draw LR/HR patch pairs and dump them as raw blobs plus an index.
    Sample(SampleArgs),
    /// Linear super-resolution surrogate.
    #[command(subcommand)]
    Sr(SrCommand),
    /// Per-slice PSNR / SSIM / NRMSE / TV of a prediction against a reference.
    Eval(EvalArgs),
    /// Mean total variation of a volume.
    Tv(TvArgs),
    /// Radially averaged power profile of one slice.
    Spectrum(SpectrumArgs),
    /// Generate a synthetic specimen and write it as a store.
    Phantom(PhantomArgs),
    /// Run the domain-gap experiment on a phantom.
    Gap(GapArgs),
}

#[derive(Debug, Subcommand)]
enum SrCommand {
    /// Fit a model on patch pairs drawn from a store.
    Fit(SrFitArgs),
    /// Super-resolve a volume by tiled inference with a fitted model or an interpolator.
    Apply(SrApplyArgs),
    /// Blend recorded tile predictions.
    Replay(SrReplayArgs),
}

impl Command {
    fn stage(&self) -> &'static str {
        match self {
            Command::Ingest(_) => "ingest",
            Command::Pyramid(_) => "pyramid",
            Command::Pack(_) => "pack",
            Command::Register(_) => "register",
            Command::Match(_) => "match",
            Command::Sample(_) => "sample",
            Command::Sr(SrCommand::Fit(_)) => "sr-fit",
            Command::Sr(SrCommand::Apply(_)) => "sr-apply",
            Command::Sr(SrCommand::Replay(_)) => "sr-replay",
            Command::Eval(_) => "eval",
            Command::Tv(_) => "tv",
            Command::Spectrum(_) => "spectrum",
            Command::Phantom(_) => "phantom",
            Command::Gap(_) => "gap",
        }
    }
}

fn parse_triple<T: std::str::FromStr + Copy>(s: &str) -> std::result::Result<[T; 3], String> {
    let parts: Vec<T> = s
        .split(',')
        .map(|p| p.trim().parse::<T>().map_err(|_| format!("cannot parse {p:?}")))
        .collect::<std::result::Result<_, _>>()?;
    match parts[..] {
        [v] => Ok([v; 3]),
        [a, b, c] => Ok([a, b, c]),
        _ => Err(format!("expected one value or three comma-separated values, got {s:?}")),
    }
}

fn parse_dims(s: &str) -> std::result::Result<Dims, String> {
    parse_triple::<usize>(s).map(|[z, y, x]| Dims::new(z, y, x))
}

fn parse_spacing(s: &str) -> std::result::Result<Spacing, String> {
    parse_triple::<f64>(s)
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct IngestArgs {
    /// Sidecar JSON of a flat binary volume, or a directory of 16-bit slices.
    #[arg(long)]
    pub input: PathBuf,
    /// Voxel size in micrometers for slice stacks: one value or `z,y,x`.
    #[arg(long, value_parser = parse_spacing, default_value = "1")]
    pub spacing: Spacing,
    #[arg(long, default_value_t = 0.1)]
    pub p_low: f64,
    #[arg(long, default_value_t = 99.9)]
    pub p_high: f64,
    /// Attach a foreground mask of voxels at or above this value.
    #[arg(long)]
    pub threshold: Option<u16>,
    /// Group used when the output is a store.
    #[arg(long, default_value = "HR")]
    pub group: Group,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct PyramidArgs {
    /// Sidecar JSON or store holding the level-0 volume.
    #[arg(long)]
    pub input: PathBuf,
    /// Group read when the input is a store.
    #[arg(long, default_value = "HR")]
    pub input_group: Group,
    #[arg(long, default_value = "HR")]
    pub group: Group,
    /// Coarsest level factor: 1, 2, 4 or 8.
    #[arg(long, default_value_t = 8)]
    pub max_factor: usize,
    #[arg(long)]
    pub chunk: Option<usize>,
    #[arg(long)]
    pub compression: Option<u32>,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct PackArgs {
    /// Sidecar JSON volume.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "LR")]
    pub group: Group,
    #[arg(long)]
    pub chunk: Option<usize>,
    #[arg(long)]
    pub compression: Option<u32>,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct RegisterArgs {
    /// Store with an HR pyramid and an LR group; REG is written into it.
    #[arg(long)]
    pub store: PathBuf,
    /// The fixed image is HR level log2(scale).
    #[arg(long, default_value_t = 4)]
    pub scale: usize,
    /// Translation search radius in LR voxels.
    #[arg(long, default_value_t = 8)]
    pub search_radius: usize,
    /// Stop after the translational stage.
    #[arg(long)]
    pub translation_only: bool,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct MatchArgs {
    /// Store holding REG and the HR pyramid. REG is replaced in place
    /// unless `--out` names another store.
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub scale: usize,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct SampleArgs {
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub count: u64,
    #[arg(long, default_value_t = 4)]
    pub scale: usize,
    #[arg(long, default_value_t = 32)]
    pub lr_patch: usize,
    #[arg(long, default_value = "REG")]
    pub lr_group: Group,
    #[arg(long, default_value_t = 0)]
    pub lr_level: usize,
    #[arg(long, default_value_t = 0)]
    pub hr_level: usize,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[arg(long, default_value_t = 1)]
    pub threads_per_worker: usize,
    #[arg(long, default_value_t = 4)]
    pub queue_capacity: usize,
    #[arg(long, default_value = "train")]
    pub role: Role,
    #[arg(long)]
    pub no_augment: bool,
    #[arg(long, default_value_t = 0.05)]
    pub fg_floor: f64,
    #[arg(long, default_value_t = 0.1)]
    pub test_fraction: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Test,
}

impl From<Role> for SplitRole {
    fn from(r: Role) -> Self {
        match r {
            Role::Train => SplitRole::Train,
            Role::Test => SplitRole::Test,
        }
    }
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct SrFitArgs {
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub scale: usize,
    /// Neighbourhood side (odd).
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lambda: f64,
    /// Number of training pairs.
    #[arg(long, default_value_t = 64)]
    pub pairs: u64,
    #[arg(long, default_value_t = 16)]
    pub lr_patch: usize,
    #[arg(long, default_value = "LR")]
    pub lr_group: Group,
    /// Enable flips, rotations, contrast and scaling.
    #[arg(long)]
    pub augment: bool,
    #[arg(long, default_value_t = 0.1)]
    pub test_fraction: f64,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct SrApplyArgs {
    /// Model JSON from `sr fit`; omit to use `--interp`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value = "trilinear")]
    pub interp: Interp,
    /// Scale for `--interp`; a model carries its own.
    #[arg(long, default_value_t = 4)]
    pub scale: usize,
    /// Sidecar JSON or store holding the LR volume.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "LR")]
    pub group: Group,
    #[arg(long, default_value_t = 0)]
    pub level: usize,
    #[arg(long, value_parser = parse_dims, default_value = "32")]
    pub tile: Dims,
    #[arg(long, default_value_t = 4)]
    pub overlap: usize,
    /// Also record every tile prediction in this directory for replay.
    #[arg(long)]
    pub record: Option<PathBuf>,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct SrReplayArgs {
    /// Directory with a manifest and tile blobs.
    #[arg(long)]
    pub replay: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "LR")]
    pub group: Group,
    #[arg(long, default_value_t = 0)]
    pub level: usize,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct EvalArgs {
    /// Sidecar JSON or store (level 0 of `--group`).
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long = "ref")]
    pub reference: PathBuf,
    #[arg(long, default_value = "HR")]
    pub group: Group,
    #[arg(long, default_value_t = 4)]
    pub scale: usize,
    #[arg(long, default_value = "every-sth")]
    pub mode: EvalMode,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct TvArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "HR")]
    pub group: Group,
    #[arg(long, default_value_t = 0)]
    pub level: usize,
    #[arg(long, default_value_t = 4)]
    pub scale: usize,
    #[arg(long, default_value = "every-sth")]
    pub mode: EvalMode,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct SpectrumArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "HR")]
    pub group: Group,
    #[arg(long, default_value_t = 0)]
    pub level: usize,
    /// z index; defaults to the middle slice.
    #[arg(long)]
    pub slice: Option<usize>,
    /// Extend the profile to the corner frequencies.
    #[arg(long)]
    pub full: bool,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct PhantomArgs {
    /// PhantomSpec JSON; flags below replace its fields.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub kind: Option<PhantomKind>,
    /// One side or `z,y,x`; multiples of 8.
    #[arg(long, value_parser = parse_dims)]
    pub dims: Option<Dims>,
    #[arg(long, default_value_t = 8)]
    pub max_factor: usize,
    /// Also write an LR group: `down` (block means) or `real` (acquisition surrogate).
    #[arg(long, default_value = "none")]
    pub lr: LrKind,
    /// DegradeSpec JSON for `--lr real`.
    #[arg(long)]
    pub degrade: Option<PathBuf>,
    #[arg(long)]
    pub scale: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum LrKind {
    None,
    Down,
    Real,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct GapArgs {
    /// PhantomSpec JSON; the built-in experiment phantom when absent.
    #[arg(long)]
    pub phantom: Option<PathBuf>,
    /// DegradeSpec JSON; the default acquisition surrogate when absent.
    #[arg(long)]
    pub degrade: Option<PathBuf>,
    #[arg(long)]
    pub scale: Option<usize>,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lambda: f64,
    #[arg(long, default_value_t = 64)]
    pub pairs: u64,
    #[arg(long, default_value_t = 16)]
    pub lr_patch: usize,
    #[arg(long, default_value_t = 4)]
    pub overlap: usize,
}

fn leaf_matches(matches: &ArgMatches) -> &ArgMatches {
    let mut m = matches;
    while let Some((_, sub)) = m.subcommand() {
        m = sub;
    }
    m
}

fn run(cli: Cli, matches: &ArgMatches) -> Result<()> {
    let cfg = ConfigFile::load(cli.globals.config.as_deref())?;
    let globals = overlay(cli.globals, matches, &cfg.globals())?;
    if let Some(n) = globals.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| Error::Config(format!("cannot size the worker pool: {e}")))?;
    }
    let stage = cli.command.stage();
    let m = leaf_matches(matches);
    let block = cfg.block(stage)?;
    let g = &globals;
    match cli.command {
        Command::Ingest(a) => commands::ingest(g, overlay(a, m, &block)?),
        Command::Pyramid(a) => commands::pyramid(g, overlay(a, m, &block)?),
        Command::Pack(a) => commands::pack(g, overlay(a, m, &block)?),
        Command::Register(a) => commands::register(g, overlay(a, m, &block)?),
        Command::Match(a) => commands::match_intensities(g, overlay(a, m, &block)?),
        Command::Sample(a) => commands::sample(g, overlay(a, m, &block)?),
        Command::Sr(SrCommand::Fit(a)) => commands::sr_fit(g, overlay(a, m, &block)?),
        Command::Sr(SrCommand::Apply(a)) => commands::sr_apply(g, overlay(a, m, &block)?),
        Command::Sr(SrCommand::Replay(a)) => commands::sr_replay(g, overlay(a, m, &block)?),
        Command::Eval(a) => commands::eval(g, overlay(a, m, &block)?),
        Command::Tv(a) => commands::tv(g, overlay(a, m, &block)?),
        Command::Spectrum(a) => commands::spectrum(g, overlay(a, m, &block)?),
        Command::Phantom(a) => commands::phantom(g, overlay(a, m, &block)?),
        Command::Gap(a) => commands::gap(g, overlay(a, m, &block)?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let matches = Cli::command().get_matches();
    let cli = Cli::from_arg_matches(&matches).unwrap_or_else(|e| e.exit());
    let stage = cli.command.stage();
    match run(cli, &matches) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let payload = serde_json::json!({
                "stage": stage,
                "kind": e.kind(),
                "detail": e.to_string(),
            });
            eprintln!("{payload}");
            ExitCode::from(1)
        }
    }
}

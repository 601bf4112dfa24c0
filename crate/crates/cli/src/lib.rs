//! `pcqe` command-line driver.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime error.

pub mod rd;

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::Serialize;

use pcqe_core::config::Config;
use pcqe_core::distortion::{bitrate_proxy, distort, DistortionProfile, DEFAULT_STEP_SCALE, QP_LADDER};
use pcqe_core::metrics::{bd_metrics, full_psnr};
use pcqe_core::patch::{generate_patches, group_patches, seeds_for_patch_size, write_archive, PatchArchive};
use pcqe_core::pointcloud::{load_ply, save_ply, Channel, PlyFormat, PointCloud};
use pcqe_core::trainer::{
    build_dataset, enhance_cloud, load_channel_models, save_channel_checkpoints, train, write_metrics_csv,
    EnhanceModels, EnhanceOptions,
};
use pcqe_core::{Error, Result};

use rd::{load_rd_curve, write_rd_csv, RdMetric, RdRow};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "pcqe", version, about = "Point-cloud attribute quality enhancement")]
pub struct Cli {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// More log output (-v info, -vv debug); RUST_LOG takes precedence.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Apply the codec-distortion proxy to a PLY and record its bitrate.
    Distort(DistortArgs),
    /// Cut a cloud into overlapping patches and write a patch archive.
    Patchify(PatchifyArgs),
    /// Train per-channel generators and critics.
    Train(TrainArgs),
    /// Enhance a decoded cloud with trained generators.
    Enhance(EnhanceArgs),
    /// PSNR of a test cloud, or an RD sweep over the QP ladder.
    Eval(EvalArgs),
    /// Bjøntegaard deltas between two RD curves.
    Bdrate(BdrateArgs),
}

#[derive(Debug, Args)]
pub struct DistortArgs {
    /// Original cloud (PLY with RGB colors).
    pub input: PathBuf,
    /// Quantization parameter; larger is coarser.
    #[arg(long)]
    pub qp: i32,
    /// Neighbourhood size of the low-pass blend; 0 disables it.
    #[arg(long, default_value_t = 8)]
    pub smoothing_k: usize,
    /// Multiplier on the QP step 2^((qp-4)/6).
    #[arg(long, default_value_t = DEFAULT_STEP_SCALE)]
    pub step_scale: f64,
    /// Output PLY.
    #[arg(short, long)]
    pub output: PathBuf,
    /// Sidecar JSON with the profile, bitrate and PSNR [default: OUTPUT with .json extension].
    #[arg(long)]
    pub sidecar: Option<PathBuf>,
    #[command(flatten)]
    pub ply: PlyOut,
}

#[derive(Debug, Args)]
pub struct PlyOut {
    /// PLY encoding of written clouds.
    #[arg(long, default_value = "binary_le", value_parser = parse_ply_format)]
    pub format: PlyFormat,
}

fn parse_ply_format(s: &str) -> std::result::Result<PlyFormat, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Debug, Args)]
pub struct PatchifyArgs {
    pub input: PathBuf,
    /// Target points per patch.
    #[arg(long, default_value_t = 2048)]
    pub patch_size: usize,
    /// Overlap ratio.
    #[arg(long, default_value_t = 2.0)]
    pub overlap: f64,
    /// Neighbour patches per group; 0 skips grouping.
    #[arg(long, default_value_t = 6)]
    pub num_nei: usize,
    /// Output patch archive.
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Original clouds; replaces `data.originals` from the config.
    pub originals: Vec<PathBuf>,
    /// TOML config; every key is optional.
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    /// Override one config key, e.g. `--set train.epochs=3`. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Decoded counterparts of the originals, same order; replaces `data.distorted`.
    #[arg(long, num_args = 1..)]
    pub distorted: Vec<PathBuf>,
    /// Channels to train, one independent job each [default: train.channel].
    #[arg(long, value_delimiter = ',', value_parser = parse_channel)]
    pub channels: Vec<Channel>,
    /// Checkpoint directory; receives `{channel}/generator.ckpt`, `critic.ckpt` and `metrics.csv`.
    #[arg(short, long)]
    pub output: PathBuf,
}

fn parse_channel(s: &str) -> std::result::Result<Channel, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Debug, Args)]
pub struct EnhanceArgs {
    /// Decoded cloud.
    pub input: PathBuf,
    /// Checkpoint directory laid out as `{channel}/generator.ckpt`.
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(short, long)]
    pub output: PathBuf,
    /// Channels to enhance; the rest pass through.
    #[arg(long, value_delimiter = ',', value_parser = parse_channel, default_value = "Y,Cb,Cr")]
    pub channels: Vec<Channel>,
    #[command(flatten)]
    pub patching: PatchOverrides,
    #[command(flatten)]
    pub ply: PlyOut,
}

/// Patching settings; unset values come from the checkpoint's training config.
#[derive(Debug, Args)]
pub struct PatchOverrides {
    #[arg(long)]
    pub patch_size: Option<usize>,
    #[arg(long)]
    pub overlap: Option<f64>,
    #[arg(long)]
    pub num_nei: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Reference (original) cloud.
    pub reference: PathBuf,
    /// Cloud to score against the reference. Omit together with --ladder.
    pub test: Option<PathBuf>,
    /// Sweep the distortion proxy over QPs and write an RD CSV instead.
    #[arg(long)]
    pub ladder: bool,
    /// QPs of the sweep.
    #[arg(long, value_delimiter = ',', default_values_t = QP_LADDER)]
    pub qps: Vec<i32>,
    #[arg(long, default_value_t = 8)]
    pub smoothing_k: usize,
    /// Multiplier on the QP step 2^((qp-4)/6).
    #[arg(long, default_value_t = DEFAULT_STEP_SCALE)]
    pub step_scale: f64,
    /// Enhance each distorted cloud with these checkpoints before scoring.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', value_parser = parse_channel, default_value = "Y,Cb,Cr")]
    pub channels: Vec<Channel>,
    #[command(flatten)]
    pub patching: PatchOverrides,
    /// RD CSV destination for --ladder [default: stdout].
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BdrateArgs {
    pub anchor: PathBuf,
    pub test: PathBuf,
    /// PSNR column the curves are built from.
    #[arg(long, value_enum, default_value = "y")]
    pub metric: RdMetric,
}

/// Parse `args` (including the program name), run, and return the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    init_logging(cli.verbose);
    let mut stdout = std::io::stdout().lock();
    match dispatch(&cli, &mut stdout) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
}

pub fn dispatch(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Distort(a) => cmd_distort(a, cli.seed, out),
        Command::Patchify(a) => cmd_patchify(a, out),
        Command::Train(a) => cmd_train(a, cli.seed, out),
        Command::Enhance(a) => cmd_enhance(a, out),
        Command::Eval(a) => cmd_eval(a, out),
        Command::Bdrate(a) => cmd_bdrate(a, out),
    }
}

fn stdout_err(e: std::io::Error) -> Error {
    Error::io("<stdout>", e)
}

/// Load a PLY and convert its colors to YCbCr.
pub fn load_ycbcr(path: &Path) -> Result<PointCloud> {
    load_ply(path)?.rgb_to_ycbcr()
}

fn save_ycbcr(pc: &PointCloud, path: &Path, format: PlyFormat) -> Result<()> {
    save_ply(&pc.ycbcr_to_rgb()?, path, format)
}

#[derive(Serialize)]
struct DistortRecord<'a> {
    input: &'a Path,
    output: &'a Path,
    /// Marks the numbers as coming from the simulator, not a real codec.
    codec: &'static str,
    profile: &'a DistortionProfile,
    step: f64,
    effective_step: f64,
    bitrate_bpip: f64,
    psnr_y: f64,
    psnr_cb: f64,
    psnr_cr: f64,
    psnr_ycbcr: f64,
}

fn finite_or_cap(v: f64) -> f64 {
    v.min(pcqe_core::metrics::PSNR_CAP)
}

fn cmd_distort(a: &DistortArgs, seed: Option<u64>, out: &mut dyn Write) -> Result<()> {
    let profile = DistortionProfile { qp: a.qp, smoothing_k: a.smoothing_k, seed: seed.unwrap_or(0), step_scale: a.step_scale };
    profile.validate()?;
    let original = load_ycbcr(&a.input)?;
    let distorted = distort(&original, &profile)?;
    let bitrate = bitrate_proxy(&distorted, &profile);
    let [y, cb, cr, ycbcr] = full_psnr(&original, &distorted)?;
    save_ycbcr(&distorted, &a.output, a.ply.format)?;
    let sidecar = a.sidecar.clone().unwrap_or_else(|| a.output.with_extension("json"));
    let record = DistortRecord {
        input: &a.input,
        output: &a.output,
        codec: "distortion proxy",
        profile: &profile,
        step: profile.step(),
        effective_step: profile.effective_step(),
        bitrate_bpip: bitrate,
        psnr_y: finite_or_cap(y),
        psnr_cb: finite_or_cap(cb),
        psnr_cr: finite_or_cap(cr),
        psnr_ycbcr: finite_or_cap(ycbcr),
    };
    let json = serde_json::to_string_pretty(&record).map_err(|e| Error::Argument(e.to_string()))?;
    std::fs::write(&sidecar, json + "\n").map_err(|e| Error::io(&sidecar, e))?;
    writeln!(out, "qp {} bitrate {bitrate:.4} bpip, Y-PSNR {y:.4} dB -> {}", a.qp, a.output.display()).map_err(stdout_err)
}

fn cmd_patchify(a: &PatchifyArgs, out: &mut dyn Write) -> Result<()> {
    let pc = load_ycbcr(&a.input)?;
    let m = seeds_for_patch_size(pc.len(), a.patch_size, a.overlap);
    let patches = generate_patches(&pc, m, a.overlap)?;
    let groups = if a.num_nei == 0 { Vec::new() } else { group_patches(&patches, a.num_nei.min(m - 1))? };
    let archive = PatchArchive { num_points: pc.len(), patches, groups };
    let f = File::create(&a.output).map_err(|e| Error::io(&a.output, e))?;
    write_archive(BufWriter::new(f), &archive)?;
    writeln!(
        out,
        "{} patches of {} points from {} points -> {}",
        archive.patches.len(),
        archive.patches[0].len(),
        pc.len(),
        a.output.display()
    )
    .map_err(stdout_err)
}

fn resolve_train_config(a: &TrainArgs, seed: Option<u64>) -> Result<Config> {
    let mut cfg = match &a.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    for o in &a.overrides {
        cfg.set(o)?;
    }
    if !a.originals.is_empty() {
        cfg.data.originals = a.originals.clone();
    }
    if !a.distorted.is_empty() {
        cfg.data.distorted = a.distorted.clone();
    }
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    cfg.validate()?;
    if cfg.data.originals.is_empty() {
        return Err(Error::Argument("no training clouds: pass originals or set data.originals".into()));
    }
    Ok(cfg)
}

/// `(original, distorted)` pairs in YCbCr, as described by the data section.
pub fn training_pairs(cfg: &Config) -> Result<Vec<(PointCloud, PointCloud)>> {
    let data = &cfg.data;
    let mut pairs = Vec::new();
    for (i, path) in data.originals.iter().enumerate() {
        let original = load_ycbcr(path)?;
        if let Some(dpath) = data.distorted.get(i) {
            pairs.push((original, load_ycbcr(dpath)?));
            continue;
        }
        for &qp in &data.qps {
            let profile = DistortionProfile { qp, smoothing_k: data.smoothing_k, seed: cfg.train.seed, step_scale: data.step_scale };
            let distorted = distort(&original, &profile)?;
            pairs.push((original.clone(), distorted));
        }
    }
    Ok(pairs)
}

fn cmd_train(a: &TrainArgs, seed: Option<u64>, out: &mut dyn Write) -> Result<()> {
    let cfg = resolve_train_config(a, seed)?;
    let channels = if a.channels.is_empty() { vec![cfg.train.channel] } else { a.channels.clone() };
    let pairs = training_pairs(&cfg)?;
    std::fs::create_dir_all(&a.output).map_err(|e| Error::io(&a.output, e))?;
    let resolved = a.output.join("config.toml");
    std::fs::write(&resolved, cfg.to_toml_string()?).map_err(|e| Error::io(&resolved, e))?;
    for channel in channels {
        let mut tc = cfg.train.clone();
        tc.channel = channel;
        let data = build_dataset(&pairs, channel, tc.patch_size, tc.overlap, tc.num_nei)?;
        info!("channel {channel}: {} patches from {} pairs", data.len(), pairs.len());
        let outcome = train(&data, &tc, &cfg.generator, &cfg.critic, &cfg.loss)?;
        save_channel_checkpoints(&a.output, &tc, &outcome)?;
        let csv_path = a.output.join(channel.name()).join("metrics.csv");
        let f = File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
        write_metrics_csv(BufWriter::new(f), &outcome.log).map_err(|e| Error::io(&csv_path, e))?;
        let last = outcome.log.last();
        writeln!(
            out,
            "{channel}: {} generator steps, val PSNR {:.4} dB (distorted {:.4} dB) -> {}",
            outcome.generator_steps,
            last.map_or(f64::NAN, |r| r.val_psnr),
            outcome.val_psnr_baseline,
            a.output.join(channel.name()).display()
        )
        .map_err(stdout_err)?;
    }
    Ok(())
}

fn enhance_options(models: &EnhanceModels, channels: &[Channel], o: &PatchOverrides) -> Result<EnhanceOptions> {
    let mut opts = EnhanceOptions { channels: channels.to_vec(), ..EnhanceOptions::default() };
    if let Some(first) = channels.first() {
        if let Some(t) = &models.get(*first)?.train {
            opts.patch_size = t.patch_size;
            opts.overlap = t.overlap;
            opts.num_nei = t.num_nei;
        }
    }
    opts.patch_size = o.patch_size.unwrap_or(opts.patch_size);
    opts.overlap = o.overlap.unwrap_or(opts.overlap);
    opts.num_nei = o.num_nei.unwrap_or(opts.num_nei);
    Ok(opts)
}

fn cmd_enhance(a: &EnhanceArgs, out: &mut dyn Write) -> Result<()> {
    let models = load_channel_models(&a.ckpt, &a.channels)?;
    let opts = enhance_options(&models, &a.channels, &a.patching)?;
    let pc = load_ycbcr(&a.input)?;
    let enhanced = enhance_cloud(&pc, &models, &opts)?;
    save_ycbcr(&enhanced, &a.output, a.ply.format)?;
    writeln!(out, "enhanced {} points -> {}", pc.len(), a.output.display()).map_err(stdout_err)
}

fn fmt_psnr(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:.4}")
    }
}

fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let reference = load_ycbcr(&a.reference)?;
    if !a.ladder {
        let test = a.test.as_ref().ok_or_else(|| Error::Argument("eval needs a test cloud or --ladder".into()))?;
        let test = load_ycbcr(test)?;
        if test.geometry() != reference.geometry() {
            return Err(Error::Argument("reference and test clouds must share geometry and point order".into()));
        }
        let [y, cb, cr, ycbcr] = full_psnr(&reference, &test)?;
        return writeln!(
            out,
            "PSNR Y {} dB\nPSNR Cb {} dB\nPSNR Cr {} dB\nPSNR YCbCr {} dB",
            fmt_psnr(y),
            fmt_psnr(cb),
            fmt_psnr(cr),
            fmt_psnr(ycbcr)
        )
        .map_err(stdout_err);
    }
    if a.test.is_some() {
        return Err(Error::Argument("--ladder takes only the reference cloud".into()));
    }
    let models = a.ckpt.as_ref().map(|dir| load_channel_models(dir, &a.channels)).transpose()?;
    let opts = models.as_ref().map(|m| enhance_options(m, &a.channels, &a.patching)).transpose()?;
    let mut rows = Vec::with_capacity(a.qps.len());
    for &qp in &a.qps {
        let profile = DistortionProfile { qp, smoothing_k: a.smoothing_k, seed: 0, step_scale: a.step_scale };
        profile.validate()?;
        let distorted = distort(&reference, &profile)?;
        let bitrate = bitrate_proxy(&distorted, &profile);
        let scored = match (&models, &opts) {
            (Some(m), Some(o)) => enhance_cloud(&distorted, m, o)?,
            _ => distorted,
        };
        let psnr = full_psnr(&reference, &scored)?.map(finite_or_cap);
        info!("qp {qp}: {bitrate:.4} bpip, Y-PSNR {:.4} dB", psnr[0]);
        rows.push(RdRow { qp, bitrate, psnr });
    }
    match &a.output {
        Some(path) => {
            let f = File::create(path).map_err(|e| Error::io(path, e))?;
            write_rd_csv(BufWriter::new(f), &rows)
        }
        None => write_rd_csv(out, &rows),
    }
}

fn cmd_bdrate(a: &BdrateArgs, out: &mut dyn Write) -> Result<()> {
    let anchor = load_rd_curve(&a.anchor, a.metric)?;
    let test = load_rd_curve(&a.test, a.metric)?;
    let bd = bd_metrics(&anchor, &test)?;
    // Round before printing so identical curves never show as "-0.00".
    let tidy = |v: f64, scale: f64| (v * scale).round() / scale + 0.0;
    writeln!(out, "BD-rate {:.2}%", tidy(bd.bd_rate_percent, 100.0)).map_err(stdout_err)?;
    writeln!(out, "BD-PSNR {:.4} dB", tidy(bd.bd_psnr_db, 1e4)).map_err(stdout_err)
}

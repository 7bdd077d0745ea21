//! `semxfer` command-line front end.
//!
//! Exit codes: 0 on success, 1 when a check fails, 2 on usage or I/O errors.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use semxfer::bench::{self, BenchConfig};
use semxfer::eval::{self, Battery, EvalOptions, Manifest};
use semxfer::selfcheck::{self, SelfCheckConfig};
use semxfer::service::{Server, ADDR_ENV, DEFAULT_ADDR};
use semxfer::tensor_io::{read_image, read_tensor, render_correspondence, write_ppm, write_tensor, Tensor};
use semxfer::{
    masked_cosine_match, transfer_step, CorrespondenceMap, FeatureMap, ObjectMask, ObjectPair, SessionConfig,
};

#[derive(Parser)]
#[command(
    name = "semxfer",
    version,
    about = "Masked feature matching, transfer and evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Match target features to reference features; writes a u32 correspondence tensor.
    Match(MatchArgs),
    /// One offline transfer step over tensor files.
    Transfer(TransferArgs),
    /// Score a manifest of samples and write a TSV report.
    Eval(EvalArgs),
    /// Color each target pixel with its matched reference pixel.
    RenderFlow(RenderArgs),
    /// Randomized oracle battery.
    Selfcheck(SelfcheckArgs),
    /// Time the matching kernel on random inputs.
    Bench(BenchArgs),
    /// Run the streaming server.
    Serve(ServeArgs),
}

#[derive(Args)]
struct MatchArgs {
    #[arg(long)]
    target: PathBuf,
    #[arg(long)]
    reference: PathBuf,
    #[arg(long)]
    target_mask: PathBuf,
    #[arg(long)]
    ref_mask: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1e-8)]
    epsilon: f64,
}

#[derive(Args)]
struct TransferArgs {
    #[arg(long)]
    target: PathBuf,
    /// Reference feature map; repeat once per object.
    #[arg(long = "ref", required = true)]
    refs: Vec<PathBuf>,
    /// Reference mask, one per `--ref`.
    #[arg(long = "ref-mask", required = true)]
    ref_masks: Vec<PathBuf>,
    /// Target mask, one per `--ref`.
    #[arg(long = "target-mask", required = true)]
    target_masks: Vec<PathBuf>,
    /// `key=value` session config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    t: u32,
    #[arg(long)]
    layer: u32,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// hist, clip, depth, miou, oks or flow
    battery: Battery,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    report: PathBuf,
    /// Histogram bins per channel.
    #[arg(long, default_value_t = semxfer::metrics::DEFAULT_BINS_PER_CHANNEL)]
    bins: u32,
    /// Compare raw depth values instead of min-max normalized ones.
    #[arg(long)]
    raw_depth: bool,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    corr: PathBuf,
    #[arg(long)]
    ref_image: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SelfcheckArgs {
    #[arg(long, default_value_t = 100)]
    seeds: u64,
    #[arg(long, default_value_t = 16)]
    max_dim: usize,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 64)]
    h: usize,
    #[arg(long, default_value_t = 64)]
    w: usize,
    #[arg(long, default_value_t = 640)]
    c: usize,
    #[arg(long, default_value_t = 1.0)]
    mask_fill: f64,
    #[arg(long, default_value_t = 10)]
    iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads; all cores when omitted.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, env = ADDR_ENV, default_value = DEFAULT_ADDR)]
    addr: String,
}

/// Failure categories mapped to exit codes.
enum Failure {
    Check(String),
    Usage(String),
}

impl<E: std::error::Error> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Usage(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Match(a) => cmd_match(a),
        Command::Transfer(a) => cmd_transfer(a),
        Command::Eval(a) => cmd_eval(a),
        Command::RenderFlow(a) => cmd_render_flow(a),
        Command::Selfcheck(a) => cmd_selfcheck(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Serve(a) => cmd_serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn with_path<T>(path: &Path, r: semxfer::Result<T>) -> Result<T, Failure> {
    r.map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn load_map(path: &Path) -> Result<FeatureMap, Failure> {
    with_path(path, read_tensor(path).and_then(FeatureMap::try_from))
}

fn load_mask(path: &Path) -> Result<ObjectMask, Failure> {
    with_path(path, read_tensor(path).and_then(ObjectMask::try_from))
}

fn cmd_match(a: MatchArgs) -> CmdResult {
    let target = load_map(&a.target)?;
    let reference = load_map(&a.reference)?;
    let m_t = load_mask(&a.target_mask)?;
    let m_r = load_mask(&a.ref_mask)?;
    let corr = masked_cosine_match(&target, &reference, &m_t, &m_r, a.epsilon)?;
    with_path(&a.out, write_tensor(&a.out, &Tensor::from(&corr)))
}

fn cmd_transfer(a: TransferArgs) -> CmdResult {
    if a.refs.len() != a.ref_masks.len() || a.refs.len() != a.target_masks.len() {
        return Err(Failure::Usage(format!(
            "need one --ref-mask and one --target-mask per --ref (got {}, {}, {})",
            a.refs.len(),
            a.ref_masks.len(),
            a.target_masks.len()
        )));
    }
    let config = match &a.config {
        Some(p) => with_path(
            p,
            fs::read_to_string(p)
                .map_err(Into::into)
                .and_then(|s| SessionConfig::parse_key_values(&s)),
        )?,
        None => SessionConfig::default(),
    };
    let target = load_map(&a.target)?;
    let objects = a
        .refs
        .iter()
        .zip(&a.ref_masks)
        .zip(&a.target_masks)
        .map(|((r, mr), mt)| Ok(ObjectPair::new(load_map(r)?, load_mask(mr)?, load_mask(mt)?)?))
        .collect::<Result<Vec<_>, Failure>>()?;
    let out = transfer_step(&target, &objects, &config, a.t, a.layer)?;
    with_path(&a.out, write_tensor(&a.out, &Tensor::from(&out)))
}

fn cmd_eval(a: EvalArgs) -> CmdResult {
    let manifest = with_path(&a.manifest, Manifest::load(&a.manifest))?;
    let opts = EvalOptions {
        bins_per_channel: a.bins,
        normalize_depth: !a.raw_depth,
        ..EvalOptions::default()
    };
    let report = eval::run(a.battery, &manifest, &opts);
    fs::write(&a.report, report.to_tsv()).map_err(|e| Failure::Usage(format!("{}: {e}", a.report.display())))?;
    if let Some(mean) = report.mean {
        println!("MEAN\t{mean:?}");
    }
    Ok(())
}

fn cmd_render_flow(a: RenderArgs) -> CmdResult {
    let corr = with_path(&a.corr, read_tensor(&a.corr).and_then(CorrespondenceMap::try_from))?;
    let colors = with_path(&a.ref_image, read_image(&a.ref_image))?;
    let img = render_correspondence(&corr, &colors)?;
    with_path(&a.out, write_ppm(&a.out, &img))
}

fn cmd_selfcheck(a: SelfcheckArgs) -> CmdResult {
    if a.seeds == 0 || a.max_dim == 0 {
        return Err(Failure::Usage("--seeds and --max-dim must be at least 1".into()));
    }
    let report = selfcheck::run(&SelfCheckConfig {
        seeds: a.seeds,
        max_dim: a.max_dim,
        ..SelfCheckConfig::default()
    });
    println!("{report}");
    if report.all_passed() {
        Ok(())
    } else {
        Err(Failure::Check("selfcheck reported failures".into()))
    }
}

fn cmd_bench(a: BenchArgs) -> CmdResult {
    let report = bench::run(&BenchConfig {
        height: a.h,
        width: a.w,
        channels: a.c,
        mask_fill: a.mask_fill,
        iters: a.iters,
        seed: a.seed,
        threads: a.threads,
    })?;
    for (i, d) in report.latencies.iter().enumerate() {
        println!("iter\t{i}\tlatency_ms\t{:.3}", d.as_secs_f64() * 1e3);
    }
    println!("mean_latency_ms\t{:.3}", report.mean_latency().as_secs_f64() * 1e3);
    println!("matches_per_sec\t{:.1}", report.matches_per_sec());
    println!("checksum\t{:016x}", report.checksum);
    Ok(())
}

fn cmd_serve(a: ServeArgs) -> CmdResult {
    let server = Server::bind(&a.addr)?;
    eprintln!("listening on {}", server.local_addr()?);
    server.serve()?;
    Ok(())
}

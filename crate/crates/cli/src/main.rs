//! `latnav`: command-line front end for the navigation laboratory.
//!
//! Subcommands cover the full pipeline: dataset generation, collision
//! encoder training, policy training, evaluation, debug rendering, and
//! latency measurement. Every run writes into a run directory holding the
//! effective configuration snapshot, the seeds used, and checksums of the
//! produced artifacts, which is enough to reproduce the run exactly.
//!
//! Exit codes: 0 on success, 1 for user errors (bad flags, unreadable or
//! invalid configuration, missing inputs), 2 for internal failures.

use clap::{Args, Parser, Subcommand};
use latnav_core::camera::{render_depth, save_raster, DepthImage};
use latnav_core::collision::{collision_image, FilterMode};
use latnav_core::config::RunConfig;
use latnav_core::dce::{gen_dce_dataset, masked_mse_of_model, train_dce, DceModel, DceSample};
use latnav_core::env::Observation;
use latnav_core::eval::eval_policy;
use latnav_core::math::{Pose, Quaternion};
use latnav_core::neural::Checkpoint;
use latnav_core::rng;
use latnav_core::trainer::{train_rl, PolicyNet};
use latnav_core::world::{generate_world, sample_start_goal, to_text, RobotBox};
use std::fmt::Write as _;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

type Scalar = latnav_core::Scalar;

/// Environment variable controlling the worker thread count.
const WORKERS_ENV: &str = "LATNAV_WORKERS";

#[derive(Parser)]
#[command(name = "latnav", version, about = "depth-latent aerial navigation laboratory")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory for outputs and metadata.
    #[arg(long, global = true, default_value = "run")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// Render a synthetic collision-image dataset.
    GenDataset,
    /// Train the collision encoder on a generated dataset.
    TrainDce {
        /// Dataset file; defaults to <out>/dataset.bin.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Train the navigation policy with recurrent PPO.
    TrainRl {
        /// Trained collision encoder checkpoint.
        #[arg(long)]
        dce: Option<PathBuf>,
        /// Resume from a previous training checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a trained policy across curriculum levels.
    Eval {
        /// Comma-separated curriculum levels, overriding the config.
        #[arg(long, value_delimiter = ',')]
        levels: Option<Vec<u32>>,
        /// Runs per level, overriding the config.
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Dump depth, collision, and reconstruction rasters for one scene.
    RenderDebug,
    /// Measure per-frame encode + policy latency.
    BenchLatency,
}

/// User mistakes exit 1; everything else exits 2.
enum CliError {
    User(String),
    Internal(String),
}

impl From<latnav_core::Error> for CliError {
    fn from(e: latnav_core::Error) -> Self {
        use latnav_core::Error as E;
        match e {
            E::Config(_) | E::Format { .. } | E::LatentDimMismatch { .. } | E::Io(_)
            | E::Image(_) => CliError::User(e.to_string()),
            other => CliError::Internal(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::from(latnav_core::Error::Io(e))
    }
}

fn user(msg: impl Into<String>) -> CliError {
    CliError::User(msg.into())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_workers() {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::User(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Internal(msg)) => {
            eprintln!("internal error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn configure_workers() -> Result<(), String> {
    let Ok(val) = std::env::var(WORKERS_ENV) else {
        return Ok(());
    };
    let n: usize = val
        .parse()
        .map_err(|_| format!("{WORKERS_ENV} must be a positive integer, got {val:?}"))?;
    if n == 0 {
        return Err(format!("{WORKERS_ENV} must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = load_config(cli.common.config.as_deref())?;
    if let Some(seed) = cli.common.seed {
        cfg.train.seed = seed;
    }
    let seed = cli.common.seed.unwrap_or(cfg.train.seed);
    let out = &cli.common.out;
    fs::create_dir_all(out).map_err(|e| user(format!("cannot create {}: {e}", out.display())))?;
    snapshot_metadata(&cfg, seed, out)?;

    match cli.cmd {
        Cmd::GenDataset => cmd_gen_dataset(&cfg, seed, out),
        Cmd::TrainDce { dataset } => cmd_train_dce(&cfg, seed, out, dataset),
        Cmd::TrainRl { dce, resume } => cmd_train_rl(&cfg, out, dce, resume),
        Cmd::Eval { levels, runs } => cmd_eval(&cfg, seed, out, levels, runs),
        Cmd::RenderDebug => cmd_render_debug(&cfg, seed, out),
        Cmd::BenchLatency => cmd_bench_latency(&cfg, seed, out),
    }?;

    write_checksums(out)?;
    Ok(())
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, CliError> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    let text = fs::read_to_string(path)
        .map_err(|e| user(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| user(format!("invalid config {}: {e}", path.display())))
}

/// Snapshot the effective configuration and seed into the run directory.
fn snapshot_metadata(cfg: &RunConfig, seed: u64, out: &Path) -> Result<(), CliError> {
    let text = toml::to_string_pretty(cfg)
        .map_err(|e| CliError::Internal(format!("config serialization: {e}")))?;
    fs::write(out.join("config.toml"), text).map_err(CliError::from)?;
    fs::write(out.join("seeds.txt"), format!("seed {seed}\n")).map_err(CliError::from)?;
    Ok(())
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// Checksum every artifact in the run directory (excluding the checksum
/// file itself) so a rerun can be verified byte for byte.
fn write_checksums(out: &Path) -> Result<(), CliError> {
    let mut names: Vec<String> = fs::read_dir(out)
        .map_err(CliError::from)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_file())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n != "checksums.txt")
        .collect();
    names.sort();
    let mut text = String::new();
    for name in names {
        let bytes = fs::read(out.join(&name)).map_err(CliError::from)?;
        let _ = writeln!(text, "{:016x}  {name}", fnv1a64(&bytes));
    }
    fs::write(out.join("checksums.txt"), text).map_err(CliError::from)?;
    Ok(())
}

const DATASET_MAGIC: &[u8; 4] = b"LNDS";

fn save_dataset(samples: &[DceSample<Scalar>], path: &Path) -> Result<(), CliError> {
    let file = fs::File::create(path).map_err(CliError::from)?;
    let mut w = BufWriter::new(file);
    let io = |e: std::io::Error| CliError::from(latnav_core::Error::from(e));
    w.write_all(DATASET_MAGIC).map_err(io)?;
    w.write_all(&(samples.len() as u32).to_le_bytes()).map_err(io)?;
    for s in samples {
        latnav_core::camera::write_raster(&s.input, &mut w)?;
        latnav_core::camera::write_raster(&s.target, &mut w)?;
        let bytes: Vec<u8> = s.mask.iter().map(|&m| m as u8).collect();
        w.write_all(&bytes).map_err(io)?;
    }
    w.flush().map_err(io)?;
    Ok(())
}

fn load_dataset(path: &Path) -> Result<Vec<DceSample<Scalar>>, CliError> {
    let file = fs::File::open(path)
        .map_err(|e| user(format!("cannot open dataset {}: {e}", path.display())))?;
    let mut r = BufReader::new(file);
    let io = |e: std::io::Error| CliError::from(latnav_core::Error::from(e));
    let mut header = [0u8; 8];
    r.read_exact(&mut header).map_err(io)?;
    if &header[0..4] != DATASET_MAGIC {
        return Err(user(format!("{} is not a dataset file", path.display())));
    }
    let n = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let input: DepthImage<Scalar> = latnav_core::camera::read_raster(&mut r)?;
        let target: DepthImage<Scalar> = latnav_core::camera::read_raster(&mut r)?;
        let mut bytes = vec![0u8; target.data.len()];
        r.read_exact(&mut bytes).map_err(io)?;
        samples.push(DceSample {
            input,
            target,
            mask: bytes.iter().map(|&b| b != 0).collect(),
        });
    }
    Ok(samples)
}

fn robot_from_dims(dims: [f64; 3]) -> RobotBox<Scalar> {
    RobotBox::new(dims[0] as Scalar, dims[1] as Scalar, dims[2] as Scalar)
}

fn cmd_gen_dataset(cfg: &RunConfig, seed: u64, out: &Path) -> Result<(), CliError> {
    let d = &cfg.dataset;
    let robot = robot_from_dims(d.robot_dims);
    println!(
        "rendering {} train + {} held-out samples at {}x{}",
        d.n_train, d.n_heldout, d.camera.width, d.camera.height
    );
    let train = gen_dce_dataset::<Scalar>(d.n_train, &d.gen, &d.camera, &robot, rng::derive(seed, 1));
    save_dataset(&train, &out.join("dataset.bin"))?;
    let heldout =
        gen_dce_dataset::<Scalar>(d.n_heldout, &d.gen, &d.camera, &robot, rng::derive(seed, 2));
    save_dataset(&heldout, &out.join("heldout.bin"))?;
    println!("wrote {} and {}", out.join("dataset.bin").display(), out.join("heldout.bin").display());
    Ok(())
}

fn cmd_train_dce(
    cfg: &RunConfig,
    seed: u64,
    out: &Path,
    dataset: Option<PathBuf>,
) -> Result<(), CliError> {
    let path = dataset.unwrap_or_else(|| out.join("dataset.bin"));
    let samples = load_dataset(&path)?;
    let mut dce_cfg = cfg.dce.clone();
    if let Some(first) = samples.first() {
        if first.input.width != dce_cfg.input_width || first.input.height != dce_cfg.input_height {
            return Err(user(format!(
                "dataset resolution {}x{} does not match encoder config {}x{}",
                first.input.width, first.input.height, dce_cfg.input_width, dce_cfg.input_height
            )));
        }
        dce_cfg.input_width = first.input.width;
        dce_cfg.input_height = first.input.height;
    }
    println!("training encoder on {} samples", samples.len());
    let (model, records) = train_dce::<Scalar>(&samples, dce_cfg, seed)?;
    model.to_checkpoint().save(&out.join("dce.ckpt"))?;

    let mut csv = String::from("epoch,batch,loss,masked_mse,kl\n");
    for r in &records {
        let _ = writeln!(csv, "{},{},{:.6},{:.6},{:.6}", r.epoch, r.batch, r.loss, r.masked_mse, r.kl);
    }
    fs::write(out.join("dce_training.csv"), csv).map_err(CliError::from)?;

    let heldout_path = path.with_file_name("heldout.bin");
    if heldout_path.exists() {
        let heldout = load_dataset(&heldout_path)?;
        let mse = masked_mse_of_model(&model, &heldout);
        println!("held-out masked MSE: {mse:.4}");
        fs::write(out.join("heldout_mse.txt"), format!("{mse:.6}\n"))
            .map_err(CliError::from)?;
    }
    println!("wrote {}", out.join("dce.ckpt").display());
    Ok(())
}

fn load_dce(path: &Path) -> Result<Arc<DceModel<Scalar>>, CliError> {
    if path.as_os_str().is_empty() {
        return Err(user("no collision encoder checkpoint given"));
    }
    let ck = Checkpoint::load(path)
        .map_err(|e| user(format!("cannot load encoder checkpoint {}: {e}", path.display())))?;
    Ok(Arc::new(DceModel::from_checkpoint(&ck)?))
}

fn cmd_train_rl(
    cfg: &RunConfig,
    out: &Path,
    dce: Option<PathBuf>,
    resume: Option<PathBuf>,
) -> Result<(), CliError> {
    let dce_path = dce.unwrap_or_else(|| PathBuf::from(&cfg.eval.dce_checkpoint));
    let dce = load_dce(&dce_path)?;
    println!(
        "training policy: {} envs, {} total steps, seed {}",
        cfg.train.n_envs, cfg.train.total_steps, cfg.train.seed
    );
    let summary = train_rl(cfg.train.clone(), dce, out, resume.as_deref())?;
    println!(
        "finished at {} env steps ({} updates), curriculum level {}",
        summary.env_steps, summary.updates, summary.final_level
    );
    Ok(())
}

fn load_policy(path: &Path) -> Result<PolicyNet<Scalar>, CliError> {
    if path.as_os_str().is_empty() {
        return Err(user("no policy checkpoint given"));
    }
    let ck = Checkpoint::load(path)
        .map_err(|e| user(format!("cannot load policy checkpoint {}: {e}", path.display())))?;
    Ok(PolicyNet::from_checkpoint(&ck)?)
}

fn cmd_eval(
    cfg: &RunConfig,
    seed: u64,
    out: &Path,
    levels: Option<Vec<u32>>,
    runs: Option<usize>,
) -> Result<(), CliError> {
    let levels = levels.unwrap_or_else(|| cfg.eval.levels.clone());
    let runs = runs.unwrap_or(cfg.eval.runs_per_level);
    let dce = load_dce(Path::new(&cfg.eval.dce_checkpoint))?;
    let policy = load_policy(Path::new(&cfg.eval.policy_checkpoint))?;

    let report = eval_policy(&policy, &dce, &cfg.train.env, &levels, runs, seed)?;
    print!("{}", report.to_table());
    fs::write(out.join("eval.csv"), report.to_csv()).map_err(CliError::from)?;
    let mut episodes = String::from(latnav_core::env::EpisodeRecord::csv_header());
    episodes.push('\n');
    for rec in &report.records {
        episodes.push_str(&rec.csv_row());
        episodes.push('\n');
    }
    fs::write(out.join("episodes.csv"), episodes).map_err(CliError::from)?;
    fs::write(out.join("eval_table.txt"), report.to_table()).map_err(CliError::from)?;
    Ok(())
}

fn cmd_render_debug(cfg: &RunConfig, seed: u64, out: &Path) -> Result<(), CliError> {
    let r = &cfg.render;
    let robot = robot_from_dims(r.robot_dims);
    let world = generate_world::<Scalar>(r.level, &cfg.train.env.world, seed);
    let (start, goal) = sample_start_goal(&world, &robot, rng::derive(seed, 1))?;
    let to_goal = goal - start;
    let yaw = to_goal.y.atan2(to_goal.x);
    let pose = Pose::new(start, Quaternion::from_yaw(yaw));

    let depth = render_depth(&world, pose, &r.camera);
    let collision = collision_image(&depth, &r.camera, &robot, FilterMode::Rmq);
    save_raster(&depth, &out.join("depth.raster"))?;
    save_raster(&collision.0, &out.join("collision.raster"))?;
    fs::write(out.join("world.txt"), to_text(&world)).map_err(CliError::from)?;

    if !r.dce_checkpoint.is_empty() {
        let dce = load_dce(Path::new(&r.dce_checkpoint))?;
        let (mu, _) = dce.encode_params(&depth)?;
        let recon = dce.decode(&mu)?;
        save_raster(&recon.0, &out.join("reconstruction.raster"))?;
    }
    println!("wrote scene rasters to {}", out.display());
    Ok(())
}

fn cmd_bench_latency(cfg: &RunConfig, seed: u64, out: &Path) -> Result<(), CliError> {
    let b = &cfg.bench;
    let mut dce_cfg = cfg.dce.clone();
    dce_cfg.input_width = b.camera.width;
    dce_cfg.input_height = b.camera.height;
    let dce = DceModel::<Scalar>::new(dce_cfg, seed);
    let policy = PolicyNet::<Scalar>::new(
        Observation::<Scalar>::dim(dce.latent_dim()),
        &cfg.train.policy,
        seed,
    );

    let world = generate_world::<Scalar>(5, &cfg.train.env.world, seed);
    let depth = render_depth(&world, Pose::identity(), &b.camera);
    let mut hidden = policy.zero_hidden();
    let mut obs = vec![0.0 as Scalar; policy.obs_dim];

    let mut times_ms = Vec::with_capacity(b.frames);
    for i in 0..b.warmup + b.frames {
        let t0 = Instant::now();
        let (mu, _) = dce.encode_params(&depth)?;
        obs[policy.obs_dim - mu.len()..].copy_from_slice(&mu);
        let (_, _, h_new, _) = policy.forward(&obs, &hidden)?;
        hidden = h_new;
        if i >= b.warmup {
            times_ms.push(t0.elapsed().as_secs_f64() * 1e3);
        }
    }

    let mut sorted = times_ms.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mean = times_ms.iter().sum::<f64>() / times_ms.len() as f64;
    let p50 = sorted[sorted.len() / 2];
    let p95 = sorted[((sorted.len() * 95) / 100).min(sorted.len() - 1)];
    let max = *sorted.last().unwrap();
    println!(
        "encode+policy latency over {} frames at {}x{}: mean {:.2} ms, p50 {:.2} ms, p95 {:.2} ms, max {:.2} ms",
        times_ms.len(),
        b.camera.width,
        b.camera.height,
        mean,
        p50,
        p95,
        max
    );
    let mut csv = String::from("frame,ms\n");
    for (i, t) in times_ms.iter().enumerate() {
        let _ = writeln!(csv, "{i},{t:.4}");
    }
    fs::write(out.join("bench.csv"), csv).map_err(CliError::from)?;
    fs::write(
        out.join("bench_summary.txt"),
        format!("mean_ms {mean:.4}\np50_ms {p50:.4}\np95_ms {p95:.4}\nmax_ms {max:.4}\n"),
    )
    .map_err(CliError::from)?;
    Ok(())
}

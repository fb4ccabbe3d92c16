use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rfinterp::aloha::{AlohaParams, RankChoice};
use rfinterp::beamform::{bmode_from_cube, synthesize_scan_lines, ImageGeometry, DEFAULT_DYNAMIC_RANGE_DB};
use rfinterp::framenet::{NetConfig, TrainParams};
use rfinterp::pipeline::{
    benchmark, interpolate_frames, lines_path, load_line_cube, make_dataset, masks_for, run_pipeline, save_line_cube,
    train_on_dataset, BenchmarkSpec, DatasetSpec, Interpolator, Method, MetricsRow, PathKind, PipelineConfig, Scheme,
    PIPELINE_ALOHA_RANK_TOL,
};
use rfinterp::sampling::SamplingMask;
use rfinterp::simcore::{
    load_config, read_cube, save_config, sidecar_path, simulate_rf, write_cube, Phantom, PhantomSpec, ProbeConfig,
    PulseSpec, RFCube,
};
use rfinterp::{Error, Result};

/// Sub-sampled RF simulation, interpolation, beamforming and scoring.
#[derive(Parser)]
#[command(name = "rfinterp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate RF frames of a random phantom into an RFC1 file.
    Simulate(SimulateArgs),
    /// Write a sampling mask.
    Mask(MaskArgs),
    /// Fill the missing samples of a cube and expand it to scan lines.
    Interpolate(InterpolateArgs),
    /// Delay-and-sum beamform a cube into a B-mode PGM.
    Beamform(BeamformArgs),
    /// Generate a dataset manifest and train a network on it.
    Train(TrainArgs),
    /// Run the full pipeline on held-out phantoms and report metrics.
    Evaluate(EvaluateArgs),
    /// Timing and quality of every method on every scheme.
    Benchmark(BenchmarkArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ProbeKind {
    Linear,
    Convex,
}

#[derive(Args, Clone)]
struct ProbeArgs {
    /// Built-in probe geometry.
    #[arg(long, value_enum, default_value = "linear")]
    probe: ProbeKind,
    /// Probe configuration JSON; overrides --probe.
    #[arg(long)]
    probe_config: Option<PathBuf>,
    /// Depth samples per trace.
    #[arg(long)]
    depth_samples: Option<usize>,
    /// Speckle scatterers per phantom.
    #[arg(long)]
    speckle: Option<usize>,
}

impl ProbeArgs {
    fn probe(&self) -> Result<ProbeConfig> {
        let mut probe = match &self.probe_config {
            Some(path) => load_config(path).map_err(|e| missing(path, e))?,
            None => match self.probe {
                ProbeKind::Linear => ProbeConfig::default(),
                ProbeKind::Convex => ProbeConfig::convex(),
            },
        };
        if let Some(n) = self.depth_samples {
            probe.depth_samples = n;
        }
        probe.validate()?;
        Ok(probe)
    }

    fn phantom(&self) -> PhantomSpec {
        let mut spec = PhantomSpec::default();
        if let Some(n) = self.speckle {
            spec.num_speckle = n;
        }
        spec
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    ZeroFill,
    Linear,
    Aloha,
    Cnn,
}

#[derive(Args, Clone)]
struct MethodArgs {
    #[arg(long, value_enum, default_value = "zero_fill")]
    method: MethodArg,
    /// Network checkpoint for the cnn method.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Fixed rank for the low-rank method; estimated when absent.
    #[arg(long)]
    aloha_rank: Option<usize>,
    #[arg(long, default_value_t = 50)]
    aloha_iters: usize,
    /// Frames in the linear method's temporal window (odd).
    #[arg(long, default_value_t = 3)]
    linear_window: usize,
}

impl MethodArgs {
    fn method(&self) -> Result<Method> {
        Ok(match self.method {
            MethodArg::ZeroFill => Method::ZeroFill,
            MethodArg::Linear => Method::Linear,
            MethodArg::Aloha => Method::Aloha,
            MethodArg::Cnn => Method::Cnn {
                checkpoint: self
                    .checkpoint
                    .clone()
                    .ok_or_else(|| Error::config("--checkpoint is required for the cnn method"))?,
            },
        })
    }

    fn apply(&self, cfg: &mut PipelineConfig) -> Result<()> {
        cfg.method = self.method()?;
        cfg.aloha = AlohaParams {
            rank: self.aloha_rank.map_or(RankChoice::Auto(PIPELINE_ALOHA_RANK_TOL), RankChoice::Fixed),
            max_iters: self.aloha_iters,
            ..cfg.aloha.clone()
        };
        cfg.linear.window = self.linear_window;
        Ok(())
    }
}

#[derive(Args, Clone)]
struct SchemeArgs {
    #[arg(long, value_enum, default_value = "rx_x4")]
    scheme: Scheme,
    /// Interpolation order; defaults to the scheme's preferred path.
    #[arg(long, value_enum)]
    path: Option<PathKind>,
    /// Scan lines per transmit event.
    #[arg(long, default_value_t = 4)]
    mla: usize,
    /// Replace the scheme's receive factor (1 disables sub-sampling).
    #[arg(long)]
    rx_factor: Option<usize>,
}

impl SchemeArgs {
    fn apply(&self, cfg: &mut PipelineConfig) {
        cfg.scheme = self.scheme;
        cfg.path = self.path;
        cfg.mla_factor = self.mla;
        cfg.rx_factor_override = self.rx_factor;
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    probe: ProbeArgs,
    /// Phantom seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    frames: usize,
    /// Lateral phantom motion between frames (m).
    #[arg(long, default_value_t = 0.05e-3)]
    frame_motion: f64,
    /// Output RFC1 file; the probe config goes to the `.json` sidecar.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MaskArgs {
    #[command(flatten)]
    scheme: SchemeArgs,
    /// Take the grid size from this cube.
    #[arg(long)]
    cube: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    num_rx: usize,
    #[arg(long, default_value_t = 96)]
    num_xmit: usize,
    /// Base mask seed; combined with --frame.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    frame: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InterpolateArgs {
    /// Input RFC1 file (all frames are used as context, the center one is output).
    #[arg(long)]
    cube: PathBuf,
    /// Mask applied to every frame; generated per frame from --seed when absent.
    #[arg(long)]
    mask: Option<PathBuf>,
    #[command(flatten)]
    scheme: SchemeArgs,
    #[command(flatten)]
    method: MethodArgs,
    /// Base mask seed.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output line cube (RFC1 plus `.lines.json`).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BeamformArgs {
    /// RFC1 cube; a `.lines.json` next to it marks a scan-line cube.
    #[arg(long)]
    cube: PathBuf,
    /// Scan lines per transmit when the input is an Rx-Xmit cube.
    #[arg(long, default_value_t = 4)]
    mla: usize,
    #[arg(long, default_value_t = DEFAULT_DYNAMIC_RANGE_DB)]
    dynamic_range: f64,
    /// Scan-convert convex images onto a `rows x cols` grid.
    #[arg(long, num_args = 2, value_names = ["ROWS", "COLS"])]
    scan_convert: Option<Vec<usize>>,
    /// Output PGM; a `.json` sidecar describes it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum NetPreset {
    Desk,
    Full,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    probe: ProbeArgs,
    #[command(flatten)]
    scheme: SchemeArgs,
    #[arg(long, default_value_t = 60)]
    phantoms: usize,
    #[arg(long, default_value_t = 10)]
    planes: usize,
    #[arg(long, value_enum, default_value = "desk")]
    net: NetPreset,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 8)]
    batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Halve the learning rate every this many epochs.
    #[arg(long, default_value_t = 50)]
    lr_decay_every: usize,
    /// Feed the sampling mask to the network as a second input channel.
    #[arg(long)]
    mask_channel: bool,
    /// Stop after the first epoch ending past this many seconds.
    #[arg(long)]
    budget_s: Option<f64>,
    /// Train on random full-height windows this many columns wide.
    #[arg(long)]
    crop_cols: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory: manifest.json, net.fnw, training.csv, training.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Base pipeline config JSON; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    probe: ProbeArgs,
    #[command(flatten)]
    scheme: SchemeArgs,
    #[command(flatten)]
    method: MethodArgs,
    /// First phantom seed; the next `--count - 1` seeds follow.
    #[arg(long, default_value_t = 1000)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    count: u64,
    /// Frames of temporal context per phantom.
    #[arg(long, default_value_t = 1)]
    frames: usize,
    /// Output directory: one subdirectory of intermediates per phantom and evaluate.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchmarkArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    probe: ProbeArgs,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "rx_x4,rx_x8,rx_xmit_4x2")]
    schemes: Vec<Scheme>,
    #[arg(long, value_delimiter = ',', default_value = "zero_fill,linear,aloha,cnn")]
    methods: Vec<String>,
    /// `scheme=path` pairs, repeatable.
    #[arg(long = "checkpoint")]
    checkpoints: Vec<String>,
    #[arg(long, default_value_t = 1000)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    count: u64,
    #[arg(long)]
    out: PathBuf,
}

fn missing(path: &Path, e: Error) -> Error {
    match e {
        Error::Io(io) => Error::MissingInput {
            path: path.to_path_buf(),
            reason: io.to_string(),
        },
        other => other,
    }
}

fn load_frames(path: &Path) -> Result<Vec<RFCube>> {
    let config = load_config(&sidecar_path(path)).map_err(|e| missing(&sidecar_path(path), e))?;
    let file = fs::File::open(path).map_err(|e| Error::MissingInput {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    read_cube(std::io::BufReader::new(file), Some(&config))
}

fn base_config(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        Some(p) => {
            let text = fs::read(p).map_err(|e| Error::MissingInput {
                path: p.to_path_buf(),
                reason: e.to_string(),
            })?;
            Ok(serde_json::from_slice(&text)?)
        }
        None => Ok(PipelineConfig::default()),
    }
}

fn parent_dir(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let cfg = PipelineConfig {
        probe: args.probe.probe()?,
        phantom: args.probe.phantom(),
        seed: args.seed,
        num_frames: args.frames,
        frame_motion: args.frame_motion,
        ..PipelineConfig::default()
    };
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let phantom = Phantom::random(&cfg.probe, &cfg.phantom, &mut rng);
    let pulse = PulseSpec::for_probe(&cfg.probe);
    let center = cfg.num_frames / 2;
    let frames = (0..cfg.num_frames)
        .map(|f| {
            let dx = (f as f64 - center as f64) * cfg.frame_motion;
            let mut cube = simulate_rf(&phantom.shifted(dx), &cfg.probe, &pulse)?;
            cube.frame_index = f;
            Ok(cube)
        })
        .collect::<Result<Vec<_>>>()?;
    parent_dir(&args.out)?;
    write_cube(std::io::BufWriter::new(fs::File::create(&args.out)?), &frames)?;
    save_config(&cfg.probe, &sidecar_path(&args.out))?;
    fs::write(args.out.with_extension("phantom.json"), serde_json::to_vec_pretty(&phantom)?)?;
    eprintln!("wrote {} frame(s) to {}", frames.len(), args.out.display());
    Ok(())
}

fn mask(args: MaskArgs) -> Result<()> {
    let mut cfg = PipelineConfig {
        mask_seed: args.seed,
        ..PipelineConfig::default()
    };
    args.scheme.apply(&mut cfg);
    let mut probe = match &args.cube {
        Some(path) => load_config(&sidecar_path(path)).map_err(|e| missing(&sidecar_path(path), e))?,
        None => ProbeConfig::default(),
    };
    if args.cube.is_none() {
        probe.num_rx_active = args.num_rx;
        probe.num_xmit = args.num_xmit;
        probe.num_elements = probe.num_elements.max(args.num_rx);
    }
    cfg.probe = probe.clone();
    cfg.validate()?;
    let mut frame = RFCube::zeros(ProbeConfig { depth_samples: 1, ..probe }, args.frame)?;
    frame.frame_index = args.frame;
    let mask = masks_for(&cfg, std::slice::from_ref(&frame))?.remove(0);
    parent_dir(&args.out)?;
    mask.write(std::io::BufWriter::new(fs::File::create(&args.out)?))?;
    eprintln!("kept {} of {} samples", mask.kept_count(), mask.shape().0 * mask.shape().1);
    Ok(())
}

fn interpolate(args: InterpolateArgs) -> Result<()> {
    let frames = load_frames(&args.cube)?;
    let mut cfg = PipelineConfig {
        probe: frames[0].config().clone(),
        mask_seed: args.seed,
        num_frames: frames.len(),
        ..PipelineConfig::default()
    };
    args.scheme.apply(&mut cfg);
    args.method.apply(&mut cfg)?;
    cfg.validate()?;
    let interpolator = Interpolator::from_config(&cfg)?;
    let masks = match &args.mask {
        Some(path) => {
            let file = fs::File::open(path).map_err(|e| Error::MissingInput {
                path: path.clone(),
                reason: e.to_string(),
            })?;
            vec![SamplingMask::read(std::io::BufReader::new(file))?; frames.len()]
        }
        None => masks_for(&cfg, &frames)?,
    };
    let out = interpolate_frames(&cfg, &interpolator, &frames, &masks)?;
    parent_dir(&args.out)?;
    save_line_cube(&out.scan_lines, frames[0].config(), &args.out)?;
    eprintln!(
        "{} planes in {:.1} ms ({:.3} ms/plane), {} scan lines",
        out.planes,
        out.elapsed_ms,
        out.elapsed_ms / out.planes.max(1) as f64,
        out.scan_lines.num_sl()
    );
    Ok(())
}

fn beamform(args: BeamformArgs) -> Result<()> {
    let (lines, probe) = if lines_path(&args.cube).is_file() {
        load_line_cube(&args.cube)?
    } else {
        let mut frames = load_frames(&args.cube)?;
        let center = frames.len() / 2;
        let cube = frames.swap_remove(center);
        (synthesize_scan_lines(&cube, args.mla)?, cube.config().clone())
    };
    let mut image = bmode_from_cube(&lines, &probe, args.dynamic_range)?;
    if let Some(rc) = &args.scan_convert {
        if matches!(image.geometry, ImageGeometry::Convex { .. }) {
            image = image.scan_convert(&probe, lines.provenance(), rc[0], rc[1])?;
        } else {
            return Err(Error::config("--scan-convert applies to convex probes only"));
        }
    }
    parent_dir(&args.out)?;
    image.write_pgm(&args.out)?;
    if image.degenerate {
        eprintln!("warning: input has no energy; image is blank");
    }
    Ok(())
}

fn train(args: TrainArgs) -> Result<()> {
    let spec = DatasetSpec {
        probe: args.probe.probe()?,
        phantom: args.probe.phantom(),
        num_phantoms: args.phantoms,
        planes_per_phantom: args.planes,
        scheme: args.scheme.scheme,
        path: args.scheme.path,
        mla_factor: args.scheme.mla,
        seed: args.seed,
        ..DatasetSpec::default()
    };
    let mut net_config = match args.net {
        NetPreset::Desk => NetConfig::desk(args.scheme.scheme.ratio()),
        NetPreset::Full => NetConfig::full(args.scheme.scheme.ratio()),
    };
    if args.mask_channel {
        net_config.in_channels = 2;
    }
    net_config.validate()?;
    let params = TrainParams {
        epochs: args.epochs,
        batch_size: args.batch,
        learning_rate: args.lr,
        lr_decay_every: args.lr_decay_every,
        seed: args.seed,
        time_budget_s: args.budget_s,
        crop: args.crop_cols.map(|c| (spec.probe.num_rx_active, c)),
        ..TrainParams::default()
    };
    params.validate()?;
    let manifest = make_dataset(&spec, &args.out)?;
    let checkpoint = args.out.join("net.fnw");
    let (_, report) = train_on_dataset(&manifest, &net_config, &params, &checkpoint)?;
    report.save_csv(&args.out.join("training.csv"))?;
    fs::write(args.out.join("training.json"), serde_json::to_vec_pretty(&report)?)?;
    eprintln!(
        "{} epochs, loss {:.4} -> {:.4} in {:.0} s; checkpoint {}",
        report.log.len(),
        report.initial_loss,
        report.final_loss(),
        report.elapsed_s,
        checkpoint.display()
    );
    if let Some(epoch) = report.diverged_at {
        return Err(Error::Diverged { epoch });
    }
    Ok(())
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    let mut cfg = base_config(args.config.as_deref())?;
    if args.config.is_none() {
        cfg.probe = args.probe.probe()?;
        cfg.phantom = args.probe.phantom();
    }
    args.scheme.apply(&mut cfg);
    args.method.apply(&mut cfg)?;
    cfg.num_frames = args.frames;
    cfg.validate()?;
    let mut csv = String::from(MetricsRow::CSV_HEADER);
    csv.push('\n');
    for seed in args.seed..args.seed + args.count {
        let run = PipelineConfig {
            seed,
            mask_seed: seed,
            out_dir: Some(args.out.join(format!("phantom_{seed}"))),
            ..cfg.clone()
        };
        let out = run_pipeline(&run)?;
        let mut row = out.metrics;
        row.frame = seed as usize;
        eprintln!("seed {seed}: psnr {:.2} dB, ssim {:.4}", row.psnr_db, row.ssim);
        csv.push_str(&row.csv_line());
        csv.push('\n');
    }
    fs::write(args.out.join("evaluate.csv"), csv)?;
    Ok(())
}

fn bench(args: BenchmarkArgs) -> Result<()> {
    let mut base = base_config(args.config.as_deref())?;
    if args.config.is_none() {
        base.probe = args.probe.probe()?;
        base.phantom = args.probe.phantom();
    }
    let mut checkpoints = BTreeMap::new();
    for pair in &args.checkpoints {
        let (scheme, path) = pair
            .split_once('=')
            .ok_or_else(|| Error::config(format!("--checkpoint expects scheme=path, got {pair}")))?;
        checkpoints.insert(scheme.parse::<Scheme>()?, PathBuf::from(path));
    }
    let spec = BenchmarkSpec {
        base,
        schemes: args.schemes,
        methods: args.methods,
        checkpoints,
        seeds: (args.seed..args.seed + args.count).collect(),
    };
    let table = benchmark(&spec)?;
    table.save(&args.out)?;
    print!("{}", table.to_markdown());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Mask(a) => mask(a),
        Command::Interpolate(a) => interpolate(a),
        Command::Beamform(a) => beamform(a),
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Benchmark(a) => bench(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config_error() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

//! Command-line surface. `main.rs` only maps [`run_from_args`] to an exit code.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::alignment::{align, karcher_mean, KarcherConfig};
use crate::dataset::{
    canonical_class_order, load_landmark_sequences, load_prepared, prepare, resample_sequence,
    save_prepared, synth_corpus, write_landmark_jsonl, ExpressionLabel, LandmarkSchema,
    PrepareConfig, PreparedDataset, SynthSpec, PREPARED_MAGIC,
};
use crate::error::{Error, ErrorClass};
use crate::evaluation::{
    class_means, class_separation, classical_mds, distance_matrix, embedding_silhouettes,
    export_scatter_svg,
};
use crate::geometry::{geodesic_distance, srvf_encode, LandmarkSequence, Srvf};
use crate::gradcheck::{check_all, GradcheckConfig};
use crate::motiongan::{load_checkpoint, save_checkpoint, train, NetConfig, TrainConfig};
use crate::synthesis::{
    fit_to_canvas, generate_landmark_sequence, render_heatmaps, transfer_motion,
    write_heatmap_pgms, write_heatmaps_npy, BoundsPolicy, HeatmapConfig, IntensityFactor,
};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Lib(#[from] Error),
    #[error("{0}")]
    CheckFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::CheckFailed(_) => 3,
            CliError::Lib(e) => match e.class() {
                ErrorClass::Data => 2,
                ErrorClass::Numerical => 3,
            },
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Clone, Parser, Serialize, Deserialize)]
#[command(name = "motionsrvf", version, about = "Elastic landmark-motion modelling and generation")]
pub struct Cli {
    /// Worker threads for the parallel stages. Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Only warnings and errors on stderr.
    #[arg(long, short, global = true)]
    #[serde(skip)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Write a labeled synthetic landmark corpus.
    Synth(SynthArgs),
    /// Resample, encode and register a corpus into a training set.
    Prepare(PrepareArgs),
    /// Karcher mean of a class or of everything.
    Mean(MeanArgs),
    /// Elastic registration of two sequences.
    Align(AlignArgs),
    /// Train the conditional generator.
    Train(TrainArgs),
    /// Sample motions of one class and decode them from a neutral frame.
    Generate(GenerateArgs),
    /// Replay source motions from another neutral frame.
    Transfer(TransferArgs),
    /// Gaussian landmark heatmaps as NPY (and optionally PGM) files.
    Heatmaps(HeatmapsArgs),
    /// 2-D MDS scatter plot of a set of motions.
    Embed(EmbedArgs),
    /// Class separation report.
    Eval(EvalArgs),
    /// Finite-difference check of every differentiable primitive and loss.
    Gradcheck(GradcheckArgs),
    /// Re-run the command recorded in a run manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 2)]
    pub classes: usize,
    #[arg(long, default_value_t = 64)]
    pub per_class: usize,
    #[arg(long, default_value_t = 16)]
    pub frames: usize,
    #[arg(long, default_value_t = 2)]
    pub landmarks: usize,
    #[arg(long, default_value_t = 0.01)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct PrepareArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value_t = 32)]
    pub frames: usize,
    /// Comma-separated class names in label order.
    #[arg(long, value_delimiter = ',')]
    pub classes: Option<Vec<String>>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct MeanArgs {
    /// Prepared set or landmark file.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Restrict to one class.
    #[arg(long)]
    pub class: Option<String>,
    /// Resample landmark input to this many frames.
    #[arg(long)]
    pub frames: Option<usize>,
    /// Skip per-iteration registration.
    #[arg(long)]
    pub no_align: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct AlignArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    /// Sequence index inside `--a`.
    #[arg(long, default_value_t = 0)]
    pub a_index: usize,
    #[arg(long, default_value_t = 0)]
    pub b_index: usize,
    /// Resample both sequences to this many frames.
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    /// Prepared training set.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub iters: usize,
    #[arg(long, default_value_t = 5)]
    pub n_disc: usize,
    #[arg(long, default_value_t = 10.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0.0002)]
    pub lr: f64,
    #[arg(long, default_value_t = 128)]
    pub batch: usize,
    #[arg(long, default_value_t = 0.8)]
    pub alpha1: f64,
    #[arg(long, default_value_t = 1.0)]
    pub alpha2: f64,
    #[arg(long, default_value_t = 1.0)]
    pub alpha3: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Update the generator with the adversarial term alone.
    #[arg(long)]
    pub algorithm1_strict: bool,
    #[arg(long, default_value_t = 128)]
    pub z_dim: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [256, 512, 512])]
    pub generator_widths: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [512, 256, 128])]
    pub critic_widths: Vec<usize>,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-iteration CSV log.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct GenerateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub class: String,
    /// Landmark file; frame 0 of sequence `--neutral-index` is the start pose.
    #[arg(long)]
    pub neutral: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub neutral_index: usize,
    #[arg(long, default_value_t = 1.0)]
    pub intensity: f64,
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    /// Sample `i` uses seed `seed + i`.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TransferArgs {
    #[arg(long)]
    pub source: PathBuf,
    #[arg(long)]
    pub neutral: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub neutral_index: usize,
    /// Defaults to each source's own path length.
    #[arg(long)]
    pub intensity: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct HeatmapsArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// `HEIGHTxWIDTH`.
    #[arg(long, default_value = "64x64", value_parser = parse_size)]
    pub size: (usize, usize),
    #[arg(long, default_value_t = 1.5)]
    pub sigma: f64,
    /// Use coordinates as pixels instead of fitting each sequence to the canvas.
    #[arg(long)]
    pub raw_coords: bool,
    /// Pixels left free around fitted sequences.
    #[arg(long, default_value_t = 4.0)]
    pub margin: f64,
    /// Clamp out-of-canvas landmarks to the border instead of failing.
    #[arg(long)]
    pub clamp: bool,
    /// Also write per-frame PGM previews.
    #[arg(long)]
    pub pgm: bool,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EmbedArgs {
    /// A prepared set, or one or more landmark files (repeat the flag).
    #[arg(long = "in", required = true)]
    pub input: Vec<PathBuf>,
    /// Elastic (registered) distances instead of plain geodesics.
    #[arg(long)]
    pub align: bool,
    #[arg(long)]
    pub frames: Option<usize>,
    /// Also write the coordinates as CSV.
    #[arg(long)]
    pub coords: Option<PathBuf>,
    /// SVG path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EvalArgs {
    /// A prepared set, or one or more landmark files (repeat the flag).
    #[arg(long = "in", required = true)]
    pub input: Vec<PathBuf>,
    /// Prepared set whose class means and class order are used.
    #[arg(long)]
    pub means: Option<PathBuf>,
    #[arg(long)]
    pub align: bool,
    #[arg(long)]
    pub frames: Option<usize>,
    /// Also write the distance matrix as CSV.
    #[arg(long)]
    pub matrix: Option<PathBuf>,
    /// CSV report path.
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 3)]
    pub trials: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub tol: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// CSV with one row per check.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
}

fn parse_size(s: &str) -> std::result::Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HEIGHTxWIDTH, got {s:?}"))?;
    let p = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    Ok((p(h)?, p(w)?))
}

/// Record written next to the primary artifact as `<artifact>.manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    /// Parsed invocation with every default filled in.
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub wall_time_s: f64,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            context: path.display().to_string(),
            message: e.to_string(),
        })
    }

    /// Rebuilds the recorded invocation.
    pub fn to_cli(&self) -> Result<Cli, Error> {
        let command: Command = serde_json::from_value(self.config.clone()).map_err(|e| Error::Parse {
            context: "manifest config".into(),
            message: e.to_string(),
        })?;
        Ok(Cli {
            threads: self.threads,
            quiet: false,
            command,
        })
    }
}

pub fn manifest_path(artifact: &Path) -> PathBuf {
    let mut name = artifact.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    artifact.with_file_name(name)
}

/// What a command read and wrote.
#[derive(Debug, Default)]
struct Outcome {
    seed: Option<u64>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

/// Parses `args` (program name first) and runs. Returns the exit code;
/// help and version requests print to stdout and return 0.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            log::error!("{e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> CliResult<()> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    pool.install(|| run_in_pool(cli))
}

fn run_in_pool(cli: &Cli) -> CliResult<()> {
    let start = Instant::now();
    let outcome = match &cli.command {
        Command::Synth(a) => synth_cmd(a)?,
        Command::Prepare(a) => prepare_cmd(a)?,
        Command::Mean(a) => mean_cmd(a)?,
        Command::Align(a) => align_cmd(a)?,
        Command::Train(a) => train_cmd(a)?,
        Command::Generate(a) => generate_cmd(a)?,
        Command::Transfer(a) => transfer_cmd(a)?,
        Command::Heatmaps(a) => heatmaps_cmd(a)?,
        Command::Embed(a) => embed_cmd(a)?,
        Command::Eval(a) => eval_cmd(a)?,
        Command::Gradcheck(a) => gradcheck_cmd(a)?,
        Command::Replay(a) => {
            let m = RunManifest::load(&a.manifest)?;
            log::info!("replaying {} from {}", m.command, a.manifest.display());
            let mut inner = m.to_cli()?;
            inner.threads = cli.threads.or(inner.threads);
            if let Command::Replay(_) = inner.command {
                return Err(CliError::Usage("a manifest cannot record a replay".into()));
            }
            return run_in_pool(&inner);
        }
    };
    let Some(primary) = outcome.outputs.first() else {
        return Ok(());
    };
    let config = serde_json::to_value(&cli.command).expect("arguments serialize");
    let manifest = RunManifest {
        command: config["command"].as_str().unwrap_or_default().to_string(),
        version: VERSION.to_string(),
        config,
        seed: outcome.seed,
        threads: cli.threads,
        inputs: outcome.inputs.clone(),
        outputs: outcome.outputs.clone(),
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    let path = manifest_path(primary);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn is_prepared(path: &Path) -> Result<bool, Error> {
    use std::io::Read;
    let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut head = [0u8; 7];
    match f.read_exact(&mut head) {
        Ok(()) => Ok(&head == PREPARED_MAGIC),
        Err(_) => Ok(false),
    }
}

fn load_sequences(path: &Path) -> Result<Vec<LandmarkSequence>, Error> {
    load_landmark_sequences(path, LandmarkSchema::default())
}

fn neutral_frame(path: &Path, index: usize) -> Result<Vec<f64>, Error> {
    let seqs = load_sequences(path)?;
    let seq = seqs.get(index).ok_or_else(|| {
        Error::InvalidValue(format!("{} holds {} sequences, no index {index}", path.display(), seqs.len()))
    })?;
    Ok(seq.frame(0).to_vec())
}

fn encode_sequence(seq: &LandmarkSequence, frames: Option<usize>) -> Result<Srvf, Error> {
    let resampled;
    let s = match frames {
        Some(t) => {
            resampled = resample_sequence(seq, t)?;
            &resampled
        }
        None => seq,
    };
    srvf_encode(&s.to_curve()).map_err(|e| match e {
        Error::DegenerateCurve { .. } => Error::DegenerateCurve {
            context: Some(format!("sequence {}", seq.id)),
        },
        e => e,
    })
}

/// Labeled SRVFs from a prepared set or a landmark file.
struct LabeledSet {
    srvfs: Vec<Srvf>,
    labels: Vec<ExpressionLabel>,
    class_names: Vec<String>,
    prepared: Option<PreparedDataset>,
}

/// `class_names` fixes the label order for landmark input; otherwise the
/// labels present are used in canonical order.
fn load_labeled(paths: &[PathBuf], frames: Option<usize>, class_names: Option<&[String]>) -> Result<LabeledSet, Error> {
    let mut prepared_inputs = paths.iter().filter_map(|p| is_prepared(p).map(|b| b.then_some(p)).transpose());
    if let Some(path) = prepared_inputs.next() {
        let path = path?;
        if paths.len() > 1 {
            return Err(Error::Schema(format!(
                "{} is a prepared set and cannot be combined with other inputs",
                path.display()
            )));
        }
        let p = load_prepared(path)?;
        if let Some(names) = class_names {
            if names != p.class_names.as_slice() {
                return Err(Error::Schema(format!(
                    "{} has classes {:?}, expected {:?}",
                    path.display(),
                    p.class_names,
                    names
                )));
            }
        }
        return Ok(LabeledSet {
            srvfs: p.srvfs.clone(),
            labels: p.labels.clone(),
            class_names: p.class_names.clone(),
            prepared: Some(p),
        });
    }
    let mut seqs = Vec::new();
    for p in paths {
        seqs.extend(load_sequences(p)?);
    }
    let mut names = Vec::with_capacity(seqs.len());
    for s in &seqs {
        names.push(
            s.label
                .clone()
                .ok_or_else(|| Error::Schema(format!("sequence {} has no label", s.id)))?,
        );
    }
    let class_names = match class_names {
        Some(c) => c.to_vec(),
        None => canonical_class_order(names.iter().map(String::as_str)),
    };
    let labels = names
        .iter()
        .zip(&seqs)
        .map(|(n, s)| {
            let i = class_names
                .iter()
                .position(|c| c == n)
                .ok_or_else(|| Error::Schema(format!("sequence {}: unknown label {n}", s.id)))?;
            ExpressionLabel::new(i, class_names.len())
        })
        .collect::<Result<Vec<_>, Error>>()?;
    let srvfs = {
        use rayon::prelude::*;
        seqs.par_iter()
            .map(|s| encode_sequence(s, frames))
            .collect::<Result<Vec<_>, Error>>()?
    };
    Ok(LabeledSet {
        srvfs,
        labels,
        class_names,
        prepared: None,
    })
}

#[derive(Serialize)]
struct SrvfRecord<'a> {
    intervals: usize,
    dim: usize,
    data: &'a [f64],
}

fn srvf_record(q: &Srvf) -> SrvfRecord<'_> {
    SrvfRecord {
        intervals: q.intervals(),
        dim: q.dim(),
        data: q.data(),
    }
}

fn synth_cmd(a: &SynthArgs) -> CliResult<Outcome> {
    let spec = SynthSpec {
        classes: a.classes,
        per_class: a.per_class,
        frames: a.frames,
        landmarks: a.landmarks,
        noise: a.noise,
        ..SynthSpec::default()
    };
    let seqs = synth_corpus(&spec, a.seed)?;
    write_landmark_jsonl(&a.out, &seqs)?;
    log::info!("wrote {} sequences to {}", seqs.len(), a.out.display());
    Ok(Outcome {
        seed: Some(a.seed),
        inputs: vec![],
        outputs: vec![a.out.clone()],
    })
}

fn prepare_cmd(a: &PrepareArgs) -> CliResult<Outcome> {
    let seqs = load_sequences(&a.input)?;
    let config = PrepareConfig {
        frames: a.frames,
        classes: a.classes.clone(),
        ..PrepareConfig::default()
    };
    let provenance = format!("prepare {} frames={}", a.input.display(), a.frames);
    let data = prepare(&seqs, &config, &provenance)?;
    save_prepared(&a.out, &data)?;
    log::info!(
        "prepared {} samples of {} classes into {}",
        data.srvfs.len(),
        data.num_classes(),
        a.out.display()
    );
    Ok(Outcome {
        seed: None,
        inputs: vec![a.input.clone()],
        outputs: vec![a.out.clone()],
    })
}

fn mean_cmd(a: &MeanArgs) -> CliResult<Outcome> {
    let set = load_labeled(std::slice::from_ref(&a.input), a.frames, None)?;
    let members: Vec<Srvf> = match &a.class {
        Some(name) => {
            let c = set
                .class_names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::MissingClass(vec![name.clone()]))?;
            set.srvfs
                .iter()
                .zip(&set.labels)
                .filter(|(_, l)| l.index() == c)
                .map(|(q, _)| q.clone())
                .collect()
        }
        None => set.srvfs.clone(),
    };
    let config = if a.no_align {
        KarcherConfig::without_alignment()
    } else {
        KarcherConfig::default()
    };
    let mean = karcher_mean(&members, &config)?;
    #[derive(Serialize)]
    struct Out<'a> {
        class: Option<&'a str>,
        members: usize,
        mean: SrvfRecord<'a>,
    }
    write_json(
        &a.out,
        &Out {
            class: a.class.as_deref(),
            members: members.len(),
            mean: srvf_record(&mean),
        },
    )?;
    log::info!("mean of {} samples written to {}", members.len(), a.out.display());
    Ok(Outcome {
        seed: None,
        inputs: vec![a.input.clone()],
        outputs: vec![a.out.clone()],
    })
}

fn align_cmd(a: &AlignArgs) -> CliResult<Outcome> {
    let pick = |path: &Path, i: usize| -> Result<LandmarkSequence, Error> {
        let mut seqs = load_sequences(path)?;
        if i >= seqs.len() {
            return Err(Error::InvalidValue(format!(
                "{} holds {} sequences, no index {i}",
                path.display(),
                seqs.len()
            )));
        }
        Ok(seqs.swap_remove(i))
    };
    let (sa, sb) = (pick(&a.a, a.a_index)?, pick(&a.b, a.b_index)?);
    let (qa, qb) = (encode_sequence(&sa, a.frames)?, encode_sequence(&sb, a.frames)?);
    if qa.intervals() != qb.intervals() || qa.dim() != qb.dim() {
        return Err(Error::DimensionMismatch(format!(
            "{} has {} frames x {} values, {} has {} x {}; pass --frames to resample",
            sa.id,
            qa.num_frames(),
            qa.dim(),
            sb.id,
            qb.num_frames(),
            qb.dim()
        ))
        .into());
    }
    let unaligned = geodesic_distance(&qa, &qb)?;
    let al = align(&qa, &qb)?;
    #[derive(Serialize)]
    struct Out<'a> {
        a: &'a str,
        b: &'a str,
        unaligned_distance: f64,
        aligned_distance: f64,
        warping: &'a [f64],
    }
    write_json(
        &a.out,
        &Out {
            a: &sa.id,
            b: &sb.id,
            unaligned_distance: unaligned,
            aligned_distance: al.cost,
            warping: al.warping.values(),
        },
    )?;
    log::info!("distance {unaligned:.6} -> {:.6} after alignment", al.cost);
    Ok(Outcome {
        seed: None,
        inputs: vec![a.a.clone(), a.b.clone()],
        outputs: vec![a.out.clone()],
    })
}

fn train_cmd(a: &TrainArgs) -> CliResult<Outcome> {
    let data = load_prepared(&a.data)?;
    let config = TrainConfig {
        lr: a.lr,
        batch: a.batch,
        n_disc: a.n_disc,
        lambda: a.lambda,
        alpha1: a.alpha1,
        alpha2: a.alpha2,
        alpha3: a.alpha3,
        iterations: a.iters,
        seed: a.seed,
        algorithm1_strict: a.algorithm1_strict,
        net: NetConfig {
            z_dim: a.z_dim,
            generator_widths: a.generator_widths.clone(),
            critic_widths: a.critic_widths.clone(),
            ..NetConfig::default()
        },
        ..TrainConfig::default()
    };
    let (model, log) = train(&data, &config)?;
    save_checkpoint(&model, &a.out)?;
    let mut outputs = vec![a.out.clone()];
    if let Some(p) = &a.log {
        write_text(p, &log.to_csv())?;
        outputs.push(p.clone());
    }
    let n = log.records.len();
    if n > 0 {
        let k = 100.min(n);
        log::info!(
            "{} iterations; mean |W| first {k}: {:.4}, last {k}: {:.4}",
            n,
            log.mean_abs_wasserstein(0..k),
            log.mean_abs_wasserstein(n - k..n)
        );
    }
    Ok(Outcome {
        seed: Some(a.seed),
        inputs: vec![a.data.clone()],
        outputs,
    })
}

fn generate_cmd(a: &GenerateArgs) -> CliResult<Outcome> {
    let model = load_checkpoint(&a.model)?;
    let label = model.label(&a.class)?;
    let neutral = neutral_frame(&a.neutral, a.neutral_index)?;
    let intensity = IntensityFactor::new(a.intensity)?;
    let seqs = {
        use rayon::prelude::*;
        (0..a.count as u64)
            .into_par_iter()
            .map(|i| generate_landmark_sequence(&model, label, &neutral, intensity, a.seed + i))
            .collect::<Result<Vec<_>, Error>>()?
    };
    write_landmark_jsonl(&a.out, &seqs)?;
    log::info!("wrote {} {} sequences to {}", seqs.len(), a.class, a.out.display());
    Ok(Outcome {
        seed: Some(a.seed),
        inputs: vec![a.model.clone(), a.neutral.clone()],
        outputs: vec![a.out.clone()],
    })
}

fn transfer_cmd(a: &TransferArgs) -> CliResult<Outcome> {
    let sources = load_sequences(&a.source)?;
    let neutral = neutral_frame(&a.neutral, a.neutral_index)?;
    let fixed = a.intensity.map(IntensityFactor::new).transpose()?;
    let out = sources
        .iter()
        .map(|s| {
            let i = match fixed {
                Some(i) => i,
                None => IntensityFactor::with_max(s.to_curve().path_length(), f64::INFINITY)?,
            };
            transfer_motion(s, &neutral, i)
        })
        .collect::<Result<Vec<_>, Error>>()?;
    write_landmark_jsonl(&a.out, &out)?;
    log::info!("transferred {} sequences to {}", out.len(), a.out.display());
    Ok(Outcome {
        seed: None,
        inputs: vec![a.source.clone(), a.neutral.clone()],
        outputs: vec![a.out.clone()],
    })
}

fn file_stem_for(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect()
}

fn heatmaps_cmd(a: &HeatmapsArgs) -> CliResult<Outcome> {
    let (height, width) = a.size;
    let config = HeatmapConfig {
        height,
        width,
        sigma: a.sigma,
        bounds: if a.clamp { BoundsPolicy::Clamp } else { BoundsPolicy::Error },
    };
    let seqs = load_sequences(&a.input)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let mut outputs = vec![a.out.clone()];
    for s in &seqs {
        let s = if a.raw_coords {
            s.clone()
        } else {
            fit_to_canvas(s, height, width, a.margin)?
        };
        let stack = render_heatmaps(&s, &config)?;
        let stem = file_stem_for(&s.id);
        let npy = a.out.join(format!("{stem}.npy"));
        write_heatmaps_npy(&stack, &npy)?;
        outputs.push(npy);
        if a.pgm {
            outputs.extend(write_heatmap_pgms(&stack, &a.out.join(&stem))?);
        }
    }
    log::info!("rendered {} sequences into {}", seqs.len(), a.out.display());
    Ok(Outcome {
        seed: None,
        inputs: vec![a.input.clone()],
        outputs,
    })
}

fn embed_cmd(a: &EmbedArgs) -> CliResult<Outcome> {
    let set = load_labeled(&a.input, a.frames, None)?;
    let dm = distance_matrix(&set.srvfs, &set.labels, a.align)?;
    let emb = classical_mds(&dm, 2)?;
    let coords: Vec<[f64; 2]> = (0..emb.len()).map(|i| [emb.point(i)[0], emb.point(i)[1]]).collect();
    export_scatter_svg(&coords, &set.labels, &set.class_names, &a.out)?;
    let mut outputs = vec![a.out.clone()];
    if let Some(p) = &a.coords {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::io(p, std::io::Error::other(e));
        w.write_record(["label", "x", "y"]).map_err(io)?;
        for (c, l) in coords.iter().zip(&set.labels) {
            w.write_record([
                set.class_names[l.index()].clone(),
                format!("{:.17e}", c[0]),
                format!("{:.17e}", c[1]),
            ])
            .map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::io(p, std::io::Error::other(e.to_string())))?;
        std::fs::write(p, bytes).map_err(|e| Error::io(p, e))?;
        outputs.push(p.clone());
    }
    if set.class_names.len() > 1 {
        let sil = embedding_silhouettes(&emb, &set.labels)?;
        log::info!(
            "stress {:.4}, mean silhouette {:.4}",
            emb.stress,
            sil.iter().sum::<f64>() / sil.len() as f64
        );
    }
    Ok(Outcome {
        seed: None,
        inputs: a.input.clone(),
        outputs,
    })
}

fn eval_cmd(a: &EvalArgs) -> CliResult<Outcome> {
    let mut inputs = a.input.clone();
    let reference = match &a.means {
        Some(p) => {
            inputs.push(p.clone());
            Some(load_prepared(p)?)
        }
        None => None,
    };
    let set = load_labeled(&a.input, a.frames, reference.as_ref().map(|r| r.class_names.as_slice()))?;
    let means: Vec<Option<Srvf>> = match reference.as_ref().or(set.prepared.as_ref()) {
        Some(r) => r.class_means.iter().cloned().map(Some).collect(),
        None => {
            let cfg = if a.align {
                KarcherConfig::default()
            } else {
                KarcherConfig::without_alignment()
            };
            class_means(&set.srvfs, &set.labels, &cfg)?
        }
    };
    let dm = distance_matrix(&set.srvfs, &set.labels, a.align)?;
    let report = class_separation(&dm, &set.srvfs, &means)?;
    write_text(&a.report, &report.to_csv())?;
    let mut outputs = vec![a.report.clone()];
    if let Some(p) = &a.matrix {
        write_text(p, &dm.to_csv())?;
        outputs.push(p.clone());
    }
    log::info!(
        "accuracy {:.4}, silhouette {:.4}",
        report.nearest_class_mean_accuracy,
        report.silhouette_mean
    );
    Ok(Outcome {
        seed: None,
        inputs,
        outputs,
    })
}

fn gradcheck_cmd(a: &GradcheckArgs) -> CliResult<Outcome> {
    if a.trials == 0 {
        return Err(CliError::Usage("--trials must be at least 1".into()));
    }
    let cfg = GradcheckConfig {
        trials: a.trials,
        seed: a.seed,
        ..GradcheckConfig::default()
    };
    let results = check_all(&cfg)?;
    let mut failed = Vec::new();
    for r in &results {
        let ok = r.max_relative_error <= a.tol;
        log::info!(
            "{:<28} {:.3e} {}",
            r.name,
            r.max_relative_error,
            if ok { "ok" } else { "FAIL" }
        );
        if !ok {
            failed.push(r.name.clone());
        }
    }
    let mut outputs = vec![];
    if let Some(p) = &a.out {
        let mut text = String::from("name,max_relative_error,elements,passed\n");
        for r in &results {
            text.push_str(&format!(
                "{},{:.6e},{},{}\n",
                r.name,
                r.max_relative_error,
                r.elements,
                r.max_relative_error <= a.tol
            ));
        }
        write_text(p, &text)?;
        outputs.push(p.clone());
    }
    if !failed.is_empty() {
        return Err(CliError::CheckFailed(format!("gradient check failed for {}", failed.join(", "))));
    }
    log::info!("{} checks within {:.1e}", results.len(), a.tol);
    Ok(Outcome {
        seed: Some(a.seed),
        inputs: vec![],
        outputs,
    })
}

//! The `rfgml` command line. Exit codes: 0 success, 1 usage error,
//! 2 data or contract error, 3 numerical failure. Every failure prints one
//! line, `rfgml: error[<kind>]: <message>`, on standard error.

use std::ffi::OsString;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use rfgml_core::datagen::{
    anchor, default_ladder, derive_seed, generate_corpus, synth_codec, synth_sources, ListenerModel,
};
use rfgml_core::dsp::{gammatone_spectrogram, load_wav, AudioBuffer, FrontendConfig};
use rfgml_core::eval::{
    aggregate_mushra, bandwidth_scatter, correlations, fmt6, mu_metric, per_excerpt_correlations, scaling_report,
    system_scores_csv, SystemScore,
};
use rfgml_core::model::{build_model, predict_file, InitMode, Model, ModelConfig, ModelError, Variant};
use rfgml_core::score::{simulate_listeners, ScoreDistribution};
use rfgml_core::train::{
    train, Dataset, DatasetManifest, TrainConfig, TrainError, ANCHOR_3K5, ANCHOR_7K, HIDDEN_REFERENCE,
};

const DATA_DIR_ENV: &str = "RFGML_DATA_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numeric,
}

impl ErrorKind {
    pub fn code(self) -> i32 {
        match self {
            ErrorKind::Usage => 1,
            ErrorKind::Data => 2,
            ErrorKind::Numeric => 3,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    fn data(message: impl fmt::Display) -> Self {
        CliError {
            kind: ErrorKind::Data,
            message: message.to_string(),
        }
    }

    fn usage(message: impl fmt::Display) -> Self {
        CliError {
            kind: ErrorKind::Usage,
            message: message.to_string(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            ErrorKind::Usage => "usage",
            ErrorKind::Data => "data",
            ErrorKind::Numeric => "numeric",
        };
        let one_line: Vec<&str> = self.message.split_whitespace().collect();
        write!(f, "rfgml: error[{kind}]: {}", one_line.join(" "))
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFinite { .. } => CliError {
                kind: ErrorKind::Numeric,
                message: e.to_string(),
            },
            TrainError::Model(m) => m.into(),
            other => CliError::data(other),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        let kind = match &e {
            ModelError::Tensor(rfgml_core::tensor::TensorError::NonFiniteGradient { .. }) => ErrorKind::Numeric,
            _ => ErrorKind::Data,
        };
        CliError {
            kind,
            message: e.to_string(),
        }
    }
}

macro_rules! data_errors {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::data(e)
            }
        }
    )*};
}

data_errors!(
    std::io::Error,
    rfgml_core::dsp::DspError,
    rfgml_core::eval::EvalError,
    rfgml_core::datagen::DatagenError,
    rfgml_core::score::ScoreError
);

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "rfgml", version, about = "Reference-free generative machine listener")]
struct Cli {
    /// Worker threads for per-file work; 1 keeps runs bit-reproducible.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Seed from which every random stream of the invocation is derived.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic listening-test corpus (WAV files and manifest.csv).
    Synth(SynthArgs),
    /// Compute gammatone spectrograms and store them as .rfgs files.
    Featurize(FeaturizeArgs),
    /// Train a model on a manifest with fold rotation; prints the metrics log.
    Train(TrainArgs),
    /// Predict score distributions for WAV files.
    Predict(PredictArgs),
    /// Sample listener scores from a distribution or a model prediction.
    Simulate(SimulateArgs),
    /// Score a manifest's items and report correlations and MU.
    Evaluate(EvaluateArgs),
    /// Mean prediction per degradation level over reference excerpts.
    ScalingReport(ScalingArgs),
    /// Estimated bandwidth against predicted quality per file.
    BandwidthScatter(ScatterArgs),
    /// Build a reference-free checkpoint from a full-reference donor.
    TransferInit(TransferArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Output directory [default: $RFGML_DATA_DIR].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of source excerpts.
    #[arg(long, default_value_t = 20)]
    excerpts: usize,
    /// Excerpt length in seconds.
    #[arg(long, default_value_t = 5.2)]
    seconds: f64,
    /// Ladder levels rendered as coded conditions (0 = transparent .. 4).
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4")]
    levels: Vec<usize>,
    /// Simulated listeners per condition.
    #[arg(long, default_value_t = 10)]
    listeners: usize,
    /// Excerpt id prefix.
    #[arg(long, default_value = "ex")]
    prefix: String,
}

#[derive(Debug, Args)]
struct FeaturizeArgs {
    /// Directory receiving one `<stem>.rfgs` per input.
    #[arg(long)]
    out_dir: PathBuf,
    /// WAV files (48 kHz, mono or stereo).
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum VariantArg {
    /// Reference-free (4 input planes).
    Rf,
    /// Full-reference (8 input planes).
    Fr,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    /// Fresh random initialization.
    Def,
    /// Copy the donor's degraded-input weights of the first block.
    Deg,
    /// As deg, with the copied tensors frozen.
    #[value(name = "degF")]
    DegF,
    /// As deg, plus every inception and SE weight; dense layers stay fresh.
    All,
}

impl From<ModeArg> for InitMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Def => InitMode::Def,
            ModeArg::Deg => InitMode::Deg,
            ModeArg::DegF => InitMode::DegF,
            ModeArg::All => InitMode::All,
        }
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Manifest CSV [default: $RFGML_DATA_DIR/manifest.csv].
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Input variant of the trained network.
    #[arg(long, value_enum, default_value = "rf")]
    variant: VariantArg,
    /// Initialization: fresh (def) or transferred from --donor (deg, degF, all).
    #[arg(long, value_enum, default_value = "def")]
    mode: ModeArg,
    /// Full-reference donor checkpoint for the transfer modes.
    #[arg(long)]
    donor: Option<PathBuf>,
    /// Checkpoint to write. On a numerical failure the last good weights are written.
    #[arg(long)]
    out: PathBuf,
    /// Also write the metrics log to this file.
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Adam learning rate.
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    /// Records per optimizer step.
    #[arg(long, default_value_t = 8)]
    batch: usize,
    /// Epochs trained while each fold is held out.
    #[arg(long, default_value_t = 10)]
    epochs_per_fold: usize,
    /// Number of excerpt-grouped folds.
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// Beta(α, α) parameter of CutMix.
    #[arg(long, default_value_t = 0.7)]
    cutmix_alpha: f64,
    /// Per-item CutMix probability.
    #[arg(long, default_value_t = 0.5)]
    cutmix_prob: f64,
    /// Disable CutMix.
    #[arg(long)]
    no_cutmix: bool,
    /// Disable left/right channel-swap augmentation.
    #[arg(long)]
    no_swap: bool,
}

#[derive(Debug, Args)]
struct PredictArgs {
    /// Reference-free checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Panel size for the confidence interval.
    #[arg(long, default_value_t = 10)]
    listeners: usize,
    /// Confidence level of the interval.
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// WAV files (48 kHz, mono or stereo).
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Number of scores to draw.
    #[arg(long)]
    n: usize,
    /// Location μ; use with --a instead of --checkpoint/--input.
    #[arg(long, requires = "a", conflicts_with = "checkpoint")]
    mu: Option<f64>,
    /// Logistic scale a.
    #[arg(long, requires = "mu")]
    a: Option<f64>,
    /// Reference-free checkpoint; use with --input.
    #[arg(long, requires = "input")]
    checkpoint: Option<PathBuf>,
    /// WAV file whose prediction is sampled.
    #[arg(long, requires = "checkpoint")]
    input: Option<PathBuf>,
    /// Clip draws to [0, 100].
    #[arg(long)]
    clip: bool,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Reference-free checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Manifest CSV [default: $RFGML_DATA_DIR/manifest.csv].
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Write per-item predictions and subjective means here.
    #[arg(long)]
    scores: Option<PathBuf>,
    /// Write per-excerpt correlations here.
    #[arg(long)]
    per_excerpt: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ScalingArgs {
    /// Reference-free checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Conditions best first: hidden_reference, codec_<level>, anchor_7k or anchor_3.5k.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "codec_0,codec_1,codec_2,codec_3,codec_4"
    )]
    conditions: Vec<String>,
    /// Write the CSV here and print only the summary line.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Reference excerpts (WAV).
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
}

#[derive(Debug, Args)]
struct ScatterArgs {
    /// Reference-free checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Write the CSV here and print only the summary line.
    #[arg(long)]
    out: Option<PathBuf>,
    /// At least 3 WAV files.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
}

#[derive(Debug, Args)]
struct TransferArgs {
    /// Full-reference donor checkpoint.
    #[arg(long)]
    donor: PathBuf,
    /// Transfer mode.
    #[arg(long, value_enum, default_value = "deg")]
    mode: ModeArg,
    /// Checkpoint to write.
    #[arg(long)]
    out: PathBuf,
}

/// Parses `argv` (program name first) and runs the subcommand, writing
/// results to `out` and diagnostics to `err`. Returns the exit code.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind as K;
            if matches!(e.kind(), K::DisplayHelp | K::DisplayVersion) {
                let _ = write!(out, "{}", e.render());
                return 0;
            }
            let text = e.to_string();
            let first = text
                .lines()
                .find(|l| !l.trim().is_empty())
                .unwrap_or("invalid arguments");
            let first = first.trim_start_matches("error: ");
            let _ = writeln!(err, "{}", CliError::usage(first));
            return ErrorKind::Usage.code();
        }
    };
    if let Command::Simulate(a) = &cli.command {
        if a.clip {
            let _ = writeln!(err, "rfgml: note: simulated scores clipped to [0, 100]");
        }
    }
    match dispatch(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "{e}");
            e.kind.code()
        }
    }
}

fn dispatch(cli: Cli, out: &mut dyn Write) -> Result<()> {
    if cli.jobs == 0 {
        return Err(CliError::usage("--jobs must be >= 1"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build()
        .map_err(CliError::data)?;
    let (jobs, seed) = (cli.jobs, cli.seed);
    let mut buf: Vec<u8> = Vec::new();
    let sink = &mut buf;
    let result = pool.install(move || {
        let out: &mut dyn Write = sink;
        match cli.command {
            Command::Synth(a) => synth(a, seed, out),
            Command::Featurize(a) => featurize(a, out),
            Command::Train(a) => train_cmd(a, seed, jobs, out),
            Command::Predict(a) => predict(a, out),
            Command::Simulate(a) => simulate(a, seed, out),
            Command::Evaluate(a) => evaluate(a, out),
            Command::ScalingReport(a) => scaling(a, seed, out),
            Command::BandwidthScatter(a) => scatter(a, out),
            Command::TransferInit(a) => transfer(a, seed, out),
        }
    });
    out.write_all(&buf)?;
    result
}

fn data_dir() -> Option<PathBuf> {
    std::env::var_os(DATA_DIR_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
}

fn manifest_path(explicit: Option<PathBuf>) -> Result<PathBuf> {
    explicit
        .or_else(|| data_dir().map(|d| d.join("manifest.csv")))
        .ok_or_else(|| CliError::usage(format!("--manifest is required when {DATA_DIR_ENV} is unset")))
}

fn load_model(path: &Path) -> Result<Model> {
    Model::load(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn load_audio(path: &Path) -> Result<AudioBuffer> {
    Ok(load_wav(path)?)
}

fn write_out(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes())?;
    Ok(())
}

fn synth(a: SynthArgs, seed: u64, out: &mut dyn Write) -> Result<()> {
    let dir = a
        .out
        .or_else(data_dir)
        .ok_or_else(|| CliError::usage(format!("--out is required when {DATA_DIR_ENV} is unset")))?;
    if !(a.seconds > 0.0 && a.seconds.is_finite()) {
        return Err(CliError::usage("--seconds must be positive"));
    }
    let all = default_ladder();
    let mut ladder = Vec::new();
    for &l in &a.levels {
        let spec = all
            .get(l)
            .ok_or_else(|| CliError::usage(format!("ladder level {l} outside 0..{}", all.len() - 1)))?;
        ladder.push(spec.clone());
    }
    let samples = (a.seconds * rfgml_core::dsp::SAMPLE_RATE as f64).round() as usize;
    let sources = synth_sources(&a.prefix, a.excerpts, samples, derive_seed(seed, 0));
    let listeners = ListenerModel::for_ladder(&ladder, a.listeners);
    let manifest = generate_corpus(&sources, &ladder, &listeners, derive_seed(seed, 1), &dir)?;
    writeln!(out, "{}", dir.join("manifest.csv").display())?;
    let _ = manifest;
    Ok(())
}

fn featurize(a: FeaturizeArgs, out: &mut dyn Write) -> Result<()> {
    let frontend = FrontendConfig::default();
    std::fs::create_dir_all(&a.out_dir)?;
    let rows = a
        .inputs
        .par_iter()
        .map(|p| -> Result<String> {
            let buf = load_audio(p)?.to_stereo();
            let spec = gammatone_spectrogram(&buf, &frontend)?;
            let stem = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let dest = a.out_dir.join(format!("{stem}.rfgs"));
            spec.save(&dest)?;
            let full = spec.segments(240).iter().filter(|s| !s.padded).count();
            Ok(format!(
                "{},{},{},{},{}\n",
                p.display(),
                dest.display(),
                spec.frames(),
                full,
                frontend.hash()
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    write_out(out, "path,features,frames,segments,config_hash\n")?;
    write_out(out, &rows.concat())
}

fn train_cmd(a: TrainArgs, seed: u64, jobs: usize, out: &mut dyn Write) -> Result<()> {
    let mode: InitMode = a.mode.into();
    let variant = match a.variant {
        VariantArg::Rf => Variant::ReferenceFree,
        VariantArg::Fr => Variant::FullReference,
    };
    let donor = match (&a.donor, mode) {
        (_, InitMode::Def) => None,
        (None, m) => return Err(ModelError::MissingDonor(m).into()),
        (Some(p), _) => Some(load_model(p)?),
    };
    let config = match &donor {
        Some(d) => d.config().with_variant(variant),
        None => ModelConfig::desk(variant),
    };
    let mut model = build_model(config, mode, donor.as_ref(), derive_seed(seed, 0))?;
    let manifest = DatasetManifest::load(manifest_path(a.manifest)?)?;
    let data = Dataset::load(manifest, model.frontend(), model.config().frames, jobs)?;
    let mut cfg = TrainConfig {
        lr: a.lr,
        batch: a.batch,
        epochs_per_fold: a.epochs_per_fold,
        folds: a.folds,
        seed: derive_seed(seed, 1),
        swap_lr_augment: !a.no_swap,
        ..TrainConfig::default()
    };
    cfg.cutmix.alpha = a.cutmix_alpha;
    cfg.cutmix.probability = a.cutmix_prob;
    cfg.cutmix.enabled = !a.no_cutmix;
    let mut meta = model.metadata().clone();
    meta["init"] = serde_json::json!({
        "mode": mode.to_string(),
        "seed": seed,
        "donor": a.donor.as_ref().map(|p| p.display().to_string()),
    });
    model.set_metadata(meta);

    let result = train(&mut model, &data, &cfg, &mut ());
    if let Err(TrainError::NonFinite { .. }) = &result {
        model.save(&a.out)?;
    }
    let report = result?;
    model.save(&a.out)?;
    let csv = report.metrics_csv();
    if let Some(p) = &a.metrics {
        std::fs::write(p, &csv)?;
    }
    write_out(out, &csv)
}

fn predict(a: PredictArgs, out: &mut dyn Write) -> Result<()> {
    let model = load_model(&a.checkpoint)?;
    let rows = a
        .inputs
        .par_iter()
        .map(|p| -> Result<String> {
            let d = predict_file(&model, &load_audio(p)?)?;
            let (lo, hi) = d.confidence_interval(a.listeners, a.level)?;
            Ok(format!(
                "{},{},{},{},{},{},{}\n",
                p.display(),
                fmt6(d.mu),
                fmt6(d.log_a),
                fmt6(d.std()),
                fmt6(lo),
                fmt6(hi),
                a.listeners
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    write_out(out, "path,mu,log_a,std,ci_lo,ci_hi,n\n")?;
    write_out(out, &rows.concat())
}

fn simulate(a: SimulateArgs, seed: u64, out: &mut dyn Write) -> Result<()> {
    let dist = match (a.mu, a.a, &a.checkpoint, &a.input) {
        (Some(mu), Some(scale), _, _) => {
            if !(scale > 0.0 && scale.is_finite() && mu.is_finite()) {
                return Err(CliError::usage("--mu must be finite and --a positive"));
            }
            ScoreDistribution::from_scale(mu, scale)
        }
        (_, _, Some(c), Some(i)) => predict_file(&load_model(c)?, &load_audio(i)?)?,
        _ => return Err(CliError::usage("give either --mu and --a, or --checkpoint and --input")),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0));
    let draws = simulate_listeners(&dist, a.n, &mut rng, a.clip)?;
    let text: String = draws.iter().map(|s| format!("{}\n", fmt6(*s))).collect();
    write_out(out, &text)
}

fn evaluate(a: EvaluateArgs, out: &mut dyn Write) -> Result<()> {
    let model = load_model(&a.checkpoint)?;
    let manifest = DatasetManifest::load(manifest_path(a.manifest)?)?;
    manifest.validate(true)?;
    let items: Vec<_> = manifest.items().into_iter().collect();
    let scores = items
        .par_iter()
        .map(|((e, s), recs)| -> Result<SystemScore> {
            let ys: Vec<f64> = recs.iter().map(|&i| manifest.records[i].score).collect();
            let agg = aggregate_mushra(&ys)?;
            let path = manifest.resolve(&manifest.records[recs[0]].audio_path);
            let predicted = predict_file(&model, &load_audio(&path)?)
                .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
            Ok(SystemScore {
                excerpt_id: e.clone(),
                system_id: s.clone(),
                predicted,
                subjective_mean: agg.mean,
                subjective_ci: agg.ci,
                n_listeners: agg.n,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(p) = &a.scores {
        std::fs::write(p, system_scores_csv(&scores))?;
    }
    if let Some(p) = &a.per_excerpt {
        let mut text = String::from("excerpt_id,n,rp,rs\n");
        for (id, c) in per_excerpt_correlations(&scores) {
            text.push_str(&format!("{id},{},{},{}\n", c.n, opt6(c.rp), opt6(c.rs)));
        }
        std::fs::write(p, text)?;
    }
    let c = correlations(&scores);
    let mu = mu_metric(&scores).ok();
    write_out(
        out,
        &format!("n,rp,rs,mu\n{},{},{},{}\n", c.n, opt6(c.rp), opt6(c.rs), opt6(mu)),
    )
}

fn opt6(x: Option<f64>) -> String {
    x.map(fmt6).unwrap_or_else(|| "NaN".into())
}

/// Renders a named condition of a reference excerpt.
fn render_condition(name: &str, buffer: &AudioBuffer, seed: u64) -> Result<AudioBuffer> {
    match name {
        HIDDEN_REFERENCE => Ok(buffer.clone()),
        ANCHOR_7K => Ok(anchor(buffer, 7_000.0)?),
        ANCHOR_3K5 => Ok(anchor(buffer, 3_500.0)?),
        _ => {
            let spec = default_ladder()
                .into_iter()
                .find(|s| s.label == name)
                .ok_or_else(|| CliError::usage(format!("unknown condition {name}")))?;
            Ok(synth_codec(buffer, &spec, seed)?)
        }
    }
}

fn report(out: &mut dyn Write, dest: &Option<PathBuf>, csv: String, summary: String) -> Result<()> {
    match dest {
        Some(p) => {
            std::fs::write(p, csv)?;
            writeln!(out, "{summary}")?;
            Ok(())
        }
        None => write_out(out, &csv),
    }
}

fn scaling(a: ScalingArgs, seed: u64, out: &mut dyn Write) -> Result<()> {
    let model = load_model(&a.checkpoint)?;
    let refs = a.inputs.iter().map(|p| load_audio(p)).collect::<Result<Vec<_>>>()?;
    let mut conditions = Vec::with_capacity(a.conditions.len());
    for (c, name) in a.conditions.iter().enumerate() {
        let bufs = refs
            .par_iter()
            .enumerate()
            .map(|(i, r)| render_condition(name, r, derive_seed(seed, (c * refs.len() + i) as u64)))
            .collect::<Result<Vec<_>>>()?;
        conditions.push((name.clone(), bufs));
    }
    let rep = scaling_report(&model, &conditions)?;
    report(out, &a.out, rep.to_csv(), rep.summary())
}

fn scatter(a: ScatterArgs, out: &mut dyn Write) -> Result<()> {
    let model = load_model(&a.checkpoint)?;
    let files = a
        .inputs
        .par_iter()
        .map(|p| Ok((p.display().to_string(), load_audio(p)?)))
        .collect::<Result<Vec<_>>>()?;
    let rep = bandwidth_scatter(&model, &files)?;
    report(out, &a.out, rep.to_csv(), rep.summary())
}

fn transfer(a: TransferArgs, seed: u64, out: &mut dyn Write) -> Result<()> {
    let donor = load_model(&a.donor)?;
    let mode: InitMode = a.mode.into();
    let config = donor.config().with_variant(Variant::ReferenceFree);
    let mut model = build_model(config, mode, Some(&donor), derive_seed(seed, 0))?;
    let mut meta = model.metadata().clone();
    meta["init"] = serde_json::json!({
        "mode": mode.to_string(),
        "seed": seed,
        "donor": a.donor.display().to_string(),
    });
    model.set_metadata(meta);
    model.save(&a.out)?;
    writeln!(out, "{}", a.out.display())?;
    Ok(())
}

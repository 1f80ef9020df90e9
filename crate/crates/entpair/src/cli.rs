//! The `entpair` command line.
//!
//! Every run writes `<out>/<subcommand>.config.json` holding the fully
//! resolved arguments; `entpair replay <file>` runs the same command again
//! from that file alone.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use entpair_core::analysis::{
    embedding_study, occlusion_saliency, perturb_confidence, sample_by_gender, score_single, subgroup_accuracy,
    GroupBy, Perturbation, SaliencyResult, Side,
};
use entpair_core::data::{Dataset, Gender, Label, PairSample};
use entpair_core::layers::Padding;
use entpair_core::model::{Combine, ModelConfig, Variant};
use entpair_core::optim::AdamConfig;
use entpair_core::pairing::{generate_pairs, split_pairs, Split, SplitConfig};
use entpair_core::stats::{compare_groups, ingest_decisions, GroupSummary};
use entpair_core::synth::{default_regions, synth_generate, SynthSpec};
use entpair_core::train::{
    evaluate, index_pairs, run_landmark_study, EvalMode, Experiment, Inputs, LandmarkStudyConfig, TrainConfig,
    TrialsSummary,
};
use entpair_core::Prng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundle::{read_bundle, write_bundle};
use crate::fptn::write_tensor;
use crate::manifest::{load_dataset, read_decisions, read_pairs, write_manifest, write_pairs};
use crate::report;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Parser, Serialize, Deserialize)]
#[command(name = "entpair", version, about = "Pairwise ENT/NON face-feature classification experiments")]
pub struct Cli {
    /// Directory receiving every output file.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for independent trials.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Generate a planted-signal synthetic dataset (manifest + FPTN features).
    Synth(SynthArgs),
    /// Draw ENT/NON pairs from a manifest.
    Pair(PairArgs),
    /// Split pairs into train, validation and test sets.
    Split(ProtocolCmd),
    /// Train one model and save it as a bundle.
    Train(TrainCmd),
    /// Evaluate a saved model on every split, overall and per gender.
    Eval(EvalCmd),
    /// Repeat training from fresh weights and summarise test accuracy.
    Trials(TrialsCmd),
    /// Per-landmark and combined landmark classifiers.
    Landmarks(LandmarksCmd),
    /// Occlusion saliency on test pairs.
    Saliency(SaliencyCmd),
    /// PCA of branch embeddings with 2-means cluster purity.
    Embed(EmbedCmd),
    /// Confidence change under feature perturbations of the ENT side.
    Perturb(PerturbCmd),
    /// Panel-averaged single-subject score.
    Score(ScoreCmd),
    /// Ingest human decisions and compare groups with the model trials.
    Stats(StatsCmd),
    /// Render the group table and bar chart from `stats` output.
    Report(ReportCmd),
    /// Re-run a command from its config echo file.
    Replay {
        config: PathBuf,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Pair(_) => "pair",
            Command::Split(_) => "split",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Trials(_) => "trials",
            Command::Landmarks(_) => "landmarks",
            Command::Saliency(_) => "saliency",
            Command::Embed(_) => "embed",
            Command::Perturb(_) => "perturb",
            Command::Score(_) => "score",
            Command::Stats(_) => "stats",
            Command::Report(_) => "report",
            Command::Replay { .. } => "replay",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 2000)]
    pub subjects: usize,
    /// Mean shift of ENT features inside the planted region.
    #[arg(long, default_value_t = 3.0)]
    pub signal: f64,
    #[arg(long, default_value_t = 1.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 14)]
    pub height: usize,
    #[arg(long, default_value_t = 14)]
    pub width: usize,
    #[arg(long, default_value_t = 8)]
    pub channels: usize,
    /// Region carrying the signal (eyes, nose or mouth).
    #[arg(long, default_value = "nose")]
    pub planted: String,
    #[arg(long, default_value_t = 0.81)]
    pub male_fraction: f64,
    #[arg(long, default_value_t = 0.596)]
    pub ent_fraction: f64,
    #[arg(long, default_value_t = entpair_core::synth::DEFAULT_ORACLE_DRAWS)]
    pub oracle_draws: usize,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct DataArgs {
    /// Manifest CSV [default: <out>/manifest.csv].
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct PairArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Pairs to draw [default: 2·min(#ENT, #NON) per gender].
    #[arg(long)]
    pub n_pairs: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ProtocolArgs {
    /// Use this pair list instead of drawing pairs.
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    #[arg(long)]
    pub n_pairs: Option<usize>,
    #[arg(long, default_value_t = 0.75)]
    pub train_fraction: f64,
    /// Share of the training pool held out for validation.
    #[arg(long, default_value_t = 0.10)]
    pub validation_fraction: f64,
    /// Split at pair level, letting subjects appear on both sides.
    #[arg(long)]
    pub paper_split: bool,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ProtocolCmd {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub protocol: ProtocolArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariantArg {
    Fullface,
    LandmarkSingle,
    LandmarkCombined,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CombineArg {
    Concat,
    AbsDiff,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PaddingArg {
    Same,
    Valid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalModeArg {
    Symmetric,
    Single,
}

impl From<EvalModeArg> for EvalMode {
    fn from(m: EvalModeArg) -> Self {
        match m {
            EvalModeArg::Symmetric => EvalMode::Symmetric,
            EvalModeArg::Single => EvalMode::Single,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ModelArgs {
    #[arg(long, value_enum, default_value_t = VariantArg::Fullface)]
    pub variant: VariantArg,
    /// Landmark regions, comma-separated; the single-landmark model uses the first.
    #[arg(long, value_delimiter = ',', default_value = "eyes,nose,mouth")]
    pub landmarks: Vec<String>,
    /// Convolution filters [default: 32 fullface, 64 landmark].
    #[arg(long)]
    pub conv_width: Option<usize>,
    #[arg(long, default_value_t = 512)]
    pub head_width: usize,
    #[arg(long, default_value_t = 0.25)]
    pub block_dropout: f64,
    #[arg(long, default_value_t = 0.5)]
    pub head_dropout: f64,
    #[arg(long, value_enum, default_value_t = CombineArg::Concat)]
    pub combine: CombineArg,
    #[arg(long, value_enum, default_value_t = PaddingArg::Same)]
    pub padding: PaddingArg,
}

impl ModelArgs {
    fn config(&self, shape: [usize; 3]) -> Result<ModelConfig> {
        let mut cfg = match self.variant {
            VariantArg::Fullface => ModelConfig::fullface(shape),
            VariantArg::LandmarkSingle => {
                let first = self.landmarks.first().ok_or_else(|| Error::Usage("--landmarks is empty".into()))?;
                ModelConfig::landmark_single(shape, first)
            }
            VariantArg::LandmarkCombined => match &self.landmarks[..] {
                [a, b, c] => ModelConfig::landmark_combined(shape, [a, b, c]),
                _ => return Err(Error::Usage("the combined landmark model needs exactly three --landmarks".into())),
            },
        };
        if let Some(w) = self.conv_width {
            cfg.conv_width = w;
        }
        if cfg.variant == Variant::FullfacePair {
            cfg.head_width = self.head_width;
            cfg.head_dropout = self.head_dropout;
        }
        cfg.block_dropout = self.block_dropout;
        cfg.combine = match self.combine {
            CombineArg::Concat => Combine::Concat,
            CombineArg::AbsDiff => Combine::AbsDiff,
        };
        cfg.padding = match self.padding {
            PaddingArg::Same => Padding::Same,
            PaddingArg::Valid => Padding::Valid,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct TrainingArgs {
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    /// Inverse-time learning-rate decay per update.
    #[arg(long, default_value_t = 1e-6)]
    pub decay: f64,
    #[arg(long, value_enum, default_value_t = EvalModeArg::Symmetric)]
    pub eval_mode: EvalModeArg,
}

impl TrainingArgs {
    fn config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            adam: AdamConfig { lr0: self.lr, decay: self.decay, ..AdamConfig::default() },
            eval_mode: self.eval_mode.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ModelFileArgs {
    /// Model bundle [default: <out>/model.bundle].
    #[arg(long)]
    pub model: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct TrainCmd {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub protocol: ProtocolArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub training: TrainingArgs,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct EvalCmd {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub protocol: ProtocolArgs,
    #[command(flatten)]
    pub file: ModelFileArgs,
    #[arg(long, value_enum, default_value_t = EvalModeArg::Symmetric)]
    pub eval_mode: EvalModeArg,
    /// Also slice test accuracy by this subject tag.
    #[arg(long)]
    pub tag: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct TrialsCmd {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub protocol: ProtocolArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub training: TrainingArgs,
    #[arg(long, default_value_t = 10)]
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct LandmarksCmd {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub protocol: ProtocolArgs,
    #[command(flatten)]
    pub training: TrainingArgs,
    #[arg(long, value_delimiter = ',', default_value = "eyes,nose,mouth")]
    pub landmarks: Vec<String>,
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    #[arg(long, default_value_t = 64)]
    pub conv_width: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SideArg {
    /// Whichever side holds the ENT subject.
    Ent,
    Left,
    Right,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SaliencyCmd {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub protocol: ProtocolArgs,
    #[command(flatten)]
    pub file: ModelFileArgs,
    /// Random test pairs to analyse.
    #[arg(long, default_value_t = 20)]
    pub count: usize,
    #[arg(long, default_value_t = 50)]
    pub top_k: usize,
    #[arg(long, value_enum, default_value_t = SideArg::Ent)]
    pub side: SideArg,
    /// Region outlined on the heatmap.
    #[arg(long)]
    pub outline: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct EmbedCmd {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub file: ModelFileArgs,
    #[arg(long, default_value_t = 250)]
    pub male: usize,
    #[arg(long, default_value_t = 60)]
    pub female: usize,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct PerturbCmd {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub protocol: ProtocolArgs,
    #[command(flatten)]
    pub file: ModelFileArgs,
    /// Gaussian noise levels as multiples of --noise-scale.
    #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.5,1.0")]
    pub sigmas: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub noise_scale: f64,
    /// Also shuffle the cells of these regions.
    #[arg(long, value_delimiter = ',')]
    pub shuffle_regions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ScoreCmd {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub file: ModelFileArgs,
    /// Subjects to score, comma-separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub subjects: Vec<String>,
    #[arg(long, default_value_t = 50)]
    pub panel_size: usize,
    /// Allow panel members of any gender.
    #[arg(long)]
    pub mixed_panel: bool,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct StatsCmd {
    #[arg(long)]
    pub decisions: PathBuf,
    /// Trials CSV supplying the model accuracies [default: <out>/trials.csv].
    #[arg(long, conflicts_with = "model_accuracies")]
    pub trials_csv: Option<PathBuf>,
    /// Model trial accuracies given directly, comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub model_accuracies: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ReportCmd {
    /// Group summaries written by `stats` [default: <out>/summary.json].
    #[arg(long)]
    pub summary: Option<PathBuf>,
    #[arg(long, default_value = "table2.csv")]
    pub table: String,
    #[arg(long, default_value = "fig7.svg")]
    pub chart: String,
}

/// Output of `stats`, input of `report`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsSummary {
    pub groups: Vec<GroupSummary>,
    pub respondents: usize,
    pub excluded: Vec<String>,
    pub recognized_dropped: usize,
    pub retained_decisions: usize,
}

fn default_path(slot: &mut Option<PathBuf>, out: &Path, name: &str) {
    if slot.is_none() {
        *slot = Some(out.join(name));
    }
}

impl Cli {
    /// Replaces every defaulted path with its concrete value so the config
    /// echo is self-contained.
    pub fn resolve(mut self) -> Self {
        let out = self.out.clone();
        let data = |d: &mut DataArgs| default_path(&mut d.manifest, &out, "manifest.csv");
        let model = |f: &mut ModelFileArgs| default_path(&mut f.model, &out, "model.bundle");
        match &mut self.command {
            Command::Pair(a) => data(&mut a.data),
            Command::Split(a) => data(&mut a.data),
            Command::Train(a) => data(&mut a.data),
            Command::Trials(a) => data(&mut a.data),
            Command::Landmarks(a) => data(&mut a.data),
            Command::Eval(a) => {
                data(&mut a.data);
                model(&mut a.file);
            }
            Command::Saliency(a) => {
                data(&mut a.data);
                model(&mut a.file);
            }
            Command::Embed(a) => {
                data(&mut a.data);
                model(&mut a.file);
            }
            Command::Perturb(a) => {
                data(&mut a.data);
                model(&mut a.file);
            }
            Command::Score(a) => {
                data(&mut a.data);
                model(&mut a.file);
            }
            Command::Stats(a) => {
                if a.model_accuracies.is_empty() {
                    default_path(&mut a.trials_csv, &out, "trials.csv");
                }
            }
            Command::Report(a) => default_path(&mut a.summary, &out, "summary.json"),
            Command::Synth(_) | Command::Replay { .. } => {}
        }
        self
    }
}

fn require_file(path: &Path, what: &str, flag: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Usage(format!("{what} {} not found (set {flag})", path.display())))
    }
}

fn resolved<'a>(p: &'a Option<PathBuf>, what: &str, flag: &str) -> Result<&'a Path> {
    let p = p.as_deref().expect("paths are resolved before running");
    require_file(p, what, flag)?;
    Ok(p)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

fn progress(msg: impl AsRef<str>) {
    eprintln!("{}", msg.as_ref());
}

/// Parses, resolves and runs one command line.
pub fn run(cli: Cli) -> Result<()> {
    if let Command::Replay { config } = &cli.command {
        require_file(config, "config file", "the replay argument")?;
        let replayed: Cli = read_json(config)?;
        if matches!(replayed.command, Command::Replay { .. }) {
            return Err(Error::format(config, "a config echo cannot itself be a replay"));
        }
        return run(replayed);
    }
    let cli = cli.resolve();
    if cli.jobs == 0 {
        return Err(Error::Usage("--jobs must be at least 1".into()));
    }
    fs::create_dir_all(&cli.out).map_err(|e| Error::io(&cli.out, e))?;
    let echo = cli.out.join(format!("{}.config.json", cli.command.name()));
    write_json(&echo, &cli)?;
    let (out, seed) = (cli.out.as_path(), cli.seed);
    match &cli.command {
        Command::Synth(a) => synth(out, seed, a),
        Command::Pair(a) => pair(out, seed, a),
        Command::Split(a) => split(out, seed, a),
        Command::Train(a) => train(out, seed, a),
        Command::Eval(a) => eval(out, seed, a),
        Command::Trials(a) => trials(out, seed, cli.jobs, a),
        Command::Landmarks(a) => landmarks(out, seed, a),
        Command::Saliency(a) => saliency(out, seed, a),
        Command::Embed(a) => embed(out, seed, a),
        Command::Perturb(a) => perturb(out, seed, a),
        Command::Score(a) => score(out, seed, a),
        Command::Stats(a) => stats(out, a),
        Command::Report(a) => render(out, a),
        Command::Replay { .. } => unreachable!("handled above"),
    }
}

fn synth(out: &Path, seed: u64, a: &SynthArgs) -> Result<()> {
    let spec = SynthSpec {
        n_subjects: a.subjects,
        male_fraction: a.male_fraction,
        shape: [a.height, a.width, a.channels],
        regions: default_regions(a.height, a.width),
        planted: a.planted.clone(),
        signal: a.signal,
        noise: a.noise,
        ent_fraction: a.ent_fraction,
        oracle_draws: a.oracle_draws,
    };
    let data = synth_generate(&spec, seed)?;
    let dir = out.join("features");
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    for (s, f) in data.dataset.subjects().iter().zip(data.dataset.features()) {
        write_tensor(f, &out.join(&s.feature_path))?;
    }
    write_manifest(&out.join("manifest.csv"), data.dataset.subjects())?;
    write_json(&out.join("oracle.json"), &data.oracle)?;
    progress(format!(
        "wrote {} subjects; Bayes pair accuracy {:.4} ± {:.4}",
        data.dataset.len(),
        data.oracle.bayes_accuracy,
        data.oracle.standard_error
    ));
    Ok(())
}

fn dataset(d: &DataArgs) -> Result<Dataset> {
    load_dataset(resolved(&d.manifest, "manifest", "--manifest")?)
}

fn pair(out: &Path, seed: u64, a: &PairArgs) -> Result<()> {
    let d = dataset(&a.data)?;
    let pairs = generate_pairs(d.subjects(), a.n_pairs, None, seed)?;
    write_pairs(&out.join("pairs.csv"), &pairs)?;
    progress(format!("wrote {} pairs", pairs.len()));
    Ok(())
}

fn protocol(d: &Dataset, p: &ProtocolArgs, seed: u64) -> Result<(Vec<PairSample>, Split)> {
    let pairs = match &p.pairs {
        Some(path) => {
            require_file(path, "pair list", "--pairs")?;
            let pairs = read_pairs(path)?;
            for pair in &pairs {
                d.check_pair(pair).map_err(|e| Error::format(path, e.to_string()))?;
            }
            pairs
        }
        None => generate_pairs(d.subjects(), p.n_pairs, None, seed)?,
    };
    let split = split_pairs(&pairs, &split_config(p, seed))?;
    Ok((pairs, split))
}

fn split_config(p: &ProtocolArgs, seed: u64) -> SplitConfig {
    SplitConfig {
        train_fraction: p.train_fraction,
        validation_fraction: p.validation_fraction,
        subject_disjoint: !p.paper_split,
        seed,
    }
}

#[derive(Serialize)]
struct SplitSizes {
    pairs: usize,
    train: usize,
    validation: usize,
    test: usize,
    dropped: usize,
}

fn split(out: &Path, seed: u64, a: &ProtocolCmd) -> Result<()> {
    let d = dataset(&a.data)?;
    let (pairs, s) = protocol(&d, &a.protocol, seed)?;
    write_pairs(&out.join("split_train.csv"), &s.train)?;
    write_pairs(&out.join("split_validation.csv"), &s.validation)?;
    write_pairs(&out.join("split_test.csv"), &s.test)?;
    let sizes = SplitSizes {
        pairs: pairs.len(),
        train: s.train.len(),
        validation: s.validation.len(),
        test: s.test.len(),
        dropped: s.dropped,
    };
    write_json(&out.join("split.json"), &sizes)?;
    progress(format!("train {} / validation {} / test {} ({} dropped)", sizes.train, sizes.validation, sizes.test, sizes.dropped));
    Ok(())
}

fn train(out: &Path, seed: u64, a: &TrainCmd) -> Result<()> {
    let d = dataset(&a.data)?;
    let (_, s) = protocol(&d, &a.protocol, seed)?;
    let exp = Experiment::new(&d, &s, a.model.config(d.feature_shape())?, a.training.config())?;
    let (bundle, report) = exp.trial(seed)?;
    write_bundle(&bundle, &out.join("model.bundle"))?;
    report::write_trial_csv(&out.join("trial.csv"), &report)?;
    write_json(&out.join("train.json"), &report)?;
    progress(format!("test accuracy {:.2}%", report.test_accuracy));
    Ok(())
}

fn load_model(f: &ModelFileArgs) -> Result<entpair_core::model::ModelBundle> {
    read_bundle(resolved(&f.model, "model bundle", "--model")?)
}

fn eval(out: &Path, seed: u64, a: &EvalCmd) -> Result<()> {
    let d = dataset(&a.data)?;
    let bundle = load_model(&a.file)?;
    let (_, s) = protocol(&d, &a.protocol, seed)?;
    let inputs = Inputs::prepare(&d, bundle.config())?;
    let mode: EvalMode = a.eval_mode.into();
    let mut rows = Vec::new();
    for (name, set) in [("train", &s.train), ("validation", &s.validation), ("test", &s.test)] {
        if !set.is_empty() {
            rows.push((name, evaluate(&bundle.model, &inputs, &index_pairs(&d, set)?, mode)?));
        }
    }
    report::write_eval_csv(&out.join("eval.csv"), &rows)?;
    let test = index_pairs(&d, &s.test)?;
    let by_gender = subgroup_accuracy(&bundle.model, &inputs, &d, &test, &GroupBy::Gender, mode)?;
    report::write_subgroup_csv(&out.join("subgroups_gender.csv"), &by_gender)?;
    write_json(&out.join("subgroups_gender.json"), &by_gender)?;
    if let Some(tag) = &a.tag {
        let same: Vec<_> = test
            .iter()
            .copied()
            .filter(|p| d.subject(p.left).tags.contains(tag) == d.subject(p.right).tags.contains(tag))
            .collect();
        let by_tag = subgroup_accuracy(&bundle.model, &inputs, &d, &same, &GroupBy::Tag(tag.clone()), mode)?;
        report::write_subgroup_csv(&out.join("subgroups_tag.csv"), &by_tag)?;
        write_json(&out.join("subgroups_tag.json"), &by_tag)?;
    }
    for (name, c) in &rows {
        progress(format!("{name}: {:.2}% of {}", c.accuracy()?, c.total()));
    }
    Ok(())
}

fn trials(out: &Path, seed: u64, jobs: usize, a: &TrialsCmd) -> Result<()> {
    if a.trials == 0 {
        return Err(Error::Usage("--trials must be at least 1".into()));
    }
    let d = dataset(&a.data)?;
    let (_, s) = protocol(&d, &a.protocol, seed)?;
    let exp = Experiment::new(&d, &s, a.model.config(d.feature_shape())?, a.training.config())?;
    progress(format!("{} train / {} validation / {} test pairs", exp.train.len(), exp.validation.len(), exp.test.len()));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Usage(format!("cannot start {jobs} workers: {e}")))?;
    let reports = pool.install(|| {
        (0..a.trials as u64)
            .into_par_iter()
            .map(|i| {
                let (_, r) = exp.trial(seed.wrapping_add(i))?;
                progress(format!("trial {}: test accuracy {:.2}%", i + 1, r.test_accuracy));
                Ok(r)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    for (i, r) in reports.iter().enumerate() {
        report::write_trial_csv(&out.join(format!("trial_{:02}.csv", i + 1)), r)?;
    }
    let summary = TrialsSummary::from_reports(reports)?;
    report::write_trials_csv(&out.join("trials.csv"), &summary)?;
    progress(match summary.sd {
        Some(sd) => format!("mean {:.2}% (SD {sd:.2})", summary.mean),
        None => format!("mean {:.2}%", summary.mean),
    });
    Ok(())
}

fn landmarks(out: &Path, seed: u64, a: &LandmarksCmd) -> Result<()> {
    let names: [String; 3] = a
        .landmarks
        .clone()
        .try_into()
        .map_err(|_| Error::Usage("--landmarks needs exactly three names".into()))?;
    let d = dataset(&a.data)?;
    let (pairs, _) = protocol(&d, &a.protocol, seed)?;
    let cfg = LandmarkStudyConfig {
        landmarks: names,
        repeats: a.repeats,
        conv_width: a.conv_width,
        train: a.training.config(),
        split: split_config(&a.protocol, seed),
        seed,
    };
    let rows = run_landmark_study(&d, &pairs, &cfg)?;
    report::write_landmarks_csv(&out.join("landmarks.csv"), &rows)?;
    let bars: Vec<_> = rows.iter().map(|r| (r.name.clone(), r.mean, None)).collect();
    report::write_bar_chart(&out.join("landmarks.svg"), "Landmark classifiers: test accuracy (%)", &bars)?;
    for r in &rows {
        progress(format!("{}: {:.2}%", r.name, r.mean));
    }
    Ok(())
}

/// `count` distinct test pairs drawn from `seed`, in test-set order.
fn sample_pairs<T: Clone>(items: &[T], count: usize, seed: u64) -> Vec<T> {
    let mut idx: Vec<usize> = (0..items.len()).collect();
    Prng::derive(seed, 60).shuffle(&mut idx);
    let mut keep: Vec<usize> = idx.into_iter().take(count).collect();
    keep.sort_unstable();
    keep.into_iter().map(|i| items[i].clone()).collect()
}

fn saliency(out: &Path, seed: u64, a: &SaliencyCmd) -> Result<()> {
    let d = dataset(&a.data)?;
    let bundle = load_model(&a.file)?;
    let (_, s) = protocol(&d, &a.protocol, seed)?;
    let inputs = Inputs::prepare(&d, bundle.config())?;
    let chosen = sample_pairs(&index_pairs(&d, &s.test)?, a.count, seed);
    if chosen.is_empty() {
        return Err(entpair_core::Error::Empty("test pairs").into());
    }
    let results = chosen
        .iter()
        .map(|&p| {
            let side = match a.side {
                SideArg::Left => Side::Left,
                SideArg::Right => Side::Right,
                SideArg::Ent if p.target == 0 => Side::Left,
                SideArg::Ent => Side::Right,
            };
            occlusion_saliency(&bundle.model, &inputs, p, side, a.top_k)
        })
        .collect::<entpair_core::Result<Vec<SaliencyResult>>>()?;
    report::write_saliency_csv(&out.join("saliency.csv"), &d, &results)?;
    let (h, w) = (results[0].height, results[0].width);
    let mut mean = vec![0.0; h * w];
    for r in &results {
        for (m, v) in mean.iter_mut().zip(&r.grid) {
            *m += v / results.len() as f64;
        }
    }
    let outline = a.outline.as_deref().and_then(|n| d.subject(chosen[0].left).region(n));
    report::write_heatmap(&out.join("saliency.svg"), &mean, h, w, outline)?;
    progress(format!("analysed {} pairs", results.len()));
    Ok(())
}

fn embed(out: &Path, seed: u64, a: &EmbedCmd) -> Result<()> {
    let d = dataset(&a.data)?;
    let bundle = load_model(&a.file)?;
    let inputs = Inputs::prepare(&d, bundle.config())?;
    let all: Vec<usize> = (0..d.len()).collect();
    let sample = sample_by_gender(&d, &all, &[(Gender::M, a.male), (Gender::F, a.female)], seed);
    let study = embedding_study(&bundle.model, &inputs, &d, &sample, seed)?;
    report::write_embedding_csv(&out.join("embedding.csv"), &study)?;
    report::write_embedding_svg(&out.join("embedding.svg"), &study)?;
    #[derive(Serialize)]
    struct Purity {
        subjects: usize,
        explained: [f64; 2],
        label_purity: f64,
        gender_purity: f64,
    }
    write_json(
        &out.join("embedding.json"),
        &Purity {
            subjects: study.points.len(),
            explained: study.explained,
            label_purity: study.label_purity,
            gender_purity: study.gender_purity,
        },
    )?;
    progress(format!("label purity {:.3}, gender purity {:.3}", study.label_purity, study.gender_purity));
    Ok(())
}

fn perturb(out: &Path, seed: u64, a: &PerturbCmd) -> Result<()> {
    let d = dataset(&a.data)?;
    let bundle = load_model(&a.file)?;
    let (_, s) = protocol(&d, &a.protocol, seed)?;
    let inputs = Inputs::prepare(&d, bundle.config())?;
    let test = index_pairs(&d, &s.test)?;
    let mut rows = Vec::new();
    for &k in &a.sigmas {
        let p = Perturbation::Gaussian { sigma: k * a.noise_scale };
        let change = perturb_confidence(&bundle.model, &inputs, &d, &test, &p, seed)?;
        rows.push(["gaussian".to_string(), format!("{k}"), format!("{:.6}", k * a.noise_scale), format!("{change:.6}")]);
    }
    for region in &a.shuffle_regions {
        let p = Perturbation::RegionShuffle { region: region.clone() };
        let change = perturb_confidence(&bundle.model, &inputs, &d, &test, &p, seed)?;
        rows.push(["region_shuffle".to_string(), region.clone(), String::new(), format!("{change:.6}")]);
    }
    crate::manifest::write_rows(&out.join("perturb.csv"), &["perturbation", "setting", "sigma", "mean_abs_change"], rows.clone())?;
    for r in rows {
        progress(format!("{} {}: {}", r[0], r[1], r[3]));
    }
    Ok(())
}

fn score(out: &Path, seed: u64, a: &ScoreCmd) -> Result<()> {
    let d = dataset(&a.data)?;
    let bundle = load_model(&a.file)?;
    let inputs = Inputs::prepare(&d, bundle.config())?;
    let mut rows = Vec::new();
    for (k, id) in a.subjects.iter().enumerate() {
        let subject = d.index_of(id).map_err(|_| Error::Usage(format!("unknown subject {id:?}")))?;
        let me = d.subject(subject);
        let candidates: Vec<usize> = (0..d.len())
            .filter(|&i| i != subject && d.subject(i).label == Label::Non && (a.mixed_panel || d.subject(i).gender == me.gender))
            .collect();
        let panel = sample_pairs(&candidates, a.panel_size, seed.wrapping_add(k as u64));
        let p = score_single(&bundle.model, &inputs, &d, subject, &panel, a.mixed_panel)?;
        rows.push([id.clone(), me.label.to_string(), me.gender.to_string(), panel.len().to_string(), format!("{p:.6}")]);
        progress(format!("{id}: {p:.4}"));
    }
    crate::manifest::write_rows(&out.join("score.csv"), &["subject_id", "label", "gender", "panel_size", "score"], rows)
}

/// Final test accuracies from a trials CSV, skipping the summary row.
pub fn read_trial_accuracies(path: &Path) -> Result<Vec<f64>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let headers = rdr.headers().map_err(|e| Error::format(path, e.to_string()))?.clone();
    if !headers.iter().eq(report::TRIALS_HEADER.iter().copied()) {
        return Err(Error::format(path, "not a trials CSV"));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::format(path, e.to_string()))?;
        if &rec[0] == "summary" {
            continue;
        }
        out.push(rec[2].parse().map_err(|_| Error::format(path, format!("bad accuracy {:?}", &rec[2])))?);
    }
    Ok(out)
}

fn stats(out: &Path, a: &StatsCmd) -> Result<()> {
    require_file(&a.decisions, "decision log", "--decisions")?;
    let model = if a.model_accuracies.is_empty() {
        read_trial_accuracies(resolved(&a.trials_csv, "trials CSV", "--trials-csv or --model-accuracies")?)?
    } else {
        a.model_accuracies.clone()
    };
    let ingested = ingest_decisions(&read_decisions(&a.decisions)?)?;
    for id in &ingested.excluded {
        progress(format!("warning: respondent {id} recognised every face and is excluded"));
    }
    report::write_respondents_csv(&out.join("respondents.csv"), &ingested.respondents)?;
    let summary = StatsSummary {
        groups: compare_groups(&model, &ingested)?,
        respondents: ingested.respondents.len(),
        excluded: ingested.excluded.clone(),
        recognized_dropped: ingested.recognized_dropped,
        retained_decisions: ingested.retained_decisions(),
    };
    write_json(&out.join("summary.json"), &summary)?;
    progress(format!("{} respondents, {} retained decisions", summary.respondents, summary.retained_decisions));
    Ok(())
}

fn render(out: &Path, a: &ReportCmd) -> Result<()> {
    let path = resolved(&a.summary, "stats summary", "--summary")?;
    let summary: StatsSummary = read_json(path)?;
    if summary.groups.is_empty() {
        return Err(Error::format(path, "summary has no groups"));
    }
    report::write_table2_csv(&out.join(&a.table), &summary.groups)?;
    let bars: Vec<_> = summary.groups.iter().map(|g| (g.group.clone(), g.mean, g.sd)).collect();
    report::write_bar_chart(&out.join(&a.chart), "Accuracy (%)", &bars)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn command_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn defaults_resolve_under_out() {
        let cli = Cli::try_parse_from(["entpair", "--out", "o", "train", "--epochs", "3"]).unwrap().resolve();
        let Command::Train(t) = &cli.command else { panic!() };
        assert_eq!(t.data.manifest.as_deref(), Some(Path::new("o/manifest.csv")));
        assert_eq!(t.training.epochs, 3);
        assert_eq!(t.training.batch_size, 32);
        let echo = serde_json::to_string(&cli).unwrap();
        assert_eq!(serde_json::from_str::<Cli>(&echo).unwrap(), cli);
    }

    #[test]
    fn model_arguments_map_to_configs() {
        let cli = Cli::try_parse_from([
            "entpair",
            "trials",
            "--variant",
            "landmark-combined",
            "--conv-width",
            "4",
            "--padding",
            "valid",
        ])
        .unwrap();
        let Command::Trials(t) = &cli.command else { panic!() };
        let cfg = t.model.config([14, 14, 8]).unwrap();
        assert_eq!(cfg.variant, Variant::LandmarkCombined);
        assert_eq!(cfg.conv_width, 4);
        assert_eq!(cfg.padding, Padding::Valid);
        assert_eq!(cfg.landmarks, ["eyes", "nose", "mouth"]);
        let fullface = ModelArgs { variant: VariantArg::Fullface, conv_width: None, ..t.model.clone() };
        assert_eq!(fullface.config([14, 14, 8]).unwrap().conv_width, 32);
        let two = ModelArgs { landmarks: vec!["eyes".into(), "nose".into()], ..t.model.clone() };
        assert_eq!(two.config([14, 14, 8]).unwrap_err().exit_code(), 2);
    }
}

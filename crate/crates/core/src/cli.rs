//! Configuration-driven command-line front end.
//!
//! Every command reads a [`RunConfig`] (TOML, or JSON by extension), applies
//! flag overrides, and writes its artifacts under the run's output directory.
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime abort.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_backbone, load_checkpoint};
use crate::data::{
    apply_label_threshold, load_manifest, load_raters, AugmentPolicy, DiskImages, LabelVocabulary, Manifest, Split,
    ThresholdReport,
};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, EvalOptions, EvalReport, ScoreMatrix};
use crate::model::{ConvBlock, Model, ModelConfig};
use crate::rng;
use crate::schedule::{trace_csv, trace_svg};
use crate::synth::{self, SynthConfig};
use crate::train::{fit, predict_records, TrainConfig};

pub const THREADS_ENV: &str = "CONTAMINET_THREADS";
const INIT_STREAM: u64 = 0x1417;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckpointChoice {
    #[default]
    Final,
    Best,
}

impl CheckpointChoice {
    fn file_name(self) -> &'static str {
        match self {
            CheckpointChoice::Final => "final.ckpt",
            CheckpointChoice::Best => "best.ckpt",
        }
    }
}

/// Network layout; the input shape comes from the augmentation crop and the
/// head width from the active vocabulary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub conv_blocks: Vec<ConvBlock>,
    pub hidden_units: usize,
    pub group1_blocks: Option<usize>,
    /// Checkpoint whose weights seed everything but the head.
    pub backbone: Option<PathBuf>,
}

impl Default for ModelSection {
    fn default() -> Self {
        let desk = ModelConfig::desk(1);
        ModelSection {
            conv_blocks: desk.conv_blocks,
            hidden_units: desk.hidden_units,
            group1_blocks: None,
            backbone: None,
        }
    }
}

impl ModelSection {
    pub fn model_config(&self, input_shape: [usize; 3], k: usize) -> ModelConfig {
        ModelConfig {
            input_shape,
            conv_blocks: self.conv_blocks.clone(),
            hidden_units: self.hidden_units,
            head_outputs: k,
            group1_blocks: self.group1_blocks,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub manifest: Option<PathBuf>,
    /// Rater CSV for the test split, used by `eval` and `bootstrap`.
    pub raters: Option<PathBuf>,
    pub out: PathBuf,
    /// Master seed for initialization, shuffling, augmentation, TTA and bootstrap.
    pub seed: u64,
    /// Minimum training frequency for a label to stay in the vocabulary.
    pub threshold: u64,
    pub tta: usize,
    pub eval_checkpoint: CheckpointChoice,
    pub model: ModelSection,
    pub augment: AugmentPolicy,
    pub train: TrainConfig,
    pub eval: EvalOptions,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            manifest: None,
            raters: None,
            out: PathBuf::from("runs/default"),
            seed: 0,
            threshold: 1000,
            tta: 5,
            eval_checkpoint: CheckpointChoice::Final,
            model: ModelSection::default(),
            augment: AugmentPolicy::default(),
            train: TrainConfig::default(),
            eval: EvalOptions::default(),
            synth: SynthConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parses TOML, or JSON when the extension is `.json`. Relative paths in
    /// the file are taken relative to the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))?
        };
        let base = path.parent().unwrap_or(Path::new(""));
        let absolute = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        cfg.manifest.as_mut().map(absolute);
        cfg.raters.as_mut().map(absolute);
        cfg.model.backbone.as_mut().map(absolute);
        absolute(&mut cfg.out);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(format!("cannot serialize config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        self.augment.validate()?;
        self.train.validate()?;
        self.eval.bootstrap.validate()?;
        self.synth.validate()?;
        if self.tta == 0 {
            return Err(Error::config("tta must be at least 1"));
        }
        Ok(())
    }

    fn manifest_path(&self) -> Result<&Path> {
        let p = self
            .manifest
            .as_deref()
            .ok_or_else(|| Error::config("no manifest given (set `manifest` in the config)"))?;
        if !p.is_file() {
            return Err(Error::config(format!("manifest not found: {}", p.display())));
        }
        Ok(p)
    }

    fn raters_path(&self) -> Result<&Path> {
        let p = self
            .raters
            .as_deref()
            .ok_or_else(|| Error::config("no rater file given (set `raters` in the config)"))?;
        if !p.is_file() {
            return Err(Error::config(format!("rater file not found: {}", p.display())));
        }
        Ok(p)
    }
}

#[derive(Parser, Debug)]
#[command(name = "binsight", version, about = "Multi-label image classifier training and rater-agreement evaluation")]
pub struct Cli {
    /// Run configuration (TOML, or JSON by extension).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Label counts and retained fractions per frequency threshold.
    LabelsReport {
        /// Manifest CSV; defaults to the config's.
        manifest: Option<PathBuf>,
        /// Threshold to report; repeat for several (default 100, 300, 1000).
        #[arg(long = "threshold")]
        thresholds: Vec<u64>,
    },
    /// Fit a model and write checkpoints, the fit report and the lr trace.
    Train {
        #[arg(long)]
        threshold: Option<u64>,
    },
    /// TTA predictions on the test split and the rater-agreement report.
    Eval {
        /// Checkpoint to evaluate instead of the run's final one.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        tta: Option<usize>,
        #[arg(long)]
        resamples: Option<usize>,
    },
    /// Write the configured learning-rate schedule as CSV and SVG.
    LrPlot,
    /// Recompute the agreement report from stored predictions.
    Bootstrap {
        /// Prediction CSV; defaults to `predictions.csv` in the run directory.
        predictions: Option<PathBuf>,
        #[arg(long)]
        resamples: Option<usize>,
    },
    /// Generate the synthetic shape dataset and a matching config.
    SynthData,
}

/// Exit code for an error: 1 for bad input or configuration, 2 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Ingestion { .. } | Error::Alignment(_) | Error::Validation(_) => 1,
        _ => 2,
    }
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return exit_code(&e);
    }
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::config(format!("{THREADS_ENV} must be a positive integer, got {raw:?}")))?;
    // A pool may already exist when called repeatedly in one process.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let out_given = cli.out.is_some();
    if let Some(out) = cli.out {
        cfg.out = out;
    }
    match cli.command {
        Command::LabelsReport { manifest, thresholds } => {
            if let Some(m) = manifest {
                cfg.manifest = Some(m);
            }
            cmd_labels_report(&cfg, &thresholds, out_given)
        }
        Command::Train { threshold } => {
            if let Some(t) = threshold {
                cfg.threshold = t;
            }
            cmd_train(&cfg)
        }
        Command::Eval { checkpoint, tta, resamples } => {
            if let Some(t) = tta {
                cfg.tta = t;
            }
            if let Some(b) = resamples {
                cfg.eval.bootstrap.resamples = b;
            }
            cmd_eval(&cfg, checkpoint.as_deref())
        }
        Command::LrPlot => cmd_lr_plot(&cfg),
        Command::Bootstrap { predictions, resamples } => {
            if let Some(b) = resamples {
                cfg.eval.bootstrap.resamples = b;
            }
            cmd_bootstrap(&cfg, predictions.as_deref())
        }
        Command::SynthData => cmd_synth_data(&cfg),
    }
}

/// Vocabulary statistics for one threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelsReport {
    pub rows: Vec<ThresholdReport>,
    /// `(label, count)`: the ten most frequent, then the five least frequent
    /// starting from the rarest.
    pub top: Vec<(String, u64)>,
    pub bottom: Vec<(String, u64)>,
}

pub fn labels_report(manifest: &Manifest, thresholds: &[u64]) -> Result<LabelsReport> {
    let train = manifest.split(Split::Train);
    let mut rows = Vec::with_capacity(thresholds.len());
    for &t in thresholds {
        rows.push(match apply_label_threshold(&manifest.vocabulary, &train, t) {
            Ok((_, rep)) => rep,
            Err(Error::Validation(_)) => ThresholdReport {
                min_count: t,
                total_labels: manifest.vocabulary.len(),
                kept_labels: 0,
                retained_image_fraction: 0.0,
                retained_occurrence_fraction: 0.0,
            },
            Err(e) => return Err(e),
        });
    }
    let ranked: Vec<(String, u64)> = manifest
        .vocabulary
        .by_frequency()
        .into_iter()
        .map(|e| (e.name.clone(), e.frequency))
        .collect();
    let top = ranked.iter().take(10).cloned().collect();
    let bottom = ranked.iter().rev().take(5).cloned().collect();
    Ok(LabelsReport { rows, top, bottom })
}

impl LabelsReport {
    pub fn table(&self) -> String {
        let mut s = format!("{:>9} {:>7} {:>14} {:>19}\n", "threshold", "labels", "images kept", "occurrences kept");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:>9} {:>7} {:>13.1}% {:>18.1}%",
                r.min_count,
                r.kept_labels,
                100.0 * r.retained_image_fraction,
                100.0 * r.retained_occurrence_fraction
            );
        }
        for (title, list) in [("most frequent", &self.top), ("least frequent", &self.bottom)] {
            let _ = writeln!(s, "\n{title}");
            for (name, n) in list {
                let _ = writeln!(s, "  {name:<32} {n:>8}");
            }
        }
        s
    }
}

fn cmd_labels_report(cfg: &RunConfig, thresholds: &[u64], write: bool) -> Result<()> {
    let manifest = load_manifest(cfg.manifest_path()?)?;
    let thresholds = if thresholds.is_empty() { &[100, 300, 1000][..] } else { thresholds };
    let rep = labels_report(&manifest, thresholds)?;
    print!("{}", rep.table());
    if write {
        fs::create_dir_all(&cfg.out)?;
        fs::write(cfg.out.join("labels_report.json"), serde_json::to_string_pretty(&rep)? + "\n")?;
    }
    Ok(())
}

fn active_vocabulary(cfg: &RunConfig, manifest: &Manifest) -> Result<LabelVocabulary> {
    let (vocab, rep) = apply_label_threshold(&manifest.vocabulary, &manifest.split(Split::Train), cfg.threshold)?;
    log::info!(
        "threshold {}: {} of {} labels kept",
        rep.min_count,
        rep.kept_labels,
        rep.total_labels
    );
    Ok(vocab)
}

fn cmd_train(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    let manifest = load_manifest(cfg.manifest_path()?)?;
    let train = manifest.split(Split::Train);
    let valid = manifest.split(Split::Valid);
    if train.is_empty() || valid.is_empty() {
        return Err(Error::Validation("manifest needs both train and valid rows".into()));
    }
    let vocab = active_vocabulary(cfg, &manifest)?;
    let model_cfg = cfg.model.model_config(cfg.augment.output_shape(), vocab.len());
    let mut init = rng::substream(cfg.seed, INIT_STREAM, 0);
    let mut model = match &cfg.model.backbone {
        Some(path) => {
            let m = load_backbone(path, vocab.len(), &mut init)?;
            if m.config().input_shape != model_cfg.input_shape {
                return Err(Error::config("backbone input shape differs from the augmentation crop"));
            }
            m
        }
        None => Model::build(model_cfg, &mut init)?,
    };

    fs::create_dir_all(&cfg.out)?;
    let mut persisted = cfg.clone();
    persisted.out = fs::canonicalize(&cfg.out)?;
    persisted.manifest = Some(fs::canonicalize(cfg.manifest_path()?)?);
    if let Some(p) = cfg.raters.as_deref().filter(|p| p.is_file()) {
        persisted.raters = Some(fs::canonicalize(p)?);
    }
    if let Some(p) = cfg.model.backbone.as_deref() {
        persisted.model.backbone = Some(fs::canonicalize(p)?);
    }
    fs::write(cfg.out.join("config.toml"), persisted.to_toml()?)?;
    vocab.save(&cfg.out.join("vocab.json"))?;

    let train_cfg = TrainConfig { seed: cfg.seed, checkpoint_dir: Some(cfg.out.clone()), ..cfg.train.clone() };
    let source = DiskImages::new(&manifest.root);
    let report = fit(&mut model, &train, &valid, &vocab, &cfg.augment, &source, &train_cfg)?;
    fs::write(cfg.out.join("fit_report.json"), report.to_json()?)?;
    fs::write(cfg.out.join("lr_trace.csv"), trace_csv(&report.lr_trace))?;
    fs::write(
        cfg.out.join("timing.json"),
        format!("{{\"wall_time_secs\": {}}}\n", report.wall_time_secs),
    )?;
    if let Some(msg) = report.aborted {
        return Err(Error::NonFinite(msg));
    }
    println!(
        "trained {} epochs ({} steps); final valid loss {:.5}; artifacts in {}",
        report.epochs_completed,
        report.steps,
        report.valid_loss.last().copied().unwrap_or(f64::NAN),
        cfg.out.display()
    );
    Ok(())
}

fn predictions_csv(images: &[String], names: &[String], scores: &ScoreMatrix) -> String {
    let mut s = String::from("image_path");
    for n in names {
        s.push(',');
        s.push_str(n);
    }
    s.push('\n');
    for (i, img) in images.iter().enumerate() {
        s.push_str(img);
        for v in scores.row(i) {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

fn read_predictions(path: &Path, vocab: &LabelVocabulary) -> Result<(Vec<String>, ScoreMatrix)> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    let names: Vec<String> = vocab.names().map(str::to_owned).collect();
    if header.first().map(String::as_str) != Some("image_path") || header[1..] != names[..] {
        return Err(Error::Alignment(format!(
            "prediction columns {:?} do not match the vocabulary {names:?}",
            &header[1.min(header.len())..]
        )));
    }
    let (mut images, mut data) = (Vec::new(), Vec::new());
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        images.push(row[0].to_owned());
        for v in row.iter().skip(1) {
            data.push(v.trim().parse::<f64>().map_err(|e| Error::Ingestion {
                path: path.to_path_buf(),
                line: i as u64 + 2,
                message: format!("bad score {v:?}: {e}"),
            })?);
        }
    }
    let n = images.len();
    Ok((images, ScoreMatrix::new(n, names.len(), data)?))
}

fn eval_options(cfg: &RunConfig) -> EvalOptions {
    let mut opts = cfg.eval.clone();
    opts.bootstrap.seed = cfg.seed;
    opts
}

fn write_report(dir: &Path, stem: &str, rep: &EvalReport) -> Result<()> {
    fs::write(dir.join(format!("{stem}.json")), rep.to_json()?)?;
    fs::write(dir.join(format!("{stem}.csv")), rep.to_csv())?;
    print!("{}", rep.table());
    Ok(())
}

fn cmd_eval(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<()> {
    cfg.validate()?;
    let manifest = load_manifest(cfg.manifest_path()?)?;
    let raters_path = cfg.raters_path()?;
    let vocab = LabelVocabulary::load(&cfg.out.join("vocab.json"))?;
    let ck_path = checkpoint.map_or_else(|| cfg.out.join(cfg.eval_checkpoint.file_name()), Path::to_path_buf);
    let ck = load_checkpoint(&ck_path)?;
    ck.check_vocab(&vocab)?;

    let test = manifest.split(Split::Test);
    let images: Vec<String> = test.iter().map(|r| r.image_path.clone()).collect();
    let raters = load_raters(raters_path, &vocab, Some(&images))?;
    let source = DiskImages::new(&manifest.root);
    let scores = predict_records(&ck.model, &test, &source, &cfg.augment, cfg.tta, cfg.seed)?;
    let names: Vec<String> = vocab.names().map(str::to_owned).collect();
    fs::write(cfg.out.join("predictions.csv"), predictions_csv(&images, &names, &scores))?;
    let rep = evaluate(&scores, &raters.matrix, &names, &eval_options(cfg))?;
    write_report(&cfg.out, "eval_report", &rep)
}

fn cmd_bootstrap(cfg: &RunConfig, predictions: Option<&Path>) -> Result<()> {
    cfg.validate()?;
    let vocab = LabelVocabulary::load(&cfg.out.join("vocab.json"))?;
    let pred_path = predictions.map_or_else(|| cfg.out.join("predictions.csv"), Path::to_path_buf);
    let (images, scores) = read_predictions(&pred_path, &vocab)?;
    let raters = load_raters(cfg.raters_path()?, &vocab, Some(&images))?;
    let names: Vec<String> = vocab.names().map(str::to_owned).collect();
    let rep = evaluate(&scores, &raters.matrix, &names, &eval_options(cfg))?;
    write_report(&cfg.out, "bootstrap_report", &rep)
}

fn cmd_lr_plot(cfg: &RunConfig) -> Result<()> {
    let sched = &cfg.train.schedule;
    let trace = sched.trace()?;
    fs::create_dir_all(&cfg.out)?;
    fs::write(cfg.out.join("lr_trace.csv"), trace_csv(&trace))?;
    let title = format!("one-cycle schedule, max_lr {}, {} steps", sched.max_lr, sched.iters);
    fs::write(cfg.out.join("lr_curve.svg"), trace_svg(&trace, &title))?;
    let peak = trace
        .iter()
        .enumerate()
        .fold((0, f64::MIN), |a, (i, &v)| if v > a.1 { (i, v) } else { a });
    println!(
        "{} steps: start {}, peak {} at step {}, end {}",
        trace.len(),
        trace[0],
        peak.1,
        peak.0,
        trace[trace.len() - 1]
    );
    Ok(())
}

fn cmd_synth_data(cfg: &RunConfig) -> Result<()> {
    let synth_cfg = SynthConfig { seed: cfg.seed, ..cfg.synth.clone() };
    let data = synth::generate(&synth_cfg)?;
    data.write(&cfg.out)?;
    let run = RunConfig {
        manifest: Some("manifest.csv".into()),
        raters: Some("raters.csv".into()),
        out: "run".into(),
        seed: cfg.seed,
        threshold: 0,
        augment: AugmentPolicy::desk(),
        synth: synth_cfg,
        ..RunConfig::default()
    };
    fs::write(cfg.out.join("config.toml"), run.to_toml()?)?;
    println!(
        "wrote {} images, manifest.csv, raters.csv and config.toml to {}",
        data.records.len(),
        cfg.out.display()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_published_constants() {
        let c = RunConfig::default();
        assert_eq!(c.augment.resize_to, [250, 333]);
        assert_eq!(c.augment.crop_to, [234, 311]);
        assert_eq!(c.augment.rotation_deg, 10.0);
        assert_eq!((c.train.batch_size, c.train.epochs), (64, 12));
        assert_eq!(c.train.schedule.warm_frac, 0.3);
        assert_eq!((c.train.schedule.start_div, c.train.schedule.final_div), (25.0, 2000.0));
        assert_eq!(c.tta, 5);
        assert_eq!((c.eval.bootstrap.resamples, c.eval.bootstrap.level), (10_000, 0.95));
    }

    #[test]
    fn toml_round_trip() {
        let c = RunConfig { manifest: Some("/x/m.csv".into()), ..RunConfig::default() };
        let back: RunConfig = toml::from_str(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_field_names_the_key() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        fs::write(&p, "[train]\nepochs = 3\nbatchsize = 4\n").unwrap();
        match RunConfig::load(&p) {
            Err(Error::Config(msg)) => assert!(msg.contains("batchsize"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn relative_paths_resolve_against_config_dir() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        fs::write(&p, r#"{"manifest": "data/m.csv", "out": "run"}"#).unwrap();
        let c = RunConfig::load(&p).unwrap();
        assert_eq!(c.manifest.unwrap(), dir.path().join("data/m.csv"));
        assert_eq!(c.out, dir.path().join("run"));
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(main_with_args(["binsight", "no-such-command"]), 1);
        assert_eq!(main_with_args(["binsight", "train", "--seed", "x"]), 1);
        assert_eq!(main_with_args(["binsight", "--help"]), 0);
    }
}

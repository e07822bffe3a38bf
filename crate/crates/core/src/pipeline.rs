//! End-to-end workflows behind the command-line tool: experiment
//! configuration, corpus preparation, training, evaluation, augmentation
//! previews and result tables.
//!
//! Everything here is deterministic given the configuration and its seeds.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::{
    generate_augmented, make_low_freq_mask, AugmentParams, MixVariant, DEFAULT_BETA,
};
use crate::binary::BinaryMask;
use crate::data::{
    self, default_domains, generate_domain, pnm, read_manifest, split, DomainId, Sample,
    DEFAULT_IMAGE_SIZE, DEFAULT_SAMPLES_PER_DOMAIN, DEFAULT_TRAIN_FRACTION,
};
use crate::error::{Error, Result};
use crate::federation::{
    build_bank, run_federation, AugmentationConfig, ClientState, FederationConfig,
    FederationOutcome, Weighting,
};
use crate::metrics::{aggregate_report, BinaryMaskPair, Metric, MetricsReport};
use crate::model::{predict, ModelParams, DEFAULT_LR};
use crate::spectral::{forward_dft, Image};
use crate::threshold::{ThresholdMode, ThresholdSpec, DEFAULT_ALPHA};

pub const CHECKPOINT_FILE: &str = "checkpoint.fdgm";
pub const ROUND_LOG_FILE: &str = "rounds.csv";
pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.toml";
pub const EVAL_FILE: &str = "eval.csv";
/// Probability at or above which a pixel is predicted as foreground.
pub const FOREGROUND_CUTOFF: f64 = 0.5;

/// Thresholding applied to the foreign amplitude before mixing.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdChoice {
    /// Mix the raw foreign amplitude.
    None,
    Soft,
    #[default]
    Hard,
}

impl std::str::FromStr for ThresholdChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(ThresholdChoice::None),
            "soft" => Ok(ThresholdChoice::Soft),
            "hard" => Ok(ThresholdChoice::Hard),
            other => Err(Error::Config(format!(
                "threshold_mode `{other}` is not one of none, soft, hard"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightingChoice {
    #[default]
    Size,
    Uniform,
}

/// Which part of each domain's deterministic split to use.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitPart {
    Train,
    Test,
    #[default]
    All,
}

impl std::str::FromStr for SplitPart {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitPart::Train),
            "test" => Ok(SplitPart::Test),
            "all" => Ok(SplitPart::All),
            other => Err(Error::Config(format!("split `{other}` is not one of train, test, all"))),
        }
    }
}

/// Experiment configuration. Every key has a default, so an empty file is a
/// valid configuration for the default synthetic corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed for initialization, splits and augmentation draws.
    pub seed: u64,
    /// Seed of the synthetic corpus.
    pub data_seed: u64,
    pub samples_per_domain: usize,
    pub image_size: usize,
    /// Dataset manifest. Without one the default corpus is rendered in memory.
    pub manifest: Option<PathBuf>,
    /// Domains that act as federated clients, one client per domain.
    pub clients: Vec<DomainId>,
    /// Domains never seen in training.
    pub held_out: Vec<DomainId>,
    pub train_fraction: f64,
    pub rounds: usize,
    pub lr: f64,
    /// Proximal strength; 0 is FedAvg.
    pub mu: f64,
    pub weighting: WeightingChoice,
    /// Explicit aggregation weights, overriding `weighting`.
    pub weights: Option<Vec<f64>>,
    /// `false` trains both local passes on the original images.
    pub augment: bool,
    pub beta: f64,
    pub alpha: f64,
    pub threshold_mode: ThresholdChoice,
    pub mix_variant: MixVariant,
    pub synthetic_per_image: usize,
    /// Mixing strength for every synthetic image instead of a uniform draw.
    pub fixed_lambda: Option<f64>,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 1,
            data_seed: 0,
            samples_per_domain: DEFAULT_SAMPLES_PER_DOMAIN,
            image_size: DEFAULT_IMAGE_SIZE,
            manifest: None,
            clients: vec![0, 1, 2],
            held_out: vec![3],
            train_fraction: DEFAULT_TRAIN_FRACTION,
            rounds: 20,
            lr: DEFAULT_LR,
            mu: 0.0,
            weighting: WeightingChoice::Size,
            weights: None,
            augment: true,
            beta: DEFAULT_BETA,
            alpha: DEFAULT_ALPHA,
            threshold_mode: ThresholdChoice::Hard,
            mix_variant: MixVariant::Literal,
            synthetic_per_image: 1,
            fixed_lambda: None,
            output_dir: PathBuf::from("runs/default"),
        }
    }
}

/// Parses a command-line value as a TOML value, falling back to a string.
fn parse_override_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

impl ExperimentConfig {
    /// Parses `text` and applies `key=value` overrides on top of it.
    pub fn from_toml(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for (key, raw) in overrides {
            table.insert(key.clone(), parse_override_value(raw));
        }
        let cfg: ExperimentConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    /// Reads a config file. A relative `manifest` is resolved against the
    /// file's directory.
    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text, overrides)?;
        if let (Some(manifest), Some(dir)) = (&cfg.manifest, path.parent()) {
            if manifest.is_relative() && !overrides.iter().any(|(k, _)| k == "manifest") {
                let joined = dir.join(manifest);
                cfg.manifest = Some(fs::canonicalize(&joined).unwrap_or(joined));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Checks every key and reports all problems at once.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.clients.is_empty() {
            problems.push("clients must list at least one domain".to_string());
        }
        let mut seen = std::collections::BTreeSet::new();
        for d in &self.clients {
            if !seen.insert(*d) {
                problems.push(format!("domain {d} is listed twice in clients"));
            }
        }
        for d in &self.held_out {
            if self.clients.contains(d) {
                problems.push(format!("domain {d} is both a client and held out"));
            }
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            problems.push(format!("train_fraction {} is outside (0, 1)", self.train_fraction));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            problems.push(format!("lr {} must be positive", self.lr));
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            problems.push(format!("mu {} must be non-negative", self.mu));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            problems.push(format!("beta {} is outside (0, 1]", self.beta));
        }
        if let Err(e) = ThresholdSpec::<f64>::new(ThresholdMode::Hard, self.alpha) {
            problems.push(e.to_string());
        }
        if self.synthetic_per_image == 0 {
            problems.push("synthetic_per_image must be at least 1".to_string());
        }
        if let Some(l) = self.fixed_lambda {
            if !(l > 0.0 && l <= 1.0) {
                problems.push(format!("fixed_lambda {l} is outside (0, 1]"));
            }
        }
        if let Some(w) = &self.weights {
            if w.len() != self.clients.len() {
                problems.push(format!(
                    "weights has {} entries for {} clients",
                    w.len(),
                    self.clients.len()
                ));
            } else if let Err(e) = crate::federation::validate_weights(w) {
                problems.push(e.to_string());
            }
        }
        if self.samples_per_domain == 0 {
            problems.push("samples_per_domain must be at least 1".to_string());
        }
        if self.image_size < 4 {
            problems.push(format!("image_size {} is below 4", self.image_size));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    pub fn threshold(&self) -> Result<Option<ThresholdSpec<f64>>> {
        Ok(match self.threshold_mode {
            ThresholdChoice::None => None,
            ThresholdChoice::Soft => Some(ThresholdSpec::soft(self.alpha)?),
            ThresholdChoice::Hard => Some(ThresholdSpec::hard(self.alpha)?),
        })
    }

    pub fn federation(&self) -> Result<FederationConfig<f64>> {
        let augmentation = if self.augment {
            Some(AugmentationConfig {
                beta: self.beta,
                threshold: self.threshold()?,
                variant: self.mix_variant,
                synthetic_per_image: self.synthetic_per_image,
                fixed_lambda: self.fixed_lambda,
            })
        } else {
            None
        };
        let weighting = match (&self.weights, self.weighting) {
            (Some(w), _) => Weighting::Explicit(w.clone()),
            (None, WeightingChoice::Size) => Weighting::DatasetSize,
            (None, WeightingChoice::Uniform) => Weighting::Uniform,
        };
        Ok(FederationConfig {
            rounds: self.rounds,
            weighting,
            lr: self.lr,
            mu: self.mu,
            augmentation,
            seed: derive_seed(self.seed, SeedTag::Rounds, 0),
        })
    }
}

#[derive(Clone, Copy)]
enum SeedTag {
    Init = 1,
    Split = 2,
    Rounds = 3,
}

/// Independent sub-seed of `master` for one purpose (SplitMix64 finalizer).
fn derive_seed(master: u64, tag: SeedTag, index: u64) -> u64 {
    let mut z = master
        .wrapping_add((tag as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Quantizes an image to 8 bits per channel, as a PPM round trip would.
pub fn quantize(img: &Image<f64>) -> Image<f64> {
    img.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0)
        .expect("quantizing keeps values finite")
}

/// The default synthetic corpus, quantized so it matches what `gen-data`
/// writes to disk.
pub fn synthetic_corpus(data_seed: u64, samples_per_domain: usize, size: usize) -> Result<Vec<Sample<f64>>> {
    let mut out = Vec::new();
    for spec in default_domains(data_seed) {
        for mut s in generate_domain::<f64>(&spec, samples_per_domain, size, size)? {
            s.image = quantize(&s.image);
            out.push(s);
        }
    }
    Ok(out)
}

/// Writes the default corpus under `root` and returns the manifest path.
pub fn gen_data(cfg: &ExperimentConfig, root: &Path) -> Result<PathBuf> {
    let samples = synthetic_corpus(cfg.data_seed, cfg.samples_per_domain, cfg.image_size)?;
    data::write_dataset(root, &samples)
}

/// Loads the configured dataset, from the manifest if one is set.
pub fn load_corpus(cfg: &ExperimentConfig) -> Result<Vec<Sample<f64>>> {
    match &cfg.manifest {
        Some(path) => read_manifest(path)?.iter().map(|e| e.load()).collect(),
        None => synthetic_corpus(cfg.data_seed, cfg.samples_per_domain, cfg.image_size),
    }
}

/// Samples of `domains` restricted to `part` of each domain's split.
pub fn select_samples(
    cfg: &ExperimentConfig,
    corpus: &[Sample<f64>],
    domains: &[DomainId],
    part: SplitPart,
) -> Result<Vec<Sample<f64>>> {
    let mut out = Vec::new();
    for &domain in domains {
        let members: Vec<Sample<f64>> = corpus.iter().filter(|s| s.domain == domain).cloned().collect();
        if members.is_empty() {
            return Err(Error::Config(format!("dataset has no samples for domain {domain}")));
        }
        let chosen = match part {
            SplitPart::All => members,
            _ => {
                let seed = derive_seed(cfg.seed, SeedTag::Split, domain as u64);
                let (train, test) = split(members, cfg.train_fraction, seed)?;
                if part == SplitPart::Train {
                    train
                } else {
                    test
                }
            }
        };
        out.extend(chosen);
    }
    Ok(out)
}

pub fn initial_params(cfg: &ExperimentConfig, channels: usize) -> ModelParams<f64> {
    ModelParams::seeded(channels, derive_seed(cfg.seed, SeedTag::Init, 0))
}

/// Builds one client per configured domain from its training split, populates
/// the amplitude bank, and runs the federation.
pub fn train(cfg: &ExperimentConfig, corpus: &[Sample<f64>]) -> Result<FederationOutcome<f64>> {
    cfg.validate()?;
    let fed = cfg.federation()?;
    fed.validate()?;
    let mut clients = Vec::with_capacity(cfg.clients.len());
    for (k, &domain) in cfg.clients.iter().enumerate() {
        let local = select_samples(cfg, corpus, &[domain], SplitPart::Train)?;
        let id = u16::try_from(k).map_err(|_| Error::Config("too many clients".into()))?;
        clients.push(ClientState::new(id, local)?);
    }
    let channels = clients[0].examples()[0].sample.image.channels();
    let bank = if cfg.augment {
        build_bank(&clients, cfg.beta)?
    } else {
        crate::bank::AmplitudeBank::new()
    };
    run_federation(&fed, &mut clients, &bank, initial_params(cfg, channels))
}

/// Trains and writes the checkpoint, round log and resolved config under
/// `out_dir`.
pub fn train_to_dir(cfg: &ExperimentConfig, out_dir: &Path) -> Result<FederationOutcome<f64>> {
    cfg.validate()?;
    let corpus = load_corpus(cfg)?;
    let outcome = train(cfg, &corpus)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    outcome.params.save(&out_dir.join(CHECKPOINT_FILE))?;
    let log_path = out_dir.join(ROUND_LOG_FILE);
    let file = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    crate::federation::write_round_log(&outcome.records, std::io::BufWriter::new(file))?;
    let resolved = out_dir.join(RESOLVED_CONFIG_FILE);
    fs::write(&resolved, cfg.to_toml()?).map_err(|e| Error::io(&resolved, e))?;
    Ok(outcome)
}

/// Metrics of one prediction.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub sample: String,
    pub domain: DomainId,
    pub report: MetricsReport<f64>,
    pub empty_prediction: bool,
}

pub fn predict_mask(params: &ModelParams<f64>, img: &Image<f64>) -> Result<BinaryMask> {
    let probs = predict(params, img)?;
    BinaryMask::from_probabilities(img.height(), img.width(), &probs, FOREGROUND_CUTOFF)
}

pub fn evaluate(params: &ModelParams<f64>, samples: &[Sample<f64>]) -> Result<Vec<EvalRow>> {
    if samples.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    samples
        .iter()
        .map(|s| {
            let pred = predict_mask(params, &s.image)?;
            let report = MetricsReport::evaluate(&BinaryMaskPair::new(&pred, &s.mask)?);
            Ok(EvalRow {
                sample: s.id.clone(),
                domain: s.domain,
                report,
                empty_prediction: pred.count() == 0,
            })
        })
        .collect()
}

pub fn mean_iou(rows: &[EvalRow]) -> f64 {
    rows.iter().map(|r| r.report.iou).sum::<f64>() / rows.len() as f64
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Per-image rows followed by one `mean` row.
pub fn write_eval_csv<W: std::io::Write>(rows: &[EvalRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["sample", "domain"];
    header.extend(Metric::ALL.iter().map(|m| m.name()));
    header.push("empty_prediction");
    w.write_record(&header)?;
    for row in rows {
        let mut rec = vec![row.sample.clone(), row.domain.to_string()];
        rec.extend(row.report.fields().iter().map(|(_, v)| fmt_opt(*v)));
        rec.push(row.empty_prediction.to_string());
        w.write_record(&rec)?;
    }
    let reports: Vec<MetricsReport<f64>> = rows.iter().map(|r| r.report).collect();
    let agg = aggregate_report(&reports, None)?;
    let mut rec = vec!["mean".to_string(), String::new()];
    rec.extend(agg.mean.fields().iter().map(|(_, v)| fmt_opt(*v)));
    rec.push(rows.iter().filter(|r| r.empty_prediction).count().to_string());
    w.write_record(&rec)?;
    w.flush().map_err(|e| Error::io("<evaluation csv>", e))
}

pub fn write_eval_file(rows: &[EvalRow], path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_eval_csv(rows, std::io::BufWriter::new(file))
}

/// The five panels of an augmentation preview.
#[derive(Clone, Debug)]
pub struct AugmentPreview {
    pub source: Image<f64>,
    pub target: Image<f64>,
    /// Raw foreign amplitude mixed in.
    pub dft: Image<f64>,
    /// Soft-thresholded foreign amplitude.
    pub dft_st: Image<f64>,
    /// Hard-thresholded foreign amplitude.
    pub dft_ht: Image<f64>,
}

impl AugmentPreview {
    pub const NAMES: [&'static str; 5] = ["source", "target", "dft", "dft_st", "dft_ht"];

    pub fn panels(&self) -> [&Image<f64>; 5] {
        [&self.source, &self.target, &self.dft, &self.dft_st, &self.dft_ht]
    }
}

pub fn augment_preview(
    source: &Image<f64>,
    target: &Image<f64>,
    lambda: f64,
    beta: f64,
    alpha: f64,
    variant: MixVariant,
) -> Result<AugmentPreview> {
    let mask = make_low_freq_mask(source.height(), source.width(), beta)?;
    let target_amp = forward_dft(target)?.into_parts().0;
    let run = |threshold: Option<ThresholdSpec<f64>>| {
        let params = AugmentParams {
            lambda,
            threshold,
            mask: mask.clone(),
            variant,
        };
        generate_augmented(source, &target_amp, &params)
    };
    Ok(AugmentPreview {
        source: source.clone(),
        target: target.clone(),
        dft: run(None)?,
        dft_st: run(Some(ThresholdSpec::soft(alpha)?))?,
        dft_ht: run(Some(ThresholdSpec::hard(alpha)?))?,
    })
}

/// Writes the preview panels as `<name>.ppm` under `dir`.
pub fn write_preview(preview: &AugmentPreview, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    AugmentPreview::NAMES
        .iter()
        .zip(preview.panels())
        .map(|(name, img)| {
            let path = dir.join(format!("{name}.ppm"));
            pnm::write_image(&path, img)?;
            Ok(path)
        })
        .collect()
}

/// Per-domain means of one evaluation file.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub method: String,
    pub domain: String,
    pub count: usize,
    /// Means in [`Metric::ALL`] order; Hausdorff over finite entries only.
    pub means: [Option<f64>; 6],
}

/// Reads an evaluation CSV and averages its per-image rows by domain.
pub fn summarize_eval(method: &str, path: &Path) -> Result<Vec<ReportRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut groups: BTreeMap<String, Vec<[Option<f64>; 6]>> = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        if record.get(0) == Some("mean") {
            continue;
        }
        let domain = record.get(1).unwrap_or_default().to_string();
        let mut values = [None; 6];
        for (i, v) in values.iter_mut().enumerate() {
            let raw = record.get(2 + i).unwrap_or_default();
            if !raw.is_empty() {
                *v = Some(raw.parse::<f64>().map_err(|e| Error::Malformed {
                    format: "evaluation csv",
                    reason: format!("{}: `{raw}`: {e}", path.display()),
                })?);
            }
        }
        groups.entry(domain).or_default().push(values);
    }
    if groups.is_empty() {
        return Err(Error::Malformed {
            format: "evaluation csv",
            reason: format!("{} has no per-image rows", path.display()),
        });
    }
    Ok(groups
        .into_iter()
        .map(|(domain, rows)| {
            let mut means = [None; 6];
            for (i, m) in means.iter_mut().enumerate() {
                let present: Vec<f64> = rows.iter().filter_map(|r| r[i]).collect();
                if !present.is_empty() {
                    *m = Some(present.iter().sum::<f64>() / present.len() as f64);
                }
            }
            ReportRow {
                method: method.to_string(),
                domain,
                count: rows.len(),
                means,
            }
        })
        .collect())
}

/// Methods-by-metrics table, one block of rows per domain.
pub fn render_report(rows: &[ReportRow]) -> String {
    let mut out = String::from("| domain | method | n |");
    for m in Metric::ALL {
        let _ = write!(out, " {} |", m.name());
    }
    out.push_str("\n|---|---|---|");
    out.push_str(&"---|".repeat(Metric::ALL.len()));
    out.push('\n');
    let mut sorted: Vec<&ReportRow> = rows.iter().collect();
    sorted.sort_by(|a, b| a.domain.cmp(&b.domain));
    for row in sorted {
        let _ = write!(out, "| {} | {} | {} |", row.domain, row.method, row.count);
        for v in row.means {
            match v {
                Some(x) => {
                    let _ = write!(out, " {x:.4} |");
                }
                None => out.push_str(" - |"),
            }
        }
        out.push('\n');
    }
    out
}

pub fn write_report_csv(rows: &[ReportRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["method", "domain", "count"];
    header.extend(Metric::ALL.iter().map(|m| m.name()));
    w.write_record(&header)?;
    for row in rows {
        let mut rec = vec![row.method.clone(), row.domain.clone(), row.count.to_string()];
        rec.extend(row.means.iter().map(|v| fmt_opt(*v)));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

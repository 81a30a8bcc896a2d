//! End-to-end experiments: style learning, classifier training and evaluation
//! on a synthetic world, repeated over seeds, swept over `K` or `L`, or
//! ablated over loss terms.

mod report;
mod seeds;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classifier::{
    synthesize_training_set, train_classifier, zero_shot_classifier, ClassifierConfig,
    LinearClassifier, LossKind,
};
use crate::encoder::{Arch, TextEncoder, Vocabulary};
use crate::error::{Error, Result};
use crate::style::{learn_with_tally, FeatureTally, LossSelection, StyleBank, TrainConfig};
use crate::world::{accuracy, generate_world, sample_image_features, ImageSample, WorldSpec};

pub use report::{
    metrics_csv, parse_metrics_csv, report_json, write_outputs, MetricsRow, Report, ReportKind,
    Summary, CSV_HEADER,
};
pub use seeds::{splitmix64, SubSeeds, GOLDEN_GAMMA};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EncoderConfig {
    Transformer { arch: Arch },
    Identity { dim: usize },
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig::Transformer {
            arch: Arch::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationFlags {
    pub use_style_loss: bool,
    pub use_content_loss: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        Self {
            use_style_loss: true,
            use_content_loss: true,
        }
    }
}

/// Artifacts written next to the metrics for the first seed of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputFlags {
    pub styles: bool,
    pub classifier: bool,
    pub samples: bool,
}

/// One experiment. Sub-config `seed` fields must be left out (or zero): all
/// seeds derive from `seed` through [`SubSeeds`]. Loss terms are selected by
/// `ablation`, not by `train.losses`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub class_names: Vec<String>,
    pub seed: u64,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub classifier: ClassifierConfig,
    pub world: WorldSpec,
    #[serde(default)]
    pub ablation: AblationFlags,
    #[serde(default)]
    pub outputs: OutputFlags,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            class_names: ["dog", "elephant", "giraffe", "guitar", "horse"]
                .map(String::from)
                .to_vec(),
            seed: 0,
            encoder: EncoderConfig::default(),
            train: TrainConfig {
                num_styles: 20,
                iterations: 100,
                ..TrainConfig::default()
            },
            classifier: ClassifierConfig::default(),
            world: WorldSpec::default(),
            ablation: AblationFlags::default(),
            outputs: OutputFlags::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| Error::config("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        Vocabulary::new(&self.class_names)
            .map_err(|e| Error::config("class_names", e.to_string()))?;
        match self.encoder {
            EncoderConfig::Transformer { arch } => arch
                .validate()
                .map_err(|e| Error::config("encoder.arch", e.to_string()))?,
            EncoderConfig::Identity { dim: 0 } => {
                return Err(Error::config("encoder.dim", "must be positive"))
            }
            EncoderConfig::Identity { .. } => {}
        }
        for (field, seed) in [
            ("train.seed", self.train.seed),
            ("classifier.seed", self.classifier.seed),
            ("world.seed", self.world.seed),
        ] {
            if seed != 0 {
                return Err(Error::config(
                    field,
                    "seeds derive from the top-level `seed`",
                ));
            }
        }
        if self.train.losses != LossSelection::default() {
            return Err(Error::config(
                "train.losses",
                "use the `ablation` flags instead",
            ));
        }
        let prefix = |p: &'static str| {
            move |e: Error| match e {
                Error::ConfigInvalid { field, reason } => {
                    Error::config(format!("{p}.{field}"), reason)
                }
                other => Error::config(p, other.to_string()),
            }
        };
        self.train.validate().map_err(prefix("train"))?;
        self.classifier.validate().map_err(prefix("classifier"))?;
        self.world.validate().map_err(prefix("world"))?;
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex(&Sha256::digest(bytes))
    }

    fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            losses: LossSelection {
                style: self.ablation.use_style_loss,
                content: self.ablation.use_content_loss,
            },
            ..self.train
        }
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Outcome of one seed of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub master_seed: u64,
    pub sub_seeds: SubSeeds,
    pub trained_accuracy: f64,
    pub zero_shot_accuracy: f64,
    pub style_losses: Vec<f64>,
    pub content_losses: Vec<f64>,
    pub peak_live_features: usize,
}

/// Everything produced by one seed.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub result: SeedResult,
    pub encoder: TextEncoder,
    pub bank: StyleBank,
    pub classifier: LinearClassifier,
    pub zero_shot: LinearClassifier,
    pub samples: Vec<ImageSample>,
}

pub fn build_encoder(config: &ExperimentConfig, seed: u64) -> Result<TextEncoder> {
    match config.encoder {
        EncoderConfig::Transformer { arch } => TextEncoder::seeded(seed, arch, &config.class_names),
        EncoderConfig::Identity { dim } => TextEncoder::identity(seed, dim, &config.class_names),
    }
}

/// Runs the full pipeline for one master seed.
pub fn run_seed(config: &ExperimentConfig, master_seed: u64) -> Result<SeedRun> {
    config.validate()?;
    let seeds = SubSeeds::derive(master_seed);
    let names = &config.class_names;
    let encoder = build_encoder(config, seeds.encoder)?;

    let tally = FeatureTally::new();
    let bank = learn_with_tally(&encoder, names, &config.train_config(seeds.styles), &tally)?;

    let set = synthesize_training_set(&encoder, &bank, names)?;
    let classifier = train_classifier(
        &set,
        &ClassifierConfig {
            seed: seeds.classifier,
            ..config.classifier
        },
    )?;
    let zero_shot = zero_shot_classifier(&encoder, names)?;

    let world_spec = WorldSpec {
        seed: seeds.world,
        ..config.world
    };
    let world = generate_world(&encoder, names, &world_spec)?;
    let samples = sample_image_features(&world, &world_spec, seeds.sampling)?;

    let result = SeedResult {
        master_seed,
        sub_seeds: seeds,
        trained_accuracy: accuracy(&classifier, &samples)?,
        zero_shot_accuracy: accuracy(&zero_shot, &samples)?,
        style_losses: bank.log.iter().map(|l| l.style_loss).collect(),
        content_losses: bank.log.iter().map(|l| l.content_loss).collect(),
        peak_live_features: tally.peak(),
    };
    Ok(SeedRun {
        result,
        encoder,
        bank,
        classifier,
        zero_shot,
        samples,
    })
}

/// Whether independent cells run on the rayon pool. Results are identical
/// either way.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Serial,
    #[default]
    Parallel,
}

fn run_cells(
    cells: &[ExperimentConfig],
    num_seeds: usize,
    exec: Execution,
) -> Result<Vec<Vec<SeedResult>>> {
    if num_seeds == 0 {
        return Err(Error::config("seeds", "must be positive"));
    }
    for c in cells {
        c.validate()?;
    }
    let jobs: Vec<(usize, u64)> = cells
        .iter()
        .enumerate()
        .flat_map(|(i, c)| (0..num_seeds as u64).map(move |k| (i, c.seed.wrapping_add(k))))
        .collect();
    let run = |&(i, seed): &(usize, u64)| run_seed(&cells[i], seed).map(|r| r.result);
    let flat: Vec<SeedResult> = match exec {
        Execution::Serial => jobs.iter().map(run).collect::<Result<_>>()?,
        Execution::Parallel => jobs.par_iter().map(run).collect::<Result<_>>()?,
    };
    let mut out = Vec::with_capacity(cells.len());
    let mut it = flat.into_iter();
    for _ in cells {
        out.push(it.by_ref().take(num_seeds).collect());
    }
    Ok(out)
}

/// Seeds `seed, seed + 1, ..., seed + num_seeds - 1`.
pub fn run_experiment(
    config: &ExperimentConfig,
    num_seeds: usize,
    exec: Execution,
) -> Result<Report> {
    let mut cells = run_cells(std::slice::from_ref(config), num_seeds, exec)?;
    let seeds = cells.pop().expect("one cell");
    Ok(Report::new(
        ReportKind::Run,
        config,
        vec![MetricsRow::new("run", "", "", config, &seeds)],
        vec![seeds],
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepParam {
    K,
    L,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::K => "K",
            SweepParam::L => "L",
        }
    }

    pub fn apply(self, config: &ExperimentConfig, value: usize) -> ExperimentConfig {
        let mut c = config.clone();
        match self {
            SweepParam::K => c.train.num_styles = value,
            SweepParam::L => c.train.iterations = value,
        }
        c
    }
}

impl std::str::FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "K" | "k" => Ok(SweepParam::K),
            "L" | "l" => Ok(SweepParam::L),
            _ => Err(Error::config(
                "param",
                format!("expected K or L, got `{s}`"),
            )),
        }
    }
}

/// One row per value; every cell shares the base config's seeds.
pub fn run_sweep(
    base: &ExperimentConfig,
    param: SweepParam,
    values: &[usize],
    num_seeds: usize,
    exec: Execution,
) -> Result<Report> {
    if values.is_empty() {
        return Err(Error::config("values", "must not be empty"));
    }
    if values[0] == 0 || values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::config(
            "values",
            "must be positive and strictly ascending",
        ));
    }
    let cells: Vec<ExperimentConfig> = values.iter().map(|&v| param.apply(base, v)).collect();
    let seeds = run_cells(&cells, num_seeds, exec)?;
    let rows = cells
        .iter()
        .zip(values)
        .zip(&seeds)
        .map(|((c, v), s)| MetricsRow::new("sweep", param.name(), &v.to_string(), c, s))
        .collect();
    Ok(Report::new(ReportKind::Sweep, base, rows, seeds))
}

/// Four rows over the loss-term flags followed by two rows over the
/// classification loss (softmax, then ArcFace) with both terms enabled.
pub fn run_ablation_grid(
    base: &ExperimentConfig,
    num_seeds: usize,
    exec: Execution,
) -> Result<Report> {
    let mut cells = Vec::with_capacity(6);
    let mut labels = Vec::with_capacity(6);
    for (style, content) in [(false, false), (true, false), (false, true), (true, true)] {
        let mut c = base.clone();
        c.ablation = AblationFlags {
            use_style_loss: style,
            use_content_loss: content,
        };
        cells.push(c);
        labels.push("loss_terms");
    }
    for kind in [LossKind::Softmax, LossKind::ArcFace] {
        let mut c = base.clone();
        c.ablation = AblationFlags::default();
        c.classifier.loss_kind = kind;
        cells.push(c);
        labels.push("classification_loss");
    }
    let seeds = run_cells(&cells, num_seeds, exec)?;
    let rows = cells
        .iter()
        .zip(&labels)
        .zip(&seeds)
        .map(|((c, l), s)| MetricsRow::new(l, "", "", c, s))
        .collect();
    Ok(Report::new(ReportKind::Ablation, base, rows, seeds))
}

//! Experiment configuration files (TOML).
//!
//! Keys follow the library's field names: `rounds`, `dimension_limit`, `r`,
//! `[budget]`, `[prune]`, `[selection]`, `mode`, `seed` and so on. Relative
//! paths are resolved against the config file's directory.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use prefixhh::accountant::PrivacyBudget;
use prefixhh::data::{generate_zipf, load_word_list, RawDataset, ZipfSpec};
use prefixhh::device::{DeviceDataset, SelectionKind, SelectionPolicy};
use prefixhh::encoding::Codebook;
use prefixhh::engine::{AggregationMode, DataMode, RunConfig};
use prefixhh::server::{PruneConfig, SegmentationPolicy};
use prefixhh::BitString;
use serde::Deserialize;

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    /// TSV dataset. Exactly one of `dataset` and `[synthetic]` is required.
    pub dataset: Option<PathBuf>,
    pub synthetic: Option<SyntheticSection>,
    /// Codebook text file; without one, `codebook_mode` decides.
    pub codebook: Option<PathBuf>,
    #[serde(default)]
    pub codebook_mode: CodebookChoice,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Plain word-per-line file seeding the deny list.
    pub deny_list: Option<PathBuf>,
    pub rounds: usize,
    pub dimension_limit: u64,
    #[serde(default = "default_r")]
    pub r: usize,
    pub budget: BudgetSection,
    /// Skip the accountant and use this local epsilon directly.
    pub epsilon_local: Option<f64>,
    #[serde(default)]
    pub prune: PruneSection,
    #[serde(default)]
    pub selection: SelectionSection,
    #[serde(default)]
    pub mode: ModeChoice,
    /// Fixed segment length; adaptive segmentation when absent.
    pub segment_length: Option<usize>,
    #[serde(default)]
    pub aggregation: AggregationChoice,
    /// Run twice, the second run deny-listing the first run's words.
    #[serde(default)]
    pub two_rounds: bool,
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default)]
    pub baseline: BaselineSection,
    #[serde(skip)]
    base_dir: PathBuf,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn default_r() -> usize {
    60
}

fn default_window() -> usize {
    prefixhh::metrics::DEFAULT_WINDOW
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSection {
    pub n_devices: usize,
    pub vocab_size: usize,
    #[serde(default = "default_exponent")]
    pub exponent: f64,
    #[serde(default = "default_mean")]
    pub words_per_device_mean: f64,
    #[serde(default = "default_min")]
    pub words_per_device_min: usize,
    /// Defaults to the experiment seed.
    pub seed: Option<u64>,
}

fn default_exponent() -> f64 {
    1.1
}

fn default_mean() -> f64 {
    8.0
}

fn default_min() -> usize {
    1
}

#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum CodebookChoice {
    #[default]
    Huffman,
    /// Five bits per lowercase letter plus END and UNKNOWN.
    FixedWidth,
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetSection {
    pub epsilon_agg: f64,
    pub delta: f64,
    #[serde(default = "one")]
    pub sampling_rate: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PruneSection {
    pub tau0: f64,
    pub f_ratio: f64,
    pub eta: f64,
    pub e_floor: f64,
}

impl Default for PruneSection {
    fn default() -> Self {
        let d = PruneConfig::default();
        Self {
            tau0: d.tau0,
            f_ratio: d.f_ratio,
            eta: d.eta,
            e_floor: d.e_floor,
        }
    }
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectionSection {
    pub kind: SelectionChoice,
    pub condition_on_prefix_list: bool,
}

impl Default for SelectionSection {
    fn default() -> Self {
        Self {
            kind: SelectionChoice::Unweighted,
            condition_on_prefix_list: true,
        }
    }
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum SelectionChoice {
    Weighted,
    Unweighted,
}

#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum ModeChoice {
    #[default]
    MultiDatapoint,
    SingleDatapoint,
}

#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum AggregationChoice {
    #[default]
    Auto,
    Exact,
    Sampled,
}

/// Defaults for the `baseline` subcommand; flags override them.
#[derive(Clone, Copy, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineSection {
    pub theta: Option<u64>,
    pub sampling_rate: Option<f64>,
    pub scale: Option<f64>,
}

/// A config problem the user must fix (exit code 2).
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_err(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

/// Everything a run needs once files are loaded.
pub struct Prepared {
    pub devices: Vec<DeviceDataset>,
    pub codebook: Codebook,
    pub run: RunConfig,
    pub dropped_entries: u64,
    pub dropped_deny_words: usize,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: Self =
            toml::from_str(&text).map_err(|e| config_err(format!("invalid config {}: {e}", path.display())))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }

    fn validate(&self) -> anyhow::Result<()> {
        match (&self.dataset, &self.synthetic) {
            (Some(_), Some(_)) => return Err(config_err("set either `dataset` or `[synthetic]`, not both")),
            (None, None) => return Err(config_err("one of `dataset` or `[synthetic]` is required")),
            _ => {}
        }
        for p in [&self.dataset, &self.codebook, &self.deny_list].into_iter().flatten() {
            let full = self.resolve(p);
            if !full.is_file() {
                return Err(config_err(format!("file not found: {}", full.display())));
            }
        }
        if self.rounds == 0 {
            return Err(config_err("rounds must be at least 1"));
        }
        if self.dimension_limit < 2 {
            return Err(config_err("dimension_limit must be at least 2"));
        }
        if self.window == 0 {
            return Err(config_err("window must be positive"));
        }
        Ok(())
    }

    fn raw_dataset(&self) -> anyhow::Result<RawDataset> {
        if let Some(p) = &self.dataset {
            return Ok(RawDataset::load_tsv(self.resolve(p))?);
        }
        let s = self.synthetic.as_ref().expect("validated");
        Ok(generate_zipf(&ZipfSpec {
            n_devices: s.n_devices,
            vocab_size: s.vocab_size,
            exponent: s.exponent,
            words_per_device_mean: s.words_per_device_mean,
            words_per_device_min: s.words_per_device_min,
            seed: s.seed.unwrap_or(self.seed),
        })
        .map_err(|e| config_err(e.to_string()))?)
    }

    /// Loads data, codebook and deny list and builds the run configuration.
    pub fn prepare(&self) -> anyhow::Result<Prepared> {
        let raw = self.raw_dataset()?;
        let codebook = match (&self.codebook, self.codebook_mode) {
            (Some(p), _) => Codebook::load(self.resolve(p))?,
            (None, CodebookChoice::FixedWidth) => Codebook::lowercase_5bit(),
            (None, CodebookChoice::Huffman) => Codebook::build_huffman(&raw.char_frequencies())?,
        };
        let (devices, stats) = raw.encode(&codebook, self.r);
        let mut deny = BTreeSet::new();
        let mut dropped_deny_words = 0;
        if let Some(p) = &self.deny_list {
            for w in load_word_list(self.resolve(p))? {
                match codebook.encode(&w, self.r) {
                    Ok(bits) => {
                        deny.insert(bits);
                    }
                    Err(_) => dropped_deny_words += 1,
                }
            }
        }
        let run = self.run_config(devices.len() as u64, deny)?;
        Ok(Prepared {
            devices,
            codebook,
            run,
            dropped_entries: stats.dropped_entries,
            dropped_deny_words,
        })
    }

    fn run_config(&self, n_devices: u64, deny: BTreeSet<BitString>) -> anyhow::Result<RunConfig> {
        let b = self.budget;
        let budget = PrivacyBudget::new(b.epsilon_agg, b.delta, self.rounds, n_devices)
            .and_then(|x| x.with_sampling_rate(b.sampling_rate))
            .map_err(|e| config_err(format!("budget: {e}")))?;
        let mut run = RunConfig::new(self.rounds, self.dimension_limit, self.r, budget, self.seed);
        run.epsilon_local = self.epsilon_local;
        let p = self.prune;
        run.prune = PruneConfig {
            tau0: p.tau0,
            f_ratio: p.f_ratio,
            eta: p.eta,
            e_floor: p.e_floor,
        }
        .validated()
        .map_err(|e| config_err(e.to_string()))?;
        run.selection = SelectionPolicy {
            kind: match self.selection.kind {
                SelectionChoice::Weighted => SelectionKind::Weighted,
                SelectionChoice::Unweighted => SelectionKind::Unweighted,
            },
            condition_on_prefix_list: self.selection.condition_on_prefix_list,
        };
        run.mode = match self.mode {
            ModeChoice::MultiDatapoint => DataMode::MultiDatapoint,
            ModeChoice::SingleDatapoint => DataMode::SingleDatapoint,
        };
        run.segmentation = match self.segment_length {
            None => SegmentationPolicy::Adaptive,
            Some(0) => return Err(config_err("segment_length must be positive")),
            Some(s) => SegmentationPolicy::Uniform(s),
        };
        run.aggregation = match self.aggregation {
            AggregationChoice::Auto => AggregationMode::Auto,
            AggregationChoice::Exact => AggregationMode::Exact,
            AggregationChoice::Sampled => AggregationMode::Sampled,
        };
        run.deny_list = deny;
        Ok(run)
    }
}

/// Parses `text` as a config rooted at `base_dir`.
#[cfg(test)]
pub fn from_str(text: &str, base_dir: &Path) -> anyhow::Result<ExperimentConfig> {
    let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| config_err(format!("invalid config: {e}")))?;
    cfg.base_dir = base_dir.to_path_buf();
    cfg.validate()?;
    Ok(cfg)
}

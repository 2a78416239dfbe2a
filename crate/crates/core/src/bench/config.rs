use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, PeVariant, TrainConfig};
use crate::sampling::{SamplerMethod, DEFAULT_LENGTH};
use crate::synth::{ClimateModel, CloudModel, PhenologyParams};

/// How interval samplers treat a truncated test series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TruncationGrid {
    /// Intervals span the truncated range.
    #[default]
    Rescale,
    /// Intervals span the full-season range; late intervals stay empty.
    Keep,
}

impl TruncationGrid {
    pub fn as_str(self) -> &'static str {
        match self {
            TruncationGrid::Rescale => "rescale",
            TruncationGrid::Keep => "keep",
        }
    }
}

impl fmt::Display for TruncationGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TruncationGrid {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rescale" => Ok(TruncationGrid::Rescale),
            "keep" => Ok(TruncationGrid::Keep),
            other => Err(Error::Config(format!("unknown truncation grid `{other}`"))),
        }
    }
}

/// One compared configuration: sampler, encoding and inference mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    pub name: String,
    pub sampler: SamplerMethod,
    pub pe: PeVariant,
    #[serde(default)]
    pub mc_dropout: bool,
}

impl MethodSpec {
    pub fn new(name: &str, sampler: SamplerMethod, pe: PeVariant, mc_dropout: bool) -> Self {
        Self {
            name: name.into(),
            sampler,
            pe,
            mc_dropout,
        }
    }

    /// Methods differing only in inference share one trained model.
    pub fn training_key(&self) -> (SamplerMethod, PeVariant) {
        (self.sampler, self.pe)
    }
}

pub fn default_methods() -> Vec<MethodSpec> {
    vec![
        MethodSpec::new(
            "baseline",
            SamplerMethod::Uniform,
            PeVariant::Calendar,
            false,
        ),
        MethodSpec::new(
            "mc_dropout",
            SamplerMethod::Uniform,
            PeVariant::Calendar,
            true,
        ),
        MethodSpec::new(
            "thermal_pe",
            SamplerMethod::Uniform,
            PeVariant::Thermal,
            false,
        ),
        MethodSpec::new(
            "deformable",
            SamplerMethod::Deformable,
            PeVariant::Calendar,
            false,
        ),
        MethodSpec::new("t3s", SamplerMethod::T3s, PeVariant::Linear, false),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub height: usize,
    pub width: usize,
    pub field_size: usize,
    /// Number of fields per class; must fill the field grid.
    pub class_counts: Vec<usize>,
    pub obs_every_n_days: u32,
    pub t_base: f64,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            field_size: 8,
            class_counts: vec![22, 14, 11, 8, 6, 3],
            obs_every_n_days: 3,
            t_base: 0.0,
            seed: 2024,
        }
    }
}

/// Model shape without the data-dependent channel and class counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelShape {
    pub d_model: usize,
    pub n_head: usize,
    pub mlp_hidden: usize,
    pub dropout_rate: f64,
    pub seq_len: usize,
}

impl Default for ModelShape {
    fn default() -> Self {
        let m = ModelConfig::new(1, 1);
        Self {
            d_model: m.d_model,
            n_head: m.n_head,
            mlp_hidden: m.mlp_hidden,
            dropout_rate: m.dropout_rate,
            seq_len: DEFAULT_LENGTH,
        }
    }
}

impl ModelShape {
    pub fn build(&self, in_channels: usize, n_classes: usize, pe: PeVariant) -> ModelConfig {
        ModelConfig {
            in_channels,
            d_model: self.d_model,
            n_head: self.n_head,
            mlp_hidden: self.mlp_hidden,
            n_classes,
            pe_variant: pe,
            dropout_rate: self.dropout_rate,
            seq_len: self.seq_len,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub mc_members: usize,
    pub mc_rate: f64,
    pub ece_bins: usize,
    pub batch_size: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            mc_members: 5,
            mc_rate: 0.2,
            ece_bins: crate::metrics::DEFAULT_ECE_BINS,
            batch_size: 512,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    pub label_fraction: f64,
    /// Early-season cutoffs as day of year.
    pub cutoffs: Vec<u32>,
    pub truncation_grid: TruncationGrid,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            label_fraction: 0.10,
            cutoffs: vec![181, 273],
            truncation_grid: TruncationGrid::Rescale,
        }
    }
}

/// Everything a benchmark run depends on. Serialized as TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    /// Seed for model initialization, shuffling, dropout and label subsets.
    pub seed: u64,
    pub years: Vec<i32>,
    pub dataset: DatasetConfig,
    pub climate: ClimateModel,
    pub phenology: PhenologyParams,
    pub clouds: CloudModel,
    pub model: ModelShape,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub protocol: ProtocolConfig,
    pub methods: Vec<MethodSpec>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            years: vec![2019, 2020, 2021],
            dataset: DatasetConfig::default(),
            climate: ClimateModel::default(),
            phenology: PhenologyParams::default(),
            clouds: CloudModel::default(),
            model: ModelShape::default(),
            train: TrainConfig {
                epochs: 20,
                batch_size: 64,
                samples_per_epoch: Some(1024),
                ..TrainConfig::default()
            },
            eval: EvalConfig::default(),
            protocol: ProtocolConfig::default(),
            methods: default_methods(),
        }
    }
}

impl BenchConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: BenchConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("bench config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(format!("bench config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.years.is_empty() {
            return Err(Error::Config("bench needs at least one year".into()));
        }
        let mut sorted = self.years.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.years.len() {
            return Err(Error::Config("bench years must be distinct".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("bench needs at least one method".into()));
        }
        let mut names: Vec<&str> = self.methods.iter().map(|m| m.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != self.methods.len() {
            return Err(Error::Config("method names must be distinct".into()));
        }
        if self
            .methods
            .iter()
            .any(|m| m.name.is_empty() || m.name.contains([',', '"', '\n']))
        {
            return Err(Error::Config(
                "method names must be non-empty and free of commas and quotes".into(),
            ));
        }
        if !(self.protocol.label_fraction > 0.0 && self.protocol.label_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "label fraction {} outside (0, 1]",
                self.protocol.label_fraction
            )));
        }
        if self.eval.mc_members == 0 || !(0.0..1.0).contains(&self.eval.mc_rate) {
            return Err(Error::Config(
                "MC dropout needs ≥ 1 member and a rate in [0, 1)".into(),
            ));
        }
        if self.eval.ece_bins == 0 || self.eval.batch_size == 0 {
            return Err(Error::Config(
                "ece_bins and eval batch_size must be ≥ 1".into(),
            ));
        }
        self.climate.validate()?;
        self.phenology.validate()?;
        self.clouds.validate()?;
        self.train.validate()?;
        self.model
            .build(
                self.phenology.n_channels(),
                self.phenology.classes.len(),
                PeVariant::Calendar,
            )
            .validate()?;
        if self.dataset.class_counts.len() != self.phenology.classes.len() {
            return Err(Error::Config(format!(
                "{} class counts for {} phenology classes",
                self.dataset.class_counts.len(),
                self.phenology.classes.len()
            )));
        }
        Ok(())
    }
}

/// Human-readable name of an early-season cutoff.
pub fn cutoff_label(day: u32) -> String {
    match day {
        181 => "end of June".into(),
        273 => "end of September".into(),
        d => format!("day {d}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = BenchConfig::default();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(BenchConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_toml_fills_defaults() {
        let cfg = BenchConfig::from_toml_str("seed = 3\nyears = [2020, 2021]\n").unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.methods.len(), 5);
        assert_eq!(cfg.dataset, DatasetConfig::default());
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(BenchConfig::from_toml_str("bogus = 1").is_err());
        assert!(BenchConfig::from_toml_str("years = [2020, 2020]").is_err());
        assert!(BenchConfig::from_toml_str(
            "[protocol]\nlabel_fraction = 0.0\ncutoffs = []\ntruncation_grid = \"keep\""
        )
        .is_err());
    }

    #[test]
    fn cutoff_labels() {
        assert_eq!(cutoff_label(181), "end of June");
        assert_eq!(cutoff_label(273), "end of September");
        assert_eq!(cutoff_label(200), "day 200");
    }
}

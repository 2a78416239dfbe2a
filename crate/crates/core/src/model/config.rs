use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How observation positions are injected into the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PeVariant {
    #[serde(rename = "noPE")]
    None,
    #[serde(rename = "linearPE")]
    Linear,
    #[serde(rename = "calendarPE")]
    Calendar,
    #[serde(rename = "thermalPE")]
    Thermal,
}

impl PeVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            PeVariant::None => "noPE",
            PeVariant::Linear => "linearPE",
            PeVariant::Calendar => "calendarPE",
            PeVariant::Thermal => "thermalPE",
        }
    }
}

impl fmt::Display for PeVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PeVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "noPE" | "none" => Ok(PeVariant::None),
            "linearPE" | "linear" => Ok(PeVariant::Linear),
            "calendarPE" | "calendar" => Ok(PeVariant::Calendar),
            "thermalPE" | "thermal" => Ok(PeVariant::Thermal),
            other => Err(Error::Config(format!(
                "unknown positional encoding `{other}`"
            ))),
        }
    }
}

pub const THERMAL_PE_DIVISOR: f64 = 10.0;
pub const PE_PERIOD: f64 = 10_000.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub d_model: usize,
    pub n_head: usize,
    pub mlp_hidden: usize,
    pub n_classes: usize,
    pub pe_variant: PeVariant,
    pub dropout_rate: f64,
    pub seq_len: usize,
}

impl ModelConfig {
    pub fn new(in_channels: usize, n_classes: usize) -> Self {
        Self {
            in_channels,
            d_model: 128,
            n_head: 8,
            mlp_hidden: 64,
            n_classes,
            pe_variant: PeVariant::Calendar,
            dropout_rate: 0.2,
            seq_len: crate::sampling::DEFAULT_LENGTH,
        }
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.n_head
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.into()));
        if self.in_channels == 0 || self.n_classes == 0 || self.mlp_hidden == 0 || self.seq_len == 0
        {
            return fail("channels, classes, hidden width and sequence length must be ≥ 1");
        }
        if self.n_head == 0 || self.d_model == 0 || !self.d_model.is_multiple_of(self.n_head) {
            return fail("d_model must be a positive multiple of n_head");
        }
        if !self.d_model.is_multiple_of(2) {
            return fail("d_model must be even for sinusoidal encodings");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return fail("dropout_rate must lie in [0, 1)");
        }
        Ok(())
    }

    /// Multiply-accumulate operations of one forward pass over one sequence.
    ///
    /// Counts the embedding, layer norms, key projection, attention scores,
    /// attention pooling, value and output projections and the MLP head.
    pub fn forward_macs(&self) -> u64 {
        let (c, d, h, l) = (self.in_channels, self.d_model, self.n_head, self.seq_len);
        let (hid, k) = (self.mlp_hidden, self.n_classes);
        let per_step = c * d + 2 * d + d * d + d + h * d;
        let per_seq = d * d + d * d + 2 * d + d * hid + hid * k;
        (l * per_step + per_seq) as u64
    }
}

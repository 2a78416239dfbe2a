//! Classifier weights stored in one flat buffer with named, shaped views.

use ndarray::{ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use crate::error::{Error, Result};

/// Parameter groups in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamId {
    InputWeight,
    InputBias,
    InNormGain,
    InNormBias,
    KeyWeight,
    KeyBias,
    Query,
    ValueWeight,
    ValueBias,
    OutWeight,
    OutBias,
    OutNormGain,
    OutNormBias,
    HiddenWeight,
    HiddenBias,
    ClassWeight,
    ClassBias,
}

impl ParamId {
    pub const ALL: [ParamId; 17] = [
        ParamId::InputWeight,
        ParamId::InputBias,
        ParamId::InNormGain,
        ParamId::InNormBias,
        ParamId::KeyWeight,
        ParamId::KeyBias,
        ParamId::Query,
        ParamId::ValueWeight,
        ParamId::ValueBias,
        ParamId::OutWeight,
        ParamId::OutBias,
        ParamId::OutNormGain,
        ParamId::OutNormBias,
        ParamId::HiddenWeight,
        ParamId::HiddenBias,
        ParamId::ClassWeight,
        ParamId::ClassBias,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamId::InputWeight => "input_weight",
            ParamId::InputBias => "input_bias",
            ParamId::InNormGain => "in_norm_gain",
            ParamId::InNormBias => "in_norm_bias",
            ParamId::KeyWeight => "key_weight",
            ParamId::KeyBias => "key_bias",
            ParamId::Query => "query",
            ParamId::ValueWeight => "value_weight",
            ParamId::ValueBias => "value_bias",
            ParamId::OutWeight => "out_weight",
            ParamId::OutBias => "out_bias",
            ParamId::OutNormGain => "out_norm_gain",
            ParamId::OutNormBias => "out_norm_bias",
            ParamId::HiddenWeight => "hidden_weight",
            ParamId::HiddenBias => "hidden_bias",
            ParamId::ClassWeight => "class_weight",
            ParamId::ClassBias => "class_bias",
        }
    }

    /// `(rows, cols)`; vectors have one row.
    pub fn shape(self, cfg: &ModelConfig) -> (usize, usize) {
        let (c, d, h, dk) = (cfg.in_channels, cfg.d_model, cfg.n_head, cfg.d_head());
        let (hid, k) = (cfg.mlp_hidden, cfg.n_classes);
        match self {
            ParamId::InputWeight => (d, c),
            ParamId::KeyWeight | ParamId::ValueWeight | ParamId::OutWeight => (d, d),
            ParamId::Query => (h, dk),
            ParamId::HiddenWeight => (hid, d),
            ParamId::ClassWeight => (k, hid),
            ParamId::HiddenBias => (1, hid),
            ParamId::ClassBias => (1, k),
            _ => (1, d),
        }
    }
}

/// Offsets of every group inside the flat buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    offsets: Vec<(usize, usize, usize)>,
    total: usize,
}

impl ParamLayout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let mut offsets = Vec::with_capacity(ParamId::ALL.len());
        let mut total = 0;
        for id in ParamId::ALL {
            let (r, c) = id.shape(cfg);
            offsets.push((total, r, c));
            total += r * c;
        }
        Self { offsets, total }
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn range(&self, id: ParamId) -> std::ops::Range<usize> {
        let (off, r, c) = self.offsets[id as usize];
        off..off + r * c
    }

    pub fn shape(&self, id: ParamId) -> (usize, usize) {
        let (_, r, c) = self.offsets[id as usize];
        (r, c)
    }
}

/// Flat parameter (or gradient) vector shaped by a [`ParamLayout`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBuffer {
    pub layout: ParamLayout,
    pub values: Vec<f64>,
}

impl ParamBuffer {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let layout = ParamLayout::new(cfg);
        let values = vec![0.0; layout.len()];
        Self { layout, values }
    }

    pub fn mat(&self, id: ParamId) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape(self.layout.shape(id), &self.values[self.layout.range(id)])
            .expect("layout shape")
    }

    pub fn mat_mut(&mut self, id: ParamId) -> ArrayViewMut2<'_, f64> {
        let shape = self.layout.shape(id);
        let range = self.layout.range(id);
        ArrayViewMut2::from_shape(shape, &mut self.values[range]).expect("layout shape")
    }

    pub fn vec(&self, id: ParamId) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.values[self.layout.range(id)])
    }

    pub fn vec_mut(&mut self, id: ParamId) -> ArrayViewMut1<'_, f64> {
        let range = self.layout.range(id);
        ArrayViewMut1::from(&mut self.values[range])
    }

    pub fn slice(&self, id: ParamId) -> &[f64] {
        &self.values[self.layout.range(id)]
    }

    pub fn slice_mut(&mut self, id: ParamId) -> &mut [f64] {
        let range = self.layout.range(id);
        &mut self.values[range]
    }
}

/// Per-channel standardization statistics, fit on training reflectance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams {
    pub config: ModelConfig,
    pub weights: ParamBuffer,
    pub stats: ChannelStats,
}

impl ClassifierParams {
    /// Uniform `±1/sqrt(fan_in)` weights, zero biases, unit norm gains and
    /// normal master queries with sd `sqrt(2 / d_head)`.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = ParamBuffer::zeros(config);
        for id in ParamId::ALL {
            let (rows, cols) = weights.layout.shape(id);
            let data = weights.slice_mut(id);
            match id {
                ParamId::InputWeight
                | ParamId::KeyWeight
                | ParamId::ValueWeight
                | ParamId::OutWeight
                | ParamId::HiddenWeight
                | ParamId::ClassWeight => {
                    let bound = 1.0 / (cols as f64).sqrt();
                    data.iter_mut()
                        .for_each(|w| *w = rng.gen_range(-bound..bound));
                }
                ParamId::Query => {
                    let normal = Normal::new(0.0, (2.0 / cols as f64).sqrt()).expect("positive sd");
                    data.iter_mut().for_each(|w| *w = normal.sample(&mut rng));
                }
                ParamId::InNormGain | ParamId::OutNormGain => data.fill(1.0),
                _ => debug_assert_eq!(rows, 1),
            }
        }
        Ok(Self {
            config: config.clone(),
            weights,
            stats: ChannelStats::identity(config.in_channels),
        })
    }

    pub fn n_params(&self) -> usize {
        self.weights.values.len()
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.weights.values.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidInput(
                "parameters contain non-finite values".into(),
            ))
        }
    }
}

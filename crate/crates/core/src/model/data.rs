//! Pixel sequence sets: sampled cubes flattened into per-pixel training rows.

use ndarray::{Array2, Array3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::PeVariant;
use super::network::Batch;
use super::params::ChannelStats;
use crate::cubeio::{to_reflectance, DataCube, IGNORE_LABEL};
use crate::error::{Error, Result};
use crate::sampling::{
    apply_selection, GatheredCube, SampleSelection, SamplerInput, SamplerMethod,
};

/// A cube with the cumulative GDD of each of its observations.
#[derive(Debug, Clone, Copy)]
pub struct SiteYear<'a> {
    pub cube: &'a DataCube,
    pub obs_gdd: &'a [f64],
}

impl<'a> SiteYear<'a> {
    pub fn select(&self, method: SamplerMethod, length: usize) -> Result<SampleSelection> {
        let input = SamplerInput::from_cube(self.cube, self.obs_gdd.to_vec())?;
        method.select(&input, length)
    }

    pub fn gather(&self, method: SamplerMethod, length: usize) -> Result<GatheredCube> {
        apply_selection(self.cube, &self.select(method, length)?, Some(self.obs_gdd))
    }
}

/// Raw per-slot positions for a variant: 1-based slot index, day of year or cumulative GDD.
pub fn raw_positions(gathered: &GatheredCube, variant: PeVariant) -> Vec<f64> {
    match variant {
        PeVariant::None => vec![0.0; gathered.len()],
        PeVariant::Linear => (1..=gathered.len()).map(|i| i as f64).collect(),
        PeVariant::Calendar => gathered.days.iter().map(|&d| d as f64).collect(),
        PeVariant::Thermal => gathered.gdd.clone(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PixelRef {
    pub site: u32,
    pub y: u16,
    pub x: u16,
}

/// Sampled cubes plus the labeled pixels drawn from them.
#[derive(Debug, Clone)]
pub struct SequenceSet {
    pub gathered: Vec<GatheredCube>,
    pub positions: Vec<Vec<f64>>,
    pub labels: Vec<Array2<u8>>,
    pub pixels: Vec<PixelRef>,
}

impl SequenceSet {
    /// Every labeled (non-ignore) pixel of every gathered cube.
    pub fn new(sites: Vec<(GatheredCube, Array2<u8>)>, variant: PeVariant) -> Result<Self> {
        let mut set = SequenceSet {
            gathered: Vec::with_capacity(sites.len()),
            positions: Vec::with_capacity(sites.len()),
            labels: Vec::with_capacity(sites.len()),
            pixels: Vec::new(),
        };
        for (s, (g, labels)) in sites.into_iter().enumerate() {
            let (_, _, h, w) = g.reflectance.dim();
            if labels.dim() != (h, w) {
                return Err(Error::InvalidInput(
                    "label map does not match gathered cube".into(),
                ));
            }
            if !g.valid.iter().any(|&v| v) {
                return Err(Error::InvalidInput(
                    "gathered cube has no valid slot".into(),
                ));
            }
            for ((y, x), &lab) in labels.indexed_iter() {
                if lab != IGNORE_LABEL {
                    set.pixels.push(PixelRef {
                        site: s as u32,
                        y: y as u16,
                        x: x as u16,
                    });
                }
            }
            set.positions.push(raw_positions(&g, variant));
            set.gathered.push(g);
            set.labels.push(labels);
        }
        Ok(set)
    }

    /// Samples, gathers and flattens a list of site-years.
    pub fn from_sites(
        sites: &[SiteYear<'_>],
        method: SamplerMethod,
        length: usize,
        variant: PeVariant,
    ) -> Result<Self> {
        let gathered = sites
            .iter()
            .map(|s| Ok((s.gather(method, length)?, s.cube.labels.clone())))
            .collect::<Result<Vec<_>>>()?;
        Self::new(gathered, variant)
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn label(&self, p: PixelRef) -> usize {
        self.labels[p.site as usize][[p.y as usize, p.x as usize]] as usize
    }

    pub fn all_labels(&self) -> Vec<usize> {
        self.pixels.iter().map(|&p| self.label(p)).collect()
    }

    /// Keeps the given pixels only, in the given order.
    pub fn with_pixels(&self, pixels: Vec<PixelRef>) -> Self {
        Self {
            pixels,
            ..self.clone()
        }
    }

    /// Per-channel mean and standard deviation of reflectance over valid slots.
    pub fn channel_stats(&self) -> Result<ChannelStats> {
        let c = self
            .gathered
            .first()
            .map(|g| g.reflectance.dim().1)
            .ok_or_else(|| Error::InvalidInput("empty sequence set".into()))?;
        let mut sum = vec![0.0; c];
        let mut sq = vec![0.0; c];
        let mut n = 0usize;
        for p in &self.pixels {
            let g = &self.gathered[p.site as usize];
            for (t, _) in g.valid.iter().enumerate().filter(|(_, &v)| v) {
                for ch in 0..c {
                    let v = to_reflectance(g.reflectance[[t, ch, p.y as usize, p.x as usize]]);
                    sum[ch] += v;
                    sq[ch] += v * v;
                }
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::InvalidInput(
                "no valid observations to standardize".into(),
            ));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| (s / n as f64 - m * m).max(0.0).sqrt().max(1e-6))
            .collect();
        Ok(ChannelStats { mean, std })
    }

    /// Standardized batch for the given pixels.
    pub fn batch(&self, pixels: &[PixelRef], stats: &ChannelStats) -> Batch {
        let l = self.gathered[0].len();
        let c = stats.mean.len();
        let b = pixels.len();
        let mut sequences = Array3::<f64>::zeros((b, l, c));
        let mut positions = Array2::<f64>::zeros((b, l));
        let mut valid = Array2::<bool>::from_elem((b, l), false);
        let mut labels = Vec::with_capacity(b);
        for (i, &p) in pixels.iter().enumerate() {
            let site = p.site as usize;
            let g = &self.gathered[site];
            let (y, x) = (p.y as usize, p.x as usize);
            for t in 0..l {
                positions[[i, t]] = self.positions[site][t];
                if g.valid[t] {
                    valid[[i, t]] = true;
                    for ch in 0..c {
                        let r = to_reflectance(g.reflectance[[t, ch, y, x]]);
                        sequences[[i, t, ch]] = (r - stats.mean[ch]) / stats.std[ch];
                    }
                }
            }
            labels.push(self.label(p));
        }
        Batch {
            sequences,
            positions,
            valid,
            labels,
        }
    }
}

/// Uniform random subset holding `fraction` of the pixels (at least one), sorted.
pub fn subsample_pixels(pixels: &[PixelRef], fraction: f64, seed: u64) -> Result<Vec<PixelRef>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!(
            "label fraction {fraction} outside (0, 1]"
        )));
    }
    if fraction == 1.0 {
        return Ok(pixels.to_vec());
    }
    let keep = ((pixels.len() as f64 * fraction).round() as usize).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<PixelRef> = pixels.choose_multiple(&mut rng, keep).copied().collect();
    chosen.sort_unstable();
    Ok(chosen)
}

//! Temporal samplers: uniform calendar, deformable calendar, and thermal-time (T3S).
//!
//! The two interval samplers share one routine. The value range `[lo, hi]`
//! (calendar day for deformable, cumulative GDD for T3S) is split into `L`
//! equal intervals with boundaries `lo + k * delta`; interval `k` holds
//! observations with `b_k <= v < b_{k+1}`, and the last interval is closed at
//! the top so the final observation stays selectable. Each non-empty interval
//! contributes its clearest observation (earliest index on ties). Empty
//! intervals contribute nothing and the selection is padded at the tail.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array3, Array4, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::cubeio::DataCube;
use crate::error::{Error, Result};

pub const DEFAULT_LENGTH: usize = 24;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSelection {
    pub indices: Vec<usize>,
    pub valid: Vec<bool>,
    pub target_length: usize,
}

impl SampleSelection {
    fn from_indices(mut indices: Vec<usize>, target_length: usize) -> Self {
        indices.sort_unstable();
        indices.dedup();
        let mut valid = vec![false; target_length];
        valid[..indices.len()].iter_mut().for_each(|v| *v = true);
        Self {
            indices,
            valid,
            target_length,
        }
    }

    /// The identity selection over `t` timesteps.
    pub fn all(t: usize) -> Self {
        Self::from_indices((0..t).collect(), t)
    }

    pub fn n_valid(&self) -> usize {
        self.indices.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerInput {
    pub obs_days: Vec<u32>,
    pub obs_gdd: Vec<f64>,
    pub clear_counts: Vec<usize>,
}

impl SamplerInput {
    pub fn new(obs_days: Vec<u32>, obs_gdd: Vec<f64>, clear_counts: Vec<usize>) -> Result<Self> {
        let input = Self {
            obs_days,
            obs_gdd,
            clear_counts,
        };
        input.validate()?;
        Ok(input)
    }

    pub fn from_cube(cube: &DataCube, obs_gdd: Vec<f64>) -> Result<Self> {
        Self::new(cube.obs_days.clone(), obs_gdd, cube.clear_counts())
    }

    pub fn len(&self) -> usize {
        self.obs_days.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs_days.is_empty()
    }

    fn validate(&self) -> Result<()> {
        if self.obs_days.is_empty() {
            return Err(Error::InvalidInput(
                "sampler input has no observations".into(),
            ));
        }
        if self.obs_gdd.len() != self.obs_days.len()
            || self.clear_counts.len() != self.obs_days.len()
        {
            return Err(Error::InvalidInput(format!(
                "sampler input lengths differ: {} days, {} gdd, {} clear counts",
                self.obs_days.len(),
                self.obs_gdd.len(),
                self.clear_counts.len()
            )));
        }
        if self.obs_gdd.iter().any(|g| !g.is_finite()) {
            return Err(Error::InvalidInput("non-finite GDD value".into()));
        }
        if self.obs_gdd.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidInput("obs_gdd must be non-decreasing".into()));
        }
        if self.obs_days.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput(
                "obs_days must be strictly increasing".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerMethod {
    Uniform,
    Deformable,
    T3s,
}

impl SamplerMethod {
    pub fn select(self, input: &SamplerInput, length: usize) -> Result<SampleSelection> {
        input.validate()?;
        match self {
            SamplerMethod::Uniform => uniform_calendar_select(&input.obs_days, length),
            SamplerMethod::Deformable => {
                deformable_select(&input.obs_days, &input.clear_counts, length)
            }
            SamplerMethod::T3s => t3s_select(input, length),
        }
    }

    /// Selection on `input` (typically a truncated series) with the interval
    /// grid spanning `full` instead. The uniform sampler has no grid.
    pub fn select_on_grid(
        self,
        input: &SamplerInput,
        full: &SamplerInput,
        length: usize,
    ) -> Result<SampleSelection> {
        input.validate()?;
        full.validate()?;
        let range = |v: &[f64]| (v[0], v[v.len() - 1]);
        match self {
            SamplerMethod::Uniform => uniform_calendar_select(&input.obs_days, length),
            SamplerMethod::Deformable => {
                let days: Vec<f64> = input.obs_days.iter().map(|&d| d as f64).collect();
                let full_days: Vec<f64> = full.obs_days.iter().map(|&d| d as f64).collect();
                interval_argmax_select_in(&days, &input.clear_counts, length, range(&full_days))
            }
            SamplerMethod::T3s => interval_argmax_select_in(
                &input.obs_gdd,
                &input.clear_counts,
                length,
                range(&full.obs_gdd),
            ),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SamplerMethod::Uniform => "uniform",
            SamplerMethod::Deformable => "deformable",
            SamplerMethod::T3s => "t3s",
        }
    }
}

impl fmt::Display for SamplerMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SamplerMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(SamplerMethod::Uniform),
            "deformable" => Ok(SamplerMethod::Deformable),
            "t3s" => Ok(SamplerMethod::T3s),
            other => Err(Error::Config(format!("unknown sampler method `{other}`"))),
        }
    }
}

pub fn clear_pixel_count(mask: ArrayView2<'_, bool>) -> usize {
    mask.iter().filter(|&&cloudy| !cloudy).count()
}

fn check_length(length: usize, t: usize) -> Result<()> {
    if length == 0 {
        return Err(Error::InvalidInput("target length L must be ≥ 1".into()));
    }
    if t == 0 {
        return Err(Error::InvalidInput("no observations to sample from".into()));
    }
    Ok(())
}

/// Lower boundary of interval `k` over `[lo, lo + length * delta]`.
#[inline]
pub fn interval_lower(lo: f64, delta: f64, k: usize) -> f64 {
    lo + k as f64 * delta
}

/// Interval membership of `v` under the half-open-with-closed-top rule.
fn interval_of(v: f64, lo: f64, delta: f64, length: usize) -> usize {
    if delta <= 0.0 {
        return 0;
    }
    let mut k = (((v - lo) / delta).floor().max(0.0) as usize).min(length - 1);
    while k > 0 && v < interval_lower(lo, delta, k) {
        k -= 1;
    }
    while k + 1 < length && v >= interval_lower(lo, delta, k + 1) {
        k += 1;
    }
    k
}

/// Splits `[min(values), max(values)]` into `length` equal intervals and picks
/// the clearest observation of each non-empty interval.
pub fn interval_argmax_select(
    values: &[f64],
    clear_counts: &[usize],
    length: usize,
) -> Result<SampleSelection> {
    check_length(length, values.len())?;
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    interval_argmax_select_in(values, clear_counts, length, (lo, hi))
}

/// Same routine over a fixed `[lo, hi]` grid, e.g. a full-season range
/// applied to a truncated series. Every value must lie inside the grid.
pub fn interval_argmax_select_in(
    values: &[f64],
    clear_counts: &[usize],
    length: usize,
    (lo, hi): (f64, f64),
) -> Result<SampleSelection> {
    check_length(length, values.len())?;
    if values.len() != clear_counts.len() {
        return Err(Error::InvalidInput(
            "values and clear counts differ in length".into(),
        ));
    }
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(Error::InvalidInput(format!(
            "invalid sampling range [{lo}, {hi}]"
        )));
    }
    if let Some(v) = values.iter().find(|&&v| v < lo || v > hi) {
        return Err(Error::InvalidInput(format!(
            "value {v} outside sampling range [{lo}, {hi}]"
        )));
    }
    let delta = (hi - lo) / length as f64;

    let mut best: Vec<Option<usize>> = vec![None; length];
    for (i, &v) in values.iter().enumerate() {
        let k = interval_of(v, lo, delta, length);
        match best[k] {
            Some(b) if clear_counts[b] >= clear_counts[i] => {}
            _ => best[k] = Some(i),
        }
    }
    Ok(SampleSelection::from_indices(
        best.into_iter().flatten().collect(),
        length,
    ))
}

pub fn t3s_select(input: &SamplerInput, length: usize) -> Result<SampleSelection> {
    input.validate()?;
    interval_argmax_select(&input.obs_gdd, &input.clear_counts, length)
}

pub fn deformable_select(
    obs_days: &[u32],
    clear_counts: &[usize],
    length: usize,
) -> Result<SampleSelection> {
    let days: Vec<f64> = obs_days.iter().map(|&d| d as f64).collect();
    interval_argmax_select(&days, clear_counts, length)
}

/// `length` evenly spaced index positions, `round(k * (T - 1) / (L - 1))`.
pub fn uniform_calendar_select(obs_days: &[u32], length: usize) -> Result<SampleSelection> {
    let t = obs_days.len();
    check_length(length, t)?;
    let indices = if length == 1 {
        vec![0]
    } else {
        (0..length)
            .map(|k| (k as f64 * (t - 1) as f64 / (length - 1) as f64).round() as usize)
            .collect()
    };
    Ok(SampleSelection::from_indices(indices, length))
}

/// A cube gathered down to `L` slots. Pad slots are zero-filled and flagged invalid.
#[derive(Debug, Clone, PartialEq)]
pub struct GatheredCube {
    /// L×C×H×W digital numbers.
    pub reflectance: Array4<u16>,
    /// L×H×W.
    pub cloud_mask: Array3<bool>,
    pub days: Vec<u32>,
    pub gdd: Vec<f64>,
    pub valid: Vec<bool>,
}

impl GatheredCube {
    pub fn len(&self) -> usize {
        self.valid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.valid.is_empty()
    }
}

pub fn apply_selection(
    cube: &DataCube,
    sel: &SampleSelection,
    obs_gdd: Option<&[f64]>,
) -> Result<GatheredCube> {
    let t = cube.obs_days.len();
    if let Some(&bad) = sel.indices.iter().find(|&&i| i >= t) {
        return Err(Error::InvalidInput(format!(
            "selected index {bad} out of range for T = {t}"
        )));
    }
    if sel.indices.len() > sel.target_length {
        return Err(Error::InvalidInput(
            "selection longer than its target length".into(),
        ));
    }
    if let Some(g) = obs_gdd {
        if g.len() != t {
            return Err(Error::InvalidInput(format!(
                "{} GDD values for T = {t}",
                g.len()
            )));
        }
    }
    let l = sel.target_length;
    let (_, c, h, w) = cube.reflectance.dim();
    let mut reflectance = Array4::<u16>::zeros((l, c, h, w));
    let mut cloud_mask = Array3::<bool>::from_elem((l, h, w), false);
    let mut days = vec![0; l];
    let mut gdd = vec![0.0; l];
    for (slot, &i) in sel.indices.iter().enumerate() {
        reflectance
            .index_axis_mut(Axis(0), slot)
            .assign(&cube.reflectance.index_axis(Axis(0), i));
        cloud_mask
            .index_axis_mut(Axis(0), slot)
            .assign(&cube.cloud_mask.index_axis(Axis(0), i));
        days[slot] = cube.obs_days[i];
        if let Some(g) = obs_gdd {
            gdd[slot] = g[i];
        }
    }
    let mut valid = vec![false; l];
    valid[..sel.indices.len()]
        .iter_mut()
        .for_each(|v| *v = true);
    Ok(GatheredCube {
        reflectance,
        cloud_mask,
        days,
        gdd,
        valid,
    })
}

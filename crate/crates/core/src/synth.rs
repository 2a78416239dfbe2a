//! Seeded multi-year synthetic benchmark.
//!
//! Class signatures are double-logistic curves in cumulative GDD, so two years
//! that differ only in temperature produce identical signatures on the thermal
//! axis and shifted ones on the calendar axis. Clouds are stamped in as bright
//! circular blobs and recorded in the cube's cloud mask.

use std::f64::consts::PI;

use ndarray::{Array2, Array3, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cubeio::{to_digital_number, DataCube};
use crate::error::{Error, Result};
use crate::thermal::{
    cumulative_gdd, gdd_at_observations, DailyTemperature, ThermalConfig, ThermalSeries,
};

pub const DAYS_PER_YEAR: u32 = 365;

/// Derives an independent RNG stream for one (seed, year, purpose) triple.
pub(crate) fn stream_rng(seed: u64, year: i32, purpose: u64) -> ChaCha8Rng {
    // splitmix64 finalizer over the packed key
    let mut z = seed
        ^ (year as i64 as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ purpose.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    ChaCha8Rng::seed_from_u64(z)
}

const STREAM_TEMPERATURE: u64 = 1;
const STREAM_FIELDS: u64 = 2;
const STREAM_PIXELS: u64 = 3;
const STREAM_CLOUDS: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct YearAnomaly {
    pub year: i32,
    pub anomaly: f64,
}

/// Sinusoidal annual temperature cycle with per-year offsets and daily noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClimateModel {
    /// Half the peak-to-trough swing of the daily mean, °C.
    pub amplitude: f64,
    /// Annual mean, °C.
    pub offset: f64,
    /// Day at which the daily mean crosses the annual mean going up.
    pub phase: f64,
    /// Daily max minus daily min, °C.
    pub diurnal_range: f64,
    pub daily_noise_sd: f64,
    pub year_anomaly: Vec<YearAnomaly>,
    pub seed: u64,
}

impl Default for ClimateModel {
    fn default() -> Self {
        Self {
            amplitude: 11.5,
            offset: 8.0,
            phase: 105.0,
            diurnal_range: 9.0,
            daily_noise_sd: 2.0,
            year_anomaly: vec![
                YearAnomaly {
                    year: 2019,
                    anomaly: -1.5,
                },
                YearAnomaly {
                    year: 2020,
                    anomaly: 0.0,
                },
                YearAnomaly {
                    year: 2021,
                    anomaly: 1.5,
                },
            ],
            seed: 7,
        }
    }
}

impl ClimateModel {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.amplitude,
            self.offset,
            self.phase,
            self.diurnal_range,
            self.daily_noise_sd,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite || self.year_anomaly.iter().any(|y| !y.anomaly.is_finite()) {
            return Err(Error::Config(
                "climate model has non-finite parameters".into(),
            ));
        }
        if self.amplitude < 0.0 || self.daily_noise_sd < 0.0 || self.diurnal_range < 0.0 {
            return Err(Error::Config(
                "climate amplitude, diurnal range and noise sd must be ≥ 0".into(),
            ));
        }
        Ok(())
    }

    /// Anomaly for `year`, zero when the year is not listed.
    pub fn anomaly(&self, year: i32) -> f64 {
        self.year_anomaly
            .iter()
            .find(|y| y.year == year)
            .map_or(0.0, |y| y.anomaly)
    }
}

pub fn gen_temperature_year(climate: &ClimateModel, year: i32) -> Result<Vec<DailyTemperature>> {
    climate.validate()?;
    let mut rng = stream_rng(climate.seed, year, STREAM_TEMPERATURE);
    let noise = Normal::new(0.0, climate.daily_noise_sd).expect("sd validated");
    let anomaly = climate.anomaly(year);
    let half_range = climate.diurnal_range / 2.0;
    Ok((1..=DAYS_PER_YEAR)
        .map(|day| {
            let cycle = climate.amplitude
                * (2.0 * PI * (day as f64 - climate.phase) / DAYS_PER_YEAR as f64).sin();
            let mean = climate.offset + cycle + anomaly + noise.sample(&mut rng);
            DailyTemperature {
                day_of_year: day,
                t_min: mean - half_range,
                t_max: mean + half_range,
            }
        })
        .collect())
}

/// Double-logistic phenology of one class in thermal time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassPhenology {
    pub name: String,
    pub g_onset: f64,
    pub g_offset: f64,
    pub growth_rate: f64,
    pub senescence_rate: f64,
    pub peak_amplitude: Vec<f64>,
    pub base_reflectance: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhenologyParams {
    pub channel_names: Vec<String>,
    pub classes: Vec<ClassPhenology>,
    pub pixel_noise_sd: f64,
    /// Per-field shift of onset and offset, sd in degree-days.
    #[serde(default)]
    pub field_jitter_gdd: f64,
    /// Per-field relative amplitude scaling, sd.
    #[serde(default)]
    pub field_amplitude_jitter: f64,
}

impl PhenologyParams {
    pub fn n_channels(&self) -> usize {
        self.channel_names.len()
    }

    #[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN must fail these checks
    pub fn validate(&self) -> Result<()> {
        let c = self.n_channels();
        if c == 0 || self.classes.is_empty() {
            return Err(Error::Config(
                "phenology needs ≥ 1 channel and ≥ 1 class".into(),
            ));
        }
        if self.classes.len() >= crate::cubeio::IGNORE_LABEL as usize {
            return Err(Error::Config("too many classes for 8-bit labels".into()));
        }
        for cls in &self.classes {
            if !(cls.g_onset < cls.g_offset) {
                return Err(Error::Config(format!(
                    "class `{}`: g_onset must be < g_offset",
                    cls.name
                )));
            }
            if cls.peak_amplitude.len() != c || cls.base_reflectance.len() != c {
                return Err(Error::Config(format!(
                    "class `{}`: expected {c} channel values",
                    cls.name
                )));
            }
            let vals = [
                cls.g_onset,
                cls.g_offset,
                cls.growth_rate,
                cls.senescence_rate,
            ];
            if vals
                .iter()
                .chain(&cls.peak_amplitude)
                .chain(&cls.base_reflectance)
                .any(|v| !v.is_finite())
            {
                return Err(Error::Config(format!(
                    "class `{}` has non-finite parameters",
                    cls.name
                )));
            }
        }
        if !(self.pixel_noise_sd >= 0.0
            && self.field_jitter_gdd >= 0.0
            && self.field_amplitude_jitter >= 0.0)
        {
            return Err(Error::Config("noise and jitter levels must be ≥ 0".into()));
        }
        Ok(())
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn double_logistic(cls: &ClassPhenology, g: f64, shift: f64) -> f64 {
    sigmoid(cls.growth_rate * (g - cls.g_onset - shift))
        - sigmoid(cls.senescence_rate * (g - cls.g_offset - shift))
}

/// Noise-free reflectance of `class_id` at cumulative GDD `g`, clamped to `[0, 1]`.
pub fn signature(class_id: usize, g: f64, params: &PhenologyParams) -> Result<Vec<f64>> {
    let cls = params
        .classes
        .get(class_id)
        .ok_or_else(|| Error::InvalidInput(format!("unknown class id {class_id}")))?;
    let curve = double_logistic(cls, g, 0.0);
    Ok(cls
        .base_reflectance
        .iter()
        .zip(&cls.peak_amplitude)
        .map(|(b, a)| (b + a * curve).clamp(0.0, 1.0))
        .collect())
}

impl Default for PhenologyParams {
    fn default() -> Self {
        let soil = vec![0.07, 0.11, 0.20, 0.26];
        let cls = |name: &str, on: f64, off: f64, gr: f64, sr: f64, amp: [f64; 4]| ClassPhenology {
            name: name.into(),
            g_onset: on,
            g_offset: off,
            growth_rate: gr,
            senescence_rate: sr,
            peak_amplitude: amp.to_vec(),
            base_reflectance: soil.clone(),
        };
        Self {
            channel_names: ["blue", "red", "nir", "swir"].map(String::from).to_vec(),
            classes: vec![
                cls(
                    "meadow",
                    250.0,
                    2900.0,
                    0.006,
                    0.005,
                    [-0.02, -0.05, 0.24, -0.09],
                ),
                cls(
                    "winter_cereal",
                    350.0,
                    1450.0,
                    0.012,
                    0.010,
                    [-0.03, -0.07, 0.32, -0.12],
                ),
                cls(
                    "spring_cereal",
                    650.0,
                    1750.0,
                    0.012,
                    0.010,
                    [-0.03, -0.07, 0.32, -0.12],
                ),
                cls(
                    "maize",
                    1150.0,
                    2650.0,
                    0.009,
                    0.008,
                    [-0.03, -0.08, 0.36, -0.11],
                ),
                cls(
                    "sugar_beet",
                    900.0,
                    2950.0,
                    0.010,
                    0.007,
                    [-0.03, -0.08, 0.36, -0.13],
                ),
                cls(
                    "potato",
                    850.0,
                    2100.0,
                    0.011,
                    0.011,
                    [-0.03, -0.07, 0.33, -0.10],
                ),
            ],
            pixel_noise_sd: 0.015,
            field_jitter_gdd: 60.0,
            field_amplitude_jitter: 0.06,
        }
    }
}

/// Bright circular cloud blobs, present on each timestep with `probability`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CloudModel {
    pub probability: f64,
    pub blob_count: (u32, u32),
    pub blob_radius: (f64, f64),
    /// Reflectance range of cloud tops, applied to every channel.
    pub brightness: (f64, f64),
    pub seed: u64,
}

impl Default for CloudModel {
    fn default() -> Self {
        Self {
            probability: 0.5,
            blob_count: (1, 4),
            blob_radius: (8.0, 24.0),
            brightness: (0.35, 0.65),
            seed: 11,
        }
    }
}

impl CloudModel {
    pub fn none() -> Self {
        Self {
            probability: 0.0,
            ..Self::default()
        }
    }

    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.probability) {
            return Err(Error::Config(format!(
                "cloud probability {} outside [0, 1]",
                self.probability
            )));
        }
        if self.blob_count.0 > self.blob_count.1
            || !(0.0 <= self.blob_radius.0 && self.blob_radius.0 <= self.blob_radius.1)
            || !(self.brightness.0 <= self.brightness.1)
        {
            return Err(Error::Config(
                "cloud ranges must be ordered (min ≤ max)".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Field {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
    pub class_id: u8,
}

/// Rectangular fields that must tile the whole image exactly once.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldLayout {
    pub height: usize,
    pub width: usize,
    pub fields: Vec<Field>,
}

impl FieldLayout {
    /// Square grid of `field_size` fields, classes assigned by `class_counts`
    /// (one entry per class) and shuffled with `seed`.
    pub fn grid(
        height: usize,
        width: usize,
        field_size: usize,
        class_counts: &[usize],
        seed: u64,
    ) -> Result<Self> {
        if field_size == 0 || !height.is_multiple_of(field_size) || !width.is_multiple_of(field_size) {
            return Err(Error::Config(format!(
                "field size {field_size} does not tile {height}×{width}"
            )));
        }
        let n_fields = (height / field_size) * (width / field_size);
        let total: usize = class_counts.iter().sum();
        if total != n_fields {
            return Err(Error::Config(format!(
                "class counts sum to {total} but the grid holds {n_fields} fields"
            )));
        }
        let mut classes: Vec<u8> = class_counts
            .iter()
            .enumerate()
            .flat_map(|(k, &n)| std::iter::repeat_n(k as u8, n))
            .collect();
        let mut rng = stream_rng(seed, 0, STREAM_FIELDS);
        rand::seq::SliceRandom::shuffle(classes.as_mut_slice(), &mut rng);
        let cols = width / field_size;
        let fields = classes
            .into_iter()
            .enumerate()
            .map(|(i, class_id)| Field {
                row: (i / cols) * field_size,
                col: (i % cols) * field_size,
                height: field_size,
                width: field_size,
                class_id,
            })
            .collect();
        Ok(Self {
            height,
            width,
            fields,
        })
    }

    /// Per-pixel field index; errors unless the fields tile the image exactly.
    pub fn field_index_map(&self) -> Result<Array2<usize>> {
        let mut map = Array2::from_elem((self.height, self.width), usize::MAX);
        for (f_idx, f) in self.fields.iter().enumerate() {
            if f.row + f.height > self.height
                || f.col + f.width > self.width
                || f.height == 0
                || f.width == 0
            {
                return Err(Error::Config(format!(
                    "field {f_idx} lies outside the {}×{} image",
                    self.height, self.width
                )));
            }
            for y in f.row..f.row + f.height {
                for x in f.col..f.col + f.width {
                    if map[[y, x]] != usize::MAX {
                        return Err(Error::Config(format!("fields overlap at pixel ({y}, {x})")));
                    }
                    map[[y, x]] = f_idx;
                }
            }
        }
        if let Some(((y, x), _)) = map.indexed_iter().find(|(_, &v)| v == usize::MAX) {
            return Err(Error::Config(format!(
                "layout leaves pixel ({y}, {x}) uncovered"
            )));
        }
        Ok(map)
    }
}

pub fn observation_days(every_n_days: u32) -> Result<Vec<u32>> {
    if every_n_days == 0 {
        return Err(Error::Config("observation interval must be ≥ 1 day".into()));
    }
    Ok((1..=DAYS_PER_YEAR).step_by(every_n_days as usize).collect())
}

pub struct CubeSpec<'a> {
    pub year: i32,
    pub climate: &'a ClimateModel,
    pub phenology: &'a PhenologyParams,
    pub clouds: &'a CloudModel,
    pub layout: &'a FieldLayout,
    pub obs_every_n_days: u32,
    pub thermal: ThermalConfig,
    pub seed: u64,
}

/// A generated site-year: the cube plus the temperatures that drove it.
#[derive(Debug, Clone)]
pub struct GeneratedYear {
    pub cube: DataCube,
    pub temperatures: Vec<DailyTemperature>,
    pub thermal: ThermalSeries,
}

pub fn gen_cube(spec: &CubeSpec<'_>) -> Result<GeneratedYear> {
    spec.phenology.validate()?;
    spec.clouds.validate()?;
    let field_map = spec.layout.field_index_map()?;
    if let Some(f) = spec
        .layout
        .fields
        .iter()
        .find(|f| f.class_id as usize >= spec.phenology.classes.len())
    {
        return Err(Error::Config(format!(
            "field class id {} has no phenology",
            f.class_id
        )));
    }
    let temperatures = gen_temperature_year(spec.climate, spec.year)?;
    let thermal = cumulative_gdd(&temperatures, &spec.thermal)?;
    let obs_days = observation_days(spec.obs_every_n_days)?;
    let obs_gdd = gdd_at_observations(&thermal, &obs_days)?;

    let (h, w) = (spec.layout.height, spec.layout.width);
    let c = spec.phenology.n_channels();
    let t = obs_days.len();
    let pheno = spec.phenology;

    // field-level variation: timing shift and amplitude scale
    let mut field_rng = stream_rng(spec.seed, spec.year, STREAM_FIELDS);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let field_mods: Vec<(f64, f64)> = spec
        .layout
        .fields
        .iter()
        .map(|_| {
            let shift = pheno.field_jitter_gdd * unit.sample(&mut field_rng);
            let scale = 1.0 + pheno.field_amplitude_jitter * unit.sample(&mut field_rng);
            (shift, scale)
        })
        .collect();

    let clouds = gen_cloud_layer(spec.clouds, t, h, w, spec.year)?;

    let mut pixel_rng = stream_rng(spec.seed, spec.year, STREAM_PIXELS);
    let mut reflectance = Array4::<u16>::zeros((t, c, h, w));
    let mut curve = vec![0.0; spec.layout.fields.len()];
    for (ti, &g) in obs_gdd.iter().enumerate() {
        for (f_idx, f) in spec.layout.fields.iter().enumerate() {
            curve[f_idx] =
                double_logistic(&pheno.classes[f.class_id as usize], g, field_mods[f_idx].0);
        }
        for y in 0..h {
            for x in 0..w {
                let f_idx = field_map[[y, x]];
                let cls = &pheno.classes[spec.layout.fields[f_idx].class_id as usize];
                let scale = field_mods[f_idx].1;
                let cloud = clouds.brightness[[ti, y, x]];
                for ch in 0..c {
                    let clean = (cls.base_reflectance[ch]
                        + scale * cls.peak_amplitude[ch] * curve[f_idx])
                        .clamp(0.0, 1.0);
                    let noise = if pheno.pixel_noise_sd > 0.0 {
                        pheno.pixel_noise_sd * unit.sample(&mut pixel_rng)
                    } else {
                        0.0
                    };
                    let value = if cloud > 0.0 {
                        cloud + 0.5 * noise
                    } else {
                        clean + noise
                    };
                    reflectance[[ti, ch, y, x]] = to_digital_number(value);
                }
            }
        }
    }

    let labels = field_map.mapv(|f_idx| spec.layout.fields[f_idx].class_id);
    let cube = DataCube {
        year: spec.year,
        obs_days,
        reflectance,
        cloud_mask: clouds.brightness.mapv(|b| b > 0.0),
        labels,
        channel_names: pheno.channel_names.clone(),
        class_names: pheno.classes.iter().map(|c| c.name.clone()).collect(),
    };
    cube.validate()?;
    Ok(GeneratedYear {
        cube,
        temperatures,
        thermal,
    })
}

struct CloudLayer {
    /// T×H×W cloud-top reflectance, 0 where clear.
    brightness: Array3<f64>,
}

fn gen_cloud_layer(
    model: &CloudModel,
    t: usize,
    h: usize,
    w: usize,
    year: i32,
) -> Result<CloudLayer> {
    let mut rng = stream_rng(model.seed, year, STREAM_CLOUDS);
    let mut brightness = Array3::<f64>::zeros((t, h, w));
    for ti in 0..t {
        if rng.gen::<f64>() >= model.probability {
            continue;
        }
        let n = rng.gen_range(model.blob_count.0..=model.blob_count.1);
        for _ in 0..n {
            let cy = rng.gen_range(0.0..h as f64);
            let cx = rng.gen_range(0.0..w as f64);
            let r = if model.blob_radius.1 > model.blob_radius.0 {
                rng.gen_range(model.blob_radius.0..model.blob_radius.1)
            } else {
                model.blob_radius.0
            };
            let top = if model.brightness.1 > model.brightness.0 {
                rng.gen_range(model.brightness.0..model.brightness.1)
            } else {
                model.brightness.0
            };
            for y in 0..h {
                for x in 0..w {
                    let dy = y as f64 + 0.5 - cy;
                    let dx = x as f64 + 0.5 - cx;
                    if dy * dy + dx * dx <= r * r {
                        let b = &mut brightness[[ti, y, x]];
                        *b = b.max(top);
                    }
                }
            }
        }
    }
    Ok(CloudLayer { brightness })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::thermal::cumulative_gdd;

    fn quiet_climate() -> ClimateModel {
        ClimateModel {
            daily_noise_sd: 0.0,
            ..ClimateModel::default()
        }
    }

    #[test]
    fn constant_climate() {
        let climate = ClimateModel {
            amplitude: 0.0,
            offset: 10.0,
            diurnal_range: 0.0,
            daily_noise_sd: 0.0,
            year_anomaly: vec![],
            ..ClimateModel::default()
        };
        let temps = gen_temperature_year(&climate, 2020).unwrap();
        assert_eq!(temps.len(), 365);
        assert!(temps.iter().all(|t| t.t_min == 10.0 && t.t_max == 10.0));
        assert!(temps
            .iter()
            .enumerate()
            .all(|(i, t)| t.day_of_year == i as u32 + 1));
    }

    #[test]
    fn temperature_determinism_and_ordering() {
        let c = ClimateModel::default();
        let a = gen_temperature_year(&c, 2021).unwrap();
        assert_eq!(a, gen_temperature_year(&c, 2021).unwrap());
        assert_ne!(a, gen_temperature_year(&c, 2019).unwrap());
        assert!(a.iter().all(|t| t.t_min <= t.t_max));
    }

    #[test]
    fn anomaly_adds_to_cumulative_gdd() {
        // warm enough that no day is clamped
        let base = ClimateModel {
            offset: 20.0,
            amplitude: 5.0,
            year_anomaly: vec![YearAnomaly {
                year: 2020,
                anomaly: 0.0,
            }],
            ..ClimateModel::default()
        };
        let warm = ClimateModel {
            year_anomaly: vec![YearAnomaly {
                year: 2020,
                anomaly: 2.0,
            }],
            ..base.clone()
        };
        let cfg = ThermalConfig::default();
        let t0 = gen_temperature_year(&base, 2020).unwrap();
        let t1 = gen_temperature_year(&warm, 2020).unwrap();
        assert!(t0.iter().all(|t| (t.t_min + t.t_max) / 2.0 > 0.0));
        let brute: f64 = t1
            .iter()
            .zip(&t0)
            .map(|(a, b)| (a.t_min + a.t_max) / 2.0 - (b.t_min + b.t_max) / 2.0)
            .sum();
        let g0 = *cumulative_gdd(&t0, &cfg)
            .unwrap()
            .gdd_cumulative
            .last()
            .unwrap();
        let g1 = *cumulative_gdd(&t1, &cfg)
            .unwrap()
            .gdd_cumulative
            .last()
            .unwrap();
        assert!((g1 - g0 - 730.0).abs() < 1e-6, "difference {}", g1 - g0);
        assert!((brute - 730.0).abs() < 1e-6);
    }

    #[test]
    fn signature_cases() {
        let p = PhenologyParams::default();
        let cls = &p.classes[1];
        let far = signature(1, -5000.0, &p).unwrap();
        for (v, b) in far.iter().zip(&cls.base_reflectance) {
            assert!((v - b).abs() < 1e-6);
        }
        // symmetric rates, evaluated midway between onset and offset
        let mut sym = p.clone();
        sym.classes[1].senescence_rate = sym.classes[1].growth_rate;
        let c = &sym.classes[1];
        let mid = (c.g_onset + c.g_offset) / 2.0;
        let half = (c.g_offset - c.g_onset) / 2.0;
        let k = c.growth_rate;
        let expected_curve = 1.0 / (1.0 + (-k * half).exp()) - 1.0 / (1.0 + (k * half).exp());
        let got = signature(1, mid, &sym).unwrap();
        for (ch, g) in got.iter().enumerate().take(4) {
            let e =
                (c.base_reflectance[ch] + c.peak_amplitude[ch] * expected_curve).clamp(0.0, 1.0);
            assert!((g - e).abs() < 1e-12);
        }
        // identical parameters, identical signatures
        let mut twin = p.clone();
        twin.classes[2] = twin.classes[1].clone();
        assert_eq!(
            signature(1, 900.0, &twin).unwrap(),
            signature(2, 900.0, &twin).unwrap()
        );
        assert!(signature(17, 0.0, &p).is_err());
    }

    fn small_layout(classes: &[usize]) -> FieldLayout {
        FieldLayout::grid(8, 8, 4, classes, 3).unwrap()
    }

    #[test]
    fn layout_must_tile() {
        assert!(FieldLayout::grid(8, 8, 3, &[1], 0).is_err());
        assert!(FieldLayout::grid(8, 8, 4, &[1, 1], 0).is_err());
        let mut l = small_layout(&[4]);
        l.fields[0].width = 2;
        assert!(l.field_index_map().is_err());
        let mut l = small_layout(&[4]);
        l.fields[1].col = 0;
        assert!(l.field_index_map().is_err());
    }

    #[test]
    fn noise_free_single_class_is_uniform() {
        let pheno = PhenologyParams {
            pixel_noise_sd: 0.0,
            field_jitter_gdd: 0.0,
            field_amplitude_jitter: 0.0,
            ..Default::default()
        };
        let layout = small_layout(&[4, 0, 0, 0, 0, 0]);
        let spec = CubeSpec {
            year: 2020,
            climate: &ClimateModel::default(),
            phenology: &pheno,
            clouds: &CloudModel::none(),
            layout: &layout,
            obs_every_n_days: 5,
            thermal: ThermalConfig::default(),
            seed: 1,
        };
        let cube = gen_cube(&spec).unwrap().cube;
        assert!(cube.cloud_mask.iter().all(|&c| !c));
        for ti in 0..cube.obs_days.len() {
            for ch in 0..4 {
                let first = cube.reflectance[[ti, ch, 0, 0]];
                assert!(cube
                    .reflectance
                    .slice(ndarray::s![ti, ch, .., ..])
                    .iter()
                    .all(|&v| v == first));
            }
        }
    }

    #[test]
    fn generation_is_deterministic_and_dirs_match() {
        let layout = small_layout(&[2, 1, 1, 0, 0, 0]);
        let spec = CubeSpec {
            year: 2021,
            climate: &ClimateModel::default(),
            phenology: &PhenologyParams::default(),
            clouds: &CloudModel::default(),
            layout: &layout,
            obs_every_n_days: 3,
            thermal: ThermalConfig::default(),
            seed: 5,
        };
        let a = gen_cube(&spec).unwrap().cube;
        let b = gen_cube(&spec).unwrap().cube;
        assert_eq!(a, b);
        let (da, db) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        crate::cubeio::write_cube(&a, da.path()).unwrap();
        crate::cubeio::write_cube(&b, db.path()).unwrap();
        for f in [
            "manifest.json",
            "reflectance.u16",
            "cloud.u8",
            "labels.u8",
            "days.u16",
        ] {
            assert_eq!(
                std::fs::read(da.path().join(f)).unwrap(),
                std::fs::read(db.path().join(f)).unwrap()
            );
        }
        assert!(a.cloud_mask.iter().any(|&c| c));
    }

    /// Linear-interpolated crossing of `level` along `x`, scanning forward.
    fn crossing(xs: &[f64], ys: &[f64], level: f64) -> f64 {
        for i in 1..ys.len() {
            if ys[i - 1] < level && ys[i] >= level {
                let f = (level - ys[i - 1]) / (ys[i] - ys[i - 1]);
                return xs[i - 1] + f * (xs[i] - xs[i - 1]);
            }
        }
        panic!("no crossing");
    }

    #[test]
    fn anomaly_shifts_calendar_not_thermal_half_peak() {
        let pheno = PhenologyParams {
            pixel_noise_sd: 0.0,
            field_jitter_gdd: 0.0,
            field_amplitude_jitter: 0.0,
            ..Default::default()
        };
        let layout = small_layout(&[0, 0, 0, 4, 0, 0]);
        let climate = quiet_climate();
        let mut half_day = Vec::new();
        let mut half_gdd = Vec::new();
        for year in [2019, 2021] {
            let spec = CubeSpec {
                year,
                climate: &climate,
                phenology: &pheno,
                clouds: &CloudModel::none(),
                layout: &layout,
                obs_every_n_days: 1,
                thermal: ThermalConfig::default(),
                seed: 2,
            };
            let gen = gen_cube(&spec).unwrap();
            let nir: Vec<f64> = (0..gen.cube.obs_days.len())
                .map(|t| crate::cubeio::to_reflectance(gen.cube.reflectance[[t, 2, 0, 0]]))
                .collect();
            let cls = &pheno.classes[3];
            let level = cls.base_reflectance[2] + cls.peak_amplitude[2] / 2.0;
            let days: Vec<f64> = gen.cube.obs_days.iter().map(|&d| d as f64).collect();
            half_day.push(crossing(&days, &nir, level));
            half_gdd.push(crossing(&gen.thermal.gdd_cumulative, &nir, level));
        }
        assert!(
            half_day[1] < half_day[0] - 5.0,
            "warm year should reach half-peak earlier: {half_day:?}"
        );
        // quantization of 1e-4 reflectance on a slope of ~1e-3 per degree-day
        assert!(
            (half_gdd[0] - half_gdd[1]).abs() < 1.0,
            "thermal half-peak moved: {half_gdd:?}"
        );
    }
}

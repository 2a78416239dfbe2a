use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{BenchConfig, MethodSpec, TruncationGrid};
use crate::cubeio::DataCube;
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalReport};
use crate::model::{
    predict_set, subsample_pixels, train, ClassifierParams, Inference, PeVariant, SequenceSet,
};
use crate::sampling::{apply_selection, SamplerInput, SamplerMethod};
use crate::synth::{gen_cube, CubeSpec, FieldLayout, GeneratedYear};
use crate::thermal::{gdd_at_observations, ThermalConfig};

/// One site-year of the benchmark: a cube and the cumulative GDD of its observations.
#[derive(Debug, Clone)]
pub struct YearData {
    pub year: i32,
    pub cube: DataCube,
    pub obs_gdd: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct BenchDataset {
    pub years: Vec<YearData>,
}

impl BenchDataset {
    /// Synthetic dataset described by `cfg`. Each year gets its own field layout.
    pub fn generate(cfg: &BenchConfig) -> Result<Self> {
        let years = generate_years(cfg)?
            .into_iter()
            .map(|(year, gen)| {
                let obs_gdd = gdd_at_observations(&gen.thermal, &gen.cube.obs_days)?;
                Ok(YearData {
                    year,
                    cube: gen.cube,
                    obs_gdd,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_years(years)
    }

    /// Wraps existing cubes; channels and classes must agree across years.
    pub fn from_years(years: Vec<YearData>) -> Result<Self> {
        let first = years
            .first()
            .ok_or_else(|| Error::InvalidInput("dataset has no years".into()))?;
        for y in &years {
            y.cube.validate()?;
            if y.obs_gdd.len() != y.cube.obs_days.len() {
                return Err(Error::InvalidInput(format!(
                    "year {}: GDD length mismatch",
                    y.year
                )));
            }
            if y.cube.channel_names != first.cube.channel_names
                || y.cube.class_names != first.cube.class_names
            {
                return Err(Error::InvalidInput(format!(
                    "year {} disagrees with year {} on channels or classes",
                    y.year, first.year
                )));
            }
        }
        Ok(Self { years })
    }

    pub fn year(&self, year: i32) -> Result<&YearData> {
        self.years
            .iter()
            .find(|y| y.year == year)
            .ok_or_else(|| Error::InvalidInput(format!("year {year} not in dataset")))
    }

    pub fn n_channels(&self) -> usize {
        self.years[0].cube.channel_names.len()
    }

    pub fn n_classes(&self) -> usize {
        self.years[0].cube.class_names.len()
    }
}

/// Cubes and temperature series for every year of `cfg`.
pub fn generate_years(cfg: &BenchConfig) -> Result<Vec<(i32, GeneratedYear)>> {
    cfg.validate()?;
    let d = &cfg.dataset;
    cfg.years
        .iter()
        .map(|&year| {
            let layout = FieldLayout::grid(
                d.height,
                d.width,
                d.field_size,
                &d.class_counts,
                d.seed ^ (year as i64 as u64).wrapping_mul(0x2545_F491_4F6C_DD1D),
            )?;
            let gen = gen_cube(&CubeSpec {
                year,
                climate: &cfg.climate,
                phenology: &cfg.phenology,
                clouds: &cfg.clouds,
                layout: &layout,
                obs_every_n_days: d.obs_every_n_days,
                thermal: ThermalConfig { t_base: d.t_base },
                seed: d.seed,
            })?;
            Ok((year, gen))
        })
        .collect()
}

/// One training configuration evaluated on a set of held-out years.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSpec {
    pub train_year: i32,
    pub test_years: Vec<i32>,
    pub sampler: SamplerMethod,
    pub pe_variant: PeVariant,
    pub label_fraction: f64,
    pub truncation_day: Option<u32>,
    pub seed: u64,
}

impl FoldSpec {
    pub fn validate(&self) -> Result<()> {
        if self.test_years.contains(&self.train_year) {
            return Err(Error::Config(format!(
                "train year {} is also a test year",
                self.train_year
            )));
        }
        if !(self.label_fraction > 0.0 && self.label_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "label fraction {} outside (0, 1]",
                self.label_fraction
            )));
        }
        Ok(())
    }
}

/// Leave-one-year-in folds: train on each year, test on all the others.
pub fn cross_year_folds(years: &[i32]) -> Result<Vec<(i32, Vec<i32>)>> {
    if years.len() < 2 {
        return Err(Error::Config(
            "cross-year protocols need at least two years".into(),
        ));
    }
    Ok(years
        .iter()
        .map(|&train| {
            (
                train,
                years.iter().copied().filter(|&y| y != train).collect(),
            )
        })
        .collect())
}

/// Seed of every model trained on `train_year`.
pub fn fold_seed(seed: u64, train_year: i32) -> u64 {
    crate::model::mix_seed(seed, train_year as i64 as u64)
}

/// Protocol parameters shared by the three runs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunPlan {
    pub protocol: String,
    pub label_fraction: f64,
    /// `None` evaluates on the full season.
    pub cutoffs: Vec<Option<u32>>,
    pub truncation_grid: TruncationGrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct MetricRow {
    pub accuracy: f64,
    pub miou: f64,
    pub iou: f64,
    pub ece: f64,
    pub nll: f64,
    pub brier: f64,
}

impl MetricRow {
    pub fn from_report(r: &EvalReport) -> Self {
        Self {
            accuracy: r.accuracy,
            miou: r.miou,
            iou: r.pooled_iou(),
            ece: r.ece,
            nll: r.nll,
            brier: r.brier,
        }
    }

    fn values(&self) -> [f64; 6] {
        [
            self.accuracy,
            self.miou,
            self.iou,
            self.ece,
            self.nll,
            self.brier,
        ]
    }

    fn from_values(v: [f64; 6]) -> Self {
        Self {
            accuracy: v[0],
            miou: v[1],
            iou: v[2],
            ece: v[3],
            nll: v[4],
            brier: v[5],
        }
    }
}

/// One (method, train year, test year, cutoff) evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingResult {
    pub method: String,
    pub train_year: i32,
    pub test_year: i32,
    pub cutoff: Option<u32>,
    pub label_fraction: f64,
    pub n_train_pixels: usize,
    pub metrics: MetricRow,
    pub report: EvalReport,
}

/// Mean and sample standard deviation over the settings of one method and cutoff.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub cutoff: Option<u32>,
    pub n_settings: usize,
    pub mean: MetricRow,
    pub std: MetricRow,
}

/// Wall time of one training job; kept out of the deterministic outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingTiming {
    pub train_year: i32,
    pub sampler: SamplerMethod,
    pub pe_variant: PeVariant,
    pub seconds: f64,
    pub final_loss: f64,
    pub final_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub protocol: String,
    pub label_fraction: f64,
    pub truncation_grid: TruncationGrid,
    pub seq_len: usize,
    pub forward_macs_per_sequence: u64,
    pub methods: Vec<MethodSpec>,
    pub folds: Vec<FoldSpec>,
    pub settings: Vec<SettingResult>,
    pub summaries: Vec<MethodSummary>,
    #[serde(skip)]
    pub timings: Vec<TrainingTiming>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Per-(method, cutoff) summaries in method order, cutoffs ascending with full season last.
pub fn summarize(methods: &[MethodSpec], settings: &[SettingResult]) -> Vec<MethodSummary> {
    let mut out = Vec::new();
    for m in methods {
        let mut by_cutoff: BTreeMap<(bool, u32), Vec<&SettingResult>> = BTreeMap::new();
        for s in settings.iter().filter(|s| s.method == m.name) {
            by_cutoff
                .entry((s.cutoff.is_none(), s.cutoff.unwrap_or(0)))
                .or_default()
                .push(s);
        }
        for ((_, _), group) in by_cutoff {
            let mut mean = [0.0; 6];
            let mut std = [0.0; 6];
            for i in 0..6 {
                let vals: Vec<f64> = group.iter().map(|s| s.metrics.values()[i]).collect();
                (mean[i], std[i]) = mean_std(&vals);
            }
            out.push(MethodSummary {
                method: m.name.clone(),
                cutoff: group[0].cutoff,
                n_settings: group.len(),
                mean: MetricRow::from_values(mean),
                std: MetricRow::from_values(std),
            });
        }
    }
    out
}

impl BenchResult {
    pub fn summary(&self, method: &str, cutoff: Option<u32>) -> Option<&MethodSummary> {
        self.summaries
            .iter()
            .find(|s| s.method == method && s.cutoff == cutoff)
    }

    /// Checks that stored summaries match a recomputation from the settings.
    pub fn check(&self) -> Result<()> {
        if self.settings.is_empty() {
            return Err(Error::InvalidInput(
                "benchmark result has no settings".into(),
            ));
        }
        if summarize(&self.methods, &self.settings) != self.summaries {
            return Err(Error::Invariant(
                "stored summaries disagree with per-setting results".into(),
            ));
        }
        Ok(())
    }
}

/// Gathers the test sequences of one year for a method, truncated if asked.
pub fn evaluation_set(
    data: &YearData,
    sampler: SamplerMethod,
    pe: PeVariant,
    length: usize,
    cutoff: Option<u32>,
    grid: TruncationGrid,
) -> Result<SequenceSet> {
    let full_input = SamplerInput::from_cube(&data.cube, data.obs_gdd.clone())?;
    let (cube, gdd) = match cutoff {
        Some(day) => {
            let cut = data.cube.truncate_to_day(day)?;
            let t = cut.obs_days.len();
            (cut, data.obs_gdd[..t].to_vec())
        }
        None => (data.cube.clone(), data.obs_gdd.clone()),
    };
    let input = SamplerInput::from_cube(&cube, gdd.clone())?;
    let selection = match (cutoff, grid) {
        (Some(_), TruncationGrid::Keep) => sampler.select_on_grid(&input, &full_input, length)?,
        _ => sampler.select(&input, length)?,
    };
    let gathered = apply_selection(&cube, &selection, Some(&gdd))?;
    SequenceSet::new(vec![(gathered, cube.labels.clone())], pe)
}

type FoldOutput = (Vec<FoldSpec>, Vec<SettingResult>, Vec<TrainingTiming>);

fn run_fold(
    dataset: &BenchDataset,
    cfg: &BenchConfig,
    plan: &RunPlan,
    train_year: i32,
    test_years: &[i32],
) -> Result<FoldOutput> {
    let (c, k) = (dataset.n_channels(), dataset.n_classes());
    let length = cfg.model.seq_len;
    let seed = fold_seed(cfg.seed, train_year);
    let train_data = dataset.year(train_year)?;
    let mut fold_specs = Vec::new();
    let mut settings = Vec::new();
    let mut timings = Vec::new();
    let mut trained: BTreeMap<(SamplerMethod, PeVariant), (ClassifierParams, usize)> =
        BTreeMap::new();
    for method in &cfg.methods {
        let key = method.training_key();
        if trained.contains_key(&key) {
            continue;
        }
        let spec = FoldSpec {
            train_year,
            test_years: test_years.to_vec(),
            sampler: method.sampler,
            pe_variant: method.pe,
            label_fraction: plan.label_fraction,
            truncation_day: None,
            seed,
        };
        spec.validate()?;
        let site = crate::model::SiteYear {
            cube: &train_data.cube,
            obs_gdd: &train_data.obs_gdd,
        };
        let mut set = SequenceSet::from_sites(&[site], method.sampler, length, method.pe)?;
        // the subset depends on the fold seed only, so every method sees the same pixels
        let pixels = subsample_pixels(&set.pixels, plan.label_fraction, seed)?;
        set = set.with_pixels(pixels);
        let model_cfg = cfg.model.build(c, k, method.pe);
        let train_cfg = crate::model::TrainConfig {
            seed,
            ..cfg.train.clone()
        };
        let start = Instant::now();
        let result = train(&model_cfg, &train_cfg, &set)?;
        let last = result.history.last().expect("at least one epoch");
        timings.push(TrainingTiming {
            train_year,
            sampler: method.sampler,
            pe_variant: method.pe,
            seconds: start.elapsed().as_secs_f64(),
            final_loss: last.loss,
            final_accuracy: last.accuracy,
        });
        trained.insert(key, (result.params, set.len()));
        fold_specs.push(spec);
    }

    for &test_year in test_years {
        let test_data = dataset.year(test_year)?;
        for method in &cfg.methods {
            let (params, n_train) = &trained[&method.training_key()];
            for &cutoff in &plan.cutoffs {
                let set = evaluation_set(
                    test_data,
                    method.sampler,
                    method.pe,
                    length,
                    cutoff,
                    plan.truncation_grid,
                )?;
                let inference = if method.mc_dropout {
                    Inference::McDropout {
                        members: cfg.eval.mc_members,
                        rate: cfg.eval.mc_rate,
                        seed: crate::model::mix_seed(seed, test_year as i64 as u64),
                    }
                } else {
                    Inference::Deterministic
                };
                let probs = predict_set(params, &set, inference, cfg.eval.batch_size)?;
                let report = evaluate(probs.view(), &set.all_labels(), k, cfg.eval.ece_bins)?;
                settings.push(SettingResult {
                    method: method.name.clone(),
                    train_year,
                    test_year,
                    cutoff,
                    label_fraction: plan.label_fraction,
                    n_train_pixels: *n_train,
                    metrics: MetricRow::from_report(&report),
                    report,
                });
            }
        }
    }
    Ok((fold_specs, settings, timings))
}

/// Trains every distinct (sampler, PE) pair once per fold and evaluates all
/// methods on every test year and cutoff of `plan`.
pub fn run_plan(dataset: &BenchDataset, cfg: &BenchConfig, plan: &RunPlan) -> Result<BenchResult> {
    run_plan_threaded(dataset, cfg, plan, 1)
}

/// [`run_plan`] with folds spread over `threads` workers. Outputs do not
/// depend on the thread count; only the timings do.
pub fn run_plan_threaded(
    dataset: &BenchDataset,
    cfg: &BenchConfig,
    plan: &RunPlan,
    threads: usize,
) -> Result<BenchResult> {
    cfg.validate()?;
    if threads == 0 {
        return Err(Error::Config("thread count must be ≥ 1".into()));
    }
    if !(plan.label_fraction > 0.0 && plan.label_fraction <= 1.0) {
        return Err(Error::Config(format!(
            "label fraction {} outside (0, 1]",
            plan.label_fraction
        )));
    }
    if plan.cutoffs.is_empty() {
        return Err(Error::Config("run plan has no evaluation cutoffs".into()));
    }
    let years: Vec<i32> = dataset.years.iter().map(|y| y.year).collect();
    let folds = cross_year_folds(&years)?;
    for &cutoff in plan.cutoffs.iter().flatten() {
        for y in &dataset.years {
            y.cube.truncate_to_day(cutoff)?;
        }
    }

    let outputs: Vec<Result<FoldOutput>> = if threads == 1 {
        folds
            .iter()
            .map(|(train_year, tests)| run_fold(dataset, cfg, plan, *train_year, tests))
            .collect()
    } else {
        let mut slots: Vec<Option<Result<FoldOutput>>> = (0..folds.len()).map(|_| None).collect();
        let chunk = folds.len().div_ceil(threads);
        std::thread::scope(|scope| {
            for (folds, slots) in folds.chunks(chunk).zip(slots.chunks_mut(chunk)) {
                scope.spawn(move || {
                    for ((train_year, tests), slot) in folds.iter().zip(slots.iter_mut()) {
                        *slot = Some(run_fold(dataset, cfg, plan, *train_year, tests));
                    }
                });
            }
        });
        slots
            .into_iter()
            .map(|s| s.expect("every fold ran"))
            .collect()
    };

    let mut fold_specs = Vec::new();
    let mut settings = Vec::new();
    let mut timings = Vec::new();
    for out in outputs {
        let (f, s, t) = out?;
        fold_specs.extend(f);
        settings.extend(s);
        timings.extend(t);
    }

    let summaries = summarize(&cfg.methods, &settings);
    let (c, k) = (dataset.n_channels(), dataset.n_classes());
    Ok(BenchResult {
        protocol: plan.protocol.clone(),
        label_fraction: plan.label_fraction,
        truncation_grid: plan.truncation_grid,
        seq_len: cfg.model.seq_len,
        forward_macs_per_sequence: cfg.model.build(c, k, PeVariant::Calendar).forward_macs(),
        methods: cfg.methods.clone(),
        folds: fold_specs,
        settings,
        summaries,
        timings,
    })
}

impl RunPlan {
    pub fn cross_year(cfg: &BenchConfig) -> Self {
        Self {
            protocol: "cross-year".into(),
            label_fraction: 1.0,
            cutoffs: vec![None],
            truncation_grid: cfg.protocol.truncation_grid,
        }
    }

    pub fn low_data(cfg: &BenchConfig, fraction: f64) -> Self {
        Self {
            protocol: "low-data".into(),
            label_fraction: fraction,
            cutoffs: vec![None],
            truncation_grid: cfg.protocol.truncation_grid,
        }
    }

    /// Each cutoff day once, ascending, followed by the full season.
    pub fn early_season(cutoffs: &[u32], grid: TruncationGrid) -> Self {
        let mut days = cutoffs.to_vec();
        days.sort_unstable();
        days.dedup();
        let mut plan_cutoffs: Vec<Option<u32>> = days.into_iter().map(Some).collect();
        plan_cutoffs.push(None);
        Self {
            protocol: "early-season".into(),
            label_fraction: 1.0,
            cutoffs: plan_cutoffs,
            truncation_grid: grid,
        }
    }
}

/// Train on each year, test on every other year, full season.
pub fn cross_year_run(dataset: &BenchDataset, cfg: &BenchConfig) -> Result<BenchResult> {
    run_plan(dataset, cfg, &RunPlan::cross_year(cfg))
}

/// Cross-year folds with a fixed random fraction of the training labels.
pub fn low_data_run(
    dataset: &BenchDataset,
    cfg: &BenchConfig,
    fraction: f64,
) -> Result<BenchResult> {
    run_plan(dataset, cfg, &RunPlan::low_data(cfg, fraction))
}

/// Full-season models evaluated on test series truncated at each cutoff day,
/// plus the full-season reference.
pub fn early_season_run(
    dataset: &BenchDataset,
    cfg: &BenchConfig,
    cutoffs: &[u32],
    grid: TruncationGrid,
) -> Result<BenchResult> {
    run_plan(dataset, cfg, &RunPlan::early_season(cutoffs, grid))
}

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::json;

use t3s::bench::{
    evaluation_set, fold_seed, generate_years, render_report, run_plan_threaded, BenchConfig,
    BenchDataset, BenchResult, RunManifest, RunPlan, TruncationGrid, YearData,
};
use t3s::cubeio::{read_cube, write_cube};
use t3s::metrics::evaluate;
use t3s::model::{
    history_csv, load_checkpoint, predict_set, save_checkpoint, subsample_pixels, train, Inference,
    SequenceSet, SiteYear, TrainConfig,
};
use t3s::sampling::{SamplerInput, SamplerMethod};
use t3s::thermal::{
    cumulative_gdd, gdd_at_observations, load_temperature_csv, write_temperature_csv, ThermalConfig,
};

use crate::{
    BenchArgs, Cli, Command, EvalArgs, GddArgs, Protocol, ReportArgs, SampleArgs, SynthAction,
    SynthGenArgs, TrainArgs,
};

/// Flag combinations clap cannot reject on its own.
#[derive(Debug)]
pub struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Written next to a checkpoint so `eval` can rebuild the same sequences.
#[derive(Debug, Serialize, Deserialize)]
struct TrainInfo {
    sampler: SamplerMethod,
    label_fraction: f64,
    n_train_pixels: usize,
    t_base: f64,
}

const TRAIN_INFO_FILE: &str = "train-info.json";

struct RunContext {
    seed: Option<u64>,
    threads: usize,
    args: Vec<String>,
}

impl RunContext {
    fn manifest(&self, subcommand: &str, config: serde_json::Value) -> RunManifest {
        let mut m = RunManifest::new(subcommand, self.args.clone(), config);
        m.threads = self.threads;
        m
    }
}

pub fn run(cli: Cli) -> Result<()> {
    if cli.threads == 0 {
        return Err(usage("--threads must be at least 1"));
    }
    let ctx = RunContext {
        seed: cli.seed,
        threads: cli.threads,
        args: std::env::args().skip(1).collect(),
    };
    match cli.command {
        Command::Synth {
            action: SynthAction::Gen(a),
        } => synth_gen(&ctx, a),
        Command::Gdd(a) => gdd(&ctx, a),
        Command::Sample(a) => sample(&ctx, a),
        Command::Train(a) => train_cmd(&ctx, a),
        Command::Eval(a) => eval(&ctx, a),
        Command::Bench(a) => bench(&ctx, a),
        Command::Report(a) => report(&ctx, a),
    }
}

fn load_config(path: Option<&Path>) -> Result<BenchConfig> {
    Ok(match path {
        Some(p) => BenchConfig::load(p)?,
        None => BenchConfig::default(),
    })
}

fn config_json(cfg: &BenchConfig) -> Result<serde_json::Value> {
    Ok(serde_json::to_value(cfg)?)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<PathBuf> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
    Ok(path.to_path_buf())
}

fn load_site(cube: &Path, temps: &Path, t_base: f64) -> Result<YearData> {
    let cube = read_cube(cube)?;
    let series = cumulative_gdd(&load_temperature_csv(temps)?, &ThermalConfig { t_base })?;
    let obs_gdd = gdd_at_observations(&series, &cube.obs_days)?;
    Ok(YearData {
        year: cube.year,
        cube,
        obs_gdd,
    })
}

fn synth_gen(ctx: &RunContext, a: SynthGenArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(seed) = ctx.seed {
        cfg.dataset.seed = seed;
    }
    let out = &a.out.out;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut outputs = Vec::new();
    for (year, gen) in generate_years(&cfg)? {
        let dir = out.join(format!("cube_{year}"));
        write_cube(&gen.cube, &dir)?;
        for name in [
            "manifest.json",
            "reflectance.u16",
            "cloud.u8",
            "labels.u8",
            "days.u16",
        ] {
            outputs.push(dir.join(name));
        }
        let temps = out.join(format!("temps_{year}.csv"));
        let file =
            fs::File::create(&temps).with_context(|| format!("creating {}", temps.display()))?;
        write_temperature_csv(file, &gen.temperatures)?;
        outputs.push(temps);
    }
    let config_path = out.join("config.toml");
    fs::write(&config_path, cfg.to_toml_string()?)?;
    outputs.push(config_path);

    let mut m = ctx
        .manifest("synth gen", config_json(&cfg)?)
        .with_seed("dataset", cfg.dataset.seed)
        .with_seed("climate", cfg.climate.seed)
        .with_seed("clouds", cfg.clouds.seed);
    if let Some(p) = &a.config {
        m.inputs = t3s::bench::hash_inputs(p)?;
    }
    m.add_outputs(&outputs)?;
    m.write(out)?;
    Ok(())
}

fn gdd(ctx: &RunContext, a: GddArgs) -> Result<()> {
    let temps = load_temperature_csv(&a.temps)?;
    let series = cumulative_gdd(&temps, &ThermalConfig { t_base: a.t_base })?;
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "day_of_year,gdd_daily,gdd_cumulative")?;
    for i in 0..series.len() {
        writeln!(
            stdout,
            "{},{},{}",
            series.day_of_year[i], series.gdd_daily[i], series.gdd_cumulative[i]
        )?;
    }
    let mut m = ctx.manifest("gdd", json!({ "t_base": a.t_base }));
    m.inputs = t3s::bench::hash_inputs(&a.temps)?;
    m.write(&a.out.out)?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct SampleOutput {
    method: SamplerMethod,
    length: usize,
    indices: Vec<usize>,
    days: Vec<u32>,
    gdd: Vec<f64>,
    clear_counts: Vec<usize>,
    valid: Vec<bool>,
}

fn sample(ctx: &RunContext, a: SampleArgs) -> Result<()> {
    let site = load_site(&a.cube, &a.temps, a.t_base)?;
    let method: SamplerMethod = a.method.into();
    let input = SamplerInput::from_cube(&site.cube, site.obs_gdd.clone())?;
    let sel = method.select(&input, a.length)?;
    let out = SampleOutput {
        method,
        length: a.length,
        days: sel.indices.iter().map(|&i| input.obs_days[i]).collect(),
        gdd: sel.indices.iter().map(|&i| input.obs_gdd[i]).collect(),
        clear_counts: sel.indices.iter().map(|&i| input.clear_counts[i]).collect(),
        indices: sel.indices,
        valid: sel.valid,
    };
    println!("{}", serde_json::to_string_pretty(&out)?);
    let mut m = ctx.manifest(
        "sample",
        json!({ "method": method, "length": a.length, "t_base": a.t_base }),
    );
    m.inputs = t3s::bench::hash_inputs(&a.cube)?;
    m.inputs.extend(t3s::bench::hash_inputs(&a.temps)?);
    m.write(&a.out.out)?;
    Ok(())
}

fn train_cmd(ctx: &RunContext, a: TrainArgs) -> Result<()> {
    if a.cube.len() != a.temps.len() {
        return Err(usage(format!(
            "{} --cube paths but {} --temps paths",
            a.cube.len(),
            a.temps.len()
        )));
    }
    let cfg = load_config(a.config.as_deref())?;
    let seed = ctx.seed.unwrap_or(cfg.seed);
    let t_base = cfg.dataset.t_base;
    let sites = a
        .cube
        .iter()
        .zip(&a.temps)
        .map(|(c, t)| load_site(c, t, t_base))
        .collect::<Result<Vec<_>>>()?;
    let dataset = BenchDataset::from_years(sites)?;
    let refs: Vec<SiteYear<'_>> = dataset
        .years
        .iter()
        .map(|y| SiteYear {
            cube: &y.cube,
            obs_gdd: &y.obs_gdd,
        })
        .collect();
    let sampler: SamplerMethod = a.sampler.into();
    let pe = a.pe.into();
    let set = SequenceSet::from_sites(&refs, sampler, cfg.model.seq_len, pe)?;
    let pixels = subsample_pixels(&set.pixels, a.label_fraction, seed)?;
    let set = set.with_pixels(pixels);
    let model_cfg = cfg
        .model
        .build(dataset.n_channels(), dataset.n_classes(), pe);
    let train_cfg = TrainConfig {
        seed,
        ..cfg.train.clone()
    };

    let start = Instant::now();
    let trained = train(&model_cfg, &train_cfg, &set)?;
    let seconds = start.elapsed().as_secs_f64();

    let out = &a.out.out;
    save_checkpoint(&trained.params, seed, trained.history.len(), out)?;
    let history = out.join("history.csv");
    fs::write(&history, history_csv(&trained.history))?;
    let info = write_json(
        &out.join(TRAIN_INFO_FILE),
        &TrainInfo {
            sampler,
            label_fraction: a.label_fraction,
            n_train_pixels: set.len(),
            t_base,
        },
    )?;
    if let Some(last) = trained.history.last() {
        eprintln!(
            "trained {} epochs on {} pixels in {seconds:.1} s: loss {:.4}, accuracy {:.4}",
            trained.history.len(),
            set.len(),
            last.loss,
            last.accuracy
        );
    }

    let mut m = ctx
        .manifest(
            "train",
            json!({
                "model": model_cfg,
                "train": train_cfg,
                "sampler": sampler,
                "label_fraction": a.label_fraction,
                "t_base": t_base,
            }),
        )
        .with_seed("train", seed);
    m.runtime = json!({ "train_seconds": seconds });
    for p in a.cube.iter().chain(&a.temps).chain(&a.config) {
        m.inputs.extend(t3s::bench::hash_inputs(p)?);
    }
    m.add_outputs(&[
        out.join(t3s::model::CHECKPOINT_FILE),
        out.join(t3s::model::PARAMS_FILE),
        history,
        info,
    ])?;
    m.write(out)?;
    Ok(())
}

fn eval(ctx: &RunContext, a: EvalArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let (params, ckpt) = load_checkpoint(&a.checkpoint)?;
    let info_path = a.checkpoint.join(TRAIN_INFO_FILE);
    let info: Option<TrainInfo> = match fs::read_to_string(&info_path) {
        Ok(text) => Some(
            serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", info_path.display()))?,
        ),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(e).with_context(|| format!("reading {}", info_path.display())),
    };
    let sampler: SamplerMethod = match (a.sampler, &info) {
        (Some(s), _) => s.into(),
        (None, Some(i)) => i.sampler,
        (None, None) => {
            return Err(usage(
                "no train-info.json next to the checkpoint; pass --sampler",
            ))
        }
    };
    let t_base = info.as_ref().map_or(cfg.dataset.t_base, |i| i.t_base);
    let site = load_site(&a.cube, &a.temps, t_base)?;
    let model = &params.config;
    if site.cube.channel_names.len() != model.in_channels
        || site.cube.class_names.len() != model.n_classes
    {
        return Err(t3s::Error::InvalidInput(format!(
            "cube has {} channels and {} classes, checkpoint expects {} and {}",
            site.cube.channel_names.len(),
            site.cube.class_names.len(),
            model.in_channels,
            model.n_classes
        ))
        .into());
    }
    let grid: TruncationGrid = a.truncation_grid.into();
    let set = evaluation_set(
        &site,
        sampler,
        model.pe_variant,
        model.seq_len,
        a.cutoff,
        grid,
    )?;
    let seed = ctx.seed.unwrap_or(cfg.seed);
    let inference = if a.mc_dropout {
        Inference::McDropout {
            members: cfg.eval.mc_members,
            rate: cfg.eval.mc_rate,
            seed,
        }
    } else {
        Inference::Deterministic
    };
    let probs = predict_set(&params, &set, inference, cfg.eval.batch_size)?;
    let report = evaluate(
        probs.view(),
        &set.all_labels(),
        model.n_classes,
        cfg.eval.ece_bins,
    )?;

    let out = &a.out.out;
    fs::create_dir_all(out)?;
    let report_path = write_json(&out.join("eval.json"), &report)?;
    let bins_path = out.join("reliability.csv");
    fs::write(&bins_path, report.reliability_csv())?;
    println!(
        "accuracy {:.4}  miou {:.4}  ece {:.4}  nll {:.4}  brier {:.4}",
        report.accuracy, report.miou, report.ece, report.nll, report.brier
    );

    let mut m = ctx
        .manifest(
            "eval",
            json!({
                "eval": cfg.eval,
                "sampler": sampler,
                "inference": inference,
                "cutoff": a.cutoff,
                "truncation_grid": grid,
                "t_base": t_base,
                "checkpoint_seed": ckpt.seed,
            }),
        )
        .with_seed("eval", seed);
    for p in [&a.checkpoint, &a.cube, &a.temps]
        .into_iter()
        .chain(&a.config)
    {
        m.inputs.extend(t3s::bench::hash_inputs(p)?);
    }
    m.add_outputs(&[report_path, bins_path])?;
    m.write(out)?;
    Ok(())
}

fn bench(ctx: &RunContext, a: BenchArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(seed) = ctx.seed {
        cfg.seed = seed;
    }
    if let Some(g) = a.truncation_grid {
        cfg.protocol.truncation_grid = g.into();
    }
    if let Some(f) = a.label_fraction {
        cfg.protocol.label_fraction = f;
    }
    if !a.cutoff.is_empty() {
        cfg.protocol.cutoffs = a.cutoff.clone();
    }
    cfg.validate()?;
    let plan = match a.protocol {
        Protocol::CrossYear => RunPlan::cross_year(&cfg),
        Protocol::LowData => RunPlan::low_data(&cfg, cfg.protocol.label_fraction),
        Protocol::EarlySeason => {
            RunPlan::early_season(&cfg.protocol.cutoffs, cfg.protocol.truncation_grid)
        }
    };

    let start = Instant::now();
    let dataset = BenchDataset::generate(&cfg)?;
    let result = run_plan_threaded(&dataset, &cfg, &plan, ctx.threads)?;
    let seconds = start.elapsed().as_secs_f64();

    let out = &a.out.out;
    let written = render_report(&result)?.write(out)?;
    print_summary(&result);

    let mut m = ctx
        .manifest("bench", config_json(&cfg)?)
        .with_seed("bench", cfg.seed)
        .with_seed("dataset", cfg.dataset.seed)
        .with_seed("climate", cfg.climate.seed)
        .with_seed("clouds", cfg.clouds.seed);
    for &year in &cfg.years {
        m = m.with_seed(&format!("fold_{year}"), fold_seed(cfg.seed, year));
    }
    m.runtime = json!({ "total_seconds": seconds, "trainings": result.timings });
    if let Some(p) = &a.config {
        m.inputs = t3s::bench::hash_inputs(p)?;
    }
    m.add_outputs(&written)?;
    m.write(out)?;
    Ok(())
}

fn print_summary(result: &BenchResult) {
    println!(
        "{:<14} {:>8} {:>16} {:>16} {:>8}",
        "method", "cutoff", "accuracy", "ece", "miou"
    );
    for s in &result.summaries {
        let cutoff = s
            .cutoff
            .map_or_else(|| "full".to_string(), |d| d.to_string());
        println!(
            "{:<14} {:>8} {:>8.4} ± {:.4} {:>8.4} ± {:.4} {:>8.4}",
            s.method, cutoff, s.mean.accuracy, s.std.accuracy, s.mean.ece, s.std.ece, s.mean.miou
        );
    }
}

fn report(ctx: &RunContext, a: ReportArgs) -> Result<()> {
    let text = fs::read_to_string(&a.results)
        .with_context(|| format!("reading {}", a.results.display()))?;
    let result: BenchResult = serde_json::from_str(&text).map_err(|e| t3s::Error::Parse {
        what: "results.json".into(),
        detail: e.to_string(),
    })?;
    let written = render_report(&result)?.write(&a.out.out)?;
    print_summary(&result);
    let mut m = ctx.manifest("report", json!({ "protocol": result.protocol }));
    m.inputs = t3s::bench::hash_inputs(&a.results)?;
    m.add_outputs(&written)?;
    m.write(&a.out.out)?;
    Ok(())
}

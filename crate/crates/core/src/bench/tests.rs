use super::*;
use crate::model::{subsample_pixels, PeVariant, SequenceSet, SiteYear};
use crate::sampling::SamplerMethod;

fn tiny_config() -> BenchConfig {
    let mut cfg = BenchConfig::default();
    cfg.dataset.height = 16;
    cfg.dataset.width = 16;
    cfg.dataset.field_size = 4;
    cfg.dataset.class_counts = vec![5, 4, 3, 2, 1, 1];
    cfg.dataset.obs_every_n_days = 5;
    cfg.clouds.blob_radius = (2.0, 6.0);
    cfg.model.d_model = 16;
    cfg.model.n_head = 2;
    cfg.model.mlp_hidden = 8;
    cfg.model.seq_len = 12;
    cfg.train.epochs = 2;
    cfg.train.batch_size = 32;
    cfg.train.samples_per_epoch = Some(64);
    cfg.methods = vec![
        MethodSpec::new(
            "baseline",
            SamplerMethod::Uniform,
            PeVariant::Calendar,
            false,
        ),
        MethodSpec::new("mc", SamplerMethod::Uniform, PeVariant::Calendar, true),
        MethodSpec::new("t3s", SamplerMethod::T3s, PeVariant::Linear, false),
    ];
    cfg
}

#[test]
fn three_years_give_six_settings() {
    let folds = cross_year_folds(&[2019, 2020, 2021]).unwrap();
    let pairs: usize = folds.iter().map(|(_, t)| t.len()).sum();
    assert_eq!(pairs, 6);
    assert!(folds.iter().all(|(train, tests)| !tests.contains(train)));
    assert!(cross_year_folds(&[2020]).is_err());
}

#[test]
fn cross_year_result_is_consistent_and_reproducible() {
    let cfg = tiny_config();
    let data = BenchDataset::generate(&cfg).unwrap();
    let a = cross_year_run(&data, &cfg).unwrap();
    assert_eq!(a.settings.len(), 6 * cfg.methods.len());
    assert_eq!(a.summaries.len(), cfg.methods.len());
    assert!(a.summaries.iter().all(|s| s.n_settings == 6));
    // the MC row reuses the baseline model
    assert_eq!(a.timings.len(), 3 * 2);
    a.check().unwrap();
    let b = cross_year_run(&data, &cfg).unwrap();
    assert_eq!(results_csv(&a), results_csv(&b));

    let files = render_report(&a).unwrap();
    assert_eq!(files, render_report(&a).unwrap());
    let csv = String::from_utf8(files.get("results.csv").unwrap().to_vec()).unwrap();
    assert_eq!(csv.lines().next(), Some(RESULTS_CSV_HEADER));
    assert!(files.get("plots/reliability.svg").is_some());

    let mut tampered = a.clone();
    tampered.summaries[0].mean.accuracy += 0.01;
    assert!(tampered.check().is_err());
    let mut empty = a;
    empty.settings.clear();
    empty.summaries.clear();
    assert!(render_report(&empty).is_err());
}

#[test]
fn single_year_dataset_rejected() {
    let mut cfg = tiny_config();
    cfg.years = vec![2020];
    let data = BenchDataset::generate(&cfg).unwrap();
    assert!(cross_year_run(&data, &cfg).is_err());
}

#[test]
fn full_fraction_matches_cross_year() {
    let mut cfg = tiny_config();
    cfg.methods.truncate(1);
    let data = BenchDataset::generate(&cfg).unwrap();
    let full = cross_year_run(&data, &cfg).unwrap();
    let low = low_data_run(&data, &cfg, 1.0).unwrap();
    assert_eq!(full.settings, low.settings);
    assert!(low_data_run(&data, &cfg, 0.0).is_err());
}

#[test]
fn label_subset_is_shared_across_methods() {
    let cfg = tiny_config();
    let data = BenchDataset::generate(&cfg).unwrap();
    let y = &data.years[0];
    let site = [SiteYear {
        cube: &y.cube,
        obs_gdd: &y.obs_gdd,
    }];
    let uniform =
        SequenceSet::from_sites(&site, SamplerMethod::Uniform, 12, PeVariant::Calendar).unwrap();
    let t3s = SequenceSet::from_sites(&site, SamplerMethod::T3s, 12, PeVariant::Linear).unwrap();
    let a = subsample_pixels(&uniform.pixels, 0.1, 5).unwrap();
    let b = subsample_pixels(&t3s.pixels, 0.1, 5).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 26);
}

#[test]
fn early_season_cutoffs() {
    let mut cfg = tiny_config();
    cfg.methods = vec![MethodSpec::new(
        "t3s",
        SamplerMethod::T3s,
        PeVariant::Linear,
        false,
    )];
    let data = BenchDataset::generate(&cfg).unwrap();
    let r = early_season_run(&data, &cfg, &[365], TruncationGrid::Rescale).unwrap();
    let late = r.summary("t3s", Some(365)).unwrap();
    let full = r.summary("t3s", None).unwrap();
    assert_eq!(late.mean, full.mean);
    assert!(early_season_run(&data, &cfg, &[0], TruncationGrid::Rescale).is_err());

    let keep = early_season_run(&data, &cfg, &[181], TruncationGrid::Keep).unwrap();
    assert_eq!(keep.summaries.len(), 2);
    let svg = accuracy_vs_cutoff_svg(&keep);
    assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
}

#[test]
fn thread_count_does_not_change_results() {
    let mut cfg = tiny_config();
    cfg.methods.truncate(1);
    let data = BenchDataset::generate(&cfg).unwrap();
    let plan = RunPlan::cross_year(&cfg);
    let one = run_plan(&data, &cfg, &plan).unwrap();
    let three = run_plan_threaded(&data, &cfg, &plan, 3).unwrap();
    assert_eq!(results_csv(&one), results_csv(&three));
    assert_eq!(one.folds, three.folds);
    assert!(run_plan_threaded(&data, &cfg, &plan, 0).is_err());
}

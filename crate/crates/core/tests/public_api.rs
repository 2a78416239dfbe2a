use std::path::Path;

use proptest::prelude::*;
use t3s::bench::BenchConfig;
use t3s::cubeio::{read_cube, read_manifest, write_cube};
use t3s::model::{predict_set, train, PeVariant, SequenceSet, SiteYear, TrainConfig};
use t3s::sampling::SamplerMethod;
use t3s::synth::{gen_cube, ClimateModel, CloudModel, CubeSpec, FieldLayout, PhenologyParams};
use t3s::thermal::{gdd_at_observations, ThermalConfig};

#[test]
fn shipped_config_matches_defaults() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.toml");
    assert_eq!(BenchConfig::load(&path).unwrap(), BenchConfig::default());
}

fn small_year(year: i32, seed: u64) -> (t3s::cubeio::DataCube, Vec<f64>) {
    let layout = FieldLayout::grid(12, 12, 4, &[3, 2, 2, 1, 1, 0], seed).unwrap();
    let gen = gen_cube(&CubeSpec {
        year,
        climate: &ClimateModel::default(),
        phenology: &PhenologyParams::default(),
        clouds: &CloudModel::default(),
        layout: &layout,
        obs_every_n_days: 7,
        thermal: ThermalConfig::default(),
        seed,
    })
    .unwrap();
    let gdd = gdd_at_observations(&gen.thermal, &gen.cube.obs_days).unwrap();
    (gen.cube, gdd)
}

#[test]
fn generate_store_train_predict() {
    let dir = tempfile::tempdir().unwrap();
    let (cube, gdd) = small_year(2020, 3);
    write_cube(&cube, dir.path()).unwrap();
    let manifest = read_manifest(dir.path()).unwrap();
    assert_eq!(manifest.year, 2020);
    let loaded = read_cube(dir.path()).unwrap();
    assert_eq!(loaded, cube);

    let site = SiteYear {
        cube: &loaded,
        obs_gdd: &gdd,
    };
    let cfg = BenchConfig::default();
    let mut shape = cfg.model.clone();
    shape.d_model = 16;
    shape.n_head = 2;
    shape.seq_len = 12;
    let model = shape.build(4, 6, PeVariant::Linear);
    let set = SequenceSet::from_sites(&[site], SamplerMethod::T3s, 12, PeVariant::Linear).unwrap();
    let trained = train(
        &model,
        &TrainConfig {
            epochs: 2,
            batch_size: 16,
            ..TrainConfig::default()
        },
        &set,
    )
    .unwrap();
    let probs = predict_set(&trained.params, &set, t3s::model::Inference::Deterministic, 64).unwrap();
    assert_eq!(probs.dim(), (set.len(), 6));
    assert!(probs.rows().into_iter().all(|r| (r.sum() - 1.0).abs() < 1e-9));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn generated_cubes_round_trip(seed in 0u64..1000, year in 2000i32..2030) {
        let dir = tempfile::tempdir().unwrap();
        let (cube, _) = small_year(year, seed);
        write_cube(&cube, dir.path()).unwrap();
        prop_assert_eq!(read_cube(dir.path()).unwrap(), cube);
    }
}

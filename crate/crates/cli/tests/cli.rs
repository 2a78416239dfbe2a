use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
years = [2019, 2020]

[dataset]
height = 16
width = 16
field_size = 4
class_counts = [5, 4, 3, 2, 1, 1]
obs_every_n_days = 5

[model]
d_model = 16
n_head = 2
mlp_hidden = 8
seq_len = 12

[train]
epochs = 2
batch_size = 32
samples_per_epoch = 64

[[methods]]
name = "baseline"
sampler = "uniform"
pe = "calendarPE"

[[methods]]
name = "t3s"
sampler = "t3s"
pe = "linearPE"
"#;

fn t3s(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_t3s"))
        .current_dir(dir)
        .env_remove("T3S_OUT_DIR")
        .args(args)
        .output()
        .unwrap()
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("small.toml"), SMALL).unwrap();
    ok(t3s(dir.path(), &["synth", "gen", "--config", "small.toml", "--out", "data"]));
    dir
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("run-manifest.json")).unwrap()).unwrap()
}

#[test]
fn gdd_prints_csv() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("year.csv"),
        "day_of_year,t_min,t_max\n1,5,15\n2,-8,-2\n3,0,3\n",
    )
    .unwrap();
    let stdout = ok(t3s(dir.path(), &["gdd", "--temps", "year.csv"]));
    assert_eq!(
        stdout,
        "day_of_year,gdd_daily,gdd_cumulative\n1,10,10\n2,0,10\n3,1.5,11.5\n"
    );
    let m = manifest(dir.path());
    assert_eq!(m["subcommand"], "gdd");
    assert_eq!(m["inputs"].as_array().unwrap().len(), 1);
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = t3s(dir.path(), &["gdd", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(t3s(dir.path(), &["frobnicate"]).status.code(), Some(1));
}

#[test]
fn bad_data_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir(dir.path().join("empty")).unwrap();
    fs::write(dir.path().join("t.csv"), "day_of_year,t_min,t_max\n1,0,1\n").unwrap();
    let out = t3s(
        dir.path(),
        &["sample", "--method", "t3s", "--cube", "empty", "--temps", "t.csv"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("manifest.json"));

    fs::write(dir.path().join("bad.csv"), "day,t_min,t_max\n1,0,1\n").unwrap();
    let out = t3s(dir.path(), &["gdd", "--temps", "bad.csv"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_errors_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.toml"), "nonsense_key = 1\n").unwrap();
    let out = t3s(
        dir.path(),
        &["bench", "--protocol", "cross-year", "--config", "c.toml", "--out", "o"],
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn synth_gen_is_seeded() {
    let dir = setup();
    let p = dir.path();
    for year in [2019, 2020] {
        assert!(p.join(format!("data/cube_{year}/manifest.json")).is_file());
        assert!(p.join(format!("data/temps_{year}.csv")).is_file());
    }
    ok(t3s(p, &["synth", "gen", "--config", "small.toml", "--out", "again"]));
    ok(t3s(p, &["--seed", "9", "synth", "gen", "--config", "small.toml", "--out", "other"]));
    let read = |d: &str| fs::read(p.join(d).join("cube_2019/reflectance.u16")).unwrap();
    assert_eq!(read("data"), read("again"));
    assert_ne!(read("data"), read("other"));
    let m = manifest(&p.join("other"));
    assert_eq!(m["seeds"]["dataset"], 9);
    assert_eq!(m["outputs"].as_array().unwrap().len(), 2 * 6 + 1);
}

#[test]
fn sample_emits_selection_json() {
    let dir = setup();
    let stdout = ok(t3s(
        dir.path(),
        &[
            "sample", "--method", "t3s", "--length", "8", "--cube", "data/cube_2020", "--temps",
            "data/temps_2020.csv",
        ],
    ));
    let v: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(v["method"], "t3s");
    let n = v["indices"].as_array().unwrap().len();
    assert!((1..=8).contains(&n));
    assert_eq!(v["days"].as_array().unwrap().len(), n);
    assert_eq!(v["gdd"].as_array().unwrap().len(), n);
    assert_eq!(v["valid"].as_array().unwrap().len(), 8);
}

#[test]
fn train_then_eval_is_reproducible() {
    let dir = setup();
    let p = dir.path();
    let train = |out: &str| {
        ok(t3s(
            p,
            &[
                "--seed", "3", "train", "--config", "small.toml", "--cube", "data/cube_2019", "--temps",
                "data/temps_2019.csv", "--sampler", "t3s", "--pe", "linear", "--out", out,
            ],
        ))
    };
    train("m1");
    train("m2");
    assert_eq!(
        fs::read(p.join("m1/params.f64")).unwrap(),
        fs::read(p.join("m2/params.f64")).unwrap()
    );
    assert_eq!(
        fs::read_to_string(p.join("m1/history.csv")).unwrap().lines().next(),
        Some("epoch,loss,accuracy,lr")
    );
    assert_eq!(manifest(&p.join("m1"))["seeds"]["train"], 3);

    let eval = |out: &str| {
        ok(t3s(
            p,
            &[
                "eval", "--config", "small.toml", "--checkpoint", "m1", "--cube", "data/cube_2020", "--temps",
                "data/temps_2020.csv", "--mc-dropout", "--cutoff", "200", "--out", out,
            ],
        ))
    };
    eval("e1");
    eval("e2");
    let a = fs::read(p.join("e1/eval.json")).unwrap();
    assert_eq!(a, fs::read(p.join("e2/eval.json")).unwrap());
    let report: serde_json::Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(report["n_bins"], 15);
    assert!(p.join("e1/reliability.csv").is_file());
}

#[test]
fn bench_and_report_round_trip() {
    let dir = setup();
    let p = dir.path();
    let out = Command::new(env!("CARGO_BIN_EXE_t3s"))
        .current_dir(p)
        .env("T3S_OUT_DIR", "from_env")
        .args(["bench", "--protocol", "cross-year", "--config", "small.toml"])
        .output()
        .unwrap();
    ok(out);
    for f in ["results.csv", "summary.csv", "results.json", "plots/reliability.svg", "run-manifest.json"] {
        assert!(p.join("from_env").join(f).is_file(), "{f} missing");
    }
    ok(t3s(
        p,
        &["--threads", "2", "bench", "--protocol", "cross-year", "--config", "small.toml", "--out", "again"],
    ));
    let csv = fs::read(p.join("from_env/results.csv")).unwrap();
    assert_eq!(csv, fs::read(p.join("again/results.csv")).unwrap());
    assert_eq!(String::from_utf8_lossy(&csv).lines().count(), 1 + 2 * 2);

    let m = manifest(&p.join("again"));
    assert_eq!(m["threads"], 2);
    assert!(m["seeds"]["fold_2019"].is_u64());
    assert_eq!(m["config"]["model"]["seq_len"], 12);

    ok(t3s(p, &["report", "--results", "again/results.json", "--out", "rendered"]));
    for f in ["results.csv", "summary.csv", "results.json", "plots/accuracy_vs_cutoff.svg"] {
        assert_eq!(
            fs::read(p.join("again").join(f)).unwrap(),
            fs::read(p.join("rendered").join(f)).unwrap(),
            "{f} differs"
        );
    }
}

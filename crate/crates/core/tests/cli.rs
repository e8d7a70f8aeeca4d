use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const CORPUS: &str = r#"
seed = 3
image_side = 64

[splits]
train = 5
val = 2
test = 3

[[classes]]
name = "real"
spectral_exponent = 1.8
color_bias = [0.05, 0.0, -0.05]

[[classes]]
name = "fake"
source = "real"
spectral_exponent = 1.8
checkerboard_strength = 0.4
color_bias = [0.05, 0.0, -0.05]
"#;

fn provkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_provkit"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    /// Corpus plus extracted train/val/test CSVs and a 1-NN model.
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let f = Fixture { dir };
        fs::write(f.path("corpus.toml"), CORPUS).unwrap();
        let out = provkit(&["synth", "--config", s(&f.path("corpus.toml")), "--out", s(&f.path("corpus"))]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        for split in ["train", "val", "test"] {
            let out = provkit(&[
                "extract",
                "--manifest",
                s(&f.manifest()),
                "--channels",
                "dct,rgb",
                "--dct-k",
                "64",
                "--split",
                split,
                "--out",
                s(&f.path(&format!("{split}.csv"))),
            ]);
            assert_eq!(code(&out), 0, "{}", stderr(&out));
        }
        let out = provkit(&[
            "fit",
            "--train",
            s(&f.path("train.csv")),
            "--val",
            s(&f.path("val.csv")),
            "--model",
            "knn",
            "--k",
            "1",
            "--out",
            s(&f.path("knn.json")),
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        f
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn manifest(&self) -> PathBuf {
        self.path("corpus/manifest.csv")
    }
}

#[test]
fn pipeline_writes_expected_artifacts() {
    let f = Fixture::new();
    let csv = fs::read_to_string(f.path("train.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert!(header.starts_with("label,dct.0,"));
    assert!(header.ends_with(",rgb.95"));
    assert_eq!(csv.lines().count(), 1 + 10);
    assert!(f.path("train.csv.extract.json").exists());
    assert!(f.path("knn.val.json").exists());
    assert!(f.path("knn.val.txt").exists());
    let model = fs::read_to_string(f.path("knn.json")).unwrap();
    assert!(model.contains("\"version\": \"provkit-model/1\""));
    assert!(model.contains("\"extractor\""));
}

#[test]
fn memorizing_model_scores_perfectly_on_its_training_set() {
    let f = Fixture::new();
    let report = f.path("train_report.json");
    let out = provkit(&["evaluate", "--model", s(&f.path("knn.json")), "--test", s(&f.path("train.csv")), "--out", s(&report)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["metrics"]["accuracy"], 1.0);
    assert_eq!(json["config_hash"].as_str().unwrap().len(), 64);
    assert!(f.path("train_report.txt").exists());
}

#[test]
fn predict_recovers_training_image_class() {
    let f = Fixture::new();
    let image = f.path("corpus/train/fake/0002.png");
    let out = provkit(&["predict", "--model", s(&f.path("knn.json")), "--image", s(&image)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(json["label"], "fake");
    let scores = json["scores"].as_array().unwrap();
    assert_eq!(scores[0]["class"], "real");
    assert_eq!(scores[1]["class"], "fake");
}

#[test]
fn heatmaps_and_attribution_report() {
    let f = Fixture::new();
    let out = provkit(&["heatmap", "--manifest", s(&f.manifest()), "--kind", "dct", "--split", "train", "--out", s(&f.path("maps"))]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for name in ["real_dct.png", "real_dct.range.txt", "fake_dct.png", "fake_dct.range.txt"] {
        assert!(f.path("maps").join(name).exists(), "{name}");
    }
    let out = provkit(&["heatmap", "--manifest", s(&f.manifest()), "--kind", "rgb-hist", "--class", "real", "--out", s(&f.path("maps"))]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let hist = fs::read_to_string(f.path("maps/real_rgb_hist.csv")).unwrap();
    assert_eq!(hist.lines().next(), Some("channel,bin,value"));
    assert_eq!(hist.lines().count(), 1 + 96);

    let csv = f.path("sim.csv");
    let out = provkit(&["attribution-report", "--model", s(&f.path("knn.json")), "--manifest", s(&f.manifest()), "--split", "test", "--out", s(&csv)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "class,real,fake");
    assert!(lines[1].starts_with("real,1.000000,"));
}

#[test]
fn exit_codes() {
    let f = Fixture::new();
    let knn = f.path("knn.json");

    let missing_cfg = f.path("nope.toml");
    let out = provkit(&["synth", "--config", s(&missing_cfg), "--out", s(&f.path("x"))]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("nope.toml"));

    assert_eq!(code(&provkit(&["fit", "--no-such-flag"])), 2);
    assert_eq!(code(&provkit(&["extract", "--manifest", s(&f.manifest()), "--channels", "dct,jpeg", "--out", s(&f.path("y.csv"))])), 2);

    // schema mismatch between model and test features
    let out = provkit(&["extract", "--manifest", s(&f.manifest()), "--channels", "fft", "--split", "test", "--out", s(&f.path("fft.csv"))]);
    assert_eq!(code(&out), 0);
    assert_eq!(code(&provkit(&["evaluate", "--model", s(&knn), "--test", s(&f.path("fft.csv")), "--out", s(&f.path("r.json"))])), 2);

    // validation label the model never saw
    let val = fs::read_to_string(f.path("val.csv")).unwrap().replacen("\nfake,", "\nghost,", 1);
    fs::write(f.path("ghost.csv"), val).unwrap();
    let out = provkit(&["fit", "--train", s(&f.path("train.csv")), "--val", s(&f.path("ghost.csv")), "--model", "svm", "--out", s(&f.path("svm.json"))]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("ghost"));

    assert_eq!(code(&provkit(&["heatmap", "--manifest", s(&f.manifest()), "--kind", "fft", "--class", "ghost", "--out", s(&f.path("m"))])), 2);
    assert_eq!(code(&provkit(&["attribution-report", "--model", s(&knn), "--manifest", s(&f.manifest()), "--class", "real", "--out", s(&f.path("a.csv"))])), 2);

    assert_eq!(code(&provkit(&["predict", "--model", s(&f.path("missing.json")), "--image", s(&f.path("corpus/test/real/0000.png"))])), 3);
    fs::write(f.path("broken.png"), b"not an image").unwrap();
    assert_eq!(code(&provkit(&["predict", "--model", s(&knn), "--image", s(&f.path("broken.png"))])), 3);
    assert_eq!(code(&provkit(&["predict", "--model", s(&knn), "--image", s(&f.path("absent.png"))])), 3);
}

#[test]
fn run_experiment_writes_a_table() {
    let f = Fixture::new();
    let config = f.path("exp.toml");
    fs::write(
        &config,
        r#"
manifest = "corpus/manifest.csv"
out_dir = "exp"
averaging = "macro"
feature_sets = [["dct"], ["dct", "rgb"]]
models = ["knn", "forest"]

[extractor]
dct_k = 32

[classifiers.forest]
n_trees = 5
"#,
    )
    .unwrap();
    let out = provkit(&["run-experiment", "--config", s(&config)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let table = fs::read_to_string(f.path("exp/table.txt")).unwrap();
    assert_eq!(String::from_utf8_lossy(&out.stdout), table);
    let rows: Vec<&str> = table.lines().collect();
    assert!(rows[0].starts_with("Feature"));
    assert!(rows[1].starts_with("dct ") && rows[1].contains("knn"));
    assert!(rows[4].starts_with("dct+rgb") && rows[4].contains("forest"));
    assert!(table.contains("macro averages"));
    assert!(f.path("exp/dct+rgb_forest.model.json").exists());
    assert!(f.path("exp/dct_knn.report.json").exists());

    fs::write(&config, "out_dir = \"exp\"\nfeature_sets = [[\"dct\"]]\nmodels = [\"knn\"]\n").unwrap();
    assert_eq!(code(&provkit(&["run-experiment", "--config", s(&config)])), 2);
}

//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

mod common;

use std::f64::consts::PI;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use common::{accuracy, extract_split, fit, load_spec, select, split_images, Labeled};
use num_complex::Complex64;
use provkit::classify::{
    train_grad_boost, train_knn, train_linear_svm, train_random_forest, BoostConfig,
    ClassifierKind, ForestConfig, LabeledSample, SvmConfig,
};
use provkit::eval;
use provkit::features::{self, FeatureVector};
use provkit::imgio::{self, GrayImage};
use provkit::pipeline::Channel;
use provkit::rng::SplitMix64;
use provkit::spectral::{self, SpectralKind};
use provkit::synth::Split;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_gray(n: usize, rng: &mut SplitMix64) -> GrayImage {
    GrayImage::from_fn(n, n, |_, _| rng.next_f64())
}

// ---------------------------------------------------------------------------
// 1

fn naive_dct(g: &GrayImage) -> Vec<f64> {
    let n = g.width();
    let a = |k: usize| if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
    let mut out = vec![0.0; n * n];
    for u in 0..n {
        for v in 0..n {
            let mut s = 0.0;
            for i in 0..n {
                for j in 0..n {
                    s += g.get(j, i)
                        * (PI * (2 * i + 1) as f64 * u as f64 / (2 * n) as f64).cos()
                        * (PI * (2 * j + 1) as f64 * v as f64 / (2 * n) as f64).cos();
                }
            }
            out[u * n + v] = a(u) * a(v) * s;
        }
    }
    out
}

/// `|F(u, v)|^2` in natural (uncentred) order.
fn naive_dft_power(g: &GrayImage) -> Vec<f64> {
    let n = g.width();
    let mut out = vec![0.0; n * n];
    for u in 0..n {
        for v in 0..n {
            let mut s = Complex64::new(0.0, 0.0);
            for r in 0..n {
                for c in 0..n {
                    let phase = -2.0 * PI * ((u * r + v * c) % n) as f64 / n as f64;
                    s += g.get(c, r) * Complex64::from_polar(1.0, phase);
                }
            }
            out[u * n + v] = s.norm_sqr();
        }
    }
    out
}

fn transform_oracles() -> Outcome {
    let (mut dct_err, mut fft_err) = (0.0f64, 0.0f64);
    for n in [8, 16, 32] {
        for seed in 0..20 {
            let mut rng = SplitMix64::new(1000 * n as u64 + seed);
            let g = random_gray(n, &mut rng);
            let dct = spectral::dct2(&g).unwrap();
            for (a, b) in dct.data.iter().zip(naive_dct(&g)) {
                dct_err = dct_err.max((a - b).abs());
            }
            let map = spectral::fft2_log_power(&g).unwrap();
            let power = naive_dft_power(&g);
            let h = n / 2;
            for u in 0..n {
                for v in 0..n {
                    let got = map.get((u + h) % n, (v + h) % n).exp_m1();
                    let want = power[u * n + v];
                    fft_err = fft_err.max((got - want).abs() / want.max(1e-300));
                }
            }
        }
    }
    ensure(dct_err < 1e-8, || format!("DCT max abs diff {dct_err:e}"))?;
    ensure(fft_err < 1e-6, || format!("FFT power max rel diff {fft_err:e}"))?;
    Ok(format!("DCT max abs diff {dct_err:.2e}, FFT power max rel diff {fft_err:.2e}"))
}

// ---------------------------------------------------------------------------
// 2

fn transform_invariants() -> Outcome {
    let n = 256;
    let (mut parseval, mut asym) = (0.0f64, 0.0f64);
    for seed in 0..20 {
        let mut rng = SplitMix64::new(seed);
        let g = random_gray(n, &mut rng);
        let energy: f64 = g.data().iter().map(|x| x * x).sum();
        let coeff: f64 = spectral::dct2(&g).unwrap().data.iter().map(|x| x * x).sum();
        parseval = parseval.max((coeff - energy).abs() / energy);
        let m = spectral::fft2_log_power(&g).unwrap();
        for r in 0..n {
            for c in 0..n {
                asym = asym.max((m.get(r, c) - m.get((n - r) % n, (n - c) % n)).abs());
            }
        }
    }
    ensure(parseval < 1e-6, || format!("Parseval rel error {parseval:e}"))?;
    ensure(asym < 1e-9, || format!("log-power asymmetry {asym:e}"))?;
    Ok(format!("Parseval rel error {parseval:.2e}, asymmetry {asym:.2e}"))
}

// ---------------------------------------------------------------------------
// 3

fn metrics_oracle() -> Outcome {
    let mut rng = SplitMix64::new(3);
    for setup in 0..50 {
        let n = 2 + rng.below(5);
        let len = 1 + rng.below(200);
        let truths: Vec<usize> = (0..len).map(|_| rng.below(n)).collect();
        let preds: Vec<usize> = truths
            .iter()
            .map(|&t| if rng.next_f64() < 0.6 { t } else { rng.below(n) })
            .collect();
        let cm = eval::confusion(&truths, &preds, n).unwrap();
        let report = eval::metrics(&cm).unwrap();
        let hits = truths.iter().zip(&preds).filter(|(t, p)| t == p).count();
        ensure(report.accuracy == hits as f64 / len as f64, || format!("setup {setup}: accuracy"))?;
        for c in 0..n {
            let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
            for (&t, &p) in truths.iter().zip(&preds) {
                match (t == c, p == c) {
                    (true, true) => tp += 1,
                    (false, true) => fp += 1,
                    (true, false) => fn_ += 1,
                    (false, false) => {}
                }
            }
            let prec = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
            let rec = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
            let f1 = if prec + rec == 0.0 { 0.0 } else { 2.0 * prec * rec / (prec + rec) };
            let m = &report.per_class[c];
            ensure(
                m.precision == prec && m.recall == rec && m.f1 == f1 && m.support == tp + fn_,
                || format!("setup {setup}, class {c}: {m:?} vs ({prec}, {rec}, {f1})"),
            )?;
        }
    }
    let cm = eval::ConfusionMatrix {
        counts: vec![vec![40, 4], vec![2, 34]],
    };
    let fake = &eval::metrics(&cm).unwrap().per_class[1];
    let r4 = |x: f64| (x * 1e4).round() / 1e4;
    ensure(
        (r4(fake.precision), r4(fake.recall), r4(fake.f1)) == (0.8947, 0.9444, 0.9189),
        || format!("hand case gave {fake:?}"),
    )?;
    Ok("50 random setups exact; hand case 0.8947 / 0.9444 / 0.9189".into())
}

// ---------------------------------------------------------------------------
// 4

fn binary_trend() -> Outcome {
    let spec = load_spec("configs/binary.toml");
    let channels = [Channel::Dct, Channel::Fft, Channel::Rgb];
    let train = extract_split(&spec, Split::Train, &channels);
    let test = extract_split(&spec, Split::Test, &channels);
    let svm = ClassifierKind::LinearSvm.default_config();
    let acc = |names: &[&str]| {
        let m = fit(&select(&train, names), 2, &svm, spec.seed);
        accuracy(&m, &select(&test, names))
    };
    let combined = acc(&["dct", "fft", "rgb"]);
    let fft = acc(&["fft"]);
    let rgb = acc(&["rgb"]);
    let detail = format!("SVM dct+fft+rgb {combined:.3}, fft {fft:.3}, rgb {rgb:.3}");
    ensure(combined >= 0.95 && fft >= rgb - 0.05, || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------------------
// 5, 6, 9 share the seven-class corpus

struct Attribution {
    n_classes: usize,
    names: Vec<String>,
    sources: Vec<Option<String>>,
    train: Labeled,
    test: Labeled,
}

fn attribution_corpus() -> &'static Attribution {
    static CORPUS: OnceLock<Attribution> = OnceLock::new();
    CORPUS.get_or_init(|| {
        let spec = load_spec("configs/paper_mimic.toml");
        let channels = [Channel::Dct, Channel::Fft, Channel::Rgb];
        Attribution {
            n_classes: spec.classes.len(),
            names: spec.class_names(),
            sources: spec.classes.iter().map(|c| c.source.clone()).collect(),
            train: extract_split(&spec, Split::Train, &channels),
            test: extract_split(&spec, Split::Test, &channels),
        }
    })
}

fn attribution_trend() -> Outcome {
    let corpus = attribution_corpus();
    let mut lines = Vec::new();
    let mut failures = Vec::new();
    for kind in [
        ClassifierKind::Knn,
        ClassifierKind::LinearSvm,
        ClassifierKind::RandomForest,
        ClassifierKind::GradBoost,
    ] {
        let cfg = kind.default_config();
        let acc = |names: &[&str]| {
            let m = fit(&select(&corpus.train, names), corpus.n_classes, &cfg, 42);
            accuracy(&m, &select(&corpus.test, names))
        };
        let dct = acc(&["dct"]);
        let fft = acc(&["fft"]);
        let both = acc(&["dct", "fft"]);
        lines.push(format!("{} dct {dct:.3} fft {fft:.3} dct+fft {both:.3}", kind.short_name()));
        if both < dct.max(fft) - 0.02 {
            failures.push(format!("{}: combined below best single", kind.short_name()));
        }
        if kind == ClassifierKind::GradBoost && both < 0.90 {
            failures.push(format!("boost dct+fft {both:.3} < 0.90"));
        }
    }
    let detail = lines.join("; ");
    ensure(failures.is_empty(), || format!("{}; {detail}", failures.join(", ")))?;
    Ok(detail)
}

fn cross_spectrum() -> Outcome {
    let spec = load_spec("configs/paper_mimic.toml");
    let images = split_images(&spec, Split::Train);
    let mut lines = Vec::new();
    let mut ok = true;
    for (ci, class) in spec.classes.iter().enumerate() {
        let grays: Vec<GrayImage> = images
            .iter()
            .filter(|(c, _)| *c == ci)
            .take(20)
            .map(|(_, img)| imgio::canonical_gray(img))
            .collect();
        let mean = spectral::mean_spectral_map(&grays, SpectralKind::FftLogPower).unwrap();
        let ratio = spectral::axis_band_ratio(&mean, 0.5, 16.0, 60.0);
        ok &= if class.has_artifacts() { ratio >= 2.0 } else { ratio < 1.3 };
        lines.push(format!("{} {ratio:.2}", class.name));
    }
    let detail = format!("axis/off-axis {}", lines.join(", "));
    ensure(ok, || detail.clone())?;
    Ok(detail)
}

fn centroid_clustering() -> Outcome {
    let corpus = attribution_corpus();
    let names = ["dct", "fft", "rgb"];
    let train = select(&corpus.train, &names);
    let test = select(&corpus.test, &names);
    let params = features::fit_standardizer(&train.rows).unwrap();
    let groups: Vec<(String, Vec<FeatureVector>)> = corpus
        .names
        .iter()
        .enumerate()
        .map(|(c, name)| {
            let rows = test
                .rows
                .iter()
                .zip(&test.labels)
                .filter(|(_, &y)| y == c)
                .map(|(v, _)| params.apply(v).unwrap())
                .collect();
            (name.clone(), rows)
        })
        .collect();
    let sim = eval::centroid_similarity_matrix(&groups).unwrap();
    let reals: Vec<&String> = corpus
        .names
        .iter()
        .zip(&corpus.sources)
        .filter(|(_, s)| s.is_none())
        .map(|(n, _)| n)
        .collect();
    let mut hits = 0;
    let mut total = 0;
    for (name, source) in corpus.names.iter().zip(&corpus.sources) {
        let Some(source) = source else { continue };
        total += 1;
        let own = sim.get(name, source).unwrap();
        if reals
            .iter()
            .filter(|r| **r != source)
            .all(|other| own > sim.get(name, other).unwrap())
        {
            hits += 1;
        }
    }
    let detail = format!("{hits}/{total} GAN-like centroids closest to their source");
    ensure(hits >= 4, || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------------------
// 7

fn sample(features: Vec<f64>, label: usize) -> LabeledSample {
    LabeledSample { features, label }
}

fn train_accuracy(pred: impl Fn(&[f64]) -> usize, data: &[LabeledSample]) -> f64 {
    data.iter().filter(|s| pred(&s.features) == s.label).count() as f64 / data.len() as f64
}

fn classifier_sanity() -> Outcome {
    let mut rng = SplitMix64::new(7);

    let points: Vec<LabeledSample> = (0..30)
        .map(|i| sample((0..5).map(|_| rng.next_gaussian()).collect(), i % 3))
        .collect();
    let knn = train_knn(&points, 3, 1).unwrap();
    ensure(train_accuracy(|x| knn.predict(x).label, &points) == 1.0, || "1-NN memorization".into())?;

    let mut separable = Vec::new();
    while separable.len() < 20 {
        let (x, y) = (rng.next_f64() * 6.0 - 3.0, rng.next_f64() * 6.0 - 3.0);
        let d = (x + y) / 2f64.sqrt();
        if d.abs() >= 1.0 {
            separable.push(sample(vec![x, y], (d > 0.0) as usize));
        }
    }
    let cfg = SvmConfig {
        epochs: 50,
        ..Default::default()
    };
    let svm = train_linear_svm(&separable, 2, &cfg, 1).unwrap();
    ensure(train_accuracy(|x| svm.predict(x).label, &separable) == 1.0, || "separable SVM".into())?;

    let tree_cfg = ForestConfig {
        n_trees: 1,
        max_depth: None,
        min_leaf: 1,
        bootstrap: false,
    };
    let tree = train_random_forest(&points, 3, &tree_cfg, 1).unwrap();
    ensure(train_accuracy(|x| tree.predict(x).label, &points) == 1.0, || "CART memorization".into())?;

    let line: Vec<LabeledSample> = (0..100)
        .map(|_| {
            let x = rng.next_f64();
            sample(vec![x], (x > 0.5) as usize)
        })
        .collect();
    let boost_cfg = BoostConfig {
        n_rounds: 50,
        depth: 1,
        learning_rate: 0.3,
        ..Default::default()
    };
    let (_, losses) = train_grad_boost(&line, 2, &boost_cfg).unwrap();
    ensure(losses.windows(2).all(|w| w[1] < w[0]), || format!("boosting loss not decreasing: {losses:?}"))?;

    let toy: Vec<LabeledSample> = (0..200)
        .map(|_| {
            let f: Vec<f64> = (0..5).map(|_| rng.next_f64() * 2.0 - 1.0).collect();
            let label = (f[0] + 0.5 * f[1] * f[1] > 0.2 * f[2]) as usize;
            sample(f, label)
        })
        .collect();
    let mut by_depth = Vec::new();
    for depth in [1, 2, 4, 8] {
        let cfg = ForestConfig {
            n_trees: 15,
            max_depth: Some(depth),
            ..Default::default()
        };
        let m = train_random_forest(&toy, 2, &cfg, 9).unwrap();
        by_depth.push(train_accuracy(|x| m.predict(x).label, &toy));
    }
    ensure(by_depth.windows(2).all(|w| w[1] >= w[0]), || {
        format!("forest accuracy by depth 1,2,4,8: {by_depth:?}")
    })?;

    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for i in 0..100 {
        let label = i % 2;
        let mean = if label == 1 { 3.0 } else { -3.0 };
        rows.push(FeatureVector::single("x", (0..10).map(|_| mean + rng.next_gaussian()).collect()).unwrap());
        labels.push(label);
    }
    let gauss = Labeled { labels, rows };
    let mut accs = Vec::new();
    for kind in [
        ClassifierKind::Knn,
        ClassifierKind::LinearSvm,
        ClassifierKind::RandomForest,
        ClassifierKind::GradBoost,
    ] {
        let m = fit(&gauss, 2, &kind.default_config(), 5);
        let acc = accuracy(&m, &gauss);
        ensure(acc >= 0.99, || format!("{} Gaussian toy {acc}", kind.short_name()))?;
        accs.push(format!("{} {acc:.2}", kind.short_name()));
    }
    Ok(format!(
        "memorization, separable SVM, monotone loss, depth {by_depth:?}, Gaussian toy {}",
        accs.join(" ")
    ))
}

// ---------------------------------------------------------------------------
// 8

const TINY_CORPUS: &str = r#"
seed = 42
image_side = 64

[splits]
train = 12
val = 4
test = 6

[[classes]]
name = "real"
spectral_exponent = 1.7
color_bias = [0.03, 0.0, -0.03]
layout_coherence = 0.8

[[classes]]
name = "fake"
source = "real"
spectral_exponent = 1.7
checkerboard_strength = 0.3
cross_strength = 0.4
histogram_smoothing = 0.3
color_bias = [0.03, 0.0, -0.03]
layout_coherence = 0.8
"#;

fn provkit(threads: &str, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_provkit"))
        .env("PROVKIT_THREADS", threads)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("provkit {args:?} failed: {}", String::from_utf8_lossy(&out.stderr))
    })
}

/// Model and report bytes for each classifier kind.
fn pipeline_run(dir: &Path, threads: &str) -> Result<Vec<(String, Vec<u8>)>, String> {
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let config = dir.join("corpus.toml");
    fs::write(&config, TINY_CORPUS).map_err(|e| e.to_string())?;
    let corpus = dir.join("corpus");
    provkit(threads, &["synth", "--config", &s(&config), "--out", &s(&corpus)])?;
    let manifest = s(&corpus.join("manifest.csv"));
    for split in ["train", "val", "test"] {
        let out = s(&dir.join(format!("{split}.csv")));
        provkit(threads, &[
            "extract", "--manifest", &manifest, "--channels", "dct,fft,rgb", "--split", split, "--out", &out,
        ])?;
    }
    let mut artifacts = Vec::new();
    for (model, extra) in [
        ("knn", vec![]),
        ("svm", vec![]),
        ("forest", vec!["--n-trees", "20"]),
        ("boost", vec!["--n-rounds", "20"]),
    ] {
        let model_path = dir.join(format!("{model}.json"));
        let report_path = dir.join(format!("{model}.report.json"));
        let mut args = vec![
            "--seed".to_string(),
            "42".into(),
            "fit".into(),
            "--train".into(),
            s(&dir.join("train.csv")),
            "--val".into(),
            s(&dir.join("val.csv")),
            "--model".into(),
            model.into(),
            "--out".into(),
            s(&model_path),
        ];
        args.extend(extra.iter().map(|a| a.to_string()));
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        provkit(threads, &args)?;
        provkit(threads, &[
            "evaluate", "--model", &s(&model_path), "--test", &s(&dir.join("test.csv")), "--out", &s(&report_path),
        ])?;
        for p in [&model_path, &report_path] {
            artifacts.push((
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(p).map_err(|e| e.to_string())?,
            ));
        }
    }
    Ok(artifacts)
}

fn determinism() -> Outcome {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut runs = Vec::new();
    for (i, threads) in ["1", "1", "4"].iter().enumerate() {
        let dir = root.path().join(format!("run{i}"));
        fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
        runs.push((threads, pipeline_run(&dir, threads)?));
    }
    let (_, first) = &runs[0];
    for (threads, run) in &runs[1..] {
        for ((name, a), (_, b)) in first.iter().zip(run) {
            ensure(a == b, || format!("{name} differs with PROVKIT_THREADS={threads}"))?;
        }
    }
    Ok(format!(
        "{} model/report files byte-identical over 3 runs (threads 1, 1, 4)",
        first.len()
    ))
}

// ---------------------------------------------------------------------------

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("transform oracles", transform_oracles),
        ("Parseval and conjugate symmetry", transform_invariants),
        ("metrics oracle", metrics_oracle),
        ("binary trend", binary_trend),
        ("attribution trend", attribution_trend),
        ("cross-shaped spectrum", cross_spectrum),
        ("classifier sanity", classifier_sanity),
        ("determinism", determinism),
        ("centroid clustering", centroid_clustering),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {}: {name} ({secs:.1}s) {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {}: {name} ({secs:.1}s) {detail}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

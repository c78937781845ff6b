use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use texsmooth::imagecore::{read_png, write_png, BitDepth, Image};
use texsmooth::models::{init_seed, load_role, ModelRole, SpnModel, TpnConfig, TpnModel};
use texsmooth::texgen::dataset::read_manifest;
use texsmooth::texgen::PATTERN_SIZE;
use texsmooth::toy;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_texsmooth"));
    c.env_remove("TEXSMOOTH_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn texsmooth")
}

fn ok(args: &[&str]) -> String {
    let o = run(args);
    assert!(
        o.status.success(),
        "{args:?} failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Source folders with three structure images and three texture photos.
fn sources(root: &Path) -> (PathBuf, PathBuf) {
    let st = root.join("structures");
    let tx = root.join("textures");
    fs::create_dir_all(&st).unwrap();
    fs::create_dir_all(&tx).unwrap();
    for i in 0..3u64 {
        write_png(
            &toy::structure_image(i, 32, 32),
            st.join(format!("s{i}.png")),
            BitDepth::Eight,
        )
        .unwrap();
        write_png(
            &toy::texture_source(i, PATTERN_SIZE),
            tx.join(format!("t{i}.png")),
            BitDepth::Eight,
        )
        .unwrap();
    }
    (st, tx)
}

fn gen(root: &Path, out: &Path, count: usize, seed: u64) {
    let (st, tx) = sources(root);
    ok(&[
        "gen",
        "--structures",
        s(&st),
        "--textures",
        s(&tx),
        "--count",
        &count.to_string(),
        "--seed",
        &seed.to_string(),
        "--out",
        s(out),
    ]);
}

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn effective(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("effective_config.json")).unwrap()).unwrap()
}

/// A dataset plus tpn, spn and tsafn checkpoints trained for a few steps.
fn trained(root: &Path) -> (PathBuf, PathBuf) {
    let data = root.join("data");
    let models = root.join("models");
    gen(root, &data, 6, 3);
    for which in ["tpn", "spn", "tsafn"] {
        ok(&[
            "train",
            which,
            "--data",
            s(&data),
            "--out",
            s(&models),
            "--steps",
            "20",
            "--batch-size",
            "2",
            "--patch-size",
            "16",
            "--learning-rate",
            "0.01",
            "--seed",
            "5",
        ]);
    }
    (data, models)
}

#[test]
fn gen_splits_and_reproduces() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    gen(dir.path(), &a, 12, 9);
    let m = read_manifest(&a).unwrap();
    assert_eq!(m.count, 12);
    assert_eq!(m.samples.len(), 12);
    let n = |split| m.ids(split).count();
    use texsmooth::texgen::dataset::Split;
    assert_eq!((n(Split::Train), n(Split::Val), n(Split::Test)), (8, 1, 3));
    assert_eq!(effective(&a)["seed"], 9);

    let (st, tx) = sources(dir.path());
    let o = bin()
        .env("TEXSMOOTH_THREADS", "1")
        .args([
            "gen",
            "--structures",
            s(&st),
            "--textures",
            s(&tx),
            "--count",
            "12",
            "--seed",
            "9",
            "--out",
            s(&b),
        ])
        .output()
        .unwrap();
    assert!(o.status.success());
    // the run records differ only in the output path
    let dataset = |d: &Path| {
        let mut t = tree(d);
        t.remove(Path::new("effective_config.json")).unwrap();
        t
    };
    assert_eq!(dataset(&a), dataset(&b));
}

#[test]
fn gen_skips_flat_textures_with_a_warning() {
    let dir = tempfile::tempdir().unwrap();
    let (st, tx) = sources(dir.path());
    write_png(
        &Image::filled(PATTERN_SIZE, PATTERN_SIZE, 3, 0.4).unwrap(),
        tx.join("flat.png"),
        BitDepth::Eight,
    )
    .unwrap();
    let out = dir.path().join("d");
    let o = run(&[
        "gen",
        "--structures",
        s(&st),
        "--textures",
        s(&tx),
        "--count",
        "3",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success());
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.contains("flat.png"), "{stderr}");
    assert_eq!(read_manifest(&out).unwrap().patterns.len(), 3);
}

#[test]
fn config_file_values_and_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let (st, tx) = sources(dir.path());
    let cfg = dir.path().join("cfg.json");
    let body = serde_json::json!({
        "seed": 4,
        "gen": { "structures": st, "textures": tx, "count": 5, "kappa": 0.5 }
    });
    fs::write(&cfg, body.to_string()).unwrap();
    let out = dir.path().join("d");
    ok(&["gen", "--config", s(&cfg), "--count", "4", "--out", s(&out)]);
    let e = effective(&out);
    assert_eq!(e["seed"], 4);
    assert_eq!(e["params"]["count"], 4);
    assert_eq!(e["params"]["kappa"], 0.5);
    let m = read_manifest(&out).unwrap();
    assert_eq!((m.count, m.seed), (4, 4));
    assert!(m.samples.iter().all(|r| r.kappa == 0.5));
}

#[test]
fn joint_requires_tpn_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    gen(dir.path(), &data, 4, 1);
    let models = dir.path().join("models");
    let o = run(&[
        "train",
        "joint",
        "--data",
        s(&data),
        "--out",
        s(&models),
        "--steps",
        "1",
    ]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing checkpoint: tpn"));
    let o = run(&[
        "train",
        "tsafn",
        "--data",
        s(&data),
        "--out",
        s(&models),
        "--steps",
        "1",
    ]);
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing checkpoint: tpn"));
}

#[test]
fn zero_steps_saves_the_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let models = dir.path().join("models");
    gen(dir.path(), &data, 4, 1);
    ok(&[
        "train",
        "tpn",
        "--data",
        s(&data),
        "--out",
        s(&models),
        "--steps",
        "0",
        "--patch-size",
        "16",
        "--seed",
        "21",
    ]);
    let saved: TpnModel = load_role(&models).unwrap();
    let fresh = TpnModel::new(TpnConfig::default(), init_seed(ModelRole::Tpn, 21)).unwrap();
    assert_eq!(saved, fresh);
    assert_eq!(fs::read_to_string(models.join("tpn_loss.csv")).unwrap(), "step,loss\n");
    assert_eq!(effective(&models)["params"]["which"], "tpn");
}

#[test]
fn training_reruns_give_identical_loss_csv() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    gen(dir.path(), &data, 4, 1);
    let args = |out: &Path| {
        ok(&[
            "train",
            "spn",
            "--data",
            s(&data),
            "--out",
            s(out),
            "--steps",
            "5",
            "--batch-size",
            "2",
            "--patch-size",
            "16",
            "--seed",
            "3",
        ])
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    args(&a);
    args(&b);
    let csv = fs::read_to_string(a.join("spn_loss.csv")).unwrap();
    assert_eq!(csv.lines().count(), 6);
    assert_eq!(csv, fs::read_to_string(b.join("spn_loss.csv")).unwrap());
    let _: SpnModel = load_role(&a).unwrap();
}

#[test]
fn smooth_enhance_and_joint_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let (data, models) = trained(dir.path());
    let input = data.join("input").join("000000.png");
    let img = read_png(&input).unwrap();

    let out = dir.path().join("out").join("smoothed.png");
    ok(&[
        "smooth",
        "--input",
        s(&input),
        "--models",
        s(&models),
        "--out",
        s(&out),
        "--emit-guidance",
    ]);
    let smoothed = read_png(&out).unwrap();
    assert_eq!(smoothed.dims(), img.dims());
    for suffix in ["texture", "structure"] {
        let g = read_png(dir.path().join("out").join(format!("smoothed_{suffix}.png"))).unwrap();
        assert_eq!(g.dims(), (img.height(), img.width(), 1));
    }
    assert_eq!(effective(&dir.path().join("out"))["command"], "smooth");

    let again = dir.path().join("again.png");
    ok(&[
        "smooth",
        "--input",
        s(&input),
        "--models",
        s(&models),
        "--out",
        s(&again),
    ]);
    assert_eq!(fs::read(&out).unwrap(), fs::read(&again).unwrap());
    let plain = dir.path().join("plain.png");
    ok(&[
        "smooth",
        "--input",
        s(&input),
        "--models",
        s(&models),
        "--out",
        s(&plain),
        "--ablation",
        "none",
    ]);
    assert_ne!(fs::read(&plain).unwrap(), fs::read(&again).unwrap());

    // an 8-bit input survives alpha = 1 bit-exactly
    let flat = dir.path().join("flat.png");
    write_png(&toy::structure_image(2, 24, 24), &flat, BitDepth::Eight).unwrap();
    let de = dir.path().join("de.png");
    ok(&[
        "enhance",
        "--input",
        s(&flat),
        "--models",
        s(&models),
        "--alpha",
        "1",
        "--out",
        s(&de),
    ]);
    assert_eq!(read_png(&de).unwrap(), read_png(&flat).unwrap());
    let o = run(&[
        "enhance",
        "--input",
        s(&flat),
        "--models",
        s(&models),
        "--alpha",
        "0.5",
        "--out",
        s(&de),
    ]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("invalid argument"));

    ok(&[
        "train",
        "joint",
        "--data",
        s(&data),
        "--out",
        s(&models),
        "--steps",
        "3",
        "--batch-size",
        "2",
        "--patch-size",
        "16",
    ]);
    let csv = fs::read_to_string(models.join("joint_loss.csv")).unwrap();
    assert!(csv.starts_with("step,total,l_d,l_t,l_e\n"));
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn eval_reports_pairs_mean_and_unmatched() {
    let dir = tempfile::tempdir().unwrap();
    let (pred, gt) = (dir.path().join("pred"), dir.path().join("gt"));
    fs::create_dir_all(&pred).unwrap();
    fs::create_dir_all(&gt).unwrap();
    for i in 0..3u64 {
        let img = toy::structure_image(i, 16, 16);
        write_png(&img, pred.join(format!("{i}.png")), BitDepth::Eight).unwrap();
        write_png(&img, gt.join(format!("{i}.png")), BitDepth::Eight).unwrap();
    }
    let csv_path = dir.path().join("r").join("eval.csv");
    let stdout = ok(&["eval", "--pred", s(&pred), "--gt", s(&gt), "--out", s(&csv_path)]);
    assert!(stdout.contains("warnings 0"), "{stdout}");
    let csv = fs::read_to_string(&csv_path).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "sample_id,mse,psnr_db,ssim");
    assert_eq!(rows.len(), 1 + 3 + 1);
    assert_eq!(rows[4], "mean,0,99.0000,1");

    write_png(
        &toy::structure_image(9, 16, 16),
        pred.join("extra.png"),
        BitDepth::Eight,
    )
    .unwrap();
    let o = run(&["eval", "--pred", s(&pred), "--gt", s(&gt), "--out", s(&csv_path)]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("warnings 1"));
    assert!(String::from_utf8_lossy(&o.stderr).contains("extra.png"));
    assert_eq!(fs::read_to_string(&csv_path).unwrap().lines().count(), 5);
}

#[test]
fn gradcheck_passes_and_detects_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("gc");
    let stdout = ok(&["gradcheck", "--ops-only", "--out", s(&out)]);
    for op in texsmooth::gradsuite::OP_NAMES {
        let lines = stdout
            .lines()
            .filter(|l| l.split_whitespace().next() == Some(op))
            .count();
        assert_eq!(lines, 1, "{op}");
    }
    assert!(out.join("gradcheck.json").is_file());
    let o = run(&["gradcheck", "--ops-only", "--corrupt", "conv2d_1x1", "--out", s(&out)]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));
}

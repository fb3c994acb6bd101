use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = r#"
[data]
eval_count = 2
train_count = 4
test_count = 2

[data.synthetic]
count = 4
dims = [18, 18, 18]

[model]
depth = 1
base_channels = 4
disc_base_channels = 2

[pretrain]
steps = 2

[finetune]
steps = 2
"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_rubikpp"));
    c.env_remove("RUBIKPP_SEED");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn write_raw(dir: &Path, stem: &str, dims: [usize; 3], f: impl Fn(usize) -> f32) -> PathBuf {
    let n = dims.iter().product::<usize>();
    let bytes: Vec<u8> = (0..n).flat_map(|i| f(i).to_le_bytes()).collect();
    let data = dir.join(format!("{stem}.f32"));
    fs::write(&data, bytes).unwrap();
    fs::write(
        dir.join(format!("{stem}.json")),
        format!(r#"{{"dims": [{}, {}, {}], "channels": 1}}"#, dims[0], dims[1], dims[2]),
    )
    .unwrap();
    data
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_and_usage_errors() {
    for sub in [
        "disarrange",
        "restore",
        "gen-dataset",
        "pretrain",
        "finetune",
        "sweep",
        "eval",
        "compare",
        "transfer",
        "inspect",
        "print-config",
    ] {
        let o = run(&[sub, "--help"]);
        assert_eq!(code(&o), 0, "{sub} --help");
        assert!(stdout(&o).contains("Usage"), "{sub}");
    }
    let o = run(&["inspect", "--no-such-flag"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(code(&run(&["print-config", "--set", "pretrain.stepz=3"])), 2);
    assert_eq!(code(&run(&["print-config", "--set", "pretrain.steps=lots"])), 2);
    assert_eq!(code(&run(&["print-config", "--config", "/nonexistent/c.toml"])), 3);
    // Semantically invalid but well-typed: a domain error.
    assert_eq!(code(&run(&["print-config", "--set", "pretrain.batch=0"])), 4);
}

#[test]
fn seed_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "seed = 5\n").unwrap();
    let seed_of = |o: Output| stdout(&o).lines().find(|l| l.starts_with("seed")).unwrap().to_string();
    assert_eq!(seed_of(run(&["print-config"])), "seed = 0");
    let env = |args: &[&str]| bin().env("RUBIKPP_SEED", "7").args(args).output().unwrap();
    assert_eq!(seed_of(env(&["print-config"])), "seed = 7");
    assert_eq!(seed_of(env(&["print-config", "-c", s(&cfg)])), "seed = 5");
    assert_eq!(seed_of(env(&["print-config", "-c", s(&cfg), "--set", "seed=6"])), "seed = 6");
    assert_eq!(seed_of(env(&["print-config", "-c", s(&cfg), "--set", "seed=6", "--seed", "8"])), "seed = 8");
}

#[test]
fn disarrange_restore_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let input = write_raw(d, "cube", [128, 128, 128], |i| i as f32);

    let o = run(&["disarrange", "--in", s(&input), "--out", s(&d.join("a.f32")), "--side", "7,7,7", "--seed", "1"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).starts_with("grid 18x18x18"), "{}", stdout(&o));
    assert!(d.join("a.record.json").exists());

    run(&["disarrange", "--in", s(&input), "--out", s(&d.join("b.f32")), "--side", "7", "--seed", "1"]);
    assert_eq!(fs::read(d.join("a.f32")).unwrap(), fs::read(d.join("b.f32")).unwrap());
    assert_eq!(fs::read(d.join("a.record.json")).unwrap(), fs::read(d.join("b.record.json")).unwrap());
    assert_ne!(fs::read(d.join("a.f32")).unwrap(), fs::read(&input).unwrap());

    let o = run(&["disarrange", "--in", s(&input), "--out", s(&d.join("m0.f32")), "--side", "7", "--m", "0"]);
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read(d.join("m0.f32")).unwrap(), fs::read(&input).unwrap());

    let o = run(&[
        "restore", "--in", s(&d.join("a.f32")), "--record", s(&d.join("a.record.json")),
        "--out", s(&d.join("r.f32")), "--reference", s(&input),
    ]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("mse 0\n"), "{}", stdout(&o));
    assert_eq!(fs::read(d.join("r.f32")).unwrap(), fs::read(&input).unwrap());

    run(&["disarrange", "--in", s(&input), "--out", s(&d.join("c.f32")), "--side", "7", "--seed", "2"]);
    let o = run(&[
        "restore", "--in", s(&d.join("a.f32")), "--record", s(&d.join("c.record.json")),
        "--out", s(&d.join("w.f32")), "--reference", s(&input),
    ]);
    assert_eq!(code(&o), 0);
    let mse: f64 = stdout(&o).lines().last().unwrap().strip_prefix("mse ").unwrap().parse().unwrap();
    assert!(mse > 0.0);

    let o = run(&["restore", "--in", s(&d.join("a.f32")), "--record", s(&d.join("none.json")), "--out", s(&d.join("x.f32"))]);
    assert_eq!(code(&o), 3);

    let small = write_raw(d, "small", [16, 16, 16], |_| 0.0);
    let o = run(&["restore", "--in", s(&small), "--record", s(&d.join("a.record.json")), "--out", s(&d.join("x.f32"))]);
    assert_eq!(code(&o), 4);

    let o = run(&["disarrange", "--in", s(&small), "--out", s(&d.join("x.f32")), "--side", "32"]);
    assert_eq!(code(&o), 4);
    let o = run(&["disarrange", "--in", s(&small), "--out", s(&d.join("x.f32")), "--side", "2,2"]);
    assert_eq!(code(&o), 2);
    let o = run(&["disarrange", "--in", s(&d.join("missing.f32")), "--out", s(&d.join("x.f32"))]);
    assert_eq!(code(&o), 3);
}

#[test]
fn inspect_volume_and_record() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let z = write_raw(d, "z", [144, 144, 32], |_| 0.0);
    let o = run(&["inspect", "--in", s(&z), "--side", "4,4,2"]);
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    assert!(out.contains("dims 144x144x32"));
    assert!(out.contains("channels 1"));
    assert!(out.contains("range [0, 0]"));
    assert!(out.contains("grid 36x36x16"));
    let row = |axis: &str| out.lines().find(|l| l.starts_with(axis)).unwrap().to_string();
    assert!(row("axial").ends_with("{90,180,270}"));
    assert!(row("sagittal").ends_with("{180}"));
    assert!(row("coronal").ends_with("{180}"));

    let v = write_raw(d, "v", [12, 12, 12], |i| i as f32);
    run(&["disarrange", "--in", s(&v), "--out", s(&d.join("o.f32")), "--side", "3", "--m", "3"]);
    let o = run(&["inspect", "--in", s(&d.join("o.record.json"))]);
    assert_eq!(code(&o), 0);
    let listed = stdout(&o).lines().filter(|l| l.contains(" layer ")).count();
    assert_eq!(listed, 9);
    assert_eq!(code(&run(&["inspect", "--in", s(&d.join("gone.f32"))])), 3);
}

#[test]
fn stages_emit_reports() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("tiny.toml");
    fs::write(&cfg, TINY).unwrap();
    let out = d.join("run");
    let common = ["-c", s(&cfg), "-o", s(&out)];
    let with = |sub: &str, extra: &[&str]| {
        let mut args = vec![sub];
        args.extend_from_slice(&common);
        args.extend_from_slice(extra);
        run(&args)
    };

    let o = with("pretrain", &["--loss", "l2", "--adversarial", "false"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = stdout(&o).lines().next().unwrap().to_string();
    assert!(report.ends_with("pretrain.json"));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("pretrain.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["loss"]["recon"], "l2");
    assert_eq!(manifest["config"]["loss"]["adversarial"], false);
    assert_eq!(manifest["config"]["pretrain"]["steps"], 2);
    let first = fs::read(out.join("pretrain.csv")).unwrap();
    with("pretrain", &["--loss", "l2", "--adversarial", "false"]);
    assert_eq!(fs::read(out.join("pretrain.csv")).unwrap(), first);
    with("pretrain", &["--loss", "l1", "--adversarial", "false"]);
    assert_ne!(fs::read(out.join("pretrain.csv")).unwrap(), first);
    let o = with("pretrain", &["--loss", "l3"]);
    assert_eq!(code(&o), 2);

    let o = with("pretrain", &[]);
    assert_eq!(code(&o), 0);
    let ck = out.join("checkpoint.bin");
    let o = with("finetune", &["--from", s(&ck)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = with("finetune", &["--from", "none"]);
    assert_eq!(code(&o), 0);
    let read = |n: &str| -> serde_json::Value { serde_json::from_str(&fs::read_to_string(out.join(n)).unwrap()).unwrap() };
    let (a, b) = (read("finetune.json"), read("finetune_scratch.json"));
    assert_eq!(a["config_digest"], b["config_digest"]);
    assert!(a["mean_dice"].is_number() && b["mean_dice"].is_number());
    let o = with("finetune", &["--from", s(&d.join("missing.bin"))]);
    assert_eq!(code(&o), 3);
    let o = with("finetune", &["--from", s(&ck), "--set", "model.base_channels=6"]);
    assert_eq!(code(&o), 4);

    let o = with("eval", &["--restorer", s(&ck)]);
    assert_eq!(code(&o), 0);
    let e = read("eval.json");
    assert!(e["final_mse"].as_f64().unwrap() > 0.0);
    let o = with("eval", &["--restorer", "oracle"]);
    assert_eq!(code(&o), 0);
    assert_eq!(read("eval.json")["final_mse"].as_f64(), Some(0.0));

    let o = with("gen-dataset", &[]);
    assert_eq!(code(&o), 0);
    let pairs = stdout(&o).trim().to_string();
    let o = with("eval", &["--restorer", "identity", "--pairs", &pairs]);
    assert_eq!(code(&o), 0);
    let e = read("eval.json");
    assert_eq!(e["final_mse"], e["identity_mse"]);

    let o = with("sweep", &["--n", "2,4,8", "--m", "2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "n,m,final_mse,identity_mse,mean_dice");
    assert_eq!(lines.len(), 4);
    assert_eq!(code(&with("sweep", &["--n", "2,2", "--m", "2"])), 4);
}

#[test]
fn compare_score_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("a.txt"), "0\n0\n0\n0\n").unwrap();
    fs::write(d.join("b.txt"), "5, 5, 5, 9\n").unwrap();
    let o = run(&["compare", s(&d.join("a.txt")), s(&d.join("b.txt"))]);
    assert_eq!(code(&o), 0);
    let c: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!((c["p"].as_f64().unwrap() - 0.00927).abs() < 1e-4);
    assert!(c["verdict"].as_str().unwrap().starts_with("significant"));

    fs::write(d.join("a.csv"), "seed,dice\n0,0.5\n1,0.6\n").unwrap();
    fs::write(d.join("b.csv"), "seed,dice\n0,0.5\n1,0.6\n").unwrap();
    let o = run(&["compare", "--column", "dice", s(&d.join("a.csv")), s(&d.join("b.csv"))]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("zero variance"));
    let o = run(&["compare", s(&d.join("a.txt")), s(&d.join("a.csv"))]);
    assert_eq!(code(&o), 2);
    let o = run(&["compare", "--column", "dice", s(&d.join("a.csv")), s(&d.join("a.txt"))]);
    assert_eq!(code(&o), 2);
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const CONFIG: &str = r#"
[data]
subjects = 3
samples_per_subject = 16
val_subjects = 1
test_subjects = 1
input_size = 32
image_width = 64
image_height = 64

[cube]
mode = "world"
grid = 8

[model]
preset = "tiny"

[training]
epochs = 2
batch_size = 8
lr = 1e-4
lr_decay_every = 0
"#;

fn acr(args: &[&dyn AsRef<std::ffi::OsStr>]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_acr"));
    for a in args {
        cmd.arg(a);
    }
    cmd.output().expect("acr runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        Fixture { dir: TempDir::new().unwrap() }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn config(&self, name: &str, text: &str) -> PathBuf {
        let p = self.path(name);
        fs::write(&p, text).unwrap();
        p
    }

    fn corpus(&self, config: &Path, name: &str) -> PathBuf {
        let out = self.path(name);
        let o = acr(&[&"gen-data", &config, &"--seed", &"3", &"--out", &out]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        out
    }
}

fn read_csv(path: &Path) -> Vec<csv::StringRecord> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|r| r.unwrap()).collect()
}

fn column(path: &Path, name: &str) -> Vec<String> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let idx = r.headers().unwrap().iter().position(|h| h == name).unwrap();
    r.records().map(|r| r.unwrap()[idx].to_string()).collect()
}

#[test]
fn version_lists_formats() {
    let o = acr(&[&"--version"]);
    assert_eq!(code(&o), 0);
    let s = stdout(&o);
    assert!(s.starts_with("acr "));
    for key in ["checkpoint format", "tensor format", "corpus manifest"] {
        assert!(s.contains(key), "{s}");
    }
}

#[test]
fn gen_data_is_deterministic() {
    let f = Fixture::new();
    let cfg = f.config("c.toml", CONFIG);
    let a = f.corpus(&cfg, "a");
    let b = f.corpus(&cfg, "b");
    assert_eq!(fs::read(a.join("manifest.json")).unwrap(), fs::read(b.join("manifest.json")).unwrap());
}

#[test]
fn missing_key_is_named() {
    let f = Fixture::new();
    let cfg = f.config("c.toml", &CONFIG.replace("samples_per_subject = 16\n", ""));
    let o = acr(&[&"gen-data", &cfg, &"--out", &f.path("x")]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("samples_per_subject"), "{}", stderr(&o));

    let o = acr(&[&"gen-data", &f.path("absent.toml"), &"--out", &f.path("x")]);
    assert_eq!(code(&o), 3);
}

#[test]
fn output_over_a_file_is_a_filesystem_error() {
    let f = Fixture::new();
    let cfg = f.config("c.toml", CONFIG);
    let blocker = f.config("blocker", "not a directory");
    let o = acr(&[&"gen-data", &cfg, &"--out", &blocker]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn train_eval_and_resume() {
    let f = Fixture::new();
    let cfg = f.config("c.toml", CONFIG);
    let data = f.corpus(&cfg, "data");

    let full = f.path("full");
    let o = acr(&[&"train", &cfg, &"--data", &data, &"--out", &full]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for name in ["checkpoint.acrc", "epoch-0001.acrc", "epoch-0002.acrc", "epoch_log.csv", "config.toml"] {
        assert!(full.join(name).exists(), "{name}");
    }
    let losses = column(&full.join("epoch_log.csv"), "train_loss");
    assert_eq!(losses.len(), 2);

    // resuming from the first snapshot reproduces the second epoch
    let resumed = f.path("resumed");
    let o = acr(&[&"train", &cfg, &"--data", &data, &"--resume", &full.join("epoch-0001.acrc"), &"--out", &resumed]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let again = column(&resumed.join("epoch_log.csv"), "train_loss");
    assert_eq!(again, losses[1..]);
    assert_eq!(fs::read(full.join("checkpoint.acrc")).unwrap(), fs::read(resumed.join("checkpoint.acrc")).unwrap());

    // resuming in place appends without a second header
    let o = acr(&[&"train", &cfg, &"--data", &data, &"--resume", &full.join("epoch-0001.acrc"), &"--out", &full]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(column(&full.join("epoch_log.csv"), "train_loss"), [&losses[..], &losses[1..]].concat());

    let ev = f.path("eval");
    let o = acr(&[&"eval", &full.join("checkpoint.acrc"), &"--data", &data, &"--out", &ev]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = read_csv(&ev.join("report.csv"));
    assert_eq!(report.len(), 6);
    assert_eq!(&report[5][0], "mean");
    assert!(ev.join("rounds.csv").exists());
    assert!(ev.join("summary.txt").exists());

    let gt = f.path("nested/gt");
    let o = acr(&[&"eval", &full.join("checkpoint.acrc"), &"--data", &data, &"--out", &gt, &"--ground-truth"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = read_csv(&gt.join("report.csv"));
    let mean = report.iter().find(|r| &r[0] == "mean").unwrap();
    assert_eq!(mean[1].parse::<f64>().unwrap(), 100.0);
    assert_eq!(mean[2].parse::<f64>().unwrap(), 0.0);
    for j in column(&gt.join("rounds.csv"), "jaccard_convex") {
        assert!((j.parse::<f64>().unwrap() - 1.0).abs() < 1e-9);
    }

    // a corpus from a different [data] section is refused
    let other_cfg = f.config("other.toml", &CONFIG.replace("image_width = 64", "image_width = 72"));
    let other = f.corpus(&other_cfg, "other");
    let o = acr(&[&"train", &cfg, &"--data", &other, &"--out", &f.path("x")]);
    assert_eq!(code(&o), 5, "{}", stderr(&o));
    let o = acr(&[&"eval", &full.join("checkpoint.acrc"), &"--data", &other, &"--out", &f.path("y")]);
    assert_eq!(code(&o), 5, "{}", stderr(&o));

    // a checkpoint from a different model is refused on resume
    let wide = f.config("wide.toml", &CONFIG.replace("preset = \"tiny\"", "preset = \"tiny\"\n[model.wdm]\ntoken_dim = 16"));
    let o = acr(&[&"train", &wide, &"--data", &data, &"--resume", &full.join("checkpoint.acrc"), &"--out", &f.path("z")]);
    assert_eq!(code(&o), 5, "{}", stderr(&o));
}

#[test]
fn divergence_exits_numerical() {
    let f = Fixture::new();
    let cfg = f.config("c.toml", &CONFIG.replace("lr = 1e-4", "lr = 1e300"));
    let data = f.corpus(&cfg, "data");
    let out = f.path("run");
    let o = acr(&[&"train", &cfg, &"--data", &data, &"--out", &out]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    assert!(out.join("last-good.acrc").exists());
    assert!(stderr(&o).contains("last-good.acrc"));
}

fn traj_csv(rows: &[(usize, usize, usize, &str, f64, f64, f64)]) -> String {
    let mut s = String::from("subject,round,frame,joint,x,y,z\n");
    for (subject, round, frame, joint, x, y, z) in rows {
        s += &format!("{subject},{round},{frame},{joint},{x},{y},{z}\n");
    }
    s
}

/// A round of `frames` frames whose waist circles the origin.
fn circle_round(subject: usize, round: usize, frames: usize) -> Vec<(usize, usize, usize, &'static str, f64, f64, f64)> {
    let mut rows = Vec::new();
    for k in 0..frames {
        let a = std::f64::consts::TAU * k as f64 / frames as f64;
        let (x, y) = (400.0 * a.cos(), 400.0 * a.sin());
        rows.push((subject, round, k, "LW", x - 150.0, y, 1000.0));
        rows.push((subject, round, k, "MW", x, y, 1000.0));
        rows.push((subject, round, k, "RW", x + 150.0, y, 1000.0));
        rows.push((subject, round, k, "HD", x, y, 1600.0));
    }
    rows
}

#[test]
fn analyze_traces() {
    let f = Fixture::new();
    let mut rows = circle_round(0, 0, 24);
    rows.extend(circle_round(0, 1, 1));
    let text = traj_csv(&rows);
    let pred = f.config("pred.csv", &text);
    let truth = f.config("truth.csv", &text);
    let out = f.path("an");
    let o = acr(&[&"analyze", &pred, &"--truth", &truth, &"--out", &out]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let jac = column(&out.join("rounds.csv"), "jaccard_convex");
    let err = column(&out.join("rounds.csv"), "error");
    assert!((jac[0].parse::<f64>().unwrap() - 1.0).abs() < 1e-9);
    assert!(err[0].is_empty());
    assert!(jac[1].is_empty());
    assert!(!err[1].is_empty());
    assert!(stderr(&o).contains("round 1"));
    assert!(out.join("plots/s0_r0.png").exists());
    assert!(out.join("boundaries/s0_r0_pred_convex.csv").exists());

    let bad = f.config("bad.csv", &text.replacen("\n0,0,1,LW", "\n0,0,one,LW", 1));
    let o = acr(&[&"analyze", &bad, &"--out", &f.path("bad")]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("line 6"), "{}", stderr(&o));
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "toml") {
            acr_core::ExperimentConfig::load(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            seen += 1;
        }
    }
    assert!(seen >= 2);
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sparseflow::netspec::{firenet, save_network, FireNetShape, NetworkKind};
use sparseflow::tensorcore::Bf16;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sparseflow"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn sparseflow")
}

fn ok(args: &[&str]) -> Output {
    let o = run(args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    o
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn small_net(dir: &Path, kind: NetworkKind, zero_bias: bool) -> PathBuf {
    let mut net = firenet(
        FireNetShape {
            kind,
            channels: 4,
            height: 8,
            width: 8,
        },
        3,
    )
    .unwrap();
    if zero_bias {
        for l in &mut net.layers {
            l.bias.iter_mut().for_each(|b| *b = Bf16::ZERO);
        }
    }
    let p = dir.join(format!("{kind:?}.sfnet"));
    save_network(&net, &p).unwrap();
    p
}

fn data_rows(text: &str) -> Vec<&str> {
    text.lines().filter(|l| !l.starts_with('#')).skip(1).collect()
}

#[test]
fn zero_event_frames_give_zero_flow_and_density() {
    let tmp = TempDir::new().unwrap();
    let net = small_net(tmp.path(), NetworkKind::Ann, true);
    let ev = tmp.path().join("empty.txt");
    fs::write(&ev, "# no spikes\n").unwrap();
    let out = tmp.path().join("out");
    ok(&["infer", "--net", s(&net), "--events", s(&ev), "--frames", "2", "--out", s(&out)]);
    let flow = fs::read_to_string(out.join("flow.csv")).unwrap();
    let rows = data_rows(&flow);
    assert_eq!(rows.len(), 2 * 8 * 8);
    for r in rows {
        let f: Vec<&str> = r.split(',').collect();
        assert_eq!(f[3].parse::<f32>().unwrap(), 0.0, "{r}");
        assert_eq!(f[4].parse::<f32>().unwrap(), 0.0, "{r}");
    }
    let dens = fs::read_to_string(out.join("density.csv")).unwrap();
    for r in data_rows(&dens) {
        let f: Vec<&str> = r.split(',').collect();
        assert_eq!(f[2].parse::<f64>().unwrap(), 0.0, "{r}");
        assert_eq!(f[3].parse::<f64>().unwrap(), 0.0, "{r}");
    }
}

#[test]
fn infer_outputs_are_byte_identical_across_runs() {
    let tmp = TempDir::new().unwrap();
    let fx = fixtures();
    for (i, threads) in [false, true].into_iter().enumerate() {
        let dirs: Vec<PathBuf> = (0..2).map(|k| tmp.path().join(format!("r{i}_{k}"))).collect();
        for d in &dirs {
            let mut args: Vec<String> = vec![
                "infer".into(),
                "--net".into(),
                s(&fx.join("snn.sfnet")).into(),
                "--events".into(),
                s(&fx.join("events.txt")).into(),
                "--gt".into(),
                s(&fx.join("gt.sfgt")).into(),
                "--images".into(),
                "--log-activations".into(),
                "--out".into(),
                s(d).into(),
            ];
            if threads {
                args.push("--threads".into());
            }
            ok(&args.iter().map(String::as_str).collect::<Vec<_>>());
        }
        let mut names: Vec<_> = fs::read_dir(&dirs[0]).unwrap().map(|e| e.unwrap().file_name()).collect();
        names.sort();
        assert!(names.len() > 8);
        for n in names {
            assert_eq!(
                fs::read(dirs[0].join(&n)).unwrap(),
                fs::read(dirs[1].join(&n)).unwrap(),
                "{n:?} differs"
            );
        }
    }
    // Threading changes only the header hash.
    let strip = |p: PathBuf| -> String {
        fs::read_to_string(p).unwrap().lines().filter(|l| !l.starts_with('#')).collect::<Vec<_>>().join("\n")
    };
    for f in ["flow.csv", "cost.csv", "density.csv"] {
        assert_eq!(strip(tmp.path().join("r0_0").join(f)), strip(tmp.path().join("r1_0").join(f)), "{f}");
    }
}

#[test]
fn every_text_output_carries_the_config_header() {
    let tmp = TempDir::new().unwrap();
    let fx = fixtures();
    let out = tmp.path().join("o");
    let o = ok(&[
        "infer",
        "--net",
        s(&fx.join("ann.sfnet")),
        "--events",
        s(&fx.join("events.txt")),
        "--gt",
        s(&fx.join("gt.sfgt")),
        "--scheme",
        "aer",
        "--images",
        "--out",
        s(&out),
    ]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("mean latency"));
    let mut hashes = std::collections::BTreeSet::new();
    for e in fs::read_dir(&out).unwrap() {
        let p = e.unwrap().path();
        let bytes = fs::read(&p).unwrap();
        let text = String::from_utf8_lossy(&bytes);
        let line = text
            .lines()
            .find(|l| l.contains("config_sha256="))
            .unwrap_or_else(|| panic!("{} has no header", p.display()));
        hashes.insert(line.split("config_sha256=").nth(1).unwrap()[..64].to_string());
    }
    assert_eq!(hashes.len(), 1, "{hashes:?}");
}

#[test]
fn config_hash_tracks_inputs() {
    let tmp = TempDir::new().unwrap();
    let fx = fixtures();
    let head = |scheme: &str, d: &str| {
        let out = tmp.path().join(d);
        ok(&[
            "infer",
            "--net",
            s(&fx.join("snn.sfnet")),
            "--events",
            s(&fx.join("events.txt")),
            "--scheme",
            scheme,
            "--out",
            s(&out),
        ]);
        fs::read_to_string(out.join("flow.csv")).unwrap().lines().next().unwrap().to_string()
    };
    let a = head("bitmask", "a");
    assert_eq!(a, head("bitmask", "b"), "output directory must not affect the hash");
    assert_ne!(a, head("aer", "c"));
    assert!(a.starts_with("# sparseflow infer config_sha256="));
}

#[test]
fn exit_codes() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("o");
    let missing = tmp.path().join("missing.sfnet");
    let code = |args: &[&str]| run(args).status.code();
    assert_eq!(
        code(&["infer", "--net", s(&missing), "--events", s(&missing), "--out", s(&out)]),
        Some(2)
    );
    assert_eq!(code(&["no-such-command"]), Some(2));
    assert_eq!(code(&["controlled", "--out", s(&out), "--profile-name", "fast"]), Some(2));
    let bad = tmp.path().join("bad.sfnet");
    fs::write(&bad, b"garbage").unwrap();
    let ev = fixtures().join("events.txt");
    assert_eq!(code(&["infer", "--net", s(&bad), "--events", s(&ev), "--out", s(&out)]), Some(2));
    assert_eq!(
        code(&["train", "--out", s(&out), "--resolution", "64x64", "--epochs", "1"]),
        Some(2)
    );
    assert_eq!(code(&["train", "--out", s(&out), "--bptt", "0", "--epochs", "1"]), Some(2));
    // Spike outside an 8x8 sensor.
    let net = small_net(tmp.path(), NetworkKind::Snn, false);
    let far = tmp.path().join("far.txt");
    fs::write(&far, "0 20 20 1\n").unwrap();
    assert_eq!(code(&["infer", "--net", s(&net), "--events", s(&far), "--out", s(&out)]), Some(2));
}

#[test]
fn trained_network_runs_through_infer() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("t");
    ok(&[
        "train",
        "--out",
        s(&out),
        "--kind",
        "snn",
        "--channels",
        "4",
        "--resolution",
        "8x8",
        "--frames",
        "3",
        "--samples",
        "2",
        "--epochs",
        "1",
    ]);
    let log = fs::read_to_string(out.join("train_log.csv")).unwrap();
    assert!(log.starts_with("# sparseflow train config_sha256="));
    assert_eq!(data_rows(&log).len(), 2);
    let ev = tmp.path().join("ev.txt");
    fs::write(&ev, "0 1 1 1\n10 3 4 0\n12000 5 5 1\n").unwrap();
    let inf = tmp.path().join("i");
    ok(&["infer", "--net", s(&out.join("net.sfnet")), "--events", s(&ev), "--out", s(&inf)]);
    let flow = fs::read_to_string(inf.join("flow.csv")).unwrap();
    assert_eq!(data_rows(&flow).len(), 2 * 8 * 8);
}

#[test]
fn lambda_sweep_writes_one_network_each() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("t");
    let o = ok(&[
        "train",
        "--out",
        s(&out),
        "--kind",
        "ann",
        "--channels",
        "4",
        "--resolution",
        "8x8",
        "--frames",
        "3",
        "--samples",
        "2",
        "--epochs",
        "2",
        "--lambda-s",
        "0,0.001",
    ]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("non-increasing"));
    assert!(out.join("net_0.sfnet").exists() && out.join("net_1.sfnet").exists());
    let sweep = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(data_rows(&sweep).len(), 2);
}

#[test]
fn controlled_csv_shape() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("c");
    ok(&["controlled", "--out", s(&out)]);
    let text = fs::read_to_string(out.join("controlled.csv")).unwrap();
    assert_eq!(data_rows(&text).len(), 18);
    let fit = fs::read_to_string(out.join("controlled_fit.csv")).unwrap();
    for r in data_rows(&fit) {
        let f: Vec<&str> = r.split(',').collect();
        let inc14: f64 = f[4].parse().unwrap();
        let inc46: f64 = f[5].parse().unwrap();
        assert!(inc46 > inc14, "{r}");
    }
}

#[test]
fn sensor_binning_and_count_frames() {
    let tmp = TempDir::new().unwrap();
    let net = small_net(tmp.path(), NetworkKind::Snn, false);
    let ev = tmp.path().join("ev.txt");
    let body: String = (0..40).map(|i| format!("{} {} {} {}\n", i * 100, i % 16, (i * 7) % 16, i % 2)).collect();
    fs::write(&ev, body).unwrap();
    let out = tmp.path().join("o");
    ok(&[
        "infer",
        "--net",
        s(&net),
        "--events",
        s(&ev),
        "--sensor",
        "16x16",
        "--frame-spikes",
        "15",
        "--out",
        s(&out),
    ]);
    let run: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("run.json")).unwrap()).unwrap();
    assert_eq!(run["frames"], 3);
}

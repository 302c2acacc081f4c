use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

pub const BIN: &str = env!("CARGO_BIN_EXE_soar");

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

const SCENE: &[&str] = &[
    "--frames",
    "4",
    "--channels",
    "1",
    "--height",
    "32",
    "--width",
    "32",
    "--objects",
    "2",
    "--drift-x",
    "2",
    "--drift-y",
    "-1",
];
const PATCH: &[&str] = &["--patch-t", "2", "--patch-h", "8", "--patch-w", "8"];

pub const STRATEGIES: &[&str] = &["object-aware", "ratio-x", "leaky-3d", "random", "tube", "block"];

/// Runs the binary and returns (exit code, stdout, stderr).
pub fn soar(args: &[&str], threads: Option<&str>) -> (i32, String, String) {
    let mut cmd = Command::new(BIN);
    cmd.args(args);
    match threads {
        Some(t) => cmd.env("SOAR_THREADS", t),
        None => cmd.env_remove("SOAR_THREADS"),
    };
    let out = cmd.output().expect("spawn soar");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn ok(args: Vec<String>, threads: Option<&str>) {
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    let (code, _, err) = soar(&refs, threads);
    assert_eq!(code, 0, "soar {}: {err}", args.join(" "));
}

fn argv(parts: &[&[&str]]) -> Vec<String> {
    parts.iter().flat_map(|p| p.iter().map(|s| s.to_string())).collect()
}

/// Every subcommand on the golden scene, writing into `dir`.
pub fn pipeline(dir: &Path, threads: Option<&str>) {
    let d = |name: &str| dir.join(name).to_string_lossy().into_owned();
    let sample = d("sample");
    let video = format!("{sample}/video.soart");
    let dets = format!("{sample}/detections.jsonl");
    ok(argv(&[&["synth", "--out", &sample, "--seed", "2024"], SCENE, PATCH]), threads);
    ok(argv(&[&["heatmap", "--video", &video, "--dets", &dets, "--out", &d("heatmap.soart")], PATCH]), threads);
    ok(
        argv(&[
            &["objectness", "--heatmap", &d("heatmap.soart"), "--video", &video, "--out", &d("objectness.soart")],
            PATCH,
        ]),
        threads,
    );
    for s in STRATEGIES {
        let out = d(&format!("mask-{s}.soarm"));
        ok(
            argv(&[
                &["mask", "--video", &video, "--objectness", &d("objectness.soart"), "--strategy", s],
                &["--x", "0.5", "--seed", "5", "--out", &out],
                PATCH,
            ]),
            threads,
        );
    }
    let mask = d("mask-object-aware.soarm");
    ok(
        argv(&[&["weights", "--objectness", &d("objectness.soart"), "--mask", &mask, "--out", &d("weights.jsonl")]]),
        threads,
    );
    ok(
        argv(&[&[
            "weights",
            "--objectness",
            &d("objectness.soart"),
            "--mask",
            &mask,
            "--no-mu",
            "--out",
            &d("weights-no-mu.jsonl"),
        ]]),
        threads,
    );
    let config = golden_dir().join("train.json").to_string_lossy().into_owned();
    ok(argv(&[&["train-toy", "--config", &config, "--out", &d("train")]]), threads);
    ok(
        argv(&[&["bench-masking", "--trials", "20000", "--seed", "9", "--out", &d("bench.csv")], SCENE, PATCH]),
        threads,
    );
}

/// Relative path -> bytes for every file under `dir`.
pub fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/");
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

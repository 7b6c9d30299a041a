use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use peekaboo_core::codec::{decode_additive, decode_bundle, decode_latent, decode_masks};
use peekaboo_core::geometry::{BBox, BBoxTrajectory, Canvas, FrameMaskSet, LatentGrid};
use peekaboo_core::imc::Manifest;
use peekaboo_core::maskgen::{build_bundle, AblationFlags, MaskFamily, TokenLabels};
use peekaboo_core::trajfile::TrajectoryFile;
use tempfile::TempDir;

fn peekaboo(args: &[&str]) -> Output {
    peekaboo_env(args, &[])
}

fn peekaboo_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_peekaboo"));
    cmd.args(args).env_remove("PKB_THREADS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn ok(out: Output) -> Output {
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn golden_manifest() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/golden/imc_manifest.json")
}

#[test]
fn gen_imc_defaults_match_golden_and_repeat() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(peekaboo(&["gen-imc", "--out", s(&a)]));
    ok(peekaboo(&["gen-imc", "--out", s(&b), "--seed", "2024"]));
    let files = fs::read_dir(&a).unwrap().count();
    assert_eq!(files, 103);
    let ma = fs::read_to_string(a.join("manifest.json")).unwrap();
    assert_eq!(ma, fs::read_to_string(b.join("manifest.json")).unwrap());
    assert_eq!(ma, fs::read_to_string(golden_manifest()).unwrap());
}

#[test]
fn gen_imc_small_canvas_stays_inside() {
    let dir = TempDir::new().unwrap();
    ok(peekaboo(&["gen-imc", "--out", s(dir.path()), "--canvas", "64x64", "--frames", "8", "--seed", "5"]));
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.count, 102);
    for entry in &manifest.files {
        let traj = TrajectoryFile::load(dir.path().join(&entry.file)).unwrap().to_trajectory().unwrap();
        assert_eq!(traj.num_frames(), 8);
        assert!(traj.boxes().iter().all(|b| b.is_some_and(|b| b.fits(&traj.canvas()))), "{}", entry.file);
    }
}

#[test]
fn gen_imc_rejects_bad_arguments() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&peekaboo(&["gen-imc", "--out", s(dir.path()), "--canvas", "4x4"])), 2);
    assert_eq!(code(&peekaboo(&["gen-imc", "--out", s(dir.path()), "--frames", "0"])), 2);
    assert_eq!(code(&peekaboo(&["gen-imc", "--out", s(dir.path()), "--canvas", "wide"])), 2);
    assert_eq!(code(&peekaboo(&["gen-imc"])), 2);
}

/// 16x16 canvas on a 2x2 grid: frames cover cells {0}, {0,1}, {1,3}.
fn two_by_two(dir: &Path) -> PathBuf {
    let canvas = Canvas::new(16, 16, 3).unwrap();
    let boxes = vec![
        Some(BBox::new(0, 0, 8, 8).unwrap()),
        Some(BBox::new(0, 0, 16, 8).unwrap()),
        Some(BBox::new(8, 0, 16, 16).unwrap()),
    ];
    let traj = BBoxTrajectory::new(canvas, boxes).unwrap();
    let path = dir.join("fig.json");
    TrajectoryFile::from_trajectory("a small dog", "dog", &traj).save(&path).unwrap();
    path
}

fn read_bundle(dir: &Path) -> [peekaboo_core::codec::MaskFile; 3] {
    let r = |n: &str| fs::read(dir.join(format!("{n}.pkbm"))).unwrap();
    decode_bundle(&r("cross"), &r("spatial"), &r("temporal")).unwrap()
}

#[test]
fn build_masks_small_fixture() {
    let dir = TempDir::new().unwrap();
    let traj = two_by_two(dir.path());
    let out = dir.path().join("masks");
    ok(peekaboo(&["build-masks", "--traj", s(&traj), "--grid", "2x2", "--tokens", "010", "--out", s(&out), "--additive"]));
    let [cross, spatial, temporal] = read_bundle(&out);
    assert_eq!((cross.matrices.len(), cross.matrices[0].shape()), (3, (4, 3)));
    assert_eq!((spatial.matrices.len(), spatial.matrices[0].shape()), (3, (4, 4)));
    assert_eq!((temporal.matrices.len(), temporal.matrices[0].shape()), (4, (3, 3)));

    let fg = |bits: &str| bits.chars().map(|c| c == '1').collect::<Vec<_>>();
    let masks = FrameMaskSet::new(LatentGrid::new(2, 2).unwrap(), vec![fg("1000"), fg("1100"), fg("0101")]).unwrap();
    let want = build_bundle(&masks, &TokenLabels::parse("010").unwrap(), AblationFlags::ALL_ON);
    assert_eq!(cross.matrices, want.cross);
    assert_eq!(spatial.matrices, want.spatial);
    assert_eq!(temporal.matrices, want.temporal);

    let add = decode_additive(&fs::read(out.join("cross.pkba")).unwrap()).unwrap();
    assert_eq!((add.count, add.rows, add.cols), (3, 4, 3));
    assert_eq!(add.values.len(), 36);

    let off = dir.path().join("off");
    ok(peekaboo(&[
        "build-masks", "--traj", s(&traj), "--grid", "2x2", "--out", s(&off), "--no-cross", "--no-spatial", "--no-temporal",
    ]));
    for f in read_bundle(&off) {
        assert!(f.matrices.iter().all(|m| m.is_all_ones()), "{:?}", f.family);
    }
}

#[test]
fn build_masks_errors() {
    let dir = TempDir::new().unwrap();
    let traj = two_by_two(dir.path());
    let out = s(dir.path());
    let missing = dir.path().join("nope.json");
    assert_eq!(code(&peekaboo(&["build-masks", "--traj", s(&missing), "--out", out])), 2);
    assert_eq!(code(&peekaboo(&["build-masks", "--traj", s(&traj), "--grid", "2x2", "--tokens", "01x", "--out", out])), 2);
    let broken = dir.path().join("broken.json");
    fs::write(&broken, "{\"prompt\": 3}").unwrap();
    assert_eq!(code(&peekaboo(&["build-masks", "--traj", s(&broken), "--out", out])), 3);
}

fn moving_traj(dir: &Path, name: &str, dx: u32) -> PathBuf {
    let canvas = Canvas::new(64, 64, 6).unwrap();
    let boxes = (0..6u32).map(|f| Some(BBox::new(4 + dx * f, 16, 28 + dx * f, 40).unwrap())).collect();
    let traj = BBoxTrajectory::new(canvas, boxes).unwrap();
    let path = dir.join(format!("{name}.json"));
    TrajectoryFile::from_trajectory("A red car driving down the road.", "red car", &traj).save(&path).unwrap();
    path
}

fn write_config(dir: &Path, frozen: usize, out: &str) -> PathBuf {
    let text = format!(
        "dataset = \"data\"\noutput_dir = \"{out}\"\n\n[pipeline]\nnum_steps = 8\nfrozen_steps = {frozen}\nseed = 3\ninstrumentation = \"full\"\n\n[grid]\nwidth = 8\nheight = 8\n"
    );
    let path = dir.join(format!("{out}.toml"));
    fs::write(&path, text).unwrap();
    path
}

fn dataset(dir: &Path) {
    let data = dir.join("data");
    fs::create_dir_all(&data).unwrap();
    moving_traj(&data, "car_a", 4);
    moving_traj(&data, "car_b", 6);
}

#[test]
fn run_writes_reports_and_is_idempotent() {
    let dir = TempDir::new().unwrap();
    dataset(dir.path());
    let cfg = write_config(dir.path(), 2, "out1");
    ok(peekaboo(&["run", "--config", s(&cfg)]));
    let out = dir.path().join("out1");
    for name in ["car_a", "car_b"] {
        let report: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(out.join(name).join("report.json")).unwrap()).unwrap();
        let steps = report["steps"].as_array().unwrap();
        assert_eq!(steps.len(), 8);
        let masked: Vec<_> = steps.iter().filter(|s| s["mode"] == "masked").collect();
        assert_eq!(masked.len(), 2);
        for s in masked {
            assert!(s["max_leakage"].as_f64().unwrap() <= 1e-12);
        }
        let latent = decode_latent(&fs::read(out.join(name).join("latent.pkbl")).unwrap()).unwrap();
        assert_eq!((latent.num_frames(), latent.l_latents()), (6, 64));
    }
    let first = fs::read(out.join("car_a/latent.pkbl")).unwrap();
    let cfg2 = write_config(dir.path(), 2, "out2");
    ok(peekaboo_env(&["run", "--config", s(&cfg2)], &[("PKB_THREADS", "1")]));
    assert_eq!(first, fs::read(dir.path().join("out2/car_a/latent.pkbl")).unwrap());
    assert_eq!(
        fs::read(out.join("car_b/report.json")).unwrap(),
        fs::read(dir.path().join("out2/car_b/report.json")).unwrap()
    );

    let free = write_config(dir.path(), 0, "free");
    ok(peekaboo(&["run", "--config", s(&free)]));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("free/car_a/report.json")).unwrap()).unwrap();
    assert!(report["steps"].as_array().unwrap().iter().all(|s| s["mode"] == "free"));
}

#[test]
fn run_config_errors() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), 2, "out");
    assert_eq!(code(&peekaboo(&["run", "--config", s(&cfg)])), 2, "missing dataset");
    assert_eq!(code(&peekaboo(&["run", "--config", s(&dir.path().join("none.toml"))])), 2);
    dataset(dir.path());
    let bad = write_config(dir.path(), 9, "bad");
    assert_eq!(code(&peekaboo(&["run", "--config", s(&bad)])), 2);
    assert_eq!(code(&peekaboo_env(&["run", "--config", s(&cfg)], &[("PKB_THREADS", "0")])), 2);
}

#[test]
fn ablate_reports_four_variants() {
    let dir = TempDir::new().unwrap();
    dataset(dir.path());
    let cfg = write_config(dir.path(), 2, "abl");
    let out = ok(peekaboo(&["ablate", "--config", s(&cfg)]));
    assert!(String::from_utf8_lossy(&out.stdout).contains("-temporal"));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("abl/car_a/ablation.json")).unwrap()).unwrap();
    let rows = report["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 4);
    for row in rows {
        let variant = row["variant"].as_str().unwrap();
        for fam in ["cross", "spatial", "temporal"] {
            let leak = row["leakage"][fam].as_f64().unwrap();
            if variant == format!("no_{fam}") {
                assert!(leak > 1e-12, "{variant} {fam}");
            } else {
                assert!(leak <= 1e-12, "{variant} {fam}");
            }
        }
    }
}

fn eval_fixture(dir: &Path) -> (PathBuf, PathBuf) {
    let gt = dir.join("gt");
    fs::create_dir_all(&gt).unwrap();
    let canvas = Canvas::new(100, 100, 4).unwrap();
    let traj = BBoxTrajectory::constant(canvas, BBox::new(10, 10, 30, 30).unwrap()).unwrap();
    for id in ["a", "b", "c"] {
        TrajectoryFile::from_trajectory("A cat on a mat.", "cat", &traj).save(gt.join(format!("{id}.json"))).unwrap();
    }
    let mut lines = String::new();
    let mut push = |id: &str, frames: usize, b: [u32; 4]| {
        for f in 0..frames {
            lines.push_str(&format!(
                "{{\"video_id\":\"{id}\",\"frame\":{f},\"x0\":{},\"y0\":{},\"x1\":{},\"y1\":{},\"score\":0.9}}\n",
                b[0], b[1], b[2], b[3]
            ));
        }
    };
    push("a", 4, [10, 10, 30, 30]);
    push("b", 3, [10, 10, 30, 22]);
    push("c", 2, [40, 50, 60, 70]);
    let det = dir.join("ours.jsonl");
    fs::write(&det, lines).unwrap();
    (gt, det)
}

#[test]
fn eval_reproduces_fixture() {
    let dir = TempDir::new().unwrap();
    let (gt, det) = eval_fixture(dir.path());
    let out = dir.path().join("report");
    let spec = format!("mine={}", s(&det));
    let run = ok(peekaboo(&["eval", "--gt", s(&gt), "--detections", &spec, "--detections", s(&det), "--out", s(&out)]));
    let stdout = String::from_utf8_lossy(&run.stdout);
    assert!(stdout.contains("mine") && stdout.contains("ours"));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let m = &report["methods"][0];
    let close = |v: &serde_json::Value, want: f64| (v.as_f64().unwrap() - want).abs() < 1e-9;
    assert!(close(&m["miou"], 0.725));
    assert!(close(&m["ap50"], 7.0 / 12.0));
    assert!(close(&m["coverage"], 2.0 / 3.0));
    assert!(close(&m["cd"], (4.0 + 50.0) / (3.0 * 100.0 * 2f64.sqrt())));
    assert_eq!(m["filtered_out"], 1);
    assert!(out.join("report.txt").exists());
}

#[test]
fn eval_rejects_malformed_detections() {
    let dir = TempDir::new().unwrap();
    let (gt, _) = eval_fixture(dir.path());
    let bad = dir.path().join("bad.jsonl");
    fs::write(&bad, "{\"video_id\":\"a\",\"frame\":0}\n").unwrap();
    assert_eq!(code(&peekaboo(&["eval", "--gt", s(&gt), "--detections", s(&bad)])), 3);
    fs::write(&bad, "{\"video_id\":\"zzz\",\"frame\":0,\"x0\":0,\"y0\":0,\"x1\":5,\"y1\":5}\n").unwrap();
    assert_eq!(code(&peekaboo(&["eval", "--gt", s(&gt), "--detections", s(&bad)])), 3);
    assert_eq!(code(&peekaboo(&["eval", "--gt", s(&dir.path().join("nogt")), "--detections", s(&bad)])), 2);
}

#[test]
fn export_golden_bundles_decode_to_their_inputs() {
    let dir = TempDir::new().unwrap();
    ok(peekaboo(&["export-golden", "--out", s(dir.path()), "--count", "12", "--seed", "4"]));
    let index: Vec<String> = serde_json::from_str(&fs::read_to_string(dir.path().join("index.json")).unwrap()).unwrap();
    assert_eq!(index.len(), 12);
    for name in index {
        let case: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join(format!("{name}.json"))).unwrap()).unwrap();
        let bits = |v: &serde_json::Value| v.as_str().unwrap().chars().map(|c| c == '1').collect::<Vec<_>>();
        let grid = LatentGrid::new(case["grid"]["width"].as_u64().unwrap() as u32, case["grid"]["height"].as_u64().unwrap() as u32).unwrap();
        let frames = case["frames"].as_array().unwrap().iter().map(bits).collect();
        let ablation: AblationFlags = serde_json::from_value(case["ablation"].clone()).unwrap();
        let want = build_bundle(&FrameMaskSet::new(grid, frames).unwrap(), &TokenLabels::new(bits(&case["tokens"])).unwrap(), ablation);
        for fam in MaskFamily::ALL {
            let file = decode_masks(&fs::read(dir.path().join(format!("{name}.{}.pkbm", fam.name()))).unwrap()).unwrap();
            assert_eq!(file.matrices, want.family(fam), "{name} {fam:?}");
            let add = decode_additive(&fs::read(dir.path().join(format!("{name}.{}.pkba", fam.name()))).unwrap()).unwrap();
            let flat: Vec<f32> = want.family(fam).iter().flat_map(|m| m.as_slice().iter().map(|&b| if b { 0.0 } else { -1e9 })).collect();
            assert_eq!(add.values, flat);
        }
    }
}

#[test]
fn help_documents_flags() {
    let out = ok(peekaboo(&["--help"]));
    let text = String::from_utf8_lossy(&out.stdout);
    for cmd in ["gen-imc", "build-masks", "run", "eval", "ablate", "export-golden", "PKB_THREADS"] {
        assert!(text.contains(cmd), "{cmd}");
    }
    let out = ok(peekaboo(&["build-masks", "--help"]));
    let text = String::from_utf8_lossy(&out.stdout);
    for flag in ["--traj", "--grid", "--tokens", "--no-cross", "--no-spatial", "--no-temporal", "--additive"] {
        assert!(text.contains(flag), "{flag}");
    }
}

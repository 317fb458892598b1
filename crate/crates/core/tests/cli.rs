use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use unconked::checkpoint::Checkpoint;
use unconked::cli::{run, EXIT_OK, EXIT_USAGE};
use unconked::manifest::PairManifest;

fn cli(args: &[&str]) -> i32 {
    run(std::iter::once("unconked").chain(args.iter().copied()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path, images: &Path, masks: &Path, out: &Path) -> PathBuf {
    let text = format!(
        r#"[data]
images = "{}"
masks = "{}"
[augmentation]
n_views = 3
[descriptor]
profile = "compact"
dim = 16
points = 64
epochs = 2
[detector]
base_channels = 4
depth = 1
points = 32
epochs = 2
[inference]
inference_size = 64
keypoints = 100
nms_window = 3
[evaluation.synthetic]
control_points = 50
[output]
dir = "{}"
"#,
        images.display(),
        masks.display(),
        out.display()
    );
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path
}

/// Synthetic pairs plus a descriptor trained on their sources, shared by tests.
struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
    descriptor: PathBuf,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let syn = root.join("syn");
        assert_eq!(
            cli(&[
                "synth-pairs",
                "--generate",
                "3",
                "--generate-size",
                "64",
                "--mode",
                "all",
                "--out",
                s(&syn),
            ]),
            EXIT_OK
        );
        let out = root.join("run");
        let config = write_config(&root, &syn.join("sources"), &syn.join("sources_roi"), &out);
        assert_eq!(cli(&["train-descriptor", "--config", s(&config)]), EXIT_OK);
        let descriptor = out.join("descriptor.ckpt.json");
        Fixture {
            _dir: dir,
            root,
            config,
            descriptor,
        }
    })
}

#[test]
fn missing_config_is_usage_error() {
    assert_eq!(
        cli(&["train-descriptor", "--config", "/nonexistent/run.toml"]),
        EXIT_USAGE
    );
}

#[test]
fn unknown_subcommand_and_missing_args() {
    assert_eq!(cli(&["frobnicate"]), EXIT_USAGE);
    assert_eq!(cli(&["register", "--fixed", "a.png"]), EXIT_USAGE);
    assert_eq!(cli(&["--help"]), EXIT_OK);
}

#[test]
fn empty_manifest_is_usage_error() {
    let f = fixture();
    let manifest = f.root.join("empty.jsonl");
    std::fs::write(&manifest, "# nothing\n").unwrap();
    let code = cli(&[
        "evaluate",
        "--pairs",
        s(&manifest),
        "--descriptor",
        s(&f.descriptor),
        "--d2",
        "--out",
        s(&f.root.join("empty_eval.json")),
    ]);
    assert_eq!(code, EXIT_USAGE);
}

#[test]
fn absent_descriptor_and_bad_target() {
    let f = fixture();
    assert_eq!(
        cli(&[
            "train-detector",
            "--config",
            s(&f.config),
            "--descriptor",
            s(&f.root.join("nope.ckpt.json")),
        ]),
        EXIT_USAGE
    );
    assert_eq!(
        cli(&[
            "train-detector",
            "--config",
            s(&f.config),
            "--descriptor",
            s(&f.descriptor),
            "--target",
            "xyz",
        ]),
        EXIT_USAGE
    );
}

#[test]
fn training_writes_checkpoint_log_and_resolved_config() {
    let f = fixture();
    let run = f.descriptor.parent().unwrap();
    let ck = Checkpoint::load(&f.descriptor).unwrap();
    ck.descriptor_net().unwrap();
    let log = std::fs::read_to_string(run.join("descriptor_log.jsonl")).unwrap();
    assert!(log.lines().count() >= 1);
    for line in log.lines() {
        serde_json::from_str::<serde_json::Value>(line).unwrap();
    }
    assert!(run.join("config.resolved.toml").is_file());

    // round trip through the on-disk format
    let copy = f.root.join("copy.ckpt.json");
    ck.save(&copy).unwrap();
    assert_eq!(Checkpoint::load(&copy).unwrap(), ck);
}

#[test]
fn detector_training_and_heatmap() {
    let f = fixture();
    let out = f.root.join("det");
    assert_eq!(
        cli(&[
            "train-detector",
            "--config",
            s(&f.config),
            "--descriptor",
            s(&f.descriptor),
            "--target",
            "ss",
            "--out",
            s(&out),
        ]),
        EXIT_OK
    );
    let det = out.join("detector_ss.ckpt.json");
    let (_, target) = Checkpoint::load(&det).unwrap().detector_net().unwrap();
    assert_eq!(target.to_string(), "ss");

    let image = f.root.join("syn/sources/fundus_000.png");
    let hm = f.root.join("hm");
    assert_eq!(
        cli(&[
            "heatmap",
            "--image",
            s(&image),
            "--descriptor",
            s(&f.descriptor),
            "--detector",
            s(&det),
            "--config",
            s(&f.config),
            "--out",
            s(&hm),
        ]),
        EXIT_OK
    );
    let files: Vec<_> = std::fs::read_dir(&hm).unwrap().collect();
    assert!(files.len() >= 2);
}

#[test]
fn self_pair_registers_near_identity() {
    let f = fixture();
    let image = f.root.join("syn/sources/fundus_001.png");
    let mask = f.root.join("syn/sources_roi/fundus_001.png");
    let report = f.root.join("self.json");
    assert_eq!(
        cli(&[
            "register",
            "--fixed",
            s(&image),
            "--moving",
            s(&image),
            "--fixed-mask",
            s(&mask),
            "--moving-mask",
            s(&mask),
            "--descriptor",
            s(&f.descriptor),
            "--d2",
            "--config",
            s(&f.config),
            "--out",
            s(&report),
        ]),
        EXIT_OK
    );
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["success"], true);
    let h: Vec<f64> = v["homography"]
        .as_str()
        .unwrap()
        .split_whitespace()
        .map(|x| x.parse().unwrap())
        .collect();
    let id = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
    for (a, b) in h.iter().zip(id) {
        assert!((a / h[8] - b).abs() < 1e-6, "{h:?}");
    }
}

#[test]
fn synth_all_shares_transform_between_geometric_and_full() {
    let f = fixture();
    let syn = f.root.join("syn");
    let g = PairManifest::load(syn.join("manifest_geometric.jsonl")).unwrap();
    let full = PairManifest::load(syn.join("manifest_full.jsonl")).unwrap();
    let color = PairManifest::load(syn.join("manifest_color.jsonl")).unwrap();
    assert_eq!(g.pairs.len(), 3);
    assert_eq!(full.pairs.len(), 3);
    assert_eq!(color.pairs.len(), 3);
    for (a, b) in g.pairs.iter().zip(&full.pairs) {
        assert!(a.true_homography.is_some());
        assert_eq!(a.true_homography, b.true_homography);
    }
}

#[test]
fn evaluate_writes_report_and_plots() {
    let f = fixture();
    let out = f.root.join("eval.json");
    let plots = f.root.join("plots");
    assert_eq!(
        cli(&[
            "evaluate",
            "--pairs",
            s(&f.root.join("syn/manifest_geometric.jsonl")),
            "--descriptor",
            s(&f.descriptor),
            "--d2",
            "--config",
            s(&f.config),
            "--out",
            s(&out),
            "--plot",
            s(&plots),
        ]),
        EXIT_OK
    );
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert!(v.is_object());
    assert!(plots.join("success_curve.svg").is_file());
    assert!(plots.join("keypoint_distance.svg").is_file());
}

#[test]
fn training_is_deterministic() {
    let f = fixture();
    let out = f.root.join("again");
    assert_eq!(
        cli(&[
            "train-descriptor",
            "--config",
            s(&f.config),
            "--out",
            s(&out),
        ]),
        EXIT_OK
    );
    let a = std::fs::read(&f.descriptor).unwrap();
    let b = std::fs::read(out.join("descriptor.ckpt.json")).unwrap();
    assert!(a == b, "checkpoints differ");
    let la = std::fs::read_to_string(f.descriptor.with_file_name("descriptor_log.jsonl")).unwrap();
    let lb = std::fs::read_to_string(out.join("descriptor_log.jsonl")).unwrap();
    assert_eq!(la, lb);
}

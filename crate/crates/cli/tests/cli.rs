use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use geomeld_core::synth::{read_manifest, read_tile, water_consensus};

const TINY_MODEL: &str = "\
model.dim=16
model.depth=1
model.heads=2
model.mlp_hidden=32
model.pred_dim=16
model.pred_depth=1
model.dec_dim=16
model.text_width=16
model.text_depth=1
model.text_dim=32
model.shared_dim=8
model.proj_hidden=16
";

fn geomeld(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_geomeld")).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen(dir: &Path, n: usize, seed: u64) -> PathBuf {
    let o = geomeld(&["gen-data", "--n", &n.to_string(), "--seed", &seed.to_string(), "--out", s(dir)]);
    assert!(o.status.success(), "{}", stderr(&o));
    dir.join("manifest.tsv")
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("run.txt");
    fs::write(&path, format!("train.manifest=data/manifest.tsv\ntrain.out_dir=out\n{body}{TINY_MODEL}")).unwrap();
    path
}

fn tree_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    for sub in [dir.to_path_buf(), dir.join("tiles")] {
        for e in fs::read_dir(&sub).unwrap() {
            let p = e.unwrap().path();
            if p.is_file() && p.file_name().unwrap() != "run_manifest.txt" {
                files.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn gen_data_writes_an_indexed_reproducible_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let manifest = gen(&a, 8, 3);
    gen(&b, 8, 3);
    let entries = read_manifest(&manifest).unwrap();
    assert_eq!(entries.len(), 8);
    assert_eq!(fs::read_dir(a.join("tiles")).unwrap().count(), 8);
    assert_eq!(fs::read_to_string(a.join("captions.tsv")).unwrap().lines().count(), 8);
    assert_eq!(tree_bytes(&a), tree_bytes(&b));
    for e in &entries {
        let tile = read_tile(&e.path).unwrap();
        let (_, frac) = water_consensus(&tile.dw, &tile.esa).unwrap();
        assert!((frac - e.water_fraction).abs() < 1e-12, "{}", e.tile_id);
    }
    let run = fs::read_to_string(a.join("run_manifest.txt")).unwrap();
    for key in ["command=gen-data", "seed=3", "started=", "finished=", "config.gen.gsd_m=10", "config.gen.roi_m=320"] {
        assert!(run.contains(key), "{key}");
    }
}

#[test]
fn caption_writes_one_audit_record_per_tile() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = gen(&tmp.path().join("data"), 5, 0);
    let out = tmp.path().join("cap");
    let o = geomeld(&["caption", "--data", s(&manifest), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let audit = fs::read_to_string(out.join("caption_audit.txt")).unwrap();
    assert_eq!(audit.matches("tile=").count(), 5);
    assert_eq!(audit.matches("candidate.3=").count(), 5);
    assert_eq!(fs::read_to_string(out.join("captions.tsv")).unwrap().lines().count(), 5);
}

#[test]
fn missing_config_field_is_a_usage_error_naming_it() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("c.txt");
    fs::write(&path, "train.out_dir=out\n").unwrap();
    let o = geomeld(&["pretrain", "--config", s(&path)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("train.manifest"), "{}", stderr(&o));

    fs::write(&path, "train.manifest=m\ntrain.out_dir=o\ntrain.stepz=3\n").unwrap();
    let o = geomeld(&["pretrain", "--config", s(&path)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("train.stepz"));

    let o = geomeld(&["pretrain", "--config", s(&tmp.path().join("absent.txt"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("absent.txt"));
}

#[test]
fn dry_run_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    gen(&tmp.path().join("data"), 6, 1);
    let config = write_config(tmp.path(), "train.batch_size=4\n");
    let o = geomeld(&["pretrain", "--config", s(&config), "--dry-run"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("total="));
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn pretrain_then_eval_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = gen(&tmp.path().join("data"), 12, 2);
    let config = write_config(tmp.path(), "train.steps=3\ntrain.batch_size=4\n");
    let o = geomeld(&["pretrain", "--config", s(&config), "--ablate", "itc", "--seed", "9"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = tmp.path().join("out");
    for f in ["final.gmck", "last.gmck", "metrics.log", "config.txt", "run_manifest.txt"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let written = fs::read_to_string(out.join("config.txt")).unwrap();
    for line in ["loss.beta=0", "train.seed=9", "model.init_seed=9", "train.steps=3"] {
        assert!(written.lines().any(|l| l == line), "{line}");
    }
    assert_eq!(fs::read_to_string(out.join("metrics.log")).unwrap().lines().count(), 3);

    let ck = out.join("final.gmck");
    let eval = |dir: &str| {
        let dir = tmp.path().join(dir);
        let o = geomeld(&["eval", "--checkpoint", s(&ck), "--data", s(&manifest), "--out", s(&dir), "--k", "2", "--probe-epochs", "5"]);
        assert!(o.status.success(), "{}", stderr(&o));
        fs::read_to_string(dir.join("report.txt")).unwrap()
    };
    let (r1, r2) = (eval("e1"), eval("e2"));
    assert_eq!(r1.replace("e1", ""), r2.replace("e2", ""));
    for key in ["retrieval.i2t.recall_at_2=", "retrieval.t2i.recall_at_2=", "recon.s2.masked_l1=", "recon.esa.masked_accuracy="] {
        assert!(r1.contains(key), "{key}");
    }

    let o = geomeld(&["eval", "--checkpoint", s(&ck), "--data", s(&manifest), "--out", s(&tmp.path().join("e3")), "--k", "50"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn eval_with_missing_checkpoint_names_it() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = gen(&tmp.path().join("data"), 4, 0);
    let o = geomeld(&["eval", "--checkpoint", "no/such.gmck", "--data", s(&manifest), "--out", s(tmp.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no/such.gmck"));
}

#[test]
fn ablating_every_branch_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "");
    let o = geomeld(&["pretrain", "--config", s(&config), "--ablate", "mp", "--ablate", "jepa", "--ablate", "itc"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn selfcheck_passes_and_detects_a_corrupted_loss() {
    let o = geomeld(&["selfcheck"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let o = geomeld(&["selfcheck", "--corrupt-loss"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    assert_eq!(geomeld(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(geomeld(&["gen-data"]).status.code(), Some(1));
    assert_eq!(geomeld(&["--help"]).status.code(), Some(0));
}

#[test]
fn reference_page_matches_committed_copy() {
    let o = geomeld(&["reference"]);
    assert!(o.status.success());
    let committed = fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/reference.md")).unwrap();
    assert_eq!(String::from_utf8_lossy(&o.stdout), committed, "regenerate with `geomeld reference --out docs/reference.md`");
}

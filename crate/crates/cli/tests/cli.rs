//! End-to-end tests of the `pcadv` binary on a miniature pipeline.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn pcadv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pcadv"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "command failed:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn read_dir_bytes(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .collect();
    entries.sort();
    entries
        .into_iter()
        .map(|p| {
            let bytes = fs::read(&p).unwrap();
            (p.file_name().unwrap().into(), bytes)
        })
        .collect()
}

struct Pipeline {
    #[allow(dead_code)]
    dir: tempfile::TempDir,
    data: PathBuf,
    manifest: PathBuf,
    model: PathBuf,
    victim: PathBuf,
}

/// Tiny dataset and victim shared by the binary tests.
fn build_pipeline() -> Pipeline {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let victim = dir.path().join("victim");
    let out = pcadv(&[
        "gen-data",
        "--out",
        data.to_str().unwrap(),
        "--classes",
        "sphere,cube,torus",
        "--train-per-class",
        "8",
        "--test-per-class",
        "3",
        "--points",
        "96",
        "--seed",
        "11",
    ]);
    assert_ok(&out);
    let manifest = data.join("manifest.txt");
    let out = pcadv(&[
        "train",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        victim.to_str().unwrap(),
        "--epochs",
        "6",
        "--batch-size",
        "8",
        "--seed",
        "3",
    ]);
    assert_ok(&out);
    Pipeline {
        model: victim.join("model.pmdl"),
        data,
        manifest,
        victim,
        dir,
    }
}

#[test]
fn full_pipeline_runs_and_reruns_identically() {
    let p = build_pipeline();

    // manifest arithmetic: 3 classes x (8 + 3) entries
    let manifest_text = fs::read_to_string(&p.manifest).unwrap();
    assert_eq!(manifest_text.matches("\nentry ").count() + 1, 34); // 33 entries + class lines offset
    let entries = manifest_text
        .lines()
        .filter(|l| l.starts_with("entry "))
        .count();
    assert_eq!(entries, 33);

    // gen-data is bit-deterministic
    let data2 = p.data.parent().unwrap().join("data2");
    let out = pcadv(&[
        "gen-data",
        "--out",
        data2.to_str().unwrap(),
        "--classes",
        "sphere,cube,torus",
        "--train-per-class",
        "8",
        "--test-per-class",
        "3",
        "--points",
        "96",
        "--seed",
        "11",
    ]);
    assert_ok(&out);
    assert_eq!(
        read_dir_bytes(&p.data.join("clouds")),
        read_dir_bytes(&data2.join("clouds"))
    );
    assert_eq!(
        fs::read(&p.manifest).unwrap(),
        fs::read(data2.join("manifest.txt")).unwrap()
    );

    // the saved model reproduces the logged test accuracy exactly
    let log = fs::read_to_string(p.victim.join("train.log")).unwrap();
    let logged: f64 = log
        .lines()
        .find_map(|l| l.strip_prefix("final_test_accuracy = "))
        .unwrap()
        .parse()
        .unwrap();
    let model = pcadv::classifier::load_model(&p.model).unwrap();
    let manifest = pcadv::geometry::DatasetManifest::load(&p.manifest).unwrap();
    let test = pcadv::classifier::load_split(&manifest, pcadv::geometry::Split::Test).unwrap();
    let acc = pcadv::classifier::evaluate_accuracy(&model, &test);
    assert_eq!(acc, logged);

    // saliency on the manifest split with a small exact game
    let sal_dir = p.data.parent().unwrap().join("sal");
    let out = pcadv(&[
        "saliency",
        "--model",
        p.model.to_str().unwrap(),
        "--manifest",
        p.manifest.to_str().unwrap(),
        "--regions",
        "6",
        "--limit",
        "2",
        "--seed",
        "5",
        "--out",
        sal_dir.to_str().unwrap(),
    ]);
    assert_ok(&out);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("efficiency check"), "stderr: {stderr}");
    let saliency_files = fs::read_dir(&sal_dir)
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .path()
                .extension()
                .is_some_and(|x| x == "saliency")
        })
        .count();
    assert_eq!(saliency_files, 2);

    // local attack with a small budget, twice; records must be identical
    let atk1 = p.data.parent().unwrap().join("atk1");
    let atk2 = p.data.parent().unwrap().join("atk2");
    let attack_args = |out_dir: &Path| {
        vec![
            "attack".to_string(),
            "--model".into(),
            p.model.to_str().unwrap().into(),
            "--manifest".into(),
            p.manifest.to_str().unwrap().into(),
            "--mode".into(),
            "local".into(),
            "--regions".into(),
            "6".into(),
            "--attack-regions".into(),
            "2".into(),
            "--iterations".into(),
            "10".into(),
            "--rounds".into(),
            "2".into(),
            "--mc-permutations".into(),
            "10".into(),
            "--limit".into(),
            "3".into(),
            "--seed".into(),
            "9".into(),
            "--out".into(),
            out_dir.to_str().unwrap().into(),
        ]
    };
    for dir in [&atk1, &atk2] {
        let args = attack_args(dir);
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        assert_ok(&pcadv(&args));
    }
    assert_eq!(
        fs::read(atk1.join("samples.records")).unwrap(),
        fs::read(atk2.join("samples.records")).unwrap()
    );
    assert_eq!(
        fs::read(atk1.join("aggregate.summary")).unwrap(),
        fs::read(atk2.join("aggregate.summary")).unwrap()
    );
    assert_eq!(
        read_dir_bytes(&atk1.join("clouds")),
        read_dir_bytes(&atk2.join("clouds"))
    );
    // adversarial exports have the 4-column flag format
    let xyz = fs::read_dir(atk1.join("clouds"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|x| x == "xyz"))
        .expect("an xyz export exists");
    let first_line = fs::read_to_string(&xyz).unwrap().lines().next().unwrap().to_string();
    assert_eq!(first_line.split_whitespace().count(), 4);

    // global attack, then a two-row comparison over the same victim
    let atkg = p.data.parent().unwrap().join("atkg");
    let out = pcadv(&[
        "attack",
        "--model",
        p.model.to_str().unwrap(),
        "--manifest",
        p.manifest.to_str().unwrap(),
        "--mode",
        "global",
        "--iterations",
        "10",
        "--rounds",
        "2",
        "--limit",
        "3",
        "--seed",
        "9",
        "--out",
        atkg.to_str().unwrap(),
        "--no-clouds",
    ]);
    assert_ok(&out);
    let table_path = p.data.parent().unwrap().join("table.tsv");
    let out = pcadv(&[
        "report",
        atk1.to_str().unwrap(),
        atkg.to_str().unwrap(),
        "--out",
        table_path.to_str().unwrap(),
    ]);
    assert_ok(&out);
    let table = fs::read_to_string(&table_path).unwrap();
    let rows: Vec<&str> = table.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().any(|r| r.contains("local")));
    assert!(rows.iter().any(|r| r.contains("global")));

    // a single-run report also works
    let out = pcadv(&["report", atk1.to_str().unwrap()]);
    assert_ok(&out);
}

#[test]
fn gen_data_with_no_classes_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = pcadv(&[
        "gen-data",
        "--out",
        dir.path().join("d").to_str().unwrap(),
        "--classes",
        "",
        "--seed",
        "1",
    ]);
    assert!(!out.status.success());
}

#[test]
fn train_with_missing_manifest_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = pcadv(&[
        "train",
        "--manifest",
        dir.path().join("absent.txt").to_str().unwrap(),
        "--out",
        dir.path().join("v").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
}

#[test]
fn saliency_with_missing_model_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = pcadv(&[
        "saliency",
        "--model",
        dir.path().join("absent.pmdl").to_str().unwrap(),
        "--cloud",
        dir.path().join("absent.xyz").to_str().unwrap(),
        "--out",
        dir.path().join("s").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
}

#[test]
fn report_rejects_runs_against_different_victims() {
    // Two miniature pipelines with different seeds produce different models.
    let p1 = build_pipeline();
    let dir = p1.data.parent().unwrap();
    let victim2 = dir.join("victim2");
    let out = pcadv(&[
        "train",
        "--manifest",
        p1.manifest.to_str().unwrap(),
        "--out",
        victim2.to_str().unwrap(),
        "--epochs",
        "1",
        "--batch-size",
        "8",
        "--seed",
        "99",
    ]);
    assert_ok(&out);

    let run = |model: &Path, out_dir: &Path| {
        let out = pcadv(&[
            "attack",
            "--model",
            model.to_str().unwrap(),
            "--manifest",
            p1.manifest.to_str().unwrap(),
            "--iterations",
            "5",
            "--rounds",
            "1",
            "--regions",
            "4",
            "--attack-regions",
            "1",
            "--mc-permutations",
            "5",
            "--limit",
            "1",
            "--out",
            out_dir.to_str().unwrap(),
            "--no-clouds",
        ]);
        assert_ok(&out);
    };
    let r1 = dir.join("r1");
    let r2 = dir.join("r2");
    run(&p1.model, &r1);
    run(&victim2.join("model.pmdl"), &r2);
    let out = pcadv(&["report", r1.to_str().unwrap(), r2.to_str().unwrap()]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("different victim model"), "stderr: {stderr}");
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use milbench::preprocess::io::write_thumbnail_png;
use milbench::preprocess::Thumbnail;

fn milbench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_milbench")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Small synthetic binary dataset for two encoders with fast training settings.
fn synth_dataset(dir: &Path) -> PathBuf {
    let out = milbench(&[
        "synth", "--out", p(dir), "--n-slides", "40", "--dim", "8", "--encoders", "a", "--encoders", "b",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let cfg = dir.join("run.toml");
    let mut text = fs::read_to_string(&cfg).unwrap();
    text = text.replace("[hyper]\n", "");
    let hyper = "\n[hyper]\nepochs = 2\nhidden = 8\n";
    // Tables must come before arrays of tables in TOML; insert ahead of the first task.
    let at = text.find("[[tasks]]").unwrap();
    text.insert_str(at, &format!("{}\n", hyper.trim_start()));
    fs::write(&cfg, text).unwrap();
    cfg
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = walk(dir).into_iter().map(|f| (f.strip_prefix(dir).unwrap().display().to_string(), fs::read(&f).unwrap())).collect();
    v.sort();
    v
}

fn walk(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let path = e.unwrap().path();
        if path.is_dir() {
            out.extend(walk(&path));
        } else {
            out.push(path);
        }
    }
    out
}

#[test]
fn benchmark_compare_and_idempotent_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth_dataset(dir.path());
    let out = milbench(&["benchmark", "--config", p(&cfg)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let root = dir.path().join("out");
    let summary = fs::read_to_string(root.join("summary.csv")).unwrap();
    assert!(summary.starts_with("task,encoder,metric,mean,std,n_valid,n_splits,complete\nsynth,a,auc,"));
    assert_eq!(summary.lines().count(), 3);
    let first = read_dir_sorted(&root);

    // Simulate an interruption: drop some run records and the tables.
    fs::remove_file(root.join("runs/synth/a/split03_run1.json")).unwrap();
    fs::remove_file(root.join("runs/synth/b/split19_run0.json")).unwrap();
    fs::remove_dir_all(root.join("tables")).unwrap();
    let again = milbench(&["benchmark", "--config", p(&cfg)]);
    assert_eq!(code(&again), 0);
    assert_eq!(read_dir_sorted(&root), first);

    let cmp = dir.path().join("cmp");
    let out = milbench(&["compare", "--tables", p(&root.join("tables")), "--out", p(&cmp)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(cmp.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["encoders"].as_array().unwrap().len(), 2);
    for f in ["rank_heatmap.csv", "significance.csv", "win_tie_loss.csv", "provenance.json"] {
        assert!(cmp.join(f).is_file(), "{f}");
    }
}

#[test]
fn identical_tables_tie_at_rank_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth_dataset(dir.path());
    let features = dir.path().join("features");
    // Encoder b becomes a copy of a.
    for e in fs::read_dir(features.join("a")).unwrap() {
        let path = e.unwrap().path();
        fs::copy(&path, features.join("b").join(path.file_name().unwrap())).unwrap();
    }
    assert_eq!(code(&milbench(&["benchmark", "--config", p(&cfg)])), 0);
    let tables = dir.path().join("out/tables");
    // Tables differ only in the encoder column, so values pair up exactly.
    let cmp = dir.path().join("cmp");
    assert_eq!(code(&milbench(&["compare", "--tables", p(&tables), "--out", p(&cmp)])), 0);
    let ranks = fs::read_to_string(cmp.join("rank_heatmap.csv")).unwrap();
    let rows: Vec<&str> = ranks.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.ends_with(",1")), "{ranks}");
    let wtl = fs::read_to_string(cmp.join("win_tie_loss.csv")).unwrap();
    assert!(wtl.lines().skip(1).all(|l| l.contains(",tie,")), "{wtl}");
}

#[test]
fn unknown_encoder_fails_before_any_work() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth_dataset(dir.path());
    let text = fs::read_to_string(&cfg).unwrap().replace("\"b\"", "\"nope\"");
    fs::write(&cfg, text).unwrap();
    let out = milbench(&["benchmark", "--config", p(&cfg)]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown encoder nope"));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn missing_features_are_partial_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth_dataset(dir.path());
    fs::remove_file(dir.path().join("features/b/synth_0007.milf")).unwrap();
    let out = milbench(&["benchmark", "--config", p(&cfg)]);
    assert_eq!(code(&out), 2);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("missing features for slide synth_0007"), "{stderr}");
    let tables = dir.path().join("out/tables");
    assert!(tables.join("synth__a.csv").is_file());
    assert!(!tables.join("synth__b.csv").exists());

    let cmp = dir.path().join("cmp");
    let out = milbench(&["compare", "--tables", p(&tables), "--out", p(&cmp)]);
    assert_eq!(code(&out), 1, "compare needs two encoders");
}

fn tissue_thumbnail(dir: &Path, geom_dir: &Path, id: &str) {
    let (w, h) = (64usize, 48usize);
    let mut t = Thumbnail::filled(w, h, [245, 245, 245], 64.0).unwrap();
    for y in 8..40 {
        for x in 8..56 {
            t.set_rgb(x, y, [150, 80, 140]);
        }
    }
    write_thumbnail_png(&t, &dir.join(format!("{id}.png"))).unwrap();
    let geom = serde_json::json!({ "slide_id": id, "width_px": w * 64, "height_px": h * 64, "base_mpp": 0.25 });
    fs::write(geom_dir.join(format!("{id}.json")), geom.to_string()).unwrap();
}

#[test]
fn tile_partial_failure_and_byte_identical_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let (thumbs, geoms) = (dir.path().join("thumbs"), dir.path().join("geom"));
    fs::create_dir_all(&thumbs).unwrap();
    fs::create_dir_all(&geoms).unwrap();

    let empty_out = dir.path().join("empty");
    let out = milbench(&["tile", "--thumbnails", p(&thumbs), "--geometry", p(&geoms), "--out", p(&empty_out)]);
    assert_eq!(code(&out), 0);
    assert!(!empty_out.exists());

    tissue_thumbnail(&thumbs, &geoms, "good");
    fs::write(thumbs.join("bad.png"), b"not a png").unwrap();
    fs::write(geoms.join("bad.json"), r#"{"slide_id":"bad","width_px":100,"height_px":100,"base_mpp":0.25}"#).unwrap();
    let run = |out_dir: &Path| milbench(&["tile", "--thumbnails", p(&thumbs), "--geometry", p(&geoms), "--out", p(out_dir)]);
    let (o1, o2) = (dir.path().join("o1"), dir.path().join("o2"));
    let out = run(&o1);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("failed: bad"));
    assert!(o1.join("good.tiles.csv").is_file());
    assert!(!o1.join("bad.tiles.csv").exists());
    assert_eq!(code(&run(&o2)), 2);
    assert_eq!(read_dir_sorted(&o1), read_dir_sorted(&o2));

    let grid = fs::read_to_string(o1.join("good.tiles.csv")).unwrap();
    assert!(grid.lines().count() > 1);

    let feats = dir.path().join("features");
    let out = milbench(&["mock-encode", "--tiles", p(&o1), "--feature-root", p(&feats), "--encoder", "mock", "--dim", "16"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(feats.join("mock/good.milf").is_file());
}

#[test]
fn tile_probe_and_region_map() {
    let dir = tempfile::tempdir().unwrap();
    let out = milbench(&["synth", "--out", p(dir.path()), "--kind", "tile-level", "--k", "3", "--n-slides", "20", "--dim", "8"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let probe = dir.path().join("probe.prbp");
    let cfg = dir.path().join("run.toml");
    let out = milbench(&["train-probe", "--config", p(&cfg), "--task", "synth", "--encoder", "synth", "--out", p(&probe)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let auc: f64 = String::from_utf8_lossy(&out.stdout).trim().rsplit(' ').next().unwrap().parse().unwrap();
    assert!(auc > 0.9, "{auc}");

    // A tile grid matching the synthetic slide layout.
    let feats = milbench::featstore::read_features(&dir.path().join("features/synth/synth_0000.milf")).unwrap();
    let mut grid = milbench::preprocess::TileGrid::empty("synth_0000", 224, 0.5);
    grid.tiles = feats.coords.clone().unwrap();
    grid.tissue_frac = vec![1.0; grid.tiles.len()];
    let grid_path = dir.path().join("synth_0000.tiles.csv");
    milbench::preprocess::io::write_tile_grid_file(&grid, &grid_path).unwrap();
    let map = dir.path().join("maps/synth_0000.csv");
    let out = milbench(&[
        "region-map",
        "--probe", p(&probe),
        "--tiles", p(&grid_path),
        "--features", p(&dir.path().join("features/synth/synth_0000.milf")),
        "--out", p(&map),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&map).unwrap();
    assert!(text.starts_with("slide_id,x,y,pred_class,prob\n"));
    assert_eq!(text.lines().count(), grid.tiles.len() + 1);
}

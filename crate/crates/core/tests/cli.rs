mod common;

use std::fs;
use std::path::Path;

use common::*;
use losslens::autodiff::{Direction, ParamGroup, ParamKind, ParamLayout};
use losslens::cli::main_with_args;
use losslens::directions::save_direction;
use losslens::modelzoo::io::load_trajectory;
use serde_json::Value;

fn run(args: &[&str]) -> i32 {
    let mut full = vec!["losslens"];
    full.extend_from_slice(args);
    main_with_args(full)
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A short default training run.
fn train(dir: &Path, extra: &[&str]) {
    let mut args = vec!["train", "--samples", "320", "--out", s(dir)];
    args.extend_from_slice(extra);
    assert_eq!(run(&args), 0);
}

#[test]
fn training_twice_gives_identical_checkpoints() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    train(&a, &["--seed", "3"]);
    train(&b, &["--seed", "3"]);
    let traj = load_trajectory(&a).unwrap();
    assert_eq!(traj.len(), 320 / 32 + 1);
    for snap in &traj.snapshots {
        let name = losslens::modelzoo::io::checkpoint_name(snap.iteration);
        assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap());
    }
    let m = json(&a.join("manifest.json"));
    assert_eq!(m["model"]["kind"], "lenet_mini");
    assert_eq!(m["optimizer"]["epochs"], 1);
    assert_eq!(m["optimizer"]["checkpoint_every"], 1);
}

#[test]
fn zero_learning_rate_gives_a_constant_trajectory_and_rank_deficient_pca() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path().join("t");
    train(&t, &["--lr", "0"]);
    let traj = load_trajectory(&t).unwrap();
    assert!(traj.snapshots.iter().all(|sn| sn.params == traj.snapshots[0].params));
    let out = tmp.path().join("l");
    assert_eq!(run(&["landscape", "--traj", s(&t), "--out", s(&out)]), 3);
}

#[test]
fn landscape_grid_two_and_workers_do_not_change_results() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path().join("t");
    train(&t, &[]);
    let (one, four) = (tmp.path().join("one"), tmp.path().join("four"));
    for (dir, w) in [(&one, "1"), (&four, "4")] {
        let code = run(&[
            "landscape",
            "--traj",
            s(&t),
            "--dirs",
            "random",
            "--grid",
            "2",
            "--fraction",
            "0.1",
            "--workers",
            w,
            "--out",
            s(dir),
        ]);
        assert_eq!(code, 0);
    }
    let a = json(&one.join("landscape.json"));
    let b = json(&four.join("landscape.json"));
    assert_eq!(a["result"]["z"].as_array().unwrap().len(), 4);
    assert_eq!(a["result"]["N"], 2);
    assert_eq!(a["result"], b["result"]);
    assert_eq!(a["config"], b["config"]);
    assert_eq!(a["execution"]["workers"], 1);
    assert_eq!(b["execution"]["workers"], 4);
    assert!(one.join("landscape.csv").exists());
    assert!(one.join("phi1.gvck").exists());
}

#[test]
fn spectrum_is_identical_across_worker_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path().join("t");
    train(&t, &[]);
    let mut outs = Vec::new();
    for w in ["1", "4"] {
        let out = tmp.path().join(format!("s{w}"));
        let code = run(&[
            "spectrum",
            "--traj",
            s(&t),
            "--k",
            "3",
            "--m",
            "8",
            "--fraction",
            "0.05",
            "--workers",
            w,
            "--out",
            s(&out),
        ]);
        assert_eq!(code, 0);
        let mut v = json(&out.join("spectrum.json"));
        v.as_object_mut().unwrap().remove("execution");
        outs.push(v);
    }
    assert_eq!(outs[0], outs[1]);
    assert_eq!(outs[0]["result"]["probes"].as_array().unwrap().len(), 3);
}

#[test]
fn operator_file_mode_recovers_exact_eigenvalues() {
    let tmp = tempfile::tempdir().unwrap();
    let n = 12;
    let a = random_symmetric(n, 5);
    let rows: Vec<Vec<f64>> = a.chunks(n).map(<[f64]>::to_vec).collect();
    let op = tmp.path().join("op.json");
    fs::write(&op, serde_json::to_string(&rows).unwrap()).unwrap();
    let out = tmp.path().join("s");
    assert_eq!(
        run(&["spectrum", "--operator-file", s(&op), "--m", "12", "--out", s(&out)]),
        0
    );
    let v = json(&out.join("spectrum.json"));
    let mut exact: Vec<f64> = nalgebra::DMatrix::from_row_slice(n, n, &a)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .collect();
    exact.sort_by(f64::total_cmp);
    for probe in v["result"]["probes"].as_array().unwrap() {
        let nodes: Vec<f64> = serde_json::from_value(probe["nodes"].clone()).unwrap();
        assert_eq!(nodes.len(), n);
        for (x, e) in nodes.iter().zip(&exact) {
            assert!((x - e).abs() < 1e-8, "{x} vs {e}");
        }
    }
    let asym = tmp.path().join("asym.json");
    fs::write(&asym, "[[1.0, 2.0], [0.0, 1.0]]").unwrap();
    assert_ne!(run(&["spectrum", "--operator-file", s(&asym), "--out", s(&out)]), 0);
}

#[test]
fn interpolate_two_points_evaluates_endpoints_only() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    train(&a, &["--seed", "1"]);
    train(&b, &["--seed", "2"]);
    let out = tmp.path().join("i");
    let code = run(&[
        "interpolate",
        "--a",
        s(&a),
        "--b",
        s(&b),
        "--points",
        "2",
        "--fraction",
        "0.1",
        "--out",
        s(&out),
    ]);
    assert_eq!(code, 0);
    let v = json(&out.join("interpolation.json"));
    let pts = v["result"]["points"].as_array().unwrap();
    assert_eq!(pts.len(), 2);
    assert_eq!(pts[0]["lambda"], 0.0);
    assert_eq!(pts[1]["lambda"], 1.0);
    assert_eq!(v["config"]["interpolation"]["points"], 2);
}

#[test]
fn bench_with_one_worker_reports_unit_speedup() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("b");
    let code = run(&[
        "bench",
        "--task",
        "grid",
        "--grid",
        "3",
        "--workers",
        "1",
        "--repeats",
        "2",
        "--fraction",
        "0.05",
        "--out",
        s(&out),
    ]);
    assert_eq!(code, 0);
    let v = json(&out.join("scaling.json"));
    assert_eq!(v["result"]["points"][0]["s"], 1.0);
    assert_eq!(v["result"]["points"][0]["p"], 1);
    assert!(v["result"]["fit"].is_null());
    assert!(out.join("scaling.csv").exists());
}

#[test]
fn config_file_is_overridden_by_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, r#"{"optimizer": {"learning_rate": 0.0, "batch_size": 64}, "data": {"kind": "synthetic", "num_classes": 10, "dim": 64, "samples": 128, "seed": 0, "separation": 24.0, "period": 4}}"#).unwrap();
    let t = tmp.path().join("t");
    assert_eq!(
        run(&["train", "--config", s(&cfg), "--batch-size", "32", "--out", s(&t)]),
        0
    );
    let m = json(&t.join("manifest.json"));
    assert_eq!(m["optimizer"]["learning_rate"], 0.0);
    assert_eq!(m["optimizer"]["batch_size"], 32);
    assert_eq!(m["snapshots"].as_array().unwrap().len(), 128 / 32 + 1);
}

fn layout_of(dir: &Path) -> std::sync::Arc<ParamLayout> {
    load_trajectory(dir).unwrap().layout().unwrap().clone()
}

#[test]
fn exit_codes_follow_error_kinds() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let missing = tmp.path().join("nope");
    assert_eq!(run(&["landscape", "--traj", s(&missing), "--out", s(&out)]), 2);
    assert_eq!(
        run(&["spectrum", "--checkpoint", s(&missing.join("x.gvck")), "--out", s(&out)]),
        2
    );
    assert_eq!(run(&["train", "--bogus-flag"]), 2);

    let t = tmp.path().join("t");
    train(&t, &[]);
    let layout = layout_of(&t);
    let n = layout.total_count();

    // a direction that is zero on the first group
    let mut d = gaussian_vec(n, 1);
    d[layout.groups()[0].range()].fill(0.0);
    let (d1, d2) = (tmp.path().join("d1.gvck"), tmp.path().join("d2.gvck"));
    save_direction(&d1, &Direction::new(layout.clone(), d).unwrap()).unwrap();
    save_direction(&d2, &Direction::new(layout.clone(), gaussian_vec(n, 2)).unwrap()).unwrap();
    let files = format!("{},{}", s(&d1), s(&d2));
    let base = [
        "landscape",
        "--traj",
        s(&t),
        "--dirs",
        "user",
        "--dir-files",
        &files,
        "--grid",
        "2",
    ];
    let with_out = |extra: &[&str]| {
        let mut a = base.to_vec();
        a.extend_from_slice(extra);
        a.extend_from_slice(&["--fraction", "0.05", "--out", s(&out)]);
        run(&a)
    };
    assert_eq!(with_out(&[]), 4);
    assert_eq!(with_out(&["--zero-degenerate"]), 0);

    // identical directions cannot span a plane
    let files_same = format!("{},{}", s(&d2), s(&d2));
    let code = run(&[
        "landscape",
        "--traj",
        s(&t),
        "--dirs",
        "user",
        "--dir-files",
        &files_same,
        "--raw-dirs",
        "--grid",
        "2",
        "--out",
        s(&out),
    ]);
    assert_eq!(code, 4);

    // a direction for some other model
    let other = std::sync::Arc::new(
        ParamLayout::new(vec![ParamGroup {
            name: "w".into(),
            offset: 0,
            count: 3,
            kind: ParamKind::Bias,
            filter_shape: vec![3],
        }])
        .unwrap(),
    );
    let d3 = tmp.path().join("d3.gvck");
    save_direction(&d3, &Direction::new(other, vec![1.0, 2.0, 3.0]).unwrap()).unwrap();
    let files_bad = format!("{},{}", s(&d3), s(&d2));
    let code = run(&[
        "landscape",
        "--traj",
        s(&t),
        "--dirs",
        "user",
        "--dir-files",
        &files_bad,
        "--out",
        s(&out),
    ]);
    assert_eq!(code, 5);
}

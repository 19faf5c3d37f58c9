use std::path::Path;
use std::process::{Command, Output};

use aoi_path::formulation::compute_extremes;
use aoi_path::model::{build_edge_weights, Instance};
use aoi_path::tours::{evaluate, MultiTour};

fn aoi_path(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aoi-path"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = aoi_path(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn gen(dir: &Path, name: &str, k: usize, seed: u64) -> String {
    let path = dir.join(name);
    let p = path.to_str().unwrap().to_string();
    ok(&[
        "gen",
        "--k",
        &k.to_string(),
        "--seed",
        &seed.to_string(),
        "--out",
        &p,
    ]);
    p
}

fn rows(csv_text: &str) -> Vec<csv::StringRecord> {
    let mut r = csv::Reader::from_reader(csv_text.as_bytes());
    r.records().map(|x| x.unwrap()).collect()
}

fn column(csv_text: &str, name: &str) -> usize {
    let mut r = csv::Reader::from_reader(csv_text.as_bytes());
    r.headers().unwrap().iter().position(|h| h == name).unwrap()
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

#[test]
fn gen_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let a = gen(dir.path(), "a.json", 10, 42);
    let b = gen(dir.path(), "b.json", 10, 42);
    let c = gen(dir.path(), "c.json", 10, 43);
    let bytes = |p: &str| std::fs::read(p).unwrap();
    assert_eq!(bytes(&a), bytes(&b));
    assert_ne!(bytes(&a), bytes(&c));

    let inst = Instance::from_json(&std::fs::read_to_string(&a).unwrap()).unwrap();
    assert_eq!(inst.k(), 10);
    for (i, s) in inst.sensors.iter().enumerate() {
        assert!((0.0..1000.0).contains(&s.x) && (0.0..1000.0).contains(&s.y));
        assert!(inst.sensors[..i].iter().all(|t| t != s));
    }
    assert_eq!(inst.coverage_radius, 50.0);
    assert_eq!(inst.uav.speed, 18.0);
    assert_eq!(inst.uav.propulsion_power, 162.0);
}

#[test]
fn sweep_endpoints_match_extremes() {
    let dir = tempfile::tempdir().unwrap();
    let path = gen(dir.path(), "i.json", 6, 5);
    let inst = Instance::from_json(&std::fs::read_to_string(&path).unwrap()).unwrap();
    let ext = compute_extremes(&build_edge_weights(&inst)).unwrap();

    let out = ok(&["sweep", "--instance", &path, "--lambdas", "0,1"]);
    let (aoi, energy) = (column(&out, "avg_aoi_s"), column(&out, "energy_j"));
    let rows = rows(&out);
    assert_eq!(rows.len(), 2);
    let f = |r: &csv::StringRecord, c: usize| r[c].parse::<f64>().unwrap();
    assert!(close(f(&rows[0], energy), ext.energy_min));
    assert!(close(f(&rows[0], aoi), ext.aoi_max));
    assert!(close(f(&rows[1], aoi), ext.aoi_min));
    assert!(close(f(&rows[1], energy), ext.energy_max));
}

#[test]
fn emitted_rows_rederive_from_tours() {
    let dir = tempfile::tempdir().unwrap();
    let path = gen(dir.path(), "i.json", 6, 9);
    let inst = Instance::from_json(&std::fs::read_to_string(&path).unwrap()).unwrap();
    let w = build_edge_weights(&inst);

    for solver in ["monolithic", "benders"] {
        let out = ok(&[
            "sweep",
            "--instance",
            &path,
            "--lambdas",
            "0:0.25:1",
            "--solver",
            solver,
            "--refine",
        ]);
        let (aoi, energy, tour) = (
            column(&out, "avg_aoi_s"),
            column(&out, "energy_j"),
            column(&out, "tour"),
        );
        let rows = rows(&out);
        assert!(!rows.is_empty());
        for r in &rows {
            let t: MultiTour = serde_json::from_str(&r[tour]).unwrap();
            let m = evaluate(&t, &w).unwrap();
            assert!(close(r[aoi].parse().unwrap(), m.avg_aoi));
            assert!(close(r[energy].parse().unwrap(), m.energy));
        }
    }

    let json = ok(&[
        "sweep",
        "--instance",
        &path,
        "--lambdas",
        "0.5",
        "--format",
        "json",
    ]);
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    let row = &v[0];
    let t: MultiTour = serde_json::from_value(row["tour"].clone()).unwrap();
    let m = evaluate(&t, &w).unwrap();
    assert!(close(row["avg_aoi_s"].as_f64().unwrap(), m.avg_aoi));
    assert!(close(row["energy_j"].as_f64().unwrap(), m.energy));
}

#[test]
fn compare_direction_at_k10() {
    let out = ok(&["compare", "--k", "10", "--seed", "1"]);
    let (mode, variant, aoi, energy) = (
        column(&out, "mode"),
        column(&out, "variant"),
        column(&out, "avg_aoi_s"),
        column(&out, "energy_j"),
    );
    let rows = rows(&out);
    assert_eq!(rows.len(), 6);
    let get = |m: &str| {
        let r = rows
            .iter()
            .find(|r| &r[mode] == m && &r[variant] == "fly_hover")
            .unwrap();
        (
            r[aoi].parse::<f64>().unwrap(),
            r[energy].parse::<f64>().unwrap(),
        )
    };
    let (multi, ham) = (get("multi_return"), get("hamiltonian"));
    assert!(multi.0 < ham.0, "multi-return AoI {} vs {}", multi.0, ham.0);
    assert!(
        multi.1 > ham.1,
        "multi-return energy {} vs {}",
        multi.1,
        ham.1
    );
}

#[test]
fn refine_emits_trajectories() {
    let out = ok(&["refine", "--k", "4", "--seed", "2", "--format", "json"]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    let traversals = v["traversals"].as_array().unwrap();
    assert_eq!(traversals.len(), 4);
    for t in traversals {
        for key in [
            "sn",
            "entry",
            "exit",
            "waypoints",
            "speeds",
            "time_s",
            "energy_j",
            "bits",
        ] {
            assert!(t.get(key).is_some(), "missing {key}");
        }
    }
    assert!(v["avg_aoi"].as_f64().unwrap() <= v["fly_hover_avg_aoi"].as_f64().unwrap());
    assert!(v["energy"].as_f64().unwrap() <= v["fly_hover_energy"].as_f64().unwrap());

    let err = aoi_path(&["refine", "--k", "4", "--seed", "2"]);
    assert!(String::from_utf8_lossy(&err.stderr).contains("distance bound"));
}

#[test]
fn solve_writes_benders_trace() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.csv");
    ok(&[
        "solve",
        "--k",
        "5",
        "--seed",
        "3",
        "--solver",
        "benders",
        "--trace",
        trace.to_str().unwrap(),
    ]);
    let text = std::fs::read_to_string(&trace).unwrap();
    assert!(text.starts_with("iter,lb,ub,cut_kind,master_obj,subproblem_obj\n"));
    assert!(text.lines().count() > 1);
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let cases: [&[&str]; 5] = [
        &["solve", "--instance", missing.to_str().unwrap()],
        &["sweep", "--k", "3", "--lambdas", "0,1.5"],
        &["solve", "--k", "3", "--lambda", "-0.1"],
        &["gen", "--k", "0"],
        &["solve", "--solver", "simplex"],
    ];
    for args in cases {
        let out = aoi_path(args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn oracle_corpus_agrees() {
    let out = aoi_path(&["oracle"]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(rows(&text).len(), 100);
}

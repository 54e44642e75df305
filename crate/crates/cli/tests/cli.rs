use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bilip(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bilip")).args(args).output().unwrap()
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn diagnose_grid_is_finite() {
    let v = stdout_json(&bilip(&["diagnose", "--generator", "grid", "--n", "10"]));
    assert_eq!(v["n_points"], 100);
    for key in ["doubling_constant_estimate", "uniform_perfectness_estimate", "diameter"] {
        assert!(v[key].as_f64().unwrap().is_finite(), "{key}");
    }
}

#[test]
fn diagnose_single_point_notes_degeneracy() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("one.json");
    std::fs::write(&f, r#"{"points": ["a"], "metric": "euclidean", "coords": [[0.5]]}"#).unwrap();
    let out = bilip(&["diagnose", "--input", p(&f)]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("degenerate"));
    assert_eq!(stdout_json(&out)["degenerate"], true);
}

#[test]
fn missing_and_malformed_inputs() {
    let out = bilip(&["diagnose", "--input", "/no/such/space.json"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("/no/such/space.json"));

    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("bad.json");
    std::fs::write(&f, "{\"points\": [1, 2],\n \"metric\": \"matrix\", \"matrix\": [[0], [1, 0, 5]]}").unwrap();
    let out = bilip(&["diagnose", "--input", p(&f)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("matrix[1]"), "{}", String::from_utf8_lossy(&out.stderr));

    std::fs::write(&f, "{\"points\": [1, 2],\n \"metric\": }").unwrap();
    let err = String::from_utf8_lossy(&bilip(&["diagnose", "--input", p(&f)]).stderr).to_string();
    assert!(err.contains("line 2"), "{err}");
}

#[test]
fn stage_commands_emit_json() {
    let cubes = stdout_json(&bilip(&["cubes", "--generator", "random", "--n", "40", "--seed", "3"]));
    assert!(cubes["axioms"]["partition_violations"].as_array().unwrap().is_empty());
    assert_eq!(cubes["labels"].as_array().unwrap().len(), 40);
    let levels = stdout_json(&bilip(&["cubes", "--generator", "line", "--n", "9", "--levels", "0:3"]));
    assert_eq!((levels["tree"]["k_min"].as_i64(), levels["tree"]["k_max"].as_i64()), (Some(0), Some(3)));

    let w = stdout_json(&bilip(&["whitney", "--generator", "grid", "--n", "12", "--rho", "4"]));
    let m = w["decomposition"]["cubes"].as_array().unwrap().len();
    assert_eq!(w["colors"].as_array().unwrap().len(), m);
    assert_eq!(w["decomposition"]["star"].as_array().unwrap().len(), m);
    assert_eq!(w["rho"], 4.0);

    let c = stdout_json(&bilip(&["color", "--generator", "grid", "--n", "12"]));
    assert!(c["violations"].as_array().unwrap().is_empty());
    let folded = bilip(&["color", "--generator", "grid", "--n", "12", "--colors", "1"]);
    assert!(!folded.status.success());
}

#[test]
fn embed_and_verify_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let out = bilip(&["embed", "--generator", "random", "--n", "60", "--seed", "2", "--out", p(&a)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["run.json", "tree.json", "decomposition.json", "coloring.json", "atlas.json", "y_embedding.json", "distortion.json", "verify.json", "embedding.csv"] {
        assert!(a.join(f).exists(), "{f}");
    }
    let csv = std::fs::read_to_string(a.join("embedding.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert!(header.starts_with("id,") && header.contains(",g_pad,h1_1,") && header.ends_with(",dist_y"), "{header}");
    assert_eq!(csv.lines().count(), 61);
    let run = read_json(&a.join("run.json"));
    assert_eq!(run["csv_layout"], "dense");
    assert_eq!(run["constants"]["dim"].as_u64().unwrap() as usize + 1, header.split(',').count());

    let out = bilip(&["verify", "--dir", p(&a)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let table = String::from_utf8_lossy(&out.stdout);
    for name in ["whitney_inequality", "star_symmetry", "cutoff_lipschitz", "coloring_validity", "wlocal_case1", "wlarge_case1"] {
        assert!(table.contains(name), "{name}");
    }

    // same seed, same bytes
    let b = dir.path().join("b");
    assert!(bilip(&["embed", "--generator", "random", "--n", "60", "--seed", "2", "--out", p(&b)]).status.success());
    for f in ["run.json", "tree.json", "decomposition.json", "coloring.json", "atlas.json", "embedding.csv", "verify.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn csv_path_and_long_layout() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("out").join("emb.csv");
    let out = bilip(&["embed", "--generator", "grid", "--n", "5", "--sparse-csv", "--out", p(&csv)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().next(), Some("id,column,value"));
    assert!(text.lines().skip(1).all(|l| l.split(',').count() == 3 && !l.ends_with(",0")));
    let run = read_json(&dir.path().join("out").join("run.json"));
    assert_eq!((run["embedding"].as_str(), run["csv_layout"].as_str()), (Some("emb.csv"), Some("long")));
}

#[test]
fn file_inputs_need_patches() {
    let dir = tempfile::tempdir().unwrap();
    let space = dir.path().join("space.json");
    let coords: Vec<Vec<f64>> = (0..12).map(|k| vec![(k % 4) as f64, (k / 4) as f64]).collect();
    let ids: Vec<String> = (0..12).map(|k| format!("p{k}")).collect();
    std::fs::write(&space, serde_json::json!({"points": ids, "metric": "euclidean", "coords": coords}).to_string()).unwrap();
    let y = dir.path().join("y.json");
    std::fs::write(&y, r#"["p0", "p4", "p8"]"#).unwrap();
    let out_dir = dir.path().join("run");
    let out = bilip(&["embed", "--input", p(&space), "--y", p(&y), "--out", p(&out_dir)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing patch atlas"));

    let patches = dir.path().join("patches.json");
    std::fs::write(&patches, r#"{"kind": "identity"}"#).unwrap();
    let out = bilip(&["embed", "--input", p(&space), "--y", p(&y), "--patches", p(&patches), "--out", p(&out_dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    // explicit patches built from the stored atlas reproduce the run
    let atlas = read_json(&out_dir.join("atlas.json"));
    let entries: Vec<Value> = atlas["patches"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| serde_json::json!({"cube": e["cube"], "points": e["points"], "values": e["values"]}))
        .collect();
    std::fs::write(&patches, serde_json::json!({"kind": "explicit", "patches": entries}).to_string()).unwrap();
    let again = dir.path().join("again");
    let out = bilip(&["embed", "--input", p(&space), "--y", p(&y), "--patches", p(&patches), "--out", p(&again)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read(out_dir.join("embedding.csv")).unwrap(), std::fs::read(again.join("embedding.csv")).unwrap());
    assert!(bilip(&["verify", "--dir", p(&again)]).status.success());
}

#[test]
fn empty_omega_is_vacuous() {
    let dir = tempfile::tempdir().unwrap();
    let space = dir.path().join("space.json");
    std::fs::write(&space, r#"{"points": ["a", "b", "c"], "metric": "euclidean", "coords": [[0], [1], [3]]}"#).unwrap();
    let y = dir.path().join("y.json");
    std::fs::write(&y, r#"{"points": ["a", "b", "c"]}"#).unwrap();
    let patches = dir.path().join("patches.json");
    std::fs::write(&patches, r#"{"kind": "identity"}"#).unwrap();
    let run = dir.path().join("run");
    let out = bilip(&["embed", "--input", p(&space), "--y", p(&y), "--patches", p(&patches), "--out", p(&run), "--strict"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let csv = std::fs::read_to_string(run.join("embedding.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("id,g1,g_pad,dist_y"));
    assert!(csv.contains("c,3.0000000000000000e0,0"));
    let out = bilip(&["verify", "--dir", p(&run)]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("whitney_inequality       vacuous"));
}

#[test]
fn too_few_colors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let out = bilip(&["embed", "--generator", "grid", "--n", "12", "--colors", "1", "--out", p(&run)]);
    assert!(!out.status.success());
    let rep = read_json(&run.join("verify.json"));
    let c = rep["checks"].as_array().unwrap().iter().find(|c| c["name"] == "coloring_validity").unwrap();
    assert_eq!(c["status"], "fail");
}

#[test]
fn corrupted_decomposition_names_the_cube() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    assert!(bilip(&["embed", "--generator", "line", "--n", "40", "--out", p(&run)]).status.success());
    let path = run.join("decomposition.json");
    let mut d = read_json(&path);
    d["cubes"][3]["diam"] = Value::from(123.0);
    std::fs::write(&path, d.to_string()).unwrap();
    let out = bilip(&["verify", "--dir", p(&run)]);
    assert_eq!(out.status.code(), Some(1));
    let table = String::from_utf8_lossy(&out.stdout);
    let line = table.lines().find(|l| l.starts_with("cube_metadata")).unwrap();
    assert!(line.contains("FAIL") && line.contains("cube 3 stores diam"), "{line}");

    std::fs::remove_file(run.join("coloring.json")).unwrap();
    let out = bilip(&["verify", "--dir", p(&run)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("coloring.json"));
}

#[test]
fn config_file_with_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    let out_dir = dir.path().join("run");
    std::fs::write(
        &cfg,
        format!("out = {:?}\nsparse_csv = true\n[generator]\nkind = \"line\"\nn = 300\n", p(&out_dir)),
    )
    .unwrap();
    let out = bilip(&["embed", "--config", p(&cfg), "--n", "20"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = read_json(&out_dir.join("run.json"));
    assert_eq!(run["source"]["generator"]["n"], 20);
    assert_eq!(run["csv_layout"], "long");
}

#[test]
fn grushin_commands() {
    let v = stdout_json(&bilip(&["grushin-dist", "--from", "1,0", "--to", "1.48,0", "--nx", "100"]));
    assert!((v["dist"].as_f64().unwrap() - 0.48).abs() < 1e-6);
    assert!(v["warning"].is_null());
    let v = stdout_json(&bilip(&["grushin-dist", "--from", "0.5,-0.5", "--to", "-0.5,0.5", "--nx", "100"]));
    let (d, lo, hi) = (v["dist"].as_f64().unwrap(), v["lower"].as_f64().unwrap(), v["upper"].as_f64().unwrap());
    assert!(0.9 * lo <= d && d <= 1.1 * hi);

    let dir = tempfile::tempdir().unwrap();
    let mesh = dir.path().join("mesh.json");
    assert!(bilip(&["grushin-mesh", "--window", "-1,1,-1,1", "--levels", "0:3", "--out", p(&mesh)]).status.success());
    let m = read_json(&mesh);
    assert!(!m["cubes"].as_array().unwrap().is_empty());
    assert!(m["max_upper_ratio"].as_f64().unwrap() <= 8.0 + 1e-9);
    assert!(!bilip(&["grushin-mesh", "--window", "-1,1,-1", "--levels", "0:3"]).status.success());
}

#[test]
fn grushin_file_input_uses_axis_and_charts() {
    let dir = tempfile::tempdir().unwrap();
    let space = dir.path().join("g.json");
    let mut ids = Vec::new();
    let mut coords = Vec::new();
    for i in 0..7 {
        for j in 0..5 {
            ids.push(format!("q{i}_{j}"));
            coords.push(vec![0.2 * (i as f64 - 3.0), 0.2 * (j as f64 - 2.0)]);
        }
    }
    std::fs::write(&space, serde_json::json!({"points": ids, "metric": "grushin", "coords": coords, "nx": 60}).to_string()).unwrap();
    let run = dir.path().join("run");
    let out = bilip(&["embed", "--input", p(&space), "--y", "axis", "--out", p(&run)]);
    assert!(out.status.success(), "{}{}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr));
    let m = read_json(&run.join("run.json"));
    assert_eq!(m["y"].as_array().unwrap().len(), 5);
    assert_eq!(m["patches"], "chart");
    assert!(bilip(&["verify", "--dir", p(&run)]).status.success());
}

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use curvebind::structio::{to_json_string, ComplexRecord};
use curvebind::synth::{self, MicroSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use tempfile::TempDir;

fn curvebind(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_curvebind"))
        .args(args)
        .env_remove("CURVEBIND_SEED")
        .output()
        .expect("spawn curvebind")
}

fn ok(args: &[&str]) -> Output {
    let out = curvebind(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Exit code and the `kind` of the JSON error printed on stderr.
fn failure(args: &[&str]) -> (i32, String) {
    let out = curvebind(args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().expect("error line");
    let v: Value = serde_json::from_str(line).unwrap_or_else(|e| panic!("stderr is not JSON ({e}): {stderr}"));
    (
        out.status.code().expect("exit code"),
        v["error"]["kind"].as_str().expect("kind").to_string(),
    )
}

fn read_json(p: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(p).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_records(dir: &Path, records: &[ComplexRecord]) -> Vec<PathBuf> {
    std::fs::create_dir_all(dir).unwrap();
    records
        .iter()
        .map(|r| {
            let p = dir.join(format!("{}.json", r.id));
            std::fs::write(&p, to_json_string(r)).unwrap();
            p
        })
        .collect()
}

fn micro_records(n: usize, seed: u64) -> Vec<ComplexRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    synth::micro_set(&mut rng, n, &MicroSpec::default())
}

#[test]
fn ingest_applies_thresholds_and_is_repeatable() {
    let tmp = TempDir::new().unwrap();
    let src = tmp.path().join("src");
    let recs = [
        synth::threshold_complex("few_contacts", 5, 10),
        synth::threshold_complex("too_large", 6, 100),
        synth::threshold_complex("valid", 6, 99),
    ];
    write_records(&src, &recs);
    std::fs::write(src.join("broken.json"), "{ not json").unwrap();
    let out1 = tmp.path().join("out1");
    let out2 = tmp.path().join("out2");
    ok(&["ingest", s(&src), "--out", s(&out1)]);
    ok(&["ingest", s(&src), "--out", s(&out2)]);

    let index = read_json(&out1.join("index.json"));
    let kept: Vec<&str> = index["kept"].as_array().unwrap().iter().map(|k| k["id"].as_str().unwrap()).collect();
    assert_eq!(kept, ["valid"]);
    let mut dropped: Vec<(String, String)> = index["dropped"]
        .as_array()
        .unwrap()
        .iter()
        .map(|d| (d["id"].as_str().unwrap().into(), d["reason"].as_str().unwrap().into()))
        .collect();
    dropped.sort();
    assert_eq!(
        dropped,
        [("few_contacts".into(), "contacts".into()), ("too_large".into(), "ligand_size".into())]
    );
    assert_eq!(index["errors"].as_array().unwrap().len(), 1);
    assert!(out1.join("complexes/valid.json").is_file());
    assert!(out1.join("manifest.json").is_file());

    assert_eq!(
        std::fs::read(out1.join("index.json")).unwrap(),
        std::fs::read(out2.join("index.json")).unwrap()
    );
}

#[test]
fn ingest_empty_directory() {
    let tmp = TempDir::new().unwrap();
    let empty = tmp.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let out = tmp.path().join("out");
    ok(&["ingest", s(&empty), "--out", s(&out)]);
    let index = read_json(&out.join("index.json"));
    assert!(index["kept"].as_array().unwrap().is_empty());
    assert!(index["dropped"].as_array().unwrap().is_empty());
}

#[test]
fn ingest_custom_policy() {
    let tmp = TempDir::new().unwrap();
    let src = tmp.path().join("src");
    write_records(&src, &[synth::threshold_complex("five", 5, 10)]);
    let policy = tmp.path().join("policy.json");
    std::fs::write(&policy, r#"{"min_contacts_exclusive": 4}"#).unwrap();
    let out = tmp.path().join("out");
    ok(&["ingest", s(&src), "--out", s(&out), "--filter-policy", s(&policy)]);
    assert_eq!(read_json(&out.join("index.json"))["kept"].as_array().unwrap().len(), 1);
}

fn tsv_sections(text: &str) -> (Vec<Vec<String>>, Vec<Vec<String>>) {
    let mut parts = text.split("\n\n");
    let rows = |block: &str| -> Vec<Vec<String>> {
        block
            .lines()
            .skip(1)
            .map(|l| l.split('\t').map(String::from).collect())
            .collect()
    };
    let edges = rows(parts.next().unwrap());
    let nodes = rows(parts.next().unwrap());
    (edges, nodes)
}

#[test]
fn curvature_of_triangle() {
    let tmp = TempDir::new().unwrap();
    let g = tmp.path().join("k3.txt");
    std::fs::write(&g, "nodes 3\n0 1\n1 2\n0 2\n").unwrap();
    let out = tmp.path().join("out");
    ok(&["curvature", "--graph", s(&g), "--out", s(&out)]);
    let text = std::fs::read_to_string(out.join("graph.tsv")).unwrap();
    assert!(text.starts_with("u\tv\tkappa\n"));
    assert!(text.contains("\nnode\tlcf_min\tlcf_max\tlcf_mean\tlcf_std\tlcf_median\n"));
    let (edges, nodes) = tsv_sections(&text);
    assert_eq!(edges.len(), 3);
    for e in &edges {
        let k: f64 = e[2].parse().unwrap();
        assert!((k - 0.5).abs() < 1e-12, "{e:?}");
    }
    assert_eq!(nodes.len(), 3);
}

#[test]
fn curvature_of_edgeless_graph() {
    let tmp = TempDir::new().unwrap();
    let g = tmp.path().join("empty.json");
    std::fs::write(&g, r#"{"n_nodes": 4, "edges": []}"#).unwrap();
    let out = tmp.path().join("out");
    ok(&["curvature", "--graph", s(&g), "--out", s(&out)]);
    let (edges, nodes) = tsv_sections(&std::fs::read_to_string(out.join("graph.tsv")).unwrap());
    assert!(edges.is_empty());
    assert_eq!(nodes.len(), 4);
    for n in nodes {
        assert!(n[1..].iter().all(|v| v.parse::<f64>().unwrap() == 0.0));
    }
}

#[test]
fn curvature_of_complex_and_malformed_graph() {
    let tmp = TempDir::new().unwrap();
    let docs = write_records(tmp.path(), &micro_records(1, 1));
    let out = tmp.path().join("out");
    ok(&["curvature", "--complex", s(&docs[0]), "--out", s(&out)]);
    assert!(out.join("ligand.tsv").is_file());
    assert!(out.join("protein.tsv").is_file());

    let bad = tmp.path().join("bad.txt");
    std::fs::write(&bad, "nodes 2\n0 5\n").unwrap();
    let (code, _) = failure(&["curvature", "--graph", s(&bad), "--out", s(&out)]);
    assert_eq!(code, 2);
}

#[test]
fn dump_graph_and_featurize() {
    let tmp = TempDir::new().unwrap();
    let docs = write_records(&tmp.path().join("src"), &micro_records(2, 2));
    let out = tmp.path().join("out");
    ok(&["dump-graph", s(&docs[0]), "--out", s(&out)]);
    let g = read_json(&out.join("micro000.graph.json"));
    for side in ["ligand", "protein"] {
        let n = g[side]["n_nodes"].as_u64().unwrap() as usize;
        let deg = g[side]["degree"].as_array().unwrap();
        assert_eq!(deg.len(), n);
        let sum: u64 = deg.iter().map(|d| d.as_u64().unwrap()).sum();
        assert_eq!(sum as usize, 2 * g[side]["edges"].as_array().unwrap().len());
    }

    let feats = tmp.path().join("feats");
    ok(&["featurize", s(&tmp.path().join("src")), "--out", s(&feats), "--no-lcf"]);
    let f = read_json(&feats.join("micro001.features.json"));
    assert_eq!(f["ligand"]["cols"], 57);
    assert_eq!(f["protein"]["cols"], 30);
    // Curvature columns are the last five and are zero under --no-lcf.
    for row in f["ligand"]["data"].as_array().unwrap() {
        let row = row.as_array().unwrap();
        assert!(row[52..].iter().all(|v| v.as_f64().unwrap() == 0.0));
    }
}

#[test]
fn ligand_feature_override() {
    let tmp = TempDir::new().unwrap();
    let recs = micro_records(1, 3);
    let docs = write_records(&tmp.path().join("src"), &recs);
    let lig = tmp.path().join("lig");
    std::fs::create_dir(&lig).unwrap();
    let mut tsv = String::new();
    for i in 0..recs[0].n_atoms() {
        let vals: Vec<String> = (0..52).map(|j| if j == 7 { "2.5".into() } else { "0".into() }).collect();
        tsv.push_str(&format!("{i}\t{}\n", vals.join("\t")));
    }
    std::fs::write(lig.join("micro000.tsv"), tsv).unwrap();
    let out = tmp.path().join("out");
    ok(&["featurize", s(&docs[0]), "--out", s(&out), "--ligand-features", s(&lig)]);
    let f = read_json(&out.join("micro000.features.json"));
    let row0 = f["ligand"]["data"][0].as_array().unwrap();
    assert_eq!(row0[7].as_f64().unwrap(), 2.5);
    assert_eq!(row0[0].as_f64().unwrap(), 0.0);
}

#[test]
fn precomputed_mode_without_embeddings_fails() {
    let tmp = TempDir::new().unwrap();
    let mut recs = micro_records(1, 4);
    recs[0].embedding_key = Some("key0".into());
    let docs = write_records(&tmp.path().join("src"), &recs);
    let cfg = tmp.path().join("cfg.toml");
    std::fs::write(&cfg, "[encoder]\nd_node = 8\nprotein_mode = { kind = \"precomputed\", width = 4 }\n").unwrap();
    let out = tmp.path().join("out");
    let (code, kind) = failure(&["featurize", s(&docs[0]), "--out", s(&out), "--config", s(&cfg)]);
    assert_eq!((code, kind.as_str()), (2, "missing_embedding"));

    // With a table of the right width it succeeds.
    let emb = tmp.path().join("emb.tsv");
    let mut t = String::new();
    for r in 0..recs[0].n_residues() {
        t.push_str(&format!("key0\t{r}\t0.1\t0.2\t0.3\t0.4\n"));
    }
    std::fs::write(&emb, t).unwrap();
    ok(&["featurize", s(&docs[0]), "--out", s(&out), "--config", s(&cfg), "--embeddings", s(&emb)]);
    assert_eq!(read_json(&out.join("micro000.features.json"))["protein"]["cols"], 9);
}

fn train_args<'a>(src: &'a str, out: &'a str) -> Vec<&'a str> {
    vec![
        "train", src, "--out", out, "--preset", "tiny", "--epochs", "2", "--batch-size", "2", "--seed", "11",
    ]
}

#[test]
fn train_dock_eval_is_byte_identical_across_runs() {
    let tmp = TempDir::new().unwrap();
    let src = tmp.path().join("src");
    write_records(&src, &micro_records(3, 5));
    let mut outputs = Vec::new();
    for run in 0..2 {
        let base = tmp.path().join(format!("run{run}"));
        let (train, dock, eval) = (base.join("train"), base.join("dock"), base.join("eval"));
        ok(&train_args(s(&src), s(&train)));
        let ck = train.join("checkpoint.json");
        ok(&["dock", s(&src), "--checkpoint", s(&ck), "--out", s(&dock), "--trace"]);
        ok(&["eval", "--poses", s(&dock.join("poses.json")), s(&src), "--out", s(&eval)]);
        let files = [
            ck,
            train.join("train_log.jsonl"),
            dock.join("poses.json"),
            dock.join("pockets.json"),
            eval.join("metrics.tsv"),
            eval.join("metrics.json"),
        ];
        outputs.push(files.map(|f| std::fs::read(f).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);

    let base = tmp.path().join("run0");
    let log = std::fs::read_to_string(base.join("train/train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 4);
    let tsv = std::fs::read_to_string(base.join("eval/metrics.tsv")).unwrap();
    assert_eq!(tsv.lines().next().unwrap().split('\t').count(), 13);
    let poses = read_json(&base.join("dock/poses.json"));
    assert_eq!(poses["poses"].as_array().unwrap().len(), 3);
    assert!(poses["poses"][0]["trace"].is_array());
    let m = read_json(&base.join("train/manifest.json"));
    assert_eq!(m["seed"], 11);
    assert_eq!(m["command"], "train");
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn seed_from_environment() {
    let tmp = TempDir::new().unwrap();
    let src = tmp.path().join("src");
    write_records(&src, &micro_records(1, 6));
    let out = tmp.path().join("out");
    let status = Command::new(env!("CARGO_BIN_EXE_curvebind"))
        .args(["train", s(&src), "--out", s(&out), "--preset", "tiny", "--max-steps", "1"])
        .env("CURVEBIND_SEED", "123")
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(read_json(&out.join("manifest.json"))["seed"], 123);
    assert_eq!(read_json(&out.join("config.json"))["seed"], 123);
}

#[test]
fn ablation_flags_reach_the_config() {
    let tmp = TempDir::new().unwrap();
    let src = tmp.path().join("src");
    write_records(&src, &micro_records(1, 7));
    let out = tmp.path().join("out");
    ok(&[
        "train", s(&src), "--out", s(&out), "--preset", "tiny", "--max-steps", "1", "--no-lcf", "--uniform-weights",
        "--fixed-radius", "--plain-bce",
    ]);
    let cfg = read_json(&out.join("config.json"));
    for flag in ["no_lcf", "uniform_weights", "fixed_radius", "plain_bce"] {
        assert_eq!(cfg["model"]["ablations"][flag], true, "{flag}");
    }
    let pockets_dir = tmp.path().join("dock");
    ok(&["dock", s(&src), "--checkpoint", s(&out.join("checkpoint.json")), "--out", s(&pockets_dir)]);
    let p = read_json(&pockets_dir.join("pockets.json"));
    let r = p["pockets"][0]["radius_final"].as_f64().unwrap();
    assert_eq!(r, 20.0);
}

#[test]
fn zero_gate_checkpoint_docks_to_initial_pose() {
    let tmp = TempDir::new().unwrap();
    let src = tmp.path().join("src");
    let docs = write_records(&src, &micro_records(1, 8));
    let train = tmp.path().join("train");
    ok(&["train", s(&src), "--out", s(&train), "--preset", "tiny", "--max-steps", "1"]);
    let mut ck = read_json(&train.join("checkpoint.json"));
    let params = ck["params"]["tensors"].as_object_mut().unwrap();
    let mut zeroed = 0;
    for (name, t) in params.iter_mut() {
        if name.contains(".phi_x.l1.") || name.contains(".phi_xv.l1.") {
            for v in t["data"].as_array_mut().unwrap() {
                *v = Value::from(0.0);
            }
            zeroed += 1;
        }
    }
    assert!(zeroed > 0);
    let ck_path = tmp.path().join("zero.json");
    std::fs::write(&ck_path, serde_json::to_vec(&ck).unwrap()).unwrap();
    let dock = tmp.path().join("dock");
    ok(&["dock", s(&docs[0]), "--checkpoint", s(&ck_path), "--out", s(&dock)]);
    let poses = read_json(&dock.join("poses.json"));
    let entry = &poses["poses"][0];
    assert_eq!(entry["pose"], entry["initial_pose"]);
    let pose: Vec<[f64; 3]> = serde_json::from_value(entry["pose"].clone()).unwrap();
    let center: [f64; 3] = serde_json::from_value(read_json(&dock.join("pockets.json"))["pockets"][0]["center"].clone()).unwrap();
    let n = pose.len() as f64;
    for k in 0..3 {
        let c = pose.iter().map(|p| p[k]).sum::<f64>() / n;
        assert!((c - center[k]).abs() < 1e-9);
    }
}

#[test]
fn eval_of_reference_poses_is_zero() {
    let tmp = TempDir::new().unwrap();
    let recs = micro_records(2, 9);
    let src = tmp.path().join("src");
    write_records(&src, &recs);
    let poses: Vec<Value> = recs
        .iter()
        .map(|r| serde_json::json!({ "id": r.id, "elements": [], "pose": r.ligand_coords(), "initial_pose": [] }))
        .collect();
    let pf = tmp.path().join("poses.json");
    std::fs::write(&pf, serde_json::to_vec(&serde_json::json!({ "poses": poses })).unwrap()).unwrap();
    let out = tmp.path().join("out");
    ok(&["eval", "--poses", s(&pf), s(&src), "--out", s(&out), "--method", "reference"]);
    let tsv = std::fs::read_to_string(out.join("metrics.tsv")).unwrap();
    let row: Vec<&str> = tsv.lines().nth(1).unwrap().split('\t').collect();
    assert_eq!(row[0], "reference");
    for (i, v) in row[1..].iter().enumerate() {
        let v: f64 = v.parse().unwrap();
        // Percentage columns are 100, distance columns 0.
        let expected = if matches!(i % 6, 4 | 5) { 100.0 } else { 0.0 };
        assert_eq!(v, expected, "column {}", i + 1);
    }
}

#[test]
fn error_exit_codes() {
    let tmp = TempDir::new().unwrap();
    let src = tmp.path().join("src");
    write_records(&src, &micro_records(1, 10));
    let out = tmp.path().join("out");

    // Missing input file: I/O.
    let missing = tmp.path().join("missing.json");
    let (code, kind) = failure(&["dump-graph", s(&missing), "--out", s(&out)]);
    assert_eq!((code, kind.as_str()), (4, "io"));

    // Checkpoint written for another configuration.
    let train = tmp.path().join("train");
    ok(&["train", s(&src), "--out", s(&train), "--preset", "tiny", "--max-steps", "1"]);
    let ck = train.join("checkpoint.json");
    let (code, kind) = failure(&["dock", s(&src), "--checkpoint", s(&ck), "--out", s(&out), "--preset", "desk"]);
    assert_eq!((code, kind.as_str()), (2, "checkpoint"));
    ok(&["dock", s(&src), "--checkpoint", s(&ck), "--out", s(&out), "--preset", "tiny"]);

    // Unsupported checkpoint version.
    let text = std::fs::read_to_string(&ck).unwrap().replacen("\"version\":1", "\"version\":99", 1);
    let bad = tmp.path().join("v99.json");
    std::fs::write(&bad, text).unwrap();
    let (code, kind) = failure(&["dock", s(&src), "--checkpoint", s(&bad), "--out", s(&out)]);
    assert_eq!((code, kind.as_str()), (2, "checkpoint"));

    // Invalid configuration value.
    let (code, _) = failure(&["train", s(&src), "--out", s(&out), "--batch-size", "0"]);
    assert_eq!(code, 2);
    let (code, _) = failure(&["train", s(&src), "--out", s(&out), "--jobs", "0"]);
    assert_eq!(code, 2);
}

#[test]
fn gradcheck_command_reports() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    ok(&["gradcheck", "--out", s(&out), "--instances", "1", "--per-block", "2", "--terms", "cls,rad"]);
    let r = read_json(&out.join("gradcheck.json"));
    assert_eq!(r["passed"], true);
    let blocks = r["merged"]["blocks"].as_array().unwrap();
    assert!(!blocks.is_empty());
    assert!(blocks.iter().all(|b| b["term"] == "cls" || b["term"] == "rad"));
}

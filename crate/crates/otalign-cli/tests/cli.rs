//! End-to-end runs of every subcommand through the compiled binary.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_otalign"))
}

fn workdir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("otalign-cli-{name}-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

/// CSV comparison that ignores the runtime column (the one legitimately
/// non-deterministic field).
fn canonical_csv(text: &str) -> String {
    text.lines()
        .map(|line| {
            let fields: Vec<&str> = line.split(',').collect();
            fields[..fields.len().saturating_sub(1)].join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn check_gw_passes() {
    let out = binary()
        .args(["check-gw", "--trials", "25", "--seed", "0"])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "stdout: {} stderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("max |cross-term - frobenius|"));
}

#[test]
fn check_procrustes_passes() {
    let out = binary()
        .args([
            "check-procrustes",
            "--trials",
            "30",
            "--maps",
            "100",
            "--seed",
            "0",
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
}

#[test]
fn synth_writes_deterministic_artifacts() {
    let dir = workdir("synth");
    let csv1 = dir.join("a.csv");
    let json1 = dir.join("a.json");
    let csv2 = dir.join("b.csv");
    let json2 = dir.join("b.json");
    let run = |csv: &Path, json: &Path| {
        let out = binary()
            .args([
                "synth",
                "--d",
                "3",
                "--n",
                "25",
                "--family",
                "inf",
                "--sigmas",
                "0",
                "--methods",
                "emd,oracle",
                "--reps",
                "2",
                "--seed",
                "7",
                "--out",
                csv.to_str().unwrap(),
                "--summary",
                json.to_str().unwrap(),
            ])
            .output()
            .unwrap();
        assert!(
            out.status.success(),
            "stderr: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    };
    run(&csv1, &json1);
    run(&csv2, &json2);

    let a = std::fs::read_to_string(&csv1).unwrap();
    let b = std::fs::read_to_string(&csv2).unwrap();
    assert!(a.starts_with("method,p_family,sigma,repetition,accuracy,map_error,runtime_ms"));
    assert_eq!(canonical_csv(&a), canonical_csv(&b));

    let ja: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json1).unwrap()).unwrap();
    let jb: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json2).unwrap()).unwrap();
    assert_eq!(ja["config"], jb["config"]);
    assert_eq!(ja["aggregates"], jb["aggregates"]);
    assert!(ja["timing"]["timestamp_s"].is_number());
    // Oracle accuracy on clean instances is exact.
    let aggs = ja["aggregates"].as_array().unwrap();
    let oracle = aggs
        .iter()
        .find(|a| a["method"] == "oracle")
        .expect("oracle aggregate present");
    assert_eq!(oracle["mean_accuracy"], 1.0);
    std::fs::remove_dir_all(&dir).ok();
}

fn write_rotated_pair(dir: &Path, v: usize, d: usize) -> (PathBuf, PathBuf) {
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
    let normal = StandardNormal;
    let mut vectors = nalgebra::DMatrix::<f64>::from_fn(d, v, |_, _| normal.sample(&mut rng));
    for mut col in vectors.column_iter_mut() {
        let n = col.norm();
        col /= n;
    }
    let gaussian = nalgebra::DMatrix::<f64>::from_fn(d, d, |_, _| normal.sample(&mut rng));
    let svd = gaussian.svd(true, true);
    let rotation = svd.u.unwrap() * svd.v_t.unwrap();
    let rotated = &rotation * &vectors;

    let write_table = |path: &Path, data: &nalgebra::DMatrix<f64>| {
        let mut f = std::fs::File::create(path).unwrap();
        writeln!(f, "{v} {d}").unwrap();
        for j in 0..v {
            let row: Vec<String> = (0..d).map(|r| format!("{:.17}", data[(r, j)])).collect();
            writeln!(f, "w{j:04} {}", row.join(" ")).unwrap();
        }
    };
    let src = dir.join("src.vec");
    let tgt = dir.join("tgt.vec");
    write_table(&src, &vectors);
    write_table(&tgt, &rotated);
    (src, tgt)
}

#[test]
fn align_recovers_rotated_copy() {
    let dir = workdir("align");
    let (src, tgt) = write_rotated_pair(&dir, 120, 16);
    let out_json = dir.join("align.json");
    let map_out = dir.join("map.bin");
    let trace = dir.join("trace.csv");
    let out = binary()
        .args([
            "align",
            "--src",
            src.to_str().unwrap(),
            "--tgt",
            tgt.to_str().unwrap(),
            "--subsample-k",
            "60",
            "--stage2-vocab",
            "120",
            "--eval-vocab",
            "120",
            "--csls-k",
            "5",
            "--restarts",
            "10",
            "--seed",
            "1",
            "--out",
            out_json.to_str().unwrap(),
            "--map-out",
            map_out.to_str().unwrap(),
            "--trace",
            trace.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let parsed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out_json).unwrap()).unwrap();
    assert_eq!(parsed["precision"]["p_at_1"], 1.0);
    assert_eq!(parsed["precision"]["skipped"], 0);

    // The dumped map loads back and is orthogonal up to tolerance.
    let map = otalign::embed::load_map(&map_out).unwrap();
    let gram = map.transpose() * &map;
    assert!((gram - nalgebra::DMatrix::<f64>::identity(16, 16)).norm() < 1e-4);

    let trace_text = std::fs::read_to_string(&trace).unwrap();
    assert!(trace_text.starts_with("iteration,lambda,objective"));
    assert!(trace_text.lines().count() > 10);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn invalid_inputs_exit_with_code_2() {
    // Unknown Schatten order.
    let out = binary()
        .args(["synth", "--family", "0.5", "--n", "10", "--sigmas", "0"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    // Unknown flag is rejected by the parser (clap uses exit code 2).
    let out = binary().args(["synth", "--bogus"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    // Missing embedding file.
    let out = binary()
        .args(["align", "--src", "/nonexistent.vec", "--tgt", "/nonexistent.vec"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const HISTORY_HEADER: &str = "epoch,ce,sced,kl,total,accuracy,mean_entropy,mean_effective_support";
const SWEEP_HEADER: &str = "alpha,beta,lambda_sced,lambda_kl,seed,status,accuracy,mean_entropy,mean_effective_support,mean_topk_mass,mean_kl_uniform,n_items,ce,sced,kl,total,wall_time_seconds";

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn caref(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_caref"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Drops the last CSV column (the wall-time field).
fn without_last_column(csv: &str) -> String {
    csv.lines()
        .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head))
        .collect::<Vec<_>>()
        .join("\n")
}

fn small_sweep(seeds: &str) -> String {
    format!(
        "alphas = 1, 2\nbetas = 0, 0.5, 1, 2\nlambda_sceds = 0.1\nlambda_kls = 0, 0.1\n\
         seeds = {seeds}\nepochs = 10\nwarmup_steps = 50\nnum_train = 128\nnum_eval = 128\n"
    )
}

#[test]
fn gradcheck_default_config_passes() {
    let cfg = configs().join("gradcheck.conf");
    let out = caref(&["gradcheck", "--config", path_str(&cfg)]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(code(&out), 0, "{stdout}{}", stderr(&out));
    assert!(stdout.contains("worst relative error"));
    assert!(stdout.contains("PASS"));
}

#[test]
fn gradcheck_coarse_step_fails_with_exit_1() {
    let dir = TempDir::new().unwrap();
    let text = fs::read_to_string(configs().join("gradcheck.conf"))
        .unwrap()
        .replace("h = 1e-5", "h = 1e-1");
    assert!(text.contains("h = 1e-1"));
    let cfg = write(dir.path(), "coarse.conf", &text);
    let out = caref(&["gradcheck", "--config", &cfg]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("FAIL"));
}

#[test]
fn gradcheck_threshold_flag_overrides_config() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "g.conf", "instances = 3\n");
    assert_eq!(
        code(&caref(&[
            "gradcheck",
            "--config",
            &cfg,
            "--threshold",
            "1e-20"
        ])),
        1
    );
    assert_eq!(
        code(&caref(&[
            "gradcheck",
            "--config",
            &cfg,
            "--threshold",
            "1e-6"
        ])),
        0
    );
    assert_eq!(
        code(&caref(&[
            "gradcheck",
            "--config",
            &cfg,
            "--threshold",
            "-1"
        ])),
        2
    );
}

#[test]
fn usage_and_config_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("absent.conf");
    let out = caref(&["gradcheck", "--config", path_str(&missing)]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("absent.conf"));

    let unknown = write(dir.path(), "u.conf", "instances = 3\ninstance = 4\n");
    let out = caref(&["gradcheck", "--config", &unknown]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("instance"));

    let garbled = write(dir.path(), "g.conf", "alpha 1.5\n");
    let out_dir = dir.path().join("o");
    assert_eq!(
        code(&caref(&[
            "train",
            "--config",
            &garbled,
            "--out",
            path_str(&out_dir)
        ])),
        2
    );
    assert_eq!(code(&caref(&["frobnicate"])), 2);
    assert_eq!(code(&caref(&["train", "--config", &garbled])), 2);
}

#[test]
fn train_toy_config_writes_the_bundle() {
    let dir = TempDir::new().unwrap();
    let cfg = configs().join("toy.conf");
    let out = caref(&[
        "train",
        "--config",
        path_str(&cfg),
        "--out",
        path_str(dir.path()),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let history = fs::read_to_string(dir.path().join("history.csv")).unwrap();
    let lines: Vec<&str> = history.lines().collect();
    assert_eq!(lines[0], HISTORY_HEADER);
    assert_eq!(lines.len(), 51);
    assert!(!history.contains('\r'));

    // Pinned on the reference run: the noiseless toy task is learned exactly.
    let last: Vec<f64> = lines[50].split(',').map(|f| f.parse().unwrap()).collect();
    assert_eq!(last[0], 50.0);
    assert!((last[5] - 1.0).abs() <= 1e-12, "final accuracy {}", last[5]);

    let steps = fs::read_to_string(dir.path().join("steps.csv")).unwrap();
    assert_eq!(steps.lines().next(), Some("step,lr,grad_norm,clipped_norm"));
    assert_eq!(steps.lines().count(), 1 + 50 * 64);

    let shape = fs::read_to_string(dir.path().join("model.shape")).unwrap();
    assert_eq!(shape, "f64le embed 16 16 out_proj 16 16\n");
    let bin = fs::read(dir.path().join("model.bin")).unwrap();
    assert_eq!(bin.len(), 2 * 16 * 16 * 8);

    for (name, n) in [("train.tsv", 256), ("eval.tsv", 256)] {
        let text = fs::read_to_string(dir.path().join(name)).unwrap();
        assert_eq!(text.lines().count(), n);
        assert!(text
            .lines()
            .all(|l| l.split('\t').count() == 2 && l.split(' ').count() == 8));
    }
}

#[test]
fn train_is_byte_identical_across_runs() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let cfg = write(
        a.path(),
        "t.conf",
        "epochs = 5\nwarmup_steps = 20\nnum_train = 64\n",
    );
    for d in [&a, &b] {
        let out = caref(&["train", "--config", &cfg, "--out", path_str(d.path())]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    for name in [
        "history.csv",
        "steps.csv",
        "model.bin",
        "model.shape",
        "train.tsv",
        "eval.tsv",
    ] {
        let x = fs::read(a.path().join(name)).unwrap();
        let y = fs::read(b.path().join(name)).unwrap();
        assert_eq!(x, y, "{name} differs");
    }
}

#[test]
fn train_errors_map_to_exit_codes() {
    let dir = TempDir::new().unwrap();
    let blocker = write(dir.path(), "file", "");
    let cfg = write(dir.path(), "t.conf", "epochs = 1\n");
    let nested = format!("{blocker}/out");
    assert_eq!(
        code(&caref(&["train", "--config", &cfg, "--out", &nested])),
        2
    );

    let div = write(dir.path(), "d.conf", "epochs = 2\nlr = 1e300\n");
    let out_dir = dir.path().join("d");
    let out = caref(&["train", "--config", &div, "--out", path_str(&out_dir)]);
    assert_eq!(code(&out), 1);
    assert!(
        stderr(&out).contains("diverged at step"),
        "{}",
        stderr(&out)
    );
}

#[test]
fn single_cell_sweep_has_one_row() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        dir.path(),
        "s.conf",
        "alphas = 1.5\nbetas = 1\nlambda_sceds = 0.1\nlambda_kls = 0.1\nseeds = 4\nepochs = 3\n",
    );
    let out = caref(&[
        "sweep",
        "--config",
        &cfg,
        "--out",
        path_str(dir.path()),
        "--jobs",
        "1",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], SWEEP_HEADER);
    assert!(
        lines[1].starts_with("1.5,1.0,0.1,0.1,4,ok,"),
        "{}",
        lines[1]
    );

    let report = caref(&["report", path_str(&dir.path().join("sweep.csv"))]);
    assert_eq!(code(&report), 0);
    let table = String::from_utf8_lossy(&report.stdout);
    assert_eq!(table.lines().count(), 2);
    assert!(table.contains("± 0.0000"), "{table}");
}

#[test]
fn sweep_is_deterministic_sorted_and_beta_monotone() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let cfg = write(a.path(), "s.conf", &small_sweep("0, 1"));
    for (d, jobs) in [(&a, "1"), (&b, "3")] {
        let out = caref(&[
            "sweep",
            "--config",
            &cfg,
            "--out",
            path_str(d.path()),
            "--jobs",
            jobs,
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    let x = fs::read_to_string(a.path().join("sweep.csv")).unwrap();
    let y = fs::read_to_string(b.path().join("sweep.csv")).unwrap();
    assert_eq!(without_last_column(&x), without_last_column(&y));

    let rows: Vec<Vec<String>> = x
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect();
    assert_eq!(rows.len(), 2 * 4 * 2 * 2);
    let key = |r: &Vec<String>| -> (f64, f64, f64, f64, u64) {
        (
            r[0].parse().unwrap(),
            r[1].parse().unwrap(),
            r[2].parse().unwrap(),
            r[3].parse().unwrap(),
            r[4].parse().unwrap(),
        )
    };
    assert!(rows.windows(2).all(|w| key(&w[0]) < key(&w[1])));

    // Final SCED term is non-increasing in beta within each (alpha, lambdas,
    // seed) group.
    for alpha in ["1.0", "2.0"] {
        for lambda_kl in ["0.0", "0.1"] {
            for seed in ["0", "1"] {
                let sced: Vec<f64> = rows
                    .iter()
                    .filter(|r| r[0] == alpha && r[3] == lambda_kl && r[4] == seed)
                    .map(|r| r[13].parse().unwrap())
                    .collect();
                assert_eq!(sced.len(), 4);
                assert!(
                    sced.windows(2).all(|w| w[1] <= w[0]),
                    "alpha={alpha} lambda_kl={lambda_kl} seed={seed}: {sced:?}"
                );
            }
        }
    }
}

#[test]
fn diverged_cells_are_recorded_and_fail_the_sweep() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        dir.path(),
        "s.conf",
        "alphas = 1\nbetas = 0, 1\nlambda_sceds = 0.1\nlambda_kls = 0\nseeds = 0\nepochs = 2\nlr = 1e300\n",
    );
    let out = caref(&["sweep", "--config", &cfg, "--out", path_str(dir.path())]);
    assert_eq!(code(&out), 1);
    let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.lines().skip(1).all(|l| l.contains(",diverged,")));
    let report = caref(&["report", path_str(&dir.path().join("sweep.csv"))]);
    assert_eq!(code(&report), 0);
}

#[test]
fn report_matches_recomputation_and_writes_json() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "s.conf", &small_sweep("0, 1, 2"));
    let out = caref(&["sweep", "--config", &cfg, "--out", path_str(dir.path())]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let csv_path = dir.path().join("sweep.csv");
    let out = caref(&["report", path_str(&csv_path), "--out", path_str(dir.path())]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap())
            .unwrap();
    let cells = json["cells"].as_array().unwrap();
    assert_eq!(cells.len(), 2 * 4 * 2);
    assert_eq!(json["rows"], 48);

    let text = fs::read_to_string(&csv_path).unwrap();
    for cell in cells {
        let coords: Vec<f64> = ["alpha", "beta", "lambda_sced", "lambda_kl"]
            .iter()
            .map(|k| cell[k].as_f64().unwrap())
            .collect();
        let members: Vec<Vec<f64>> = text
            .lines()
            .skip(1)
            .map(|l| {
                l.split(',')
                    .map(|f| f.parse().unwrap_or(f64::NAN))
                    .collect()
            })
            .filter(|r: &Vec<f64>| r[..4] == coords[..])
            .collect();
        assert_eq!(members.len(), 3);
        for (field, col) in [("accuracy", 6), ("mean_effective_support", 8)] {
            let vals: Vec<f64> = members.iter().map(|r| r[col]).collect();
            let mean = vals.iter().sum::<f64>() / 3.0;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 2.0;
            let got_mean = cell[field]["mean"].as_f64().unwrap();
            let got_std = cell[field]["std"].as_f64().unwrap();
            assert!(
                (got_mean - mean).abs() <= 1e-12,
                "{field}: {got_mean} vs {mean}"
            );
            assert!((got_std - var.sqrt()).abs() <= 1e-12, "{field}: {got_std}");
        }
    }
}

#[test]
fn report_rejects_malformed_csv() {
    let dir = TempDir::new().unwrap();
    let wrong = write(dir.path(), "h.csv", "alpha,beta\n1,2\n");
    let out = caref(&["report", &wrong]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("header"));

    let row = "1,0,0,0,0,ok,0.5,1,2,1,0,10,1,0,0,1,0.1";
    let bad = write(
        dir.path(),
        "b.csv",
        &format!("{SWEEP_HEADER}\n{row}\n{row}\n1,0,x\n"),
    );
    let out = caref(&["report", &bad]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains(":4:"), "{}", stderr(&out));

    let absent = dir.path().join("none.csv");
    assert_eq!(code(&caref(&["report", path_str(&absent)])), 2);
}
